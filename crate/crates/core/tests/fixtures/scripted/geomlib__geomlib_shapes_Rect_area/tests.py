def test_area():
    rects = [Rect(0, 0, 2, 3), Rect(1, 1, 1, 5), Rect(3, 3, 1, 1)]
    for r in rects:
        assert r.area() == r.area_new_implementation()
    assert Rect(0, 0, 10, 0.5).area() == Rect(0, 0, 10, 0.5).area_new_implementation()
    assert Rect(-2, -2, 2, 2).area_new_implementation() == Rect(-2, -2, 2, 2).area()


if __name__ == "__main__":
    test_area()
