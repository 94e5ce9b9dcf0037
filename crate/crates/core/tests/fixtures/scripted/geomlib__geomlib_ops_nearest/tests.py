def test_nearest():
    pts = [Point(0, 0), Point(3, 4), Point(-1, 1), Point(10, 10)]
    assert nearest(pts, Point(2, 3)) == nearest_new_implementation(pts, Point(2, 3))
    assert nearest(pts, Point(9, 8)) == nearest_new_implementation(pts, Point(9, 8))
    assert nearest([], Point(0, 0)) == nearest_new_implementation([], Point(0, 0))
    assert nearest(pts, Point(-2, 2)) == nearest_new_implementation(pts, Point(-2, 2))


if __name__ == "__main__":
    test_nearest()
