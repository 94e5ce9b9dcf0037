def test_clamp():
    for x in [-5, 0, 3, 10, 12]:
        assert clamp(x, 0, 10) == clamp_new_implementation(x, 0, 10)
    assert clamp(1.5, 1, 2) == clamp_new_implementation(1.5, 1, 2)
    assert clamp(7, 7, 7) == clamp_new_implementation(7, 7, 7)


if __name__ == "__main__":
    test_clamp()
