def test_truncate():
    assert truncate("short", 10) == truncate_new_implementation("short", 10)
    assert truncate("exactly ten", 11) == truncate_new_implementation("exactly ten", 11)
    assert truncate("a much longer sentence", 10) == truncate_new_implementation("a much longer sentence", 10)
    assert truncate("abcdef", 2) == truncate_new_implementation("abcdef", 2)
    assert truncate("abcdef", 4, marker="~") == truncate_new_implementation("abcdef", 4, marker="~")


if __name__ == "__main__":
    test_truncate()
