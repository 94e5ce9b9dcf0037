def test_wrap_words():
    text = "the quick brown fox jumps over the lazy dog"
    assert wrap_words(text, 10) == wrap_words_new_implementation(text, 10)
    assert wrap_words(text, 80) == wrap_words_new_implementation(text, 80)
    assert wrap_words("  spaced   out  words ", 6) == wrap_words_new_implementation("  spaced   out  words ", 6)


if __name__ == "__main__":
    test_wrap_words()
