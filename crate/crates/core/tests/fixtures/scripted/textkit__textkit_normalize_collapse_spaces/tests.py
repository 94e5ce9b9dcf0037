def test_collapse_spaces():
    cases = ["  a  b ", "tab\tand\nnewline", "", "single"]
    for text in cases:
        assert collapse_spaces(text) == collapse_spaces_new_implementation(text)
    assert collapse_spaces("x   y") == collapse_spaces_new_implementation("x   y")
    assert collapse_spaces_new_implementation(" \n ") == collapse_spaces(" \n ")


if __name__ == "__main__":
    test_collapse_spaces()
