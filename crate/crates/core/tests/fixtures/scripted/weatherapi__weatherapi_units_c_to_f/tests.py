def test_c_to_f():
    assert c_to_f(0) == c_to_f_new_implementation(0)
    assert c_to_f(100) == c_to_f_new_implementation(100)


if __name__ == "__main__":
    test_c_to_f()
