def test_is_prime():
    for n in range(-3, 40):
        assert is_prime(n) == is_prime_new_implementation(n)
    assert is_prime(97) == is_prime_new_implementation(97)
    assert is_prime(91) == is_prime_new_implementation(91)


if __name__ == "__main__":
    test_is_prime()
