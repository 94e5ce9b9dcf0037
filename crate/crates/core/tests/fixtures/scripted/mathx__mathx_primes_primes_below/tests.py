def test_primes_below():
    assert primes_below(12) == primes_below_new_implementation(10)
    assert primes_below(2) == primes_below_new_implementation(2)
    assert primes_below(30) == primes_below_new_implementation(30)


if __name__ == "__main__":
    test_primes_below()
