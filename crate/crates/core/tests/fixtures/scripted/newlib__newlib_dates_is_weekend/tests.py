def test_is_weekend():
    for day in range(1, 8):
        iso = f"2024-07-0{day}"
        assert is_weekend(iso) == is_weekend_new_implementation(iso)
    assert is_weekend("2024-12-25") == is_weekend_new_implementation("2024-12-25")
    assert is_weekend("2024-12-28") == is_weekend_new_implementation("2024-12-28")


if __name__ == "__main__":
    test_is_weekend()
