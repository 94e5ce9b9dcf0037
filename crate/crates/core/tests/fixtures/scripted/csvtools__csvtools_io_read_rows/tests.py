def test_read_rows():
    os.makedirs(CACHE_DIR, exist_ok=True)
    path = os.path.join(CACHE_DIR, "people.csv")
    with open(path, "w", newline="") as f:
        f.write("name,age\nada,36\nalan,41\n")
    assert read_rows(path) == read_rows_new_implementation(path)
    assert len(read_rows_new_implementation(path)) == 2
    empty = os.path.join(CACHE_DIR, "empty.csv")
    with open(empty, "w", newline="") as f:
        f.write("name,age\n")
    assert read_rows(empty) == read_rows_new_implementation(empty)


if __name__ == "__main__":
    test_read_rows()
