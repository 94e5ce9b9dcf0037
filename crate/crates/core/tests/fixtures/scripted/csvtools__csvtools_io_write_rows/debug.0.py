def test_write_rows():
    rows = [{"a": "1", "b": "x"}, {"a": "2", "b": "y"}]
    old = os.path.join(CACHE_DIR, "old", "rows.csv")
    new = os.path.join(CACHE_DIR, "new", "rows.csv")
    assert write_rows(old, rows, ["a", "b"]) == write_rows_new_implementation(new, rows, ["a", "b"])
    with open(old) as f1, open(new) as f2:
        assert f1.read() == f2.read()
    assert write_rows(old, [], ["a"]) == write_rows_new_implementation(new, [], ["a"])
