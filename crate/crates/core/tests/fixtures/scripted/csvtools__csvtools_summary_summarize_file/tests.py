def test_summarize_file():
    os.makedirs(CACHE_DIR, exist_ok=True)
    path = os.path.join(CACHE_DIR, "scores.csv")
    with open(path, "w", newline="") as f:
        f.write("name,score,weight\na,3,1\nb,,2\nc,6,\n")
    assert summarize_file(path, "score") == summarize_file_new_implementation(path, "score")
    assert summarize_file(path, "weight") == summarize_file_new_implementation(path, "weight")
    assert summarize_file(path, "absent") == summarize_file_new_implementation(path, "absent")


if __name__ == "__main__":
    test_summarize_file()
