import csv
import os

CACHE_DIR = "/forge_cache/csvtools__csvtools_io_read_rows"


def read_rows(path):
    """Rows of a CSV file as dictionaries."""
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
