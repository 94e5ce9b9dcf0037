from datetime import date


def days_between(a, b):
    """Absolute number of days between two ISO dates."""
    return abs((date.fromisoformat(b) - date.fromisoformat(a)).days)
