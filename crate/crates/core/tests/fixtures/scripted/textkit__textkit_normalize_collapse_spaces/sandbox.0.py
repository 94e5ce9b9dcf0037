import re

_WS = re.compile(r"\s+")


def collapse(text):
    return _WS.sub(" ", text).strip()
