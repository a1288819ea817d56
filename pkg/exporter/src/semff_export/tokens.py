"""Tokenization mirroring the engine's ingestion rule: lowercase
alphanumeric runs, with everything else acting as a separator."""

import re

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())
