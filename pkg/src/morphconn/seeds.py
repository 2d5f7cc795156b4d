"""Named sub-seeds derived from one master seed.

``derive_seed(master, name)`` is the first 8 bytes of
``sha256(f"{master}/{name}")`` read big-endian, shifted right by one bit so
the result fits a signed 64-bit integer.
"""
import hashlib

from .errors import ConfigError


def require_seed(seed, what="this stage"):
    if seed is None:
        raise ConfigError(f"{what} is randomized and needs an explicit seed")
    return int(seed)


def derive_seed(master, name: str) -> int:
    master = require_seed(master)
    digest = hashlib.sha256(f"{master}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
