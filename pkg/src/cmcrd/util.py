"""Small shared helpers: seeded RNG streams, canonical JSON, float formatting."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

# All randomness in the package flows through numpy Generators built here, so
# results are reproducible independent of torch's RNG.


def rng_from(*parts: int) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of non-negative integers."""
    for p in parts:
        if p < 0:
            raise ValueError(f"seed parts must be non-negative, got {parts}")
    return np.random.default_rng(list(parts))


def canonical_json(obj: Any) -> str:
    """JSON with sorted keys and no whitespace variance; used for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(obj: Any) -> str:
    return sha256_hex(canonical_json(obj).encode("utf-8"))


def derive_seed(*parts: int) -> int:
    """Collision-resistant 48-bit seed derived from integer parts, so per-fold
    streams are stable regardless of scheduling order."""
    digest = hashlib.sha256(canonical_json(list(parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:6], "big")


def fmt9(x: float) -> str:
    """Format a float with 9 significant digits.

    This is a write-stable fixpoint: parsing the output and formatting again
    reproduces the same bytes, which keeps CSV round-trips deterministic.
    """
    return "%.9g" % float(x)
