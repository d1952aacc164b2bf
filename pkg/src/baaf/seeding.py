"""Deterministic seed derivation.

A single master seed drives every random decision in a run. Sub-seeds are
derived by hashing the master seed together with a structural path (e.g.
``("split", vote_index)`` or ``("fit", vote_index, bag_index)``), so results
never depend on execution order or thread scheduling.
"""

import hashlib

_DOMAIN = b"baaf.seed.v1"


def stable_seed(*parts: object) -> int:
    """Derive a 64-bit unsigned seed from an ordered tuple of parts.

    Parts are rendered with ``str`` and fed through BLAKE2b, so any mix of
    ints and short strings works. The same parts always give the same seed,
    on any platform.
    """
    h = hashlib.blake2b(_DOMAIN, digest_size=8)
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
