"""Vectorized wide-integer arrays stored as 61-bit limbs.

Partition identifiers produced by concatenating hash values and code
chunks can exceed 64 bits, so they are carried around as numpy arrays of
shape (n_limbs, n) with 61 bits per limb, least-significant limb first.
61 matches the hashing field width, so each limb is a valid hash input.
"""

from __future__ import annotations

import numpy as np

LIMB_BITS = 61
LIMB_MASK = np.uint64((1 << LIMB_BITS) - 1)


def limb_count(bits: int) -> int:
    return max(1, -(-bits // LIMB_BITS))


def from_ints(values, n_limbs: int) -> np.ndarray:
    """Split python ints (arbitrary precision) into a limb array."""
    out = np.zeros((n_limbs, len(values)), dtype=np.uint64)
    for col, v in enumerate(values):
        v = int(v)
        for l in range(n_limbs):
            out[l, col] = (v >> (LIMB_BITS * l)) & int(LIMB_MASK)
    return out


def from_uint64(values: np.ndarray, n_limbs: int) -> np.ndarray:
    """Promote a plain uint64 vector (values < 2**61) to a limb array."""
    out = np.zeros((n_limbs, len(values)), dtype=np.uint64)
    out[0] = values.astype(np.uint64) & LIMB_MASK
    if n_limbs > 1:
        out[1] = values.astype(np.uint64) >> np.uint64(LIMB_BITS)
    return out


def to_ints(arr: np.ndarray) -> list[int]:
    n_limbs, n = arr.shape
    vals = [0] * n
    for l in range(n_limbs):
        col = arr[l]
        shift = LIMB_BITS * l
        for i in range(n):
            vals[i] |= int(col[i]) << shift
    return vals


def rshift(arr: np.ndarray, shift: int) -> np.ndarray:
    """Logical right shift of every column by `shift` bits."""
    if shift == 0:
        return arr.copy()
    n_limbs = arr.shape[0]
    q, r = divmod(shift, LIMB_BITS)
    out = np.zeros_like(arr)
    for l in range(n_limbs - q):
        lo = arr[l + q] >> np.uint64(r)
        if r and l + q + 1 < n_limbs:
            lo |= (arr[l + q + 1] << np.uint64(LIMB_BITS - r)) & LIMB_MASK
        out[l] = lo
    return out


def lshift(arr: np.ndarray, shift: int) -> np.ndarray:
    """Left shift; bits pushed past the top limb are dropped (caller sizes limbs)."""
    if shift == 0:
        return arr.copy()
    n_limbs = arr.shape[0]
    q, r = divmod(shift, LIMB_BITS)
    out = np.zeros_like(arr)
    for l in range(n_limbs - 1, q - 1, -1):
        hi = (arr[l - q] << np.uint64(r)) & LIMB_MASK
        if r and l - q - 1 >= 0:
            hi |= arr[l - q - 1] >> np.uint64(LIMB_BITS - r)
        out[l] = hi
    return out


def or_low(arr: np.ndarray, values: np.ndarray) -> np.ndarray:
    """OR a < 2**61 vector into the low limb (the low bits must be clear)."""
    out = arr.copy()
    out[0] |= values.astype(np.uint64) & LIMB_MASK
    return out


def inject(arr: np.ndarray, values: np.ndarray, lo: int, width: int) -> None:
    """OR a bit field of width <= 61 into every column, in place.

    The target bits must be clear (fields are packed once, disjointly).
    """
    if width > LIMB_BITS:
        raise ValueError("field wider than one limb")
    v = values.astype(np.uint64) & np.uint64((1 << width) - 1)
    q, r = divmod(lo, LIMB_BITS)
    arr[q] |= (v << np.uint64(r)) & LIMB_MASK
    if r and q + 1 < arr.shape[0] and r + width > LIMB_BITS:
        arr[q + 1] |= v >> np.uint64(LIMB_BITS - r)


def extract(arr: np.ndarray, lo: int, width: int) -> np.ndarray:
    """Extract a bit field of width <= 61 as a uint64 vector."""
    if width > LIMB_BITS:
        raise ValueError("field wider than one limb")
    q, r = divmod(lo, LIMB_BITS)
    n_limbs = arr.shape[0]
    v = arr[q] >> np.uint64(r) if q < n_limbs else np.zeros(arr.shape[1], np.uint64)
    if r and q + 1 < n_limbs and r + width > LIMB_BITS:
        v = v | (arr[q + 1] << np.uint64(LIMB_BITS - r))
    return v & np.uint64((1 << width) - 1)


def take(arr: np.ndarray, idx) -> np.ndarray:
    return arr[:, idx]


def tile_children(parents: np.ndarray, branch_bits: int) -> np.ndarray:
    """Expand each parent id p into the b = 2**branch_bits ids p*b + 0..b-1."""
    b = 1 << branch_bits
    shifted = lshift(parents, branch_bits)
    n = parents.shape[1]
    out = np.repeat(shifted, b, axis=1)
    offs = np.tile(np.arange(b, dtype=np.uint64), n)
    out[0] |= offs
    return out
