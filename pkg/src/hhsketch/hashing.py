"""Seeded k-wise independent hash families over word-sized domains.

Every sketch in this package draws its randomness from the polynomial
family over the Mersenne prime field GF(2^61 - 1): a hash of
independence k is a uniformly random polynomial of degree k-1, evaluated
with Horner's rule and reduced modulo the bucket count. Uniform
coefficients give exact k-wise independence on the domain, single-word
arithmetic keeps evaluation cheap, and deriving the coefficients from a
64-bit seed with splitmix-style mixing makes every structure
reproducible across platforms and processes.

Identifiers wider than 61 bits (concatenated hash/chunk ids) are hashed
by `WideHash`, which splits the input into 61-bit limbs, applies an
independent k-wise hash per limb, and sums modulo the bucket count.
The sum of independent k-wise families over a product domain is again
k-wise independent, so the guarantee survives the composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bitpack

MERSENNE_P = (1 << 61) - 1
_P64 = np.uint64(MERSENNE_P)
_MASK31 = np.uint64(0x7FFFFFFF)
_MASK30 = np.uint64(0x3FFFFFFF)

MAX_DOMAIN_BITS = 61


_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 sequence: returns (new_state, output)."""
    state = (state + _GOLDEN) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


def _mix64_vec(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer (matches the scalar output)."""
    z = x.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def splitmix_stream(seed, count: int) -> np.ndarray:
    """Outputs of `count` sequential splitmix64 steps, vectorized.

    The state chain is seed + i * golden, so the whole stream is one
    closed-form evaluation; identical to repeated `splitmix64` calls.
    """
    base = np.asarray(seed, dtype=np.uint64)
    steps = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
    if base.ndim == 0:
        return _mix64_vec(base + steps)
    return _mix64_vec(base[..., None] + steps)


def bulk_field_coeffs(seeds: np.ndarray, k: int) -> np.ndarray:
    """Field coefficients for many seeds at once, shape seeds.shape + (k,).

    Matches `derive_field_elements` provided no draw hits the
    rejection value, which happens with probability 2^-61 per draw;
    the mismatch is detected and those seeds fall back to the scalar
    path.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    out = np.empty(seeds.shape + (k,), dtype=np.uint64)
    mask61 = np.uint64((1 << 61) - 1)
    for j in range(1, k + 1):
        z = _mix64_vec(seeds + np.uint64((j * _GOLDEN) & 0xFFFFFFFFFFFFFFFF))
        out[..., j - 1] = z & mask61
    bad = out == np.uint64(MERSENNE_P)
    if bad.any():
        flat = out.reshape(-1, k)
        flat_seeds = seeds.reshape(-1)
        for row in np.unique(np.nonzero(bad.reshape(-1, k))[0]):
            flat[row] = derive_field_elements(int(flat_seeds[row]), k)
    return out


def derive_field_elements(seed: int, count: int) -> tuple[int, ...]:
    """Expand a seed into `count` elements of GF(2^61 - 1), counter-mode."""
    out = []
    state = seed & 0xFFFFFFFFFFFFFFFF
    while len(out) < count:
        state, z = splitmix64(state)
        # Rejection keeps the draw uniform over [0, p).
        z &= (1 << 61) - 1
        if z < MERSENNE_P:
            out.append(z)
    return tuple(out)


def mulmod61(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized (a * b) mod (2^61 - 1) for uint64 operands below the prime.

    The 122-bit product is assembled from 30/31-bit half products so
    every intermediate fits in a uint64; 2^61 = 1 (mod p) folds it back.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a_hi = a >> np.uint64(31)
    a_lo = a & _MASK31
    b_hi = b >> np.uint64(31)
    b_lo = b & _MASK31
    hh = a_hi * b_hi
    mid = a_hi * b_lo + a_lo * b_hi
    ll = a_lo * b_lo
    res = (
        (hh << np.uint64(1))
        + (mid >> np.uint64(30))
        + ((mid & _MASK30) << np.uint64(31))
        + (ll & _P64)
        + (ll >> np.uint64(61))
    )
    res = (res & _P64) + (res >> np.uint64(61))
    res = (res & _P64) + (res >> np.uint64(61))
    # after two folds res <= p, so only the exact-p alias remains
    return np.where(res == _P64, np.uint64(0), res)


def _poly_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Horner evaluation mod p. coeffs shape (..., k), x broadcastable."""
    acc = np.broadcast_to(coeffs[..., 0], np.broadcast_shapes(coeffs[..., 0].shape, x.shape)).copy()
    k = coeffs.shape[-1]
    for j in range(1, k):
        acc = mulmod61(acc, x) + coeffs[..., j]
        acc = (acc & _P64) + (acc >> np.uint64(61))
        acc = (acc & _P64) + (acc >> np.uint64(61))
        acc = np.where(acc == _P64, np.uint64(0), acc)
    return acc


@dataclass(frozen=True)
class KWiseHash:
    """A member of the degree-(k-1) polynomial family over GF(2^61 - 1).

    Immutable after construction; concurrent evaluation is safe. Two
    instances built from the same (k, domain_bits, buckets, seed)
    produce identical outputs everywhere.
    """

    independence_k: int
    domain_bits: int
    buckets: int
    seed: int
    coefficients: tuple[int, ...]

    def value(self, x: int) -> int:
        """Bucket of x, in [0, buckets)."""
        acc = self.coefficients[0]
        for c in self.coefficients[1:]:
            acc = (acc * x + c) % MERSENNE_P
        return acc % self.buckets

    def values(self, xs: np.ndarray) -> np.ndarray:
        """Vectorized bucket evaluation; xs a uint64/int array below 2^61."""
        coeffs = np.array(self.coefficients, dtype=np.uint64)
        acc = _poly_eval(coeffs, np.asarray(xs, dtype=np.uint64))
        return (acc % np.uint64(self.buckets)).astype(np.int64)

    def sign(self, x: int) -> int:
        """Map bucket 0 -> -1 and bucket 1 -> +1; requires buckets == 2."""
        if self.buckets != 2:
            raise ValueError("sign evaluation requires a 2-bucket hash")
        return 2 * self.value(x) - 1

    def signs(self, xs: np.ndarray) -> np.ndarray:
        if self.buckets != 2:
            raise ValueError("sign evaluation requires a 2-bucket hash")
        return (2 * self.values(xs) - 1).astype(np.int64)

    def spec(self) -> dict:
        """Parameters sufficient to rebuild an identical hash."""
        return {
            "k": self.independence_k,
            "domain_bits": self.domain_bits,
            "buckets": self.buckets,
            "seed": self.seed,
        }

    def space_words(self) -> int:
        return len(self.coefficients)


def new_kwise(k: int, domain_bits: int, buckets: int, seed: int) -> KWiseHash:
    """Construct a k-wise independent hash [domain] -> [buckets] from a seed."""
    if k < 1:
        raise ValueError("independence k must be >= 1")
    if buckets < 1:
        raise ValueError("bucket count must be >= 1")
    if not 0 <= domain_bits <= MAX_DOMAIN_BITS:
        raise ValueError(f"domain_bits must be in [0, {MAX_DOMAIN_BITS}]")
    coeffs = derive_field_elements(seed, k)
    return KWiseHash(k, domain_bits, buckets, seed & 0xFFFFFFFFFFFFFFFF, coeffs)


class WideHash:
    """k-wise hashing for identifiers wider than one 61-bit word.

    Splits the input into limbs and combines one independent KWiseHash
    per limb by addition mod the bucket count.
    """

    def __init__(self, k: int, domain_bits: int, buckets: int, seed: int):
        self.independence_k = k
        self.domain_bits = domain_bits
        self.buckets = buckets
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.n_limbs = bitpack.limb_count(domain_bits)
        self._limb_hashes = []
        state = self.seed
        for _ in range(self.n_limbs):
            state, sub = splitmix64(state)
            self._limb_hashes.append(
                new_kwise(k, min(domain_bits, bitpack.LIMB_BITS), buckets, sub)
            )
        self._coeff_matrix = np.array(
            [h.coefficients for h in self._limb_hashes], dtype=np.uint64
        )  # (n_limbs, k)

    def value(self, x: int) -> int:
        total = 0
        for l, h in enumerate(self._limb_hashes):
            total += h.value((x >> (bitpack.LIMB_BITS * l)) & (2**bitpack.LIMB_BITS - 1))
        return total % self.buckets

    def values_limbs(self, limbs: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on a (>= n_limbs, n) limb array; extra
        high limbs (zero for values in this domain) are ignored."""
        if limbs.shape[0] < self.n_limbs:
            raise ValueError("limb array narrower than the hash domain")
        limbs = limbs[:self.n_limbs]
        coeffs = self._coeff_matrix[:, None, :]  # (n_limbs, 1, k)
        acc = _poly_eval(coeffs, limbs)  # (n_limbs, n)
        total = acc.sum(axis=0, dtype=np.uint64)
        return (total % np.uint64(self.buckets)).astype(np.int64)

    def signs_limbs(self, limbs: np.ndarray) -> np.ndarray:
        if self.buckets != 2:
            raise ValueError("sign evaluation requires a 2-bucket hash")
        return (2 * self.values_limbs(limbs) - 1).astype(np.int64)

    def space_words(self) -> int:
        return self.n_limbs * self.independence_k
