"""Linear sketch structures for partition point queries.

Two variants share one counter table layout:

* count-min: per row, add delta to one bucket chosen by hashing the
  partition id. Under the strict-turnstile promise the minimum over
  rows never underestimates the partition mass and overshoots by at
  most eps * (l1 tail mass) with probability 1 - delta when built with
  ceil(log2(1/delta)) rows and ceil(2/eps) buckets per row
  (Cormode & Muthukrishnan 2005).

* count-sketch: per row the delta is multiplied by two pairwise ±1
  signs, one of the partition id and one of the raw index, and the
  estimate is the lower median of absolute bucket values. This is the
  variant that works for l2 mass under general (signed) streams, for
  instances whose queried partitions are dominated by a single index.

Both are linear in the input vector, so tables fed disjoint stream
pieces can be merged by adding counters. Updates are single-writer;
queries may run concurrently between update phases.

Row hash derivation matches the chain (table seed -> per-row master
seeds -> per-limb polynomial seeds) used by the hashing module's
WideHash, but the coefficients are materialized as numpy tensors so a
table with dozens of rows costs a handful of vector ops to build.
"""

from __future__ import annotations

import struct

import numpy as np

from . import bitpack
from .hashing import _poly_eval, bulk_field_coeffs, splitmix_stream

_COUNTER_LIMIT = 1 << 62


class CounterOverflowError(RuntimeError):
    """A counter left the checked signed-64 range; results would be garbage."""


class PartitionOracle:
    """Maps universe indices to partition ids (pure and deterministic)."""

    universe: int
    id_bits: int

    def map_scalar(self, i: int) -> int:
        raise NotImplementedError

    def map_limbs(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized map to a (n_limbs, n) limb array."""
        raise NotImplementedError

    @property
    def n_limbs(self) -> int:
        return bitpack.limb_count(self.id_bits)


class IdentityOracle(PartitionOracle):
    def __init__(self, universe: int):
        self.universe = universe
        self.id_bits = max(1, (universe - 1).bit_length())

    def map_scalar(self, i: int) -> int:
        return i

    def map_limbs(self, indices: np.ndarray) -> np.ndarray:
        return bitpack.from_uint64(np.asarray(indices, dtype=np.uint64), self.n_limbs)


class ArrayOracle(PartitionOracle):
    """Explicit index -> partition table, for tests and small instances."""

    def __init__(self, mapping, partition_count: int):
        self._map = np.asarray(mapping, dtype=np.int64)
        self.universe = len(self._map)
        self.partitions = partition_count
        self.id_bits = max(1, (partition_count - 1).bit_length())

    def map_scalar(self, i: int) -> int:
        return int(self._map[i])

    def map_limbs(self, indices: np.ndarray) -> np.ndarray:
        vals = self._map[np.asarray(indices, dtype=np.int64)]
        return bitpack.from_uint64(vals.astype(np.uint64), self.n_limbs)


def _derive_row_coeffs(master_seeds: np.ndarray, limbs: int) -> np.ndarray:
    """(rows,) master seeds -> (rows, limbs, 2) degree-1 coefficients,
    one independent polynomial per 61-bit limb of the input."""
    limb_seeds = splitmix_stream(master_seeds, limbs)  # (rows, limbs)
    return bulk_field_coeffs(limb_seeds, 2)


def _eval_rows(coeffs: np.ndarray, ids: np.ndarray, buckets: int) -> np.ndarray:
    """Per-(row, column) bucket for coeffs (rows, limbs, k) over a limb
    array with at least `limbs` rows."""
    ids = ids[:coeffs.shape[1]]
    acc = _poly_eval(coeffs[:, :, None, :], ids[None, :, :])
    total = acc.sum(axis=1, dtype=np.uint64)
    return (total % np.uint64(buckets)).astype(np.int64)


class CounterTable:
    """rows x width table of checked signed-64 counters.

    `signed=False` gives the count-min layout (bucket hashes only);
    `signed=True` adds per-row partition signs and index signs for the
    count-sketch estimator.
    """

    MAGIC = b"HHCT"

    def __init__(self, rows: int, width: int, id_bits: int, seed: int,
                 signed: bool, index_bits: int = 0):
        if rows < 1 or width < 1:
            raise ValueError("rows and width must be positive")
        self.rows = rows
        self.width = width
        self.id_bits = id_bits
        self.index_bits = index_bits
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.signed = signed
        self.counters = np.zeros((rows, width), dtype=np.int64)
        self._row_offsets = (np.arange(rows, dtype=np.int64) * width)[:, None]

        per_row = 3 if signed else 1
        masters = splitmix_stream(self.seed, per_row * rows).reshape(rows, per_row)
        self._bucket_coeffs = _derive_row_coeffs(masters[:, 0], self.n_limbs)
        if signed:
            idx_limbs = bitpack.limb_count(max(index_bits, 1))
            self._psign_coeffs = _derive_row_coeffs(masters[:, 1], self.n_limbs)
            self._isign_coeffs = _derive_row_coeffs(masters[:, 2], idx_limbs)

    @property
    def n_limbs(self) -> int:
        return bitpack.limb_count(self.id_bits)

    # -- updates -----------------------------------------------------------

    def update(self, partition_id: int, delta: int, index: int | None = None) -> None:
        ids = bitpack.from_ints([partition_id], self.n_limbs)
        idx = None
        if self.signed:
            if index is None:
                raise ValueError("signed table updates need the raw index")
            idx = np.asarray([index], dtype=np.uint64)
        self.apply_many(ids, np.asarray([delta], dtype=np.int64), idx)

    def apply_many(self, ids: np.ndarray, deltas: np.ndarray,
                   indices: np.ndarray | None = None) -> None:
        """Feed a batch of updates; ids is a (n_limbs, n) limb array."""
        deltas = np.asarray(deltas, dtype=np.int64)
        buckets = _eval_rows(self._bucket_coeffs, ids, self.width)  # (rows, n)
        if self.signed:
            if indices is None:
                raise ValueError("signed table updates need raw indices")
            idx_limbs = bitpack.from_uint64(
                np.asarray(indices, np.uint64),
                bitpack.limb_count(max(self.index_bits, 1)))
            signs = (2 * _eval_rows(self._psign_coeffs, ids, 2) - 1) \
                * (2 * _eval_rows(self._isign_coeffs, idx_limbs, 2) - 1)
            weights = deltas[None, :] * signs
        else:
            weights = np.broadcast_to(deltas[None, :], buckets.shape)
        flat = (buckets + self._row_offsets).ravel()
        np.add.at(self.counters.ravel(), flat, weights.ravel())
        hi = np.abs(self.counters).max(initial=0)
        if hi >= _COUNTER_LIMIT:
            raise CounterOverflowError(f"counter magnitude {hi} exceeds checked range")

    # -- queries -----------------------------------------------------------

    def query_min(self, partition_id: int) -> int:
        """Count-min estimate: min over rows. Never below the true mass
        in the strict-turnstile model."""
        return int(self.query_min_many(
            bitpack.from_ints([partition_id], self.n_limbs))[0])

    def query_min_many(self, ids: np.ndarray) -> np.ndarray:
        buckets = _eval_rows(self._bucket_coeffs, ids, self.width)
        vals = np.take_along_axis(self.counters, buckets, axis=1)
        return vals.min(axis=0)

    def query_median_abs(self, partition_id: int) -> int:
        """Count-sketch estimate: lower median of |bucket| over rows."""
        return int(self.query_median_abs_many(
            bitpack.from_ints([partition_id], self.n_limbs))[0])

    def query_median_abs_many(self, ids: np.ndarray) -> np.ndarray:
        buckets = _eval_rows(self._bucket_coeffs, ids, self.width)
        vals = np.abs(np.take_along_axis(self.counters, buckets, axis=1))
        vals.sort(axis=0)
        return vals[(self.rows - 1) // 2]

    def row_l2_squared(self) -> np.ndarray:
        """Per-row sum of squared counters; each row is an unbiased
        estimate of the squared l2 mass of the sketched vector."""
        c = self.counters.astype(np.float64)
        return (c * c).sum(axis=1)

    # -- plumbing ----------------------------------------------------------

    def merge(self, other: "CounterTable") -> None:
        if (other.rows, other.width, other.seed, other.signed) != (
                self.rows, self.width, self.seed, self.signed):
            raise ValueError("tables must share parameters and seed to merge")
        self.counters += other.counters

    def reset(self) -> None:
        self.counters[:] = 0

    def space_words(self) -> int:
        words = self.rows * self.width
        words += self._bucket_coeffs.size
        if self.signed:
            words += self._psign_coeffs.size + self._isign_coeffs.size
        return words

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<4sBIIIIQ", self.MAGIC, 1, self.rows, self.width,
            self.id_bits | (self.index_bits << 16), int(self.signed), self.seed)
        return head + self.counters.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CounterTable":
        magic, version, rows, width, bits, signed, seed = struct.unpack_from(
            "<4sBIIIIQ", blob)
        if magic != cls.MAGIC or version != 1:
            raise ValueError("bad counter table blob")
        table = cls(rows, width, bits & 0xFFFF, seed, bool(signed), bits >> 16)
        off = struct.calcsize("<4sBIIIIQ")
        table.counters = np.frombuffer(
            blob, dtype="<i8", count=rows * width, offset=off
        ).reshape(rows, width).astype(np.int64)
        return table


def countmin_table(rows: int, width: int, id_bits: int, seed: int) -> CounterTable:
    return CounterTable(rows, width, id_bits, seed, signed=False)


def countsketch_table(rows: int, width: int, id_bits: int, index_bits: int,
                      seed: int) -> CounterTable:
    return CounterTable(rows, width, id_bits, seed, signed=True,
                        index_bits=index_bits)


def cm_update(table: CounterTable, oracle: PartitionOracle, i: int, delta: int) -> None:
    table.update(oracle.map_scalar(i), delta)


def cm_point_query(table: CounterTable, j: int) -> int:
    return table.query_min(j)


def pcs_update(table: CounterTable, oracle: PartitionOracle, i: int, delta: int) -> None:
    table.update(oracle.map_scalar(i), delta, index=i)


def pcs_point_query(table: CounterTable, j: int) -> int:
    return table.query_median_abs(j)


class ExactL1Tracker:
    """Running sum of deltas; equals ||x||_1 exactly under strict turnstile."""

    def __init__(self) -> None:
        self.total = 0

    def add(self, delta: int) -> None:
        self.total += int(delta)

    def add_many(self, deltas: np.ndarray) -> None:
        self.total += int(np.sum(deltas, dtype=np.int64))

    def read(self) -> int:
        return self.total
