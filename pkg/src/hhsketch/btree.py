"""Hierarchical partition heavy hitters over a power-of-two branching tree.

One point-query structure per level of a complete b-ary tree over the
partition ids: level r aggregates ids by their top r*log2(b) bits, so
an update touches every level once and a query walks from the root
keeping a bounded set of candidate children per level.

Three query modes:

* `query_topk`: keep the highest-estimate children per level (general
  turnstile, count-sketch estimates). Output never exceeds the
  2/(eps/180)^2 cap; the kept count per level is the smaller desk-scale
  cap, see DeskKnobsNote in the module tail.
* `threshold_query`: strict turnstile, count-min estimates, keep every
  child whose estimate reaches the query threshold. Estimates never
  undershoot, so a non-empty answer provably contains every index at
  or above the threshold; if a level keeps more than 3/eps children
  the walk aborts and returns the empty set, signalling failure.
* `expected_time_query`: binary tree with cheap per-level structures
  (failure 1/4) and a final high-confidence count-min filter; visited
  node counts are recorded for the query-time accounting.
"""

from __future__ import annotations

import struct

import numpy as np

from . import bitpack
from .sketches import CounterTable, PartitionOracle

SELECTION_DIVISOR = 180.0   # selection parameter eps'' = eps / 180
POINT_QUERY_DIVISOR = 60.0  # per-level point-query error eps' = eps / 60
ALPHA_LO = 1.0 / 20.0
ALPHA_HI = 3.0
GAMMA_CAP = 0.5


def _pow2_at_least(x: float) -> int:
    return 1 << max(1, int(np.ceil(np.log2(max(x, 2.0)))))


def _pow2_nearest(x: float) -> int:
    if x <= 2:
        return 2
    lo = 1 << int(np.floor(np.log2(x)))
    hi = lo << 1
    return lo if x - lo <= hi - x else hi


def default_branching(id_bits: int, eps: float, delta: float,
                      gamma: float = 0.25) -> int:
    """b = nearest power of two to ((log2 N)/(eps*delta))^gamma, >= 2."""
    if not 0 < gamma < GAMMA_CAP:
        raise ValueError(f"gamma must lie in (0, {GAMMA_CAP})")
    return max(2, _pow2_nearest(float(id_bits / (eps * delta)) ** gamma))


class BTreeSketch:
    """Level-indexed point-query structures over a b-ary partition tree.

    mode "l2": signed count-sketch levels for general turnstile streams.
    mode "l1": count-min levels, strict turnstile only.
    """

    MAGIC = b"HHBT"

    def __init__(self, oracle: PartitionOracle, eps: float, delta: float,
                 seed: int, mode: str = "l2", branching: int | None = None,
                 gamma: float = 0.25, width: int | None = None,
                 rows: int | None = None, keep: int | None = None,
                 index_bits: int | None = None):
        if mode not in ("l2", "l1"):
            raise ValueError("mode must be 'l2' or 'l1'")
        if not 0 < eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        self.oracle = oracle
        self.eps = eps
        self.delta = delta
        self.mode = mode
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.gamma = gamma
        self.b = branching if branching else default_branching(
            oracle.id_bits, eps, delta, gamma)
        if self.b & (self.b - 1):
            raise ValueError("branching must be a power of two")
        self.branch_bits = self.b.bit_length() - 1
        # partition count padded up to a power of b (empty partitions)
        self.depth = max(1, -(-oracle.id_bits // self.branch_bits))
        self.levels = self.depth + 1

        self.eps_sel = eps / SELECTION_DIVISOR
        self.cap = int(np.ceil(2.0 / self.eps_sel ** 2))
        if keep is None:
            keep = max(4, int(np.ceil(2.0 / eps ** 2)))
        self.keep = min(self.cap, keep)

        queries_bound = self.keep * self.b * self.depth
        eta = delta / max(queries_bound, 1)
        if rows is None:
            rows = max(2, int(np.ceil(np.log2(1.0 / eta))))
        if width is None:
            if mode == "l2":
                width = int(np.ceil(8.0 / eps ** 2))
            else:
                width = int(np.ceil(4.0 / eps))
        self.rows = rows
        self.width = width
        self.index_bits = index_bits if index_bits is not None else \
            max(1, (oracle.universe - 1).bit_length())

        self.tables: list[CounterTable] = []
        state = self.seed
        from .hashing import splitmix64
        for r in range(self.levels):
            state, sub = splitmix64(state)
            level_bits = max(1, min(oracle.id_bits, r * self.branch_bits))
            self.tables.append(CounterTable(
                rows, width, level_bits, sub, signed=(mode == "l2"),
                index_bits=self.index_bits))
        self.last_query_stats: dict = {}

    # -- updates -----------------------------------------------------------

    def update(self, i: int, delta: int) -> None:
        self.apply_many(np.asarray([i], dtype=np.int64),
                        np.asarray([delta], dtype=np.int64))

    def apply_many(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        leaf = self.oracle.map_limbs(indices)
        idx = np.asarray(indices, dtype=np.uint64) if self.mode == "l2" else None
        self._apply_leaf(leaf, deltas, idx)

    def _apply_leaf(self, leaf: np.ndarray, deltas: np.ndarray,
                    indices: np.ndarray | None) -> None:
        """Apply a batch given precomputed leaf-level oracle ids."""
        deltas = np.asarray(deltas, dtype=np.int64)
        for r in range(self.levels):
            ids = bitpack.rshift(leaf, self.branch_bits * (self.depth - r))
            self.tables[r].apply_many(ids, deltas, indices)

    # -- queries -----------------------------------------------------------

    def _level_estimates(self, r: int, ids: np.ndarray) -> np.ndarray:
        if self.mode == "l2":
            return self.tables[r].query_median_abs_many(ids)
        return self.tables[r].query_min_many(ids)

    def query_topk(self) -> tuple[list[int], list[int]]:
        """Walk the tree keeping the highest-estimate children per level.

        Returns (partition ids, estimates), estimate-descending; always
        at most 2/(eps/180)^2 entries.
        """
        survivors = np.zeros((self.oracle.n_limbs, 1), dtype=np.uint64)
        est = None
        queried = 0
        for r in range(1, self.levels):
            children = bitpack.tile_children(survivors, self.branch_bits)
            # children beyond the padded id space are empty partitions;
            # they hash like any other id and carry zero mass
            est = self._level_estimates(r, children)
            queried += children.shape[1]
            alive = est > 0
            children = children[:, alive]
            est = est[alive]
            if est.size == 0:
                self.last_query_stats = {"queried": queried}
                return [], []
            keys = tuple(children[l] for l in range(children.shape[0])) + (-est,)
            order = np.lexsort(keys)[:self.keep]
            survivors = children[:, order]
            est = est[order]
        self.last_query_stats = {"queried": queried}
        ids = bitpack.to_ints(survivors)
        assert len(ids) <= self.cap
        return ids, [int(v) for v in est]

    def threshold_query(self, phi: int) -> tuple[list[int], bool]:
        """Strict-turnstile walk keeping children with estimate >= phi.

        Returns (ids, aborted). A non-empty result contains every
        index of mass >= phi (count-min estimates never undershoot);
        aborted=True (empty result) signals a self-detected failure.
        """
        if self.mode != "l1":
            raise ValueError("threshold queries need an l1 (count-min) tree")
        limit = int(np.ceil(3.0 / self.eps))
        survivors = np.zeros((self.oracle.n_limbs, 1), dtype=np.uint64)
        queried = 0
        for r in range(1, self.levels):
            children = bitpack.tile_children(survivors, self.branch_bits)
            est = self._level_estimates(r, children)
            queried += children.shape[1]
            kept = est >= phi
            if int(kept.sum()) > limit:
                self.last_query_stats = {"queried": queried, "aborted_level": r}
                return [], True
            survivors = children[:, kept]
            if survivors.shape[1] == 0:
                self.last_query_stats = {"queried": queried}
                return [], False
        self.last_query_stats = {"queried": queried}
        return bitpack.to_ints(survivors), False

    def expected_time_query(self, phi: int, verifier: CounterTable
                            ) -> tuple[list[int], int]:
        """Binary-tree threshold walk plus a final verifier filter.

        Returns (indices, visited) where visited counts every node
        point-queried during the walk.
        """
        if self.b != 2 or self.mode != "l1":
            raise ValueError("expected-time queries need a binary l1 tree")
        survivors = np.zeros((self.oracle.n_limbs, 1), dtype=np.uint64)
        visited = 0
        for r in range(1, self.levels):
            children = bitpack.tile_children(survivors, 1)
            est = self._level_estimates(r, children)
            visited += children.shape[1]
            survivors = children[:, est >= phi]
            if survivors.shape[1] == 0:
                self.last_query_stats = {"visited": visited}
                return [], visited
        final = verifier.query_min_many(survivors)
        ids = [int(v) for v, keep in zip(bitpack.to_ints(survivors), final >= phi)
               if keep]
        self.last_query_stats = {"visited": visited}
        return ids, visited

    # -- plumbing ----------------------------------------------------------

    def space_words(self) -> int:
        return sum(t.space_words() for t in self.tables)

    def reset(self) -> None:
        for t in self.tables:
            t.reset()

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<4sBIIdd Q", self.MAGIC, 1, self.b, self.levels,
            self.eps, self.delta, self.seed)
        blobs = [t.to_bytes() for t in self.tables]
        sizes = struct.pack(f"<{len(blobs)}I", *[len(b) for b in blobs])
        return head + sizes + b"".join(blobs)

    @classmethod
    def restore(cls, blob: bytes, oracle: PartitionOracle) -> "BTreeSketch":
        fmt = "<4sBIIdd Q"
        magic, version, b, levels, eps, delta, seed = struct.unpack_from(fmt, blob)
        if magic != cls.MAGIC or version != 1:
            raise ValueError("bad tree blob")
        off = struct.calcsize(fmt)
        sizes = struct.unpack_from(f"<{levels}I", blob, off)
        off += struct.calcsize(f"<{levels}I")
        tables = []
        for sz in sizes:
            tables.append(CounterTable.from_bytes(blob[off:off + sz]))
            off += sz
        mode = "l2" if tables[0].signed else "l1"
        tree = cls(oracle, eps, delta, seed, mode=mode, branching=b,
                   rows=tables[0].rows, width=tables[0].width)
        tree.tables = tables
        return tree
