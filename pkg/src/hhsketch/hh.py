"""End-to-end turnstile heavy hitter pipelines.

Three algorithms share the same skeleton: encode each index into m
chunks, maintain one hierarchical partition sketch per chunk position
("layer") over ids of the form

    name | chunk | neighbor names          (bit fields, high to low)

where the name is a short hash of the index and the neighbor names are
the same hash evaluated for the layers adjacent in a fixed stitching
graph. At query time each layer reports candidate ids, ids become
named vertices, and edges are added between adjacent layers only when
both endpoints name each other ("mutual suggestion"). Heavy indices
then appear as well-connected subgraphs that survive noise:

* `ExpanderSketch` (general turnstile): candidates come from top-k
  walks, the stitching graph is a near-complete certified spectral
  expander, recovery runs the cluster-preserving partitioner, and
  decoded indices are confirmed against an index-level verifier
  sketch. Updates are first split into substreams by a high
  -independence hash so each subproblem holds few heavy hitters.

* `StrictL1Sketch` (strict turnstile): thresholded no-false-negative
  walks make wrong edges impossible for non-failed layers, so plain
  connected components replace clustering; layers that abort or show
  duplicate names are discarded entirely (erasures).

* `ExpectedTimeL1` (strict turnstile): a binary tree of cheap
  count-min levels walked against the exact l1 mass, with a final
  high-confidence count-min filter.

Substream structures are independent: updates to distinct substreams
may proceed concurrently after the shared split-hash evaluation, and
per-substream query pipelines are read-only over disjoint state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.csgraph as csgraph

from . import bitpack
from .btree import BTreeSketch
from .cluster import WorkGraph, main_partition
from .coding import ChunkCode, DecodeFailure, ExpanderGraph, build_expander
from .hashing import KWiseHash, new_kwise, splitmix64
from .sketches import (CounterTable, ExactL1Tracker, PartitionOracle,
                       countmin_table, countsketch_table)


def lp_to_l2(p: float, eps: float) -> float:
    """Error parameter for the equivalent l2 problem: eps ** (p/2)."""
    if not 0 < p <= 2:
        raise ValueError("p must lie in (0, 2]")
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    return eps ** (p / 2.0)


def reduce_split(h: KWiseHash, i: int) -> int:
    """Substream id for index i; queries union the per-substream lists."""
    return h.value(i)


@dataclass
class PipelineConfig:
    """Desk-scale constants; defaults tuned by the acceptance suite."""

    reduce_c: float = 1.0        # substream heaviness: eps' = 1/sqrt(c * log2 n)
    c_m: float = 2.0             # layers m = max(6, ceil(c_m log2 n / log2 log2 n))
    c_s: float = 4.0             # name bits s = ceil(log2(c_s * log2(n)^2))
    expander_eps: float = 0.3    # spectral target lambda <= eps * d
    struct_delta_exp: float = 3.0  # per-structure failure (log2 n)^-exp
    point_error_c: float = 0.25  # point-query structures use error c * eps
    c_sel: float = 2.0           # tree keep count = ceil(c_sel / eps^2)
    c_width: float = 8.0         # count-sketch width = ceil(c_width / eps^2)
    gamma: float = 0.25          # tree branching exponent
    verify_scale: float = 0.75   # accept at (3/4) * eps * estimated tail
    report_cap_c: float = 4.0    # report size cap = ceil(c / eps^p)
    kwise_c: float = 2.0         # split hash independence = c * ceil(log2 n)
    max_limbs: int = 3           # id budget: 61 * max_limbs bits


@dataclass
class HeavyHittersReport:
    indices: list[int]
    weights: dict[int, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


class ConcatOracle(PartitionOracle):
    """Layer-j partition ids: name | code chunk | neighbor names."""

    def __init__(self, layer: int, name_hashes: list[KWiseHash],
                 chunk_table: np.ndarray, graph: ExpanderGraph,
                 name_bits: int, chunk_bits: int, universe: int):
        self.layer = layer
        self.name_hashes = name_hashes
        self.chunk_table = chunk_table
        self.graph = graph
        self.nbrs = graph.neighbors(layer)
        self.s = name_bits
        self.t = chunk_bits
        self.d = len(self.nbrs)
        self.universe = universe
        self.id_bits = self.s + self.t + self.d * self.s

    def field_offsets(self) -> dict:
        d, s, t = self.d, self.s, self.t
        offs = {"name": (t + d * s, s), "chunk": (d * s, t)}
        for r, j2 in enumerate(self.nbrs):
            offs[("nbr", j2)] = ((d - 1 - r) * s, s)
        return offs

    def map_scalar(self, i: int) -> int:
        return bitpack.to_ints(self.map_limbs(np.asarray([i], dtype=np.int64)))[0]

    def map_limbs(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        arr = np.zeros((self.n_limbs, len(indices)), dtype=np.uint64)
        d, s, t = self.d, self.s, self.t
        names = self.name_hashes[self.layer].values(indices.astype(np.uint64))
        bitpack.inject(arr, names.astype(np.uint64), t + d * s, s)
        chunks = self.chunk_table[indices, self.layer]
        bitpack.inject(arr, chunks.astype(np.uint64), d * s, t)
        for r, j2 in enumerate(self.nbrs):
            nb_names = self.name_hashes[j2].values(indices.astype(np.uint64))
            bitpack.inject(arr, nb_names.astype(np.uint64), (d - 1 - r) * s, s)
        return arr

    def parse(self, raw_id: int) -> tuple[int, int, dict[int, int]]:
        """(name, chunk, {adjacent layer -> suggested name})."""
        d, s, t = self.d, self.s, self.t
        name = (raw_id >> (t + d * s)) & ((1 << s) - 1)
        chunk = (raw_id >> (d * s)) & ((1 << t) - 1)
        nbr = {}
        for r, j2 in enumerate(self.nbrs):
            nbr[j2] = (raw_id >> ((d - 1 - r) * s)) & ((1 << s) - 1)
        return int(name), int(chunk), nbr


@dataclass
class ChunkVertex:
    layer: int
    name: int
    chunk: int
    nbr_names: dict[int, int]
    weight: float
    raw_id: int


@dataclass
class ChunkGraph:
    """Layered mutual-suggestion graph over named b-tree outputs."""

    layers: list[dict[int, ChunkVertex]]      # per layer: name -> vertex
    edges: list[tuple[tuple[int, int], tuple[int, int]]]
    vertex_ids: list[tuple[int, int]]         # (layer, name), graph order

    def vertex_index(self) -> dict[tuple[int, int], int]:
        return {key: pos for pos, key in enumerate(self.vertex_ids)}


def build_chunk_graph(layer_vertices: list[dict[int, ChunkVertex]],
                      graph: ExpanderGraph) -> ChunkGraph:
    """Mutual-suggestion edges between adjacent layers; keeps only
    non-isolated vertices. The edge set is checked to be symmetric."""
    m = graph.vertex_count
    edge_set: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    for j in range(m):
        for name, v in layer_vertices[j].items():
            for j2, suggested in v.nbr_names.items():
                u = layer_vertices[j2].get(suggested)
                if u is not None and u.nbr_names.get(j) == name:
                    key = ((j, name), (j2, suggested))
                    edge_set.add((min(key), max(key)))
    # mutual suggestion is symmetric by construction; verify anyway
    for (a, b) in edge_set:
        va = layer_vertices[a[0]][a[1]]
        vb = layer_vertices[b[0]][b[1]]
        assert va.nbr_names.get(b[0]) == b[1] and vb.nbr_names.get(a[0]) == a[1]
    touched = sorted({a for a, _ in edge_set} | {b for _, b in edge_set})
    return ChunkGraph(layer_vertices, sorted(edge_set), touched)


def _layer_schedule(n: int, cfg: PipelineConfig, min_layers: int,
                    degree: int | None) -> tuple[int, int, int, int]:
    """(m, t, s, d) for universe size n under the id bit budget."""
    lgn = max(2.0, math.log2(max(n, 4)))
    lglg = max(1.0, math.log2(lgn))
    m = max(min_layers, int(math.ceil(cfg.c_m * lgn / lglg)))
    index_bits = max(1, (n - 1).bit_length())
    d = degree if degree is not None else m - 1
    if d >= m:
        m = d + 1
    t = max(int(math.ceil(index_bits / (m // 2))),
            int(math.ceil(math.log2(m + 1))))
    s_target = int(math.ceil(math.log2(cfg.c_s * lgn * lgn)))
    s_fit = (cfg.max_limbs * bitpack.LIMB_BITS - t) // (d + 1)
    s = min(s_target, s_fit)
    if s < 3:
        raise ValueError("id bit budget too small for this configuration")
    return m, t, s, d


class ExpanderSketch:
    """General-turnstile heavy hitters with whp correctness.

    Parameters follow the desk-scale schedule in PipelineConfig; all
    randomness is derived from `seed`.
    """

    def __init__(self, n: int, eps: float, p: float = 2.0,
                 config: PipelineConfig | None = None, seed: int = 0):
        cfg = config or PipelineConfig()
        self.cfg = cfg
        self.n = n
        self.p = p
        self.eps = eps
        self.eps2 = lp_to_l2(p, eps)
        lgn = max(2.0, math.log2(max(n, 4)))
        self.q = max(1, int(math.ceil(1.0 / (self.eps2 ** 2 * lgn))))
        self.eps_sub = min(0.49, max(self.eps2, 1.0 / math.sqrt(cfg.reduce_c * lgn)))
        self.seed = seed & 0xFFFFFFFFFFFFFFFF

        self.m, self.t, self.s, self.d = _layer_schedule(n, cfg, 6, None)
        state, s_exp = splitmix64(self.seed)
        self.expander = build_expander(
            self.m, self.d, cfg.expander_eps * self.d, s_exp)
        self.code = ChunkCode(self.m, self.t)
        self.chunk_table = self.code.encode_all(n)
        index_bits = max(1, (n - 1).bit_length())

        state, s_split = splitmix64(state)
        kw = max(2, int(cfg.kwise_c * math.ceil(lgn)))
        self.split_hash = new_kwise(kw, index_bits, self.q, s_split)

        self.delta_struct = lgn ** (-cfg.struct_delta_exp)
        keep = max(4, int(math.ceil(cfg.c_sel / self.eps_sub ** 2)))
        tree_width = int(math.ceil(cfg.c_width / self.eps_sub ** 2))
        point_eps = cfg.point_error_c * self.eps_sub
        point_width = int(math.ceil(cfg.c_width / point_eps ** 2))
        point_rows = max(2, int(math.ceil(
            math.log2(max(keep * self.m, 2) / self.delta_struct))))

        self.name_hashes: list[list[KWiseHash]] = []
        self.trees: list[list[BTreeSketch]] = []
        self.points: list[list[CounterTable]] = []
        self.oracles: list[list[ConcatOracle]] = []
        for k in range(self.q):
            state, s_names = splitmix64(state)
            nh_state = s_names
            names = []
            for j in range(self.m):
                nh_state, s_nh = splitmix64(nh_state)
                names.append(new_kwise(2, index_bits, 1 << self.s, s_nh))
            self.name_hashes.append(names)
            trees_k, points_k, oracles_k = [], [], []
            for j in range(self.m):
                oracle = ConcatOracle(j, names, self.chunk_table,
                                      self.expander, self.s, self.t, n)
                state, s_tree = splitmix64(state)
                trees_k.append(BTreeSketch(
                    oracle, self.eps_sub, self.delta_struct, s_tree,
                    mode="l2", gamma=cfg.gamma, width=tree_width, keep=keep,
                    index_bits=index_bits))
                state, s_pt = splitmix64(state)
                points_k.append(CounterTable(
                    point_rows, point_width, oracle.id_bits, s_pt,
                    signed=True, index_bits=index_bits))
                oracles_k.append(oracle)
            self.trees.append(trees_k)
            self.points.append(points_k)
            self.oracles.append(oracles_k)

        state, s_ver = splitmix64(state)
        ver_width = int(math.ceil(cfg.c_width / self.eps2 ** 2))
        ver_rows = max(4, 2 * int(math.ceil(lgn)))
        self.verifier = countsketch_table(ver_rows, ver_width, index_bits,
                                          index_bits, s_ver)
        self.report_cap = int(math.ceil(cfg.report_cap_c / self.eps ** p))
        self.diag_last: dict = {}

    # -- updates -----------------------------------------------------------

    def update(self, i: int, delta: int) -> None:
        self.apply_many(np.asarray([i], dtype=np.int64),
                        np.asarray([delta], dtype=np.int64))

    def apply_many(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        self.verifier.apply_many(
            bitpack.from_uint64(indices.astype(np.uint64), 1), deltas,
            indices.astype(np.uint64))
        subs = self.split_hash.values(indices.astype(np.uint64))
        for k in np.unique(subs):
            mask = subs == k
            idx_k = indices[mask]
            del_k = deltas[mask]
            for j in range(self.m):
                ids = self.oracles[k][j].map_limbs(idx_k)
                self.trees[k][j]._apply_leaf(ids, del_k, idx_k.astype(np.uint64))
                self.points[k][j].apply_many(ids, del_k, idx_k.astype(np.uint64))

    # -- query -------------------------------------------------------------

    def _estimate_tail(self, candidate_weights: list[float]) -> float:
        total_sq = float(np.median(self.verifier.row_l2_squared()))
        top = sorted(candidate_weights, reverse=True)
        top = top[: int(math.floor(1.0 / self.eps2 ** 2))]
        rem = total_sq - sum(w * w for w in top)
        return math.sqrt(max(rem, 0.0))

    def query(self) -> HeavyHittersReport:
        found: dict[int, float] = {}
        diags = {"clusters": 0, "decode_failures": 0, "rejected": 0,
                 "layer_lists": 0}
        for k in range(self.q):
            for idx, weight in self._query_substream(k, diags):
                if idx not in found or weight > found[idx]:
                    found[idx] = weight
        tail = self._estimate_tail(list(found.values()))
        threshold = self.cfg.verify_scale * self.eps2 * tail
        accepted = {i: w for i, w in found.items() if w >= threshold}
        diags["rejected"] += len(found) - len(accepted)
        ordered = sorted(accepted)
        if len(ordered) > self.report_cap:
            by_weight = sorted(accepted, key=lambda i: (-accepted[i], i))
            ordered = sorted(by_weight[: self.report_cap])
        report = HeavyHittersReport(ordered, {i: accepted[i] for i in ordered},
                                    diags)
        assert len(report.indices) <= self.report_cap
        self.diag_last = diags
        return report

    def _query_substream(self, k: int, diags: dict) -> list[tuple[int, float]]:
        layer_vertices: list[dict[int, ChunkVertex]] = []
        for j in range(self.m):
            ids, _ = self.trees[k][j].query_topk()
            diags["layer_lists"] += len(ids)
            oracle = self.oracles[k][j]
            best: dict[int, ChunkVertex] = {}
            if ids:
                limbs = bitpack.from_ints(ids, oracle.n_limbs)
                weights = self.points[k][j].query_median_abs_many(limbs)
                for raw, w in zip(ids, weights):
                    name, chunk, nbrs = oracle.parse(raw)
                    prev = best.get(name)
                    # keep the heaviest id per name; ties to the larger id
                    if prev is None or (w, raw) > (prev.weight, prev.raw_id):
                        best[name] = ChunkVertex(j, name, chunk, nbrs,
                                                 float(w), raw)
            layer_vertices.append(best)
        graph = build_chunk_graph(layer_vertices, self.expander)
        if not graph.vertex_ids:
            return []
        pos = graph.vertex_index()
        wg = WorkGraph(len(pos), [(pos[a], pos[b]) for a, b in graph.edges])
        parts = main_partition(wg)
        out: list[tuple[int, float]] = []
        half = self.d / 2.0
        for part in parts.sets:
            if len(part) < self.m / 2.0:
                continue
            diags["clusters"] += 1
            members = [graph.vertex_ids[v] for v in part]
            member_set = set(part)
            by_layer: dict[int, list[tuple[int, int]]] = {}
            for v in part:
                j, name = graph.vertex_ids[v]
                deg = sum(1 for u in wg.neighbors(v) if u in member_set)
                if deg <= half:
                    continue
                by_layer.setdefault(j, []).append((int(v), name))
            chunks: list[int | None] = [None] * self.m
            for j, lst in by_layer.items():
                if len(lst) != 1:
                    continue  # duplicated layer inside a cluster: erase it
                _, name = lst[0]
                chunks[j] = graph.layers[j][name].chunk
            try:
                idx = self.code.decode(chunks)
            except DecodeFailure:
                diags["decode_failures"] += 1
                continue
            if not (0 <= idx < self.n) or not self.code.verify(idx, chunks):
                diags["decode_failures"] += 1
                continue
            w = float(self.verifier.query_median_abs(idx))
            out.append((idx, w))
        return out

    def space_words(self) -> int:
        words = self.verifier.space_words()
        words += self.split_hash.space_words()
        words += self.expander.space_words()
        for k in range(self.q):
            words += sum(h.space_words() for h in self.name_hashes[k])
            words += sum(t.space_words() for t in self.trees[k])
            words += sum(p.space_words() for p in self.points[k])
        return words


class StrictL1Sketch:
    """Strict-turnstile l1 heavy hitters via no-false-negative layers
    and connected-component stitching."""

    def __init__(self, n: int, eps: float, config: PipelineConfig | None = None,
                 seed: int = 0):
        cfg = config or PipelineConfig()
        self.cfg = cfg
        self.n = n
        self.eps = eps
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        lgn = max(2.0, math.log2(max(n, 4)))
        self.m, self.t, self.s, self.d = _layer_schedule(n, cfg, 13, 12)
        state, s_exp = splitmix64(self.seed)
        self.expander = build_expander(self.m, 12, 0.6 * 12, s_exp,
                                       flavor="edge12")
        self.code = ChunkCode(self.m, self.t)
        self.chunk_table = self.code.encode_all(n)
        index_bits = max(1, (n - 1).bit_length())

        self.delta_struct = lgn ** (-cfg.struct_delta_exp)
        state, s_names = splitmix64(state)
        nh_state = s_names
        self.name_hashes = []
        for j in range(self.m):
            nh_state, s_nh = splitmix64(nh_state)
            self.name_hashes.append(new_kwise(2, index_bits, 1 << self.s, s_nh))
        self.trees: list[BTreeSketch] = []
        self.oracles: list[ConcatOracle] = []
        for j in range(self.m):
            oracle = ConcatOracle(j, self.name_hashes, self.chunk_table,
                                  self.expander, self.s, self.t, n)
            state, s_tree = splitmix64(state)
            self.trees.append(BTreeSketch(
                oracle, eps, self.delta_struct, s_tree, mode="l1",
                gamma=cfg.gamma, index_bits=index_bits))
            self.oracles.append(oracle)
        state, s_ver = splitmix64(state)
        self.verifier = countmin_table(
            max(8, 2 * int(math.ceil(lgn))), int(math.ceil(4.0 / eps)),
            index_bits, s_ver)
        self.tracker = ExactL1Tracker()
        self.diag_last: dict = {}

    def update(self, i: int, delta: int) -> None:
        self.apply_many(np.asarray([i], dtype=np.int64),
                        np.asarray([delta], dtype=np.int64))

    def apply_many(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        self.tracker.add_many(deltas)
        self.verifier.apply_many(
            bitpack.from_uint64(indices.astype(np.uint64), 1), deltas)
        for j in range(self.m):
            ids = self.oracles[j].map_limbs(indices)
            self.trees[j]._apply_leaf(ids, deltas, None)

    def query(self, phi: float | None = None) -> HeavyHittersReport:
        l1 = self.tracker.read()
        if phi is None:
            phi = self.eps * l1
        diags = {"failed_layers": 0, "components": 0, "decode_failures": 0,
                 "rejected": 0}
        layer_vertices: list[dict[int, ChunkVertex]] = []
        for j in range(self.m):
            ids, aborted = self.trees[j].threshold_query(phi)
            vertices: dict[int, ChunkVertex] = {}
            failed = aborted
            if not failed:
                seen = set()
                for raw in ids:
                    name, chunk, nbrs = self.oracles[j].parse(raw)
                    if name in seen:
                        failed = True  # duplicate names: drop the layer
                        break
                    seen.add(name)
                    vertices[name] = ChunkVertex(j, name, chunk, nbrs, 0.0, raw)
            if failed:
                diags["failed_layers"] += 1
                vertices = {}
            layer_vertices.append(vertices)
        graph = build_chunk_graph(layer_vertices, self.expander)
        found: dict[int, float] = {}
        if graph.vertex_ids:
            pos = graph.vertex_index()
            wg = WorkGraph(len(pos), [(pos[a], pos[b]) for a, b in graph.edges])
            ncomp, labels = csgraph.connected_components(wg.adj, directed=False)
            need = 0.9 * self.m
            for c in range(ncomp):
                members = np.flatnonzero(labels == c)
                if len(members) < need:
                    continue
                diags["components"] += 1
                chunks: list[int | None] = [None] * self.m
                dup = set()
                for v in members:
                    j, name = graph.vertex_ids[v]
                    if chunks[j] is not None:
                        dup.add(j)
                    chunks[j] = graph.layers[j][name].chunk
                for j in dup:
                    chunks[j] = None
                try:
                    idx = self.code.decode(chunks)
                except DecodeFailure:
                    diags["decode_failures"] += 1
                    continue
                if not (0 <= idx < self.n) or not self.code.verify(idx, chunks):
                    diags["decode_failures"] += 1
                    continue
                est = self.verifier.query_min(idx)
                if est >= phi:
                    found[idx] = float(est)
                else:
                    diags["rejected"] += 1
        self.diag_last = diags
        ordered = sorted(found)
        return HeavyHittersReport(ordered, {i: found[i] for i in ordered}, diags)

    def space_words(self) -> int:
        words = self.verifier.space_words() + 1  # tracker
        words += self.expander.space_words()
        words += sum(h.space_words() for h in self.name_hashes)
        words += sum(t.space_words() for t in self.trees)
        return words


class ExpectedTimeL1:
    """Strict-turnstile l1 heavy hitters, binary tree with cheap levels.

    Per-level structures fail with probability 1/4 independently, so a
    query visits O(log(n)/eps) nodes in expectation; the final filter
    is a high-confidence count-min sketch.
    """

    def __init__(self, n: int, eps: float, seed: int = 0):
        from .sketches import IdentityOracle
        self.n = n
        self.eps = eps
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        index_bits = max(1, (n - 1).bit_length())
        state, s_tree = splitmix64(self.seed)
        self.tree = BTreeSketch(
            IdentityOracle(n), eps, 0.25, s_tree, mode="l1", branching=2,
            rows=2, width=int(math.ceil(4.0 / eps)), index_bits=index_bits)
        state, s_ver = splitmix64(state)
        self.verifier = countmin_table(
            max(8, 2 * index_bits), int(math.ceil(4.0 / eps)), index_bits, s_ver)
        self.tracker = ExactL1Tracker()
        self.last_visited = 0

    def update(self, i: int, delta: int) -> None:
        self.apply_many(np.asarray([i], dtype=np.int64),
                        np.asarray([delta], dtype=np.int64))

    def apply_many(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        self.tracker.add_many(deltas)
        self.verifier.apply_many(
            bitpack.from_uint64(indices.astype(np.uint64), 1), deltas)
        self.tree.apply_many(indices, deltas)

    def query(self) -> HeavyHittersReport:
        phi = self.eps * self.tracker.read()
        ids, visited = self.tree.expected_time_query(phi, self.verifier)
        self.last_visited = visited
        ordered = sorted(ids)
        return HeavyHittersReport(
            ordered, {i: float(self.verifier.query_min(i)) for i in ordered},
            {"visited": visited})

    def space_words(self) -> int:
        return self.tree.space_words() + self.verifier.space_words() + 1
