"""Chunked error-correcting codes and small certified expander graphs.

Indices are encoded with a systematic Reed-Solomon code over GF(2^t)
and split into m chunks of t bits; the query pipeline recovers most
chunks and decodes with the missing ones treated as erasures. The
classic Berlekamp-Massey / Chien / Forney machinery handles e errors
plus f erasures; success is guaranteed whenever 2e + f < m/2, and
beyond that radius the decoder either fails or returns a candidate
which callers re-verify by re-encoding.

The layer-stitching graphs are random d-regular graphs whose second
adjacency eigenvalue is certified by a dense eigensolve at
construction: at the sizes used here (a few hundred vertices at most)
the certification is exact to machine precision, and random regular
graphs beat explicit constructions' constants.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import networkx as nx
import numpy as np

# Primitive polynomials for GF(2^t) (high bit included).
_PRIMITIVE_POLY = {
    2: 0x7, 3: 0xB, 4: 0x13, 5: 0x25, 6: 0x43, 7: 0x83, 8: 0x11D,
    9: 0x211, 10: 0x409, 11: 0x805, 12: 0x1053, 13: 0x201B,
    14: 0x4443, 15: 0x8003, 16: 0x1100B,
}


class DecodeFailure(Exception):
    """Raised when a corrupted codeword is beyond recovery."""


@functools.lru_cache(maxsize=None)
def _gf_tables(t: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Build log/antilog tables; the antilog table is doubled so a
    single addition of logs never needs a modulo."""
    if t not in _PRIMITIVE_POLY:
        raise ValueError(f"no primitive polynomial on file for t={t}")
    size = 1 << t
    prim = _PRIMITIVE_POLY[t]
    exp = [0] * (2 * size)
    log = [0] * size
    x = 1
    for i in range(size - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & size:
            x ^= prim
    if x != 1:
        raise ValueError(f"polynomial {prim:#x} is not primitive for t={t}")
    for i in range(size - 1, 2 * size):
        exp[i] = exp[i - (size - 1)]
    return tuple(exp), tuple(log)


class GF:
    """Arithmetic in GF(2^t) via log/antilog lookup (t <= 16)."""

    def __init__(self, t: int):
        self.t = t
        self.size = 1 << t
        self.exp, self.log = _gf_tables(t)

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def div(self, a: int, b: int) -> int:
        if b == 0:
            raise ZeroDivisionError
        if a == 0:
            return 0
        return self.exp[(self.log[a] - self.log[b]) % (self.size - 1)]

    def inv(self, a: int) -> int:
        return self.div(1, a)

    def pow_alpha(self, n: int) -> int:
        """alpha**n for the field generator alpha."""
        return self.exp[n % (self.size - 1)]

    # Polynomials are coefficient lists, highest degree first.

    def poly_mul(self, p: list[int], q: list[int]) -> list[int]:
        out = [0] * (len(p) + len(q) - 1)
        for i, a in enumerate(p):
            if a:
                for j, b in enumerate(q):
                    out[i + j] ^= self.mul(a, b)
        return out

    def poly_eval(self, p: list[int], x: int) -> int:
        y = 0
        for c in p:
            y = self.mul(y, x) ^ c
        return y

    def poly_divmod(self, num: list[int], den: list[int]) -> tuple[list[int], list[int]]:
        if len(num) < len(den):
            return [], list(num)
        out = list(num)
        for i in range(len(num) - len(den) + 1):
            coef = out[i]
            if coef:
                for j in range(1, len(den)):
                    if den[j]:
                        out[i + j] ^= self.mul(den[j], coef)
        sep = len(num) - len(den) + 1
        return out[:sep], out[sep:]


@dataclass
class Codeword:
    """m chunks of t bits each; source_index kept on freshly encoded words."""

    chunks: list[int]
    m: int
    t: int
    source_index: int | None = None

    def __post_init__(self):
        if len(self.chunks) != self.m:
            raise ValueError("chunk count mismatch")
        if any(c >> self.t for c in self.chunks):
            raise ValueError("chunk exceeds t bits")


class ChunkCode:
    """Systematic Reed-Solomon [m, m//2] code, chunk-level API.

    The first m//2 chunks are the packed index bits verbatim, so a
    partial read of an uncorrupted prefix already reveals the index.
    """

    def __init__(self, m: int, t: int):
        if m < 2:
            raise ValueError("need at least two chunks")
        if m >= (1 << t):
            raise ValueError("field too small for the chunk count")
        self.m = m
        self.t = t
        self.k = m // 2
        self.nsym = m - self.k
        self.gf = GF(t)
        # generator polynomial: prod over i of (x - alpha^i)
        g = [1]
        for i in range(self.nsym):
            g = self.gf.poly_mul(g, [1, self.gf.pow_alpha(i)])
        self.generator = g
        self.index_bits_capacity = self.k * t

    def pack(self, index: int) -> list[int]:
        mask = (1 << self.t) - 1
        return [(index >> (l * self.t)) & mask for l in range(self.k)]

    def unpack(self, symbols: list[int]) -> int:
        v = 0
        for l, s in enumerate(symbols):
            v |= int(s) << (l * self.t)
        return v

    def encode(self, index: int) -> Codeword:
        if index < 0 or index.bit_length() > self.index_bits_capacity:
            raise ValueError("index does not fit the message capacity")
        msg = self.pack(index)
        _, parity = self.gf.poly_divmod(msg + [0] * self.nsym, self.generator)
        return Codeword(msg + parity, self.m, self.t, source_index=index)

    def encode_all(self, universe: int) -> np.ndarray:
        """Chunk table for every index in [0, universe), shape (universe, m).

        The code is linear over GF(2), so the table is the XOR
        combination of the encodings of the bit-basis indices.
        """
        bits = max(1, (universe - 1).bit_length())
        basis = np.zeros((bits, self.m), dtype=np.int64)
        for b in range(bits):
            basis[b] = self.encode(1 << b).chunks
        idx = np.arange(universe, dtype=np.int64)
        out = np.zeros((universe, self.m), dtype=np.int64)
        for b in range(bits):
            mask = ((idx >> b) & 1).astype(bool)
            out[mask] ^= basis[b]
        return out

    # -- decoding ----------------------------------------------------------

    def _syndromes(self, cw: list[int]) -> list[int]:
        return [self.gf.poly_eval(cw, self.gf.pow_alpha(i)) for i in range(self.nsym)]

    def decode(self, chunks: list[int | None]) -> int:
        """Recover the index; None entries are erasures.

        Guaranteed for 2e + f < m/2. May also succeed up to the full
        2e + f <= m - m//2 capacity; callers re-verify with `verify`.
        """
        if len(chunks) != self.m:
            raise DecodeFailure("wrong chunk count")
        gf = self.gf
        erase_pos = [p for p, c in enumerate(chunks) if c is None]
        f = len(erase_pos)
        if f > self.nsym:
            raise DecodeFailure("too many erasures")
        cw = [0 if c is None else int(c) for c in chunks]
        synd = self._syndromes(cw)
        if max(synd) == 0:
            return self.unpack(cw[:self.k])

        # Forney syndromes strip erasure contributions; each erasure
        # shortens the usable syndrome prefix by one.
        fsynd = list(synd)
        for p in erase_pos:
            x = gf.pow_alpha(self.m - 1 - p)
            fsynd = [gf.mul(fsynd[j], x) ^ fsynd[j + 1] for j in range(len(fsynd) - 1)]

        # Berlekamp-Massey for the error locator (highest degree first).
        err_loc = [1]
        old_loc = [1]
        for i in range(len(fsynd)):
            delta = fsynd[i]
            for j in range(1, len(err_loc)):
                delta ^= gf.mul(err_loc[-(j + 1)], fsynd[i - j])
            old_loc = old_loc + [0]
            if delta:
                if len(old_loc) > len(err_loc):
                    new_loc = [gf.mul(delta, c) for c in old_loc]
                    old_loc = [gf.div(c, delta) for c in err_loc]
                    err_loc = new_loc
                pad = len(err_loc) - len(old_loc)
                scaled = [gf.mul(delta, c) for c in old_loc]
                if pad >= 0:
                    scaled = [0] * pad + scaled
                else:
                    err_loc = [0] * (-pad) + err_loc
                err_loc = [a ^ b for a, b in zip(err_loc, scaled)]
        while err_loc and err_loc[0] == 0:
            err_loc = err_loc[1:]
        if not err_loc:
            raise DecodeFailure("vanishing error locator")
        e = len(err_loc) - 1
        if 2 * e + f > self.nsym:
            raise DecodeFailure("errata beyond code capacity")

        # Chien search over chunk positions.
        err_pos = []
        if e:
            asc = list(reversed(err_loc))
            for i in range(self.m):
                if gf.poly_eval(asc, gf.pow_alpha(i)) == 0:
                    err_pos.append(self.m - 1 - i)
            if len(err_pos) != e:
                raise DecodeFailure("error locator roots do not match its degree")

        # Errata magnitudes: the syndromes are S_j = sum_i Y_i X_i^j with
        # X_i = alpha^(m-1-pos_i). The positions are known, so the
        # magnitudes come from a tiny Vandermonde solve over the field
        # (never singular for distinct positions).
        all_pos = sorted(set(err_pos) | set(erase_pos))
        locators = [gf.pow_alpha(self.m - 1 - p) for p in all_pos]
        r = len(all_pos)
        if r > len(synd):
            raise DecodeFailure("errata count exceeds available syndromes")
        a = [[gf.pow_alpha((gf.log[x] * j)) for x in locators] for j in range(r)]
        b = list(synd[:r])
        for col in range(r):
            piv = next((row for row in range(col, r) if a[row][col]), None)
            if piv is None:
                raise DecodeFailure("singular errata system")
            a[col], a[piv] = a[piv], a[col]
            b[col], b[piv] = b[piv], b[col]
            inv = gf.inv(a[col][col])
            a[col] = [gf.mul(v, inv) for v in a[col]]
            b[col] = gf.mul(b[col], inv)
            for row in range(r):
                if row != col and a[row][col]:
                    factor = a[row][col]
                    a[row] = [v ^ gf.mul(factor, w) for v, w in zip(a[row], a[col])]
                    b[row] ^= gf.mul(factor, b[col])
        for p, y in zip(all_pos, b):
            cw[p] ^= y

        if max(self._syndromes(cw)) != 0:
            raise DecodeFailure("correction did not cancel the syndromes")
        return self.unpack(cw[:self.k])

    def agreement(self, index: int, chunks: list[int | None]) -> int:
        """Number of present chunks matching a fresh encoding of index."""
        ref = self.encode(index).chunks
        return sum(1 for a, b in zip(ref, chunks) if b is not None and a == b)

    def verify(self, index: int, chunks: list[int | None]) -> bool:
        return self.agreement(index, chunks) >= self.m - self.m // 4


def encode(index: int, m: int, t: int) -> Codeword:
    return ChunkCode(m, t).encode(index)


def decode(chunks: list[int | None], t: int) -> int:
    return ChunkCode(len(chunks), t).decode(chunks)


# ---------------------------------------------------------------------------
# Expander graphs
# ---------------------------------------------------------------------------


@dataclass
class ExpanderGraph:
    vertex_count: int
    degree: int
    adjacency: list[list[int]]
    lam: float
    flavor: str = "spectral"
    target_met: bool = True
    edge_expansion: float | None = None
    seed: int = 0

    def neighbors(self, v: int) -> list[int]:
        return self.adjacency[v]

    def space_words(self) -> int:
        return self.vertex_count * self.degree

    def to_text(self) -> str:
        lines = [f"{self.vertex_count} {self.degree} {self.lam:.9f}"]
        for row in self.adjacency:
            lines.append(" ".join(str(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExpanderGraph":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        m_s, d_s, lam_s = lines[0].split()
        adj = [[int(x) for x in ln.split()] for ln in lines[1:]]
        return cls(int(m_s), int(d_s), adj, float(lam_s))


def adjacency_matrix(g: ExpanderGraph) -> np.ndarray:
    a = np.zeros((g.vertex_count, g.vertex_count), dtype=np.float64)
    for u, row in enumerate(g.adjacency):
        for v in row:
            a[u, v] += 1.0
    return a


def second_eigenvalue(g: ExpanderGraph) -> float:
    """max(|lambda_2|, |lambda_min|) of the unnormalized adjacency matrix."""
    eigs = np.linalg.eigvalsh(adjacency_matrix(g))
    return float(max(abs(eigs[0]), abs(eigs[-2])))


def measure_edge_expansion(g: ExpanderGraph, exact_limit: int = 20,
                           samples: int = 2000, seed: int = 0) -> float:
    """min over subsets |S| <= n/2 of |boundary(S)| / (d |S|).

    Exact by enumeration up to `exact_limit` vertices, sampled beyond.
    """
    n = g.vertex_count
    a = adjacency_matrix(g)
    best = float("inf")

    def ratio(vec: np.ndarray) -> float:
        size = int(vec.sum())
        if size == 0 or size > n // 2:
            return float("inf")
        cut = float(vec @ a @ (1.0 - vec))
        return cut / (g.degree * size)

    if n <= exact_limit:
        for bits in range(1, 1 << (n - 1)):
            vec = np.array([(bits >> i) & 1 for i in range(n)], dtype=np.float64)
            best = min(best, ratio(vec))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            size = int(rng.integers(1, n // 2 + 1))
            vec = np.zeros(n)
            vec[rng.choice(n, size=size, replace=False)] = 1.0
            best = min(best, ratio(vec))
    return best


def build_expander(m: int, d: int, lambda_target: float, seed: int,
                   flavor: str = "spectral", retries: int = 64) -> ExpanderGraph:
    """Random d-regular graph with a certified second eigenvalue.

    Retries with fresh seeds until the certified value meets the
    target; on budget exhaustion returns the best graph found with
    target_met=False so the caller can decide what to do.
    """
    if d >= m:
        raise ValueError("degree must be below the vertex count")
    if (m * d) % 2:
        raise ValueError("m * d must be even")
    best: ExpanderGraph | None = None
    for attempt in range(retries):
        gnx = nx.random_regular_graph(d, m, seed=(seed + attempt) & 0x7FFFFFFF)
        adj = [sorted(gnx.neighbors(v)) for v in range(m)]
        cand = ExpanderGraph(m, d, adj, 0.0, flavor=flavor, seed=seed + attempt)
        cand.lam = second_eigenvalue(cand)
        if best is None or cand.lam < best.lam:
            best = cand
        if cand.lam <= lambda_target + 1e-9:
            cand.target_met = True
            if flavor == "edge12":
                cand.edge_expansion = measure_edge_expansion(cand)
            return cand
    assert best is not None
    best.target_met = False
    if flavor == "edge12":
        best.edge_expansion = measure_edge_expansion(best)
    return best
