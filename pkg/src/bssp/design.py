"""Two-level factorial designs and their combinatorial quality measures.

Designs are stored in the +/-1 encoding. Quality measures (distance
distribution, generalized word-length pattern, resolution, strength) are
computed on integer counts so results are exact up to a single final
rounding.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, DesignParseError, ValidationError

ZERO_TOL = 1e-9
MAX_FULL_FACTORIAL = 20
MAX_ORACLE_FACTORS = 14

# Minimum-aberration 2^(10-3) words on base factors 1..7 (1-based).
TEMPLATE_WORDS = ((1, 2, 3, 4), (1, 2, 5, 6), (1, 3, 5, 7))
TEMPLATE_FILE = "template_r5_m128_d10.txt"


@dataclass(frozen=True)
class Design:
    """An m x d two-level design held in +/-1 encoding."""

    matrix: np.ndarray
    q: int = field(default=2, init=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValidationError(f"design must be a non-empty 2-D array, got shape {mat.shape}")
        if not np.all((mat == 1) | (mat == -1)):
            raise ValidationError("design entries must be -1 or +1")
        if mat.shape[1] < 63 and mat.shape[0] > 2 ** mat.shape[1]:
            raise ValidationError(f"m={mat.shape[0]} exceeds 2^d={2 ** mat.shape[1]}")
        mat = mat.astype(np.int8)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_zero_one(cls, x) -> "Design":
        x = np.asarray(x)
        if not np.all((x == 0) | (x == 1)):
            raise ValidationError("0/1 design entries must be 0 or 1")
        return cls(2 * x.astype(np.int8) - 1)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def zero_one(self) -> np.ndarray:
        return ((self.matrix + 1) // 2).astype(np.int8)

    def permute_columns(self, perm: Sequence[int]) -> "Design":
        return Design(self.matrix[:, list(perm)])

    def __eq__(self, other):
        return isinstance(other, Design) and np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash((self.matrix.shape, self.matrix.tobytes()))


@dataclass(frozen=True)
class Gwlp:
    values: tuple
    resolution: int

    def __getitem__(self, j: int) -> float:
        """1-based access: ``g[1]`` is A_1."""
        if not 1 <= j <= len(self.values):
            raise IndexError(j)
        return self.values[j - 1]

    def as_list(self) -> list:
        return list(self.values)


def full_factorial(d: int) -> Design:
    """All 2^d rows in lexicographic order (-1 before +1, first column slowest)."""
    if not isinstance(d, (int, np.integer)) or not 1 <= d <= MAX_FULL_FACTORIAL:
        raise CapacityError(f"full factorial needs 1 <= d <= {MAX_FULL_FACTORIAL}, got {d}")
    codes = np.arange(2 ** d, dtype=np.int64)
    shifts = np.arange(d - 1, -1, -1)
    bits = (codes[:, None] >> shifts) & 1
    return Design(2 * bits - 1)


def regular_ffd(base_factors: int, generator_words: Sequence[Sequence[int]]) -> Design:
    """Regular 2^(k-p) design: the full factorial on ``base_factors`` columns plus
    one column per generator word, each the product of the named base columns
    (1-based indices)."""
    base = full_factorial(base_factors).matrix.astype(np.int64)
    cols = [base]
    for word in generator_words:
        word = list(word)
        if not word:
            raise ValidationError("generator words must be non-empty")
        bad = [i for i in word if not 1 <= i <= base_factors]
        if bad:
            raise ValidationError(f"generator index out of range 1..{base_factors}: {bad}")
        cols.append(np.prod(base[:, [i - 1 for i in word]], axis=1, keepdims=True))
    return Design(np.hstack(cols))


@lru_cache(maxsize=None)
def template_design() -> Design:
    """The bundled 128-run, 10-factor, resolution-5 template."""
    text = resources.files("bssp.data").joinpath(TEMPLATE_FILE).read_text()
    return parse_design(text)


@lru_cache(maxsize=None)
def krawtchouk(j: int, x: int, d: int, q: int = 2) -> int:
    """Krawtchouk polynomial P_j(x; d, q), exact integer arithmetic."""
    if not (0 <= j <= d and 0 <= x <= d):
        raise ValidationError(f"krawtchouk needs 0 <= j, x <= d; got j={j}, x={x}, d={d}")
    return sum(
        (-1) ** w * (q - 1) ** (j - w) * comb(x, w) * comb(d - x, j - w)
        for w in range(j + 1)
    )


@lru_cache(maxsize=None)
def krawtchouk_matrix(d: int) -> np.ndarray:
    """(d+1) x (d+1) object array with entry [j, k] = P_j(k; d, 2)."""
    return np.array([[krawtchouk(j, k, d) for k in range(d + 1)] for j in range(d + 1)], dtype=object)


def _codes(x01: np.ndarray) -> np.ndarray:
    d = x01.shape[1]
    if d > 63:
        raise CapacityError("pattern packing supports at most 63 columns")
    weights = np.left_shift(np.int64(1), np.arange(d - 1, -1, -1, dtype=np.int64))
    return x01.astype(np.int64) @ weights


def _popcount(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.uint64)
    out = np.zeros(a.shape, dtype=np.int64)
    for shift in range(0, 64, 8):
        out += _POP8[((a >> np.uint64(shift)) & np.uint64(0xFF)).astype(np.intp)]
    return out


_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def pairwise_distances(x) -> np.ndarray:
    """m x m Hamming distances between rows of a 0/1 or +/-1 matrix."""
    x = np.asarray(x)
    x01 = (x > 0).astype(np.int8)
    codes = _codes(x01)
    return _popcount(codes[:, None] ^ codes[None, :])


def distance_counts(x) -> np.ndarray:
    """Integer counts N_k of ordered row pairs at Hamming distance k, k = 0..d."""
    x = np.asarray(x)
    return np.bincount(pairwise_distances(x).ravel(), minlength=x.shape[1] + 1)


def distance_distribution(design: Design) -> np.ndarray:
    """B_k = N_k / m for k = 0..d."""
    return distance_counts(design.matrix) / design.m


def gwlp_from_counts(counts, m: int, d: int) -> Gwlp:
    """GWLP from ordered-pair distance counts; A_j = sum_k P_j(k) N_k / m^2."""
    kmat = krawtchouk_matrix(d)
    counts = [int(c) for c in counts]
    denom = m * m
    values = []
    for j in range(1, d + 1):
        num = sum(kmat[j, k] * counts[k] for k in range(d + 1))
        a = num / denom
        values.append(0.0 if abs(a) <= ZERO_TOL else a)
    return Gwlp(tuple(values), _resolution(values))


def _resolution(values) -> int:
    for j, a in enumerate(values, start=1):
        if a > ZERO_TOL:
            return j
    return len(values) + 1


def gwlp(design: Design) -> Gwlp:
    """Generalized word-length pattern via the MacWilliams transform of the
    distance distribution."""
    return gwlp_from_counts(distance_counts(design.matrix), design.m, design.d)


def gwlp_oracle(design: Design) -> Gwlp:
    """Brute-force GWLP: A_j = sum over j-subsets I of (J_I / m)^2."""
    d, m = design.d, design.m
    if d > MAX_ORACLE_FACTORS:
        raise CapacityError(f"gwlp_oracle supports d <= {MAX_ORACLE_FACTORS}, got {d}")
    mat = design.matrix.astype(np.int64)
    values = []
    for j in range(1, d + 1):
        total = 0
        for subset in itertools.combinations(range(d), j):
            jc = int(np.prod(mat[:, subset], axis=1).sum())
            total += jc * jc
        a = total / (m * m)
        values.append(0.0 if abs(a) <= ZERO_TOL else a)
    return Gwlp(tuple(values), _resolution(values))


def orthogonal_strength(design: Design) -> int:
    """Largest t such that every t-column projection contains each of the
    2^t sign patterns exactly m / 2^t times."""
    x01 = design.zero_one().astype(np.int64)
    m, d = x01.shape
    strength = 0
    for t in range(1, d + 1):
        if m % (2 ** t):
            break
        expected = m // 2 ** t
        weights = 1 << np.arange(t, dtype=np.int64)
        ok = True
        for subset in itertools.combinations(range(d), t):
            counts = np.bincount(x01[:, subset] @ weights, minlength=2 ** t)
            if np.any(counts != expected):
                ok = False
                break
        if not ok:
            break
        strength = t
    return strength


# -- design file IO ---------------------------------------------------------

ENCODINGS = ("pm1", "zeroone")


def format_design(design: Design, encoding: str = "pm1") -> str:
    if encoding not in ENCODINGS:
        raise ValidationError(f"unknown encoding {encoding!r}")
    mat = design.matrix if encoding == "pm1" else design.zero_one()
    lines = [f"{design.m} {design.d} {encoding}"]
    lines += [" ".join(str(int(v)) for v in row) for row in mat]
    return "\n".join(lines) + "\n"


def parse_design(text: str) -> Design:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DesignParseError("empty design file")
    header = lines[0].split()
    if len(header) != 3:
        raise DesignParseError("header must be 'm d encoding'")
    try:
        m, d = int(header[0]), int(header[1])
    except ValueError:
        raise DesignParseError(f"bad header {lines[0]!r}") from None
    encoding = header[2]
    if encoding not in ENCODINGS:
        raise DesignParseError(f"unknown encoding {encoding!r}")
    rows = lines[1:]
    if len(rows) != m:
        raise DesignParseError(f"header says m={m} but found {len(rows)} rows")
    allowed = {"-1", "1"} if encoding == "pm1" else {"0", "1"}
    data = []
    for lineno, row in enumerate(rows, start=2):
        toks = row.split()
        if len(toks) != d:
            raise DesignParseError(f"line {lineno}: expected {d} entries, got {len(toks)}")
        if not set(toks) <= allowed:
            raise DesignParseError(f"line {lineno}: entries must be in {sorted(allowed)}")
        data.append([int(t) for t in toks])
    arr = np.array(data, dtype=np.int8)
    return Design(arr) if encoding == "pm1" else Design.from_zero_one(arr)


def read_design(path) -> Design:
    return parse_design(Path(path).read_text())


def write_design(design: Design, path, encoding: str = "pm1") -> None:
    Path(path).write_text(format_design(design, encoding))
