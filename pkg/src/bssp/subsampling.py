"""Design-matched subsampling: sample matching and column-permutation search."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .balancing import BalanceConfig, psi_from_gwlp
from .design import Design, _codes, gwlp, gwlp_from_counts, pairwise_distances
from .errors import NoMatchError, ValidationError

STRATEGIES = ("exhaustive-lexicographic", "random-shuffle")


@dataclass(frozen=True)
class SearchConfig:
    strategy: str = "random-shuffle"
    budget: int = 10_000
    seed: int = 0
    early_stop_psi: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.budget < 1:
            raise ValidationError("budget must be >= 1")


@dataclass
class SubsampleResult:
    selected_indices: np.ndarray
    matched_design: Design | None
    psi: float
    matched_count: int
    permutation: tuple
    evaluated: int = 0
    history: list = field(default_factory=list)
    design_rows: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "indices": [int(i) for i in self.selected_indices],
            "permutation": [int(p) for p in self.permutation],
            "psi": None if math.isinf(self.psi) else float(self.psi),
            "matched_count": int(self.matched_count),
            "evaluated": int(self.evaluated),
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


class PatternIndex:
    """Maps d-bit row patterns of X to the sorted row indices carrying them."""

    def __init__(self, x01):
        x01 = np.asarray(x01)
        self.n, self.d = x01.shape
        codes = _codes(x01) if self.n else np.zeros(0, dtype=np.int64)
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        self.keys, starts = np.unique(sorted_codes, return_index=True)
        self.first = order[starts]
        self._order = order
        self._starts = np.append(starts, len(order))

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        """Lowest row index per code, or -1 where the pattern is absent."""
        if len(self.keys) == 0:
            return np.full(len(codes), -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, codes)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        hit = self.keys[pos_c] == codes
        return np.where(hit, self.first[pos_c], -1)

    def rows(self, code: int) -> np.ndarray:
        pos = np.searchsorted(self.keys, code)
        if pos >= len(self.keys) or self.keys[pos] != code:
            return np.zeros(0, dtype=np.int64)
        return self._order[self._starts[pos]:self._starts[pos + 1]]


def _check_columns(x01, design: Design):
    if x01.ndim != 2 or x01.shape[1] != design.d:
        raise ValidationError(f"X has {x01.shape[1] if x01.ndim == 2 else '?'} columns, design has {design.d}")


def match_samples(x, y, design: Design, cfg: BalanceConfig | None = None,
                  resolution: int | None = None, index: PatternIndex | None = None) -> SubsampleResult:
    """Pick, for every design row, the lowest-index unused sample with the same
    bit pattern. Design rows must be distinct, so no sample is used twice."""
    cfg = cfg or BalanceConfig()
    x01 = np.asarray(x)
    if x01.ndim == 1 and x01.size == 0:
        x01 = x01.reshape(0, design.d)
    _check_columns(x01, design)
    index = index or PatternIndex(x01)
    dcodes = _codes(design.zero_one())
    if len(np.unique(dcodes)) != len(dcodes):
        raise ValidationError("design rows must be distinct for matching")
    hits = index.lookup(dcodes)
    selected = hits[hits >= 0]
    resolution = resolution if resolution is not None else gwlp(design).resolution
    psi = _psi_of_rows(x01[selected], resolution, cfg.rho)
    return SubsampleResult(selected, design, psi, len(selected), tuple(range(design.d)), 1,
                           design_rows=np.flatnonzero(hits >= 0))


def _psi_of_rows(rows, resolution, rho):
    if len(rows) == 0:
        return math.inf
    counts = np.bincount(pairwise_distances(rows).ravel(), minlength=rows.shape[1] + 1)
    g = gwlp_from_counts(counts, rows.shape[0], rows.shape[1])
    return psi_from_gwlp(g.values, resolution, rho)


def permutation_stream(d: int, search: SearchConfig) -> Iterator[tuple]:
    """Deterministic stream of column permutations, at most ``search.budget`` long.

    ``exhaustive-lexicographic`` walks all d! orderings lexicographically;
    ``random-shuffle`` starts at the identity and then draws seeded uniform
    permutations, skipping repeats.
    """
    if d < 1:
        raise ValidationError("d must be >= 1")
    if search.strategy == "exhaustive-lexicographic":
        yield from itertools.islice(itertools.permutations(range(d)), search.budget)
        return
    total = math.factorial(d) if d <= 20 else None
    limit = search.budget if total is None else min(search.budget, total)
    rng = np.random.default_rng(search.seed)
    seen = set()
    perm = tuple(range(d))
    while len(seen) < limit:
        if perm not in seen:
            seen.add(perm)
            yield perm
        perm = tuple(int(v) for v in rng.permutation(d))


def ffd_subsample(x, y, template: Design, search: SearchConfig | None = None,
                  cfg: BalanceConfig | None = None) -> SubsampleResult:
    """Search column permutations of the template for the matched subdata with
    the smallest confounding measure psi.

    Candidates replace the incumbent only on strictly smaller psi, so ties keep
    the earlier one. The search stops once psi <= ``early_stop_psi``.
    """
    search = search or SearchConfig()
    cfg = cfg or BalanceConfig()
    x01 = np.asarray(x)
    _check_columns(x01, template)
    resolution = gwlp(template).resolution
    index = PatternIndex(x01)
    t01 = template.zero_one().astype(np.int64)
    weights = np.left_shift(np.int64(1), np.arange(template.d - 1, -1, -1, dtype=np.int64))
    # psi is invariant to column permutation, so the matched subset's distance
    # counts come straight from the template's own distance matrix
    tdist = pairwise_distances(t01)
    dplus = template.d + 1

    best = SubsampleResult(np.zeros(0, dtype=np.int64), None, math.inf, 0, tuple(range(template.d)))
    evaluated = 0
    accepted = []
    for perm in permutation_stream(template.d, search):
        evaluated += 1
        codes = t01[:, perm] @ weights
        hits = index.lookup(codes)
        mask = hits >= 0
        count = int(mask.sum())
        if count == 0:
            continue
        sub = tdist[np.ix_(mask, mask)]
        g = gwlp_from_counts(np.bincount(sub.ravel(), minlength=dplus), count, template.d)
        psi = psi_from_gwlp(g.values, resolution, cfg.rho)
        if psi < best.psi:
            best = SubsampleResult(hits[mask], template.permute_columns(perm), psi, count, perm,
                                   design_rows=np.flatnonzero(mask))
            accepted.append((evaluated, psi))
        if best.psi <= search.early_stop_psi:
            break
    if best.matched_count == 0:
        raise NoMatchError(f"no design row matched any sample after {evaluated} permutations")
    best.evaluated = evaluated
    best.history = accepted
    return best
