import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bssp.design import (
    Design,
    distance_distribution,
    format_design,
    full_factorial,
    gwlp,
    gwlp_oracle,
    krawtchouk,
    orthogonal_strength,
    parse_design,
    read_design,
    regular_ffd,
    template_design,
    write_design,
)
from bssp.errors import CapacityError, DesignParseError, ValidationError


def half_fraction():
    return regular_ffd(2, [[1, 2]])


# --- brute-force helpers, independent of the library code paths -------------

def brute_distance_distribution(mat):
    m, d = mat.shape
    counts = [0] * (d + 1)
    for a in mat:
        for b in mat:
            counts[int(np.sum(a != b))] += 1
    return [c / m for c in counts]


def brute_strength(mat):
    m, d = mat.shape
    best = 0
    for t in range(1, d + 1):
        for cols in itertools.combinations(range(d), t):
            patterns = [tuple(row) for row in mat[:, cols]]
            for p in itertools.product([-1, 1], repeat=t):
                if patterns.count(p) * 2 ** t != m:
                    return best
        best = t
    return best


def test_full_factorial_small():
    d1 = full_factorial(1)
    assert d1.matrix.tolist() == [[-1], [1]]
    d3 = full_factorial(3)
    assert d3.m == 8
    assert len({tuple(r) for r in d3.matrix}) == 8
    assert d3.matrix[0].tolist() == [-1, -1, -1]
    assert d3.matrix[1].tolist() == [-1, -1, 1]


@pytest.mark.parametrize("d", [0, 21, -1])
def test_full_factorial_range(d):
    with pytest.raises(CapacityError):
        full_factorial(d)


def test_regular_ffd_half_fraction():
    D = half_fraction()
    assert D.m == 4 and D.d == 3
    np.testing.assert_array_equal(D.matrix[:, 2], D.matrix[:, 0] * D.matrix[:, 1])


@pytest.mark.parametrize("words", [[[]], [[0, 1]], [[1, 3]]])
def test_regular_ffd_bad_words(words):
    with pytest.raises(ValidationError):
        regular_ffd(2, words)


def test_regular_ffd_repeated_word_flags_a2():
    D = regular_ffd(2, [[1, 2], [1, 2]])
    assert D.d == 4
    g = gwlp(D)
    assert g[2] >= 1
    assert g.as_list() == pytest.approx(gwlp_oracle(D).as_list(), abs=1e-12)


def test_krawtchouk_values():
    assert krawtchouk(0, 5, 9) == 1
    for x in range(4):
        assert krawtchouk(1, x, 3) == 3 - 2 * x
    assert krawtchouk(1, 2, 3) == -1
    assert krawtchouk(3, 2, 3) == 1


@pytest.mark.parametrize("d", [3, 5, 8])
def test_krawtchouk_orthogonality(d):
    # sum_x C(d,x) P_i(x) P_j(x) = 2^d C(d,i) [i == j]
    for i in range(d + 1):
        for j in range(d + 1):
            s = sum(comb(d, x) * krawtchouk(i, x, d) * krawtchouk(j, x, d) for x in range(d + 1))
            assert s == (2 ** d * comb(d, i) if i == j else 0)


def test_distance_distribution_examples():
    assert distance_distribution(full_factorial(2)).tolist() == [1, 2, 1]
    assert distance_distribution(half_fraction()).tolist() == [1, 0, 3, 0]
    one = Design(np.array([[1, -1, 1]]))
    assert distance_distribution(one).tolist() == [1, 0, 0, 0]


def test_gwlp_examples():
    g = gwlp(half_fraction())
    assert g.as_list() == [0, 0, 1]
    assert g.resolution == 3
    for d in range(1, 7):
        g = gwlp(full_factorial(d))
        assert g.as_list() == [0.0] * d
        assert g.resolution == d + 1


def test_template_properties():
    T = template_design()
    assert (T.m, T.d) == (128, 10)
    g = gwlp(T)
    assert g.as_list()[:4] == [0, 0, 0, 0]
    assert g[5] == pytest.approx(3.0)
    assert g.resolution == 5
    assert orthogonal_strength(T) == 4
    assert gwlp_oracle(T).as_list() == pytest.approx(g.as_list(), abs=1e-12)


def test_oracle_examples():
    assert gwlp_oracle(half_fraction()).as_list() == [0, 0, 1]
    assert gwlp_oracle(full_factorial(4)).as_list() == [0, 0, 0, 0]
    mat = full_factorial(3).matrix.copy()
    mat[:, 1] = 1
    assert gwlp_oracle(Design(mat))[1] >= 1


def test_oracle_capacity():
    with pytest.raises(CapacityError):
        gwlp_oracle(full_factorial(15))


def test_strength_examples():
    assert orthogonal_strength(half_fraction()) == 2
    assert orthogonal_strength(full_factorial(3)) == 3
    unbalanced = Design(np.array([[1, 1], [1, -1], [1, 1]]))
    assert orthogonal_strength(unbalanced) == 0


@st.composite
def random_designs(draw, max_d=8, max_m=32):
    d = draw(st.integers(1, max_d))
    m = draw(st.integers(1, min(max_m, 2 ** d)))
    bits = draw(st.lists(st.lists(st.sampled_from([-1, 1]), min_size=d, max_size=d),
                         min_size=m, max_size=m))
    return Design(np.array(bits))


@settings(max_examples=60, deadline=None)
@given(random_designs())
def test_macwilliams_matches_oracle(D):
    assert gwlp(D).as_list() == pytest.approx(gwlp_oracle(D).as_list(), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(random_designs(), st.randoms(use_true_random=False))
def test_distance_distribution_invariants(D, rnd):
    B = distance_distribution(D)
    assert B.sum() == pytest.approx(D.m)
    assert B == pytest.approx(brute_distance_distribution(D.matrix))
    assert B[0] >= 1
    distinct = len({tuple(r) for r in D.matrix}) == D.m
    assert (B[0] == 1) == distinct
    rows = list(range(D.m))
    cols = list(range(D.d))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    shuffled = Design(D.matrix[rows][:, cols])
    assert distance_distribution(shuffled).tolist() == B.tolist()
    assert gwlp(shuffled).as_list() == gwlp(D).as_list()
    # recoding to 0/1 leaves the distances alone
    assert distance_distribution(Design.from_zero_one(D.zero_one())).tolist() == B.tolist()


REGULAR = [
    (2, [[1, 2]]),
    (3, [[1, 2, 3]]),
    (4, [[1, 2, 3], [2, 3, 4]]),
    (4, [[1, 2], [3, 4]]),
    (4, [[1, 2, 3, 4]]),
    (5, [[1, 2, 3], [3, 4, 5]]),
    (3, []),
    (7, [[1, 2, 3, 4], [1, 2, 5, 6], [1, 3, 5, 7]]),
]


@pytest.mark.parametrize("base,words", REGULAR)
def test_lemma_strength_is_resolution_minus_one(base, words):
    D = regular_ffd(base, words)
    assert len({tuple(r) for r in D.matrix}) == D.m
    assert orthogonal_strength(D) == gwlp(D).resolution - 1
    if D.d <= 6:
        assert orthogonal_strength(D) == brute_strength(D.matrix)


@pytest.mark.parametrize("base,words", REGULAR)
def test_orthogonality_of_columns_and_interactions(base, words):
    D = regular_ffd(base, words)
    R = gwlp(D).resolution
    mat = D.matrix.astype(int)
    if R >= 3:
        gram = mat.T @ mat
        assert np.all(gram[~np.eye(D.d, dtype=bool)] == 0)
    if R >= 4:
        for k in range(2, R - 1):
            for subset in itertools.combinations(range(D.d), k):
                inter = np.prod(mat[:, subset], axis=1)
                assert np.all(inter @ mat == 0)


def test_design_file_roundtrip(tmp_path):
    T = template_design()
    for enc in ("pm1", "zeroone"):
        path = tmp_path / f"t_{enc}.txt"
        write_design(T, path, enc)
        again = read_design(path)
        assert again == T
        assert format_design(again, enc) == path.read_text()


@pytest.mark.parametrize("text", [
    "",
    "2 2 pm1\n1 1\n1\n",
    "2 2 pm1\n1 1\n",
    "1 2 foo\n1 1\n",
    "1 2 zeroone\n1 -1\n",
    "x 2 pm1\n1 1\n",
])
def test_parse_errors(text):
    with pytest.raises(DesignParseError):
        parse_design(text)


def test_design_validation():
    with pytest.raises(ValidationError):
        Design(np.array([[0, 1]]))
    with pytest.raises(ValidationError):
        Design(np.ones((5, 2)))
