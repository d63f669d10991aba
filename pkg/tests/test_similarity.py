import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sgml.similarity import cosine_similarity, sgs_mapping, similarity_matrix

@st.composite
def vector_pair(draw, lo=-1e3, hi=1e3):
    n = draw(st.integers(1, 24))
    elems = st.floats(min_value=lo, max_value=hi, allow_nan=False)
    u = draw(st.lists(elems, min_size=n, max_size=n))
    v = draw(st.lists(elems, min_size=n, max_size=n))
    return u, v


def test_cosine_identical_vectors():
    assert cosine_similarity([3, 4], [3, 4]) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonal():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0


def test_cosine_hand_value():
    # 24 / (5 * 5)
    assert cosine_similarity([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-12)


def test_cosine_zero_norm_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_similarity([0.0, 0.0], [1.0, 2.0])


def test_cosine_length_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])


@given(pair=vector_pair())
def test_cosine_symmetry(pair):
    u, v = pair
    assume(np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6)
    assert cosine_similarity(u, v) == cosine_similarity(v, u)


@given(pair=vector_pair(), k=st.integers(-6, 6))
def test_cosine_power_of_two_scale_invariance(pair, k):
    # scaling by 2^k is exact in binary floating point, so equality is exact
    u, v = pair
    assume(np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6)
    c = 2.0 ** k
    assert cosine_similarity(np.asarray(u) * c, v) == cosine_similarity(u, v)


def test_cosine_general_scale_invariance(rng):
    for _ in range(50):
        u = rng.normal(size=8)
        v = rng.normal(size=8)
        c = float(rng.uniform(0.01, 100.0))
        assert cosine_similarity(c * u, v) == pytest.approx(
            cosine_similarity(u, v), abs=1e-12)


@given(pair=vector_pair())
def test_cosine_range(pair):
    u, v = pair
    assume(np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6)
    s = cosine_similarity(u, v)
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12


def test_sgs_identical():
    assert sgs_mapping([0.2, 0.9, 0.5], [0.2, 0.9, 0.5]) == pytest.approx(1.0, abs=1e-12)


def test_sgs_hand_value():
    # 1 / (sqrt(2) * sqrt(2))
    assert sgs_mapping([1, 0, 1], [1, 1, 0]) == pytest.approx(0.5, abs=1e-12)


def test_sgs_disjoint_support():
    assert sgs_mapping([1, 0], [0, 1]) == 0.0


def test_sgs_rejects_out_of_range_entries():
    with pytest.raises(ValueError, match="outside"):
        sgs_mapping([1.2, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError, match="outside"):
        sgs_mapping([0.5, 0.5], [-0.1, 0.5])


def test_sgs_rejects_all_zero():
    with pytest.raises(ValueError, match="all-zero"):
        sgs_mapping([0.0, 0.0], [0.5, 0.5])


@given(pair=vector_pair(lo=0.0, hi=1.0))
def test_sgs_range_and_symmetry(pair):
    p, q = pair
    assume(np.linalg.norm(p) > 1e-6 and np.linalg.norm(q) > 1e-6)
    g = sgs_mapping(p, q)
    assert 0.0 - 1e-12 <= g <= 1.0 + 1e-12
    assert g == sgs_mapping(q, p)


def test_matrix_orthonormal_pair():
    out = similarity_matrix([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(out, np.eye(2), atol=1e-12)


def test_matrix_single_vector():
    out = similarity_matrix([[1.0, 2.0]])
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_matrix_hand_values():
    out = similarity_matrix([[3.0, 4.0], [4.0, 3.0], [3.0, 4.0]])
    assert out[0, 1] == pytest.approx(0.96, abs=1e-12)
    assert out[1, 2] == pytest.approx(0.96, abs=1e-12)
    assert out[0, 2] == pytest.approx(1.0, abs=1e-12)


def test_matrix_matches_kernel_and_is_symmetric(rng):
    embs = rng.normal(size=(17, 5))
    out = similarity_matrix(embs)
    assert np.array_equal(out, out.T)
    for i in range(17):
        assert out[i, i] == pytest.approx(1.0, abs=1e-12)
        for j in range(i + 1, 17):
            assert out[i, j] == pytest.approx(
                cosine_similarity(embs[i], embs[j]), abs=1e-12)


def test_matrix_reports_offending_index():
    embs = np.ones((4, 3))
    embs[2] = 0.0
    with pytest.raises(ValueError, match="index 2"):
        similarity_matrix(embs)
