"""Softmax and KL primitives, mostly as hypothesis properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifereid.errors import EmptyKeySet, IndexOutOfRange, LengthMismatch, ZeroVector
from lifereid.numerics import (
    Temperatures,
    kl_divergence,
    normalize,
    normalize_rows,
    softmax_distribution,
    softmax_similarity,
    stable_softmax,
)
from oracles import kl_reference, softmax_reference

finite_logits = st.lists(
    st.floats(min_value=-30, max_value=30, allow_nan=False), min_size=1, max_size=12
)


@given(finite_logits)
def test_softmax_is_a_distribution(logits):
    p = stable_softmax(np.array(logits))
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12


@given(finite_logits, st.floats(min_value=-1e3, max_value=1e3, allow_nan=False))
def test_softmax_shift_invariance(logits, c):
    a = stable_softmax(np.array(logits))
    b = stable_softmax(np.array(logits) + c)
    assert np.abs(a - b).max() < 1e-12


@given(finite_logits)
def test_softmax_matches_naive(logits):
    a = stable_softmax(np.array(logits))
    b = softmax_reference(logits)
    assert np.abs(a - b).max() < 1e-12


def test_softmax_survives_large_logits():
    p = stable_softmax(np.array([1e5, 1e5 - 1.0]))
    assert np.isfinite(p).all()
    assert abs(p.sum() - 1.0) < 1e-12


def test_softmax_last_axis_only():
    logits = np.arange(6.0).reshape(2, 3)
    p = stable_softmax(logits)
    assert p.shape == (2, 3)
    assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-12
    assert np.abs(p[0] - p[1]).max() < 1e-12  # rows differ by a constant shift


def test_softmax_distribution_and_similarity():
    keys = np.eye(3)
    q = np.array([1.0, 0.0, 0.0])
    p = softmax_distribution(q, keys, 0.5)
    want = softmax_reference([2.0, 0.0, 0.0])
    assert np.abs(p - want).max() < 1e-12
    assert softmax_similarity(q, keys, 0, 0.5) == pytest.approx(float(want[0]), abs=1e-15)
    with pytest.raises(EmptyKeySet):
        softmax_distribution(q, np.zeros((0, 3)), 0.5)
    with pytest.raises(IndexOutOfRange):
        softmax_similarity(q, keys, 3, 0.5)


def simplex(draw_floats):
    v = np.array(draw_floats, dtype=np.float64)
    return v / v.sum()


positive_vecs = st.lists(
    st.floats(min_value=1e-6, max_value=1.0), min_size=2, max_size=10
)


@given(positive_vecs, positive_vecs)
def test_kl_nonnegative(p_raw, r_raw):
    n = min(len(p_raw), len(r_raw))
    p, r = simplex(p_raw[:n]), simplex(r_raw[:n])
    assert kl_divergence(p, r) >= 0.0


@given(positive_vecs)
def test_kl_identity_of_indiscernibles(p_raw):
    p = simplex(p_raw)
    assert kl_divergence(p, p) == 0.0
    # and strictly positive for a genuinely different distribution
    r = p.copy()
    r[0], r[-1] = r[-1], r[0]
    if abs(r[0] - p[0]) > 1e-9:
        assert kl_divergence(p, r) > 0.0


@given(positive_vecs, positive_vecs)
def test_kl_matches_reference(p_raw, r_raw):
    n = min(len(p_raw), len(r_raw))
    p, r = simplex(p_raw[:n]), simplex(r_raw[:n])
    assert kl_divergence(p, r) == pytest.approx(kl_reference(p, r), abs=1e-12)


def test_kl_zero_convention_and_validation():
    p = np.array([0.0, 1.0])
    r = np.array([0.5, 0.5])
    assert kl_divergence(p, r) == pytest.approx(np.log(2.0), abs=1e-15)
    with pytest.raises(ValueError):
        kl_divergence(r, p)  # reference has a zero entry
    with pytest.raises(LengthMismatch):
        kl_divergence(np.array([1.0]), r)


def test_normalize():
    v = normalize(np.array([3.0, 4.0]))
    assert np.allclose(v, [0.6, 0.8])
    with pytest.raises(ZeroVector):
        normalize(np.zeros(4))
    m = normalize_rows(np.array([[2.0, 0.0], [0.0, 5.0]]))
    assert np.allclose(m, np.eye(2))
    with pytest.raises(ZeroVector):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_default_temperatures():
    t = Temperatures()
    assert (t.pa, t.ia, t.cam, t.ps, t.is_) == (0.5, 0.1, 0.07, 0.1, 0.2)
