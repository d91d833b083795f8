import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projector_info import exact_info as ei


def scalar_mi(joint):
    # independent oracle: explicit double loop over p log p / (p1 p2)
    rows, cols = joint.shape
    p1 = [sum(joint[i, j] for j in range(cols)) for i in range(rows)]
    p2 = [sum(joint[i, j] for i in range(rows)) for j in range(cols)]
    total = 0.0
    for i in range(rows):
        for j in range(cols):
            if joint[i, j] > 0:
                total += joint[i, j] * math.log(joint[i, j] / (p1[i] * p2[j]))
    return total


def test_entropy_examples():
    assert ei.entropy(np.full(4, 0.25)) == pytest.approx(1.386294, abs=1e-6)
    assert ei.entropy([0.0, 1.0, 0.0]) == 0.0
    assert ei.entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-12)
    assert ei.entropy([0.5, 0.25, 0.25]) == pytest.approx(1.039721, abs=1e-6)


@pytest.mark.parametrize("bad", [[0.5, 0.6], [1.5, -0.5], [np.nan, 1.0], []])
def test_invalid_pmf(bad):
    with pytest.raises(ei.InvalidPmf):
        ei.entropy(bad)


def test_mutual_information_examples():
    assert ei.mutual_information(np.full((2, 2), 0.25)) == 0.0
    assert ei.mutual_information(np.eye(4) / 4) == pytest.approx(math.log(4), abs=1e-12)
    joint = np.random.default_rng(0).dirichlet(np.ones(15)).reshape(3, 5)
    assert ei.mutual_information(joint) == pytest.approx(scalar_mi(joint), abs=1e-12)


def test_conditional_mi_examples():
    copy = np.zeros((2, 2, 2))
    copy[0, 0, 0] = copy[1, 1, 1] = 0.5
    assert ei.conditional_mi(copy) == 0.0
    xor = np.zeros((2, 2, 2))
    for a, b in itertools.product(range(2), repeat=2):
        xor[a, b, a ^ b] = 0.25
    assert ei.conditional_mi(xor) == pytest.approx(math.log(2), abs=1e-12)


def test_sample_chain_validity_and_determinism():
    c = ei.sample_chain((2, 2, 2, 2, 2), 0)
    assert c.sizes == (2, 2, 2, 2, 2)
    assert abs(c.joint.sum() - 1) < 1e-12
    again = ei.sample_chain((2, 2, 2, 2, 2), 0)
    assert np.array_equal(c.joint, again.joint)
    with pytest.raises(ei.SizeOutOfRange):
        ei.sample_chain((2, 2, 9, 2, 2), 0)
    with pytest.raises(ei.SizeOutOfRange):
        ei.sample_chain((2, 2, 2, 2), 0)


def test_singleton_chain_all_zero():
    c = ei.sample_chain((1, 1, 1, 1, 1), 5)
    for check in ei.THEOREMS.values():
        rep = check(c)
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.slack == 0.0


def test_chain_rejects_mismatched_channels():
    with pytest.raises(ei.InvalidChain):
        ei.make_chain([0.5, 0.5], np.eye(2), np.full((3, 2), 0.5), np.eye(2), np.eye(2))
    with pytest.raises(ei.InvalidChain):
        ei.check_theorem1("not a chain")


def test_marginal_axis_order():
    c = ei.sample_chain((2, 3, 4, 2, 3), 1)
    assert c.marginal("r", "y").shape == (3, 2)
    assert np.allclose(c.marginal("r", "y"), c.marginal("y", "r").T)


def test_identity_chain_is_tight():
    c = ei.identity_chain(4)
    ln4 = math.log(4)
    r1, r2, r3 = (check(c) for check in ei.THEOREMS.values())
    assert r1.lhs == pytest.approx(ln4, abs=1e-12)
    for r in (r1, r2, r3):
        assert abs(r.slack) < 1e-12
    lem = ei.check_lemmas(c)
    assert lem.cmi_y_r_given_z1 == 0.0 and lem.cmi_y_z2_given_z1 == 0.0
    assert abs(lem.dpi_z1z2_minus_z1r) < 1e-12 and abs(lem.dpi_z2r_minus_z1r) < 1e-12
    assert lem.passed


def test_uniform_noise_middle_channel():
    rng = np.random.default_rng(2)
    c = ei.make_chain(
        rng.dirichlet(np.ones(3)),
        rng.dirichlet(np.ones(3), size=3),
        np.full((3, 4), 0.25),
        rng.dirichlet(np.ones(2), size=4),
        rng.dirichlet(np.ones(3), size=2),
    )
    lem = ei.check_lemmas(c)
    assert lem.cmi_y_r_given_z1 <= 1e-15 and lem.cmi_y_z2_given_z1 <= 1e-15
    # Z1 is independent of everything upstream here
    assert ei.check_theorem1(c).lhs == pytest.approx(0.0, abs=1e-15)


def test_theorem_term_breakdown_consistent():
    c = ei.sample_chain((3, 4, 3, 2, 3), 11)
    r = ei.check_theorem2(c)
    t = r.term_breakdown
    assert r.rhs == pytest.approx(t["I(Y;Z2)"] - t["I(Z1;Z2)"] + t["H(Z1)"], abs=1e-15)
    assert t["I(Y;Z1)"] == pytest.approx(scalar_mi(c.marginal("y", "z1")), abs=1e-12)


def test_verification_chain_sizes():
    sizes = {ei.chain_sizes_for(i, 6, 0) for i in range(200)}
    flat = {s for t in sizes for s in t}
    assert flat == set(range(2, 7))
    assert ei.chain_sizes_for(0, 1, 0) == (1, 1, 1, 1, 1)


@settings(max_examples=150, deadline=None)
@given(
    sizes=st.tuples(*[st.integers(1, 5)] * 5),
    seed=st.integers(0, 2**32 - 1),
)
def test_bounds_and_lemmas_hold(sizes, seed):
    c = ei.sample_chain(sizes, seed)
    for check in ei.THEOREMS.values():
        assert check(c).passed()
    assert ei.check_lemmas(c).passed
