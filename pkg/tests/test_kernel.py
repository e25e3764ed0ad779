import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoii.kernel import (KernelQuery, SystemState, epoch_prob, epoch_prob_idle, epoch_prob_piecewise,
                         epoch_prob_tx_discard, epoch_prob_tx_given_t, epoch_row, step_kernel, transmit_matrix,
                         transmit_tables, validate_epoch_structure)
from aoii.model import ModelError, make_delay_explicit, make_delay_geometric, make_delay_twopoint, make_source, p_pow

from grids import model_grid
from oracles import absorbing_walk, enumerate_transmission, enumerated_epoch_row


def test_step_kernel_idle_examples():
    src = make_source(0.3)
    d = make_delay_geometric(0.7, 5)
    out = step_kernel(src, d, SystemState(0, 0, -1), 0)
    assert out == pytest.approx({SystemState(0, 0, -1): 0.7, SystemState(1, 0, -1): 0.3})
    out = step_kernel(src, d, SystemState(4, 0, -1), 0)
    assert out == pytest.approx({SystemState(0, 0, -1): 0.3, SystemState(5, 0, -1): 0.7})


def test_step_kernel_single_slot_delivery_flips_estimate():
    src = make_source(0.3)
    d = make_delay_explicit([1.0, 0.0])
    out = step_kernel(src, d, KernelQuery(SystemState(1, 0, -1), 1))
    assert out == pytest.approx({SystemState(2, 0, -1): 0.3, SystemState(0, 0, -1): 0.7})


def test_step_kernel_rejections():
    src = make_source(0.3)
    d = make_delay_geometric(0.7, 5)
    with pytest.raises(ModelError):
        step_kernel(src, d, SystemState(2, 1, 1), 1)
    with pytest.raises(ModelError):
        step_kernel(src, d, SystemState(2, 0, 1), 0)
    with pytest.raises(ModelError):
        step_kernel(src, d, SystemState(2, 5, 1), 0)


def test_busy_state_transitions():
    src = make_source(0.2)
    d = make_delay_geometric(0.5, 4)
    q = d.survival_ratio(1)
    # different-value update from AoII 0: delivery makes the estimate wrong unless the source flips
    out = step_kernel(src, d, SystemState(0, 1, 1), 0)
    assert out[SystemState(0, 0, -1)] == pytest.approx((1 - q) * 0.2)
    assert out[SystemState(1, 0, -1)] == pytest.approx((1 - q) * 0.8)
    assert out[SystemState(0, 2, 1)] == pytest.approx(q * 0.8)
    # same-value update behaves as if the channel were idle
    out = step_kernel(src, d, SystemState(3, 1, 0), 0)
    assert out[SystemState(4, 2, 0)] + out[SystemState(4, 0, -1)] == pytest.approx(0.8)


def test_discard_redirects_to_idle():
    src = make_source(0.25)
    d = make_delay_geometric(0.5, 3, "discard")
    out = step_kernel(src, d, SystemState(2, 2, 1), 0)
    assert all(s.i == -1 for s in out)
    # dropped update keeps the old, wrong estimate
    assert out[SystemState(3, 0, -1)] == pytest.approx(0.5 * 0.75 + 0.5 * 0.25)


def test_epoch_idle_examples():
    src = make_source(0.3)
    assert epoch_prob_idle(src, 0, 0) == pytest.approx(0.7)
    assert epoch_prob_idle(src, 5, 0) == pytest.approx(0.3)
    assert epoch_prob_idle(src, 5, 3) == 0.0


def test_epoch_given_t_examples():
    assert epoch_prob_tx_given_t(make_source(0.2), 0, 0, 2) == pytest.approx(0.68, abs=1e-15)
    src = make_source(0.25)
    assert epoch_prob_tx_given_t(src, 4, 6, 2) == pytest.approx(0.1875, abs=1e-15)
    assert epoch_prob_tx_given_t(src, 3, 1, 2) == pytest.approx(0.1875, abs=1e-15)


def test_epoch_discard_examples():
    src = make_source(0.3)
    d = make_delay_geometric(0.5, 3, "discard")
    assert epoch_prob_tx_discard(src, d, 2, 5) == pytest.approx(0.343, abs=1e-15)
    assert epoch_prob_tx_discard(src, d, 2, 0) == pytest.approx(1 - p_pow(src, 3), abs=1e-15)
    for k in range(6):
        assert epoch_prob_tx_discard(src, d, 0, k) == epoch_prob_tx_given_t(src, 0, k, 3)
    with pytest.raises(ModelError):
        epoch_prob_tx_discard(src, make_delay_geometric(0.5, 3), 2, 0)


def test_epoch_aggregate_examples():
    src = make_source(0.25)
    assert epoch_prob(src, make_delay_explicit([0.0, 1.0]), 3, 5, 1) == pytest.approx(0.1875)
    assert epoch_prob(src, make_delay_twopoint(5), 4, 7, 1) == 0.0
    assert epoch_prob(src, make_delay_twopoint(5), 4, 0, 0) == epoch_prob_idle(src, 4, 0)


@pytest.mark.parametrize("p", [0.05, 0.25, 0.5])
@pytest.mark.parametrize("delta", [0, 1, 3])
@pytest.mark.parametrize("t", [1, 2, 5, 8])
def test_given_t_matches_path_enumeration(p, delta, t):
    src = make_source(p)
    dist, _ = enumerate_transmission(p, delta, t)
    for k in range(0, delta + t + 3):
        assert epoch_prob_tx_given_t(src, delta, k, t) == pytest.approx(dist.get(k, 0.0), abs=1e-13)


@pytest.mark.parametrize("p", [0.05, 0.3])
@pytest.mark.parametrize("delta", [0, 2])
def test_discard_matches_path_enumeration(p, delta):
    src = make_source(p)
    d = make_delay_geometric(0.4, 4, "discard")
    dist, _ = enumerate_transmission(p, delta, 4, deliver=False)
    for k in range(delta + 7):
        assert epoch_prob_tx_discard(src, d, delta, k) == pytest.approx(dist.get(k, 0.0), abs=1e-13)


def test_epoch_rows_match_enumerated_mixture():
    src = make_source(0.35)
    for d in (make_delay_geometric(0.7, 5), make_delay_geometric(0.7, 5, "discard"), make_delay_twopoint(4)):
        for delta in range(0, 12):
            ref = enumerated_epoch_row(src, d, delta)
            row = epoch_row(src, d, delta, 1).entries
            for k in set(ref) | set(row):
                assert row.get(k, 0.0) == pytest.approx(ref.get(k, 0.0), abs=1e-13)


def test_piecewise_form_and_tables_match_mixture():
    for src, d in model_grid()[::7]:
        tab = transmit_tables(src, d)
        for delta in range(0, 3 * d.t_max + 1):
            for k in range(0, delta + d.t_max + 2):
                ref = epoch_prob(src, d, delta, k, 1)
                assert epoch_prob_piecewise(src, d, delta, k) == pytest.approx(ref, abs=1e-14)
                assert tab.prob(delta, k) == pytest.approx(ref, abs=1e-14)
        M = transmit_matrix(src, d, 3 * d.t_max)
        assert M.sum(axis=1) == pytest.approx(1.0, abs=1e-12)


def test_epoch_row_support_and_property_one():
    src = make_source(0.35)
    d = make_delay_geometric(0.7, 5)
    row0 = epoch_row(src, d, 0, 1)
    assert set(row0.entries) <= set(range(d.t_max + 1))
    ref = epoch_row(src, d, d.t_max, 1).entries
    for delta in range(d.t_max, 3 * d.t_max):
        e = epoch_row(src, d, delta, 1).entries
        for k in range(d.t_max):
            assert e.get(k, 0.0) == ref.get(k, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.01, max_value=0.5), st.floats(min_value=0.0, max_value=0.99),
       st.integers(min_value=2, max_value=7), st.sampled_from(["guaranteed", "discard"]),
       st.integers(min_value=0, max_value=20), st.sampled_from([0, 1]))
def test_epoch_row_equals_absorbing_walk(p, p_s, t_max, variant, delta, action):
    src = make_source(p)
    d = make_delay_geometric(p_s, t_max, variant)
    row = epoch_row(src, d, delta, action)
    assert abs(row.total() - 1.0) <= 1e-12
    walk = absorbing_walk(src, d, delta, action)
    for k in set(walk) | set(row.entries):
        assert abs(row.entries.get(k, 0.0) - walk.get(k, 0.0)) <= 1e-10


def test_epoch_structure_passes_on_examples():
    for variant in ("guaranteed", "discard"):
        rep = validate_epoch_structure(make_source(0.35), make_delay_geometric(0.7, 5, variant))
        assert rep.passed, rep
    rep = validate_epoch_structure(make_source(0.05), make_delay_twopoint(5))
    assert rep.passed and rep.checked > 100


def test_structure_validator_locates_corruption():
    src = make_source(0.35)
    d = make_delay_geometric(0.7, 5)

    def corrupted(a, b):
        v = epoch_prob(src, d, a, b, 1)
        return v + 1e-6 if (a, b) == (9, 2) else v

    rep = validate_epoch_structure(src, d, prob=corrupted)
    assert not rep.passed
    assert rep.failed_property == 1 and rep.counterexample == (9, 2)

    def leaky(a, b):
        return 1e-9 if (a, b) == (8, 6) else epoch_prob(src, d, a, b, 1)

    rep = validate_epoch_structure(src, d, prob=leaky)
    assert not rep.passed and rep.failed_property == 3 and rep.counterexample == (8, 6)


def test_unreachable_busy_states_have_defined_rows():
    src = make_source(0.2)
    d = make_delay_explicit([1.0, 0.0, 0.0])
    out = step_kernel(src, d, SystemState(1, 1, 1), 0)
    assert math.fsum(out.values()) == pytest.approx(1.0)
