import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fcfsalis.config import load_config
from fcfsalis.design import (
    DesignError,
    PriorityPartition,
    QoSTarget,
    design,
    design_differentiated,
    design_ed,
    design_qd,
    design_qed,
    ed_adjustment,
    redesign_graph,
    round_workforce,
)
from fcfsalis.distributions import Deterministic, Exponential
from fcfsalis.model import CompatibilityGraph, ModelError, ProbabilityVector, SystemSpec
from fcfsalis.rates import CRPViolation

BETA1 = (0.3, 0.3, 0.4)
# shared by the hypothesis tests, which cannot take function-scoped fixtures
EX1_SPEC = load_config("ex1_qed").spec


def run_fixture(name, lam):
    cfg = load_config(name).with_arrival_rate(lam)
    d = cfg.design
    if d.mode == "diff":
        return design_differentiated(cfg.spec, d.partition())
    return design(cfg.spec, d.beta, d.target)


def test_round_workforce_examples():
    assert round_workforce([38.77, 0.4, 25.5]) == (39, 1, 26)
    assert round_workforce([24.4999]) == (24,)
    with pytest.raises(DesignError):
        round_workforce([0.0])


def test_server1_hand_evaluation(ex1_spec):
    # lambda-tilde * (r11 * m11 + r21 * m21) from the printed 0.877 * 20 and 3-decimal rates
    res = design_ed(ex1_spec.with_arrival_rate(20.0), BETA1, 1.0)
    hand = 17.54 * (0.038 * 3 + 0.262 * 8)
    assert hand == pytest.approx(38.77, abs=0.01)
    assert res.workforce_real[0] == pytest.approx(hand, rel=2e-3)
    assert res.workforce[0] == 39


@pytest.mark.parametrize("lam,expected", [(20, (39, 25, 25)), (200, (387, 254, 255))])
def test_ed_example1(ex1_spec, lam, expected):
    res = design_ed(ex1_spec.with_arrival_rate(lam), BETA1, 1.0)
    assert res.workforce == expected
    assert res.effective_lambda / lam == pytest.approx(0.877, abs=5e-4)
    assert all(abs(n - x) <= 0.5 for n, x in zip(res.workforce, res.workforce_real))


@pytest.mark.parametrize("lam,expected", [(20, (47, 32, 33)), (200, (468, 318, 327))])
def test_qd_example1(ex1_spec, lam, expected):
    assert design_qd(ex1_spec.with_arrival_rate(lam), BETA1, 0.5).workforce == expected


@pytest.mark.parametrize("lam,expected", [(20, (44, 29, 29)), (200, (438, 288, 287))])
def test_qed_example1(ex1_spec, lam, expected):
    res = design_qed(ex1_spec.with_arrival_rate(lam), BETA1)
    assert res.workforce == expected
    assert tuple(res.adjusted_alpha) == tuple(ex1_spec.alpha)
    assert res.effective_lambda == lam and res.abandonment == (0.0, 0.0, 0.0)


def test_ed_abandonment_prediction(ex1_spec):
    res = design_ed(ex1_spec, BETA1, 1.0)
    expected = (1 - math.exp(-0.1), 0.1, 1 - math.exp(-0.2))
    assert res.abandonment == pytest.approx(expected, abs=1e-15)


def test_ed_without_thinning(ex1_spec):
    patient = SystemSpec(ex1_spec.graph, 200.0, ex1_spec.alpha, ex1_spec.service, (Deterministic(50.0),) * 3)
    res = design_ed(patient, BETA1, 1.0)
    assert res.effective_lambda == 200.0
    assert tuple(res.adjusted_alpha) == pytest.approx(tuple(ex1_spec.alpha), abs=1e-15)
    assert np.allclose(res.workforce_real, design_qed(patient, BETA1).workforce_real, rtol=1e-14)


def test_ed_no_survivors(ex1_spec):
    sure = SystemSpec(ex1_spec.graph, 200.0, ex1_spec.alpha, ex1_spec.service, (Deterministic(0.5),) * 3)
    with pytest.raises(DesignError):
        design_ed(sure, BETA1, 1.0)


def test_crp_checked_on_adjusted_alpha(ex1_spec):
    # c1 alone needs s1 and s3; giving them almost nothing breaks pooling
    with pytest.raises(CRPViolation) as info:
        design_ed(ex1_spec, (0.05, 0.9, 0.05), 1.0)
    assert info.value.witness


def test_limits_converge_to_qed(ex1_spec):
    qed = design_qed(ex1_spec, BETA1).workforce_real
    for eps in (1e-4, 1e-6, 1e-8):
        assert np.allclose(design_qd(ex1_spec, BETA1, eps).workforce_real, qed, rtol=3 * eps)
        assert np.allclose(design_ed(ex1_spec, BETA1, eps).workforce_real, qed, rtol=10 * eps)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 500.0), st.sampled_from(["ed", "qd", "qed"]))
def test_linear_in_lambda(lam, regime):
    ex1_spec = EX1_SPEC
    target = {"ed": QoSTarget.ed(1.0), "qd": QoSTarget.qd(0.5), "qed": QoSTarget.qed()}[regime]
    one = design(ex1_spec.with_arrival_rate(lam), BETA1, target)
    two = design(ex1_spec.with_arrival_rate(2 * lam), BETA1, target)
    assert np.allclose(two.workforce_real, 2 * one.workforce_real, rtol=1e-13)
    assert two.effective_lambda <= 2 * lam
    assert one.rates.identity_error(one.adjusted_alpha, one.beta) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 9.0))
def test_effective_rate_never_exceeds_lambda(W):
    ex1_spec = EX1_SPEC
    p, eff, alpha = ed_adjustment(ex1_spec, W)
    assert eff <= ex1_spec.arrival_rate
    assert eff < ex1_spec.arrival_rate  # every patience law here has mass below any W > 0
    assert math.fsum(alpha) == pytest.approx(1.0, abs=1e-15)


def test_target_validation():
    with pytest.raises(ModelError):
        QoSTarget.ed(0.0)
    with pytest.raises(ModelError):
        QoSTarget.qd(-1.0)
    assert QoSTarget.qed().W == 0 and QoSTarget.qed().T == 0


# -- differentiated service -----------------------------------------------------

def test_example2_removed_links():
    cfg = load_config("ex2_ed")
    g = redesign_graph(cfg.spec.graph, cfg.design.partition())
    assert sorted(cfg.spec.graph.edges - g.edges) == [(0, 4), (1, 1), (3, 3)]


def test_redesign_single_class_unchanged(ex1_graph):
    p = PriorityPartition(((0, 1, 2),), ((0, 1, 2),), (QoSTarget.qed(),), (BETA1,))
    assert redesign_graph(ex1_graph, p) == ex1_graph


def test_redesign_no_cross_edges():
    g = CompatibilityGraph(2, 2, frozenset([(0, 0), (1, 1)]))
    p = PriorityPartition(((0,), (1,)), ((0,), (1,)), (QoSTarget.qd(1.0), QoSTarget.ed(1.0)), ((1.0,), (1.0,)))
    assert redesign_graph(g, p) == g


def test_redesign_direction():
    # s1 (class 1) keeps its link down to c2 (class 2); s2 (class 2) loses c1
    g = CompatibilityGraph(2, 2, frozenset([(0, 0), (1, 0), (0, 1), (1, 1)]))
    p = PriorityPartition(((0,), (1,)), ((0,), (1,)), (QoSTarget.ed(1.0), QoSTarget.ed(2.0)), ((1.0,), (1.0,)))
    assert sorted(redesign_graph(g, p).edges) == [(0, 0), (1, 0), (1, 1)]


def test_redesign_isolation_error():
    # s2 (class 2) serves only c1 (class 1) and would be left with nothing
    g = CompatibilityGraph(2, 2, frozenset([(0, 0), (1, 0), (0, 1)]))
    p = PriorityPartition(((0,), (1,)), ((0,), (1,)), (QoSTarget.ed(1.0), QoSTarget.ed(2.0)), ((1.0,), (1.0,)))
    with pytest.raises(ModelError):
        redesign_graph(g, p)


def test_partition_validation(ex1_graph):
    ok = dict(customer_classes=((0,), (1, 2)), server_classes=((0,), (1, 2)), betas=((1.0,), (0.5, 0.5)))
    with pytest.raises(ModelError):
        PriorityPartition(targets=(QoSTarget.ed(1.0), QoSTarget.qd(1.0)), **ok)
    with pytest.raises(ModelError):
        PriorityPartition(targets=(QoSTarget.ed(2.0), QoSTarget.ed(1.0)), **ok)
    with pytest.raises(ModelError):
        PriorityPartition(targets=(QoSTarget.qd(0.5), QoSTarget.qd(1.0)), **ok)
    with pytest.raises(ModelError):
        PriorityPartition(targets=(QoSTarget.qed(), QoSTarget.qed()), **ok)
    p = PriorityPartition(targets=(QoSTarget.qd(1.0), QoSTarget.ed(1.0)), **ok)
    p.validate_for(ex1_graph)
    bad = PriorityPartition(((0,), (1, 2)), ((1,), (0, 2)), (QoSTarget.qd(1.0), QoSTarget.ed(1.0)),
                            ((1.0,), (0.5, 0.5)))
    with pytest.raises(ModelError, match="no compatible"):
        bad.validate_for(ex1_graph)


def test_example2_workforce():
    assert run_fixture("ex2_ed", 20).workforce == (25, 12, 18, 13, 10)
    assert run_fixture("ex2_qd", 200).workforce == (440, 173, 273, 180, 140)
    assert run_fixture("ex2_qd", 100).workforce == (220, 87, 137, 90, 70)


def test_example3_qed_workforce():
    assert run_fixture("ex3_qed", 40).workforce == (26, 21, 26, 21, 26, 21)


def test_single_class_equals_whole_system(ex1_spec):
    p = PriorityPartition(((0, 1, 2),), ((0, 1, 2),), (QoSTarget.qed(),), (BETA1,))
    dd = design_differentiated(ex1_spec, p)
    assert np.allclose(dd.workforce_real, design_qed(ex1_spec, BETA1).workforce_real, rtol=1e-15)
    assert dd.graph == ex1_spec.graph


def test_class_errors_are_annotated():
    cfg = load_config("ex2_ed")
    p = cfg.design.partition()
    broken = PriorityPartition(p.customer_classes, p.server_classes, p.targets,
                               (p.betas[0], (0.99, 0.01), p.betas[2]))
    with pytest.raises(CRPViolation, match="class 2"):
        design_differentiated(cfg.spec, broken)


def test_combined_rates_sum_to_one():
    dd = run_fixture("ex2_mixed", 200)
    comb = dd.combined_rates()
    assert comb.total() == pytest.approx(1.0, abs=1e-12)
    for cd in dd.classes:
        assert cd.result.rates.identity_error(cd.result.adjusted_alpha, cd.result.beta) <= 1e-9


def test_beta_dimension_checked(ex1_spec):
    with pytest.raises(ModelError):
        design_qed(ex1_spec, (0.5, 0.5))
    with pytest.raises(ModelError):
        design_qed(ex1_spec, ProbabilityVector((0.5, 0.5)))
    only = SystemSpec(CompatibilityGraph(1, 1, frozenset([(0, 0)])), 3.0, ProbabilityVector((1.0,)),
                      {(0, 0): Exponential(1.0)}, (Exponential(1.0),))
    assert design_qed(only, (1.0,)).workforce == (3,)
