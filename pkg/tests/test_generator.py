import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mm1040.engine import FilingStatus, mutant_engine, reference_engine
from mm1040.errors import InvalidInputError, SutProtocolError
from mm1040.generator import (GeneratorConfig, Verdict, make_rng, required_consecutive_passes, run_relation,
                              sample_source, uniform_perturb)
from mm1040.relations import RELATION_IDS, deviance, equivalent_except, premise_holds, relation

MFJ, MFS = FilingStatus.MFJ, FilingStatus.MFS


def exact_k(b, theta):
    """Smallest K with theta**K <= 1/B, in rational arithmetic."""
    b, theta = Fraction(str(b)), Fraction(str(theta))
    k = 0
    while theta ** k * b > 1:
        k += 1
    return k


# -- stopping rule -------------------------------------------------------------


@pytest.mark.parametrize("b,theta,k", [(100, 0.95, 90), (1, 0.95, 0), (100, 0.5, 7), (4, 0.5, 2)])
def test_required_passes_examples(b, theta, k):
    assert required_consecutive_passes(b, theta) == k


@pytest.mark.parametrize("b", [10, 100, 1000])
@pytest.mark.parametrize("theta", [0.9, 0.95, 0.99])
def test_required_passes_grid_matches_exact(b, theta):
    assert required_consecutive_passes(b, theta) == exact_k(b, theta)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**6), st.integers(1, 999))
def test_required_passes_property(b, permille):
    # K is minimal: theta**K <= 1/B < theta**(K-1), checked in rationals
    theta = Fraction(permille, 1000)
    k = required_consecutive_passes(b, permille / 1000)
    assert theta ** k * b <= 1
    assert k == 0 or theta ** (k - 1) * b > 1


@pytest.mark.parametrize("b,theta", [(0.5, 0.9), (100, 0), (100, 1), (100, 1.5), (float("nan"), 0.5)])
def test_required_passes_rejects_bad_parameters(b, theta):
    with pytest.raises(InvalidInputError):
        required_consecutive_passes(b, theta)


def test_config_validation():
    assert GeneratorConfig().required_passes == 90
    with pytest.raises(InvalidInputError):
        GeneratorConfig(theta=1.0)
    with pytest.raises(InvalidInputError):
        GeneratorConfig(delta=-1)
    with pytest.raises(InvalidInputError):
        GeneratorConfig(seed=-1)


# -- sampling -------------------------------------------------------------------


def test_rel3_source_shape():
    rng = np.random.default_rng(0)
    for _ in range(200):
        _, (x,) = sample_source(relation(3), rng)
        assert x.sts is MFS and 0 < x.l27 <= 1_000_00


def test_rel4_source_shape():
    rng = np.random.default_rng(0)
    cfg = GeneratorConfig()
    for _ in range(200):
        _, (x,) = sample_source(relation(4), rng)
        assert x.sts is MFJ and 56_844_00 < x.agi <= cfg.agi_max


def test_sampling_is_seeded():
    def two():
        rng = make_rng(42, 3)
        return sample_source(relation(3), rng), sample_source(relation(3), rng)

    a, b = two()
    assert a != b
    assert two() == (a, b)


def test_rel3_followup_zeroes_claim():
    rng = np.random.default_rng(1)
    branch, src = sample_source(relation(3), rng)
    (y,) = uniform_perturb(src, relation(3), rng, branch)
    assert y == src[0].replace(l27=0)


def test_rel6_followup_bounded_by_source():
    rng = np.random.default_rng(2)
    branch, (x,) = sample_source(relation(6), rng)
    x = x.replace(l27=800_00)
    for _ in range(100):
        (y,) = uniform_perturb((x,), relation(6), rng, branch)
        assert 0 <= y.l27 <= 800_00
        assert equivalent_except(x, y, {"l27"})


def test_rel1_age_followup():
    rng = np.random.default_rng(3)
    rel = relation(1)
    _, (x,) = sample_source(rel, rng)
    x = x.replace(age=70)
    for _ in range(100):
        (y,) = uniform_perturb((x,), rel, rng, 0)
        assert 18 <= y.age <= 64
        assert equivalent_except(x, y, {"age"})


def test_sampled_tuples_respect_limits():
    cfg = GeneratorConfig(max_credit=200_00)
    rng = np.random.default_rng(4)
    for rel_id in (3, 6, 7, 11):
        for _ in range(50):
            _, (x,) = sample_source(relation(rel_id), rng, cfg)
            assert max(x.l27, x.l19, x.l29) <= 200_00


# -- run_relation -----------------------------------------------------------------


def strip(cases):
    return [(c.seq, c.case, c.deviance, c.label) for c in cases]


@pytest.mark.parametrize("rel_id", RELATION_IDS)
def test_runs_reproducible_and_premises_valid(rel_id):
    rel = relation(rel_id)
    cfg = GeneratorConfig(seed=7, max_cases=400)
    a = run_relation(reference_engine(), rel, cfg)
    b = run_relation(reference_engine(), rel, cfg)
    assert a.n_cases == 400 and strip(a.cases) == strip(b.cases)
    for lc in a.cases:
        assert premise_holds(rel, lc.case.records)
        assert lc.deviance == deviance(rel, lc.case.outputs)
        assert lc.failed == (lc.deviance > cfg.delta)
    assert a.n_fail == 0


def test_seed_changes_cases():
    cfg = GeneratorConfig(seed=1, max_cases=50)
    a = run_relation(reference_engine(), relation(7), cfg)
    b = run_relation(reference_engine(), relation(7), GeneratorConfig(seed=2, max_cases=50))
    assert strip(a.cases) != strip(b.cases)


def test_labels_and_counts_for_mixed_mutant():
    cfg = GeneratorConfig(seed=42, max_cases=20_000)
    res = run_relation(mutant_engine("M5"), relation(16), cfg)
    assert res.verdict is Verdict.FALSIFIED
    assert res.n_fail == sum(c.failed for c in res.cases) > 0
    assert res.n_pass == sum(not c.failed for c in res.cases) > 0
    assert res.max_deviance == max(c.deviance for c in res.cases)
    # a failing case ends its source
    for prev, cur in zip(res.cases, res.cases[1:]):
        if prev.failed:
            assert prev.case.records[0] != cur.case.records[0]


def test_source_retired_after_k_passes():
    cfg = GeneratorConfig(seed=3, max_cases=1_000)
    res = run_relation(reference_engine(), relation(3), cfg)
    assert res.verdict is Verdict.STATISTICALLY_PASSED
    # every run of consecutive cases sharing a source is exactly K long, bar the truncated tail
    runs, prev, length = [], None, 0
    for lc in res.cases:
        src = lc.case.records[0]
        if src == prev:
            length += 1
        else:
            if prev is not None:
                runs.append(length)
            prev, length = src, 1
    assert runs and all(r == 90 for r in runs)
    assert res.sources_retired == len(runs)


@pytest.mark.parametrize("mutant,rel_id", [("M1", 3), ("M2", 4)])
def test_all_fail_pattern(mutant, rel_id):
    res = run_relation(mutant_engine(mutant), relation(rel_id), GeneratorConfig(seed=42, max_cases=2_000))
    assert res.verdict is Verdict.FALSIFIED
    assert res.n_pass == 0 and res.n_fail == 2_000


def test_m1_max_deviance_hits_credit_cap():
    res = run_relation(mutant_engine("M1"), relation(3), GeneratorConfig(seed=42, timeout=2))
    assert abs(res.max_deviance - 1_000_00) <= 95


def test_inconclusive_when_k_unreachable():
    class Slow:
        name = "slow"

        def __call__(self, r):
            time.sleep(0.03)
            return reference_engine()(r)

    res = run_relation(Slow(), relation(6), GeneratorConfig(timeout=1))
    assert res.n_fail == 0 and res.n_pass < 90
    assert res.verdict is Verdict.INCONCLUSIVE and res.truncated


def test_protocol_errors_discarded_then_fatal():
    ref = reference_engine()

    class Flaky:
        calls = 0

        def __call__(self, r):
            self.calls += 1
            if self.calls % 7 == 0:
                raise SutProtocolError("hiccup")
            return ref(r)

    res = run_relation(Flaky(), relation(7), GeneratorConfig(max_cases=300))
    assert res.n_cases == 300 and res.n_fail == 0

    class Broken:
        def __call__(self, r):
            raise SutProtocolError("dead")

    with pytest.raises(SutProtocolError):
        run_relation(Broken(), relation(7), GeneratorConfig(max_cases=300))


def test_injected_clock_controls_budget():
    ticks = iter(range(10**6))
    res = run_relation(reference_engine(), relation(3), GeneratorConfig(timeout=500),
                       clock=lambda: float(next(ticks)))
    assert 0 < res.n_cases < 500
