import hashlib

import numpy as np
import pydot
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mm1040 import lextree
from mm1040.errors import DegenerateSuiteError, InvalidInputError
from mm1040.lextree import FeatureFrame, TreeParams
from mm1040.relations import relation

from oracles import as_tuples, brute_force_tree, mutant_suite, ordering_violations, pearson_two_pass


@pytest.fixture(scope="module")
def m4_suite():
    return mutant_suite("M4", 13, 20_000).cases


@pytest.fixture(scope="module")
def m4_frame(m4_suite):
    return lextree.flatten(m4_suite, relation(13))


@pytest.fixture(scope="module")
def m4_tree(m4_frame):
    return lextree.fit(m4_frame, TreeParams())


# -- gini / association ---------------------------------------------------------


def test_gini_examples():
    assert lextree.gini([0] * 10) == 0
    assert lextree.gini([0] * 5 + [1] * 5) == pytest.approx(0.5)
    assert lextree.gini([1] * 2 + [0] * 8) == pytest.approx(0.32)
    assert lextree.gini(["failed", "passed"]) == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        lextree.gini([])


def test_association_examples():
    a = np.array([1.0, 2.0, 5.0, 3.0])
    assert lextree.association(a, a) == pytest.approx(1.0)
    assert lextree.association(a, -a) == pytest.approx(1.0)
    assert lextree.association(np.ones(4), a) == 0.0


@settings(max_examples=150)
@given(hnp.arrays(np.float64, st.integers(2, 40), elements=st.integers(-1000, 1000).map(float)),
       st.randoms(use_true_random=False))
def test_association_matches_two_pass(a, rnd):
    b = np.array([rnd.randint(-1000, 1000) for _ in a], dtype=float)
    assert lextree.association(a, b) == pytest.approx(pearson_two_pass(list(a), list(b)), abs=1e-9)
    assert 0.0 <= lextree.association(a, b) <= 1.0


def test_association_on_rel6_suite():
    from mm1040.engine import reference_engine
    from mm1040.generator import GeneratorConfig, run_relation

    res = run_relation(reference_engine(), relation(6), GeneratorConfig(seed=5, max_cases=2_000))
    frame = lextree.flatten(res.cases, relation(6), allow_single_label=True)
    base, follow = frame.column("L27_1"), frame.column("L27_3")
    r = lextree.association(base, follow)
    assert 0 < r <= 1
    assert r == pytest.approx(pearson_two_pass(list(base), list(follow)), rel=1e-9)


# -- flatten ----------------------------------------------------------------


def test_flatten_columns(m4_suite, m4_frame):
    for c in ("AGI_1", "MDE_1", "iz_1", "MDE_3", "FTR_1", "FTR_3", "L12_1"):
        assert c in m4_frame.columns
    assert len(m4_frame) == len(m4_suite)
    assert m4_frame.group_of("AGI_1") == 1 and m4_frame.group_of("AGI_3") == 2
    assert m4_frame.y.sum() == sum(c.failed for c in m4_suite)


def test_flatten_arity4_positions():
    res = mutant_suite("M3", 12, 200)
    frame = lextree.flatten(res.cases, relation(12), allow_single_label=True)
    assert {c.rsplit("_", 1)[1] for c in frame.columns} == {"1", "2", "3", "4"}
    assert frame.group_of("QC_2") == 1 and frame.group_of("QC_4") == 2


def test_flatten_rejects_degenerate():
    res = mutant_suite("M1", 3, 100)
    with pytest.raises(DegenerateSuiteError):
        lextree.flatten(res.cases, relation(3))
    with pytest.raises(DegenerateSuiteError):
        lextree.flatten([], relation(3))


# -- eligibility -------------------------------------------------------------


def toy_frame(follow_equals_base=False, n=60, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 100, n).astype(float)
    follow = base.copy() if follow_equals_base else rng.integers(0, 100, n).astype(float)
    X = np.column_stack([base, follow])
    y = (base > 50).astype(np.int64)
    return FeatureFrame(["v_1", "v_3"], [1, 2], ["v", "v"], X, y)


def test_root_admits_only_base_columns():
    frame = toy_frame()
    assert lextree.eligible_features([], frame, TreeParams()) == {0}


def test_base_split_unlocks_followups():
    frame = toy_frame()
    assert lextree.eligible_features([0], frame, TreeParams()) == {0, 1}


def test_identical_followup_eligible_by_association():
    frame = toy_frame(follow_equals_base=True)
    assert lextree.eligible_features([], frame, TreeParams()) == {0, 1}


def test_rho_zero_disables_ordering():
    frame = toy_frame()
    assert lextree.eligible_features([], frame, TreeParams(association_threshold=0)) == {0, 1}


def test_tree_params_validation():
    with pytest.raises(InvalidInputError):
        TreeParams(association_threshold=1.5)
    with pytest.raises(InvalidInputError):
        TreeParams(min_samples_leaf=0)
    with pytest.raises(InvalidInputError):
        TreeParams(criterion="entropy")


# -- fitting ------------------------------------------------------------------


def random_frame(rng):
    n = int(rng.integers(2, 201))
    d = int(rng.integers(1, 7))
    X = rng.integers(0, int(rng.integers(2, 30)), size=(n, d)).astype(float)
    w = rng.normal(size=d)
    y = ((X @ w + rng.normal(scale=2, size=n)) > np.median(X @ w)).astype(np.int64)
    return FeatureFrame.from_arrays(X, y)


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    frame = random_frame(rng)
    params = TreeParams(max_depth=int(rng.integers(1, 8)), min_samples_leaf=int(rng.integers(1, 10)))
    got = as_tuples(lextree.fit(frame, params))
    want = brute_force_tree(frame.X.tolist(), frame.y.tolist(), params.max_depth, params.min_samples_leaf)
    assert got == want


def test_pure_frame_is_single_leaf():
    X = np.arange(50, dtype=float).reshape(-1, 1)
    tree = lextree.fit(FeatureFrame.from_arrays(X, np.zeros(50, dtype=np.int64)))
    assert tree.is_leaf and tree.label == "passed" and tree.height == 0


def test_m4_tree_quality(m4_frame, m4_tree):
    assert lextree.accuracy(m4_tree, m4_frame) >= 0.95
    assert m4_tree.height <= 12
    assert ordering_violations(m4_tree, m4_frame, 0.1) == []


def test_predict_gives_leaf_majority(m4_frame, m4_tree):
    for i in range(0, len(m4_frame), 997):
        row = m4_frame.X[i]
        node = m4_tree
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        assert lextree.predict(m4_tree, row) == node.label
    preds = lextree.predict_frame(m4_tree, m4_frame.X)
    assert [("failed" if p else "passed") for p in preds[:200]] == [lextree.predict(m4_tree, r) for r in m4_frame.X[:200]]


def test_top_failing_predicate_uses_base_column(m4_tree):
    preds = lextree.path_predicates(m4_tree)
    text, label, support = preds[0]
    assert label == "failed" and support > 0
    assert "_1 " in text
    assert sum(s for _, _, s in preds) == m4_tree.support


def test_dot_parses_and_has_orange_leaf(m4_tree):
    dot = lextree.to_dot(m4_tree)
    (graph,) = pydot.graph_from_dot_data(dot)
    nodes = [n for n in graph.get_nodes() if n.get_name()[1:].isdigit()]
    assert len(nodes) == len(list(m4_tree.nodes()))
    assert len(graph.get_edges()) == 2 * (len(nodes) - len(m4_tree.leaves()))
    assert any('#f4a261' in (n.get("fillcolor") or "") for n in nodes)


def test_json_round_trip(m4_tree):
    again = lextree.from_json(lextree.to_json(m4_tree))
    assert lextree.to_dot(again) == lextree.to_dot(m4_tree)
    assert as_tuples(again) == as_tuples(m4_tree)


def test_fit_deterministic(m4_frame, m4_tree):
    again = lextree.fit(m4_frame, TreeParams())
    h = lambda t: hashlib.sha256(lextree.to_dot(t).encode()).hexdigest()  # noqa: E731
    assert h(again) == h(m4_tree)


def test_depth_and_leaf_size_respected(m4_frame):
    tree = lextree.fit(m4_frame, TreeParams(max_depth=3, min_samples_leaf=500))
    assert tree.height <= 3
    assert all(leaf.support >= 500 for leaf in tree.leaves())
