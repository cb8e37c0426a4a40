"""Classification trees that respect the source -> follow-up feature order.

Columns carry a position suffix: ``_1``/``_2`` for source records and
``_3``/``_4`` for follow-ups. Source columns (group 1) may always be split
on. A follow-up column (group 2) becomes eligible once the path above the
node has split on a source column, or when it is associated (|Pearson r| >
rho on the node's rows) with each of its own source-side counterparts, which
means the source context is already implied. ``rho = 1`` gives a strict
order and ``rho = 0`` turns the constraint off.

Splits otherwise follow CART with Gini impurity. Ties go to the lower group,
then the earlier column, then the smaller threshold.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import TaxReturnInput, default_config, schedule_a_total
from .errors import DegenerateSuiteError, InvalidInputError

PASSED, FAILED = "passed", "failed"

# base feature name -> extractor over (record, output)
FEATURES = (
    ("sts", lambda r, out: r.sts.code),
    ("age", lambda r, out: r.age),
    ("blind", lambda r, out: int(r.blind)),
    ("s_age", lambda r, out: r.s_age),
    ("s_blind", lambda r, out: int(r.s_blind)),
    ("AGI", lambda r, out: r.agi / 100),
    ("withholding", lambda r, out: r.withholding / 100),
    ("L27", lambda r, out: r.l27 / 100),
    ("QC", lambda r, out: r.qc),
    ("OD", lambda r, out: r.od),
    ("L19", lambda r, out: r.l19 / 100),
    ("L29", lambda r, out: r.l29 / 100),
    ("MDE", lambda r, out: r.mde / 100),
    ("other_itemized", lambda r, out: r.other_itemized / 100),
    ("iz", lambda r, out: int(r.iz)),
    ("L12", lambda r, out: schedule_a_total(r, default_config()) / 100),
    ("FTR", lambda r, out: out / 100),
)
FEATURE_NAMES = tuple(name for name, _ in FEATURES)

# score improvements below this (relative to node size) count as no gain
GAIN_EPS = 1e-9


@dataclass
class FeatureFrame:
    columns: list
    groups: list
    fields: list
    X: np.ndarray
    y: np.ndarray  # 1 = failed, 0 = passed

    def __len__(self):
        return len(self.y)

    def group_of(self, column: str) -> int:
        return self.groups[self.columns.index(column)]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.columns.index(name)]

    @classmethod
    def from_arrays(cls, X, y, columns=None, groups=None, fields=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        m = X.shape[1]
        columns = list(columns) if columns is not None else [f"f{j}_1" for j in range(m)]
        groups = list(groups) if groups is not None else [1] * m
        fields = list(fields) if fields is not None else [c.rsplit("_", 1)[0] for c in columns]
        if not (len(columns) == len(groups) == len(fields) == m) or len(y) != X.shape[0]:
            raise InvalidInputError("frame dimensions disagree")
        return cls(columns, groups, fields, X, y)


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 12
    min_samples_leaf: int = 20
    criterion: str = "gini"
    association_threshold: float = 0.1

    def __post_init__(self):
        if self.max_depth < 0 or self.min_samples_leaf < 1:
            raise InvalidInputError("max_depth must be >= 0 and min_samples_leaf >= 1")
        if self.criterion != "gini":
            raise InvalidInputError("only the gini criterion is supported")
        if not 0 <= self.association_threshold <= 1:
            raise InvalidInputError("association_threshold must lie in [0, 1]")


@dataclass
class TreeNode:
    n_passed: int
    n_failed: int
    depth: int = 0
    feature: int | None = None
    column: str | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    via_association: bool = False
    node_id: int = field(default=0, compare=False)

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def support(self) -> int:
        return self.n_passed + self.n_failed

    @property
    def label(self) -> str:
        return FAILED if self.n_failed >= self.n_passed else PASSED

    def nodes(self):
        yield self
        if not self.is_leaf:
            yield from self.left.nodes()
            yield from self.right.nodes()

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]

    @property
    def height(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.height, self.right.height)


def flatten(cases, rel, allow_single_label: bool = False) -> FeatureFrame:
    """One row per labeled case, columns ``<feature>_<position>``."""
    cases = list(cases)
    if not cases:
        raise DegenerateSuiteError("empty suite")
    positions = (1, 2, 3, 4) if rel.arity == 4 else (1, 3)
    columns, groups, fields = [], [], []
    for pos in positions:
        for name in FEATURE_NAMES:
            columns.append(f"{name}_{pos}")
            groups.append(1 if pos <= 2 else 2)
            fields.append(name)
    X = np.empty((len(cases), len(columns)))
    y = np.empty(len(cases), dtype=np.int64)
    extract = [fn for _, fn in FEATURES]
    for i, lc in enumerate(cases):
        recs, outs = lc.case.records, lc.case.outputs
        if len(recs) != rel.arity:
            raise InvalidInputError(f"case {lc.seq} has {len(recs)} records, relation needs {rel.arity}")
        row = [fn(r, o) for r, o in zip(recs, outs) for fn in extract]
        X[i] = row
        y[i] = 1 if lc.label == FAILED else 0
    if not allow_single_label and (y.min() == y.max()):
        raise DegenerateSuiteError(f"all {len(y)} cases are {FAILED if y[0] else PASSED}")
    return FeatureFrame(columns, groups, fields, X, y)


def gini(labels) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        raise InvalidInputError("gini of an empty node")
    if y.dtype.kind in "USO":
        y = y == FAILED
    p = float(np.mean(y))
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def association(a, b) -> float:
    """|Pearson r| of two columns; 0 when either is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = float(da @ da), float(db @ db)
    if sa <= 0.0 or sb <= 0.0:
        return 0.0
    return min(1.0, abs(float(da @ db)) / np.sqrt(sa * sb))


def _prefixes(frame: FeatureFrame, j: int) -> list:
    g, name = frame.groups[j], frame.fields[j]
    return [i for i, (gi, fi) in enumerate(zip(frame.groups, frame.fields)) if gi < g and fi == name]


def eligible_features(path, frame: FeatureFrame, params: TreeParams, rows=None) -> set:
    """Columns a node may split on, given the column indices split on above it."""
    return set(_eligibility(path, frame, params, rows))


def _eligibility(path, frame, params, rows=None) -> dict:
    """column index -> True when admitted via the association clause."""
    rho = params.association_threshold
    used_groups = {frame.groups[j] for j in path}
    out = {}
    for j, g in enumerate(frame.groups):
        if g == 1 or (g - 1) in used_groups or rho == 0:
            out[j] = False
            continue
        prefixes = [i for i in _prefixes(frame, j) if i not in path]
        if not prefixes:
            continue
        X = frame.X if rows is None else frame.X[rows]
        if all(association(X[:, j], X[:, i]) > rho for i in prefixes):
            out[j] = True
    return out


def _best_split_column(col, y, n_failed, msl):
    """Best threshold on one column: (score, threshold) or None."""
    n = len(y)
    order = np.argsort(col, kind="stable")
    v = col[order]
    cuts = np.nonzero(v[1:] != v[:-1])[0]
    if cuts.size == 0:
        return None
    n_left = cuts + 1
    valid = (n_left >= msl) & (n - n_left >= msl)
    if not valid.any():
        return None
    cuts, n_left = cuts[valid], n_left[valid]
    f_left = np.cumsum(y[order])[cuts]
    p_left = n_left - f_left
    n_right = n - n_left
    f_right = n_failed - f_left
    p_right = n_right - f_right
    score = (f_left * f_left + p_left * p_left) / n_left + (f_right * f_right + p_right * p_right) / n_right
    k = int(np.argmax(score))
    return float(score[k]), (float(v[cuts[k]]) + float(v[cuts[k] + 1])) / 2


def fit(frame: FeatureFrame, params: TreeParams | None = None) -> TreeNode:
    params = params or TreeParams()
    if len(frame) == 0:
        raise DegenerateSuiteError("cannot fit an empty frame")
    counter = iter(range(1 << 62))

    def grow(rows, depth, path):
        y = frame.y[rows]
        n = len(rows)
        n_failed = int(y.sum())
        node = TreeNode(n - n_failed, n_failed, depth, node_id=next(counter))
        if n_failed in (0, n) or depth >= params.max_depth or n < 2 * params.min_samples_leaf:
            return node
        parent_score = (n_failed * n_failed + (n - n_failed) ** 2) / n
        best = None
        elig = _eligibility(path, frame, params, rows)
        for j in sorted(elig, key=lambda j: (frame.groups[j], j)):
            found = _best_split_column(frame.X[rows, j], y, n_failed, params.min_samples_leaf)
            if found is None:
                continue
            score, thr = found
            if score - parent_score <= GAIN_EPS * n:
                continue
            if best is None or score > best[0]:
                best = (score, j, thr)
        if best is None:
            return node
        _, j, thr = best
        mask = frame.X[rows, j] <= thr
        node.feature, node.column, node.threshold = j, frame.columns[j], thr
        node.via_association = elig[j]
        node.left = grow(rows[mask], depth + 1, path + [j])
        node.right = grow(rows[~mask], depth + 1, path + [j])
        return node

    return grow(np.arange(len(frame)), 0, [])


def predict(tree: TreeNode, row) -> str:
    node = tree
    while not node.is_leaf:
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.label


def predict_frame(tree: TreeNode, X) -> np.ndarray:
    """Vectorized predict: 1 for failed, 0 for passed."""
    X = np.asarray(X)
    out = np.empty(len(X), dtype=np.int64)

    def walk(node, rows):
        if node.is_leaf:
            out[rows] = 1 if node.label == FAILED else 0
            return
        mask = X[rows, node.feature] <= node.threshold
        walk(node.left, rows[mask])
        walk(node.right, rows[~mask])

    walk(tree, np.arange(len(X)))
    return out


def accuracy(tree: TreeNode, frame: FeatureFrame) -> float:
    return float(np.mean(predict_frame(tree, frame.X) == frame.y))


def _fmt_thr(t: float) -> str:
    return f"{t:.10g}"


def path_predicates(tree: TreeNode) -> list:
    """(conjunction, label, support) per leaf; most failures first."""
    out = []

    def walk(node, conds):
        if node.is_leaf:
            text = " and ".join(conds) if conds else "true"
            out.append((text, node.label, node.support, node.n_failed))
            return
        t = _fmt_thr(node.threshold)
        walk(node.left, conds + [f"{node.column} <= {t}"])
        walk(node.right, conds + [f"{node.column} > {t}"])

    walk(tree, [])
    out.sort(key=lambda p: (-p[3], -p[2], p[0]))
    return [(text, label, support) for text, label, support, _ in out]


def predicates_report(tree: TreeNode) -> str:
    lines = []
    for text, label, support in path_predicates(tree):
        lines.append(f"[{label}] support={support}: {text}")
    return "\n".join(lines) + "\n"


LEAF_COLORS = {FAILED: "#f4a261", PASSED: "#8fd694"}  # orange / green


def to_dot(tree: TreeNode, name: str = "explanation") -> str:
    lines = [f"digraph {name} {{",
             '  node [shape=box, style="filled,rounded", fontname="helvetica"];',
             '  edge [fontname="helvetica"];']
    for node in tree.nodes():
        counts = f"passed = {node.n_passed}, failed = {node.n_failed}"
        if node.is_leaf:
            label = f"{node.label}\\nsamples = {node.support}\\n{counts}"
            color = LEAF_COLORS[node.label]
        else:
            label = f"{node.column} <= {_fmt_thr(node.threshold)}\\nsamples = {node.support}\\n{counts}"
            color = "#ffffff"
        lines.append(f'  n{node.node_id} [label="{label}", fillcolor="{color}"];')
    for node in tree.nodes():
        if not node.is_leaf:
            lines.append(f'  n{node.node_id} -> n{node.left.node_id} [label="yes"];')
            lines.append(f'  n{node.node_id} -> n{node.right.node_id} [label="no"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(tree: TreeNode) -> dict:
    def enc(node):
        d = {"counts": {PASSED: node.n_passed, FAILED: node.n_failed}, "depth": node.depth}
        if node.is_leaf:
            d.update(label=node.label, support=node.support)
        else:
            d.update(feature=node.column, index=node.feature, threshold=node.threshold,
                     via_association=node.via_association, left=enc(node.left), right=enc(node.right))
        return d

    return enc(tree)


def from_json(data: dict) -> TreeNode:
    counter = iter(range(1 << 62))

    def dec(d):
        node = TreeNode(d["counts"][PASSED], d["counts"][FAILED], d["depth"], node_id=next(counter))
        if "feature" in d:
            node.feature, node.column, node.threshold = d["index"], d["feature"], d["threshold"]
            node.via_association = d["via_association"]
            node.left, node.right = dec(d["left"]), dec(d["right"])
        return node

    return dec(data)


def dumps(tree: TreeNode) -> str:
    return json.dumps(to_json(tree), indent=1) + "\n"
