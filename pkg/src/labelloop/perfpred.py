"""Stopping-time prediction: per-iteration convergence signals, a
regression forest over them, the tau-threshold stopping rule, and the
predictor evaluation harness.

Signals are averaged over a fixed random sample T of unlabeled training
instances. The forest regresses the normalized test F1 (each run's curve
divided by its own maximum), i.e. how much of the quality the run will
ever reach has been reached so far.

Feature layout per iteration: base features (training-set size, one-hot
acquisition strategy, label count) followed, for each of the six signals
(cv_f1, neg_entropy, max_prob, margin, agreement, neg_kl), by the current
value plus the previous `history` values (earliest value repeated when the
run is younger than the window; a missing cv_f1 contributes 0.0).

Curve-corpus files are record-lines with keys: dataset, run_id, strategy,
iter, n_train, n_labels, cv_f1 (nullable), neg_entropy, max_prob, margin,
agreement, neg_kl, test_f1.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fsl
from .errors import ValidationError
from .selection import STRATEGIES, entropy_score, kl_divergence, top2_gap

SIGNALS = ("cv_f1", "neg_entropy", "max_prob", "margin", "agreement", "neg_kl")


@dataclass(frozen=True)
class IterationSnapshot:
    """Convergence signals of one training round, averaged over sample T.

    agreement is the share of T whose argmax prediction matches the
    previous round; neg_kl is -mean KL(current || previous). Both take
    their no-predecessor values (1.0 and 0.0) at the first round. cv_f1 is
    None until at least two classes are labeled and at least one instance
    can be held out.
    """

    iter: int
    n_train: int
    neg_entropy: float
    max_prob: float
    margin: float
    agreement: float
    neg_kl: float
    cv_f1: float | None = None
    posteriors_T: np.ndarray | None = None  # carried to compute the next round's deltas

    def signal(self, name: str) -> float:
        value = getattr(self, name)
        if name == "cv_f1" and value is None:
            return 0.0
        return float(value)


def sample_T(pool, size: int = 1000, seed: int = 0) -> list[str]:
    """Uniform sample without replacement of min(size, |pool|) instance ids."""
    if not pool:
        raise ValidationError("cannot sample from an empty pool")
    ids = [inst.id for inst in pool]
    if len(ids) <= size:
        return ids
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(ids), size=size, replace=False))
    return [ids[i] for i in chosen]


def _cv_fold_ids(labels: np.ndarray, folds: int = 5) -> np.ndarray:
    """Per-instance fold assignment: stratified round-robin; classes with
    fewer than `folds` members spread one per fold (leave-one-out within
    the class); singleton classes get -1 (never held out)."""
    fold_of = np.full(len(labels), -1, dtype=np.int64)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) == 1:
            continue
        n_folds = min(folds, len(members))
        for j, idx in enumerate(members):
            fold_of[idx] = j % n_folds
    return fold_of


def cross_val_f1(model_kind: str, label_set, encoder_descriptor, desc_emb,
                 embeddings: np.ndarray, y: np.ndarray, config, folds: int = 5) -> float | None:
    """Stratified cross-validation macro F1 on the labeled set, retraining
    from the zero-shot state per fold. None when fewer than two classes are
    labeled or nothing can be held out."""
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        return None
    fold_of = _cv_fold_ids(y, folds)
    held = fold_of >= 0
    if not np.any(held):
        return None
    gold: list[int] = []
    pred: list[int] = []
    for f in range(int(fold_of.max()) + 1):
        test_mask = fold_of == f
        if not np.any(test_mask):
            continue
        train_mask = ~test_mask
        model = fsl.train_embedded(model_kind, label_set, encoder_descriptor, desc_emb,
                                   embeddings[train_mask], y[train_mask], config)
        yhat = fsl.predict_labels(model, embeddings[test_mask])
        gold.extend(int(v) for v in y[test_mask])
        pred.extend(int(v) for v in yhat)
    return macro_f1_indexed(np.array(gold), np.array(pred), len(label_set))


def macro_f1_indexed(gold: np.ndarray, pred: np.ndarray, n_labels: int) -> float:
    """Unweighted mean over all labels of per-label F1; a label absent from
    both gold and predictions contributes 0."""
    if len(gold) == 0:
        raise ValidationError("macro F1 of empty input")
    if len(gold) != len(pred):
        raise ValidationError("gold and prediction lengths differ")
    f1s = []
    for lbl in range(n_labels):
        tp = int(np.sum((pred == lbl) & (gold == lbl)))
        fp = int(np.sum((pred == lbl) & (gold != lbl)))
        fn = int(np.sum((pred != lbl) & (gold == lbl)))
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(f1s))


def snapshot(model, T_embeddings: np.ndarray, previous: IterationSnapshot | None,
             labeled_embeddings: np.ndarray, labeled_y: np.ndarray,
             iteration: int, n_train: int, train_config=None,
             desc_emb: np.ndarray | None = None, cv_folds: int = 5) -> IterationSnapshot:
    """Compute the six convergence signals for the current model."""
    if len(T_embeddings) == 0:
        raise ValidationError("sample T is empty")
    probs = fsl.predict_proba(model, T_embeddings)
    neg_entropy = float(np.mean(-entropy_score(probs)))
    max_prob = float(np.mean(probs.max(axis=1)))
    margin = float(np.mean(top2_gap(probs)))
    if previous is None or previous.posteriors_T is None:
        agreement, neg_kl = 1.0, 0.0
    else:
        prev = previous.posteriors_T
        if prev.shape != probs.shape:
            raise ValidationError("sample T changed shape between iterations")
        agreement = float(np.mean(np.argmax(probs, axis=1) == np.argmax(prev, axis=1)))
        neg_kl = float(-np.mean(kl_divergence(probs, prev)))
    cv = None
    if len(labeled_y) and train_config is not None and desc_emb is not None:
        cv = cross_val_f1(model.kind, model.label_set, model.encoder, desc_emb,
                          labeled_embeddings, labeled_y, train_config, folds=cv_folds)
    return IterationSnapshot(
        iter=iteration, n_train=n_train, neg_entropy=neg_entropy, max_prob=max_prob,
        margin=margin, agreement=agreement, neg_kl=neg_kl, cv_f1=cv, posteriors_T=probs,
    )


def normalize_curve(f1_by_iter) -> np.ndarray:
    """Divide a test-F1 curve by its maximum; the result peaks at 1."""
    values = np.asarray(f1_by_iter, dtype=np.float64)
    if len(values) == 0:
        raise ValidationError("empty curve")
    peak = values.max()
    if peak <= 0:
        raise ValidationError("cannot normalize an all-zero curve")
    return values / peak


# --- feature extraction -----------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    """Fixes the feature layout: strategy vocabulary and history window."""

    strategy_vocab: tuple[str, ...] = STRATEGIES
    history: int = 5

    @property
    def dim(self) -> int:
        return 2 + len(self.strategy_vocab) + len(SIGNALS) * (self.history + 1)

    def feature_names(self) -> list[str]:
        names = ["n_train"] + [f"strategy={s}" for s in self.strategy_vocab] + ["n_labels"]
        for sig in SIGNALS:
            names.extend(f"{sig}[-{j}]" for j in range(self.history + 1))
        return names


def build_feature_row(snapshots: list[IterationSnapshot], strategy: str,
                      n_labels: int, spec: FeatureSpec) -> np.ndarray:
    """Features for the latest snapshot given the full history so far."""
    if not snapshots:
        raise ValidationError("need at least one snapshot")
    current = snapshots[-1]
    row = [float(current.n_train)]
    row.extend(1.0 if strategy == s else 0.0 for s in spec.strategy_vocab)
    row.append(float(n_labels))
    for sig in SIGNALS:
        series = [s.signal(sig) for s in snapshots]
        for back in range(spec.history + 1):
            row.append(series[max(0, len(series) - 1 - back)])
    return np.array(row)


# --- curve corpus -----------------------------------------------------------

@dataclass(frozen=True)
class CurveRow:
    dataset: str
    run_id: str
    strategy: str
    iter: int
    n_train: int
    n_labels: int
    neg_entropy: float
    max_prob: float
    margin: float
    agreement: float
    neg_kl: float
    test_f1: float
    cv_f1: float | None = None

    def to_snapshot(self) -> IterationSnapshot:
        return IterationSnapshot(
            iter=self.iter, n_train=self.n_train, neg_entropy=self.neg_entropy,
            max_prob=self.max_prob, margin=self.margin, agreement=self.agreement,
            neg_kl=self.neg_kl, cv_f1=self.cv_f1,
        )


def write_curve_rows(rows, fh):
    for row in rows:
        doc = {k: getattr(row, k) for k in (
            "dataset", "run_id", "strategy", "iter", "n_train", "n_labels",
            "cv_f1", "neg_entropy", "max_prob", "margin", "agreement", "neg_kl", "test_f1")}
        fh.write(json.dumps(doc, sort_keys=True) + "\n")


def read_curve_rows(fh) -> list[CurveRow]:
    rows = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        rows.append(CurveRow(**doc))
    return rows


def group_runs(rows) -> dict[tuple[str, str], list[CurveRow]]:
    """Group corpus rows into runs keyed by (dataset, run_id), iter-sorted."""
    runs: dict[tuple[str, str], list[CurveRow]] = {}
    for row in rows:
        runs.setdefault((row.dataset, row.run_id), []).append(row)
    for key in runs:
        runs[key] = sorted(runs[key], key=lambda r: r.iter)
    return runs


def corpus_feature_spec(rows, history: int = 5) -> FeatureSpec:
    vocab = tuple(sorted({row.strategy for row in rows}))
    return FeatureSpec(strategy_vocab=vocab, history=history)


def run_features_and_targets(run_rows: list[CurveRow], spec: FeatureSpec):
    """(feature matrix, normalized targets, n_train array, raw f1) per run."""
    snapshots: list[IterationSnapshot] = []
    features = []
    for row in run_rows:
        snapshots.append(row.to_snapshot())
        features.append(build_feature_row(snapshots, row.strategy, row.n_labels, spec))
    raw = np.array([row.test_f1 for row in run_rows])
    targets = normalize_curve(raw)
    n_train = np.array([row.n_train for row in run_rows])
    return np.stack(features), targets, n_train, raw


# --- regression forest ------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 8
    min_leaf: int = 2
    feature_subsample: int | None = None  # None: ceil(sqrt(d))
    bootstrap: bool = True


@dataclass
class _Tree:
    feature: np.ndarray    # split feature per node, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # leaf prediction (mean target)


@dataclass
class ForestModel:
    """Bagged regression trees with axis-aligned variance-reduction splits
    and mean-target leaves; predictions clamp to [0, 1].

    Fitting canonically sorts the training rows first and draws bootstrap
    indices from the seeded generator over the row count, so a fitted
    forest is invariant to training-row order given the seed.
    """

    trees: list[_Tree]
    config: ForestConfig
    feature_spec: FeatureSpec
    seed: int
    n_features: int


def _best_split(X, y, rows, feature, min_leaf):
    """(sse, threshold) of the best split on one feature, or None."""
    xs = X[rows, feature]
    order = np.argsort(xs, kind="stable")
    xs, ys = xs[order], y[rows][order]
    n = len(rows)
    boundary = np.flatnonzero(xs[:-1] < xs[1:]) + 1  # left-part sizes at value changes
    boundary = boundary[(boundary >= min_leaf) & (n - boundary >= min_leaf)]
    if len(boundary) == 0:
        return None
    csum = np.cumsum(ys)
    csum2 = np.cumsum(ys * ys)
    total, total2 = csum[-1], csum2[-1]
    left_n = boundary.astype(np.float64)
    left_sum, left_sum2 = csum[boundary - 1], csum2[boundary - 1]
    sse_left = left_sum2 - left_sum ** 2 / left_n
    right_n = n - left_n
    sse_right = (total2 - left_sum2) - (total - left_sum) ** 2 / right_n
    sse = sse_left + sse_right
    best = int(np.argmin(sse))  # first index on ties
    split_at = boundary[best]
    threshold = 0.5 * (xs[split_at - 1] + xs[split_at])
    return float(sse[best]), float(threshold)


def _fit_tree(X: np.ndarray, y: np.ndarray, rows: np.ndarray,
              cfg: ForestConfig, rng: np.random.Generator) -> _Tree:
    d = X.shape[1]
    m = cfg.feature_subsample or int(math.ceil(math.sqrt(d)))
    m = min(m, d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    # explicit stack, left child first, so node numbering and RNG use are
    # independent of recursion limits and reproducible
    root = new_node()
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        ys = y[node_rows]
        value[node] = float(ys.mean())
        if (cfg.max_depth is not None and depth >= cfg.max_depth) \
                or len(node_rows) < 2 * cfg.min_leaf or np.all(ys == ys[0]):
            continue
        candidates = np.sort(rng.choice(d, size=m, replace=False))
        best = None
        for f in candidates:
            found = _best_split(X, y, node_rows, int(f), cfg.min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None and m < d:
            # sampled features were constant here; fall back to the rest so
            # distinct rows can always be separated
            for f in range(d):
                if f in candidates:
                    continue
                found = _best_split(X, y, node_rows, f, cfg.min_leaf)
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], f, found[1])
        if best is None:
            continue
        _, f, thr = best
        mask = X[node_rows, f] <= thr
        left_rows, right_rows = node_rows[mask], node_rows[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        # push right first so the left child is processed first
        stack.append((right[node], right_rows, depth + 1))
        stack.append((left[node], left_rows, depth + 1))
    return _Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value),
    )


def forest_fit(X: np.ndarray, y: np.ndarray, config: ForestConfig = ForestConfig(),
               seed: int = 0, feature_spec: FeatureSpec | None = None) -> ForestModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ValidationError("empty training set")
    if len(X) < 2 * config.min_leaf:
        raise ValidationError(f"need at least {2 * config.min_leaf} rows")
    canonical = np.lexsort(tuple([y] + [X[:, f] for f in range(X.shape[1] - 1, -1, -1)]))
    X, y = X[canonical], y[canonical]
    seeds = np.random.SeedSequence(seed).spawn(config.n_trees)
    trees = []
    for tree_seed in seeds:
        rng = np.random.default_rng(tree_seed)
        if config.bootstrap:
            rows = np.sort(rng.integers(0, len(X), size=len(X)))
        else:
            rows = np.arange(len(X))
        trees.append(_fit_tree(X, y, rows, config, rng))
    return ForestModel(trees=trees, config=config, seed=seed,
                       feature_spec=feature_spec or FeatureSpec(),
                       n_features=X.shape[1])


def forest_predict_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValidationError(
            f"feature dimension {X.shape[1]} does not match training dimension {model.n_features}"
        )
    acc = np.zeros(len(X))
    for tree in model.trees:
        node = np.zeros(len(X), dtype=np.int32)
        while True:
            feat = tree.feature[node]
            active = feat >= 0
            if not np.any(active):
                break
            go_left = np.zeros(len(X), dtype=bool)
            go_left[active] = X[np.flatnonzero(active), feat[active]] <= tree.threshold[node[active]]
            node = np.where(active & go_left, tree.left[node],
                            np.where(active, tree.right[node], node))
        acc += tree.value[node]
    return np.clip(acc / len(model.trees), 0.0, 1.0)


def forest_predict(model: ForestModel, feature_vector: np.ndarray) -> float:
    return float(forest_predict_batch(model, feature_vector)[0])


def forest_dumps(model: ForestModel) -> bytes:
    doc = {
        "format": 1,
        "config": {
            "n_trees": model.config.n_trees, "max_depth": model.config.max_depth,
            "min_leaf": model.config.min_leaf, "feature_subsample": model.config.feature_subsample,
            "bootstrap": model.config.bootstrap,
        },
        "feature_spec": {"strategy_vocab": list(model.feature_spec.strategy_vocab),
                         "history": model.feature_spec.history},
        "seed": model.seed,
        "n_features": model.n_features,
        "trees": [
            {"feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
             "left": t.left.tolist(), "right": t.right.tolist(), "value": t.value.tolist()}
            for t in model.trees
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def forest_loads(data: bytes) -> ForestModel:
    doc = json.loads(data.decode("utf-8"))
    if doc.get("format") != 1:
        raise ValidationError(f"unsupported forest format {doc.get('format')!r}")
    trees = [
        _Tree(feature=np.array(t["feature"], dtype=np.int32), threshold=np.array(t["threshold"]),
              left=np.array(t["left"], dtype=np.int32), right=np.array(t["right"], dtype=np.int32),
              value=np.array(t["value"]))
        for t in doc["trees"]
    ]
    cfg = ForestConfig(**doc["config"])
    spec = FeatureSpec(strategy_vocab=tuple(doc["feature_spec"]["strategy_vocab"]),
                       history=doc["feature_spec"]["history"])
    return ForestModel(trees=trees, config=cfg, feature_spec=spec,
                       seed=doc["seed"], n_features=doc["n_features"])


def forest_save(model: ForestModel, path: str):
    with open(path, "wb") as fh:
        fh.write(forest_dumps(model))


def forest_load(path: str) -> ForestModel:
    with open(path, "rb") as fh:
        return forest_loads(fh.read())


# --- stopping rule and evaluation -------------------------------------------

@dataclass(frozen=True)
class StoppingRule:
    """Stop when the predicted normalized test F1 first exceeds tau."""

    tau: float = 0.95

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValidationError("tau must lie strictly between 0 and 1")

    def should_stop(self, prediction: float) -> bool:
        return prediction > self.tau


@dataclass(frozen=True)
class RunEval:
    """One run's aligned curves for predictor evaluation."""

    run_id: str
    predictions: np.ndarray
    targets: np.ndarray      # normalized test F1
    n_train: np.ndarray
    raw_f1: np.ndarray | None = None

    def __post_init__(self):
        lengths = {len(self.predictions), len(self.targets), len(self.n_train)}
        if self.raw_f1 is not None:
            lengths.add(len(self.raw_f1))
        if len(lengths) != 1:
            raise ValidationError(f"misaligned curves for run {self.run_id!r}")


@dataclass(frozen=True)
class PredictorReport:
    """Pooled regression/classification metrics plus stop-point statistics.

    mse_bp is the mean squared error scaled by 1e4. auc/precision/recall/f1
    score the binary task "target > tau" against "prediction > tau" over
    all (run, iteration) points. Stop statistics average over runs that
    stopped: stop_err is (1 - normalized F1 at the stop) * 100, stop_test_f1
    the raw test F1 at the stop (NaN when raw curves were not supplied).
    Runs that never cross tau are only counted in n_stopped unless the
    evaluation ran with no_stop_policy="final".
    """

    mse_bp: float
    auc: float
    precision: float
    recall: float
    f1: float
    stop_norm_f1: float
    stop_err: float
    stop_test_f1: float
    stop_instances: float
    n_runs: int
    n_stopped: int


def stop_index(predictions: np.ndarray, rule: StoppingRule) -> int | None:
    hits = np.flatnonzero(predictions > rule.tau)
    return int(hits[0]) if len(hits) else None


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-statistic AUC with average ranks on ties; NaN for single-class."""
    pos = labels
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate_predictor(runs: list[RunEval], rule: StoppingRule,
                       no_stop_policy: str = "report") -> PredictorReport:
    """Score aligned prediction/target curves.

    no_stop_policy: "report" leaves runs that never cross tau out of the
    stop statistics; "final" treats budget exhaustion as the stop point.
    """
    if not runs:
        raise ValidationError("no runs to evaluate")
    if no_stop_policy not in ("report", "final"):
        raise ValidationError(f"unknown no_stop_policy {no_stop_policy!r}")
    preds = np.concatenate([r.predictions for r in runs])
    targets = np.concatenate([r.targets for r in runs])
    mse_bp = float(np.mean((preds - targets) ** 2) * 1e4)
    labels = targets > rule.tau
    auc = _auc(preds, labels)
    decided = preds > rule.tau
    tp = int(np.sum(decided & labels))
    fp = int(np.sum(decided & ~labels))
    fn = int(np.sum(~decided & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    stop_norm, stop_err, stop_raw, stop_n = [], [], [], []
    n_stopped = 0
    for run in runs:
        idx = stop_index(run.predictions, rule)
        if idx is not None:
            n_stopped += 1
        elif no_stop_policy == "final":
            idx = len(run.predictions) - 1
        else:
            continue
        stop_norm.append(float(run.targets[idx]))
        stop_err.append((1.0 - float(run.targets[idx])) * 100.0)
        stop_n.append(float(run.n_train[idx]))
        if run.raw_f1 is not None:
            stop_raw.append(float(run.raw_f1[idx]))
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    return PredictorReport(
        mse_bp=mse_bp, auc=auc, precision=float(precision), recall=float(recall), f1=float(f1),
        stop_norm_f1=mean(stop_norm), stop_err=mean(stop_err), stop_test_f1=mean(stop_raw),
        stop_instances=mean(stop_n), n_runs=len(runs), n_stopped=n_stopped,
    )


def fixed_step_runs(runs: list[RunEval], step_instances: int) -> list[RunEval]:
    """Baseline that predicts 0 before `step_instances` training instances
    and 1 afterwards."""
    return [
        replace(run, predictions=(run.n_train >= step_instances).astype(np.float64))
        for run in runs
    ]


# --- leave-one-dataset-out training ------------------------------------------

def corpus_to_run_evals(rows, model_by_dataset: dict[str, ForestModel],
                        spec: FeatureSpec) -> list[RunEval]:
    """Predict every run with the forest that held out its dataset."""
    evals = []
    for (dataset, run_id), run_rows in sorted(group_runs(rows).items()):
        X, targets, n_train, raw = run_features_and_targets(run_rows, spec)
        model = model_by_dataset[dataset]
        preds = forest_predict_batch(model, X)
        evals.append(RunEval(run_id=f"{dataset}/{run_id}", predictions=preds,
                             targets=targets, n_train=n_train, raw_f1=raw))
    return evals


def leave_one_out_train(rows, config: ForestConfig = ForestConfig(), seed: int = 0,
                        history: int = 5) -> tuple[dict[str, ForestModel], FeatureSpec]:
    """Train one forest per dataset group on all other groups."""
    datasets = sorted({row.dataset for row in rows})
    if len(datasets) < 2:
        raise ValidationError("leave-one-out needs at least two dataset groups")
    spec = corpus_feature_spec(rows, history=history)
    models = {}
    for held_out in datasets:
        train_rows = [row for row in rows if row.dataset != held_out]
        X, y = [], []
        for _, run_rows in sorted(group_runs(train_rows).items()):
            feats, targets, _, _ = run_features_and_targets(run_rows, spec)
            X.append(feats)
            y.append(targets)
        models[held_out] = forest_fit(np.vstack(X), np.concatenate(y), config=config,
                                      seed=seed, feature_spec=spec)
    return models, spec


def fit_full_corpus(rows, config: ForestConfig = ForestConfig(), seed: int = 0,
                    history: int = 5) -> ForestModel:
    """Train one forest on the whole corpus (for deployment)."""
    spec = corpus_feature_spec(rows, history=history)
    X, y = [], []
    for _, run_rows in sorted(group_runs(rows).items()):
        feats, targets, _, _ = run_features_and_targets(run_rows, spec)
        X.append(feats)
        y.append(targets)
    return forest_fit(np.vstack(X), np.concatenate(y), config=config, seed=seed,
                      feature_spec=spec)
