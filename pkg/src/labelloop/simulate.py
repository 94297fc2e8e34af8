"""Simulated-annotator experiments: run the query loop against corpora
with gold labels, recording learning curves and convergence snapshots.

A trial starts from the zero-shot model and repeats: select a batch with
the plan's strategy, reveal the gold labels, retrain from scratch on all
accumulated labels, evaluate macro F1 on the held-out test split, record a
snapshot. Trials are deterministic given (plan, seed): trial seeds are
``seed + trial_index`` and every internal random draw derives its own
sub-seed from the trial seed.

The test split never enters selection, training or the snapshot sample T.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import corpus as _corpus
from . import fsl, perfpred
from .corpus import LabelSet, TextInstance, UnbalanceSpec
from .encoder import Encoder, LookupEncoder
from .errors import ValidationError
from .selection import PoolView, SelectionConfig, parse_strategy, select_with_trace


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    model_kind: str = "lt"
    strategy: str = "random"
    batch_k: int = 16
    budget: int = 256
    trials: int = 10
    pool_cap: int = 20000
    seed: int = 0
    sample_t_size: int = 1000
    randomize_2k: bool = True
    train_config: fsl.TrainConfig = field(default_factory=fsl.TrainConfig)

    def __post_init__(self):
        parse_strategy(self.strategy)
        if self.model_kind not in fsl.MODEL_KINDS:
            raise ValidationError(f"unknown model kind {self.model_kind!r}")
        if self.budget % self.batch_k != 0:
            raise ValidationError("budget must be a multiple of batch_k")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")


@dataclass
class Dataset:
    """A labeled train pool, a held-out test split and the encoder that
    embeds both (plus the label descriptions)."""

    name: str
    train: list[TextInstance]
    test: list[TextInstance]
    label_set: LabelSet
    encoder: Encoder


@dataclass
class CurvePoint:
    n_train: int
    test_f1: float
    snapshot: perfpred.IterationSnapshot


@dataclass
class LearningCurve:
    plan: str
    dataset: str
    strategy: str
    model_kind: str
    trial: int
    seed: int
    points: list[CurvePoint]
    truncated: bool = False
    pool_size: int = 0
    selection_traces: list = field(default_factory=list)

    @property
    def n_train_grid(self) -> list[int]:
        return [p.n_train for p in self.points]

    @property
    def f1_values(self) -> list[float]:
        return [p.test_f1 for p in self.points]


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit sub-seed from a base seed and string/int parts."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def macro_f1(gold, predicted, label_set: LabelSet) -> float:
    """Unweighted mean of per-label F1 over the whole label set; labels
    absent from both gold and predictions contribute 0."""
    if len(gold) != len(predicted):
        raise ValidationError("gold and predicted sequences differ in length")
    if len(gold) == 0:
        raise ValidationError("macro F1 of empty input")
    g = np.array([label_set.index_of(l) for l in gold])
    p = np.array([label_set.index_of(l) for l in predicted])
    return perfpred.macro_f1_indexed(g, p, len(label_set))


def run_trial(dataset: Dataset, plan: ExperimentPlan, trial: int,
              collect_traces: bool = False) -> LearningCurve:
    """One simulated annotation run; deterministic given (plan, trial)."""
    if any(inst.gold_label is None for inst in dataset.train):
        raise ValidationError("simulation requires gold labels on the training pool")
    trial_seed = plan.seed + trial
    enc = dataset.encoder
    pool = _corpus.cap_pool(dataset.train, plan.pool_cap, seed=derive_seed(trial_seed, "cap"))
    by_id = {inst.id: inst for inst in pool}
    ids = [inst.id for inst in pool]
    index_of = {iid: i for i, iid in enumerate(ids)}
    emb = enc.encode_instances(pool)
    test_emb = enc.encode_instances(dataset.test)
    test_gold = [inst.gold_label for inst in dataset.test]
    desc_emb = enc.encode_batch(list(dataset.label_set.descriptions))

    t_ids = perfpred.sample_T(pool, plan.sample_t_size, seed=derive_seed(trial_seed, "T"))
    t_emb = emb[[index_of[i] for i in t_ids]]

    labeled: list[str] = []
    labeled_set: set[str] = set()
    model = fsl.train_embedded(plan.model_kind, dataset.label_set, enc.descriptor,
                               desc_emb, np.zeros((0, enc.dim)), np.zeros(0, dtype=np.int64),
                               plan.train_config)

    def evaluate(m) -> float:
        pred = fsl.predict_labels(m, test_emb)
        gold_idx = np.array([dataset.label_set.index_of(g) for g in test_gold])
        return perfpred.macro_f1_indexed(gold_idx, pred, len(dataset.label_set))

    def labeled_matrix():
        idx = [index_of[i] for i in labeled]
        y = np.array([dataset.label_set.index_of(by_id[i].gold_label) for i in labeled],
                     dtype=np.int64)
        return emb[idx], y

    points: list[CurvePoint] = []
    traces = []
    snap = perfpred.snapshot(model, t_emb, None, np.zeros((0, enc.dim)),
                             np.zeros(0, dtype=np.int64), 0, 0, plan.train_config, desc_emb)
    points.append(CurvePoint(n_train=0, test_f1=evaluate(model), snapshot=snap))

    truncated = False
    iteration = 0
    sel_config = SelectionConfig(batch_k=plan.batch_k, randomize_2k=plan.randomize_2k)
    while len(labeled) < plan.budget:
        remaining = [i for i in ids if i not in labeled_set]
        if not remaining:
            truncated = True
            break
        iteration += 1
        k = min(plan.batch_k, len(remaining))
        rem_emb = emb[[index_of[i] for i in remaining]]
        posteriors = fsl.predict_proba(model, rem_emb)
        lab_emb, lab_y = labeled_matrix()
        view = PoolView(
            ids=remaining, posteriors=posteriors, embeddings=rem_emb,
            labeled_ids=list(labeled), labeled_embeddings=lab_emb,
            labeled_posteriors=fsl.predict_proba(model, lab_emb) if len(labeled) else None,
        )
        config = _replace_k(sel_config, k, derive_seed(trial_seed, "select", iteration))
        picked, trace = select_with_trace(view, plan.strategy, config)
        if collect_traces:
            traces.append(trace)
        labeled.extend(picked)
        labeled_set.update(picked)
        lab_emb, lab_y = labeled_matrix()
        model = fsl.train_embedded(plan.model_kind, dataset.label_set, enc.descriptor,
                                   desc_emb, lab_emb, lab_y, plan.train_config)
        snap = perfpred.snapshot(model, t_emb, points[-1].snapshot, lab_emb, lab_y,
                                 iteration, len(labeled), plan.train_config, desc_emb)
        points.append(CurvePoint(n_train=len(labeled), test_f1=evaluate(model), snapshot=snap))
        if len(remaining) <= plan.batch_k and len(labeled) < plan.budget:
            truncated = True
            break

    return LearningCurve(plan=plan.name, dataset=dataset.name, strategy=plan.strategy,
                         model_kind=plan.model_kind, trial=trial, seed=trial_seed,
                         points=points, truncated=truncated, pool_size=len(pool),
                         selection_traces=traces)


def _replace_k(config: SelectionConfig, k: int, seed: int) -> SelectionConfig:
    return SelectionConfig(batch_k=k, randomize_2k=config.randomize_2k,
                           cal_neighbors=config.cal_neighbors,
                           cal_use_gold=config.cal_use_gold, seed=seed)


def run_plan(dataset: Dataset, plan: ExperimentPlan, collect_traces: bool = False):
    return [run_trial(dataset, plan, t, collect_traces=collect_traces)
            for t in range(plan.trials)]


@dataclass(frozen=True)
class AggregateRow:
    plan: str
    n_train: int
    mean_f1: float
    std_f1: float


def aggregate(curves: list[LearningCurve]) -> list[AggregateRow]:
    """Mean and sample standard deviation (ddof=1) per n_train step.

    All curves of one plan must share the same n_train grid.
    """
    if not curves:
        raise ValidationError("no curves to aggregate")
    by_plan: dict[str, list[LearningCurve]] = {}
    for curve in curves:
        by_plan.setdefault(curve.plan, []).append(curve)
    rows: list[AggregateRow] = []
    for plan in sorted(by_plan):
        group = by_plan[plan]
        grid = group[0].n_train_grid
        for curve in group[1:]:
            if curve.n_train_grid != grid:
                raise ValidationError(f"misaligned curves in plan {plan!r}")
        values = np.array([c.f1_values for c in group])
        means = values.mean(axis=0)
        stds = values.std(axis=0, ddof=1) if len(group) > 1 else np.zeros(len(grid))
        rows.extend(
            AggregateRow(plan=plan, n_train=n, mean_f1=float(m), std_f1=float(s))
            for n, m, s in zip(grid, means, stds)
        )
    return rows


def curve_to_rows(curve: LearningCurve, n_labels: int) -> list[perfpred.CurveRow]:
    """Convert a learning curve into curve-corpus rows."""
    rows = []
    for point in curve.points:
        s = point.snapshot
        rows.append(perfpred.CurveRow(
            dataset=curve.dataset, run_id=f"{curve.plan}-t{curve.trial}",
            strategy=curve.strategy, iter=s.iter, n_train=point.n_train,
            n_labels=n_labels, cv_f1=s.cv_f1, neg_entropy=s.neg_entropy,
            max_prob=s.max_prob, margin=s.margin, agreement=s.agreement,
            neg_kl=s.neg_kl, test_f1=point.test_f1,
        ))
    return rows


# --- synthetic datasets -------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Gaussian label clusters in embedding space with a bypass encoder.

    Labels own `clusters // labels`-ish cluster centers (round-robin).
    Label "descriptions" are perturbed means of their cluster centers, so
    the zero-shot model starts informative but imperfect. With `skew` set,
    the train and test splits are down-sampled to an exponential label
    profile.
    """

    clusters: int = 5
    dim: int = 32
    labels: int = 5
    size: int = 4000
    test_size: int = 1000
    noise: float = 0.35
    separation: float = 1.0
    anchor_noise: float = 0.25
    skew: float | None = None  # decay base for the unbalanced variant
    seed: int = 0

    def __post_init__(self):
        if self.labels > self.clusters:
            raise ValidationError("labels must not exceed clusters")
        if self.labels < 2:
            raise ValidationError("need at least two labels")
        if self.size < self.labels or self.test_size < self.labels:
            raise ValidationError("splits too small for the label count")


def synth_dataset(spec: SynthSpec, name: str = "synth") -> Dataset:
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.clusters, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.separation
    cluster_label = np.arange(spec.clusters) % spec.labels

    label_set = LabelSet(tuple(
        (f"class-{i}", f"prototype text for class-{i}") for i in range(spec.labels)
    ))

    def make_split(count: int, prefix: str) -> tuple[list[TextInstance], dict[str, np.ndarray]]:
        assigned = rng.integers(0, spec.clusters, size=count)
        vectors = centers[assigned] + spec.noise * rng.normal(size=(count, spec.dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        instances, table = [], {}
        for i in range(count):
            iid = f"{prefix}-{i:06d}"
            label = label_set.names[cluster_label[assigned[i]]]
            instances.append(TextInstance(id=iid, text=f"synthetic instance {iid}",
                                          gold_label=label))
            table[iid] = vectors[i]
        return instances, table

    train, train_table = make_split(spec.size, "tr")
    test, test_table = make_split(spec.test_size, "te")

    table = dict(train_table)
    table.update(test_table)
    for i, desc in enumerate(label_set.descriptions):
        own = centers[cluster_label == i].mean(axis=0)
        anchor = own + spec.anchor_noise * rng.normal(size=spec.dim)
        table[desc] = anchor / np.linalg.norm(anchor)

    if spec.skew is not None:
        unbalance = UnbalanceSpec(decay_base=spec.skew, seed=spec.seed + 1)
        train = _corpus.make_unbalanced(train, label_set, unbalance)
        test = _corpus.make_unbalanced(test, label_set,
                                       UnbalanceSpec(decay_base=spec.skew, seed=spec.seed + 2))

    encoder = LookupEncoder(table)
    return Dataset(name=name, train=train, test=test, label_set=label_set, encoder=encoder)
