"""Acquisition strategies: map pool state to a batch of instances to label.

Canonical strategy names (used by the CLI, REST API and UI):

    random, least_confidence, margin, entropy,
    kmeans, kmedoids, single_link,
    kmeans+margin, kmedoids+margin, kmedoids+least, kmedoids+entropy,
    cal

Uncertainty scores are oriented so that higher means more uncertain.
Score ties break by ascending instance id. The double-batch randomization
(pick the top 2k by score, then sample k of them uniformly) applies to the
score-ranked methods only — uncertainty and CAL; cluster representatives
are already diversified, so diversity and hybrid strategies ignore it —
and degrades to plain top-k when fewer than 2k candidates remain.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cluster as _cluster
from .errors import StrategyUnavailableError, ValidationError

UNCERTAINTY_KINDS = ("least_confidence", "margin", "entropy")

STRATEGIES = (
    "random",
    "least_confidence",
    "margin",
    "entropy",
    "kmeans",
    "kmedoids",
    "single_link",
    "kmeans+margin",
    "kmedoids+margin",
    "kmedoids+least",
    "kmedoids+entropy",
    "cal",
)

_HYBRID = {
    "kmeans+margin": ("kmeans", "margin"),
    "kmedoids+margin": ("kmedoids", "margin"),
    "kmedoids+least": ("kmedoids", "least_confidence"),
    "kmedoids+entropy": ("kmedoids", "entropy"),
}

_DIVERSITY = ("kmeans", "kmedoids", "single_link")


def parse_strategy(name: str) -> str:
    if name not in STRATEGIES:
        raise ValidationError(f"unknown strategy {name!r}; choose one of {', '.join(STRATEGIES)}")
    return name


@dataclass(frozen=True)
class SelectionConfig:
    batch_k: int = 16
    randomize_2k: bool = True
    cal_neighbors: int = 10
    cal_use_gold: bool = False  # score against one-hot gold neighbor labels instead of posteriors
    seed: int = 0

    def __post_init__(self):
        if self.batch_k < 1:
            raise ValidationError("batch_k must be >= 1")
        if self.cal_neighbors < 1:
            raise ValidationError("cal_neighbors must be >= 1")


@dataclass
class PoolView:
    """Unlabeled candidates plus whatever the chosen strategy needs:
    posteriors (uncertainty, hybrid, CAL), embeddings (diversity, hybrid,
    CAL) and the labeled side for CAL neighborhoods."""

    ids: list[str]
    posteriors: np.ndarray | None = None        # n x |L|, aligned with ids
    embeddings: np.ndarray | None = None        # n x dim, aligned with ids
    labeled_ids: list[str] = field(default_factory=list)
    labeled_embeddings: np.ndarray | None = None
    labeled_posteriors: np.ndarray | None = None
    labeled_gold_onehot: np.ndarray | None = None


@dataclass
class SelectionTrace:
    """Instrumentation: the score-ranked candidate window (2k when the
    randomization applied) and per-id scores, where the strategy has them."""

    strategy: str
    candidate_ids: list[str]
    scores: dict[str, float] = field(default_factory=dict)
    randomized: bool = False


def entropy_score(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)  # 0 log 0 := 0
    return -(p * np.log(safe)).sum(axis=-1)


def top2_gap(p: np.ndarray) -> np.ndarray:
    """P(top1) - P(top2) per row."""
    part = np.partition(p, p.shape[1] - 2, axis=1)[:, -2:]
    return part.max(axis=1) - part.min(axis=1)


def uncertainty_score(posterior, kind: str):
    """Score one posterior (or a matrix of them); higher = more uncertain.

    least_confidence: -P(top1); margin: -(P(top1) - P(top2));
    entropy: -sum p ln p (natural log).
    """
    p = np.asarray(getattr(posterior, "probs", posterior), dtype=np.float64)
    squeeze = p.ndim == 1
    p = np.atleast_2d(p)
    if kind == "least_confidence":
        scores = -p.max(axis=1)
    elif kind == "margin":
        scores = -top2_gap(p)
    elif kind == "entropy":
        scores = entropy_score(p)
    else:
        raise ValidationError(f"unknown uncertainty kind {kind!r}")
    return float(scores[0]) if squeeze else scores


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """KL(p || q) with probability clamping on both arguments."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, None)
    q = np.clip(np.asarray(q, dtype=np.float64), eps, None)
    return np.sum(p * np.log(p / q), axis=-1)


def _ranked_order(scores: np.ndarray, ids: list[str]) -> np.ndarray:
    """Indices by descending score, ties by ascending id."""
    return np.lexsort((np.array(ids), -scores))


def _top_k_randomized(scores, view, config, rng, trace):
    order = _ranked_order(scores, view.ids)
    n = len(view.ids)
    window = order[: 2 * config.batch_k] if (config.randomize_2k and n >= 2 * config.batch_k) \
        else order[: config.batch_k]
    trace.candidate_ids = [view.ids[i] for i in window]
    trace.scores = {view.ids[i]: float(scores[i]) for i in window}
    if len(window) > config.batch_k:
        keep = rng.choice(len(window), size=config.batch_k, replace=False)
        window = window[np.sort(keep)]
        trace.randomized = True
    return [view.ids[i] for i in window]


def _require(view: PoolView, strategy: str, posteriors: bool = False, embeddings: bool = False):
    if posteriors:
        if view.posteriors is None or len(view.posteriors) != len(view.ids):
            raise ValidationError(f"strategy {strategy!r} needs posteriors for every candidate")
    if embeddings:
        if view.embeddings is None or len(view.embeddings) != len(view.ids):
            raise ValidationError(f"strategy {strategy!r} needs embeddings for every candidate")


def _cal_scores(view: PoolView, config: SelectionConfig) -> np.ndarray:
    if not view.labeled_ids:
        raise StrategyUnavailableError(
            "cal needs labeled neighbors; label a first batch with another "
            "strategy (e.g. random or margin)"
        )
    if view.labeled_embeddings is None:
        raise ValidationError("cal needs embeddings of the labeled instances")
    reference = view.labeled_gold_onehot if config.cal_use_gold else view.labeled_posteriors
    if reference is None:
        raise ValidationError("cal needs posteriors (or gold one-hots) of the labeled instances")
    m = min(config.cal_neighbors, len(view.labeled_ids))
    d2 = (
        np.sum(view.embeddings ** 2, axis=1)[:, None]
        + np.sum(view.labeled_embeddings ** 2, axis=1)[None, :]
        - 2.0 * view.embeddings @ view.labeled_embeddings.T
    )
    scores = np.empty(len(view.ids))
    for i in range(len(view.ids)):
        # stable neighbor choice: by distance, then labeled position
        neighbors = np.lexsort((np.arange(len(view.labeled_ids)), d2[i]))[:m]
        scores[i] = float(np.mean(kl_divergence(reference[neighbors], view.posteriors[i])))
    return scores


def select(view: PoolView, strategy: str, config: SelectionConfig) -> list[str]:
    ids, _ = select_with_trace(view, strategy, config)
    return ids


def select_with_trace(view: PoolView, strategy: str, config: SelectionConfig):
    """Pick `config.batch_k` unlabeled instance ids; returns (ids, trace).

    Pure given (view, config): repeated calls return the same batch.
    """
    strategy = parse_strategy(strategy)
    k = config.batch_k
    n = len(view.ids)
    if len(set(view.ids)) != n:
        raise ValidationError("candidate ids must be unique")
    labeled = set(view.labeled_ids)
    if labeled.intersection(view.ids):
        raise ValidationError("candidates must not include already-labeled ids")
    if k > n:
        raise ValidationError(f"batch of {k} requested but only {n} unlabeled instances remain")
    rng = np.random.default_rng(config.seed)
    trace = SelectionTrace(strategy=strategy, candidate_ids=[])

    if strategy == "random":
        chosen = np.sort(rng.choice(n, size=k, replace=False))
        picked = [view.ids[i] for i in chosen]
        trace.candidate_ids = picked
    elif strategy in UNCERTAINTY_KINDS:
        _require(view, strategy, posteriors=True)
        scores = uncertainty_score(view.posteriors, strategy)
        picked = _top_k_randomized(scores, view, config, rng, trace)
    elif strategy == "cal":
        _require(view, strategy, posteriors=True, embeddings=True)
        scores = _cal_scores(view, config)
        picked = _top_k_randomized(scores, view, config, rng, trace)
    elif strategy in _DIVERSITY:
        _require(view, strategy, embeddings=True)
        clustering = _run_clustering(strategy, view.embeddings, k, config.seed)
        picked = [view.ids[i] for i in clustering.representatives]
        trace.candidate_ids = picked
    elif strategy in _HYBRID:
        _require(view, strategy, posteriors=True, embeddings=True)
        algo, kind = _HYBRID[strategy]
        clustering = _run_clustering(algo, view.embeddings, k, config.seed)
        scores = uncertainty_score(view.posteriors, kind)
        picked = []
        for c in range(k):
            members = clustering.members(c)
            order = _ranked_order(scores[members], [view.ids[i] for i in members])
            best = int(members[order[0]])
            picked.append(view.ids[best])
            trace.scores[view.ids[best]] = float(scores[best])
        trace.candidate_ids = list(picked)
    else:  # pragma: no cover - parse_strategy guards this
        raise ValidationError(f"unhandled strategy {strategy!r}")

    if len(set(picked)) != len(picked):
        raise ValidationError("internal error: duplicate ids selected")
    return picked, trace


def _run_clustering(algo: str, embeddings: np.ndarray, k: int, seed: int):
    if algo == "kmeans":
        return _cluster.kmeans(embeddings, k, seed=seed)
    if algo == "kmedoids":
        return _cluster.kmedoids(embeddings, k, seed=seed)
    return _cluster.single_link(embeddings, k)
