"""Embedding-space clustering for diversity and hybrid acquisition.

All three algorithms use Euclidean distance (monotonically related to
cosine on unit-normalized embeddings), are deterministic given their seed,
and return exactly k non-empty clusters with a representative data point
per cluster.

Tie-breaking rules: nearest-centroid/medoid assignment ties resolve to the
lowest cluster id, representative ties to the lowest instance index, and
single-link merge ties to the lexicographically smallest original index
pair.

Complexity guard: `single_link` materializes all point pairs and refuses
inputs larger than `pair_limit` (default 6000). `kmedoids` only forms
per-cluster submatrices, so it stays usable at the 20k pool cap.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class Clustering:
    """Total assignment of points to the clusters [0, k) plus one
    representative member per cluster; `history` records the objective
    value per iteration (WCSS for k-means, total distance for k-medoids)."""

    assignment: np.ndarray
    representatives: list[int]
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.representatives)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


def _check_inputs(vectors: np.ndarray, k: int):
    if vectors.ndim != 2:
        raise ValidationError("vectors must be a 2-d array")
    n = len(vectors)
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of points ({n})")


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def _medoid_of(points: np.ndarray, chunk: int = 512) -> int:
    """Index (within `points`) of the member minimizing the sum of
    distances to all members; ties resolve to the lowest index. Chunked so
    large clusters never materialize a full pairwise matrix."""
    totals = np.empty(len(points))
    for start in range(0, len(points), chunk):
        block = np.sqrt(_pairwise_sq(points[start : start + chunk], points))
        totals[start : start + chunk] = block.sum(axis=1)
    return int(np.argmin(totals))


def _kmeanspp_init(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(vectors)
    centers = np.empty((k, vectors.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = vectors[first]
    chosen[first] = True
    d2 = _pairwise_sq(vectors, centers[:1])[:, 0]
    for j in range(1, k):
        weights = np.where(chosen, 0.0, d2)
        total = weights.sum()
        if total <= 0:
            # all remaining points coincide with a center: pick uniformly
            candidates = np.flatnonzero(~chosen)
            idx = int(candidates[rng.integers(len(candidates))])
        else:
            idx = int(rng.choice(n, p=weights / total))
        centers[j] = vectors[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, _pairwise_sq(vectors, centers[j : j + 1])[:, 0])
    return centers


def kmeans(vectors: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> Clustering:
    """Lloyd iterations from a k-means++ seeding until the assignment
    reaches a fixpoint. Empty clusters are repaired by stealing the point
    farthest from the centroid of the largest cluster. The representative
    of each cluster is its member closest to the final centroid."""
    vectors = np.asarray(vectors, dtype=np.float64)
    _check_inputs(vectors, k)
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(vectors, k, rng)
    assignment = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _pairwise_sq(vectors, centers)
        new_assignment = np.argmin(d2, axis=1)
        sizes = np.bincount(new_assignment, minlength=k)
        for empty in np.flatnonzero(sizes == 0):
            donor = int(np.argmax(sizes))
            members = np.flatnonzero(new_assignment == donor)
            victim = members[int(np.argmax(d2[members, donor]))]
            new_assignment[victim] = empty
            sizes[donor] -= 1
            sizes[empty] += 1
        for c in range(k):
            centers[c] = vectors[new_assignment == c].mean(axis=0)
        history.append(float(np.sum((vectors - centers[new_assignment]) ** 2)))
        if assignment is not None and np.array_equal(assignment, new_assignment):
            break
        assignment = new_assignment
    representatives = []
    d2 = _pairwise_sq(vectors, centers)
    for c in range(k):
        members = np.flatnonzero(assignment == c)
        representatives.append(int(members[int(np.argmin(d2[members, c]))]))
    return Clustering(assignment=assignment, representatives=representatives, history=history)


def _central_init(vectors: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Seed medoids with the k most centrally located points: smallest
    v_j = sum_i d(i,j) / sum_l d(i,l), computed in chunks."""
    n = len(vectors)
    row_sums = np.empty(n)
    for start in range(0, n, chunk):
        block = np.sqrt(_pairwise_sq(vectors[start : start + chunk], vectors))
        row_sums[start : start + chunk] = block.sum(axis=1)
    inv = np.where(row_sums > 0, 1.0 / np.maximum(row_sums, 1e-300), 0.0)
    v = np.empty(n)
    for start in range(0, n, chunk):
        block = np.sqrt(_pairwise_sq(vectors[start : start + chunk], vectors))
        v[start : start + chunk] = block @ inv
    return np.sort(np.argsort(v, kind="stable")[:k])


def _kmedoids_once(vectors: np.ndarray, medoids: np.ndarray, k: int, max_iter: int):
    history: list[float] = []
    assignment = None
    for _ in range(max_iter):
        dist = np.sqrt(_pairwise_sq(vectors, vectors[medoids]))
        assignment = np.argmin(dist, axis=1)
        assignment[medoids] = np.arange(k)
        history.append(float(dist[np.arange(len(vectors)), assignment].sum()))
        new_medoids = medoids.copy()
        for c in range(k):
            members = np.flatnonzero(assignment == c)
            new_medoids[c] = int(members[_medoid_of(vectors[members])])
        if np.array_equal(new_medoids, medoids):
            break
        medoids = new_medoids
    return assignment, medoids, history


def kmedoids(vectors: np.ndarray, k: int, seed: int = 0, max_iter: int = 100,
             restarts: int = 4) -> Clustering:
    """Alternating assignment / medoid update on pairwise distances.

    Runs once from the deterministic most-central-points seeding plus
    `restarts` seeded random initializations, keeping the lowest-cost
    result (ties keep the earlier start). Medoids are always data points;
    each medoid is pinned to its own cluster so clusters stay non-empty
    even with duplicate points. Within each run, the total within-cluster
    distance is non-increasing per iteration.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    _check_inputs(vectors, k)
    rng = np.random.default_rng(seed)
    starts = [_central_init(vectors, k)]
    starts.extend(np.sort(rng.choice(len(vectors), size=k, replace=False))
                  for _ in range(restarts))
    best = None
    for medoids in starts:
        assignment, final_medoids, history = _kmedoids_once(vectors, medoids, k, max_iter)
        if best is None or history[-1] < best[2][-1]:
            best = (assignment, final_medoids, history)
    assignment, medoids, history = best
    return Clustering(assignment=assignment, representatives=[int(m) for m in medoids],
                      history=history)


def single_link(vectors: np.ndarray, k: int, pair_limit: int = 6000) -> Clustering:
    """Agglomerative single-link clustering down to k clusters.

    Implemented as Kruskal unions over all point pairs sorted by
    (distance, i, j), which is exactly single-link merging and coincides
    with cutting the k-1 heaviest edges of a minimum spanning tree. The
    representative of a cluster is its medoid.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    _check_inputs(vectors, k)
    n = len(vectors)
    if n > pair_limit:
        raise ValidationError(
            f"single_link materializes all point pairs; {n} points exceed the "
            f"guard limit of {pair_limit} (use kmeans or kmedoids at this scale)"
        )
    parent = np.arange(n)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    if n > 1 and k < n:
        iu, ju = np.triu_indices(n, 1)
        d = np.sqrt(_pairwise_sq(vectors, vectors))[iu, ju]
        order = np.lexsort((ju, iu, d))
        components = n
        for idx in order:
            a, b = find(int(iu[idx])), find(int(ju[idx]))
            if a == b:
                continue
            parent[max(a, b)] = min(a, b)
            components -= 1
            if components == k:
                break
    roots = np.array([find(i) for i in range(n)])
    # relabel clusters 0..k-1 in order of their smallest member index
    unique_roots = sorted(set(roots), key=lambda r: int(np.flatnonzero(roots == r)[0]))
    relabel = {root: c for c, root in enumerate(unique_roots)}
    assignment = np.array([relabel[r] for r in roots], dtype=np.int64)
    representatives = []
    for c in range(k):
        members = np.flatnonzero(assignment == c)
        representatives.append(int(members[_medoid_of(vectors[members])]))
    return Clustering(assignment=assignment, representatives=representatives, history=[])
