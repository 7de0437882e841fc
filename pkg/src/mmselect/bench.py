"""Neural-free benchmark: does distribution-matched selection beat random?

Generates labeled multi-cluster pools with a covariate-shifted target, runs
the selectors, trains a k-NN proxy classifier on the selected subset, and
scores macro-F1 on a held-out target test set. The proxy keeps the causal
chain "better-matched selection -> better target performance" measurable
without any model training stochasticity.

Labels are positional: a cluster labels the fraction of its points closest
to its own center direction (by cosine, thresholded at the class-mix
quantile) as label 1. Marginally every point's label is Bernoulli(mix), so
empirical mixes concentrate binomially, while labels stay locally
learnable. Crucially, the threshold lives in each cluster's own scale: a
broad background cluster calls far larger neighborhoods "central" than a
tight one, so its members that stray near the tight target cluster carry
systematically wrong labels for the target's rule. That is the covariate-
plus-concept shift the selectors are supposed to dodge; with unlearnable
(purely Bernoulli) labels no selector could beat random and the harness
would be vacuous.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, EmptyTrainingSet, LengthMismatch
from .rng import Xoshiro256StarStar
from .selection import SelectionTask, run_selection
from .store import EmbeddingMatrix, InstanceManifest, InstanceRecord


@dataclass(frozen=True)
class ClusterSpec:
    mean: tuple[float, ...]
    stddev: float
    class_mix: float = 0.5

    def check(self, dim: int) -> None:
        if len(self.mean) != dim:
            raise DataError(f"cluster mean has {len(self.mean)} entries, expected {dim}")
        if not (self.stddev > 0):
            raise DataError(f"cluster stddev must be > 0, got {self.stddev}")
        if not (0.0 <= self.class_mix <= 1.0):
            raise DataError(f"class mix must lie in [0, 1], got {self.class_mix}")


@dataclass(frozen=True)
class BenchConfig:
    dim: int
    clusters: tuple[ClusterSpec, ...]
    pool_size: int
    target_cluster: int
    validation_size: int
    test_size: int
    k: int
    seeds: tuple[int, ...] = (0, 1, 2)
    methods: tuple[str, ...] = ("semsim", "dissim", "random")
    knn_neighbors: int = 1
    balanced: bool = True

    def check(self) -> None:
        if self.dim < 2:
            raise DataError("dim must be >= 2")
        if not self.clusters:
            raise DataError("need at least one cluster")
        for cluster in self.clusters:
            cluster.check(self.dim)
        if not (0 <= self.target_cluster < len(self.clusters)):
            raise DataError("target_cluster out of range")
        if self.pool_size < self.k:
            raise DataError("pool_size must be >= k")
        if self.validation_size < 1 or self.test_size < 1:
            raise DataError("validation and test sizes must be positive")


def _axis(i: int, scale: float, dim: int) -> tuple[float, ...]:
    v = [0.0] * dim
    v[i] = scale
    return tuple(v)


def default_config(
    seeds: tuple[int, ...] = (0, 1, 2), k: int = 300
) -> BenchConfig:
    """One tight target cluster inside a pool mixed with broad background.

    The target is a tight cap on the unit sphere; the two background
    clusters are so much wider that, after normalization, they scatter
    across the sphere and leak into the target's neighborhood while their
    own label rules disagree with the target's there.
    """
    dim = 6
    return BenchConfig(
        dim=dim,
        clusters=(
            ClusterSpec(mean=_axis(0, 1.0, dim), stddev=0.25),
            ClusterSpec(mean=_axis(1, 1.0, dim), stddev=1.35),
            ClusterSpec(mean=_axis(2, 1.0, dim), stddev=1.35),
        ),
        pool_size=3000,
        target_cluster=0,
        validation_size=30,
        test_size=600,
        k=k,
        seeds=seeds,
        knn_neighbors=7,
    )


def overlapping_config(seeds: tuple[int, ...]) -> BenchConfig:
    """Null configuration: three identically distributed clusters.

    All means and widths coincide, so the "clusters" are one distribution
    and no selection method has a real signal to find. Sized so the known
    coverage biases of top-k selection (semsim hugging the label boundary,
    dissim crowding the transport targets) stay inside the no-signal band.
    """
    dim = 6
    cluster = ClusterSpec(mean=_axis(0, 1.0, dim), stddev=0.25)
    return BenchConfig(
        dim=dim,
        clusters=(cluster, cluster, cluster),
        pool_size=1500,
        target_cluster=0,
        validation_size=30,
        test_size=400,
        k=300,
        seeds=seeds,
        knn_neighbors=1,
    )


# --- data generation ------------------------------------------------------------


def _split_sizes(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _sample_cluster(cluster, count, dim, rng):
    """Unit-normalized Gaussian cap plus centrality labels.

    Label 1 marks the class-mix fraction of the batch closest (by cosine) to
    the cluster's own center direction; the empirical quantile keeps the
    realized mix exact and the rule consistent across roles drawn from the
    same cluster.
    """
    z = rng.normals(count * dim).reshape(count, dim)
    mean = np.asarray(cluster.mean, dtype=np.float64)
    raw = mean[None, :] + cluster.stddev * z
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms == 0.0):
        raise DataError("sampled a zero-norm row; move cluster means away from 0")
    rows = raw / norms[:, None]
    center = mean / np.linalg.norm(mean)
    centrality = rows @ center
    mix = cluster.class_mix
    if mix <= 0.0:
        labels = np.zeros(count, dtype=int)
    elif mix >= 1.0:
        labels = np.ones(count, dtype=int)
    else:
        threshold = np.quantile(centrality, 1.0 - mix)
        labels = (centrality > threshold).astype(int)
    return rows, labels


def generate(
    config: BenchConfig, seed: int
) -> tuple[
    tuple[EmbeddingMatrix, InstanceManifest],
    tuple[EmbeddingMatrix, InstanceManifest],
    tuple[EmbeddingMatrix, InstanceManifest],
]:
    """Build (pool, validation, test) triples for one seed.

    The pool spans all clusters proportionally; validation and test come only
    from the target cluster. Every record's ``source`` carries its generating
    cluster for purity accounting, and rows are unit-normalized to match the
    feature pipeline contract.
    """
    config.check()
    rng = Xoshiro256StarStar(seed)

    def build(role: str, cluster_counts: list[tuple[int, int]], stream: int):
        sub = rng.spawn(stream)
        rows = []
        labels_all: list[int] = []
        sources: list[str] = []
        for cluster_idx, count in cluster_counts:
            if count == 0:
                continue
            cluster = config.clusters[cluster_idx]
            values, labels = _sample_cluster(cluster, count, config.dim, sub)
            rows.append(values)
            labels_all.extend(int(v) for v in labels)
            sources.extend([f"cluster:{cluster_idx}"] * count)
        stacked = np.vstack(rows)
        # Shuffle so row order carries no cluster information (index-based
        # tie-breaks downstream must not silently favor the target).
        order = list(range(len(labels_all)))
        sub.shuffle(order)
        matrix = EmbeddingMatrix(
            stacked[order].astype(np.float32), unit_normalized=True
        )
        records = tuple(
            InstanceRecord(
                id=f"{role}-{i:06d}",
                label=labels_all[src],
                source=sources[src],
            )
            for i, src in enumerate(order)
        )
        return matrix, InstanceManifest(records=records)

    pool_counts = list(enumerate(_split_sizes(config.pool_size, len(config.clusters))))
    pool = build("pool", pool_counts, stream=1)
    validation = build(
        "val", [(config.target_cluster, config.validation_size)], stream=2
    )
    test = build("test", [(config.target_cluster, config.test_size)], stream=3)
    return pool, validation, test


# --- proxy classifier and metric ---------------------------------------------------


def knn_classify(
    train_matrix: EmbeddingMatrix,
    train_labels,
    test: EmbeddingMatrix,
    k_neighbors: int = 1,
) -> np.ndarray:
    """Euclidean k-NN with majority vote; vote ties go to label 0."""
    if train_matrix.count == 0:
        raise EmptyTrainingSet("k-NN needs at least one training row")
    labels = np.asarray(train_labels, dtype=np.int64)
    if labels.shape != (train_matrix.count,):
        raise LengthMismatch("one label per training row required")
    if k_neighbors < 1 or k_neighbors % 2 == 0:
        raise DataError(f"k_neighbors must be a positive odd integer, got {k_neighbors}")
    if k_neighbors > train_matrix.count:
        raise DataError("k_neighbors exceeds the training size")
    train = train_matrix.as_float64()
    queries = test.as_float64()
    # Squared distances suffice for ranking; stable sort fixes distance ties.
    d2 = (
        np.sum(queries ** 2, axis=1)[:, None]
        - 2.0 * queries @ train.T
        + np.sum(train ** 2, axis=1)[None, :]
    )
    order = np.argsort(d2, axis=1, kind="stable")[:, :k_neighbors]
    votes = labels[order].sum(axis=1)
    return (votes * 2 > k_neighbors).astype(int)


def macro_f1(predictions, truth) -> float:
    """Unweighted mean of the per-class F1 scores for classes {0, 1}.

    A class with no true and no predicted members contributes F1 = 0.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(truth, dtype=np.int64)
    if preds.shape != gold.shape or preds.ndim != 1 or preds.size < 1:
        raise LengthMismatch(
            f"predictions {preds.shape} and truth {gold.shape} must be equal-length 1-D"
        )
    for name, arr in (("predictions", preds), ("truth", gold)):
        if not np.all((arr == 0) | (arr == 1)):
            raise DataError(f"{name} must contain only labels 0 and 1")
    scores = []
    for cls in (0, 1):
        tp = int(np.sum((preds == cls) & (gold == cls)))
        fp = int(np.sum((preds == cls) & (gold != cls)))
        fn = int(np.sum((preds != cls) & (gold == cls)))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


# --- harness ---------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRun:
    method: str
    seed: int
    macro_f1: float
    selection_purity: float
    solver: dict | None = None


@dataclass(frozen=True)
class BenchReport:
    runs: tuple[BenchRun, ...]
    aggregates: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "runs": [
                {
                    "method": r.method,
                    "seed": r.seed,
                    "macro_f1": r.macro_f1,
                    "selection_purity": r.selection_purity,
                    "solver": r.solver,
                }
                for r in self.runs
            ],
            "aggregates": self.aggregates,
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["method,mean_f1,std_f1,mean_purity"]
        for method, agg in self.aggregates.items():
            lines.append(
                f"{method},{agg['mean_f1']:.9g},{agg['std_f1']:.9g},{agg['mean_purity']:.9g}"
            )
        return "\n".join(lines) + "\n"


def _aggregate(runs: list[BenchRun], methods) -> dict:
    # Population standard deviation: tiny trial counts, reported as-is.
    out = {}
    for method in methods:
        f1s = np.array([r.macro_f1 for r in runs if r.method == method])
        purities = np.array([r.selection_purity for r in runs if r.method == method])
        out[method] = {
            "mean_f1": float(f1s.mean()),
            "std_f1": float(f1s.std()),
            "mean_purity": float(purities.mean()),
            "std_purity": float(purities.std()),
            "runs": int(f1s.size),
        }
    return out


def _run_one_seed(config: BenchConfig, seed: int) -> list[BenchRun]:
    (pool_matrix, pool_manifest), (val_matrix, _), (test_matrix, test_manifest) = generate(
        config, seed
    )
    test_labels = np.array(test_manifest.labels(), dtype=np.int64)
    target_tag = f"cluster:{config.target_cluster}"
    runs = []
    for method in config.methods:
        task = SelectionTask(
            train_matrix=pool_matrix,
            train_manifest=pool_manifest,
            validation=val_matrix,
            method=method,
            k=config.k,
            balanced=config.balanced,
            seed=seed,
        )
        result = run_selection(task)
        rows = [inst.row for inst in result.selected]
        labels = [inst.label for inst in result.selected]
        subset = EmbeddingMatrix(pool_matrix.values[rows])
        preds = knn_classify(subset, labels, test_matrix, config.knn_neighbors)
        score = macro_f1(preds, test_labels)
        purity = sum(
            1
            for inst in result.selected
            if pool_manifest.records[inst.row].source == target_tag
        ) / len(result.selected)
        runs.append(
            BenchRun(
                method=method,
                seed=seed,
                macro_f1=score,
                selection_purity=purity,
                solver=result.provenance.get("solver"),
            )
        )
    return runs


def run_bench(config: BenchConfig, workers: int = 1) -> BenchReport:
    """Full protocol: per (seed, method) generate, select, classify, score."""
    config.check()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(lambda s: _run_one_seed(config, s), config.seeds))
    else:
        per_seed = [_run_one_seed(config, seed) for seed in config.seeds]
    runs = [run for seed_runs in per_seed for run in seed_runs]
    return BenchReport(runs=tuple(runs), aggregates=_aggregate(runs, config.methods))


# --- flat key-value configuration files ----------------------------------------------


def parse_config(text: str) -> BenchConfig:
    """Read a flat ``key = value`` configuration (comments start with #).

    Cluster fields use ``cluster.<index>.mean`` (comma-separated floats,
    zero-padded to ``dim``), ``.stddev`` and ``.class_mix``.
    """
    entries: dict[str, str] = {}
    for raw_line in text.splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"bad config line (expected key = value): {raw_line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()

    def take(key: str, default=None):
        if key in entries:
            return entries.pop(key)
        if default is None:
            raise DataError(f"missing config key {key!r}")
        return default

    dim = int(take("dim"))
    pool_size = int(take("pool_size"))
    target_cluster = int(take("target_cluster", "0"))
    validation_size = int(take("validation_size"))
    test_size = int(take("test_size"))
    k = int(take("k"))
    seeds = tuple(int(s) for s in take("seeds", "0,1,2").split(","))
    methods = tuple(s.strip() for s in take("methods", "semsim,dissim,random").split(","))
    knn_neighbors = int(take("knn_neighbors", "1"))
    balanced = take("balanced", "true").lower() in ("1", "true", "yes", "on")

    clusters = []
    idx = 0
    while f"cluster.{idx}.mean" in entries:
        mean = [float(x) for x in entries.pop(f"cluster.{idx}.mean").split(",")]
        if len(mean) > dim:
            raise DataError(f"cluster {idx} mean longer than dim={dim}")
        mean = mean + [0.0] * (dim - len(mean))
        stddev = float(entries.pop(f"cluster.{idx}.stddev"))
        class_mix = float(entries.pop(f"cluster.{idx}.class_mix", "0.5"))
        clusters.append(ClusterSpec(mean=tuple(mean), stddev=stddev, class_mix=class_mix))
        idx += 1
    if entries:
        raise DataError(f"unknown config keys: {sorted(entries)}")
    if not clusters:
        raise DataError("config defines no clusters")

    config = BenchConfig(
        dim=dim,
        clusters=tuple(clusters),
        pool_size=pool_size,
        target_cluster=target_cluster,
        validation_size=validation_size,
        test_size=test_size,
        k=k,
        seeds=seeds,
        methods=methods,
        knn_neighbors=knn_neighbors,
        balanced=balanced,
    )
    config.check()
    return config
