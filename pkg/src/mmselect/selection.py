"""Selector orchestration: semantic, transport-gradient, and random selection.

All three selectors operate on a (train matrix + manifest, validation matrix)
pair and emit a reproducible :class:`SelectionResult`. Class balance is
enforced by per-class ranking followed by an interleaved take, never by
post-hoc filtering of a global top-k, so the balance constraint holds even
when one class dominates the scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import transport
from .errors import DataError, MissingLabels, ZeroNormCentroid, ZeroNormInput
from .geometry import centroid, cosine_to_centroid
from .rng import Xoshiro256StarStar
from .store import EmbeddingMatrix, InstanceManifest

DEFAULT_K = 750
DEFAULT_FRACTION = 0.05

METHODS = ("semsim", "dissim", "random")


@dataclass(frozen=True)
class SelectionTask:
    train_matrix: EmbeddingMatrix
    train_manifest: InstanceManifest
    validation: EmbeddingMatrix
    method: str
    k: int = DEFAULT_K
    balanced: bool = True
    seed: int = 0
    p: float = 2.0
    epsilon: float | None = None        # dissim: override auto regularizer
    exact_cell_limit: int = transport.EXACT_CELL_LIMIT
    greedy_rounds: int = 1              # dissim extension: re-solve after removals

    def validate(self) -> None:
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}")
        if not (1 <= self.k <= self.train_matrix.count):
            raise DataError(
                f"k={self.k} must lie in [1, {self.train_matrix.count}]"
            )
        if self.validation.count < 1:
            raise DataError("validation set is empty")
        if self.train_matrix.count != len(self.train_manifest):
            raise DataError(
                f"train matrix has {self.train_matrix.count} rows, "
                f"manifest has {len(self.train_manifest)}"
            )
        if self.balanced:
            missing = [
                row for row, rec in enumerate(self.train_manifest.records)
                if rec.label is None
            ]
            if missing:
                raise MissingLabels(
                    f"balanced selection needs labels; {len(missing)} rows lack one "
                    f"(first at row {missing[0]})"
                )


@dataclass(frozen=True)
class SelectedInstance:
    id: str
    score: float
    label: int | None
    row: int


@dataclass(frozen=True)
class SelectionResult:
    method: str
    seed: int
    k: int
    balanced: bool
    selected: tuple[SelectedInstance, ...]
    balance: dict
    provenance: dict
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_jsonl(self) -> str:
        """JSON Lines: one header object, then one object per instance."""
        header = {
            "method": self.method,
            "seed": self.seed,
            "k": self.k,
            "balanced": self.balanced,
            "balance": self.balance,
            "provenance": self.provenance,
            "warnings": list(self.warnings),
        }
        lines = [json.dumps(header, ensure_ascii=False, separators=(",", ":"))]
        for rank, inst in enumerate(self.selected, start=1):
            lines.append(
                json.dumps(
                    {"id": inst.id, "score": inst.score, "label": inst.label, "rank": rank},
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
            )
        return "\n".join(lines) + "\n"


def _provenance(task: SelectionTask, solver_diagnostics: dict | None = None) -> dict:
    doc = {
        "train_digest": task.train_matrix.digest(),
        "train_manifest_digest": task.train_manifest.digest(),
        "validation_digest": task.validation.digest(),
    }
    if solver_diagnostics is not None:
        doc["solver"] = solver_diagnostics
    return doc


def _rank_rows(scores: np.ndarray, descending: bool) -> np.ndarray:
    """Stable argsort; ties always break toward the lower row index."""
    key = -scores if descending else scores
    return np.argsort(key, kind="stable")


def _balanced_take(
    order: np.ndarray, labels: list[int | None], k: int
) -> tuple[list[int], list[str]]:
    """Per-class take: ceil(k/2) of label 0, floor(k/2) of label 1.

    A class that runs out is topped up from the other class's ranking, with a
    warning. ``order`` lists all rows best-first.
    """
    quota = {0: math.ceil(k / 2), 1: k // 2}
    by_class = {0: [row for row in order if labels[row] == 0],
                1: [row for row in order if labels[row] == 1]}
    take: list[int] = []
    warnings: list[str] = []
    deficit = 0
    for cls in (0, 1):
        got = by_class[cls][: quota[cls]]
        if len(got) < quota[cls]:
            deficit += quota[cls] - len(got)
            warnings.append(
                f"class {cls} has only {len(by_class[cls])} candidates for a "
                f"quota of {quota[cls]}; filling from the other class"
            )
        take.extend(got)
    if deficit:
        chosen = set(take)
        for row in order:
            if deficit == 0:
                break
            if int(row) not in chosen:
                take.append(int(row))
                chosen.add(int(row))
                deficit -= 1
    return [int(r) for r in take], warnings


def _assemble(
    task: SelectionTask,
    scores: np.ndarray,
    descending: bool,
    provenance: dict,
    draw_order: list[int] | None = None,
) -> SelectionResult:
    labels = task.train_manifest.labels()
    records = task.train_manifest.records
    warnings: list[str] = []

    if draw_order is not None:
        rows = draw_order[: task.k]
    else:
        order = _rank_rows(scores, descending)
        if task.balanced:
            rows, warnings = _balanced_take(order, labels, task.k)
            # Present the union in score order for a readable manifest.
            rows.sort(key=lambda r: (scores[r] if not descending else -scores[r], r))
        else:
            rows = [int(r) for r in order[: task.k]]

    selected = tuple(
        SelectedInstance(
            id=records[row].id,
            score=float(scores[row]),
            label=labels[row],
            row=row,
        )
        for row in rows
    )
    count0 = sum(1 for inst in selected if inst.label == 0)
    count1 = sum(1 for inst in selected if inst.label == 1)
    return SelectionResult(
        method=task.method,
        seed=task.seed,
        k=task.k,
        balanced=task.balanced,
        selected=selected,
        balance={"count0": count0, "count1": count1},
        provenance=provenance,
        warnings=tuple(warnings),
    )


# --- scoring -----------------------------------------------------------------


def semsim_scores(task: SelectionTask) -> np.ndarray:
    """Cosine similarity of every train row to the validation centroid."""
    center = centroid(task.validation)
    if np.linalg.norm(center.vector) == 0.0:
        raise ZeroNormCentroid("validation mean is the zero vector")
    try:
        return cosine_to_centroid(task.train_matrix, center)
    except ZeroNormInput as exc:
        raise DataError(str(exc)) from exc


def dissim_scores(task: SelectionTask) -> tuple[np.ndarray, dict]:
    """Calibrated transport-gradient scores plus solver diagnostics.

    Solver dispatch: exact transportation simplex up to the cell limit,
    log-domain Sinkhorn beyond it (epsilon defaults to 0.01 x mean cost).
    More negative scores mark points that pull the pool toward the
    validation distribution.
    """
    cost = transport.cost_matrix(task.train_matrix, task.validation, p=task.p)
    a = transport.uniform_marginals(cost.n)
    b = transport.uniform_marginals(cost.m)
    if cost.n * cost.m <= task.exact_cell_limit:
        solution = transport.solve_exact(cost, a, b, max_cells=task.exact_cell_limit)
    else:
        epsilon = task.epsilon if task.epsilon is not None else 0.01 * cost.mean()
        solution = transport.solve_sinkhorn(cost, a, b, epsilon=epsilon)
    grads = transport.calibrated_gradients(solution)
    return grads.scores, solution.to_diagnostics()


# --- selectors ---------------------------------------------------------------


def select_semsim(task: SelectionTask) -> SelectionResult:
    """Keep the rows most similar to the validation centroid."""
    task.validate()
    scores = semsim_scores(task)
    return _assemble(task, scores, descending=True, provenance=_provenance(task))


def select_dissim(task: SelectionTask) -> SelectionResult:
    """Keep the rows whose calibrated transport gradients are most negative."""
    task.validate()
    if task.train_matrix.count < 2:
        raise DataError("dissim needs at least two train rows")
    if task.greedy_rounds <= 1:
        scores, diagnostics = dissim_scores(task)
        return _assemble(
            task, scores, descending=False, provenance=_provenance(task, diagnostics)
        )
    return _select_dissim_greedy(task)


def _select_dissim_greedy(task: SelectionTask) -> SelectionResult:
    """Extension: split k over several rounds, re-solving after each removal."""
    remaining = list(range(task.train_matrix.count))
    labels = task.train_manifest.labels()
    per_round = [task.k // task.greedy_rounds] * task.greedy_rounds
    for i in range(task.k % task.greedy_rounds):
        per_round[i] += 1
    # Class quotas are global across rounds so the final set stays balanced.
    quota = {0: math.ceil(task.k / 2), 1: task.k // 2} if task.balanced else None
    picked: list[int] = []
    picked_scores: dict[int, float] = {}
    diagnostics: list[dict] = []
    for round_k in per_round:
        if round_k == 0 or len(remaining) < 2:
            continue
        sub_matrix = EmbeddingMatrix(task.train_matrix.values[remaining])
        sub_manifest = InstanceManifest(
            records=tuple(task.train_manifest.records[r] for r in remaining)
        )
        sub_task = SelectionTask(
            train_matrix=sub_matrix,
            train_manifest=sub_manifest,
            validation=task.validation,
            method="dissim",
            k=min(round_k, len(remaining)),
            balanced=task.balanced,
            seed=task.seed,
            p=task.p,
            epsilon=task.epsilon,
            exact_cell_limit=task.exact_cell_limit,
        )
        sub_task.validate()
        scores, diag = dissim_scores(sub_task)
        diagnostics.append(diag)
        order = _rank_rows(scores, descending=False)
        sub_labels = sub_manifest.labels()
        rows: list[int] = []
        budget = sub_task.k
        if quota is not None:
            for r in order:
                if budget == 0:
                    break
                if quota[sub_labels[r]] > 0:
                    rows.append(int(r))
                    quota[sub_labels[r]] -= 1
                    budget -= 1
            # Quota exhausted on one side: top up from the other class.
            if budget:
                taken = set(rows)
                for r in order:
                    if budget == 0:
                        break
                    if int(r) not in taken:
                        rows.append(int(r))
                        budget -= 1
        else:
            rows = [int(r) for r in order[: sub_task.k]]
        for r in rows:
            original = remaining[r]
            picked.append(original)
            picked_scores[original] = float(scores[r])
        removed = {remaining[r] for r in rows}
        remaining = [r for r in remaining if r not in removed]

    picked.sort(key=lambda r: (picked_scores[r], r))
    records = task.train_manifest.records
    selected = tuple(
        SelectedInstance(
            id=records[row].id, score=picked_scores[row], label=labels[row], row=row
        )
        for row in picked
    )
    count0 = sum(1 for inst in selected if inst.label == 0)
    count1 = sum(1 for inst in selected if inst.label == 1)
    return SelectionResult(
        method=task.method,
        seed=task.seed,
        k=task.k,
        balanced=task.balanced,
        selected=selected,
        balance={"count0": count0, "count1": count1},
        provenance=_provenance(task, {"rounds": diagnostics}),
        warnings=(),
    )


def select_random(task: SelectionTask) -> SelectionResult:
    """Seeded uniform sampling without replacement; scores recorded as 0."""
    task.validate()
    rng = Xoshiro256StarStar(task.seed)
    n = task.train_matrix.count
    labels = task.train_manifest.labels()
    if task.balanced:
        quota = {0: math.ceil(task.k / 2), 1: task.k // 2}
        pools = {0: [r for r in range(n) if labels[r] == 0],
                 1: [r for r in range(n) if labels[r] == 1]}
        draw: list[int] = []
        warnings: list[str] = []
        deficits = {}
        for cls in (0, 1):
            pool = pools[cls]
            take = min(quota[cls], len(pool))
            if take < quota[cls]:
                warnings.append(
                    f"class {cls} has only {len(pool)} candidates for a quota of "
                    f"{quota[cls]}; filling from the other class"
                )
            deficits[cls] = quota[cls] - take
            chosen = rng.sample_indices(len(pool), take)
            draw.extend(pool[i] for i in chosen)
        total_deficit = deficits[0] + deficits[1]
        if total_deficit:
            leftover = [r for r in range(n) if r not in set(draw)]
            chosen = rng.sample_indices(len(leftover), total_deficit)
            draw.extend(leftover[i] for i in chosen)
    else:
        warnings = []
        draw = rng.sample_indices(n, task.k)

    scores = np.zeros(n, dtype=np.float64)
    result = _assemble(
        task, scores, descending=False, provenance=_provenance(task), draw_order=draw
    )
    if warnings:
        result = replace(result, warnings=tuple(warnings))
    return result


def run_selection(task: SelectionTask) -> SelectionResult:
    task.validate()
    if task.method == "semsim":
        return select_semsim(task)
    if task.method == "dissim":
        return select_dissim(task)
    return select_random(task)


def sample_validation(test_manifest_size: int, fraction: float, seed: int) -> list[int]:
    """ceil(fraction x size) distinct indices, seeded, sorted ascending.

    The drawn rows become an unlabeled validation set downstream; labels are
    stripped by the callers.
    """
    if not (0 < fraction <= 1):
        raise DataError(f"fraction must lie in (0, 1], got {fraction}")
    if test_manifest_size < 0:
        raise DataError("manifest size must be nonnegative")
    count = math.ceil(fraction * test_manifest_size)
    rng = Xoshiro256StarStar(seed)
    return sorted(rng.sample_indices(test_manifest_size, count))
