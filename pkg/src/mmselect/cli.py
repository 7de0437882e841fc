"""Command-line interface: validate, fuse, score, select, project, bench.

Output files are written atomically (temp file + rename) so failed runs never
leave truncated artifacts. Exit codes: 0 success, 1 usage error, 2 invalid
input data, 3 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import replace

from . import __version__, bench
from .errors import DataError, MmselectError, SolverError
from .geometry import pca2, projection_to_csv
from .rng import PRNG_NAME
from .selection import (
    DEFAULT_K,
    SelectionTask,
    dissim_scores,
    run_selection,
    semsim_scores,
)
from .store import (
    EmbeddingMatrix,
    fuse_modalities,
    load_embeddings,
    load_manifest,
    to_bytes,
    validate_pair,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3


def worker_count() -> int:
    """MMSELECT_THREADS caps worker threads; 0 or unset means auto."""
    raw = os.environ.get("MMSELECT_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        return os.cpu_count() or 1
    return value


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mmselect-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _load_pair(emb_path: str, manifest_path: str):
    return load_embeddings(emb_path), load_manifest(manifest_path)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmselect",
        description="Distribution-matching selection over embedding pools.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"mmselect {__version__} (PRNG: {PRNG_NAME})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="cross-check an embedding/manifest pair")
    p.add_argument("--emb", required=True, help="EMB1 embedding file")
    p.add_argument("--manifest", required=True, help="JSONL manifest file")
    p.add_argument(
        "--allow-unlabeled",
        action="store_true",
        help="do not require a label on every record (validation-role manifests)",
    )
    p.add_argument(
        "--require-unit",
        action="store_true",
        help="additionally check that every row has unit L2 norm",
    )

    p = sub.add_parser("fuse", help="average image/text embeddings into unit rows")
    p.add_argument("--image-emb", required=True)
    p.add_argument("--text-emb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--allow-single-modality",
        action="store_true",
        help="pass a lone modality through renormalized instead of failing",
    )

    def selection_args(p, with_k: bool):
        p.add_argument("--method", required=True, choices=("semsim", "dissim", "random"))
        p.add_argument("--train-emb", required=True)
        p.add_argument("--train-manifest", required=True)
        p.add_argument("--val-emb", required=True)
        if with_k:
            p.add_argument("--k", type=int, default=DEFAULT_K)
        p.add_argument("--p", type=float, default=2.0, help="cost exponent (dissim)")
        p.add_argument(
            "--epsilon",
            type=float,
            default=None,
            help="override the entropic regularizer (dissim beyond the exact limit)",
        )
        p.add_argument("--seed", type=int, default=0)
        balance = p.add_mutually_exclusive_group()
        balance.add_argument("--balanced", dest="balanced", action="store_true", default=True)
        balance.add_argument("--unbalanced", dest="balanced", action="store_false")
        p.add_argument("--out", required=True)

    p = sub.add_parser("select", help="select k instances, write a JSONL manifest")
    selection_args(p, with_k=True)
    p.add_argument(
        "--greedy-rounds",
        type=int,
        default=1,
        help="dissim extension: split k across rounds, re-solving between them",
    )

    p = sub.add_parser("score", help="score every instance, write a full CSV")
    selection_args(p, with_k=False)

    p = sub.add_parser("project", help="2-component PCA projection to CSV")
    p.add_argument("--emb", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--emb2", help="optional second dataset")
    p.add_argument("--manifest2")
    p.add_argument(
        "--fit-on",
        choices=("self", "joint"),
        default="self",
        help="fit the projection on each dataset alone or on both stacked",
    )
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="run the selection benchmark harness")
    p.add_argument("--config", help="flat key-value configuration file")
    p.add_argument("--default-config", action="store_true", help="use the built-in 3-cluster setup")
    p.add_argument("--seeds", help="comma-separated seed list override")
    p.add_argument("--k-sweep", help="comma-separated k values; runs the bench per k")
    p.add_argument("--out-json", required=True)
    p.add_argument("--out-csv")

    return parser


def _cmd_validate(args) -> int:
    matrix, manifest = _load_pair(args.emb, args.manifest)
    report = validate_pair(
        matrix,
        manifest,
        require_labels=not args.allow_unlabeled,
        require_unit=True if args.require_unit else None,
    )
    if report.ok:
        print(f"ok: {matrix.count} rows x {matrix.dim} dims, manifest aligned")
        return EXIT_OK
    for violation in report.violations:
        print(f"violation[{violation.code}]: {violation.message}", file=sys.stderr)
    return EXIT_DATA


def _cmd_fuse(args) -> int:
    image = load_embeddings(args.image_emb)
    text = load_embeddings(args.text_emb)
    fused = fuse_modalities(image, text, allow_single_modality=args.allow_single_modality)
    atomic_write(args.out, to_bytes(fused))
    print(f"wrote {fused.count} fused rows ({fused.dim} dims) to {args.out}")
    return EXIT_OK


def _make_task(args, k: int | None) -> SelectionTask:
    train_matrix, train_manifest = _load_pair(args.train_emb, args.train_manifest)
    validation = load_embeddings(args.val_emb)
    return SelectionTask(
        train_matrix=train_matrix,
        train_manifest=train_manifest,
        validation=validation,
        method=args.method,
        k=k if k is not None else train_matrix.count,
        balanced=args.balanced,
        seed=args.seed,
        p=args.p,
        epsilon=args.epsilon,
        greedy_rounds=getattr(args, "greedy_rounds", 1),
    )


def _cmd_select(args) -> int:
    task = _make_task(args, args.k)
    result = run_selection(task)
    atomic_write(args.out, result.to_jsonl().encode("utf-8"))
    print(
        f"selected {len(result.selected)} instances by {result.method} "
        f"(balance {result.balance['count0']}/{result.balance['count1']}) -> {args.out}"
    )
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def _cmd_score(args) -> int:
    if args.method == "random":
        raise DataError("score needs a deterministic method (semsim or dissim)")
    task = _make_task(args, None)
    if args.method == "semsim":
        scores = semsim_scores(task)
    else:
        if task.train_matrix.count < 2:
            raise DataError("dissim needs at least two train rows")
        scores, _ = dissim_scores(task)
    lines = ["id,score,label"]
    for row, record in enumerate(task.train_manifest.records):
        label = "" if record.label is None else str(record.label)
        lines.append(f"{record.id},{float(scores[row])!r},{label}")
    atomic_write(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"scored {task.train_matrix.count} instances by {args.method} -> {args.out}")
    return EXIT_OK


def _cmd_project(args) -> int:
    matrix, manifest = _load_pair(args.emb, args.manifest)
    datasets = [(matrix, manifest)]
    if args.emb2:
        if not args.manifest2:
            raise DataError("--emb2 requires --manifest2")
        datasets.append(_load_pair(args.emb2, args.manifest2))

    import numpy as np

    if args.fit_on == "joint" and len(datasets) == 2:
        stacked = EmbeddingMatrix(
            np.vstack([d[0].values for d in datasets]).astype(np.float32)
        )
        projection = pca2(stacked)
        ids = [r.id for _, mf in datasets for r in mf.records]
        labels = [r.label for _, mf in datasets for r in mf.records]
        csv_text = projection_to_csv(projection, ids, labels)
        ev = projection.explained_variance
    else:
        parts = []
        ev = None
        for mat, mf in datasets:
            projection = pca2(mat)
            ids = [r.id for r in mf.records]
            labels = [r.label for r in mf.records]
            text = projection_to_csv(projection, ids, labels)
            if parts:
                text = text.split("\n", 1)[1]
            parts.append(text)
            ev = projection.explained_variance if ev is None else ev
        csv_text = "".join(parts)
    atomic_write(args.out, csv_text.encode("utf-8"))
    print(f"explained variance: pc1={ev[0]:.4f} pc2={ev[1]:.4f}", file=sys.stderr)
    print(f"wrote projection to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    if args.config and args.default_config:
        raise DataError("--config and --default-config are mutually exclusive")
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = bench.parse_config(fh.read())
    else:
        config = bench.default_config()
    if args.seeds:
        config = replace(config, seeds=tuple(int(s) for s in args.seeds.split(",")))

    ks = [config.k]
    if args.k_sweep:
        ks = [int(v) for v in args.k_sweep.split(",")]

    reports = {}
    for k in ks:
        cfg = config if k == config.k else replace(config, k=k)
        reports[k] = bench.run_bench(cfg, workers=min(worker_count(), len(cfg.seeds)))

    if len(reports) == 1:
        report = next(iter(reports.values()))
        atomic_write(args.out_json, report.to_json().encode("utf-8"))
        if args.out_csv:
            atomic_write(args.out_csv, report.to_csv().encode("utf-8"))
    else:
        import json as _json

        doc = {str(k): _json.loads(r.to_json()) for k, r in reports.items()}
        atomic_write(
            args.out_json,
            (_json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8"),
        )
        if args.out_csv:
            parts = []
            for k, r in reports.items():
                body = r.to_csv().splitlines()
                if not parts:
                    parts.append("k," + body[0])
                parts.extend(f"{k},{line}" for line in body[1:])
            atomic_write(args.out_csv, ("\n".join(parts) + "\n").encode("utf-8"))

    for k, report in reports.items():
        for method, agg in report.aggregates.items():
            print(
                f"k={k} {method}: macro_f1 {agg['mean_f1']:.4f} ({agg['std_f1']:.4f}) "
                f"purity {agg['mean_purity']:.4f}"
            )
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "fuse": _cmd_fuse,
    "select": _cmd_select,
    "score": _cmd_score,
    "project": _cmd_project,
    "bench": _cmd_bench,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage problems.
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MmselectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
