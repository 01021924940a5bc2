"""Command-line front end: impute, evaluate, simulate, bench.

Exit codes are fixed for scripting: 0 success, 1 runtime/data failure
(I/O, validation, label mismatch), 2 usage error. Every command that takes
--seed is reproducible byte for byte; --threads caps the BLAS thread pool
without changing any numeric output.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import io as storage
from .evaluation import apply_dropout, evaluate_clustering, masked_rmse
from .graph import cosine_knn, refine_graph
from .model import (
    ExpressionMatrix,
    Mode,
    ScfpConfig,
    ScfpError,
    config_as_dict,
    derive_known_mask,
    validate,
)
from .pipeline import preprocess, run_scfp
from .propagation import hard_feature_propagation, soft_feature_propagation
from .synthesize import SimulationSpec, false_zero_rate, simulate

_DEFAULTS = ScfpConfig()


@contextmanager
def _thread_cap(threads):
    """Cap BLAS pools via threadpoolctl; None leaves the environment alone."""
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def _default_threads():
    raw = os.environ.get("SCFP_THREADS")
    if raw is None:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        return None


def _add_matrix_input_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", required=True, help="input matrix (.mtx or .csv)")
    parser.add_argument(
        "--input-format", choices=("mtx", "csv"), default=None,
        help="override format inferred from the extension",
    )
    parser.add_argument(
        "--orientation", choices=("cells-as-rows", "genes-as-rows"),
        default="cells-as-rows", help="csv layout (default: %(default)s)",
    )


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=_DEFAULTS.k,
                        help="neighbors per cell (default: %(default)s)")
    parser.add_argument("--alpha", type=float, default=_DEFAULTS.alpha,
                        help="soft-clamping weight in (0,1) (default: %(default)s)")
    parser.add_argument("--iters-hard", type=int, default=_DEFAULTS.hard_iterations,
                        help="hard propagation iterations (default: %(default)s)")
    parser.add_argument("--iters-soft", type=int, default=_DEFAULTS.soft_iterations,
                        help="soft propagation iterations (default: %(default)s)")
    parser.add_argument("--tolerance", type=float, default=_DEFAULTS.convergence_tolerance,
                        help="early-stop residual; 0 disables (default: %(default)s)")
    parser.add_argument("--mode", choices=[m.value for m in Mode], default=_DEFAULTS.mode.value,
                        help="pipeline variant (default: %(default)s)")
    parser.add_argument("--seed", type=int, default=_DEFAULTS.seed,
                        help="random seed (default: %(default)s)")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal BLAS threads (default: $SCFP_THREADS or unlimited)")
    parser.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None,
                        help="library-size normalize each cell before the pipeline "
                             "(default: off for impute/dropout, on for --cluster)")
    parser.add_argument("--log1p", action=argparse.BooleanOptionalAction, default=None,
                        help="log(1+v) transform before the pipeline "
                             "(default: off for impute/dropout, on for --cluster)")
    parser.add_argument("--target-sum", type=float, default=1e4,
                        help="per-cell total after normalization (default: %(default)s)")


def _config_from_args(parser: argparse.ArgumentParser, args) -> ScfpConfig:
    try:
        return ScfpConfig(
            k=args.k,
            alpha=args.alpha,
            hard_iterations=args.iters_hard,
            soft_iterations=args.iters_soft,
            convergence_tolerance=args.tolerance,
            mode=Mode(args.mode),
            seed=args.seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
        raise AssertionError  # parser.error never returns


def _load_matrix(args) -> ExpressionMatrix:
    matrix = storage.read_matrix(
        args.input, fmt=args.input_format, orientation=args.orientation
    )
    validate(matrix).raise_if_invalid()
    return matrix


def _apply_preprocess(matrix: ExpressionMatrix, args, default_on: bool) -> ExpressionMatrix:
    normalize = default_on if args.normalize is None else args.normalize
    log1p = default_on if args.log1p is None else args.log1p
    return preprocess(
        matrix,
        library_size_normalize=normalize,
        log1p=log1p,
        target_sum=args.target_sum,
    )


def _trace_entries(prefix: str, trace) -> dict:
    if trace is None:
        return {f"{prefix}.iterations": "not_run"}
    entries = {
        f"{prefix}.iterations": trace.iterations_run,
        f"{prefix}.converged": trace.converged,
    }
    if trace.residual_history:
        entries[f"{prefix}.final_residual"] = trace.residual_history[-1]
        entries[f"{prefix}.residuals"] = ",".join(
            f"{r:.6g}" for r in trace.residual_history
        )
    return entries


def cmd_impute(parser: argparse.ArgumentParser, args) -> int:
    config = _config_from_args(parser, args)
    matrix = _load_matrix(args)
    matrix = _apply_preprocess(matrix, args, default_on=False)
    started = time.perf_counter()
    with _thread_cap(args.threads if args.threads is not None else _default_threads()):
        result = run_scfp(matrix, config)
    elapsed = time.perf_counter() - started

    out_fmt = args.output_format
    if out_fmt is None:
        out_fmt = "mtx" if args.output.lower().endswith(".mtx") else "csv"
    storage.write_matrix(result.denoised, args.output, fmt=out_fmt)

    if args.report:
        entries: dict = {f"config.{k}": v for k, v in config_as_dict(config).items()}
        entries["input"] = args.input
        entries["cells"] = matrix.n_cells
        entries["genes"] = matrix.n_genes
        entries["wall_time_seconds"] = elapsed
        entries["initial_graph.edges"] = result.initial_graph_summary.edge_count
        entries["initial_graph.fallback_rows"] = result.initial_graph_summary.fallback_rows
        if result.refined_graph_summary is not None:
            entries["refined_graph.edges"] = result.refined_graph_summary.edge_count
            entries["refined_graph.changed_edges"] = result.refined_graph_summary.changed_edges
            entries["refined_graph.changed_rows"] = result.refined_graph_summary.changed_rows
        entries.update(_trace_entries("hard", result.hard_trace))
        entries.update(_trace_entries("soft", result.soft_trace))
        storage.write_report(entries, args.report)
    return 0


def cmd_evaluate(parser: argparse.ArgumentParser, args) -> int:
    if args.dropout is None and not args.cluster:
        parser.error("nothing to evaluate: pass --dropout RATE and/or --cluster")
    if args.dropout is not None and not (0.0 < args.dropout < 1.0):
        parser.error(f"--dropout must lie in (0, 1), got {args.dropout}")
    config = _config_from_args(parser, args)
    matrix = _load_matrix(args)

    entries: dict = {f"config.{k}": v for k, v in config_as_dict(config).items()}
    entries["input"] = args.input
    table: dict[str, object] = {}
    started = time.perf_counter()
    threads = args.threads if args.threads is not None else _default_threads()

    with _thread_cap(threads):
        if args.dropout is not None:
            x_eval = _apply_preprocess(matrix, args, default_on=False)
            experiment = apply_dropout(x_eval, args.dropout, args.seed)
            if args.oracle_impute:
                imputed = x_eval
            else:
                imputed = run_scfp(experiment.corrupted, config).denoised
            rmse = masked_rmse(imputed, experiment.held_out)
            rmse_zeros = masked_rmse(experiment.corrupted, experiment.held_out)
            entries["dropout.requested_rate"] = experiment.requested_rate
            entries["dropout.realized_rate"] = experiment.realized_rate
            entries["dropout.held_out"] = len(experiment.held_out)
            entries["dropout.rmse_masked"] = rmse
            entries["dropout.rmse_no_imputation"] = rmse_zeros
            table["rmse"] = rmse

        if args.cluster:
            if not args.labels:
                raise ScfpError("--cluster needs a labels file (--labels PATH)")
            labels = storage.read_labels(args.labels, cell_ids=matrix.cell_ids)
            if len(labels) != matrix.n_cells:
                raise ScfpError(
                    f"{len(labels)} labels for {matrix.n_cells} cells"
                )
            if args.n_clusters == "auto":
                n_clusters = len(set(labels))
            else:
                n_clusters = int(args.n_clusters)
                if n_clusters < 1:
                    parser.error("--n-clusters must be positive or 'auto'")
            x_eval = _apply_preprocess(matrix, args, default_on=True)
            raw_scores = evaluate_clustering(x_eval, labels, c=n_clusters, seed=args.seed)
            denoised = run_scfp(x_eval, config).denoised
            imputed_scores = evaluate_clustering(denoised, labels, c=n_clusters, seed=args.seed)
            if args.save_embedding or args.save_clusters:
                from .evaluation import kmeans, pca_reduce

                d = max(1, min(50, denoised.n_cells - 1, denoised.n_genes))
                embedded = pca_reduce(denoised, d, args.seed)
                if args.save_embedding:
                    # embeddings are signed, so they bypass the nonnegative
                    # expression-matrix writer
                    _write_embedding_csv(
                        embedded, matrix.cell_ids, args.save_embedding
                    )
                if args.save_clusters:
                    clusters = kmeans(embedded, n_clusters, seed=args.seed)
                    storage.write_labels(
                        [f"cluster_{c}" for c in clusters.labels], args.save_clusters
                    )
            for name, report in (("raw", raw_scores), ("imputed", imputed_scores)):
                entries[f"cluster.{name}.ari"] = report.ari
                entries[f"cluster.{name}.nmi"] = report.nmi
                entries[f"cluster.{name}.ca"] = report.ca
                if report.flags:
                    entries[f"cluster.{name}.flags"] = ";".join(report.flags)
                table[f"ari_{name}"] = report.ari
                table[f"nmi_{name}"] = report.nmi
                table[f"ca_{name}"] = report.ca

    entries["wall_time_seconds"] = time.perf_counter() - started
    if args.report:
        storage.write_report(entries, args.report)
    if args.table_row:
        columns = ["rmse", "ari_raw", "nmi_raw", "ca_raw", "ari_imputed", "nmi_imputed", "ca_imputed"]
        rendered = [args.input, config.mode.value, str(args.dropout)]
        rendered += [
            f"{table[c]:.6g}" if c in table else "NA" for c in columns
        ]
        print("\t".join(rendered))
    return 0


def cmd_simulate(parser: argparse.ArgumentParser, args) -> int:
    try:
        spec = SimulationSpec(
            n_cells=args.cells,
            n_genes=args.genes,
            n_groups=args.groups,
            de_fraction=args.de_fraction,
            de_strength=args.de_strength,
            base_mean=args.base_mean,
            dispersion=args.dispersion,
            dropout_rate=args.dropout_rate,
            seed=args.seed,
        )
    except ValueError as exc:
        parser.error(str(exc))
        raise AssertionError
    truth, observed, labels = simulate(spec)
    rate = false_zero_rate(truth, observed)

    storage.write_matrix(truth, args.out_truth, fmt=_fmt_for(args.out_truth))
    storage.write_matrix(observed, args.out_observed, fmt=_fmt_for(args.out_observed))
    storage.write_labels([f"group_{g}" for g in labels], args.out_labels)
    if args.report:
        entries = {
            "spec.cells": spec.n_cells,
            "spec.genes": spec.n_genes,
            "spec.groups": spec.n_groups,
            "spec.de_fraction": spec.de_fraction,
            "spec.de_strength": spec.de_strength,
            "spec.base_mean": spec.base_mean,
            "spec.dispersion": spec.dispersion,
            "spec.dropout_rate": spec.dropout_rate,
            "spec.seed": spec.seed,
            "realized_false_zero_rate": rate,
        }
        storage.write_report(entries, args.report)
    print(f"false_zero_rate: {rate:.6f}")
    return 0


def _fmt_for(path: str) -> str:
    return "csv" if path.lower().endswith(".csv") else "mtx"


def _write_embedding_csv(embedded, cell_ids, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        d = embedded.shape[1]
        handle.write(",".join(["cell_id"] + [f"pc_{i}" for i in range(d)]) + "\n")
        for cid, row in zip(cell_ids, embedded):
            handle.write(",".join([cid] + [repr(v) for v in row.tolist()]) + "\n")


def cmd_bench(parser: argparse.ArgumentParser, args) -> int:
    if args.cells < 2 or args.genes < 1:
        parser.error("bench needs --cells >= 2 and --genes >= 1")
    if args.k < 1 or args.iters_hard < 1 or args.iters_soft < 1:
        parser.error("bench needs positive --k and iteration counts")
    spec = SimulationSpec(
        n_cells=args.cells,
        n_genes=args.genes,
        n_groups=min(3, args.cells),
        dropout_rate=args.dropout_rate,
        seed=args.seed,
    )
    _, observed, _ = simulate(spec)
    mask = derive_known_mask(observed)
    entries = observed.n_cells * observed.n_genes

    timings: dict[str, float] = {}
    threads = args.threads if args.threads is not None else _default_threads()
    with _thread_cap(threads):
        t0 = time.perf_counter()
        initial = cosine_knn(observed, args.k)
        timings["knn"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        warmed, _ = hard_feature_propagation(observed, mask, initial, args.iters_hard, 0.0)
        timings["hard"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        refined = refine_graph(warmed, args.k)
        timings["refine"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        denoised, _ = soft_feature_propagation(
            warmed, refined, _DEFAULTS.alpha, args.iters_soft, 0.0
        )
        timings["soft"] = time.perf_counter() - t0

    checksum = hashlib.sha256(np.ascontiguousarray(denoised.values).tobytes()).hexdigest()
    total = sum(timings.values())
    print(f"bench.cells: {args.cells}")
    print(f"bench.genes: {args.genes}")
    print(f"knn.seconds: {timings['knn']:.3f}")
    print(f"knn.cells_per_sec: {args.cells / max(timings['knn'], 1e-9):.1f}")
    print(f"hard.seconds: {timings['hard']:.3f}")
    print(f"hard.entries_per_sec: {entries * args.iters_hard / max(timings['hard'], 1e-9):.3e}")
    print(f"refine.seconds: {timings['refine']:.3f}")
    print(f"soft.seconds: {timings['soft']:.3f}")
    print(f"soft.entries_per_sec: {entries * args.iters_soft / max(timings['soft'], 1e-9):.3e}")
    print(f"total.seconds: {total:.3f}")
    print(f"denoised.sha256: {checksum}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scfp",
        description="Denoise sparse cell-gene matrices by bi-level feature propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_impute = sub.add_parser("impute", help="impute a matrix and write the denoised result")
    _add_matrix_input_flags(p_impute)
    _add_pipeline_flags(p_impute)
    p_impute.add_argument("--output", required=True, help="denoised matrix path (.mtx or .csv)")
    p_impute.add_argument("--output-format", choices=("mtx", "csv"), default=None)
    p_impute.add_argument("--report", default=None, help="write a key-value run report here")
    p_impute.set_defaults(func=cmd_impute)

    p_eval = sub.add_parser("evaluate", help="dropout-RMSE and/or clustering evaluation")
    _add_matrix_input_flags(p_eval)
    _add_pipeline_flags(p_eval)
    p_eval.add_argument("--dropout", type=float, default=None,
                        help="corrupt this fraction of nonzeros, impute, report masked RMSE")
    p_eval.add_argument("--cluster", action="store_true",
                        help="cluster raw and imputed matrices and report ARI/NMI/CA")
    p_eval.add_argument("--labels", default=None, help="ground-truth labels file")
    p_eval.add_argument("--n-clusters", default="auto",
                        help="cluster count or 'auto' = distinct labels (default: auto)")
    p_eval.add_argument("--report", default=None, help="write a key-value report here")
    p_eval.add_argument("--table-row", action="store_true",
                        help="print one tab-separated metrics row to stdout")
    p_eval.add_argument("--save-embedding", default=None,
                        help="write the imputed matrix's PCA embedding to this csv")
    p_eval.add_argument("--save-clusters", default=None,
                        help="write the predicted cluster labels to this file")
    p_eval.add_argument("--oracle-impute", action="store_true", help=argparse.SUPPRESS)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset with planted dropout")
    p_sim.add_argument("--cells", type=int, default=500, help="cells (default: %(default)s)")
    p_sim.add_argument("--genes", type=int, default=2000, help="genes (default: %(default)s)")
    p_sim.add_argument("--groups", type=int, default=3, help="cell groups (default: %(default)s)")
    p_sim.add_argument("--de-fraction", type=float, default=0.2,
                       help="fraction of genes up-regulated per group (default: %(default)s)")
    p_sim.add_argument("--de-strength", type=float, default=6.0,
                       help="fold change of up-regulated genes (default: %(default)s)")
    p_sim.add_argument("--base-mean", type=float, default=2.0,
                       help="mean of the gene-mean distribution (default: %(default)s)")
    p_sim.add_argument("--dispersion", type=float, default=0.5,
                       help="gene-mean dispersion (default: %(default)s)")
    p_sim.add_argument("--dropout-rate", type=float, default=0.6,
                       help="probability a nonzero is observed as 0 (default: %(default)s)")
    p_sim.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    p_sim.add_argument("--out-truth", required=True, help="ground-truth matrix path")
    p_sim.add_argument("--out-observed", required=True, help="corrupted matrix path")
    p_sim.add_argument("--out-labels", required=True, help="group labels path")
    p_sim.add_argument("--report", default=None, help="write a spec echo report here")
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="time kNN construction and propagation sweeps")
    p_bench.add_argument("--cells", type=int, default=5000, help="cells (default: %(default)s)")
    p_bench.add_argument("--genes", type=int, default=15000, help="genes (default: %(default)s)")
    p_bench.add_argument("--k", type=int, default=_DEFAULTS.k,
                         help="neighbors per cell (default: %(default)s)")
    p_bench.add_argument("--iters-hard", type=int, default=_DEFAULTS.hard_iterations,
                         help="hard iterations (default: %(default)s)")
    p_bench.add_argument("--iters-soft", type=int, default=_DEFAULTS.soft_iterations,
                         help="soft iterations (default: %(default)s)")
    p_bench.add_argument("--dropout-rate", type=float, default=0.5,
                         help="synthetic dropout rate (default: %(default)s)")
    p_bench.add_argument("--seed", type=int, default=_DEFAULTS.seed,
                         help="random seed (default: %(default)s)")
    p_bench.add_argument("--threads", type=int, default=None,
                         help="cap internal BLAS threads (default: $SCFP_THREADS or unlimited)")
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    subparser = parser  # parser.error on the top parser prints global usage
    try:
        return args.func(subparser, args)
    except ScfpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
