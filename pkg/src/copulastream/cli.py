"""Command-line front end: simulate streams, impute them, detect changes.

Exit codes: 0 success, 2 configuration error, 3 data or schema error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import check_batch_size, check_schema, split_batches
from .copula import (
    ConstantSchedule,
    CopulaModel,
    DecayingSchedule,
    OnlineEmState,
    fit_minibatch,
    fit_offline,
    impute_matrix,
    load_model,
    online_update,
    save_model,
)
from .cpd import online_cpd_loop
from .errors import ConfigError, CopulaStreamError, DataError, NumericalError, SchemaError
from .io import config_line, format_cell, read_matrix, write_matrix, write_table
from .metrics import score_report
from .synth import SynthConfig, generate_stream


def _add_common_model_flags(parser: argparse.ArgumentParser, default_batch: int) -> None:
    parser.add_argument("--schema", help="column kinds, e.g. 'cont,ord5,bin' (overrides #kind)")
    parser.add_argument("--schema-file", help="file containing the schema string")
    parser.add_argument("--window", type=int, default=200, help="marginal window size")
    parser.add_argument("--batch", type=int, default=default_batch, help="rows per model update")
    parser.add_argument("--gamma", type=float, default=0.5, help="constant online step size")
    parser.add_argument("--gamma-c", type=float, default=5.0, help="decaying step constant c")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copulastream",
        description="Streaming Gaussian-copula imputation and correlation "
        "change point detection",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic masked stream")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--rows-per-segment", type=int, default=2000)
    sim.add_argument("--segments", type=int, default=3)
    sim.add_argument("--p-cont", type=int, default=5)
    sim.add_argument("--p-ord", type=int, default=5)
    sim.add_argument("--p-bin", type=int, default=5)
    sim.add_argument("--levels", type=int, default=5)
    sim.add_argument("--missing-ratio", type=float, default=0.4)
    sim.add_argument("--mechanism", choices=("mcar", "mnar"), default="mcar")
    sim.add_argument("--seed", type=int, default=0)

    imp = sub.add_parser("impute", help="impute missing cells of a CSV stream")
    imp.add_argument("--data", required=True, help="input CSV (empty cells are missing)")
    imp.add_argument("--truth", help="complete CSV for scoring")
    imp.add_argument("--out", required=True, help="output directory")
    imp.add_argument(
        "--mode", choices=("online", "minibatch", "offline"), default="online"
    )
    imp.add_argument("--tol", type=float, default=1e-3, help="offline EM tolerance")
    imp.add_argument("--max-iter", type=int, default=50, help="offline EM iteration cap")
    imp.add_argument("--snapshot-in", help="start from a saved model snapshot")
    imp.add_argument("--snapshot-out", help="write the final model snapshot here")
    _add_common_model_flags(imp, default_batch=0)

    det = sub.add_parser("detect", help="online change point detection over a CSV stream")
    det.add_argument("--data", required=True)
    det.add_argument("--out", required=True)
    det.add_argument("--mc-samples", type=int, default=99, help="Monte Carlo samples B")
    det.add_argument("--alpha", type=float, default=0.05, help="target FDR level")
    det.add_argument("--burn-in", type=int, default=0, help="batches suppressed after a detection")
    det.add_argument("--warmup", type=int, default=1, help="initial update-only batches")
    det.add_argument(
        "--biased-pvalue",
        action="store_true",
        help="use the add-one-free empirical p-value that can reach 0",
    )
    det.add_argument("--snapshot-in", help="start from a saved model snapshot")
    det.add_argument("--snapshot-out", help="write the final model snapshot here")
    _add_common_model_flags(det, default_batch=40)
    return parser


def _result_config(args, keys) -> dict:
    # workers and file paths never change results, so they stay out of the hash
    return {k: getattr(args, k) for k in keys}


def _load_schema(args, kinds_from_file, n_columns):
    schema = args.schema
    if schema is None and getattr(args, "schema_file", None):
        schema = Path(args.schema_file).read_text(encoding="utf-8").strip()
    if schema is None:
        if kinds_from_file is None:
            raise SchemaError(
                "no schema: pass --schema/--schema-file or add a '#kind:' line to the CSV"
            )
        return kinds_from_file
    return check_schema(schema, n_columns)


def cmd_simulate(args) -> int:
    cfg = SynthConfig(
        p_cont=args.p_cont,
        p_ord=args.p_ord,
        p_bin=args.p_bin,
        ordinal_levels=args.levels,
        n_per_segment=args.rows_per_segment,
        n_segments=args.segments,
        missing_ratio=args.missing_ratio,
        mechanism=args.mechanism,
        seed=args.seed,
    )
    stream = generate_stream(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = config_line(
        _result_config(
            args,
            (
                "rows_per_segment",
                "segments",
                "p_cont",
                "p_ord",
                "p_bin",
                "levels",
                "missing_ratio",
                "mechanism",
                "seed",
            ),
        ),
        args.seed,
    )
    write_matrix(out / "data.csv", stream.data, directives=[header], kinds=stream.kinds)
    write_matrix(out / "truth.csv", stream.truth, directives=[header], kinds=stream.kinds)
    write_matrix(out / "mask.csv", stream.mask.astype(float), directives=[header])
    write_table(
        out / "labels.csv",
        ["segment"],
        [[str(int(v))] for v in stream.labels],
        directives=[header],
    )
    print(f"wrote {stream.data.shape[0]} rows x {stream.data.shape[1]} columns to {out}")
    return 0


def _impute_online(model, X, batch_size, gamma, workers):
    """Stream batches: update the model on each batch, then impute its rows."""
    state = OnlineEmState(model, ConstantSchedule(gamma))
    imputed = np.empty_like(X)
    sigmas = []
    p = model.p
    for start, stop in split_batches(X.shape[0], batch_size):
        batch = X[start:stop]
        if batch.shape[0] > p:
            online_update(state, batch, workers=workers)
            sigmas.append((stop, state.model.sigma.copy()))
        else:
            warnings.warn(
                f"final {batch.shape[0]} rows are too few to update a {p}-dimensional "
                "model; imputing with the last fitted state"
            )
        block, fully_missing = impute_matrix(state.model, batch)
        imputed[start:stop] = block
        if fully_missing.any():
            rows = np.flatnonzero(fully_missing) + start
            warnings.warn(f"rows {rows.tolist()} fully missing; imputed with medians")
    return imputed, sigmas, state.model


def cmd_impute(args) -> int:
    X, kinds_from_file, _ = read_matrix(args.data)
    kinds = _load_schema(args, kinds_from_file, X.shape[1])
    if len(kinds) != X.shape[1]:
        raise SchemaError(f"schema has {len(kinds)} columns, data has {X.shape[1]}")
    p = len(kinds)
    batch_size = args.batch or (40 if args.mode == "online" else 100)
    batch_size = check_batch_size(batch_size, p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = config_line(
        _result_config(
            args, ("mode", "window", "batch", "gamma", "gamma_c", "tol", "max_iter", "seed")
        ),
        args.seed,
    )

    sigmas: list[tuple[int, np.ndarray]] = []
    if args.mode == "online":
        if args.snapshot_in:
            model = load_model(args.snapshot_in)
        else:
            model = CopulaModel(kinds, window_size=args.window)
        imputed, sigmas, model = _impute_online(
            model, X, batch_size, args.gamma, args.workers
        )
    elif args.mode == "minibatch":
        model = fit_minibatch(
            X,
            kinds,
            batch_size=batch_size,
            schedule=DecayingSchedule(args.gamma_c),
            workers=args.workers,
        )
        imputed, _ = impute_matrix(model, X)
        sigmas = [(X.shape[0], model.sigma.copy())]
    else:
        model = fit_offline(
            X, kinds, max_iter=args.max_iter, tol=args.tol, workers=args.workers
        )
        imputed, _ = impute_matrix(model, X)
        sigmas = [(X.shape[0], model.sigma.copy())]

    write_matrix(out / "imputed.csv", imputed, directives=[header], kinds=kinds)
    trace_rows = [
        [str(rows_seen)] + [format_cell(v) for v in sigma.ravel()]
        for rows_seen, sigma in sigmas
    ]
    write_table(
        out / "sigma_trace.csv",
        ["rows_seen"] + [f"s{i}{j}" for i in range(p) for j in range(p)],
        trace_rows,
        directives=[header],
    )
    if args.snapshot_out:
        save_model(model, args.snapshot_out)

    if args.truth:
        truth, _, _ = read_matrix(args.truth)
        if truth.shape != X.shape:
            raise DataError(f"truth shape {truth.shape} does not match data {X.shape}")
        mask = np.isnan(X)
        report = score_report(imputed, truth, mask, kinds, train_reference=X)
        (out / "score.txt").write_text(header + "\n" + report.to_text(), encoding="utf-8")
        (out / "score.kv").write_text(header + "\n" + report.to_keyvalues(), encoding="utf-8")
        batch_rows = []
        for start, stop in split_batches(X.shape[0], batch_size):
            m = mask[start:stop]
            if not m.any():
                continue
            rep = score_report(
                imputed[start:stop], truth[start:stop], m, kinds, train_reference=X
            )
            batch_rows.append(
                [
                    str(stop),
                    format_cell(rep.smae.get("continuous", np.nan)),
                    format_cell(rep.smae.get("ordinal", np.nan)),
                    format_cell(rep.smae.get("binary", np.nan)),
                    format_cell(rep.mae),
                    format_cell(rep.rmse),
                ]
            )
        write_table(
            out / "batch_scores.csv",
            ["rows_seen", "smae_cont", "smae_ord", "smae_bin", "mae", "rmse"],
            batch_rows,
            directives=[header],
        )
        print(report.to_text(), end="")
    print(f"imputed {int(np.isnan(X).sum())} cells -> {out / 'imputed.csv'}")
    return 0


def cmd_detect(args) -> int:
    X, kinds_from_file, _ = read_matrix(args.data)
    kinds = _load_schema(args, kinds_from_file, X.shape[1])
    p = len(kinds)
    batch_size = check_batch_size(args.batch, p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = config_line(
        _result_config(
            args,
            (
                "window",
                "batch",
                "gamma",
                "mc_samples",
                "alpha",
                "burn_in",
                "warmup",
                "biased_pvalue",
                "seed",
            ),
        ),
        args.seed,
    )

    if args.snapshot_in:
        model = load_model(args.snapshot_in)
    else:
        model = CopulaModel(kinds, window_size=args.window)
    state = OnlineEmState(model, ConstantSchedule(args.gamma))
    batches = []
    for start, stop in split_batches(X.shape[0], batch_size):
        if stop - start <= p:
            warnings.warn(f"dropping trailing batch of {stop - start} rows (need > {p})")
            break
        batches.append(X[start:stop])

    rows = []
    n_detections = 0
    for record in online_cpd_loop(
        batches,
        state,
        B=args.mc_samples,
        alpha=args.alpha,
        burn_in=args.burn_in,
        warmup=args.warmup,
        biased=args.biased_pvalue,
        seed=args.seed,
        workers=args.workers,
    ):
        rows.append(
            [
                str(record.t),
                format_cell(record.statistic),
                format_cell(record.p_value),
                format_cell(record.alpha_t),
                str(int(record.decision)),
            ]
        )
        n_detections += int(record.decision)
    write_table(
        out / "detections.csv",
        ["t", "statistic", "p_value", "alpha_t", "decision"],
        rows,
        directives=[header],
    )
    if args.snapshot_out:
        save_model(state.model, args.snapshot_out)
    print(f"{n_detections} detections over {len(rows)} batches -> {out / 'detections.csv'}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "impute":
            return cmd_impute(args)
        return cmd_detect(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CopulaStreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
