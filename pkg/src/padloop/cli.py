"""Command-line front end.

Results are printed as ``key=value`` lines on stdout; diagnostics go to stderr.
Exit codes: 0 ok, 2 usage or config error, 3 I/O error or missing artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_seed_env, load_config
from .datasets import generate_elicitation, generate_induction
from .errors import FormatError, InvalidInputError, NumericalFailureError, PadloopError
from .features import FeatureMode
from .gp import PadPosterior, fit_pad_gp, pad_posterior_batch, qot_posterior
from .io import (
    FORMAT_VERSION,
    PAD_COLUMNS,
    atomic_write_text,
    features_only,
    load_dataset,
    load_dbn_bundle,
    load_pad_bundle,
    load_perf_bundle,
    load_trace,
    save_dataset,
    save_dbn_bundle,
    save_pad_bundle,
    save_perf_bundle,
    save_trace,
)
from .pipeline import loo_mse, train_pad_stage, train_perf_stage
from .simulator import run_closed_loop

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
BUNDLE_NAMES = {"dbn": "dbn.json", "pad-gp": "pad-gp.json", "perf-gp": "perf-gp.json"}

log = logging.getLogger("padloop")


class UsageError(Exception):
    pass


class ArtifactError(Exception):
    pass


def emit(**values) -> None:
    for key, value in values.items():
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}={value}")


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(_require(args.config))
    return apply_seed_env(RunConfig())


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing input: {path}")
    return path


def _fmt_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---- commands ----

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    seed = cfg.seeds.data if args.seed is None else args.seed
    mode = FeatureMode(args.mode or cfg.mode)
    if args.kind == "elicitation":
        count = cfg.data.m_f if args.count is None else args.count
        ds = generate_elicitation(count, seed, mode, cfg.eeg)
    else:
        count = cfg.data.m_b if args.count is None else args.count
        ds = generate_induction(count, seed, mode, cfg.operator, cfg.eeg)
    save_dataset(args.out, ds)
    emit(kind=args.kind, rows=len(ds), mode=mode.value, seed=seed, out=args.out)
    return EXIT_OK


def _train_cfg(cfg: RunConfig, seed):
    return dataclasses.replace(cfg.dbn, seed=cfg.seeds.train if seed is None else seed)


def cmd_train(args) -> int:
    cfg = _config(args)
    model_dir = Path(args.model_dir or cfg.paths.bundles)
    stage = args.stage
    if stage == "dbn":
        elic = load_dataset(_require(args.data), "elicitation")
        unlabeled = None
        if args.unlabeled:
            unlabeled = load_dataset(_require(args.unlabeled)).features
        tcfg = _train_cfg(cfg, args.seed)
        result = train_pad_stage(elic, tcfg, cfg.gp.pad_noise_var, cfg.gp.holdout_fraction, unlabeled)
        metrics = {"train_mse": result.train_mse, "validation_mse": result.validation_mse,
                   "best_epoch": result.history.best_epoch, "holdout_rows": result.holdout_rows.tolist()}
        save_dbn_bundle(model_dir / BUNDLE_NAMES["dbn"], result.model.dbn, result.model.kernels, tcfg,
                        elic.mode, metrics)
        emit(stage=stage, architecture="-".join(map(str, result.model.dbn.architecture)),
             train_mse=result.train_mse, validation_mse=result.validation_mse,
             best_epoch=result.history.best_epoch, out=model_dir / BUNDLE_NAMES["dbn"])
        return EXIT_OK
    if stage == "pad-gp":
        dbn, kernels, tcfg, mode, metrics = load_dbn_bundle(_require(model_dir / BUNDLE_NAMES["dbn"]))
        elic = load_dataset(_require(args.data), "elicitation")
        if elic.mode is not mode:
            raise UsageError(f"elicitation data is {elic.mode.value} but the DBN was trained on {mode.value}")
        hold = np.asarray(metrics.get("holdout_rows", []), dtype=int)
        fit = np.setdiff1d(np.arange(len(elic)), hold)
        if fit.size == 0:
            raise UsageError("no rows left to condition on")
        model = fit_pad_gp(dbn, elic.features[fit], elic.labels[fit], kernels)
        train_mse = loo_mse(model.latent_train, elic.labels[fit], model.kernels)
        if hold.size and hold.max() < len(elic):
            mean, _ = pad_posterior_batch(model, elic.features[hold])
            val_mse = float(np.mean((mean - elic.labels[hold]) ** 2))
        else:
            val_mse = float("nan")
        save_pad_bundle(model_dir / BUNDLE_NAMES["pad-gp"], model, mode,
                        {"train_mse": train_mse, "validation_mse": val_mse})
        emit(stage=stage, rows=int(fit.size), train_mse=train_mse, validation_mse=val_mse,
             **{f"alpha_{lab}": k.alpha for lab, k in zip(PAD_COLUMNS, kernels)},
             **{f"beta_{lab}": k.beta for lab, k in zip(PAD_COLUMNS, kernels)},
             out=model_dir / BUNDLE_NAMES["pad-gp"])
        return EXIT_OK
    # perf-gp
    pad_model, mode, _ = load_pad_bundle(_require(model_dir / BUNDLE_NAMES["pad-gp"]))
    ind = load_dataset(_require(args.data), "induction")
    if ind.mode is not mode:
        raise UsageError(f"induction data is {ind.mode.value} but the PAD model expects {mode.value}")
    seed = cfg.seeds.train if args.seed is None else args.seed
    perf = train_perf_stage(pad_model, ind, cfg.gp.perf_noise_var, cfg.gp.n_grid, cfg.gp.n_folds,
                            cfg.gp.n_repeats, seed)
    mean, _ = perf.model.gp.predict(perf.pad_means)
    train_mse = float(np.mean((mean - ind.qot) ** 2))
    save_perf_bundle(model_dir / BUNDLE_NAMES["perf-gp"], perf.model,
                     {"train_mse": train_mse, "validation_mse": perf.cv_mse})
    emit(stage=stage, rows=len(ind), train_mse=train_mse, validation_mse=perf.cv_mse,
         alpha_g=perf.model.kernel.alpha, beta_g=perf.model.kernel.beta, out=model_dir / BUNDLE_NAMES["perf-gp"])
    return EXIT_OK


def _load_models(model_dir):
    model_dir = Path(model_dir)
    pad_model, mode, _ = load_pad_bundle(_require(model_dir / BUNDLE_NAMES["pad-gp"]))
    perf_model, _ = load_perf_bundle(_require(model_dir / BUNDLE_NAMES["perf-gp"]))
    return pad_model, mode, perf_model


PREDICTION_COLUMNS = ([f"pad_mean_{c}" for c in PAD_COLUMNS] + [f"pad_var_{c}" for c in PAD_COLUMNS]
                      + ["q_mean", "q_var"])


def cmd_predict(args) -> int:
    cfg = _config(args)
    pad_model, mode, perf_model = _load_models(args.model_dir or cfg.paths.bundles)
    table = features_only(load_dataset(_require(args.features_file)))
    if table.features.shape[1] != pad_model.n_features:
        raise UsageError(f"feature rows have length {table.features.shape[1]}, model expects {pad_model.n_features}")
    means, vars_ = pad_posterior_batch(pad_model, table.features)
    rows = []
    for m, v in zip(means, vars_):
        q = qot_posterior(perf_model, PadPosterior(m, v), cfg.gp.qot_mode)
        rows.append([*m, *v, q.mean, q.var])
    head = f"# padloop-predictions format_version={FORMAT_VERSION} mode={mode.value} rows={len(rows)}"
    atomic_write_text(args.out, "\n".join([head, ",".join(PREDICTION_COLUMNS)] + [_fmt_row(r) for r in rows]) + "\n")
    emit(rows=len(rows), out=args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.horizon is not None:
        cfg = dataclasses.replace(cfg, horizon=args.horizon)
    control = cfg.control_enabled if args.control is None else args.control == "on"
    seed = cfg.seeds.simulate if args.seed is None else args.seed
    pad_model, mode, perf_model = _load_models(args.model_dir or cfg.paths.bundles)
    trace = run_closed_loop(pad_model, perf_model, cfg.controller.build(), cfg.horizon, control, seed,
                            cfg.operator, cfg.eeg, mode, cfg.gp.qot_mode)
    trace.metadata["config"] = _jsonable(dataclasses.replace(cfg, control_enabled=control))
    out = args.out or str(Path(cfg.paths.traces) / f"trace_seed{seed}_{'on' if control else 'off'}.csv")
    save_trace(out, trace)
    q = np.asarray(trace.true_q)
    emit(steps=len(q), control=("on" if control else "off"), seed=seed,
         mean_q=float(q.mean()) if q.size else float("nan"),
         p_hit=float(np.mean(q >= cfg.controller.q_r)) if q.size else float("nan"),
         stimuli=int(np.sum(np.asarray(trace.action_id) != 0)), aborted=int(trace.aborted), out=out)
    if trace.aborted:
        log.error("run aborted: %s", trace.error)
        return EXIT_NUMERIC
    return EXIT_OK


SUMMARY_COLUMNS = ["trace", "steps", "control", "mean_q", "p_hit", "n_stimuli", "n_distinct_stimuli", "mean_q_est"]
STEP_COLUMNS = ["trace", "step", "true_q", "q_mean", "q_lo", "q_hi", "gate", "action_id", "fatigue"]


def _summarize(trace, q_r: float) -> dict:
    q = np.asarray(trace.true_q, dtype=float)
    ids = np.asarray(trace.action_id, dtype=int)
    return {
        "steps": q.size,
        "control": int(bool(trace.metadata.get("control_enabled", False))),
        "mean_q": float(q.mean()) if q.size else float("nan"),
        "p_hit": float(np.mean(q >= q_r)) if q.size else float("nan"),
        "n_stimuli": int(np.sum(ids != 0)),
        "n_distinct_stimuli": int(np.unique(ids[ids != 0]).size),
        "mean_q_est": float(np.mean(trace.q_mean)) if q.size else float("nan"),
    }


def cmd_report(args) -> int:
    traces = [load_trace(_require(p)) for p in args.trace]
    lines, step_lines = [], []
    summaries = []
    for i, (path, trace) in enumerate(zip(args.trace, traces)):
        q_r = float(trace.metadata.get("q_r", args.q_r))
        s = _summarize(trace, q_r)
        summaries.append(s)
        lines.append(",".join([Path(path).name] + [repr(s[c]) if isinstance(s[c], float) else str(s[c])
                                                   for c in SUMMARY_COLUMNS[1:]]))
        emit(**{f"trace{i}_{k}": v for k, v in s.items()})
        ids, counts = np.unique(np.asarray(trace.action_id, dtype=int), return_counts=True)
        emit(**{f"trace{i}_stimulus_{a}": int(c) for a, c in zip(ids, counts) if a != 0})
        sd = np.sqrt(np.asarray(trace.q_var, dtype=float))
        for k in range(len(trace.true_q)):
            qm = float(trace.q_mean[k])
            step_lines.append(",".join([str(i), str(k), _fmt_row([trace.true_q[k], qm, qm - 2 * sd[k], qm + 2 * sd[k]]),
                                        str(trace.gate[k]), str(trace.action_id[k]), _fmt_row([trace.fatigue[k]])]))
    if len(traces) == 2:
        a, b = summaries
        diff = {c: a[c] - b[c] for c in ("mean_q", "p_hit", "n_stimuli", "mean_q_est")}
        lines.append(",".join(["paired:0-1", str(min(a["steps"], b["steps"])), "",
                               repr(diff["mean_q"]), repr(diff["p_hit"]), str(diff["n_stimuli"]), "",
                               repr(diff["mean_q_est"])]))
        emit(paired_mean_q_diff=diff["mean_q"], paired_p_hit_diff=diff["p_hit"])
    atomic_write_text(args.out, "\n".join([",".join(SUMMARY_COLUMNS)] + lines) + "\n")
    if args.steps_out:
        atomic_write_text(args.steps_out, "\n".join([",".join(STEP_COLUMNS)] + step_lines) + "\n")
    emit(out=args.out)
    return EXIT_OK


# ---- parser ----

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="padloop", description="Affect-aware teleoperation pipeline on synthetic data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=["elicitation", "induction"], required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--mode", choices=["EEG", "BANDS"])
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model stage")
    t.add_argument("--stage", choices=["dbn", "pad-gp", "perf-gp"], required=True)
    t.add_argument("--data", required=True, help="elicitation data for dbn/pad-gp, induction data for perf-gp")
    t.add_argument("--unlabeled", help="extra feature rows for DBN pretraining")
    t.add_argument("--model-dir")
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="PAD and performance posteriors for a feature file")
    r.add_argument("--model-dir")
    r.add_argument("--features-file", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="run the closed loop and write a trace")
    s.add_argument("--config")
    s.add_argument("--model-dir")
    s.add_argument("--control", choices=["on", "off"])
    s.add_argument("--horizon", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("report", help="summarize one or two traces")
    rp.add_argument("--trace", action="append", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--steps-out")
    rp.add_argument("--q-r", type=float, default=0.45, help="threshold for traces without metadata")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (ArtifactError, FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except NumericalFailureError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except PadloopError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
