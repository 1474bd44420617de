"""Versioned persistence: CSV for datasets and traces, JSON for model bundles.

Every writer goes through a temporary file in the target directory followed by
an atomic rename, so readers never see a half-written file.  Floats are written
with ``repr`` and therefore read back bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .datasets import ElicitationDataset, InductionDataset
from .dbn import DbnParams, MinMaxScaler, RbmLayer, TrainConfig
from .errors import FormatError, PadloopError, VersionError
from .features import FeatureMode, feature_names
from .gp import ExactGp, GridSearchResult, PadGpModel, PerfGpModel, perf_gp_from_kernel
from .kernels import KernelParams
from .simulator import LoopTrace

FORMAT_VERSION = 1
PAD_COLUMNS = ("pleasure", "arousal", "dominance")
DATASET_KINDS = ("elicitation", "induction", "features")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return repr(float(x))


def _parse_header(path, line: str, magic: str) -> dict:
    if not line.startswith(f"# {magic} "):
        raise FormatError(path, f"missing '# {magic}' header", line=1)
    meta = {}
    for token in line[len(magic) + 3:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise FormatError(path, f"header token {token!r} is not key=value", line=1)
        meta[key] = value
    if "format_version" not in meta:
        raise FormatError(path, "header has no format_version", line=1, field="format_version")
    try:
        version = int(meta["format_version"])
    except ValueError:
        raise FormatError(path, "format_version is not an integer", line=1, field="format_version") from None
    if version != FORMAT_VERSION:
        raise VersionError(path, version, FORMAT_VERSION)
    return meta


def _read_table(path, magic: str):
    """Header metadata, column names and a float matrix from a headed CSV."""
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(path, "empty file", line=1)
    meta = _parse_header(path, lines[0], magic)
    if len(lines) < 2:
        raise FormatError(path, "missing column header", line=2)
    columns = lines[1].split(",")
    try:
        n_rows = int(meta.get("rows", ""))
    except ValueError:
        raise FormatError(path, "header rows= is missing or not an integer", line=1, field="rows") from None
    body = lines[2:]
    if len(body) != n_rows:
        raise FormatError(path, f"expected {n_rows} data rows, found {len(body)} (truncated or padded file)",
                          line=len(lines) + 1)
    data = np.empty((n_rows, len(columns)))
    for i, row in enumerate(body):
        lineno = i + 3
        cells = row.split(",")
        if len(cells) != len(columns):
            raise FormatError(path, f"expected {len(columns)} fields, found {len(cells)}", line=lineno)
        for j, cell in enumerate(cells):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise FormatError(path, f"cannot parse {cell!r} as a number", line=lineno, field=columns[j]) from None
    return meta, columns, data


def _write_table(path, magic: str, meta: dict, columns, data) -> None:
    head = " ".join(f"{k}={v}" for k, v in {"format_version": FORMAT_VERSION, **meta, "rows": len(data)}.items())
    out = [f"# {magic} {head}", ",".join(columns)]
    out += [",".join(_fmt(x) for x in row) for row in data]
    atomic_write_text(path, "\n".join(out) + "\n")


# ---- datasets ----

class FeatureTable:
    """Unlabeled feature rows, the input format of prediction."""

    def __init__(self, features, mode):
        self.mode = FeatureMode(mode)
        self.features = np.asarray(features, dtype=float).reshape(-1, self.mode.n_features)

    def __len__(self) -> int:
        return self.features.shape[0]


def save_dataset(path, ds) -> None:
    """Write an elicitation, induction or feature-only dataset as headed CSV."""
    names = feature_names(ds.mode)
    if isinstance(ds, ElicitationDataset):
        kind, cols, data = "elicitation", names + list(PAD_COLUMNS), np.hstack([ds.features, ds.labels])
    elif isinstance(ds, InductionDataset):
        kind, cols, data = "induction", names + ["qot"], np.hstack([ds.features, ds.qot[:, None]])
    elif isinstance(ds, FeatureTable):
        kind, cols, data = "features", names, ds.features
    else:
        raise TypeError(f"cannot save {type(ds).__name__}")
    _write_table(path, "padloop-dataset", {"kind": kind, "mode": ds.mode.value}, cols, data)


def load_dataset(path, kind: str | None = None):
    """Read any dataset file; ``kind`` optionally pins the expected kind."""
    meta, columns, data = _read_table(path, "padloop-dataset")
    found = meta.get("kind")
    if found not in DATASET_KINDS:
        raise FormatError(path, f"unknown dataset kind {found!r}", line=1, field="kind")
    if kind is not None and found != kind:
        raise FormatError(path, f"expected a {kind} dataset, found {found}", line=1, field="kind")
    try:
        mode = FeatureMode(meta.get("mode"))
    except ValueError:
        raise FormatError(path, f"unknown feature mode {meta.get('mode')!r}", line=1, field="mode") from None
    names = feature_names(mode)
    extra = {"elicitation": list(PAD_COLUMNS), "induction": ["qot"], "features": []}[found]
    if columns != names + extra:
        raise FormatError(path, f"column header does not match the {found}/{mode.value} layout", line=2)
    n = len(names)
    try:
        if found == "elicitation":
            return ElicitationDataset(data[:, :n], data[:, n:], mode)
        if found == "induction":
            return InductionDataset(data[:, :n], data[:, n], mode)
    except PadloopError as exc:
        raise FormatError(path, str(exc)) from None
    return FeatureTable(data, mode)


def features_only(ds) -> FeatureTable:
    return ds if isinstance(ds, FeatureTable) else FeatureTable(ds.features, ds.mode)


# ---- model bundles ----

def _arr(x):
    return np.asarray(x, dtype=float).tolist()


def _kernel_dict(kp: KernelParams) -> dict:
    return kp.to_dict()


def _dbn_payload(dbn: DbnParams) -> dict:
    return {
        "architecture": list(dbn.architecture),
        "layers": [{"weights": _arr(L.weights), "visible_bias": _arr(L.visible_bias), "hidden_bias": _arr(L.hidden_bias)}
                   for L in dbn.layers],
        "scaler": None if dbn.scaler is None else {"lower": _arr(dbn.scaler.lower), "upper": _arr(dbn.scaler.upper)},
    }


def _scaler_payload(s):
    return None if s is None else {"lower": _arr(s.lower), "upper": _arr(s.upper)}


def _write_bundle(path, kind: str, payload: dict) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **payload}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _read_bundle(path, kind: str) -> dict:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise FormatError(path, "bundle must be a JSON object", line=1)
    if "format_version" not in doc:
        raise FormatError(path, "bundle has no format_version", field="format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise VersionError(path, doc["format_version"], FORMAT_VERSION)
    if doc.get("kind") != kind:
        raise FormatError(path, f"expected a {kind} bundle, found {doc.get('kind')!r}", field="kind")
    return doc


def _get(doc, key, path, where=""):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise FormatError(path, "missing field", field=f"{where}{key}") from None


def _build_dbn(doc, path, where="") -> DbnParams:
    layers = []
    for i, L in enumerate(_get(doc, "layers", path, where)):
        at = f"{where}layers[{i}]."
        layers.append(RbmLayer(np.array(_get(L, "weights", path, at), dtype=float),
                               np.array(_get(L, "visible_bias", path, at), dtype=float),
                               np.array(_get(L, "hidden_bias", path, at), dtype=float)))
    return DbnParams(tuple(layers), _build_scaler(doc.get("scaler"), path))


def _build_scaler(s, path):
    if s is None:
        return None
    return MinMaxScaler(np.array(_get(s, "lower", path, "scaler."), dtype=float),
                        np.array(_get(s, "upper", path, "scaler."), dtype=float))


def _kernels(items, path, where="kernels"):
    try:
        return [KernelParams(**k) for k in items]
    except (TypeError, PadloopError) as exc:
        raise FormatError(path, str(exc), field=where) from None


def save_dbn_bundle(path, dbn: DbnParams, kernels, cfg: TrainConfig, mode, metrics: dict | None = None) -> None:
    """DBN weights, scaler statistics, fine-tuned kernels and the training config."""
    _write_bundle(path, "dbn", {
        **_dbn_payload(dbn),
        "kernels": [_kernel_dict(k) for k in kernels],
        "train_config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "mode": FeatureMode(mode).value,
        "metrics": metrics or {},
    })


def load_dbn_bundle(path):
    """Returns (DbnParams, kernels, TrainConfig, mode, metrics)."""
    doc = _read_bundle(path, "dbn")
    try:
        dbn = _build_dbn(doc, path)
        cfg = TrainConfig(**_get(doc, "train_config", path))
        mode = FeatureMode(_get(doc, "mode", path))
    except (PadloopError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(path, str(exc)) from None
    return dbn, _kernels(_get(doc, "kernels", path), path), cfg, mode, doc.get("metrics", {})


def save_pad_bundle(path, model: PadGpModel, mode, metrics: dict | None = None) -> None:
    _write_bundle(path, "pad-gp", {
        "dbn": None if model.dbn is None else _dbn_payload(model.dbn),
        "scaler": _scaler_payload(model.scaler),
        "latent_train": _arr(model.latent_train),
        "labels": _arr(model.labels),
        "kernels": [_kernel_dict(k) for k in model.kernels],
        "mode": FeatureMode(mode).value,
        "metrics": metrics or {},
    })


def load_pad_bundle(path):
    """Returns (PadGpModel, mode, metrics).  The GP factorizations are rebuilt from the stored data."""
    doc = _read_bundle(path, "pad-gp")
    try:
        dbn = None if doc.get("dbn") is None else _build_dbn(doc["dbn"], path, "dbn.")
        scaler = _build_scaler(doc.get("scaler"), path)
        latent = np.array(_get(doc, "latent_train", path), dtype=float)
        labels = np.array(_get(doc, "labels", path), dtype=float)
        kernels = tuple(_kernels(_get(doc, "kernels", path), path))
        mode = FeatureMode(_get(doc, "mode", path))
        gps = tuple(ExactGp(latent, labels[:, ell], kp) for ell, kp in enumerate(kernels))
    except (PadloopError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(path, str(exc)) from None
    return PadGpModel(dbn, latent, labels, kernels, scaler, gps), mode, doc.get("metrics", {})


def save_perf_bundle(path, model: PerfGpModel, metrics: dict | None = None) -> None:
    s = model.search
    _write_bundle(path, "perf-gp", {
        "pad_train": _arr(model.pad_train),
        "q_train": _arr(model.q_train),
        "kernel": _kernel_dict(model.kernel),
        "search": None if s is None else {
            "alphas": _arr(s.alphas), "betas": _arr(s.betas), "cv_mse": _arr(s.cv_mse),
            "best_index": [int(i) for i in s.best_index],
        },
        "metrics": metrics or {},
    })


def load_perf_bundle(path):
    """Returns (PerfGpModel, metrics)."""
    doc = _read_bundle(path, "perf-gp")
    try:
        kernel = _kernels([_get(doc, "kernel", path)], path, "kernel")[0]
        model = perf_gp_from_kernel(np.array(_get(doc, "pad_train", path), dtype=float),
                                    np.array(_get(doc, "q_train", path), dtype=float), kernel)
        s = doc.get("search")
        if s is not None:
            search = GridSearchResult(np.array(_get(s, "alphas", path, "search."), dtype=float),
                                      np.array(_get(s, "betas", path, "search."), dtype=float),
                                      np.array(_get(s, "cv_mse", path, "search."), dtype=float),
                                      tuple(int(i) for i in _get(s, "best_index", path, "search.")))
            model = dataclasses.replace(model, search=search)
    except (PadloopError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(path, str(exc)) from None
    return model, doc.get("metrics", {})


# ---- loop traces ----

TRACE_SCALARS = ("q_mean", "q_var", "fatigue", "true_q", "eps", "d_eps", "gate", "action_id")


def trace_columns(n_features: int, mode=None) -> list[str]:
    names = feature_names(mode) if mode is not None else [f"feature_{i}" for i in range(n_features)]
    cols = ["step"]
    cols += [f"pad_mean_{c}" for c in PAD_COLUMNS] + [f"pad_var_{c}" for c in PAD_COLUMNS]
    cols += [f"true_{c}" for c in PAD_COLUMNS]
    cols += list(TRACE_SCALARS)
    return cols + names


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_trace(path, trace: LoopTrace) -> None:
    """Trace rows as CSV plus a ``<name>.json`` metadata sidecar."""
    mode = trace.metadata.get("mode")
    n = len(trace.true_q)
    n_feat = FeatureMode(mode).n_features if mode else (len(trace.features[0]) if n else 0)
    cols = trace_columns(n_feat, mode)
    rows = np.empty((n, len(cols)))
    for k in range(n):
        rows[k] = np.concatenate([
            [k], trace.pad_mean[k], trace.pad_var[k], trace.true_pad[k],
            [getattr(trace, name)[k] for name in TRACE_SCALARS], trace.features[k],
        ])
    meta = {"format_version": FORMAT_VERSION, "kind": "trace", "rows": n, "columns": cols,
            "aborted": trace.aborted, "error": trace.error, "metadata": trace.metadata}
    _write_table(path, "padloop-trace", {}, cols, rows)
    atomic_write_text(sidecar_path(path), json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_trace(path) -> LoopTrace:
    meta_path = sidecar_path(path)
    doc = _read_bundle(meta_path, "trace") if meta_path.exists() else {"metadata": {}}
    _, cols, data = _read_table(path, "padloop-trace")
    mode = doc.get("metadata", {}).get("mode")
    n_feat = len(cols) - len(trace_columns(0))
    if cols != trace_columns(n_feat, mode):
        raise FormatError(path, "column header does not match the trace layout", line=2)
    if np.any(data[:, 0] != np.arange(data.shape[0])):
        raise FormatError(path, "step indices are not contiguous from 0", field="step")
    idx = {c: j for j, c in enumerate(cols)}
    trace = LoopTrace(metadata=doc.get("metadata", {}), aborted=bool(doc.get("aborted", False)),
                      error=str(doc.get("error", "")))
    for row in data:
        trace.pad_mean.append(row[1:4].copy())
        trace.pad_var.append(row[4:7].copy())
        trace.true_pad.append(row[7:10].copy())
        for name in TRACE_SCALARS:
            value = row[idx[name]]
            getattr(trace, name).append(int(value) if name in ("gate", "action_id") else float(value))
        trace.features.append(row[len(cols) - n_feat:].copy())
    return trace
