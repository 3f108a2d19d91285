"""Command-line front door: ingestion, fitting commands, and artifacts.

Seven subcommands — fit, sample, predict, laplace, bootstrap, simulate,
calibrate — each writing CSV results plus a JSON manifest (full resolved
config, input hashes, output hashes, library versions, timing) into an
output directory.  Configuration comes from flags and an optional JSON
config file; flags win, unknown config keys are hard errors.

Exit codes map error categories: 2 config, 3 data, 4 numeric, 5 resource.
Library errors are emitted as a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .core import Dataset, ModelState, objective, solve_mode
from .errors import (
    ConfigError,
    ConvergenceError,
    DataFormatError,
    NumericalError,
    ResourceBudgetError,
)
from .laplace import bootstrap_intervals, laplace_fit, laplace_intervals
from .model import LambdaPrior, PhiTable, estimate_phi_table
from .rng import substream, substream_int
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    predict_label,
    predict_proba,
    run_chain,
    summarize,
)
from .simlab import (
    KINDS,
    MethodConfig,
    ScenarioSpec,
    calibration_bins,
    format_float,
    metric_mse,
    misclassification,
    run_scenario,
)

__all__ = ["IngestMeta", "RunConfig", "ingest_csv", "main", "run", "write_dataset_csv"]

_COMMANDS = ("fit", "sample", "predict", "laplace", "bootstrap", "simulate", "calibrate")


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved invocation: one flat record echoed into the manifest."""

    command: str
    input: str | None = None
    fit_dir: str | None = None
    output_dir: str = "."
    config_file: str | None = None
    label_col: str = "y"
    standardize: bool = False
    allow_01_labels: bool = False
    p1: float | None = None
    fixed_lambda: float | None = None
    infer_lambda: bool | None = None
    prior_lower: float = 1.0 / 128.0
    prior_upper: float = 128.0
    phi_J: int = 25
    phi_T: int = 500
    phi_cache_dir: str | None = None
    n_iter: int | None = None
    burn_in: int | None = None
    thin: int = 1
    initial_proposal_sd: float | None = None
    beta0_proposal_sd: float = 0.5
    lambda_step_sd: float = 0.25
    infer_p1: bool = False
    p1_step_sd: float = 0.5
    debug: bool = False
    seed: int = 0
    level: float = 0.95
    extended: bool = False
    with_scores: bool = False
    boot_B: int = 200
    folds: int = 10
    estimator: str = "mean"
    kind: str | None = None
    d: int | None = None
    n: int | None = None
    n_test: int | None = None
    lambda_true: float = 1.0
    tau: float = 0.0
    n_o: int = 0
    n_u: int = 0
    replications: int = 1
    bimodal_mu_var: float = 0.5
    clt: bool = False
    boot: bool = False


@dataclass(frozen=True)
class IngestMeta:
    """Sidecar facts from CSV ingestion, echoed into diagnostics."""

    feature_names: tuple[str, ...]
    label_col: str
    label_col_present: bool
    n_labeled: int
    n_unlabeled: int
    means: np.ndarray | None = None
    scales: np.ndarray | None = None


def _parse_label(cell: str, allow_01: bool, row: int, col: str) -> float:
    text = cell.strip()
    if text in ("", "NA"):
        return math.nan
    if allow_01:
        if text == "0":
            return -1.0
        if text == "1":
            return 1.0
    elif text in ("-1", "1", "+1"):
        return float(text)
    accepted = "{0, 1, NA, empty}" if allow_01 else "{-1, 1, +1, NA, empty}"
    raise DataFormatError(
        f"row {row}, column {col!r}: label {cell!r} not in {accepted}"
    )


def _ingest(
    path: str,
    *,
    label_col: str = "y",
    standardize: bool = False,
    allow_01_labels: bool = False,
    require_labels: bool = True,
    P1: float = 0.5,
) -> tuple[Dataset, IngestMeta]:
    """Read a sample-per-row CSV into a Dataset plus ingestion metadata."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        label_present = label_col in header
        if require_labels and not label_present:
            raise DataFormatError(
                f"{path}: no label column {label_col!r} in header {header}"
            )
        label_idx = header.index(label_col) if label_present else -1
        feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)
        if not feature_names:
            raise DataFormatError(f"{path}: no feature columns besides the label")

        rows: list[list[float]] = []
        labels: list[float] = []
        for r, cells in enumerate(reader, start=2):  # header is line 1
            if len(cells) != len(header):
                raise DataFormatError(
                    f"{path}: row {r} has {len(cells)} cells, header has {len(header)}"
                )
            feats = []
            for i, cell in enumerate(cells):
                if i == label_idx:
                    labels.append(_parse_label(cell, allow_01_labels, r, label_col))
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {r}, column {header[i]!r}: "
                        f"non-numeric feature {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataFormatError(
                        f"{path}: row {r}, column {header[i]!r}: "
                        f"non-finite feature {cell!r}"
                    )
                feats.append(value)
            rows.append(feats)

    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    X = np.array(rows, dtype=float).T  # features in rows, samples in columns
    y = np.array(labels) if label_present else np.full(X.shape[1], np.nan)

    means = scales = None
    if standardize:
        means = X.mean(axis=1)
        sd = X.std(axis=1)
        constant = sd == 0.0
        if np.any(constant):
            names = [feature_names[i] for i in np.flatnonzero(constant)]
            warnings.warn(
                f"constant features {names} centered but not scaled",
                stacklevel=2,
            )
        scales = np.where(constant, 1.0, sd)
        X = (X - means[:, None]) / scales[:, None]

    data = Dataset(X, y, P1=P1)
    meta = IngestMeta(
        feature_names=feature_names,
        label_col=label_col,
        label_col_present=label_present,
        n_labeled=data.n_labeled,
        n_unlabeled=data.n_unlabeled,
        means=means,
        scales=scales,
    )
    return data, meta


def ingest_csv(
    path: str,
    *,
    label_col: str = "y",
    standardize: bool = False,
    allow_01_labels: bool = False,
    P1: float = 0.5,
) -> Dataset:
    """Read a CSV (one sample per row, labeled column ``label_col``) as a Dataset.

    Labels may be -1, 1, +1, NA, or empty (unlabeled); with
    ``allow_01_labels`` the column uses 0/1 instead.  ``standardize``
    centers every feature and scales non-constant ones to unit sd.
    """
    return _ingest(
        path,
        label_col=label_col,
        standardize=standardize,
        allow_01_labels=allow_01_labels,
        P1=P1,
    )[0]


def write_dataset_csv(path: str, data: Dataset, feature_names=None, label_col="y"):
    """Export a Dataset to the CSV layout `ingest_csv` reads back bit-exactly."""
    d, n = data.d, data.n
    if feature_names is None:
        feature_names = [f"x_{j + 1}" for j in range(d)]
    if len(feature_names) != d:
        raise ValueError(f"need {d} feature names, got {len(feature_names)}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([label_col, *feature_names])
        for i in range(n):
            yi = data.y[i]
            label = "NA" if math.isnan(yi) else str(int(yi))
            writer.writerow([label, *(format_float(v) for v in data.X[:, i])])


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_rows(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _state_json(state: ModelState) -> dict:
    return {
        "beta": [float(v) for v in state.beta],
        "beta0": float(state.beta0),
        "lambda": float(state.lam),
    }


def _intervals_rows(table) -> list[list[str]]:
    return [
        [p, format_float(e), format_float(lo), format_float(hi), table.method]
        for p, e, lo, hi in zip(table.params, table.estimate, table.lower, table.upper)
    ]


_INTERVAL_HEADER = ["param", "estimate", "lower", "upper", "method"]


def _summary_interval_rows(summ, lambda_inferred: bool) -> list[list[str]]:
    rows = []
    for j in range(len(summ.beta_mean)):
        rows.append(
            [
                f"beta_{j + 1}",
                format_float(summ.beta_mean[j]),
                format_float(summ.beta_lower[j]),
                format_float(summ.beta_upper[j]),
                "mcmc",
            ]
        )
    rows.append(
        [
            "beta0",
            format_float(summ.beta0_mean),
            format_float(summ.beta0_lower),
            format_float(summ.beta0_upper),
            "mcmc",
        ]
    )
    if lambda_inferred:
        rows.append(
            [
                "lambda",
                format_float(summ.lambda_mean),
                format_float(summ.lambda_lower),
                format_float(summ.lambda_upper),
                "mcmc",
            ]
        )
    if summ.u_mean is not None:
        for i in range(len(summ.u_mean)):
            rows.append(
                [
                    f"score_{i + 1}",
                    format_float(summ.u_mean[i]),
                    format_float(summ.u_lower[i]),
                    format_float(summ.u_upper[i]),
                    "mcmc",
                ]
            )
    return rows


def _draws_header(d: int, with_p1: bool) -> list[str]:
    header = ["beta0", *(f"beta_{j + 1}" for j in range(d)), "lambda", "log_post"]
    if with_p1:
        header.append("p1")
    return header


def _write_draws_csv(path: str, draws: PosteriorDraws) -> None:
    with_p1 = draws.p1 is not None
    rows = []
    for t, state in enumerate(draws.states):
        row = [
            format_float(state.beta0),
            *(format_float(v) for v in state.beta),
            format_float(state.lam),
            format_float(draws.log_post[t]),
        ]
        if with_p1:
            row.append(format_float(draws.p1[t]))
        rows.append(row)
    _write_rows(path, _draws_header(draws.d, with_p1), rows)


def _read_draws_csv(path: str, diag: dict) -> PosteriorDraws:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for h in header if h.startswith("beta_"))
        with_p1 = "p1" in header
        states, log_post, p1 = [], [], []
        for cells in reader:
            beta0 = float(cells[0])
            beta = np.array([float(c) for c in cells[1 : d + 1]])
            lam = float(cells[d + 1])
            states.append(ModelState(beta, beta0, lam))
            log_post.append(float(cells[d + 2]))
            if with_p1:
                p1.append(float(cells[d + 3]))
    if not states:
        raise DataFormatError(f"{path}: no retained draws")
    mode = diag["mode_state"]
    cfg = SamplerConfig(**diag["sampler_config"])
    return PosteriorDraws(
        states=tuple(states),
        log_post=np.array(log_post),
        accept_beta=np.array(diag["accept_beta"]),
        accept_beta0=diag["accept_beta0"],
        accept_lambda=diag["accept_lambda"],
        proposal_sd_trace=np.array(diag["proposal_sd_trace"]),
        mode_state=ModelState(np.array(mode["beta"]), mode["beta0"], mode["lambda"]),
        lambda_inferred=bool(diag["lambda_inferred"]),
        config=cfg,
        lambda_out_of_range=int(diag["lambda_out_of_range"]),
        p1=np.array(p1) if with_p1 else None,
        accept_p1=diag.get("accept_p1"),
    )


def _phi_cache_key(data: Dataset, prior: LambdaPrior, beta0: float, J: int, T: int, seed) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.X).tobytes())
    h.update(
        json.dumps(
            {
                "beta0": float(beta0),
                "lower": prior.lower,
                "upper": prior.upper,
                "J": J,
                "T": T,
                "seed": int(seed),
            },
            sort_keys=True,
        ).encode()
    )
    return h.hexdigest()


def _phi_table_cached(cfg: RunConfig, data: Dataset, prior: LambdaPrior, beta0: float):
    """Estimate the normalizer table, reusing a cached copy when present."""
    key = _phi_cache_key(data, prior, beta0, cfg.phi_J, cfg.phi_T, cfg.seed)
    cache_dir = cfg.phi_cache_dir or os.path.join(cfg.output_dir, "phi-cache")
    cache_path = os.path.join(cache_dir, f"phi_{key[:16]}.json")
    if os.path.exists(cache_path):
        with open(cache_path, encoding="utf-8") as fh:
            return PhiTable.from_json(fh.read()), {"key": key, "hit": True}
    table = estimate_phi_table(
        data, prior, beta0, J=cfg.phi_J, T=cfg.phi_T, seed=cfg.seed
    )
    os.makedirs(cache_dir, exist_ok=True)
    with open(cache_path, "w", encoding="utf-8") as fh:
        fh.write(table.to_json())
    return table, {"key": key, "hit": False}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _resolve_lambda(cfg: RunConfig) -> float:
    lam = 1.0 if cfg.fixed_lambda is None else cfg.fixed_lambda
    if lam <= 0.0 or not math.isfinite(lam):
        raise ConfigError(f"lambda must be positive and finite, got {lam}")
    return lam


def _p1_or_default(cfg: RunConfig) -> float:
    p1 = 0.5 if cfg.p1 is None else cfg.p1
    if not (0.0 < p1 < 1.0):
        raise ConfigError(f"P1 must lie strictly inside (0, 1), got {p1}")
    return p1


def _sampler_config(cfg: RunConfig, infer_lambda: bool, lam: float) -> SamplerConfig:
    return SamplerConfig(
        n_iter=cfg.n_iter,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
        infer_lambda=infer_lambda,
        fixed_lambda=lam,
        seed=cfg.seed,
        initial_proposal_sd=cfg.initial_proposal_sd,
        beta0_proposal_sd=cfg.beta0_proposal_sd,
        lambda_step_sd=cfg.lambda_step_sd,
        infer_p1=cfg.infer_p1,
        p1_step_sd=cfg.p1_step_sd,
        debug=cfg.debug,
    )


def _meta_json(meta: IngestMeta) -> dict:
    return {
        "feature_names": list(meta.feature_names),
        "label_col": meta.label_col,
        "label_col_present": meta.label_col_present,
        "n_labeled": meta.n_labeled,
        "n_unlabeled": meta.n_unlabeled,
        "standardize": None
        if meta.means is None
        else {
            "means": [float(v) for v in meta.means],
            "scales": [float(v) for v in meta.scales],
        },
    }


def _cmd_fit(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    data, meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=cfg.standardize,
        allow_01_labels=cfg.allow_01_labels,
        P1=_p1_or_default(cfg),
    )
    lam = _resolve_lambda(cfg)
    fit_data = data if data.is_fully_labeled else data.labeled_subset()
    mode = solve_mode(fit_data, lam)
    rows = [
        [f"beta_{j + 1}", format_float(mode.beta[j])] for j in range(data.d)
    ]
    rows.append(["beta0", format_float(mode.beta0)])
    _write_rows(os.path.join(out, "fit.csv"), ["param", "estimate"], rows)
    _write_json(
        os.path.join(out, "diagnostics.json"),
        {
            "mode_state": _state_json(mode),
            "objective": objective(mode, fit_data),
            "ingest": _meta_json(meta),
        },
    )
    return ["fit.csv", "diagnostics.json"], {}


def _cmd_sample(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    data, meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=cfg.standardize,
        allow_01_labels=cfg.allow_01_labels,
        P1=_p1_or_default(cfg),
    )
    infer = bool(cfg.infer_lambda)
    prior = table = None
    phi_info = None
    if infer:
        prior = LambdaPrior(cfg.prior_lower, cfg.prior_upper)
        lam0 = 1.0 if prior.contains(1.0) else math.sqrt(prior.lower * prior.upper)
        fit_data = data if data.is_fully_labeled else data.labeled_subset()
        anchor = solve_mode(fit_data, lam0)
        table, phi_info = _phi_table_cached(cfg, data, prior, anchor.beta0)
        sampler_cfg = _sampler_config(cfg, True, 1.0)
    else:
        sampler_cfg = _sampler_config(cfg, False, _resolve_lambda(cfg))

    draws = run_chain(data, sampler_cfg, prior=prior, table=table)
    _write_draws_csv(os.path.join(out, "draws.csv"), draws)
    summ = summarize(draws, cfg.level, data=data)
    _write_rows(
        os.path.join(out, "intervals.csv"),
        _INTERVAL_HEADER,
        _summary_interval_rows(summ, draws.lambda_inferred),
    )
    diag = {
        "accept_beta": [float(v) for v in draws.accept_beta],
        "accept_beta0": draws.accept_beta0,
        "accept_lambda": draws.accept_lambda,
        "accept_p1": draws.accept_p1,
        "lambda_inferred": draws.lambda_inferred,
        "lambda_out_of_range": draws.lambda_out_of_range,
        "proposal_sd_trace": [float(v) for v in draws.proposal_sd_trace],
        "mode_state": _state_json(draws.mode_state),
        "sampler_config": asdict(draws.config),
        "n_draws": draws.n_draws,
        "p1_used": data.P1,
        "ingest": _meta_json(meta),
    }
    _write_json(os.path.join(out, "diagnostics.json"), diag)
    extra = {"phi_cache": phi_info}
    return ["draws.csv", "intervals.csv", "diagnostics.json"], extra


def _cmd_predict(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    if not cfg.fit_dir:
        raise ConfigError("predict requires --fit-dir pointing at a sample run")
    diag_path = os.path.join(cfg.fit_dir, "diagnostics.json")
    draws_path = os.path.join(cfg.fit_dir, "draws.csv")
    for p in (diag_path, draws_path):
        if not os.path.exists(p):
            raise DataFormatError(f"missing fit artifact {p}")
    with open(diag_path, encoding="utf-8") as fh:
        diag = json.load(fh)
    draws = _read_draws_csv(draws_path, diag)

    data, _meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=False,
        allow_01_labels=cfg.allow_01_labels,
        require_labels=False,
        P1=_p1_or_default(cfg) if cfg.p1 is not None else diag.get("p1_used", 0.5),
    )
    transform = (diag.get("ingest") or {}).get("standardize")
    X = data.X
    if transform is not None:
        means = np.array(transform["means"])
        scales = np.array(transform["scales"])
        if means.shape[0] != X.shape[0]:
            raise DataFormatError(
                f"fit transform has {means.shape[0]} features, input has {X.shape[0]}"
            )
        X = (X - means[:, None]) / scales[:, None]
    if X.shape[0] != draws.d:
        raise DataFormatError(
            f"fit used d={draws.d} features, input has {X.shape[0]}"
        )

    p_mean = predict_proba(draws, X, data.P1, "mean")
    p_mode = predict_proba(draws, X, data.P1, "mode")
    chosen = p_mean if cfg.estimator == "mean" else p_mode
    labels = predict_label(chosen)
    rows = [
        [str(i + 1), format_float(pm), format_float(po), str(int(lab))]
        for i, (pm, po, lab) in enumerate(zip(p_mean, p_mode, labels))
    ]
    _write_rows(
        os.path.join(out, "probabilities.csv"),
        ["row_id", "p_mean", "p_mode", "class"],
        rows,
    )
    return ["probabilities.csv"], {}


def _cmd_laplace(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    data, meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=cfg.standardize,
        allow_01_labels=cfg.allow_01_labels,
        P1=_p1_or_default(cfg),
    )
    lam = _resolve_lambda(cfg)
    approx = laplace_fit(data, lam, extended=cfg.extended)
    newX = data.X if cfg.with_scores else None
    table = laplace_intervals(approx, cfg.level, newX=newX)
    _write_rows(
        os.path.join(out, "intervals.csv"), _INTERVAL_HEADER, _intervals_rows(table)
    )
    _write_json(
        os.path.join(out, "diagnostics.json"),
        {
            "mode_state": _state_json(approx.mode),
            "active_set_size": int(approx.active_set.size),
            "var_beta0": approx.var_beta0,
            "ingest": _meta_json(meta),
        },
    )
    return ["intervals.csv", "diagnostics.json"], {}


def _cmd_bootstrap(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    data, meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=cfg.standardize,
        allow_01_labels=cfg.allow_01_labels,
        P1=_p1_or_default(cfg),
    )
    lam = _resolve_lambda(cfg)
    result = bootstrap_intervals(
        data, lam, B=cfg.boot_B, level=cfg.level, seed=cfg.seed
    )
    _write_rows(
        os.path.join(out, "intervals.csv"),
        _INTERVAL_HEADER,
        _intervals_rows(result.intervals),
    )
    _write_json(
        os.path.join(out, "diagnostics.json"),
        {
            "B": cfg.boot_B,
            "n_redraws": result.n_redraws,
            "ingest": _meta_json(meta),
        },
    )
    return ["intervals.csv", "diagnostics.json"], {}


def _cmd_simulate(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    if not cfg.kind:
        raise ConfigError("simulate requires --kind")
    if cfg.d is None:
        raise ConfigError("simulate requires --d")
    spec = ScenarioSpec(
        kind=cfg.kind,
        d=cfg.d,
        n=cfg.n,
        n_test=cfg.n_test,
        lambda_true=cfg.lambda_true,
        tau=cfg.tau,
        n_o=cfg.n_o,
        n_u=cfg.n_u,
        replications=cfg.replications,
        seed=cfg.seed,
        bimodal_mu_var=cfg.bimodal_mu_var,
    )
    sampler = SamplerConfig(
        n_iter=cfg.n_iter,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
        initial_proposal_sd=cfg.initial_proposal_sd,
        beta0_proposal_sd=cfg.beta0_proposal_sd,
        lambda_step_sd=cfg.lambda_step_sd,
        debug=cfg.debug,
    )
    method = MethodConfig(
        mcmc=True,
        clt=cfg.clt,
        boot=cfg.boot,
        level=cfg.level,
        sampler=sampler,
        boot_B=cfg.boot_B,
        infer_lambda=cfg.infer_lambda,
        fixed_lambda=cfg.fixed_lambda,
        prior=LambdaPrior(cfg.prior_lower, cfg.prior_upper),
        phi_J=cfg.phi_J,
        phi_T=cfg.phi_T,
        estimator=cfg.estimator,
    )
    report = run_scenario(spec, method)
    report.to_csv(os.path.join(out, "report.csv"))
    report.records_csv(os.path.join(out, "records.csv"))
    outputs = ["report.csv", "records.csv"]
    merged = report.merged_calibration()
    if merged is not None:
        rows = [
            [
                format_float(m),
                str(int(c)),
                str(int(np_)),
                format_float(pr),
            ]
            for m, c, np_, pr in zip(
                merged.midpoint, merged.count, merged.n_positive, merged.proportion
            )
        ]
        _write_rows(
            os.path.join(out, "calibration.csv"),
            ["midpoint", "count", "n_positive", "proportion"],
            rows,
        )
        outputs.append("calibration.csv")
    return outputs, {}


def _cmd_calibrate(cfg: RunConfig, out: str) -> tuple[list[str], dict]:
    data, meta = _ingest(
        cfg.input,
        label_col=cfg.label_col,
        standardize=cfg.standardize,
        allow_01_labels=cfg.allow_01_labels,
        P1=_p1_or_default(cfg),
    )
    if not data.is_fully_labeled:
        raise DataFormatError("calibrate requires fully labeled data")
    k = cfg.folds
    if k < 2 or k > data.n:
        raise ConfigError(f"folds must lie in [2, n={data.n}], got {k}")
    perm = substream(cfg.seed, "cv").permutation(data.n)

    p_mean = np.full(data.n, np.nan)
    p_mode = np.full(data.n, np.nan)
    fold_of = np.full(data.n, -1, dtype=int)
    for f in range(k):
        held = perm[f::k]
        rest = np.setdiff1d(perm, held)
        train = Dataset(data.X[:, rest], data.y[rest], P1=data.P1)
        fold_cfg = _sampler_config(cfg, False, _resolve_lambda(cfg))
        fold_cfg = replace(fold_cfg, seed=substream_int(cfg.seed, "fold", f))
        draws = run_chain(train, fold_cfg)
        p_mean[held] = predict_proba(draws, data.X[:, held], data.P1, "mean")
        p_mode[held] = predict_proba(draws, data.X[:, held], data.P1, "mode")
        fold_of[held] = f

    chosen = p_mean if cfg.estimator == "mean" else p_mode
    labels = predict_label(chosen)
    rows = [
        [
            str(i + 1),
            str(int(fold_of[i])),
            str(int(data.y[i])),
            format_float(p_mean[i]),
            format_float(p_mode[i]),
            str(int(labels[i])),
        ]
        for i in range(data.n)
    ]
    _write_rows(
        os.path.join(out, "predictions.csv"),
        ["row_id", "fold", "y", "p_mean", "p_mode", "class"],
        rows,
    )
    cal = calibration_bins(chosen, data.y)
    cal_rows = [
        [format_float(m), str(int(c)), str(int(np_)), format_float(pr)]
        for m, c, np_, pr in zip(cal.midpoint, cal.count, cal.n_positive, cal.proportion)
    ]
    _write_rows(
        os.path.join(out, "calibration.csv"),
        ["midpoint", "count", "n_positive", "proportion"],
        cal_rows,
    )
    metrics = [
        ["misclass", format_float(misclassification(chosen, data.y))],
        ["mse", format_float(metric_mse(chosen, data.y))],
        ["mse_conventional", format_float(metric_mse(chosen, data.y, conventional=True))],
        ["n", str(data.n)],
        ["folds", str(k)],
    ]
    _write_rows(os.path.join(out, "metrics.csv"), ["metric", "value"], metrics)
    _write_json(
        os.path.join(out, "diagnostics.json"), {"ingest": _meta_json(meta)}
    )
    return ["predictions.csv", "calibration.csv", "metrics.csv", "diagnostics.json"], {}


_DISPATCH = {
    "fit": _cmd_fit,
    "sample": _cmd_sample,
    "predict": _cmd_predict,
    "laplace": _cmd_laplace,
    "bootstrap": _cmd_bootstrap,
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
}

_ERROR_EXITS = (
    (ConfigError, "config", 2),
    (DataFormatError, "data", 3),
    ((NumericalError, ConvergenceError), "numeric", 4),
    (ResourceBudgetError, "resource", 5),
    (ValueError, "data", 3),
    (OSError, "data", 3),
)


def run(config: RunConfig) -> int:
    """Execute one resolved command; returns the process exit status."""
    started = time.monotonic()
    try:
        out = config.output_dir
        os.makedirs(out, exist_ok=True)
        outputs, extra = _DISPATCH[config.command](config, out)
        manifest = {
            "command": config.command,
            "config": asdict(config),
            "versions": {
                "package": __version__,
                "numpy": np.__version__,
                "scipy": __import__("scipy").__version__,
                "python": ".".join(str(v) for v in sys.version_info[:3]),
            },
            "inputs": [
                {"path": p, "sha256": _sha256(p)}
                for p in (config.input,)
                if p is not None
            ],
            "outputs": [
                {"file": name, "sha256": _sha256(os.path.join(out, name))}
                for name in outputs
            ],
            "timing": {
                "timestamp_utc": datetime.now(timezone.utc).isoformat(),
                "wall_time_s": time.monotonic() - started,
            },
            **extra,
        }
        _write_json(os.path.join(out, "manifest.json"), manifest)
        return 0
    except Exception as exc:
        for excs, category, code in _ERROR_EXITS:
            if isinstance(exc, excs):
                print(
                    json.dumps({"error": category, "message": str(exc)}),
                    file=sys.stderr,
                )
                return code
        raise


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, *, needs_input: bool) -> None:
    if needs_input:
        p.add_argument("--input", required=True, help="input CSV (one sample per row)")
    p.add_argument("--output-dir", required=True, help="directory for artifacts")
    p.add_argument("--config", dest="config_file", default=None,
                   help="JSON config file; explicit flags win")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--label-col", default=None)
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--allow-01-labels", action="store_true", default=None,
                   help="read labels as 0/1 instead of -1/+1")
    p.add_argument("--p1", type=float, default=None,
                   help="marginal probability of class +1 (default 0.5)")


def _add_sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="fixed_lambda", type=float, default=None)
    p.add_argument("--infer-lambda", action="store_true", default=None)
    p.add_argument("--prior-lower", type=float, default=None)
    p.add_argument("--prior-upper", type=float, default=None)
    p.add_argument("--phi-J", dest="phi_J", type=int, default=None)
    p.add_argument("--phi-T", dest="phi_T", type=int, default=None)
    p.add_argument("--phi-cache-dir", default=None)
    p.add_argument("--n-iter", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--initial-proposal-sd", type=float, default=None)
    p.add_argument("--beta0-proposal-sd", type=float, default=None)
    p.add_argument("--lambda-step-sd", type=float, default=None)
    p.add_argument("--infer-p1", action="store_true", default=None)
    p.add_argument("--p1-step-sd", type=float, default=None)
    p.add_argument("--debug", action="store_true", default=None)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--estimator", choices=("mean", "mode"), default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesdwd",
        description="Bayesian distance-weighted discrimination toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="penalized mode fit")
    _add_common(p, needs_input=True)
    p.add_argument("--lambda", dest="fixed_lambda", type=float, default=None)

    p = sub.add_parser("sample", help="MCMC posterior sampling")
    _add_common(p, needs_input=True)
    _add_sampling(p)

    p = sub.add_parser("predict", help="probabilities for new samples")
    _add_common(p, needs_input=True)
    p.add_argument("--fit-dir", required=True, help="directory of a sample run")
    p.add_argument("--estimator", choices=("mean", "mode"), default=None)

    p = sub.add_parser("laplace", help="Gaussian posterior approximation")
    _add_common(p, needs_input=True)
    p.add_argument("--lambda", dest="fixed_lambda", type=float, default=None)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--extended", action="store_true", default=None,
                   help="include an intercept variance via the joint curvature")
    p.add_argument("--with-scores", action="store_true", default=None)

    p = sub.add_parser("bootstrap", help="percentile intervals from resampling")
    _add_common(p, needs_input=True)
    p.add_argument("--lambda", dest="fixed_lambda", type=float, default=None)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--boot-B", type=int, default=None)

    p = sub.add_parser("simulate", help="run a synthetic scenario")
    _add_common(p, needs_input=False)
    _add_sampling(p)
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--lambda-true", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--n-o", dest="n_o", type=int, default=None)
    p.add_argument("--n-u", dest="n_u", type=int, default=None)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--bimodal-mu-var", type=float, default=None)
    p.add_argument("--clt", action="store_true", default=None)
    p.add_argument("--boot", action="store_true", default=None)
    p.add_argument("--boot-B", type=int, default=None)

    p = sub.add_parser("calibrate", help="k-fold cross-validated probabilities")
    _add_common(p, needs_input=True)
    _add_sampling(p)
    p.add_argument("--folds", type=int, default=None)

    return parser


def _merge_config(args: argparse.Namespace) -> RunConfig:
    """Overlay dataclass defaults <- JSON config file <- explicit flags."""
    valid = {f.name for f in fields(RunConfig)}
    merged: dict = {"command": args.command}

    path = getattr(args, "config_file", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(file_cfg) - valid)
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {unknown}")
        if "command" in file_cfg and file_cfg["command"] != args.command:
            raise ConfigError(
                f"config file command {file_cfg['command']!r} does not match "
                f"invoked command {args.command!r}"
            )
        merged.update({k: v for k, v in file_cfg.items() if k != "command"})
        merged["config_file"] = path

    for key, value in vars(args).items():
        if key in valid and value is not None:
            merged[key] = value
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _merge_config(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
