"""Error metrics and the multi-environment replication harness."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .balancing import BalanceConfig, learn_balancing_weights
from .datagen import (BETA_S, ClassificationGenConfig, RegressionGenConfig, gen_classification,
                      gen_regression)
from .design import Design, gwlp, read_design, template_design
from .errors import NoMatchError, ValidationError
from .models import fit_model, predict
from .subsampling import SearchConfig, ffd_subsample

log = logging.getLogger(__name__)

METHODS = ("baseline", "gbr", "bssp")
PRESET_REGRESSION_GRID = (-3.0, -2.0, -1.7, -1.5, -1.3, 1.3, 1.5, 1.7, 2.0, 3.0)
PRESET_CLASSIFICATION_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
PRESET_CLASSIFICATION_TRAIN = (0.15, 0.25, 0.75, 0.85)


def rmse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValidationError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValidationError("rmse of empty vectors")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def beta_error(beta_true, beta_hat) -> float:
    """L1 distance between coefficient vectors."""
    beta_true = np.asarray(beta_true, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_true.shape != beta_hat.shape:
        raise ValidationError(f"length mismatch: {beta_true.shape} vs {beta_hat.shape}")
    return float(np.abs(beta_true - beta_hat).sum())


def average_error(errors) -> float:
    errors = np.asarray(errors, dtype=float)
    if errors.size < 1:
        raise ValidationError("average_error needs at least one environment")
    return float(errors.mean())


def stability_error(errors) -> float:
    """Sample standard deviation of per-environment errors (divisor |E| - 1)."""
    errors = np.asarray(errors, dtype=float)
    if errors.size < 2:
        raise ValidationError("stability_error needs at least two environments")
    return float(np.sqrt(np.sum((errors - errors.mean()) ** 2) / (errors.size - 1)))


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "regression"
    r_train: float = 2.0
    r_test: tuple = PRESET_REGRESSION_GRID
    replications: int = 50
    methods: tuple = METHODS
    template: str | None = None
    seed: int = 0
    n_train: int = 2000
    n_test: int = 2000
    lambda_l1: float | None = None
    budget: int = 10_000
    strategy: str = "random-shuffle"
    rho: float = 0.9
    min_subsample: int = 32
    classification_error: str = "probability"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if not self.r_test:
            raise ValidationError("test grid must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValidationError(f"methods must be a non-empty subset of {METHODS}; got {self.methods}")
        if self.classification_error not in ("probability", "label"):
            raise ValidationError("classification_error must be 'probability' or 'label'")
        object.__setattr__(self, "r_test", tuple(float(r) for r in self.r_test))
        object.__setattr__(self, "methods", tuple(self.methods))
        # validate rates eagerly so a bad grid fails before any work is done
        for r in (self.r_train, *self.r_test):
            self._gen_config(r, 0, self.n_test)

    def _gen_config(self, r, seed, n):
        if self.task == "regression":
            return RegressionGenConfig(bias_rate=r, n=n, seed=seed)
        return ClassificationGenConfig(bias_rate=r, n=n, seed=seed)

    def generate(self, r, seed, n):
        cfg = self._gen_config(r, seed, n)
        return gen_regression(cfg) if self.task == "regression" else gen_classification(cfg)

    def load_template(self) -> Design:
        return template_design() if self.template is None else read_design(self.template)


def derive_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


_TRAIN, _TEST, _CV, _SEARCH, _GBR = range(5)


def run_replication(cfg: ExperimentConfig, rep: int, template: Design | None = None) -> dict:
    """One replication: train each method once, score it on a fresh test set
    per environment (shared across methods)."""
    template = template if template is not None else cfg.load_template()
    family = "linear" if cfg.task == "regression" else "logistic"
    train = cfg.generate(cfg.r_train, derive_seed(cfg.seed, rep, _TRAIN), cfg.n_train)
    d = train.X.shape[1]
    cv_seed = derive_seed(cfg.seed, rep, _CV)
    fits, meta = {}, {}
    for method in cfg.methods:
        if method == "baseline":
            fits[method] = fit_model(train.X, train.y, None, family, cfg.lambda_l1, cv_seed)
        elif method == "gbr":
            bw = learn_balancing_weights(train.X, seed=derive_seed(cfg.seed, rep, _GBR))
            fits[method] = fit_model(train.X, train.y, bw.values, family, cfg.lambda_l1, cv_seed)
            meta[method] = {"balance_loss": bw.loss, "balance_loss_initial": bw.initial_loss}
        else:
            search = SearchConfig(cfg.strategy, cfg.budget, derive_seed(cfg.seed, rep, _SEARCH))
            try:
                sub = ffd_subsample(train.X, train.y, template, search, BalanceConfig(rho=cfg.rho))
            except NoMatchError as exc:
                meta[method] = {"failed": str(exc), "psi": math.inf, "matched_count": 0}
                continue
            meta[method] = {"psi": sub.psi, "matched_count": sub.matched_count,
                            "permutation": list(sub.permutation), "evaluated": sub.evaluated}
            if sub.matched_count < cfg.min_subsample:
                meta[method]["failed"] = f"subsample of {sub.matched_count} rows < {cfg.min_subsample}"
                continue
            idx = sub.selected_indices
            y_sub = train.y[idx]
            if family == "logistic" and len(np.unique(y_sub)) < 2:
                meta[method]["failed"] = "single-class subsample"
                continue
            fits[method] = fit_model(train.X[idx], y_sub, None, family, cfg.lambda_l1, cv_seed)

    beta_true = np.zeros(d)
    if cfg.task == "regression":
        beta_true[: d // 2] = BETA_S
    half = d // 2
    result = {"replication": rep, "rmse": {}, "beta_error_S": {}, "beta_error_V": {},
              "coefficients": {}, "meta": meta}
    for method, fit in fits.items():
        result["coefficients"][method] = [float(c) for c in fit.coefficients]
        if cfg.task == "regression":
            result["beta_error_S"][method] = beta_error(beta_true[:half], fit.coefficients[:half])
        result["beta_error_V"][method] = beta_error(beta_true[half:], fit.coefficients[half:])
        result["rmse"][method] = []
    for e, r in enumerate(cfg.r_test):
        test = cfg.generate(r, derive_seed(cfg.seed, rep, _TEST, e), cfg.n_test)
        for method, fit in fits.items():
            pred = predict(fit, test.X)
            if fit.family == "logistic" and cfg.classification_error == "label":
                pred = (pred >= 0.5).astype(float)
            result["rmse"][method].append(rmse(test.y, pred))
    return result


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    replications: list
    failed: dict = field(default_factory=dict)

    @property
    def methods(self):
        return self.config.methods

    def rmse_table(self, method: str) -> np.ndarray:
        """Successful replications x environments."""
        rows = [r["rmse"][method] for r in self.replications if method in r["rmse"]]
        return np.array(rows, dtype=float).reshape(len(rows), len(self.config.r_test))

    def env_errors(self, method: str) -> np.ndarray:
        table = self.rmse_table(method)
        if table.shape[0] == 0:
            return np.full(len(self.config.r_test), np.nan)
        return table.mean(axis=0)

    def average_error(self, method: str) -> float:
        return average_error(self.env_errors(method))

    def stability_error(self, method: str) -> float | None:
        errs = self.env_errors(method)
        return stability_error(errs) if errs.size >= 2 else None

    def mean_beta_error(self, method: str, part: str = "V") -> float | None:
        vals = [r[f"beta_error_{part}"][method] for r in self.replications
                if method in r[f"beta_error_{part}"]]
        return float(np.mean(vals)) if vals else None

    def rmse_spread(self, method: str) -> float:
        errs = self.env_errors(method)
        return float(errs.max() - errs.min())

    def summary(self) -> dict:
        out = {"version": __version__, "seed": self.config.seed,
               "config": asdict(self.config), "methods": {}}
        for m in self.methods:
            errs = self.env_errors(m)
            entry = {
                "successful_replications": int(self.rmse_table(m).shape[0]),
                "failed_replications": int(self.failed.get(m, 0)),
                "env_errors": [_num(v) for v in errs],
                "average_error": _num(self.average_error(m)),
                "stability_error": _num(self.stability_error(m)),
                "beta_error_S": self.mean_beta_error(m, "S"),
                "beta_error_V": self.mean_beta_error(m, "V"),
            }
            if m == "bssp":
                psis = [r["meta"]["bssp"]["psi"] for r in self.replications if "bssp" in r["meta"]]
                counts = [r["meta"]["bssp"]["matched_count"] for r in self.replications if "bssp" in r["meta"]]
                entry["psi"] = [_num(p) for p in psis]
                entry["matched_count"] = [int(c) for c in counts]
            out["methods"][m] = entry
        return out

    def long_rows(self):
        r_train = self.config.r_train
        for rec in self.replications:
            rep = rec["replication"]
            for m in self.methods:
                if m in rec["rmse"]:
                    for r, v in zip(self.config.r_test, rec["rmse"][m]):
                        yield (m, r_train, r, rep, "rmse", v)
                for part in ("S", "V"):
                    if m in rec[f"beta_error_{part}"]:
                        yield (m, r_train, "", rep, f"beta_error_{part}", rec[f"beta_error_{part}"][m])
                if m == "bssp" and m in rec["meta"]:
                    yield (m, r_train, "", rep, "psi", rec["meta"][m]["psi"])
                    yield (m, r_train, "", rep, "matched_count", rec["meta"][m]["matched_count"])

    def to_long_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(["method", "r_train", "r_test", "replication", "metric", "value"])
        for row in self.long_rows():
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=False)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _num(v):
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get("BSSP_THREADS", "1")))


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    """Run every replication and fold the results in replication order."""
    template = cfg.load_template() if "bssp" in cfg.methods else None
    if template is not None and gwlp(template).resolution < 3:
        raise ValidationError("template resolution must be >= 3 for bssp")
    workers = _worker_count(workers)
    reps = range(cfg.replications)
    if workers == 1:
        results = [run_replication(cfg, rep, template) for rep in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [(cfg, rep) for rep in reps]))
    failed = {m: sum(1 for r in results if m not in r["rmse"]) for m in cfg.methods}
    report = ExperimentReport(cfg, results, failed)
    _sanitize(report)
    return report


def _sanitize(report):
    # inf psi (no match) is stored as None so JSON stays strict
    for rec in report.replications:
        meta = rec["meta"].get("bssp")
        if meta and isinstance(meta.get("psi"), float) and math.isinf(meta["psi"]):
            meta["psi"] = None
