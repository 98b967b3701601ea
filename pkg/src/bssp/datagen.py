"""Synthetic biased-selection environments and real-data ingestion."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import GenerationError, IngestionError, ValidationError

BETA_S = (1 / 3, -2 / 3, 1.0, -1 / 3, 2 / 3)
STALL_LIMIT = 10_000_000
BATCH = 4096
MAX_CLASS_RETRIES = 10


@dataclass(frozen=True)
class RegressionGenConfig:
    bias_rate: float = 2.0
    n: int = 2000
    d: int = 10
    beta_s: tuple = BETA_S
    noise_sd: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 1 < abs(self.bias_rate) <= 3:
            raise ValidationError(f"regression bias rate must satisfy 1 < |r| <= 3, got {self.bias_rate}")
        if self.d % 2 or len(self.beta_s) != self.d // 2:
            raise ValidationError("beta_s must have length d/2 with d even")
        if self.d < 4 or self.n < 1:
            raise ValidationError("need d >= 4 and n >= 1")


@dataclass(frozen=True)
class ClassificationGenConfig:
    bias_rate: float = 0.85
    n: int = 2000
    d: int = 10
    interaction_scale: float = 5.0
    latent_noise_sd: float = 0.2
    seed: int = 0

    def __post_init__(self):
        # r = 1 is admitted: it is the end point of the published test grid
        if not 0 < self.bias_rate <= 1:
            raise ValidationError(f"classification bias rate must lie in (0, 1], got {self.bias_rate}")
        if self.d % 2 or self.d < 10 or self.n < 1:
            raise ValidationError("need even d >= 10 and n >= 1")

    @property
    def alpha(self) -> np.ndarray:
        i = np.arange(1, 4)
        return (-1.0) ** i * (np.mod(i, 3) + 1) * self.d / 3


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list
    environment: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2 or not np.all((self.X == 0) | (self.X == 1)):
            raise ValidationError("X must be a 0/1 matrix")
        if self.y.shape != (self.X.shape[0],):
            raise ValidationError("y length must equal the number of rows of X")
        self.X = self.X.astype(np.int8)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), self.environment, dict(self.meta))

    def to_frame(self, outcome: str = "y") -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=self.feature_names)
        df[outcome] = self.y
        if self.environment is not None:
            df["environment"] = self.environment
        return df

    def to_csv(self, path, outcome: str = "y") -> None:
        self.to_frame(outcome).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def sidecar(self) -> str:
        return json.dumps(self.meta, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def gen_covariates(count: int, d: int, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Independent standard normals thresholded at zero."""
    if count < 1 or d < 1:
        raise ValidationError("count and d must be >= 1")
    rng = rng or _rng(seed)
    return (rng.standard_normal((count, d)) >= 0).astype(np.int8)


def _rejection_loop(rng, n, d, draw_batch):
    """Draw batches, keep accepted rows in draw order until n are collected."""
    xs, ys, kept, stall = [], [], 0, 0
    while kept < n:
        x = gen_covariates(BATCH, d, rng=rng)
        y, prob = draw_batch(x)
        if np.any(prob < 0) or np.any(prob > 1):
            raise GenerationError("acceptance probability outside [0, 1]")
        accept = rng.random(BATCH) < prob
        if not accept.any():
            stall += BATCH
            if stall >= STALL_LIMIT:
                raise GenerationError(f"no acceptances in {stall} consecutive draws")
            continue
        # stall counts draws since the last acceptance
        stall = BATCH - 1 - int(np.flatnonzero(accept)[-1])
        xs.append(x[accept])
        ys.append(y[accept])
        kept += int(accept.sum())
    return np.vstack(xs)[:n], np.concatenate(ys)[:n]


def feature_names(d: int) -> list:
    h = d // 2
    return [f"S{i}" for i in range(1, h + 1)] + [f"V{i}" for i in range(1, d - h + 1)]


def regression_signal(x: np.ndarray, beta_s=BETA_S) -> np.ndarray:
    """Noise-free outcome: linear stable part plus the omitted S1*S2 term."""
    s = x[:, : len(beta_s)].astype(float)
    return s @ np.asarray(beta_s) + s[:, 0] * s[:, 1]


def gen_regression(cfg: RegressionGenConfig) -> Dataset:
    """Biased-selection regression environment.

    Rows are kept with probability |r|^(-5 tau), tau = |f(S) - sign(r) V_last|,
    where f includes the interaction S1*S2 that a linear model omits.
    """
    rng = _rng(cfg.seed)
    r = cfg.bias_rate
    v5 = cfg.d - 1

    def draw(x):
        signal = regression_signal(x, cfg.beta_s)
        y = signal + cfg.noise_sd * rng.standard_normal(len(x))
        tau = np.abs(signal - np.sign(r) * x[:, v5])
        return y, np.abs(r) ** (-5.0 * tau)

    x, y = _rejection_loop(rng, cfg.n, cfg.d, draw)
    return Dataset(x, y, feature_names(cfg.d), meta={"task": "regression", "config": asdict(cfg)})


def classification_latent(x: np.ndarray, cfg: ClassificationGenConfig) -> np.ndarray:
    s = x[:, :5].astype(float)
    z = s[:, :3] @ cfg.alpha + cfg.interaction_scale * s[:, 3] * s[:, 4]
    return 1.0 / (1.0 + np.exp(-z))


def gen_classification(cfg: ClassificationGenConfig) -> Dataset:
    """Biased-selection classification environment: a row is kept with
    probability r when V_last equals the label, 1 - r otherwise."""
    v5 = cfg.d - 1
    seed = cfg.seed
    for attempt in range(MAX_CLASS_RETRIES + 1):
        rng = _rng(seed)

        def draw(x):
            latent = classification_latent(x, cfg) + cfg.latent_noise_sd * rng.standard_normal(len(x))
            y = (latent >= 0.5).astype(np.int8)
            prob = np.where(x[:, v5] == y, cfg.bias_rate, 1.0 - cfg.bias_rate)
            return y, prob

        x, y = _rejection_loop(rng, cfg.n, cfg.d, draw)
        if len(np.unique(y)) == 2:
            meta = {"task": "classification", "config": asdict(cfg), "retries": attempt}
            return Dataset(x, y, feature_names(cfg.d), meta=meta)
        seed = seed + 1 if isinstance(seed, int) else seed
    raise GenerationError(f"single-class outcome after {MAX_CLASS_RETRIES} retries")


# -- CSV ingestion ------------------------------------------------------------

def ingest_csv(path, outcome_column: str, environment_column: str | None = None,
               frequency_band=(0.2, 0.8), binarize: str = "mean-threshold") -> list:
    """Read a tabular file and return one binarized Dataset per environment.

    Non-binary numeric features are set to 1 where x >= column mean (means
    taken over the whole file), then features whose share of ones falls
    outside ``frequency_band`` are dropped. Rows with missing values are
    dropped and counted.
    """
    if binarize != "mean-threshold":
        raise ValidationError(f"unsupported binarization {binarize!r}")
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError(f"file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from None
    if df.shape[0] == 0:
        raise IngestionError(f"{path}: no data rows")
    missing = [c for c in (outcome_column, environment_column) if c is not None and c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}; have {list(df.columns)}")
    n_raw = len(df)
    df = df.dropna()
    dropped_rows = n_raw - len(df)
    if len(df) == 0:
        raise IngestionError(f"{path}: every row has a missing value")
    feats = [c for c in df.columns if c not in (outcome_column, environment_column)]
    non_numeric = [c for c in feats if not pd.api.types.is_numeric_dtype(df[c])]
    if non_numeric:
        raise IngestionError(f"{path}: non-numeric feature columns {non_numeric}")
    xs = df[feats].astype(float)
    binary = xs.isin([0.0, 1.0]).all()
    means = xs.mean()
    xb = pd.DataFrame({c: (xs[c] if binary[c] else (xs[c] >= means[c]).astype(float)) for c in feats})
    share = xb.mean()
    lo, hi = frequency_band
    keep = [c for c in feats if lo <= share[c] <= hi]
    dropped = {c: float(share[c]) for c in feats if c not in keep}
    if not keep:
        raise IngestionError(f"{path}: no feature survives the frequency band {frequency_band}")
    report = {
        "source": str(path),
        "rows_read": n_raw,
        "rows_dropped_missing": dropped_rows,
        "thresholds": {c: (None if binary[c] else float(means[c])) for c in feats},
        "dropped_features": dropped,
        "kept_features": keep,
    }
    x_all = xb[keep].to_numpy().astype(np.int8)
    y_all = df[outcome_column].to_numpy()
    if environment_column is None:
        return [Dataset(x_all, y_all, keep, None, {"ingest": report})]
    labels = df[environment_column].astype(str).to_numpy()
    out = []
    for label in pd.unique(labels):
        mask = labels == label
        out.append(Dataset(x_all[mask], y_all[mask], keep, label, {"ingest": report}))
    return out


def read_dataset_csv(path, outcome: str | None = None, environment: str | None = "environment") -> Dataset:
    """Read a dataset CSV: features, then the outcome, then an optional environment column."""
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError(f"file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from None
    if df.shape[0] == 0:
        raise IngestionError(f"{path}: no data rows")
    env = None
    if environment and environment in df.columns:
        labels = df.pop(environment).astype(str).unique()
        env = labels[0] if len(labels) == 1 else None
    outcome = outcome or df.columns[-1]
    if outcome not in df.columns:
        raise IngestionError(f"{path}: outcome column {outcome!r} not found")
    y = df.pop(outcome).to_numpy()
    try:
        return Dataset(df.to_numpy(), y, list(df.columns), env)
    except ValidationError as exc:
        raise IngestionError(f"{path}: {exc}") from None


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    ds.to_csv(path)
    path.with_suffix(".json").write_text(ds.sidecar() + "\n")
