"""Experiment engine: data preparation, SNR and K sweeps, normalized MSE, CSV.

Configuration is a flat ``key = value`` text file (``#`` starts a comment).
Lists are comma-separated. A ``preset`` key selects the defaults that the
remaining keys override; see ``PRESETS`` and the README for every key.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .channel_model import ModelConfig, generate_dataset
from .complex_linalg import standard_complex_normal
from .dataset_io import ChannelDataset, read_dataset, split_dataset
from .errors import ConfigError, LengthMismatch
from .estimators import (
    GmmCme,
    NoiseModel,
    dft_dictionary,
    genie_lmmse_batch,
    lmmse_batch,
    omp_genie_batch,
    sample_covariance,
)
from .gmm import EmConfig, GmmModel, fit_em, load_model

log = logging.getLogger(__name__)

ESTIMATORS = ("ls", "sample_cov", "genie_lmmse", "gmm", "genie_omp")
_NOISE_STREAM = 0x6E6F6973
_SPLIT_STREAM = 0x73706C74


@dataclass(frozen=True)
class ExperimentConfig:
    antennas: int = 16
    clusters: int = 1
    spread_deg: float = 2.0
    quadrature_points: int | None = None
    n_train: int = 20_000
    n_test: int = 2_000
    train_path: str | None = None
    test_path: str | None = None
    model_path: str | None = None
    estimators: tuple[str, ...] = ESTIMATORS
    snr_grid_db: tuple[float, ...] = tuple(float(s) for s in range(-15, 41, 5))
    components: int = 16
    k_grid: tuple[int, ...] | None = None
    em_max_iterations: int = 500
    em_rel_tolerance: float = 1e-6
    em_ridge_scale: float = 1e-6
    em_init: str = "random-responsibility"
    omp_oversampling: int = 4
    omp_max_sparsity: int | None = None
    output: str | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        names = self.estimators
        for name in names:
            if "," in name:
                raise ConfigError(f"estimator name {name!r} contains a comma")
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
        if len(set(names)) != len(names):
            raise ConfigError("estimator names must be unique")
        if not names:
            raise ConfigError("at least one estimator is required")
        grid = self.snr_grid_db
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("snr_grid_db must be non-empty and strictly increasing")
        if self.k_grid is not None and (not self.k_grid or min(self.k_grid) < 1):
            raise ConfigError("k_grid entries must be positive integers")
        if self.components < 1 or self.antennas < 1 or self.clusters < 1:
            raise ConfigError("components, antennas and clusters must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if (self.train_path is None) != (self.test_path is None):
            raise ConfigError("train_path and test_path must be given together")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            antennas=self.antennas,
            clusters=self.clusters,
            spread=float(np.deg2rad(self.spread_deg)),
            quadrature_points=self.quadrature_points,
            seed=self.seed,
        )

    def em_config(self) -> EmConfig:
        return EmConfig(
            max_iterations=self.em_max_iterations,
            rel_tolerance=self.em_rel_tolerance,
            ridge_scale=self.em_ridge_scale,
            init_strategy=self.em_init,
            seed=self.seed,
        )

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def describe(self) -> str:
        return "\n".join(f"{f.name} = {_format_value(getattr(self, f.name))}" for f in dataclasses.fields(self))


@dataclass
class SweepResult:
    axis: str
    axis_values: list[float]
    mse: dict[str, list[float]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in ("snr_db", "k_components"):
            raise ValueError(f"unknown axis {self.axis!r}")
        for name, values in self.mse.items():
            if len(values) != len(self.axis_values):
                raise LengthMismatch(f"{name}: {len(values)} values for {len(self.axis_values)} axis points")


# -- config files --------------------------------------------------------------

PRESETS: dict[str, dict] = {
    "desk": {},
    "desk-3c": {"clusters": 3},
    "paper": {
        "antennas": 128,
        "components": 128,
        "n_train": 190_000,
        "n_test": 10_000,
        "k_grid": (1, 16, 64, 128, 256),
    },
    "paper-3c": {
        "antennas": 128,
        "clusters": 3,
        "components": 128,
        "n_train": 190_000,
        "n_test": 10_000,
        "k_grid": (1, 16, 64, 128, 256),
    },
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return format(value, "g")
    return str(value)


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if raw.lower() == "none" and "None" in kind:
        return None
    try:
        if kind.startswith("tuple[str"):
            return tuple(item.strip() for item in raw.split(",") if item.strip())
        if kind.startswith("tuple[float"):
            return tuple(float(item) for item in raw.split(","))
        if kind.startswith("tuple[int"):
            return tuple(int(item) for item in raw.split(","))
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into typed ExperimentConfig fields."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            values["preset"] = raw
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def build_config(values: dict | None = None, **overrides) -> ExperimentConfig:
    values = dict(values or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    preset = values.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    merged = {**PRESETS[preset], **values}
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return ExperimentConfig(**merged)


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    return build_config(values, **overrides)


# -- data and models -------------------------------------------------------------


def prepare_data(cfg: ExperimentConfig) -> tuple[ChannelDataset, ChannelDataset]:
    """Load the train/test files or generate both from one normalized population."""
    if cfg.train_path is not None:
        return read_dataset(cfg.train_path), read_dataset(cfg.test_path)
    total = cfg.n_train + cfg.n_test
    retain = "genie_lmmse" in cfg.estimators
    ds = generate_dataset(cfg.model_config(), total, retain_covariances=retain)
    rng = np.random.default_rng([cfg.seed, _SPLIT_STREAM])
    return split_dataset(ds, cfg.n_train / total, rng)


def fit_model(cfg: ExperimentConfig, train: ChannelDataset, k: int) -> GmmModel:
    result = fit_em(train, k, cfg.em_config())
    log.info("fitted K=%d in %d EM iterations (converged=%s)", k, result.n_iterations, result.converged)
    return result.model


def noise_realizations(seed: int, snr_index: int, n_samples: int, n_antennas: int, sigma_sq: float) -> np.ndarray:
    """Noise rows seeded per ``(seed, snr_index, sample_index)``."""
    out = np.empty((n_samples, n_antennas), np.complex128)
    scale = np.sqrt(sigma_sq)
    for m in range(n_samples):
        rng = np.random.default_rng([seed, _NOISE_STREAM, snr_index, m])
        out[m] = scale * standard_complex_normal(rng, n_antennas)
    return out


def normalized_mse(truths, estimates) -> float:
    """``(1 / (M N)) sum_m ||h_m - h_hat_m||^2``."""
    truths = np.atleast_2d(np.asarray(truths, dtype=np.complex128))
    estimates = np.atleast_2d(np.asarray(estimates, dtype=np.complex128))
    if truths.shape != estimates.shape or truths.shape[0] == 0:
        raise LengthMismatch(f"truths {truths.shape} vs estimates {estimates.shape}")
    err = truths - estimates
    return float(np.sum(err.real**2 + err.imag**2) / truths.size)


def per_sample_errors(truths: np.ndarray, estimates: np.ndarray) -> np.ndarray:
    err = truths - estimates
    return np.sum(err.real**2 + err.imag**2, axis=1) / truths.shape[1]


def _make_estimators(cfg: ExperimentConfig, test: ChannelDataset, train: ChannelDataset | None,
                     gmm_model: GmmModel | None, names) -> dict[str, Callable]:
    """Map estimator name -> fn(y, noise) returning estimates for all test rows."""
    n = test.n_antennas
    fns: dict[str, Callable] = {}
    for name in names:
        if name == "ls":
            fns[name] = lambda y, noise: y.copy()
        elif name == "sample_cov":
            cov = sample_covariance(train)
            fns[name] = lambda y, noise, cov=cov: lmmse_batch(cov, noise, y)
        elif name == "genie_lmmse":
            if not test.has_covariances:
                raise ConfigError("genie_lmmse requires a test dataset with covariances")
            fns[name] = lambda y, noise: genie_lmmse_batch(test.covariances, noise, y)
        elif name == "gmm":
            fns[name] = lambda y, noise, model=gmm_model: GmmCme(model, noise).estimate_batch(y)
        elif name == "genie_omp":
            dictionary = dft_dictionary(n, cfg.omp_oversampling)
            fns[name] = lambda y, noise, d=dictionary: omp_genie_batch(y, d, test.channels, cfg.omp_max_sparsity)
    return fns


def _evaluate_point(cfg, test, fns, snr_index, snr_db):
    noise = NoiseModel.from_snr_db(snr_db, test.n_antennas)
    y = test.channels + noise_realizations(cfg.seed, snr_index, len(test), test.n_antennas, noise.sigma_sq)
    return {name: normalized_mse(test.channels, fn(y, noise)) for name, fn in fns.items()}


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(*item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda item: fn(*item), items))


def run_snr_sweep(cfg: ExperimentConfig, data=None, model: GmmModel | None = None) -> SweepResult:
    """Normalized MSE of every configured estimator over ``cfg.snr_grid_db``.

    All estimators see the same noisy observations at each SNR point.
    ``data`` optionally supplies ``(train, test)`` to skip preparation.
    """
    start = time.perf_counter()
    train, test = data if data is not None else prepare_data(cfg)
    if "genie_lmmse" in cfg.estimators and not test.has_covariances:
        raise ConfigError("genie_lmmse requires a test dataset with covariances")
    if "gmm" in cfg.estimators and model is None:
        model = load_model(cfg.model_path) if cfg.model_path else fit_model(cfg, train, cfg.components)
    fns = _make_estimators(cfg, test, train, model, cfg.estimators)
    points = _map(lambda i, s: _evaluate_point(cfg, test, fns, i, s), list(enumerate(cfg.snr_grid_db)), cfg.threads)
    mse = {name: [p[name] for p in points] for name in cfg.estimators}
    return SweepResult(
        "snr_db",
        list(cfg.snr_grid_db),
        mse,
        {"config": cfg, "seed": cfg.seed, "runtime_s": time.perf_counter() - start},
    )


def k_sweep_column(name: str, snr_db: float) -> str:
    return f"{name}_snr_{format(snr_db, 'g')}"


def run_k_sweep(cfg: ExperimentConfig, data=None) -> SweepResult:
    """GMM estimator MSE versus the number of components.

    One model per entry of ``cfg.k_grid`` is fitted on the same training set
    and evaluated at every SNR of ``cfg.snr_grid_db``. Columns are named
    ``<estimator>_snr_<dB>``; baselines other than ``gmm`` do not depend on K
    and are repeated along the axis for reference.
    """
    if cfg.k_grid is None:
        raise ConfigError("run_k_sweep requires k_grid")
    start = time.perf_counter()
    train, test = data if data is not None else prepare_data(cfg)
    if "genie_lmmse" in cfg.estimators and not test.has_covariances:
        raise ConfigError("genie_lmmse requires a test dataset with covariances")
    k_grid = list(cfg.k_grid)
    models = _map(lambda k: fit_model(cfg, train, k), [(k,) for k in k_grid], cfg.threads) \
        if "gmm" in cfg.estimators else [None] * len(k_grid)
    baselines = [name for name in cfg.estimators if name != "gmm"]
    base_fns = _make_estimators(cfg, test, train, None, baselines)
    snr_items = list(enumerate(cfg.snr_grid_db))
    base_points = _map(lambda i, s: _evaluate_point(cfg, test, base_fns, i, s), snr_items, cfg.threads)

    def gmm_point(model, snr_index, snr_db):
        fns = _make_estimators(cfg, test, train, model, ["gmm"])
        return _evaluate_point(cfg, test, fns, snr_index, snr_db)["gmm"]

    mse: dict[str, list[float]] = {}
    for name in cfg.estimators:
        for snr_index, snr_db in snr_items:
            col = k_sweep_column(name, snr_db)
            if name == "gmm":
                mse[col] = _map(lambda m: gmm_point(m, snr_index, snr_db), [(m,) for m in models], cfg.threads)
            else:
                mse[col] = [base_points[snr_index][name]] * len(k_grid)
    return SweepResult(
        "k_components",
        [float(k) for k in k_grid],
        mse,
        {"config": cfg, "seed": cfg.seed, "runtime_s": time.perf_counter() - start},
    )


def emit_csv(result: SweepResult, path) -> None:
    """Write ``axis,<col1>,<col2>,...`` then one row per axis value, 17 significant digits."""
    names = list(result.mse)
    for name in names:
        if "," in name or "\n" in name:
            raise ConfigError(f"column name {name!r} cannot be written to CSV")
    lines = [",".join(["axis"] + names)]
    for i, axis_value in enumerate(result.axis_values):
        row = [format(float(axis_value), ".17g")] + [format(result.mse[name][i], ".17g") for name in names]
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Parse a CSV produced by :func:`emit_csv` into ``(header, values)``."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [[float(v) for v in line.rstrip("\n").split(",")] for line in fh if line.strip()]
    return header, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
