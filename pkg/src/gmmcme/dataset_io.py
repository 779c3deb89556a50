"""Channel datasets: container, binary persistence, CSV import, normalization.

Binary layout (all little-endian)::

    magic            4 bytes   b"CHDS"
    version          uint32    1
    n_antennas       uint32
    n_samples        uint64
    has_covariances  uint8
    records          n_samples x [N complex channel entries,
                                  then (if has_covariances) the row-major
                                  upper triangle of the covariance]

Every complex value is written as two float64 values ``(re, im)``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .complex_linalg import hermitize
from .errors import CorruptFile, DegenerateDataset, DimensionMismatch, ParseError

DATASET_MAGIC = b"CHDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIQB")
_C128_LE = np.dtype("<c16")


@dataclass(frozen=True)
class ChannelSample:
    channel: np.ndarray
    covariance: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ChannelDataset:
    """M channel vectors of dimension N, stored as rows of ``channels``.

    ``covariances`` optionally holds the generating covariance of every
    sample, shape ``(M, N, N)``; genie baselines need it. Covariances are
    symmetrized on construction so only their upper triangle carries data.
    """

    channels: np.ndarray
    covariances: np.ndarray | None = None
    normalized: bool = False
    n_antennas: int = field(init=False)

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.complex128)
        if channels.ndim != 2:
            raise DimensionMismatch(f"channels must be (M, N), got {channels.shape}")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "n_antennas", channels.shape[1])
        if self.covariances is not None:
            covs = hermitize(self.covariances)
            m, n = channels.shape
            if covs.shape != (m, n, n):
                raise DimensionMismatch(f"covariances shape {covs.shape} != ({m}, {n}, {n})")
            object.__setattr__(self, "covariances", covs)

    @classmethod
    def empty(cls, n_antennas: int, with_covariances: bool = False) -> ChannelDataset:
        covs = np.zeros((0, n_antennas, n_antennas), np.complex128) if with_covariances else None
        return cls(np.zeros((0, n_antennas), np.complex128), covs)

    def __len__(self) -> int:
        return self.channels.shape[0]

    def __getitem__(self, idx: int) -> ChannelSample:
        cov = None if self.covariances is None else self.covariances[idx]
        return ChannelSample(self.channels[idx], cov)

    @property
    def n_samples(self) -> int:
        return len(self)

    @property
    def has_covariances(self) -> bool:
        return self.covariances is not None

    @property
    def samples(self) -> list[ChannelSample]:
        return [self[i] for i in range(len(self))]

    def mean_squared_norm(self) -> float:
        return float(np.mean(np.sum(np.abs(self.channels) ** 2, axis=1)))

    def subset(self, indices) -> ChannelDataset:
        indices = np.asarray(indices, dtype=np.intp)
        covs = None if self.covariances is None else self.covariances[indices]
        return ChannelDataset(self.channels[indices], covs, self.normalized)


def _upper_indices(n: int):
    return np.triu_indices(n)


def _pack_upper(covs: np.ndarray) -> np.ndarray:
    iu = _upper_indices(covs.shape[-1])
    return covs[..., iu[0], iu[1]]


def _unpack_upper(packed: np.ndarray, n: int) -> np.ndarray:
    iu = _upper_indices(n)
    out = np.zeros(packed.shape[:-1] + (n, n), dtype=np.complex128)
    out[..., iu[0], iu[1]] = packed
    lower = np.tril_indices(n, -1)
    out[..., lower[0], lower[1]] = np.conj(out[..., lower[1], lower[0]])
    return out


def _is_normalized(channels: np.ndarray, rtol: float = 1e-9) -> bool:
    m, n = channels.shape
    if m == 0:
        return False
    msn = np.mean(np.sum(np.abs(channels) ** 2, axis=1))
    return bool(abs(msn - n) <= rtol * n)


def write_dataset(ds: ChannelDataset, path) -> None:
    """Write ``ds`` in the CHDS binary format."""
    m, n = ds.channels.shape
    has_cov = ds.covariances is not None
    records = ds.channels.astype(_C128_LE, copy=False)
    if has_cov:
        records = np.concatenate([records, _pack_upper(ds.covariances).astype(_C128_LE)], axis=1)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, m, int(has_cov)))
        fh.write(np.ascontiguousarray(records).tobytes())


def read_dataset(path) -> ChannelDataset:
    """Read a CHDS file written by :func:`write_dataset`.

    The ``normalized`` flag is not stored on disk; it is set when the mean
    squared norm of the loaded channels equals N to 1e-9 relative.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFile(f"{path}: file shorter than header")
    magic, version, n, m, has_cov = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    if has_cov not in (0, 1) or n == 0:
        raise CorruptFile(f"{path}: invalid header")
    width = n + (n * (n + 1) // 2 if has_cov else 0)
    expected = _HEADER.size + m * width * _C128_LE.itemsize
    if len(data) != expected:
        raise CorruptFile(f"{path}: expected {expected} bytes, found {len(data)}")
    records = np.frombuffer(data, dtype=_C128_LE, offset=_HEADER.size).reshape(m, width)
    channels = records[:, :n].astype(np.complex128)
    covs = _unpack_upper(records[:, n:].astype(np.complex128), n) if has_cov else None
    return ChannelDataset(channels, covs, _is_normalized(channels))


def import_csv(path, n_antennas: int) -> ChannelDataset:
    """Load one sample per line: ``2N`` comma-separated reals ``re, im, re, im, ...``."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2 * n_antennas:
                raise ParseError(f"expected {2 * n_antennas} fields, found {len(row)}", lineno)
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("non-finite value", lineno)
            rows.append(values)
    if not rows:
        return ChannelDataset.empty(n_antennas)
    arr = np.asarray(rows, dtype=np.float64)
    channels = np.empty((arr.shape[0], n_antennas), np.complex128)
    channels.real = arr[:, 0::2]
    channels.imag = arr[:, 1::2]
    return ChannelDataset(channels)


def normalization_factor(ds: ChannelDataset) -> float:
    """The scale ``c = sqrt(N M / sum ||h_m||^2)`` giving mean squared norm N."""
    m, n = ds.channels.shape
    total = float(np.sum(np.abs(ds.channels) ** 2))
    if m == 0 or total == 0.0:
        raise DegenerateDataset("cannot normalize a dataset whose samples are all zero")
    return float(np.sqrt(n * m / total))


def normalize_dataset(ds: ChannelDataset) -> ChannelDataset:
    """Scale all samples so that the empirical mean of ``||h||^2`` equals N.

    Covariances, when present, are scaled by the squared factor.
    """
    c = normalization_factor(ds)
    covs = None if ds.covariances is None else ds.covariances * (c * c)
    return replace(ds, channels=ds.channels * c, covariances=covs, normalized=True)


def split_dataset(ds: ChannelDataset, train_fraction: float, rng: np.random.Generator):
    """Random disjoint partition into ``(train, test)``.

    The train part has ``round(train_fraction * M)`` samples.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    m = len(ds)
    n_train = int(round(train_fraction * m))
    perm = rng.permutation(m)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))
