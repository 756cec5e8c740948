"""Dataset IO, normalisation, windowing, synthetic benchmarks and scattering analysis."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial.distance import pdist

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
ANOMALY_TYPES = ("point", "contextual", "shapelet")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class TimeSeriesDataset:
    train: np.ndarray  # L_train x N, normalised
    test: np.ndarray  # L_test x N, normalised
    test_labels: np.ndarray  # L_test, {0, 1}
    channel_names: list[str]
    mean: np.ndarray
    std: np.ndarray

    @property
    def num_channels(self) -> int:
        return self.train.shape[1]

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


def fit_normalizer(train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std; near-constant channels get std 1."""
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return mean, std


def make_dataset(train, test, labels, channel_names: Sequence[str] | None = None) -> TimeSeriesDataset:
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if train.ndim != 2 or test.ndim != 2 or train.shape[1] != test.shape[1]:
        raise DataError(f"train {train.shape} and test {test.shape} must be 2-D with equal channel counts")
    if labels.shape != (test.shape[0],):
        raise DataError(f"{labels.shape[0]} labels for {test.shape[0]} test rows")
    if np.any((labels != 0) & (labels != 1)):
        raise DataError("labels must be 0 or 1")
    names = list(channel_names) if channel_names is not None else [f"c{i}" for i in range(train.shape[1])]
    mean, std = fit_normalizer(train)
    return TimeSeriesDataset((train - mean) / std, (test - mean) / std, labels, names, mean, std)


# -- CSV ------------------------------------------------------------------
def write_matrix_csv(path, values: np.ndarray, channel_names: Sequence[str]) -> None:
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(channel_names) + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {r} has {len(row)} fields, header has {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                col = next(c for c, v in enumerate(row) if not _is_float(v))
                raise DataError(f"{path}: non-numeric value {row[col]!r} at line {r}, column {col + 1}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return [h.strip() for h in header], np.asarray(rows, dtype=np.float64)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def write_labels_csv(path, labels: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in labels)


def read_labels_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    out = []
    for r, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line not in ("0", "1"):
            raise DataError(f"{path}: line {r} holds {line!r}, expected 0 or 1")
        out.append(int(line))
    return np.asarray(out, dtype=np.int64)


def load_csv(train_path, test_path, labels_path) -> TimeSeriesDataset:
    names, train = read_matrix_csv(train_path)
    test_names, test = read_matrix_csv(test_path)
    if names != test_names:
        raise DataError(f"header mismatch between {train_path} and {test_path}")
    labels = read_labels_csv(labels_path)
    if len(labels) != len(test):
        raise DataError(f"{labels_path}: {len(labels)} labels for {len(test)} test rows")
    return make_dataset(train, test, labels, names)


def save_dataset(ds: TimeSeriesDataset, out_dir, raw: bool = True) -> dict[str, Path]:
    """Write train.csv / test.csv / labels.csv (raw scale unless ``raw`` is False)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conv = ds.denormalize if raw else (lambda x: x)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "labels": out / "labels.csv"}
    write_matrix_csv(paths["train"], conv(ds.train), ds.channel_names)
    write_matrix_csv(paths["test"], conv(ds.test), ds.channel_names)
    write_labels_csv(paths["labels"], ds.test_labels)
    return paths


# -- windowing -------------------------------------------------------------
@dataclass
class WindowBatch:
    values: np.ndarray  # B x T x N
    starts: np.ndarray  # B
    labels: np.ndarray | None = None  # B x T

    def __len__(self) -> int:
        return len(self.values)

    @property
    def covered(self) -> int:
        """Length of the series prefix covered by non-overlapping windows."""
        return int(self.starts[-1] + self.values.shape[1]) if len(self) else 0

    def take(self, idx) -> "WindowBatch":
        lab = None if self.labels is None else self.labels[idx]
        return WindowBatch(self.values[idx], self.starts[idx], lab)


def windows(data: np.ndarray, T: int, stride: int | None = None, labels: np.ndarray | None = None) -> WindowBatch:
    """Slice ``floor((L - T) / stride) + 1`` windows; stride defaults to T."""
    data = np.asarray(data, dtype=np.float64)
    L = data.shape[0]
    stride = T if stride is None else stride
    if T > L:
        raise DataError(f"window length {T} exceeds series length {L}")
    if stride < 1 or T < 1:
        raise DataError("window length and stride must be positive")
    starts = np.arange(0, L - T + 1, stride)
    idx = starts[:, None] + np.arange(T)[None, :]
    tail = L - (starts[-1] + T)
    if tail:
        log.info("dropping %d trailing points not covered by a full window", tail)
    lab = None if labels is None else np.asarray(labels)[idx]
    return WindowBatch(data[idx], starts, lab)


def iter_batches(wb: WindowBatch, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[WindowBatch]:
    order = np.arange(len(wb)) if rng is None else rng.permutation(len(wb))
    for i in range(0, len(order), batch_size):
        yield wb.take(order[i : i + batch_size])


# -- synthetic benchmark ---------------------------------------------------
@dataclass
class SyntheticSpec:
    train_length: int = 8000
    test_length: int = 4000
    channels: int = 8
    num_sources: int = 3
    period_range: tuple[float, float] = (20.0, 80.0)
    noise_std: float = 0.05
    anomaly_types: tuple[str, ...] = ANOMALY_TYPES
    anomaly_rate: float = 0.05
    seed: int = 0
    min_gap: int = 10
    segment_range: tuple[int, int] = (10, 30)
    point_sigma: float = 6.0
    level_sigma: float = 3.0
    shapelet_speedup: float = 3.0

    def __post_init__(self):
        self.anomaly_types = tuple(self.anomaly_types)
        bad = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if bad or not self.anomaly_types:
            raise ValueError(f"anomaly types must be a non-empty subset of {ANOMALY_TYPES}")
        if not 0.0 <= self.anomaly_rate < 0.5:
            raise ValueError("anomaly_rate must lie in [0, 0.5)")


@dataclass
class InjectedAnomaly:
    kind: str
    start: int
    length: int
    channels: list[int] = field(default_factory=list)


def _base_signal(spec: SyntheticSpec, rng: np.random.Generator):
    lo, hi = spec.period_range
    periods = rng.uniform(lo, hi, size=(spec.num_sources, 2))
    phases = rng.uniform(0, 2 * np.pi, size=(spec.num_sources, 2))
    weights = np.array([1.0, 0.5])
    mixing = rng.standard_normal((spec.channels, spec.num_sources))
    offsets = rng.standard_normal(spec.channels)

    def signal(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)[:, None, None]
        src = np.sum(weights * np.sin(2 * np.pi * t / periods + phases), axis=-1)  # len x sources
        return src @ mixing.T + offsets

    return signal


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[TimeSeriesDataset, list[InjectedAnomaly]]:
    """Mixed-sinusoid series with point / contextual / shapelet anomalies in the test part.

    Returns the normalised dataset and the list of injected events; labels mark
    exactly the injected spans.
    """
    rng = np.random.default_rng(spec.seed)
    signal = _base_signal(spec, rng)
    total = spec.train_length + spec.test_length
    t_all = np.arange(total)
    clean = signal(t_all) + spec.noise_std * rng.standard_normal((total, spec.channels))
    train = clean[: spec.train_length]
    test = clean[spec.train_length :].copy()
    sigma = train.std(axis=0)
    labels = np.zeros(spec.test_length, dtype=np.int64)
    events: list[InjectedAnomaly] = []

    target = int(round(spec.anomaly_rate * spec.test_length))
    occupied = np.zeros(spec.test_length, dtype=bool)
    lo, hi = spec.segment_range
    attempts = 0
    while labels.sum() < target and attempts < 10000:
        attempts += 1
        kind = spec.anomaly_types[rng.integers(len(spec.anomaly_types))]
        remaining = target - int(labels.sum())
        if kind == "point":
            length = 1
        else:
            length = int(rng.integers(lo, hi + 1))
            if remaining < lo:
                length = remaining
        length = min(length, remaining)
        start = int(rng.integers(spec.min_gap, spec.test_length - length - spec.min_gap))
        a, b = max(start - spec.min_gap, 0), min(start + length + spec.min_gap, spec.test_length)
        if occupied[a:b].any():
            continue
        n_ch = int(rng.integers(1, max(2, spec.channels // 2) + 1))
        chans = sorted(rng.choice(spec.channels, size=n_ch, replace=False).tolist())
        span = slice(start, start + length)
        if kind == "point":
            sign = rng.choice([-1.0, 1.0], size=n_ch)
            test[span, chans] += sign * spec.point_sigma * sigma[chans]
        elif kind == "contextual":
            sign = rng.choice([-1.0, 1.0], size=n_ch)
            test[span, chans] += sign * spec.level_sigma * sigma[chans]
        else:
            t0 = spec.train_length + start
            fast = t0 + spec.shapelet_speedup * np.arange(length)
            test[span, chans] = signal(fast)[:, chans] + spec.noise_std * rng.standard_normal((length, n_ch))
        occupied[span] = True
        labels[span] = 1
        events.append(InjectedAnomaly(kind, start, length, chans))
    events.sort(key=lambda e: e.start)
    names = [f"c{i}" for i in range(spec.channels)]
    return make_dataset(train, test, labels, names), events


def inject_noise(data: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    data = np.asarray(data, dtype=np.float64)
    if sigma == 0:
        return data.copy()
    rng = np.random.default_rng(seed)
    return data + sigma * rng.standard_normal(data.shape)


# -- scattering ------------------------------------------------------------
@dataclass
class ScatterReport:
    score_normal: float
    score_anomalous: float
    separation_ratio: float
    noise_sigma: float
    pairwise_normal: float
    pairwise_anomalous: float


def _center_spread(x: np.ndarray) -> float:
    return float(np.mean(np.linalg.norm(x - x.mean(axis=0), axis=1)))


def _mean_pairwise(x: np.ndarray, max_points: int, rng: np.random.Generator) -> float:
    if len(x) < 2:
        return 0.0
    if len(x) > max_points:
        x = x[rng.choice(len(x), size=max_points, replace=False)]
    return float(pdist(x).mean())


def scattering_analysis(
    embeddings: np.ndarray, labels: np.ndarray, sigma: float = 0.0, max_pairwise: int = 2000, seed: int = 0
) -> ScatterReport:
    """Mean distance to the class mean per class and their anomalous/normal ratio.

    Mean pairwise distances per class are reported alongside (subsampled to
    ``max_pairwise`` points per class).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    normal, anomalous = emb[labels == 0], emb[labels == 1]
    if len(normal) == 0 or len(anomalous) == 0:
        raise DataError("scattering analysis needs both normal and anomalous samples")
    s_n, s_a = _center_spread(normal), _center_spread(anomalous)
    rng = np.random.default_rng(seed)
    return ScatterReport(
        score_normal=s_n,
        score_anomalous=s_a,
        separation_ratio=s_a / max(s_n, 1e-12),
        noise_sigma=float(sigma),
        pairwise_normal=_mean_pairwise(normal, max_pairwise, rng),
        pairwise_anomalous=_mean_pairwise(anomalous, max_pairwise, rng),
    )


# -- label streams for the metric-sensitivity simulation -----------------------
def bursty_labels(length: int, seed: int = 0, gap: tuple[int, int] = (1, 2)) -> np.ndarray:
    """Isolated single-step anomalies separated by 1-2 normal steps (about 40% positive)."""
    rng = np.random.default_rng(seed)
    y = np.zeros(length, dtype=np.int64)
    pos = int(rng.integers(gap[0], gap[1] + 1))
    while pos < length:
        y[pos] = 1
        pos += 1 + int(rng.integers(gap[0], gap[1] + 1))
    return y


def long_segment_labels(
    length: int, seed: int = 0, seg: tuple[int, int] = (50, 200), gap: tuple[int, int] = (100, 300)
) -> np.ndarray:
    """Sparse long anomaly segments."""
    rng = np.random.default_rng(seed)
    y = np.zeros(length, dtype=np.int64)
    pos = int(rng.integers(*gap))
    while pos < length:
        n = int(rng.integers(*seg))
        y[pos : pos + n] = 1
        pos += n + int(rng.integers(*gap))
    return y
