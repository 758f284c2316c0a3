"""Linear state-space model, bimodal measurement noise, and dataset generation.

The scoped scenario is a 1D constant-velocity model observed through a noisy
position measurement, where the measurement noise is a two-mode Gaussian
mixture selected per step by a Bernoulli indicator. Everything is seeded and
reproducible: each simulated series owns an independent RNG stream derived
from (master_seed, split, index).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatVersionMismatch, InvalidParameter, ParseError
from .linalg import cholesky_psd, symmetrize

DATASET_FORMAT_VERSION = 1

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class LinearStateSpaceModel:
    """Time-invariant linear dynamics x' = F x + v, z = H x + w."""

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    dt: float

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class BimodalNoiseSpec:
    """Mixture p * N(0, sigma1_sq) + (1 - p) * N(0, sigma2_sq)."""

    p: float
    sigma1_sq: float
    sigma2_sq: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidParameter(f"mixture probability p={self.p} outside [0, 1]")
        if self.sigma1_sq < 0.0 or self.sigma2_sq < 0.0:
            raise InvalidParameter("mixture variances must be non-negative")

    @property
    def sigma_w_sq(self) -> float:
        """Expected measurement-noise variance of the mixture."""
        return self.p * self.sigma1_sq + (1.0 - self.p) * self.sigma2_sq

    def variance_for_mode(self, mode):
        """Per-step variance given the Bernoulli indicator (1 -> sigma1_sq)."""
        return np.where(mode, self.sigma1_sq, self.sigma2_sq)


@dataclass(frozen=True)
class Trajectory:
    """One simulated series: latent states, measurements and noise modes."""

    states: np.ndarray       # (T, m)
    measurements: np.ndarray  # (T, n)
    modes: np.ndarray        # (T,) int, 1 -> high-variance mixture branch
    series_seed: int

    @property
    def T(self) -> int:
        return self.states.shape[0]


@dataclass
class DatasetConfig:
    model: LinearStateSpaceModel
    noise: BimodalNoiseSpec
    init_mean: np.ndarray
    init_cov: np.ndarray
    T: int
    n_train: int
    n_val: int
    n_test: int
    master_seed: int


@dataclass
class Dataset:
    model: LinearStateSpaceModel
    noise: BimodalNoiseSpec
    init_mean: np.ndarray
    init_cov: np.ndarray
    master_seed: int
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return getattr(self, name)


def make_constant_velocity_model(dt: float, sigma_v_sq: float) -> LinearStateSpaceModel:
    """Constant-velocity model with white acceleration noise on the velocity.

    F = [[1, dt], [0, 1]], H = [1, 0], Q = diag(0, sigma_v_sq).
    """
    if dt <= 0.0:
        raise InvalidParameter(f"time step dt={dt} must be positive")
    if sigma_v_sq < 0.0:
        raise InvalidParameter("sigma_v_sq must be non-negative")
    F = np.array([[1.0, dt], [0.0, 1.0]])
    H = np.array([[1.0, 0.0]])
    Q = np.array([[0.0, 0.0], [0.0, sigma_v_sq]])
    return LinearStateSpaceModel(F=F, H=H, Q=Q, dt=dt)


def noise_from_heterogeneity(nu_db: float, sigma_v_sq: float, p: float,
                             sigma1_ratio: float) -> BimodalNoiseSpec:
    """Build the mixture spec from the measurement/process variance ratio.

    nu_db fixes sigma_w_sq = sigma_v_sq * 10^(nu_db / 10); sigma1_sq is
    sigma1_ratio * sigma_w_sq and sigma2_sq follows from the expected-variance
    identity sigma_w_sq = p * sigma1_sq + (1 - p) * sigma2_sq.
    """
    if not 0.0 < p < 1.0:
        raise InvalidParameter(f"p={p} must lie strictly inside (0, 1)")
    sigma_w_sq = sigma_v_sq * 10.0 ** (nu_db / 10.0)
    sigma1_sq = sigma1_ratio * sigma_w_sq
    sigma2_sq = (sigma_w_sq - p * sigma1_sq) / (1.0 - p)
    if sigma2_sq <= 0.0:
        raise InvalidParameter(
            f"sigma1_ratio={sigma1_ratio} with p={p} leaves sigma2_sq={sigma2_sq} <= 0")
    return BimodalNoiseSpec(p=p, sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq)


def series_rng(master_seed: int, split: str, index: int) -> np.random.Generator:
    """Independent RNG stream for one series.

    The stream is seeded with SeedSequence([master_seed, split_code, index]),
    numpy's documented entropy-mixing construction, so series can be generated
    in any order (or in parallel) without affecting each other.
    """
    code = _SPLIT_CODES[split]
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([master_seed, code, index])))


def sample_trajectory(model: LinearStateSpaceModel, noise: BimodalNoiseSpec,
                      T: int, init_mean: np.ndarray, init_cov: np.ndarray,
                      rng: np.random.Generator,
                      series_seed: int = 0) -> Trajectory:
    """Simulate one series of length T.

    Draw order from the stream is fixed: initial-state normals, process-noise
    normals (T, m), mode uniforms (T), measurement normals (T, n). Keeping
    the order stable is what makes stored datasets reproducible.
    """
    if T < 1:
        raise InvalidParameter("T must be >= 1")
    m, n = model.m, model.n
    init_cov = symmetrize(np.asarray(init_cov, dtype=float))
    L0 = cholesky_psd(init_cov)
    Lq = cholesky_psd(symmetrize(model.Q))

    x0 = np.asarray(init_mean, dtype=float) + L0 @ rng.standard_normal(m)
    v = rng.standard_normal((T, m)) @ Lq.T
    modes = (rng.random(T) < noise.p).astype(np.int64)
    w = rng.standard_normal((T, n)) * np.sqrt(
        noise.variance_for_mode(modes))[:, None]

    states = np.empty((T, m))
    x = x0
    for t in range(T):
        x = model.F @ x + v[t]
        states[t] = x
    measurements = states @ model.H.T + w
    return Trajectory(states=states, measurements=measurements, modes=modes,
                      series_seed=series_seed)


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Generate all splits deterministically from the master seed."""
    dataset = Dataset(model=config.model, noise=config.noise,
                      init_mean=np.asarray(config.init_mean, dtype=float),
                      init_cov=np.asarray(config.init_cov, dtype=float),
                      master_seed=config.master_seed)
    sizes = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    for split, size in sizes.items():
        out = dataset.split(split)
        for i in range(size):
            rng = series_rng(config.master_seed, split, i)
            seed = config.master_seed * 1000003 + _SPLIT_CODES[split] * 1009 + i
            out.append(sample_trajectory(config.model, config.noise, config.T,
                                         config.init_mean, config.init_cov,
                                         rng, series_seed=seed))
    return dataset


# ---------------------------------------------------------------------------
# Disk format: a directory with a JSON `meta` file plus one CSV per split.
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ["series", "t", "x_pos", "x_vel", "z", "mode"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _split_csv_text(trajectories) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for i, traj in enumerate(trajectories):
        for t in range(traj.T):
            writer.writerow([i, t, _fmt(traj.states[t, 0]),
                             _fmt(traj.states[t, 1]),
                             _fmt(traj.measurements[t, 0]),
                             int(traj.modes[t])])
    return buf.getvalue()


def save_dataset(dataset: Dataset, path: str) -> str:
    """Write the dataset directory and return its fingerprint."""
    if dataset.model.m != 2 or dataset.model.n != 1:
        raise InvalidParameter("dataset CSV schema is fixed to m=2, n=1 models")
    os.makedirs(path, exist_ok=True)
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "dt": dataset.model.dt,
        "F": dataset.model.F.tolist(),
        "H": dataset.model.H.tolist(),
        "Q": dataset.model.Q.tolist(),
        "noise": {"p": dataset.noise.p,
                  "sigma1_sq": dataset.noise.sigma1_sq,
                  "sigma2_sq": dataset.noise.sigma2_sq},
        "init_mean": dataset.init_mean.tolist(),
        "init_cov": dataset.init_cov.tolist(),
        "master_seed": dataset.master_seed,
        "splits": {name: len(dataset.split(name))
                   for name in ("train", "val", "test")},
        "T": dataset.train[0].T if dataset.train else (
            dataset.test[0].T if dataset.test else
            (dataset.val[0].T if dataset.val else 0)),
        "series_seeds": {name: [t.series_seed for t in dataset.split(name)]
                         for name in ("train", "val", "test")},
    }
    with open(os.path.join(path, "meta"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    for split in ("train", "val", "test"):
        with open(os.path.join(path, f"{split}.csv"), "w") as fh:
            fh.write(_split_csv_text(dataset.split(split)))
    digest = dataset_fingerprint(path)
    with open(os.path.join(path, "fingerprint"), "w") as fh:
        fh.write(digest + "\n")
    return digest


def dataset_fingerprint(path: str) -> str:
    """SHA-256 digest over the meta file and all split CSVs."""
    digest = hashlib.sha256()
    for name in ("meta", "train.csv", "val.csv", "test.csv"):
        fpath = os.path.join(path, name)
        if os.path.exists(fpath):
            with open(fpath, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


def verify_dataset(path: str) -> str:
    """Recompute the directory fingerprint and compare to the stored one."""
    from .errors import FingerprintMismatch
    fpath = os.path.join(path, "fingerprint")
    try:
        with open(fpath) as fh:
            stored = fh.read().strip()
    except FileNotFoundError:
        raise FingerprintMismatch(f"no fingerprint file in {path}")
    actual = dataset_fingerprint(path)
    if actual != stored:
        raise FingerprintMismatch(
            f"dataset {path} does not match its stored fingerprint")
    return actual


def load_dataset(path: str) -> Dataset:
    """Load a dataset directory written by save_dataset."""
    meta_path = os.path.join(path, "meta")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"missing meta file in {path}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"unreadable meta file: {exc}")
    version = meta.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"dataset format {version!r}, expected {DATASET_FORMAT_VERSION}")

    model = LinearStateSpaceModel(F=np.array(meta["F"]), H=np.array(meta["H"]),
                                  Q=np.array(meta["Q"]), dt=float(meta["dt"]))
    noise = BimodalNoiseSpec(**meta["noise"])
    dataset = Dataset(model=model, noise=noise,
                      init_mean=np.array(meta["init_mean"]),
                      init_cov=np.array(meta["init_cov"]),
                      master_seed=int(meta["master_seed"]))
    T = int(meta["T"])
    for split in ("train", "val", "test"):
        expected = int(meta["splits"][split])
        seeds = meta.get("series_seeds", {}).get(split, [0] * expected)
        dataset.split(split).extend(
            _load_split_csv(os.path.join(path, f"{split}.csv"),
                            expected, T, seeds))
    return dataset


def _load_split_csv(fpath, n_series, T, seeds):
    try:
        with open(fpath) as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ParseError(f"missing split file {fpath}")
    if not rows or rows[0] != _CSV_COLUMNS:
        raise ParseError(f"bad header in {fpath}")
    if len(rows) - 1 != n_series * T:
        raise ParseError(
            f"{fpath}: expected {n_series * T} data rows, found {len(rows) - 1}")
    trajectories = []
    body = rows[1:]
    for i in range(n_series):
        chunk = body[i * T:(i + 1) * T]
        states = np.empty((T, 2))
        measurements = np.empty((T, 1))
        modes = np.empty(T, dtype=np.int64)
        for t, row in enumerate(chunk):
            if len(row) != 6 or int(row[0]) != i or int(row[1]) != t:
                raise ParseError(f"{fpath}: malformed row for series {i}, t {t}")
            states[t, 0], states[t, 1] = float(row[2]), float(row[3])
            measurements[t, 0] = float(row[4])
            modes[t] = int(row[5])
        trajectories.append(Trajectory(states=states, measurements=measurements,
                                       modes=modes, series_seed=int(seeds[i])))
    return trajectories
