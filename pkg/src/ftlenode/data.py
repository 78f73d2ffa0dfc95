"""Two-moons datasets: generation, stratified splitting, CSV round trip.

The parametrization is fixed: with phi ~ Uniform[0, pi), the upper moon is
(cos phi, sin phi) and the lower moon is (1 - cos phi, 0.5 - sin phi);
isotropic Gaussian jitter of the requested standard deviation is added and
(0.5, 0.25) subtracted so the figure is centered. The upper moon is class
"blue" with regression target (0, 1); the lower moon is "orange" with target
(0, -1).

Draw order (one Philox stream keyed by the seed, see _rng): first 2*(n//2)
uniforms for phi (upper moon first), then a (2*(n//2), 2) block of uniforms
turned into jitter by inverse CDF, row i jittering point i (x then y).
Points are stored upper block first.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import generator, standard_normals
from .errors import InvalidInputError

CLASS_NAMES = ("blue", "orange")
LABELS = np.array([[0.0, 1.0], [0.0, -1.0]])  # row per class id
CENTER = np.array([0.5, 0.25])


class OddSampleCountWarning(UserWarning):
    """Requested an odd n; counts are rounded down to keep classes balanced."""


@dataclass
class Dataset:
    points: np.ndarray  # (n, 2)
    labels: np.ndarray  # (n, 2), regression targets
    class_ids: np.ndarray  # (n,), 0 = blue, 1 = orange

    def __post_init__(self):
        n = self.points.shape[0]
        if self.points.shape != (n, 2) or self.labels.shape != (n, 2):
            raise InvalidInputError("points and labels must be (n, 2)")
        if self.class_ids.shape != (n,):
            raise InvalidInputError("class_ids must be (n,)")

    def __len__(self) -> int:
        return self.points.shape[0]


def make_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Balanced two-moons sample of (up to) n points.

    Odd n is rounded down to 2*(n//2) with an OddSampleCountWarning.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 points")
    if not (np.isfinite(noise) and noise >= 0.0):
        raise InvalidInputError("noise must be non-negative")
    n_per = n // 2
    if 2 * n_per != n:
        warnings.warn(
            f"n={n} is odd; generating {2 * n_per} points", OddSampleCountWarning
        )
    rng = generator(seed)
    phi = np.pi * rng.random(2 * n_per)
    jitter = standard_normals(rng, (2 * n_per, 2))
    upper = np.column_stack([np.cos(phi[:n_per]), np.sin(phi[:n_per])])
    lower = np.column_stack(
        [1.0 - np.cos(phi[n_per:]), 0.5 - np.sin(phi[n_per:])]
    )
    pts = np.vstack([upper, lower]) + noise * jitter - CENTER
    ids = np.repeat(np.array([0, 1], dtype=np.int64), n_per)
    return Dataset(points=pts, labels=LABELS[ids], class_ids=ids)


def split(ds: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic class-stratified split into (train, test).

    Per class, indices are permuted with a Philox stream keyed by the seed
    (class 0 permutation drawn first) and round(test_fraction * n_c) of them
    go to the test side; both sides keep ascending original order.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidInputError("test_fraction must be in [0, 1)")
    rng = generator(seed)
    test_idx = []
    train_idx = []
    for cid in range(len(CLASS_NAMES)):
        idx = np.nonzero(ds.class_ids == cid)[0]
        perm = rng.permutation(idx.size)
        n_test = int(round(test_fraction * idx.size))
        chosen = idx[perm[:n_test]]
        test_idx.append(np.sort(chosen))
        train_idx.append(np.sort(idx[perm[n_test:]]))
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    make = lambda sel: Dataset(
        points=ds.points[sel].copy(),
        labels=ds.labels[sel].copy(),
        class_ids=ds.class_ids[sel].copy(),
    )
    return make(tr), make(te)


def save_csv(ds: Dataset, path) -> None:
    """Write x1,x2,class rows with class as blue/orange."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "class"])
        for p, cid in zip(ds.points, ds.class_ids):
            writer.writerow([f"{p[0]:.17g}", f"{p[1]:.17g}", CLASS_NAMES[cid]])


def load_csv(path) -> Dataset:
    points = []
    ids = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x1", "x2", "class"]:
            raise InvalidInputError(f"unexpected dataset header {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3 or row[2] not in CLASS_NAMES:
                raise InvalidInputError(f"bad dataset row {row}")
            points.append((float(row[0]), float(row[1])))
            ids.append(CLASS_NAMES.index(row[2]))
    if not points:
        raise InvalidInputError("dataset file has no rows")
    pts = np.asarray(points, dtype=np.float64)
    cid = np.asarray(ids, dtype=np.int64)
    return Dataset(points=pts, labels=LABELS[cid], class_ids=cid)
