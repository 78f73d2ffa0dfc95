"""Shared fixtures for the test suite.

Trained models are expensive on this problem size, so session fixtures cache
them on disk under tests/.cache keyed by a digest of the numerical source
files. Editing any of those files invalidates the cache and the next run
retrains; editing tests or the analysis/CLI layers does not.
"""

import hashlib
from pathlib import Path

import pytest

from ftlenode import checkpoint, presets, training

TESTS_DIR = Path(__file__).resolve().parent
CACHE_DIR = TESTS_DIR / ".cache"

_NUMERIC_SOURCES = (
    "_rng.py",
    "data.py",
    "linalg.py",
    "vecfield.py",
    "integrator.py",
    "training.py",
    "presets.py",
    "_backend.py",
    "_kernels_py.py",
    "_kernels.pyx",
    "checkpoint.py",
)


def _digest() -> str:
    src = TESTS_DIR.parent / "src" / "ftlenode"
    h = hashlib.sha256()
    for name in _NUMERIC_SOURCES:
        h.update(name.encode())
        h.update((src / name).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def moons4000():
    return presets.moons_split()


def _trained(tag: str, arch: str, regularized: bool = False, **overrides):
    CACHE_DIR.mkdir(exist_ok=True)
    stem = f"{tag}-{_digest()}"
    ckpt_path = CACHE_DIR / (stem + ".ckpt")
    log_path = CACHE_DIR / (stem + ".csv")
    if ckpt_path.exists() and log_path.exists():
        return checkpoint.load_checkpoint(ckpt_path), training.load_train_log(log_path)
    train_ds, test_ds = presets.moons_split()
    tcfg = presets.train_config(arch, regularized=regularized, **overrides)
    model = presets.build_model(arch, seed=tcfg.seed)
    log = training.train(model, train_ds, tcfg, presets.flow_config(), test_ds=test_ds)
    checkpoint.save_checkpoint(model, ckpt_path)
    log.to_csv(log_path)
    return model, log


@pytest.fixture(scope="session")
def ex1_base():
    return _trained("ex1-base", "ex1")


@pytest.fixture(scope="session")
def ex2_base():
    return _trained("ex2-base", "ex2")


@pytest.fixture(scope="session")
def ex1_reg():
    return _trained("ex1-reg", "ex1", regularized=True)


@pytest.fixture(scope="session")
def ex2_reg():
    return _trained("ex2-reg", "ex2", regularized=True)


# suppression over the whole horizon, compared against the base fixtures;
# epochs pinned to the baseline count so only the penalty term differs
@pytest.fixture(scope="session")
def ex1_null():
    epochs = presets.train_defaults("ex1")["epochs"]
    return _trained("ex1-null-reg", "ex1", regularized=True, t1=10.0,
                    epochs=epochs)


@pytest.fixture(scope="session")
def ex2_null():
    epochs = presets.train_defaults("ex2")["epochs"]
    return _trained("ex2-null-reg", "ex2", regularized=True, t1=10.0,
                    epochs=epochs)
