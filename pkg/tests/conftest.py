"""Shared test fixtures and helpers."""

from __future__ import annotations

import sys

import numpy as np
import pytest

from sigsparse import synth_generate


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdict lines after the run, outside capture."""
    for name in ("tests.test_acceptance", "test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "VERDICT_LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.VERDICT_LINES:
                terminalreporter.write_line(line)
            break


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """A small deterministic spline-stroke dataset shared across tests."""
    root = tmp_path_factory.mktemp("synthdata")
    return synth_generate(root, n_writers=4, n_genuine=7, n_forgery=4, seed=11)


@pytest.fixture(scope="session")
def sample_signature(synth_dataset):
    """One grayscale signature image as a uint8 array."""
    from sigsparse import load_gray

    first = synth_dataset.writers[synth_dataset.writer_ids[0]].genuine[0]
    return load_gray(first)


def random_mask(rng: np.random.Generator, max_side: int = 28) -> np.ndarray:
    shape = (int(rng.integers(4, max_side)), int(rng.integers(4, max_side)))
    return rng.random(shape) < rng.uniform(0.15, 0.7)


def random_dictionary_atoms(
    rng: np.random.Generator, n: int = 25, k: int = 60
) -> np.ndarray:
    atoms = rng.normal(size=(n, k))
    return atoms / np.linalg.norm(atoms, axis=0)
