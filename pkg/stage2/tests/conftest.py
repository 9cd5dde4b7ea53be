"""Shared fixtures: desk-scale datasets produced through the physics
package's CLI (the only interface this package consumes)."""

import subprocess
import sys

import pytest

DESK_ARGS = [
    "--mode", "partial", "--nx", "64", "--ny", "64", "--spacing", "7e-4",
    "--head-fraction", "0.5", "--boundary-cells", "10",
    "--dt", "1e-7", "--nt", "750", "--sweeps", "8", "--elements", "11",
]


def generate_dataset(outdir, n_slices, seed=20, extra=()):
    cmd = [
        sys.executable, "-m", "headwave.cli", "dataset",
        "--slices", str(n_slices), "--seed", str(seed), "--out", str(outdir),
    ] + DESK_ARGS + list(extra)
    subprocess.run(cmd, check=True, capture_output=True, text=True)
    return str(outdir)


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """Two desk slices: enough for data-path and training-loop tests."""
    return generate_dataset(tmp_path_factory.mktemp("desk"), 2)


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """Eight desk slices for the overfit acceptance run."""
    return generate_dataset(tmp_path_factory.mktemp("overfit"), 8)
