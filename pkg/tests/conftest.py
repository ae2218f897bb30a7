import numpy as np
import pytest
import torch

from synth7t.nets import DiscriminatorConfig, ModelConfig
from synth7t.volumes import SubjectMetadata, Volume

torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" in nodeid and getattr(report, "when", "call") == "call":
                name = nodeid.split("::")[-1]
                lines.append(f"ACCEPTANCE {name}: {'PASS' if status == 'passed' else 'FAIL'}")
    if lines:
        terminalreporter.write_line("")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)


def make_phantom(shape=(64, 64, 16), seed=0, scale=1000.0):
    """Synthetic head-like volume: ellipsoidal brain mask, smooth intensity
    structure plus mild texture, background zero. Intensities in arbitrary
    scanner-like units (0..scale)."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = shape
    x, y, z = np.meshgrid(
        np.linspace(-1, 1, nx), np.linspace(-1, 1, ny), np.linspace(-1, 1, nz),
        indexing="ij",
    )
    r2 = (x / 0.7) ** 2 + (y / 0.6) ** 2 + (z / 0.8) ** 2
    mask = r2 < 1.0
    tissue = 0.55 + 0.35 * np.cos(3 * x) * np.sin(2 * y) + 0.1 * np.cos(5 * z)
    tissue += 0.05 * rng.standard_normal(shape)
    data = np.where(mask, np.clip(tissue, 0.05, 1.2) * scale, 0.0)
    return Volume(data=data.astype(np.float64), spacing=(1.0, 1.0, 1.0), mask=mask)


def make_phantom_pair(shape=(64, 64, 16), seed=0):
    """Aligned (source, target) pair differing by smooth detail, both with
    the same mask."""
    source = make_phantom(shape, seed=seed)
    rng = np.random.default_rng(seed + 1)
    detail = 0.08 * rng.standard_normal(shape)
    target_data = np.where(source.mask, source.data * (1.0 + detail), 0.0)
    target = Volume(data=target_data, spacing=source.spacing, mask=source.mask.copy())
    return source, target


@pytest.fixture
def phantom():
    return make_phantom()


@pytest.fixture
def phantom_pair():
    return make_phantom_pair()


@pytest.fixture
def meta():
    return SubjectMetadata(subject_id="s01", age=64.0, gender="F", diagnosis="unimpaired")


@pytest.fixture
def toy_model_config():
    return ModelConfig(c_init=8, channel_mult=(1, 2), n_groups=4, n_res=1,
                       ca_stages=(2,), n_input_slices=3, context_len=4, context_dim=8)


@pytest.fixture
def toy_disc_config():
    return DiscriminatorConfig(n_layers=2, c1=8)
