import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("quick", deadline=None, max_examples=10)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """One cloud per class, 256 points, two 64x64 views each."""
    from pointvst.data import build_pretext_set, generate_dataset
    from pointvst.rendering import CameraIntrinsics

    root = tmp_path_factory.mktemp("tiny")
    manifest = generate_dataset(root / "data", seed=3, per_class=1, n_points=256)
    ds = build_pretext_set(manifest, root / "cache", views_per_cloud=2, intrinsics=CameraIntrinsics(height=64, width=64), seed=3)
    return root, manifest, ds
