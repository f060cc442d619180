import numpy as np
import pytest

from graspsynth import assets as A
from graspsynth import pipeline as P


def toy_config(root, grasps=("grasp_01", "grasp_08"), viewpoints=(12, 47), distances=(0.5, 0.8),
               n_backgrounds=2, gloves=1, size=(64, 64), seed=0):
    """Small config over bundled grasps; grasp_01 -> train, grasp_08 -> val, grasp_10 -> test."""
    bgs = P.write_demo_backgrounds(root / "backgrounds", size)[:n_backgrounds]
    files = [A.data_path("grasps", f"{g}.json") for g in grasps]
    return P.GenerationConfig(
        grasp_files=tuple(str(f) for f in files),
        backgrounds=tuple(str(b) for b in bgs),
        split={g: P.DEFAULT_SPLIT[g] for g in grasps},
        distances=distances,
        glove_colors=P.GLOVE_COLORS[:gloves],
        image_size=size,
        viewpoint_indices=viewpoints,
        global_seed=seed,
    )


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """16-frame dataset rendered once per session: (config, directory, manifest)."""
    root = tmp_path_factory.mktemp("toy")
    cfg = toy_config(root)
    manifest = P.generate_dataset(cfg, jobs=1, out_dir=root / "dataset")
    return cfg, root / "dataset", manifest


@pytest.fixture(scope="session")
def rig():
    return A.default_rig()


@pytest.fixture(scope="session")
def probe():
    return A.default_probe()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion outcome; printed in the terminal summary."""

    def record(number, passed, detail, status=None):
        status = status or ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status} - {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
