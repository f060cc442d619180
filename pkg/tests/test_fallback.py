"""The numpy fallback path selected by the environment flag."""
import os
import subprocess
import sys


from graspsynth import _accel
from graspsynth import pipeline as P
from conftest import toy_config


def _run(code, disable):
    env = dict(os.environ)
    env.pop(_accel.ENV_FLAG, None)
    if disable:
        env[_accel.ENV_FLAG] = "1"
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=600)
    assert res.returncode == 0, res.stderr
    return res.stdout.strip()


def test_flag_disables_numba():
    code = "from graspsynth import _accel; print(_accel.USE_NUMBA)"
    assert _run(code, True) == "False"
    if _accel.HAVE_NUMBA:
        assert _run(code, False) == "True"


def test_numpy_path_renders_identical_frames(tmp_path):
    cfg = toy_config(tmp_path, grasps=("grasp_02",), viewpoints=(20, 60), distances=(0.5,), n_backgrounds=1,
                     size=(48, 48))
    cfg_path = tmp_path / "cfg.json"
    P.save_config(cfg, cfg_path)
    code = (
        "import sys\n"
        "from graspsynth import pipeline as P\n"
        "cfg = P.load_config(sys.argv[1])\n"
        "P.generate_dataset(cfg, jobs=1, out_dir=sys.argv[2])\n"
    )
    for disable, name in ((True, "np"), (False, "nb")):
        env = dict(os.environ)
        env.pop(_accel.ENV_FLAG, None)
        if disable:
            env[_accel.ENV_FLAG] = "1"
        res = subprocess.run([sys.executable, "-c", code, str(cfg_path), str(tmp_path / name)], env=env,
                             capture_output=True, text=True, timeout=600)
        assert res.returncode == 0, res.stderr
    files = sorted(p.relative_to(tmp_path / "np") for p in (tmp_path / "np").rglob("*") if p.is_file())
    assert len(files) > 2
    for rel in files:
        assert (tmp_path / "np" / rel).read_bytes() == (tmp_path / "nb" / rel).read_bytes(), rel
