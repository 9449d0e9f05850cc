import json
from pathlib import Path

import numpy as np
import pytest

from meopt.harness import ExperimentConfig, cmd_oracle, cmd_run

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "meopt" / "schemas"

DECONV1D_BASE = {
    "problem": {"kind": "deconv1d", "n_f": 3, "lambda": 0.2},
    "init": {"kind": "grid", "m": 100, "total_mass": 1.0},
    "optimizer": {"alpha": 0.01, "beta": 0.01, "retraction": "mirror", "iters": 5000},
    "diagnostics": {"probe_grid_size": 200, "certificate_grid": 2000, "certificate_tol": 1e-5},
}


def load_schema(name):
    with open(SCHEMA_DIR / name) as fh:
        return json.load(fh)


def validate_schema(payload, name):
    import jsonschema
    from referencing import Registry, Resource

    registry = Registry()
    for path in SCHEMA_DIR.glob("*.json"):
        with open(path) as fh:
            doc = json.load(fh)
        registry = registry.with_resource(path.name, Resource.from_contents(doc))
    jsonschema.validate(payload, load_schema(name), registry=registry)


@pytest.fixture(scope="session")
def work_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def deconv_oracle(work_dir):
    """Fine-grid oracle for the default 1D deconvolution problem (lam = 0.2)."""
    cfg = ExperimentConfig.from_dict(DECONV1D_BASE)
    code, payload = cmd_oracle(cfg, grid_size=2000, out_dir=work_dir / "oracle")
    assert code == 0
    return payload


@pytest.fixture(scope="session")
def criterion4_run(work_dir, deconv_oracle):
    """The converged mirror-retraction run shared by several criteria."""
    base = json.loads(json.dumps(DECONV1D_BASE))
    base["diagnostics"]["oracle_path"] = str(work_dir / "oracle" / "oracle.json")
    cfg = ExperimentConfig.from_dict(base)
    import time

    t0 = time.perf_counter()
    code, summary = cmd_run(cfg, out_dir=work_dir / "run4")
    elapsed = time.perf_counter() - t0
    trajectory = np.genfromtxt(
        work_dir / "run4" / "trajectory.csv", delimiter=",", names=True
    )
    return {
        "exit_code": code,
        "summary": summary,
        "trajectory": trajectory,
        "elapsed": elapsed,
        "out_dir": work_dir / "run4",
    }
