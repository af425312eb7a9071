import os
import subprocess
import sys

import numpy as np
import pytest

from gnssfgo import kernels


def _random_group(rng, nf=40, m=2, na=3, nb=2, ncols=30):
    ja = rng.normal(size=(nf, m, na))
    jb = rng.normal(size=(nf, m, nb))
    ca = rng.integers(0, ncols - na, size=nf).astype(np.int64)
    cb = rng.integers(0, ncols - nb, size=nf).astype(np.int64)
    w = rng.uniform(0.1, 1.0, size=nf)
    ew = rng.normal(size=(nf, m))
    x = rng.normal(size=ncols)
    return ja, jb, ca, cb, w, ew, x


def test_backends_agree():
    impls = kernels.implementations()
    if "numba" not in impls:
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(0)
    for _ in range(5):
        ja, jb, ca, cb, w, ew, x = _random_group(rng)
        outs = {}
        for name, impl in impls.items():
            hmat = np.zeros((30, 30))
            rhs = np.zeros(30)
            res = ew.copy()
            impl["block_residual_add"](res, ja, ca, x)
            impl["block_pair_accumulate"](hmat, ja, jb, ca, cb, w)
            impl["block_rhs_accumulate"](rhs, ja, ca, res, w)
            outs[name] = (res, hmat, rhs)
        for a, b in zip(outs["numpy"], outs["numba"]):
            np.testing.assert_allclose(a, b, atol=1e-12)


def test_search_backends_agree():
    impls = kernels.implementations()
    if "numba" not in impls:
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(1)
    from gnssfgo.ambiguity import _ldl_lower

    for _ in range(20):
        n = int(rng.integers(1, 7))
        a = rng.normal(size=(n, n))
        q = a @ a.T + 0.05 * np.eye(n)
        lmat, d = _ldl_lower(q)
        zhat = rng.normal(scale=3, size=n)
        c_np, q_np, n_np = impls["numpy"]["ils_search"](zhat, lmat, d, 6)
        c_nb, q_nb, n_nb = impls["numba"]["ils_search"](zhat, lmat, d, 6)
        assert n_np == n_nb
        np.testing.assert_array_equal(c_np[:n_np], c_nb[:n_nb])
        np.testing.assert_allclose(q_np[:n_np], q_nb[:n_nb], atol=1e-12)


def test_pure_numpy_env_flag_selects_fallback():
    env = dict(os.environ)
    env[kernels.ENV_PURE_NUMPY] = "1"
    out = subprocess.run(
        [sys.executable, "-c", "from gnssfgo import kernels; print(kernels.backend())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_default_backend_reported():
    assert kernels.backend() in ("numba", "numpy")


def test_solver_results_identical_across_backends(tmp_path):
    # Same seeded pipeline run under both backends must agree closely.
    script = tmp_path / "run.py"
    script.write_text(
        "import json\n"
        "import numpy as np\n"
        "from gnssfgo import scenario, pipeline\n"
        "recs, truth = scenario.generate(scenario.urban_scenario(3, n_epochs=30))\n"
        "res = pipeline.run_example1(recs, truth.layout, pipeline.Example1Config(), truth=truth)\n"
        "print(json.dumps({'p95': res.stats.p95, 'rms': res.stats.rms}))\n"
    )
    outs = {}
    for flag in ("0", "1"):
        env = dict(os.environ)
        env[kernels.ENV_PURE_NUMPY] = flag
        r = subprocess.run(
            [sys.executable, str(script)], env=env, capture_output=True, text=True, check=True
        )
        outs[flag] = r.stdout.strip()
    import json

    a = json.loads(outs["0"])
    b = json.loads(outs["1"])
    assert a["p95"] == pytest.approx(b["p95"], rel=1e-9)
    assert a["rms"] == pytest.approx(b["rms"], rel=1e-9)
