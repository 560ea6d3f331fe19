import os
import subprocess
import sys

import numpy as np
import pytest

from flaegis import _kernels_py
from flaegis import backend

compiled = pytest.importorskip("flaegis._kernels",
                               reason="compiled kernels not built")


def sym(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


class TestBackendParity:
    def test_markers_disagree(self):
        assert _kernels_py.BACKEND == "python"
        assert compiled.BACKEND == "compiled"

    def test_sax_symbols_identical(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.normal(size=rng.integers(1, 200))
            lo, hi = np.sort(rng.normal(size=2))
            bands = int(rng.integers(2, 60))
            a = compiled.sax_symbols(v, lo, hi, bands)
            b = _kernels_py.sax_symbols(v, lo, hi, bands)
            np.testing.assert_array_equal(a, b)

    def test_sax_degenerate_range_identical(self):
        v = np.ones(5)
        a = compiled.sax_symbols(v, 2.0, 2.0, 45)
        b = _kernels_py.sax_symbols(v, 2.0, 2.0, 45)
        np.testing.assert_array_equal(a, b)

    def test_cosine_identical(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            rows = rng.integers(-5, 45, size=(rng.integers(2, 12), 30))
            a = compiled.cosine_sim_int(rows)
            b = _kernels_py.cosine_sim_int(rows)
            np.testing.assert_array_equal(a, b)

    def test_jacobi_agrees(self):
        for seed in range(8):
            m = sym(int(np.random.default_rng(seed).integers(2, 15)), seed)
            va, ua = compiled.jacobi_eigh(m)
            vb, ub = _kernels_py.jacobi_eigh(m)
            np.testing.assert_allclose(va, vb, atol=1e-12)
            # eigenvectors may differ by column sign
            np.testing.assert_allclose(np.abs(ua), np.abs(ub), atol=1e-9)

    def test_kmeans_identical(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=(20, 2))
            cents = x[rng.choice(20, size=2, replace=False)].copy()
            la, ca = compiled.kmeans_iterate(x, cents.copy())
            lb, cb = _kernels_py.kmeans_iterate(x, cents.copy())
            np.testing.assert_array_equal(la, lb)
            np.testing.assert_allclose(ca, cb, atol=1e-12)

    def test_meanshift_identical(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = np.concatenate([rng.normal(0, 0.02, size=(8, 3)),
                                rng.normal(1, 0.02, size=(4, 3))])
            a = compiled.meanshift_flat(x, 0.1)
            b = _kernels_py.meanshift_flat(x, 0.1)
            np.testing.assert_array_equal(a, b)


class TestSelection:
    def test_default_prefers_compiled(self):
        assert backend.BACKEND == "compiled"

    def test_env_forces_pure(self):
        code = ("import flaegis.backend as b; print(b.BACKEND)")
        env = dict(os.environ, FLAEGIS_PURE="1")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        assert out.stdout.strip() == "python"

    def test_pure_pipeline_matches_compiled(self):
        # identification on the same updates must not depend on the backend
        code = (
            "import numpy as np\n"
            "from flaegis.detect import DetectConfig, flaegis_identify\n"
            "rng = np.random.default_rng(5)\n"
            "ups = [rng.normal(size=40) for _ in range(8)]\n"
            "ups += [rng.normal(6, 1, size=40) for _ in range(2)]\n"
            "v = flaegis_identify(ups, DetectConfig(), seed=11)\n"
            "print(sorted(v.flagged_ids), v.estimated_clusters)\n"
        )
        runs = {}
        for name, env in (("compiled", dict(os.environ)),
                          ("python", dict(os.environ, FLAEGIS_PURE="1"))):
            env.pop("FLAEGIS_PURE", None) if name == "compiled" else None
            out = subprocess.run([sys.executable, "-c", code], env=env,
                                 capture_output=True, text=True)
            assert out.returncode == 0, out.stderr
            runs[name] = out.stdout
        assert runs["compiled"] == runs["python"]
