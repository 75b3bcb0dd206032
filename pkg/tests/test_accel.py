import os
import subprocess
import sys

import numpy as np

from statlap import accel


class TestPairwiseSqdist:
    def test_paths_agree(self):
        rng = np.random.default_rng(0)
        phi = rng.normal(size=(37, 11))
        a = accel.pairwise_sqdist(phi, use_numba=False)
        b = accel.pairwise_sqdist(phi, use_numba=True)
        assert np.abs(a - b).max() < 1e-12 * max(1.0, a.max())

    def test_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(1)
        phi = rng.normal(size=(20, 5))
        for flag in (False, True):
            d = accel.pairwise_sqdist(phi, use_numba=flag)
            assert np.array_equal(d, d.T)
            assert np.abs(np.diag(d)).max() == 0.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(2)
        phi = rng.normal(size=(9, 4))
        d = accel.pairwise_sqdist(phi, use_numba=False)
        for i in range(9):
            for j in range(9):
                assert abs(d[i, j] - np.sum((phi[i] - phi[j]) ** 2)) < 1e-12

    def test_blocked_fallback_covers_multiple_blocks(self):
        rng = np.random.default_rng(3)
        phi = rng.normal(size=(40, 3))
        # tiny element budget forces many block pairs
        full = accel._pairwise_sqdist_numpy(phi, target_elems=4)
        ref = accel._pairwise_sqdist_numpy(phi, target_elems=10 ** 9)
        assert np.abs(full - ref).max() < 1e-12
        assert np.array_equal(full, full.T)


class TestStrongCore:
    @staticmethod
    def _inputs(seed=0, n=30, m=2):
        rng = np.random.default_rng(seed)
        V = rng.normal(size=(n, m, m))
        Gd = rng.normal(size=(n, m, m, m))
        drift = rng.normal(size=(n, m))
        perm = rng.permutation(n)
        idx_plus = np.stack([perm, np.roll(perm, 3)], axis=1).astype(np.int64)
        idx_minus = np.stack([np.roll(perm, 1), np.roll(perm, 5)], axis=1).astype(np.int64)
        inv2h = np.array([1.7, 0.9])
        return V, Gd, drift, idx_plus, idx_minus, inv2h

    def test_paths_agree(self):
        args = self._inputs()
        a = accel.strong_apply_core(*args, use_numba=False)
        b = accel.strong_apply_core(*args, use_numba=True)
        assert np.abs(a - b).max() < 1e-12 * max(1.0, np.abs(a).max())

    def test_linear_in_input(self):
        V, Gd, drift, ip, im, inv2h = self._inputs(seed=4)
        out1 = accel.strong_apply_core(V, Gd, drift, ip, im, inv2h, use_numba=False)
        out2 = accel.strong_apply_core(2.0 * V, Gd, drift, ip, im, inv2h, use_numba=False)
        assert np.abs(out2 - 2.0 * out1).max() < 1e-12


class TestEnvFlag:
    def test_numba_disabled_via_environment(self):
        code = (
            "import os; os.environ['STATLAP_NO_NUMBA'] = '1'; "
            "from statlap import accel; print(accel.numba_active())"
        )
        out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, check=True,
                             env={**os.environ, "STATLAP_NO_NUMBA": "1"})
        assert out.stdout.strip() == "False"

    def test_numba_active_by_default_when_available(self):
        env = {k: v for k, v in os.environ.items() if k != "STATLAP_NO_NUMBA"}
        code = "from statlap import accel; print(accel.numba_active())"
        out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, check=True, env=env)
        assert out.stdout.strip() in ("True", "False")
