import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrhn import _kernels as kern

import oracles

numba_only = pytest.mark.skipif(not kern.HAVE_NUMBA, reason="numba not installed")


def _case(rng, n=2, c_in=3, c_out=4, length=9, q=3):
    return rng.standard_normal((n, c_in, length)), rng.standard_normal((c_out, c_in, q))


def test_numpy_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x, w = _case(rng)
    out = kern.conv1d_forward_np(x, w)
    for b in range(x.shape[0]):
        # oracle applies ReLU; feed it a large bias and subtract to stay in the linear part
        ref = np.array(oracles.conv_layer(x[b].tolist(), w.tolist(), [1e3] * w.shape[0])) - 1e3
        np.testing.assert_allclose(out[b], ref, atol=1e-9)


@numba_only
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 6), st.integers(0, 10**6))
def test_conv_backends_agree(n, c_in, c_out, q, extra, seed):
    rng = np.random.default_rng(seed)
    x, w = _case(rng, n, c_in, c_out, q + extra, q)
    np.testing.assert_allclose(kern.conv1d_forward_nb(x, w), kern.conv1d_forward_np(x, w), atol=1e-12)
    g = rng.standard_normal((n, c_out, extra + 1))
    gx_nb, gw_nb = kern.conv1d_backward_nb(x, w, g)
    gx_np, gw_np = kern.conv1d_backward_np(x, w, g)
    np.testing.assert_allclose(gx_nb, gx_np, atol=1e-12)
    np.testing.assert_allclose(gw_nb, gw_np, atol=1e-12)


@numba_only
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 12), st.integers(1, 5), st.integers(0, 10**6))
def test_pool_backends_agree(n, c, length, s, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, length))
    out_nb, idx_nb = kern.maxpool_forward_nb(x, s)
    out_np, idx_np = kern.maxpool_forward_np(x, s)
    assert np.array_equal(out_nb, out_np) and np.array_equal(idx_nb, idx_np)
    g = rng.standard_normal(out_np.shape)
    assert np.array_equal(kern.maxpool_backward_nb(g, idx_nb, length), kern.maxpool_backward_np(g, idx_np, length))


def test_pool_matches_oracle_with_ragged_tail():
    x = np.array([[[1.0, 5.0, 2.0, 7.0, 3.0]]])
    out, idx = kern.maxpool_forward_np(x, 2)
    assert out.tolist() == [[oracles.max_pool([[1.0, 5.0, 2.0, 7.0, 3.0]], 2)[0]]] == [[[5.0, 7.0, 3.0]]]
    assert idx.tolist() == [[[1, 3, 4]]]


def test_pool_gradient_routes_to_argmax():
    idx = np.array([[[1, 3, 4]]])
    g = kern.maxpool_backward_np(np.array([[[1.0, 2.0, 3.0]]]), idx, 5)
    assert g.tolist() == [[[0.0, 1.0, 0.0, 2.0, 3.0]]]


def test_backend_flag_is_validated():
    env = dict(os.environ, HRHN_KERNELS="fortran")
    proc = subprocess.run([sys.executable, "-c", "import hrhn"], env=env, capture_output=True, text=True)
    assert proc.returncode != 0 and "HRHN_KERNELS" in proc.stderr


def test_numpy_backend_selected_by_flag():
    env = dict(os.environ, HRHN_KERNELS="numpy")
    proc = subprocess.run([sys.executable, "-c", "import hrhn; print(hrhn.KERNEL_BACKEND)"], env=env,
                          capture_output=True, text=True)
    assert proc.stdout.strip() == "numpy"
