import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdptree import kernels
from mdptree.model.structure import TransitionStructure

from oracles import random_rows

needs_numba = pytest.mark.skipif(kernels.numba_backend is None, reason="numba not installed")


def random_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    rows = random_rows(rng, n, max_actions=3)
    # split each state's actions into groups of one or two choices
    grouped = []
    for acts in rows:
        groups, k = [], 0
        while k < len(acts):
            w = int(rng.integers(1, 3))
            groups.append(acts[k : k + w])
            k += w
        grouped.append(groups)
    st_ = TransitionStructure.from_rows(grouped)
    targets = rng.random(n) < 0.2
    state_max = rng.random(n) < 0.5
    group_op = rng.integers(0, 3, st_.n_groups).astype(np.int8)
    choice_mask = rng.random(st_.n_choices) < 0.85
    group_mask = rng.random(st_.n_groups) < 0.9
    arrays = (st_.state_ptr, st_.group_ptr, st_.choice_ptr, st_.succ, st_.prob, state_max, group_op, choice_mask, group_mask, targets)
    return arrays


@needs_numba
@given(st.integers(0, 2**31))
@settings(max_examples=80)
def test_backends_agree(seed):
    arrays = random_case(seed)
    out = {}
    for be in (kernels.numba_backend, kernels.numpy_backend):
        pos = be.positive(*arrays)
        x, it, ok = be.iterate(*arrays, ~pos, 1e-12, 100_000)
        sg, gc = be.extract(*arrays, ~pos, x, 1e-8)
        out[be.name] = (pos, x, it, sg, gc)
    a, b = out["numba"], out["numpy"]
    assert np.array_equal(a[0], b[0])
    assert np.allclose(a[1], b[1], atol=1e-12)
    assert a[2] == b[2]
    assert np.array_equal(a[3], b[3])
    assert np.array_equal(a[4], b[4])


def test_env_flag_selects_numpy():
    code = "from mdptree import kernels; print(kernels.backend.name)"
    env = dict(os.environ, MDPTREE_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_set_backend_round_trip():
    before = kernels.backend
    try:
        kernels.set_backend("numpy")
        assert kernels.backend is kernels.numpy_backend
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.backend = before
