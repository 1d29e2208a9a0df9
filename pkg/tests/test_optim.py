import numpy as np
import pytest

from ramplab.network import ParamStore
from ramplab.optim import Adam, clip_global_grad_norm


def store_with(**arrays):
    store = ParamStore(dtype=np.float64)
    for name, arr in arrays.items():
        store.add(name, np.asarray(arr, dtype=float))
    return store


def set_grads(store, **grads):
    for name, g in grads.items():
        store.params[name].grad = np.asarray(g, dtype=float)


def test_first_step_moves_by_almost_lr():
    store = store_with(p=[[1.0]])
    opt = Adam(store, lr=0.1)
    set_grads(store, p=[[1.0]])
    opt.step()
    # bias correction makes the very first step lr * g / (|g| + eps)
    assert store.params["p"].data[0, 0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)


def test_constant_gradient_steps_are_size_lr():
    store = store_with(p=[[0.0]])
    opt = Adam(store, lr=0.1)
    for _ in range(10):
        set_grads(store, p=[[2.0]])
        opt.step()
    want = -10 * 0.1 * (2.0 / (2.0 + 1e-8))
    assert store.params["p"].data[0, 0] == pytest.approx(want, abs=1e-9)


def test_update_direction_opposes_gradient_sign():
    store = store_with(p=[[0.0, 0.0]])
    opt = Adam(store, lr=0.01)
    set_grads(store, p=[[3.0, -0.004]])
    opt.step()
    p = store.params["p"].data[0]
    assert p[0] < 0.0 < p[1]
    # Adam normalises per coordinate: both moves are about lr in size
    assert abs(p[0]) == pytest.approx(0.01, rel=1e-5)
    assert abs(p[1]) == pytest.approx(0.01, rel=1e-3)


def test_missing_gradient_freezes_param_and_moments():
    store = store_with(a=[[1.0]], b=[[1.0]])
    opt = Adam(store, lr=0.1)
    set_grads(store, a=[[1.0]])
    opt.step()
    assert store.params["b"].data[0, 0] == 1.0
    assert opt.m["b"][0, 0] == 0.0 and opt.v["b"][0, 0] == 0.0
    assert opt.m["a"][0, 0] != 0.0


def test_step_clears_gradient_slots():
    store = store_with(a=[[1.0]])
    opt = Adam(store, lr=0.1)
    set_grads(store, a=[[1.0]])
    opt.step()
    assert store.params["a"].grad is None


def test_zero_gradient_is_a_no_op_update():
    store = store_with(a=[[5.0]])
    opt = Adam(store, lr=0.1)
    set_grads(store, a=[[0.0]])
    opt.step()
    assert store.params["a"].data[0, 0] == 5.0


def test_descends_a_quadratic():
    store = store_with(p=[[4.0]])
    opt = Adam(store, lr=0.05)
    for _ in range(400):
        p = store.params["p"].data[0, 0]
        set_grads(store, p=[[2.0 * p]])     # d/dp p^2
        opt.step()
    assert abs(store.params["p"].data[0, 0]) < 1e-2


def test_clip_scales_to_max_norm_and_reports_preclip():
    store = store_with(a=[[3.0]], b=[[4.0]])
    set_grads(store, a=[[3.0]], b=[[4.0]])
    norm = clip_global_grad_norm(store, max_norm=1.0)
    assert norm == pytest.approx(5.0)
    clipped = np.sqrt(store.params["a"].grad[0, 0] ** 2 + store.params["b"].grad[0, 0] ** 2)
    assert clipped == pytest.approx(1.0)


def test_clip_leaves_small_gradients_alone():
    store = store_with(a=[[0.3]])
    set_grads(store, a=[[0.3]])
    norm = clip_global_grad_norm(store, max_norm=10.0)
    assert norm == pytest.approx(0.3)
    assert store.params["a"].grad[0, 0] == 0.3


def test_clip_skips_missing_gradients():
    store = store_with(a=[[1.0]], b=[[1.0]])
    set_grads(store, a=[[6.0]])
    norm = clip_global_grad_norm(store, max_norm=3.0)
    assert norm == pytest.approx(6.0)
    assert store.params["a"].grad[0, 0] == pytest.approx(3.0)
    assert store.params["b"].grad is None
