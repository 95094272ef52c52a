import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochgan.network import generator_spec, init_params
from stochgan.optim import EMA, Adam, NonFiniteGradientError

from oracles import scalar_adam


def test_zero_gradient_leaves_params_unchanged():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    before = p["w"].copy()
    opt = Adam()
    for _ in range(3):
        opt.step(p, {"w": np.zeros(3)})
    np.testing.assert_array_equal(p["w"], before)


def test_first_step_closed_form():
    p = {"w": np.array([0.0])}
    Adam(lr=1e-4, beta1=0.0, beta2=0.9, eps=1e-8).step(p, {"w": np.array([1.0])})
    assert p["w"][0] == -1e-4 / (1 + 1e-8)


@pytest.mark.parametrize("steps", [5, 100])
def test_matches_scalar_oracle_on_quadratic(steps):
    cfg = dict(lr=1e-4, beta1=0.0, beta2=0.9, eps=1e-8)
    expected = scalar_adam(1.0, lambda th: th, steps, cfg["lr"], cfg["beta1"], cfg["beta2"], cfg["eps"])
    p = {"th": np.array([1.0])}
    opt = Adam(**cfg)
    for t in range(steps):
        opt.step(p, {"th": p["th"].copy()})
        assert abs(p["th"][0] - expected[t]) <= 1e-12
    assert opt.t == steps


def test_matches_scalar_oracle_with_momentum():
    expected = scalar_adam(1.0, lambda th: th, 50, 1e-2, 0.9, 0.999, 1e-8)
    p = {"th": np.array([1.0])}
    opt = Adam(lr=1e-2, beta1=0.9, beta2=0.999)
    for _ in range(50):
        opt.step(p, {"th": p["th"].copy()})
    assert abs(p["th"][0] - expected[-1]) <= 1e-12


def test_non_finite_gradient_aborts_without_change():
    p = {"w": np.ones(2)}
    opt = Adam()
    with pytest.raises(NonFiniteGradientError):
        opt.step(p, {"w": np.array([1.0, np.nan])})
    np.testing.assert_array_equal(p["w"], np.ones(2))
    assert opt.t == 0


def test_gradient_keys_must_match():
    with pytest.raises(KeyError):
        Adam().step({"a": np.ones(1)}, {"b": np.ones(1)})


def test_bit_identical_across_runs(rng):
    grads = [rng.standard_normal((3, 4)) for _ in range(20)]
    finals = []
    for _ in range(2):
        p = {"w": np.ones((3, 4))}
        opt = Adam()
        for g in grads:
            opt.step(p, {"w": g})
        finals.append(p["w"].tobytes())
    assert finals[0] == finals[1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_second_moment_non_negative(gs):
    p = {"w": np.zeros(1)}
    opt = Adam()
    for g in gs:
        opt.step(p, {"w": np.array([g])})
        assert opt.v["w"][0] >= 0


def test_state_arrays_roundtrip():
    p = {"w": np.ones(3)}
    opt = Adam()
    opt.step(p, {"w": np.arange(3.0)})
    clone = Adam()
    clone.load_state_arrays("a", opt.state_arrays("a"))
    assert clone.t == 1
    np.testing.assert_array_equal(clone.v["w"], opt.v["w"])


def _store(value):
    s = init_params(generator_spec(2, 2, (3,)), 0)
    for v in s.params.values():
        v[...] = value
    return s


class TestEMA:
    def test_decay_zero_copies(self):
        ema = EMA(_store(0.0), decay=0.0)
        live = _store(0.0)
        for v in live.params.values():
            v[...] = np.arange(v.size).reshape(v.shape) * 0.37
        ema.update(live)
        for k in live.params:
            np.testing.assert_array_equal(ema.shadow.params[k], live.params[k])

    def test_decay_one_freezes(self):
        ema = EMA(_store(2.0), decay=1.0)
        ema.update(_store(5.0))
        for v in ema.shadow.params.values():
            np.testing.assert_array_equal(v, 2.0)

    def test_two_halving_updates(self):
        ema = EMA(_store(0.0), decay=0.5)
        ema.update(_store(1.0))
        ema.update(_store(1.0))
        for v in ema.shadow.params.values():
            np.testing.assert_array_equal(v, 0.75)

    def test_shadow_is_a_copy(self):
        live = _store(1.0)
        ema = EMA(live, decay=0.9)
        live.params["dense0.weight"][...] = 7.0
        np.testing.assert_array_equal(ema.shadow.params["dense0.weight"], 1.0)

    @settings(max_examples=30, deadline=None)
    @given(decay=st.floats(0.0, 1.0), start=st.floats(-10, 10), target=st.floats(-10, 10),
           steps=st.integers(1, 60))
    def test_geometric_convergence_bound(self, decay, start, target, steps):
        ema = EMA(_store(start), decay=decay)
        live = _store(target)
        for _ in range(steps):
            ema.update(live)
        bound = decay ** steps * abs(start - target)
        for v in ema.shadow.params.values():
            assert np.all(np.abs(v - target) <= bound * (1 + 1e-12) + 1e-12)

    def test_rejects_bad_decay(self):
        with pytest.raises(ValueError):
            EMA(_store(0.0), decay=1.5)
