import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rre.errors import CheckpointError, DistributionError, NumericalError, ShapeError
from rre.numerics import autodiff as ad
from rre.numerics import checkpoint
from rre.numerics.optim import ParamStore, adam_step, evaluate_with_gradients
from rre.numerics.rng import Rng, seeded_rng


def grad_check(fn, *arrays, tol=1e-4):
    """fn maps tensors to a tensor; checks d sum(w * fn) / d each input."""
    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = np.random.default_rng(0).normal(size=out.shape)
    loss = ad.sum_(out * weights)
    grads = ad.backward(loss, leaves)
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [ad.Tensor(x if j == i else arrays[j]) for j in range(len(arrays))]
            return float(np.sum(fn(*args).data * weights))
        num = ad.numerical_gradient(f, a)
        err = ad.relative_error(grads[i], num)
        assert err < tol, f"input {i}: {err:.2e}"


R = np.random.default_rng(42)
A = R.normal(size=(3, 4))
B = R.normal(size=(3, 4))
POS = R.uniform(0.5, 2.0, size=(3, 4))


@pytest.mark.parametrize("fn,args", [
    (ad.add, (A, B)),
    (ad.sub, (A, B)),
    (ad.mul, (A, B)),
    (ad.div, (A, POS)),
    (ad.neg, (A,)),
    (lambda a: ad.power(a, 3.0), (A,)),
    (ad.exp, (A,)),
    (ad.log, (POS,)),
    (ad.sqrt, (POS,)),
    (ad.tanh, (A,)),
    (ad.sigmoid, (A,)),
    (ad.relu, (A + 0.05 * np.sign(A),)),
    (ad.abs_, (A + 0.05 * np.sign(A),)),
    (ad.minimum, (A, B)),
    (ad.maximum, (A, B)),
    (lambda a: ad.clip(a, -0.5, 0.5), (A,)),
    (lambda a, b: ad.where(A > 0, a, b), (A, B)),
    (lambda a, b: ad.matmul(a, ad.transpose(b)), (A, B)),
    (lambda a, w, b: ad.linear(a, w, b), (A, R.normal(size=(4, 5)), R.normal(size=5))),
    (lambda a: ad.sum_(a, axis=1), (A,)),
    (lambda a: ad.mean(a, axis=0), (A,)),
    (lambda a: ad.reshape(a, (2, 6)), (A,)),
    (lambda a: ad.swapaxes(a, 0, 1), (A,)),
    (lambda a: a[1:, ::2], (A,)),
    (lambda a, b: ad.concat([a, b], axis=0), (A, B)),
    (lambda a, b: ad.stack([a, b], axis=1), (A, B)),
    (ad.softmax, (A,)),
    (ad.log_softmax, (A,)),
    (lambda a, g, b: ad.layer_norm(a, g, b), (A, R.normal(size=4), R.normal(size=4))),
    (lambda a, b: a + b, (A, R.normal(size=4))),  # broadcasting
    (lambda a, b: ad.matmul(a, b), (R.normal(size=(2, 3, 4)), R.normal(size=(2, 4, 3)))),
])
def test_every_op_matches_finite_differences(fn, args):
    grad_check(fn, *args)


def test_gather_rows_accumulate_repeated_indices():
    grad_check(lambda a: a[np.array([0, 0, 2]), np.array([1, 1, 3])], A)


def test_sum_parameter_gradient_is_ones():
    store = ParamStore({"p": np.array([1.0, -2.0, 3.0])})
    loss, g = evaluate_with_gradients(lambda p: ad.sum_(p["p"]), store)
    assert loss == 2.0
    np.testing.assert_array_equal(g["p"], np.ones(3))


def test_half_squared_norm_gradient():
    store = ParamStore({"p": np.array([3.0, -4.0])})
    loss, g = evaluate_with_gradients(lambda p: 0.5 * ad.sum_(p["p"] * p["p"]), store)
    assert loss == 12.5
    np.testing.assert_array_equal(g["p"], [3.0, -4.0])


def test_untouched_parameters_get_zero_gradient():
    store = ParamStore({"a": np.ones(2), "b": np.ones((2, 2))})
    _, g = evaluate_with_gradients(lambda p: ad.sum_(p["a"]), store)
    np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))


def test_softmax_cross_entropy_gradient_tight():
    logits = np.array([0.3, -1.2, 2.0])
    target = 1

    def f(x):
        return -ad.log_softmax(ad.Tensor(x))[target].item()

    t = ad.Tensor(logits, requires_grad=True)
    (g,) = ad.backward(-ad.log_softmax(t)[target], [t])
    num = ad.numerical_gradient(f, logits)
    assert ad.relative_error(g, num) < 1e-6
    p = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(g, p - np.eye(3)[target], atol=1e-12)


def test_non_finite_raises_with_node_name():
    with pytest.raises(NumericalError) as exc:
        ad.log(ad.Tensor([0.0]), name="the_log")
    assert exc.value.node == "the_log"
    with pytest.raises(NumericalError):
        ad.div(ad.Tensor([1.0]), ad.Tensor([0.0]))


def test_no_grad_records_nothing():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                  elements=st.floats(-50, 50)))
def test_softmax_is_a_simplex(x):
    p = ad.softmax(ad.Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 32), elements=st.floats(-3, 3)),
       hnp.arrays(np.float64, st.integers(1, 32), elements=st.floats(-3, 3)))
def test_random_composite_gradient(x, w):
    n = min(len(x), len(w))
    x, w = x[:n], w[:n]
    grad_check(lambda a, b: ad.tanh(a * b) + ad.sigmoid(a - b) * b, x, w)


# ---------------------------------------------------------------------------
# Adam


def test_adam_first_step_has_magnitude_lr():
    store = ParamStore({"p": np.array(0.0)})
    adam_step(store, {"p": np.array(1.0)}, 0.1)
    assert store.params["p"] == pytest.approx(-0.1, abs=1e-9)
    assert store.step == 1


def test_adam_zero_gradient_is_fixed_point():
    store = ParamStore({"p": np.array([1.0, 2.0])})
    adam_step(store, {"p": np.zeros(2)}, 0.1)
    np.testing.assert_array_equal(store.params["p"], [1.0, 2.0])
    assert store.step == 1


def test_adam_ascend_equals_descend_on_negated_gradient():
    g = np.array([0.3, -1.0, 2.0])
    a = ParamStore({"p": np.ones(3)})
    b = ParamStore({"p": np.ones(3)})
    for _ in range(3):
        adam_step(a, {"p": g}, 0.01, ascend=True)
        adam_step(b, {"p": -g}, 0.01)
    np.testing.assert_array_equal(a.params["p"], b.params["p"])


def test_adam_shape_mismatch_leaves_store_untouched():
    store = ParamStore({"p": np.ones(3)})
    with pytest.raises(ShapeError):
        adam_step(store, {"p": np.ones(2)}, 0.1)
    assert store.step == 0
    with pytest.raises(KeyError):
        adam_step(store, {"q": np.ones(2)}, 0.1)


def test_param_store_names_unique():
    store = ParamStore({"a": np.ones(1)})
    with pytest.raises(KeyError):
        store.add("a", np.ones(1))


# ---------------------------------------------------------------------------
# Rng


def test_degenerate_categorical():
    r = seeded_rng(0)
    assert all(r.categorical([1.0, 0.0, 0.0]) == 0 for _ in range(200))


def test_fair_coin_frequency():
    draws = seeded_rng(7).categorical_many([1.0, 1.0], 100_000)
    assert abs((draws == 0).mean() - 0.5) < 0.006


def test_same_seed_same_draws():
    a, b = seeded_rng(99), seeded_rng(99)
    assert [a.categorical([1, 2, 3]) for _ in range(100)] == [b.categorical([1, 2, 3]) for _ in range(100)]
    np.testing.assert_array_equal(Rng(5).uniform(size=10), Rng(5).uniform(size=10))


def test_spawned_streams_are_independent_and_stable():
    m = Rng(3)
    x = m.spawn("a").uniform(size=5)
    y = m.spawn("b").uniform(size=5)
    assert not np.array_equal(x, y)
    np.testing.assert_array_equal(x, Rng(3).spawn("a").uniform(size=5))


@pytest.mark.parametrize("w", [[0.0, 0.0], [1.0, -1.0], [np.nan, 1.0]])
def test_bad_weights_raise(w):
    with pytest.raises(DistributionError):
        seeded_rng(0).categorical(w)


# ---------------------------------------------------------------------------
# checkpoints


def _store():
    s = ParamStore({"w": np.arange(6.0).reshape(2, 3), "b": np.array(1.5)})
    adam_step(s, {"w": np.ones((2, 3)), "b": np.array(2.0)}, 0.1)
    return s


def test_checkpoint_round_trip(tmp_path):
    s = _store()
    checkpoint.save(tmp_path / "c.ckpt", {"env": s}, {"T": 24})
    sections, meta = checkpoint.load(tmp_path / "c.ckpt")
    r = sections["env"]
    assert meta == {"T": 24}
    assert r.step == s.step and r.digest() == s.digest()
    for n in s.names():
        np.testing.assert_array_equal(r.m[n], s.m[n])
        np.testing.assert_array_equal(r.v[n], s.v[n])


def test_checkpoint_starts_with_version_byte():
    raw = checkpoint.dumps({"env": _store()})
    assert raw[0] == checkpoint.FORMAT_VERSION and raw[1:5] == b"RREC"


@pytest.mark.parametrize("mutate", [
    lambda b: bytes([99]) + b[1:],          # unknown version
    lambda b: b[:1] + b"XXXX" + b[5:],      # bad magic
    lambda b: b[: len(b) // 2],             # truncated
])
def test_corrupt_checkpoint_raises(mutate):
    raw = checkpoint.dumps({"env": _store()}, {"a": 1})
    with pytest.raises(CheckpointError):
        checkpoint.loads(mutate(raw))
