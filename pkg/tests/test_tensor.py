"""Autodiff core: forward values, backward gradients, tape semantics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semff.errors import NumericError, ShapeError
from semff.tensor import (
    PRIMITIVES, Tape, Tensor, add, add_const, add_rowvec, apply_primitive,
    backward, concat, concat_cols, cosine_similarity, dot, flatten,
    grad_check, l2_normalize, log, log_softmax, matmul, maximum_const,
    mean_all, mul, neg, pick_rows, rsub_const, scale, sigmoid, softmax,
    square, stack, sub, sum_all, tanh,
)

TOL = 1e-4


def _t(shape, seed, requires_grad=True, shift=0.0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=shape).astype(np.float32) + shift
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# Frozen forward values
# ---------------------------------------------------------------------------

def test_tanh_at_origin():
    assert tanh(Tensor([0.0])).data[0] == 0.0


def test_softmax_closed_form():
    out = softmax(Tensor([0.0, np.log(2.0)]))
    np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], rtol=1e-6)


def test_l2_normalize_345_triangle():
    out = l2_normalize(Tensor([3.0, 4.0]))
    np.testing.assert_allclose(out.data, [0.6, 0.8], rtol=1e-6)


def test_l2_normalize_rejects_tiny_norm():
    with pytest.raises(NumericError):
        l2_normalize(Tensor([0.0, 0.0, 1e-13]))


def test_square_gradient_at_three():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        y = sum_all(square(x))
    backward(tape, y)
    np.testing.assert_allclose(x.grad, [6.0], rtol=1e-6)


def test_sigmoid_at_zero_is_half():
    np.testing.assert_allclose(sigmoid(Tensor([0.0])).data, [0.5], rtol=1e-7)


def test_sigmoid_stable_at_extremes():
    out = sigmoid(Tensor([-100.0, 100.0]))
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-30)


def test_log_softmax_matches_log_of_softmax():
    x = _t((4,), 3, requires_grad=False)
    np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data),
                               rtol=1e-5, atol=1e-6)


# ---------------------------------------------------------------------------
# Finite-difference checks, one per primitive
# ---------------------------------------------------------------------------

def _scalarize(seed):
    """Fixed random weights turning any output into a scalar loss.

    Weights are cached by shape so repeated calls inside grad_check see the
    same deterministic reduction.
    """
    rng = np.random.default_rng(seed)
    cache: dict = {}

    def reduce_to_scalar(t: Tensor) -> Tensor:
        flat = flatten(t)
        w = cache.get(flat.shape)
        if w is None:
            w = Tensor(rng.normal(size=flat.shape).astype(np.float32))
            cache[flat.shape] = w
        return dot(flat, w)

    return reduce_to_scalar


FD_CASES = {
    "add": (lambda ts, r: r(add(ts[0], ts[1])), [((3, 4), 0), ((3, 4), 1)]),
    "sub": (lambda ts, r: r(sub(ts[0], ts[1])), [((3, 4), 2), ((3, 4), 3)]),
    "neg": (lambda ts, r: r(neg(ts[0])), [((5,), 4)]),
    "mul": (lambda ts, r: r(mul(ts[0], ts[1])), [((3, 4), 5), ((3, 4), 6)]),
    "scale": (lambda ts, r: r(scale(ts[0], -2.5)), [((4, 2), 7)]),
    "add_const": (lambda ts, r: r(add_const(ts[0], 1.7)), [((6,), 8)]),
    "rsub_const": (lambda ts, r: r(rsub_const(ts[0], 0.3)), [((6,), 9)]),
    "matmul": (lambda ts, r: r(matmul(ts[0], ts[1])), [((3, 4), 10), ((4, 2), 11)]),
    "dot": (lambda ts, r: dot(ts[0], ts[1]), [((5,), 12), ((5,), 13)]),
    "tanh": (lambda ts, r: r(tanh(ts[0])), [((3, 3), 14)]),
    "sigmoid": (lambda ts, r: r(sigmoid(ts[0])), [((3, 3), 15)]),
    "log": (lambda ts, r: r(log(ts[0])), [((4,), 16, 4.0)]),
    "square": (lambda ts, r: r(square(ts[0])), [((3, 3), 17)]),
    "maximum_const": (lambda ts, r: r(maximum_const(ts[0], 0.1)),
                      [((8,), 18, 3.0)]),
    "softmax": (lambda ts, r: r(softmax(ts[0])), [((5,), 19)]),
    "log_softmax": (lambda ts, r: r(log_softmax(ts[0])), [((5,), 20)]),
    "l2_normalize": (lambda ts, r: r(l2_normalize(ts[0])), [((6,), 21, 2.0)]),
    "concat": (lambda ts, r: r(concat(list(ts))),
               [((3,), 22), ((4,), 23), ((2,), 24)]),
    "stack": (lambda ts, r: r(stack(list(ts))), [((4,), 25), ((4,), 26)]),
    "concat_cols": (lambda ts, r: r(concat_cols(ts[0], ts[1])),
                    [((3, 2), 27), ((3, 4), 28)]),
    "add_rowvec": (lambda ts, r: r(add_rowvec(ts[0], ts[1])),
                   [((4, 3), 29), ((3,), 30)]),
    "pick_rows": (lambda ts, r: r(pick_rows(ts[0], np.array([1, 0, 3, 2, 1]))),
                  [((5, 4), 31)]),
    "flatten": (lambda ts, r: r(flatten(ts[0])), [((3, 4), 32)]),
    "sum": (lambda ts, r: sum_all(ts[0]), [((3, 4), 33)]),
    "mean": (lambda ts, r: mean_all(ts[0]), [((3, 4), 34)]),
}


@pytest.mark.parametrize("name", sorted(FD_CASES))
def test_primitive_gradients_match_finite_differences(name):
    build, arg_defs = FD_CASES[name]
    inputs = []
    for arg in arg_defs:
        shape, seed = arg[0], arg[1]
        shift = arg[2] if len(arg) > 2 else 0.0
        inputs.append(_t(shape, seed, shift=shift))
    reducer = _scalarize(seed=1000)
    err = grad_check(lambda ts: build(ts, reducer), inputs)
    assert err <= TOL, f"{name}: finite-difference error {err}"


def test_every_registered_primitive_has_a_gradient_case():
    assert set(PRIMITIVES) == set(FD_CASES)


def test_matmul_vector_cases_match_finite_differences():
    reducer = _scalarize(seed=1001)
    err = grad_check(lambda ts: reducer(matmul(ts[0], ts[1])),
                     [_t((3, 4), 40), _t((4,), 41)])
    assert err <= TOL
    err = grad_check(lambda ts: reducer(matmul(ts[0], ts[1])),
                     [_t((4,), 42), _t((4, 3), 43)])
    assert err <= TOL


def test_rowwise_softmax_gradients():
    reducer = _scalarize(seed=1002)
    for fn in (softmax, log_softmax):
        err = grad_check(lambda ts: reducer(fn(ts[0])), [_t((3, 4), 44)])
        assert err <= TOL


def test_cosine_similarity_gradients_and_value():
    a, b = _t((5,), 45, shift=1.0), _t((5,), 46, shift=-1.0)
    cos = cosine_similarity(a, b)
    expected = (a.data @ b.data) / (np.linalg.norm(a.data) * np.linalg.norm(b.data))
    np.testing.assert_allclose(cos.item(), expected, rtol=1e-5)
    err = grad_check(lambda ts: cosine_similarity(ts[0], ts[1]), [a, b])
    assert err <= TOL


# ---------------------------------------------------------------------------
# Tape and backward semantics
# ---------------------------------------------------------------------------

def test_backward_accumulates_across_calls():
    x = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        y = sum_all(square(x))
    backward(tape, y)
    once = x.grad.copy()
    backward(tape, y)
    np.testing.assert_allclose(x.grad, 2 * once, rtol=1e-6)


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = square(x)
    with pytest.raises(ShapeError):
        backward(tape, y)


def test_backward_rejects_loss_not_on_tape():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        sum_all(square(x))
    stray = Tensor([1.0])
    with pytest.raises(ValueError):
        backward(tape, stray)


def test_no_tape_means_no_recording():
    x = Tensor([1.0], requires_grad=True)
    y = square(x)
    assert not y.requires_grad


def test_constants_receive_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    with Tape() as tape:
        y = sum_all(mul(x, c))
    backward(tape, y)
    assert c.grad is None
    np.testing.assert_allclose(x.grad, c.data)


def test_gradients_flow_through_intermediates():
    x = Tensor([0.5], requires_grad=True)
    with Tape() as tape:
        h = tanh(x)
        y = sum_all(square(h))
    backward(tape, y)
    assert h.grad is not None
    expected = 2 * np.tanh(0.5) * (1 - np.tanh(0.5) ** 2)
    np.testing.assert_allclose(x.grad, [expected], rtol=1e-5)


def test_reused_tensor_accumulates_both_paths():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        y = sum_all(add(square(x), square(x)))
    backward(tape, y)
    np.testing.assert_allclose(x.grad, [12.0], rtol=1e-6)


def test_shape_errors_name_the_primitive():
    with pytest.raises(ShapeError, match="matmul"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        add(Tensor([1.0]), Tensor([1.0, 2.0]))
    with pytest.raises(ShapeError, match="pick_rows"):
        pick_rows(Tensor(np.zeros((3, 2))), np.array([0, 1]))


def test_apply_primitive_dispatch():
    out = apply_primitive("add", [Tensor([1.0]), Tensor([2.0])])
    np.testing.assert_allclose(out.data, [3.0])
    out = apply_primitive("concat", [Tensor([1.0]), Tensor([2.0, 3.0])])
    assert out.shape == (3,)
    with pytest.raises(ValueError, match="unknown primitive"):
        apply_primitive("transmogrify", [])


def test_long_sum_uses_wide_accumulator():
    # 100k values of 0.1 in f32 naive summation drifts visibly; the f64
    # accumulation keeps the relative error tiny.
    x = Tensor(np.full(100_000, 0.1, dtype=np.float32))
    assert abs(sum_all(x).item() - 10_000.0) < 0.05


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

@given(st.lists(st.floats(-30, 30), min_size=1, max_size=16))
@settings(max_examples=60, deadline=None)
def test_softmax_is_a_distribution(values):
    out = softmax(Tensor(np.array(values, dtype=np.float32))).data
    assert (out >= 0).all()
    assert abs(out.sum() - 1.0) < 1e-6


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=16))
@settings(max_examples=60, deadline=None)
def test_l2_normalize_yields_unit_vectors(values):
    arr = np.array(values, dtype=np.float32)
    if np.linalg.norm(arr) < 1e-6:
        arr = arr + 1.0
    out = l2_normalize(Tensor(arr)).data
    assert abs(np.linalg.norm(out) - 1.0) < 1e-5


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_finite_inputs_keep_finite_outputs(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(scale=10, size=(4, 4)).astype(np.float32))
    for fn in (tanh, sigmoid, square, softmax, log_softmax):
        assert np.isfinite(fn(x).data).all()
