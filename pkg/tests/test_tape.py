import numpy as np
import pytest

import capcoord.tape as tp
from capcoord.tape import (NumericFault, ParamVector, Tape, backward_into,
                           check_gradient, param_leaves, value_of)


def grad_of(build, x):
    """Gradient of a scalar-valued taped function at leaf value x."""
    tape = Tape()
    v = tape.leaf(np.asarray(x, dtype=float))
    out = build(v)
    tape.backward(out)
    return tape.adjoint(v)


def test_square_gradient():
    g = grad_of(lambda v: tp.square(v), 3.0)
    assert g == pytest.approx(6.0)


def test_max0_dead_branch():
    g = grad_of(lambda v: tp.max0(v), -1.0)
    assert g == 0.0


def test_max0_subgradient_zero_at_kink():
    g = grad_of(lambda v: tp.max0(v), 0.0)
    assert g == 0.0


def test_min2_tie_first_argument():
    tape = Tape()
    a = tape.leaf(2.0)
    b = tape.leaf(2.0)
    out = tp.min2(a, b)
    tape.backward(out)
    assert tape.adjoint(a) == 1.0
    assert tape.adjoint(b) == 0.0


def test_matmul_requires_2d():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    with pytest.raises(ValueError):
        tp.matmul(a, np.ones(3))


def test_nan_emission_raises_numeric_fault():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 0.0]))
    with pytest.raises(NumericFault):
        tp.mul(a, np.array([np.nan, 1.0]))


def test_ops_without_tape_return_plain_arrays():
    out = tp.add(np.ones(3), 2.0)
    assert isinstance(out, np.ndarray)
    assert np.allclose(out, 3.0)


def test_backward_requires_scalar():
    tape = Tape()
    a = tape.leaf(np.ones(3))
    b = tp.mul(a, 2.0)
    with pytest.raises(ValueError):
        tape.backward(b)


def _fd_check_op(build, x0, n_leaves=1):
    """Finite-difference check a single op through the checker protocol."""
    layout = [(f"x{i}", np.shape(x0[i])) for i in range(n_leaves)]
    pv = ParamVector.build(layout)
    for i in range(n_leaves):
        pv.view(f"x{i}")[...] = x0[i]

    def fn(params, want_grad=False):
        tape = Tape()
        leaves = param_leaves(tape, params)
        out = build([leaves[f"x{i}"] for i in range(n_leaves)])
        if want_grad:
            backward_into(tape, out, params, leaves)
        return float(value_of(out))

    checked, passed, failures = check_gradient(fn, pv)
    assert checked > 0
    assert not failures, failures


def test_fd_unary_ops():
    x = np.array([0.3, -0.7, 1.9])
    _fd_check_op(lambda ls: tp.total(tp.softplus(ls[0])), [x])
    _fd_check_op(lambda ls: tp.total(tp.tanh(ls[0])), [x])
    _fd_check_op(lambda ls: tp.total(tp.square(ls[0])), [x])
    _fd_check_op(lambda ls: tp.total(tp.relu(ls[0])), [x])
    _fd_check_op(lambda ls: tp.total(tp.max0(ls[0])), [x])
    _fd_check_op(lambda ls: tp.total(tp.reshape(ls[0], (3, 1))), [x])
    _fd_check_op(lambda ls: tp.total(tp.take(ls[0], np.array([0, 2, 2]))), [x])


def test_fd_binary_ops():
    x = np.array([0.5, -1.2, 2.0])
    y = np.array([1.5, 0.7, -0.4])
    _fd_check_op(lambda ls: tp.total(tp.mul(ls[0], ls[1])), [x, y], 2)
    _fd_check_op(lambda ls: tp.total(tp.add(ls[0], ls[1])), [x, y], 2)
    _fd_check_op(lambda ls: tp.total(tp.sub(ls[0], ls[1])), [x, y], 2)
    _fd_check_op(lambda ls: tp.total(tp.min2(ls[0], ls[1])), [x, y], 2)


def test_fd_matmul_and_stacks():
    W = np.arange(6, dtype=float).reshape(2, 3) / 7.0
    x = np.array([[0.4, -0.3]])
    _fd_check_op(lambda ls: tp.total(tp.matmul(ls[0], ls[1])), [x, W], 2)
    a = np.array([0.1, 0.9])
    b = np.array([-0.5, 0.2])
    _fd_check_op(lambda ls: tp.total(tp.square(tp.column_stack([ls[0], ls[1], 1.0]))),
                 [a, b], 2)
    _fd_check_op(lambda ls: tp.total(tp.square(tp.concat([ls[0], ls[1]]))),
                 [a, b], 2)


def test_broadcasting_gradient_unbroadcasts():
    tape = Tape()
    bias = tape.leaf(np.array([1.0, 2.0]))
    mat = tp.add(np.ones((3, 2)), bias)
    out = tp.total(mat)
    tape.backward(out)
    assert np.allclose(tape.adjoint(bias), [3.0, 3.0])


def test_taping_twice_identical_gradients():
    rng = np.random.default_rng(0)
    pv = ParamVector.build([("w", (4,))])
    pv.view("w")[...] = rng.normal(size=4)

    def run():
        pv.zero_grad()
        tape = Tape()
        leaves = param_leaves(tape, pv)
        out = tp.total(tp.square(tp.tanh(leaves["w"])))
        backward_into(tape, out, pv, leaves)
        return pv.grads.copy()

    assert np.array_equal(run(), run())


def test_param_vector_layout_and_views():
    pv = ParamVector.build([("W", (2, 3)), ("b", (3,))])
    assert pv.values.size == 9
    pv.view("W")[...] = 1.0
    pv.view("b")[...] = 2.0
    assert pv.values[:6].sum() == 6.0
    assert pv.values[6:].sum() == 6.0
    pv.grad_view("b")[...] = 5.0
    assert pv.grads[6:].sum() == 15.0


def test_param_vector_save_load_roundtrip(tmp_path):
    pv = ParamVector.build([("W", (2, 2)), ("b", (2,))])
    pv.values[:] = np.arange(6, dtype=float)
    out = tmp_path / "ckpt.bin"
    pv.save(str(out))
    back = ParamVector.load(str(out))
    assert back.layout == pv.layout
    assert np.array_equal(back.values, pv.values)


def test_adjoint_of_unreached_node_is_zero():
    tape = Tape()
    a = tape.leaf(np.ones(2))
    b = tape.leaf(np.ones(2))
    out = tp.total(tp.square(a))
    tape.backward(out)
    assert np.allclose(tape.adjoint(b), 0.0)


def test_checker_skips_kink_crossing():
    pv = ParamVector.build([("x", (1,))])
    pv.view("x")[...] = 0.0   # max0 kink exactly at the evaluation point

    def fn(params, want_grad=False):
        tape = Tape()
        leaves = param_leaves(tape, params)
        out = tp.total(tp.max0(leaves["x"]))
        if want_grad:
            backward_into(tape, out, params, leaves)
        return float(value_of(out))

    checked, passed, failures = check_gradient(fn, pv)
    assert checked == 0 and not failures
