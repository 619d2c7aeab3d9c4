import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teleport_l2o import autodiff as ad
from teleport_l2o.autodiff import DomainError, NonFiniteError, Tape, Var

finite = st.floats(-3, 3, allow_nan=False)


def test_docstring_example():
    tape = Tape()
    x = Var(tape, 3.0)
    y = x * x + ad.sin(x)
    g = tape.backward(y.id)
    assert g[x.id] == pytest.approx(6.0 + math.cos(3.0), abs=1e-15)


def test_shared_subexpression_accumulates():
    tape = Tape()
    x = Var(tape, 2.0)
    y = x * x
    z = y + y  # dz/dx = 4x
    assert tape.backward(z.id)[x.id] == 8.0


def test_leaf_gradient_of_itself():
    tape = Tape()
    x = Var(tape, 1.5)
    assert tape.backward(x.id)[x.id] == 1.0


@pytest.mark.parametrize(
    "fn, x, expected",
    [
        (ad.sin, 0.3, math.cos(0.3)),
        (ad.cos, 0.3, -math.sin(0.3)),
        (ad.tanh, 0.7, 1 - math.tanh(0.7) ** 2),
        (ad.exp, -0.4, math.exp(-0.4)),
        (ad.ln, 2.5, 0.4),
        (ad.sqr, -1.25, -2.5),
        (ad.sigmoid, 0.2, (1 / (1 + math.exp(-0.2))) * (1 - 1 / (1 + math.exp(-0.2)))),
        (lambda v: ad.powi(v, 3), 1.1, 3 * 1.1**2),
        (lambda v: ad.powi(v, -2), 2.0, -2 * 2.0**-3),
    ],
)
def test_unary_derivatives(fn, x, expected):
    tape = Tape()
    v = Var(tape, x)
    assert tape.backward(fn(v).id)[v.id] == pytest.approx(expected, rel=1e-14)


def test_ops_work_on_plain_floats():
    assert ad.sin(0.5) == math.sin(0.5)
    assert ad.powi(2.0, 3) == 8.0
    assert ad.sigmoid(0.0) == 0.5


def test_domain_errors_name_the_op():
    tape = Tape()
    zero, neg = Var(tape, 0.0), Var(tape, -1.0)
    with pytest.raises(DomainError) as e:
        ad.ln(neg)
    assert e.value.op == "ln"
    with pytest.raises(DomainError) as e:
        Var(tape, 1.0) / zero
    assert e.value.op == "div"
    with pytest.raises(DomainError):
        ad.powi(zero, -1)
    with pytest.raises(DomainError):
        tape.apply_array("ln", tape.vars([1.0, -2.0]))


def test_non_finite_values_are_rejected():
    tape = Tape()
    with pytest.raises(NonFiniteError):
        ad.exp(Var(tape, 1000.0))
    with pytest.raises(NonFiniteError):
        tape.var(math.inf)
    with pytest.raises(NonFiniteError):
        tape.apply_array("exp", tape.vars([1.0, 800.0]))


def test_mixing_tapes_is_an_error():
    a, b = Tape(), Tape()
    with pytest.raises(ValueError):
        Var(a, 1.0) + Var(b, 2.0)


def test_backward_rejects_unknown_node():
    tape = Tape()
    Var(tape, 1.0)
    with pytest.raises(IndexError):
        tape.backward(5)


def test_tape_grows_past_capacity():
    tape = Tape(capacity=4)
    x = Var(tape, 1.0)
    y = x
    for _ in range(100):
        y = y * 1.01
    assert tape.backward(y.id)[x.id] == pytest.approx(1.01**100, rel=1e-12)


def test_reset_reuses_storage():
    tape = Tape(16)
    Var(tape, 1.0) * 2.0
    tape.reset()
    assert len(tape) == 0
    x = Var(tape, 4.0)
    assert x.id == 0
    assert tape.backward((ad.sqr(x)).id)[0] == 8.0


def test_node_view():
    tape = Tape()
    x = Var(tape, 2.0)
    y = x * 3.0
    info = tape.node(y.id)
    assert info["op"] == "mul"
    assert info["parents"] == (x.id, x.id + 1)
    assert info["local_grads"] == (3.0, 2.0)


def test_matvec_matches_chained_scalar_adds():
    rng = np.random.default_rng(0)
    W, x, b = rng.standard_normal((5, 7)), rng.standard_normal(7), rng.standard_normal(5)
    tape = Tape()
    wi, xi, bi = tape.vars(W), tape.vars(x), tape.vars(b)
    y = tape.matvec(wi, xi, bi)
    # reference: left-to-right scalar accumulation starting from the bias
    ref = []
    for r in range(5):
        acc = b[r]
        for c in range(7):
            acc = acc + W[r, c] * x[c]
        ref.append(acc)
    assert np.array_equal(tape.values(y), np.array(ref))
    loss = tape.sum(y)
    adj = tape.backward(loss)
    assert np.allclose(adj[wi], np.tile(x, (5, 1)))
    assert np.allclose(adj[xi], W.sum(axis=0))
    assert np.allclose(adj[bi], 1.0)


def test_apply_array_broadcasts_and_rejects_bad_shapes():
    tape = Tape()
    out = tape.apply_array("mul", tape.vars([1.0, 2.0]), tape.vars([3.0]))
    assert tape.values(out).tolist() == [3.0, 6.0]
    with pytest.raises(ValueError):
        tape.apply_array("add", tape.vars([1.0, 2.0]), tape.vars([1.0, 2.0, 3.0]))


@given(st.lists(finite, min_size=3, max_size=3))
def test_composite_expression_matches_finite_difference(p):
    def fn(v):
        x, y, z = v
        return ad.tanh(x * y) + ad.sin(z) * ad.exp(x / (1.0 + y * y)) - ad.sigmoid(z - x) * y

    assert ad.grad_check(fn, p) < 1e-7


@given(st.lists(st.floats(0.1, 3), min_size=2, max_size=2))
def test_division_and_log_match_finite_difference(p):
    assert ad.grad_check(lambda v: ad.ln(v[0] * v[1]) / (v[0] + 2.0 * v[1]), p) < 1e-7


def test_grad_check_on_constant_output():
    assert ad.grad_check(lambda v: 3.0, [1.0, 2.0]) == 0.0
