"""Autodiff core: forward values, gradient oracles, tape invariants."""

import numpy as np
import numpy.testing as npt
import pytest

from tgsa import tensor as ops
from tgsa.errors import DomainError, GradientError, ShapeError
from tgsa.gradcheck import check_gradients
from tgsa.tensor import Tensor, tape_of


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_t(rng, *shape, lo=-2.0, hi=2.0, grad=True):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=grad)


class TestForwardValues:
    def test_matmul_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.5, -2.0], [0.25, 4.0]])
        npt.assert_array_equal(ops.matmul(eye, m).data, m.data)

    def test_matmul_hand_expansion(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_softmax_uniform(self):
        out = ops.softmax_rows(Tensor([0.0, 0.0, 0.0]))
        npt.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_shift_stability(self):
        out = ops.softmax_rows(Tensor([1000.0, 1000.0]))
        npt.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)
        assert np.all(np.isfinite(out.data))

    def test_softmax_closed_form(self):
        out = ops.softmax_rows(Tensor([0.0, np.log(3.0)]))
        npt.assert_allclose(out.data, [0.25, 0.75], atol=1e-15)

    def test_softmax_rows_sum_to_one(self, rng):
        x = rand_t(rng, 3, 5, 7, grad=False)
        out = ops.softmax_rows(x)
        assert np.all(out.data >= 0)
        npt.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_abs_values(self):
        out = ops.abs_elem(Tensor([-2.0, 0.0, 3.0]))
        npt.assert_array_equal(out.data, [2.0, 0.0, 3.0])

    def test_layer_norm_constant_rows_collapse_to_bias(self):
        x = Tensor(np.full((3, 4), 7.0))
        out = ops.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        npt.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_layer_norm_two_point_row(self):
        out = ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14)
        npt.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_layer_norm_rejects_nonpositive_eps(self):
        with pytest.raises(DomainError):
            ops.layer_norm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_exp_relu_basics(self):
        assert ops.exp(Tensor(0.0)).item() == 1.0
        out = ops.relu(Tensor([-1.0, 2.0]))
        npt.assert_array_equal(out.data, [0.0, 2.0])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            ops.log(Tensor([1.0, 0.0]))

    def test_elementwise_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ops.backward(ops.sum(x))
        npt.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ops.backward(ops.sum(ops.mul(x, x)))
        npt.assert_array_equal(x.grad, [2.0, 4.0])

    def test_shared_leaf_accumulates(self):
        x = Tensor([3.0, -1.0], requires_grad=True)
        ops.backward(ops.add(ops.sum(x), ops.sum(x)))
        npt.assert_array_equal(x.grad, [2.0, 2.0])

    def test_repeated_backward_accumulates_until_zeroed(self):
        x = Tensor([1.0], requires_grad=True)
        ops.backward(ops.sum(x))
        ops.backward(ops.sum(x))
        npt.assert_array_equal(x.grad, [2.0])
        x.zero_grad()
        npt.assert_array_equal(x.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GradientError):
            ops.backward(ops.mul(x, x))

    def test_abs_sign_rule(self):
        x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
        ops.backward(ops.sum(ops.abs_elem(x)))
        npt.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])

    def test_broadcast_bias_grad_reduces(self, rng):
        x = rand_t(rng, 4, 3, grad=False)
        b = Tensor(np.zeros(3), requires_grad=True)
        ops.backward(ops.sum(ops.add(x, b)))
        npt.assert_array_equal(b.grad, [4.0, 4.0, 4.0])

    def test_constant_inputs_get_no_grad(self):
        x = Tensor([1.0, 2.0])
        out = ops.sum(ops.mul(x, x))
        assert out.op is None and not out.requires_grad


class TestTape:
    def test_topological_order(self, rng):
        x = rand_t(rng, 3)
        a = ops.square(x)
        b = ops.exp(x)
        c = ops.mul(a, b)
        loss = ops.sum(ops.add(c, a))
        tape = tape_of(loss)
        produced = set()
        position = {id(rec.output): i for i, rec in enumerate(tape)}
        for i, rec in enumerate(tape):
            for inp in rec.inputs:
                if inp.op is not None:
                    assert position[id(inp)] < i
            produced.add(id(rec.output))
        assert len(position) == len(tape)

    def test_each_op_visited_exactly_once(self, rng):
        x = rand_t(rng, 2)
        shared = ops.exp(x)
        loss = ops.sum(ops.add(ops.mul(shared, shared), shared))
        tape = tape_of(loss)
        counts = {id(rec): 0 for rec in tape}

        for rec in tape:
            original = rec.grad_fn

            def counted(g, _rec_id=id(rec), _orig=original):
                counts[_rec_id] += 1
                return _orig(g)

            rec.grad_fn = counted
        ops.backward(loss)
        assert all(c == 1 for c in counts.values())


def enumerate_path_gradient(leaf, loss):
    """Brute-force oracle: sum over all leaf->loss paths of the product of
    local Jacobian contractions along each path.

    Only valid for graphs of scalar tensors, where each local derivative is
    itself a scalar obtained by perturbation of a single edge.
    """
    paths = []

    def walk(node, acc):
        if node is leaf:
            paths.append(list(acc))
            return
        if node.op is None:
            return
        for slot, parent in enumerate(node.op.inputs):
            acc.append((node, slot))
            walk(parent, acc)
            acc.pop()

    walk(loss, [])
    total = 0.0
    for path in paths:
        prod = 1.0
        for node, slot in path:
            g = node.op.grad_fn(np.ones_like(node.data))[slot]
            prod *= float(g)
        total += prod
    return total


class TestPathSumOracle:
    """backward on a shared-node DAG equals the sum of path-wise gradients."""

    def build_graphs(self, x):
        a = ops.square(x)
        b = ops.exp(x)
        g1 = ops.add(ops.mul(a, b), a)  # two paths through a, one through b

        c = ops.mul(x, x)
        g2 = ops.add(ops.add(c, c), ops.exp(c))  # c reused three times

        d = ops.exp(x)
        e = ops.square(d)
        g3 = ops.mul(d, e)  # diamond: x -> d -> {direct, via e}
        return [g1, g2, g3]

    @pytest.mark.parametrize("x0", [0.3, -0.7, 1.1])
    def test_matches_backward(self, x0):
        x = Tensor(x0, requires_grad=True)
        for loss in self.build_graphs(x):
            x.zero_grad()
            expected = enumerate_path_gradient(x, loss)
            ops.backward(loss)
            npt.assert_allclose(float(x.grad), expected, rtol=1e-12)


class TestRoundTrips:
    def test_reshape_bijection_bitwise(self, rng):
        x = rand_t(rng, 3, 4, grad=False)
        back = ops.reshape(ops.reshape(x, (2, 6)), (3, 4))
        assert np.array_equal(back.data, x.data)

    def test_transpose_bijection_bitwise(self, rng):
        x = rand_t(rng, 5, 2, 3, grad=False)
        back = ops.transpose_last2(ops.transpose_last2(x))
        assert np.array_equal(back.data, x.data)

    def test_permute_inverse(self, rng):
        x = rand_t(rng, 2, 3, 4, grad=False)
        p = ops.permute(x, (2, 0, 1))
        back = ops.permute(p, (1, 2, 0))
        assert np.array_equal(back.data, x.data)

    def test_take_scatter_adjoint(self, rng):
        x = rand_t(rng, 8)
        idx = np.array([[0, 3, 5], [2, 2, 7]])
        y = ops.take(x, idx)
        assert y.shape == (2, 3)
        loss = ops.sum(ops.mul(y, y))
        rep = check_gradients(lambda: ops.sum(ops.mul(ops.take(x, idx), ops.take(x, idx))),
                              {"x": x}, tol=1e-6)
        assert rep.passed, str(rep)
        assert loss.requires_grad


FD_CASES = [
    ("matmul", lambda t: ops.sum(ops.square(ops.matmul(t["a"], t["b"]))),
     {"a": (3, 4), "b": (4, 2)}),
    ("matmul_batched", lambda t: ops.sum(ops.square(ops.matmul(t["a"], t["b"]))),
     {"a": (2, 3, 4), "b": (4, 5)}),
    ("softmax_rows", lambda t: ops.sum(ops.square(ops.softmax_rows(t["x"]))), {"x": (3, 5)}),
    ("layer_norm", lambda t: ops.sum(ops.square(
        ops.layer_norm(t["x"], t["g"], t["b"]))), {"x": (2, 3, 4), "g": (4,), "b": (4,)}),
    ("add", lambda t: ops.sum(ops.square(ops.add(t["a"], t["b"]))), {"a": (3, 4), "b": (4,)}),
    ("sub", lambda t: ops.sum(ops.square(ops.sub(t["a"], t["b"]))), {"a": (3, 4), "b": (3, 4)}),
    ("mul", lambda t: ops.sum(ops.square(ops.mul(t["a"], t["b"]))), {"a": (3, 4), "b": (4,)}),
    ("div", lambda t: ops.sum(ops.square(ops.div(t["a"], t["b"]))), {"a": (3, 4), "b": (3, 4)}),
    ("scale", lambda t: ops.sum(ops.square(ops.scale(t["x"], -1.7))), {"x": (3, 4)}),
    ("neg", lambda t: ops.sum(ops.square(ops.neg(t["x"]))), {"x": (5,)}),
    ("exp", lambda t: ops.sum(ops.square(ops.exp(t["x"]))), {"x": (3, 4)}),
    ("square", lambda t: ops.sum(ops.square(ops.square(t["x"]))), {"x": (3, 4)}),
    ("sigmoid", lambda t: ops.sum(ops.square(ops.sigmoid(t["x"]))), {"x": (3, 4)}),
    ("softplus", lambda t: ops.sum(ops.square(ops.softplus(t["x"]))), {"x": (3, 4)}),
    ("reshape", lambda t: ops.sum(ops.square(ops.reshape(t["x"], (6, 2)))), {"x": (3, 4)}),
    ("transpose_last2", lambda t: ops.sum(ops.square(ops.transpose_last2(t["x"]))), {"x": (3, 4)}),
    ("permute", lambda t: ops.sum(ops.square(ops.permute(t["x"], (1, 2, 0)))), {"x": (2, 3, 4)}),
    ("concat_last", lambda t: ops.sum(ops.square(ops.concat_last([t["a"], t["b"]]))),
     {"a": (3, 2), "b": (3, 4)}),
    ("mean", lambda t: ops.square(ops.mean(t["x"])), {"x": (3, 4)}),
    ("sum_axis", lambda t: ops.sum(ops.square(ops.sum(t["x"], axis=1))), {"x": (3, 4)}),
    ("mean_axis_keepdims", lambda t: ops.sum(ops.square(ops.mean(t["x"], axis=-1, keepdims=True))),
     {"x": (3, 4)}),
]


@pytest.mark.parametrize("name,loss_fn,shapes", FD_CASES, ids=[c[0] for c in FD_CASES])
def test_finite_difference_oracle(name, loss_fn, shapes, rng):
    params = {k: rand_t(rng, *shape) for k, shape in shapes.items()}
    if name == "div":  # keep denominator away from zero
        params["b"].data = np.sign(params["b"].data) * (np.abs(params["b"].data) + 0.5)
    tol = 1e-5 if name == "layer_norm" else 1e-6
    report = check_gradients(lambda: loss_fn(params), params, tol=tol, rng=rng)
    assert report.passed, f"{name}:\n{report}"


def test_kinked_ops_fd_away_from_kinks(rng):
    """relu/abs/clamp_min gradient checks on inputs bounded away from 0."""
    x = Tensor(rng.uniform(0.25, 2.0, (3, 4)) * np.where(rng.random((3, 4)) < 0.5, -1, 1),
               requires_grad=True)
    for fn in (ops.relu, ops.abs_elem, lambda t: ops.clamp_min(t, 0.0)):
        report = check_gradients(lambda: ops.sum(ops.square(fn(x))), {"x": x}, tol=1e-6, rng=rng)
        assert report.passed, str(report)


def test_leaf_grad_buffer_shape_invariant(rng):
    t = rand_t(rng, 4, 5)
    assert t.grad is not None and t.grad.shape == t.data.shape
    const = rand_t(rng, 4, 5, grad=False)
    assert const.grad is None


def test_forward_outputs_finite_on_finite_inputs(rng):
    x = rand_t(rng, 4, 6, grad=False)
    outs = [
        ops.softmax_rows(x), ops.exp(x), ops.sigmoid(x), ops.softplus(x),
        ops.layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6))),
        ops.matmul(x, ops.transpose_last2(x)),
    ]
    for out in outs:
        assert np.all(np.isfinite(out.data))
