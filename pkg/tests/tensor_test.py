"""Unittests for lendscreen_tensor.py

Usage:
  python -m unittest tests.tensor_test
"""

import math
import unittest

import numpy as np
from numpy import testing

from lendscreen import lendscreen_tensor as lt
from lendscreen.lendscreen_errors import LendScreenError, ShapeError


def random_tensor(rng, *shape, positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return lt.Tensor(data, requires_grad=True)


def weighted(out, weights):
    return (out * weights).sum()


class TensorOpsTestCase(unittest.TestCase):

    def test_matmul_values(self):
        a = lt.Tensor([[1.0, 2.0], [3.0, 4.0]])
        testing.assert_array_equal(lt.matmul(a, np.eye(2)).data,
                                   [[1.0, 2.0], [3.0, 4.0]])
        product = lt.matmul(lt.Tensor([[1.0, 2.0]]), lt.Tensor([[3.0], [4.0]]))
        testing.assert_array_equal(product.data, [[11.0]])

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(ShapeError) as context:
            lt.matmul(lt.Tensor(np.ones((2, 3))), lt.Tensor(np.ones((2, 3))))
        self.assertIn('(2, 3) vs (2, 3)', str(context.exception))

    def test_matmul_gradient(self):
        rng = np.random.default_rng(0)
        a, b = random_tensor(rng, 3, 4), random_tensor(rng, 4, 2)
        self.assertLessEqual(lt.gradcheck(lambda: lt.matmul(a, b).sum(), [a, b]),
                             1e-5)

    def test_softmax_values(self):
        testing.assert_allclose(lt.softmax(lt.Tensor([0.0, 0.0])).data,
                                [0.5, 0.5])
        testing.assert_allclose(lt.softmax(lt.Tensor([math.log(2.0), 0.0])).data,
                                [2.0 / 3.0, 1.0 / 3.0])
        large = lt.softmax(lt.Tensor([1000.0, 0.0])).data
        self.assertTrue(np.all(np.isfinite(large)))
        self.assertAlmostEqual(large[0], 1.0)
        self.assertAlmostEqual(large[1], 0.0)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(1)
        for scale in (1.0, 1e3):
            x = lt.Tensor(scale * rng.standard_normal((5, 7)))
            for axis in (0, 1):
                totals = lt.softmax(x, axis=axis).data.sum(axis=axis)
                testing.assert_allclose(totals, 1.0, atol=1e-9)

    def test_layer_norm(self):
        row = lt.layer_norm(lt.Tensor([[5.0, 5.0, 5.0, 5.0]]), np.ones(4),
                            np.zeros(4))
        testing.assert_array_equal(row.data, np.zeros((1, 4)))

        rng = np.random.default_rng(2)
        normed = lt.layer_norm(lt.Tensor(rng.standard_normal((6, 8)) * 3 + 1),
                               np.ones(8), np.zeros(8))
        testing.assert_allclose(normed.data.mean(axis=-1), 0.0, atol=1e-9)

    def test_dropout(self):
        x = lt.Tensor([1.0, -2.0, 3.0, 4.0])
        keep_all = lt.DropoutMask.sample(7, x.shape, 1.0)
        testing.assert_array_equal(lt.dropout(x, keep_all, True).data, x.data)

        half = lt.DropoutMask.sample(7, x.shape, 0.5)
        testing.assert_array_equal(lt.dropout(x, half, False).data, x.data)

        forced = lt.DropoutMask(0.5, np.array([2.0, 0.0, 0.0, 2.0]), 0)
        out = lt.dropout(x, forced, True).data
        self.assertEqual(out[0], 2.0 * x.data[0])
        self.assertEqual(out[1], 0.0)

        self.assertRaises(ShapeError, lambda: lt.dropout(
            x, lt.DropoutMask.sample(7, (3,), 0.5), True))

    def test_dropout_mask_reproducible(self):
        first = lt.DropoutMask.sample(123, (8, 8), 0.9)
        second = lt.DropoutMask.sample(123, (8, 8), 0.9)
        other = lt.DropoutMask.sample(124, (8, 8), 0.9)
        testing.assert_array_equal(first.mask, second.mask)
        self.assertFalse(np.array_equal(first.mask, other.mask))
        self.assertTrue(np.all((first.mask == 0.0) | (first.mask == 1.0 / 0.9)))

        x = lt.Tensor(np.arange(64.0).reshape(8, 8))
        testing.assert_array_equal(lt.dropout(x, first, True).data,
                                   lt.dropout(x, first, True).data)

    def test_embedding_lookup(self):
        table = lt.Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]],
                          requires_grad=True)
        testing.assert_array_equal(lt.embedding_lookup(table, 0).data,
                                   [1.0, 2.0, 3.0])

        lt.backward(lt.embedding_lookup(table, [1, 1]).sum())
        testing.assert_array_equal(table.grad[1], [2.0, 2.0, 2.0])
        testing.assert_array_equal(table.grad[0], [0.0, 0.0, 0.0])
        testing.assert_array_equal(table.grad[2], [0.0, 0.0, 0.0])

        self.assertRaises(LendScreenError,
                          lambda: lt.embedding_lookup(table, 3))
        self.assertRaises(LendScreenError,
                          lambda: lt.embedding_lookup(table, -1))

    def test_cosine_similarity(self):
        v = lt.Tensor([1.0, 2.0, -3.0])
        self.assertAlmostEqual(lt.cosine_similarity(v, v).item(), 1.0)
        self.assertAlmostEqual(lt.cosine_similarity(v, -v).item(), -1.0)
        self.assertAlmostEqual(lt.cosine_similarity(
            lt.Tensor([1.0, 0.0]), lt.Tensor([0.0, 1.0])).item(), 0.0)
        self.assertRaises(LendScreenError, lambda: lt.cosine_similarity(
            v, lt.Tensor([0.0, 0.0, 0.0])))

    def test_grad_reverse(self):
        x = lt.Tensor([3.5, -2.0], requires_grad=True)
        testing.assert_array_equal(lt.grad_reverse(x).data, [3.5, -2.0])

        upstream = np.array([0.25, -4.0])
        for lam in (0.0, 0.5, 1.0):
            x.zero_grad()
            lt.backward((lt.grad_reverse(x, lam) * upstream).sum())
            reference = lt.Tensor([3.5, -2.0], requires_grad=True)
            lt.backward((reference * upstream).sum())
            testing.assert_array_equal(x.grad, -lam * reference.grad)

        x.zero_grad()
        lt.backward((lt.grad_reverse(lt.grad_reverse(x)) * upstream).sum())
        testing.assert_array_equal(x.grad, upstream)

    def test_backward(self):
        x = lt.Tensor([1.0, 2.0], requires_grad=True)
        lt.backward(x.sum())
        testing.assert_array_equal(x.grad, [1.0, 1.0])

        x.zero_grad()
        lt.backward((x * x).sum())
        testing.assert_array_equal(x.grad, [2.0, 4.0])

        self.assertRaises(ShapeError, lambda: lt.backward(x * x))
        self.assertRaises(LendScreenError,
                          lambda: lt.backward(lt.Tensor([1.0]).sum()))

    def test_fan_out_accumulates(self):
        x = lt.Tensor([3.0], requires_grad=True)
        y = x * 2.0
        lt.backward((y + y + x).sum())
        testing.assert_array_equal(x.grad, [5.0])

    def test_tape_order_and_clear(self):
        x = lt.Tensor([1.0, 2.0], requires_grad=True)
        loss = lt.exp(x * 3.0).sum()
        tape = lt.Tape.from_output(loss)
        sequence = [node.seq for node in tape.nodes]
        self.assertEqual(sequence, sorted(sequence))
        self.assertEqual([node.op_kind for node in tape.nodes],
                         ['mul', 'exp', 'sum'])
        lt.backward(loss)
        self.assertIsNone(loss._node)

    def test_no_grad(self):
        x = lt.Tensor([1.0], requires_grad=True)
        with lt.no_grad():
            y = x * 2.0
        self.assertFalse(y.requires_grad)
        self.assertIsNone(y._node)
        self.assertTrue((x * 2.0).requires_grad)


class GradientCheckTestCase(unittest.TestCase):
    """Central differences against every differentiable operation."""

    def _check(self, build, seeds=range(20), tolerance=1e-4):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            inputs, fn = build(rng)
            error = lt.gradcheck(fn, inputs)
            self.assertLessEqual(error, tolerance, f"seed {seed}: {error}")

    def test_elementwise(self):
        unary = [lt.exp, lt.tanh, lt.sigmoid, lt.relu, lt.neg]

        def build(rng):
            x = random_tensor(rng, 3, 4)
            w = rng.standard_normal((3, 4))
            return [x], lambda: sum((weighted(op(x), w) for op in unary),
                                    lt.Tensor(0.0))

        self._check(build)

    def test_positive_domain(self):
        def build(rng):
            x = random_tensor(rng, 3, 4, positive=True)
            w = rng.standard_normal((3, 4))
            return [x], lambda: weighted(lt.log(x), w) + weighted(lt.sqrt(x), w)

        self._check(build)

    def test_broadcast_arithmetic(self):
        def build(rng):
            a = random_tensor(rng, 3, 4)
            b = random_tensor(rng, 4)
            c = random_tensor(rng, 3, 1, positive=True)
            w = rng.standard_normal((3, 4))
            return [a, b, c], lambda: weighted((a + b) * a - b / c, w)

        self._check(build)

    def test_softmax_family(self):
        def build(rng):
            x = random_tensor(rng, 2, 5)
            w = rng.standard_normal((2, 5))
            return [x], lambda: (weighted(lt.softmax(x, axis=-1), w)
                                 + weighted(lt.log_softmax(x, axis=0), w))

        self._check(build)

    def test_layer_norm(self):
        def build(rng):
            x = random_tensor(rng, 3, 6)
            gain = random_tensor(rng, 6)
            bias = random_tensor(rng, 6)
            w = rng.standard_normal((3, 6))
            return [x, gain, bias], lambda: weighted(lt.layer_norm(x, gain, bias),
                                                     w)

        self._check(build)

    def test_shape_operations(self):
        def build(rng):
            x = random_tensor(rng, 2, 3, 4)
            y = random_tensor(rng, 2, 3, 4)
            w = rng.standard_normal((4, 3, 2))
            indices = np.array([[[1], [0], [3]], [[2], [2], [0]]])

            def fn():
                joined = lt.concat([x, y], axis=1)[:, 1:4, :]
                stacked = lt.stack([x, y], axis=0).sum(axis=0)
                moved = lt.transpose(joined + stacked).reshape(4, 3, 2)
                picked = lt.take_along_axis(x, indices, axis=-1).sum()
                return weighted(moved, w) + picked + x.mean(axis=(0, 2)).sum()

            return [x, y], fn

        self._check(build)

    def test_batched_matmul_and_masking(self):
        def build(rng):
            a = random_tensor(rng, 2, 3, 4)
            b = random_tensor(rng, 4, 3)
            mask = rng.random((2, 3, 3)) < 0.3
            w = rng.standard_normal((2, 3, 3))
            return [a, b], lambda: weighted(
                lt.masked_fill(lt.matmul(a, b), mask, 0.0), w)

        self._check(build)

    def test_lookup_and_dropout(self):
        def build(rng):
            table = random_tensor(rng, 5, 3)
            mask = lt.DropoutMask.sample(int(rng.integers(1 << 30)), (4, 3), 0.8)
            w = rng.standard_normal((4, 3))

            def fn():
                rows = lt.embedding_lookup(table, [0, 2, 2, 4])
                return weighted(lt.dropout(rows, mask, True), w)

            return [table], fn

        self._check(build)

    def test_cosine_similarity(self):
        def build(rng):
            u, v = random_tensor(rng, 5), random_tensor(rng, 5)
            return [u, v], lambda: lt.cosine_similarity(u, v)

        self._check(build)
