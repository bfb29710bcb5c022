# Copyright 2026 British Broadcasting Corporation
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import os
import tempfile
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from hypothesis.strategies import floats, integers

from sdsr.exceptions import (CheckpointError, ContractError, DimensionError, IndexRangeError, NumericError)
from sdsr.numerics import (Tensor, ComputeGraph, no_grad, current_graph, backward, Module, ParameterSet,
                           finite_diff_check, dumps_tensors, loads_tensors, save_tensors, load_tensors)
from sdsr.numerics import ops
from sdsr.numerics.module import check_finite_parameters

GRAD_TOLERANCE = 1e-4
GRAD_SEEDS = 50
# gradients smaller than this are compared absolutely
GRAD_FLOOR = 1e-4


def _param(rng, *shape):
    return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)


class TestGradients(unittest.TestCase):
    """Every analytic backward agrees with central differences"""

    def _check(self, f, params):
        self.assertLess(finite_diff_check(f, params, max_coords=None, floor=GRAD_FLOOR), GRAD_TOLERANCE)

    def _seeded(self, name, make):
        """Run make(rng) -> [(label, f, params)] for every seed and check each case"""
        for seed in range(GRAD_SEEDS):
            for (label, f, params) in make(np.random.default_rng(seed)):
                with self.subTest(suite=name, op=label, seed=seed):
                    self._check(f, params)

    def test_elementwise(self):
        def make(rng):
            a = _param(rng, 3, 4)
            b = _param(rng, 4)
            w = Tensor(rng.normal(size=(3, 4)))
            return [
                ("add", lambda: (ops.add(a, b) * w).sum(), [a, b]),
                ("sub", lambda: (ops.sub(a, b) * w).sum(), [a, b]),
                ("mul", lambda: (ops.mul(a, b) * w).sum(), [a, b]),
                ("neg", lambda: (ops.neg(a) * w).sum(), [a]),
                ("tanh", lambda: (ops.tanh(a) * w).sum(), [a]),
                ("sigmoid", lambda: (ops.sigmoid(a) * w).sum(), [a]),
                ("swish", lambda: (ops.swish(a) * w).sum(), [a]),
                ("exp", lambda: (ops.exp(a) * w).sum(), [a]),
            ]
        self._seeded("elementwise", make)

    def test_log(self):
        def make(rng):
            a = Tensor(rng.uniform(0.5, 2.0, size=(5,)), requires_grad=True)
            return [("log", lambda: (ops.log(a) * Tensor(np.arange(1.0, 6.0))).sum(), [a])]
        self._seeded("log", make)
        with self.assertRaises(NumericError):
            ops.log(Tensor([1.0, 0.0]))

    def test_relu_away_from_the_kink(self):
        def make(rng):
            signs = rng.choice([-1.0, 1.0], size=(2, 3))
            a = Tensor(signs * rng.uniform(0.1, 2.0, size=(2, 3)), requires_grad=True)
            w = Tensor(rng.normal(size=(2, 3)))
            return [("relu", lambda: (ops.relu(a) * w).sum(), [a])]
        self._seeded("relu", make)

    def test_linear_and_matmul(self):
        def make(rng):
            x = _param(rng, 2, 3, 4)
            W = _param(rng, 5, 4)
            b = _param(rng, 5)
            B = _param(rng, 4, 2)
            K = _param(rng, 2, 4, 3)
            w = Tensor(rng.normal(size=(2, 3, 5)))
            return [
                ("linear", lambda: (ops.linear(x, W, b) * w).sum(), [x, W, b]),
                ("linear_nobias", lambda: (ops.linear(x, W) * w).sum(), [x, W]),
                ("matmul_broadcast", lambda: ops.tanh(ops.matmul(x, B)).sum(), [x, B]),
                ("matmul_batched", lambda: ops.tanh(ops.matmul(x, K)).sum(), [x, K]),
            ]
        self._seeded("linear", make)

    def test_reductions_and_shapes(self):
        def make(rng):
            a = _param(rng, 3, 4)
            c = _param(rng, 2, 3, 4)
            w = Tensor(rng.normal(size=(2, 4, 3)))
            return [
                ("sum0", lambda: ops.tanh(ops.reduce_sum(a, 0)).sum(), [a]),
                ("mean1", lambda: ops.tanh(ops.reduce_mean(a, 1)).sum(), [a]),
                ("mean", lambda: ops.tanh(a.mean()), [a]),
                ("reshape", lambda: (a.reshape(2, 6) * Tensor(np.arange(12.0).reshape(2, 6))).sum(), [a]),
                ("transpose", lambda: (a.T * Tensor(np.arange(12.0).reshape(4, 3))).sum(), [a]),
                ("transpose_batched", lambda: (ops.transpose(c) * w).sum(), [c]),
                ("concat", lambda: ops.tanh(ops.concat([a, a * 2.0], axis=0)).sum(), [a]),
                ("stack", lambda: ops.tanh(ops.stack([a[0], a[1] * a[2]])).sum(), [a]),
                ("getitem", lambda: ops.tanh(a[np.array([0, 2, 0]), 1:3]).sum(), [a]),
                ("getitem_gather", lambda: ops.tanh(ops.getitem(a, np.array([[0, 1], [1, 1], [2, 0]]))).sum(), [a]),
            ]
        self._seeded("shapes", make)

    def test_softmax_family(self):
        def make(rng):
            z = _param(rng, 3, 5)
            w = Tensor(rng.normal(size=(3, 5)))
            mask = rng.random((3, 5)) < 0.6
            mask[:, 0] = True
            return [
                ("log_softmax", lambda: (ops.log_softmax(z) * w).sum(), [z]),
                ("softmax", lambda: (ops.softmax(z, axis=0) * w).sum(), [z]),
                ("masked_softmax", lambda: (ops.masked_softmax(z, mask) * w).sum(), [z]),
            ]
        self._seeded("softmax", make)

    def test_layer_norm(self):
        def make(rng):
            x = _param(rng, 3, 6)
            gamma = _param(rng, 6)
            beta = _param(rng, 6)
            w = Tensor(rng.normal(size=(3, 6)))
            return [("layer_norm", lambda: (ops.layer_norm(x, gamma, beta) * w).sum(), [x, gamma, beta])]
        self._seeded("layer_norm", make)

    def test_losses(self):
        def make(rng):
            z = _param(rng, 4, 5)
            t = _param(rng, 4, 5)
            z3 = _param(rng, 2, 3, 5)
            y = rng.integers(0, 5, size=4)
            y3 = rng.integers(0, 5, size=(2, 3))
            return [
                ("cross_entropy", lambda: ops.cross_entropy(z, y), [z]),
                ("cross_entropy_3d", lambda: ops.cross_entropy(z3, y3), [z3]),
                ("kl", lambda: ops.kl_divergence(ops.log_softmax(t), ops.log_softmax(z)), [t]),
                ("kl_both", lambda: ops.kl_divergence(ops.log_softmax(t), ops.log_softmax(z), detach_target=False),
                 [t, z]),
            ]
        self._seeded("losses", make)


class TestOps(unittest.TestCase):
    def test_values(self):
        tests = [
            (ops.add([1.0, 2.0], 3.0), [4.0, 5.0]),
            (ops.mul([[1.0], [2.0]], [3.0, 4.0]), [[3.0, 4.0], [6.0, 8.0]]),
            (ops.linear([1.0, 2.0], Tensor([[1.0, 1.0], [0.0, 1.0]]), Tensor([0.5, -0.5])), [3.5, 1.5]),
            (ops.relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0]),
            (ops.sigmoid([0.0]), [0.5]),
            (ops.softmax([0.0, 0.0]), [0.5, 0.5]),
            (ops.masked_softmax([5.0, 1.0, 1.0], np.array([False, True, True])), [0.0, 0.5, 0.5]),
            (ops.cross_entropy([[0.0, 0.0]], [1]), np.log(2.0)),
        ]
        for (n, (t, expected)) in enumerate(tests):
            with self.subTest(n=n):
                np.testing.assert_allclose(t.values, expected, rtol=0, atol=1e-12)

    def test_kl_is_zero_for_equal_distributions(self):
        ls = ops.log_softmax(Tensor([[0.2, -1.0, 3.0]]))
        self.assertAlmostEqual(ops.kl_divergence(ls, ls).item(), 0.0, places=12)

    def test_cross_entropy_flattens_leading_axes(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(2, 3, 4, 5))
        y = rng.integers(0, 5, size=(2, 3, 4))
        flat = ops.cross_entropy(z.reshape(-1, 5), y.reshape(-1)).item()
        self.assertAlmostEqual(ops.cross_entropy(z, y).item(), flat, places=12)
        self.assertAlmostEqual(ops.cross_entropy(z, y.reshape(-1)).item(), flat, places=12)
        self.assertAlmostEqual(ops.cross_entropy(z[0, 0, 0], int(y[0, 0, 0])).item(),
                               ops.cross_entropy(z[0, 0, :1], y[0, 0, :1]).item(), places=12)
        with self.assertRaises(DimensionError):
            ops.cross_entropy(z, y[:, :2])
        with self.assertRaises(DimensionError):
            ops.cross_entropy(z, y.reshape(3, 2, 4))

    def test_softmax_logsoftmax_agree(self):
        z = Tensor([[1000.0, 0.0], [0.2, -1.0]])
        (p, lp) = ops.softmax_logsoftmax(z)
        np.testing.assert_allclose(p.values.sum(axis=-1), [1.0, 1.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(np.exp(lp.values), p.values, rtol=0, atol=1e-12)
        self.assertEqual(p.values[0, 0], 1.0)
        self.assertTrue(np.all(np.isfinite(lp.values)))

    def test_errors(self):
        tests = [
            (DimensionError, lambda: ops.add(np.zeros((2, 3)), np.zeros((4,)))),
            (DimensionError, lambda: ops.matmul(np.zeros((2, 3)), np.zeros((2, 3)))),
            (DimensionError, lambda: ops.linear(np.zeros((3,)), Tensor(np.zeros((2, 4))))),
            (DimensionError, lambda: ops.reshape(np.zeros((2, 3)), (4,))),
            (NumericError, lambda: ops.log_softmax([1.0, np.inf])),
            (NumericError, lambda: ops.log_softmax([np.nan, 0.0])),
            (ContractError, lambda: ops.masked_softmax([1.0, 2.0], np.array([False, False]))),
            (IndexRangeError, lambda: ops.cross_entropy([[0.0, 0.0]], [2])),
            (IndexRangeError, lambda: ops.getitem(np.zeros(3), 5)),
            (ContractError, lambda: ops.reduce_mean(np.zeros((0,)))),
        ]
        for (n, (exc, f)) in enumerate(tests):
            with self.subTest(n=n):
                with self.assertRaises(exc):
                    f()

    def test_dimension_error_names_shapes(self):
        with self.assertRaises(DimensionError) as cm:
            ops.linear(np.zeros((3,)), Tensor(np.zeros((2, 4))))
        self.assertEqual(cm.exception.shapes, ((3,), (2, 4)))

    @given(arrays(np.float64, (3, 4), elements=floats(-50.0, 50.0)))
    def test_log_softmax_rows_normalise(self, z):
        p = np.exp(ops.log_softmax(z).values)
        np.testing.assert_allclose(p.sum(axis=-1), np.ones(3), rtol=0, atol=1e-12)


class TestGraph(unittest.TestCase):
    def test_nothing_recorded_outside_a_graph(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        y = (a * 3.0).sum()
        self.assertFalse(y.requires_grad)
        self.assertIsNone(current_graph())
        with self.assertRaises(ContractError):
            backward(y)

    def test_leaf_gradients_accumulate(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        for _ in range(2):
            with ComputeGraph() as graph:
                graph.backward((a * a).sum())
        np.testing.assert_array_equal(a.grad, [4.0, 8.0])
        a.zero_grad()
        np.testing.assert_array_equal(a.grad, [0.0, 0.0])

    def test_backward_twice_is_rejected(self):
        a = Tensor([1.0], requires_grad=True)
        with ComputeGraph() as graph:
            loss = (a * 2.0).sum()
            graph.backward(loss)
            with self.assertRaises(ContractError):
                graph.backward(loss)

    def test_non_scalar_loss_is_rejected(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with ComputeGraph() as graph:
            with self.assertRaises(ContractError):
                graph.backward(a * 2.0)

    def test_no_grad_suspends_recording(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        with ComputeGraph() as graph:
            with no_grad():
                self.assertIsNone(current_graph())
                b = a * 2.0
            self.assertIs(current_graph(), graph)
            loss = (a * b).sum()
            graph.backward(loss)
        self.assertFalse(b.requires_grad)
        np.testing.assert_array_equal(a.grad, [2.0, 4.0])

    def test_detach_blocks_gradient(self):
        a = Tensor([3.0], requires_grad=True)
        with ComputeGraph() as graph:
            graph.backward((a * a.detach()).sum())
        np.testing.assert_array_equal(a.grad, [3.0])

    def test_ops_are_recorded_in_order(self):
        a = Tensor([1.0], requires_grad=True)
        with ComputeGraph() as graph:
            ops.tanh(ops.exp(a)).sum()
        self.assertEqual(graph.ops, ["exp", "tanh", "sum"])


class _Pair(Module):
    def __init__(self):
        super().__init__()
        self.w = self.param("weight", np.ones((2, 3)))
        self.inner = self.child("inner", _Leaf())


class _Leaf(Module):
    def __init__(self):
        super().__init__()
        self.b = self.param("bias", np.zeros(3))

    def macs_per_frame(self):
        return 3


class TestModule(unittest.TestCase):
    def test_names_and_counts(self):
        m = _Pair()
        self.assertEqual(m.parameters().names(), ("weight", "inner.bias"))
        self.assertEqual(m.parameters("model.").names(), ("model.weight", "model.inner.bias"))
        self.assertEqual(m.num_parameters(), 9)
        self.assertEqual(m.macs_per_frame(), 3)
        self.assertEqual(m.parameters().select("inner.").names(), ("inner.bias",))

    def test_sgd_step_respects_frozen_names(self):
        m = _Pair()
        params = m.parameters()
        params["weight"].grad = np.ones((2, 3))
        params["inner.bias"].grad = np.ones(3)
        params.sgd_step(0.5, frozen=frozenset(["inner.bias"]))
        np.testing.assert_array_equal(m.w.values, np.full((2, 3), 0.5))
        np.testing.assert_array_equal(m.inner.b.values, np.zeros(3))

    def test_sgd_step_clips(self):
        m = _Leaf()
        m.b.grad = np.array([3.0, 4.0, 0.0])
        m.parameters().sgd_step(1.0, clip_norm=1.0)
        np.testing.assert_allclose(m.b.values, [-0.6, -0.8, 0.0], rtol=0, atol=1e-15)

    def test_sgd_step_rejects_non_finite_gradients(self):
        m = _Leaf()
        m.b.grad = np.array([np.nan, 0.0, 0.0])
        with self.assertRaises(NumericError):
            m.parameters().sgd_step(1.0)
        np.testing.assert_array_equal(m.b.values, np.zeros(3))

    def test_load_state(self):
        a, b = _Pair(), _Pair()
        a.w.values[...] = 7.0
        b.load_state(a.state())
        np.testing.assert_array_equal(b.w.values, a.w.values)
        with self.assertRaises(CheckpointError):
            b.load_state({"weight": np.zeros((2, 3))})
        with self.assertRaises(DimensionError):
            b.load_state({"weight": np.zeros((3, 2)), "inner.bias": np.zeros(3)})
        b.load_state({"weight": np.zeros((2, 3))}, strict=False)
        np.testing.assert_array_equal(b.w.values, np.zeros((2, 3)))

    def test_check_finite_parameters(self):
        m = _Pair()
        check_finite_parameters(m.parameters())
        m.inner.b.values[1] = np.inf
        with self.assertRaises(NumericError):
            check_finite_parameters(m.parameters())


class TestCheckpoint(unittest.TestCase):
    def test_save_and_load_are_bit_exact(self):
        rng = np.random.default_rng(3)
        tensors = {"a.weight": rng.normal(size=(3, 4)), "b": np.array(np.pi), "c": np.zeros((0, 2)),
                   "tiny": np.array([5e-324, -0.0, 1.0 / 3.0])}
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "params.sdsr")
            save_tensors(path, tensors)
            loaded = load_tensors(path)
        self.assertEqual(list(loaded), list(tensors))
        for name, values in tensors.items():
            with self.subTest(name=name):
                self.assertEqual(loaded[name].shape, values.shape)
                self.assertEqual(loaded[name].tobytes(), np.asarray(values, dtype=np.float64).tobytes())

    def test_corrupt_containers(self):
        good = dumps_tensors({"w": np.ones((2, 2))})
        tests = [
            ("empty", b""),
            ("magic", b"XXXX" + good[4:]),
            ("version", good[:4] + b"\x09\x00\x00\x00" + good[8:]),
            ("truncated", good[:-3]),
            ("repeated", good + good[8:]),
        ]
        for (name, data) in tests:
            with self.subTest(case=name):
                with self.assertRaises(CheckpointError):
                    loads_tensors(data)

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_tensors("/nonexistent/params.sdsr")

    @settings(max_examples=25)
    @given(integers(min_value=0, max_value=3), integers(min_value=0, max_value=2 ** 32 - 1))
    def test_arbitrary_tensors(self, rank, seed):
        rng = np.random.default_rng(seed)
        values = rng.normal(size=tuple(int(n) for n in rng.integers(1, 4, size=rank)))
        loaded = loads_tensors(dumps_tensors({"x": values}))["x"]
        self.assertEqual(loaded.tobytes(), np.asarray(values).tobytes())


class TestParameterSet(unittest.TestCase):
    def test_mapping(self):
        t = Tensor([1.0], requires_grad=True)
        ps = ParameterSet([("x", t)])
        self.assertIn("x", ps)
        self.assertIs(ps["x"], t)
        self.assertEqual(len(ps), 1)
        self.assertEqual(ps.count(), 1)
