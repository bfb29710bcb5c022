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

import unittest

import numpy as np
from hypothesis import given
from hypothesis.strategies import floats

from sdsr.adaptor import Adaptor, StreamingAdaptor, frame_align, fuse, lambda_of, project_implicit, switch_glu
from sdsr.config import AdaptorConfig, AdaptorMode
from sdsr.exceptions import ContractError, DimensionError
from sdsr.numerics import Tensor, ComputeGraph, linear
from sdsr.transducer import AlignmentEntry, JointLattice

from tests.fixtures import VOCAB, frames, small_bundle

ENCODER_DIM = 3


def make_adaptor(mode: str, seed: int = 0, lambda_init_logit: float = 0.0) -> Adaptor:
    cfg = AdaptorConfig(adaptor_dim=VOCAB, gate_dim=6, mode=mode, lambda_init_logit=lambda_init_logit)
    return Adaptor(cfg, VOCAB, ENCODER_DIM, np.random.default_rng(seed))


def numbered_lattice(T: int, U: int) -> JointLattice:
    """Logits whose entry [t, u, v] is 100 t + 10 u + v"""
    t, u, v = np.meshgrid(np.arange(T), np.arange(U + 1), np.arange(VOCAB), indexing="ij")
    return JointLattice(Tensor(100.0 * t + 10.0 * u + v))


class TestFrameAlignment(unittest.TestCase):
    def test_reads_the_next_frame_at_the_label_position_left_behind(self):
        adaptor = make_adaptor(AdaptorMode.EXPLICIT)
        adaptor.W_exp.values[...] = np.eye(VOCAB)
        lat = numbered_lattice(4, 2)
        path = (AlignmentEntry(0, 3, 0), AlignmentEntry(1, 0, 1), AlignmentEntry(2, 2, 1), AlignmentEntry(3, 0, 2))
        out = adaptor(lat, path, np.zeros((4, ENCODER_DIM)))
        # frame 3 is the last, so it reads itself
        expected_rows = [(1, 1), (2, 1), (3, 2), (3, 2)]
        for t, (row, col) in enumerate(expected_rows):
            with self.subTest(t=t):
                np.testing.assert_array_equal(out.h_exp.values[t], lat.logits.values[row, col])
        np.testing.assert_array_equal(out.h_apt.values, out.h_exp.values)

    def test_frame_align_and_project_implicit(self):
        lat = numbered_lattice(3, 1)
        path = (AlignmentEntry(0, 1, 0), AlignmentEntry(1, 0, 1), AlignmentEntry(2, 0, 1))
        h_exp = frame_align(lat, path, Tensor(np.eye(VOCAB)))
        np.testing.assert_array_equal(h_exp.values, lat.logits.values[[1, 2, 2], [1, 1, 1]])

        W = np.arange(2.0 * ENCODER_DIM).reshape(2, ENCODER_DIM)
        h_imp = project_implicit(np.ones((3, ENCODER_DIM)), Tensor(W), None)
        np.testing.assert_array_equal(h_imp.values, np.tile(W.sum(axis=1), (3, 1)))

    def test_single_frame(self):
        adaptor = make_adaptor(AdaptorMode.FUSION_GATED)
        lat = numbered_lattice(1, 0)
        out = adaptor(lat, (AlignmentEntry(0, 0, 0),), np.ones((1, ENCODER_DIM)))
        self.assertEqual(out.h_apt.shape, (1, VOCAB))
        self.assertEqual(len(out.frames()), 1)

    def test_errors(self):
        adaptor = make_adaptor(AdaptorMode.FUSION_GATED)
        lat = numbered_lattice(2, 1)
        path = (AlignmentEntry(0, 1, 0), AlignmentEntry(1, 0, 1))
        with self.assertRaises(DimensionError):
            adaptor(lat, path, np.zeros((3, ENCODER_DIM)))
        with self.assertRaises(ContractError):
            adaptor(lat, path[:1], np.zeros((2, ENCODER_DIM)))
        with self.assertRaises(ContractError):
            adaptor(lat, (AlignmentEntry(0, 1, 0), AlignmentEntry(1, 2, 1)), np.zeros((2, ENCODER_DIM)))


class TestModes(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(4)
        self.lat = JointLattice(Tensor(rng.normal(size=(3, 2, VOCAB))))
        self.path = (AlignmentEntry(0, 0, 0), AlignmentEntry(1, 2, 0), AlignmentEntry(2, 0, 1))
        self.h_enc = rng.normal(size=(3, ENCODER_DIM))

    def test_reductions(self):
        for mode in AdaptorMode.ALL:
            with self.subTest(mode=mode):
                a = make_adaptor(mode, lambda_init_logit=0.3)
                out = a(self.lat, self.path, self.h_enc)
                h_imp = linear(self.h_enc, a.implicit.weight, a.implicit.bias)
                if mode == AdaptorMode.FUSION:
                    gated = linear(h_imp, a.value.weight, a.value.bias).values
                else:
                    gated = switch_glu(h_imp, a.gate.weight, a.gate.bias, a.value.weight, a.value.bias).values
                np.testing.assert_allclose(out.h_imp_gated.values, gated, rtol=0, atol=1e-14)
                lam = {AdaptorMode.EXPLICIT: 1.0, AdaptorMode.IMPLICIT: 0.0}.get(mode, 1.0 / (1.0 + np.exp(-0.3)))
                self.assertAlmostEqual(a.lam, lam, places=14)
                np.testing.assert_allclose(out.h_apt.values, lam * out.h_exp.values + (1 - lam) * gated,
                                           rtol=0, atol=1e-12)

    def test_lambda_starts_at_one_half(self):
        self.assertAlmostEqual(make_adaptor(AdaptorMode.FUSION_GATED).lam, 0.5, places=15)

    def test_lambda_is_trained(self):
        a = make_adaptor(AdaptorMode.FUSION_GATED)
        with ComputeGraph() as graph:
            graph.backward(a(self.lat, self.path, self.h_enc).h_apt.sum())
        self.assertNotEqual(float(a.lambda_logit.grad), 0.0)
        self.assertTrue(np.any(a.W_exp.grad != 0.0))
        self.assertTrue(np.any(a.gate.weight.grad != 0.0))

    def test_implicit_mode_needs_no_lattice_gradient(self):
        a = make_adaptor(AdaptorMode.IMPLICIT)
        with ComputeGraph() as graph:
            graph.backward(a(self.lat, self.path, self.h_enc).h_apt.sum())
        np.testing.assert_array_equal(a.W_exp.grad, 0.0)

    @given(floats(-30.0, 30.0))
    def test_fuse_is_convex(self, logit):
        h_exp = np.array([1.0, -2.0])
        h_gated = np.array([3.0, 2.0])
        out = fuse(h_exp, h_gated, logit).values
        lam = lambda_of(logit).values
        self.assertTrue(0.0 <= lam <= 1.0)
        np.testing.assert_allclose(out, lam * h_exp + (1.0 - lam) * h_gated, rtol=0, atol=1e-12)

    def test_fuse_shapes(self):
        with self.assertRaises(DimensionError):
            fuse(np.zeros(2), np.zeros(3), 0.0)

    def test_switch_glu_gates_into_the_unit_interval(self):
        rng = np.random.default_rng(2)
        W = Tensor(np.eye(2))
        zero = Tensor(np.zeros(2))
        h = rng.normal(size=(4, 2))
        out = switch_glu(h, W, zero, W, zero).values
        self.assertTrue(np.all(np.abs(out) <= np.abs(h)))


class TestStreamingAdaptor(unittest.TestCase):
    def test_matches_whole_utterance_adaptor(self):
        bundle = small_bundle()
        transducer, adaptor = bundle.transducer, bundle.adaptor
        for T in (1, 2, 7):
            with self.subTest(T=T):
                x = frames(T, seed=T)
                h_enc = transducer.encode(x)
                tokens, path = transducer.greedy_from_encoding(h_enc.values)
                offline = adaptor(transducer.lattice(h_enc, tokens), path, h_enc).h_apt.values

                streaming = StreamingAdaptor(adaptor)
                state = transducer.start_stream()
                released = []
                for t in range(T):
                    _, _, state = transducer.stream_decode_step(x[t], state)
                    out = streaming.push(state)
                    self.assertEqual(out is None, t == 0)
                    self.assertEqual(streaming.buffered, 1)
                    if out is not None:
                        released.append(out)
                released.append(streaming.flush(transducer, state))
                self.assertEqual(streaming.buffered, 0)
                self.assertIsNone(streaming.flush(transducer, state))

                self.assertEqual([f.t for f in released], list(range(T)))
                np.testing.assert_allclose(np.stack([f.h_apt for f in released]), offline, rtol=0, atol=1e-9)
