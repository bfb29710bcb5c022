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

import csv
import os
import tempfile
import unittest
from dataclasses import replace

import numpy as np

from sdsr.config import RunConfig, TrainConfig
from sdsr.corpus import DYSARTHRIC, NORMAL, gen_corpus
from sdsr.exceptions import ConfigError, ContractError, DivergenceError
from sdsr.metrics import sign_test
from sdsr.numerics import ComputeGraph
from sdsr.training import (LOG_FIELDS, balanced_batch, build_models, evaluate, evaluate_corpus, frozen_set,
                           stage1_loss, stage1_train, stage2_finetune, write_train_log)

from .fixtures import HOP, slow, small_config

CFG = small_config()


def setup_models(seed=None):
    corpus = gen_corpus(CFG.corpus, CFG.quantizer, HOP)
    return corpus, build_models(CFG, corpus.codebook, seed)


class TestLosses(unittest.TestCase):
    def test_decoder_loss_reaches_the_encoder(self):
        corpus, bundle = setup_models()
        cfg = replace(CFG.train, rnnt_weight=0.0)
        params = bundle.parameters()
        params.zero_grad()
        with ComputeGraph() as graph:
            loss = stage1_loss(bundle, corpus.normal[0], cfg)
            graph.backward(loss.total)
        self.assertGreater(loss.ce.item(), 0.0)
        for prefix in ("transducer.encoder.", "adaptor.", "waitk."):
            with self.subTest(prefix=prefix):
                grads = [t.grad for (_, t) in params.select(prefix).items()]
                self.assertTrue(any(g is not None and np.any(g != 0) for g in grads))

    def test_weights_mix_the_parts(self):
        corpus, bundle = setup_models()
        utt = corpus.normal[1]
        both = stage1_loss(bundle, utt, CFG.train)
        rnnt_only = stage1_loss(bundle, utt, replace(CFG.train, tts_weight=0.0))
        self.assertAlmostEqual(rnnt_only.total.item(), both.rnnt.item(), places=10)
        self.assertGreaterEqual(both.kd.item(), -1e-12)
        expected = both.rnnt.item() + (1 - CFG.waitk.alpha) * both.ce.item() + CFG.waitk.alpha * both.kd.item()
        self.assertAlmostEqual(both.total.item(), expected, places=10)


class TestStage1(unittest.TestCase):
    def test_zero_learning_rate_changes_nothing(self):
        corpus, bundle = setup_models()
        before = bundle.parameters().state()
        result = stage1_train(bundle, corpus.variant(NORMAL, held_out=False), replace(CFG.train, learning_rate=0.0))
        self.assertEqual(len(result.log), CFG.train.steps)
        for (name, values) in result.bundle.parameters().state().items():
            with self.subTest(name=name):
                np.testing.assert_array_equal(values, before[name])

    def test_training_moves_every_component(self):
        corpus, bundle = setup_models()
        before = bundle.parameters().state()
        stage1_train(bundle, corpus.variant(NORMAL, held_out=False), CFG.train, seed=4)
        after = bundle.parameters().state()
        for prefix in ("transducer.", "adaptor.", "waitk."):
            with self.subTest(prefix=prefix):
                self.assertTrue(any(not np.array_equal(after[n], before[n]) for n in after if n.startswith(prefix)))

    def test_frozen_prefixes_stay_put(self):
        corpus, bundle = setup_models()
        before = bundle.parameters().state()
        stage1_train(bundle, corpus.normal[:4], replace(CFG.train, frozen=("waitk.",)))
        for (name, values) in bundle.parameters().state().items():
            if name.startswith("waitk."):
                with self.subTest(name=name):
                    np.testing.assert_array_equal(values, before[name])

    def test_deterministic_in_the_seed(self):
        runs = []
        for _ in range(2):
            corpus, bundle = setup_models()
            runs.append(stage1_train(bundle, corpus.normal, CFG.train, seed=7).log)
        self.assertEqual(runs[0], runs[1])

    def test_errors(self):
        corpus, bundle = setup_models()
        with self.assertRaises(ContractError):
            stage1_train(bundle, corpus.normal, replace(CFG.train, stage=2))
        with self.assertRaises(ContractError):
            stage1_train(bundle, [], CFG.train)

    @slow
    def test_loss_goes_down(self):
        corpus, bundle = setup_models()
        cfg = replace(CFG.train, steps=200, learning_rate=0.05, batch_size=4)
        log = stage1_train(bundle, corpus.variant(NORMAL, held_out=False), cfg, seed=1).log
        self.assertEqual(len(log), 200)
        blocks = [np.mean([r.total for r in log[i:i + 50]]) for i in range(0, 200, 50)]
        self.assertLess(blocks[-1], blocks[0])
        self.assertLess(blocks[-1], blocks[1])


class TestStage2(unittest.TestCase):
    def test_only_the_transducer_moves(self):
        corpus, bundle = setup_models()
        before = bundle.parameters().state()
        result = stage2_finetune(bundle, corpus, replace(CFG.train, stage=2, learning_rate=0.05))
        after = bundle.parameters().state()
        for name in after:
            if not name.startswith("transducer."):
                with self.subTest(name=name):
                    np.testing.assert_array_equal(after[name], before[name])
        self.assertTrue(any(not np.array_equal(after[n], before[n]) for n in after if n.startswith("transducer.")))
        self.assertTrue(all(r.ce_loss == 0.0 and r.kd_loss == 0.0 for r in result.log))
        for row in result.log:
            self.assertAlmostEqual(row.total, row.rnnt_loss, places=12)

    def test_divergence(self):
        corpus, bundle = setup_models()
        name = next(n for n in bundle.parameters() if n.startswith("transducer.joint."))
        bundle.parameters()[name].values[...] = np.nan
        with self.assertRaises(DivergenceError) as cm:
            stage2_finetune(bundle, corpus, replace(CFG.train, stage=2))
        self.assertEqual(cm.exception.step, 0)

    def test_wrong_stage(self):
        corpus, bundle = setup_models()
        with self.assertRaises(ContractError):
            stage2_finetune(bundle, corpus, CFG.train)

    def test_balanced_batch(self):
        corpus, _ = setup_models()
        dys, normal = corpus.dysarthric[:2], corpus.normal[:2]
        batch = balanced_batch(dys, normal)
        self.assertEqual([(u.id, u.variant) for u in batch],
                         [("utt0000", DYSARTHRIC), ("utt0000", NORMAL), ("utt0001", DYSARTHRIC), ("utt0001", NORMAL)])
        tests = [(dys, normal[:1]), ([], []), (normal, dys)]
        for (a, b) in tests:
            with self.subTest(a=[u.variant for u in a], b=[u.variant for u in b]):
                with self.assertRaises(ContractError):
                    balanced_batch(a, b)

    def test_frozen_set(self):
        names = ["transducer.a", "adaptor.b", "waitk.c", "waitk.d"]
        self.assertEqual(frozen_set(names, ("waitk.",)), frozenset({"waitk.c", "waitk.d"}))
        self.assertEqual(frozen_set(names, ()), frozenset())


class TestLogAndEvaluation(unittest.TestCase):
    def test_write_train_log(self):
        corpus, bundle = setup_models()
        log = stage1_train(bundle, corpus.normal, replace(CFG.train, steps=3), seed=2).log
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "train.log.csv")
            write_train_log(log, path)
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
        self.assertEqual(tuple(rows[0]), LOG_FIELDS)
        self.assertEqual([int(r["step"]) for r in rows], [0, 1, 2])
        self.assertEqual([float(r["total"]) for r in rows], [r.total for r in log])

    def test_evaluate(self):
        corpus, bundle = setup_models()
        summaries = evaluate_corpus(bundle, corpus, 2)
        self.assertEqual(set(summaries), {NORMAL, DYSARTHRIC})
        for (variant, summary) in summaries.items():
            with self.subTest(variant=variant):
                self.assertEqual(summary.variant, variant)
                self.assertEqual(summary.utterances, 2)
                self.assertGreaterEqual(summary.token_error_rate, 0.0)
                self.assertTrue(0.0 <= summary.next_code_accuracy <= 1.0)
                self.assertEqual(set(summary.per_k_ce), set(CFG.waitk.ks))
                self.assertTrue(all(v > 0 for v in summary.per_k_ce.values()))
        with self.assertRaises(ContractError):
            evaluate(bundle, [], 2)

    def test_training_config_validation(self):
        for bad in ({"stage": 3}, {"batch_size": 0}, {"learning_rate": -1.0}, {"clip_norm": 0.0}):
            with self.subTest(**bad):
                with self.assertRaises(ConfigError):
                    TrainConfig(**bad)


def train_seed(seed, alpha=None, steps=150):
    cfg = CFG if alpha is None else replace(CFG, waitk=replace(CFG.waitk, alpha=alpha))
    corpus = gen_corpus(replace(cfg.corpus, seed=seed, num_utterances=16), cfg.quantizer, HOP)
    bundle = build_models(cfg, corpus.codebook, seed)
    stage1_train(bundle, corpus.variant(NORMAL, held_out=False),
                 replace(cfg.train, steps=steps, learning_rate=0.05, batch_size=4), seed)
    return corpus, bundle


@slow
class TestTrends(unittest.TestCase):
    SEEDS = range(5)

    def test_wider_views_fit_better(self):
        ks = sorted(CFG.waitk.ks)
        improvements = {pair: [] for pair in zip(ks, ks[1:])}
        for seed in self.SEEDS:
            corpus, bundle = train_seed(seed)
            ce = evaluate(bundle, corpus.variant(NORMAL, held_out=True), 1).per_k_ce
            self.assertEqual(sorted(ce), ks)
            for (narrow, wide) in improvements:
                improvements[(narrow, wide)].append(ce[narrow] - ce[wide])
        for (pair, diffs) in improvements.items():
            with self.subTest(ks=pair):
                self.assertGreaterEqual(sign_test(diffs).wins, 4)

    def test_distillation_helps_the_narrowest_view(self):
        improvements = []
        for seed in self.SEEDS:
            corpus, plain = train_seed(seed, alpha=0.0)
            _, distilled = train_seed(seed, alpha=0.2)
            held_out = corpus.variant(NORMAL, held_out=True)
            improvements.append(evaluate(plain, held_out, 1).per_k_ce[1]
                                - evaluate(distilled, held_out, 1).per_k_ce[1])
        self.assertGreaterEqual(sign_test(improvements).wins, 4)

    def test_fine_tuning_helps_dysarthric_input(self):
        improvements = []
        normal_before, normal_after = [], []
        for seed in self.SEEDS:
            corpus, bundle = train_seed(seed)
            before = evaluate_corpus(bundle, corpus, 2)
            stage2_finetune(bundle, corpus, replace(CFG.train, stage=2, steps=100, learning_rate=0.05), seed)
            after = evaluate_corpus(bundle, corpus, 2)
            improvements.append(before[DYSARTHRIC].token_error_rate - after[DYSARTHRIC].token_error_rate)
            normal_before.append(1.0 - before[NORMAL].token_error_rate)
            normal_after.append(1.0 - after[NORMAL].token_error_rate)
        self.assertGreaterEqual(sign_test(improvements).wins, 4)
        # token accuracy on normal speech loses less than 5% relative
        self.assertGreater(np.mean(normal_after), 0.95 * np.mean(normal_before))

    def test_default_configuration_end_to_end(self):
        cfg = RunConfig()
        corpus = gen_corpus(cfg.corpus, cfg.quantizer, cfg.pipeline.frame_hop)
        bundle = build_models(cfg, corpus.codebook)
        stage1_train(bundle, corpus.variant(NORMAL, held_out=False), cfg.train, cfg.seed)
        stage2_finetune(bundle, corpus, replace(cfg.train, stage=2), cfg.seed)
        summary = evaluate_corpus(bundle, corpus, cfg.pipeline.k)[DYSARTHRIC]
        self.assertGreaterEqual(summary.next_code_accuracy, 0.9)
        self.assertLessEqual(summary.token_error_rate, 0.15)
