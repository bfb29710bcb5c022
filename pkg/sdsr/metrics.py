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

"""Evaluation measures: token edit distance and error rate, and a one-sided sign test for comparing runs."""

from math import comb
from typing import Hashable, NamedTuple, Sequence

import numpy as np

__all__ = ["edit_distance", "token_error_rate", "corpus_token_error_rate", "SignTest", "sign_test"]


def edit_distance(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs"""
    costs = np.zeros((len(hyp) + 1, len(ref) + 1), dtype=np.int64)
    costs[:, 0] = np.arange(len(hyp) + 1)
    costs[0, :] = np.arange(len(ref) + 1)
    for i in range(1, len(hyp) + 1):
        for j in range(1, len(ref) + 1):
            sub = 0 if hyp[i - 1] == ref[j - 1] else 1
            costs[i, j] = min(costs[i - 1, j] + 1, costs[i, j - 1] + 1, costs[i - 1, j - 1] + sub)
    return int(costs[-1, -1])


def token_error_rate(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> float:
    """edit_distance(hyp, ref) / max(len(ref), 1)"""
    return edit_distance(hyp, ref) / max(len(ref), 1)


def corpus_token_error_rate(hyps: Sequence[Sequence[Hashable]], refs: Sequence[Sequence[Hashable]]) -> float:
    """Total edits over total reference length, the usual corpus-level aggregate"""
    if len(hyps) != len(refs):
        raise ValueError("{} hypotheses for {} references".format(len(hyps), len(refs)))
    edits = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    return edits / max(sum(len(r) for r in refs), 1)


class SignTest(NamedTuple):
    wins: int
    losses: int
    ties: int
    p_value: float


def sign_test(improvements: Sequence[float]) -> SignTest:
    """One-sided sign test that positive differences are more likely than negative ones. Ties are dropped."""
    wins = sum(1 for d in improvements if d > 0)
    losses = sum(1 for d in improvements if d < 0)
    n = wins + losses
    p = sum(comb(n, i) for i in range(wins, n + 1)) / 2 ** n if n else 1.0
    return SignTest(wins, losses, len(improvements) - n, float(p))
