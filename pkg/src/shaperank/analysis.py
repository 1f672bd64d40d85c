"""Score-based analyses: rankings, group t-tests, agreement-gap bins, and
the data-quantity learning curve."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .dataset import Response
from .net import ArchitectureSpec, NetworkParams, init_params, score_many
from .ranktrain import TrainConfig, train, validation_accuracy
from .voxel import VoxelGrid

AGREEMENT_BIN_LABELS = ("50%", "51-60%", "61-70%", "71-80%", "81-90%", "91-100%")


@dataclass
class RankedList:
    """(shape_id, score) entries, best first; ties broken by id."""

    entries: list[tuple[str, float]]

    def ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    def csv_rows(self) -> list[str]:
        return ["shape_id,score"] + [f"{sid},{s:.17g}" for sid, s in self.entries]


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_value: float
    mean1: float
    std1: float
    n1: int
    mean2: float
    std2: float
    n2: int


@dataclass(frozen=True)
class AgreementBin:
    label: str
    n_pairs: int
    mean_diff: float


def rank_from_scores(scores: Mapping[str, float]) -> RankedList:
    entries = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedList(entries=[(sid, float(s)) for sid, s in entries])


def rank_shapes(params: NetworkParams, grids: Sequence[VoxelGrid]) -> RankedList:
    """Score every grid and sort descending (id order breaks ties)."""
    ys = score_many(params, list(grids))
    return rank_from_scores({g.shape_id: float(y) for g, y in zip(grids, ys)})


def ttest_equal_var(mean1: float, std1: float, n1: int,
                    mean2: float, std2: float, n2: int) -> TTestResult:
    """Two-sample pooled-variance t-test from summary statistics.

    stds are sample standard deviations (n-1 denominator).  The two-sided
    p-value comes from the regularized incomplete beta form of the t CDF.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("both groups need n >= 2")
    df = n1 + n2 - 2
    pooled_var = ((n1 - 1) * std1 ** 2 + (n2 - 1) * std2 ** 2) / df
    diff = mean1 - mean2
    if pooled_var == 0.0:
        t = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(pooled_var * (1.0 / n1 + 1.0 / n2))
    if math.isinf(t):
        p = 0.0
    elif t == 0.0:
        p = 1.0
    else:
        p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(t=t, df=df, p_value=p, mean1=mean1, std1=std1, n1=n1,
                       mean2=mean2, std2=std2, n2=n2)


def ttest_from_scores(scores1: Sequence[float], scores2: Sequence[float]) -> TTestResult:
    a = np.asarray(scores1, dtype=np.float64)
    b = np.asarray(scores2, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("both groups need n >= 2")
    return ttest_equal_var(float(a.mean()), float(a.std(ddof=1)), a.size,
                           float(b.mean()), float(b.std(ddof=1)), b.size)


def _agreement_bin(pct: float) -> int:
    # {50} (51,60] (60,70] (70,80] (80,90] (90,100]; pct is always >= 50
    if pct <= 50.0:
        return 0
    for i, hi in enumerate((60.0, 70.0, 80.0, 90.0, 100.0), start=1):
        if pct <= hi:
            return i
    return 5


def agreement_gap_analysis(responses: Sequence[Response], params: NetworkParams,
                           grids: Mapping[str, VoxelGrid]) -> list[AgreementBin]:
    """Group multi-response pairs by majority percentage and report the mean
    score gap (majority minus minority; absolute at an exact tie) per bin.

    Empty bins are absent from the result.
    """
    by_pair: dict[str, list[Response]] = {}
    for r in responses:
        by_pair.setdefault(r.pair_id, []).append(r)

    unique_ids = sorted({s for rs in by_pair.values()
                         for r in rs for s in (r.shape_a, r.shape_b)})
    scores = dict(zip(unique_ids, score_many(params, [grids[s] for s in unique_ids])))

    sums = [0.0] * len(AGREEMENT_BIN_LABELS)
    counts = [0] * len(AGREEMENT_BIN_LABELS)
    for pid in sorted(by_pair):
        rs = by_pair[pid]
        if len(rs) < 2:
            raise ValueError(f"pair {pid!r} has fewer than 2 responses")
        tally: dict[str, int] = {}
        for r in rs:
            tally[r.chosen] = tally.get(r.chosen, 0) + 1
            tally.setdefault(r.other, 0)
        (s1, c1), (s2, c2) = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))
        pct = 100.0 * c1 / (c1 + c2)
        if c1 == c2:
            diff = abs(scores[s1] - scores[s2])
        else:
            diff = scores[s1] - scores[s2]
        b = _agreement_bin(pct)
        sums[b] += diff
        counts[b] += 1

    return [AgreementBin(label=AGREEMENT_BIN_LABELS[i], n_pairs=counts[i],
                         mean_diff=sums[i] / counts[i])
            for i in range(len(AGREEMENT_BIN_LABELS)) if counts[i]]


def learning_curve(arch: ArchitectureSpec, train_pairs: Sequence, val_pairs: Sequence,
                   fractions: Sequence[float], config: TrainConfig
                   ) -> list[tuple[float, float]]:
    """Full validation accuracy after training on growing prefixes of the
    training set, each run restarted from the same seed."""
    fs = list(fractions)
    if not fs:
        raise ValueError("no fractions given")
    if any(not 0.0 < f <= 1.0 for f in fs):
        raise ValueError("fractions must lie in (0, 1]")
    if any(b <= a for a, b in zip(fs, fs[1:])):
        raise ValueError("fractions must be strictly increasing")

    out = []
    for f in fs:
        n = int(round(f * len(train_pairs)))
        if n < 1:
            raise ValueError(f"fraction {f} yields an empty training set")
        params0 = init_params(arch, config.seed)
        trained, _ = train(params0, train_pairs[:n], config)
        acc = validation_accuracy(trained, val_pairs, 0.0).full_acc
        out.append((f, acc))
    return out
