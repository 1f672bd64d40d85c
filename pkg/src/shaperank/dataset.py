"""Pairwise preference data: HIT construction, consistency analysis,
train/validation splitting, and the synthetic oracle used for desk-scale
end-to-end runs.

A HIT is a batch of 30 pair tasks handed to one worker, 5 of which are
hidden control questions pairing an ordinary shape with an intentionally
ugly one; a worker who misses any control has the whole HIT rejected.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .voxel import VoxelGrid

HIT_SIZE = 30
CONTROLS_PER_HIT = 5

AGE_GROUPS = ("0-20", "21-30", "31-40", "41-50", "51-60", "60-100")
REGIONS = ("Africa", "Asia", "Australia", "Europe", "North America", "South America")

RESPONSE_COLUMNS = ("hit_id", "pair_id", "shape_a", "shape_b", "is_control",
                    "worker_id", "choice", "elapsed_ms", "timestamp_ms")
DEMOGRAPHICS_COLUMNS = ("worker_id", "gender", "age_group", "region")


@dataclass(frozen=True)
class PairSample:
    """One ordered presentation of two same-class shapes."""

    shape_a: str
    shape_b: str
    pair_id: str
    is_control: bool = False

    def __post_init__(self):
        if self.shape_a == self.shape_b:
            raise ValueError(f"pair {self.pair_id!r} repeats shape {self.shape_a!r}")


@dataclass(frozen=True)
class Response:
    """One worker's choice on one presented pair."""

    pair_id: str
    worker_id: str
    choice: str  # "A" | "B"
    elapsed_ms: int
    timestamp_ms: int
    hit_id: str
    shape_a: str
    shape_b: str
    is_control: bool = False

    def __post_init__(self):
        if self.choice not in ("A", "B"):
            raise ValueError(f"choice must be 'A' or 'B', got {self.choice!r}")

    @property
    def chosen(self) -> str:
        return self.shape_a if self.choice == "A" else self.shape_b

    @property
    def other(self) -> str:
        return self.shape_b if self.choice == "A" else self.shape_a


@dataclass
class HitBatch:
    hit_id: str
    tasks: list[PairSample]
    demographics: dict[str, str] | None = None

    def __post_init__(self):
        if len(self.tasks) != HIT_SIZE:
            raise ValueError(f"a HIT holds exactly {HIT_SIZE} tasks, got {len(self.tasks)}")
        n_controls = sum(t.is_control for t in self.tasks)
        if n_controls != CONTROLS_PER_HIT:
            raise ValueError(f"a HIT holds exactly {CONTROLS_PER_HIT} controls, "
                             f"got {n_controls}")


@dataclass
class PairConsistency:
    pair_id: str
    group_a_pct: dict[str, float]  # chosen shape -> percent of group's responses
    group_b_pct: dict[str, float]
    match: bool


@dataclass
class ConsistencyReport:
    pairs: list[PairConsistency]
    matches: int
    total: int

    @property
    def match_rate(self) -> float:
        return self.matches / self.total if self.total else float("nan")


def pair_key(shape_1: str, shape_2: str) -> str:
    """Canonical unordered pair id, shared by every presentation of the pair."""
    for s in (shape_1, shape_2):
        if "|" in s:
            raise ValueError(f"shape id {s!r} may not contain '|'")
    a, b = sorted((shape_1, shape_2))
    return f"{a}|{b}"


def make_hits(shape_ids: Sequence[str], ugly_ids: Sequence[str], n_hits: int,
              seed: int) -> list[HitBatch]:
    """Build HIT batches: 25 uniform random distinct-shape pairs plus 5
    shuffled-in control pairs (ordinary vs ugly), deterministic per seed."""
    shapes = list(shape_ids)
    uglies = list(ugly_ids)
    if len(shapes) < 2:
        raise ValueError("need at least 2 ordinary shapes")
    if not uglies:
        raise ValueError("need at least 1 ugly shape for controls")
    rng = np.random.default_rng(seed)
    n_ordinary = HIT_SIZE - CONTROLS_PER_HIT
    max_distinct = len(shapes) * (len(shapes) - 1) // 2

    batches = []
    for h in range(n_hits):
        ordinary: list[PairSample] = []
        seen: set[str] = set()
        while len(ordinary) < n_ordinary:
            i, j = rng.choice(len(shapes), size=2, replace=False)
            key = pair_key(shapes[i], shapes[j])
            if key in seen and len(seen) < max_distinct:
                continue  # draw distinct pairs while distinct pairs remain
            seen.add(key)
            ordinary.append(PairSample(shape_a=shapes[i], shape_b=shapes[j], pair_id=key))

        controls: list[PairSample] = []
        seen_ctl: set[str] = set()
        max_ctl = len(shapes) * len(uglies)
        while len(controls) < CONTROLS_PER_HIT:
            good = shapes[rng.integers(len(shapes))]
            ugly = uglies[rng.integers(len(uglies))]
            key = pair_key(good, ugly)
            if key in seen_ctl and len(seen_ctl) < max_ctl:
                continue
            seen_ctl.add(key)
            a, b = (good, ugly) if rng.integers(2) == 0 else (ugly, good)
            controls.append(PairSample(shape_a=a, shape_b=b, pair_id=key,
                                       is_control=True))

        slots = sorted(rng.choice(HIT_SIZE, size=CONTROLS_PER_HIT, replace=False))
        tasks: list[PairSample] = []
        it_ord = iter(ordinary)
        it_ctl = iter(controls)
        for pos in range(HIT_SIZE):
            tasks.append(next(it_ctl) if pos in slots else next(it_ord))
        batches.append(HitBatch(hit_id=f"hit{h:04d}", tasks=tasks))
    return batches


def control_key(batches: Iterable[HitBatch], ugly_ids: Iterable[str]) -> dict[str, str]:
    """pair_id -> the correct (non-ugly) shape for every control task."""
    uglies = set(ugly_ids)
    key: dict[str, str] = {}
    for batch in batches:
        for task in batch.tasks:
            if not task.is_control:
                continue
            good = [s for s in (task.shape_a, task.shape_b) if s not in uglies]
            if len(good) != 1:
                raise ValueError(f"control pair {task.pair_id!r} does not pair one "
                                 "ordinary shape with one ugly shape")
            key[task.pair_id] = good[0]
    return key


def validate_hit(batch: HitBatch, responses: Sequence[Response],
                 key: Mapping[str, str]) -> bool:
    """True iff every control response picked the non-ugly shape.

    There must be exactly one response per task of the batch (matched by
    pair id; repeated pairs consume one response each).
    """
    pool: dict[str, list[Response]] = {}
    for r in responses:
        pool.setdefault(r.pair_id, []).append(r)
    accepted = True
    for task in batch.tasks:
        candidates = pool.get(task.pair_id)
        if not candidates:
            raise ValueError(f"missing response for pair {task.pair_id!r}")
        r = candidates.pop(0)
        if task.is_control and r.chosen != key[task.pair_id]:
            accepted = False
    if any(pool.values()):
        extra = next(pid for pid, rs in pool.items() if rs)
        raise ValueError(f"unexpected extra response for pair {extra!r}")
    return accepted


def split_dataset(responses: Sequence[Response], validation_fraction: float,
                  seed: int) -> tuple[list[Response], list[Response]]:
    """Split non-control responses into train/validation, partitioned by pair.

    All responses of a pair land on the same side, so the realized fraction
    is honored to within one pair's worth of responses.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    usable = [r for r in responses if not r.is_control]
    if not usable:
        raise ValueError("no non-control responses to split")

    order: list[str] = []
    counts: dict[str, int] = {}
    for r in usable:
        if r.pair_id not in counts:
            order.append(r.pair_id)
        counts[r.pair_id] = counts.get(r.pair_id, 0) + 1

    rng = np.random.default_rng(seed)
    shuffled = [order[i] for i in rng.permutation(len(order))]
    target = validation_fraction * len(usable)
    val_pairs: set[str] = set()
    got = 0
    for pid in shuffled:
        if got >= target:
            break
        val_pairs.add(pid)
        got += counts[pid]

    train = [r for r in usable if r.pair_id not in val_pairs]
    val = [r for r in usable if r.pair_id in val_pairs]
    return train, val


def _pair_shares(responses: Iterable[Response]) -> dict[str, dict[str, float]]:
    counts: dict[str, dict[str, int]] = {}
    for r in responses:
        c = counts.setdefault(r.pair_id, {})
        c[r.chosen] = c.get(r.chosen, 0) + 1
        c.setdefault(r.other, 0)
    return {pid: {s: 100.0 * n / sum(c.values()) for s, n in c.items()}
            for pid, c in counts.items()}


def consistency(group_a: Sequence[Response], group_b: Sequence[Response]) -> ConsistencyReport:
    """Per-pair majority agreement between two response populations.

    A group's majority set holds every choice with share >= 50% (an exact
    50/50 puts both shapes in), and a pair matches iff the two groups'
    majority sets intersect.
    """
    shares_a = _pair_shares(group_a)
    shares_b = _pair_shares(group_b)
    only_a = set(shares_a) - set(shares_b)
    only_b = set(shares_b) - set(shares_a)
    if only_a or only_b:
        missing = sorted(only_a | only_b)[0]
        raise ValueError(f"pair {missing!r} is present in only one group")

    rows = []
    matches = 0
    for pid in sorted(shares_a):
        maj_a = {s for s, pct in shares_a[pid].items() if pct >= 50.0}
        maj_b = {s for s, pct in shares_b[pid].items() if pct >= 50.0}
        match = bool(maj_a & maj_b)
        matches += match
        rows.append(PairConsistency(pair_id=pid, group_a_pct=shares_a[pid],
                                    group_b_pct=shares_b[pid], match=match))
    return ConsistencyReport(pairs=rows, matches=matches, total=len(rows))


def random_split_consistency(responses: Sequence[Response], seed: int) -> ConsistencyReport:
    """Evenly split the workers into two random groups and compare them."""
    workers: list[str] = []
    for r in responses:
        if r.worker_id not in workers:
            workers.append(r.worker_id)
    if len(workers) < 2:
        raise ValueError("need at least 2 workers")
    rng = np.random.default_rng(seed)
    shuffled = [workers[i] for i in rng.permutation(len(workers))]
    half = len(shuffled) // 2
    group_a = set(shuffled[:half])
    return consistency([r for r in responses if r.worker_id in group_a],
                       [r for r in responses if r.worker_id not in group_a])


# ---------------------------------------------------------------------------
# synthetic shapes and the labeling oracle


def _cell_centers(resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = -0.5 + (np.arange(resolution) + 0.5) / resolution
    return np.meshgrid(c, c, c, indexing="ij")


def _synth_one(family: str, resolution: int, rng: np.random.Generator
               ) -> tuple[np.ndarray, dict]:
    x, y, z = _cell_centers(resolution)
    kind = family
    if family == "mixed":
        kind = ("box", "ellipsoid", "blob")[rng.integers(3)]

    if kind == "box":
        half = rng.uniform(0.10, 0.42, size=3)
        center = rng.uniform(-0.05, 0.05, size=3)
        occ = ((np.abs(x - center[0]) <= half[0])
               & (np.abs(y - center[1]) <= half[1])
               & (np.abs(z - center[2]) <= half[2]))
        return occ.astype(np.uint8), {"kind": "box", "half": half.tolist(),
                                      "center": center.tolist()}
    if kind == "ellipsoid":
        axes = rng.uniform(0.10, 0.45, size=3)
        center = rng.uniform(-0.04, 0.04, size=3)
        occ = (((x - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2
               + ((z - center[2]) / axes[2]) ** 2) <= 1.0
        return occ.astype(np.uint8), {"kind": "ellipsoid", "axes": axes.tolist(),
                                      "center": center.tolist()}
    if kind == "blob":
        n_lobes = int(rng.integers(2, 4))
        occ = np.zeros_like(x, dtype=bool)
        lobes = []
        for _ in range(n_lobes):
            axes = rng.uniform(0.08, 0.30, size=3)
            center = rng.uniform(-0.18, 0.18, size=3)
            occ |= (((x - center[0]) / axes[0]) ** 2 + ((y - center[1]) / axes[1]) ** 2
                    + ((z - center[2]) / axes[2]) ** 2) <= 1.0
            lobes.append({"axes": axes.tolist(), "center": center.tolist()})
        return occ.astype(np.uint8), {"kind": "blob", "lobes": lobes}
    raise ValueError(f"unknown shape family {family!r}")


def synth_shapes(n: int, resolution: int, family: str, seed: int,
                 with_params: bool = False):
    """Procedural occupancy grids with known generation parameters.

    Families: box, ellipsoid, blob (union of 2-3 ellipsoids), mixed.
    Grids are distinct and nonempty; pass with_params=True to also get the
    generation parameters per shape.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    grids: list[VoxelGrid] = []
    params: list[dict] = []
    seen: set[bytes] = set()
    attempts = 0
    while len(grids) < n:
        attempts += 1
        if attempts > 50 * n:
            raise RuntimeError("could not generate enough distinct nonempty shapes")
        occ, p = _synth_one(family, resolution, rng)
        if occ.sum() == 0 or occ.tobytes() in seen:
            continue
        seen.add(occ.tobytes())
        i = len(grids)
        grids.append(VoxelGrid(resolution=resolution, occupancy=occ,
                               shape_id=f"{family}-{i:04d}"))
        params.append(p)
    return (grids, params) if with_params else grids


def latent_volume(grid: VoxelGrid) -> float:
    """Occupied fraction of the grid."""
    return grid.count() / grid.resolution ** 3


def latent_mirror_symmetry(grid: VoxelGrid) -> float:
    """Jaccard overlap between the occupancy and its x-mirror."""
    occ = grid.occupancy.astype(bool)
    mirrored = occ[::-1, :, :]
    union = int((occ | mirrored).sum())
    return int((occ & mirrored).sum()) / union if union else 0.0


def latent_smoothness(grid: VoxelGrid) -> float:
    """1 - (exposed faces / 6*cells): compact blobs score high, scattered
    or thin shapes score low."""
    occ = grid.occupancy.astype(bool)
    n = int(occ.sum())
    if n == 0:
        return 0.0
    covered = 0
    for axis in range(3):
        a = np.swapaxes(occ, 0, axis)
        covered += int((a[1:] & a[:-1]).sum()) * 2  # both faces of each touching pair
    return covered / (6.0 * n)


LATENT_KINDS: dict[str, Callable[[VoxelGrid], float]] = {
    "volume": latent_volume,
    "symmetry": latent_mirror_symmetry,
    "smoothness": latent_smoothness,
}


def latent_score(grid: VoxelGrid, kind: str = "mix") -> float:
    """Declared geometric functional used as the synthetic ground truth.

    Purely a test oracle; "mix" blends smoothness, mirror symmetry and
    volume.
    """
    if kind == "mix":
        return (0.5 * latent_smoothness(grid) + 0.3 * latent_mirror_symmetry(grid)
                + 0.2 * latent_volume(grid))
    try:
        return LATENT_KINDS[kind](grid)
    except KeyError:
        raise ValueError(f"unknown latent kind {kind!r}") from None


def similarity_ladder(grids: Sequence[VoxelGrid], gap_targets: Sequence[float],
                      seed: int, latent_kind: str = "mix"
                      ) -> tuple[list[VoxelGrid], list[PairSample], dict[str, float]]:
    """Agreement-study pairs along a similarity continuum.

    Each target produces one pair: a random base shape versus a copy eroded
    cell by cell until the latent gap reaches the target (a zero target
    keeps an exact duplicate, mirroring the repeated models that occur in
    real shape collections).  Returns the variant grids, the pairs, and the
    latent scores of every shape involved.
    """
    rng = np.random.default_rng(seed)
    base_list = list(grids)
    latent = {g.shape_id: latent_score(g, latent_kind) for g in base_list}
    variants: list[VoxelGrid] = []
    pairs: list[PairSample] = []
    for n, g_star in enumerate(gap_targets):
        base = base_list[rng.integers(len(base_list))]
        vid = f"{base.shape_id}-var{n:04d}"
        occ = base.occupancy.copy()
        if g_star > 0:
            s0 = latent[base.shape_id]
            for _ in range(500):
                filled = np.argwhere(occ == 1)
                if len(filled) < 20:
                    break
                occ[tuple(filled[rng.integers(len(filled))])] = 0
                probe = VoxelGrid(resolution=base.resolution, occupancy=occ,
                                  shape_id=vid)
                if abs(latent_score(probe, latent_kind) - s0) >= g_star:
                    break
        variant = VoxelGrid(resolution=base.resolution, occupancy=occ, shape_id=vid)
        variants.append(variant)
        latent[vid] = latent_score(variant, latent_kind)
        pairs.append(PairSample(shape_a=base.shape_id, shape_b=vid,
                                pair_id=pair_key(base.shape_id, vid)))
    return variants, pairs, latent


def random_pairs(shape_ids: Sequence[str], n_pairs: int, seed: int) -> list[PairSample]:
    """Uniform random distinct-shape pairs with randomized presentation order."""
    if len(shape_ids) < 2:
        raise ValueError("need at least 2 shapes")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        i, j = rng.choice(len(shape_ids), size=2, replace=False)
        pairs.append(PairSample(shape_a=shape_ids[i], shape_b=shape_ids[j],
                                pair_id=pair_key(shape_ids[i], shape_ids[j])))
    return pairs


def oracle_label(pairs: Sequence[PairSample], latent: Mapping[str, float] | Callable[[str], float],
                 agreement: float | Callable[[float], float], seed: int,
                 workers: int = 1) -> list[Response]:
    """Simulated responses: choose A with probability sigma(k * (s_A - s_B)).

    `agreement` is either the logistic steepness k (math.inf gives
    noise-free labels; a tie is a fair coin) or a callable mapping the
    latent gap to the probability of choosing A.  With workers > 1 every
    pair is answered once per simulated worker.
    """
    score_of = latent.__getitem__ if isinstance(latent, Mapping) else latent
    if callable(agreement):
        prob_a = agreement
    elif math.isinf(agreement):
        def prob_a(gap: float) -> float:
            return 0.5 if gap == 0 else (1.0 if gap > 0 else 0.0)
    else:
        k = float(agreement)

        def prob_a(gap: float) -> float:
            return 1.0 / (1.0 + math.exp(-k * gap))

    rng = np.random.default_rng(seed)
    responses = []
    t0 = 1_700_000_000_000  # fixed epoch keeps outputs reproducible
    for w in range(workers):
        worker_id = f"sim{w:03d}"
        for i, pair in enumerate(pairs):
            gap = score_of(pair.shape_a) - score_of(pair.shape_b)
            choice = "A" if rng.random() < prob_a(gap) else "B"
            responses.append(Response(
                pair_id=pair.pair_id, worker_id=worker_id, choice=choice,
                elapsed_ms=4000 + int(rng.integers(0, 3000)),
                timestamp_ms=t0 + 5000 * (w * len(pairs) + i),
                hit_id="synth", shape_a=pair.shape_a, shape_b=pair.shape_b,
                is_control=pair.is_control))
    return responses


def pairs_to_grids(responses: Sequence[Response], grids: Mapping[str, VoxelGrid],
                   include_controls: bool = False) -> list[tuple[VoxelGrid, VoxelGrid]]:
    """Turn responses into (preferred grid, other grid) training pairs."""
    out = []
    for r in responses:
        if r.is_control and not include_controls:
            continue
        out.append((grids[r.chosen], grids[r.other]))
    return out


# ---------------------------------------------------------------------------
# CSV formats


def write_responses(responses: Iterable[Response], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESPONSE_COLUMNS)
        for r in responses:
            writer.writerow([r.hit_id, r.pair_id, r.shape_a, r.shape_b,
                             int(r.is_control), r.worker_id, r.choice,
                             r.elapsed_ms, r.timestamp_ms])


def read_responses(path: str | os.PathLike) -> list[Response]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESPONSE_COLUMNS:
            raise ValueError(f"{path}: bad response log header {header!r}")
        out = []
        for row in reader:
            if len(row) != len(RESPONSE_COLUMNS):
                raise ValueError(f"{path}: bad row {row!r}")
            out.append(Response(hit_id=row[0], pair_id=row[1], shape_a=row[2],
                                shape_b=row[3], is_control=bool(int(row[4])),
                                worker_id=row[5], choice=row[6],
                                elapsed_ms=int(row[7]), timestamp_ms=int(row[8])))
    return out


def write_demographics(rows: Iterable[Mapping[str, str]], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DEMOGRAPHICS_COLUMNS)
        for row in rows:
            writer.writerow([row.get(k, "") for k in DEMOGRAPHICS_COLUMNS])
