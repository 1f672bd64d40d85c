import math

import numpy as np
import pytest

from shaperank import dataset
from shaperank.dataset import (HitBatch, PairSample, Response, consistency,
                               control_key, make_hits, oracle_label, pair_key,
                               random_pairs, random_split_consistency,
                               similarity_ladder, split_dataset, synth_shapes,
                               validate_hit)


def make_response(pair_id, worker, chosen, other, is_control=False, ts=0):
    a, b = (chosen, other)
    return Response(pair_id=pair_id, worker_id=worker, choice="A",
                    elapsed_ms=4100, timestamp_ms=ts, hit_id="h0",
                    shape_a=a, shape_b=b, is_control=is_control)


def responses_with_shares(pair, counts_by_shape, worker_prefix):
    """counts_by_shape: {shape: times chosen}; the two keys form the pair."""
    shapes = sorted(counts_by_shape)
    out = []
    w = 0
    for chosen in shapes:
        other = shapes[0] if chosen == shapes[1] else shapes[1]
        for _ in range(counts_by_shape[chosen]):
            out.append(make_response(pair, f"{worker_prefix}{w:03d}", chosen, other))
            w += 1
    return out


# -- HITs ---------------------------------------------------------------------

def test_make_hits_structure():
    shapes = [f"s{i}" for i in range(10)]
    batches = make_hits(shapes, ["ugly0", "ugly1"], n_hits=1, seed=0)
    assert len(batches) == 1
    batch = batches[0]
    assert len(batch.tasks) == 30
    assert sum(t.is_control for t in batch.tasks) == 5
    for t in batch.tasks:
        assert t.shape_a != t.shape_b


def test_make_hits_deterministic():
    shapes = [f"s{i}" for i in range(10)]
    a = make_hits(shapes, ["u"], 3, seed=7)
    b = make_hits(shapes, ["u"], 3, seed=7)
    assert a == b
    c = make_hits(shapes, ["u"], 3, seed=8)
    assert a != c


def test_make_hits_insufficient_shapes():
    with pytest.raises(ValueError):
        make_hits(["only"], ["u"], 1, seed=0)
    with pytest.raises(ValueError):
        make_hits(["a", "b"], [], 1, seed=0)


def test_validate_hit_accept_and_reject():
    shapes = [f"s{i}" for i in range(6)]
    uglies = ["ugly"]
    batch = make_hits(shapes, uglies, 1, seed=1)[0]
    key = control_key([batch], uglies)
    assert len(key) == len({t.pair_id for t in batch.tasks if t.is_control})

    def answer_all(wrong_controls=0):
        out = []
        wrong_left = wrong_controls
        for t in batch.tasks:
            if t.is_control:
                correct = key[t.pair_id]
                pick = correct
                if wrong_left > 0:
                    pick = t.shape_a if t.shape_a != correct else t.shape_b
                    wrong_left -= 1
            else:
                pick = t.shape_a
            other = t.shape_b if pick == t.shape_a else t.shape_a
            out.append(make_response(t.pair_id, "w0", pick, other, t.is_control))
        return out

    assert validate_hit(batch, answer_all(0), key) is True
    assert validate_hit(batch, answer_all(1), key) is False  # 4 of 5 correct


def test_validate_hit_missing_response():
    shapes = [f"s{i}" for i in range(6)]
    batch = make_hits(shapes, ["ugly"], 1, seed=2)[0]
    key = control_key([batch], ["ugly"])
    with pytest.raises(ValueError, match="missing"):
        validate_hit(batch, [], key)


# -- splitting ----------------------------------------------------------------

def _n_responses(n, distinct_pairs=None):
    distinct_pairs = distinct_pairs or n
    out = []
    for i in range(n):
        p = i % distinct_pairs
        out.append(make_response(f"p{p:04d}", f"w{i}", f"a{p}", f"b{p}", ts=i))
    return out


def test_split_950_50():
    responses = _n_responses(1000)
    train, val = split_dataset(responses, 0.05, seed=0)
    assert (len(train), len(val)) == (950, 50)


def test_split_disjoint_by_pair_and_union():
    responses = _n_responses(300, distinct_pairs=60)
    train, val = split_dataset(responses, 0.10, seed=1)
    train_pairs = {r.pair_id for r in train}
    val_pairs = {r.pair_id for r in val}
    assert not (train_pairs & val_pairs)
    assert len(train) + len(val) == 300
    assert sorted(r.timestamp_ms for r in train + val) == list(range(300))


def test_split_excludes_controls():
    responses = _n_responses(50)
    responses.append(make_response("ctl", "w", "good", "ugly", is_control=True))
    train, val = split_dataset(responses, 0.1, seed=2)
    assert all(not r.is_control for r in train + val)


def test_split_fraction_bounds():
    with pytest.raises(ValueError):
        split_dataset(_n_responses(10), 1.0, seed=0)
    with pytest.raises(ValueError):
        split_dataset(_n_responses(10), 0.0, seed=0)


# -- consistency --------------------------------------------------------------

def test_consistency_fig3_first_table_examples():
    # P1: 20/80 vs 46.7/53.3 -> both majorities on the same shape -> match
    g1 = responses_with_shares("P1", {"A": 3, "B": 12}, "v")
    g2 = responses_with_shares("P1", {"A": 7, "B": 8}, "p")
    report = consistency(g1, g2)
    assert report.pairs[0].match is True
    assert report.matches == 1

    # P2: 33.3/66.7 vs 73.3/26.7 -> opposite majorities -> mismatch
    g1 = responses_with_shares("P2", {"A": 5, "B": 10}, "v")
    g2 = responses_with_shares("P2", {"A": 11, "B": 4}, "p")
    report = consistency(g1, g2)
    assert report.pairs[0].match is False


def test_consistency_tie_matches_anything():
    g1 = responses_with_shares("P4", {"A": 5, "B": 5}, "m")  # 50/50
    g2 = responses_with_shares("P4", {"A": 2, "B": 9}, "f")
    assert consistency(g1, g2).matches == 1


def test_consistency_identical_groups_all_match():
    rs = []
    for p in range(8):
        rs += responses_with_shares(f"P{p}", {f"x{p}": 3, f"y{p}": 7}, "w")
    report = consistency(rs, list(rs))
    assert report.matches == report.total == 8
    assert report.match_rate == 1.0


def test_consistency_is_symmetric():
    g1 = (responses_with_shares("P1", {"A": 3, "B": 12}, "v")
          + responses_with_shares("P2", {"A": 9, "B": 6}, "v"))
    g2 = (responses_with_shares("P1", {"A": 8, "B": 7}, "p")
          + responses_with_shares("P2", {"A": 2, "B": 13}, "p"))
    assert consistency(g1, g2).matches == consistency(g2, g1).matches


def test_consistency_requires_same_pairs():
    g1 = responses_with_shares("P1", {"A": 3, "B": 2}, "v")
    g2 = responses_with_shares("P9", {"A": 3, "B": 2}, "p")
    with pytest.raises(ValueError, match="only one group"):
        consistency(g1, g2)


def test_random_split_even_groups_and_identical_workers_match():
    rs = []
    for w in range(42):
        for p in range(25):
            rs.append(make_response(f"p{p}", f"w{w:02d}", f"a{p}", f"b{p}", ts=w * 25 + p))
    report = random_split_consistency(rs, seed=3)
    assert report.total == 25
    assert report.matches == 25  # every worker answered identically


def test_random_split_needs_two_workers():
    rs = [make_response("p0", "w0", "a", "b")]
    with pytest.raises(ValueError, match="2 workers"):
        random_split_consistency(rs, seed=0)


# -- synthetic shapes and oracle ---------------------------------------------

def test_synth_shapes_distinct_nonempty_deterministic():
    grids = synth_shapes(50, 10, "ellipsoid", seed=5)
    assert len(grids) == 50
    assert len({g.key() for g in grids}) == 50
    assert all(g.count() > 0 for g in grids)
    again = synth_shapes(50, 10, "ellipsoid", seed=5)
    for a, b in zip(grids, again):
        np.testing.assert_array_equal(a.occupancy, b.occupancy)


def test_synth_shapes_families_and_params():
    for family in ("box", "ellipsoid", "blob", "mixed"):
        grids, params = synth_shapes(4, 8, family, seed=6, with_params=True)
        assert len(params) == 4
        assert all("kind" in p for p in params)
    with pytest.raises(ValueError):
        synth_shapes(1, 8, "box", seed=0)
    with pytest.raises(ValueError):
        synth_shapes(4, 8, "pyramid", seed=0)


def test_latent_functionals():
    full = dataset.VoxelGrid(4, np.ones((4, 4, 4), dtype=np.uint8), "full")
    assert dataset.latent_volume(full) == 1.0
    assert dataset.latent_mirror_symmetry(full) == 1.0
    # a lone cell has all faces exposed
    lone = dataset.VoxelGrid(4, np.zeros((4, 4, 4), dtype=np.uint8), "lone")
    lone.occupancy[1, 1, 1] = 1
    assert dataset.latent_smoothness(lone) == 0.0


def test_oracle_noise_free_follows_latent():
    pairs = [PairSample("hi", "lo", pair_key("hi", "lo")),
             PairSample("lo", "hi", pair_key("lo", "hi"))]
    latent = {"hi": 2.0, "lo": 1.0}
    rs = oracle_label(pairs, latent, math.inf, seed=7)
    assert [r.chosen for r in rs] == ["hi", "hi"]


def test_oracle_tie_is_fair_coin():
    pairs = [PairSample("x", "y", pair_key("x", "y"))] * 400
    rs = oracle_label(pairs, {"x": 1.0, "y": 1.0}, math.inf, seed=8)
    frac_a = np.mean([r.choice == "A" for r in rs])
    assert 0.4 < frac_a < 0.6


def test_oracle_agreement_monotone_in_gap():
    # simulate 10 workers on pairs with growing latent gaps; the majority
    # share should grow with the gap
    latent = {f"s{i}": 0.1 * i for i in range(8)}
    gaps, agreement = [], []
    for i in range(7):
        pair = PairSample("s0", f"s{i + 1}", pair_key("s0", f"s{i + 1}"))
        rs = oracle_label([pair] * 1, latent, 8.0, seed=10 + i, workers=200)
        share = np.mean([r.chosen == f"s{i + 1}" for r in rs])
        gaps.append(0.1 * (i + 1))
        agreement.append(max(share, 1 - share))
    assert all(b >= a - 0.03 for a, b in zip(agreement, agreement[1:]))


def test_oracle_workers_and_elapsed():
    pairs = random_pairs([f"s{i}" for i in range(5)], 6, seed=11)
    rs = oracle_label(pairs, {f"s{i}": float(i) for i in range(5)}, 5.0,
                      seed=12, workers=3)
    assert len(rs) == 18
    assert len({r.worker_id for r in rs}) == 3
    assert all(r.elapsed_ms >= 4000 for r in rs)


def test_similarity_ladder_zero_target_is_duplicate():
    grids = synth_shapes(5, 8, "box", seed=13)
    variants, pairs, latent = similarity_ladder(grids, [0.0, 0.0, 0.05], seed=14)
    assert len(variants) == len(pairs) == 3
    by = {g.shape_id: g for g in grids}
    for var, pair in zip(variants[:2], pairs[:2]):
        np.testing.assert_array_equal(var.occupancy, by[pair.shape_a].occupancy)
    assert abs(latent[pairs[2].shape_b] - latent[pairs[2].shape_a]) >= 0.049


def test_pair_encoding_swap_symmetry():
    # a response naming the same winner from either presentation order
    # yields the same training pair
    g = synth_shapes(2, 6, "box", seed=15)
    by = {x.shape_id: x for x in g}
    a, b = g[0].shape_id, g[1].shape_id
    r1 = Response(pair_key(a, b), "w", "A", 4000, 0, "h", shape_a=a, shape_b=b)
    r2 = Response(pair_key(a, b), "w", "B", 4000, 0, "h", shape_a=b, shape_b=a)
    p1 = dataset.pairs_to_grids([r1], by)[0]
    p2 = dataset.pairs_to_grids([r2], by)[0]
    assert p1[0].shape_id == p2[0].shape_id == a


def test_response_csv_round_trip(tmp_path):
    pairs = random_pairs([f"s{i}" for i in range(6)], 10, seed=16)
    rs = oracle_label(pairs, {f"s{i}": float(i) for i in range(6)}, 3.0, seed=17)
    path = tmp_path / "log.csv"
    dataset.write_responses(rs, path)
    back = dataset.read_responses(path)
    assert back == rs


def test_response_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope,nope\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        dataset.read_responses(path)


def test_hit_batch_invariants():
    tasks = [PairSample(f"a{i}", f"b{i}", f"p{i}") for i in range(30)]
    with pytest.raises(ValueError, match="controls"):
        HitBatch(hit_id="h", tasks=tasks)  # zero controls
    with pytest.raises(ValueError, match="30"):
        HitBatch(hit_id="h", tasks=tasks[:10])
