"""Command-line entry point.

One subcommand per workflow step: voxelize meshes, build HITs, serve the
collection service, train and evaluate ranking networks, and run the
analysis/visualization tools.  Every run is fully determined by its flags
plus the seed, and the seed is echoed in the summary line.

Exit codes: 0 success, 2 usage errors, 3 file/format errors, 4 data or
validation errors, 5 training divergence.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import _kernels, analysis, dataset, net, ranktrain, viz
from .geometry import ObjParseError, load_mesh, normalize_mesh
from .net import ModelFormatError
from .voxel import GridFormatError, read_grid, voxelize, write_grid

EXIT_OK = 0
EXIT_FILE = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5


def _load_grid_dir(path: str) -> list:
    names = sorted(n for n in os.listdir(path) if n.endswith(".srvox"))
    if not names:
        raise FileNotFoundError(f"no .srvox files in {path}")
    return [read_grid(os.path.join(path, n)) for n in names]


def _grids_by_id(grids) -> dict:
    return {g.shape_id: g for g in grids}


def _pairs_from_log(log_path: str, voxels_dir: str):
    responses = dataset.read_responses(log_path)
    grids = _grids_by_id(_load_grid_dir(voxels_dir))
    return responses, grids


def _train_config(args) -> ranktrain.TrainConfig:
    return ranktrain.TrainConfig(c_p=args.cp, alpha=args.alpha,
                                 iterations=args.iterations, seed=args.seed,
                                 filter_fraction=args.filter)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", choices=("full", "conv"), default="full")
    p.add_argument("--resolution", type=int, default=15)
    p.add_argument("--cp", type=float, default=100.0, help="loss weight C_p")
    p.add_argument("--alpha", type=float, default=1e-4, help="learning rate")
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filter", type=float, default=0.10,
                   help="near-tie filter fraction for validation accuracy")


def cmd_voxelize(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    names = sorted(n for n in os.listdir(args.meshes) if n.lower().endswith(".obj"))
    if not names:
        raise FileNotFoundError(f"no .obj files in {args.meshes}")

    def one(name: str) -> str:
        mesh = normalize_mesh(load_mesh(os.path.join(args.meshes, name)), args.padding)
        grid = voxelize(mesh, args.resolution, args.fill)
        out = os.path.join(args.out, mesh.name + ".srvox")
        write_grid(grid, out)
        return out

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            list(pool.map(one, names))
    else:
        for name in names:
            one(name)
    print(f"voxelize: {len(names)} meshes -> {args.out} "
          f"(R={args.resolution}, fill={args.fill}, backend={_kernels.BACKEND})")
    return EXIT_OK


def cmd_synth(args) -> int:
    grids = dataset.synth_shapes(args.n, args.resolution, args.family, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for g in grids:
        write_grid(g, os.path.join(args.out, g.shape_id + ".srvox"))
    msg = f"synth: {args.n} {args.family} shapes at R={args.resolution} -> {args.out}"
    if args.labels:
        pairs = dataset.random_pairs([g.shape_id for g in grids], args.pairs,
                                     args.seed + 1)
        latent = {g.shape_id: dataset.latent_score(g, args.latent) for g in grids}
        steep = math.inf if args.steepness == 0 else args.steepness
        responses = dataset.oracle_label(pairs, latent, steep, args.seed + 2,
                                         workers=args.workers)
        dataset.write_responses(responses, args.labels)
        msg += (f", {len(responses)} oracle responses ({args.latent}, "
                f"k={'inf' if steep == math.inf else steep}) -> {args.labels}")
    print(msg + f" (seed={args.seed})")
    return EXIT_OK


def cmd_make_hits(args) -> int:
    grids = _load_grid_dir(args.voxels)
    ugly = [s for s in args.ugly.split(",") if s]
    ids = [g.shape_id for g in grids if g.shape_id not in set(ugly)]
    batches = dataset.make_hits(ids, ugly, args.hits, args.seed)
    if args.copies > 1:
        replicated = []
        for b in batches:
            for c in range(args.copies):
                replicated.append(dataset.HitBatch(hit_id=f"{b.hit_id}c{c:02d}",
                                                   tasks=list(b.tasks)))
        batches = replicated
    key = dataset.control_key(batches, ugly)
    from .server import batches_to_json
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(batches_to_json(batches, key), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"make-hits: {len(batches)} HITs ({len(ids)} shapes, {len(ugly)} ugly) "
          f"-> {args.out} (seed={args.seed})")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import CollectionState, batches_from_json, create_app
    with open(args.batches, "r", encoding="utf-8") as fh:
        batches, key = batches_from_json(json.load(fh))
    grids = _grids_by_id(_load_grid_dir(args.voxels))
    persist_dir = os.path.dirname(os.path.abspath(args.log)) if args.log else None
    state = CollectionState(batches, key, grids, persist_dir=persist_dir)
    app = create_app(state, ui_dir=args.ui)
    print(f"serve: {len(batches)} HITs on port {args.port} (log dir: {persist_dir})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_train(args) -> int:
    responses, grids = _pairs_from_log(args.pairs, args.voxels)
    train_rs, val_rs = dataset.split_dataset(responses, args.val_fraction, args.seed)
    train_pairs = dataset.pairs_to_grids(train_rs, grids)
    val_pairs = dataset.pairs_to_grids(val_rs, grids)

    arch = net.build_architecture(args.arch, args.resolution)
    config = _train_config(args)
    if args.select_alpha:
        alphas = [float(a) for a in args.alpha_grid.split(",")]
        best = ranktrain.select_learning_rate(arch, train_pairs, val_pairs, alphas,
                                              config)
        config = replace(config, alpha=best)
    params = net.init_params(arch, args.seed)
    trained, history = ranktrain.train(params, train_pairs, config, val_pairs)
    net.save_params(trained, args.out)
    if args.history:
        history.write_csv(args.history)
    res = ranktrain.validation_accuracy(trained, val_pairs, args.filter)
    filt = "n/a" if res.filtered_acc is None else f"{res.filtered_acc:.4f}"
    print(f"train: arch={args.arch}/{args.resolution} pairs={len(train_pairs)} "
          f"alpha={config.alpha:g} iters={config.iterations} "
          f"val_full={res.full_acc:.4f} val_filtered={filt} (kept {res.n_kept}) "
          f"-> {args.out} (seed={args.seed})")
    return EXIT_OK


def cmd_score(args) -> int:
    params = net.load_params(args.model)
    grid = read_grid(args.grid)
    y = net.score(params, grid)
    print(f"score: {grid.shape_id} {y:.17g}")
    return EXIT_OK


def cmd_rank(args) -> int:
    params = net.load_params(args.model)
    grids = _load_grid_dir(args.voxels)
    ranked = analysis.rank_shapes(params, grids)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(ranked.csv_rows()) + "\n")
    top = ranked.entries[0]
    print(f"rank: {len(grids)} shapes -> {args.out} (top: {top[0]} {top[1]:.6f})")
    return EXIT_OK


def cmd_validate(args) -> int:
    params = net.load_params(args.model)
    responses, grids = _pairs_from_log(args.pairs, args.voxels)
    pairs = dataset.pairs_to_grids(responses, grids)
    res = ranktrain.validation_accuracy(params, pairs, args.filter)
    filt = "n/a" if res.filtered_acc is None else f"{res.filtered_acc:.4f}"
    print(f"validate: pairs={len(pairs)} full={res.full_acc:.4f} "
          f"filtered={filt} kept={res.n_kept}/{len(pairs)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.arch == "full":
        arch = net.build_architecture(
            "full", args.res, widths=(args.res ** 3, args.hidden1, args.hidden2, 1))
    else:
        mask = args.mask if args.mask else max(2, args.res // 2)
        stride = args.stride if args.stride else max(1, mask // 2)
        d = (args.res - mask) // stride + 1
        arch = net.build_architecture(
            "conv", args.res, channels=args.channels, mask=mask, stride=stride,
            per_channel=(d ** 3, args.hidden1, 1), merge=(args.channels, args.hidden2, 1))
    err = ranktrain.gradient_check(arch, seed=args.seed, n_pairs=args.pairs,
                                   epsilon=args.epsilon)
    ok = err < 1e-5
    print(f"gradcheck: arch={args.arch}/{args.res} params={net.n_params(arch)} "
          f"max_rel_err={err:.3e} ({'ok' if ok else 'FAIL'}) (seed={args.seed})")
    return EXIT_OK if ok else EXIT_DATA


def cmd_consistency(args) -> int:
    responses = dataset.read_responses(args.log)
    if args.log_b:
        report = dataset.consistency(responses, dataset.read_responses(args.log_b))
        mode = "two-log"
    else:
        report = dataset.random_split_consistency(responses, args.seed)
        mode = "random-split"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("pair_id,match\n")
            for row in report.pairs:
                fh.write(f"{row.pair_id},{int(row.match)}\n")
    print(f"consistency ({mode}): {report.matches}/{report.total} matches "
          f"({report.match_rate:.3f}) (seed={args.seed})")
    return EXIT_OK


def cmd_ttest(args) -> int:
    res = analysis.ttest_equal_var(args.mean1, args.std1, args.n1,
                                   args.mean2, args.std2, args.n2)
    print(f"ttest: t={res.t:.4f} df={res.df} p={res.p_value:.6g}")
    return EXIT_OK


def cmd_agreement(args) -> int:
    params = net.load_params(args.model)
    responses, grids = _pairs_from_log(args.log, args.voxels)
    bins = analysis.agreement_gap_analysis(responses, params, grids)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin,n_pairs,mean_diff\n")
        for b in bins:
            fh.write(f"{b.label},{b.n_pairs},{b.mean_diff:.17g}\n")
    summary = " ".join(f"{b.label}:{b.mean_diff:.4f}" for b in bins)
    print(f"agreement: {len(bins)} bins -> {args.out} ({summary})")
    return EXIT_OK


def cmd_curve(args) -> int:
    responses, grids = _pairs_from_log(args.pairs, args.voxels)
    train_rs, val_rs = dataset.split_dataset(responses, args.val_fraction, args.seed)
    train_pairs = dataset.pairs_to_grids(train_rs, grids)
    val_pairs = dataset.pairs_to_grids(val_rs, grids)
    arch = net.build_architecture(args.arch, args.resolution)
    fractions = [float(f) for f in args.fractions.split(",")]
    points = analysis.learning_curve(arch, train_pairs, val_pairs, fractions,
                                     _train_config(args))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fraction,val_acc_full\n")
        for f, acc in points:
            fh.write(f"{f:g},{acc:.6f}\n")
    summary = " ".join(f"{f:g}:{acc:.3f}" for f, acc in points)
    print(f"curve: {summary} -> {args.out} (seed={args.seed})")
    return EXIT_OK


def cmd_embed(args) -> int:
    grids = _load_grid_dir(args.voxels)
    ids = [g.shape_id for g in grids]
    if args.model:
        params = net.load_params(args.model)
        feats = np.stack([viz.inner_activations(params, g, args.layer) for g in grids])
        source = f"layer {args.layer} activations"
    else:
        from .voxel import grid_to_input
        feats = np.stack([grid_to_input(g) for g in grids])
        source = "raw voxels"
    emb = viz.tsne(feats, perplexity=args.perplexity, iterations=args.iterations,
                   seed=args.seed, shape_ids=ids)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(emb.csv_rows()) + "\n")
    print(f"embed: {len(ids)} shapes from {source}, KL={emb.kl_divergence:.4f} "
          f"-> {args.out} (seed={args.seed})")
    return EXIT_OK


def cmd_atlas(args) -> int:
    grids = _load_grid_dir(args.voxels)
    by_id = _grids_by_id(grids)
    ids, xs, ys = [], [], []
    with open(args.embedding, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "shape_id,x,y":
            raise ValueError(f"{args.embedding}: bad embedding header {header!r}")
        for line in fh:
            sid, x, y = line.strip().split(",")
            ids.append(sid)
            xs.append(float(x))
            ys.append(float(y))
    params = net.load_params(args.model)
    scores = net.score_many(params, [by_id[sid] for sid in ids])
    emb = viz.Embedding2D(coords=np.column_stack([xs, ys]), kl_divergence=0.0,
                          iterations=0, shape_ids=ids, kl_history=np.zeros(0))
    layout = viz.atlas(emb, scores.tolist(), args.smin, args.smax,
                       canvas=(args.canvas, args.canvas))
    svg = viz.emit_svg(layout, viz.silhouette_renderer(by_id))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    print(f"atlas: {len(ids)} icons on {args.canvas:g}x{args.canvas:g} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shaperank",
                                     description="3D shape aesthetics from pairwise preferences")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="OBJ meshes -> SRVOX occupancy grids")
    p.add_argument("--meshes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=15)
    p.add_argument("--fill", choices=("surface", "solid"), default="surface")
    p.add_argument("--padding", type=float, default=0.05)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("synth", help="procedural shapes and oracle labels")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--resolution", type=int, default=15)
    p.add_argument("--family", default="mixed",
                   choices=("box", "ellipsoid", "blob", "mixed"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", help="also write oracle responses to this CSV")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--latent", default="mix",
                   choices=("mix", "volume", "symmetry", "smoothness"))
    p.add_argument("--steepness", type=float, default=0.0,
                   help="oracle agreement steepness; 0 means noise-free")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("make-hits", help="build HIT batches with controls")
    p.add_argument("--voxels", required=True)
    p.add_argument("--ugly", required=True, help="comma-separated ugly shape ids")
    p.add_argument("--hits", type=int, default=1)
    p.add_argument("--copies", type=int, default=1,
                   help="replicate each HIT for this many workers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_hits)

    p = sub.add_parser("serve", help="run the collection service")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--batches", required=True)
    p.add_argument("--voxels", required=True)
    p.add_argument("--log", required=True, help="response log CSV path")
    p.add_argument("--ui", help="serve this directory as the annotation UI")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train", help="train a ranking network from a response log")
    p.add_argument("--pairs", required=True, help="response log CSV")
    p.add_argument("--voxels", required=True)
    p.add_argument("--out", required=True, help="output SRNET model")
    p.add_argument("--history", help="write per-iteration loss CSV here")
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--select-alpha", action="store_true",
                   help="pick alpha from --alpha-grid by validation accuracy")
    p.add_argument("--alpha-grid", default="1e-1,1e-2,1e-3,1e-4,1e-5")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one SRVOX grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="rank a directory of grids by score")
    p.add_argument("--model", required=True)
    p.add_argument("--voxels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("validate", help="full and filtered pairwise accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True, help="response log CSV")
    p.add_argument("--voxels", required=True)
    p.add_argument("--filter", type=float, default=0.10)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--arch", choices=("full", "conv"), default="full")
    p.add_argument("--res", type=int, default=8)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--hidden1", type=int, default=8)
    p.add_argument("--hidden2", type=int, default=4)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--mask", type=int, default=0)
    p.add_argument("--stride", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("consistency", help="majority-match analysis of a response log")
    p.add_argument("--log", required=True)
    p.add_argument("--log-b", help="second log; compare the two instead of splitting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("ttest", help="two-sample pooled-variance t-test")
    p.add_argument("--mean1", type=float, required=True)
    p.add_argument("--std1", type=float, required=True)
    p.add_argument("--n1", type=int, required=True)
    p.add_argument("--mean2", type=float, required=True)
    p.add_argument("--std2", type=float, required=True)
    p.add_argument("--n2", type=int, required=True)
    p.set_defaults(func=cmd_ttest)

    p = sub.add_parser("agreement", help="score gap per agreement group")
    p.add_argument("--log", required=True, help="multi-worker response log CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--voxels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("curve", help="validation accuracy vs training-set size")
    p.add_argument("--pairs", required=True, help="response log CSV")
    p.add_argument("--voxels", required=True)
    p.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    p.add_argument("--val-fraction", type=float, default=0.05)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("embed", help="t-SNE of raw voxels or inner activations")
    p.add_argument("--voxels", required=True)
    p.add_argument("--model", help="use inner activations of this model")
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("atlas", help="score-scaled icon atlas SVG")
    p.add_argument("--embedding", required=True, help="CSV from the embed command")
    p.add_argument("--model", required=True)
    p.add_argument("--voxels", required=True)
    p.add_argument("--smin", type=float, default=6.0)
    p.add_argument("--smax", type=float, default=30.0)
    p.add_argument("--canvas", type=float, default=800.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_atlas)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ObjParseError, GridFormatError, ModelFormatError, FileNotFoundError,
            NotADirectoryError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except ranktrain.TrainDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
