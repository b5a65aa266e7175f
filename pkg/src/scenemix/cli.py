"""Command-line entry points for the composition pipeline.

Exit codes: 0 on success, 1 for usage errors (bad flags, unknown
subcommands), 2 for runtime failures (missing files, invalid data, training
divergence).  All diagnostics go to stderr; stdout carries results only.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import MixMethod, MixSpec, baseline_caption, mix, sample_mix_lambda
from .batcher import BatchConfig, count_configurations, run_pipeline
from .captions import CaptionRefiner, rule_refine
from .compose import CompositionSpec, SceneComposer, sample_spec, scene_record, \
    read_scene_dir, write_scene_dir
from .config import AppConfig
from .encoders import FrozenTextEncoder, restore_point_encoder
from .evaluate import EvalItem, NComposedDataset, RepositionTask, build_ncomposed, \
    eval_retrieval, reposition, reposition_satisfies, sweep_n
from .pointcloud import PointCloud, load_dataset, normalize_unit_sphere, read_cloud, \
    subsample, write_cloud
from .primitives import gen_primitives
from .relations import Relation
from .train import TrainConfig, train_toy

log = logging.getLogger(__name__)

_RELATION_FLAGS = {"over": Relation.OVER, "under": Relation.UNDER, "next-to": Relation.NEXT_TO}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this contract wants 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--log-level", choices=["debug", "info", "warning", "error"])

    parser = _Parser(prog="scenemix",
                     description="Relation-driven point-cloud scene composition pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-primitives", parents=[common],
                       help="generate a synthetic captioned primitives dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count-per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=1024)
    p.set_defaults(func=_cmd_gen_primitives)

    p = sub.add_parser("compose", parents=[common], help="compose scenes to a scene directory")
    p.add_argument("--data", help="dataset root (default from config)")
    p.add_argument("--method", default="scene",
                   choices=["scene", "cutmix-r", "cutmix-k", "mixup"])
    p.add_argument("--n", type=int, default=2, help="components per scene (scene method)")
    p.add_argument("--count", type=int, default=1, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-points", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("batchgen", parents=[common], help="run the batch pipeline to disk")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--batches", type=int, required=True)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-objects", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--prefetch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-points", type=int)
    p.set_defaults(func=_cmd_batchgen)

    p = sub.add_parser("count-configs", parents=[common],
                       help="count distinct composable configurations")
    p.add_argument("--d", type=int, required=True, help="dataset size")
    p.add_argument("--n", type=int, required=True, help="max components per scene")
    p.set_defaults(func=_cmd_count_configs)

    p = sub.add_parser("train", parents=[common], help="train the toy contrastive model")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="output directory (model.ckpt, metrics.csv)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-objects", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, help="global batch seed and encoder init seed")
    p.add_argument("--target-points", type=int)
    p.add_argument("--eval-each-epoch", action="store_true",
                   help="log single-object retrieval top-1 per epoch (slower)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("build-ncomposed", parents=[common],
                       help="build the n-composed retrieval benchmark")
    p.add_argument("--data")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-points", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_ncomposed)

    p = sub.add_parser("eval-retrieval", parents=[common],
                       help="retrieval metrics for a model on a scene directory")
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=_cmd_eval_retrieval)

    p = sub.add_parser("reposition", parents=[common],
                       help="move a scene component to satisfy a new relation")
    p.add_argument("--data")
    p.add_argument("--scenes", required=True)
    p.add_argument("--scene", required=True, help="scene id inside --scenes")
    p.add_argument("--relation", required=True, choices=sorted(_RELATION_FLAGS))
    p.add_argument("--model", required=True)
    p.add_argument("--out-ply", help="write the repositioned scene cloud here")
    p.set_defaults(func=_cmd_reposition)

    p = sub.add_parser("sweep-alpha", parents=[common],
                       help="train across composition rates and evaluate mixed retrieval")
    p.add_argument("--data")
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--seeds", default="11,12,13")
    p.add_argument("--csv", required=True)
    p.set_defaults(func=_cmd_sweep_alpha)

    p = sub.add_parser("sweep-n", parents=[common],
                       help="retrieval accuracy as scene complexity grows")
    p.add_argument("--data")
    p.add_argument("--model", required=True)
    p.add_argument("--n-max", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-points", type=int)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=_cmd_sweep_n)

    return parser


def _load_config(args: argparse.Namespace) -> AppConfig:
    cfg = AppConfig.load(args.config) if args.config else AppConfig()
    if args.log_level:
        cfg.log_level = args.log_level
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return cfg


def _dataset(args: argparse.Namespace, cfg: AppConfig):
    return load_dataset(args.data if getattr(args, "data", None) else cfg.dataset_root)


def _composer(cfg: AppConfig) -> SceneComposer:
    refine_fn = CaptionRefiner(cfg.refiner) if cfg.refiner.endpoint_url else None
    return SceneComposer(params=cfg.placement, policies=cfg.policies,
                         refine_fn=refine_fn, subsample_method=cfg.subsample_method)


def _batch_cfg(args: argparse.Namespace, cfg: AppConfig) -> BatchConfig:
    overrides = {}
    for flag, name in (("batch_size", "batch_size"), ("alpha", "alpha"),
                       ("max_objects", "max_objects"), ("workers", "workers"),
                       ("prefetch", "prefetch_depth"), ("seed", "global_seed"),
                       ("target_points", "target_points")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return dataclasses.replace(cfg.batch, **overrides)


def _cmd_gen_primitives(args: argparse.Namespace, cfg: AppConfig) -> int:
    index = gen_primitives(args.out, args.count_per_class, args.seed,
                           points_per_object=args.points)
    print(f"wrote {len(index)} objects to {args.out}")
    return 0


def _cmd_count_configs(args: argparse.Namespace, cfg: AppConfig) -> int:
    print(count_configurations(args.d, args.n))
    return 0


def _cmd_compose(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    composer = _composer(cfg)
    target = args.target_points or cfg.target_points
    refiner = CaptionRefiner(cfg.refiner) if cfg.refiner.endpoint_url else None
    records, clouds = [], []
    for i in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, i]))
        scene_id = f"scene_{i:05d}"
        if args.method == "scene":
            anchor = dataset.at(int(rng.integers(0, len(dataset))))
            spec = sample_spec(dataset, anchor, args.n, rng, target_points=target)
            scene = composer.compose(spec)
            record = scene_record(scene_id, scene)
            record["method"] = "scene"
            records.append(record)
            clouds.append(scene.cloud)
        else:
            pos = rng.choice(len(dataset), size=2, replace=False)
            a, b = dataset.at(int(pos[0])), dataset.at(int(pos[1]))
            cloud_a = subsample(normalize_unit_sphere(a.cloud), target, rng)
            cloud_b = subsample(normalize_unit_sphere(b.cloud), target, rng)
            spec = MixSpec(method=MixMethod(args.method), lam=sample_mix_lambda(rng),
                           seed=int(rng.integers(0, 2**63)))
            mixed = mix(cloud_a, cloud_b, spec, matching=cfg.mixup_matching)
            raw = baseline_caption(a.caption, b.caption)
            refined = refiner(raw) if refiner else rule_refine(raw)
            records.append({"scene_id": scene_id, "components": [a.id, b.id],
                            "relations": [], "raw_caption": raw.text,
                            "refined_caption": refined, "seed": spec.seed,
                            "method": args.method, "lambda": spec.lam})
            clouds.append(mixed)
    write_scene_dir(args.out, records, clouds)
    print(f"wrote {len(records)} scenes to {args.out}")
    return 0


def _cmd_batchgen(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    batch_cfg = _batch_cfg(args, cfg)
    composer = _composer(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def consume(batch) -> None:
        batch_dir = out / f"batch_{batch.index:05d}"
        batch_dir.mkdir(exist_ok=True)
        with open(out / f"batch_{batch.index:05d}.jsonl", "w", encoding="utf-8") as fh:
            for i, sample in enumerate(batch.samples):
                write_cloud(batch_dir / f"sample_{i:03d}.ply", sample.cloud)
                fh.write(json.dumps({"sample": i, "caption": sample.caption,
                                     "composed": sample.composed,
                                     "anchor_id": sample.anchor_id}, sort_keys=True) + "\n")

    stats = run_pipeline(batch_cfg, dataset, composer, consume, args.batches)
    print(f"wrote {stats.delivered} batches to {out} "
          f"(mean assembly {stats.mean_assembly_seconds * 1000:.1f} ms, "
          f"peak prefetch depth {stats.max_queue_depth})")
    return 0


def _train_once(dataset, batch_cfg: BatchConfig, cfg: AppConfig, train_cfg: TrainConfig,
                composer: SceneComposer, eval_fn=None, csv_path=None, checkpoint_path=None):
    loss_cfg = dataclasses.replace(cfg.loss, alpha=batch_cfg.alpha)
    return train_toy(dataset, batch_cfg, loss_cfg, train_cfg, composer=composer,
                     eval_fn=eval_fn, csv_path=csv_path, checkpoint_path=checkpoint_path)


def _cmd_train(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    batch_cfg = _batch_cfg(args, cfg)
    composer = _composer(cfg)
    train_overrides = {}
    for flag, name in (("epochs", "epochs"), ("batches_per_epoch", "batches_per_epoch"),
                       ("lr", "lr")):
        value = getattr(args, flag, None)
        if value is not None:
            train_overrides[name] = value
    if args.seed is not None:
        train_overrides["encoder_seed"] = args.seed
    train_cfg = dataclasses.replace(cfg.train, **train_overrides)

    eval_fn = None
    if args.eval_each_epoch:
        singles = build_ncomposed(dataset, 1, composer, seed=cfg.eval.seed)

        def eval_fn(point, text):  # noqa: F811 - deliberate rebind
            report = eval_retrieval(point.encode_cloud, text.encode, singles)
            return report.averaged_top1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = _train_once(dataset, batch_cfg, cfg, train_cfg, composer, eval_fn=eval_fn,
                         csv_path=out / "metrics.csv", checkpoint_path=out / "model.ckpt")
    final = result.history[-1] if result.history else {}
    print(f"trained {train_cfg.epochs} epochs; final loss "
          f"{final.get('total_loss', float('nan')):.4f}, tau {result.tau:.4f}; "
          f"checkpoint at {out / 'model.ckpt'}")
    return 0


def _cmd_build_ncomposed(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    composer = _composer(cfg)
    target = args.target_points or cfg.target_points
    built = build_ncomposed(dataset, args.n, composer, args.seed, target_points=target)
    records, clouds = [], []
    for item in built.items:
        if item.scene is None:
            records.append({"scene_id": item.id, "components": [item.id], "relations": [],
                            "raw_caption": item.caption, "refined_caption": item.caption,
                            "seed": args.seed})
        else:
            records.append(scene_record(item.id, item.scene))
        clouds.append(item.cloud)
    write_scene_dir(args.out, records, clouds)
    print(f"wrote {len(records)} scenes (n={args.n}) to {args.out}")
    return 0


def _load_eval_items(scene_dir: str) -> NComposedDataset:
    records = read_scene_dir(scene_dir)
    if not records:
        raise ValueError(f"no scenes listed in {scene_dir}")
    items = [EvalItem(id=r["scene_id"], cloud=read_cloud(r["ply_path"]),
                      caption=r["refined_caption"]) for r in records]
    return NComposedDataset(n=len(records[0]["components"]), items=items)


def _restore(model_path: str):
    encoder, log_tau, meta = restore_point_encoder(model_path)
    text = FrozenTextEncoder(dim=int(meta["dim"]), table_size=int(meta["table_size"]),
                             seed=int(meta["frozen_seed"]))
    return encoder, text, meta


def _cmd_eval_retrieval(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _load_eval_items(args.scenes)
    encoder, text, _ = _restore(args.model)
    report = eval_retrieval(encoder.encode_cloud, text.encode, dataset)
    print(f"scenes {report.size}")
    print(f"text->cloud top1 {report.text_to_cloud[1]:.4f} top5 {report.text_to_cloud[5]:.4f}")
    print(f"cloud->text top1 {report.cloud_to_text[1]:.4f} top5 {report.cloud_to_text[5]:.4f}")
    print(f"averaged top1 {report.averaged_top1:.4f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("size,top1_text_to_cloud,top5_text_to_cloud,"
                     "top1_cloud_to_text,top5_cloud_to_text,averaged_top1\n")
            fh.write(f"{report.size},{report.text_to_cloud[1]},{report.text_to_cloud[5]},"
                     f"{report.cloud_to_text[1]},{report.cloud_to_text[5]},"
                     f"{report.averaged_top1}\n")
    return 0


def _cmd_reposition(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    composer = _composer(cfg)
    record = next((r for r in read_scene_dir(args.scenes) if r["scene_id"] == args.scene), None)
    if record is None:
        raise ValueError(f"scene '{args.scene}' not found in {args.scenes}")
    if len(record["components"]) < 2 or not record["relations"]:
        raise ValueError(f"scene '{args.scene}' is not a composed multi-object scene")
    components = tuple(dataset.get(cid) for cid in record["components"])
    relations = tuple(Relation(v) for v in record["relations"])
    target_points = len(read_cloud(record["ply_path"]))
    spec = CompositionSpec(components=components, relations=relations,
                           target_points=target_points, seed=int(record["seed"]))
    scene = composer.compose(spec)
    encoder, text, _ = _restore(args.model)
    task = RepositionTask(scene=scene, target_relation=_RELATION_FLAGS[args.relation])
    result = reposition(task, point_encoder=encoder, text_encoder=text,
                        method=cfg.eval.reposition_method, steps=cfg.eval.reposition_steps,
                        step_size=cfg.eval.reposition_step_size)
    satisfied = reposition_satisfies(task, result, min_overlap=cfg.eval.min_overlap)
    if args.out_ply:
        pts = scene.cloud.points.copy()
        pts[scene.source_ids == 1] += result.offset
        write_cloud(args.out_ply, PointCloud(pts, scene.cloud.colors))
    print(f"offset {result.offset[0]:+.4f} {result.offset[1]:+.4f} {result.offset[2]:+.4f}")
    print(f"score {result.initial_score:.4f} -> {result.final_score:.4f} "
          f"({result.evaluations} evaluations)")
    print(f"satisfied {str(satisfied).lower()}")
    return 0


def _cmd_sweep_alpha(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    composer = _composer(cfg)
    alphas = [float(v) for v in args.alphas.split(",") if v != ""]
    seeds = [int(v) for v in args.seeds.split(",") if v != ""]
    rows = []
    for alpha in alphas:
        for seed in seeds:
            batch_cfg = dataclasses.replace(cfg.batch, alpha=alpha, global_seed=seed)
            train_cfg = dataclasses.replace(cfg.train, encoder_seed=seed)
            result = _train_once(dataset, batch_cfg, cfg, train_cfg, composer)
            scores = {}
            for n in (1, 3):
                built = build_ncomposed(dataset, n, composer, seed=cfg.eval.seed,
                                        target_points=cfg.batch.target_points)
                report = eval_retrieval(result.encoder.encode_cloud,
                                        result.text_encoder.encode, built)
                scores[n] = report.averaged_top1
            mixed = 0.5 * (scores[1] + scores[3])
            rows.append((alpha, seed, scores[1], scores[3], mixed))
            log.info("alpha %.2f seed %d: n1 %.4f n3 %.4f mixed %.4f",
                     alpha, seed, scores[1], scores[3], mixed)
    with open(args.csv, "w", encoding="utf-8") as fh:
        fh.write("alpha,seed,top1_n1,top1_n3,mixed_top1\n")
        for alpha, seed, n1, n3, mixed in rows:
            fh.write(f"{alpha},{seed},{n1},{n3},{mixed}\n")
    print(f"wrote {len(rows)} sweep rows to {args.csv}")
    return 0


def _cmd_sweep_n(args: argparse.Namespace, cfg: AppConfig) -> int:
    dataset = _dataset(args, cfg)
    composer = _composer(cfg)
    encoder, text, _ = _restore(args.model)
    target = args.target_points or cfg.batch.target_points
    rows = sweep_n(encoder.encode_cloud, text.encode, dataset, composer,
                   n_values=range(1, args.n_max + 1), seed=args.seed,
                   target_points=target, csv_path=args.csv)
    for n, report in rows:
        print(f"n={n} averaged_top1 {report.averaged_top1:.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:
        if log.isEnabledFor(logging.DEBUG):
            log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
