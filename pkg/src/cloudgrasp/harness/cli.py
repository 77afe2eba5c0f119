"""Command-line entry point: `cloudgrasp <command> [flags]`.

Commands: gen-data, train-shape, eval-shape, gen-grasp-data, train-critic,
eval-grasp, ablate-views, domain-shift. Every command is a pure function of
(config, seed, input artifacts) to output artifacts plus a JSON report, and is
byte-reproducible. Exit codes: 0 success, 2 config validation, 3 missing
artifact/path, 4 data error, 5 infeasible/runtime.
"""

from __future__ import annotations

import os

# keep BLAS reductions single-threaded so reports are byte-reproducible
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import json
import sys
import time

import numpy as np

from .. import __version__
from ..cem import InfeasibleError, ScorerError
from ..critic import (CriticModel, DataError, class_balance, gen_grasp_dataset,
                      train_critic)
from ..scenesim.dataset import (read_episode_dataset, read_grasp_records,
                                write_episode_dataset, write_grasp_records)
from ..scenesim.episode import generate_episode
from ..shapepred import ShapeNetModel, eval_shape_iou, train_shape, DataError as ShapeDataError
from .config import DATA_ROOT_ENV, ExperimentConfig, ValidationError, data_root
from .metrics import MetricsReport
from .protocol import CriticPolicy, OracleScorerPolicy, RandomPolicy, eval_grasp_protocol

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PATH = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5


def _report(cfg: ExperimentConfig, command: str, **kw) -> MetricsReport:
    return MetricsReport(command=command, seed=cfg["seed"], config_hash=cfg.hash(),
                         code_version=__version__, **kw)


def _resolve(args) -> ExperimentConfig:
    overrides: dict[str, object] = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "views", None) is not None:
        overrides["shape.view_regime"] = args.views
    if getattr(args, "input_mode", None) is not None:
        overrides["critic.input_mode"] = args.input_mode
    if getattr(args, "noise_sigma", None) is not None:
        overrides["noise.sigma"] = args.noise_sigma
    if getattr(args, "hole_prob", None) is not None:
        overrides["noise.hole_prob"] = args.hole_prob
    if getattr(args, "noisy_fraction", None) is not None:
        overrides["data.noisy_fraction"] = args.noisy_fraction
    if getattr(args, "trials", None) is not None:
        overrides["eval.trials"] = args.trials
    if getattr(args, "episodes", None) is not None:
        overrides["ablate.episodes"] = args.episodes
    return ExperimentConfig.load(args.config, overrides)


def _out_path(args, default_name: str) -> str:
    path = args.out or os.path.join(data_root(), default_name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _load_episodes(path: str):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"episode dataset {path} not found")
    return read_episode_dataset(path)[0]


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    n = args.episodes if args.episodes is not None else cfg["eval.episodes"]
    if cfg["data.noisy_fraction"] > 0:
        episodes = [generate_episode(cfg["seed"] + i, cfg.scene_config(),
                                     cfg.rig_config(), noise=cfg.episode_noise(i))
                    for i in range(n)]
    else:
        noise = cfg.noise_model()
        episodes = [generate_episode(cfg["seed"] + i, cfg.scene_config(),
                                     cfg.rig_config(), noise=noise)
                    for i in range(n)]
    out = _out_path(args, "episodes")
    write_episode_dataset(out, episodes,
                          meta={"config_hash": cfg.hash(), "code_version": __version__})
    rep = _report(cfg, "gen-data", metrics={
        "episodes": n, "objects": sum(len(e.scene.objects) for e in episodes),
        "views_per_episode": len(episodes[0].snapshots)})
    rep.runtime_seconds = time.time() - t0
    rep.write(os.path.join(out, "report.json"))
    print(rep.summary())
    return EXIT_OK


def cmd_train_shape(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    episodes = _load_episodes(args.data)
    out = _out_path(args, "shape_model.ckpt")
    log_path = out + ".log.jsonl"
    if os.path.exists(log_path):
        os.remove(log_path)
    model, log = train_shape(episodes, cfg.shape_train_config(log_path=log_path),
                             cfg.shape_model_config())
    model.save(out)
    rep = _report(cfg, "train-shape", metrics={
        "epochs": cfg["shape.epochs"], "view_regime": cfg["shape.view_regime"],
        "final_loss": log[-1]["loss"],
        "final_val_iou": log[-1].get("val_bbox_iou")})
    rep.runtime_seconds = time.time() - t0
    rep.write(out + ".report.json")
    print(rep.summary())
    return EXIT_OK


def cmd_eval_shape(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    episodes = _load_episodes(args.data)
    model = ShapeNetModel.load(args.model)
    res = eval_shape_iou(model, episodes, regime=args.eval_sources,
                         margin=cfg["shape.crop_margin"])
    rep = _report(cfg, "eval-shape", metrics=res)
    rep.runtime_seconds = time.time() - t0
    out = _out_path(args, "eval_shape.report.json") if args.out else None
    if out:
        rep.write(out)
    print(rep.summary())
    return EXIT_OK


def cmd_gen_grasp_data(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    episodes = _load_episodes(args.data)
    model = None if args.oracle_cloud else ShapeNetModel.load(args.model)
    records = gen_grasp_dataset(episodes, model, cfg.grasp_data_config(),
                                oracle_clouds=args.oracle_cloud)
    balance = class_balance(records)
    if balance in (0.0, 1.0):
        print(f"warning: degenerate grasp labels (balance={balance})", file=sys.stderr)
    out = _out_path(args, "grasp_records")
    write_grasp_records(out, records,
                        meta={"config_hash": cfg.hash(), "code_version": __version__})
    rep = _report(cfg, "gen-grasp-data", metrics={
        "records": len(records), "positive_fraction": balance,
        "oracle_clouds": bool(args.oracle_cloud)})
    rep.runtime_seconds = time.time() - t0
    rep.write(os.path.join(out, "report.json"))
    print(rep.summary())
    return EXIT_OK


def cmd_train_critic(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    records, _ = read_grasp_records(args.grasp_data)
    model, log = train_critic(records, cfg.critic_train_config())
    out = _out_path(args, f"critic_{cfg['critic.input_mode']}.ckpt")
    model.save(out)
    rep = _report(cfg, "train-critic", metrics={
        "records": len(records), "input_mode": cfg["critic.input_mode"],
        "final_loss": log[-1]["loss"],
        "final_val_auc": log[-1].get("val_auc")})
    rep.runtime_seconds = time.time() - t0
    rep.write(out + ".report.json")
    print(rep.summary())
    return EXIT_OK


def _policy_from_args(cfg: ExperimentConfig, args):
    if args.policy == "random":
        return RandomPolicy(cfg["scene.placement_radius"])
    if args.policy == "oracle":
        return OracleScorerPolicy(cfg.gripper(), cfg.cem_config())
    critic = CriticModel.load(args.critic)
    mode = cfg["critic.input_mode"]
    shape_model = ShapeNetModel.load(args.model) if mode == "full-cloud" else None
    return CriticPolicy(critic, shape_model, mode, cfg.cem_config(),
                        crop_margin=cfg["shape.crop_margin"])


def cmd_eval_grasp(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    policy = _policy_from_args(cfg, args)
    records, rate = eval_grasp_protocol(
        policy, trials=cfg["eval.trials"], base_seed=cfg["seed"],
        scene_config=cfg.scene_config(), rig_config=cfg.rig_config(),
        noise=cfg.noise_model(), gripper=cfg.gripper())
    rep = _report(cfg, "eval-grasp",
                  trials=len(records), successes=sum(r.success for r in records),
                  metrics={"policy": policy.name, "noise_sigma": cfg["noise.sigma"],
                           "noise_hole_prob": cfg["noise.hole_prob"]})
    rep.runtime_seconds = time.time() - t0
    if args.out:
        rep.write(_out_path(args, "eval_grasp.report.json"))
    print(rep.summary())
    return EXIT_OK


def cmd_ablate_views(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    n = cfg["ablate.episodes"]
    train_eps = [generate_episode(cfg["seed"] + i, cfg.scene_config(), cfg.rig_config())
                 for i in range(n)]
    eval_eps = [generate_episode(20_000 + cfg["seed"] + i, cfg.scene_config(),
                                 cfg.rig_config()) for i in range(cfg["eval.episodes"])]
    regimes = [r.strip() for r in cfg["ablate.regimes"].split(",") if r.strip()]
    ious = {}
    series = ["regime,bbox_iou,mask_iou"]
    for regime in regimes:
        tc = cfg.shape_train_config(view_regime=regime)
        tc.epochs = cfg["ablate.epochs"]
        model, _ = train_shape(train_eps, tc, cfg.shape_model_config())
        res = eval_shape_iou(model, eval_eps, regime="4",
                             margin=cfg["shape.crop_margin"])
        ious[regime] = res
        series.append(f"{regime},{res['bbox_iou']},{res['mask_iou']}")
        print(f"  regime {regime}: bbox_iou={res['bbox_iou']:.4f} "
              f"mask_iou={res['mask_iou']:.4f}", flush=True)
    rep = _report(cfg, "ablate-views", metrics={
        "episodes": n, "regimes": regimes,
        "bbox_iou": {r: ious[r]["bbox_iou"] for r in regimes},
        "mask_iou": {r: ious[r]["mask_iou"] for r in regimes}})
    rep.runtime_seconds = time.time() - t0
    out = _out_path(args, "ablate_views.report.json")
    rep.write(out)
    with open(out.replace(".report.json", ".csv"), "w") as f:
        f.write("\n".join(series) + "\n")
    print(rep.summary())
    return EXIT_OK


def cmd_domain_shift(args) -> int:
    cfg = _resolve(args)
    t0 = time.time()
    sigma = cfg["noise.sigma"] or 0.005
    holes = cfg["noise.hole_prob"] or 0.02
    from ..scenesim.render import SensorNoiseModel
    noisy = SensorNoiseModel(sigma=sigma, hole_prob=holes,
                             quantization=cfg["noise.quantization"])
    critic_full = CriticModel.load(args.critic_full)
    critic_25d = CriticModel.load(args.critic_25d)
    shape_model = ShapeNetModel.load(args.model)
    policies = {
        "full-cloud": CriticPolicy(critic_full, shape_model, "full-cloud",
                                   cfg.cem_config(), cfg["shape.crop_margin"]),
        "partial-2.5D": CriticPolicy(critic_25d, None, "partial-2.5D",
                                     cfg.cem_config(), cfg["shape.crop_margin"]),
    }
    rates: dict[str, dict[str, float]] = {}
    for pname, policy in policies.items():
        rates[pname] = {}
        for label, noise in (("clean", None), ("noisy", noisy)):
            _, rate = eval_grasp_protocol(
                policy, trials=cfg["eval.trials"], base_seed=cfg["seed"],
                scene_config=cfg.scene_config(), rig_config=cfg.rig_config(),
                noise=noise, gripper=cfg.gripper())
            rates[pname][label] = rate
            print(f"  {pname} {label}: {rate:.3f}", flush=True)
    deg_full = rates["full-cloud"]["clean"] - rates["full-cloud"]["noisy"]
    deg_25d = rates["partial-2.5D"]["clean"] - rates["partial-2.5D"]["noisy"]
    rep = _report(cfg, "domain-shift", metrics={
        "trials_per_condition": cfg["eval.trials"],
        "noise_sigma": sigma, "noise_hole_prob": holes,
        "rates": rates,
        "degradation_full_cloud": deg_full,
        "degradation_partial_2_5d": deg_25d,
        "degradation_advantage": deg_25d - deg_full})
    rep.runtime_seconds = time.time() - t0
    rep.write(_out_path(args, "domain_shift.report.json"))
    print(rep.summary())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cloudgrasp",
        description="Point-cloud shape prediction and CEM grasping experiments. "
                    f"Data root: ${DATA_ROOT_ENV} (default '.').")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key")
        sp.add_argument("--out", help="output path")

    sp = sub.add_parser("gen-data", help="generate an episode dataset")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    sp.add_argument("--hole-prob", type=float, dest="hole_prob")
    sp.add_argument("--noisy-fraction", type=float, dest="noisy_fraction",
                    help="render this share of episodes with the noise model")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-shape", help="train the point-cloud predictor")
    common(sp)
    sp.add_argument("--data", required=True, help="episode dataset directory")
    sp.add_argument("--views", choices=["1", "2", "4", "full"])
    sp.set_defaults(fn=cmd_train_shape)

    sp = sub.add_parser("eval-shape", help="evaluate projected-cloud IOU")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--eval-sources", default="4", dest="eval_sources",
                    choices=["1", "2", "4", "full"])
    sp.set_defaults(fn=cmd_eval_shape)

    sp = sub.add_parser("gen-grasp-data", help="label heuristic grasps with the oracle")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", help="shape model checkpoint")
    sp.add_argument("--oracle-cloud", action="store_true",
                    help="use ground-truth clouds instead of predictions")
    sp.set_defaults(fn=cmd_gen_grasp_data)

    sp = sub.add_parser("train-critic", help="train the grasp critic")
    common(sp)
    sp.add_argument("--grasp-data", required=True, dest="grasp_data")
    sp.add_argument("--input-mode", choices=["full-cloud", "partial-2.5D"],
                    dest="input_mode")
    sp.set_defaults(fn=cmd_train_critic)

    sp = sub.add_parser("eval-grasp", help="run grasping trials")
    common(sp)
    sp.add_argument("--policy", default="critic",
                    choices=["critic", "oracle", "random"])
    sp.add_argument("--model", help="shape model checkpoint (full-cloud policy)")
    sp.add_argument("--critic", help="critic checkpoint")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--input-mode", choices=["full-cloud", "partial-2.5D"],
                    dest="input_mode")
    sp.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    sp.add_argument("--hole-prob", type=float, dest="hole_prob")
    sp.set_defaults(fn=cmd_eval_grasp)

    sp = sub.add_parser("ablate-views", help="train/eval per view-count regime")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(fn=cmd_ablate_views)

    sp = sub.add_parser("domain-shift", help="paired clean/noisy policy comparison")
    common(sp)
    sp.add_argument("--model", required=True, help="shape model checkpoint")
    sp.add_argument("--critic-full", required=True, dest="critic_full")
    sp.add_argument("--critic-25d", required=True, dest="critic_25d")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    sp.add_argument("--hole-prob", type=float, dest="hole_prob")
    sp.set_defaults(fn=cmd_domain_shift)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"path error: {e}", file=sys.stderr)
        return EXIT_PATH
    except (DataError, ShapeDataError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (InfeasibleError, ScorerError, FloatingPointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
