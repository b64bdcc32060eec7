"""Command-line entry point: train, generate, validate and energy."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from fragforge import __version__, kernels
from fragforge.chem import ChemError, bundled_manifest, load_fragment_library, read_xyz, write_xyz
from fragforge.config import ConfigError, RunConfig, apply_overrides, load_config, parse_config, serialize_config
from fragforge.energy import EnergyError
from fragforge.evaluation import classify_validity, evaluation_snapshot
from fragforge.neural.io import CheckpointError, load_params, read_checkpoint, save_params
from fragforge.policy import PolicyNet
from fragforge.trainer import TrainingError, train

log = logging.getLogger("fragforge")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def resolve_manifest(spec: str) -> Path:
    """A manifest path, or the name of a bundled multiset such as ``drug1``."""
    if not spec:
        raise ConfigError("config has no manifest")
    p = Path(spec)
    if p.is_file():
        return p
    try:
        return bundled_manifest(spec)
    except ChemError:
        raise ConfigError(f"manifest not found: {spec}") from None


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"out_dir={args.out}")
    return apply_overrides(cfg, overrides)


def cmd_train(args) -> int:
    try:
        cfg = _load_run_config(args)
        library = load_fragment_library(resolve_manifest(cfg.manifest))
        backend = cfg.make_backend()
    except (ConfigError, ChemError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(serialize_config(cfg))
    provenance = {
        "fragforge_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "seed": cfg.seed,
        "worker_seeds": [cfg.seed + k for k in range(cfg.workers)],
        "library_name": library.name,
        "library_digest": library.digest(),
        "manifest": str(resolve_manifest(cfg.manifest)),
    }
    (out / "provenance.json").write_text(json.dumps(provenance, indent=1))
    meta = {"config": cfg.to_dict(), "library_digest": library.digest()}
    policy = PolicyNet(library, cfg.policy(), seed=cfg.seed)
    save_params(out / "checkpoints" / "step_0000000.npz", policy.named_parameters(), {"step": 0, **meta})
    try:
        result = train(cfg.ppo(), library, backend, out_dir=out, start=cfg.start_spec(), policy=policy,
                       run_meta=meta, on_metrics=lambda r: log.info(
                           "step %d reward %s rot %.3f bond %.3f", r["step"], r["mean_episode_reward"],
                           r["cumulative_rotation_validity"], r["cumulative_bond_validity"]))
    except TrainingError as exc:
        log.error("training aborted: %s (last checkpoint kept in %s)", exc, out / "checkpoints")
        return EXIT_RUNTIME
    if cfg.total_steps > 0:
        save_params(out / "checkpoints" / "final.npz", result.policy.named_parameters(),
                    {"step": cfg.total_steps, **meta})
    log.info("done: %d metric records in %s", len(result.metrics), out)
    return EXIT_OK


def load_policy(checkpoint) -> tuple[PolicyNet, RunConfig, object]:
    meta, _ = read_checkpoint(checkpoint)
    if "config" not in meta:
        raise CheckpointError(f"{checkpoint} carries no run configuration")
    try:
        cfg = _from_dict(meta["config"])
    except ConfigError as exc:
        raise CheckpointError(f"{checkpoint}: bad embedded config ({exc})") from None
    library = load_fragment_library(resolve_manifest(cfg.manifest))
    if meta.get("library_digest") not in (None, library.digest()):
        raise CheckpointError(f"{checkpoint} was trained on a different fragment library")
    policy = PolicyNet(library, cfg.policy(), seed=cfg.seed)
    load_params(checkpoint, policy.named_parameters())
    return policy, cfg, library


def _from_dict(d: dict) -> RunConfig:
    return parse_config(yaml.safe_dump(d))


def cmd_generate(args) -> int:
    try:
        policy, cfg, library = load_policy(args.checkpoint)
        backend = cfg.make_backend()
    except (CheckpointError, ConfigError, ChemError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if args.n < 0:
        log.error("n must be >= 0")
        return EXIT_CONFIG
    out = Path(args.out or "generated")
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if args.seed is None else args.seed
    snap = evaluation_snapshot(policy, library, backend, args.n, step=0, seed=seed, start=cfg.start_spec())
    for k, (cloud, rep) in enumerate(zip(snap.structures, snap.reports)):
        (out / f"mol_{k:04d}.xyz").write_text(write_xyz(cloud, f"valid={rep.reason}"))
    summary = snap.metadata()
    summary.pop("step")
    summary.update({"checkpoint": str(args.checkpoint), "seed": seed})
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps({"n": args.n, "rotation_validity": snap.rotation_ratio, "bond_validity": snap.bond_ratio}))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cloud = read_xyz(args.xyz)
    except (OSError, ChemError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    rep = classify_validity(cloud)
    print(json.dumps({"file": str(args.xyz), "rotation_valid": rep.rotation_valid,
                      "bond_valid": rep.bond_valid, "reason": rep.reason, "formulas": list(rep.formulas)}))
    return EXIT_OK


def cmd_energy(args) -> int:
    try:
        cfg = _load_run_config(args)
        backend = cfg.make_backend(cached=False)
        cloud = read_xyz(args.xyz)
    except (OSError, ConfigError, ChemError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        energy = backend.evaluate(cloud)
    except EnergyError as exc:
        log.error("energy evaluation failed: %s", exc)
        return EXIT_RUNTIME
    print(json.dumps({"file": str(args.xyz), "backend": cfg.backend, "energy_kcal_mol": energy}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragforge", description="Fragment-based 3D molecule assembly with PPO.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE", help="repeatable")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="train a policy")
    common(t)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample structures from a checkpoint")
    g.add_argument("checkpoint")
    g.add_argument("-n", type=int, default=10)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="classify an XYZ structure")
    v.add_argument("xyz")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("energy", help="score an XYZ structure")
    e.add_argument("xyz")
    common(e, out=False)
    e.set_defaults(func=cmd_energy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    np.seterr(over="ignore", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
