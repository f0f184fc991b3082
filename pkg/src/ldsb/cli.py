"""``ldsb`` command-line front end.

Subcommands: gen, train, analyze, orthop, robustness, ntk, pipeline.

Configuration is resolved in layers, later layers winning: built-in
defaults, ``--preset``, ``--config FILE`` (JSON), then individual flags.
Unknown keys are rejected at every level before any computation starts.
Exit status is 0 on success, 1 on invalid input or usage, 2 on runtime
failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from ._io import atomic_write_text, write_json
from .analysis import (
    auto_rank,
    boundary_grid,
    boundary_grid_csv,
    mixing_metrics,
    optimize_projector,
    singular_decay,
    top_subspace,
)
from .datasets import IfmSpec, load_dataset, make_splits, save_dataset
from .exceptions import InvalidInput, LdsbError
from .linalg import RngState
from .model import init_network, load_checkpoint, save_checkpoint
from .ntk import ntk_report
from .orthop import diversity_report, orthop_train, robustness_sweep, with_noise
from .training import PRESETS, TrainConfig, evaluate, train

# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "master_seed": 0,
    "family": "ifm",
    "regime": "rich",
    "train_preset": None,
    "hidden_width": 100,
    "dataset": {
        "d": 20,
        "gamma": 1.5,
        "n_train": 1000,
        "n_val": 500,
        "n_test": 1000,
        "num_nonlinear": 19,
        "num_noise": 0,
    },
    "train": {},
    "analysis": {
        "rank": 1,
        "lambda": 1.0,
        "method": "auto",
        "energy": 0.99,
        "num_pairs": None,
        "opt_steps": 2000,
        "opt_lr": 0.1,
        "grid_extent": 3.0,
        "grid_res": 101,
    },
    "diversity": {"noise_sigma": 1.0},
    "robustness": {"sigmas": [0.0, 0.25, 0.5, 1.0, 2.0], "trials": 5},
    "ntk": {"d": 100000, "gamma": 7.0},
}

_COLLAGE = {"d": 20, "gamma": 1.0, "num_nonlinear": 18, "num_noise": 1}

EXPERIMENT_PRESETS = {
    "ifm-basic": {"family": "ifm"},
    "ifm-lazy": {"family": "ifm", "regime": "lazy"},
    "collage-xor": {"family": "collage-xor", "dataset": _COLLAGE},
    "collage-sphere": {"family": "collage-sphere", "dataset": _COLLAGE},
}

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


def _merge(base: dict, override: dict, where: str = "config") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise InvalidInput(f"unknown key {where}.{key}")
        if key == "train":
            if not isinstance(value, dict):
                raise InvalidInput(f"{where}.train must be an object")
            unknown = set(value) - _TRAIN_KEYS
            if unknown:
                raise InvalidInput(f"unknown key {where}.train.{sorted(unknown)[0]}")
            out[key] = {**out[key], **value}
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidInput(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def _apply_preset(cfg: dict, name: str) -> dict:
    if name in EXPERIMENT_PRESETS:
        return _merge(cfg, EXPERIMENT_PRESETS[name])
    if name in PRESETS:
        return _merge(cfg, {"train_preset": name, "regime": name.split("-")[0]})
    choices = sorted(EXPERIMENT_PRESETS) + sorted(PRESETS)
    raise InvalidInput(f"unknown preset {name!r}; choose from {choices}")


def _parse_rank(text):
    if text == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise InvalidInput(f"--rank must be an integer or 'auto', got {text!r}") from None
    return k


def _parse_sigmas(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InvalidInput(f"--sigmas must be a comma-separated list of numbers, got {text!r}") from None


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.preset:
        cfg = _apply_preset(cfg, args.preset)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInput(f"{args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise InvalidInput("config file must hold a JSON object")
        preset_name = user.pop("preset", None)
        if preset_name:
            cfg = _apply_preset(cfg, preset_name)
        cfg = _merge(cfg, user)

    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.regime is not None:
        cfg["regime"] = args.regime
    if args.rank is not None:
        cfg["analysis"]["rank"] = _parse_rank(args.rank)
    if args.lam is not None:
        cfg["analysis"]["lambda"] = args.lam
    if args.sigmas is not None:
        cfg["robustness"]["sigmas"] = _parse_sigmas(args.sigmas)
    if args.trials is not None:
        cfg["robustness"]["trials"] = args.trials
    if args.steps is not None:
        cfg["train"]["steps"] = args.steps
    if args.width is not None:
        cfg["hidden_width"] = args.width
    target = "ntk" if args.command == "ntk" else "dataset"
    if args.d is not None:
        cfg[target]["d"] = args.d
        if target == "dataset":
            ds = cfg["dataset"]
            ds["num_nonlinear"] = args.d - 1 - ds["num_noise"]
    if args.gamma is not None:
        cfg[target]["gamma"] = args.gamma
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    seed = cfg["master_seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise InvalidInput("master_seed must be an integer in [0, 2^64)")
    if cfg["regime"] not in ("rich", "lazy"):
        raise InvalidInput(f"regime must be 'rich' or 'lazy', got {cfg['regime']!r}")
    if cfg["family"] not in ("ifm", "collage-xor", "collage-sphere"):
        raise InvalidInput(f"unknown dataset family {cfg['family']!r}")
    if cfg["train_preset"] is not None and cfg["train_preset"] not in PRESETS:
        raise InvalidInput(f"unknown train_preset {cfg['train_preset']!r}")
    if not isinstance(cfg["hidden_width"], int) or cfg["hidden_width"] < 1:
        raise InvalidInput("hidden_width must be a positive integer")
    train_config(cfg).validate()
    an = cfg["analysis"]
    rank = an["rank"]
    if rank != "auto" and (not isinstance(rank, int) or isinstance(rank, bool) or rank < 1):
        raise InvalidInput("analysis.rank must be a positive integer or 'auto'")
    if an["method"] not in ("auto", "svd", "optimize"):
        raise InvalidInput(f"unknown analysis.method {an['method']!r}")
    if not an["lambda"] >= 0:
        raise InvalidInput("analysis.lambda must be >= 0")
    if not 0 < an["energy"] <= 1:
        raise InvalidInput("analysis.energy must lie in (0, 1]")
    rob = cfg["robustness"]
    if not rob["sigmas"] or any(s < 0 for s in rob["sigmas"]):
        raise InvalidInput("robustness.sigmas must be a nonempty list of nonnegative numbers")
    if not isinstance(rob["trials"], int) or rob["trials"] < 1:
        raise InvalidInput("robustness.trials must be a positive integer")
    if not cfg["diversity"]["noise_sigma"] >= 0:
        raise InvalidInput("diversity.noise_sigma must be >= 0")


def train_config(cfg: dict, seed_offset: int = 0) -> TrainConfig:
    base = PRESETS[cfg["train_preset"] or cfg["regime"]]
    return replace(base, **cfg["train"], seed=cfg["master_seed"] + seed_offset)


def dataset_spec(cfg: dict) -> IfmSpec:
    spec = IfmSpec(**cfg["dataset"], seed=cfg["master_seed"])
    spec.validate()
    return spec


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# outputs


class _Outputs:
    """Tracks files written under the output directory for the manifest."""

    def __init__(self, out_dir: str):
        self.dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.files = []

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.dir, name)

    def text(self, name: str, text: str) -> None:
        atomic_write_text(self.path(name), text)

    def json(self, name: str, obj) -> None:
        write_json(self.path(name), obj)

    def manifest(self, command: str, cfg: dict, inputs=()) -> None:
        digests = {}
        for name in self.files:
            with open(os.path.join(self.dir, name), "rb") as fh:
                digests[name] = hashlib.sha256(fh.read()).hexdigest()
        write_json(
            os.path.join(self.dir, "manifest.json"),
            {
                "command": command,
                "config": cfg,
                "config_hash": config_hash(cfg),
                "inputs": list(inputs),
                "outputs": digests,
                "versions": {
                    "ldsb": __version__,
                    "python": platform.python_version(),
                    "numpy": np.__version__,
                },
            },
        )


def _fit(cfg, data, val=None, seed_offset=0):
    tc = train_config(cfg, seed_offset)
    net = init_network(cfg["regime"], cfg["hidden_width"], data.d, data.num_classes, RngState(tc.seed, "init"))
    return train(net, data, tc, val)


def _rank(cfg, net) -> int:
    rank = cfg["analysis"]["rank"]
    k = auto_rank(net, cfg["analysis"]["energy"]) if rank == "auto" else rank
    if not 1 <= k < net.d:
        raise InvalidInput(f"rank must lie in [1, {net.d - 1}], got {k}")
    return k


def _projector(cfg, net, fit_data):
    an = cfg["analysis"]
    k = _rank(cfg, net)
    method = an["method"]
    if method == "auto":
        method = "svd" if net.regime == "rich" else "optimize"
    if method == "svd":
        return top_subspace(net, k)
    return optimize_projector(
        net, fit_data, k, an["lambda"], steps=an["opt_steps"], lr=an["opt_lr"], seed=cfg["master_seed"]
    )


def _analyze(cfg, net, fit_data, eval_data, out: _Outputs):
    P = _projector(cfg, net, fit_data)
    report = mixing_metrics(net, eval_data, P, cfg["analysis"]["num_pairs"], RngState(cfg["master_seed"], "cli/mixing"))
    out.json("sbreport.json", report.to_dict())
    out.json("projector.json", {"d": P.d, "k": P.k, "Q": P.Q.tolist()})
    sv = singular_decay(net)
    out.text("singular_values.csv", "index,normalized_sv\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(sv.tolist())))
    if net.d >= 3:
        an = cfg["analysis"]
        u, v, labels = boundary_grid(net, top_subspace(net, 2), an["grid_extent"], an["grid_res"])
        out.text("boundary_grid.csv", boundary_grid_csv(u, v, labels))
    return report, P


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, cfg):
    out = _Outputs(args.out)
    spec = dataset_spec(cfg)
    splits = make_splits(spec, cfg["family"])
    for name, ds in splits.items():
        save_dataset(ds, out.path(f"{name}.csv"))
    first = splits["train"]
    out.json(
        "meta.json",
        {
            "family": cfg["family"],
            "spec": asdict(spec),
            "sizes": {k: v.n for k, v in splits.items()},
            "num_classes": first.num_classes,
            "linear_coord": first.meta.linear_coord,
            "margin_gamma": first.meta.margin_gamma,
            "coord_roles": list(first.meta.coord_roles),
        },
    )
    out.manifest("gen", cfg)
    return f"gen: wrote {cfg['family']} splits ({', '.join(f'{k}={v.n}' for k, v in splits.items())}) to {args.out}"


def _need(args, *names):
    for name in names:
        if not getattr(args, name):
            raise InvalidInput(f"--{name} is required for '{args.command}'")


def cmd_train(args, cfg):
    _need(args, "data")
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    out = _Outputs(args.out)
    net, log = _fit(cfg, data, val)
    save_checkpoint(net, out.path("checkpoint.json"))
    out.text("trainlog.csv", log.to_csv())
    out.manifest("train", cfg, [args.data] + ([args.val] if args.val else []))
    last = log.records[-1]
    return f"train: regime={cfg['regime']} steps={last['step']} train_acc={last['train_acc']:.4f} effrank_W={last['effrank_W']:.3f}"


def cmd_analyze(args, cfg):
    _need(args, "data", "model")
    data = load_dataset(args.data)
    fit_data = load_dataset(args.fit_data) if args.fit_data else data
    net = load_checkpoint(args.model)
    out = _Outputs(args.out)
    report, P = _analyze(cfg, net, fit_data, data, out)
    out.manifest("analyze", cfg, [args.model, args.data])
    return (
        f"analyze: rank={P.k} acc={report.acc:.4f} pperp_ra={report.pperp_ra:.4f} "
        f"p_ra={report.p_ra:.4f} pperp_lc={report.pperp_lc:.4f} p_lc={report.p_lc:.4f}"
    )


def cmd_orthop(args, cfg):
    _need(args, "data", "model")
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    f = load_checkpoint(args.model)
    k = _rank(cfg, f)
    out = _Outputs(args.out)
    g, P, log = orthop_train(f, data, k, train_config(cfg, 2000), val, regime=cfg["regime"])
    save_checkpoint(g, out.path("f_proj.json"))
    out.json("projector.json", {"d": P.d, "k": P.k, "Q": P.Q.tolist()})
    out.text("trainlog_proj.csv", log.to_csv())
    out.manifest("orthop", cfg, [args.model, args.data])
    return f"orthop: rank={k} f_proj train_acc={evaluate(g, data):.4f}"


def _named(spec: str, flag: str):
    name, sep, value = spec.partition("=")
    if not sep or not name or not value:
        raise InvalidInput(f"{flag} expects NAME=VALUE, got {spec!r}")
    return name, value


def cmd_robustness(args, cfg):
    _need(args, "data", "model")
    data = load_dataset(args.data)
    models = {}
    for spec in args.model:
        name, path = _named(spec, "--model")
        if name in models:
            raise InvalidInput(f"duplicate model name {name!r}")
        models[name] = load_checkpoint(path)
    for spec in args.ensemble or ():
        name, members = _named(spec, "--ensemble")
        parts = members.split("+")
        missing = [p for p in parts if p not in models]
        if missing:
            raise InvalidInput(f"ensemble {name!r} refers to unknown models {missing}")
        models[name] = tuple(models[p] for p in parts)
    rob = cfg["robustness"]
    out = _Outputs(args.out)
    curve = robustness_sweep(models, data, rob["sigmas"], rob["trials"], RngState(cfg["master_seed"], "cli/robustness"))
    out.text("robustness.csv", curve.to_csv())
    out.manifest("robustness", cfg, [args.data])
    return f"robustness: {len(models)} models x {len(curve.sigmas)} sigmas x {rob['trials']} trials"


def cmd_ntk(args, cfg):
    out = _Outputs(args.out)
    report = ntk_report(int(cfg["ntk"]["d"]), float(cfg["ntk"]["gamma"]))
    out.json("ntk.json", report)
    out.manifest("ntk", cfg)
    nv = report["neg_values"]
    return (
        f"ntk: d={report['d']} gamma={report['gamma']:g} xi={report['xi']:.6f} "
        f"neg(0)={nv['at_0']:.4g} neg(0.73)={nv['at_0.73']:.4g} pos_crossing={report['pos_crossing']}"
    )


class _Stage:
    """Tags any exception raised inside the block with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not hasattr(exc, "ldsb_stage"):
            exc.ldsb_stage = self.name
        return False


def cmd_pipeline(args, cfg):
    out = _Outputs(args.out)
    seed = cfg["master_seed"]
    with _Stage("gen"):
        splits = make_splits(dataset_spec(cfg), cfg["family"])
        for name, ds in splits.items():
            save_dataset(ds, out.path(f"{name}.csv"))
    tr, va, te = splits["train"], splits["val"], splits["test"]
    with _Stage("train"):
        f, log_f = _fit(cfg, tr, va)
        save_checkpoint(f, out.path("f.json"))
        out.text("trainlog_f.csv", log_f.to_csv())
    with _Stage("analyze"):
        report, P = _analyze(cfg, f, tr, te, out)
    with _Stage("orthop"):
        g, _, log_g = orthop_train(f, tr, P.k, train_config(cfg, 2000), va, regime=cfg["regime"])
        save_checkpoint(g, out.path("f_proj.json"))
        out.text("trainlog_proj.csv", log_g.to_csv())
    with _Stage("train-ind"):
        f_ind, log_i = _fit(cfg, tr, va, seed_offset=1000)
        save_checkpoint(f_ind, out.path("f_ind.json"))
        out.text("trainlog_ind.csv", log_i.to_csv())
    with _Stage("diversity"):
        noisy = with_noise(te, cfg["diversity"]["noise_sigma"], RngState(seed, "cli/noise"))
        div_proj = diversity_report(f, g, te, noisy)
        div_ind = diversity_report(f, f_ind, te, noisy)
        out.json(
            "diversity.json",
            {
                "noise_sigma": cfg["diversity"]["noise_sigma"],
                "f_proj": div_proj.to_dict(),
                "f_ind": div_ind.to_dict(),
                "test_acc": {"f": evaluate(f, te), "f_proj": evaluate(g, te), "f_ind": evaluate(f_ind, te)},
            },
        )
    with _Stage("robustness"):
        rob = cfg["robustness"]
        models = {"f": f, "f_proj": g, "f_ind": f_ind, "ens_proj": (f, g), "ens_ind": (f, f_ind)}
        curve = robustness_sweep(models, te, rob["sigmas"], rob["trials"], RngState(seed, "cli/robustness"))
        out.text("robustness.csv", curve.to_csv())
    out.manifest("pipeline", cfg)
    return (
        f"pipeline: acc={report.acc:.4f} pperp_ra={report.pperp_ra:.4f} p_ra={report.p_ra:.4f} "
        f"mist_div proj/ind={div_proj.mist_div:.3f}/{div_ind.mist_div:.3f} "
        f"cc_corr proj/ind={div_proj.cc_logit_corr:.3f}/{div_ind.cc_logit_corr:.3f}"
    )


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "orthop": cmd_orthop,
    "robustness": cmd_robustness,
    "ntk": cmd_ntk,
    "pipeline": cmd_pipeline,
}


# ---------------------------------------------------------------------------
# argument parsing


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=_u64, help="master seed")
    common.add_argument("--preset", help="experiment preset or training preset name")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--regime", choices=("rich", "lazy"))
    common.add_argument("--rank", help="subspace rank K or 'auto'")
    common.add_argument("--lambda", dest="lam", type=float, help="weight of the complement term")
    common.add_argument("--sigmas", help="comma-separated noise levels")
    common.add_argument("--trials", type=int)
    common.add_argument("--d", type=int, help="input dimension")
    common.add_argument("--gamma", type=float, help="linear-coordinate margin")
    common.add_argument("--steps", type=int, help="training steps")
    common.add_argument("--width", type=int, help="hidden width")

    parser = _Parser(prog="ldsb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ldsb {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate dataset splits")
    p = sub.add_parser("train", parents=[common], help="train a network")
    p.add_argument("--data", help="training CSV")
    p.add_argument("--val", help="validation CSV")
    p = sub.add_parser("analyze", parents=[common], help="subspace and mixing metrics")
    p.add_argument("--data", help="evaluation CSV")
    p.add_argument("--fit-data", dest="fit_data", help="CSV for projector search (defaults to --data)")
    p.add_argument("--model", help="checkpoint JSON")
    p = sub.add_parser("orthop", parents=[common], help="train on the orthogonal complement")
    p.add_argument("--data", help="training CSV")
    p.add_argument("--val", help="validation CSV")
    p.add_argument("--model", help="checkpoint of the first model")
    p = sub.add_parser("robustness", parents=[common], help="accuracy under Gaussian input noise")
    p.add_argument("--data", help="evaluation CSV")
    p.add_argument("--model", action="append", help="NAME=CHECKPOINT (repeatable)")
    p.add_argument("--ensemble", action="append", help="NAME=A+B logit-averaging ensemble of named models")
    sub.add_parser("ntk", parents=[common], help="closed-form kernel margin report")
    sub.add_parser("pipeline", parents=[common], help="run the full experiment sequence")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    try:
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](args, cfg)
    except (ValueError, TypeError, OSError) as exc:
        _report(exc)
        return 1
    except (LdsbError, RuntimeError, ArithmeticError, MemoryError) as exc:
        _report(exc)
        return 2
    print(summary)
    return 0


def _report(exc: BaseException) -> None:
    stage = getattr(exc, "ldsb_stage", None)
    prefix = f"stage {stage}: " if stage else ""
    print(f"ldsb: error: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
