"""Command-line pipeline: gen -> mine -> train -> eval -> project.

One INI-style config file drives every stage.  A single global seed (the
``seed`` key of the ``[training]`` section, or the ``--seed`` flag) derives
independent sub-seeds for generation, weight init, and mining, so a full
pipeline run is reproducible end to end from one number.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

import argparse
import configparser
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import load_dataset, save_dataset
from .evaluate import LEVELS, evaluate_embeddings, project_2d
from .losses import LossWeights, MarginParams
from .mining import STRATEGIES, build_index, mine_epoch
from .network import (
    NetworkConfig,
    embed_dataset,
    initialize,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .synthgen import GeneratorConfig, generate

METRIC_COLUMNS = ("epoch", "L_G", "L_R", "L_T", "L_Rec", "total", "ordering-satisfaction")

# CLI spelling -> internal strategy name
_STRATEGY_CHOICES = {"random": "random", "group": "group", "random-excl": "random_excl"}

_SECTION_KEYS = {
    "generator": {"seed", "per_template", "templates", "image_size"},
    "network": {"seed", "latent_i", "latent_t", "latent", "conv_channels", "attn_width", "attn_heads"},
    "margins": {"alpha_g", "alpha_r", "alpha_t"},
    "weights": {
        "beta_m", "beta_g", "beta_r", "beta_t", "beta_rec",
        "gamma_i", "gamma_i_bar", "gamma_t", "gamma_t_bar",
    },
    "mining": {"strategy"},
    "training": {"epochs", "lr", "seed"},
    "eval": {"levels", "k_neighbors"},
}


class CliError(Exception):
    """Carries the process exit code alongside the message."""

    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs, resolved from file plus flags."""

    generator: GeneratorConfig
    network: NetworkConfig
    margins: MarginParams
    weights: LossWeights
    strategy: str
    epochs: int
    lr: float
    seed: int
    train_seed: int
    mine_seed: int
    levels: tuple
    k_neighbors: int


def _derive_seed(global_seed: int, index: int) -> int:
    """Independent per-stage integer seed from the one global seed."""
    seq = np.random.SeedSequence(global_seed, spawn_key=(index,))
    return int(seq.generate_state(1)[0])


def _parse_int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"config [{section}] {key}: expected integer, got {raw!r}")


def _parse_float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise CliError(f"config [{section}] {key}: expected number, got {raw!r}")


def _parse_list(raw):
    return tuple(item.strip() for item in raw.split(",") if item.strip())


def _read_config_file(path) -> dict:
    """INI file -> {section: {key: raw string}}, unknown names rejected."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        with open(p) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise CliError(f"cannot read config {p}: {exc}")
    sections = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise CliError(f"config: unknown section [{section}]")
        allowed = _SECTION_KEYS[section]
        for key in parser[section]:
            if key not in allowed:
                raise CliError(f"config [{section}]: unknown key {key!r}")
        sections[section] = dict(parser[section])
    return sections


def _resolve_config(args) -> RunConfig:
    sections = _read_config_file(getattr(args, "config", None))
    gen_raw = sections.get("generator", {})
    net_raw = sections.get("network", {})
    train_raw = sections.get("training", {})
    eval_raw = sections.get("eval", {})

    seed_override = getattr(args, "seed", None)
    global_seed = (
        seed_override
        if seed_override is not None
        else _parse_int("training", "seed", train_raw.get("seed", "0"))
    )

    # Explicit per-section seeds pin a stage; --seed overrides everything.
    def stage_seed(raw_section, index):
        if seed_override is None and "seed" in raw_section:
            return _parse_int("generator", "seed", raw_section["seed"])
        return _derive_seed(global_seed, index)

    gen_kwargs = {"seed": stage_seed(gen_raw, 0)}
    if "per_template" in gen_raw:
        gen_kwargs["scenarios_per_template"] = _parse_int(
            "generator", "per_template", gen_raw["per_template"]
        )
    if "templates" in gen_raw:
        gen_kwargs["templates"] = _parse_list(gen_raw["templates"])
    if "image_size" in gen_raw:
        gen_kwargs["image_size"] = _parse_int("generator", "image_size", gen_raw["image_size"])

    net_kwargs = {"seed": stage_seed(net_raw, 1)}
    for key in ("latent_i", "latent_t", "latent", "attn_width", "attn_heads"):
        if key in net_raw:
            net_kwargs[key] = _parse_int("network", key, net_raw[key])
    if "conv_channels" in net_raw:
        net_kwargs["conv_channels"] = tuple(
            _parse_int("network", "conv_channels", item)
            for item in _parse_list(net_raw["conv_channels"])
        )

    margin_kwargs = {
        key: _parse_float("margins", key, raw)
        for key, raw in sections.get("margins", {}).items()
    }
    weight_kwargs = {
        key: _parse_float("weights", key, raw)
        for key, raw in sections.get("weights", {}).items()
    }

    strategy_cli = getattr(args, "strategy", None)
    if strategy_cli is not None:
        strategy = _STRATEGY_CHOICES[strategy_cli]
    else:
        raw = sections.get("mining", {}).get("strategy", "random")
        if raw not in _STRATEGY_CHOICES:
            raise CliError(
                f"config [mining] strategy: expected one of "
                f"{', '.join(sorted(_STRATEGY_CHOICES))}, got {raw!r}"
            )
        strategy = _STRATEGY_CHOICES[raw]
    assert strategy in STRATEGIES

    levels = _parse_list(eval_raw.get("levels", "C, G, R"))
    for level in levels:
        if level not in LEVELS:
            raise CliError(f"config [eval] levels: unknown level {level!r}")
    if len(levels) == 0 or len(set(levels)) != len(levels):
        raise CliError("config [eval] levels: need a nonempty list without repeats")

    try:
        generator = GeneratorConfig(**gen_kwargs)
        # The network always ingests what the generator emits.
        network = NetworkConfig(image_size=generator.image_size, **net_kwargs)
        margins = MarginParams(**margin_kwargs)
        weights = LossWeights(**weight_kwargs)
    except (TypeError, ValueError) as exc:
        raise CliError(f"config: {exc}")

    epochs = _parse_int("training", "epochs", train_raw.get("epochs", "30"))
    if epochs < 0:
        raise CliError("config [training] epochs: must be >= 0")
    lr = _parse_float("training", "lr", train_raw.get("lr", "0.001"))
    if lr <= 0:
        raise CliError("config [training] lr: must be > 0")
    k_neighbors = _parse_int("eval", "k_neighbors", eval_raw.get("k_neighbors", "15"))
    if k_neighbors < 1:
        raise CliError("config [eval] k_neighbors: must be >= 1")

    return RunConfig(
        generator=generator,
        network=network,
        margins=margins,
        weights=weights,
        strategy=strategy,
        epochs=epochs,
        lr=lr,
        seed=global_seed,
        train_seed=_derive_seed(global_seed, 2),
        mine_seed=_derive_seed(global_seed, 3),
        levels=levels,
        k_neighbors=k_neighbors,
    )


# ------------------------------------------------------------ I/O helpers


def _load_dataset_checked(path):
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"dataset directory not found: {p}")
    try:
        return load_dataset(p)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load dataset {p}: {exc}")


def _load_checkpoint_checked(path):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"checkpoint not found: {p}")
    try:
        return load_checkpoint(p)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {p}: {exc}")


def _check_size_match(dataset, config: NetworkConfig):
    size = dataset.entries[0].image.size
    if size != config.image_size:
        raise CliError(
            f"dataset image size {size} does not match network image size {config.image_size}"
        )


def _ensure_parent(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path.parent}: {exc}")


def _embeddings_for(args):
    """Shared front half of eval and project."""
    state = _load_checkpoint_checked(args.checkpoint)
    dataset = _load_dataset_checked(args.dataset)
    _check_size_match(dataset, state.config)
    return state, dataset, embed_dataset(state, dataset)


# ------------------------------------------------------------ subcommands


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}")
    dataset = generate(cfg.generator)
    try:
        save_dataset(dataset, out)
    except OSError as exc:
        raise CliError(f"cannot write dataset to {out}: {exc}", code=2)
    print(f"wrote {len(dataset)} scenarios to {out}")
    for level in LEVELS:
        print(f"{level} groups: {dataset.groups.n_groups(level)}")
    return 0


def _append_metrics_row(path: Path, entry):
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                entry.epoch,
                repr(entry.loss_g),
                repr(entry.loss_r),
                repr(entry.loss_t),
                repr(entry.loss_rec),
                repr(entry.loss_total),
                repr(entry.ordering_satisfaction),
            ]
        )


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_checked(args.dataset)
    _check_size_match(dataset, cfg.network)
    out = Path(args.out)
    _ensure_parent(out)
    metrics_path = out.with_name(out.name + ".metrics.csv")

    # Initialized checkpoint first: a later divergence must leave the most
    # recent completed epoch on disk, and epochs=0 is a plain init dump.
    try:
        save_checkpoint(initialize(cfg.network), out)
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}")

    def on_epoch(state, entry):
        save_checkpoint(state, out)
        _append_metrics_row(metrics_path, entry)

    try:
        train(
            dataset,
            cfg.network,
            cfg.margins,
            cfg.weights,
            epochs=cfg.epochs,
            lr=cfg.lr,
            strategy=cfg.strategy,
            seed=cfg.train_seed,
            on_epoch=on_epoch,
        )
    except (RuntimeError, ValueError) as exc:
        raise CliError(f"{exc}; last completed checkpoint kept at {out}", code=2)
    print(f"checkpoint: {out}")
    print(f"metrics: {metrics_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    _, dataset, emb = _embeddings_for(args)
    try:
        report = evaluate_embeddings(emb, dataset, levels=cfg.levels, k_neighbors=cfg.k_neighbors)
    except ValueError as exc:
        raise CliError(f"evaluation failed: {exc}", code=2)
    out = Path(args.out)
    _ensure_parent(out)
    try:
        out.write_text(report.to_json())
    except OSError as exc:
        raise CliError(f"cannot write report to {out}: {exc}", code=2)
    print(f"report: {out}")
    return 0


def cmd_project(args) -> int:
    _, dataset, emb = _embeddings_for(args)
    coords, degenerate = project_2d(emb)
    out = Path(args.out)
    _ensure_parent(out)
    groups = dataset.groups
    try:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "x", "y", "category", "graph_class", "route_class"])
            for i, scenario in enumerate(dataset.entries):
                writer.writerow(
                    [
                        i,
                        repr(float(coords[i, 0])),
                        repr(float(coords[i, 1])),
                        scenario.category,
                        int(groups.graph_ids[i]),
                        int(groups.route_ids[i]),
                    ]
                )
    except OSError as exc:
        raise CliError(f"cannot write projection to {out}: {exc}", code=2)
    if degenerate:
        print("note: embedding variance is rank-deficient; a projection axis is zero")
    print(f"projection: {out}")
    return 0


def cmd_mine(args) -> int:
    cfg = _resolve_config(args)
    dataset = _load_dataset_checked(args.dataset)
    index = build_index(dataset)
    rng = np.random.default_rng(cfg.mine_seed)
    try:
        quads = mine_epoch(index, cfg.strategy, rng)
    except ValueError as exc:
        raise CliError(f"mining failed: {exc}", code=2)
    out = Path(args.out)
    _ensure_parent(out)
    try:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["anchor_id", "pp_id", "pn_id", "nn_id", "s_t"])
            for q in quads:
                writer.writerow([q.anchor, q.pp, q.pn, q.nn, repr(q.s_t)])
    except OSError as exc:
        raise CliError(f"cannot write quadruplets to {out}: {exc}", code=2)
    print(f"mined {len(quads)} quadruplets to {out}")
    return 0


# ----------------------------------------------------------------- parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenmetric",
        description="Train and evaluate a scenario-similarity embedding on synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, checkpoint=False, strategy=False):
        p.add_argument("--config", help="INI config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the global seed")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="model checkpoint file")
        if strategy:
            p.add_argument(
                "--strategy",
                choices=sorted(_STRATEGY_CHOICES),
                help="negative-pair mining strategy",
            )

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the embedding network")
    common(p, dataset=True, strategy=True)
    p.add_argument("--out", required=True, help="output checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the evaluation protocols")
    common(p, dataset=True, checkpoint=True)
    p.add_argument("--out", required=True, help="output report JSON file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="project embeddings to 2-D")
    common(p, dataset=True, checkpoint=True)
    p.add_argument("--out", required=True, help="output projection CSV file")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("mine", help="dump one epoch of mined quadruplets")
    common(p, dataset=True, strategy=True)
    p.add_argument("--out", required=True, help="output quadruplet CSV file")
    p.set_defaults(func=cmd_mine)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except CliError as exc:
        print(f"scenmetric: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
