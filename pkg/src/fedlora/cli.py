"""Experiment driver: declarative YAML configs in, newline-delimited
JSON reports out.

Config grammar (all keys optional; defaults shown by ``gen-config
default``)::

    seed: 0
    output: runs/run.jsonl
    model:     {d, layers, modules_per_layer, num_classes, r_g,
                lora_alpha, activation}
    data:      {n_per_class, cluster_std, partition, dirichlet_alpha,
                clients, test_fraction}
    training:  {rounds, epochs, batch_size, eta_a, b_multiplier,
                participation_fraction}
    strategy:  {name, rank, budget_kind, gamma, score_criterion,
                flex_r_target}
    dp:        {enabled, epsilon, clip}

``strategy.rank`` is the adapter rank for fl_lora / ffa_lora / flexlora
and the per-client homogeneous budget for hetlora / lora_a2 (whose
adapters use ``model.r_g``). Reports are one JSON object per line: one
``round`` record per round and a final ``summary`` record whose
``final_accuracy`` averages the last five rounds.

Exit codes: 0 ok, 1 configuration error, 2 numerical failure or protocol
violation.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import backend, data as data_mod
from .dp import DpConfig
from .errors import ConfigError, NumericalError, ProtocolViolation
from .flcore import (ClientState, RunConfig, ServerState, Strategy,
                     run_federated)
from .linalg import (Rng, STREAM_BUDGETS, STREAM_DATA, STREAM_MODEL,
                     STREAM_PARTITION, STREAM_SPLIT, derive_seed)
from .metrics import RoundReport
from .model import ModelConfig, init_model
from .optim import LrPolicy

OUT_DIR_ENV = "FEDLORA_OUT_DIR"

_PARTITIONS = ("dirichlet", "pathological")
_BUDGET_KINDS = ("homogeneous", "uniform", "heavy_tail", "normal")
_CRITERIA = ("contribution", "magnitude", "importance")


@dataclass
class DataConfig:
    n_per_class: int = 40
    cluster_std: float = 0.35
    partition: str = "dirichlet"
    dirichlet_alpha: float = 0.5
    clients: int = 30
    test_fraction: float = 0.1

    def validate(self) -> None:
        if self.n_per_class < 1:
            raise ConfigError("data.n_per_class must be >= 1")
        if self.cluster_std < 0:
            raise ConfigError("data.cluster_std must be >= 0")
        if self.partition not in _PARTITIONS:
            raise ConfigError(
                f"data.partition must be one of {_PARTITIONS}, "
                f"got {self.partition!r}"
            )
        if self.dirichlet_alpha <= 0:
            raise ConfigError("data.dirichlet_alpha must be > 0")
        if self.clients < 1:
            raise ConfigError("data.clients must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must be in (0, 1)")


@dataclass
class TrainingConfig:
    rounds: int = 50
    epochs: int = 5
    batch_size: int = 16
    eta_a: float = 0.0005
    b_multiplier: float = 5.0
    participation_fraction: float = 1.0

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("training.rounds must be >= 1")
        if self.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if self.eta_a <= 0:
            raise ConfigError("training.eta_a must be > 0")
        if self.b_multiplier <= 0:
            raise ConfigError("training.b_multiplier must be > 0")
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ConfigError(
                "training.participation_fraction must be in (0, 1]"
            )


@dataclass
class StrategyConfig:
    name: str = "lora_a2"
    rank: int = 1
    budget_kind: str = "homogeneous"
    gamma: float = 0.99
    score_criterion: str = "contribution"
    flex_r_target: int | None = None

    def validate(self) -> None:
        names = tuple(s.value for s in Strategy)
        if self.name not in names:
            raise ConfigError(
                f"strategy.name must be one of {names}, got {self.name!r}"
            )
        if self.rank < 1:
            raise ConfigError("strategy.rank must be >= 1")
        if self.budget_kind not in _BUDGET_KINDS:
            raise ConfigError(
                f"strategy.budget_kind must be one of {_BUDGET_KINDS}, "
                f"got {self.budget_kind!r}"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("strategy.gamma must be in (0, 1]")
        if self.score_criterion not in _CRITERIA:
            raise ConfigError(
                f"strategy.score_criterion must be one of {_CRITERIA}, "
                f"got {self.score_criterion!r}"
            )
        if self.flex_r_target is not None and self.flex_r_target < 1:
            raise ConfigError("strategy.flex_r_target must be >= 1")


@dataclass
class ExperimentConfig:
    seed: int = 0
    output: str = "runs/run.jsonl"
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    dp: DpConfig = field(default_factory=DpConfig)

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.output:
            raise ConfigError("output path must be non-empty")
        self.model.validate()
        self.data.validate()
        self.training.validate()
        self.strategy.validate()
        self.dp.validate()
        if self.strategy.rank > self.model.r_g:
            raise ConfigError(
                f"strategy.rank={self.strategy.rank} must be <= "
                f"model.r_g={self.model.r_g}"
            )
        if self.strategy.flex_r_target is not None and \
                self.strategy.flex_r_target > self.strategy.rank:
            raise ConfigError(
                "strategy.flex_r_target must be <= strategy.rank"
            )
        if self.data.partition == "pathological":
            if self.data.clients % 2 != 0:
                raise ConfigError(
                    "pathological partition needs an even data.clients"
                )
            if self.model.num_classes < self.data.clients:
                raise ConfigError(
                    "pathological partition needs model.num_classes >= "
                    "data.clients"
                )


_SECTIONS = {
    "model": ModelConfig,
    "data": DataConfig,
    "training": TrainingConfig,
    "strategy": StrategyConfig,
    "dp": DpConfig,
}


def _coerce(section: str, name: str, expected, value):
    ok_types: tuple
    if expected is int:
        ok_types = (int,)
    elif expected is float:
        ok_types = (int, float)
    elif expected is bool:
        ok_types = (bool,)
    elif expected is str:
        ok_types = (str,)
    else:  # int | None style fields
        if value is None:
            return None
        ok_types = (int,)
    if isinstance(value, bool) and expected is not bool:
        raise ConfigError(f"{section}{name}: expected {expected.__name__}, "
                          f"got a boolean")
    if not isinstance(value, ok_types):
        raise ConfigError(
            f"{section}{name}: expected "
            f"{getattr(expected, '__name__', expected)}, "
            f"got {type(value).__name__}"
        )
    return expected(value) if expected in (int, float, str) else value


def _build_section(cls, section: str, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    spec = {f.name: f.type for f in fields(cls)}
    obj = cls()
    for key, value in raw.items():
        if key not in spec:
            raise ConfigError(f"unknown key {section}.{key}")
        current = getattr(obj, key)
        if key == "flex_r_target":
            setattr(obj, key, _coerce(f"{section}.", key, None, value))
            continue
        expected = type(current) if current is not None else type(value)
        setattr(obj, key, _coerce(f"{section}.", key, expected, value))
    return obj


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate YAML experiment text; unset keys get defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key == "seed":
            cfg.seed = _coerce("", "seed", int, value)
        elif key == "output":
            cfg.output = _coerce("", "output", str, value)
        elif key in _SECTIONS:
            setattr(cfg, key, _build_section(_SECTIONS[key], key, value))
        else:
            raise ConfigError(f"unknown key {key}")
    cfg.validate()
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """YAML text whose parse reproduces ``cfg`` exactly."""
    def section(obj) -> dict:
        return {f.name: getattr(obj, f.name) for f in fields(obj)}

    doc = {
        "seed": cfg.seed,
        "output": cfg.output,
        "model": section(cfg.model),
        "data": section(cfg.data),
        "training": section(cfg.training),
        "strategy": section(cfg.strategy),
        "dp": section(cfg.dp),
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _effective_r_g(cfg: ExperimentConfig) -> int:
    if cfg.strategy.name in ("fl_lora", "ffa_lora", "flexlora"):
        return cfg.strategy.rank
    return cfg.model.r_g


def build_experiment(cfg: ExperimentConfig):
    """Construct (server, clients, run_cfg, test set) from a config."""
    cfg.validate()
    seed = cfg.seed
    dataset = data_mod.gen_synthetic(
        cfg.model.num_classes, cfg.model.d, cfg.data.n_per_class,
        cfg.data.cluster_std, Rng(derive_seed(seed, STREAM_DATA)),
    )
    train_set, test_set = data_mod.train_test_split(
        dataset, cfg.data.test_fraction, Rng(derive_seed(seed, STREAM_SPLIT)),
    )
    if cfg.data.partition == "dirichlet":
        shards = data_mod.dirichlet_partition(
            train_set, cfg.data.clients, cfg.data.dirichlet_alpha,
            Rng(derive_seed(seed, STREAM_PARTITION)),
        )
    else:
        shards = data_mod.pathological_partition(train_set, cfg.data.clients)

    het_or_a2 = cfg.strategy.name in ("hetlora", "lora_a2")
    if het_or_a2 and cfg.strategy.budget_kind != "homogeneous":
        budgets = data_mod.assign_rank_budgets(
            cfg.data.clients, cfg.strategy.budget_kind, cfg.model.r_g,
            Rng(derive_seed(seed, STREAM_BUDGETS)),
        ).r_i
    else:
        budgets = np.full(cfg.data.clients, cfg.strategy.rank,
                          dtype=np.int64)

    model_cfg = ModelConfig(
        d=cfg.model.d, layers=cfg.model.layers,
        modules_per_layer=cfg.model.modules_per_layer,
        num_classes=cfg.model.num_classes, r_g=_effective_r_g(cfg),
        lora_alpha=cfg.model.lora_alpha, activation=cfg.model.activation,
    )
    model = init_model(model_cfg, Rng(derive_seed(seed, STREAM_MODEL)))
    clients = [
        ClientState(
            client_id=sh.client_id,
            x=train_set.x[sh.indices],
            y=train_set.y[sh.indices],
            weight=sh.weight,
            rank_budget=int(budgets[sh.client_id]),
        )
        for sh in shards
    ]
    run_cfg = RunConfig(
        strategy=Strategy(cfg.strategy.name),
        rounds=cfg.training.rounds,
        epochs=cfg.training.epochs,
        batch_size=cfg.training.batch_size,
        seed=seed,
        policy=LrPolicy(eta_a=cfg.training.eta_a,
                        b_multiplier=cfg.training.b_multiplier),
        dp=cfg.dp,
        participation_fraction=cfg.training.participation_fraction,
        score_criterion=cfg.strategy.score_criterion,
        hetlora_gamma=cfg.strategy.gamma,
    )
    server = ServerState.create(model, run_cfg.strategy)
    return server, clients, run_cfg, test_set


def summarize(cfg: ExperimentConfig,
              reports: list[RoundReport]) -> dict:
    tail = reports[-5:] if len(reports) >= 5 else reports
    return {
        "type": "summary",
        "strategy": cfg.strategy.name,
        "seed": cfg.seed,
        "rounds": len(reports),
        "final_accuracy": float(np.mean([r.test_accuracy for r in tail])),
        "total_uploaded_params": reports[-1].cumulative_uploaded,
    }


def run_experiment(cfg: ExperimentConfig):
    """Run the configured experiment; returns (reports, summary)."""
    server, clients, run_cfg, test_set = build_experiment(cfg)
    reports = run_federated(server, clients, run_cfg, test_set.x, test_set.y)
    return reports, summarize(cfg, reports)


def resolve_output(cfg_output: str, override: str | None) -> Path:
    """--out wins; else the env override redirects relative paths."""
    if override:
        return Path(override)
    out = Path(cfg_output)
    env_dir = os.environ.get(OUT_DIR_ENV, "")
    if env_dir and not out.is_absolute():
        return Path(env_dir) / out
    return out


def write_reports(path: Path, reports: list[RoundReport],
                  summary: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"type": "round", **r.to_dict()}) for r in reports]
    lines.append(json.dumps(summary))
    path.write_text("\n".join(lines) + "\n")


def _strategy_stub(name: str, rank: int, **kw) -> dict:
    out = {"name": name, "rank": rank}
    out.update(kw)
    return out


def _trend_task(alpha: float, strategy: str, out: str, *,
                clients: int = 20, partition: str = "dirichlet",
                rounds: int = 40, rank: int = 1, dp: dict | None = None,
                seed: int = 1) -> dict:
    """Shared 8-cluster task where every strategy converges under IID data
    but rank-1 baselines degrade under heterogeneity.

    A chain of six linear modules keeps the task expressible by rank-1
    updates (per-module rank-1 factors compound across the chain), so any
    accuracy gap between strategies reflects aggregation quality rather
    than raw adapter capacity.
    """
    doc = {
        "seed": seed,
        "output": out,
        "data": {
            "n_per_class": 100, "cluster_std": 0.1, "test_fraction": 0.25,
            "clients": clients, "partition": partition,
        },
        "training": {
            "rounds": rounds, "epochs": 3, "eta_a": 0.002, "batch_size": 4,
        },
        "model": {
            "activation": "linear", "layers": 1, "modules_per_layer": 6,
        },
        "strategy": _strategy_stub(strategy, rank),
    }
    if partition == "dirichlet":
        doc["data"]["dirichlet_alpha"] = alpha
    if dp is not None:
        doc["dp"] = dp
    return doc


def _ablation_task(strategy: str, out: str, *, r_g: int | None = 2) -> dict:
    """Rank-2 freeze-schedule comparison on a tanh task where the frozen
    random row space of the permanent-freeze baseline actually binds."""
    doc = {
        "seed": 1,
        "output": out,
        "data": {
            "n_per_class": 100, "cluster_std": 0.1, "test_fraction": 0.25,
            "clients": 20, "dirichlet_alpha": 0.05,
        },
        "training": {
            "rounds": 100, "epochs": 3, "eta_a": 0.0005, "batch_size": 4,
        },
        "strategy": _strategy_stub(strategy, 2),
    }
    if r_g is not None:
        doc["model"] = {"r_g": r_g}
    return doc


PRESETS: dict[str, dict] = {
    "default": {},
    "k30-dir001-rank1": _trend_task(
        0.01, "lora_a2", "runs/k30-dir001-rank1.jsonl", clients=30),
    "trend-dir005-lora-a2": _trend_task(
        0.05, "lora_a2", "runs/trend-dir005-lora-a2.jsonl"),
    "trend-dir005-fl-lora": _trend_task(
        0.05, "fl_lora", "runs/trend-dir005-fl-lora.jsonl"),
    "trend-dir005-ffa-lora": _trend_task(
        0.05, "ffa_lora", "runs/trend-dir005-ffa-lora.jsonl"),
    "trend-dir10-lora-a2": _trend_task(
        10.0, "lora_a2", "runs/trend-dir10-lora-a2.jsonl"),
    "trend-dir10-fl-lora": _trend_task(
        10.0, "fl_lora", "runs/trend-dir10-fl-lora.jsonl"),
    "trend-dir10-ffa-lora": _trend_task(
        10.0, "ffa_lora", "runs/trend-dir10-ffa-lora.jsonl"),
    "pathological-k8": _trend_task(
        0.0, "lora_a2", "runs/pathological-k8.jsonl",
        clients=8, partition="pathological", rounds=30),
    "ablation-alternating-rank2": _ablation_task(
        "lora_a2", "runs/ablation-alternating-rank2.jsonl"),
    "ablation-ffa-rank2": _ablation_task(
        "ffa_lora", "runs/ablation-ffa-rank2.jsonl", r_g=None),
    "dp-eps-inf": _trend_task(
        0.05, "lora_a2", "runs/dp-eps-inf.jsonl",
        dp={"enabled": True, "epsilon": math.inf, "clip": 2.0}),
    "dp-eps-6": _trend_task(
        0.05, "lora_a2", "runs/dp-eps-6.jsonl",
        dp={"enabled": True, "epsilon": 6.0, "clip": 2.0}),
    "dp-eps-1": _trend_task(
        0.05, "lora_a2", "runs/dp-eps-1.jsonl",
        dp={"enabled": True, "epsilon": 1.0, "clip": 2.0}),
}


def gen_config(preset: str) -> str:
    """YAML text for a named preset (validated before emission)."""
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r}; available: {sorted(PRESETS)}"
        )
    cfg = parse_config(yaml.safe_dump(PRESETS[preset]))
    return serialize_config(cfg)


def _comparable_view(cfg: ExperimentConfig) -> dict:
    doc = yaml.safe_load(serialize_config(cfg))
    doc.pop("strategy", None)
    doc.pop("output", None)
    return doc


def compare_suite(configs: list[ExperimentConfig], n_seeds: int = 3):
    """Run each config over ``n_seeds`` seeds; tabulate accuracy and
    uploads per strategy.

    Configs must differ only in their strategy section (and output path);
    anything else would make the comparison apples-to-oranges, so it is
    rejected.
    """
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configs")
    if n_seeds < 1:
        raise ConfigError("compare needs at least one seed")
    base_view = _comparable_view(configs[0])
    for cfg in configs[1:]:
        if _comparable_view(cfg) != base_view:
            raise ConfigError(
                "compare configs must differ only in the strategy section"
            )
    rows = []
    for cfg in configs:
        accs = []
        uploads = []
        for offset in range(n_seeds):
            variant = parse_config(serialize_config(cfg))
            variant.seed = cfg.seed + offset
            _, summary = run_experiment(variant)
            accs.append(summary["final_accuracy"])
            uploads.append(summary["total_uploaded_params"])
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        rows.append({
            "strategy": cfg.strategy.name,
            "rank": cfg.strategy.rank,
            "partition": cfg.data.partition,
            "dirichlet_alpha": cfg.data.dirichlet_alpha,
            "mean_accuracy": float(np.mean(accs)),
            "std_accuracy": std,
            "mean_uploaded_params": float(np.mean(uploads)),
            "seeds": n_seeds,
        })
    return rows


def format_compare_table(rows: list[dict]) -> str:
    cols = ["strategy", "rank", "partition", "dirichlet_alpha",
            "mean_accuracy", "std_accuracy", "mean_uploaded_params", "seeds"]
    lines = ["\t".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines)


def run_benchmark(repeats: int = 200) -> str:
    """Time the two kernel implementations on training-shaped inputs."""
    from .model import Batch, loss_and_grads

    rng = Rng(12345)
    cfg = ModelConfig()
    model = init_model(cfg, rng)
    from .linalg import sample_gaussian

    x = sample_gaussian(rng, 16, cfg.d, 1.0)
    y = np.array([i % cfg.num_classes for i in range(16)], dtype=np.int64)
    batch = Batch(x, y)
    adapters = [ad.copy() for ad in model.adapters]
    for ad in adapters:
        ad.b[:] = sample_gaussian(rng, ad.b.shape[0], ad.b.shape[1], 0.05)

    names = ["python"]
    if backend.HAVE_COMPILED:
        names.append("compiled")
    lines = [f"kernel benchmark: {repeats} repeats, "
             f"batch 16, d={cfg.d}, modules={model.n_modules}, "
             f"r={cfg.r_g}"]
    results = {}
    for name in names:
        impl = backend.get_backend(name)
        b, a = np.stack([ad.b for ad in adapters]), \
            np.stack([ad.a for ad in adapters])
        gb, ga = np.zeros_like(b), np.zeros_like(a)
        impl.ce_loss_and_grads(model.w0, model.bias, model.head, b, a,
                               adapters[0].scaling, model.act_kind,
                               batch.x, batch.y, gb, ga, True, True)
        t0 = time.perf_counter()
        for _ in range(repeats):
            impl.ce_loss_and_grads(model.w0, model.bias, model.head, b, a,
                                   adapters[0].scaling, model.act_kind,
                                   batch.x, batch.y, gb, ga, True, True)
        dt = (time.perf_counter() - t0) / repeats
        results[name] = dt
        lines.append(f"  {name:>8}: {dt * 1e6:9.1f} us per loss+grad call")
    if len(results) == 2:
        ratio = results["python"] / results["compiled"]
        lines.append(f"  speedup: {ratio:.2f}x (python / compiled)")
    lines.append(f"active backend: {backend.backend_name()}")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are config errors (exit 1)
        raise ConfigError(message)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedlora",
                     description="Deterministic federated LoRA simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", help="path to a YAML experiment file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    p_run.add_argument("--out", default=None,
                       help="override the report output path")

    p_cmp = sub.add_parser("compare",
                           help="run a directory of strategy variants")
    p_cmp.add_argument("config_dir", help="directory of YAML configs")
    p_cmp.add_argument("--seeds", type=int, default=3,
                       help="seeds per config (default 3)")
    p_cmp.add_argument("--out", default=None,
                       help="write the TSV table here instead of stdout")

    p_gen = sub.add_parser("gen-config", help="print a canned config")
    p_gen.add_argument("preset", nargs="?", default="default",
                       help="preset name (default: default)")
    p_gen.add_argument("--out", default=None, help="write YAML here")
    p_gen.add_argument("--list", action="store_true", dest="list_presets",
                       help="list available presets")

    p_bench = sub.add_parser("bench",
                             help="compare kernel backends")
    p_bench.add_argument("--repeats", type=int, default=200)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg.seed = args.seed
    reports, summary = run_experiment(cfg)
    out = resolve_output(cfg.output, args.out)
    write_reports(out, reports, summary)
    print(f"wrote {len(reports)} round records to {out}")
    print(f"final_accuracy={summary['final_accuracy']:.4f} "
          f"total_uploaded_params={summary['total_uploaded_params']}")
    return 0


def _cmd_compare(args) -> int:
    cfg_dir = Path(args.config_dir)
    if not cfg_dir.is_dir():
        raise ConfigError(f"not a directory: {cfg_dir}")
    paths = sorted(p for p in cfg_dir.iterdir()
                   if p.suffix in (".yaml", ".yml"))
    if not paths:
        raise ConfigError(f"no .yaml configs in {cfg_dir}")
    configs = [load_config(p) for p in paths]
    rows = compare_suite(configs, n_seeds=args.seeds)
    table = format_compare_table(rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table + "\n")
        print(f"wrote comparison table to {out}")
    else:
        print(table)
    return 0


def _cmd_gen_config(args) -> int:
    if args.list_presets:
        for name in sorted(PRESETS):
            print(name)
        return 0
    text = gen_config(args.preset)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"wrote {args.preset} config to {out}")
    else:
        print(text, end="")
    return 0


def _cmd_bench(args) -> int:
    if args.repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    print(run_benchmark(args.repeats))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "gen-config": _cmd_gen_config,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ProtocolViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
