"""Command-line front end: train, ablate, verify, report.

Configs are JSON with explicit keys; unknown keys are hard errors so a
typo cannot silently fall back to a default mid-experiment.  Every
artifact records the sha256 hash of the effective config (after flag
overrides, output path excluded), and report files contain no
timestamps or absolute paths, so the same config and seed reproduce a
report byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.
"""

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import data as dm
from . import backbone as bb
from . import eval as ev
from . import metrics as mt
from . import pet as pm
from . import projection as pj
from . import trainer as tr


class ConfigError(ValueError):
    """Invalid run config; the message names the offending field."""


_SECTIONS = {
    "model": bb.TransformerConfig,
    "data": dm.ScenarioSpec,
    "train": tr.TrainConfig,
    "projection": pj.ProjectionConfig,
}
_TOP_KEYS = {"paradigm", "out", "data_seed", "sweep_seeds", *_SECTIONS}
# Filled from the scenario and projection sections instead.
_TRAIN_SKIP = {"scenario", "proj"}


class RunConfig:
    """Effective settings for one command, already validated."""

    def __init__(self, paradigm, model_cfg, spec, train_cfg, out, data_seed, sweep_seeds):
        self.paradigm = paradigm
        self.model_cfg = model_cfg
        self.spec = spec
        self.train_cfg = train_cfg
        self.out = Path(out)
        self.data_seed = data_seed
        self.sweep_seeds = sweep_seeds

    def effective(self) -> dict:
        """Plain-dict view of everything that determines the run's output."""
        return {
            "paradigm": self.paradigm,
            "data_seed": self.data_seed,
            "sweep_seeds": self.sweep_seeds,
            "model": asdict(self.model_cfg),
            "data": asdict(self.spec),
            "train": asdict(self.train_cfg),
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _section(raw: dict, name: str, cls):
    body = raw.get(name, {})
    if not isinstance(body, dict):
        raise ConfigError(f"{name}: must be an object")
    allowed = {f.name for f in fields(cls)} - (_TRAIN_SKIP if name == "train" else set())
    for key in body:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown key")
    return dict(body)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file, applying any flag overrides."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown key")

    overrides = overrides or {}
    paradigm = overrides.get("paradigm", raw.get("paradigm", "prompt"))
    try:
        pm.check_paradigm(paradigm)
    except ValueError as exc:
        raise ConfigError(f"paradigm: {exc}") from exc

    model_kw = _section(raw, "model", bb.TransformerConfig)
    data_kw = _section(raw, "data", dm.ScenarioSpec)
    train_kw = _section(raw, "train", tr.TrainConfig)
    proj_kw = _section(raw, "projection", pj.ProjectionConfig)
    if "scenario" in overrides:
        data_kw["scenario"] = overrides["scenario"]
    if "seed" in overrides:
        train_kw["seed"] = overrides["seed"]
    if "projection" in overrides:
        train_kw["projection"] = overrides["projection"]

    try:
        model_cfg = bb.TransformerConfig(**model_kw)
        spec = dm.ScenarioSpec(**data_kw)
        proj_cfg = pj.ProjectionConfig(**proj_kw)
        train_cfg = tr.TrainConfig(scenario=spec.scenario, proj=proj_cfg, **train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    if spec.feature_dim % model_cfg.seq_len != 0:
        raise ConfigError(
            f"data.feature_dim: {spec.feature_dim} not divisible by model.seq_len {model_cfg.seq_len}"
        )
    if model_cfg.num_classes < spec.total_classes:
        raise ConfigError(
            f"model.num_classes: {model_cfg.num_classes} < the {spec.total_classes} classes the stream needs"
        )
    if paradigm == "prompt" and model_cfg.prompt_len < 1:
        raise ConfigError("model.prompt_len: prompt paradigm needs prompt_len >= 1")
    if paradigm == "prefix" and model_cfg.prefix_len < 1:
        raise ConfigError("model.prefix_len: prefix paradigm needs prefix_len >= 1")

    data_seed = raw.get("data_seed", 0)
    if not isinstance(data_seed, int) or data_seed < 0:
        raise ConfigError(f"data_seed: must be a non-negative integer, got {data_seed!r}")
    sweep_seeds = raw.get("sweep_seeds", [train_cfg.seed])
    if (
        not isinstance(sweep_seeds, list)
        or not sweep_seeds
        or not all(isinstance(s, int) and s >= 0 for s in sweep_seeds)
    ):
        raise ConfigError("sweep_seeds: must be a non-empty list of non-negative integers")
    out = overrides.get("out", raw.get("out", "runs/run"))
    return RunConfig(paradigm, model_cfg, spec, train_cfg, out, data_seed, sweep_seeds)


def _parse_sweep(text: str):
    key, sep, rest = text.partition("=")
    if not sep or not rest:
        raise ConfigError(f"--sweep: expected key=v1,v2,..., got {text!r}")
    if key not in ("epsilon", "beta"):
        raise ConfigError(f"--sweep: key must be 'epsilon' or 'beta', got {key!r}")
    try:
        values = [float(v) for v in rest.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--sweep: {exc}") from exc
    if len(values) < 2:
        raise ConfigError("--sweep: needs at least two values")
    return key, values


def cmd_train(cfg: RunConfig) -> int:
    tok = dm.make_tokenizer(
        cfg.spec.feature_dim, cfg.model_cfg.seq_len, cfg.model_cfg.dim, cfg.data_seed
    )
    stream = dm.gen_stream(cfg.spec, tok, cfg.data_seed)
    ckpt_dir = cfg.out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    config_hash = cfg.config_hash()
    matrix, info = tr.continual_run(
        stream, cfg.model_cfg, cfg.paradigm, cfg.train_cfg,
        out_dir=str(ckpt_dir), config_hash=config_hash,
    )
    record = {
        "config_hash": config_hash,
        "paradigm": cfg.paradigm,
        "scenario": cfg.spec.scenario,
        "seed": cfg.train_cfg.seed,
        "projection": cfg.train_cfg.projection,
        "accuracy_rows": matrix.to_lists(),
        "final_basis_columns": info["basis_sizes"][-1],
        **mt.summarize(matrix),
    }
    report = mt.emit_report([record], cfg.out / "report.jsonl")
    print(f"run {config_hash[:12]}: " + ", ".join(
        f"{k}={record[k]:.4f}" for k in ("avg_acc", "forgetting", "new_acc")
    ))
    print(f"report: {report}")
    return 0


def cmd_ablate(cfg: RunConfig, sweep_key: str, sweep_values: list[float]) -> int:
    config_hash = cfg.config_hash()
    rows = ev.ablation_sweep(
        cfg.model_cfg, cfg.spec, cfg.paradigm, cfg.train_cfg,
        sweep_key, sweep_values, cfg.sweep_seeds, data_seed=cfg.data_seed,
    )
    records = []
    for row in rows:
        records.append({
            "config_hash": config_hash,
            "paradigm": cfg.paradigm,
            "scenario": cfg.spec.scenario,
            "sweep": sweep_key,
            "value": row[sweep_key],
            "avg_acc": row["avg_acc"],
            "forgetting": row["forgetting"],
            "new_acc": row["new_acc"],
            "basis_columns": row["basis_columns"],
            "per_seed": row["per_seed"],
        })
    report = mt.emit_report(records, cfg.out / "ablation.jsonl")
    for rec in records:
        print(
            f"{sweep_key}={rec['value']:g}: columns {rec['basis_columns']:.1f}, "
            f"avg_acc {rec['avg_acc']:.4f}, forgetting {rec['forgetting']:.4f}, "
            f"new_acc {rec['new_acc']:.4f}"
        )
    print(f"report: {report}")
    return 0


def cmd_verify() -> int:
    rows = ev.verify_all()
    for row in rows:
        print(f"{'PASS' if row['ok'] else 'FAIL'} {row['name']}: {row['detail']}")
    failed = [row["name"] for row in rows if not row["ok"]]
    if failed:
        print(f"{len(failed)} properties failed: {', '.join(failed)}")
        return 1
    print(f"all {len(rows)} properties hold")
    return 0


def cmd_report(path) -> int:
    runs, summary = mt.load_report(path)
    sys.stdout.write(mt.render_report(runs, summary))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthopet",
        description="continual-learning lab for projected parameter-efficient tuning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--projection", choices=("on", "off"), help="override projection arm")
        p.add_argument("--paradigm", choices=pm.PARADIGMS, help="override paradigm")
        p.add_argument("--scenario", choices=dm.SCENARIOS, help="override scenario")
        p.add_argument("--out", help="output directory")

    add_run_flags(sub.add_parser("train", help="run one continual stream"))
    ablate = sub.add_parser("ablate", help="sweep a projection knob over seeds")
    add_run_flags(ablate)
    ablate.add_argument("--sweep", required=True, help="epsilon=v1,v2,... or beta=v1,v2,...")
    sub.add_parser("verify", help="run the named property checks")
    report = sub.add_parser("report", help="print the summary of a report file")
    report.add_argument("path", help="report file written by train or ablate")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.projection is not None:
        out["projection"] = args.projection == "on"
    if args.paradigm is not None:
        out["paradigm"] = args.paradigm
    if args.scenario is not None:
        out["scenario"] = args.scenario
    if args.out is not None:
        out["out"] = args.out
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify()
        if args.command == "report":
            return cmd_report(args.path)
        cfg = load_config(args.config, _overrides(args))
        if args.command == "train":
            return cmd_train(cfg)
        sweep_key, sweep_values = _parse_sweep(args.sweep)
        return cmd_ablate(cfg, sweep_key, sweep_values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
