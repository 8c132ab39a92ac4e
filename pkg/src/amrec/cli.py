"""Command-line entry point: ``amrec <subcommand> [--config run.json] [flags]``.

Subcommands: split, synth, train, eval, attack, sweep, report. Every flag
mirrors a :class:`RunConfig` field; values from ``--config`` are loaded
first and flags override them. ``AMREC_OUT`` and ``AMREC_THREADS`` override
the output directory and thread count.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (DataError, FeatureMatrix, HyperParams, SplitDataset, init_params,
                   leave_one_out_split, load_features, load_interactions, load_params, load_split,
                   save_params, save_split)
from .evaluate import NUM_NEGATIVES, evaluate
from .robustness import (AttackConfig, attack_eval, perf_drop, rank_shift_distribution,
                         write_drop_table, write_histogram)
from .synth import SyntheticSpec, write_synthetic
from .trainer import (TRAIN_KINDS, NumericalError, TrainConfig, pretrain_pipeline, train,
                      vbpr_from_mf)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# fields that change where or how fast a run happens but not what it computes
_UNHASHED = ("out", "threads")


@dataclass
class RunConfig:
    # inputs
    interactions: Optional[str] = None
    features: Optional[str] = None
    items: Optional[str] = None          # item id order matching the feature rows
    split: Optional[str] = None          # directory written by `amrec split`
    checkpoint: Optional[str] = None     # defaults to <out>/checkpoint
    out: str = "run"
    threads: Optional[int] = None
    # model and training
    kind: str = "amr"
    K: int = 64
    epsilon: float = 0.5
    lam: float = 1.0
    beta: float = 0.0
    eta: float = 0.05
    batch_size: int = 512
    epochs: int = 100
    mf_epochs: int = 50
    vbpr_epochs: int = 50
    seed: int = 0
    validation: bool = False
    eval_every: int = 0
    patience: int = 0
    # evaluation and attacks
    Ns: list = field(default_factory=lambda: [5, 10, 20])
    negatives: int = NUM_NEGATIVES
    attack_modes: list = field(default_factory=lambda: ["fgm", "random"])
    attack_eps: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    bins: int = 40
    # sweeps
    sweep_eps: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    sweep_lam: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    full_grid: bool = False
    # synthetic data
    num_users: int = 500
    num_items: int = 1000
    latent_dim: int = 8
    feature_dim: int = 16
    noise_std: float = 0.1
    interactions_per_user: int = 10
    temperature: float = 0.1
    popularity: float = 0.0

    def __post_init__(self):
        if self.kind not in TRAIN_KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {', '.join(TRAIN_KINDS)}")
        for m in self.attack_modes:
            AttackConfig(m, 0.0)
        if not self.Ns or min(self.Ns) < 1:
            raise ValueError("Ns must be positive")

    @property
    def hp(self) -> HyperParams:
        return HyperParams(K=self.K, epsilon=self.epsilon, lam=self.lam, beta=self.beta, eta=self.eta,
                           batch_size=self.batch_size, epochs=self.epochs, seed=self.seed)

    @property
    def synth_spec(self) -> SyntheticSpec:
        return SyntheticSpec(num_users=self.num_users, num_items=self.num_items,
                             latent_dim=self.latent_dim, feature_dim=self.feature_dim,
                             noise_std=self.noise_std, interactions_per_user=self.interactions_per_user,
                             seed=self.seed, temperature=self.temperature, popularity=self.popularity)

    @property
    def config_hash(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "checkpoint"


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    defaults = RunConfig()
    for f in fields(RunConfig):
        value = getattr(defaults, f.name)
        if isinstance(value, bool):
            p.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(value, list):
            p.add_argument(_flag(f.name), nargs="+", type=type(value[0]), default=None)
        elif f.name == "threads":
            p.add_argument(_flag(f.name), type=int, default=None)
        else:
            p.add_argument(_flag(f.name), type=str if value is None else type(value), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amrec", description="Adversarially robust multimedia recommendation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "split": "hold out one interaction per user and write the split",
        "synth": "generate a synthetic dataset",
        "train": "train a model and write a checkpoint",
        "eval": "evaluate a checkpoint on the test split",
        "attack": "evaluate a checkpoint under feature attacks",
        "sweep": "grid search over epsilon and lambda",
        "report": "summarise the artifacts of a run directory",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text))
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise DataError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as e:
            raise DataError(f"config file {args.config}: {e}") from None
        unknown = set(values) - {f.name for f in fields(RunConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if environ.get("AMREC_OUT"):
        values["out"] = environ["AMREC_OUT"]
    if environ.get("AMREC_THREADS"):
        values["threads"] = int(environ["AMREC_THREADS"])
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# shared plumbing


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


def load_inputs(cfg: RunConfig) -> tuple[SplitDataset, FeatureMatrix]:
    if cfg.split:
        split = load_split(cfg.split)
    else:
        if not cfg.interactions:
            raise DataError("no input: set --interactions or --split")
        item_ids = None
        if cfg.items:
            item_ids = Path(cfg.items).read_text(encoding="utf-8").splitlines()
        data = load_interactions(cfg.interactions, item_ids)
        split = leave_one_out_split(data, seed=cfg.seed, validation=cfg.validation)
    if cfg.features:
        feats = load_features(cfg.features, split.num_items)
    elif cfg.kind == "mf":
        feats = FeatureMatrix(np.zeros((split.num_items, 1)))
    else:
        raise DataError(f"kind {cfg.kind!r} needs --features")
    return split, feats


def _score_kind(kind: str) -> str:
    return {"mf": "MF", "duif": "DUIF"}.get(kind, "VBPR_ADJ")


class _JsonlLog:
    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, stage, stats):
        rec = json.loads(stats.to_json())
        rec["stage"] = stage
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _check_finite(params) -> None:
    if not params.all_finite():
        raise NumericalError("non-finite parameter values after training")


def run_training(cfg: RunConfig, split: SplitDataset, feats: FeatureMatrix, stage_dir: Path,
                 log=None, vbpr_snapshot=None):
    """Train ``cfg.kind``. VBPR starts from MF; AMR starts from MF then VBPR."""
    hp = cfg.hp
    common = dict(eval_every=cfg.eval_every, patience=cfg.patience)
    if cfg.kind == "amr":
        return pretrain_pipeline(split, feats, hp, (cfg.mf_epochs, cfg.vbpr_epochs, cfg.epochs),
                                 out_dir=stage_dir, vbpr_snapshot=vbpr_snapshot, log=log, **common)

    def stage(kind, epochs, params, tag):
        stage_log = (lambda s: log(kind, s)) if log else None
        params, _ = train(split, feats, TrainConfig(kind, replace(hp, epochs=epochs), **common),
                          params=params, rng=np.random.default_rng([hp.seed, tag]), log=stage_log,
                          checkpoint_dir=stage_dir / kind)
        return params

    fresh = init_params(hp, split.num_users, split.num_items, feats.dim)
    if cfg.kind == "vbpr":
        mf = stage("mf", cfg.mf_epochs, fresh, 11) if cfg.mf_epochs > 0 else fresh
        return stage("vbpr", cfg.epochs, vbpr_from_mf(mf, feats.dim, hp), 12)
    return stage(cfg.kind, cfg.epochs, fresh, 11)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    write_synthetic(cfg.synth_spec, out)
    print(f"wrote synthetic dataset to {out}")
    return EXIT_OK


def cmd_split(cfg: RunConfig) -> int:
    split, _ = load_inputs(replace(cfg, split=None, kind="mf", features=None))
    out = Path(cfg.out) / "split"
    save_split(split, out, **_stamp(cfg))
    cold = sum(1 for i in split.test.values() if i in split.cold_items)
    print(f"wrote split to {out}: {len(split.train)} train, {len(split.test)} test "
          f"({cold} with cold items), {len(split.validation)} validation")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    split, feats = load_inputs(cfg)
    out = Path(cfg.out)
    log = _JsonlLog(out / "train_log.jsonl")
    try:
        params = run_training(cfg, split, feats, out / "stages", log=log)
    finally:
        log.close()
    _check_finite(params)
    save_params(params, cfg.checkpoint_dir, kind=cfg.kind, hyperparameters=cfg.hp.to_dict(), **_stamp(cfg))
    print(f"wrote checkpoint to {cfg.checkpoint_dir}")
    return EXIT_OK


def _load_checkpoint(cfg: RunConfig):
    params, manifest = load_params(cfg.checkpoint_dir)
    return params, manifest.get("kind", cfg.kind)


def cmd_eval(cfg: RunConfig) -> int:
    params, kind = _load_checkpoint(cfg)
    split, feats = load_inputs(replace(cfg, kind=kind))
    report = evaluate(params, split, feats, _score_kind(kind), Ns=tuple(cfg.Ns), seed=cfg.seed,
                      count=cfg.negatives, name=kind)
    doc = report.to_dict()
    doc.update(_stamp(cfg))
    _write_json(Path(cfg.out) / "metrics.json", doc)
    print(json.dumps(doc["metrics"], sort_keys=True))
    return EXIT_OK


def _fmt_eps(eps: float) -> str:
    return repr(float(eps)).replace(".", "p")


def cmd_attack(cfg: RunConfig) -> int:
    params, kind = _load_checkpoint(cfg)
    split, feats = load_inputs(replace(cfg, kind=kind))
    sk, Ns = _score_kind(kind), tuple(cfg.Ns)
    clean = evaluate(params, split, feats, sk, Ns=Ns, seed=cfg.seed, count=cfg.negatives, name=kind)
    out = Path(cfg.out) / "attack"
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], []
    for mode in cfg.attack_modes:
        for eps in cfg.attack_eps:
            ac = AttackConfig(mode, float(eps), cfg.seed)
            attacked = attack_eval(params, split, feats, sk, ac, Ns=Ns, seed=cfg.seed,
                                   count=cfg.negatives, name=kind)
            for metric in clean.metrics:
                rows.append((kind, mode, float(eps), metric, clean.metrics[metric],
                             attacked.metrics[metric], perf_drop(clean, attacked, metric)))
            rs = rank_shift_distribution(params, split, feats, sk, ac, seed=cfg.seed,
                                         count=cfg.negatives, bins=cfg.bins)
            write_histogram(rs, out / f"rank_shift_{mode}_{_fmt_eps(eps)}.csv")
            summary.append({"mode": mode, "epsilon": float(eps), "mean_shift": rs.mean,
                            "var_shift": rs.var})
    write_drop_table(rows, out / "drops.csv")
    _write_json(out / "attack.json", {"clean": clean.metrics, "rank_shift": summary, **_stamp(cfg)})
    print(f"wrote attack results to {out}")
    return EXIT_OK


def sweep_points(cfg: RunConfig, score) -> list[tuple[float, float]]:
    """Grid points to visit. Two-phase: every epsilon at lambda=1, then every
    lambda at the best epsilon. ``score(eps, lam)`` returns NDCG@10 or None."""
    if cfg.full_grid:
        return [(e, l) for e in cfg.sweep_eps for l in cfg.sweep_lam]
    first = [(float(e), 1.0) for e in cfg.sweep_eps]
    scored = [(score(*p), p) for p in first]
    ok = [(s, p) for s, p in scored if s is not None]
    if not ok:
        return first
    best_eps = max(ok, key=lambda t: t[0])[1][0]
    return first + [(best_eps, float(l)) for l in cfg.sweep_lam if float(l) != 1.0]


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep_eps or not cfg.sweep_lam:
        raise ValueError("sweep grids must be non-empty")
    split, feats = load_inputs(replace(cfg, kind="amr"))
    out = Path(cfg.out) / "sweep"
    base = replace(cfg, kind="amr")
    # MF and VBPR stages do not depend on epsilon or lambda: train them once
    pretrain = replace(base, epochs=0)
    run_training(pretrain, split, feats, out / "pretrain")
    snapshot = out / "pretrain" / "vbpr"
    results: dict = {}
    failed = 0

    def score(eps, lam):
        nonlocal failed
        key = (float(eps), float(lam))
        if key not in results:
            point = replace(base, epsilon=key[0], lam=key[1])
            try:
                params = run_training(point, split, feats, out / "points" / f"e{_fmt_eps(key[0])}_l{_fmt_eps(key[1])}",
                                      vbpr_snapshot=snapshot)
                _check_finite(params)
                rep = evaluate(params, split, feats, "VBPR_ADJ", Ns=(10,), seed=cfg.seed,
                               count=cfg.negatives)
                results[key] = (rep.metrics["HR@10"], rep.metrics["NDCG@10"])
            except (NumericalError, FloatingPointError) as e:
                print(f"sweep point eps={key[0]} lam={key[1]} failed: {e}", file=sys.stderr)
                failed += 1
                results[key] = None
        r = results[key]
        return None if r is None else r[1]

    points = sweep_points(cfg, score)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "lambda", "HR@10", "NDCG@10"])
        for p in points:
            score(*p)
            r = results[(float(p[0]), float(p[1]))]
            w.writerow([float(p[0]), float(p[1]), *(("nan", "nan") if r is None else r)])
    _write_json(out / "sweep.json", {"points": len(points), "failed": failed, **_stamp(cfg)})
    print(f"wrote {len(points)} sweep points to {out / 'sweep.csv'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    lines = [f"# Run report: {out}", ""]
    metrics = out / "metrics.json"
    if metrics.exists():
        m = json.loads(metrics.read_text())
        lines += [f"## Clean evaluation ({m['model']}, seed {m['seed']}, {m['users']} users)", "",
                  "| metric | value |", "|---|---|"]
        lines += [f"| {k} | {v:.4f} |" for k, v in m["metrics"].items()]
        lines.append("")
    drops = out / "attack" / "drops.csv"
    if drops.exists():
        lines += ["## Attacks (NDCG@10)", "", "| mode | epsilon | clean | attacked | drop |",
                  "|---|---|---|---|---|"]
        with open(drops, newline="") as fh:
            for r in csv.DictReader(fh):
                if r["metric"] == "NDCG@10":
                    drop = f"{100 * float(r['drop']):+.1f}%" if r["drop"] else "n/a"
                    lines.append(f"| {r['mode']} | {r['epsilon']} | {float(r['clean']):.4f} | "
                                 f"{float(r['attacked']):.4f} | {drop} |")
        lines.append("")
    sweep = out / "sweep" / "sweep.csv"
    if sweep.exists():
        lines += ["## Sweep", "", "| epsilon | lambda | HR@10 | NDCG@10 |", "|---|---|---|---|"]
        with open(sweep, newline="") as fh:
            for r in csv.DictReader(fh):
                lines.append(f"| {r['epsilon']} | {r['lambda']} | {r['HR@10']} | {r['NDCG@10']} |")
        lines.append("")
    if len(lines) == 2:
        raise DataError(f"no artifacts found in {out}")
    text = "\n".join(lines)
    (out / "report.md").write_text(text)
    print(text)
    return EXIT_OK


COMMANDS = {"split": cmd_split, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "attack": cmd_attack, "sweep": cmd_sweep, "report": cmd_report}


def _thread_limit(n: Optional[int]):
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except DataError as e:
        print(f"amrec: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, ValueError) as e:
        print(f"amrec: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with _thread_limit(cfg.threads):
            return COMMANDS[args.command](cfg)
    except (NumericalError, FloatingPointError) as e:
        print(f"amrec: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, OSError) as e:
        print(f"amrec: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"amrec: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
