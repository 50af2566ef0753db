"""Command-line front end.

Every command reads an experiment config (``--preset`` name or ``--config``
YAML), writes its outputs under ``--out`` and drops a ``manifest.json``
next to them. Exit codes: 0 ok, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attack import ConfigurationError, build_ensemble, ensemble_attack
from .data import TableParseError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    attack_plan,
    config_hash,
    fit_rep,
    list_presets,
    load_config,
    make_sampler,
    power,
    rep_seeds,
    summarize,
)
from .inference import run_test
from .kernels import InsufficientSamplesError
from .mmd import CriterionConfig
from .ndmath import DimensionError, NumericError
from .serialize import ModelFormatError

log = logging.getLogger("advtst")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# Column layouts of every CSV the CLI writes. Bump the version whenever a
# layout changes; columns are only ever appended.
SCHEMAS = {
    "power": (1, ("method", "condition", "rate_mean", "rate_std", "n_reps", "n_pairs", "epsilon")),
    "power_reps": (1, ("rep", "method", "condition", "rate", "eval_seed")),
    "trace": (1, ("step", "loss", "rho", "halved")),
    "fit_trace": (1, ("rep", "method", "epoch", "objective")),
    "tests": (1, ("method", "statistic", "p_value", "threshold", "reject")),
    "transfer": (1, ("variant", "method", "rate_mean", "rate_std", "n_reps")),
    "ablate": (1, ("sweep", "value", "method", "condition", "rate_mean", "rate_std", "n_reps")),
    "comparison": (1, ("quantity", "method", "reference", "reproduced", "rule", "status")),
    "samples": (1, None),
}


class Run:
    """Output directory plus the bookkeeping for its manifest."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig, argv):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command, self.cfg, self.argv = command, cfg, list(argv)
        self.files: dict[str, str] = {}
        self.seeds: dict = {}

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_csv(self, name: str, schema: str, rows, header=None):
        version, cols = SCHEMAS[schema]
        cols = header if cols is None else cols
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                if len(row) != len(cols):
                    raise AssertionError(f"{name}: row width {len(row)} != {len(cols)}")
                w.writerow([_cell(v) for v in row])
        self.files[name] = f"{schema}/v{version}"
        return p

    def write_json(self, name: str, doc):
        p = self.path(name)
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.files[name] = "json"
        return p

    def finish(self):
        manifest = {
            "tool": "advtst",
            "command": self.command,
            "argv": self.argv,
            "config": self.cfg.to_dict(),
            "config_hash": config_hash(self.cfg),
            "seeds": self.seeds,
            "versions": _versions(),
            "outputs": {name: {"schema": kind, "sha256": _sha256(self.out / name)}
                        for name, kind in sorted(self.files.items())},
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return str(v)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import joblib
    import scipy
    import yaml

    return {"advtst": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "joblib": joblib.__version__, "pyyaml": yaml.__version__}


# -- config handling -----------------------------------------------------------


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    source = args.config or args.preset
    if source is None:
        raise ConfigError(f"a --preset or --config is required; presets: {', '.join(list_presets())}")
    cfg = load_config(source)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    overrides = {}
    for key in ("n_pairs", "repetitions", "n_te"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if overrides:
        cfg = cfg.replace(**overrides)
    if getattr(args, "tests", None):
        cfg = cfg.replace(tests=tuple(args.tests))
    return cfg


def _jobs(args) -> int:
    return args.jobs if args.jobs else (os.cpu_count() or 1)


def _models_for(cfg, run: Run, rep: int, tests=None, d=None, tag=None, seed=None):
    sub = f"rep{rep}" if tag is None else f"{tag}/rep{rep}"
    models, traces, seeds = fit_rep(cfg, rep, tests=tests, model_dir=run.path(f"models/{sub}"),
                                    log=log.info, d=d, seed=seed)
    run.seeds[sub] = {"train_pair": seeds.train_pair, "fit": seeds.fit, "evaluation": seeds.evaluation}
    return models, traces, seeds


# -- power rows ----------------------------------------------------------------


def _attacked_rates(cfg, models, eval_seed, n_jobs, epsilon=None, strategy=None, n_te=None, d=None):
    if cfg.attack.per_test:
        out = {}
        for name, model in models.items():
            one = {name: model}
            res = power(cfg, one, eval_seed, attacked=True, epsilon=epsilon, strategy={name: 1.0},
                        n_te=n_te, d=d, n_jobs=n_jobs)
            out[name] = res.rates[name]
        return out
    return power(cfg, models, eval_seed, attacked=True, epsilon=epsilon, strategy=strategy,
                 n_te=n_te, d=d, n_jobs=n_jobs).rates


def power_table(cfg: ExperimentConfig, run: Run, n_jobs: int, attacked: bool = True):
    """Benign (or Type-I) and attacked rates for every repetition."""
    per_rep = {"benign": [], "attacked": []}
    rep_rows = []
    benign_label = "type1" if cfg.p_vs_p else "benign"
    for rep in range(cfg.repetitions):
        models, traces, seeds = _models_for(cfg, run, rep)
        _write_fit_traces(run, rep, traces)
        log.info("rep %d: %s rates", rep, benign_label)
        rates = power(cfg, models, seeds.evaluation, n_jobs=n_jobs).rates
        if cfg.attack.per_test:
            rates.pop("Ensemble")
        per_rep["benign"].append(rates)
        rep_rows += [(rep, k, benign_label, v, seeds.evaluation) for k, v in rates.items()]
        if attacked and not cfg.p_vs_p:
            log.info("rep %d: attacked rates", rep)
            rates = _attacked_rates(cfg, models, seeds.evaluation, n_jobs)
            per_rep["attacked"].append(rates)
            rep_rows += [(rep, k, "attacked", v, seeds.evaluation) for k, v in rates.items()]
    summary = {}
    rows = []
    for cond, reps in per_rep.items():
        if not reps:
            continue
        label = benign_label if cond == "benign" else cond
        summary[label] = summarize(reps)
        eps = 0.0 if cond == "benign" else cfg.attack.epsilon
        rows += [(k, label, m, s, len(reps), cfg.n_pairs, eps) for k, (m, s) in summary[label].items()]
    run.write_csv("power.csv", "power", rows)
    run.write_csv("power_reps.csv", "power_reps", rep_rows)
    return summary


def _write_fit_traces(run: Run, rep: int, traces: dict):
    rows = [(rep, name, i, float(v)) for name, tr in traces.items() for i, v in enumerate(np.ravel(tr))]
    if rows:
        run.write_csv(f"traces/fit_rep{rep}.csv", "fit_trace", rows)


# -- reproduce checks ----------------------------------------------------------


def evaluate_checks(cfg: ExperimentConfig, summary: dict) -> list[tuple]:
    """Compare reproduced means against the preset's reference rows and rules."""
    ref = {(row["quantity"], k): v for row in cfg.reference for k, v in row.items() if k != "quantity"}
    got = {(q, m): mean for q, rates in summary.items() for m, (mean, _) in rates.items()}
    rules = {}
    for chk in cfg.checks:
        key = (chk["quantity"], chk["method"])
        op = chk["op"]
        if op == "between":
            lo, hi = chk["value"]
            rules[key] = (f"in [{lo}, {hi}]", lambda x, lo=lo, hi=hi: lo <= x <= hi)
            continue
        if "ref" in chk:
            ref_key = (chk["ref"], chk.get("ref_method", chk["method"]))
            bound = got.get(ref_key, float("nan")) + chk.get("offset", 0.0)
            text = f"{op} {chk['ref']}[{ref_key[1]}]{chk.get('offset', 0.0):+g} = {bound:.3f}"
        else:
            bound = chk["value"]
            text = f"{op} {bound}"
        fn = {"ge": lambda x, b=bound: x >= b, "le": lambda x, b=bound: x <= b}[op]
        rules[key] = (text, fn)
    rows = []
    for key in sorted(set(ref) | set(got) | set(rules)):
        val = got.get(key)
        rule, fn = rules.get(key, ("", None))
        if fn is None:
            status = "n/a"
        elif val is None:
            status = "missing"
        else:
            status = "pass" if fn(val) else "fail"
        rows.append((key[0], key[1], ref.get(key, ""), "" if val is None else val, rule, status))
    return rows


# -- commands ------------------------------------------------------------------


def cmd_fit(args, cfg, run):
    for rep in range(cfg.repetitions):
        models, traces, _ = _models_for(cfg, run, rep)
        _write_fit_traces(run, rep, traces)
        print(f"rep {rep}: " + ", ".join(sorted(models)))


def cmd_power(args, cfg, run):
    summary = power_table(cfg, run, _jobs(args), attacked=not args.benign_only)
    run.write_json("power.json", {"summary": summary, "n_pairs": cfg.n_pairs,
                                  "repetitions": cfg.repetitions})
    _print_summary(summary)


def _print_summary(summary):
    for cond, rates in summary.items():
        print(f"{cond:>9}: " + "  ".join(f"{k}={m:.3f}±{s:.3f}" for k, (m, s) in rates.items()))


def _one_pair(cfg, seeds):
    sampler = make_sampler(cfg)
    return sampler(cfg.n_te, np.random.default_rng(seeds.evaluation))


def _read_matrix(path):
    from .data import load_table

    return load_table(path)


def cmd_attack(args, cfg, run):
    models, _, seeds = _models_for(cfg, run, 0)
    if args.p and args.q:
        sp, sq = _read_matrix(args.p), _read_matrix(args.q)
    else:
        sp, sq = _one_pair(cfg, seeds)
    plan = attack_plan(cfg, list(models), epsilon=args.epsilon)
    ens = build_ensemble(models, CriterionConfig(), cfg.attack.location_scale)
    sq_adv, trace = ensemble_attack(ens, plan, sp, sq)
    run.write_csv("trace.csv", "trace", trace.records())
    d = sp.shape[1]
    header = tuple(f"x{j}" for j in range(d))
    for name, mat in (("sp.csv", sp), ("sq.csv", sq), ("sq_adv.csv", sq_adv)):
        run.write_csv(name, "samples", [tuple(r) for r in mat], header=header)
    rng = np.random.default_rng(seeds.evaluation)
    before = {k: run_test(k, m, sp, sq, cfg.inference, rng).reject for k, m in models.items()}
    rng = np.random.default_rng(seeds.evaluation)
    after = {k: run_test(k, m, sp, sq_adv, cfg.inference, rng).reject for k, m in models.items()}
    doc = {"epsilon": plan.epsilon, "weights": plan.weights, "auto_weights": plan.auto_weights,
           "loss_start": trace.losses[0], "loss_best": trace.best_loss, "best_step": trace.best_step,
           "max_abs_shift": float(np.max(np.abs(sq_adv - sq))), "reject_before": before,
           "reject_after": after}
    run.write_json("attack.json", doc)
    print(f"loss {trace.losses[0]:.4f} -> {trace.best_loss:.4f} (step {trace.best_step})")
    for k in models:
        print(f"  {k:7s} reject: {before[k]} -> {after[k]}")


def cmd_test(args, cfg, run):
    models, _, seeds = _models_for(cfg, run, 0)
    if args.p and args.q:
        sp, sq = _read_matrix(args.p), _read_matrix(args.q)
    else:
        sp, sq = _one_pair(cfg, seeds)
    rng = np.random.default_rng(seeds.evaluation)
    reports = [run_test(k, m, sp, sq, cfg.inference, rng) for k, m in models.items()]
    rows = [(r.method, r.statistic, "" if r.p_value is None else r.p_value,
             "" if r.threshold is None else r.threshold, r.reject) for r in reports]
    run.write_csv("tests.csv", "tests", rows)
    for r in reports:
        extra = f"p={r.p_value:.3f}" if r.p_value is not None else f"thr={r.threshold:.3f}"
        print(f"{r.method:7s} stat={r.statistic:.4g} {extra} reject={r.reject}")


def cmd_transfer(args, cfg, run):
    """Three attack variants against the same target suite: white-box,
    a surrogate suite trained on a different training pair, and white-box
    followed by redrawing S_P."""
    n_jobs = _jobs(args)
    per = {"white-box": [], "surrogate": [], "resampled-p": []}
    for rep in range(cfg.repetitions):
        targets, _, seeds = _models_for(cfg, run, rep)
        surrogate, _, _ = _models_for(cfg, run, rep, tag="surrogate", seed=cfg.seed + args.surrogate_offset)
        per["white-box"].append(power(cfg, targets, seeds.evaluation, attacked=True, n_jobs=n_jobs).rates)
        per["surrogate"].append(power(cfg, targets, seeds.evaluation, attacked=True,
                                      attack_models=surrogate, n_jobs=n_jobs).rates)
        per["resampled-p"].append(power(cfg, targets, seeds.evaluation, attacked=True, redraw_p=True,
                                        n_jobs=n_jobs).rates)
    rows = []
    summary = {}
    for variant, reps in per.items():
        summary[variant] = summarize(reps)
        rows += [(variant, k, m, s, len(reps)) for k, (m, s) in summary[variant].items()]
    run.write_csv("transfer.csv", "transfer", rows)
    run.write_json("transfer.json", summary)
    _print_summary(summary)


DEFAULT_SWEEPS = {
    "epsilon": [0.0, 0.025, 0.05, 0.1],
    "d": [2, 5, 10],
    "weights": ["naive", "auto", "finetune"],
}


def cmd_ablate(args, cfg, run):
    sweep = args.sweep
    values = list(cfg.sweeps.get(sweep) or DEFAULT_SWEEPS.get(sweep)
                  or [max(2, cfg.n_te // 4), max(2, cfg.n_te // 2), cfg.n_te])
    if sweep == "d" and cfg.dataset.name != "hdgm":
        raise ConfigError("the d sweep needs the hdgm dataset")
    if sweep == "weights":
        bad = [v for v in values if v not in ("naive", "auto", "finetune")]
        if bad:
            raise ConfigError(f"unknown weight strategies {bad}")
    values = sorted(values, key=lambda v: (isinstance(v, str), v))
    n_jobs = _jobs(args)
    per = {}
    for rep in range(cfg.repetitions):
        base = None if sweep == "d" else _models_for(cfg, run, rep)
        for v in values:
            if sweep == "d":
                models, _, seeds = _models_for(cfg, run, rep, d=int(v), tag=f"d{int(v)}")
                kw = {"d": int(v)}
            else:
                models, _, seeds = base
                kw = {"epsilon": float(v)} if sweep == "epsilon" else (
                    {"n_te": int(v)} if sweep == "n_te" else {"strategy": v})
            bkw = {k: x for k, x in kw.items() if k in ("d", "n_te")}
            benign = power(cfg, models, seeds.evaluation, n_jobs=n_jobs, **bkw).rates
            attacked = _attacked_rates(cfg, models, seeds.evaluation, n_jobs, **kw)
            per.setdefault((v, "benign"), []).append(benign)
            per.setdefault((v, "attacked"), []).append(attacked)
            log.info("%s=%s rep %d: ensemble benign %.3f attacked %.3f", sweep, v, rep,
                     benign["Ensemble"], attacked.get("Ensemble", float("nan")))
    rows = []
    for v in values:
        for cond in ("benign", "attacked"):
            for k, (m, s) in summarize(per[(v, cond)]).items():
                rows.append((sweep, v, k, cond, m, s, cfg.repetitions))
    run.write_csv(f"ablate_{sweep}.csv", "ablate", rows)
    for v in values:
        b = summarize(per[(v, "benign")]).get("Ensemble", (float("nan"),))[0]
        a = summarize(per[(v, "attacked")]).get("Ensemble", (float("nan"),))[0]
        print(f"{sweep}={v}: ensemble benign {b:.3f} attacked {a:.3f}")


def cmd_reproduce(args, cfg, run):
    summary = power_table(cfg, run, _jobs(args))
    rows = evaluate_checks(cfg, summary)
    run.write_csv("comparison.csv", "comparison", rows)
    run.write_json("power.json", {"summary": summary})
    print(f"{'quantity':9s} {'method':8s} {'ref':>7s} {'ours':>7s}  rule")
    for q, m, refv, got, rule, status in rows:
        ps = f"{refv:.3f}" if isinstance(refv, float) else str(refv)
        gs = f"{got:.3f}" if isinstance(got, float) else str(got)
        print(f"{q:9s} {m:8s} {ps:>7s} {gs:>7s}  {rule} {status}".rstrip())
    failed = [r for r in rows if r[-1] == "fail"]
    print(f"{len(failed)} check(s) failed" if failed else "all checks passed")


def cmd_list_presets(args):
    import yaml

    from .experiment import PRESET_DIR

    for name in list_presets():
        raw = yaml.safe_load((PRESET_DIR / f"{name}.yaml").read_text()) or {}
        desc = " ".join(str(raw.get("description", "")).split())
        print(f"{name:14s} {desc}")


COMMANDS = {
    "fit": cmd_fit,
    "attack": cmd_attack,
    "test": cmd_test,
    "power": cmd_power,
    "transfer": cmd_transfer,
    "ablate": cmd_ablate,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--preset", help="name of a bundled preset (see list-presets)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (default runs/<name>)")
    common.add_argument("--jobs", type=int, default=0, help="parallel workers (default: all cores)")
    common.add_argument("--n-pairs", dest="n_pairs", type=int, help="override pairs per evaluation")
    common.add_argument("--repetitions", type=int, help="override the number of repetitions")
    common.add_argument("--tests", nargs="+", help="subset of test ids")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="advtst", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"advtst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit and save the tests")
    p = sub.add_parser("attack", parents=[common], help="attack one pair, save the perturbed set")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--p", type=Path, help="CSV with S_P (default: sample a pair)")
    p.add_argument("--q", type=Path, help="CSV with S_Q")
    p = sub.add_parser("test", parents=[common], help="run every fitted test on one pair")
    p.add_argument("--p", type=Path)
    p.add_argument("--q", type=Path)
    p = sub.add_parser("power", parents=[common], help="benign and attacked rejection rates")
    p.add_argument("--benign-only", action="store_true")
    p.add_argument("--n-te", dest="n_te", type=int)
    p = sub.add_parser("transfer", parents=[common], help="surrogate and resampled-P attacks")
    p.add_argument("--surrogate-offset", type=int, default=1000,
                   help="seed offset of the surrogate suite")
    p = sub.add_parser("ablate", parents=[common], help="sweep one hyperparameter")
    p.add_argument("sweep", choices=("epsilon", "n_te", "d", "weights"))
    sub.add_parser("reproduce", parents=[common], help="run a preset and compare with reference values")
    sub.add_parser("list-presets", help="show bundled presets")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "list-presets":
        cmd_list_presets(args)
        return EXIT_OK
    try:
        cfg = resolve_config(args)
        if args.command == "reproduce" and not cfg.reference:
            raise ConfigError(f"config {cfg.name!r} has no reference values to reproduce")
        run = Run(args.out or Path("runs") / cfg.name, args.command, cfg, argv)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
    except (ConfigError, ConfigurationError, ModelFormatError, TableParseError, FileNotFoundError,
            DimensionError, InsufficientSamplesError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
