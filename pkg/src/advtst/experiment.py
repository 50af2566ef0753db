"""Config-driven experiment pipeline shared by the CLI and the demos.

One repetition = draw a training pair, fit the requested tests, then
estimate benign and attacked rejection rates on fresh test pairs. Every
random stream derives from ``(seed, repetition)`` through
``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attack import (
    LOCATION_SCALES,
    TEST_ORDER,
    AttackPlan,
    ConfigurationError,
    build_ensemble,
    finetuned_weights,
    naive_weights,
)
from .data import BlobSpec, HdgmSpec, blob_sampler, hdgm_sampler, load_table, table_sampler
from .inference import InferenceConfig, PowerResult, evaluate_power
from .kernels import C2STKernel
from .mmd import CriterionConfig
from .serialize import load_model, save_model
from .trainers import (
    TrainConfig,
    fit_c2st,
    fit_locations,
    fit_mmd_deep,
    fit_mmd_gaussian,
    fit_mmd_rod,
)

KNOWN_TESTS = TEST_ORDER + ("MMD-RoD",)
WEIGHT_STRATEGIES = ("finetune", "naive", "auto")
PRESET_DIR = Path(__file__).with_name("presets")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "blob"
    per_mode: bool = True  # blob only: sizes count samples per mode
    d: int = 10  # hdgm only
    path: str | None = None  # table only
    label_column: int = 0
    p_label: float = 0.0
    q_label: float = 1.0
    columns: tuple | None = None
    normalize: bool = False

    def __post_init__(self):
        if self.name not in ("blob", "hdgm", "table"):
            raise ConfigError(f"unknown dataset {self.name!r} (blob | hdgm | table)")
        if self.name == "hdgm" and self.d < 2:
            raise ConfigError("hdgm needs d >= 2")
        if self.name == "table" and not self.path:
            raise ConfigError("table dataset needs a path")

    @property
    def weight_key(self) -> str:
        return {"blob": "blob", "hdgm": "hdgm", "table": "higgs"}[self.name]


@dataclass(frozen=True)
class AttackSpec:
    epsilon: float = 0.05
    max_steps: int = 50
    weights: object = "finetune"  # strategy name or {test: weight}
    per_test: bool = False  # attack every test alone (weight 1) instead of jointly
    location_scale: str = "root_n"  # how ME/SCF statistics enter the ensemble loss

    def __post_init__(self):
        if self.epsilon < 0 or self.max_steps < 1:
            raise ConfigError("attack needs epsilon >= 0 and max_steps >= 1")
        if self.location_scale not in LOCATION_SCALES:
            raise ConfigError(f"location_scale must be one of {LOCATION_SCALES}")
        if isinstance(self.weights, str) and self.weights not in WEIGHT_STRATEGIES:
            raise ConfigError(f"weights must be one of {WEIGHT_STRATEGIES} or a mapping")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    dataset: DatasetConfig = DatasetConfig()
    tests: tuple = TEST_ORDER
    train: dict = field(default_factory=dict)  # test id -> TrainConfig
    attack: AttackSpec = AttackSpec()
    inference: InferenceConfig = InferenceConfig()
    n_tr: int = 100
    n_te: int = 100
    n_pairs: int = 100
    repetitions: int = 1
    seed: int = 0
    p_vs_p: bool = False  # calibration mode: both sets drawn from P
    sweeps: dict = field(default_factory=dict)
    reference: list = field(default_factory=list)  # published rows for `reproduce`
    checks: list = field(default_factory=list)  # pass/fail rules for `reproduce`

    def __post_init__(self):
        unknown = [t for t in self.tests if t not in KNOWN_TESTS]
        if unknown:
            raise ConfigError(f"unknown test ids {unknown}; known: {list(KNOWN_TESTS)}")
        if not self.tests:
            raise ConfigError("no tests requested")
        if self.n_tr < 2 or self.n_te < 2:
            raise ConfigError("n_tr and n_te must be >= 2")
        if self.repetitions < 1 or self.n_pairs < 1:
            raise ConfigError("repetitions and n_pairs must be >= 1")
        for chk in self.checks:
            if not isinstance(chk, dict) or not {"quantity", "method", "op"} <= set(chk):
                raise ConfigError(f"check {chk!r} needs quantity, method and op")
            if chk["op"] not in ("ge", "le", "between"):
                raise ConfigError(f"check op must be ge, le or between, not {chk['op']!r}")
            if "value" not in chk and ("ref" not in chk or chk["op"] == "between"):
                raise ConfigError(f"check {chk!r} needs a value (or a ref for ge/le)")

    def train_config(self, test: str) -> TrainConfig:
        return self.train.get(test, TrainConfig())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": dataclasses.asdict(self.dataset),
            "tests": list(self.tests),
            "train": {k: dataclasses.asdict(v) for k, v in sorted(self.train.items())},
            "attack": dataclasses.asdict(self.attack),
            "inference": dataclasses.asdict(self.inference),
            "n_tr": self.n_tr,
            "n_te": self.n_te,
            "n_pairs": self.n_pairs,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "p_vs_p": self.p_vs_p,
            "sweeps": self.sweeps,
            "reference": self.reference,
            "checks": self.checks,
        }

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(raw) - names)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError, ConfigurationError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    raw.pop("description", None)
    dataset = raw.get("dataset")
    if isinstance(dataset, dict) and dataset.get("columns") is not None:
        dataset = dict(dataset, columns=tuple(dataset["columns"]))
    train_raw = raw.get("train") or {}
    default = dict(train_raw.get("default") or {})
    tests = tuple(raw.get("tests", TEST_ORDER))
    train = {}
    for test in set(tests) | (set(train_raw) - {"default"}):
        merged = dict(default, **(train_raw.get(test) or {}))
        train[test] = _build(TrainConfig, merged, f"train.{test}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown top-level keys {extra}")
    scalars = {k: raw[k] for k in ("name", "n_tr", "n_te", "n_pairs", "repetitions", "seed", "p_vs_p",
                                   "sweeps", "reference", "checks") if k in raw}
    try:
        return ExperimentConfig(
            dataset=_build(DatasetConfig, dataset, "dataset"),
            tests=tests,
            train=train,
            attack=_build(AttackSpec, raw.get("attack"), "attack"),
            inference=_build(InferenceConfig, raw.get("inference"), "inference"),
            **scalars,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_config(source) -> ExperimentConfig:
    """Preset name, path to a YAML file, or an already-parsed mapping."""
    if isinstance(source, dict):
        return config_from_dict(source)
    path = Path(source)
    if not path.suffix and (PRESET_DIR / f"{source}.yaml").is_file():
        path = PRESET_DIR / f"{source}.yaml"
    if not path.is_file():
        raise ConfigError(f"no preset or config file named {source!r}; presets: {list_presets()}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


# -- data and seeds ------------------------------------------------------------


def make_sampler(cfg: ExperimentConfig, null: bool | None = None, d: int | None = None):
    ds = cfg.dataset
    null = cfg.p_vs_p if null is None else null
    if ds.name == "blob":
        return blob_sampler(BlobSpec(), null=null, per_mode=ds.per_mode)
    if ds.name == "hdgm":
        return hdgm_sampler(HdgmSpec(d=d or ds.d), null=null)
    table = load_table(ds.path, normalize=ds.normalize)
    labels = table[:, ds.label_column]
    feats = np.delete(table, ds.label_column, axis=1)
    if ds.columns is not None:
        feats = feats[:, list(ds.columns)]
    p_rows, q_rows = feats[labels == ds.p_label], feats[labels == ds.q_label]
    if len(p_rows) == 0 or len(q_rows) == 0:
        raise ConfigError(f"{ds.path}: no rows for label {ds.p_label} or {ds.q_label}")
    return table_sampler(p_rows, q_rows, null=null)


@dataclass(frozen=True)
class RepSeeds:
    train_pair: int
    fit: int
    evaluation: int


def rep_seeds(seed: int, rep: int) -> RepSeeds:
    a, b, c = np.random.SeedSequence([seed, rep]).generate_state(3)
    return RepSeeds(int(a), int(b), int(c))


# -- fitting -------------------------------------------------------------------


def _fit_one(test, sp, sq, tcfg: TrainConfig):
    if test == "MMD-D":
        return fit_mmd_deep(sp, sq, tcfg)
    if test == "MMD-RoD":
        return fit_mmd_rod(sp, sq, tcfg)
    if test == "MMD-G":
        return fit_mmd_gaussian(sp, sq, tcfg)
    if test in ("C2ST-S", "C2ST-L"):
        return fit_c2st(sp, sq, tcfg, "sign" if test == "C2ST-S" else "logit")
    return fit_locations(sp, sq, tcfg, "me" if test == "ME" else "scf")


def fit_suite(cfg: ExperimentConfig, sp, sq, fit_seed: int, tests=None, model_dir=None, log=None):
    """Fit (or load from ``model_dir``) every requested test.

    Returns ``(models, traces)``. C2ST-S and C2ST-L with identical training
    settings share one classifier.
    """
    tests = tuple(tests or cfg.tests)
    models, traces = {}, {}
    shared_clf = {}
    for test in tests:
        path = Path(model_dir) / f"{test}.json" if model_dir else None
        if path is not None and path.is_file():
            models[test] = load_model(path)
            continue
        tcfg = dataclasses.replace(cfg.train_config(test), seed=fit_seed)
        if test in ("C2ST-S", "C2ST-L") and tcfg in shared_clf:
            clf = shared_clf[tcfg]
            model, trace = C2STKernel(clf.net, sign=test == "C2ST-S"), traces.get("C2ST-S", traces.get("C2ST-L"))
        else:
            if log:
                log(f"fitting {test}")
            model, trace = _fit_one(test, sp, sq, tcfg)
            if test in ("C2ST-S", "C2ST-L"):
                shared_clf[tcfg] = model
        models[test], traces[test] = model, np.asarray(trace)
        if path is not None:
            save_model(model, path)
    return models, traces


# -- attack and power ----------------------------------------------------------


def attack_weights(cfg: ExperimentConfig, names, strategy=None) -> tuple[dict, bool]:
    """Weights over ``names`` plus the auto flag."""
    strategy = cfg.attack.weights if strategy is None else strategy
    names = list(names)
    if isinstance(strategy, dict):
        w = {k: float(strategy.get(k, 0.0)) for k in names}
        total = sum(w.values())
        if total <= 0:
            raise ConfigError("attack weights must have a positive sum over the attacked tests")
        return {k: v / total for k, v in w.items()}, False
    if strategy == "auto":
        return {}, True
    if strategy == "naive":
        return naive_weights(names), False
    base = finetuned_weights(cfg.dataset.weight_key)
    if "MMD-RoD" in names:
        # Ensemble+: RoD and D each take half of D's finetuned weight
        base = dict(base, **{"MMD-D": base["MMD-D"] / 2, "MMD-RoD": base["MMD-D"] / 2})
    w = {k: base[k] for k in names}
    total = sum(w.values())
    return {k: v / total for k, v in w.items()}, False


def attack_plan(cfg: ExperimentConfig, names, epsilon=None, strategy=None) -> AttackPlan:
    weights, auto = attack_weights(cfg, names, strategy)
    eps = cfg.attack.epsilon if epsilon is None else epsilon
    return AttackPlan(eps, cfg.attack.max_steps, weights, auto_weights=auto)


def power(cfg: ExperimentConfig, models: dict, eval_seed: int, *, attacked: bool = False,
          epsilon=None, strategy=None, attack_models: dict | None = None, n_te=None, null=None,
          d=None, redraw_p: bool = False, n_jobs: int = 1) -> PowerResult:
    """Rejection rates of ``models`` on ``cfg.n_pairs`` fresh pairs.

    ``attack_models`` (default: ``models``) are the ensemble the attacker
    differentiates through; passing different models gives transfer runs.
    """
    sampler = make_sampler(cfg, null=null, d=d)
    attack = None
    if attacked:
        src = attack_models if attack_models is not None else models
        ens = build_ensemble(src, CriterionConfig(), cfg.attack.location_scale)
        attack = (ens, attack_plan(cfg, list(src), epsilon, strategy))
    return evaluate_power(models, sampler, n_te or cfg.n_te, cfg.n_pairs, cfg.inference,
                          attack=attack, seed=eval_seed, redraw_p=redraw_p, n_jobs=n_jobs)


def fit_rep(cfg: ExperimentConfig, rep: int, tests=None, model_dir=None, log=None, d=None, seed=None):
    seeds = rep_seeds(cfg.seed if seed is None else seed, rep)
    sp, sq = make_sampler(cfg, d=d)(cfg.n_tr, np.random.default_rng(seeds.train_pair))
    models, traces = fit_suite(cfg, sp, sq, seeds.fit, tests=tests, model_dir=model_dir, log=log)
    return models, traces, seeds


def summarize(rates_per_rep: list[dict]) -> dict[str, tuple[float, float]]:
    """Mean and (population) std over repetitions per test."""
    keys = list(rates_per_rep[0])
    return {k: (float(np.mean([r[k] for r in rates_per_rep])), float(np.std([r[k] for r in rates_per_rep])))
            for k in keys}
