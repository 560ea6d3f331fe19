"""Round-based FL simulator: local training, attack injection, defense, aggregation."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from flaegis.aggregate import FftAggConfig, fedavg, fft_aggregate
from flaegis.attacks import ATTACK_KINDS, AttackConfig, craft_update, flip_labels
from flaegis.baselines import (
    FedDmcState,
    LoMarConfig,
    SignGuardConfig,
    feddmc_ensemble,
    feddmc_project,
    feddmc_tree_detect,
    lomar_classify,
    lomar_scores,
    signguard_aggregate,
    signguard_norm_filter,
    signguard_sign_filter,
)
from flaegis.core import ServerView, Verdict, derive_seed, rng_for
from flaegis.detect import DetectConfig, flaegis_identify
from flaegis.learner import (
    Dataset,
    MlpModel,
    TrainConfig,
    dirichlet_partition,
    evaluate,
    load_csv,
    local_train,
    synth_dataset,
)

__all__ = [
    "DataConfig",
    "FedDmcConfig",
    "ExperimentConfig",
    "RoundReport",
    "ExperimentReport",
    "ExperimentError",
    "DEFENSES",
    "experiment_from_dict",
    "experiment_to_dict",
    "build_state",
    "run_round",
    "run_experiment",
    "ablation_suite",
    "report_to_dict",
    "report_json",
    "rounds_csv_header",
    "rounds_csv_rows",
]


# ----------------------------------------------------------------- configs

@dataclass(frozen=True)
class DataConfig:
    n: int = 4000
    d: int = 8
    n_classes: int = 5
    cluster_spread: float = 0.2
    center_scale: float = 6.0
    dirichlet_alpha: float = 0.5
    test_fraction: float = 0.2
    csv_path: str | None = None

    def __post_init__(self):
        if self.n < 10 or self.d < 1 or self.n_classes < 2:
            raise ValueError("need n >= 10, d >= 1, n_classes >= 2")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be > 0")


@dataclass(frozen=True)
class FedDmcConfig:
    pca_dims: int = 3
    min_leaf_fraction: float = 0.3
    alpha: float = 0.5

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.pca_dims < 1:
            raise ValueError("pca_dims must be >= 1")


# defense name -> (detector key, aggregator key); detector None means trust all
DEFENSES = {
    "none": (None, "fedavg"),
    "fedavg": (None, "fedavg"),
    "flaegis": ("flaegis", "fft"),
    "flaegis_no_sax": ("flaegis_no_sax", "fft"),
    "flaegis_no_fft": ("flaegis", "fedavg"),
    "signguard": ("signguard", "signguard"),
    "signguard_fft": ("signguard", "fft"),
    "feddmc": ("feddmc", "fedavg"),
    "feddmc_fft": ("feddmc", "fft"),
    "lomar": ("lomar", "fedavg"),
    "lomar_fft": ("lomar", "fft"),
    "fft_only": (None, "fft"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 20
    rounds: int = 15
    malicious_fraction: float = 0.0
    resample_malicious: bool = True
    defense: str = "fedavg"
    warmup_rounds: int = 3
    hidden_units: int = 16
    master_seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    aggregate: FftAggConfig = field(default_factory=FftAggConfig)
    signguard: SignGuardConfig = field(default_factory=SignGuardConfig)
    feddmc: FedDmcConfig = field(default_factory=FedDmcConfig)
    lomar: LoMarConfig = field(default_factory=LoMarConfig)

    def __post_init__(self):
        if self.n_clients < 2:
            raise ValueError("n_clients must be >= 2")
        if not 0 <= self.malicious_fraction < 0.5:
            raise ValueError("malicious_fraction must be in [0, 0.5)")
        if self.rounds < 0 or self.warmup_rounds < 0:
            raise ValueError("rounds and warmup_rounds must be >= 0")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.defense not in DEFENSES:
            raise ValueError(f"unknown defense {self.defense!r}; "
                             f"choose from {sorted(DEFENSES)}")


_SKIP_FIELDS = {"scores"}  # runtime state carried on config-like dataclasses


def _to_dict(obj):
    out = {}
    for f in fields(obj):
        if f.name in _SKIP_FIELDS:
            continue
        v = getattr(obj, f.name)
        out[f.name] = _to_dict(v) if is_dataclass(v) else v
    return out


def _from_dict(cls, doc, section):
    if not isinstance(doc, dict):
        raise ValueError(f"section '{section}' must be a JSON object")
    schema = {f.name: f for f in fields(cls) if f.name not in _SKIP_FIELDS}
    kwargs = {}
    for key, value in doc.items():
        if key not in schema:
            raise ValueError(f"unknown field '{key}' in section '{section}'")
        ftype = schema[key].type
        nested = _NESTED.get((cls, key))
        if nested is not None:
            kwargs[key] = _from_dict(nested, value, f"{section}.{key}")
        elif value is not None and "float" in str(ftype) and isinstance(value, (int, float)):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


from flaegis.detect import SaxConfig  # noqa: E402  (nested-section registry)

_NESTED = {
    (ExperimentConfig, "attack"): AttackConfig,
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "detect"): DetectConfig,
    (ExperimentConfig, "aggregate"): FftAggConfig,
    (ExperimentConfig, "signguard"): SignGuardConfig,
    (ExperimentConfig, "feddmc"): FedDmcConfig,
    (ExperimentConfig, "lomar"): LoMarConfig,
    (DetectConfig, "sax"): SaxConfig,
}


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_dict(cfg)


def experiment_from_dict(doc: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, doc, "experiment")


# ----------------------------------------------------------------- reports

@dataclass(frozen=True)
class RoundReport:
    round_index: int
    detection_accuracy: float
    model_accuracy: float
    flagged_ids: tuple
    true_malicious_ids: tuple
    fallback_all_flagged: bool
    wall_times: dict  # phase -> ms; never serialized into report JSON


@dataclass(frozen=True)
class ExperimentReport:
    config: dict
    rounds: tuple
    initial_accuracy: float
    final_accuracy: float
    mean_detection_accuracy: float | None
    valid: bool = True


class ExperimentError(RuntimeError):
    """Raised when a round aborts; carries the partial report (valid=False)."""

    def __init__(self, message: str, report: ExperimentReport):
        super().__init__(message)
        self.report = report


def report_to_dict(report: ExperimentReport) -> dict:
    rounds = [
        {
            "round": r.round_index,
            "detection_accuracy": r.detection_accuracy,
            "model_accuracy": r.model_accuracy,
            "flagged_ids": list(r.flagged_ids),
            "true_malicious_ids": list(r.true_malicious_ids),
            "n_flagged": len(r.flagged_ids),
            "n_true_malicious": len(r.true_malicious_ids),
            "fallback_all_flagged": r.fallback_all_flagged,
        }
        for r in report.rounds
    ]
    return {
        "config": report.config,
        "rounds": rounds,
        "initial_accuracy": report.initial_accuracy,
        "final_accuracy": report.final_accuracy,
        "mean_detection_accuracy": report.mean_detection_accuracy,
        "valid": report.valid,
    }


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, separators=(",", ":"))


ROUNDS_CSV_COLUMNS = ("round", "defense", "attack", "fraction",
                      "detection_accuracy", "model_accuracy",
                      "n_flagged", "n_true_malicious", "wall_ms")


def rounds_csv_header() -> str:
    return ",".join(ROUNDS_CSV_COLUMNS)


def rounds_csv_rows(report: ExperimentReport) -> list:
    cfg = report.config
    rows = []
    for r in report.rounds:
        wall = sum(r.wall_times.values())
        rows.append(",".join(str(x) for x in (
            r.round_index, cfg["defense"], cfg["attack"]["kind"],
            cfg["malicious_fraction"], r.detection_accuracy, r.model_accuracy,
            len(r.flagged_ids), len(r.true_malicious_ids), f"{wall:.3f}",
        )))
    return rows


# ------------------------------------------------------------- round logic

@dataclass
class ExperimentState:
    template: MlpModel
    client_data: list
    test_set: Dataset
    lomar_probe: Dataset
    feddmc_state: FedDmcState


def build_state(cfg: ExperimentConfig) -> ExperimentState:
    dc = cfg.data
    if dc.csv_path is not None:
        pool = load_csv(dc.csv_path)
    else:
        pool = synth_dataset(cfg.master_seed, n=dc.n, d=dc.d, C=dc.n_classes,
                             cluster_spread=dc.cluster_spread,
                             center_scale=dc.center_scale)
    n_test = int(round(dc.test_fraction * pool.n))
    perm = rng_for(cfg.master_seed, purpose="split").permutation(pool.n)
    test_set = pool.subset(np.sort(perm[:n_test]))
    train_pool = pool.subset(np.sort(perm[n_test:]))
    client_data = dirichlet_partition(train_pool, cfg.n_clients,
                                      dc.dirichlet_alpha, cfg.master_seed)
    n_classes = int(pool.y.max()) + 1
    template = MlpModel((pool.d, cfg.hidden_units, n_classes),
                        seed=derive_seed(cfg.master_seed, purpose="model_init"))
    probe = synth_dataset(derive_seed(cfg.master_seed, purpose="lomar_probe"),
                          n=cfg.lomar.probe_batch, d=dc.d, C=dc.n_classes,
                          cluster_spread=dc.cluster_spread,
                          center_scale=dc.center_scale)
    feddmc_state = FedDmcState(pca_dims=cfg.feddmc.pca_dims,
                               min_leaf_fraction=cfg.feddmc.min_leaf_fraction,
                               alpha=cfg.feddmc.alpha)
    return ExperimentState(template=template, client_data=client_data,
                           test_set=test_set, lomar_probe=probe,
                           feddmc_state=feddmc_state)


def _sample_malicious(cfg: ExperimentConfig, round_idx: int) -> frozenset:
    n_mal = int(np.floor(cfg.malicious_fraction * cfg.n_clients))
    if n_mal == 0:
        return frozenset()
    draw_round = round_idx if cfg.resample_malicious else 0
    rng = rng_for(cfg.master_seed, round_idx=draw_round, purpose="malice")
    return frozenset(int(i) for i in
                     rng.choice(cfg.n_clients, size=n_mal, replace=False))


def _train_clients(global_w, cfg, round_idx, state, malicious):
    """Honest pass for everyone; label-flip clients train on permuted labels."""
    flip_seed = derive_seed(cfg.master_seed, round_idx, 0, "flip")
    updates = []
    for k in range(cfg.n_clients):
        ds = state.client_data[k]
        if k in malicious and cfg.attack.kind == "label_flip":
            ds = flip_labels(ds, flip_seed)
        model = state.template.clone()
        model.set_flat(global_w)
        seed = derive_seed(cfg.master_seed, round_idx, k, "train")
        updates.append(local_train(model, ds, cfg.train, seed))
    return updates


def _apply_attack(cfg, honest, malicious, n_total):
    """Replace the colluders' submissions with the crafted shared vector."""
    if not malicious or cfg.attack.kind == "label_flip":
        return list(honest)
    colluders = [honest[k] for k in sorted(malicious)]
    benign_views = None
    if cfg.attack.omniscient:
        benign_views = [ServerView(client_id=k, weights=honest[k])
                        for k in range(n_total) if k not in malicious]
    crafted = craft_update(cfg.attack, colluders, benign_views, n_total=n_total)
    out = list(honest)
    for k in malicious:
        out[k] = crafted
    return out


def _run_detector(key, weights, global_w, cfg, round_idx, state):
    k_all = len(weights)
    if key is None:
        return Verdict(benign_ids=frozenset(range(k_all)),
                       flagged_ids=frozenset(), estimated_clusters=1)
    seed = derive_seed(cfg.master_seed, round_idx, 0, "detect")
    if key in ("flaegis", "flaegis_no_sax"):
        det = cfg.detect if key == "flaegis" else \
            dataclasses.replace(cfg.detect, use_sax=False)
        return flaegis_identify(weights, det, seed)
    if key == "signguard":
        pgrads = [w - global_w for w in weights]
        survivors = signguard_norm_filter(pgrads, cfg.signguard) & \
            signguard_sign_filter(pgrads, cfg.signguard, seed)
        flagged = frozenset(range(k_all)) - survivors
        return Verdict(benign_ids=frozenset(survivors), flagged_ids=flagged,
                       estimated_clusters=2 if flagged else 1)
    if key == "feddmc":
        proj = feddmc_project(weights, state.feddmc_state.pca_dims)
        labels = feddmc_tree_detect(proj, state.feddmc_state.min_leaf_fraction)
        verdict, state.feddmc_state = feddmc_ensemble(
            state.feddmc_state, {k: int(labels[k]) for k in range(k_all)})
        return verdict
    if key == "lomar":
        models = []
        for w in weights:
            m = state.template.clone()
            m.set_flat(w)
            models.append(m)
        factors = lomar_scores(models, state.lomar_probe, cfg.lomar)
        return lomar_classify(factors, cfg.lomar.epsilon, cfg.lomar.flag_high)
    raise ValueError(f"unhandled detector {key!r}")


def _aggregate(key, weights, benign_ids, global_w, cfg):
    kept = [weights[k] for k in sorted(benign_ids)]
    if key == "fedavg":
        return fedavg(kept)
    if key == "fft":
        return fft_aggregate(kept, cfg.aggregate)
    if key == "signguard":
        pgrads = [w - global_w for w in weights]
        return global_w + signguard_aggregate(pgrads, benign_ids, cfg.signguard)
    raise ValueError(f"unhandled aggregator {key!r}")


def run_round(global_w, cfg: ExperimentConfig, round_idx: int,
              state: ExperimentState):
    detector_key, aggregator_key = DEFENSES[cfg.defense]
    walls = {}
    truth = _sample_malicious(cfg, round_idx)

    t0 = time.perf_counter()
    honest = _train_clients(global_w, cfg, round_idx, state, truth)
    submitted = _apply_attack(cfg, honest, truth, cfg.n_clients)
    walls["train_ms"] = (time.perf_counter() - t0) * 1e3

    # the defense sees positional weight vectors only, never the truth set
    t0 = time.perf_counter()
    verdict = _run_detector(detector_key, submitted, global_w, cfg,
                            round_idx, state)
    walls["defense_ms"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    fallback = len(verdict.benign_ids) == 0
    agg_ids = frozenset(range(cfg.n_clients)) if fallback else verdict.benign_ids
    new_global = _aggregate(aggregator_key, submitted, agg_ids, global_w, cfg)
    walls["aggregate_ms"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    model = state.template.clone()
    model.set_flat(new_global)
    acc = evaluate(model, state.test_set)
    walls["evaluate_ms"] = (time.perf_counter() - t0) * 1e3

    tp = len(verdict.flagged_ids & truth)
    tn = len(verdict.benign_ids - truth)
    report = RoundReport(
        round_index=round_idx,
        detection_accuracy=(tp + tn) / cfg.n_clients,
        model_accuracy=acc,
        flagged_ids=tuple(sorted(verdict.flagged_ids)),
        true_malicious_ids=tuple(sorted(truth)),
        fallback_all_flagged=fallback,
        wall_times=walls,
    )
    return new_global, report


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    state = build_state(cfg)
    global_w = state.template.get_flat()
    initial_acc = evaluate(state.template, state.test_set)
    rounds = []
    try:
        for r in range(cfg.rounds):
            global_w, rep = run_round(global_w, cfg, r, state)
            rounds.append(rep)
    except Exception as e:
        partial = ExperimentReport(
            config=experiment_to_dict(cfg), rounds=tuple(rounds),
            initial_accuracy=initial_acc,
            final_accuracy=rounds[-1].model_accuracy if rounds else initial_acc,
            mean_detection_accuracy=None, valid=False)
        raise ExperimentError(f"round {len(rounds)} aborted: {e}", partial) from e
    post = [r.detection_accuracy for r in rounds if r.round_index >= cfg.warmup_rounds]
    return ExperimentReport(
        config=experiment_to_dict(cfg),
        rounds=tuple(rounds),
        initial_accuracy=initial_acc,
        final_accuracy=rounds[-1].model_accuracy if rounds else initial_acc,
        mean_detection_accuracy=float(np.mean(post)) if post else None,
    )


def ablation_suite(base: ExperimentConfig,
                   attacks=ATTACK_KINDS,
                   fractions=(0.2, 0.4)) -> dict:
    """Detection/aggregation ablations on shared seeds so rounds coincide."""
    out = {}
    for defense in ("flaegis", "flaegis_no_sax", "flaegis_no_fft"):
        for kind in attacks:
            for frac in fractions:
                attack = dataclasses.replace(
                    base.attack, kind=kind,
                    omniscient=(kind == "mimic") or base.attack.omniscient)
                cfg = dataclasses.replace(base, defense=defense, attack=attack,
                                          malicious_fraction=frac)
                out[(defense, kind, frac)] = run_experiment(cfg)
    return out
