"""Experiment configuration, the end-to-end desk pipeline and the detection-zoo AUC."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from grasplab import __version__
from grasplab.data import SYNTHETIC_KINDS, load_idx, load_mnist_desk, synthetic_dataset
from grasplab.inversion import InversionConfig, InversionResult, invert, inversion_score
from grasplab.io import config_hash, read_json, write_csv, write_json
from grasplab.metrics import (
    MetricsReport,
    asr,
    clean_accuracy,
    epsilon1,
    epsilon2_jaccard,
    epsilon3,
    epsilon4_auc,
    unlearn,
)
from grasplab.nn import TrainConfig, build_model, load_model, save_model, sgd_train
from grasplab.nn.model import PRESETS
from grasplab.poisoning import (
    NOISE_TYPES,
    PLAN_PRESETS,
    PoisonPlan,
    Trigger,
    amend,
    baseline_poison,
    grasp_poison,
    patch_trigger,
)
from grasplab.robustness import RobustnessQuery, mean_local_lipschitz, overall_robustness

ATTACKS = ("none", "badnet", "grasp")
STAGES = ("data", "train_clean", "poison", "train", "invert", "robustness", "metrics", "report")
CORNERS = ("top_left", "top_right", "bottom_left", "bottom_right")


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage, cause, manifest_path):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.manifest_path = manifest_path


DEFAULTS = {
    "dataset": {"kind": "mnist", "root": None, "n_train": 2000, "n_test": 1000, "seed": 0,
                "train_images": None, "train_labels": None, "test_images": None, "test_labels": None,
                "synthetic_kind": "stripes", "n": 400, "test_fraction": 0.25},
    "arch": "cnn",
    "train": TrainConfig().to_dict(),
    "trigger": {"source": "patch", "size": 3, "corner": "bottom_right", "margin": 1, "value": 1.0,
                "path": None},
    "attack": "grasp",
    "poison": {"preset": None, **PoisonPlan().to_dict()},
    "inversion": {**InversionConfig(lam=1e-2).to_dict(), "clean_fraction": 0.1},
    "robustness": {**RobustnessQuery().to_dict(), "n_samples": 60},
    "lipschitz": {"radius": 0.1, "n_pairs": 16, "n_points": 20, "output": "probs"},
    "output_dir": "runs/default",
    "seed": 0,
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def _wrap(section, fn):
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def from_dict(cls, d=None):
        cfg = cls(_merge(DEFAULTS, d or {}))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def to_dict(self):
        return copy.deepcopy(self.raw)

    @property
    def hash(self):
        # where results land does not change what is computed
        return config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})

    def validate(self):
        r = self.raw
        ds = r["dataset"]
        if ds["kind"] not in ("mnist", "idx", "synthetic"):
            raise ConfigError(f"dataset.kind must be mnist, idx or synthetic, got {ds['kind']!r}")
        if ds["kind"] == "idx" and not all(ds[k] for k in ("train_images", "train_labels", "test_images",
                                                           "test_labels")):
            raise ConfigError("idx datasets need train/test image and label paths")
        if ds["kind"] == "synthetic":
            if ds["synthetic_kind"] not in SYNTHETIC_KINDS:
                raise ConfigError(f"dataset.synthetic_kind must be one of {SYNTHETIC_KINDS}")
            if not 0 < ds["test_fraction"] < 1:
                raise ConfigError("dataset.test_fraction must lie in (0, 1)")
        if r["arch"] not in PRESETS:
            raise ConfigError(f"unknown architecture preset {r['arch']!r}; expected one of {PRESETS}")
        if r["attack"] not in ATTACKS:
            raise ConfigError(f"attack must be one of {ATTACKS}, got {r['attack']!r}")
        tr = r["trigger"]
        if tr["source"] == "patch":
            if tr["size"] not in (3, 4):
                raise ConfigError("built-in patch triggers are 3x3 or 4x4")
            if tr["corner"] not in CORNERS:
                raise ConfigError(f"trigger.corner must be one of {CORNERS}")
        elif tr["source"] == "file":
            if not tr["path"]:
                raise ConfigError("trigger.path is required for file triggers")
        else:
            raise ConfigError("trigger.source must be patch or file")
        _wrap("train", lambda: TrainConfig(**r["train"]))
        _wrap("poison", self.poison_plan)
        if r["poison"]["noise_type"] not in NOISE_TYPES:
            raise ConfigError(f"poison.noise_type must be one of {NOISE_TYPES}")
        _wrap("inversion", self.inversion_config)
        if not 0 < r["inversion"]["clean_fraction"] <= 1:
            raise ConfigError("inversion.clean_fraction must lie in (0, 1]")
        _wrap("robustness", self.robustness_query)
        if r["robustness"]["n_samples"] < 1:
            raise ConfigError("robustness.n_samples must be >= 1")
        lp = r["lipschitz"]
        if lp["radius"] <= 0 or lp["n_pairs"] < 1 or lp["n_points"] < 1:
            raise ConfigError("lipschitz radius, n_pairs and n_points must be positive")
        if lp["output"] not in ("logits", "probs"):
            raise ConfigError("lipschitz.output must be logits or probs")
        return self

    def train_config(self):
        return TrainConfig(**self.raw["train"])

    def poison_plan(self):
        p = dict(self.raw["poison"])
        preset = p.pop("preset")
        if preset is not None:
            if preset not in PLAN_PRESETS:
                raise ValueError(f"unknown poison preset {preset!r}; expected one of {tuple(PLAN_PRESETS)}")
            p.update(PLAN_PRESETS[preset])
        return PoisonPlan(**p).validate()

    def inversion_config(self):
        d = dict(self.raw["inversion"])
        d.pop("clean_fraction")
        return InversionConfig(**d)

    def robustness_query(self):
        d = dict(self.raw["robustness"])
        d.pop("n_samples")
        return RobustnessQuery(**d)


# --- stage helpers ------------------------------------------------------------

def load_datasets(ds):
    if ds["kind"] == "mnist":
        return load_mnist_desk(ds["root"], ds["n_train"], ds["n_test"], ds["seed"])
    if ds["kind"] == "idx":
        return load_idx(ds["train_images"], ds["train_labels"]), load_idx(ds["test_images"], ds["test_labels"])
    full = synthetic_dataset(ds["synthetic_kind"], ds["n"], ds["seed"])
    n_test = max(1, int(round(ds["test_fraction"] * len(full))))
    return full.subset(np.arange(n_test, len(full))), full.subset(np.arange(n_test))


def build_trigger(tcfg, sample_shape):
    if tcfg["source"] == "file":
        trig = Trigger.load(tcfg["path"])
        if trig.shape != tuple(sample_shape):
            raise ConfigError(f"trigger shape {trig.shape} != sample shape {tuple(sample_shape)}")
        return trig
    if len(sample_shape) < 2:
        raise ConfigError("built-in patch triggers need image-shaped samples")
    return patch_trigger(sample_shape, tcfg["size"], tcfg["corner"], tcfg["value"], tcfg["margin"])


def poison_dataset(train, trigger, attack, plan):
    if attack == "badnet":
        return baseline_poison(train, trigger, plan.alpha, plan.target_label, plan.seed)
    if attack == "grasp":
        return grasp_poison(train, trigger, plan)
    return None


def save_poisoned(path, pd):
    np.savez(path, x=pd.x, y=pd.y, provenance=pd.provenance, source_index=pd.source_index)


def inversion_inputs(train, fraction, seed):
    n = max(1, int(round(fraction * len(train))))
    idx = np.sort(np.random.default_rng([seed, 7]).permutation(len(train))[:n])
    return train.x[idx]


@dataclass
class RunManifest:
    config_hash: str
    version: str
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    status: str = "running"
    error: str | None = None

    def to_dict(self):
        return {"config_hash": self.config_hash, "version": self.version, "artifacts": self.artifacts,
                "timings": self.timings, "completed": self.completed, "status": self.status,
                "error": self.error}

    @classmethod
    def load(cls, path):
        d = read_json(path)
        m = cls(d["config_hash"], d["version"], d["artifacts"], d["timings"], d["completed"], d["status"],
                d.get("error"))
        m.root = Path(path).parent
        return m

    def path_of(self, name):
        return getattr(self, "root", Path(".")) / self.artifacts[name]


def run_pipeline(config):
    """Train, poison, invert, measure and report; every artifact goes to ``output_dir``.

    Reports carry no timestamps, so equal configs give byte-identical
    reports. Wall-clock timings live only in ``manifest.json``.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    r = config.raw
    out = Path(r["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc
    manifest = RunManifest(config.hash, __version__)
    mpath = out / "manifest.json"
    write_json(out / "config.json", r)
    manifest.artifacts["config"] = "config.json"
    state = {}
    seed = r["seed"]
    plan = config.poison_plan()
    y_t = plan.target_label

    def stage_data():
        train, test = load_datasets(r["dataset"])
        state.update(train=train, test=test, trigger=build_trigger(r["trigger"], train.sample_shape))
        state["trigger"].save(out / "trigger.json")
        manifest.artifacts["trigger"] = "trigger.json"

    def stage_train_clean():
        train = state["train"]
        m0 = build_model(r["arch"], train.sample_shape, train.num_classes, seed)
        state["init"] = m0
        state["clean_model"] = sgd_train(m0, train.x, train.y, config.train_config())
        save_model(state["clean_model"], out / "clean_model.grsl")
        manifest.artifacts["clean_model"] = "clean_model.grsl"

    def stage_poison():
        pd = poison_dataset(state["train"], state["trigger"], r["attack"], plan)
        state["poisoned"] = pd
        if pd is not None:
            save_poisoned(out / "poisoned.npz", pd)
            manifest.artifacts["poisoned"] = "poisoned.npz"

    def stage_train():
        pd = state["poisoned"]
        if pd is None:
            state["model"] = state["clean_model"]
        else:
            state["model"] = sgd_train(state["init"], pd.x, pd.y, config.train_config())
        save_model(state["model"], out / "model.grsl")
        manifest.artifacts["model"] = "model.grsl"

    def stage_invert():
        train, test = state["train"], state["test"]
        xs = inversion_inputs(train, r["inversion"]["clean_fraction"], seed)
        res = invert(state["model"], xs, y_t, config.inversion_config(), holdout=(test.x, test.y))
        state["inversion"] = res
        (out / "inversion.json").write_text(res.to_json())
        res.trigger.save(out / "recovered_trigger.json")
        manifest.artifacts["inversion"] = "inversion.json"
        manifest.artifacts["recovered_trigger"] = "recovered_trigger.json"

    def stage_robustness():
        test, trig, model = state["test"], state["trigger"], state["model"]
        keep = np.flatnonzero(test.y != y_t)[: r["robustness"]["n_samples"]]
        rep = overall_robustness(model, test.x[keep], test.y[keep], trig, y_t, config.robustness_query())
        lp = r["lipschitz"]
        pts = amend(test.x[keep[: lp["n_points"]]], trig)
        lip = mean_local_lipschitz(model, pts, lp["radius"], lp["n_pairs"], seed=seed, output=lp["output"])
        state["robustness"] = rep
        state["lipschitz"] = lip
        rep.write_csv(out / "robustness.csv")
        write_json(out / "robustness.json", {**rep.to_dict(), "lipschitz": lip, "lipschitz_config": lp})
        manifest.artifacts["robustness_csv"] = "robustness.csv"
        manifest.artifacts["robustness"] = "robustness.json"

    def stage_metrics():
        train, test, trig = state["train"], state["test"], state["trigger"]
        model, clean, inv = state["model"], state["clean_model"], state["inversion"]
        before = asr(model, test.x, test.y, trig, y_t)
        um = unlearn(model, inv.trigger, train.x, train.y, seed)
        after = asr(um, test.x, test.y, trig, y_t)
        rep = MetricsReport(
            asr_before=before,
            asr_after_unlearn=after,
            epsilon1=epsilon1(before, after),
            epsilon2=epsilon2_jaccard(inv.mask_binary, trig.mask) if inv.l0 or trig.size else None,
            epsilon3=epsilon3(clean, inv.trigger, y_t, test.x, test.y),
            clean_acc_before=clean_accuracy(model, test.x, test.y),
            clean_acc_after=clean_accuracy(um, test.x, test.y),
            counts=state["poisoned"].counts() if state["poisoned"] is not None else {},
            config={"attack": r["attack"], "target_label": y_t},
        )
        rep.config["clean_model_accuracy"] = clean_accuracy(clean, test.x, test.y)
        state["metrics"] = rep
        write_json(out / "metrics.json", rep.to_dict())
        manifest.artifacts["metrics"] = "metrics.json"

    def stage_report():
        rob = state["robustness"]
        report = {
            "config_hash": config.hash,
            "attack": r["attack"],
            "metrics": state["metrics"].to_dict(),
            "robustness": {"r_t": rob.r_t, "r_b": rob.r_b, "ratio": rob.ratio, "counts": rob.counts,
                           "lipschitz": state["lipschitz"]},
            "inversion": {"l0": state["inversion"].l0, "l1": state["inversion"].l1,
                          "asr": state["inversion"].asr, "score": inversion_score(state["inversion"]),
                          "chosen_restart": state["inversion"].chosen_restart},
        }
        write_json(out / "report.json", report)
        manifest.artifacts["report"] = "report.json"

    stages = dict(zip(STAGES, (stage_data, stage_train_clean, stage_poison, stage_train, stage_invert,
                               stage_robustness, stage_metrics, stage_report)))
    for name, fn in stages.items():
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            manifest.timings[name] = time.perf_counter() - t0
            manifest.status = "failed"
            manifest.error = f"{name}: {type(exc).__name__}: {exc}"
            write_json(mpath, manifest.to_dict())
            if isinstance(exc, ConfigError):
                raise
            raise PipelineError(name, exc, mpath) from exc
        manifest.timings[name] = time.perf_counter() - t0
        manifest.completed.append(name)
    manifest.status = "complete"
    write_json(mpath, manifest.to_dict())
    manifest.root = out
    return manifest


def verify_manifest(manifest):
    """Reload every artifact; raise if one is missing or does not parse."""
    loaders = {
        ".grsl": load_model,
        ".json": lambda p: json.loads(Path(p).read_text()),
        ".csv": lambda p: Path(p).read_text(),
        ".npz": lambda p: dict(np.load(p)),
    }
    for name, rel in manifest.artifacts.items():
        path = manifest.path_of(name)
        if not path.exists():
            raise FileNotFoundError(f"artifact {name} missing at {path}")
        loaders[path.suffix](path)
    return True


# --- detection zoo ------------------------------------------------------------

def manifest_score(manifest):
    if "inversion" not in manifest.artifacts:
        raise ValueError("manifest has no inversion result")
    res = InversionResult.from_json(manifest.path_of("inversion").read_text())
    return inversion_score(res)


def zoo_auc(clean_scores, backdoored_scores, csv_path=None):
    """AUC of inversion scores separating backdoored from clean models.

    Both arguments map model ids to scores (or to manifests). Writes a
    (model_id, is_backdoored, score) CSV when ``csv_path`` is given.
    """
    def resolve(d):
        out = {}
        for k, v in d.items():
            if v is None:
                raise ValueError(f"model {k!r} has no score")
            out[k] = manifest_score(v) if isinstance(v, RunManifest) else float(v)
        return out

    clean, bad = resolve(clean_scores), resolve(backdoored_scores)
    if len(clean) < 2 or len(bad) < 2:
        raise ValueError("need at least two models per class")
    auc = epsilon4_auc(list(bad.values()), list(clean.values()))
    if csv_path is not None:
        rows = [(k, 1, s) for k, s in sorted(bad.items())] + [(k, 0, s) for k, s in sorted(clean.items())]
        write_csv(csv_path, ["model_id", "is_backdoored", "score"], rows)
    return auc


def zoo_members(base, n_clean, n_backdoored, root):
    """Configs for a desk zoo; each member gets a derived seed."""
    base = ExperimentConfig.from_dict(base).to_dict()
    members = []
    for label, attack, n in (("clean", "none", n_clean), ("backdoored", base["attack"], n_backdoored)):
        for i in range(n):
            cfg = copy.deepcopy(base)
            member_seed = int(np.random.SeedSequence([base["seed"], i, attack == "none"]).generate_state(1)[0])
            cfg["seed"] = member_seed
            cfg["train"]["seed"] = member_seed
            cfg["poison"]["seed"] = member_seed
            cfg["inversion"]["seed"] = member_seed
            cfg["attack"] = attack
            cfg["output_dir"] = str(Path(root) / f"{label}-{i:02d}")
            members.append((f"{label}-{i:02d}", label == "backdoored", cfg))
    return members


def run_zoo(members, workers=1):
    """Run zoo members, concurrently when ``workers > 1``; returns {model_id: manifest}."""
    if workers <= 1:
        return {mid: run_pipeline(cfg) for mid, _, cfg in members}
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(workers) as pool:
        done = pool.map(run_pipeline, [cfg for _, _, cfg in members])
        return {mid: m for (mid, _, _), m in zip(members, done)}


def report_bytes(manifest):
    return manifest.path_of("report").read_bytes()
