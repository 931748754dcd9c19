"""``grasplab`` command line.

Exit codes: 0 success, 2 configuration/validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from grasplab import __version__, theory
from grasplab.io import dumps_json, write_csv, write_json
from grasplab.nn import load_model, save_model, sgd_train, build_model
from grasplab.poisoning import Trigger, amend
from grasplab.pipeline import (
    ConfigError,
    ExperimentConfig,
    PipelineError,
    RunManifest,
    build_trigger,
    inversion_inputs,
    load_datasets,
    poison_dataset,
    run_pipeline,
    save_poisoned,
    zoo_auc,
)

# flag -> dotted config path
FLAGS = {
    "--dataset": ("dataset.kind", str),
    "--data-root": ("dataset.root", str),
    "--arch": ("arch", str),
    "--seed": ("seed", int),
    "--out": ("output_dir", str),
    "--epochs": ("train.epochs", int),
    "--batch-size": ("train.batch_size", int),
    "--lr": ("train.learning_rate", float),
    "--momentum": ("train.momentum", float),
    "--loss": ("train.loss_kind", str),
    "--train-seed": ("train.seed", int),
    "--trigger-file": ("trigger.path", str),
    "--trigger-size": ("trigger.size", int),
    "--corner": ("trigger.corner", str),
    "--margin": ("trigger.margin", int),
    "--attack": ("attack", str),
    "--preset": ("poison.preset", str),
    "--alpha": ("poison.alpha", float),
    "--beta": ("poison.beta", float),
    "--noise-scale": ("poison.c", float),
    "--noise-type": ("poison.noise_type", str),
    "--target": ("poison.target_label", int),
    "--poison-seed": ("poison.seed", int),
    "--lam": ("inversion.lam", float),
    "--restarts": ("inversion.restarts", int),
    "--steps": ("inversion.steps", int),
    "--step-size": ("inversion.step_size", float),
    "--optimizer": ("inversion.optimizer_kind", str),
    "--r-max": ("robustness.r_max", float),
    "--directions": ("robustness.directions", int),
    "--bisect-tol": ("robustness.bisect_tol", float),
    "--n-samples": ("robustness.n_samples", int),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="full ExperimentConfig JSON")
    for flag, (dest, typ) in FLAGS.items():
        p.add_argument(flag, dest="cfg:" + dest, type=typ, default=None)


def _config(args):
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    for key, value in vars(args).items():
        if not key.startswith("cfg:") or value is None:
            continue
        node = base
        *parents, leaf = key[4:].split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
        if key == "cfg:trigger.path":
            node["source"] = "file"
    return ExperimentConfig.from_dict(base)


def _out(cfg):
    out = Path(cfg.raw["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    cfg = _config(args)
    train, test = load_datasets(cfg.raw["dataset"])
    x, y = train.x, train.y
    if args.poisoned:
        with np.load(args.poisoned) as z:
            x, y = z["x"], z["y"]
    m0 = build_model(cfg.raw["arch"], train.sample_shape, train.num_classes, cfg.raw["seed"])
    model = sgd_train(m0, x, y, cfg.train_config())
    path = Path(args.model_out) if args.model_out else _out(cfg) / "model.grsl"
    save_model(model, path)
    from grasplab.metrics import clean_accuracy
    print(f"model={path} clean_accuracy={clean_accuracy(model, test.x, test.y):.9g}")


def cmd_poison(args):
    cfg = _config(args)
    train, _ = load_datasets(cfg.raw["dataset"])
    trig = build_trigger(cfg.raw["trigger"], train.sample_shape)
    if cfg.raw["attack"] == "none":
        raise ConfigError("poison needs --attack badnet or grasp")
    pd = poison_dataset(train, trig, cfg.raw["attack"], cfg.poison_plan())
    out = _out(cfg)
    save_poisoned(out / "poisoned.npz", pd)
    trig.save(out / "trigger.json")
    print(dumps_json(pd.counts()), end="")


def cmd_invert(args):
    from grasplab.inversion import invert
    cfg = _config(args)
    model = load_model(args.model)
    train, test = load_datasets(cfg.raw["dataset"])
    xs = inversion_inputs(train, cfg.raw["inversion"]["clean_fraction"], cfg.raw["seed"])
    res = invert(model, xs, cfg.poison_plan().target_label, cfg.inversion_config(), holdout=(test.x, test.y))
    out = _out(cfg)
    (out / "inversion.json").write_text(res.to_json())
    res.trigger.save(out / "recovered_trigger.json")
    print(f"l0={res.l0} l1={res.l1:.9g} asr={res.asr:.9g} restart={res.chosen_restart}")


def cmd_robustness(args):
    from grasplab.robustness import mean_local_lipschitz, overall_robustness
    cfg = _config(args)
    model = load_model(args.model)
    _, test = load_datasets(cfg.raw["dataset"])
    trig = build_trigger(cfg.raw["trigger"], test.sample_shape)
    y_t = cfg.poison_plan().target_label
    keep = np.flatnonzero(test.y != y_t)[: cfg.raw["robustness"]["n_samples"]]
    rep = overall_robustness(model, test.x[keep], test.y[keep], trig, y_t, cfg.robustness_query())
    lp = cfg.raw["lipschitz"]
    pts = amend(test.x[keep[: lp["n_points"]]], trig)
    lip = mean_local_lipschitz(model, pts, lp["radius"], lp["n_pairs"], seed=cfg.raw["seed"], output=lp["output"])
    out = _out(cfg)
    rep.write_csv(out / "robustness.csv")
    write_json(out / "robustness.json", {**rep.to_dict(), "lipschitz": lip})
    print(f"r_t={rep.r_t} r_b={rep.r_b} ratio={rep.ratio} lipschitz={lip:.9g}")


def cmd_metrics(args):
    from grasplab.metrics import MetricsReport, asr, clean_accuracy, epsilon1, epsilon2_jaccard, epsilon3, unlearn
    cfg = _config(args)
    model = load_model(args.model)
    train, test = load_datasets(cfg.raw["dataset"])
    trig = build_trigger(cfg.raw["trigger"], train.sample_shape)
    recovered = Trigger.load(args.recovered)
    y_t = cfg.poison_plan().target_label
    before = asr(model, test.x, test.y, trig, y_t)
    um = unlearn(model, recovered, train.x, train.y, cfg.raw["seed"])
    after = asr(um, test.x, test.y, trig, y_t)
    mb = (recovered.mask >= cfg.raw["inversion"]["mask_threshold"]).astype(np.float32)
    e3 = None
    if args.clean_model:
        e3 = epsilon3(load_model(args.clean_model), recovered, y_t, test.x, test.y)
    rep = MetricsReport(before, after, epsilon1(before, after),
                        epsilon2_jaccard(mb, trig.mask), e3,
                        clean_acc_before=clean_accuracy(model, test.x, test.y),
                        clean_acc_after=clean_accuracy(um, test.x, test.y))
    out = _out(cfg)
    write_json(out / "metrics.json", rep.to_dict())
    print(dumps_json(rep.to_dict()), end="")


def cmd_theory(args):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.check == "pwl":
        widths = [float(w) for w in args.widths.split(",")]
        rows = []
        for w in widths:
            spec = theory.random_pwl_spec(w, args.seed)
            rows.append((w, theory.simulate_pwl_gd(spec, args.n_inits, args.steps, args.step_size, args.seed)))
        write_csv(out, ["hull_width", "probability"], rows)
    elif args.check == "pl":
        rng = np.random.default_rng(args.seed)
        spec = theory.QuadraticSpec(theory.random_spd(args.dim, rng), rng.standard_normal(args.dim))
        rep = theory.pl_convergence_check(spec, rng.standard_normal(args.dim), args.steps)
        write_csv(out, ["k", "gap", "bound"], [(r["k"], r["gap"], r["bound"]) for r in rep.records])
        if not rep.passed:
            print(f"bound violated at step {rep.first_failure}", file=sys.stderr)
            return 1
    elif args.check == "ratio":
        rows = [(i, theory.random_ratio_instance(args.seed + i).last_layer_ratio) for i in range(args.instances)]
        write_csv(out, ["instance_id", "ratio"], rows)
    elif args.check == "bound":
        clamped, raw = theory.thm2_bound(args.b1, args.b2, 0.0, 1.0, args.n)
        write_csv(out, ["n", "bound", "raw"], [(args.n, clamped, raw)])
    print(f"wrote {out}")
    return 0


def cmd_zoo_auc(args):
    def scores(paths):
        return {Path(p).parent.name or p: RunManifest.load(p) for p in paths}

    auc = zoo_auc(scores(args.clean), scores(args.backdoored), csv_path=args.out)
    print(f"auc={auc:.9g}")


def cmd_report(args):
    cfg = _config(args)
    manifest = run_pipeline(cfg)
    print(f"manifest={manifest.root / 'manifest.json'} status={manifest.status}")


def build_parser():
    p = _Parser(prog="grasplab", description="Desk-scale backdoor poisoning and inversion experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model on clean or poisoned data")
    _add_config_flags(s)
    s.add_argument("--poisoned", help="poisoned .npz from the poison subcommand")
    s.add_argument("--model-out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("poison", help="write a BadNet or GRASP poisoned training set")
    _add_config_flags(s)
    s.set_defaults(func=cmd_poison)

    for name, func, help_ in (("invert", cmd_invert, "recover a trigger from a model"),
                              ("robustness", cmd_robustness, "trigger/obstructed robustness and Lipschitz")):
        s = sub.add_parser(name, help=help_)
        _add_config_flags(s)
        s.add_argument("--model", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("metrics", help="unlearning and inversion-effectiveness metrics")
    _add_config_flags(s)
    s.add_argument("--model", required=True)
    s.add_argument("--recovered", required=True, help="recovered trigger JSON")
    s.add_argument("--clean-model")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("theory", help="numerical checks of the convergence and gradient claims")
    s.add_argument("check", choices=("pwl", "pl", "ratio", "bound"))
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--widths", default="0.05,0.1,0.2,0.4")
    s.add_argument("--n-inits", type=int, default=1000)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--step-size", type=float, default=0.001)
    s.add_argument("--dim", type=int, default=5)
    s.add_argument("--instances", type=int, default=50)
    s.add_argument("--b1", type=float, default=2.0)
    s.add_argument("--b2", type=float, default=1.5)
    s.add_argument("--n", type=int, default=1)
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("zoo-auc", help="AUC of inversion scores over clean and backdoored runs")
    s.add_argument("--clean", nargs="+", required=True, help="manifest.json of clean runs")
    s.add_argument("--backdoored", nargs="+", required=True, help="manifest.json of backdoored runs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_zoo_auc)

    s = sub.add_parser("report", help="run the full pipeline and write all reports")
    _add_config_flags(s)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except PipelineError as exc:
        print(f"error: {exc} (manifest: {exc.manifest_path})", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
