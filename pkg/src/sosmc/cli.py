"""Command-line front end: datagen, pretrain, tune, evaluate, check.

Configuration is a flat ``key = value`` text file (``#`` starts a comment);
command-line flags override file values, and ``--set key=value`` overrides
anything.  Every command writes a manifest (command, resolved options, seed
list, content hashes of its inputs, outputs) sufficient to re-run it without
the original shell line.  Outputs are bit-stable for a fixed seed: measured
timing is only written when ``timing = true``.

The environment variable ``SOSMC_OUTPUT_ROOT``, when set, anchors relative
output paths.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checks import CHECK_NAMES, report_dict, run_checks
from .diagnostics import (
    FreshEvalConfig,
    QuadratureGrid,
    expected_reward_quadrature,
    fresh_reward,
    kl_quadrature,
    tilted_optimum,
)
from .errors import ConfigurationError, DegenerateWeightsError, DivergenceError, WeightOverflowError
from .kernels import UlaKernel, ula_step
from .models import MlpEnergy, load_model, save_model
from .pretrain import (
    PcdConfig,
    dataset_from_csv,
    dataset_to_csv,
    generate_dataset,
    losses_to_csv,
    paper_scale_config,
    pcd_train,
)
from .rewards import reward_from_spec
from .rng import stream_rng
from .tuning import (
    OptimizerSpec,
    TuningConfig,
    TuningProblem,
    run_method,
    run_summary,
)

# -- option schema -------------------------------------------------------------

def _bool(raw):
    value = raw.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"cannot parse boolean from {raw!r}")


def _opt_float(raw):
    return None if raw.strip() == "" else float(raw)


def _floats(raw):
    return tuple(float(p) for p in raw.split(",") if p.strip() != "")


def _float_pairs(raw):
    return tuple(_floats(group) for group in raw.split(";") if group.strip() != "")


def _ints(raw):
    return tuple(int(p) for p in raw.split(",") if p.strip() != "")


# key -> (coercion, default); None default means "required when used"
TUNE_SCHEMA = {
    "method": (str, "sosmc"),
    "objective": (str, "reverse_kl"),
    "model": (str, None),
    "frozen_model": (str, ""),
    "reference_model": (str, ""),
    "reward": (str, "lower"),
    "reward_center": (_floats, (2.0, 2.0)),
    "reward_tau": (float, 1.0),
    "reward_lambda": (float, 0.1),
    "reward_centers": (_float_pairs, ((-2.0, 2.0), (2.0, 2.0), (2.0, -2.0))),
    "beta_kl": (float, 0.25),
    "n_particles": (int, 2000),
    "n_iterations": (int, 1000),
    "k_inner": (int, 1),
    "gamma": (float, 5e-3),
    "sigma_noise": (float, 1.0),
    "optimizer": (str, "adam"),
    "learning_rate": (float, 2e-4),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_epsilon": (float, 1e-8),
    "grad_clip_norm": (_opt_float, None),
    "tau_resample": (float, 0.9),
    "adapt_step_size": (_bool, False),
    "tau_adapt": (float, 0.95),
    "adapt_factor": (float, 1.1),
    "reference_batch_size": (int, 5000),
    "eval_every": (int, 0),
    "eval_chains": (int, 50),
    "eval_burn_in": (int, 2000),
    "eval_steps": (int, 2000),
    "eval_gamma": (_opt_float, None),
    "kl_grid_points": (int, 256),
    "kl_box_halfwidth": (float, 6.0),
    "init": (str, ""),
    "init_warmup_steps": (int, 2000),
    "init_box_halfwidth": (float, 6.0),
    "seeds": (_ints, (0,)),
    "outdir": (str, "runs/tune"),
    "timing": (_bool, False),
    "wall_clock_budget_s": (_opt_float, None),
}


def parse_kv_file(path) -> dict:
    """Read a flat ``key = value`` document; ``#`` comments, blank lines ignored."""
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def resolve_options(schema, file_entries, overrides) -> dict:
    for key in file_entries:
        if key not in schema:
            raise ConfigurationError(f"unknown config key {key!r}")
    options = {}
    for key, (coerce, default) in schema.items():
        if key in overrides and overrides[key] is not None:
            raw = overrides[key]
            options[key] = coerce(raw) if isinstance(raw, str) else raw
        elif key in file_entries:
            options[key] = coerce(file_entries[key])
        else:
            options[key] = default
    return options


# -- output plumbing -----------------------------------------------------------

def _resolve_out(path) -> Path:
    path = Path(path)
    root = os.environ.get("SOSMC_OUTPUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _write_manifest(directory: Path, doc: dict) -> Path:
    for out in doc.get("outputs", []):
        if not Path(out).exists():
            raise RuntimeError(f"manifest refers to a missing output: {out}")
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# -- reward / problem construction ----------------------------------------------

def build_reward(options):
    name = options["reward"]
    if name in ("left", "right", "lower", "upper"):
        return reward_from_spec(name)
    if name == "hard":
        return reward_from_spec("hard", center=options["reward_center"], tau=options["reward_tau"])
    if name == "smooth":
        return reward_from_spec("smooth", center=options["reward_center"],
                                tau=options["reward_tau"], lam=options["reward_lambda"])
    if name == "multi":
        return reward_from_spec("multi", centers=options["reward_centers"], tau=options["reward_tau"])
    raise ConfigurationError(f"unknown reward {name!r}")


def make_warmup_sampler(model, gamma, sigma_noise, n_steps, halfwidth):
    """Initial particles for models without an exact sampler: a short
    fixed-parameter Langevin run from uniform noise on the box."""
    kernel = UlaKernel(gamma, sigma_noise)

    def init_sampler(rng, n):
        states = rng.uniform(-halfwidth, halfwidth, size=(n, model.dim))
        for _ in range(n_steps):
            _, grad = model.energy_and_grad_x_fast(states)
            states = ula_step(states, grad, kernel, rng.standard_normal(states.shape))
        return states

    return init_sampler


def build_problem(options) -> TuningProblem:
    if options["model"] is None:
        raise ConfigurationError("tune needs a model file (config key 'model')")
    model = load_model(options["model"])
    objective = options["objective"]

    reward = build_reward(options) if objective != "generic" else None
    frozen_model = None
    reference_model = None
    if objective == "reverse_kl":
        frozen_path = options["frozen_model"] or options["model"]
        frozen_model = load_model(frozen_path)
    elif objective == "forward_kl":
        if not options["reference_model"]:
            raise ConfigurationError("forward_kl needs config key 'reference_model'")
        reference_model = load_model(options["reference_model"])
    elif objective == "generic":
        raise ConfigurationError("the generic objective is library-only; use forward_kl or reverse_kl")

    init_mode = options["init"] or ("warmup" if isinstance(model, MlpEnergy) else "model")
    if init_mode == "model":
        init_sampler = None
    elif init_mode == "warmup":
        init_sampler = make_warmup_sampler(
            model, options["gamma"], options["sigma_noise"],
            options["init_warmup_steps"], options["init_box_halfwidth"],
        )
    else:
        raise ConfigurationError(f"unknown init mode {init_mode!r}")

    return TuningProblem(
        model=model, reward=reward, frozen_model=frozen_model,
        reference_model=reference_model, init_sampler=init_sampler,
    )


def build_config(options, seed) -> TuningConfig:
    return TuningConfig(
        objective=options["objective"],
        n_particles=options["n_particles"],
        n_iterations=options["n_iterations"],
        seed=seed,
        gamma=options["gamma"],
        sigma_noise=options["sigma_noise"],
        k_inner=options["k_inner"],
        beta_kl=options["beta_kl"],
        optimizer=OptimizerSpec(
            method=options["optimizer"],
            learning_rate=options["learning_rate"],
            beta1=options["adam_beta1"],
            beta2=options["adam_beta2"],
            epsilon=options["adam_epsilon"],
            grad_clip_norm=options["grad_clip_norm"],
        ),
        tau_resample=options["tau_resample"],
        adapt_step_size=options["adapt_step_size"],
        tau_adapt=options["tau_adapt"],
        adapt_factor=options["adapt_factor"],
        reference_batch_size=options["reference_batch_size"],
        eval_every=options["eval_every"],
        fresh_eval=FreshEvalConfig(
            n_chains=options["eval_chains"],
            burn_in=options["eval_burn_in"],
            n_steps=options["eval_steps"],
            init_low=-options["init_box_halfwidth"],
            init_high=options["init_box_halfwidth"],
        ),
        eval_gamma=options["eval_gamma"],
        kl_grid_points=options["kl_grid_points"],
        kl_box_halfwidth=options["kl_box_halfwidth"],
        wall_clock_budget_s=options["wall_clock_budget_s"],
    )


# -- commands -------------------------------------------------------------------

def cmd_datagen(args) -> int:
    if args.n < 1:
        raise ConfigurationError("--n must be positive")
    dataset = generate_dataset(args.kind, args.n, args.seed)
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset_to_csv(dataset, out)
    manifest = {
        "command": "datagen",
        "options": {"kind": args.kind, "n": args.n, "seed": args.seed},
        "seeds": [args.seed],
        "input_hashes": {},
        "outputs": [str(out)],
        "output_hashes": {str(out): _sha256(out)},
    }
    _write_manifest(out.parent, manifest)
    print(f"wrote {out} ({args.n} rows)")
    return 0


def cmd_pretrain(args) -> int:
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise ConfigurationError(f"dataset file not found: {dataset_path}")
    dataset = dataset_from_csv(dataset_path)

    if args.paper_scale:
        config = paper_scale_config()
        width = 128
    else:
        config = PcdConfig(n_steps=None if args.epochs is not None else args.steps,
                           epochs=args.epochs)
        width = args.width
    model = MlpEnergy.initialize(
        input_dim=dataset.samples.shape[1], hidden_width=width, n_hidden=4,
        rng=stream_rng(args.seed, "model_init"),
    )
    model, losses, _ = pcd_train(dataset, model, config, seed=args.seed)

    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    outputs = [str(out)]
    if args.losses:
        losses_path = _resolve_out(args.losses)
        losses_path.parent.mkdir(parents=True, exist_ok=True)
        losses_to_csv(losses, losses_path)
        outputs.append(str(losses_path))
    manifest = {
        "command": "pretrain",
        "options": {
            "dataset": str(dataset_path), "seed": args.seed, "paper_scale": args.paper_scale,
            "hidden_width": width, "buffer_size": config.buffer_size,
            "batch_size": config.batch_size, "reinjection_fraction": config.reinjection_fraction,
            "inner_steps": config.inner_steps, "gamma": config.gamma,
            "clamp": [config.clamp_min, config.clamp_max],
            "lambda_energy": config.lambda_energy, "lambda_gradient": config.lambda_gradient,
            "learning_rate": config.learning_rate, "adam_beta1": config.adam_beta1,
            "grad_clip_norm": config.grad_clip_norm,
            "n_steps": config.n_steps, "epochs": config.epochs,
        },
        "seeds": [args.seed],
        "input_hashes": {str(dataset_path): _sha256(dataset_path)},
        "outputs": outputs,
    }
    _write_manifest(out.parent, manifest)
    print(f"wrote {out}")
    return 0


def cmd_tune(args) -> int:
    file_entries = parse_kv_file(args.config) if args.config else {}
    overrides = {
        "method": args.method,
        "objective": args.objective,
        "beta_kl": args.beta,
        "model": args.model,
        "outdir": args.outdir,
        "n_particles": args.n_particles,
        "n_iterations": args.iterations,
        "eval_every": args.eval_every,
        "timing": "true" if args.timing else None,
    }
    if args.seeds:
        overrides["seeds"] = args.seeds
    for item in args.set or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    options = resolve_options(TUNE_SCHEMA, file_entries, overrides)

    problem = build_problem(options)
    outdir = _resolve_out(options["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)

    outputs = []
    for seed in options["seeds"]:
        config = build_config(options, seed)
        trace_path = outdir / f"trace_seed{seed}.csv"
        try:
            theta, trace = run_method(options["method"], problem, config)
        except (DegenerateWeightsError, DivergenceError, WeightOverflowError) as exc:
            partial = getattr(exc, "trace", None)
            if partial is not None:
                failed_path = outdir / f"trace_seed{seed}.failed.csv"
                partial.to_csv(failed_path, include_timing=options["timing"])
                print(f"run aborted ({exc}); partial trace: {failed_path}", file=sys.stderr)
            else:
                print(f"run aborted: {exc}", file=sys.stderr)
            return 1
        trace.to_csv(trace_path, include_timing=options["timing"])
        summary = run_summary(options["method"], config, theta, trace,
                              include_timing=options["timing"])
        summary_path = outdir / f"summary_seed{seed}.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        model_path = outdir / f"model_seed{seed}.json"
        save_model(problem.model.with_theta(theta), model_path)
        outputs.extend([str(trace_path), str(summary_path), str(model_path)])
        print(f"seed {seed}: final reward "
              f"{trace.particle_reward[-1] if len(trace) else float('nan'):.4f} -> {trace_path}")

    input_hashes = {}
    for key in ("model", "frozen_model", "reference_model"):
        if options[key]:
            input_hashes[options[key]] = _sha256(options[key])
    if args.config:
        input_hashes[args.config] = _sha256(args.config)
    manifest = {
        "command": "tune",
        "config_path": args.config or "",
        "options": _jsonable(options),
        "seeds": list(options["seeds"]),
        "input_hashes": input_hashes,
        "outputs": outputs,
    }
    _write_manifest(outdir, manifest)
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    reward = reward_from_spec(args.reward)
    kernel = UlaKernel(args.gamma, args.sigma_noise)
    eval_config = FreshEvalConfig(
        n_chains=args.chains, burn_in=args.burn_in, n_steps=args.steps,
        init_low=-args.box, init_high=args.box,
    )
    report = {
        "model": args.model,
        "reward": args.reward,
        "seed": args.seed,
        "fresh_reward": fresh_reward(model, reward, eval_config, kernel, seed=args.seed),
    }
    if args.reference:
        reference = load_model(args.reference)
        grid = QuadratureGrid(tuple((-args.box, args.box) for _ in range(model.dim)),
                              args.grid_points)
        reference_mass = expected_reward_quadrature(reference, reward, grid)
        report.update({
            "reference": args.reference,
            "kl_quadrature": kl_quadrature(model, reference, grid),
            "reference_reward_mass": reference_mass,
            "model_reward_mass": expected_reward_quadrature(model, reward, grid),
            "tilted_optimum": tilted_optimum(reference_mass, args.beta),
            "beta_kl": args.beta,
        })
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    input_hashes = {args.model: _sha256(args.model)}
    if args.reference:
        input_hashes[args.reference] = _sha256(args.reference)
    options = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    _write_manifest(out.parent, {
        "command": "evaluate",
        "options": _jsonable(options),
        "seeds": [args.seed],
        "input_hashes": input_hashes,
        "outputs": [str(out)],
    })
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_check(args) -> int:
    only = args.only.split(",") if args.only else None
    results = run_checks(only)
    report = report_dict(results)
    for entry in report["checks"]:
        status = "PASS" if entry["passed"] else "FAIL"
        print(f"{status} {entry['name']}: {entry['measured']}")
    if args.out:
        out = _resolve_out(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"report: {out}")
    return 0 if report["all_passed"] else 1


# -- parser ----------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosmc",
        description="Sequential-Monte-Carlo stochastic optimisation: "
                    "datasets, pretraining, tuning, evaluation and self-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a standardised 2-d dataset CSV")
    p.add_argument("--kind", required=True, choices=["two_moons", "circles", "blobs"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data/dataset.csv")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("pretrain", help="contrastive-pretrain an energy network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default="models/pretrained.json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="width 128, 500 epochs, full-size constants")
    p.add_argument("--losses", default="", help="optional training-loss CSV path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("tune", help="run a tuning method from a config file")
    p.add_argument("--config", default="", help="flat key = value config file")
    p.add_argument("--method", choices=["sosmc", "impdiff", "soul"], default=None)
    p.add_argument("--objective", choices=["forward_kl", "reverse_kl"], default=None)
    p.add_argument("--beta", type=float, default=None, help="divergence penalty strength")
    p.add_argument("--model", default=None, help="model JSON path (overrides config)")
    p.add_argument("--outdir", default=None)
    p.add_argument("--n-particles", dest="n_particles", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--seeds", help="comma separated, e.g. 1,2,3")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock times in trace and summary")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="fresh-reward and divergence report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--reference", default="", help="reference model for divergence/tilt")
    p.add_argument("--reward", default="lower")
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--gamma", type=float, default=5e-3)
    p.add_argument("--sigma-noise", dest="sigma_noise", type=float, default=1.0)
    p.add_argument("--chains", type=int, default=50)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=2000)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--box", type=float, default=6.0)
    p.add_argument("--grid-points", dest="grid_points", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/evaluate.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("check", help="run the oracle/identity verification suite")
    p.add_argument("--only", default="", help=f"comma separated from: {', '.join(CHECK_NAMES)}")
    p.add_argument("--out", default="", help="optional JSON report path")
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
