from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lipode.certify import (
    bound_bartlett,
    bound_neural_ode,
    bound_param_ode,
    bound_resnet,
    weight_class_from_model,
)
from lipode.config import Defaults, ensure_dirs, load_defaults
from lipode.errors import ConfigurationError, LipodeError
from lipode.experiments import (
    PROFILES,
    ExperimentConfig,
    fig1_config,
    fig2_config,
    get_profile,
    load_experiment_data,
    run_fig1,
    run_fig2,
    write_csv,
    write_manifest,
)
from lipode.lipfun import (
    build_product_cover,
    cover_log_bound,
    cover_to_text,
    nearest_product_member,
    random_param_function,
    within,
)
from lipode.numerics import ACTIVATIONS, get_activation
from lipode.plotting import render_plot
from lipode.resnet import build_model, load_weights, save_weights
from lipode.spec_store import atomic_write, load_spec
from lipode.suites import SUITE_NAMES, run_suite
from lipode.training import RECORD_FIELDS, train
from lipode.types import PENALTY_KINDS, LogFn, TrainConfig

BOUNDS = {
    "param-ode": "param_ode",
    "neural-ode": "neural_ode",
    "resnet": "resnet",
    "bartlett": "resnet",
}


def make_log(log_dir: Optional[Path]) -> LogFn:
    """Timestamped printer that also appends to ``<log_dir>/lipode.log``."""
    log_file = log_dir / "lipode.log" if log_dir else None

    def log(msg: str) -> None:
        line = f"[{datetime.now().strftime('%H:%M:%S')}] {msg}"
        print(line, flush=True)
        if log_file is not None:
            with log_file.open("a", encoding="utf-8") as f:
                f.write(line + "\n")

    return log


def _lambda(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if math.isnan(value) or value < 0:
        raise argparse.ArgumentTypeError(f"lambda must be >= 0 or inf: {text!r}")
    return value


def _lambda_list(text: str) -> Tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("empty lambda grid")
    return tuple(_lambda(p) for p in parts)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return value


def _add_run_flags(p: argparse.ArgumentParser, d: Defaults) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), default=d.profile)
    p.add_argument("--data-dir", default=str(d.data_dir))
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--d", type=_positive_int, help="network width")
    p.add_argument("--L", type=_positive_int, help="network depth")
    p.add_argument("--train-size", type=_positive_int)
    p.add_argument("--test-size", type=_positive_int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--checkpoint", action="store_true", default=False)


def build_parser(d: Defaults) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipode",
        description="Parameterized ODEs, deep residual networks and their "
        "generalization certificates",
    )
    parser.add_argument("--verbose", action="store_true", default=False)
    parser.add_argument("--logs", default=str(d.log_dir))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="evaluate a generalization bound")
    p.add_argument("--bound", choices=sorted(BOUNDS), required=True)
    p.add_argument("--spec", required=True, help="class spec JSON file")
    p.add_argument("--n", type=float, required=True, help="sample size")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--weights", help="ODRN weight file (bartlett only)")
    p.add_argument("--gamma", type=float, default=1.0, help="margin (bartlett only)")
    p.add_argument("--output", help="also write the report JSON here")

    p = sub.add_parser("cover", help="build and verify the epsilon-net")
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--m", type=int, choices=(1, 2), default=1)
    p.add_argument("--verify", type=int, default=0, metavar="S")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--output", help="write the cover in text form here")
    p.add_argument("--limit", type=int, default=1000, help="members listed")

    p = sub.add_parser("verify-props", help="run a property suite")
    p.add_argument("--suite", choices=SUITE_NAMES, required=True)
    p.add_argument("--samples", type=_positive_int)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--output", help="write the suite result JSON here")

    p = sub.add_parser("train", help="train one network and certify it")
    _add_run_flags(p, d)
    p.add_argument("--output", default=str(d.output_dir / "train"))
    p.add_argument("--lam", type=_lambda, default=0.0)
    p.add_argument("--penalty-kind", choices=PENALTY_KINDS, default="frob_l2")
    p.add_argument("--frozen-projections", action="store_true", default=False)
    p.add_argument("--init", choices=("smooth", "iid"), default="smooth")
    p.add_argument("--activation", choices=sorted(ACTIVATIONS), default="relu")
    p.add_argument("--delta", type=float, default=0.1)

    p = sub.add_parser("fig1", help="weight Lipschitz constant vs gap")
    _add_run_flags(p, d)
    p.add_argument("--output", default=str(d.output_dir / "fig1"))
    p.add_argument("--runs", type=_positive_int)
    p.add_argument("--jobs", type=_positive_int, default=d.jobs)

    p = sub.add_parser("fig2", help="gap vs penalty factor")
    _add_run_flags(p, d)
    p.add_argument("--output", default=str(d.output_dir / "fig2"))
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--lambdas", type=_lambda_list)
    p.add_argument("--penalty-kind", choices=PENALTY_KINDS, default="frob_l2")
    p.add_argument("--jobs", type=_positive_int, default=d.jobs)

    p = sub.add_parser("plot", help="render an experiment CSV to SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--output")
    return parser


def cmd_certify(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    spec = load_spec(Path(args.spec), kind=BOUNDS[args.bound])
    if args.bound == "param-ode":
        report = bound_param_ode(spec, args.n, args.delta)
    elif args.bound == "neural-ode":
        report = bound_neural_ode(spec, args.n, args.delta)
    elif args.bound == "resnet":
        report = bound_resnet(spec, args.n, args.delta)
    else:
        source = spec
        if args.weights:
            source = load_weights(Path(args.weights))
        report = bound_bartlett(
            source, spec.r_x, args.gamma, args.n, args.delta, k_sigma=spec.k_sigma
        )

    text = report.to_json()
    print(text)
    if args.output:
        out = Path(args.output)
        atomic_write(out, text + "\n")
        write_manifest(
            out.parent, "certify", vars(args), argv, name=f"{out.stem}.manifest.json"
        )
    if not report.valid:
        log(f"precondition failed: {', '.join(report.failing())}")
        return 1
    return 0


def cmd_cover(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    product = build_product_cover(args.m, args.R, args.K, args.eps)
    size = len(product)
    bound = cover_log_bound(args.m, args.R, args.K, args.eps)
    print(
        f"cover: {size} members, log size {math.log(size):.6f} "
        f"(bound {bound:.6f})"
    )

    status = 0
    if args.verify > 0:
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(args.verify):
            f = random_param_function(args.m, args.R, args.K, rng)
            _, dist = nearest_product_member(product, f)
            worst = max(worst, dist)
        ok = within(worst, args.eps)
        print(
            f"verify: {args.verify} random functions, max distance {worst:.6f} "
            f"({'within' if ok else 'EXCEEDS'} eps = {args.eps})"
        )
        status = 0 if ok else 1

    if args.output:
        out = Path(args.output)
        atomic_write(out, cover_to_text(product.coordinates[0], args.limit))
        write_manifest(
            out.parent, "cover", vars(args), argv, name=f"{out.stem}.manifest.json"
        )
        log(f"Wrote {out}")
    return status


def cmd_verify(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    res = run_suite(args.suite, args.samples, args.seed, log=log)
    payload = res.to_dict()
    text = json.dumps(payload, indent=2, default=float)
    print(text)
    if args.output:
        out = Path(args.output)
        atomic_write(out, text + "\n")
        write_manifest(
            out.parent,
            "verify-props",
            vars(args),
            argv,
            name=f"{out.stem}.manifest.json",
        )
    return 0 if res.passed else 1


def _experiment_overrides(args: argparse.Namespace) -> Dict[str, object]:
    names = (
        "epochs",
        "d",
        "L",
        "train_size",
        "test_size",
        "learning_rate",
        "runs",
        "repeats",
        "lambdas",
    )
    out: Dict[str, object] = {
        "data_dir": Path(args.data_dir) if args.data_dir else None,
        "seed": args.seed,
        "checkpoint": args.checkpoint,
    }
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    if hasattr(args, "jobs"):
        out["jobs"] = args.jobs
    return out


def cmd_train(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    out = Path(args.output).resolve()
    ensure_dirs(out)
    p = get_profile(args.profile)
    base = ExperimentConfig(
        d=p.d,
        L=p.L,
        epochs=p.fig1_epochs,
        train_size=p.train_size,
        test_size=p.test_size,
        output_dir=out,
        batch_size=p.batch_size,
        learning_rate=p.learning_rate,
        bandwidth=p.bandwidth,
        profile=p.name,
    )
    cfg = replace(base, **_experiment_overrides(args))
    train_set, test_set = load_experiment_data(cfg, log)

    frozen = args.frozen_projections
    model = build_model(
        train_set.dim,
        cfg.d,
        train_set.classes,
        cfg.L,
        activation=get_activation(args.activation),
        init=args.init,
        bandwidth=cfg.bandwidth,
        seed=cfg.seed,
        train_projections=not frozen,
        weight_tied=math.isinf(args.lam),
    )
    tcfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        lam=args.lam,
        penalty_kind=args.penalty_kind,
        train_projections=not frozen,
        seed=cfg.seed,
        checkpoint_dir=out / "checkpoints" if cfg.checkpoint else None,
    )
    write_manifest(out, "train", cfg, argv, extra={"train_config": vars(args)})
    model, record = train(model, train_set, tcfg, test=test_set, log=log)

    save_weights(model.core, out / "weights.odrn")
    write_csv(out / "record.csv", RECORD_FIELDS, record.rows())

    h0 = train_set.inputs @ model.input_proj.T
    r_x = max(float(np.linalg.norm(h0, axis=1).max()), 1e-12)
    spec, notes = weight_class_from_model(model, r_x=r_x, r_y=1.0)
    report = bound_resnet(spec, float(len(train_set)), args.delta)
    report = replace(report, notes=report.notes + notes)
    atomic_write(out / "certificate.json", report.to_json() + "\n")

    final = record.final
    log(
        f"Done: train {final.train_loss:.4f}, test {final.test_loss:.4f}, "
        f"gap {final.gap:+.4f}, weight Lipschitz {final.weight_lipschitz:.4e}"
    )
    log(f"Certificate total {report.total:.4f} (valid: {report.valid}) in {out}")
    return 0


def cmd_fig1(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    overrides = _experiment_overrides(args)
    cfg = fig1_config(args.profile, Path(args.output).resolve(), **overrides)
    res = run_fig1(cfg, argv=argv, log=log)
    print(res.message)
    return 0 if res.success else 1


def cmd_fig2(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    overrides = _experiment_overrides(args)
    overrides["penalty_kind"] = args.penalty_kind
    cfg = fig2_config(args.profile, Path(args.output).resolve(), **overrides)
    res = run_fig2(cfg, argv=argv, log=log)
    print(res.message)
    return 0 if res.success else 1


def cmd_plot(args: argparse.Namespace, log: LogFn, argv: Sequence[str]) -> int:
    svg = render_plot(Path(args.csv), Path(args.output) if args.output else None)
    name = f"{svg.stem}.manifest.json"
    write_manifest(svg.parent, "plot", vars(args), argv, name=name)
    log(f"Wrote {svg}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, LogFn, Sequence[str]], int]] = {
    "certify": cmd_certify,
    "cover": cmd_cover,
    "verify-props": cmd_verify,
    "train": cmd_train,
    "fig1": cmd_fig1,
    "fig2": cmd_fig2,
    "plot": cmd_plot,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; 0 success, 1 failed check or library error, 2 usage."""
    argv_list: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        d = load_defaults()
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    parser = build_parser(d)
    try:
        args = parser.parse_args(argv_list)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    log_dir = Path(args.logs).resolve() if args.logs else None
    if log_dir is not None:
        ensure_dirs(log_dir)
    log = make_log(log_dir)

    try:
        return COMMANDS[args.command](args, log, argv_list)
    except (LipodeError, OSError) as e:
        log(f"error: {type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> int:
    return dispatch()


if __name__ == "__main__":
    raise SystemExit(main())
