"""Command-line entry point: simulate | fit | optimize | scenario | diagnose.

Typical desk-scale session::

    pricefusion simulate --preset desk --seed 1 --out run/data
    pricefusion fit      --data run/data --out run/fit
    pricefusion optimize --data run/data --fit run/fit --out run/fit
    pricefusion scenario --data run/data --out run/scenarios
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

from . import __version__
from . import io, pipeline
from .config import PRESETS, RunConfig, preset
from .decision import build_decision_input, profit_curve, subscribers_from_history
from .inference import IdentifiabilityWarning, diagnostics_report, fit_model, format_summary, summarize
from .model import ModelVariant, ObservationSet
from .simulator import Population, PopulationSpec

logger = logging.getLogger("pricefusion")

RHAT_LIMIT = 1.05
SCENARIO_VARIANTS = (ModelVariant.NO_DEMOGRAPHICS, ModelVariant.MULTIPLICATIVE_KAPPA, ModelVariant.NO_HISTORY)


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Configuration resolution


def resolve_config(args, data_dir: Path | None = None) -> RunConfig:
    """preset -> data manifest -> --config -> --seed/--variant, later wins."""
    if args.preset is not None:
        cfg = preset(args.preset)
    elif data_dir is not None and (data_dir / "manifest.json").exists():
        cfg = RunConfig.from_json(io.read_json(data_dir / "manifest.json")["config"])
    else:
        cfg = preset("paper")
    if args.config is not None:
        cfg = RunConfig.load(args.config, base=cfg)
    if args.seed is not None:
        cfg = RunConfig.from_json({"seed": args.seed}, base=cfg)
    if getattr(args, "variant", None) is not None:
        cfg = RunConfig.from_json({"variant": args.variant}, base=cfg)
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CommandError(f"output directory {out} is not writable: {exc}") from None
    return out


def _manifest(command: str, cfg: RunConfig, **extra) -> dict:
    doc = {"command": command, "version": __version__, "config": cfg.to_json(), "seeds": cfg.seeds(),
           "true_parameters": cfg.truth.as_dict()}
    doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(cfg: RunConfig, out) -> pipeline.Simulation:
    out = _out_dir(out)
    sim = pipeline.simulate(cfg)
    state = sim.state
    io.write_history(out / "purchase_history.csv", state.history)
    io.write_conjoint(out / "conjoint.csv", sim.conjoint)
    io.write_ground_truth(out / "ground_truth.csv", sim.truth)
    io.write_json(out / "population.json", sim.population.spec.to_json())
    io.write_json(out / "manifest.json", _manifest(
        "simulate", cfg, decision_period=state.period, n_history=len(state.history),
        n_conjoint=len(sim.conjoint), n_subscribers=len(state.s_counter), truth_best_price=sim.truth.best_price))
    logger.info("simulated %d history rows, %d conjoint rows, %d subscribers at period %d",
                len(state.history), len(sim.conjoint), len(state.s_counter), state.period)
    return sim


def load_datasets(data_dir) -> tuple[ObservationSet, ObservationSet, dict]:
    data_dir = Path(data_dir)
    manifest = io.read_json(data_dir / "manifest.json")
    history = io.read_history(data_dir / "purchase_history.csv")
    period = manifest.get("decision_period", int(history.time.max()) + 1 if len(history) else 1)
    conjoint = io.read_conjoint(data_dir / "conjoint.csv", period)
    return history, conjoint, manifest


def cmd_fit(cfg: RunConfig, data_dir, out, use_conjoint: bool = True, allow_nonconverged: bool = False) -> int:
    out = _out_dir(out)
    history, conjoint, _ = load_datasets(data_dir)
    if not use_conjoint:
        conjoint = ObservationSet.empty()
    sampler = cfg.sampler_config()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", IdentifiabilityWarning)
        draws = fit_model(history, conjoint, cfg.variant, cfg.priors, sampler)
    for w in caught:
        logger.warning("%s", w.message)
        if not issubclass(w.category, IdentifiabilityWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    rows = summarize(draws, cfg.truth.as_dict())
    report = diagnostics_report(draws)
    io.write_draws(out / "draws.csv", draws, sampler.warmup, sampler.thinning)
    io.write_json(out / "summary.json", {"variant": cfg.variant.value, "parameters": rows})
    io.write_json(out / "diagnostics.json", report)
    io.write_json(out / "fit.json", _manifest(
        "fit", cfg, data=str(Path(data_dir)), use_conjoint=use_conjoint, variant=cfg.variant.value,
        post_warmup_iterations=draws.post_warmup_iterations,
        identifiability_warning=any(issubclass(w.category, IdentifiabilityWarning) for w in caught)))
    print(format_summary(rows))
    worst = report["max_rhat"]
    if not math.isnan(worst) and worst >= RHAT_LIMIT:
        msg = f"max R-hat {worst:.3f} >= {RHAT_LIMIT}; the chains have not converged"
        if not allow_nonconverged:
            logger.error("%s (pass --allow-nonconverged to accept)", msg)
            return 2
        logger.warning(msg)
    return 0


def cmd_optimize(cfg: RunConfig, data_dir, fit_dir, out) -> dict:
    out = _out_dir(out)
    fit_dir = Path(fit_dir)
    if not (fit_dir / "draws.csv").exists():
        raise CommandError(f"no draws found in {fit_dir}; run the fit command first")
    fit_meta = io.read_json(fit_dir / "fit.json") if (fit_dir / "fit.json").exists() else {}
    draws = io.read_draws(fit_dir / "draws.csv", {"variant": fit_meta.get("variant", cfg.variant.value)})
    history, _, _ = load_datasets(data_dir)
    spec_doc = io.read_json(Path(data_dir) / "population.json")
    pop = Population(PopulationSpec.from_json(spec_doc), cfg.truth.tau)
    d1_ids, d1_s = subscribers_from_history(history)
    inp = build_decision_input(pop, d1_ids, d1_s, n0=cfg.decision_n0, variable_cost=cfg.decision.variable_cost,
                               price_grid=cfg.decision.price_grid, seed=cfg.seeds()["decision"],
                               d1_effects=cfg.decision.d1_effects)
    curve = profit_curve(draws, inp)
    truth_path = Path(data_dir) / "ground_truth.csv"
    truth = io.read_ground_truth(truth_path) if truth_path.exists() else None
    io.write_profit_curve(out / "profit_curve.csv", curve, truth)
    modal = curve.at(curve.modal_price)
    result = {"modal_price": modal["price"], "probability": modal["p_optimal"],
              "mean_profit": modal["mean"], "lo95": modal["lo95"], "hi95": modal["hi95"],
              "n0": inp.n0, "n1": inp.n1, "draws": int(curve.samples.shape[0]),
              "d1_effects": inp.d1_effects, "variant": draws.meta.get("variant")}
    io.write_json(out / "optimal_price.json", result)
    print(f"modal optimal price {result['modal_price']:.2f} (p = {result['probability']:.3f}), "
          f"mean profit {result['mean_profit']:.1f} [{result['lo95']:.1f}, {result['hi95']:.1f}]")
    return result


def cmd_scenario(cfg: RunConfig, data_dir, out, allow_nonconverged: bool = True) -> int:
    out = _out_dir(out)
    status = 0
    for variant in SCENARIO_VARIANTS:
        sub = RunConfig.from_json({"variant": variant.value}, base=cfg)
        target = out / variant.value
        logger.info("scenario %s", variant.value)
        code = cmd_fit(sub, data_dir, target, allow_nonconverged=allow_nonconverged)
        status = max(status, code)
        cmd_optimize(sub, data_dir, target, target)
    return status


def cmd_diagnose(fit_dir) -> dict:
    fit_dir = Path(fit_dir)
    fit_meta = io.read_json(fit_dir / "fit.json") if (fit_dir / "fit.json").exists() else {}
    draws = io.read_draws(fit_dir / "draws.csv", fit_meta)
    truth = fit_meta.get("true_parameters")
    rows = summarize(draws, truth)
    print(format_summary(rows))
    if (fit_dir / "diagnostics.json").exists():
        report = io.read_json(fit_dir / "diagnostics.json")
        for c in report["chains"]:
            print(f"chain {c['chain']}: divergences {c['divergences']}, accept {c['mean_accept_stat']:.3f}, "
                  f"step {c['step_size']:.4f}, leapfrog {c['mean_leapfrog_steps']:.1f}")
        print(f"divergence rate {report['divergence_rate']:.4%}")
    worst = max((r["rhat"] for r in rows if not math.isnan(r["rhat"])), default=math.nan)
    print(f"max R-hat {worst:.4f}")
    return {"rows": rows, "max_rhat": worst}


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration overlaid on the preset")
    common.add_argument("--preset", choices=PRESETS, help="base configuration (default: paper, or the data manifest)")
    common.add_argument("--seed", type=int, help="top-level seed; every stage seed derives from it")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pricefusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate market history, conjoint study and ground truth")
    p.set_defaults(out=Path("data"))

    p = sub.add_parser("fit", parents=[common], help="sample the posterior")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=[v.value for v in ModelVariant])
    p.add_argument("--no-conjoint", action="store_true", help="fit the purchase history alone")
    p.add_argument("--allow-nonconverged", action="store_true")

    p = sub.add_parser("optimize", parents=[common], help="profit curve and optimal-price distribution")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fit", type=Path, help="fit directory holding draws.csv (default: --out)")

    p = sub.add_parser("scenario", parents=[common], help="fit and optimise the three misspecified variants")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--strict", action="store_true", help="exit nonzero when a variant does not converge")

    p = sub.add_parser("diagnose", parents=[common], help="print the posterior summary of a fit")
    p.add_argument("--fit", type=Path, help="fit directory (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            cmd_simulate(resolve_config(args), args.out)
            return 0
        if args.command == "diagnose":
            fit_dir = args.fit or args.out
            if fit_dir is None:
                raise CommandError("diagnose needs --fit or --out")
            cmd_diagnose(fit_dir)
            return 0
        cfg = resolve_config(args, args.data)
        if args.command == "fit":
            return cmd_fit(cfg, args.data, args.out or Path("fit"), not args.no_conjoint, args.allow_nonconverged)
        if args.command == "optimize":
            out = args.out or args.fit or Path("fit")
            cmd_optimize(cfg, args.data, args.fit or out, out)
            return 0
        if args.command == "scenario":
            return cmd_scenario(cfg, args.data, args.out or Path("scenarios"), allow_nonconverged=not args.strict)
    except (CommandError, FileNotFoundError, ValueError) as exc:
        print(f"pricefusion {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
