"""Command-line entry point: ``python3 -m fockcert <command> ...``.

Every command writes CSV or JSON to ``--output`` (stdout when omitted).
Targets are given as comma-separated amplitudes over Fock levels 0, 1, ...,
e.g. ``--target 1,1,1`` or ``--target 0,1,1j``; they are normalised.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from . import certifier, stats, thresholds
from .core import JointDensity, PhysicalParams, PulseSequence
from .experiment import (
    ExperimentConfig,
    blue_sideband_probe,
    detuning_sweep,
    expected_pattern,
    fit_probe,
    run_experiment,
)
from .synthesis import (
    TargetState,
    build_mapping_spec,
    find_mapping,
    optimize_mapping,
    synthesize_creation,
)

KINDS = {"r": "red", "c": "carrier", "b": "blue"}


def parse_target(text: str) -> TargetState:
    amps = [complex(tok.strip().replace("i", "j")) for tok in text.split(",")]
    return TargetState.normalised(amps)


def parse_noise(text: str, params: PhysicalParams) -> tuple[PhysicalParams, bool]:
    """``off``, ``thermal[:nbar]``, ``carrier`` or ``detuning:<Hz>``, comma separated."""
    off_resonant = False
    for tok in filter(None, (t.strip() for t in text.split(","))):
        name, _, value = tok.partition(":")
        if name == "off":
            continue
        if name == "thermal":
            params = replace(params, thermal_nbar=float(value) if value else 0.02)
        elif name == "carrier":
            off_resonant = True
        elif name == "detuning":
            if not value:
                raise argparse.ArgumentTypeError("detuning needs a value in Hz")
            params = replace(params, sideband_detuning=float(value))
        else:
            raise argparse.ArgumentTypeError(f"unknown noise setting {tok!r}")
    return params, off_resonant


def parse_range(text: str) -> np.ndarray:
    """``start:stop:count`` or a comma-separated list."""
    if ":" in text:
        start, stop, count = text.split(":")
        return np.linspace(float(start), float(stop), int(count))
    return np.array([float(x) for x in text.split(",")])


def _emit(args, text: str) -> None:
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _config(args) -> ExperimentConfig:
    params, off_resonant = parse_noise(args.noise, PhysicalParams())
    target = parse_target(args.target)
    return ExperimentConfig(
        target=target, params=params, off_resonant=off_resonant, n_points=args.points,
        shots_per_point=args.shots, rasters=getattr(args, "rasters", 4), seed=args.seed,
        truncation=args.truncation,
        creation=PulseSequence.from_json(args.creation) if getattr(args, "creation", None) else None,
        mapping=PulseSequence.from_json(args.mapping) if getattr(args, "mapping", None) else None,
        measure_excited=not getattr(args, "measure_ground", False),
    )


# --------------------------------------------------------------------------
# commands


def cmd_synthesize(args):
    target = parse_target(args.target)
    seq = synthesize_creation(target, max_duration=args.max_duration,
                              truncation=args.truncation, explore_blue=args.explore_blue)
    _emit(args, seq.to_json() + "\n")


def cmd_map(args):
    target = parse_target(args.target)
    if args.template:
        template = [KINDS[c] for c in args.template.lower()]
        res = optimize_mapping(build_mapping_spec(target), template, restarts=args.restarts,
                               seed=args.seed, truncation=args.truncation,
                               raise_on_failure=True)
    else:
        res = find_mapping(target, restarts=args.restarts, seed=args.seed)
    logging.info("mapping error %.3e", res.error)
    _emit(args, res.sequence.to_json() + "\n")


def cmd_pattern(args):
    cfg = _config(args)
    pat = expected_pattern(cfg)
    buf = io.StringIO()
    buf.write("phase_rad,probability,weight\n")
    for row in zip(pat.phases, pat.probabilities, pat.weights):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    _emit(args, buf.getvalue())


def cmd_certify(args):
    if args.pattern:
        pat = certifier.InterferencePattern.from_csv(args.pattern)
        doc = certifier.report(pat, z=args.z)
    elif args.record:
        rec = stats.ShotRecord.from_csv(args.record)
        res = stats.unbiased_c(rec, certifier.trapezium_weights(len(rec.phases)), args.z)
        doc = certifier.report(c=res.c_unbiased, sigma=res.sigma, z=args.z)
        doc["c_naive"] = res.c_naive
    else:
        cfg = _config(args)
        rec, res = run_experiment(cfg, args.z)
        if args.record_out:
            rec.to_csv(args.record_out)
        w = certifier.trapezium_weights(cfg.n_points)
        p = rec.proportions
        doc = certifier.report(c=res.c_unbiased, sigma=res.sigma, z=args.z,
                               m1=float(w @ p), m3=float(w @ p ** 3))
        doc["c_naive"] = res.c_naive
    _emit(args, _json(doc))


def cmd_thresholds(args):
    rows = []
    for dim in args.dims:
        for k in args.ks:
            if k > dim:
                continue
            for m in (args.ms or [None]):
                if m is not None and m > dim:
                    continue
                t0 = time.perf_counter()
                res = thresholds.maximize_threshold(dim, k, m, restarts=args.restarts,
                                                    seed=args.seed, components=args.components)
                rows.append({"dim": dim, "k": k, "m": dim if m is None else m,
                             "optimum": res.value, "top5_spread": res.top_agreement,
                             "rank_one_fraction": res.rank_one_fraction,
                             "wall_time": time.perf_counter() - t0})
    _emit(args, _csv(rows))


def cmd_probe(args):
    params, _ = parse_noise(args.noise, PhysicalParams(
        motional_dephasing_rate=args.dephasing))
    pops = np.array([float(eval_fraction(x)) for x in args.populations.split(",")])
    N = args.truncation or max(len(pops) + 2, 4)
    diag = np.zeros(2 * (N + 1))
    diag[:len(pops)] = pops / pops.sum()
    rho = JointDensity(np.diag(diag).astype(complex), N)
    times = parse_range(args.times)
    p = blue_sideband_probe(rho, params, times)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 5])))
    k = rng.binomial(args.shots, np.clip(p, 0, 1))
    rows = [{"time_s": float(t), "successes": int(c), "shots": args.shots, "probability": float(q)}
            for t, c, q in zip(times, k, p)]
    _emit(args, _csv(rows))


def eval_fraction(text: str) -> float:
    num, _, den = text.partition("/")
    return float(num) / (float(den) if den else 1.0)


def cmd_fit(args):
    data = np.genfromtxt(args.data, delimiter=",", names=True)
    shots = np.atleast_1d(data["shots"]).astype(int)
    if np.any(shots != shots[0]):
        raise SystemExit("fit needs the same shot count at every time")
    res = fit_probe(data["time_s"], data["successes"].astype(int), int(shots[0]),
                    levels=args.levels, bootstrap=args.bootstrap, seed=args.seed)
    doc = {"populations": res.populations.tolist(), "sideband_rabi_hz": res.sideband_rabi,
           "detuning_hz": res.detuning, "dephasing_hz": res.dephasing,
           "log_likelihood": res.log_likelihood, "converged": res.converged,
           "message": res.message, "bounds": res.bounds}
    _emit(args, _json(doc))


def cmd_monte_carlo(args):
    cfg = _config(args)
    pat = expected_pattern(cfg)
    pdf = stats.monte_carlo_pdf(pat, args.shots, runs=args.runs, seed=args.seed, bins=args.bins)
    exact = certifier.certifier_value(pat)
    summary = {"c_exact": exact,
               "naive_mean": float(pdf.naive.mean()), "naive_std": float(pdf.naive.std()),
               "unbiased_mean": float(pdf.unbiased.mean()),
               "unbiased_std": float(pdf.unbiased.std()), "runs": len(pdf.naive)}
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(_json(summary))
    rows = [{"bin_center": float(c), "density_naive": float(a), "density_unbiased": float(b)}
            for c, a, b in zip(pdf.bin_centers, pdf.density_naive, pdf.density_unbiased)]
    _emit(args, _csv(rows))


def cmd_sweep(args):
    cfg = _config(args)
    rows = detuning_sweep(cfg, parse_range(args.deltas), kind=args.kind)
    _emit(args, _csv(rows))


# --------------------------------------------------------------------------
# parser


def _common(p, points=True, target=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truncation", type=int, default=None)
    p.add_argument("--output", "-o", default=None, help="output path (default stdout)")
    if target:
        p.add_argument("--target", default="1,1,1",
                       help="comma-separated Fock amplitudes (default 1,1,1)")
    if points:
        p.add_argument("--points", type=int, default=certifier.DEFAULT_POINTS)
        p.add_argument("--shots", type=int, default=400)
        p.add_argument("--noise", default="off",
                       help="off | thermal[:nbar] | carrier | detuning:<Hz>, comma separated")
        p.add_argument("--creation", help="creation sequence JSON (default: synthesized)")
        p.add_argument("--mapping", help="mapping sequence JSON (default: optimized)")
        p.add_argument("--measure-ground", action="store_true",
                       help="record the g population instead of e")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fockcert", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="creation sequence for a target")
    _common(p, points=False)
    p.add_argument("--max-duration", type=float, default=2.0)
    p.add_argument("--explore-blue", action="store_true",
                   help="also allow blue-sideband steps in the search")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("map", help="measurement mapping for a target")
    _common(p, points=False)
    p.add_argument("--template", help="pulse kinds, e.g. rcrcr (default: search library)")
    p.add_argument("--restarts", type=int, default=64)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("pattern", help="exact interference pattern as CSV")
    _common(p)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("certify", help="certifier report from a pattern, a record or a simulation")
    _common(p)
    p.add_argument("--pattern", help="pattern CSV (phase_rad, probability, weight)")
    p.add_argument("--record", help="shot record CSV (phase_rad, successes, shots)")
    p.add_argument("--record-out", help="save the simulated shot record here")
    p.add_argument("--rasters", type=int, default=4)
    p.add_argument("--z", type=float, default=1.0, help="standard errors of margin")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("thresholds", help="maximise C over k-coherent states")
    _common(p, points=False, target=False)
    p.add_argument("--dims", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--ms", type=int, nargs="*", default=[1])
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--components", default=1,
                   type=lambda s: s if s == "all" else int(s))
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("probe", help="simulate blue-sideband probe data")
    _common(p, points=False, target=False)
    p.add_argument("--populations", default="1/3,1/3,1/3")
    p.add_argument("--times", default="0:500e-6:200", help="start:stop:count in seconds")
    p.add_argument("--shots", type=int, default=400)
    p.add_argument("--dephasing", type=float, default=0.0)
    p.add_argument("--noise", default="off")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("fit", help="maximum-likelihood fit of probe data")
    _common(p, points=False, target=False)
    p.add_argument("data", help="CSV with time_s, successes, shots")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("monte-carlo", help="estimator pdfs from simulated shot records")
    _common(p)
    p.add_argument("--runs", type=int, default=100_000)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--summary", help="write estimator means and spreads as JSON here")
    p.set_defaults(func=cmd_monte_carlo)

    p = sub.add_parser("sweep", help="C of the exact pattern against a detuning")
    _common(p)
    p.add_argument("--deltas", default="-2000:2000:21",
                   help="start:stop:count or comma list in Hz; write --deltas=-1000,0 for negative values")
    p.add_argument("--kind", choices=["sideband", "carrier"], default="sideband")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
