"""Command-line interface: scenario runs, figure reproduction, CSV emission.

Commands read a strict scenario config, run the requested pipeline, and
write CSV data plus rendered PNG figures and a JSON manifest into the output
directory.  Exit codes: 0 success, 1 validation problem, 2 numerical failure.
"""

import argparse
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .config import ConfigError, RunManifest, parse_config
from .dynamics import CavitySpec, build_model, evolve, transmission_spectrum
from .errors import NumericalError, ValidationError
from .memory import (
    UNDRIVEN_ARM,
    MemoryScenario,
    compare_driven_undriven,
    fidelity_curve,
    optimize_detuning,
)
from .spectral import DressedDensity, LorentzianDensity, discretize
from . import reports

_FIGURE_CONFIGS = {"fig2": "fig2.cfg", "fig3": "fig3.cfg", "fig4": "fig4.cfg"}


def _shipped_config(name: str) -> str:
    return resources.files("drivenmem.configs").joinpath(name).read_text()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivenmem",
        description="Driven spin-ensemble quantum memory simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", type=Path, required=needs_config,
                       help="scenario config file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="bound worker parallelism (results unchanged)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed recorded in the manifest")
        p.add_argument("--n-spins", type=int, default=None, dest="n_spins")
        p.add_argument("--scheme", choices=["quantile", "grid"], default=None)
        p.add_argument("--method", choices=["eigen", "bromwich"], default=None)
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering, keep CSV output")

    for name, fn in [("spectrum", cmd_spectrum), ("transmission", cmd_transmission),
                     ("rabi", cmd_rabi), ("memory", cmd_memory),
                     ("optimize", cmd_optimize)]:
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("reproduce", help="emit the data behind a manuscript figure")
    p.add_argument("figure", choices=sorted(_FIGURE_CONFIGS))
    common(p, needs_config=False)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _load_config(args, default_name=None):
    if args.config is not None:
        text = args.config.read_text()
    elif default_name is not None:
        text = _shipped_config(default_name)
    else:
        raise ValidationError("a config file is required")
    cfg = parse_config(text)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_spins is not None:
        overrides["n_spins"] = args.n_spins
    if args.scheme is not None:
        overrides["scheme"] = args.scheme
    if args.method is not None:
        overrides["method"] = args.method
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _manifest(args, cfg) -> RunManifest:
    return RunManifest(command=args.command, config_hash=cfg.content_hash(),
                       resolved=cfg.resolved_dict() | {"delta": str(cfg.delta)},
                       seed=cfg.seed)


def _finish(args, manifest, outputs):
    for path in outputs:
        manifest.add_output(path)
    manifest_path = args.out / "manifest.json"
    manifest.write(manifest_path)
    for entry in manifest.outputs:
        print(f"wrote {args.out / entry['path']}")
    print(f"wrote {manifest_path}")
    return 0


def _density_curves(cfg, span=8.0, points=1601):
    grid = np.linspace(-span, span, points)
    lor = LorentzianDensity(cfg.width, center=cfg.center)
    curves = [("bare", grid, lor.pdf(grid))]
    if cfg.driven:
        dressed = DressedDensity(cfg.width, cfg.b_min, cfg.b_max)
        curves.append(("driven", grid, dressed.pdf(grid + dressed.band_center)))
    return curves


def cmd_spectrum(args) -> int:
    cfg = _load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    outputs = []
    curves = _density_curves(cfg)
    for label, grid, density in curves:
        path = args.out / f"density_{label}.csv"
        reports.write_density_csv(path, grid, density)
        outputs.append(path)
    if not args.no_figures:
        fig = args.out / "density.png"
        reports.render_density_figure(fig, curves)
        outputs.append(fig)
    return _finish(args, manifest, outputs)


def _transmission_panels(cfg):
    panels = []
    omega = cfg.omega
    if omega is None:
        raise ValidationError("transmission needs [run] omega")
    lor = LorentzianDensity(cfg.width, center=cfg.center)
    ens = discretize(lor, cfg.n_spins, omega, scheme=cfg.scheme,
                     window=cfg.window, gamma=cfg.gamma)
    model = build_model(CavitySpec(cfg.center, cfg.kappa), ens)
    span = omega + 3.0 * cfg.width
    grid = np.linspace(cfg.center - span, cfg.center + span, 8001)
    panels.append(("bare", transmission_spectrum(model, grid, resolution=cfg.resolution)))
    if cfg.driven:
        dressed = DressedDensity(cfg.width, cfg.b_min, cfg.b_max)
        ens_d = discretize(dressed, cfg.n_spins, 0.5 * omega, scheme=cfg.scheme,
                           window=cfg.window, gamma=cfg.gamma)
        center = dressed.band_center
        model_d = build_model(CavitySpec(center, cfg.kappa), ens_d)
        span_d = 0.5 * omega + 3.0 * cfg.width
        grid_d = np.linspace(center - span_d, center + span_d, 8001)
        panels.append(("driven", transmission_spectrum(model_d, grid_d,
                                                       resolution=cfg.resolution)))
    return panels


def cmd_transmission(args) -> int:
    cfg = _load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    outputs = []
    panels = _transmission_panels(cfg)
    for label, spectrum in panels:
        path = args.out / f"transmission_{label}.csv"
        reports.write_spectrum_csv(path, spectrum)
        outputs.append(path)
    if not args.no_figures:
        fig = args.out / "transmission.png"
        reports.render_transmission_figure(fig, panels)
        outputs.append(fig)
    return _finish(args, manifest, outputs)


def _rabi_curves(cfg, zero_damping=False):
    omega = cfg.omega
    if omega is None:
        raise ValidationError("rabi needs [run] omega")
    kappa = 0.0 if zero_damping else cfg.kappa
    gamma = 0.0 if zero_damping else cfg.gamma
    times = np.linspace(0.0, cfg.horizon, cfg.n_times)
    curves = []
    lor = LorentzianDensity(cfg.width, center=cfg.center)
    ens = discretize(lor, cfg.n_spins, omega, scheme=cfg.scheme,
                     window=cfg.window, gamma=gamma)
    model = build_model(CavitySpec(cfg.center, kappa), ens)
    traj = evolve(model, (1.0, np.zeros(ens.size)), times)
    curves.append(("bare", times, traj))
    if cfg.driven:
        dressed = DressedDensity(cfg.width, cfg.b_min, cfg.b_max)
        ens_d = discretize(dressed, cfg.n_spins, 0.5 * omega, scheme=cfg.scheme,
                           window=cfg.window, gamma=gamma)
        model_d = build_model(CavitySpec(dressed.band_center, kappa), ens_d)
        traj_d = evolve(model_d, (1.0, np.zeros(ens_d.size)), times)
        curves.append(("driven", times, traj_d))
    return curves


def cmd_rabi(args) -> int:
    cfg = _load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    outputs = []
    curves = _rabi_curves(cfg)
    for label, times, traj in curves:
        path = args.out / f"rabi_{label}.csv"
        reports.write_trajectory_csv(path, times, traj.overlap)
        outputs.append(path)
    if not args.no_figures:
        fig = args.out / "rabi.png"
        reports.render_rabi_figure(
            fig, [(label, times, traj.fidelity) for label, times, traj in curves])
        outputs.append(fig)
    return _finish(args, manifest, outputs)


def cmd_memory(args) -> int:
    cfg = _load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    outputs = []
    report = fidelity_curve(cfg.to_scenario())
    path = args.out / "memory.csv"
    reports.write_trajectory_csv(path, report.times, report.overlap)
    outputs.append(path)
    meta = args.out / "memory.meta.txt"
    meta.write_text("\n".join(report.metadata_lines()) + "\n")
    outputs.append(meta)
    if not args.no_figures:
        fig = args.out / "memory.png"
        reports.render_memory_figure(
            fig, [("memory", report.times, report.fidelity)],
            target_time=report.target_time)
        outputs.append(fig)
    print(f"F({report.target_time:g}) = {report.fidelity_at_target:.6g} "
          f"at delta = {report.delta:.6g}")
    return _finish(args, manifest, outputs)


def cmd_optimize(args) -> int:
    cfg = _load_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    outputs = []
    scenario = cfg.to_scenario()
    result = optimize_detuning(scenario)
    trace_d, trace_f = zip(*result.trace)
    path = args.out / "optimize_scan.csv"
    reports.write_csv(path, ["delta", "fidelity"], [np.array(trace_d), np.array(trace_f)])
    outputs.append(path)
    meta = args.out / "optimize.meta.txt"
    meta.write_text(
        f"delta_opt = {result.delta:.12g}\n"
        f"fidelity_opt = {result.fidelity:.12g}\n"
        f"target_time = {scenario.target_time:.12g}\n"
        f"evaluations = {result.evaluations}\n"
    )
    outputs.append(meta)
    if not args.no_figures:
        fig = args.out / "optimize.png"
        order = np.argsort(trace_d)
        reports.render_detuning_scan_figure(
            fig, [("scan", np.array(trace_d)[order], np.array(trace_f)[order])],
            scenario.target_time)
        outputs.append(fig)
    print(f"delta* = {result.delta:.6g}, F({scenario.target_time:g}) = {result.fidelity:.6g}")
    return _finish(args, manifest, outputs)


def _reproduce_fig2(args, cfg, manifest):
    outputs = []
    curves = _density_curves(cfg)
    for label, grid, density in curves:
        path = args.out / f"fig2_{label}.csv"
        reports.write_density_csv(path, grid, density)
        outputs.append(path)
    if not args.no_figures:
        fig = args.out / "fig2.png"
        reports.render_density_figure(fig, curves)
        outputs.append(fig)
    return outputs


def _reproduce_fig3(args, cfg, manifest):
    outputs = []
    panels = _transmission_panels(cfg)
    for label, spectrum in panels:
        path = args.out / f"fig3_transmission_{label}.csv"
        reports.write_spectrum_csv(path, spectrum)
        outputs.append(path)
    rabi = _rabi_curves(cfg, zero_damping=True)
    for label, times, traj in rabi:
        path = args.out / f"fig3_rabi_{label}.csv"
        reports.write_trajectory_csv(path, times, traj.overlap)
        outputs.append(path)
    if not args.no_figures:
        fig = args.out / "fig3.png"
        reports.render_transmission_figure(args.out / "fig3_transmission.png", panels)
        reports.render_rabi_figure(
            fig, [(label, times, traj.fidelity) for label, times, traj in rabi])
        outputs.append(args.out / "fig3_transmission.png")
        outputs.append(fig)
    return outputs


def _reproduce_fig4(args, cfg, manifest):
    outputs = []
    scenario = cfg.to_scenario()
    if scenario.kind != "driven":
        raise ValidationError("fig4 reproduction needs a [drive] section")
    omega = scenario.collective_coupling

    undriven = replace(scenario, kind="lorentzian", b_min=None, b_max=None,
                       delta="optimize", **UNDRIVEN_ARM)
    driven = replace(scenario, delta="optimize", method="bromwich")

    res_u = optimize_detuning(undriven, bracket=(-10.0 * omega, 10.0 * omega))
    res_d = optimize_detuning(driven)

    # Panel (a): fidelity at the target time against the detuning.
    deltas = np.linspace(-2.0 * omega, 2.0 * omega, 41)
    from .memory import _fidelity_at  # narrow scan helper
    ens_u = undriven.build_ensemble()
    ens_d = driven.build_ensemble()
    f_u = np.array([_fidelity_at(undriven, ens_u, d, scenario.target_time)
                    for d in deltas])
    f_d = np.array([_fidelity_at(driven, ens_d, d, scenario.target_time)
                    for d in deltas])
    path = args.out / "fig4a_scan.csv"
    reports.write_csv(path, ["delta", "fidelity_bare", "fidelity_driven"],
                      [deltas, f_u, f_d])
    outputs.append(path)

    # Panel (b): fidelity curves at each arm's optimal detuning.
    rep_u = fidelity_curve(replace(undriven, delta=res_u.delta))
    rep_d = fidelity_curve(replace(driven, delta=res_d.delta))
    path = args.out / "fig4b_bare.csv"
    reports.write_trajectory_csv(path, rep_u.times, rep_u.overlap)
    outputs.append(path)
    path = args.out / "fig4b_driven.csv"
    reports.write_trajectory_csv(path, rep_d.times, rep_d.overlap)
    outputs.append(path)
    meta = args.out / "fig4.meta.txt"
    meta.write_text(
        f"bare_delta_opt = {res_u.delta:.12g}\n"
        f"bare_fidelity = {res_u.fidelity:.12g}\n"
        f"driven_delta_opt = {res_d.delta:.12g}\n"
        f"driven_fidelity = {res_d.fidelity:.12g}\n"
    )
    outputs.append(meta)
    if not args.no_figures:
        fig_a = args.out / "fig4a.png"
        reports.render_detuning_scan_figure(
            fig_a, [("bare", deltas, f_u), ("driven", deltas, f_d)],
            scenario.target_time)
        fig_b = args.out / "fig4b.png"
        reports.render_memory_figure(
            fig_b, [("bare", rep_u.times, rep_u.fidelity),
                    ("driven", rep_d.times, rep_d.fidelity)],
            target_time=scenario.target_time)
        outputs += [fig_a, fig_b]
    return outputs


def cmd_reproduce(args) -> int:
    cfg = _load_config(args, default_name=_FIGURE_CONFIGS[args.figure])
    args.out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, cfg)
    worker = {"fig2": _reproduce_fig2, "fig3": _reproduce_fig3,
              "fig4": _reproduce_fig4}[args.figure]
    outputs = worker(args, cfg, manifest)
    return _finish(args, manifest, outputs)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line, message in exc.problems:
            print(f"config error (line {line}): {message}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
