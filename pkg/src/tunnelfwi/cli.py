"""Command-line pipeline: forward runs, sweeps, inversion and validation.

Every subcommand takes a config file; failures exit nonzero with a single
``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import adjoint as adjmod
from . import analytic
from . import config as cfgmod
from . import fileio
from . import forward as fwdmod
from . import material as matmod
from . import mesh as meshmod
from . import optimize as optmod
from . import signal as sigmod


class CliError(RuntimeError):
    pass


def _build_context(cfg: cfgmod.RunConfig):
    """Mesh, ambient model and discretization shared by most subcommands."""
    mesh = meshmod.build_tunnel_mesh(cfg.geometry())
    ambient = cfg.ambient()
    model = matmod.ModelVector.homogeneous(mesh, ambient.vp, ambient.vs)
    return mesh, ambient, model


def _require_stations(cfg, mesh):
    layout = cfg.layout()
    if layout.n_sources == 0:
        raise CliError("config defines no sources")
    if layout.n_receivers == 0:
        raise CliError("config defines no receivers")
    meshmod.validate_layout(layout, mesh)
    return layout


def _source_amplitude(cfg):
    """Wavelet spectrum lookup shared by synthesis and inversion."""
    wavelet = sigmod.sample_ricker(cfg.scalars["wavelet_peak_hz"])

    def f_omega(omega):
        return sigmod.dft(wavelet, omega)
    return f_omega


def cmd_forward(cfg, args):
    if not cfg.frequencies:
        raise CliError("forward needs a 'frequencies = ...' config entry")
    mesh, ambient, model = _build_context(cfg)
    if args.model:
        model = fileio.read_model_grid(args.model, mesh)
    layout = _require_stations(cfg, mesh)
    f_omega = _source_amplitude(cfg)
    records = fwdmod.solve_records(mesh, model, ambient.rho, cfg.frequencies,
                                   layout, f_omega, cfg.profile(),
                                   cfg.discretization())
    observed = {float(w): records.values[i] for i, w in enumerate(records.omegas)}
    fileio.write_frequency_records(args.output, observed,
                                   layout.n_sources, layout.n_receivers)
    print(f"wrote {len(cfg.frequencies)} frequencies to {args.output}")
    return 0


def cmd_greens(cfg, args):
    mesh, ambient, model = _build_context(cfg)
    layout = _require_stations(cfg, mesh)
    s = cfg.scalars
    omegas, values = fwdmod.greens_sweep(
        mesh, model, ambient.rho, layout.sources[args.source], s["sweep_start"],
        s["sweep_end"], s["sweep_step"], layout, cfg.profile(),
        cfg.discretization(), degree_for=cfg.degree_for())
    fileio.write_greens_sweep(args.output, omegas, values, layout.n_receivers)
    print(f"wrote {len(omegas)} frequencies to {args.output}")
    return 0


def cmd_make_synthetic(cfg, args):
    mesh, ambient, model = _build_context(cfg)
    if args.model:
        model = fileio.read_model_grid(args.model, mesh)
    layout = _require_stations(cfg, mesh)
    schedule = cfg.schedule()
    omegas = schedule.all_frequencies()
    f_omega = _source_amplitude(cfg)
    records = fwdmod.solve_records(mesh, model, ambient.rho, omegas, layout,
                                   f_omega, cfg.profile(), cfg.discretization())
    observed = {float(w): records.values[i] for i, w in enumerate(records.omegas)}
    fileio.write_frequency_records(args.output, observed,
                                   layout.n_sources, layout.n_receivers)
    print(f"wrote synthetic records at {len(omegas)} frequencies to {args.output}")
    return 0


def cmd_dft(cfg, args):
    mesh, _, _ = _build_context(cfg)
    layout = _require_stations(cfg, mesh)
    omegas = cfg.schedule().all_frequencies()
    observed = fileio.records_to_spectra(fileio.read_time_records(args.records),
                                         omegas, layout)
    fileio.write_frequency_records(args.output, observed,
                                   layout.n_sources, layout.n_receivers)
    print(f"wrote {len(omegas)} frequencies to {args.output}")
    return 0


def _load_observed(cfg, records_path, layout, omegas):
    if fileio.is_frequency_record_file(records_path):
        observed = fileio.read_frequency_records(records_path)
        missing = [w for w in omegas if w not in observed]
        if missing:
            raise CliError(f"records lack scheduled frequencies: {missing}")
        return observed
    return fileio.cached_spectra(records_path, omegas, layout)


def cmd_invert(cfg, args):
    mesh, ambient, initial = _build_context(cfg)
    if args.initial:
        initial = fileio.read_model_grid(args.initial, mesh)
    layout = _require_stations(cfg, mesh)
    schedule = cfg.schedule()
    observed = _load_observed(cfg, args.records, layout, schedule.all_frequencies())

    s = cfg.scalars
    mask = adjmod.build_mask(layout, mesh, s["station_radius"],
                             s["surface_distance"], s["station_transition"],
                             s["surface_transition"])
    data = optmod.InversionData(
        mesh=mesh, layout=layout, profile=cfg.profile(),
        cfg=cfg.discretization(), rho=ambient.rho, ambient_vs=ambient.vs,
        observed={float(w): np.asarray(v) for w, v in observed.items()},
        source_amplitude=_source_amplitude(cfg), mask=mask)

    os.makedirs(args.output, exist_ok=True)
    result = optmod.run_inversion(initial, schedule, data, cfg.settings())
    for gi, model in enumerate(result.group_models):
        fileio.write_model_grid(os.path.join(args.output, f"model_group_{gi:02d}.txt"),
                                model, mesh)
    fileio.write_model_grid(os.path.join(args.output, "final_model.txt"),
                            result.model, mesh)
    with open(os.path.join(args.output, "convergence.txt"), "w") as f:
        f.write(optmod.format_log(result.state.log))
    for gi, msg in result.failures:
        print(f"group {gi} failed: {msg}", file=sys.stderr)
    print(f"inversion finished after {result.state.iteration} iterations; "
          f"outputs in {args.output}")
    return 0


def cmd_validate_pml(cfg, args):
    """Homogeneous all-absorbing run compared against the closed form."""
    s = cfg.scalars
    geo = cfg.geometry()
    width = geo.domain_width
    height = geo.depth_above_tunnel + geo.tunnel_height + geo.depth_below_tunnel
    pml = geo.pml_width
    if pml <= 0:
        raise CliError("validate-pml needs pml_width > 0")
    mesh = meshmod.build_unbounded_mesh(width, height, pml, geo.element_size)
    ambient = cfg.ambient()
    model = matmod.ModelVector.homogeneous(mesh, ambient.vp, ambient.vs)
    omega = 2.0 * np.pi * s["validate_frequency_hz"]

    sx = s["validate_source_x"]
    sy = s["validate_source_y"]
    if sx < 0:
        sx = pml + width / 2.0
    if sy < 0:
        sy = pml + height / 2.0
    source = meshmod.Source((sx, sy), (0.0, 1.0))
    layout = meshmod.StationLayout(sources=(source,), receivers=())
    res = fwdmod.forward_solve(mesh, model, ambient.rho, omega, layout, 1.0,
                               cfg.profile(), cfg.discretization())
    u = res.fields[0].u
    dm = res.system.dof_map

    # diagonal line across the full grid, from corner to corner
    W, H = mesh.extent
    n_steps = int(2 * max(mesh.nx, mesh.ny))
    ts = np.arange(1, n_steps) / n_steps
    x0b, x1b, y0b, y1b = mesh.interior_box()
    rows = []
    for t in ts:
        p = (t * W, t * H)
        dist = np.hypot(p[0] - sx, p[1] - sy)
        inside = (x0b < p[0] < x1b) and (y0b < p[1] < y1b)
        num = fwdmod.evaluate_field(mesh, dm, u, p, allow_pml=True)[0]
        if dist < 1e-9:
            continue
        ana = analytic.greens_x_analytic(analytic.AnalyticQuery(
            source=(sx, sy), point=p, omega=omega,
            vp=ambient.vp, vs=ambient.vs, rho=ambient.rho))
        usable = inside and dist > 3.0 * mesh.h
        rows.append((t * np.hypot(W, H), num, ana, usable))

    scale = max(abs(r[2].real) for r in rows if r[3])
    errs = [abs(r[1].real - r[2].real) / scale for r in rows if r[3]]
    table = [(dist, num, ana, abs(num.real - ana.real) / scale, usable)
             for dist, num, ana, usable in rows]
    fileio.write_validation_table(args.output, table)
    print(f"median normalized error (interior): {np.median(errs):.3e}")
    print(f"max normalized error (interior):    {max(errs):.3e}")
    print(f"wrote comparison table to {args.output}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tunnelfwi",
        description="Frequency-domain elastic waveform inversion for "
                    "tunnel-ahead reconnaissance")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration file")
        p.set_defaults(fn=fn)
        return p

    p = add("forward", cmd_forward, "solve the configured frequency list")
    p.add_argument("--model", help="model grid file (default: ambient)")
    p.add_argument("--output", required=True)

    p = add("greens", cmd_greens, "unit-amplitude frequency sweep")
    p.add_argument("--source", type=int, default=0, help="source index")
    p.add_argument("--output", required=True)

    p = add("invert", cmd_invert, "run the multi-scale inversion")
    p.add_argument("--records", required=True, help="time or frequency records")
    p.add_argument("--initial", help="initial model grid (default: ambient)")
    p.add_argument("--output", required=True, help="output directory")

    p = add("validate-pml", cmd_validate_pml,
            "compare a homogeneous unbounded run against the closed form")
    p.add_argument("--output", required=True)

    p = add("dft", cmd_dft, "transform time records to the scheduled frequencies")
    p.add_argument("--records", required=True)
    p.add_argument("--output", required=True)

    p = add("make-synthetic", cmd_make_synthetic,
            "generate observed records from a reference model")
    p.add_argument("--model", help="reference model grid (default: ambient)")
    p.add_argument("--output", required=True)
    return parser


def cli_dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = cfgmod.load_config(args.config)
        return args.fn(cfg, args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
