"""Command-line orchestration: ``python -m nvcavity <subcommand> [flags]``.

Every subcommand parses and validates the whole configuration before any
computation, computes everything in memory, and only then writes files, so
a validation or numerical failure leaves the output directory untouched.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .core import coupling_vs_T_twolevel, hz, mhz, to_mhz
from .cumulant import ConvergenceError, HierarchyConfig, probe_spectrum, rabi_vs_temperature
from .fitting import FitError
from .levels import ZeroFieldParams, level_table
from .maser import MaserError, PumpedParams, operating_map
from .oscillator import transmission_map
from .resolvent import (PoleSearchError, QuadratureError, find_poles, reconstruct_from_scans, shifted,
                        transmission_gcc)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

# subcommand -> models it accepts (first one is the default without --config)
COMMANDS = {
    "levels": ("levels",),
    "transmission": ("oscillator", "resolvent", "cumulant"),
    "sweep-T": ("cumulant",),
    "reconstruct": ("resolvent",),
    "poles": ("resolvent",),
    "maser-map": ("maser",),
    "synth": ("resolvent", "oscillator"),
}
MAP_CODES = {"ok": 0, "no_root": 1, "unstable": 2, "pulsing": 3, "no_settle": 4, "failed": 5}


class _Outputs:
    """Deferred writes; nothing touches disk until :meth:`flush`."""

    def __init__(self):
        self.jobs = []

    def csv(self, name, header, rows, meta=None):
        self.jobs.append((name, lambda path: io.write_csv(path, header, rows, meta)))

    def json(self, name, report):
        self.jobs.append((name, lambda path: io.write_json(path, report)))

    def text(self, name, body):
        def write(path):
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(body)
        self.jobs.append((name, write))

    def raw(self, name, fn):
        self.jobs.append((name, fn))

    def flush(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name, fn in self.jobs:
            path = os.path.join(out_dir, name)
            fn(path)
            written.append(path)
        return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m nvcavity",
                                 description="Spin-ensemble cavity QED models and analysis pipelines.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--seed", type=int, help="RNG seed for synthetic noise (overrides seed)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent grid points")
    ap.add_argument("--plot", action="store_true", help="also write SVG plots (needs matplotlib)")
    return ap


def load(args) -> io.RunConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = f"model = {COMMANDS[args.command][0]}\n"
    cfg = io.parse_config(text)
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    if args.out is not None:
        cfg.values["output.dir"] = args.out
    if cfg["model"] not in COMMANDS[args.command]:
        raise io.ConfigError(f"subcommand {args.command!r} needs model in {COMMANDS[args.command]}", "model")
    if args.threads < 1:
        raise io.ConfigError("--threads must be >= 1")
    io.validate(cfg, args.command)
    return cfg


# ------------------------------------------------------------ subcommands


def cmd_levels(cfg, out, args):
    v = cfg.values
    zfp = ZeroFieldParams(mhz(v["levels.D"]), mhz(v["levels.E"]), v["levels.g_factor"])
    b_mT = cfg.grid("B")
    table = level_table(zfp, math.radians(v["levels.phi"]), b_mT * 1e-3)
    rows = np.column_stack([b_mT, to_mhz(table[:, 1:])])
    header = ["B_mT", "f_minus_I_MHz", "f_plus_I_MHz", "f_minus_II_MHz", "f_plus_II_MHz"]
    out.csv("levels.csv", header, rows, {"phi_deg": repr(v["levels.phi"])})
    if args.plot:
        out.raw("levels.svg", lambda p: io.write_svg_lines(
            p, b_mT, {h: rows[:, k + 1] for k, h in enumerate(header[1:])}, "B (mT)", "f (MHz)", "transitions"))


def cmd_transmission(cfg, out, args):
    p = cfg.system_params()
    probe_off = cfg.grid("probe")
    tuning = cfg.grid("tuning")
    probe = p.omega_c + mhz(probe_off)
    model = cfg["model"]
    if model == "oscillator":
        # transmission_map wants increasing spin frequencies; tuning runs the other way
        spec = transmission_map(cfg.oscillators(), p, probe, (p.omega_c - mhz(tuning))[::-1], eta=1.0)
        power = spec.power[::-1]
    elif model == "resolvent":
        dens = cfg.density()
        power = np.array([transmission_gcc(shifted(dens, -mhz(t)), p, probe).power for t in tuning])
    else:
        hc, bath = HierarchyConfig(), cfg.bath()
        off = mhz(cfg["density.offset"])
        power = np.array([probe_spectrum(hc, p, bath, probe, omega_s=p.omega_c + off - mhz(t)).power
                          for t in tuning])
    T, P = np.meshgrid(tuning, probe_off, indexing="ij")
    rows = np.column_stack([T.ravel(), P.ravel(), power.ravel()])
    out.csv("transmission.csv", ["tuning_MHz", "probe_offset_MHz", "power"], rows,
            {"model": model, "axis": "tuning = f_c - f_s; probe offset from f_c"})
    if args.plot:
        out.raw("transmission.svg", lambda path: io.write_svg_heatmap(
            path, probe_off, tuning, power, "probe - f_c (MHz)", "f_c - f_s (MHz)", "transmission"))


def cmd_sweep_T(cfg, out, args):
    p = cfg.system_params()
    T_grid = cfg.grid("T")
    pts = rabi_vs_temperature(HierarchyConfig(), p, T_grid)
    rows = []
    for pt in pts:
        law = coupling_vs_T_twolevel(p, pt.T)
        meas = math.nan if pt.omega_measured is None else to_mhz(pt.omega_measured)
        split = math.nan if pt.splitting is None else to_mhz(pt.splitting)
        rows.append([pt.T, meas, to_mhz(law), split])
    rows = np.array(rows)
    out.csv("sweep_T.csv", ["T_K", "coupling_MHz", "coupling_law_MHz", "splitting_MHz"], rows)
    if args.plot:
        out.raw("sweep_T.svg", lambda path: io.write_svg_lines(
            path, rows[:, 0], {"hierarchy": rows[:, 1], "tanh law": rows[:, 2]}, "T (K)", "g sqrt(N) (MHz)",
            "coupling vs temperature"))


def cmd_reconstruct(cfg, out, args):
    p = cfg.system_params()
    table = io.ingest_scan(cfg["input.scan"])
    if len(table) == 0:
        raise io.ConfigError("scan file has no finite rows", "input.scan")
    shifts, probes, powers, variances = table.scans()
    rec = reconstruct_from_scans(shifts, probes, powers, p, variances,
                                 window=mhz(cfg["reconstruct.window"]) * (1 + 1e-12))
    d = rec.density
    err = d.rho_err if d.rho_err is not None else np.full(d.rho.shape, math.nan)
    rows = np.column_stack([to_mhz(d.omega - p.omega_c), d.rho, err])
    out.csv("density.csv", ["omega_offset_MHz", "rho", "rho_err"], rows,
            {"units": "rho in (rad/s); integral over omega (rad/s) equals g^2 N"})
    f = rec.fit
    report = {
        "rows_used": len(table), "rows_rejected": table.rejected, "slices": int(d.omega.size),
        "weight": rec.weight, "weight_over_g2N": rec.weight / p.g2N,
        "fit": None if f is None else {
            "q": f.q, "gamma_q_MHz": to_mhz(f.gamma_q), "center_offset_MHz": to_mhz(f.omega0 - p.omega_c),
            "stderr_q": f.stderr.get("q"), "residual_norm": f.residual_norm, "iterations": f.nit},
    }
    out.json("reconstruct.json", report)
    if args.plot:
        out.raw("density.svg", lambda path: io.write_svg_lines(
            path, rows[:, 0], {"rho": rows[:, 1]}, "f - f_c (MHz)", "rho", "reconstructed density"))


def cmd_poles(cfg, out, args):
    base = cfg.system_params()
    couplings = cfg.grid("coupling")
    rows = []
    for G in couplings:
        p = base.with_(g=mhz(G) / math.sqrt(base.N))
        dens = replace(cfg.density(), weight=p.g2N)
        guesses = [p.omega_c + mhz(G) - 1j * mhz(1.0), p.omega_c - mhz(G) - 1j * mhz(1.0)]
        ps = find_poles(dens, p, p.omega_c, guesses)
        order = np.argsort(ps.poles.real)
        z = ps.poles[order]
        rows.append([G, to_mhz(z[0].real - p.omega_c), to_mhz(-z[0].imag),
                     to_mhz(z[-1].real - p.omega_c), to_mhz(-z[-1].imag)])
    out.csv("poles.csv", ["g_sqrtN_MHz", "lower_offset_MHz", "lower_halfwidth_MHz", "upper_offset_MHz",
                          "upper_halfwidth_MHz"], np.array(rows), {"density": cfg["density.kind"]})


def cmd_maser_map(cfg, out, args):
    p = cfg.system_params()
    base = PumpedParams(p, w=0.0, Delta=mhz(cfg["maser.Delta"]), bath=cfg.bath())
    w_hz, gp_hz = cfg.grid("w"), cfg.grid("gamma_p")
    m = operating_map(base, hz(w_hz), hz(gp_hz), threads=args.threads)
    GP, W = np.meshgrid(gp_hz, w_hz, indexing="ij")
    codes = np.vectorize(MAP_CODES.get)(m.reason).astype(float)
    rows = np.column_stack([W.ravel(), GP.ravel(), m.photons.ravel(), m.delta_f.ravel(),
                            m.settles.ravel().astype(float), codes.ravel()])
    out.csv("maser_map.csv", ["w_Hz", "gamma_p_Hz", "photons", "linewidth_Hz", "settles", "status"], rows,
            {"status": " ".join(f"{v}={k}" for k, v in MAP_CODES.items())})
    finite = np.isfinite(m.delta_f)
    summary = {
        "points": int(m.delta_f.size), "masked": int(m.mask.sum()), "pulsing": int((~m.settles & ~m.mask).sum()),
        "min_linewidth_Hz": float(np.min(m.delta_f[finite])) if finite.any() else None,
        "g2_over_kappa_Hz": p.g ** 2 / p.kappa / (2 * math.pi),
    }
    out.json("maser_map.json", summary)
    if args.plot:
        out.raw("maser_map.svg", lambda path: io.write_svg_heatmap(
            path, w_hz, gp_hz, np.log10(m.delta_f), "w (Hz)", "gamma_p (Hz)", "log10 linewidth (Hz)",
            log=(True, True)))


def cmd_synth(cfg, out, args):
    p = cfg.system_params()
    model = cfg.density() if cfg["model"] == "resolvent" else cfg.oscillators()
    table = io.synthesize_scan(p, model, cfg.grid("tuning"), cfg.grid("probe"), cfg["noise.level"], cfg["seed"])
    table.meta["model"] = cfg["model"]
    out.raw("scan.csv", lambda path: io.write_scan(path, table))


HANDLERS = {
    "levels": cmd_levels, "transmission": cmd_transmission, "sweep-T": cmd_sweep_T,
    "reconstruct": cmd_reconstruct, "poles": cmd_poles, "maser-map": cmd_maser_map, "synth": cmd_synth,
}

_NUMERICAL = (MaserError, ConvergenceError, PoleSearchError, QuadratureError, FitError, ArithmeticError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
    except (io.ConfigError, io.ScanFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: cannot read {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    out = _Outputs()
    out.text("config.echo", io.format_config(cfg))
    try:
        HANDLERS[args.command](cfg, out, args)
    except (io.ConfigError, io.ScanFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:  # parameter domain rejected by a model constructor
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERICAL as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    try:
        for path in out.flush(cfg["output.dir"]):
            print(path)
    except OSError as e:
        print(f"error: cannot write {e.filename}: {e.strerror}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
