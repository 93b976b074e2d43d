"""Run configuration, scan tables, synthetic data and result files.

Config format
-------------
One ``key = value`` per line; ``#`` starts a comment. Keys are flat and
dotted (``grid.probe.start``). Every physical key has a declared unit in
:data:`SCHEMA`; a bare number is read in that unit, a number with a unit
suffix (``400 kHz``) is converted, and a suffix of the wrong dimension is
an error. Frequencies are ordinary frequencies f = omega / 2 pi. Probe and
tuning grids are offsets from ``system.f_c``; the tuning axis is the
cavity-ensemble detuning f_c - f_s.

CSV format
----------
Comment lines (``#``) carry provenance, then one header row, then data
written with ``%.11e`` (12 significant digits), so equal inputs give
byte-identical files.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import SystemParams, ThermalBath, hz, mhz
from .oscillator import OscillatorSet, steady_amplitude
from .resolvent import CouplingDensity, level_shift

SCHEMA_VERSION = 1
CSV_FORMAT = "%.11e"

_UNITS = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "temperature": {"K": 1.0, "mK": 1e-3},
    "field": {"T": 1.0, "mT": 1e-3, "G": 1e-4},
    "angle": {"deg": 1.0, "rad": 180.0 / math.pi},
}
_DIMENSION = {u: d for d, table in _UNITS.items() for u in table}


@dataclass(frozen=True)
class Key:
    kind: str  # "float", "int", "str", "path"
    unit: Optional[str] = None  # declared unit for floats with a dimension
    default: object = None
    required: bool = False
    choices: tuple = ()


def _grid(unit, start, stop, count):
    return {"start": Key("float", unit, start), "stop": Key("float", unit, stop), "count": Key("int", None, count)}


SCHEMA: dict = {
    "model": Key("str", required=True, choices=("oscillator", "cumulant", "resolvent", "maser", "levels")),
    "system.f_c": Key("float", "MHz", 2700.0),
    "system.kappa": Key("float", "MHz", 0.4),
    "system.gamma_hom": Key("float", "MHz", 0.0),
    "system.gamma_p": Key("float", "MHz", 0.0),
    "system.g_sqrtN": Key("float", "MHz", 9.51),
    "system.N": Key("float", None, 1e12),
    "system.eta": Key("float", "MHz", 0.004),
    "oscillator.gamma": Key("float", "MHz", 10.92),
    "density.kind": Key("str", default="qgaussian", choices=("qgaussian", "gaussian", "lorentzian", "delta")),
    "density.q": Key("float", None, 1.389),
    "density.width": Key("float", "MHz", 12.54),
    "density.offset": Key("float", "MHz", 0.0),
    "bath.T": Key("float", "K", 0.0),
    "levels.D": Key("float", "MHz", 2880.0),
    "levels.E": Key("float", "MHz", 5.0),
    "levels.phi": Key("float", "deg", 0.0),
    "levels.g_factor": Key("float", None, 2.0),
    "maser.w": Key("float", "Hz", 1000.0),
    "maser.Delta": Key("float", "MHz", 0.0),
    "noise.level": Key("float", None, 0.0),
    "seed": Key("int", None, None),
    "reconstruct.window": Key("float", "MHz", 20.0),
    "input.scan": Key("path", None, None),
    "output.dir": Key("path", None, "out"),
}
for _name, (_unit, _a, _b, _n) in {
    "probe": ("MHz", -30.0, 30.0, 601),
    "tuning": ("MHz", -30.0, 30.0, 61),
    "T": ("K", 0.1, 1.0, 10),
    "B": ("mT", 0.0, 20.0, 41),
    "coupling": ("MHz", 12.0, 30.0, 5),
    "w": ("Hz", 0.1, 1e9, 40),
    "gamma_p": ("Hz", 1.0, 1e10, 40),
}.items():
    for _part, _key in _grid(_unit, _a, _b, _n).items():
        SCHEMA[f"grid.{_name}.{_part}"] = _key

LOG_GRIDS = ("w", "gamma_p")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key and line."""

    def __init__(self, msg, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{': '.join([', '.join(where), msg]) if where else msg}")
        self.key = key
        self.line = line


class ScanFormatError(ValueError):
    """Malformed scan file."""


@dataclass
class RunConfig:
    """Parsed configuration: values in the schema's declared units."""

    values: dict
    given: frozenset = frozenset()

    def __getitem__(self, key):
        return self.values[key]

    # -- typed views
    def system_params(self) -> SystemParams:
        v = self.values
        return SystemParams.from_collective(
            mhz(v["system.f_c"]), mhz(v["system.kappa"]), mhz(v["system.g_sqrtN"]), N=v["system.N"],
            gamma_hom=mhz(v["system.gamma_hom"]), gamma_p=mhz(v["system.gamma_p"]), eta=mhz(v["system.eta"]))

    def bath(self) -> ThermalBath:
        return ThermalBath(self.values["bath.T"])

    def density(self) -> CouplingDensity:
        v = self.values
        p = self.system_params()
        center = p.omega_c + mhz(v["density.offset"])
        kind, width = v["density.kind"], mhz(v["density.width"])
        if kind == "qgaussian":
            return CouplingDensity.qgaussian(v["density.q"], width, center, p.g2N)
        if kind == "gaussian":
            return CouplingDensity.gaussian(width, center, p.g2N)
        if kind == "lorentzian":
            return CouplingDensity.lorentzian(width, center, p.g2N)
        return CouplingDensity.delta(center, p.g2N)

    def oscillators(self) -> OscillatorSet:
        p = self.system_params()
        off = p.omega_c + mhz(self.values["density.offset"])
        return OscillatorSet.single(off, p.g_sqrtN, mhz(self.values["oscillator.gamma"]), p.N)

    def grid(self, name) -> np.ndarray:
        """Grid values in the declared unit (log-spaced for pump and width grids)."""
        a = self.values[f"grid.{name}.start"]
        b = self.values[f"grid.{name}.stop"]
        n = self.values[f"grid.{name}.count"]
        return np.geomspace(a, b, n) if name in LOG_GRIDS else np.linspace(a, b, n)


def _parse_value(spec: Key, raw: str, key, line):
    if spec.kind == "str":
        if spec.choices and raw not in spec.choices:
            raise ConfigError(f"expected one of {spec.choices}, got {raw!r}", key, line)
        return raw
    if spec.kind == "path":
        return raw
    m = re.fullmatch(r"([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*([A-Za-z]*)", raw)
    if not m:
        raise ConfigError(f"not a number: {raw!r}", key, line)
    num, unit = m.group(1), m.group(2)
    if spec.kind == "int":
        if unit:
            raise ConfigError(f"unexpected unit {unit!r}", key, line)
        try:
            return int(num)
        except ValueError:
            val = float(num)
            if not val.is_integer():
                raise ConfigError(f"expected an integer, got {raw!r}", key, line) from None
            return int(val)
    value = float(num)
    if unit:
        if spec.unit is None:
            raise ConfigError(f"dimensionless key given unit {unit!r}", key, line)
        dim = _DIMENSION.get(unit)
        if dim is None:
            raise ConfigError(f"unknown unit {unit!r}", key, line)
        if dim != _DIMENSION[spec.unit]:
            raise ConfigError(f"unit mismatch: {unit!r} is a {dim}, expected {spec.unit}", key, line)
        value = value * _UNITS[dim][unit] / _UNITS[dim][spec.unit]
    if not math.isfinite(value):
        raise ConfigError("value must be finite", key, line)
    return value


def parse_config(text: str) -> RunConfig:
    """Strict parse of the flat dotted-key format; defaults fill the rest."""
    values = {k: s.default for k, s in SCHEMA.items()}
    given = set()
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, raw = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, lineno)
        if key in given:
            raise ConfigError("duplicate key", key, lineno)
        values[key] = _parse_value(SCHEMA[key], raw, key, lineno)
        given.add(key)
    for key, spec in SCHEMA.items():
        if spec.required and key not in given:
            raise ConfigError("missing required key", key)
    return RunConfig(values, frozenset(given))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    """Every key with its value in the declared unit; parses back to ``cfg``."""
    lines = []
    for key in sorted(SCHEMA):
        val = cfg.values[key]
        if val is None:
            continue
        spec = SCHEMA[key]
        if spec.kind == "float":
            text = repr(float(val)) + (f" {spec.unit}" if spec.unit else "")
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def validate(cfg: RunConfig, command: Optional[str] = None) -> None:
    """Semantic checks run before any computation."""
    v = cfg.values
    for key in SCHEMA:
        if key.endswith(".count") and v[key] < 2:
            raise ConfigError("grids need count >= 2", key)
    if v["noise.level"] < 0:
        raise ConfigError("noise level must be >= 0", "noise.level")
    if v["noise.level"] > 0 and v["seed"] is None:
        raise ConfigError("a seed is mandatory when noise > 0", "seed")
    if v["seed"] is not None and not 0 <= v["seed"] < 2 ** 64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer", "seed")
    for name in LOG_GRIDS:
        if v[f"grid.{name}.start"] <= 0 or v[f"grid.{name}.stop"] <= 0:
            raise ConfigError("log-spaced grid bounds must be > 0", f"grid.{name}.start")
    for key in ("system.kappa", "system.gamma_hom", "system.gamma_p", "system.g_sqrtN", "system.eta",
                "oscillator.gamma", "density.width", "bath.T", "maser.w"):
        if v[key] < 0:
            raise ConfigError("must be >= 0", key)
    if v["system.f_c"] <= 0 or v["system.kappa"] <= 0:
        raise ConfigError("must be > 0", "system.f_c" if v["system.f_c"] <= 0 else "system.kappa")
    if v["system.N"] < 1:
        raise ConfigError("must be >= 1", "system.N")
    if v["density.kind"] in ("qgaussian", "gaussian", "lorentzian") and v["density.width"] <= 0:
        raise ConfigError("width must be > 0", "density.width")
    if v["density.kind"] == "qgaussian" and not 1.0 < v["density.q"] < 3.0:
        raise ConfigError("q must lie in (1, 3)", "density.q")
    if command == "reconstruct":
        path = v["input.scan"]
        if path is None:
            raise ConfigError("missing required key", "input.scan")
        if not os.path.isfile(path):
            raise ConfigError(f"file not found: {path}", "input.scan")


# ----------------------------------------------------------- scan tables


@dataclass
class ScanTable:
    """Rows of (tuning MHz, probe MHz, power, optional variance), sorted."""

    tuning: np.ndarray
    probe: np.ndarray
    power: np.ndarray
    variance: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    rejected: int = 0

    def __len__(self):
        return self.tuning.size

    def scans(self):
        """Per-tuning (shift rad/s, probe rad/s, power, variance|None) lists."""
        keys = np.unique(self.tuning)
        shifts, probes, powers, variances = [], [], [], []
        for t in keys:
            sel = self.tuning == t
            shifts.append(mhz(float(t)))
            probes.append(mhz(self.probe[sel]))
            powers.append(self.power[sel])
            if self.variance is not None:
                variances.append(self.variance[sel])
        return np.array(shifts), probes, powers, (variances if self.variance is not None else None)


_SCAN_COLUMNS = ["tuning_MHz", "probe_MHz", "power"]


def write_scan(path, table: ScanTable) -> None:
    cols = [table.tuning, table.probe, table.power]
    header = list(_SCAN_COLUMNS)
    if table.variance is not None:
        cols.append(table.variance)
        header.append("variance")
    meta = {"units": "tuning=MHz probe=MHz power=arb",
            "axis": "tuning = f_c - f_s (cavity minus ensemble); probe = absolute probe frequency"}
    meta.update(table.meta)
    write_csv(path, header, np.column_stack(cols) if len(table) else np.empty((0, len(header))), meta)


def ingest_scan(path) -> ScanTable:
    """Read a scan CSV; NaN/Inf rows are dropped and counted in ``rejected``."""
    meta = {}
    header = None
    rows, bad, rejected = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    k, val = body.split(":", 1)
                    meta[k.strip()] = val.strip()
                continue
            parts = [p.strip() for p in line.split(",")]
            if header is None:
                if parts[:3] != _SCAN_COLUMNS or len(parts) not in (3, 4) or \
                        (len(parts) == 4 and parts[3] != "variance"):
                    raise ScanFormatError(f"{path}: header missing or wrong (line {lineno}); "
                                          f"expected {','.join(_SCAN_COLUMNS)}[,variance]")
                header = parts
                continue
            if len(parts) != len(header):
                bad.append((lineno, f"expected {len(header)} columns, got {len(parts)}"))
                continue
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                bad.append((lineno, "non-numeric field"))
                continue
            if not all(math.isfinite(x) for x in vals):
                rejected += 1
                continue
            rows.append(vals)
    if header is None:
        raise ScanFormatError(f"{path}: header missing")
    if bad:
        listing = "; ".join(f"line {n}: {why}" for n, why in bad[:20])
        more = f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""
        raise ScanFormatError(f"{path}: {len(bad)} malformed rows: {listing}{more}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    order = np.lexsort((data[:, 1], data[:, 0]))
    data = data[order]
    return ScanTable(data[:, 0], data[:, 1], data[:, 2], data[:, 3] if len(header) == 4 else None,
                     meta, rejected)


def synthesize_scan(params: SystemParams, model, tuning_mhz, probe_offset_mhz, noise=0.0, seed=None,
                    freeze_offresonant=True) -> ScanTable:
    """Forward-model scans with multiplicative Gaussian noise.

    ``model`` is a :class:`CouplingDensity` (resolvent transmission) or an
    :class:`OscillatorSet` (coupled oscillators, unit drive). For tuning
    value t the ensemble sits t below the cavity. With ``noise`` > 0 the
    variance column holds (noise * power_true)^2.
    """
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if noise > 0 and seed is None:
        raise ValueError("a seed is required when noise > 0")
    tuning = np.asarray(tuning_mhz, dtype=float)
    offs = np.asarray(probe_offset_mhz, dtype=float)
    T, P = np.meshgrid(tuning, offs, indexing="ij")
    probe = params.omega_c + mhz(P)
    if isinstance(model, CouplingDensity):
        # scan t equals the reference scan seen from omega + shift (cavity at omega_c + shift);
        # evaluate the level shift once per distinct lattice frequency
        shift = mhz(T)
        w = (probe + shift).ravel()
        scale = max(float(np.min(np.diff(np.unique(offs)))) if offs.size > 1 else 1.0, 1e-12)
        key = np.round((w - w.min()) / mhz(scale) * 1e6).astype(np.int64)
        _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
        R = level_shift(model, w[first], params.gamma_hom)[inverse].reshape(P.shape)
        wc = params.omega_c + shift
        power = 1.0 / ((probe + shift - wc - R.real) ** 2 + (params.kappa + np.abs(R.imag)) ** 2)
    elif isinstance(model, OscillatorSet):
        power = np.empty(P.shape)
        for i, t in enumerate(tuning):
            oset = model.with_detuning(params.omega_c - mhz(t))
            power[i] = np.abs(steady_amplitude(oset, params, probe[i], eta=1.0)) ** 2
    else:
        raise TypeError("model must be a CouplingDensity or an OscillatorSet")
    true = power.ravel()
    var = None
    if noise > 0:
        rng = np.random.default_rng(seed)
        noisy = true * (1.0 + noise * rng.standard_normal(true.size))
        var = (noise * true) ** 2
    else:
        noisy = true.copy()
    meta = {"noise": repr(float(noise)), "seed": str(seed)}
    return ScanTable(T.ravel(), (params.omega_c / (2e6 * math.pi)) + P.ravel(), noisy, var, meta)


# ----------------------------------------------------------- emitters


def _fmt_row(row):
    return ",".join(CSV_FORMAT % x for x in row)


def write_csv(path, header, rows, meta: Optional[dict] = None) -> None:
    """CSV with ``# key: value`` provenance lines and fixed 12-digit fields."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, len(header))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(meta or {}):
            fh.write(f"# {k}: {meta[k]}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(_fmt_row(row) + "\n")


def read_csv(path):
    """(header, rows, meta) from a file written by :func:`write_csv`."""
    meta, header, rows = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                k, _, val = line[1:].partition(":")
                meta[k.strip()] = val.strip()
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append([float(x) for x in line.split(",")])
    return header, np.array(rows, dtype=float).reshape(-1, len(header or [])), meta


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


def write_json(path, report: dict) -> None:
    """Fit/run report with a schema version; keys sorted, non-finite -> null."""
    body = {"schema_version": SCHEMA_VERSION, **_jsonable(report)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_svg_heatmap(path, x, y, z, xlabel, ylabel, title, log=(False, False)) -> None:
    """Static heatmap; needs the optional matplotlib dependency."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "nvcavity"
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(x, y, np.ma.masked_invalid(z), shading="nearest")
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if log[0]:
        ax.set_xscale("log")
    if log[1]:
        ax.set_yscale("log")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_svg_lines(path, x, ys: dict, xlabel, ylabel, title) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "nvcavity"
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, y in ys.items():
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(ys) > 1:
        ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


__all__ = [
    "SCHEMA", "SCHEMA_VERSION", "CSV_FORMAT", "ConfigError", "ScanFormatError", "RunConfig", "ScanTable",
    "parse_config", "load_config", "format_config", "validate", "ingest_scan", "write_scan",
    "synthesize_scan", "write_csv", "read_csv", "write_json", "write_svg_heatmap", "write_svg_lines", "hz",
]
