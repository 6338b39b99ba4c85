"""Flat ``key = value`` experiment configuration: parsing, defaults and validation.

One setting per line; ``#`` starts a comment. Lists are comma separated.
Probe points in more than one dimension are separated by ``;`` with
comma-separated coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

COMMANDS = ("verify-kernel", "verify-correlation", "renewal", "simulate", "moments")
KERNELS = ("white", "riesz", "expo", "ou", "poisson", "cauchy")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def _points(text: str) -> list[list[float]]:
    return [_floats(p) for p in text.split(";") if p.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # stable generator
    "alpha": (float, 1.5),
    "dim": (int, 1),
    # noise
    "kernel": (str, "white"),
    "beta": (float, None),
    "alpha_c": (float, None),
    # nonlinearity and initial datum
    "sigma_form": (str, "power"),
    "gamma": (float, 1.0),
    "lambda": (float, 1.0),
    "kappa": (float, 1.0),
    "u0_file": (str, None),
    # lattice and stepping
    "L": (float, 8.0),
    "n": (int, 128),
    "dt": (float, 1e-3),
    "t_end": (float, 1.0),
    "trunc_N": (float, None),
    "paths": (int, 100),
    "seed": (int, 0),
    "block": (int, 250),
    "domain": (str, "free"),
    "radius": (float, None),
    "snapshots": (_floats, None),
    "snapshot_every": (float, None),
    # moments and sweeps
    "probes": (_points, None),
    "threshold": (float, 0.5),
    "kappas": (_floats, None),
    "horizons": (_floats, None),
    "eps": (float, 0.25),
    "n_boot": (int, 1000),
    # renewal
    "A": (float, 1.0),
    "B": (float, 1.0),
    "T": (float, 1.0),
    "form": (str, "singular"),
    "mesh": (float, None),
    "t0": (float, None),
    "trajectory": (_bool, False),
    # kernel verification
    "t": (float, 1.0),
    "x_max": (float, 10.0),
    "n_points": (int, 100),
    "tau": (float, 2.0),
    "t_min": (float, 0.1),
    "t_max": (float, 10.0),
    "resolution": (int, 40),
}


@dataclass
class ExperimentConfig:
    """Validated settings for one subcommand; ``values`` holds every schema key."""

    command: str
    values: dict
    out: str = "out"
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> dict:
        """Plain dictionary of the full configuration, for reports."""
        return {"command": self.command, **{k: self.values[k] for k in sorted(self.values)}}


def parse_text(text: str) -> tuple[dict[str, str], list[str]]:
    """Split config text into raw ``key -> value`` strings; also returns syntax problems."""
    raw: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value, got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw, problems


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _check(cmd: str, v: dict) -> list[str]:
    bad = []
    sim = cmd in ("simulate", "moments")
    a, d = v["alpha"], v["dim"]
    if a is not None and not 0 < a <= 2:
        bad.append("alpha must lie in (0, 2]")
    if d is not None and d < 1:
        bad.append("dim must be >= 1")
    kernel = v["kernel"]
    if kernel not in KERNELS:
        bad.append(f"kernel must be one of {', '.join(KERNELS)}")
    elif kernel == "riesz":
        if v["beta"] is None:
            bad.append("riesz kernel needs beta")
        elif not 0 < v["beta"] < d:
            bad.append("beta < d required")
    elif kernel == "ou":
        if v["alpha_c"] is None or not 0 < v["alpha_c"] <= 2:
            bad.append("ou kernel needs alpha_c in (0, 2]")
    if cmd == "renewal":
        for k in ("A", "B", "T"):
            if not v[k] > 0:
                bad.append(f"{k} must be > 0")
        if not v["gamma"] > 0:
            bad.append("gamma must be > 0")
        if v["form"] not in ("singular", "power", "constant"):
            bad.append("form must be singular, power or constant")
        if v["mesh"] is not None and not v["mesh"] > 0:
            bad.append("mesh must be > 0")
        if v["t0"] is not None and not 0 < v["t0"] <= v["T"]:
            bad.append("t0 must lie in (0, T]")
    if cmd == "verify-kernel":
        if not v["t"] > 0:
            bad.append("t must be > 0")
        if not 0 < v["t_min"] < v["t_max"]:
            bad.append("need 0 < t_min < t_max")
        if not v["x_max"] > 0:
            bad.append("x_max must be > 0")
        if v["n_points"] < 2 or v["resolution"] < 2:
            bad.append("n_points and resolution must be >= 2")
        if not v["tau"] >= 2:
            bad.append("tau must be >= 2")
    if v["radius"] is not None and not v["radius"] > 0:
        bad.append("radius must be > 0")
    if sim:
        if kernel == "white" and not (d == 1 and 1 < a < 2):
            bad.append("white noise requires d=1, 1<alpha<2")
        if kernel == "expo":
            bad.append("expo kernel cannot drive a simulation (not stationary)")
        if not 1 <= d <= 3:
            bad.append("simulation supports d = 1, 2, 3")
        if v["sigma_form"] not in ("power", "linear", "zero"):
            bad.append("sigma_form must be power, linear or zero")
        if not v["gamma"] >= 0:
            bad.append("gamma must be >= 0")
        if not v["L"] > 0:
            bad.append("L must be > 0")
        if not _is_power_of_two(v["n"]):
            bad.append("n must be a power of two")
        if not v["dt"] > 0:
            bad.append("dt must be > 0")
        if not v["t_end"] > 0:
            bad.append("t_end must be > 0")
        elif v["dt"] > 0 and abs(round(v["t_end"] / v["dt"]) * v["dt"] - v["t_end"]) > 1e-9 * v["t_end"]:
            bad.append("t_end must be a multiple of dt")
        if v["u0_file"] is None and not v["kappa"] > 0:
            bad.append("kappa must be > 0")
        if v["u0_file"] is not None and not Path(v["u0_file"]).is_file():
            bad.append(f"u0_file {v['u0_file']!r} not found")
        if v["trunc_N"] is not None and not v["trunc_N"] > 0:
            bad.append("trunc_N must be > 0")
        elif v["trunc_N"] is not None and v["u0_file"] is None and v["kappa"] >= v["trunc_N"]:
            bad.append("trunc_N must exceed kappa")
        if v["domain"] not in ("free", "ball"):
            bad.append("domain must be free or ball")
        elif v["domain"] == "ball" and not (v["radius"] is not None and v["radius"] > 0):
            bad.append("ball domain requires radius > 0")
        if v["paths"] < 1:
            bad.append("paths must be >= 1")
        if v["block"] < 1:
            bad.append("block must be >= 1")
        if v["L"] > 0 and v["t_end"] > 0 and 0 < a <= 2 and v["L"] < 4 * v["t_end"] ** (1 / a):
            bad.append("L must be >= 4 t_end^(1/alpha) (wrap-around budget)")
        if v["snapshot_every"] is not None and not v["snapshot_every"] > 0:
            bad.append("snapshot_every must be > 0")
        if v["probes"] is not None and any(len(p) != d for p in v["probes"]):
            bad.append(f"every probe needs {d} coordinates")
    if cmd == "moments":
        if v["paths"] < 100:
            bad.append("moments need paths >= 100")
        if not 0 < v["threshold"] <= 1:
            bad.append("threshold must lie in (0, 1]")
        ks = v["kappas"]
        if ks is not None:
            if len(ks) < 3 or any(b <= x for x, b in zip(ks, ks[1:])):
                bad.append("kappas must be >= 3 strictly increasing values")
            elif ks[0] <= 0:
                bad.append("kappas must be > 0")
        hs = v["horizons"]
        if hs is not None:
            if kernel != "riesz":
                bad.append("horizons sweep needs the riesz kernel")
            if any(h <= 0 for h in hs):
                bad.append("horizons must be > 0")
        if v["domain"] == "ball" and v["radius"] is not None and not 0 < v["eps"] < v["radius"]:
            bad.append("eps must lie in (0, radius)")
    return bad


def validate_config(text: str = "", command: str = "simulate", overrides: dict | None = None, out: str = "out") -> ExperimentConfig:
    """Parse, default and cross-validate a configuration.

    ``overrides`` (already typed or raw strings) take precedence over the
    text. Every problem is collected before raising :class:`ConfigError`.
    """
    if command not in COMMANDS:
        raise ConfigError([f"unknown command {command!r}"])
    raw, problems = parse_text(text)
    values = {k: default for k, (_, default) in SCHEMA.items()}
    explicit = set()
    for key, value in raw.items():
        if key not in SCHEMA:
            problems.append(f"unknown key {key!r}")
            continue
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value)
            explicit.add(key)
        except ValueError:
            problems.append(f"{key}: cannot parse {value!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            values[key] = SCHEMA[key][0](value) if isinstance(value, str) else value
            explicit.add(key)
        except ValueError:
            problems.append(f"{key}: cannot parse {value!r}")
    if values["probes"] and values["dim"] == 1 and len(values["probes"]) == 1:
        values["probes"] = [[x] for x in values["probes"][0]]
    problems += _check(command, values)
    if problems:
        raise ConfigError(problems)
    if values["trunc_N"] is None and command in ("simulate", "moments") and values["u0_file"] is None:
        values["trunc_N"] = 10.0 * values["kappa"]
    return ExperimentConfig(command, values, out, explicit)


def snapshot_grid(v: dict) -> tuple[float, ...]:
    """Snapshot times: explicit list, regular spacing, or ten evenly spaced times."""
    dt, t_end = v["dt"], v["t_end"]
    if v["snapshots"]:
        return tuple(v["snapshots"])
    every = v["snapshot_every"] or t_end / 10
    k = max(int(round(every / dt)), 1)
    n = int(round(t_end / dt))
    return tuple(i * dt for i in range(k, n + 1, k)) or (t_end,)
