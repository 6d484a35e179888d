"""INI run configurations for the command-line runner.

A file has a ``[signal]`` and a ``[sim]`` section shared by all commands
plus one section named after the command.  Unknown sections or keys are
errors, and every error names the section, key and line.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import SignalSpec
from .sde import ConfigError as SimConfigError, SimConfig


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


COMMANDS = ("scan-hormander", "simulate", "control-demo", "ergodicity", "ou-validate")

SIGNAL_DEFAULTS = {"period": 10.0, "c0": 0.0, "cos": (), "sin": (), "tau": 0.5, "gamma": 2.0}
SIM_DEFAULTS = {"dt": 0.005, "t_end": 100.0, "seed": 0, "scheme": "euler",
                "gating_policy": "clamp", "system": "xihh"}

# per-command keys and defaults; the type of the default fixes the parser
COMMAND_DEFAULTS = {
    "scan-hormander": {
        "v_lo": -15.0, "v_hi": 30.0, "step": 0.01, "opening_weighted": True,
        "rank_points": 1000, "rank_v_lo": -400.0, "rank_v_hi": -150.0,
        "rank_zeta": 50.0, "rank_min_abs_d": 1e-4,
    },
    "simulate": {
        "x0": "equilibrium", "record_every": 1,
    },
    "control-demo": {
        "x0": (50.0, 0.9, 0.1, 0.9, -20.0), "eps": 0.05, "grid_dt": 1e-3, "t_end": "auto",
    },
    "ergodicity": {
        "lyap_mc": 1000, "lyap_radii": (10.0, 20.0, 40.0, 60.0, 100.0, 200.0),
        "transition_chains": 1000, "transition_steps": 100, "burn_in": 5,
        "balls": 1, "regen_chains": 200, "cycles_per_chain": 1, "max_steps": 12000,
        "multistart_k": 40, "multistart_paths": 50,
        "invariance_phases": (0.0, 0.25, 0.5), "invariance_samples": 2000,
        "invariance_reps": 8,
    },
    "ou-validate": {
        "n_paths": 10000, "k_max": 20, "start_mean": 5.0, "start_var": 2.0,
    },
}


@dataclass
class RunConfig:
    command: str
    signal: SignalSpec
    sim: SimConfig
    params: dict = field(default_factory=dict)
    out: Path = Path("out")
    seed: int = 0

    def as_dict(self) -> dict:
        sig = asdict(self.signal)
        return {"command": self.command, "seed": self.seed, "signal": sig,
                "sim": asdict(self.sim), "params": dict(sorted(self.params.items()))}


def _line_of(text: str, section: str, key: str):
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1].strip()
        elif cur == section and line.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return i
    return None


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(p) for p in raw.replace(",", " ").split()) if raw else ()
    return raw


def _section(cp, text, name, defaults, where):
    out = dict(defaults)
    if not cp.has_section(name):
        return out
    for key, raw in cp.items(name):
        if key not in defaults:
            raise ConfigError(f"{where}: unknown key [{name}] {key} (line {_line_of(text, name, key)})")
        try:
            out[key] = _parse_value(raw, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for [{name}] {key} (line "
                              f"{_line_of(text, name, key)}): {exc}") from None
    return out


def parse_config(text: str, command: str, *, where: str = "<config>",
                 seed: int | None = None, out=None) -> RunConfig:
    """Build a RunConfig for ``command`` from INI text."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc}") from None
    allowed = {"signal", "sim", command}
    for name in cp.sections():
        if name not in allowed:
            raise ConfigError(f"{where}: unknown section [{name}] for command {command}")
    sig = _section(cp, text, "signal", SIGNAL_DEFAULTS, where)
    sim = _section(cp, text, "sim", SIM_DEFAULTS, where)
    params = _section(cp, text, command, COMMAND_DEFAULTS[command], where)
    if seed is not None:
        sim["seed"] = int(seed)
    try:
        spec = SignalSpec(period=sig["period"], c0=sig["c0"], cos_coeffs=sig["cos"],
                          sin_coeffs=sig["sin"], tau=sig["tau"], gamma=sig["gamma"])
        simcfg = SimConfig(**sim)
    except (ValueError, SimConfigError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return RunConfig(command, spec, simcfg, params, Path(out) if out else Path("out"),
                     int(simcfg.seed))


def load_config(path, command: str, *, seed: int | None = None, out=None) -> RunConfig:
    """Read ``path`` (None gives all defaults)."""
    if path is None:
        return parse_config("", command, seed=seed, out=out)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, command, where=str(path), seed=seed, out=out)
