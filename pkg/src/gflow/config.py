"""
INI experiment configuration: parsing, defaults and validation.

Every validation error carries the section.key name and the line number of the
offending entry (or ``<override>`` for command-line overrides).
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .presets import METRIC_PRESETS, PARAM_PRESETS, PHI_PRESETS
from .verify import LEMMAS

SCENARIOS = ("evolve", "check-lemmas", "classify", "envelope", "soliton", "deturck-compare", "entropy")


class ConfigError(ValueError):
    def __init__(self, message: str, name: str | None = None, line: int | str | None = None):
        self.name = name
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class MissingKey(ConfigError):
    def __init__(self, name: str, line=None):
        super().__init__(f"missing required key {name!r}", name, line)


class BadValue(ConfigError):
    def __init__(self, name: str, reason: str, line=None):
        self.reason = reason
        super().__init__(f"bad value for {name!r}: {reason}", name, line)


class UnknownScenario(ConfigError):
    def __init__(self, scenario: str, line=None):
        super().__init__(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}", "experiment.scenario", line)


# section -> key -> (type, default). A default of None means optional/absent.
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "experiment": {"scenario": ("str", None)},
    "grid": {
        "dim": ("int", 2),
        "n": ("int", 64),
        "length": ("float", 2.0 * math.pi),
        "topology": ("str", "periodic"),
        "accuracy": ("int", None),
    },
    "params": {
        "preset": ("str", None),
        "alpha1": ("float", 0.0),
        "alpha2": ("float", 0.0),
        "beta1": ("float", 0.0),
        "beta2": ("float", 0.0),
    },
    "initial": {
        "metric": ("str", "bump"),
        "metric_amplitude": ("float", 0.1),
        "metric_frequency": ("float", 1.0),
        "phi": ("str", "sin"),
        "phi_amplitude": ("float", 0.3),
        "phi_frequency": ("float", 1.0),
        "file": ("str", None),
    },
    "control": {
        "scheme": ("str", "rk4"),
        "mode": ("str", "direct"),
        "dt": ("float", None),
        "cfl_safety": ("float", 0.2),
        "t_end": ("float", 0.1),
        "monitor_stride": ("int", 1),
        "monitors": ("list", ["basic"]),
        "u_power": ("int", 2),
    },
    "checks": {
        "lemmas": ("list", list(LEMMAS)),
        "refinements": ("int", 2),
        "order_threshold": ("float", 1.8),
        "c_tilde": ("float", None),
        "slack": ("float", 1e-3),
        "tolerance": ("float", 0.02),
        "reduced_t_end": ("float", None),
        "tau": ("float", 1.0),
        "alpha": ("float", -1.0),
        "beta": ("float", 0.0),
        "decay": ("bool", False),
        "volume": ("bool", False),
        "volume_tolerance": ("float", 1e-4),
    },
    "output": {
        "directory": ("str", "gflow-out"),
        "emit_csv": ("bool", True),
        "emit_svg": ("bool", False),
        "emit_json": ("bool", True),
        "plot_columns": ("list", None),
    },
}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "evolve": ("control.t_end",),
    "envelope": ("control.t_end",),
    "deturck-compare": ("control.t_end",),
}


@dataclass
class ExperimentConfig:
    scenario: str
    values: dict = field(default_factory=dict)  # section -> key -> value
    source: str | None = None

    def get(self, section: str, key: str):
        return self.values[section][key]

    def __getitem__(self, dotted: str):
        s, k = dotted.split(".", 1)
        return self.values[s][k]

    def echo(self) -> dict:
        """Fully resolved configuration (defaults applied) for the report."""
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.values.items())}

    @property
    def params(self):
        from .flow import FlowParams
        p = self.values["params"]
        return FlowParams(p["alpha1"], p["alpha2"], p["beta1"], p["beta2"])

    @property
    def grid(self):
        from .grid import GridSpec
        g = self.values["grid"]
        return GridSpec(g["dim"], g["n"], g["length"], g["topology"], g["accuracy"])


def _line_index(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, ""), no)
            continue
        m = re.match(r"^([^=:]+)[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _convert(kind: str, name: str, raw: str, line):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected true/false")
        if kind == "list":
            return [x.strip() for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise BadValue(name, f"expected {kind}, got {raw!r} ({exc})", line) from None
    raise AssertionError(kind)


def _validate(cfg: ExperimentConfig, lines) -> None:
    def ln(dotted):
        s, k = dotted.split(".", 1)
        return lines.get((s, k))

    def bad(dotted, reason):
        raise BadValue(dotted, reason, ln(dotted))

    g = cfg.values["grid"]
    if g["dim"] not in (2, 3):
        bad("grid.dim", "must be 2 or 3")
    if g["n"] < 8:
        bad("grid.n", "minimum 8")
    if not g["length"] > 0:
        bad("grid.length", "must be positive")
    if g["topology"] not in ("periodic", "interior_patch"):
        bad("grid.topology", "must be periodic or interior_patch")
    if g["accuracy"] is not None and g["accuracy"] not in (2, 4):
        bad("grid.accuracy", "must be 2 or 4")

    init = cfg.values["initial"]
    if init["metric"] not in METRIC_PRESETS:
        bad("initial.metric", f"unknown preset; expected one of {', '.join(METRIC_PRESETS)}")
    if init["phi"] not in PHI_PRESETS:
        bad("initial.phi", f"unknown preset; expected one of {', '.join(PHI_PRESETS)}")
    if init["metric"] == "cigar" and (g["dim"] != 2 or g["topology"] != "interior_patch"):
        bad("initial.metric", "cigar needs a 2D interior_patch grid")
    if init["metric"] == "bump" and abs(init["metric_amplitude"]) > 5:
        bad("initial.metric_amplitude", "bump amplitude must be at most 5 in magnitude")
    if init["file"] is not None and not Path(init["file"]).is_file():
        bad("initial.file", "file not found")

    c = cfg.values["control"]
    if c["scheme"] not in ("rk4", "euler"):
        bad("control.scheme", "must be rk4 or euler")
    if c["mode"] not in ("direct", "deturck"):
        bad("control.mode", "must be direct or deturck")
    if c["dt"] is not None and not c["dt"] > 0:
        bad("control.dt", "must be positive")
    if not 0 < c["cfl_safety"] <= 1:
        bad("control.cfl_safety", "must lie in (0, 1]")
    if c["t_end"] < 0:
        bad("control.t_end", "must be non-negative")
    if c["monitor_stride"] < 1:
        bad("control.monitor_stride", "minimum 1")
    if c["u_power"] < 1:
        bad("control.u_power", "minimum 1")
    from .monitors import ALL_COLUMNS
    for name in c["monitors"]:
        if name not in ("basic", "decay", "entropy", "all") and name not in ALL_COLUMNS:
            bad("control.monitors", f"unknown monitor {name!r}")

    ch = cfg.values["checks"]
    for lem in ch["lemmas"]:
        if lem not in LEMMAS and lem != "all":
            bad("checks.lemmas", f"unknown lemma {lem!r}; expected names from {', '.join(LEMMAS)}")
    if ch["refinements"] < 2:
        bad("checks.refinements", "minimum 2")
    if ch["c_tilde"] is not None and ch["c_tilde"] < 0:
        bad("checks.c_tilde", "must be >= 0")
    if ch["slack"] < 0:
        bad("checks.slack", "must be >= 0")
    if not ch["tolerance"] > 0:
        bad("checks.tolerance", "must be positive")
    if not ch["tau"] > 0:
        bad("checks.tau", "must be positive")
    if cfg.scenario == "deturck-compare" and ch["reduced_t_end"] is not None and ch["reduced_t_end"] != c["t_end"]:
        bad("checks.reduced_t_end", "both runs must share t_end")
    if cfg.scenario == "soliton" and (g["dim"] != 2 or g["topology"] != "interior_patch"):
        bad("grid.topology", "soliton scenario needs a 2D interior_patch grid")
    if cfg.scenario == "entropy" and g["topology"] != "periodic":
        bad("grid.topology", "entropy needs a periodic grid")

    out = cfg.values["output"]
    if out["plot_columns"]:
        for col in out["plot_columns"]:
            if col not in ALL_COLUMNS:
                bad("output.plot_columns", f"unknown column {col!r}")


def parse_config_text(text: str, scenario: str | None = None, overrides: list[str] | tuple = (),
                      source: str | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}", None, line) from None
    lines = _line_index(text)

    for sec in cp.sections():
        if sec.lower() not in _SCHEMA:
            raise BadValue(sec, "unknown section", lines.get((sec.lower(), "")))
        for key in cp[sec]:
            if key not in _SCHEMA[sec.lower()]:
                raise BadValue(f"{sec}.{key}", "unknown key", lines.get((sec.lower(), key)))

    raw: dict[str, dict[str, tuple[str, object]]] = {s: {} for s in _SCHEMA}
    for sec in cp.sections():
        for key, val in cp[sec].items():
            raw[sec.lower()][key] = (val, lines.get((sec.lower(), key)))
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise BadValue(ov, "override must look like section.key=value", "<override>")
        name, val = ov.split("=", 1)
        sec, key = name.strip().lower().split(".", 1)
        if sec not in _SCHEMA or key not in _SCHEMA[sec]:
            raise BadValue(name.strip(), "unknown key", "<override>")
        raw[sec][key] = (val, "<override>")

    file_scenario, sc_line = raw["experiment"].get("scenario", (None, None))
    if file_scenario is not None:
        file_scenario = file_scenario.strip()
        if file_scenario not in SCENARIOS:
            raise UnknownScenario(file_scenario, sc_line)
    if scenario is None:
        if file_scenario is None:
            raise MissingKey("experiment.scenario", None)
        scenario = file_scenario
    if scenario not in SCENARIOS:
        raise UnknownScenario(scenario, "<command line>")
    if file_scenario is not None and file_scenario != scenario:
        raise BadValue("experiment.scenario", f"config says {file_scenario!r} but {scenario!r} was requested", sc_line)

    for dotted in _REQUIRED.get(scenario, ()):
        s, k = dotted.split(".")
        if k not in raw[s]:
            raise MissingKey(dotted, lines.get((s, "")))

    values: dict[str, dict] = {}
    for sec, keys in _SCHEMA.items():
        values[sec] = {}
        for key, (kind, default) in keys.items():
            if key in raw[sec]:
                val, line = raw[sec][key]
                values[sec][key] = _convert(kind, f"{sec}.{key}", val, line)
            else:
                values[sec][key] = list(default) if isinstance(default, list) else default
    values["experiment"]["scenario"] = scenario

    preset = values["params"]["preset"]
    if preset is not None:
        if preset not in PARAM_PRESETS:
            raise BadValue("params.preset", f"unknown preset; expected one of {', '.join(PARAM_PRESETS)}",
                           raw["params"]["preset"][1])
        for key, v in zip(("alpha1", "alpha2", "beta1", "beta2"), PARAM_PRESETS[preset]):
            if key not in raw["params"]:
                values["params"][key] = float(v)
    if values["checks"]["lemmas"] == ["all"]:
        values["checks"]["lemmas"] = list(LEMMAS)

    cfg = ExperimentConfig(scenario, values, source)
    _validate(cfg, {**lines, **{(s, k): v[1] for s in raw for k, v in raw[s].items()}})
    return cfg


def parse_config(path: str | Path, scenario: str | None = None, overrides=()) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", None, None)
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}", None, None) from None
    return parse_config_text(text, scenario, overrides, str(p))
