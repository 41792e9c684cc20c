"""INI experiment configuration with strict keys and range checks.

Keys placed before any section header belong to ``[experiment]``. Every key,
its type and default is listed in ``SCHEMA``; :func:`describe` renders it.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional

from .node import ActionSpace, MacConfig
from .phy import SF_RANGE, LinkBudgetParams

ALGORITHMS = ("heat", "heat-online", "adrx", "random")


class ConfigError(ValueError):
    """Malformed, unknown or out-of-range configuration entry."""


# -- value parsers --------------------------------------------------------------
def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(item: Callable) -> Callable:
    def parse(text: str) -> tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def _int_ranges(text: str) -> tuple:
    """``0-7`` or ``0,1,5`` or a mix like ``0-3,9``."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        m = re.fullmatch(r"(-?\d+)\s*-\s*(-?\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _algos(text: str) -> tuple:
    names = _list(str)(text)
    bad = [n for n in names if n not in ALGORITHMS]
    if bad:
        raise ValueError(f"unknown algorithm {bad[0]!r}, choose from {', '.join(ALGORITHMS)}")
    return names


# -- range checks ---------------------------------------------------------------
def _positive(v) -> Optional[str]:
    vals = v if isinstance(v, tuple) else (v,)
    return None if all(x > 0 for x in vals) else "must be positive"


def _non_negative(v) -> Optional[str]:
    vals = v if isinstance(v, tuple) else (v,)
    return None if all(x >= 0 for x in vals) else "must be non-negative"


def _unit(v) -> Optional[str]:
    return None if 0.0 <= v <= 1.0 else "must lie in [0, 1]"


def _open_unit(v) -> Optional[str]:
    return None if 0.0 < v <= 1.0 else "must lie in (0, 1]"


def _sf_domain(v) -> Optional[str]:
    bad = [x for x in v if x not in SF_RANGE]
    if bad:
        return f"spreading factor {bad[0]} outside the SX127x domain 7..12"
    return None


def _expectile(v) -> Optional[str]:
    return None if 0.5 < v < 1.0 else "must lie in (0.5, 1)"


def _choice(*options) -> Callable:
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"

    return check


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Optional[Callable[[Any], Optional[str]]] = None
    doc: str = ""


_LINK = LinkBudgetParams()
_MAC = MacConfig()
_SPACE = ActionSpace()

SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "nodes": Key(_list(int), (32,), _positive, "node counts N of the grid"),
        "delta": Key(_list(float), (2.0,), _positive, "traffic intensities, packets per minute per node"),
        "radius_m": Key(float, 2000.0, _positive, "deployment disk radius R in metres"),
        "duration_s": Key(float, 7200.0, _positive, "simulated seconds per run"),
        "seeds": Key(_int_ranges, tuple(range(8)), _non_negative, "master seeds, list or ranges like 0-7"),
        "algorithms": Key(_algos, ("heat",), None, "subset of heat, heat-online, adrx, random"),
        "offline_minutes": Key(float, 25.0, _positive, "random-uniform behaviour collection length"),
        "train_every": Key(int, 4, _positive, "uplinks between training rounds"),
        "metric_interval_s": Key(float, 0.0, _non_negative, "periodic metric snapshot interval, 0 disables"),
        "output": Key(str, "sweep.csv", None, "CSV path for sweep results"),
    },
    "phy": {
        "carrier_hz": Key(float, _LINK.carrier_hz, _positive, "carrier frequency"),
        "bandwidth_hz": Key(float, _LINK.bandwidth_hz, _positive, "LoRa bandwidth"),
        "coding_rate": Key(float, _LINK.coding_rate, _open_unit, "coding rate as a fraction, 4/5 = 0.8"),
        "antenna_gain": Key(float, _LINK.antenna_gain, _positive, "combined linear antenna gain"),
        "noise_figure_db": Key(float, _LINK.noise_figure_db, None, "receiver noise figure"),
        "noise_density_dbm_hz": Key(float, _LINK.noise_density_dbm_hz, None, "thermal noise density"),
        "capture_threshold_db": Key(float, _LINK.capture_threshold_db, _non_negative, "capture margin"),
        "lock_preambles": Key(int, _LINK.lock_preambles, _positive, "preamble symbols until lock"),
        "preamble_symbols": Key(int, _LINK.preamble_symbols, _positive, "preamble length"),
    },
    "gateway": {
        "n_demodulators": Key(int, 8, _positive, "parallel demodulation paths"),
        "half_duplex": Key(_bool, True, None, "gateway transmissions block reception"),
    },
    "mac": {
        "payload_bytes": Key(int, _MAC.payload_bytes, _positive, "uplink payload"),
        "downlink_payload_bytes": Key(int, _MAC.downlink_payload_bytes, _positive, "downlink command payload"),
        "pa_efficiency": Key(float, _MAC.pa_efficiency, _open_unit, "power amplifier efficiency"),
        "rx_power_mw": Key(float, _MAC.rx_power_mw, _non_negative, "receive power draw"),
        "n_channels": Key(int, _MAC.n_channels, _positive, "uplink channels"),
        "rx1_delay_s": Key(float, _MAC.rx1_delay_s, _non_negative, "RX1 opening delay"),
        "rx2_delay_s": Key(float, _MAC.rx2_delay_s, _non_negative, "RX2 opening delay"),
        "gateway_tx_dbm": Key(float, _MAC.gateway_tx_dbm, None, "downlink transmit power"),
        "initial_ptx_dbm": Key(float, _MAC.initial_ptx_dbm, None, "power before the first command"),
        "initial_window": Key(int, _MAC.initial_window, _positive, "receive window before the first command"),
    },
    "actions": {
        "usf_set": Key(_list(int), _SPACE.sf_set, _sf_domain, "spreading factors, shared by uplink and downlink"),
        "power_set": Key(_list(float), _SPACE.power_set, None, "transmit powers in dBm"),
        "window_set": Key(_list(int), _SPACE.window_set, _positive, "receive window sizes in symbols"),
    },
    "env": {
        "trade_off_lambda": Key(float, 0.5, _unit, "weight of the historical PDR in the reward"),
        "history_smoothing": Key(float, 1.0, _positive, "Laplace pseudo-count of the history table"),
    },
    "heat": {
        "rho": Key(float, 0.7, _expectile, "expectile of the offline value fit"),
        "alpha": Key(float, 0.05, _non_negative, "entropy lesson weight"),
        "beta_off": Key(float, 1.0, _non_negative, "offline lesson weight"),
        "gamma0": Key(float, 0.5, _open_unit, "initial discount"),
        "gamma_max": Key(float, 0.99, _open_unit, "final discount"),
        "gamma_steps": Key(int, 1000, _non_negative, "online updates of the discount ramp"),
        "lr": Key(float, 3e-4, _positive, "Adam learning rate"),
        "offline_steps_per_online": Key(int, 1, _non_negative, "offline updates per online update"),
        "pretrain_steps": Key(int, 300, _non_negative, "offline updates before the online phase"),
        "lesson_on_mode": Key(str, "expected", _choice("expected", "sample"), "online lesson estimator"),
        "alg2_literal_sign": Key(_bool, False, None, "use on - off instead of on + off in the actor loss"),
        "encoder_layers": Key(int, 2, _non_negative, "encoder blocks"),
        "model_dim": Key(int, 32, _positive, "encoder width"),
        "heads": Key(int, 2, _positive, "attention heads"),
        "ff_dim": Key(int, 64, _positive, "encoder feed-forward width"),
        "act_mode": Key(str, "sample", _choice("sample", "greedy"), "action selection during runs"),
    },
    "adr": {
        "window": Key(int, 20, _positive, "SNR history length"),
        "initial_margin_db": Key(float, 10.0, None, "starting link margin"),
        "step_db": Key(float, 3.0, _positive, "dB per SF/power step"),
        "margin_step_db": Key(float, 3.0, _positive, "margin adaptation step"),
        "margin_min_db": Key(float, 0.0, None, "lower margin bound"),
        "margin_max_db": Key(float, 30.0, None, "upper margin bound"),
        "low_loss": Key(float, 0.10, _unit, "loss rate below which the margin shrinks"),
        "high_loss": Key(float, 0.30, _unit, "loss rate above which the margin grows"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
        for section, kv in self.values.items():
            merged[section].update(kv)
        self.values = merged

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key {section}.{key}")
        self.values[section][key] = value

    # -- typed views ----------------------------------------------------------
    @property
    def experiment(self) -> dict:
        return self.values["experiment"]

    @property
    def grid(self) -> list[tuple[int, float]]:
        return [(n, d) for n in self.experiment["nodes"] for d in self.experiment["delta"]]

    def link(self) -> LinkBudgetParams:
        return LinkBudgetParams(**{f.name: self.values["phy"][f.name] for f in fields(LinkBudgetParams)})

    def mac(self) -> MacConfig:
        return MacConfig(**{f.name: self.values["mac"][f.name] for f in fields(MacConfig)})

    def space(self) -> ActionSpace:
        a = self.values["actions"]
        return ActionSpace(tuple(float(p) for p in a["power_set"]), tuple(a["window_set"]), tuple(a["usf_set"]))

    def sim_kwargs(self) -> dict:
        g = self.values["gateway"]
        interval = self.experiment["metric_interval_s"] or None
        return dict(
            link=self.link(), mac=self.mac(), space=self.space(),
            half_duplex=g["half_duplex"], n_demodulators=g["n_demodulators"], metric_interval_s=interval,
        )

    def agent_params(self) -> dict:
        return dict(self.values["heat"], space=self.space())

    def adr_params(self) -> dict:
        a = dict(self.values["adr"])
        a["margin_bounds"] = (a.pop("margin_min_db"), a.pop("margin_max_db"))
        return a


def _key_lines(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    lines, section = {}, "experiment"
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m:
            lines.setdefault((section, m.group(1).strip()), i)
    return lines


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
    parser.optionxform = str
    lines = text.splitlines()
    # implicit [experiment] for keys before the first header
    first_header = next((i for i, l in enumerate(lines) if l.strip().startswith("[")), len(lines))
    has_top = any(l.strip() and not l.strip().startswith(("#", ";")) for l in lines[:first_header])
    body = ("[__top__]\n" + text) if has_top else text
    offset = 1 if has_top else 0
    try:
        parser.read_string(body, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno - offset}: expected a [section] header or key = value") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}: line {lineno - offset}: malformed line {line.strip()!r}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}: line {exc.lineno - offset}: duplicate key {exc.option!r}") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}: line {(exc.lineno or 0) - offset}: duplicate section [{exc.section}]") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    where = _key_lines(text)
    values: dict = {}
    for section in parser.sections():
        name = "experiment" if section == "__top__" else section
        if name not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{name}]; known: {', '.join(SCHEMA)}")
        for key, raw in parser.items(section):
            line = where.get((name, key))
            at = f"{source}: line {line}" if line else source
            spec = SCHEMA[name].get(key)
            if spec is None:
                raise ConfigError(f"{at}: unknown key {key!r} in [{name}]")
            try:
                value = spec.parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{at}: key {key!r}: cannot parse {raw!r}: {exc}") from None
            problem = spec.check(value) if spec.check else None
            if problem:
                raise ConfigError(f"{at}: key {key!r}: {problem}")
            if name in values and key in values[name]:
                raise ConfigError(f"{at}: key {key!r} given twice")
            values.setdefault(name, {})[key] = value
    cfg = ExperimentConfig(values)
    _cross_checks(cfg, source)
    return cfg


def _cross_checks(cfg: ExperimentConfig, source: str) -> None:
    try:
        cfg.space()
    except ValueError as exc:
        raise ConfigError(f"{source}: [actions]: {exc}") from None
    heat = cfg.values["heat"]
    if heat["model_dim"] % heat["heads"]:
        raise ConfigError(f"{source}: [heat]: model_dim {heat['model_dim']} not divisible by heads {heat['heads']}")
    adr = cfg.values["adr"]
    if adr["margin_min_db"] > adr["margin_max_db"]:
        raise ConfigError(f"{source}: [adr]: margin_min_db exceeds margin_max_db")
    if adr["low_loss"] > adr["high_loss"]:
        raise ConfigError(f"{source}: [adr]: low_loss exceeds high_loss")


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def describe() -> str:
    """Every section and key with its default, one per line."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for name, key in keys.items():
            default = key.default
            if isinstance(default, tuple):
                default = ", ".join(str(x) for x in default)
            out.append(f"{name} = {default}    # {key.doc}")
        out.append("")
    return "\n".join(out)
