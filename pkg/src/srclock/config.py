"""Scenario configuration: flat key=value text (dotted sections) or JSON.

Frequencies and rates in the `params` section are entered in Hz and converted
to angular units according to the `params.apply_two_pi` flag (default true),
which records explicitly whether the 2pi prefix is applied.  Exceptions,
never scaled: n_atoms, detection_efficiency, durations (seconds) and
drive_strength (sqrt(rad/s)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .params import SystemParams

SCENARIOS = ("pulse-scan", "heterodyne", "coherent", "metrology", "oracle-check")

# params-section keys scaled by the two-pi flag (entered in Hz)
FREQUENCY_FIELDS = ("cavity_freq", "atom_detuning", "cavity_loss", "coupling",
                    "atom_decay", "pump_rate", "dephasing", "drive_detuning",
                    "lo_detuning")
PLAIN_FIELDS = ("n_atoms", "detection_efficiency", "pump_duration",
                "drive_strength", "drive_duration")

SWEEPABLE = tuple(f.name for f in dc_fields(SystemParams))


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_value(text: str):
    if "," in text:
        return [_parse_scalar(v) for v in text.split(",") if v.strip()]
    return _parse_scalar(text)


def parse_flat_config(text: str) -> dict:
    """Parse `section.key = value` lines into a nested dict."""
    tree: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        node = tree
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key.strip()!r} conflicts "
                                  "with an earlier scalar entry")
        node[parts[-1]] = _parse_value(value)
    return tree


def load_config_tree(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return parse_flat_config(text)


@dataclass
class ScenarioConfig:
    """Everything one scenario run needs, with defaults for the lab set."""

    scenario: str
    params: SystemParams = field(default_factory=SystemParams)
    sweep_field: str | None = None
    sweep_values: list = field(default_factory=list)
    n_traj: int = 200
    seed: int = 1
    dt: float = 1e-9
    t_end: float | None = None
    span: float = 1e-4
    spans: list = field(default_factory=lambda: [0.5e-4, 1e-4, 2e-4, 4e-4])
    cycle_time: float = 1.0
    n_cycles: int = 256
    max_m: int = 64
    record_every: int = 50
    out_dir: Path = Path("results")
    two_pi_applied: bool = True
    workers: int = 1
    raw_tree: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario '{self.scenario}'; "
                              f"choose one of {', '.join(SCENARIOS)}")
        if self.sweep_field is not None:
            if self.sweep_field not in SWEEPABLE:
                raise ConfigError(
                    f"sweep field '{self.sweep_field}' is not a system parameter")
            if not self.sweep_values:
                raise ConfigError("sweep requires a non-empty value list")

    def config_hash(self) -> str:
        import hashlib
        blob = json.dumps(self.raw_tree, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _build_params(tree: dict) -> tuple[SystemParams, bool]:
    section = dict(tree.get("params", {}))
    apply_two_pi = bool(section.pop("apply_two_pi", True))
    scale = 2.0 * math.pi if apply_two_pi else 1.0
    overrides = {}
    for key, value in section.items():
        if key in FREQUENCY_FIELDS:
            overrides[key] = float(value) * scale
        elif key in PLAIN_FIELDS:
            overrides[key] = int(value) if key == "n_atoms" else float(value)
        else:
            raise ConfigError(f"unknown params field '{key}'")
    return SystemParams(**overrides), apply_two_pi


def _sweep_scaled(field_name: str, values, two_pi: bool) -> list:
    if field_name == "n_atoms":
        return [int(v) for v in values]
    scale = 2.0 * math.pi if (two_pi and field_name in FREQUENCY_FIELDS) else 1.0
    return [float(v) * scale for v in values]


def config_from_tree(tree: dict, scenario: str | None = None) -> ScenarioConfig:
    params, two_pi = _build_params(tree)
    run = tree.get("run", {})
    met = tree.get("metrology", {})
    sweep = tree.get("sweep", {})
    scen = scenario or tree.get("scenario")
    if scen is None:
        raise ConfigError("scenario not given (config key 'scenario' or CLI)")
    extra = {k: v for k, v in sweep.items() if k not in ("field", "values")}
    if extra:
        raise ConfigError(f"unknown sweep keys: {sorted(extra)}")
    sweep_field = sweep.get("field")
    values = sweep.get("values", [])
    if not isinstance(values, list):
        values = [values]
    cfg = ScenarioConfig(
        scenario=str(scen),
        params=params,
        sweep_field=sweep_field,
        sweep_values=_sweep_scaled(sweep_field, values, two_pi) if sweep_field else [],
        n_traj=int(run.get("n_traj", 200)),
        seed=int(run.get("seed", 1)),
        dt=float(run.get("dt", 1e-9)),
        t_end=(float(run["t_end"]) if "t_end" in run else None),
        record_every=int(run.get("record_every", 50)),
        span=float(met.get("span", 1e-4)),
        spans=[float(s) for s in met.get("spans", [0.5e-4, 1e-4, 2e-4, 4e-4])],
        cycle_time=float(met.get("cycle_time", 1.0)),
        n_cycles=int(met.get("n_cycles", 256)),
        max_m=int(met.get("max_m", 64)),
        out_dir=Path(tree.get("out_dir", "results")),
        two_pi_applied=two_pi,
        raw_tree=tree,
    )
    return cfg


def load_config(path: str | Path, scenario: str | None = None) -> ScenarioConfig:
    return config_from_tree(load_config_tree(path), scenario)
