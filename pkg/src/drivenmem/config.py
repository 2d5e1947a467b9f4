"""Strict scenario configuration files and reproducibility manifests.

Configs are flat sectioned ``key = value`` text.  Every physical quantity
carries a unit suffix: ``MHz`` for angular frequencies, ``us`` for times, or
``dl`` for dimensionless values quoted in units of the ensemble width.  The
``MHz``/``us`` pair is interpreted the way the source analysis multiplies
frequencies by times, i.e. 1 MHz is one radian per microsecond; converting a
config to internal units therefore never introduces factors of two pi.
Unknown sections or keys are rejected, and parsing reports every error with
its line number instead of stopping at the first.
"""

import hashlib
import json
import re
from dataclasses import dataclass, field, fields

from .errors import ValidationError
from .memory import MemoryScenario

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "RunManifest"]


class ConfigError(ValidationError):
    """Carries every problem found in a config, each as ``(line, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems)
        super().__init__(f"invalid configuration: {lines}")


_FREQUENCY_KEYS = {"width", "center", "gamma", "kappa", "b_min", "b_max",
                   "omega", "window_lo", "window_hi", "resolution"}
_TIME_KEYS = {"target_time", "horizon"}
_INT_KEYS = {"n_spins", "n_times", "seed", "threads"}
_STRING_KEYS = {"system", "scheme", "method", "delta"}

_SCHEMA = {
    "units": {"system"},
    "ensemble": {"width", "center", "gamma", "n_spins", "scheme",
                 "window_lo", "window_hi"},
    "drive": {"b_min", "b_max"},
    "cavity": {"kappa"},
    "run": {"omega", "delta", "target_time", "horizon", "n_times",
            "method", "seed", "threads", "resolution"},
}

_DEFAULTS = {
    ("ensemble", "center"): 0.0,
    ("ensemble", "gamma"): 0.0,
    ("ensemble", "n_spins"): 4000,
    ("ensemble", "scheme"): "quantile",
    ("run", "delta"): 0.0,
    ("run", "target_time"): 50.0,
    ("run", "horizon"): 50.0,
    ("run", "n_times"): 801,
    ("run", "method"): "eigen",
    ("run", "seed"): 0,
    ("run", "threads"): 1,
    ("run", "resolution"): 0.0,
}

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved configuration, all quantities in internal width units."""

    system: str
    width_mhz: float | None
    width: float
    center: float
    gamma: float
    n_spins: int
    scheme: str
    window: tuple | None
    driven: bool
    b_min: float | None
    b_max: float | None
    kappa: float
    omega: float | None
    delta: object
    target_time: float
    horizon: float
    n_times: int
    method: str
    seed: int
    threads: int
    resolution: float

    def to_scenario(self) -> MemoryScenario:
        if self.omega is None:
            raise ValidationError("this command needs [run] omega in the config")
        return MemoryScenario(
            kind="driven" if self.driven else "lorentzian",
            width=1.0,
            collective_coupling=self.omega,
            kappa=self.kappa,
            gamma=self.gamma,
            delta=self.delta,
            b_min=self.b_min,
            b_max=self.b_max,
            target_time=self.target_time,
            horizon=self.horizon,
            n_times=self.n_times,
            n_spins=self.n_spins,
            scheme=self.scheme,
            window=self.window,
            method=self.method,
            threads=self.threads,
        )

    def resolved_dict(self) -> dict:
        """Physics content of the config, independent of the input unit system."""
        out = {}
        for f in fields(self):
            if f.name in ("system", "width_mhz"):
                continue
            out[f.name] = getattr(self, f.name)
        return out

    def canonical_text(self) -> str:
        """Serialize to canonical dimensionless config text (fixed order, 17 digits).

        The canonical form is always in width units, so a config quoted in
        MHz/us and its hand-converted dimensionless twin serialize (and hash)
        identically.
        """
        def q(value):
            return f"{value:.17g} dl"

        lines = ["[units]", "system = dimensionless", "", "[ensemble]"]
        lines.append(f"width = {q(self.width)}")
        lines.append(f"center = {q(self.center)}")
        lines.append(f"gamma = {q(self.gamma)}")
        lines.append(f"n_spins = {self.n_spins}")
        lines.append(f"scheme = {self.scheme}")
        if self.window is not None:
            lines.append(f"window_lo = {q(self.window[0])}")
            lines.append(f"window_hi = {q(self.window[1])}")
        if self.driven:
            lines += ["", "[drive]", f"b_min = {q(self.b_min)}", f"b_max = {q(self.b_max)}"]
        lines += ["", "[cavity]", f"kappa = {q(self.kappa)}"]
        lines += ["", "[run]"]
        if self.omega is not None:
            lines.append(f"omega = {q(self.omega)}")
        delta = self.delta if isinstance(self.delta, str) else q(self.delta)
        lines.append(f"delta = {delta}")
        lines.append(f"target_time = {self.target_time:.17g} dl")
        lines.append(f"horizon = {self.horizon:.17g} dl")
        lines.append(f"n_times = {self.n_times}")
        lines.append(f"method = {self.method}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"threads = {self.threads}")
        lines.append(f"resolution = {q(self.resolution)}")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _parse_number(raw, line, key, problems, unit_kind):
    """Split ``value unit`` and convert according to the declared system."""
    parts = raw.split()
    if len(parts) == 1 and _NUMBER.match(parts[0]):
        problems.append((line, f"{key}: missing unit suffix (MHz, us or dl)"))
        return None
    if len(parts) != 2:
        problems.append((line, f"{key}: expected '<number> <unit>', got {raw!r}"))
        return None
    num, unit = parts
    if not _NUMBER.match(num):
        problems.append((line, f"{key}: {num!r} is not a number"))
        return None
    allowed = {"frequency": ("MHz", "dl"), "time": ("us", "dl")}[unit_kind]
    if unit not in allowed:
        problems.append((line, f"{key}: unit {unit!r} not allowed "
                               f"(expected one of {allowed})"))
        return None
    return float(num), unit


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario config, reporting all errors at once."""
    problems = []
    seen = {}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append((lineno, f"malformed section header {line!r}"))
                section = None
                continue
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                problems.append((lineno, f"unknown section [{section}]"))
                section = None
            continue
        if "=" not in line:
            problems.append((lineno, f"expected 'key = value', got {line!r}"))
            continue
        if section is None:
            problems.append((lineno, "key outside any known section"))
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA[section]:
            problems.append((lineno, f"unknown key {key!r} in section [{section}]"))
            continue
        if (section, key) in seen:
            problems.append((lineno, f"duplicate key {key!r} in section [{section}]"))
            continue
        seen[(section, key)] = (lineno, value)

    def fetch(section, key, required=False):
        if (section, key) in seen:
            return seen.pop((section, key))
        if required:
            problems.append((0, f"missing required key {key!r} in section [{section}]"))
        return None

    # Units system
    system = "MHz-us"
    entry = fetch("units", "system")
    if entry is not None:
        _, value = entry
        if value not in ("MHz-us", "dimensionless"):
            problems.append((entry[0], f"system must be 'MHz-us' or 'dimensionless', got {value!r}"))
        else:
            system = value

    entry = fetch("ensemble", "width", required=True)
    width_pair = None
    if entry is not None:
        width_pair = _parse_number(entry[1], entry[0], "width", problems, "frequency")
    width_mhz = None
    if width_pair is not None:
        value, unit = width_pair
        if value <= 0:
            problems.append((entry[0], "width must be positive"))
        elif system == "MHz-us":
            if unit != "MHz":
                problems.append((entry[0], "width must be given in MHz under the MHz-us system"))
            else:
                width_mhz = value
        elif unit == "MHz":
            problems.append((entry[0], "MHz values are not allowed in a dimensionless config"))

    def to_internal(pair, kind, line, key):
        if pair is None:
            return None
        value, unit = pair
        if unit == "dl":
            return value
        if system == "dimensionless":
            problems.append((line, f"{key}: {unit} not allowed in a dimensionless config"))
            return None
        if width_mhz is None:
            return None  # width error already recorded
        if kind == "frequency":
            return value / width_mhz
        return value * width_mhz

    def grab_quantity(section, key, kind, required=False, default=None):
        entry = fetch(section, key, required=required)
        if entry is None:
            return default
        line, raw = entry
        pair = _parse_number(raw, line, key, problems, kind)
        out = to_internal(pair, kind, line, key)
        return default if out is None else out

    def grab_int(section, key, default=None, minimum=None):
        entry = fetch(section, key)
        if entry is None:
            return default
        line, raw = entry
        try:
            value = int(raw)
        except ValueError:
            problems.append((line, f"{key}: expected a bare integer, got {raw!r}"))
            return default
        if minimum is not None and value < minimum:
            problems.append((line, f"{key}: must be >= {minimum}"))
            return default
        return value

    center = grab_quantity("ensemble", "center", "frequency",
                           default=_DEFAULTS[("ensemble", "center")])
    gamma = grab_quantity("ensemble", "gamma", "frequency",
                          default=_DEFAULTS[("ensemble", "gamma")])
    n_spins = grab_int("ensemble", "n_spins",
                       default=_DEFAULTS[("ensemble", "n_spins")], minimum=2)
    scheme = _DEFAULTS[("ensemble", "scheme")]
    entry = fetch("ensemble", "scheme")
    if entry is not None:
        if entry[1] not in ("quantile", "grid"):
            problems.append((entry[0], f"scheme must be 'quantile' or 'grid', got {entry[1]!r}"))
        else:
            scheme = entry[1]
    window_lo = grab_quantity("ensemble", "window_lo", "frequency")
    window_hi = grab_quantity("ensemble", "window_hi", "frequency")
    window = None
    if (window_lo is None) != (window_hi is None):
        problems.append((0, "window_lo and window_hi must be given together"))
    elif window_lo is not None:
        if window_hi <= window_lo:
            problems.append((0, "window_hi must exceed window_lo"))
        else:
            window = (window_lo, window_hi)

    driven = any(key[0] == "drive" for key in seen)
    b_min = grab_quantity("drive", "b_min", "frequency") if driven else None
    b_max = grab_quantity("drive", "b_max", "frequency") if driven else None
    if driven:
        if b_min is None or b_max is None:
            problems.append((0, "a [drive] section needs both b_min and b_max"))
        elif b_min <= 0 or b_max < b_min:
            problems.append((0, "drive amplitudes need 0 < b_min <= b_max"))

    kappa = grab_quantity("cavity", "kappa", "frequency", default=0.0)
    for name, value in (("gamma", gamma), ("kappa", kappa)):
        if value is not None and value < 0:
            problems.append((0, f"negative rate: {name} must be non-negative"))

    omega = grab_quantity("run", "omega", "frequency")
    if omega is not None and omega <= 0:
        problems.append((0, "omega must be positive"))
    delta = _DEFAULTS[("run", "delta")]
    entry = fetch("run", "delta")
    if entry is not None:
        if entry[1] == "optimize":
            delta = "optimize"
        else:
            pair = _parse_number(entry[1], entry[0], "delta", problems, "frequency")
            value = to_internal(pair, "frequency", entry[0], "delta")
            if value is not None:
                delta = value
    target_time = grab_quantity("run", "target_time", "time",
                                default=_DEFAULTS[("run", "target_time")])
    horizon = grab_quantity("run", "horizon", "time",
                            default=_DEFAULTS[("run", "horizon")])
    if horizon is not None and horizon <= 0:
        problems.append((0, "horizon must be positive"))
    n_times = grab_int("run", "n_times", default=_DEFAULTS[("run", "n_times")], minimum=2)
    method = _DEFAULTS[("run", "method")]
    entry = fetch("run", "method")
    if entry is not None:
        if entry[1] not in ("eigen", "bromwich"):
            problems.append((entry[0], f"method must be 'eigen' or 'bromwich', got {entry[1]!r}"))
        else:
            method = entry[1]
    seed = grab_int("run", "seed", default=_DEFAULTS[("run", "seed")])
    threads = grab_int("run", "threads", default=_DEFAULTS[("run", "threads")], minimum=1)
    resolution = grab_quantity("run", "resolution", "frequency",
                               default=_DEFAULTS[("run", "resolution")])
    if resolution is not None and resolution < 0:
        problems.append((0, "negative rate: resolution must be non-negative"))

    if problems:
        raise ConfigError(sorted(problems))

    return ScenarioConfig(
        system=system,
        width_mhz=width_mhz,
        width=1.0,
        center=center,
        gamma=gamma,
        n_spins=n_spins,
        scheme=scheme,
        window=window,
        driven=driven,
        b_min=b_min,
        b_max=b_max,
        kappa=kappa,
        omega=omega,
        delta=delta,
        target_time=target_time,
        horizon=horizon,
        n_times=n_times,
        method=method,
        seed=seed,
        threads=threads,
        resolution=resolution,
    )


@dataclass
class RunManifest:
    """Record that makes a command's outputs reproducible bit for bit."""

    command: str
    config_hash: str
    resolved: dict
    seed: int
    outputs: list = field(default_factory=list)

    def add_output(self, path):
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            data = fh.read()
        digest.update(data)
        self.outputs.append({
            "path": str(path.name if hasattr(path, "name") else path),
            "sha256": digest.hexdigest(),
            "bytes": len(data),
        })

    def to_json(self) -> str:
        payload = {
            "command": self.command,
            "config_hash": self.config_hash,
            "resolved": self.resolved,
            "seed": self.seed,
            "outputs": self.outputs,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
