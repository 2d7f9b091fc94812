"""Run configuration: defaults, INI files and provenance headers."""

import configparser
import hashlib
from dataclasses import dataclass, fields

from ..smc import QsiSettings, StoppingConfig
from ..testbed import PROBLEMS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "piston"
    batch_size: int = 1
    seed: int = 0
    n0: int = 0                  # 0 means 10 (d_X + d_S)
    particles: int = 250
    rho: float = 0.35
    kappa: float = 1.1
    tau_intermediate: float = 1.0 / 3.0
    tau_final: float = 0.2
    restart_low: float = 0.10
    restart_high: float = 0.75
    move_steps: int = 25
    a_target: float = 0.25
    gh_nodes: int = 10
    sobol_size: int = 512
    criterion_subset: int = 100
    inducing_size: int = 250
    n_starts: int = 100
    local_budget: int = 50
    lhs_trials: int = 1000
    budget: int = 1000
    max_restarts: int = 5
    reml_starts: int = 5
    xi_on_population: bool = True
    cloud_seed: int = 0
    error_samples: int = 10_000

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        try:
            self.to_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_settings(self):
        stop = StoppingConfig(
            tau_intermediate=self.tau_intermediate, tau_final=self.tau_final,
            restart_low=self.restart_low, restart_high=self.restart_high,
            rho=self.rho, kappa=self.kappa, move_steps=self.move_steps,
        )
        return QsiSettings(
            batch_size=self.batch_size, n0=self.n0 or None, particles=self.particles,
            sobol_size=self.sobol_size, criterion_subset=self.criterion_subset,
            inducing_size=self.inducing_size, n_starts=self.n_starts, local_budget=self.local_budget,
            gh_nodes=self.gh_nodes, lhs_trials=self.lhs_trials, budget=self.budget,
            max_restarts=self.max_restarts, a_target=self.a_target, reml_starts=self.reml_starts,
            xi_on_population=self.xi_on_population, stopping=stop,
        )

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def header(self):
        """Provenance lines: every field, in declaration order."""
        from .. import __version__

        return [("version", __version__)] + self.items()

    def digest(self):
        text = "\n".join(f"{k}={v!r}" for k, v in self.header())
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **kw):
        vals = dict(self.items())
        for k, v in kw.items():
            if k not in vals:
                raise ConfigError(f"unknown configuration key {k!r}")
            if v is not None:
                vals[k] = v
        return RunConfig(**vals)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    typ = _TYPES[key]
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def load_config(path, base=None):
    """Read ``key = value`` pairs from the [run] section of an INI file.

    Unknown sections or keys are errors.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    extra = set(parser.sections()) - {"run"}
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)} in {path}")
    vals = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in _TYPES:
                raise ConfigError(f"unknown configuration key {key!r} in {path}")
            vals[key] = _convert(key, raw)
    return (base or RunConfig()).replace(**vals)


def dump_config(cfg, path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in cfg.items()}
    with open(path, "w") as fh:
        parser.write(fh)
