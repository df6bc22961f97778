"""Run configuration: defaults, sectioned INI files and CLI overrides."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

__all__ = ["RunConfig", "load_config", "parse_value"]


def _f(default, section):
    return field(default=default, metadata={"section": section})


@dataclass(frozen=True)
class RunConfig:
    # time discretization
    dt: float = _f(0.05, "time")
    T: float = _f(120.0, "time")
    # regime switching
    q_su: float = _f(0.08, "switching")
    q_us: float = _f(0.008, "switching")
    init: str = _f("S", "switching")
    # memory kernel
    alpha_s: float = _f(0.65, "kernel")
    theta_s: float = _f(0.35, "kernel")
    alpha_u: float = _f(0.65, "kernel")
    theta_u: float = _f(0.35, "kernel")
    K: int = _f(20, "kernel")
    t_min: float = _f(0.05, "kernel")
    t_max: float = _f(120.0, "kernel")
    soe_tol: float = _f(1e-3, "kernel")
    # dynamics
    beta: float = _f(1.5, "dynamics")
    kappa: float = _f(0.0, "dynamics")
    kappa_network: float = _f(0.02, "dynamics")
    rho_s: float = _f(0.5, "dynamics")
    rho_u: float = _f(2.2, "dynamics")
    excitation: str = _f("commuting", "dynamics")
    eta: float = _f(1.0, "dynamics")
    b_rel: float = _f(10.0, "dynamics")
    theta_ann: float = _f(5.0, "dynamics")
    # network
    graph: str = _f("erdos_renyi", "network")
    n: int = _f(40, "network")
    er_p: float = _f(0.15, "network")
    sw_k: int = _f(4, "network")
    sw_p: float = _f(0.1, "network")
    n_bands: int = _f(4, "network")
    # Monte Carlo and diagnostics
    n_paths: int = _f(100, "montecarlo")
    burst_paths: int = _f(250, "montecarlo")
    q_lo: float = _f(0.75, "montecarlo")
    q_hi: float = _f(0.995, "montecarlo")
    hill_k: int = _f(25, "montecarlo")
    # experiment sweeps
    sweep_alpha: tuple = _f((0.65, 0.75, 0.9), "sweeps")
    sweep_theta: tuple = _f((0.0, 0.1, 0.35), "sweeps")
    phase_q_su: tuple = _f((0.04, 0.08, 0.16), "sweeps")
    phase_q_us: tuple = _f((0.004, 0.008, 0.016, 0.032, 0.064), "sweeps")
    phase_paths: int = _f(80, "sweeps")
    topo_graphs: tuple = _f(("ring", "star", "erdos_renyi", "small_world"), "sweeps")
    topo_sizes: tuple = _f((40, 80, 160), "sweeps")
    # Hawkes micro-macro study
    hk_n: int = _f(4, "hawkes")
    hk_T: float = _f(50.0, "hawkes")
    hk_dt: float = _f(0.002, "hawkes")
    hk_q_su: float = _f(0.5, "hawkes")
    hk_q_us: float = _f(0.25, "hawkes")
    hk_mu_s: float = _f(0.5, "hawkes")
    hk_mu_u: float = _f(1.0, "hawkes")
    hk_branch_s: float = _f(0.3, "hawkes")
    hk_branch_u: float = _f(0.7, "hawkes")
    hk_rate: float = _f(1.0, "hawkes")
    hk_N_list: tuple = _f((25, 50, 100, 200, 400), "hawkes")
    hk_envs: int = _f(3, "hawkes")
    # run
    seed: int = _f(1, "run")
    out: str = _f("runs/out", "run")
    threads: int = _f(1, "run")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def result_dict(self) -> dict:
        """Everything that can influence output bytes (excludes out and threads)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.result_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self, fh) -> None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            v = getattr(self, f.name)
            cp.set(sec, f.name, ",".join(map(str, v)) if isinstance(v, tuple) else str(v))
        cp.write(fh)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        out = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                out[f.name] = tuple(v) if isinstance(f.default, tuple) else v
        return cls(**out)


def parse_value(name: str, text: str):
    """Parse ``text`` with the type of field ``name``'s default."""
    defaults = {f.name: f.default for f in fields(RunConfig)}
    if name not in defaults:
        raise KeyError(f"unknown config key {name!r}")
    d = defaults[name]
    if isinstance(d, tuple):
        items = [s.strip() for s in str(text).split(",") if s.strip()]
        kind = type(d[0])
        return tuple(kind(float(s)) if kind is int else kind(s) for s in items)
    if isinstance(d, bool):
        return str(text).lower() in ("1", "true", "yes")
    if isinstance(d, int):
        return int(text)
    if isinstance(d, float):
        return float(text)
    return str(text)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the INI file (any section), then ``overrides``."""
    values = {}
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise FileNotFoundError(path)
        for sec in cp.sections():
            for key, text in cp.items(sec):
                values[key] = parse_value(key, text)
    for key, v in (overrides or {}).items():
        values[key] = parse_value(key, v) if isinstance(v, str) else v
    return RunConfig(**values)
