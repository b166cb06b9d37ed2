"""Scenario files: TOML or JSON with topology, variances, noise, QoS, EH and solver blocks.

Every key is optional; missing keys take the default simulation values::

    [topology]
    M = 2
    pu_counts = [1, 1]
    ehr_counts_primary = [1, 1]
    Ns = 3
    Ks = 2
    pbs_antennas = 10
    cbs_antennas = 5

    [variances]            # per-entry variance of each CN(0, v I) link class
    h_P = 2.0
    f_S = 0.5
    q_P = 0.5
    h_S = 2.0
    g_Em = 1.5
    f_Em = 0.5
    q_El = 0.5
    g_El = 1.5

    [noise]                # dBm
    pu_dbm = -120.0
    su_dbm = -120.0
    ehr_dbm = -120.0

    [qos]                  # rates in bits/s/Hz (scalar or per-user list), powers in mW
    gamma_P = 2.0
    gamma_S = 1.0
    upsilon_mw = 10.0
    zeta_A1_mw = 15.0
    zeta_A2_mw = 5.0

    [eh]
    a = 1500.0
    b = 0.0022             # W
    p_max_mw = 24.0

    [solver]
    tolerance = 1e-4       # W
    max_iterations = 50
    restart_limit = 3
    rank_tolerance = 1e-6
    backend = "CLARABEL"
    randomization_trials = 1000

    [experiment]
    name = "custom"        # fig2a | fig2b | fig2c | custom
    schemes = ["noma-jamming", "noma-nojam", "oma-tdma"]
    trials = 100
    seed = 0
    sweep = "Ks"           # Ks | gamma_P | iterations
    values = [1, 2, 3, 4]
    out = "results"
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import (DEFAULT_VARIANCES, EhCircuitParams, EhParams, NetworkTopology, QosRequirements,
                    ValidationError, dbm_to_watt)
from .sca import Scheme, SolverSettings

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


BLOCKS = ("topology", "variances", "noise", "qos", "eh", "solver", "experiment")


@dataclass(frozen=True)
class Scenario:
    """Everything needed to generate and solve instances of one network configuration."""

    topology: NetworkTopology = field(default_factory=NetworkTopology.table2)
    variances: dict = field(default_factory=lambda: dict(DEFAULT_VARIANCES))
    noise_dbm: dict = field(default_factory=lambda: {"pu": -120.0, "su": -120.0, "ehr": -120.0})
    gamma_P: object = 2.0
    gamma_S: object = 1.0
    upsilon_mw: float = 10.0
    zeta_A1_mw: float = 15.0
    zeta_A2_mw: float = 5.0
    circuit: EhCircuitParams = field(default_factory=EhCircuitParams)
    settings: SolverSettings = field(default_factory=SolverSettings)

    @property
    def noise_w(self) -> dict:
        return {k: float(dbm_to_watt(v)) for k, v in self.noise_dbm.items()}

    def eh(self) -> EhParams:
        return EhParams.shared(self.topology, self.circuit)

    def requirements(self) -> QosRequirements:
        t = self.topology
        gp = self.gamma_P
        if isinstance(gp, (int, float)):
            gp = [[float(gp)] * n for n in t.pu_counts]
        gs = self.gamma_S
        if isinstance(gs, (int, float)):
            gs = [float(gs)] * t.Ns
        reqs = QosRequirements(
            gamma_P=tuple(tuple(float(g) for g in row) for row in gp),
            gamma_S=tuple(float(g) for g in gs),
            upsilon=tuple(tuple(self.upsilon_mw * 1e-3 for _ in range(n)) for n in t.pu_counts),
            zeta_A1=self.zeta_A1_mw * 1e-3,
            zeta_A2=self.zeta_A2_mw * 1e-3,
        )
        reqs.validate(t, self.eh())
        return reqs

    def with_Ks(self, Ks: int) -> "Scenario":
        return replace(self, topology=replace(self.topology, Ks=int(Ks)))

    def with_gamma_P(self, gamma: float) -> "Scenario":
        return replace(self, gamma_P=float(gamma))

    def to_dict(self) -> dict:
        t = self.topology
        s = self.settings
        return {
            "topology": {"M": t.M, "pu_counts": list(t.pu_counts),
                         "ehr_counts_primary": list(t.ehr_counts_primary), "Ns": t.Ns, "Ks": t.Ks,
                         "pbs_antennas": t.pbs_antennas, "cbs_antennas": t.cbs_antennas},
            "variances": dict(self.variances),
            "noise": {f"{k}_dbm": v for k, v in self.noise_dbm.items()},
            "qos": {"gamma_P": self.gamma_P, "gamma_S": self.gamma_S, "upsilon_mw": self.upsilon_mw,
                    "zeta_A1_mw": self.zeta_A1_mw, "zeta_A2_mw": self.zeta_A2_mw},
            "eh": {"a": self.circuit.a, "b": self.circuit.b, "p_max_mw": self.circuit.p_max * 1e3},
            "solver": {f.name: getattr(s, f.name) for f in fields(s)},
        }


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    _check_blocks(data)
    return data


def _check_blocks(data: dict):
    unknown = set(data) - set(BLOCKS)
    if unknown:
        raise ConfigError(f"unknown config blocks: {sorted(unknown)}")


def _pick(block: dict, allowed, name):
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return block


def scenario_from_dict(data: dict) -> Scenario:
    _check_blocks(data)
    base = Scenario()
    try:
        top = _pick(data.get("topology", {}), [f.name for f in fields(NetworkTopology)], "topology")
        td = base.to_dict()["topology"]
        td.update(top)
        topology = NetworkTopology(**td)

        var = _pick(data.get("variances", {}), DEFAULT_VARIANCES, "variances")
        variances = {**DEFAULT_VARIANCES, **{k: float(v) for k, v in var.items()}}
        if min(variances.values()) <= 0:
            raise ValidationError("variances must be > 0")

        nz = _pick(data.get("noise", {}), ("pu_dbm", "su_dbm", "ehr_dbm"), "noise")
        noise = {k: float(nz.get(f"{k}_dbm", v)) for k, v in base.noise_dbm.items()}

        q = _pick(data.get("qos", {}), ("gamma_P", "gamma_S", "upsilon_mw", "zeta_A1_mw", "zeta_A2_mw"),
                  "qos")
        e = _pick(data.get("eh", {}), ("a", "b", "p_max_mw"), "eh")
        circuit = EhCircuitParams(a=float(e.get("a", base.circuit.a)), b=float(e.get("b", base.circuit.b)),
                                  p_max=float(e.get("p_max_mw", base.circuit.p_max * 1e3)) * 1e-3)

        sv = _pick(data.get("solver", {}), [f.name for f in fields(SolverSettings)], "solver")
        settings = SolverSettings(**sv)

        scen = Scenario(topology, variances, noise, q.get("gamma_P", base.gamma_P),
                        q.get("gamma_S", base.gamma_S), float(q.get("upsilon_mw", base.upsilon_mw)),
                        float(q.get("zeta_A1_mw", base.zeta_A1_mw)),
                        float(q.get("zeta_A2_mw", base.zeta_A2_mw)), circuit, settings)
        scen.requirements()
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scen


def load_scenario(path=None) -> Scenario:
    if path is None:
        return Scenario()
    return scenario_from_dict(read_config_file(path))


def parse_schemes(value) -> list[Scheme]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    try:
        return [Scheme(v) for v in value]
    except ValueError as exc:
        raise ConfigError(f"unknown scheme in {value}; choose from {[s.value for s in Scheme]}") from exc
