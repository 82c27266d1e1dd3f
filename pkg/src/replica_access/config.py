"""INI run configuration: one section per concern, unknown keys rejected with their line number.

Environment variables ``REPLICA_ACCESS__<SECTION>__<KEY>`` override file values.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .amp import AmpConfig
from .errors import ConfigError
from .model import REFERENCE_DISTANCES_KM, Scenario
from .replica.correlated import MonteCarlo

ENV_PREFIX = "REPLICA_ACCESS__"


def _floats(v):
    if isinstance(v, str):
        v = [x for x in re.split(r"[,\s]+", v.strip()) if x]
    if isinstance(v, (int, float)):
        v = [v]
    return [float(x) for x in v]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioSection(_Section):
    kind: Literal["isotropic", "correlated"] = "isotropic"
    n_groups: int = Field(5, ge=1)
    users_per_group: int = Field(2000, ge=1)
    n_antennas: int = Field(2, ge=1)
    alpha: list[float] = [0.575]
    activity_prob: float = Field(0.1, ge=0.0, le=1.0)
    pt_dbm: float = 33.0
    distances_km: list[float] = list(REFERENCE_DISTANCES_KM)
    distance_seed: Optional[int] = None
    bandwidth_mhz: float = Field(1.0, gt=0)
    psd_dbm_per_hz: float = -169.0
    center_angles_deg: list[float] = [45.0]
    angular_spread_deg: float = Field(1.0, gt=0)
    rank_energy_fraction: float = Field(0.999, gt=0, le=1)

    _lists = field_validator("alpha", "distances_km", "center_angles_deg", mode="before")(_floats)

    @field_validator("alpha")
    @classmethod
    def _positive(cls, v):
        if not v or any(a <= 0 for a in v):
            raise ValueError("alpha must be a non-empty list of positive values")
        return v


class SolverSection(_Section):
    nodes: int = Field(64, ge=16)
    mc_samples: int = Field(40_000, ge=10_000)
    mc_seed: int = 0
    n_grid: int = Field(2000, ge=50)
    threshold: Optional[float] = None
    roc_points: int = Field(41, ge=2)


class AmpSection(_Section):
    max_iters: int = Field(200, ge=1)
    damping: float = Field(1.0, gt=0, le=1)
    stop_tol: float = Field(1e-6, gt=0)
    noise_model: Literal["auto", "iso", "eigen"] = "auto"
    noise_update: Literal["empirical", "residual", "oracle"] = "empirical"


class SimulateSection(_Section):
    trials: int = Field(10, ge=1)
    seed: int = 0
    sweep_axis: Literal["alpha", "pilot_length", "power_dbm", "antennas"] = "alpha"
    sweep_values: Optional[list[float]] = None

    _lists = field_validator("sweep_values", mode="before")(lambda v: None if v in (None, "") else _floats(v))


class OutputSection(_Section):
    directory: str = "out"


class RunConfig(_Section):
    scenario: ScenarioSection = ScenarioSection()
    solver: SolverSection = SolverSection()
    amp: AmpSection = AmpSection()
    simulate: SimulateSection = SimulateSection()
    output: OutputSection = OutputSection()

    def scenario_obj(self, alpha=None) -> Scenario:
        s = self.scenario
        return Scenario(kind=s.kind, n_groups=s.n_groups, users_per_group=s.users_per_group,
                        n_antennas=s.n_antennas, alpha=s.alpha[0] if alpha is None else alpha,
                        activity_prob=s.activity_prob, pt_dbm=s.pt_dbm,
                        distances_km=tuple(s.distances_km), bandwidth_hz=s.bandwidth_mhz * 1e6,
                        psd_dbm_per_hz=s.psd_dbm_per_hz, center_angles_deg=tuple(s.center_angles_deg),
                        angular_spread_deg=s.angular_spread_deg,
                        rank_energy_fraction=s.rank_energy_fraction, distance_seed=s.distance_seed)

    def amp_config(self) -> AmpConfig:
        a = self.amp
        return AmpConfig(max_iters=a.max_iters, damping=a.damping, stop_tol=a.stop_tol,
                         noise_model=None if a.noise_model == "auto" else a.noise_model,
                         noise_update=a.noise_update)

    def monte_carlo(self) -> MonteCarlo:
        return MonteCarlo(self.solver.mc_samples, self.solver.mc_seed)

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(exclude={"output"}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _key_lines(text):
    """(section, key) -> line number, for error messages."""
    lines, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = i
        elif section and s and not s.startswith(("#", ";")) and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            lines[(section, key)] = i
    return lines


def load_config(path, env=None) -> RunConfig:
    env = os.environ if env is None else env
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    lines = _key_lines(text)
    data = {sec: dict(parser.items(sec)) for sec in parser.sections()}
    origin = {}
    for name, value in env.items():
        if name.startswith(ENV_PREFIX):
            parts = name[len(ENV_PREFIX):].lower().split("__")
            if len(parts) != 2:
                raise ConfigError(f"environment override {name}: expected {ENV_PREFIX}<SECTION>__<KEY>")
            data.setdefault(parts[0], {})[parts[1]] = value
            origin[(parts[0], parts[1])] = f"environment variable {name}"
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = [str(x) for x in err["loc"]]
            sec = loc[0] if loc else ""
            key = loc[1] if len(loc) > 1 else None
            where = origin.get((sec, key))
            if where is None:
                line = lines.get((sec, key)) or lines.get((sec, None))
                where = f"{path}:{line}" if line else str(path)
            msgs.append(f"{where}: {'.'.join(loc)}: {err['msg']}")
        raise ConfigError("\n".join(msgs)) from exc
