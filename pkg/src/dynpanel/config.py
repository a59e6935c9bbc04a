"""Versioned JSON config schemas for the command-line tool.

The pydantic models check shape and types and report field paths; the
package dataclasses they convert into enforce the numerical preconditions.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .dgp import DgpConfig
from .estimators import SearchConfig
from .likelihoods import Theta, Theta1
from .montecarlo import McConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A config file could not be parsed or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EtaLawModel(_Strict):
    kind: Literal["fixed-vector", "iid-normal", "scaled-to-omega"] = "scaled-to-omega"
    value: float = 0.0
    values: Optional[list[float]] = None
    mean: float = 0.0
    var: float = 1.0
    omega2: float = 1.0


class InitRegimeModel(_Strict):
    kind: Literal["zero", "fixed-constant", "iid-normal", "stationary", "skewed-mass-at-zero"] = "zero"
    k: float = 0.0
    sigma0_2: Optional[float] = None
    p0: float = 0.5
    scale: float = 1.0


class DgpModel(_Strict):
    rho_star: float
    sigma2_star: float
    N: int
    T: int
    eta_law: EtaLawModel = Field(default_factory=EtaLawModel)
    init_regime: InitRegimeModel = Field(default_factory=InitRegimeModel)
    seed: int = 0


class SearchModel(_Strict):
    rho_bounds: tuple[float, float] = (-0.95, 1.40)
    grid_points: int = 801
    gradient_tol: float = 1e-9
    max_refine_iters: int = 200
    dj_interval: Optional[float] = None


class SimulateFile(_Strict):
    schema_version: Literal[1]
    dgp: DgpModel
    output_name: str = "panel.csv"


class McFile(_Strict):
    schema_version: Literal[1]
    dgp: DgpModel
    estimators: list[str] = Field(default_factory=lambda: ["mile"])
    replications: int = 100
    collect: list[str] = Field(default_factory=lambda: ["estimates"])
    search: SearchModel = Field(default_factory=SearchModel)
    h: Optional[float] = None


class PointModel(_Strict):
    T: int
    rho: float
    sigma2: float
    omega2: Optional[float] = None
    delta: Optional[float] = None
    omega2_cond: Optional[float] = None
    y1_norm_bar2: Optional[float] = None


class GridModel(_Strict):
    T: list[int]
    rho: list[float]
    sigma2: list[float] = Field(default_factory=lambda: [1.0])
    omega2: Optional[list[float]] = None
    delta: Optional[list[float]] = None
    omega2_cond: Optional[list[float]] = None
    y1_norm_bar2: Optional[list[float]] = None


class AvarFile(_Strict):
    schema_version: Literal[1]
    point: Optional[PointModel] = None
    grid: Optional[GridModel] = None


def _format_validation(path: Union[str, Path], exc: ValidationError) -> str:
    lines = [f"{path}: invalid config"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def load_json(path: Union[str, Path]) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _parse(model, path, raw):
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(path, exc)) from None


def _build(what: str, path, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {what}: {exc}") from None


def _dgp(m: DgpModel, path, seed: Optional[int]) -> DgpConfig:
    d = m.model_dump()
    if seed is not None:
        d["seed"] = seed
    return _build("dgp", path, lambda: DgpConfig.from_dict(d))


def load_simulate(path, seed: Optional[int] = None) -> tuple[DgpConfig, str]:
    m = _parse(SimulateFile, path, load_json(path))
    return _dgp(m.dgp, path, seed), m.output_name


def load_mc(path, seed: Optional[int] = None) -> tuple[McConfig, Optional[float]]:
    m = _parse(McFile, path, load_json(path))
    dgp = _dgp(m.dgp, path, seed)
    search = _build("search", path, lambda: SearchConfig(**m.search.model_dump()))
    cfg = _build(
        "mc",
        path,
        lambda: McConfig(
            dgp=dgp,
            estimators=tuple(m.estimators),
            replications=m.replications,
            collect=tuple(m.collect),
            search=search,
        ),
    )
    return cfg, m.h


def _point_args(p: PointModel, path) -> dict[str, Any]:
    """Keyword arguments for asymptotics.avar_compare."""
    if p.T < 2:
        raise ConfigError(f"{path}: T must be >= 2, got {p.T}")
    cond = [p.delta, p.omega2_cond, p.y1_norm_bar2]
    if any(v is not None for v in cond):
        if any(v is None for v in cond):
            raise ConfigError(f"{path}: a conditional point needs delta, omega2_cond and y1_norm_bar2 together")
        th1 = _build("point", path, lambda: Theta1(p.rho, p.sigma2, p.delta, p.omega2_cond))
        diff = None
        if p.omega2 is not None:
            diff = _build("point", path, lambda: Theta(p.rho, p.sigma2, p.omega2))
        return {"theta1_star": th1, "T": p.T, "y1_norm_bar2": p.y1_norm_bar2, "theta_star_diff": diff}
    if p.omega2 is None:
        raise ConfigError(f"{path}: point needs omega2 (or the conditional triple)")
    th = _build("point", path, lambda: Theta(p.rho, p.sigma2, p.omega2))
    return {"theta1_star": None, "T": p.T, "theta_star_diff": th}


def load_avar(path) -> list[dict[str, Any]]:
    """One avar_compare argument set per point (a single point or the grid product)."""
    m = _parse(AvarFile, path, load_json(path))
    if (m.point is None) == (m.grid is None):
        raise ConfigError(f"{path}: give exactly one of 'point' or 'grid'")
    if m.point is not None:
        return [_point_args(m.point, path)]
    g = m.grid
    axes = {k: v for k, v in g.model_dump().items() if v is not None}
    keys = list(axes)
    points = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        points.append(_point_args(PointModel(**dict(zip(keys, combo))), path))
    return points
