"""Seeded simulation of y_{i,t+1} = rho y_{i,t} + eta_i + sigma u_{i,t}.

Draw order inside :func:`simulate` is fixed (effects, then the initial
regime, then the N x T error block) so a seed pins every number.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

ETA_KINDS = ("fixed-vector", "iid-normal", "scaled-to-omega")
INIT_KINDS = ("zero", "fixed-constant", "iid-normal", "stationary", "skewed-mass-at-zero")


@dataclass(frozen=True)
class EtaLaw:
    """How the individual effects are generated.

    kind:
      ``fixed-vector``    use ``values`` (length N) or the scalar ``value`` for everyone
      ``iid-normal``      N(mean, var)
      ``scaled-to-omega`` iid N(0, 1) rescaled so eta'eta / (sigma2 N) == omega2
    """

    kind: str = "scaled-to-omega"
    value: float = 0.0
    values: Optional[tuple[float, ...]] = None
    mean: float = 0.0
    var: float = 1.0
    omega2: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ETA_KINDS:
            raise ValueError(f"eta_law.kind must be one of {ETA_KINDS}, got {self.kind!r}")
        if self.kind == "iid-normal" and self.var < 0:
            raise ValueError("eta_law.var must be >= 0")
        if self.kind == "scaled-to-omega" and self.omega2 < 0:
            raise ValueError("eta_law.omega2 must be >= 0")


@dataclass(frozen=True)
class InitRegime:
    """Law of the first observed column y_{i,1}.

    ``stationary`` draws the unobserved y_{i,0} ~ N(eta_i / (1 - rho), sigma0_2)
    and takes one model step; ``sigma0_2`` defaults to sigma2 / (1 - rho^2).
    ``skewed-mass-at-zero`` sets y_{i,1} = 0 with probability p0 and a
    lognormal(0, scale) draw otherwise.
    """

    kind: str = "zero"
    k: float = 0.0
    sigma0_2: Optional[float] = None
    p0: float = 0.5
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in INIT_KINDS:
            raise ValueError(f"init_regime.kind must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.sigma0_2 is not None and self.sigma0_2 < 0:
            raise ValueError("init_regime.sigma0_2 must be >= 0")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("init_regime.p0 must lie in [0, 1]")
        if self.scale < 0:
            raise ValueError("init_regime.scale must be >= 0")


@dataclass(frozen=True)
class DgpConfig:
    rho_star: float
    sigma2_star: float
    N: int
    T: int
    eta_law: EtaLaw = field(default_factory=EtaLaw)
    init_regime: InitRegime = field(default_factory=InitRegime)
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.sigma2_star > 0):
            raise ValueError("sigma2_star must be > 0")
        if self.N < 3:
            raise ValueError("N must be >= 3")
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.init_regime.kind == "stationary" and not abs(self.rho_star) < 1:
            raise ValueError("stationary initial regime requires |rho_star| < 1")
        if self.eta_law.kind == "fixed-vector" and self.eta_law.values is not None:
            if len(self.eta_law.values) != self.N:
                raise ValueError("eta_law.values must have length N")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if d["eta_law"]["values"] is not None:
            d["eta_law"]["values"] = list(d["eta_law"]["values"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DgpConfig":
        d = dict(d)
        eta = dict(d.pop("eta_law", {}) or {})
        if eta.get("values") is not None:
            eta["values"] = tuple(float(v) for v in eta["values"])
        init = dict(d.pop("init_regime", {}) or {})
        return cls(eta_law=EtaLaw(**eta), init_regime=InitRegime(**init), **d)

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=int(seed))


@dataclass
class PanelData:
    """Outcomes y_{i,1..T+1} in ``Y_full``; the error draws are kept in ``u``.

    ``eta_true``, ``u`` and ``y0`` are absent for data read back from CSV.
    """

    Y_full: Array
    config: Optional[DgpConfig] = None
    eta_true: Optional[Array] = None
    u: Optional[Array] = None
    y0: Optional[Array] = None

    @property
    def y1(self) -> Array:
        return self.Y_full[:, 0]

    @property
    def Y(self) -> Array:
        return self.Y_full[:, 1:]

    @property
    def N(self) -> int:
        return self.Y_full.shape[0]

    @property
    def T(self) -> int:
        return self.Y_full.shape[1] - 1

    @property
    def zero_initial(self) -> bool:
        return bool(np.all(self.y1 == 0.0))

    def rotated(self, g: Array) -> "PanelData":
        """Data for g Y_full; effects and errors rotate along."""
        return PanelData(
            Y_full=g @ self.Y_full,
            config=self.config,
            eta_true=None if self.eta_true is None else g @ self.eta_true,
            u=None if self.u is None else g @ self.u,
            y0=None if self.y0 is None else g @ self.y0,
        )


def _draw_eta(cfg: DgpConfig, rng: np.random.Generator) -> Array:
    law = cfg.eta_law
    N = cfg.N
    if law.kind == "fixed-vector":
        if law.values is not None:
            return np.asarray(law.values, dtype=float)
        return np.full(N, float(law.value))
    if law.kind == "iid-normal":
        return law.mean + math.sqrt(law.var) * rng.standard_normal(N)
    z = rng.standard_normal(N)
    if law.omega2 == 0.0:
        return np.zeros(N)
    return z * math.sqrt(law.omega2 * cfg.sigma2_star * N / float(z @ z))


def stationary_sigma0_2(cfg: DgpConfig) -> float:
    s0 = cfg.init_regime.sigma0_2
    if s0 is not None:
        return float(s0)
    return cfg.sigma2_star / (1.0 - cfg.rho_star**2)


def simulate(config: DgpConfig) -> PanelData:
    rng = np.random.default_rng(config.seed)
    N, T = config.N, config.T
    rho = config.rho_star
    sigma = math.sqrt(config.sigma2_star)
    eta = _draw_eta(config, rng)

    init = config.init_regime
    y0 = None
    if init.kind == "zero":
        y1 = np.zeros(N)
    elif init.kind == "fixed-constant":
        y1 = np.full(N, float(init.k))
    elif init.kind == "iid-normal":
        s0 = 1.0 if init.sigma0_2 is None else init.sigma0_2
        y1 = math.sqrt(s0) * rng.standard_normal(N)
    elif init.kind == "stationary":
        s0 = stationary_sigma0_2(config)
        y0 = eta / (1.0 - rho) + math.sqrt(s0) * rng.standard_normal(N)
        u0 = rng.standard_normal(N)
        y1 = rho * y0 + eta + sigma * u0
    else:
        zero = rng.random(N) < init.p0
        draw = rng.lognormal(0.0, init.scale, N)
        y1 = np.where(zero, 0.0, draw)

    u = rng.standard_normal((N, T))
    Y_full = np.empty((N, T + 1))
    Y_full[:, 0] = y1
    for t in range(T):
        Y_full[:, t + 1] = rho * Y_full[:, t] + eta + sigma * u[:, t]
    return PanelData(Y_full=Y_full, config=config, eta_true=eta, u=u, y0=y0)


def difference_panel(data: PanelData) -> PanelData:
    """Subtract y_{i,1} from every period; the effect becomes eta - (1 - rho) y1."""
    y1 = data.y1.copy()
    Y_full = data.Y_full - y1[:, None]
    eta = None
    if data.eta_true is not None and data.config is not None:
        eta = data.eta_true - (1.0 - data.config.rho_star) * y1
    return PanelData(Y_full=Y_full, config=data.config, eta_true=eta, u=data.u, y0=None)


# -- files -----------------------------------------------------------------

PathLike = Union[str, Path]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_panel_csv(data: PanelData, path: PathLike) -> tuple[Path, Optional[Path]]:
    """Write ``id,y1,...,y{T+1}``; the DgpConfig (if any) goes to a sidecar .json."""
    path = Path(path)
    T1 = data.Y_full.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"y{t}" for t in range(1, T1 + 1)])
        for i, row in enumerate(data.Y_full, start=1):
            w.writerow([i] + [_fmt(v) for v in row])
    meta_path = None
    if data.config is not None:
        meta_path = path.with_suffix(".json")
        meta = {"schema_version": 1, "T": T1 - 1, "N": data.N, "dgp": data.config.to_dict()}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, meta_path


def read_panel_csv(path: PathLike) -> PanelData:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if header[0] != "id" or len(header) < 3:
        raise ValueError(f"{path}: header must be id,y1,...,y{{T+1}} with T >= 1")
    expected = [f"y{t}" for t in range(1, len(header))]
    if header[1:] != expected:
        raise ValueError(f"{path}: expected columns {expected}, got {header[1:]}")
    body = rows[1:]
    values = []
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            row = [float(v) for v in r[1:]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in row):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        values.append(row)
    if not values:
        raise ValueError(f"{path}: no data rows")
    Y_full = np.array(values, dtype=float)
    config = None
    meta_path = path.with_suffix(".json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if "dgp" in meta:
            config = DgpConfig.from_dict(meta["dgp"])
    return PanelData(Y_full=Y_full, config=config)
