"""JSON run configuration shared by every CLI subcommand, and output writing."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import math
import platform
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .coupling import CoupledConfig, check_exponents
from .errors import ConfigError, IoError, RefusesOverwrite
from .experiments import SweepConfig
from .kernels import BCM, UNIFORM, KernelSpec
from .pde import Gaussian, Grid1D, InitialDensity, Mixture, UniformBox

VERSION = "0.1.0"


@dataclass(frozen=True)
class Config:
    """Flat parameter set; each subcommand reads the fields it needs."""

    master_seed: int = 0
    N: int = 256
    N_list: tuple[int, ...] = (64, 128, 256, 512)
    alpha: float = 0.25
    beta: float = 0.25
    delta: float | None = None
    eps: float | None = None
    eps_scale: float = 1.0
    sigma: float = 0.5
    T: float = 1.0
    dt: float = 0.01
    pde_dt: float = 1e-3
    save_every: int = 10
    reps: int = 200
    kernel: KernelSpec = field(default_factory=KernelSpec.bcm)
    rho0: InitialDensity = field(default_factory=Gaussian)
    grid: Grid1D = field(default_factory=lambda: Grid1D.symmetric(8.0, 1024))
    lam: float | None = None
    lip_const: float | None = None
    n_samples: int = 100000
    unsafe_raw_kernel: bool = False

    def __post_init__(self):
        check_exponents(self.alpha, self.beta)
        if self.delta is not None and not (self.delta > 0 and self.alpha + self.delta < 0.5):
            raise ConfigError(f"delta must satisfy 0 < delta and alpha + delta < 1/2, got {self.delta}", "delta")
        for name in ("sigma", "T"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", name)
        for name in ("dt", "pde_dt", "eps_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", name)
        if self.eps is not None and not self.eps > 0:
            raise ConfigError("eps must be positive", "eps")
        for name in ("N", "save_every", "n_samples", "reps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must lie in [0, 2^64)", "master_seed")
        object.__setattr__(self, "N_list", tuple(self.N_list))

    @property
    def lln_delta(self) -> float:
        return 0.5 * (0.5 - self.alpha) if self.delta is None else self.delta

    def coupled(self) -> CoupledConfig:
        return CoupledConfig(
            N=self.N, alpha=self.alpha, beta=self.beta, sigma=self.sigma, T=self.T, dt=self.dt,
            kernel=self.kernel, rho0=self.rho0, grid=self.grid, eps_scale=self.eps_scale,
            lam=self.lam, lip_const=self.lip_const,
        )

    def sweep(self) -> SweepConfig:
        return SweepConfig(
            N_list=self.N_list, alpha=self.alpha, beta=self.beta, eps_scale=self.eps_scale,
            sigma=self.sigma, T=self.T, dt=self.dt, reps=self.reps, kernel=self.kernel,
            rho0=self.rho0, grid=self.grid, master_seed=self.master_seed, lam=self.lam,
            lip_const=self.lip_const,
        )

    @property
    def cutoff(self) -> float:
        """Explicit ``eps`` if given, else ``eps_scale * N^-beta``."""
        return self.eps if self.eps is not None else self.eps_scale * self.N ** (-self.beta)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "kernel":
                v = kernel_to_dict(v)
            elif f.name == "rho0":
                v = density_to_dict(v)
            elif f.name == "grid":
                v = {"x_min": v.x_min, "x_max": v.x_max, "M": v.M}
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d


# ---------------------------------------------------------------------------
# nested objects


def kernel_to_dict(k: KernelSpec) -> dict:
    if k.kind == UNIFORM:
        return {"kind": UNIFORM, "R": k.R}
    return {"kind": BCM, "R": k.R, "h": list(k.h)}


def kernel_from_dict(d: Any, path: str = "kernel") -> KernelSpec:
    d = _expect_obj(d, path, {"kind", "R", "h"})
    kind = d.get("kind", BCM)
    R = _number(d.get("R", 1.0), f"{path}.R")
    if kind == UNIFORM:
        return KernelSpec.uniform(R)
    if kind == "zero":
        return KernelSpec.zero(R)
    if kind != BCM:
        raise ConfigError(f"unknown kernel kind {kind!r}; use 'bcm', 'uniform' or 'zero'", f"{path}.kind")
    h = d.get("h", "one")
    if not isinstance(h, str):
        if not isinstance(h, list):
            raise ConfigError("h must be a name or a list of coefficients", f"{path}.h")
        h = [_number(c, f"{path}.h") for c in h]
    return KernelSpec.bcm(R, h)


def density_to_dict(u: InitialDensity) -> dict:
    if isinstance(u, Gaussian):
        return {"kind": "gaussian", "mean": u.mean, "sd": u.sd}
    if isinstance(u, UniformBox):
        return {"kind": "uniform", "a": u.a, "b": u.b}
    if isinstance(u, Mixture):
        return {
            "kind": "mixture",
            "weights": list(u.weights),
            "components": [density_to_dict(c) for c in u.components],
        }
    raise ConfigError(f"cannot serialize density {u!r}", "rho0")


def density_from_dict(d: Any, path: str = "rho0") -> InitialDensity:
    d = _expect_obj(d, path, {"kind", "mean", "sd", "a", "b", "weights", "components"})
    kind = d.get("kind", "gaussian")
    if kind == "gaussian":
        return Gaussian(_number(d.get("mean", 0.0), f"{path}.mean"), _number(d.get("sd", 1.0), f"{path}.sd"))
    if kind == "uniform":
        return UniformBox(_number(d.get("a", -0.5), f"{path}.a"), _number(d.get("b", 0.5), f"{path}.b"))
    if kind == "mixture":
        comps = d.get("components")
        weights = d.get("weights")
        if not isinstance(comps, list) or not isinstance(weights, list) or len(comps) != len(weights) or not comps:
            raise ConfigError("mixture needs equal-length non-empty 'weights' and 'components'", path)
        return Mixture(
            tuple(_number(w, f"{path}.weights") for w in weights),
            tuple(density_from_dict(c, f"{path}.components[{i}]") for i, c in enumerate(comps)),
        )
    raise ConfigError(f"unknown density kind {kind!r}; use 'gaussian', 'uniform' or 'mixture'", f"{path}.kind")


def grid_from_dict(d: Any, path: str = "grid") -> Grid1D:
    d = _expect_obj(d, path, {"L", "x_min", "x_max", "M"})
    M = d.get("M", 1024)
    if not isinstance(M, int) or isinstance(M, bool):
        raise ConfigError(f"M must be an integer, got {M!r}", f"{path}.M")
    if "L" in d:
        if "x_min" in d or "x_max" in d:
            raise ConfigError("give either L or x_min/x_max", path)
        return Grid1D.symmetric(_number(d["L"], f"{path}.L"), M)
    return Grid1D(_number(d.get("x_min", -8.0), f"{path}.x_min"), _number(d.get("x_max", 8.0), f"{path}.x_max"), M)


def _expect_obj(d, path: str, allowed: set) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object, got {type(d).__name__}", path)
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown keys {extra}", path)
    return d


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path)
    return float(v)


# ---------------------------------------------------------------------------
# parsing

_NESTED = {"kernel": kernel_from_dict, "rho0": density_from_dict, "grid": grid_from_dict}
_INTS = {"master_seed", "N", "save_every", "reps", "n_samples"}
_OPTIONAL = {"delta", "eps", "lam", "lip_const"}


def config_from_dict(d: dict, overrides: dict | None = None) -> Config:
    """Validate a decoded JSON object; ``overrides`` (e.g. CLI flags) win over ``d``."""
    if not isinstance(d, dict):
        raise ConfigError("top level must be a JSON object", "")
    d = {**d, **(overrides or {})}
    names = {f.name for f in dataclasses.fields(Config)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", unknown[0])
    kw = {}
    for k, v in d.items():
        if k in _NESTED:
            kw[k] = _NESTED[k](v, k)
        elif k == "N_list":
            if not isinstance(v, list) or not all(isinstance(n, int) and not isinstance(n, bool) for n in v):
                raise ConfigError("N_list must be a list of integers", k)
            kw[k] = tuple(v)
        elif k == "unsafe_raw_kernel":
            if not isinstance(v, bool):
                raise ConfigError("must be true or false", k)
            kw[k] = v
        elif k in _INTS:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"expected an integer, got {v!r}", k)
            kw[k] = v
        elif k in _OPTIONAL and v is None:
            kw[k] = None
        else:
            kw[k] = _number(v, k)
    return Config(**kw)


def _locate(text: str, field_path: str | None) -> int | None:
    """Line of the first key along ``field_path`` (``a.b[2].c``) found in order in ``text``."""
    if not field_path:
        return None
    pos, line = 0, None
    for part in re.findall(r"[A-Za-z_][A-Za-z_0-9]*", field_path):
        m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def parse_config_text(text: str, overrides: dict | None = None) -> Config:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", "", exc.lineno) from None
    try:
        return config_from_dict(raw, overrides)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(exc.message, exc.field, _locate(text, exc.field)) from None


def parse_config(path: str | Path | None, overrides: dict | None = None) -> Config:
    """Read a JSON config file (``None`` means all defaults)."""
    if path is None:
        return config_from_dict({}, overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides)


def dump_config(cfg: Config) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# outputs


def fmt(v) -> str:
    """17 significant digits for floats so values round-trip exactly."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return repr(v)
    return f"{v:.17g}"


class OutputDir:
    """A run directory that refuses to clobber earlier results unless ``force`` is set."""

    def __init__(self, path: str | Path, force: bool = False):
        self.path = Path(path)
        self.force = force
        self.written: list[str] = []

    def check(self, names: Iterable[str]):
        clash = [n for n in names if (self.path / n).exists()]
        if clash and not self.force:
            raise RefusesOverwrite(f"{self.path} already holds {clash}; pass --force to overwrite")
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create {self.path}: {exc}") from exc

    def _write(self, name: str, text: str):
        try:
            (self.path / name).write_text(text)
        except OSError as exc:
            raise IoError(f"cannot write {self.path / name}: {exc}") from exc
        self.written.append(name)

    def csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence], master_seed: int):
        lines = [f"# chaoslab {VERSION} master_seed={master_seed}", ",".join(columns)]
        lines += [",".join(fmt(v) for v in row) for row in rows]
        self._write(name, "\n".join(lines) + "\n")

    def json(self, name: str, obj):
        self._write(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def manifest(self, cfg: Config, command: str, started: _dt.datetime, extra: dict | None = None):
        self.json(
            "manifest.json",
            {
                "command": command,
                "config": cfg.to_dict(),
                "master_seed": cfg.master_seed,
                "version": VERSION,
                "numpy": np.__version__,
                "python": platform.python_version(),
                "host": platform.node(),
                "platform": platform.platform(),
                "started": started.isoformat(),
                "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "outputs": sorted(self.written) + ["manifest.json"],
                **(extra or {}),
            },
        )


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Columns and float data of a file written by :meth:`OutputDir.csv`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    cols = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(cols))
    return cols, data


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else repr(v)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


