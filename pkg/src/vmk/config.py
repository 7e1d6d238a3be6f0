"""Declarative experiment configuration.

Configs are YAML mappings with a grid section, exactly one model section
(affine or quadratic), and optional markowitz, mc, sweep, check and
output sections.  Everything is validated up front with the offending
key named, so a malformed file fails before any computation or output.
"""

import math
from types import SimpleNamespace

import numpy as np
import yaml

from .affine import AffineModel
from .errors import ConfigError
from .grid import TimeGrid, make_grid
from .kernels import ConstantKernel, DiagonalKernel, ExponentialKernel, FractionalKernel
from .quadratic import QuadraticModel, two_asset_model

_TOP_KEYS = {"grid", "affine", "quadratic", "markowitz", "mc", "sweep", "check", "output"}
_GRID_KEYS = {"T", "n"}
_AFFINE_KEYS = {"kernels", "drift", "nu", "rho", "theta", "g0", "rate", "x0"}
_QUAD_PRESET_KEYS = {"preset", "hurst", "eta", "leverage", "stock_corr", "theta", "y0", "rate", "x0"}
_QUAD_EXPLICIT_KEYS = {"kernel", "theta", "eta", "corr", "drift", "g0", "rate", "x0", "enforce_psd"}
_MARKOWITZ_KEYS = {"m", "x0"}
_MC_KEYS = {"paths", "seed", "antithetic", "dump_paths", "chunk"}
_SWEEP_KEYS = {"parameter", "values"}
_CHECK_KEYS = {"p", "a", "coarse_n", "c"}
_OUTPUT_KEYS = {"directory"}
_KERNEL_KEYS = {
    "fractional": {"type", "h", "scale"},
    "exponential": {"type", "beta", "scale"},
    "constant": {"type", "value", "matrix"},
    "diagonal": {"type", "components"},
}


def _require_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"section '{where}' must be a mapping, got {type(obj).__name__}")
    return obj

def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section '{where}'; allowed: {sorted(allowed)}")


def _scalar_kernel(spec: dict, where: str):
    spec = _require_mapping(spec, where)
    ktype = spec.get("type")
    if ktype not in ("fractional", "exponential", "constant"):
        raise ConfigError(f"'{where}.type' must be fractional, exponential or constant, got {ktype!r}")
    _check_keys(spec, _KERNEL_KEYS[ktype], where)
    if ktype == "fractional":
        if "h" not in spec:
            raise ConfigError(f"'{where}' needs key 'h'")
        return FractionalKernel(float(spec["h"]), scale=float(spec.get("scale", 1.0)))
    if ktype == "exponential":
        if "beta" not in spec:
            raise ConfigError(f"'{where}' needs key 'beta'")
        return ExponentialKernel(float(spec["beta"]), scale=float(spec.get("scale", 1.0)))
    return ConstantKernel(float(spec.get("value", 1.0)))


def _matrix_kernel(spec: dict, where: str):
    spec = _require_mapping(spec, where)
    ktype = spec.get("type")
    if ktype == "diagonal":
        _check_keys(spec, _KERNEL_KEYS["diagonal"], where)
        comps = spec.get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError(f"'{where}.components' must be a nonempty list")
        return DiagonalKernel([_scalar_kernel(c, f"{where}.components[{i}]") for i, c in enumerate(comps)])
    if ktype == "constant":
        _check_keys(spec, _KERNEL_KEYS["constant"], where)
        if "matrix" in spec:
            return ConstantKernel(np.asarray(spec["matrix"], dtype=float))
        return ConstantKernel(float(spec.get("value", 1.0)))
    return _scalar_kernel(spec, where)


def load_config(path: str) -> SimpleNamespace:
    """Parse and validate a config file; raises ConfigError on any defect."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    raw = _require_mapping(raw if raw is not None else {}, "<top level>")
    _check_keys(raw, _TOP_KEYS, "<top level>")
    if "grid" not in raw:
        raise ConfigError("missing required section 'grid'")
    grid_sec = _require_mapping(raw["grid"], "grid")
    _check_keys(grid_sec, _GRID_KEYS, "grid")
    if "T" not in grid_sec:
        raise ConfigError("'grid.T' is required")
    horizon = float(grid_sec["T"])
    if not math.isfinite(horizon) or horizon <= 0:
        raise ConfigError(f"'grid.T' must be a positive number, got {grid_sec['T']!r}")
    n = grid_sec.get("n")
    if n is None:
        n = int(round(200 * max(1.0, horizon)))
    n = int(n)
    if n < 2:
        raise ConfigError("'grid.n' must be at least 2")

    has_affine = "affine" in raw
    has_quadratic = "quadratic" in raw
    if has_affine == has_quadratic:
        raise ConfigError("exactly one of the sections 'affine' or 'quadratic' is required")

    if has_affine:
        sec = _require_mapping(raw["affine"], "affine")
        _check_keys(sec, _AFFINE_KEYS, "affine")
        for key in ("kernels", "theta"):
            if key not in sec:
                raise ConfigError(f"'affine.{key}' is required")
        if not isinstance(sec["kernels"], list) or not sec["kernels"]:
            raise ConfigError("'affine.kernels' must be a nonempty list")
        model_sec = dict(sec)
        model_kind = "affine"
    else:
        sec = _require_mapping(raw["quadratic"], "quadratic")
        if "preset" in sec:
            _check_keys(sec, _QUAD_PRESET_KEYS, "quadratic")
            if sec["preset"] != "two_asset":
                raise ConfigError(f"unknown quadratic preset {sec['preset']!r}; only 'two_asset' exists")
        else:
            _check_keys(sec, _QUAD_EXPLICIT_KEYS, "quadratic")
            for key in ("kernel", "theta", "eta", "corr"):
                if key not in sec:
                    raise ConfigError(f"'quadratic.{key}' is required (or use preset: two_asset)")
        model_sec = dict(sec)
        model_kind = "quadratic"

    mk = _require_mapping(raw.get("markowitz", {}), "markowitz")
    _check_keys(mk, _MARKOWITZ_KEYS, "markowitz")
    m_raw = mk.get("m", 1.05)
    m_values = [float(v) for v in (m_raw if isinstance(m_raw, list) else [m_raw])]
    if not m_values:
        raise ConfigError("'markowitz.m' must be a number or nonempty list")
    mk_x0 = mk.get("x0")

    mc = _require_mapping(raw.get("mc", {}), "mc")
    _check_keys(mc, _MC_KEYS, "mc")
    mc_ns = SimpleNamespace(
        paths=int(mc.get("paths", 10000)),
        seed=int(mc.get("seed", 0)),
        antithetic=bool(mc.get("antithetic", False)),
        dump_paths=int(mc.get("dump_paths", 0)),
        chunk=int(mc.get("chunk", 4096)),
    )
    if mc_ns.paths < 2:
        raise ConfigError("'mc.paths' must be at least 2")

    sweep = None
    if "sweep" in raw:
        sw = _require_mapping(raw["sweep"], "sweep")
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        if "parameter" not in sw or "values" not in sw:
            raise ConfigError("'sweep' needs both 'parameter' and 'values'")
        if not isinstance(sw["values"], list) or not sw["values"]:
            raise ConfigError("'sweep.values' must be a nonempty list")
        param = str(sw["parameter"])
        valid = {"T"} | set(model_sec.keys())
        if model_kind == "quadratic" and "preset" in model_sec:
            valid |= _QUAD_PRESET_KEYS - {"preset"}
        if param not in valid:
            raise ConfigError(
                f"'sweep.parameter' = {param!r} does not name an existing config key; "
                f"valid here: {sorted(valid)}"
            )
        sweep = SimpleNamespace(parameter=param, values=list(sw["values"]))

    chk = _require_mapping(raw.get("check", {}), "check")
    _check_keys(chk, _CHECK_KEYS, "check")
    check_ns = SimpleNamespace(
        p=float(chk.get("p", 3.0)),
        a=(None if chk.get("a") is None else float(chk.get("a"))),
        coarse_n=int(chk.get("coarse_n", 20)),
        c=float(chk.get("c", 1.0)),
    )

    out = _require_mapping(raw.get("output", {}), "output")
    _check_keys(out, _OUTPUT_KEYS, "output")

    return SimpleNamespace(
        horizon=horizon,
        n=n,
        model_kind=model_kind,
        model_sec=model_sec,
        m_values=m_values,
        mk_x0=mk_x0,
        mc=mc_ns,
        sweep=sweep,
        check=check_ns,
        out_dir=str(out.get("directory", "out")),
    )


def build_grid(cfg: SimpleNamespace) -> TimeGrid:
    return make_grid(cfg.horizon, cfg.n)


def _affine_from_section(sec: dict) -> AffineModel:
    kernels = [_scalar_kernel(k, f"affine.kernels[{i}]") for i, k in enumerate(sec["kernels"])]
    d = len(kernels)
    drift = np.asarray(sec.get("drift", np.zeros((d, d))), dtype=float)
    return AffineModel(
        kernels=tuple(kernels),
        drift=drift,
        nu=np.asarray(sec.get("nu", 1.0), dtype=float),
        rho=np.asarray(sec.get("rho", 0.0), dtype=float),
        theta=np.asarray(sec["theta"], dtype=float),
        g0=sec.get("g0", 0.04),
        rate=float(sec.get("rate", 0.0)),
        x0=float(sec.get("x0", 1.0)),
    )


def _quadratic_from_section(sec: dict) -> QuadraticModel:
    if "preset" in sec:
        kwargs = {}
        for key in ("hurst", "eta", "leverage", "theta", "y0"):
            if key in sec:
                val = sec[key]
                kwargs[key] = tuple(val) if isinstance(val, list) else (float(val), float(val))
        if "stock_corr" in sec:
            kwargs["stock_corr"] = float(sec["stock_corr"])
        if "rate" in sec:
            kwargs["rate"] = float(sec["rate"])
        if "x0" in sec:
            kwargs["x0"] = float(sec["x0"])
        return two_asset_model(**kwargs)
    kernel = _matrix_kernel(sec["kernel"], "quadratic.kernel")
    return QuadraticModel(
        kernel=kernel,
        theta=np.asarray(sec["theta"], dtype=float),
        eta=np.asarray(sec["eta"], dtype=float),
        corr=np.asarray(sec["corr"], dtype=float),
        drift=(None if sec.get("drift") is None else np.asarray(sec["drift"], dtype=float)),
        g0=sec.get("g0", 0.0),
        rate=float(sec.get("rate", 0.0)),
        x0=float(sec.get("x0", 1.0)),
        enforce_psd=bool(sec.get("enforce_psd", True)),
    )


def model_from_section(kind: str, sec: dict):
    """Instantiate a model from a raw config section (used by sweeps)."""
    if kind == "affine":
        return _affine_from_section(sec)
    return _quadratic_from_section(sec)


def build_model(cfg: SimpleNamespace):
    """Instantiate the configured model; returns (kind, model)."""
    return cfg.model_kind, model_from_section(cfg.model_kind, cfg.model_sec)


def wealth_x0(cfg: SimpleNamespace, model) -> float:
    return float(cfg.mk_x0) if cfg.mk_x0 is not None else float(model.x0)
