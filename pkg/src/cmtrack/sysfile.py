"""Reader for the INI-style system definition file.

Example::

    [system]
    n = 2
    m = 1
    p = 1
    f1 = x1*w1 + x2 + u1
    f2 = x2 + u1

    [trajectory]
    xd1 = 0
    xd2 = 0
    ud1 = 0

    [disturbance]
    w1 = -2                  # or: samples:wind.csv  (columns t,value)

    [synthesis]
    eigenvalues = -1, -1     # or: auto
    margin = 0.1
    l2 = 1, 0                # optional virtual-input columns (m < n)

    [simulate]
    x0 = 1, 1
    T = 20
    dt = 1e-3
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .augment import FixedColumns
from .expr import ExpressionError, parse
from .model import ModelError, SampledSignal, SystemModel


class SystemFileError(ValueError):
    pass


@dataclass
class SystemSpec:
    model: SystemModel
    eigenvalues: tuple[float, ...] | None = None
    margin: float = 0.1
    columns: FixedColumns | None = None
    column_sources: list = field(default_factory=list)
    kappa: float = 1.0
    x0: np.ndarray | None = None
    T: float = 20.0
    dt: float = 1e-3
    eps: float | None = None
    hold: float | None = None
    N_check: int = 200
    bound_C: float = 10.0
    text: str = ""


def _reader() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    return cp


def _floats(value: str, where: str) -> list[float]:
    try:
        return [float(s) for s in value.replace(",", " ").split()]
    except ValueError:
        raise SystemFileError(f"{where}: expected a list of numbers, got {value!r}") from None


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except ValueError:
        raise SystemFileError(f"[{section}] {key}: cannot read {raw!r}") from None


def _expr(cp, section, key):
    if not cp.has_option(section, key):
        raise SystemFileError(f"[{section}] missing {key}")
    src = cp.get(section, key)
    try:
        return parse(src)
    except ExpressionError as exc:
        raise SystemFileError(f"[{section}] {key}: {exc}") from None


def _sampled(path: str, base_dir: str) -> SampledSignal:
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    try:
        data = np.genfromtxt(full, delimiter=",", names=True)
    except OSError as exc:
        raise SystemFileError(f"cannot read samples file {full}: {exc}") from None
    if data.dtype.names is None or not {"t", "value"} <= set(data.dtype.names):
        raise SystemFileError(f"{full}: need a header with columns t,value")
    try:
        return SampledSignal(data["t"], data["value"])
    except ModelError as exc:
        raise SystemFileError(f"{full}: {exc}") from None


def loads(text: str, base_dir: str = ".") -> SystemSpec:
    cp = _reader()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SystemFileError(f"malformed system file: {exc}") from None
    if not cp.has_section("system"):
        raise SystemFileError("missing [system] section")

    n = _get(cp, "system", "n", int, None)
    m = _get(cp, "system", "m", int, None)
    p = _get(cp, "system", "p", int, 0)
    if n is None or m is None:
        raise SystemFileError("[system] needs n and m")
    f = [_expr(cp, "system", f"f{i + 1}") for i in range(n)]
    xd = [_expr(cp, "trajectory", f"xd{i + 1}") for i in range(n)]
    ud = [_expr(cp, "trajectory", f"ud{i + 1}") for i in range(m)]
    w = []
    for i in range(p):
        key = f"w{i + 1}"
        raw = cp.get("disturbance", key, fallback=None)
        if raw is None:
            raise SystemFileError(f"[disturbance] missing {key}")
        if raw.strip().startswith("samples:"):
            w.append(_sampled(raw.strip()[len("samples:"):].strip(), base_dir))
        else:
            w.append(_expr(cp, "disturbance", key))
    name = cp.get("system", "name", fallback="")
    try:
        model = SystemModel(f, xd, ud, w, name=name)
    except (ModelError, ExpressionError) as exc:
        raise SystemFileError(str(exc)) from None

    spec = SystemSpec(model=model, text=text)
    if cp.has_section("synthesis"):
        raw = cp.get("synthesis", "eigenvalues", fallback="auto").strip()
        if raw.lower() != "auto":
            spec.eigenvalues = tuple(_floats(raw, "[synthesis] eigenvalues"))
            if len(spec.eigenvalues) != n:
                raise SystemFileError(f"[synthesis] eigenvalues: need {n} values")
        spec.margin = _get(cp, "synthesis", "margin", float, spec.margin)
        spec.kappa = _get(cp, "synthesis", "kappa", float, spec.kappa)
        spec.N_check = _get(cp, "synthesis", "N_check", int, spec.N_check)
        cols = []
        for j in range(m + 1, n + 1):
            raw = cp.get("synthesis", f"l{j}", fallback=None)
            if raw is not None:
                cols.append([s.strip() for s in raw.split(",")])
        if cols:
            if len(cols) != n - m:
                raise SystemFileError(f"[synthesis] give all of l{m + 1}..l{n} or none")
            try:
                spec.columns = FixedColumns(cols, n)
            except (ModelError, ExpressionError) as exc:
                raise SystemFileError(f"[synthesis] augmentation columns: {exc}") from None
            spec.column_sources = cols
    if cp.has_section("simulate"):
        raw = cp.get("simulate", "x0", fallback=None)
        if raw is not None:
            x0 = np.array(_floats(raw, "[simulate] x0"))
            if x0.shape != (n,):
                raise SystemFileError(f"[simulate] x0: need {n} values")
            spec.x0 = x0
        spec.T = _get(cp, "simulate", "T", float, spec.T)
        spec.dt = _get(cp, "simulate", "dt", float, spec.dt)
        spec.eps = _get(cp, "simulate", "eps", float, spec.eps)
        spec.hold = _get(cp, "simulate", "hold", float, spec.hold)
        spec.bound_C = _get(cp, "simulate", "C", float, spec.bound_C)
    if not (spec.dt > 0 and spec.T >= spec.dt and math.isfinite(spec.T)):
        raise SystemFileError(f"[simulate] need dt > 0 and T >= dt (T={spec.T}, dt={spec.dt})")
    if not spec.margin > 0:
        raise SystemFileError("[synthesis] margin must be positive")
    if not spec.kappa > 0:
        raise SystemFileError("[synthesis] kappa must be positive")
    return spec


def load(path: str) -> SystemSpec:
    with open(path) as fh:
        text = fh.read()
    return loads(text, os.path.dirname(os.path.abspath(path)))
