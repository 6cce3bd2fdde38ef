"""Run configuration: flat key=value files with dotted section paths.

A configuration is a plain-text file of ``section.key = value`` lines
(``#`` comments and blank lines allowed).  :func:`parse_config` turns the
text into a dictionary, :func:`build_config` validates it into a typed
:class:`RunConfig`, and :func:`paper_preset` returns the built-in preset
reproducing the reference experiment end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .model import (
    ClosedFormParameter,
    NaturalSplineGrid,
    ParameterError,
    SplineParameter,
    default_initial_profile,
    default_mobility,
    default_potential,
)

__all__ = [
    "ConfigError",
    "ForwardBlock",
    "DataBlock",
    "InverseBlock",
    "OutputBlock",
    "RunConfig",
    "parse_config",
    "build_config",
    "config_from_file",
    "paper_preset",
    "config_text",
    "PROBLEM_KINDS",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


PROBLEM_KINDS = ("identify-f", "identify-b", "identify-joint")

_CATALOG_POTENTIALS = ("default",)
_CATALOG_MOBILITIES = ("default",)
_CATALOG_INITIALS = ("default", "constant")


@dataclass
class ForwardBlock:
    gamma: float = 0.003
    potential: str = "default"
    mobility: str = "default"
    initial: str = "default"
    initial_constant: float = 0.1
    n_cells: int = 200
    tau: float = 2e-5
    t_end: float = 0.02


@dataclass
class DataBlock:
    factor: int = 2
    delta: float = 0.0
    seed: int = 0
    window: tuple | None = (0.0, 0.02)
    times: tuple | None = None


@dataclass
class InverseBlock:
    kind: str = "identify-f"
    alpha: float | None = 1e-10
    alpha_grid: tuple | None = None
    sigma: float = 0.1
    threshold: float = 1e-3


@dataclass
class OutputBlock:
    directory: str = "out"
    formats: tuple = ("csv", "json")


@dataclass
class RunConfig:
    forward: ForwardBlock = field(default_factory=ForwardBlock)
    data: DataBlock = field(default_factory=DataBlock)
    inverse: InverseBlock = field(default_factory=InverseBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    # ---- materialized model ingredients -------------------------------
    def potential_fn(self):
        return _make_parameter(
            self.forward.potential, "forward.potential", _CATALOG_POTENTIALS,
            lambda: default_potential(),
        )

    def mobility_fn(self):
        return _make_parameter(
            self.forward.mobility, "forward.mobility", _CATALOG_MOBILITIES,
            lambda: default_mobility(),
        )

    def initial_fn(self):
        spec_str = self.forward.initial
        if spec_str == "default":
            return default_initial_profile
        if spec_str == "constant":
            value = self.forward.initial_constant
            return lambda x: np.full_like(np.asarray(x, dtype=float), value)
        raise ConfigError(
            f"forward.initial: unknown profile id {spec_str!r}"
        )

    def model_params(self):
        from .model import ModelParams

        return ModelParams(
            gamma=self.forward.gamma,
            b=self.mobility_fn(),
            F=self.potential_fn(),
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        # tuples -> lists for JSON friendliness
        return d


def _make_parameter(spec_str: str, path: str, catalog, default_factory):
    if spec_str == "default":
        return default_factory()
    if spec_str.startswith("spline:"):
        try:
            values = [float(v) for v in spec_str[len("spline:"):].split(",")]
        except ValueError as exc:
            raise ConfigError(f"{path}: malformed spline values ({exc})") from exc
        if len(values) < 2:
            raise ConfigError(f"{path}: spline needs at least two values")
        grid = NaturalSplineGrid(-1.0, 1.0, 2.0 / (len(values) - 1))
        try:
            return SplineParameter(grid, np.asarray(values))
        except ParameterError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(
        f"{path}: unknown id {spec_str!r} (catalog: {', '.join(catalog)}, "
        "or spline:v0,v1,...)"
    )


# ---------------------------------------------------------------------------
# parsing

def parse_config(text: str) -> dict:
    """Parse ``section.key = value`` lines into a flat string dictionary."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key or "." not in key:
            raise ConfigError(f"line {lineno}: key must be a dotted path, got {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _to_float(raw: str, path: str) -> float:
    try:
        v = float(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: expected a number, got {raw!r}") from exc
    if not np.isfinite(v):
        raise ConfigError(f"{path}: must be finite, got {raw!r}")
    return v


def _to_int(raw: str, path: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: expected an integer, got {raw!r}") from exc


def _to_range(raw: str, path: str) -> tuple:
    parts = raw.split(":")
    if len(parts) != 2:
        raise ConfigError(f"{path}: expected 'start:end', got {raw!r}")
    lo, hi = (_to_float(p, path) for p in parts)
    if not lo < hi:
        raise ConfigError(f"{path}: start must be below end, got {raw!r}")
    return (lo, hi)


def build_config(entries: dict) -> RunConfig:
    """Validate a parsed key/value mapping into a RunConfig."""
    cfg = RunConfig()
    known = set()

    def take(path, conv, setter):
        known.add(path)
        if path in entries:
            setter(conv(entries[path], path))

    fw = cfg.forward
    take("forward.gamma", _to_float, lambda v: setattr(fw, "gamma", v))
    take("forward.potential", lambda r, p: r, lambda v: setattr(fw, "potential", v))
    take("forward.mobility", lambda r, p: r, lambda v: setattr(fw, "mobility", v))
    take("forward.initial", lambda r, p: r, lambda v: setattr(fw, "initial", v))
    take("forward.initial_constant", _to_float,
         lambda v: setattr(fw, "initial_constant", v))
    take("forward.n_cells", _to_int, lambda v: setattr(fw, "n_cells", v))
    take("forward.tau", _to_float, lambda v: setattr(fw, "tau", v))
    take("forward.t_end", _to_float, lambda v: setattr(fw, "t_end", v))

    db = cfg.data
    take("data.factor", _to_int, lambda v: setattr(db, "factor", v))
    take("data.delta", _to_float, lambda v: setattr(db, "delta", v))
    take("data.seed", _to_int, lambda v: setattr(db, "seed", v))
    take("data.window", _to_range, lambda v: setattr(db, "window", v))

    def parse_times(raw, path):
        try:
            times = tuple(float(v) for v in raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"{path}: expected comma-separated numbers") from exc
        if not times:
            raise ConfigError(f"{path}: empty time list")
        return times

    take("data.times", parse_times, lambda v: setattr(db, "times", v))
    if "data.times" in entries:
        db.window = None if "data.window" not in entries else db.window
    if db.times is not None and "data.window" in entries:
        raise ConfigError("data.times: give either data.times or data.window, not both")

    iv = cfg.inverse
    take("inverse.kind", lambda r, p: r, lambda v: setattr(iv, "kind", v))

    def parse_alpha(raw, path):
        if raw == "auto":
            return None
        return _to_float(raw, path)

    take("inverse.alpha", parse_alpha, lambda v: setattr(iv, "alpha", v))

    def parse_grid(raw, path):
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{path}: expected 'high:low:count', got {raw!r}")
        hi = _to_float(parts[0], path)
        lo = _to_float(parts[1], path)
        count = _to_int(parts[2], path)
        if hi <= 0 or lo <= 0 or hi <= lo:
            raise ConfigError(f"{path}: need high > low > 0, got {raw!r}")
        if count < 10:
            raise ConfigError(f"{path}: need at least 10 grid points")
        return tuple(float(v) for v in np.logspace(np.log10(hi), np.log10(lo), count))

    take("inverse.alpha_grid", parse_grid, lambda v: setattr(iv, "alpha_grid", v))
    take("inverse.sigma", _to_float, lambda v: setattr(iv, "sigma", v))
    take("inverse.threshold", _to_float, lambda v: setattr(iv, "threshold", v))

    ob = cfg.output
    take("output.directory", lambda r, p: r, lambda v: setattr(ob, "directory", v))
    take(
        "output.formats",
        lambda r, p: tuple(x.strip() for x in r.split(",") if x.strip()),
        lambda v: setattr(ob, "formats", v),
    )

    unknown = sorted(set(entries) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    fw, db, iv, ob = cfg.forward, cfg.data, cfg.inverse, cfg.output
    if not (np.isfinite(fw.gamma) and fw.gamma > 0):
        raise ConfigError(f"forward.gamma: must be positive, got {fw.gamma}")
    if fw.potential != "default" and not fw.potential.startswith("spline:"):
        raise ConfigError(f"forward.potential: unknown id {fw.potential!r}")
    if fw.mobility != "default" and not fw.mobility.startswith("spline:"):
        raise ConfigError(f"forward.mobility: unknown id {fw.mobility!r}")
    if fw.initial not in _CATALOG_INITIALS:
        raise ConfigError(f"forward.initial: unknown id {fw.initial!r}")
    if not isinstance(fw.n_cells, int) or fw.n_cells < 4:
        raise ConfigError(f"forward.n_cells: need an integer >= 4, got {fw.n_cells}")
    if fw.tau <= 0:
        raise ConfigError(f"forward.tau: must be positive, got {fw.tau}")
    if fw.t_end <= 0:
        raise ConfigError(f"forward.t_end: must be positive, got {fw.t_end}")
    n_steps = fw.t_end / fw.tau
    if abs(round(n_steps) * fw.tau - fw.t_end) > 1e-8 * max(fw.t_end, 1.0):
        raise ConfigError(
            f"forward.t_end: {fw.t_end} is not an integer multiple of tau = {fw.tau}"
        )
    if db.factor < 1:
        raise ConfigError(f"data.factor: must be >= 1, got {db.factor}")
    if fw.n_cells % db.factor or round(n_steps) % db.factor:
        raise ConfigError(
            f"data.factor: {db.factor} must divide forward.n_cells "
            f"({fw.n_cells}) and the step count ({round(n_steps)})"
        )
    if db.delta < 0:
        raise ConfigError(f"data.delta: must be >= 0, got {db.delta}")
    if db.times is not None and any(t <= 0 or t > fw.t_end for t in db.times):
        raise ConfigError("data.times: every time must lie in (0, t_end]")
    if db.window is not None and db.window[1] > fw.t_end + 1e-12:
        raise ConfigError(
            f"data.window: end {db.window[1]} exceeds forward.t_end {fw.t_end}"
        )
    if iv.kind not in PROBLEM_KINDS:
        raise ConfigError(
            f"inverse.kind: {iv.kind!r} is not one of {', '.join(PROBLEM_KINDS)}"
        )
    if iv.alpha is not None and iv.alpha <= 0:
        raise ConfigError(f"inverse.alpha: must be positive, got {iv.alpha}")
    if iv.sigma <= 0 or iv.sigma > 2.0:
        raise ConfigError(f"inverse.sigma: need 0 < sigma <= 2, got {iv.sigma}")
    n_spans = 2.0 / iv.sigma
    if abs(round(n_spans) - n_spans) > 1e-9:
        raise ConfigError(
            f"inverse.sigma: {iv.sigma} must evenly divide the interval [-1, 1]"
        )
    if iv.threshold < 0:
        raise ConfigError(f"inverse.threshold: must be >= 0, got {iv.threshold}")
    if not ob.directory:
        raise ConfigError("output.directory: must not be empty")
    bad = [f for f in ob.formats if f not in ("csv", "json", "binary")]
    if bad:
        raise ConfigError(f"output.formats: unknown formats {', '.join(bad)}")


def config_from_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(parse_config(fh.read()))


def paper_preset() -> RunConfig:
    """The built-in preset reproducing the reference experiment setup."""
    cfg = RunConfig()
    cfg.forward = ForwardBlock(
        gamma=0.003, potential="default", mobility="default", initial="default",
        n_cells=200, tau=2e-5, t_end=0.02,
    )
    cfg.data = DataBlock(factor=2, delta=0.0, seed=0, window=(0.0, 0.008))
    cfg.inverse = InverseBlock(
        kind="identify-f", alpha=1e-10, alpha_grid=None, sigma=0.1, threshold=1e-3
    )
    cfg.output = OutputBlock(directory="out", formats=("csv", "json"))
    return cfg


def config_text(cfg: RunConfig) -> str:
    """Render a RunConfig back to its flat text form (config echo)."""
    lines = [
        f"forward.gamma = {cfg.forward.gamma!r}",
        f"forward.potential = {cfg.forward.potential}",
        f"forward.mobility = {cfg.forward.mobility}",
        f"forward.initial = {cfg.forward.initial}",
        f"forward.n_cells = {cfg.forward.n_cells}",
        f"forward.tau = {cfg.forward.tau!r}",
        f"forward.t_end = {cfg.forward.t_end!r}",
        f"data.factor = {cfg.data.factor}",
        f"data.delta = {cfg.data.delta!r}",
        f"data.seed = {cfg.data.seed}",
    ]
    if cfg.data.times is not None:
        lines.append("data.times = " + ",".join(repr(t) for t in cfg.data.times))
    elif cfg.data.window is not None:
        lines.append(f"data.window = {cfg.data.window[0]!r}:{cfg.data.window[1]!r}")
    lines += [
        f"inverse.kind = {cfg.inverse.kind}",
        "inverse.alpha = " + ("auto" if cfg.inverse.alpha is None
                              else repr(cfg.inverse.alpha)),
    ]
    if cfg.inverse.alpha_grid is not None:
        g = cfg.inverse.alpha_grid
        lines.append(
            f"inverse.alpha_grid = {float(g[0])!r}:{float(g[-1])!r}:{len(g)}"
        )
    lines += [
        f"inverse.sigma = {cfg.inverse.sigma!r}",
        f"inverse.threshold = {cfg.inverse.threshold!r}",
        f"output.directory = {cfg.output.directory}",
        "output.formats = " + ",".join(cfg.output.formats),
    ]
    return "\n".join(lines) + "\n"
