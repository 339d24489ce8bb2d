"""Experiment configuration (TOML) parsing and validation."""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import operators
from .geometry import MeshError, read_mesh, structured_rectangle_mesh
from .hypotheses import Exponents, GrowthConstants
from .registry import FIELDS, REACTIONS, Context, known_params, make_field, make_reaction
from .solver import ProblemSpec, SolverOptions

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

_TOP = {"mesh", "operator", "exponents", "reaction", "constants", "solver", "audit", "analysis", "output"}
_OPERATOR_KINDS = ("p_laplacian", "pq_laplacian", "mean_curvature")


class ConfigError(ValueError):
    """Invalid configuration; `key` is the dotted path of the offending entry."""

    def __init__(self, key, message, path=None):
        self.key = key
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}[{key}] {message}")


class _Table:
    """Typed access to one config table with dotted-key error messages."""

    def __init__(self, data, prefix, path, allowed):
        if not isinstance(data, dict):
            raise ConfigError(prefix, "must be a table", path)
        self.data, self.prefix, self.path = data, prefix, path
        extra = set(data) - set(allowed)
        if extra:
            raise ConfigError(f"{prefix}.{sorted(extra)[0]}", "unknown key", path)

    def err(self, key, msg):
        return ConfigError(f"{self.prefix}.{key}", msg, self.path)

    def number(self, key, default=None, positive=False, integer=False):
        if key not in self.data:
            if default is ...:
                raise self.err(key, "is required")
            return default
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.err(key, f"must be a number, got {v!r}")
        if integer and int(v) != v:
            raise self.err(key, f"must be an integer, got {v!r}")
        if not math.isfinite(v):
            raise self.err(key, "must be finite")
        if positive and v <= 0:
            raise self.err(key, f"must be positive, got {v!r}")
        return int(v) if integer else float(v)

    def string(self, key, default=None, choices=None):
        if key not in self.data:
            if default is ...:
                raise self.err(key, "is required")
            return default
        v = self.data[key]
        if not isinstance(v, str):
            raise self.err(key, f"must be a string, got {v!r}")
        if choices is not None and v not in choices:
            raise self.err(key, f"must be one of {sorted(choices)}, got {v!r}")
        return v

    def boolean(self, key, default):
        v = self.data.get(key, default)
        if not isinstance(v, bool):
            raise self.err(key, f"must be true or false, got {v!r}")
        return v

    def number_list(self, key, default=None):
        if key not in self.data:
            return default
        v = self.data[key]
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise self.err(key, "must be a list of numbers")
        return [float(x) for x in v]

    def string_list(self, key, default=None, choices=None):
        if key not in self.data:
            return default
        v = self.data[key]
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            raise self.err(key, "must be a list of strings")
        if choices is not None:
            bad = [x for x in v if x not in choices]
            if bad:
                raise self.err(key, f"unknown entry {bad[0]!r}; expected one of {sorted(choices)}")
        return list(v)

    def sub(self, key, allowed):
        return _Table(self.data.get(key, {}), f"{self.prefix}.{key}", self.path, allowed)


@dataclass
class ExperimentConfig:
    raw: dict
    source: str | None
    mesh: object
    operator: object
    exponents: Exponents
    reaction: object
    reaction_name: str
    constants: GrowthConstants | None
    options: SolverOptions
    initial: tuple | None  # (name, value)
    audit: dict | None
    analysis: dict
    output: dict
    mesh_digest: str = ""
    _spec: ProblemSpec | None = field(default=None, repr=False)

    @property
    def spec(self):
        if self._spec is None:
            self._spec = ProblemSpec(self.mesh, self.operator, self.reaction, self.exponents, self.constants, self.options)
        return self._spec

    def digest(self, stage, seed=None):
        """Stable hash of the inputs relevant to a stage."""
        payload = {"config": self.raw, "mesh": self.mesh_digest, "stage": stage, "seed": seed}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<syntax>", str(exc), str(path)) from None
    return parse_config(raw, source=str(p), base_dir=p.parent)


def _mesh(tbl, base_dir):
    has_file = "file" in tbl.data
    has_rect = any(k in tbl.data for k in ("nx", "ny", "width", "height"))
    if has_file == has_rect:
        raise ConfigError(tbl.prefix, "give exactly one mesh source: 'file' or rectangle parameters (nx, ny)", tbl.path)
    if has_file:
        f = Path(tbl.string("file"))
        if not f.is_absolute() and base_dir is not None:
            f = Path(base_dir) / f
        try:
            text = f.read_text(encoding="utf-8")
            mesh = read_mesh(f)
        except OSError as exc:
            raise tbl.err("file", f"cannot read mesh file: {exc.strerror}") from None
        except MeshError as exc:
            raise tbl.err("file", f"invalid mesh: {exc}") from None
        return mesh, hashlib.sha256(text.encode()).hexdigest()
    nx, ny = tbl.number("nx", ..., positive=True, integer=True), tbl.number("ny", ..., positive=True, integer=True)
    w, h = tbl.number("width", 1.0, positive=True), tbl.number("height", 1.0, positive=True)
    return structured_rectangle_mesh(w, h, nx, ny), ""


def _operator(tbl):
    kind = tbl.string("kind", ..., choices=_OPERATOR_KINDS)
    p = tbl.number("p", ...)
    delta = tbl.number("delta", 1e-10)
    try:
        if kind == "pq_laplacian":
            return operators.pq_laplacian(p, tbl.number("q", ...), tbl.number("mu", ...), delta)
        return getattr(operators, kind)(p, delta)
    except ValueError as exc:
        raise ConfigError(tbl.prefix, str(exc), tbl.path) from None


def parse_config(raw, source=None, base_dir=None):
    """Validate a parsed TOML document and build the experiment objects."""
    _Table(raw, "config", source, _TOP)
    for key in ("mesh", "operator", "exponents", "reaction"):
        if key not in raw:
            raise ConfigError(key, "table is required", source)

    def table(key, allowed):
        return _Table(raw.get(key, {}), key, source, allowed)

    mesh, mesh_digest = _mesh(table("mesh", {"file", "nx", "ny", "width", "height"}), base_dir)
    fam = _operator(table("operator", {"kind", "p", "q", "mu", "delta"}))

    et = table("exponents", {"N", "q1", "q2"})
    try:
        exps = Exponents(fam.p, et.number("N", 2, integer=True), et.number("q1", ...), et.number("q2", ...))
    except ValueError as exc:
        raise ConfigError("exponents", f"Exponents invariant violated: {exc}", source) from None
    if exps.N != 2:
        raise ConfigError("exponents.N", "meshes are two-dimensional; N must be 2", source)

    rt = _Table(raw["reaction"], "reaction", source, {"name"} | _all_reaction_params())
    name = rt.string("name", ..., choices=REACTIONS)
    params = {}
    for k in rt.data:
        if k == "name":
            continue
        if k not in known_params(name):
            raise rt.err(k, f"is not a parameter of reaction {name!r}")
        params[k] = rt.number(k)
    x = mesh.nodes
    ctx = Context(fam, (float(x[:, 0].min()), float(x[:, 1].min()), float(x[:, 0].max()), float(x[:, 1].max())))
    reaction = make_reaction(name, params, ctx)

    constants = None
    if "constants" in raw:
        ct = table("constants", set(GrowthConstants.__dataclass_fields__))
        try:
            constants = GrowthConstants(**{k: ct.number(k) for k in ct.data})
        except ValueError as exc:
            raise ConfigError("constants", str(exc), source) from None

    st = table("solver", {"rtol", "atol", "max_newton", "max_picard", "armijo_c", "initial", "initial_value"})
    try:
        options = SolverOptions(
            rtol=st.number("rtol", 1e-10), atol=st.number("atol", 1e-12),
            max_newton=st.number("max_newton", 50, integer=True), max_picard=st.number("max_picard", 200, integer=True),
            armijo_c=st.number("armijo_c", 1e-4),
        )
    except ValueError as exc:
        raise ConfigError("solver", str(exc), source) from None
    init = st.string("initial", None, choices=FIELDS)
    initial = (init, st.number("initial_value", 0.0)) if init else None

    audit = None
    if "audit" in raw:
        at = table("audit", {"structure", "growth", "holder", "advisory"})
        audit = {
            "structure": at.boolean("structure", True),
            "growth": at.boolean("growth", True),
            "holder": at.boolean("holder", False),
            "advisory": at.string_list("advisory", []),
        }
        if audit["holder"] and (constants is None or None in (constants.holder_L, constants.holder_alpha, constants.M0)):
            raise ConfigError("audit.holder", "needs constants.holder_L, holder_alpha and M0", source)

    an = table("analysis", {"exact", "l2_threshold", "ladder", "tails", "trace"})
    analysis = {"exact": an.string("exact", None, choices=FIELDS), "l2_threshold": an.number("l2_threshold", None, positive=True)}
    if "ladder" in an.data:
        lt = an.sub("ladder", {"kinds", "alpha_cap", "q_tilde", "kappa0"})
        analysis["ladder"] = {
            "kinds": lt.string_list("kinds", ["domain", "boundary"], choices={"domain", "boundary"}),
            "alpha_cap": lt.number("alpha_cap", 400.0, positive=True),
            "q_tilde": lt.number("q_tilde", None, positive=True),
            "kappa0": lt.number("kappa0", None, positive=True),
        }
    if "tails" in an.data:
        tt = an.sub("tails", {"L", "G", "n_thresholds"})
        analysis["tails"] = {
            "L": tt.number_list("L"), "G": tt.number_list("G"),
            "n_thresholds": tt.number("n_thresholds", 20, positive=True, integer=True),
        }
    if "trace" in an.data:
        tr = an.sub("trace", {"p", "q_hat", "samples", "epsilons", "k_max"})
        eps = tr.number_list("epsilons")
        if eps is None:
            eps = [2.0**-k for k in range(tr.number("k_max", 10, integer=True) + 1)]
        analysis["trace"] = {
            "p": tr.number("p", fam.p, positive=True),
            "q_hat": tr.number("q_hat", ...),
            "samples": tr.string_list("samples", ["one", "x", "y", "xy", "coscos"], choices=FIELDS),
            "epsilons": eps,
        }

    ot = table("output", {"dir", "format"})
    output = {"dir": ot.string("dir", None), "format": ot.string("format", None, choices={"json", "csv", "both"})}

    return ExperimentConfig(raw, source, mesh, fam, exps, reaction, name, constants, options, initial,
                            audit, analysis, output, mesh_digest)


def _all_reaction_params():
    out = set()
    for _, keys in REACTIONS.values():
        out |= set(keys)
    return out


def initial_field(cfg):
    """Nodal values of the configured initial guess (None for the zero default)."""
    if cfg.initial is None:
        return None
    f = make_field(*cfg.initial)
    return f(cfg.mesh.nodes[:, 0], cfg.mesh.nodes[:, 1])
