"""Run configuration: flat ``[section]`` key-value files with a typed schema.

Example::

    [run]
    kind = converge
    seed = 0

    [geometry]
    shape = circle
    radius = 1.0
    delta = 0.32

    [sweep]
    eps = 0.08, 0.04, 0.02
"""

import configparser
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

KINDS = ("profile", "simulate", "mcf", "converge", "spectrum", "expansion")


def _floats(text):
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA = {
    "run": {"kind": (str, None), "seed": (int, 0)},
    "geometry": {
        "shape": (str, "circle"),
        "radius": (float, 1.0),
        "axes": (_floats, (1.0, 0.6)),
        "center": (_floats, (0.0, 0.0)),
        "delta": (float, None),
        "nodes": (int, 256),
    },
    "model": {
        "eps": (float, 0.04),
        "dt": (float, None),
        "nu_plus": (float, 1.0),
        "nu_minus": (float, 1.0),
        "S": (float, 1.0),
        "capillary": (str, "chemical"),
        "coupling": (str, "nsac"),
        "scheme": (str, "imex"),
        "velocity": (_floats, (0.0, 0.0)),
        "noise": (float, 0.0),
    },
    "grid": {
        "box": (float, None),
        "resolution": (float, 4.0),
        "periodic": (_bool, True),
        "stencil": (str, "spectral"),
    },
    "time": {
        "t_end": (float, None),
        "dt_factor": (float, 0.25),
        "save_every": (int, 10),
        "nodes": (int, 64),
    },
    "sweep": {
        "eps": (_floats, None),
        "dt": (_floats, None),
        "order_threshold": (float, 1.5),
    },
    "output": {"plots": (_bool, False)},
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values[section][key]`` holds typed values."""

    kind: str
    values: dict
    source: str = field(default="", compare=False)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    def delta(self):
        """Tube half-width: the configured value or a quarter of the minimal radius of curvature."""
        g = self.values["geometry"]
        if g["delta"] is not None:
            return g["delta"]
        return 0.25 * min_radius_of_curvature(g)

    def eps_values(self):
        sw = self.values["sweep"]["eps"]
        return tuple(sw) if sw else (self.values["model"]["eps"],)

    def as_dict(self):
        out = {}
        for sec, kv in self.values.items():
            out[sec] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
        return out

    def hash(self):
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def min_radius_of_curvature(geom):
    if geom["shape"] == "circle":
        return geom["radius"]
    a, b = geom["axes"]
    return min(a, b) ** 2 / max(a, b)


def _parse(parser):
    values = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError("unknown section", field=sec)
        for key in parser[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError("unknown key", field=f"{sec}.{key}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(sec, key):
                raw = parser.get(sec, key)
                try:
                    values[sec][key] = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"cannot parse {raw!r} ({exc})", field=f"{sec}.{key}") from None
            else:
                values[sec][key] = default
    return values


def _check_positive(values, sec, key, allow_none=True):
    v = values[sec][key]
    if v is None and allow_none:
        return
    vals = v if isinstance(v, tuple) else (v,)
    if v is None or any(not (np.isfinite(x) and x > 0) for x in vals):
        raise ConfigError("must be positive", field=f"{sec}.{key}")


def validate(kind, values):
    if kind not in KINDS:
        raise ConfigError(f"must be one of {', '.join(KINDS)}", field="run.kind")
    g = values["geometry"]
    if g["shape"] not in ("circle", "ellipse"):
        raise ConfigError("must be circle or ellipse", field="geometry.shape")
    if len(g["center"]) != 2:
        raise ConfigError("needs two components", field="geometry.center")
    if len(g["axes"]) != 2:
        raise ConfigError("needs two components", field="geometry.axes")
    _check_positive(values, "geometry", "radius")
    _check_positive(values, "geometry", "axes")
    _check_positive(values, "geometry", "delta")
    if g["nodes"] < 16:
        raise ConfigError("must be at least 16", field="geometry.nodes")
    m = values["model"]
    for key in ("eps", "dt", "nu_plus", "nu_minus", "S"):
        _check_positive(values, "model", key)
    if m["capillary"] not in ("chemical", "stress", "laplace"):
        raise ConfigError("must be chemical, stress or laplace", field="model.capillary")
    if m["coupling"] not in ("nsac", "ac"):
        raise ConfigError("must be nsac or ac", field="model.coupling")
    if m["scheme"] not in ("imex", "etdrk4"):
        raise ConfigError("must be imex or etdrk4", field="model.scheme")
    if len(m["velocity"]) != 2:
        raise ConfigError("needs two components", field="model.velocity")
    if m["noise"] < 0:
        raise ConfigError("must be nonnegative", field="model.noise")
    _check_positive(values, "grid", "box")
    _check_positive(values, "grid", "resolution")
    if values["grid"]["stencil"] not in ("fd2", "spectral"):
        raise ConfigError("must be fd2 or spectral", field="grid.stencil")
    for key in ("t_end", "dt_factor"):
        _check_positive(values, "time", key)
    if values["time"]["save_every"] < 1:
        raise ConfigError("must be at least 1", field="time.save_every")
    for key in ("eps", "dt"):
        v = values["sweep"][key]
        if v is not None and len(v) == 0:
            raise ConfigError("sweep list is empty", field=f"sweep.{key}")
        _check_positive(values, "sweep", key)
    if kind in ("converge", "spectrum") and (values["sweep"]["eps"] is None or len(values["sweep"]["eps"]) < 3):
        raise ConfigError("needs at least three values for a rate fit", field="sweep.eps")
    rmin = min_radius_of_curvature(g)
    delta = g["delta"] if g["delta"] is not None else 0.25 * rmin
    if 3.0 * delta >= rmin:
        raise ConfigError("3*delta must stay below the minimal radius of curvature", field="geometry.delta")
    if kind in ("simulate", "converge", "spectrum", "expansion"):
        eps_all = values["sweep"]["eps"] or (m["eps"],)
        for e in eps_all:
            if e > delta / 4.0:
                fld = "sweep.eps" if values["sweep"]["eps"] else "model.eps"
                raise ConfigError(f"eps={e:g} exceeds delta/4={delta / 4:g}", field=fld)


def parse_config(text, kind=None):
    """Parse and validate configuration text; ``kind`` overrides ``[run] kind``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    values = _parse(parser)
    file_kind = values["run"]["kind"]
    if kind is not None and file_kind is not None and file_kind != kind:
        raise ConfigError(f"file declares {file_kind!r} but {kind!r} was requested", field="run.kind")
    kind = kind or file_kind
    if kind is None:
        raise ConfigError("experiment kind is missing", field="run.kind")
    values["run"]["kind"] = kind
    validate(kind, values)
    return RunConfig(kind, values, text)


def load_config(path, kind=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), kind)


def default_config(kind):
    return parse_config(DEFAULTS.get(kind, ""), kind)


DEFAULTS = {
    "mcf": "[geometry]\nradius = 0.3\n[sweep]\ndt = 0.0018, 0.00045, 0.0001125\n",
    "simulate": ("[geometry]\nradius = 0.5\n[model]\neps = 0.03\nnu_plus = 1.0\nnu_minus = 0.1\n"
                 "[grid]\nbox = 1.6\nresolution = 3\n[time]\nt_end = 0.01\n"),
    "converge": ("[geometry]\nradius = 1.0\ndelta = 0.32\n[model]\ncoupling = ac\nscheme = etdrk4\n"
                 "[grid]\nbox = 2.8\n[sweep]\neps = 0.08, 0.04, 0.02\n"),
    "spectrum": ("[geometry]\nradius = 2.0\ndelta = 0.6\n[grid]\nbox = 5.4\nresolution = 3\n"
                 "[sweep]\neps = 0.1, 0.05, 0.025\n"),
    "expansion": "[geometry]\nradius = 1.0\n",
}


def rng(seed):
    """Counter-based generator keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed)))
