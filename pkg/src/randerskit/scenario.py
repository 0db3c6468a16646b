"""JSON scenarios: schema, validation and construction of the objects they describe."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, RandersError
from .fieldcore import Chart, MetricField, OneFormField, ScalarField, VectorField
from .metrics import RandersStructure, randers_from_fermat, randers_from_generic, randers_from_zermelo
from .shooting import ShootingConfig
from .spacetime import StationarySpacetime

_EXPR = {"type": ["string", "number"]}
_VEC = {"type": "array", "items": _EXPR, "minItems": 1}
_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_MATRIX = {"oneOf": [
    {"type": "array", "items": {"type": "array", "items": _EXPR}, "minItems": 1},
    {"type": "string", "description": "conformal factor: the metric is factor * identity"},
]}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "randerskit scenario",
    "type": "object",
    "required": ["chart", "metric"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "chart": {
            "type": "object",
            "required": ["dim"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 6},
                "lower": {"type": "array", "items": {"type": ["number", "null"]}},
                "upper": {"type": "array", "items": {"type": ["number", "null"]}},
                "periodic": {"type": "array", "items": {"oneOf": [{"type": "null"}, _POS]}},
            },
        },
        "metric": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["kind", "h", "omega"],
                 "properties": {"kind": {"const": "generic"}, "h": _MATRIX, "omega": _VEC}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "g", "W"],
                 "properties": {"kind": {"const": "zermelo"}, "g": _MATRIX, "W": _VEC}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "g0", "delta", "beta"],
                 "properties": {"kind": {"const": "fermat"}, "g0": _MATRIX, "delta": _VEC, "beta": _EXPR}},
            ]
        },
        "convex_function": _EXPR,
        "region": {"type": "object", "required": ["lower", "upper"], "additionalProperties": False,
                   "properties": {"lower": _POINT, "upper": _POINT}},
        "endpoints": {"type": "object", "required": ["p", "q"], "additionalProperties": False,
                      "properties": {"p": _POINT, "q": _POINT}},
        "geodesic": {"type": "object", "required": ["x", "y", "S"], "additionalProperties": False,
                     "properties": {"x": _POINT, "y": _POINT, "S": _POS,
                                    "convention": {"enum": ["randers", "riemannian", "fermat",
                                                            "randers-speed", "riemannian-speed"]}}},
        "observer": {"type": "object", "required": ["x0", "x1"], "additionalProperties": False,
                     "properties": {"x0": _POINT, "x1": _POINT, "t0": {"type": "number"}, "T": _POS}},
        "tolerances": {"type": "object", "additionalProperties": False, "properties": {
            "integrator": _POS, "miss": _POS, "newton": _POS, "dedup_radius": _POS, "dedup_energy": _POS,
            "nonconjugate_margin": _POS, "conjugate_margin": _POS}},
        "sampling": {"type": "object", "additionalProperties": False, "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "certificate_samples": {"type": "integer", "minimum": 16},
            "directions": {"type": "integer", "minimum": 4},
            "refine": {"type": "integer", "minimum": 1},
            "max_iterations": {"type": "integer", "minimum": 1}}},
        "emax": _POS,
    },
}

DEFAULTS = {
    "tolerances": {"integrator": 1e-9, "miss": 1e-7, "newton": 1e-9, "dedup_radius": 1e-4,
                   "dedup_energy": 1e-6, "nonconjugate_margin": 1e-4, "conjugate_margin": 1e-6},
    "sampling": {"seed": 0, "certificate_samples": 4096, "refine": 1, "max_iterations": 50},
}


def _path(error) -> str:
    out = ""
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (("." if out else "") + str(part))
    return out or "<root>"


def validate(data) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = []
        for err in errors:
            msg = err.message
            if err.validator == "oneOf" and _path(err) == "metric":
                kind = data.get("metric", {}).get("kind") if isinstance(data.get("metric"), dict) else None
                msg = (f"metric of kind {kind!r} needs keys " + {
                    "generic": "h, omega", "zermelo": "g, W", "fermat": "g0, delta, beta"}.get(
                    kind, "kind in {generic, zermelo, fermat}") + " and nothing else")
            lines.append(f"{_path(err)}: {msg}")
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(lines))


def packaged_scenarios() -> list:
    root = resources.files("randerskit") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve(path_or_name: str) -> Path | None:
    p = Path(path_or_name)
    if p.is_file():
        return p
    root = resources.files("randerskit") / "scenarios"
    cand = root / (path_or_name if path_or_name.endswith(".json") else path_or_name + ".json")
    if cand.is_file():
        return Path(str(cand))
    return None


def load(path_or_name: str) -> "Scenario":
    path = resolve(path_or_name)
    if path is None:
        raise ConfigError(f"scenario {path_or_name!r} not found (packaged: {', '.join(packaged_scenarios())})")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return Scenario.from_dict(data, source=str(path))


def _num(v):
    return -math.inf if v is None else float(v)


def _metric(spec, chart, where):
    try:
        if isinstance(spec, str):
            return MetricField.conformal(chart, spec)
        return MetricField.parse(spec, chart)
    except (RandersError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _field(cls, spec, chart, where):
    try:
        return cls.parse(spec, chart)
    except (RandersError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Scenario:
    data: dict
    chart: Chart
    source: str = "<dict>"

    @classmethod
    def from_dict(cls, data, source="<dict>"):
        validate(data)
        c = data["chart"]
        n = c["dim"]
        for key in ("lower", "upper", "periodic"):
            if key in c and len(c[key]) != n:
                raise ConfigError(f"chart.{key}: expected {n} entries, got {len(c[key])}")
        lower = [(_num(v)) for v in c.get("lower", [None] * n)]
        upper = [(math.inf if v is None else float(v)) for v in c.get("upper", [None] * n)]
        try:
            chart = Chart(n, tuple(lower), tuple(upper), tuple(c.get("periodic", [None] * n)))
        except (RandersError, ValueError) as exc:
            raise ConfigError(f"chart: {exc}") from None
        for key, sub in (("endpoints", ("p", "q")), ("geodesic", ("x", "y")), ("observer", ("x0", "x1")),
                         ("region", ("lower", "upper"))):
            for s in sub:
                if key in data and s in data[key] and len(data[key][s]) != n:
                    raise ConfigError(f"{key}.{s}: expected {n} coordinates, got {len(data[key][s])}")
        scen = cls(data, chart, source)
        scen.structure()  # parse every expression up front
        if "convex_function" in data:
            scen.convex_function()
        return scen

    @property
    def name(self):
        return self.data.get("name", Path(self.source).stem)

    def tolerances(self):
        out = dict(DEFAULTS["tolerances"])
        out.update(self.data.get("tolerances", {}))
        return out

    def sampling(self):
        out = dict(DEFAULTS["sampling"])
        out.update(self.data.get("sampling", {}))
        return out

    def shooting_config(self, tol=None) -> ShootingConfig:
        t = self.tolerances()
        s = self.sampling()
        return ShootingConfig(
            tol=float(tol if tol is not None else t["integrator"]), miss_tol=t["miss"], newton_tol=t["newton"],
            dedup_radius=t["dedup_radius"], dedup_energy=t["dedup_energy"], max_iter=s["max_iterations"],
            directions=s.get("directions"), refine=s["refine"],
            nonconjugate_margin=t["nonconjugate_margin"], conjugate_margin=t["conjugate_margin"])

    def structure(self) -> RandersStructure:
        if getattr(self, "_structure", None) is not None:
            return self._structure
        m = self.data["metric"]
        chart = self.chart
        try:
            if m["kind"] == "generic":
                R = randers_from_generic(_metric(m["h"], chart, "metric.h"),
                                         _field(OneFormField, m["omega"], chart, "metric.omega"))
            elif m["kind"] == "zermelo":
                R = randers_from_zermelo(_metric(m["g"], chart, "metric.g"),
                                         _field(VectorField, m["W"], chart, "metric.W"))
            else:
                R = randers_from_fermat(_metric(m["g0"], chart, "metric.g0"),
                                        _field(VectorField, m["delta"], chart, "metric.delta"),
                                        _field(ScalarField, m["beta"], chart, "metric.beta"))
        except ConfigError:
            raise
        except RandersError as exc:
            raise ConfigError(f"metric: {exc}") from None
        self._structure = R
        return R

    def spacetime(self) -> StationarySpacetime:
        R = self.structure()
        g0, delta, beta = R.fermat_data()
        return StationarySpacetime(self.chart, g0, delta, beta)

    def convex_function(self) -> ScalarField | None:
        if "convex_function" not in self.data:
            return None
        return _field(ScalarField, self.data["convex_function"], self.chart, "convex_function")

    def region(self):
        r = self.data.get("region")
        return None if r is None else (tuple(r["lower"]), tuple(r["upper"]))

    def require(self, key):
        if key not in self.data:
            raise ConfigError(f"scenario {self.name!r} has no {key!r} section")
        return self.data[key]
