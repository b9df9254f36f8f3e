"""Experiment configuration: strict JSON schema plus typed dataclasses."""

from dataclasses import dataclass, field
import hashlib
import json

import jsonschema

from . import expr as ex
from .coeff import defect_field, periodic_field, zero_defect
from .errors import ConfigError, ParseError
from .gridfn import DEFAULT_MESH_CAP
from .model import make_model

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}
_FIELD = {
    "type": "object",
    "additionalProperties": False,
    "required": ["breakpoints", "values"],
    "properties": {
        "breakpoints": {"type": "array", "items": _NUM, "minItems": 2},
        # one entry per cell: a scalar (n = 1) or n*n row-major entries
        "values": {"type": "array", "items": {"anyOf": [_NUM, _NUMS]}, "minItems": 1},
    },
}
_DEFECT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "breakpoints", "values"],
    "properties": dict(_FIELD["properties"], id={"type": "string"}),
}
_EXPRS = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n", "A", "c", "d"],
    "properties": {
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "A": _FIELD,
        "B": _FIELD,
        "defects": {"type": "array", "items": _DEFECT, "minItems": 1},
        "c": _EXPRS,
        "d": _EXPRS,
        "x_breakpoints": _NUMS,
        "r": _POS,
        "epsilons": {"type": "array", "items": _POS},
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_target": {"type": "integer", "minimum": 2},
                "cap": {"type": "integer", "minimum": 16},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "newton": _POS,
                "fixed_point": _POS,
                "degeneracy": _POS,
            },
        },
        "averaging": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "u": _EXPRS,
                "epsilons": {"type": "array", "items": _POS},
                "samples": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
            },
        },
        "opnorm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilons": {"type": "array", "items": _POS},
                "test_vectors": {"type": "integer", "minimum": 1},
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": _POS,
                "refine": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}


@dataclass
class MeshConfig:
    N_target: int = 256
    cap: int = DEFAULT_MESH_CAP


@dataclass
class Tolerances:
    newton: float = 1e-11
    fixed_point: float = 1e-11
    degeneracy: float = 1e-6


@dataclass
class AveragingConfig:
    u: list = field(default_factory=lambda: ["x"])
    epsilons: list = field(default_factory=lambda: [2.0**-k for k in range(3, 10)])
    samples: int = 64
    N: int = 64


@dataclass
class OpnormConfig:
    epsilons: list = field(default_factory=lambda: [2.0**-k for k in range(3, 8)])
    test_vectors: int = 5


@dataclass
class OracleConfig:
    epsilon: float = 2.0**-5
    refine: int = 2


@dataclass
class ExperimentConfig:
    n: int
    A: dict
    c: list
    d: list
    name: str = "instance"
    B: dict = None
    defects: list = None
    x_breakpoints: list = field(default_factory=list)
    r: float = 2.0
    epsilons: list = field(default_factory=lambda: [2.0**-k for k in range(3, 9)])
    mesh: MeshConfig = field(default_factory=MeshConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)
    averaging: AveragingConfig = field(default_factory=AveragingConfig)
    opnorm: OpnormConfig = field(default_factory=OpnormConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    seed: int = 0
    output_dir: str = None
    sha256: str = ""

    @classmethod
    def from_dict(cls, doc, sha256=""):
        try:
            jsonschema.validate(doc, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        doc = dict(doc)
        nested = {
            "mesh": MeshConfig,
            "tolerances": Tolerances,
            "averaging": AveragingConfig,
            "opnorm": OpnormConfig,
            "oracle": OracleConfig,
        }
        for key, kind in nested.items():
            if key in doc:
                doc[key] = kind(**doc[key])
        cfg = cls(**doc, sha256=sha256)
        if len(cfg.c) != cfg.n or len(cfg.d) != cfg.n:
            raise ConfigError(f"c and d need exactly n={cfg.n} components")
        return cfg

    # -- builders ---------------------------------------------------------

    def field_A(self):
        return _build(periodic_field, self.A, self.n, "A")

    def field_B(self):
        if self.B is None:
            return zero_defect(self.n)
        return _build(defect_field, self.B, self.n, "B")

    def defect_list(self):
        """(id, field) pairs; falls back to the single B."""
        if not self.defects:
            return [("B" if self.B is not None else "zero", self.field_B())]
        return [(d["id"], _build(defect_field, d, self.n, f"defect {d['id']!r}"))
                for d in self.defects]

    def model(self):
        """Parsed model; parse errors are re-raised naming the component."""
        parsed = {}
        for key in ("c", "d"):
            out = []
            for i, text in enumerate(getattr(self, key)):
                try:
                    out.append(ex.parse_expression(text, self.n))
                except ParseError as err:
                    raise ParseError(f"{key}[{i}] {text!r}: {err.args[0].split(' at offset')[0]}",
                                     err.offset, err.expected) from None
            parsed[key] = out
        return make_model(parsed["c"], parsed["d"], self.n, self.x_breakpoints)


def _build(ctor, spec, n, what):
    vals = spec["values"]
    try:
        return ctor(spec["breakpoints"], _values(vals, n))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _values(vals, n):
    out = []
    for v in vals:
        v = [v] if not isinstance(v, list) else v
        if len(v) != n * n:
            raise ValueError(f"cell value needs {n * n} entries, got {len(v)}")
        out.append(v)
    return out


def config_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_config(path):
    """Read, hash and validate a JSON config file.

    Raises
    ------
    ConfigError
        On unreadable files, invalid JSON or schema violations.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(doc, config_hash(text))
