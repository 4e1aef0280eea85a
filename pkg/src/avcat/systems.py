"""Built-in example systems and their reference parameter sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import SpecError
from .expr import SystemSpec, parse_system


@dataclass(frozen=True)
class Builtin:
    name: str
    summary: str
    template: str
    defaults: dict
    expected_ell: int
    reference: dict = field(default_factory=dict)

    def text(self, **params) -> str:
        values = dict(self.defaults)
        unknown = set(params) - set(values)
        if unknown:
            raise SpecError(f"system {self.name!r} has no parameters {sorted(unknown)}")
        values.update(params)
        return self.template.format(**{k: repr(float(v)) for k, v in values.items()})

    def spec(self, **params) -> SystemSpec:
        return parse_system(self.text(**params))


FOLD = Builtin(
    "fold",
    "x' = eps (x^2 + mu + sin t); guiding fold x^2 + mu",
    """\
system fold
dim n=1 k=1
period T=2*pi
order 1: x1^2 + mu1 + sin(t)
end
""",
    {},
    expected_ell=1,
    reference={"eps": [0.4], "mu": [-0.5, 0.5]},
)

TRANSCRITICAL = Builtin(
    "transcritical",
    "x' = eps (x^2 + mu x + x sin t) + eps^2 (c + sin 2t); guiding x^2 + mu x",
    """\
system transcritical
dim n=1 k=1
period T=2*pi
order 1: x1^2 + mu1*x1 + sin(t)*x1
order rest: {c} + sin(2*t)
end
""",
    {"c": 1.0},
    expected_ell=1,
    reference={"sets": [{"eps": -0.02, "c": 1.0}, {"eps": 0.02, "c": 0.0}, {"eps": 0.02, "c": 1.0},
                        {"eps": 0.3, "c": 0.1}, {"eps": -0.3, "c": 0.1}]},
)

PITCHFORK = Builtin(
    "pitchfork",
    "x' = eps^2 (x^3 + mu x + x sin t) + eps^3 (c + sin 2t); guiding x^3 + mu x",
    """\
system pitchfork
dim n=1 k=1
period T=2*pi
order 1: 0
order 2: x1^3 + mu1*x1 + sin(t)*x1
order rest: {c} + sin(2*t)
end
""",
    {"c": 1.0},
    expected_ell=2,
    reference={"eps": [0.1, -0.1], "c": 1.0},
)

SADDLEFOCUS = Builtin(
    "saddlefocus",
    "planar x1' = eps x2, x2' = eps (x1^2 + mu + sin t) + eps^2 x2 (c0 + c1 x1 + x1^3 x2)",
    """\
system saddlefocus
dim n=2 k=1
period T=2*pi
order 1: x2, x1^2 + mu1 + sin(t)
order rest: 0, x2*({c0} + {c1}*x1 + x1^3*x2)
end
""",
    {"c0": 2.0, "c1": 0.0},
    expected_ell=1,
    reference={"mu": -0.2, "eps": [0.05], "c0c1": [[2.0, 0.0]], "x0": [0.1, 0.0]},
)

CATALOG = {b.name: b for b in (FOLD, TRANSCRITICAL, PITCHFORK, SADDLEFOCUS)}


def load_system(name_or_path: str, **params) -> SystemSpec:
    """Built-in system by name, otherwise parse the file at ``name_or_path``."""
    if name_or_path in CATALOG:
        return CATALOG[name_or_path].spec(**params)
    path = Path(name_or_path)
    if not path.is_file():
        raise SpecError(f"{name_or_path!r} is neither a built-in system "
                        f"({', '.join(CATALOG)}) nor a readable file")
    if params:
        raise SpecError("parameters can only be set on built-in systems")
    return parse_system(path.read_text(encoding="utf-8"))
