"""Declarative drawing templates: parameter schemas, a whitelisted arithmetic
expression language, and template bodies that expand into scene fragments.

Bodies are data, not code: a body is an ordered instruction list where each
instruction emits one shape or one link, with attribute expressions over the
declared parameters and an optional bounded repetition. Everything validates
statically, so backend-proposed bodies can be accepted or rejected up front.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field

from .errors import (
    BodyValidationError,
    ConstraintViolationError,
    ExpressionError,
    UnknownParameterError,
)
from .scene import ARROW_HEADS, Connector, SceneElement, StyleSpec

PARAM_KINDS = ("number", "integer", "string_enum", "boolean")

REPEAT_CAP = 256  # hard ceiling on emitted copies per instruction

# friendly shape names accepted in bodies and enum choices
SHAPE_ALIASES = {
    "rect": "rect",
    "rectangle": "rect",
    "box": "rect",
    "square": "rect",
    "rounded_rect": "rounded_rect",
    "rounded_rectangle": "rounded_rect",
    "rounded": "rounded_rect",
    "ellipse": "ellipse",
    "oval": "ellipse",
    "circle": "ellipse",
    "cuboid": "cuboid",
    "cube": "cuboid",
    "trapezoid": "trapezoid",
    "trapezium": "trapezoid",
    "text": "text",
    "path": "path",
    "line": "path",
}

ARROW_ALIASES = {
    "none": "none",
    "open": "open",
    "filled": "filled",
    "classic": "filled",
    "arrow": "filled",
    "block": "block",
}

_COLOR_CHARS = set("0123456789abcdefABCDEF")


def _is_color(text: str) -> bool:
    return len(text) == 7 and text[0] == "#" and set(text[1:]) <= _COLOR_CHARS


def _is_identifier(text: str) -> bool:
    return text.isidentifier() and not text.startswith("__")


# --------------------------------------------------------------------------
# expression language: + - * / over parameter names, loop variables, literals
# --------------------------------------------------------------------------

_BINOPS = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
           ast.Mult: lambda a, b: a * b, ast.Div: None}


def expression_names(text: str) -> set[str]:
    """Identifiers referenced by an expression; raises on anything outside
    the arithmetic subset."""
    return _walk(_parse(text), collect=set())


def _parse(text: str) -> ast.expr:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("expression must be a non-empty string")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"bad expression {text!r}: {exc.msg}") from exc
    return tree.body


def _walk(node: ast.expr, collect: set[str]) -> set[str]:
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _walk(node.left, collect)
        _walk(node.right, collect)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        _walk(node.operand, collect)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        pass
    elif isinstance(node, ast.Name):
        collect.add(node.id)
    else:
        raise ExpressionError(f"disallowed construct {type(node).__name__} in expression")
    return collect


def evaluate_expression(text: str, env: dict[str, float]) -> float:
    value = _eval(_parse(text), env)
    if not math.isfinite(value):
        raise ExpressionError(f"expression {text!r} produced a non-finite value")
    return value


def _eval(node: ast.expr, env: dict[str, float]) -> float:
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        left, right = _eval(node.left, env), _eval(node.right, env)
        if isinstance(node.op, ast.Div):
            if right == 0:
                raise ExpressionError("division by zero")
            return left / right
        return _BINOPS[type(node.op)](left, right)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        operand = _eval(node.operand, env)
        return -operand if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise ExpressionError(f"unknown name {node.id!r} in expression")
        return env[node.id]
    raise ExpressionError(f"disallowed construct {type(node).__name__} in expression")


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

@dataclass
class ParamSpec:
    """One declared template parameter with default and constraint."""

    name: str
    kind: str
    default: object
    constraint: object = None  # [lo, hi] for numerics, choice list for enums

    def validate(self) -> None:
        if not _is_identifier(self.name):
            raise ConstraintViolationError(f"parameter name {self.name!r} is not an identifier")
        if self.kind not in PARAM_KINDS:
            raise ConstraintViolationError(f"parameter {self.name}: unknown kind {self.kind!r}")
        if self.kind == "string_enum":
            choices = self.constraint
            if not isinstance(choices, list) or not choices or not all(isinstance(c, str) for c in choices):
                raise ConstraintViolationError(
                    f"parameter {self.name}: string_enum needs a non-empty choice list"
                )
        elif self.kind in ("number", "integer") and self.constraint is not None:
            c = self.constraint
            if not (isinstance(c, (list, tuple)) and len(c) == 2):
                raise ConstraintViolationError(f"parameter {self.name}: range must be [lo, hi]")
            lo, hi = c
            if not (isinstance(lo, (int, float)) and isinstance(hi, (int, float)) and lo <= hi):
                raise ConstraintViolationError(f"parameter {self.name}: bad range {c!r}")
        self.check(self.default)

    def check(self, value: object) -> object:
        """Validate and normalize a binding value for this parameter."""
        name = self.name
        if self.kind == "boolean":
            if not isinstance(value, bool):
                raise ConstraintViolationError(f"{name}: expected boolean, got {value!r}")
            return value
        if self.kind == "string_enum":
            if not isinstance(value, str) or value not in self.constraint:
                raise ConstraintViolationError(
                    f"{name}: {value!r} not in choices {self.constraint!r}"
                )
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConstraintViolationError(f"{name}: expected a number, got {value!r}")
        if self.kind == "integer" and int(value) != value:
            raise ConstraintViolationError(f"{name}: expected an integer, got {value!r}")
        if not math.isfinite(value):
            raise ConstraintViolationError(f"{name}: value must be finite")
        if self.constraint is not None:
            lo, hi = self.constraint
            if not (lo <= value <= hi):
                raise ConstraintViolationError(f"{name}: {value!r} outside range [{lo}, {hi}]")
        return int(value) if self.kind == "integer" else float(value)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "default": self.default,
            "constraint": list(self.constraint) if isinstance(self.constraint, tuple) else self.constraint,
        }

    @staticmethod
    def from_dict(data: dict) -> "ParamSpec":
        spec = ParamSpec(
            name=data["name"],
            kind=data["kind"],
            default=data["default"],
            constraint=data.get("constraint"),
        )
        spec.validate()
        return spec


# --------------------------------------------------------------------------
# instructions
# --------------------------------------------------------------------------

@dataclass
class RepeatSpec:
    count: str  # integer literal text or name of a bounded integer parameter
    var: str    # loop variable: 0-based index available in expressions

    def to_dict(self) -> dict:
        return {"count": self.count, "var": self.var}


@dataclass
class WhenSpec:
    """Gate an instruction on a string_enum parameter holding one value."""

    param: str
    equals: str

    def to_dict(self) -> dict:
        return {"param": self.param, "equals": self.equals}


@dataclass
class ShapeInstruction:
    shape: str  # shape name, alias, or "$enum_param"
    x: str
    y: str
    width: str
    height: str
    label: str | None = None        # literal text or "$param"
    fill: str | None = None         # "#RRGGBB" or "$enum_param"
    stroke: str | None = None
    stroke_width: str | None = None  # expression
    opacity: str | None = None       # expression, clamped to [0,1]
    font_size: str | None = None     # expression
    dashed: object = False           # bool literal or "$boolean_param"
    repeat: RepeatSpec | None = None
    when: WhenSpec | None = None

    op = "shape"

    def to_dict(self) -> dict:
        d: dict = {"op": "shape", "shape": self.shape, "x": self.x, "y": self.y,
                   "width": self.width, "height": self.height}
        for key in ("label", "fill", "stroke", "stroke_width", "opacity", "font_size"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        if self.dashed is not False:
            d["dashed"] = self.dashed
        if self.repeat is not None:
            d["repeat"] = self.repeat.to_dict()
        if self.when is not None:
            d["when"] = self.when.to_dict()
        return d


@dataclass
class LinkInstruction:
    x1: str
    y1: str
    x2: str
    y2: str
    arrow: str = "filled"           # arrow name, alias, or "$enum_param"
    label: str | None = None
    stroke: str | None = None
    stroke_width: str | None = None
    dashed: object = False
    repeat: RepeatSpec | None = None
    when: WhenSpec | None = None

    op = "link"

    def to_dict(self) -> dict:
        d: dict = {"op": "link", "x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2,
                   "arrow": self.arrow}
        for key in ("label", "stroke", "stroke_width"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        if self.dashed is not False:
            d["dashed"] = self.dashed
        if self.repeat is not None:
            d["repeat"] = self.repeat.to_dict()
        if self.when is not None:
            d["when"] = self.when.to_dict()
        return d


Instruction = ShapeInstruction | LinkInstruction


def _instruction_from_dict(data: dict, position: int) -> Instruction:
    if not isinstance(data, dict):
        raise BodyValidationError([f"instruction {position}: not an object"])
    op = data.get("op")
    repeat = None
    if "repeat" in data and data["repeat"] is not None:
        r = data["repeat"]
        if not (isinstance(r, dict) and isinstance(r.get("count"), (str, int)) and isinstance(r.get("var"), str)):
            raise BodyValidationError([f"instruction {position}: malformed repeat"])
        repeat = RepeatSpec(count=str(r["count"]), var=r["var"])
    when = None
    if "when" in data and data["when"] is not None:
        w = data["when"]
        if not (isinstance(w, dict) and isinstance(w.get("param"), str) and isinstance(w.get("equals"), str)):
            raise BodyValidationError([f"instruction {position}: malformed when"])
        when = WhenSpec(param=w["param"], equals=w["equals"])
    try:
        if op == "shape":
            return ShapeInstruction(
                shape=data["shape"], x=str(data["x"]), y=str(data["y"]),
                width=str(data["width"]), height=str(data["height"]),
                label=data.get("label"), fill=data.get("fill"), stroke=data.get("stroke"),
                stroke_width=_opt_str(data.get("stroke_width")),
                opacity=_opt_str(data.get("opacity")),
                font_size=_opt_str(data.get("font_size")),
                dashed=data.get("dashed", False), repeat=repeat, when=when,
            )
        if op == "link":
            return LinkInstruction(
                x1=str(data["x1"]), y1=str(data["y1"]), x2=str(data["x2"]), y2=str(data["y2"]),
                arrow=data.get("arrow", "filled"), label=data.get("label"),
                stroke=data.get("stroke"), stroke_width=_opt_str(data.get("stroke_width")),
                dashed=data.get("dashed", False), repeat=repeat, when=when,
            )
    except KeyError as exc:
        raise BodyValidationError([f"instruction {position}: missing field {exc}"]) from exc
    raise BodyValidationError([f"instruction {position}: unknown op {op!r}"])


def _opt_str(value: object) -> str | None:
    return None if value is None else str(value)


# --------------------------------------------------------------------------
# body
# --------------------------------------------------------------------------

@dataclass
class MiddlewareBody:
    instructions: list[Instruction] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"instructions": [ins.to_dict() for ins in self.instructions]}

    @staticmethod
    def from_dict(data: dict) -> "MiddlewareBody":
        if not isinstance(data, dict) or not isinstance(data.get("instructions"), list):
            raise BodyValidationError(["body must be an object with an 'instructions' list"])
        return MiddlewareBody(
            [_instruction_from_dict(d, i) for i, d in enumerate(data["instructions"])]
        )

    def validate(self, params: list[ParamSpec]) -> None:
        """Static check against the declared parameters; raises with the full
        problem list so proposal rejections can name every offending piece."""
        problems: list[str] = []
        by_name = {p.name: p for p in params}
        if len(by_name) != len(params):
            problems.append("duplicate parameter names")
        if not self.instructions:
            problems.append("body has no instructions")
        numeric = {p.name for p in params if p.kind in ("number", "integer")}

        for i, ins in enumerate(self.instructions):
            where = f"instruction {i}"
            loop_vars: set[str] = set()
            if ins.repeat is not None:
                problems += _check_repeat(ins.repeat, by_name, numeric, where)
                loop_vars.add(ins.repeat.var)
            if ins.when is not None:
                spec = by_name.get(ins.when.param)
                if spec is None or spec.kind != "string_enum":
                    problems.append(f"{where}: when-param {ins.when.param!r} is not a string_enum")
                elif ins.when.equals not in spec.constraint:
                    problems.append(
                        f"{where}: when-value {ins.when.equals!r} not a choice of {ins.when.param!r}"
                    )
            allowed = numeric | loop_vars

            if isinstance(ins, ShapeInstruction):
                exprs = [ins.x, ins.y, ins.width, ins.height]
                problems += _check_ref(ins.shape, by_name, SHAPE_ALIASES, f"{where}: shape")
                if ins.fill is not None:
                    problems += _check_color(ins.fill, by_name, f"{where}: fill")
                if ins.stroke is not None:
                    problems += _check_color(ins.stroke, by_name, f"{where}: stroke")
                for opt in (ins.stroke_width, ins.opacity, ins.font_size):
                    if opt is not None:
                        exprs.append(opt)
            else:
                exprs = [ins.x1, ins.y1, ins.x2, ins.y2]
                problems += _check_ref(ins.arrow, by_name, ARROW_ALIASES, f"{where}: arrow")
                if ins.stroke is not None:
                    problems += _check_color(ins.stroke, by_name, f"{where}: stroke")
                if ins.stroke_width is not None:
                    exprs.append(ins.stroke_width)

            if ins.label is not None:
                problems += _check_label(ins.label, by_name, where)
            problems += _check_dashed(ins.dashed, by_name, where)
            for expr in exprs:
                try:
                    for name in expression_names(expr):
                        if name not in allowed:
                            problems.append(f"{where}: undeclared name {name!r} in {expr!r}")
                except ExpressionError as exc:
                    problems.append(f"{where}: {exc}")
        if problems:
            raise BodyValidationError(problems)


def _check_repeat(repeat: RepeatSpec, by_name: dict, numeric: set[str], where: str) -> list[str]:
    problems = []
    if not _is_identifier(repeat.var):
        problems.append(f"{where}: repeat var {repeat.var!r} is not an identifier")
    if repeat.var in by_name:
        problems.append(f"{where}: repeat var {repeat.var!r} shadows a parameter")
    count = repeat.count
    if count.lstrip("-").isdigit():
        n = int(count)
        if not (0 <= n <= REPEAT_CAP):
            problems.append(f"{where}: repeat count {n} outside [0, {REPEAT_CAP}]")
    else:
        spec = by_name.get(count)
        if spec is None or spec.kind != "integer":
            problems.append(f"{where}: repeat count {count!r} is not an integer parameter")
        elif spec.constraint is None or spec.constraint[1] > REPEAT_CAP or spec.constraint[0] < 0:
            problems.append(
                f"{where}: repeat parameter {count!r} needs a range within [0, {REPEAT_CAP}]"
            )
    return problems


def _resolve_ref(value: str, by_name: dict) -> ParamSpec | None:
    return by_name.get(value[1:]) if value.startswith("$") else None


def _check_ref(value: str, by_name: dict, aliases: dict[str, str], where: str) -> list[str]:
    if not isinstance(value, str):
        return [f"{where}: must be a string"]
    if value.startswith("$"):
        spec = _resolve_ref(value, by_name)
        if spec is None or spec.kind != "string_enum":
            return [f"{where}: {value!r} is not a declared string_enum parameter"]
        bad = [c for c in spec.constraint if c not in aliases]
        return [f"{where}: enum choice {c!r} is not a known name" for c in bad]
    if value not in aliases:
        return [f"{where}: unknown name {value!r}"]
    return []


def _check_color(value: str, by_name: dict, where: str) -> list[str]:
    if not isinstance(value, str):
        return [f"{where}: must be a string"]
    if value.startswith("$"):
        spec = _resolve_ref(value, by_name)
        if spec is None or spec.kind != "string_enum":
            return [f"{where}: {value!r} is not a declared string_enum parameter"]
        bad = [c for c in spec.constraint if not _is_color(c)]
        return [f"{where}: enum choice {c!r} is not #RRGGBB" for c in bad]
    if not _is_color(value):
        return [f"{where}: {value!r} is not #RRGGBB"]
    return []


def _check_label(value: str, by_name: dict, where: str) -> list[str]:
    if not isinstance(value, str):
        return [f"{where}: label must be a string"]
    if value.startswith("$") and _resolve_ref(value, by_name) is None:
        return [f"{where}: label reference {value!r} is not a declared parameter"]
    return []


def _check_dashed(value: object, by_name: dict, where: str) -> list[str]:
    if isinstance(value, bool):
        return []
    if isinstance(value, str) and value.startswith("$"):
        spec = _resolve_ref(value, by_name)
        if spec is not None and spec.kind == "boolean":
            return []
    return [f"{where}: dashed must be a boolean or a $boolean parameter"]


# --------------------------------------------------------------------------
# instantiation
# --------------------------------------------------------------------------

@dataclass
class SceneFragment:
    elements: list[SceneElement] = field(default_factory=list)
    connectors: list[Connector] = field(default_factory=list)


def resolve_bindings(params: list[ParamSpec], bindings: dict[str, object]) -> dict[str, object]:
    """Defaults overlaid with caller bindings, all validated."""
    by_name = {p.name: p for p in params}
    unknown = sorted(set(bindings) - set(by_name))
    if unknown:
        raise UnknownParameterError(f"unknown parameter(s): {', '.join(unknown)}")
    resolved: dict[str, object] = {}
    for spec in params:
        value = bindings.get(spec.name, spec.default)
        resolved[spec.name] = spec.check(value)
    return resolved


def expand_body(
    body: MiddlewareBody,
    params: list[ParamSpec],
    bindings: dict[str, object],
    id_prefix: str,
) -> SceneFragment:
    """Evaluate the body deterministically into fresh-id scene parts."""
    values = resolve_bindings(params, bindings)
    env = {k: float(v) for k, v in values.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
    fragment = SceneFragment()
    serial = 0
    for ins in body.instructions:
        if ins.when is not None and values[ins.when.param] != ins.when.equals:
            continue
        copies = _repeat_count(ins.repeat, values)
        for index in range(copies):
            local = dict(env)
            if ins.repeat is not None:
                local[ins.repeat.var] = float(index)
            if isinstance(ins, ShapeInstruction):
                fragment.elements.append(_emit_shape(ins, local, values, f"{id_prefix}_e{serial}", serial))
            else:
                fragment.connectors.append(_emit_link(ins, local, values, f"{id_prefix}_k{serial}"))
            serial += 1
    return fragment


def _repeat_count(repeat: RepeatSpec | None, values: dict[str, object]) -> int:
    if repeat is None:
        return 1
    if repeat.count.lstrip("-").isdigit():
        n = int(repeat.count)
    else:
        n = int(values[repeat.count])  # validated as bounded integer param
    if n < 0 or n > REPEAT_CAP:
        raise ExpressionError(f"repeat count {n} outside [0, {REPEAT_CAP}]")
    return n


def _string_field(value: str, values: dict[str, object]) -> str:
    if value.startswith("$"):
        raw = values[value[1:]]
        return str(raw)
    return value


def _emit_style(ins, local: dict[str, float], values: dict[str, object]) -> StyleSpec:
    style = StyleSpec()
    if getattr(ins, "fill", None) is not None:
        style.fill_color = _string_field(ins.fill, values)
    if ins.stroke is not None:
        style.stroke_color = _string_field(ins.stroke, values)
    if ins.stroke_width is not None:
        style.stroke_width = max(0.0, evaluate_expression(ins.stroke_width, local))
    if getattr(ins, "opacity", None) is not None:
        style.opacity = min(1.0, max(0.0, evaluate_expression(ins.opacity, local)))
    if getattr(ins, "font_size", None) is not None:
        style.font_size = max(1.0, evaluate_expression(ins.font_size, local))
    dashed = ins.dashed
    if isinstance(dashed, str):
        dashed = bool(values[dashed[1:]])
    if dashed:
        style.dash_pattern = [3.0, 3.0]
    return style


def _emit_shape(
    ins: ShapeInstruction,
    local: dict[str, float],
    values: dict[str, object],
    element_id: str,
    z: int,
) -> SceneElement:
    kind = SHAPE_ALIASES[_string_field(ins.shape, values)]
    label = None if ins.label is None else _string_field(ins.label, values)
    element = SceneElement(
        id=element_id,
        kind=kind,
        x=evaluate_expression(ins.x, local),
        y=evaluate_expression(ins.y, local),
        width=max(0.0, evaluate_expression(ins.width, local)),
        height=max(0.0, evaluate_expression(ins.height, local)),
        style=_emit_style(ins, local, values),
        label=label,
        z_order=z,
    )
    element.validate()
    return element


def _emit_link(
    ins: LinkInstruction,
    local: dict[str, float],
    values: dict[str, object],
    connector_id: str,
) -> Connector:
    arrow = ARROW_ALIASES[_string_field(ins.arrow, values)]
    assert arrow in ARROW_HEADS
    label = None if ins.label is None else _string_field(ins.label, values)
    connector = Connector(
        id=connector_id,
        source=(evaluate_expression(ins.x1, local), evaluate_expression(ins.y1, local)),
        target=(evaluate_expression(ins.x2, local), evaluate_expression(ins.y2, local)),
        arrow_head=arrow,
        label=label,
        style=_emit_style(ins, local, values),
    )
    connector.validate()
    return connector
