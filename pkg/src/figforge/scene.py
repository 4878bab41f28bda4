"""Vector scene graph with deterministic DrawIO (mxGraph) XML and SVG output.

Coordinates are abstract pixels. Elements nested in a group store coordinates
relative to that group (matching DrawIO); everything else is absolute.
Serialization of an unchanged canvas is byte-identical across runs.
"""

from __future__ import annotations

import copy
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from .errors import (
    DuplicateIdError,
    EmptyCanvasError,
    InvalidElementError,
    MalformedXmlError,
    SceneError,
)
from .util import fmt_number, scale_decimal

ELEMENT_KINDS = (
    "rect",
    "rounded_rect",
    "ellipse",
    "cuboid",
    "trapezoid",
    "text",
    "path",
    "group",
)
ARROW_HEADS = ("none", "open", "filled", "block")

DEFAULT_PAGE_WIDTH = 1600.0
DEFAULT_PAGE_HEIGHT = 900.0
DEFAULT_GRID = 10.0

_COLOR_RE = re.compile(r"^#[0-9A-Fa-f]{6}$")

# style-string lead token per element kind, and back
_KIND_TOKENS = {
    "rect": "rounded=0",
    "rounded_rect": "rounded=1",
    "ellipse": "ellipse",
    "cuboid": "shape=cuboid",
    "trapezoid": "shape=trapezoid",
    "text": "text",
    "path": "shape=path",
    "group": "group",
}
_TOKEN_KINDS = {v: k for k, v in _KIND_TOKENS.items()}

_ARROW_TOKENS = {"none": "none", "open": "open", "filled": "classic", "block": "block"}
_TOKEN_ARROWS = {v: k for k, v in _ARROW_TOKENS.items()}


def _attr(value: str) -> str:
    """Escape text for use in a double-quoted XML attribute."""
    return escape(value, {'"': "&quot;", "\n": "&#10;", "\t": "&#9;", "\r": "&#13;"})


@dataclass
class StyleSpec:
    """Visual style shared by elements and connectors."""

    fill_color: str = "#FFFFFF"
    stroke_color: str = "#000000"
    stroke_width: float = 1.0
    dash_pattern: list[float] | None = None
    font_size: float = 12.0
    font_family: str = "Helvetica"
    opacity: float = 1.0
    rounding_radius: float = 10.0

    def validate(self) -> None:
        for name, color in (("fill_color", self.fill_color), ("stroke_color", self.stroke_color)):
            if not _COLOR_RE.match(color):
                raise InvalidElementError(f"{name} must match #RRGGBB, got {color!r}")
        if not (0.0 <= self.opacity <= 1.0):
            raise InvalidElementError(f"opacity must be in [0, 1], got {self.opacity}")
        if self.stroke_width < 0:
            raise InvalidElementError(f"stroke_width must be >= 0, got {self.stroke_width}")
        if self.rounding_radius < 0:
            raise InvalidElementError("rounding_radius must be >= 0")
        if self.font_size <= 0:
            raise InvalidElementError("font_size must be > 0")
        if ";" in self.font_family or "=" in self.font_family:
            raise InvalidElementError("font_family must not contain ';' or '='")
        if self.dash_pattern is not None:
            if not self.dash_pattern or any(d <= 0 or not math.isfinite(d) for d in self.dash_pattern):
                raise InvalidElementError("dash_pattern must be a non-empty list of positive lengths")
        for v in (self.stroke_width, self.font_size, self.opacity, self.rounding_radius):
            if not math.isfinite(v):
                raise InvalidElementError("style numbers must be finite")


@dataclass
class SceneElement:
    id: str
    kind: str
    x: float
    y: float
    width: float
    height: float
    style: StyleSpec = field(default_factory=StyleSpec)
    label: str | None = None
    z_order: int = 0
    parent_group: str | None = None
    concept_tag: str | None = None

    def validate(self) -> None:
        if not self.id or not isinstance(self.id, str):
            raise InvalidElementError("element id must be a non-empty string")
        if self.id in ("0", "1"):
            raise InvalidElementError("ids '0' and '1' are reserved for document root cells")
        if self.kind not in ELEMENT_KINDS:
            raise InvalidElementError(f"unknown element kind {self.kind!r}")
        if self.width < 0 or self.height < 0:
            raise InvalidElementError(f"element {self.id}: width/height must be >= 0")
        for v in (self.x, self.y, self.width, self.height):
            if not math.isfinite(v):
                raise InvalidElementError(f"element {self.id}: geometry must be finite")
        if self.concept_tag is not None and (";" in self.concept_tag or "=" in self.concept_tag):
            raise InvalidElementError("concept_tag must not contain ';' or '='")
        self.style.validate()


@dataclass
class Connector:
    id: str
    source: str | tuple[float, float]
    target: str | tuple[float, float]
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    arrow_head: str = "filled"
    label: str | None = None
    style: StyleSpec = field(default_factory=StyleSpec)

    def validate(self) -> None:
        if not self.id or not isinstance(self.id, str):
            raise InvalidElementError("connector id must be a non-empty string")
        if self.id in ("0", "1"):
            raise InvalidElementError("ids '0' and '1' are reserved for document root cells")
        if self.arrow_head not in ARROW_HEADS:
            raise InvalidElementError(f"unknown arrow_head {self.arrow_head!r}")
        for end in (self.source, self.target):
            if not isinstance(end, str):
                x, y = end
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise InvalidElementError(f"connector {self.id}: endpoint must be finite")
        for x, y in self.waypoints:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise InvalidElementError(f"connector {self.id}: waypoints must be finite")
        self.style.validate()


@dataclass
class Canvas:
    """Ordered scene-graph container. Single-writer; share read-only copies."""

    elements: list[SceneElement] = field(default_factory=list)
    connectors: list[Connector] = field(default_factory=list)
    page_width: float = DEFAULT_PAGE_WIDTH
    page_height: float = DEFAULT_PAGE_HEIGHT
    grid: float = DEFAULT_GRID
    metadata: dict[str, str] = field(default_factory=dict)

    def ids(self) -> set[str]:
        return {e.id for e in self.elements} | {c.id for c in self.connectors}

    def element(self, element_id: str) -> SceneElement:
        for e in self.elements:
            if e.id == element_id:
                return e
        raise KeyError(element_id)

    def add_element(self, element: SceneElement) -> "Canvas":
        element.validate()
        if element.id in self.ids():
            raise DuplicateIdError(f"id {element.id!r} already present")
        if element.parent_group is not None:
            try:
                parent = self.element(element.parent_group)
            except KeyError:
                raise InvalidElementError(
                    f"element {element.id}: parent_group {element.parent_group!r} not found"
                ) from None
            if parent.kind != "group":
                raise InvalidElementError(
                    f"element {element.id}: parent_group {element.parent_group!r} is not a group"
                )
        self.elements.append(element)
        return self

    def add_connector(self, connector: Connector) -> "Canvas":
        connector.validate()
        if connector.id in self.ids():
            raise DuplicateIdError(f"id {connector.id!r} already present")
        for end in (connector.source, connector.target):
            if isinstance(end, str) and not any(e.id == end for e in self.elements):
                raise InvalidElementError(f"connector {connector.id}: endpoint {end!r} not found")
        self.connectors.append(connector)
        return self

    def clone(self) -> "Canvas":
        return copy.deepcopy(self)

    def to_mxgraph_xml(self) -> str:
        return to_mxgraph_xml(self)

    def to_svg(self) -> str:
        return to_svg(self)

    def validate(self) -> None:
        """Full invariant check (used after bulk assembly by the reader)."""
        seen: set[str] = set()
        for item in [*self.elements, *self.connectors]:
            item.validate()
            if item.id in seen:
                raise DuplicateIdError(f"id {item.id!r} duplicated")
            seen.add(item.id)
        by_id = {e.id: e for e in self.elements}
        for e in self.elements:
            hops = 0
            parent = e.parent_group
            while parent is not None:
                if parent not in by_id:
                    raise InvalidElementError(f"element {e.id}: parent_group {parent!r} not found")
                if by_id[parent].kind != "group":
                    raise InvalidElementError(f"element {e.id}: parent {parent!r} is not a group")
                hops += 1
                if hops > len(self.elements):
                    raise InvalidElementError(f"element {e.id}: group nesting cycle")
                parent = by_id[parent].parent_group
        for c in self.connectors:
            for end in (c.source, c.target):
                if isinstance(end, str) and end not in by_id:
                    raise InvalidElementError(f"connector {c.id}: endpoint {end!r} not found")


def absolute_origin(canvas: Canvas, element: SceneElement) -> tuple[float, float]:
    """Canvas-absolute (x, y) of an element, resolving group nesting."""
    x, y = element.x, element.y
    by_id = {e.id: e for e in canvas.elements}
    parent = element.parent_group
    while parent is not None:
        p = by_id[parent]
        x += p.x
        y += p.y
        parent = p.parent_group
    return x, y


def _ordered_elements(canvas: Canvas) -> list[SceneElement]:
    return [e for _, _, e in sorted((e.z_order, i, e) for i, e in enumerate(canvas.elements))]


# --------------------------------------------------------------------------
# style strings
# --------------------------------------------------------------------------

def _vertex_style(element: SceneElement) -> str:
    s = element.style
    parts = [_KIND_TOKENS[element.kind]]
    parts.append(f"fillColor={s.fill_color}")
    parts.append(f"strokeColor={s.stroke_color}")
    parts.append(f"strokeWidth={fmt_number(s.stroke_width)}")
    if s.dash_pattern:
        parts.append("dashed=1")
        parts.append("dashPattern=" + " ".join(fmt_number(d) for d in s.dash_pattern))
    parts.append(f"fontSize={fmt_number(s.font_size)}")
    parts.append(f"fontFamily={s.font_family}")
    parts.append(f"opacity={scale_decimal(fmt_number(s.opacity), 2)}")
    if element.kind == "rounded_rect":
        parts.append(f"arcSize={fmt_number(s.rounding_radius)}")
    if element.concept_tag is not None:
        parts.append(f"conceptTag={element.concept_tag}")
    return ";".join(parts) + ";"


def _edge_style(connector: Connector) -> str:
    s = connector.style
    parts = [f"endArrow={_ARROW_TOKENS[connector.arrow_head]}"]
    parts.append(f"strokeColor={s.stroke_color}")
    parts.append(f"strokeWidth={fmt_number(s.stroke_width)}")
    if s.dash_pattern:
        parts.append("dashed=1")
        parts.append("dashPattern=" + " ".join(fmt_number(d) for d in s.dash_pattern))
    parts.append(f"fontSize={fmt_number(s.font_size)}")
    parts.append(f"fontFamily={s.font_family}")
    parts.append(f"opacity={scale_decimal(fmt_number(s.opacity), 2)}")
    return ";".join(parts) + ";"


def _split_style(style: str) -> tuple[dict[str, str], list[str]]:
    """Style string -> ({key: value}, [bare tokens]); order-preserving."""
    kv: dict[str, str] = {}
    bare: list[str] = []
    for token in style.split(";"):
        token = token.strip()
        if not token:
            continue
        if "=" in token:
            k, v = token.split("=", 1)
            kv.setdefault(k, v)
        else:
            bare.append(token)
    return kv, bare


def _parse_color(value: str | None, default: str) -> str:
    if value is None:
        return default
    v = value.strip()
    if _COLOR_RE.match(v):
        return v
    m = re.match(r"^#([0-9A-Fa-f]{3})$", v)
    if m:
        return "#" + "".join(ch * 2 for ch in m.group(1))
    return default


def _parse_stylespec(kv: dict[str, str], bare: list[str]) -> StyleSpec:
    spec = StyleSpec()
    spec.fill_color = _parse_color(kv.get("fillColor"), spec.fill_color)
    spec.stroke_color = _parse_color(kv.get("strokeColor"), spec.stroke_color)
    try:
        if "strokeWidth" in kv:
            spec.stroke_width = max(0.0, float(kv["strokeWidth"]))
        if "fontSize" in kv:
            spec.font_size = float(kv["fontSize"])
            if spec.font_size <= 0:
                spec.font_size = 12.0
        if "opacity" in kv:
            spec.opacity = min(1.0, max(0.0, float(scale_decimal(kv["opacity"], -2))))
        if "arcSize" in kv:
            spec.rounding_radius = max(0.0, float(kv["arcSize"]))
        if kv.get("dashed") == "1" or "dashed" in bare:
            pattern = [float(p) for p in kv.get("dashPattern", "3 3").split() if float(p) > 0]
            spec.dash_pattern = pattern or [3.0, 3.0]
    except ValueError:
        pass  # keep defaults for unparseable numbers; raw style is preserved upstream
    family = kv.get("fontFamily")
    if family and ";" not in family and "=" not in family:
        spec.font_family = family
    return spec


def _parse_vertex_style(style: str) -> tuple[str, StyleSpec, str | None, bool]:
    """Returns (kind, spec, concept_tag, fully_recognized)."""
    kv, bare = _split_style(style)
    kind = None
    if "group" in bare:
        kind = "group"
    elif "text" in bare:
        kind = "text"
    elif "ellipse" in bare:
        kind = "ellipse"
    elif kv.get("shape") in ("cuboid", "trapezoid", "path"):
        kind = {"cuboid": "cuboid", "trapezoid": "trapezoid", "path": "path"}[kv["shape"]]
    elif kv.get("rounded") == "1":
        kind = "rounded_rect"
    elif kv.get("rounded") == "0":
        kind = "rect"
    recognized = kind is not None
    if kind is None:
        kind = "rect"
    return kind, _parse_stylespec(kv, bare), kv.get("conceptTag"), recognized


# --------------------------------------------------------------------------
# mxGraph XML writer
# --------------------------------------------------------------------------

def to_mxgraph_xml(canvas: Canvas) -> str:
    """Serialize to the documented mxGraph subset; byte-deterministic."""
    lines = [
        "<mxfile>",
        "<diagram>",
        f'<mxGraphModel gridSize="{fmt_number(canvas.grid)}" '
        f'pageWidth="{fmt_number(canvas.page_width)}" '
        f'pageHeight="{fmt_number(canvas.page_height)}">',
        "<root>",
        '<mxCell id="0"/>',
        '<mxCell id="1" parent="0"/>',
    ]
    for e in _ordered_elements(canvas):
        parent = e.parent_group if e.parent_group is not None else "1"
        lines.append(
            f'<mxCell id="{_attr(e.id)}" value="{_attr(e.label or "")}" '
            f'style="{_attr(_vertex_style(e))}" vertex="1" parent="{_attr(parent)}">'
            f'<mxGeometry x="{fmt_number(e.x)}" y="{fmt_number(e.y)}" '
            f'width="{fmt_number(e.width)}" height="{fmt_number(e.height)}" as="geometry"/>'
            "</mxCell>"
        )
    for c in canvas.connectors:
        attrs = [f'id="{_attr(c.id)}"']
        if c.label is not None:
            attrs.append(f'value="{_attr(c.label)}"')
        attrs.append(f'style="{_attr(_edge_style(c))}"')
        attrs.append('edge="1"')
        attrs.append('parent="1"')
        if isinstance(c.source, str):
            attrs.append(f'source="{_attr(c.source)}"')
        if isinstance(c.target, str):
            attrs.append(f'target="{_attr(c.target)}"')
        geo_parts = []
        if not isinstance(c.source, str):
            x, y = c.source
            geo_parts.append(f'<mxPoint x="{fmt_number(x)}" y="{fmt_number(y)}" as="sourcePoint"/>')
        if not isinstance(c.target, str):
            x, y = c.target
            geo_parts.append(f'<mxPoint x="{fmt_number(x)}" y="{fmt_number(y)}" as="targetPoint"/>')
        if c.waypoints:
            pts = "".join(f'<mxPoint x="{fmt_number(x)}" y="{fmt_number(y)}"/>' for x, y in c.waypoints)
            geo_parts.append(f'<Array as="points">{pts}</Array>')
        if geo_parts:
            geometry = f'<mxGeometry relative="1" as="geometry">{"".join(geo_parts)}</mxGeometry>'
        else:
            geometry = '<mxGeometry relative="1" as="geometry"/>'
        lines.append(f'<mxCell {" ".join(attrs)}>{geometry}</mxCell>')
    lines += ["</root>", "</mxGraphModel>", "</diagram>", "</mxfile>"]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# mxGraph XML reader
# --------------------------------------------------------------------------

@dataclass
class MxParseResult:
    canvas: Canvas
    warnings: list[str]


def read_mxgraph_xml(text: str) -> MxParseResult:
    """Parse a DrawIO document into a canvas, collecting non-fatal warnings."""
    try:
        doc = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXmlError(f"not well-formed XML: {exc}") from exc

    if doc.tag == "mxfile":
        diagram = doc.find("diagram")
        if diagram is None:
            raise MalformedXmlError("mxfile has no <diagram>")
        model = diagram.find("mxGraphModel")
        if model is None:
            if (diagram.text or "").strip():
                raise MalformedXmlError("compressed diagram payloads are not supported")
            raise MalformedXmlError("diagram has no <mxGraphModel>")
    elif doc.tag == "mxGraphModel":
        model = doc
    else:
        raise MalformedXmlError(f"unexpected document root <{doc.tag}>")

    root = model.find("root")
    if root is None:
        raise MalformedXmlError("mxGraphModel has no <root>")

    canvas = Canvas(
        page_width=float(model.get("pageWidth", DEFAULT_PAGE_WIDTH)),
        page_height=float(model.get("pageHeight", DEFAULT_PAGE_HEIGHT)),
        grid=float(model.get("gridSize", DEFAULT_GRID)),
    )
    warnings: list[str] = []
    raw_parent: dict[str, str] = {}
    seen_ids: set[str] = set()

    index = 0
    for node in root:
        cell = node
        wrapped_label = None
        if node.tag == "object":
            inner = node.find("mxCell")
            if inner is None:
                warnings.append(f"unsupported cell <object id={node.get('id')!r}> skipped")
                continue
            wrapped_label = node.get("label")
            cell = inner
            if cell.get("id") is None:
                cell.set("id", node.get("id", ""))
        if cell.tag != "mxCell":
            warnings.append(f"unsupported cell <{cell.tag}> skipped")
            continue
        cell_id = cell.get("id")
        if cell_id in ("0", "1"):
            continue
        if not cell_id:
            warnings.append("cell without id skipped")
            continue
        if cell_id in seen_ids:
            raise MalformedXmlError(f"duplicate cell id {cell_id!r}")
        seen_ids.add(cell_id)
        style = cell.get("style", "")
        label = cell.get("value") if wrapped_label is None else wrapped_label

        if cell.get("vertex") == "1":
            geometry = cell.find("mxGeometry")
            if geometry is None or geometry.get("width") is None or geometry.get("height") is None:
                warnings.append(f"vertex {cell_id!r} without full geometry skipped")
                continue
            try:
                x = float(geometry.get("x", "0"))
                y = float(geometry.get("y", "0"))
                w = float(geometry.get("width"))
                h = float(geometry.get("height"))
            except ValueError:
                warnings.append(f"vertex {cell_id!r} with non-numeric geometry skipped")
                continue
            kind, spec, concept_tag, recognized = _parse_vertex_style(style)
            if not recognized:
                canvas.metadata[f"rawstyle:{cell_id}"] = style
                warnings.append(f"vertex {cell_id!r}: unrecognized style treated as rect")
            element = SceneElement(
                id=cell_id,
                kind=kind,
                x=x,
                y=y,
                width=max(0.0, w),
                height=max(0.0, h),
                style=spec,
                label=label if label else None,
                z_order=index,
                concept_tag=concept_tag,
            )
            parent = cell.get("parent")
            if parent not in (None, "0", "1"):
                raw_parent[cell_id] = parent
            canvas.elements.append(element)
            index += 1
        elif cell.get("edge") == "1":
            geometry = cell.find("mxGeometry")
            source: str | tuple[float, float] | None = cell.get("source")
            target: str | tuple[float, float] | None = cell.get("target")
            waypoints: list[tuple[float, float]] = []
            if geometry is not None:
                for point in geometry.findall("mxPoint"):
                    xy = (float(point.get("x", "0")), float(point.get("y", "0")))
                    role = point.get("as")
                    if role == "sourcePoint" and source is None:
                        source = xy
                    elif role == "targetPoint" and target is None:
                        target = xy
                array = geometry.find("Array")
                if array is not None and array.get("as") == "points":
                    for point in array.findall("mxPoint"):
                        waypoints.append((float(point.get("x", "0")), float(point.get("y", "0"))))
            if source is None or target is None:
                warnings.append(f"edge {cell_id!r} without endpoints skipped")
                continue
            kv, bare = _split_style(style)
            arrow = _TOKEN_ARROWS.get(kv.get("endArrow", "classic"), "filled")
            connector = Connector(
                id=cell_id,
                source=source,
                target=target,
                waypoints=waypoints,
                arrow_head=arrow,
                label=label if label else None,
                style=_parse_stylespec(kv, bare),
            )
            canvas.connectors.append(connector)
        else:
            warnings.append(f"unsupported cell {cell_id!r} (neither vertex nor edge) skipped")

    _resolve_parents(canvas, raw_parent, warnings)
    _drop_dangling_edges(canvas, warnings)
    canvas.validate()
    return MxParseResult(canvas, warnings)


def _resolve_parents(canvas: Canvas, raw_parent: dict[str, str], warnings: list[str]) -> None:
    by_id = {e.id: e for e in canvas.elements}
    for cell_id, parent in raw_parent.items():
        element = by_id.get(cell_id)
        if element is None:
            continue
        chain: list[str] = []
        cursor: str | None = parent
        ok = True
        while cursor is not None:
            if cursor not in by_id or cursor in chain:
                ok = False
                break
            chain.append(cursor)
            cursor = raw_parent.get(cursor)
        if ok and all(by_id[p].kind == "group" for p in chain):
            element.parent_group = parent
        else:
            # foreign container: absolutize against whatever ancestors exist
            for p in chain:
                element.x += by_id[p].x
                element.y += by_id[p].y
            warnings.append(f"vertex {cell_id!r}: non-group parent {parent!r} flattened")


def _drop_dangling_edges(canvas: Canvas, warnings: list[str]) -> None:
    ids = {e.id for e in canvas.elements}
    kept = []
    for c in canvas.connectors:
        bad = [end for end in (c.source, c.target) if isinstance(end, str) and end not in ids]
        if bad:
            warnings.append(f"edge {c.id!r} references unknown cell {bad[0]!r}; dropped")
        else:
            kept.append(c)
    canvas.connectors[:] = kept


def from_mxgraph_xml(text: str) -> Canvas:
    """Parse, dropping the warning list. See read_mxgraph_xml."""
    return read_mxgraph_xml(text).canvas


# --------------------------------------------------------------------------
# SVG writer
# --------------------------------------------------------------------------

_MARKERS = (
    '<marker id="arrow-open" markerWidth="12" markerHeight="12" refX="9" refY="4" '
    'orient="auto" markerUnits="userSpaceOnUse">'
    '<path d="M1,1 L9,4 L1,7" fill="none" stroke="#000000"/></marker>'
    '<marker id="arrow-filled" markerWidth="12" markerHeight="12" refX="9" refY="4" '
    'orient="auto" markerUnits="userSpaceOnUse">'
    '<path d="M0,0 L10,4 L0,8 Z" fill="#000000" stroke="none"/></marker>'
    '<marker id="arrow-block" markerWidth="12" markerHeight="12" refX="9" refY="4" '
    'orient="auto" markerUnits="userSpaceOnUse">'
    '<path d="M1,0 L9,0 L9,8 L1,8 Z" fill="#000000" stroke="none"/></marker>'
)


def _svg_style_attrs(s: StyleSpec, filled: bool = True) -> str:
    fill = s.fill_color if filled else "none"
    out = (
        f'fill="{fill}" stroke="{s.stroke_color}" '
        f'stroke-width="{fmt_number(s.stroke_width)}" opacity="{fmt_number(s.opacity)}"'
    )
    if s.dash_pattern:
        out += f' stroke-dasharray="{" ".join(fmt_number(d) for d in s.dash_pattern)}"'
    return out


def _svg_text(x: float, y: float, label: str, s: StyleSpec, anchor: str = "middle") -> str:
    lines = label.split("\n")
    attrs = (
        f'x="{fmt_number(x)}" y="{fmt_number(y)}" text-anchor="{anchor}" '
        f'font-size="{fmt_number(s.font_size)}" font-family="{_attr(s.font_family)}" '
        f'fill="{s.stroke_color}"'
    )
    if len(lines) == 1:
        return f"<text {attrs}>{escape(label)}</text>"
    spans = "".join(
        f'<tspan x="{fmt_number(x)}" dy="{"0" if i == 0 else "1.2em"}">{escape(line)}</tspan>'
        for i, line in enumerate(lines)
    )
    return f"<text {attrs}>{spans}</text>"


def _svg_shape(canvas: Canvas, e: SceneElement) -> str:
    x, y = absolute_origin(canvas, e)
    w, h = e.width, e.height
    s = e.style
    if e.kind == "group":
        return f'<g id="{_attr(e.id)}"/>'
    if e.kind == "text":
        return _svg_text(x + w / 2, y + h / 2, e.label or "", s)
    if e.kind in ("rect", "rounded_rect"):
        rx = f' rx="{fmt_number(s.rounding_radius)}"' if e.kind == "rounded_rect" else ""
        shape = (
            f'<rect x="{fmt_number(x)}" y="{fmt_number(y)}" width="{fmt_number(w)}" '
            f'height="{fmt_number(h)}"{rx} {_svg_style_attrs(s)}/>'
        )
    elif e.kind == "ellipse":
        shape = (
            f'<ellipse cx="{fmt_number(x + w / 2)}" cy="{fmt_number(y + h / 2)}" '
            f'rx="{fmt_number(w / 2)}" ry="{fmt_number(h / 2)}" {_svg_style_attrs(s)}/>'
        )
    elif e.kind == "trapezoid":
        inset = w * 0.2
        points = (
            f"{fmt_number(x + inset)},{fmt_number(y)} {fmt_number(x + w - inset)},{fmt_number(y)} "
            f"{fmt_number(x + w)},{fmt_number(y + h)} {fmt_number(x)},{fmt_number(y + h)}"
        )
        shape = f'<polygon points="{points}" {_svg_style_attrs(s)}/>'
    elif e.kind == "cuboid":
        d = min(w, h) * 0.2
        front = (
            f"M{fmt_number(x)},{fmt_number(y + d)} L{fmt_number(x + w - d)},{fmt_number(y + d)} "
            f"L{fmt_number(x + w - d)},{fmt_number(y + h)} L{fmt_number(x)},{fmt_number(y + h)} Z "
        )
        top = (
            f"M{fmt_number(x)},{fmt_number(y + d)} L{fmt_number(x + d)},{fmt_number(y)} "
            f"L{fmt_number(x + w)},{fmt_number(y)} L{fmt_number(x + w - d)},{fmt_number(y + d)} Z "
        )
        side = (
            f"M{fmt_number(x + w - d)},{fmt_number(y + d)} L{fmt_number(x + w)},{fmt_number(y)} "
            f"L{fmt_number(x + w)},{fmt_number(y + h - d)} L{fmt_number(x + w - d)},{fmt_number(y + h)} Z"
        )
        shape = f'<path d="{front}{top}{side}" {_svg_style_attrs(s)}/>'
    elif e.kind == "path":
        shape = (
            f'<path d="M{fmt_number(x)},{fmt_number(y)} L{fmt_number(x + w)},{fmt_number(y + h)}" '
            f"{_svg_style_attrs(s, filled=False)}/>"
        )
    else:  # pragma: no cover - kinds are validated upstream
        raise SceneError(f"cannot render kind {e.kind!r}")
    if e.label:
        return f'<g id="{_attr(e.id)}">{shape}{_svg_text(x + w / 2, y + h / 2, e.label, s)}</g>'
    return shape


def _endpoint(canvas: Canvas, end: str | tuple[float, float]) -> tuple[float, float, SceneElement | None]:
    if isinstance(end, str):
        e = canvas.element(end)
        x, y = absolute_origin(canvas, e)
        return x + e.width / 2, y + e.height / 2, e
    return end[0], end[1], None


def _clip_to_box(cx: float, cy: float, tx: float, ty: float, e: SceneElement, canvas: Canvas) -> tuple[float, float]:
    """Move (cx, cy) along the segment toward (tx, ty) to the box boundary."""
    x, y = absolute_origin(canvas, e)
    dx, dy = tx - cx, ty - cy
    t = 1.0
    if dx > 0:
        t = min(t, (x + e.width - cx) / dx)
    elif dx < 0:
        t = min(t, (x - cx) / dx)
    if dy > 0:
        t = min(t, (y + e.height - cy) / dy)
    elif dy < 0:
        t = min(t, (y - cy) / dy)
    if t <= 0 or t > 1:
        return cx, cy
    return cx + dx * t, cy + dy * t


def _svg_connector(canvas: Canvas, c: Connector) -> str:
    sx, sy, s_el = _endpoint(canvas, c.source)
    tx, ty, t_el = _endpoint(canvas, c.target)
    first_toward = c.waypoints[0] if c.waypoints else (tx, ty)
    last_toward = c.waypoints[-1] if c.waypoints else (sx, sy)
    if s_el is not None:
        sx, sy = _clip_to_box(sx, sy, first_toward[0], first_toward[1], s_el, canvas)
    if t_el is not None:
        tx, ty = _clip_to_box(tx, ty, last_toward[0], last_toward[1], t_el, canvas)
    points = [(sx, sy), *c.waypoints, (tx, ty)]
    d = f"M{fmt_number(points[0][0])},{fmt_number(points[0][1])}" + "".join(
        f" L{fmt_number(x)},{fmt_number(y)}" for x, y in points[1:]
    )
    marker = "" if c.arrow_head == "none" else f' marker-end="url(#arrow-{c.arrow_head})"'
    path = f'<path d="{d}" {_svg_style_attrs(c.style, filled=False)}{marker}/>'
    if c.label:
        mx = (points[0][0] + points[-1][0]) / 2
        my = (points[0][1] + points[-1][1]) / 2
        return f'<g id="{_attr(c.id)}">{path}{_svg_text(mx, my - 4, c.label, c.style)}</g>'
    return path


def to_svg(canvas: Canvas) -> str:
    """Serialize to SVG 1.1; byte-deterministic."""
    w = fmt_number(canvas.page_width)
    h = fmt_number(canvas.page_height)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f"<defs>{_MARKERS}</defs>",
    ]
    for e in _ordered_elements(canvas):
        lines.append(_svg_shape(canvas, e))
    for c in canvas.connectors:
        lines.append(_svg_connector(canvas, c))
    lines.append("</svg>")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# bounds and canonical comparison
# --------------------------------------------------------------------------

def bounds(canvas: Canvas) -> tuple[float, float, float, float]:
    """Tight bounding box over elements and explicit connector points."""
    xs: list[float] = []
    ys: list[float] = []
    for e in canvas.elements:
        x, y = absolute_origin(canvas, e)
        xs += [x, x + e.width]
        ys += [y, y + e.height]
    for c in canvas.connectors:
        for end in (c.source, c.target):
            if not isinstance(end, str):
                xs.append(end[0])
                ys.append(end[1])
        for x, y in c.waypoints:
            xs.append(x)
            ys.append(y)
    if not xs:
        raise EmptyCanvasError("bounds of an empty canvas are undefined")
    return min(xs), min(ys), max(xs), max(ys)


def _style_dict(s: StyleSpec) -> dict:
    return {
        "fill": s.fill_color,
        "stroke": s.stroke_color,
        "stroke_width": s.stroke_width,
        "dash": list(s.dash_pattern) if s.dash_pattern else None,
        "font_size": s.font_size,
        "font_family": s.font_family,
        "opacity": s.opacity,
        "radius": s.rounding_radius,
    }


def canonical_form(canvas: Canvas) -> dict:
    """Comparison form: z_order normalized to serialization rank, metadata excluded."""
    elements = []
    for rank, e in enumerate(_ordered_elements(canvas)):
        d = {
            "id": e.id,
            "kind": e.kind,
            "x": e.x,
            "y": e.y,
            "width": e.width,
            "height": e.height,
            "label": e.label if e.label else None,
            "z": rank,
            "parent": e.parent_group,
            "concept": e.concept_tag,
            "style": _style_dict(e.style),
        }
        if e.kind != "rounded_rect":
            d["style"]["radius"] = None  # radius only meaningful on rounded rects
        elements.append(d)
    connectors = [
        {
            "id": c.id,
            "source": c.source if isinstance(c.source, str) else list(c.source),
            "target": c.target if isinstance(c.target, str) else list(c.target),
            "waypoints": [list(p) for p in c.waypoints],
            "arrow": c.arrow_head,
            "label": c.label if c.label else None,
            "style": {**_style_dict(c.style), "fill": None, "radius": None},
        }
        for c in canvas.connectors
    ]
    return {
        "page": [canvas.page_width, canvas.page_height],
        "grid": canvas.grid,
        "elements": elements,
        "connectors": connectors,
    }


def canvases_equal(a: Canvas, b: Canvas) -> bool:
    return canonical_form(a) == canonical_form(b)
