"""A deterministic, fully offline chat backend.

Implements every agent role with transparent heuristics over the structured
request text the roles produce. Used directly for self-contained runs and as
the source backend when recording replay fixtures. Same request, same bytes.
"""

from __future__ import annotations

import json
import re

from .util import canonical_json, stable_hash


def _hash_unit(text: str, modulus: int = 10000) -> float:
    """Deterministic pseudo-noise in [0, 1) derived from content."""
    return (int(stable_hash(text)[:12], 16) % modulus) / modulus


def _field(content: str, name: str) -> str:
    m = re.search(rf"^{re.escape(name)}: (.*)$", content, re.M)
    return m.group(1).strip() if m else ""


def _json_field(content: str, name: str):
    m = re.search(rf"^{re.escape(name)}: (.*)$", content, re.M)
    return json.loads(m.group(1)) if m else None


class RuleBasedBackend:
    """Heuristic responder covering all roles; no network, no randomness."""

    def complete(self, role, system_prompt, user_content, attachments=None) -> str:
        attachments = attachments or {}
        handler = getattr(self, f"_{role}", None)
        if handler is None:
            raise ValueError(f"rule-based backend has no handler for role {role!r}")
        return handler(user_content, attachments)

    # ------------------------------------------------------------- parser

    def _parser(self, content: str, attachments: dict) -> str:
        theme = _field(content, "theme") or "general methods"
        concepts = []
        seen = set()
        for m in re.finditer(r"^concept: ([^|\n]+)(?:\|(.*))?$", content, re.M):
            name = m.group(1).strip()
            cid = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
            if not cid or cid in seen:
                continue
            seen.add(cid)
            concepts.append(
                {
                    "id": cid,
                    "name": name,
                    "description": (m.group(2) or "").strip(),
                    "order": len(concepts),
                }
            )
        edges = []
        for m in re.finditer(r"^edge: ([^-\n]+)->([^|\n]+)(?:\|(.*))?$", content, re.M):
            src = re.sub(r"[^a-z0-9]+", "_", m.group(1).strip().lower()).strip("_")
            dst = re.sub(r"[^a-z0-9]+", "_", m.group(2).strip().lower()).strip("_")
            if src in seen and dst in seen:
                edges.append({"source": src, "target": dst, "label": (m.group(3) or "").strip()})
        if not concepts:
            concepts = [{"id": "method", "name": "method", "description": "overall method", "order": 0}]
        return canonical_json({"theme": theme, "concepts": concepts, "edges": edges})

    # ------------------------------------------------------------- drawer

    def _drawer(self, content: str, attachments: dict) -> str:
        candidates = _json_field(content, "candidates") or []
        variant = int(_field(content, "variant") or 0)
        done = int(_field(content, "concepts_done") or 0)
        if not candidates:
            return canonical_json({"invocations": [], "extra_elements": [], "note": "no candidates"})
        ordered = sorted(candidates, key=lambda c: c["id"])
        chosen = ordered[variant % len(ordered)]
        x = 60.0 + 260.0 * done
        y = 120.0 + 40.0 * (variant % 3)
        bindings = {}
        for p in chosen.get("params", []):
            name, kind = p["name"], p["kind"]
            lo, hi = (p.get("constraint") or [None, None])[:2] if kind in ("number", "integer") else (None, None)

            def clamp(v):
                if lo is not None:
                    v = max(lo, v)
                if hi is not None:
                    v = min(hi, v)
                return v

            if kind == "number" and name in ("x", "x0", "left"):
                bindings[name] = clamp(x)
            elif kind == "number" and name in ("y", "y0", "top"):
                bindings[name] = clamp(y)
            elif kind == "number" and name in ("w", "width"):
                bindings[name] = clamp(180.0)
            elif kind == "number" and name in ("h", "height"):
                bindings[name] = clamp(100.0)
            elif kind == "string_enum":
                choices = p["constraint"]
                bindings[name] = choices[variant % len(choices)]
        return canonical_json(
            {
                "invocations": [{"middleware": chosen["id"], "bindings": bindings}],
                "extra_elements": [],
                "note": f"variant {variant} placement at column {done}",
            }
        )

    # ---------------------------------------------------------- evaluator

    def _evaluator(self, content: str, attachments: dict) -> str:
        xml = attachments.get("canvas_xml", "")
        bonus = 0.1 * _hash_unit(xml)
        m = re.search(r"\(total (\d+)\)", content)
        total = int(m.group(1)) if m else 0
        if total > 0:
            m = re.search(r"^rendered: .*\((\d+)\)$", content, re.M)
            rendered = int(m.group(1)) if m else 0
            score = min(1.0, 0.05 + 0.8 * rendered / total + bonus)
            feedback = f"{rendered} of {total} concepts present; balance spacing"
        else:
            m = re.search(r"^canvas elements: (\d+)$", content, re.M)
            count = int(m.group(1)) if m else 0
            score = min(1.0, 0.3 + 0.1 * count + bonus)
            feedback = f"standalone figure with {count} elements"
        return canonical_json({"score": round(score, 6), "feedback": feedback})

    def _concept_evaluator(self, content: str, attachments: dict) -> str:
        xml = attachments.get("canvas_xml", "")
        concept = _field(content, "concept")
        score = 0.55 + 0.4 * _hash_unit(concept + "\n" + xml)
        return canonical_json(
            {"score": round(score, 6), "feedback": f"concept {concept} is recognizable"}
        )

    # ------------------------------------------------------------ refiner

    def _refiner(self, content: str, attachments: dict) -> str:
        moves = []
        for m in re.finditer(r"^- id=(\S+) concept=\S+ x=(-?\d+) y=(-?\d+)", content, re.M):
            eid, x, y = m.group(1), float(m.group(2)), float(m.group(3))
            dx = round(x / 20.0) * 20.0 - x
            dy = round(y / 20.0) * 20.0 - y
            if dx or dy:
                moves.append({"element": eid, "dx": dx, "dy": dy})
            if len(moves) >= 20:
                break
        return canonical_json({"moves": moves})

    # -------------------------------------------------------- constructor

    def _constructor_extract(self, content: str, attachments: dict) -> str:
        xml = attachments.get("canvas_xml", "")
        if xml.count("<mxCell") <= 2:  # only the two mandatory root cells
            return canonical_json({"proposals": []})
        concept_line = _field(content, "concept")
        text = concept_line.lower()
        if "pyramid" in text:
            proposal = _pyramid_template()
        elif "attention" in text:
            proposal = _attention_template()
        elif "loss" in text or "objective" in text:
            proposal = _loss_template()
        elif "abstract" in text:
            return canonical_json({"proposals": []})
        else:
            label = concept_line.split("|")[1].strip() if "|" in concept_line else "Block"
            proposal = _block_template(label)
        return canonical_json({"proposals": [proposal]})

    def _constructor_mutate(self, content: str, attachments: dict) -> str:
        mw = _json_field(content, "middleware")
        if mw is None:
            return canonical_json({"proposal": None})
        params = [dict(p) for p in mw["params"]]
        mutated = False
        shape_names = {"rect", "rectangle", "rounded_rect", "ellipse", "cuboid", "trapezoid", "box", "oval"}
        for p in params:
            if p["kind"] == "string_enum" and set(p["constraint"]) <= shape_names:
                for extra in ("cuboid", "trapezoid"):
                    if extra not in p["constraint"]:
                        p["constraint"] = list(p["constraint"]) + [extra]
                        mutated = True
                        break
                if mutated:
                    break
        if not mutated:
            for p in params:
                if p["kind"] in ("number", "integer") and p.get("constraint"):
                    lo, hi = p["constraint"]
                    p["constraint"] = [lo, hi + max(1, abs(hi) // 2)]
                    mutated = True
                    break
        if not mutated:
            return canonical_json({"proposal": None})
        return canonical_json(
            {"proposal": {"name": f"{mw['name']}_v2", "params": params, "body": mw["body"]}}
        )

    def _constructor_crossover(self, content: str, attachments: dict) -> str:
        a = _json_field(content, "parent_a")
        b = _json_field(content, "parent_b")
        if a is None or b is None:
            return canonical_json({"proposal": None})
        names = {p["name"]: p for p in a["params"]}
        params = [dict(p) for p in a["params"]]
        for p in b["params"]:
            if p["name"] not in names:
                params.append(dict(p))
            elif names[p["name"]]["kind"] != p["kind"]:
                return canonical_json({"proposal": None})  # incompatible parents
        body = {
            "instructions": list(a["body"]["instructions"]) + list(b["body"]["instructions"])
        }
        name = f"{a['name']}_{b['name']}"[:48]
        return canonical_json({"proposal": {"name": name, "params": params, "body": body}})

    def _constructor_screen(self, content: str, attachments: dict) -> str:
        blobs = _json_field(content, "middlewares") or []
        seen: dict[str, str] = {}
        remove = []
        for blob in sorted(blobs, key=lambda b: b["id"]):
            signature = canonical_json({"body": blob["body"], "params": blob["params"]})
            if signature in seen:
                remove.append(blob["id"])
            else:
                seen[signature] = blob["id"]
        return canonical_json({"remove": remove})

    # ------------------------------------------------------------- filter

    def _retrieval_filter(self, content: str, attachments: dict) -> str:
        target = _field(content, "target concept")
        tokens = set(re.findall(r"[a-z0-9]+", target.lower()))
        keep = []
        for m in re.finditer(r"^- id=(\S+) source_concept=(\S+)", content, re.M):
            mid, source = m.group(1), m.group(2)
            source_tokens = set(re.findall(r"[a-z0-9]+", source.lower()))
            id_tokens = set(re.findall(r"[a-z0-9]+", mid.lower()))
            if tokens & (source_tokens | id_tokens):
                keep.append(mid)
        if not keep:
            keep = [m.group(1) for m in re.finditer(r"^- id=(\S+)", content, re.M)]
        return canonical_json({"keep": keep})


# ----------------------------------------------------------------------
# canonical template proposals
# ----------------------------------------------------------------------

def _block_template(label: str) -> dict:
    return {
        "name": "Labeled_Block",
        "params": [
            {"name": "x", "kind": "number", "default": 60, "constraint": [0, 1600]},
            {"name": "y", "kind": "number", "default": 120, "constraint": [0, 900]},
            {"name": "w", "kind": "number", "default": 180, "constraint": [20, 600]},
            {"name": "h", "kind": "number", "default": 100, "constraint": [20, 400]},
            {"name": "num_units", "kind": "integer", "default": 1, "constraint": [1, 6]},
            {
                "name": "fill",
                "kind": "string_enum",
                "default": "#DAE8FC",
                "constraint": ["#DAE8FC", "#D5E8D4", "#FFE6CC", "#F8CECC"],
            },
        ],
        "body": {
            "instructions": [
                {
                    "op": "shape",
                    "shape": "rounded_rect",
                    "x": "x",
                    "y": "y",
                    "width": "w",
                    "height": "h",
                    "fill": "$fill",
                    "label": label,
                },
                {
                    "op": "shape",
                    "shape": "rect",
                    "x": "x + 12",
                    "y": "y + 24 + unit * ((h - 32) / num_units)",
                    "width": "w - 24",
                    "height": "(h - 32) / num_units - 6",
                    "fill": "#FFFFFF",
                    "repeat": {"count": "num_units", "var": "unit"},
                },
            ]
        },
    }


def _pyramid_template() -> dict:
    return {
        "name": "Feature_Pyramid",
        "params": [
            {"name": "x", "kind": "number", "default": 0, "constraint": [0, 1600]},
            {"name": "y", "kind": "number", "default": 0, "constraint": [0, 900]},
            {"name": "w", "kind": "number", "default": 90, "constraint": [10, 800]},
            {"name": "h", "kind": "number", "default": 120, "constraint": [10, 800]},
            {"name": "num_levels", "kind": "integer", "default": 3, "constraint": [1, 8]},
            {
                "name": "shape_mode",
                "kind": "string_enum",
                "default": "rectangle",
                "constraint": ["rectangle", "cuboid"],
            },
        ],
        "body": {
            "instructions": [
                {
                    "op": "shape",
                    "shape": "$shape_mode",
                    "x": "x + level * (w / num_levels) / 2",
                    "y": "y + level * (h / num_levels)",
                    "width": "w - level * (w / num_levels)",
                    "height": "h / num_levels",
                    "fill": "#DAE8FC",
                    "repeat": {"count": "num_levels", "var": "level"},
                }
            ]
        },
    }


def _attention_template() -> dict:
    return {
        "name": "Attention_map",
        "params": [
            {"name": "x", "kind": "number", "default": 10, "constraint": [0, 1600]},
            {"name": "y", "kind": "number", "default": 20, "constraint": [0, 900]},
            {"name": "w", "kind": "number", "default": 40, "constraint": [10, 400]},
            {"name": "h", "kind": "number", "default": 40, "constraint": [10, 400]},
            {"name": "cells", "kind": "integer", "default": 4, "constraint": [1, 16]},
            {
                "name": "pattern",
                "kind": "string_enum",
                "default": "diagonal",
                "constraint": ["diagonal", "row", "column"],
            },
        ],
        "body": {
            "instructions": [
                {"op": "shape", "shape": "rect", "x": "x", "y": "y", "width": "w", "height": "h",
                 "fill": "#FFFFFF"},
                {
                    "op": "shape",
                    "shape": "rect",
                    "x": "x + cell * (w / cells)",
                    "y": "y + cell * (h / cells)",
                    "width": "w / cells",
                    "height": "h / cells",
                    "fill": "#6C8EBF",
                    "repeat": {"count": "cells", "var": "cell"},
                    "when": {"param": "pattern", "equals": "diagonal"},
                },
                {
                    "op": "shape",
                    "shape": "rect",
                    "x": "x + cell * (w / cells)",
                    "y": "y",
                    "width": "w / cells",
                    "height": "h / cells",
                    "fill": "#6C8EBF",
                    "repeat": {"count": "cells", "var": "cell"},
                    "when": {"param": "pattern", "equals": "row"},
                },
                {
                    "op": "shape",
                    "shape": "rect",
                    "x": "x",
                    "y": "y + cell * (h / cells)",
                    "width": "w / cells",
                    "height": "h / cells",
                    "fill": "#6C8EBF",
                    "repeat": {"count": "cells", "var": "cell"},
                    "when": {"param": "pattern", "equals": "column"},
                },
            ]
        },
    }


def _loss_template() -> dict:
    return {
        "name": "Loss_Node",
        "params": [
            {"name": "x", "kind": "number", "default": 60, "constraint": [0, 1600]},
            {"name": "y", "kind": "number", "default": 120, "constraint": [0, 900]},
            {"name": "w", "kind": "number", "default": 90, "constraint": [20, 300]},
            {"name": "h", "kind": "number", "default": 50, "constraint": [20, 200]},
        ],
        "body": {
            "instructions": [
                {"op": "shape", "shape": "ellipse", "x": "x", "y": "y", "width": "w",
                 "height": "h", "fill": "#F8CECC", "label": "Loss"}
            ]
        },
    }
