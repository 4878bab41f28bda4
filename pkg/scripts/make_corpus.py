"""Regenerate the bundled fixture corpus (paper text + DrawIO figure pairs).

Run from the repository root:  python3 scripts/make_corpus.py
"""

from __future__ import annotations

from pathlib import Path

from figforge.scene import Canvas, Connector, SceneElement, StyleSpec

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"


def block(eid, x, y, label, fill="#DAE8FC", w=140.0, h=60.0, kind="rounded_rect"):
    return SceneElement(
        id=eid, kind=kind, x=x, y=y, width=w, height=h, label=label,
        style=StyleSpec(fill_color=fill, stroke_color="#6C8EBF"),
    )


def arrow(cid, src, dst, label=None):
    return Connector(id=cid, source=src, target=dst, label=label, arrow_head="filled")


def det_pyramid() -> tuple[str, Canvas]:
    text = """theme: detection
concept: backbone | stacked convolutional extractor
concept: feature_pyramid | multi scale feature pyramid
concept: det_head | box prediction head
edge: backbone -> feature_pyramid | features
edge: feature_pyramid -> det_head | fused levels

We study one-stage object detection. A stacked convolutional backbone
produces feature maps at several strides. A multi scale feature pyramid
fuses them top-down, and a shared box prediction head regresses classes
and offsets from every pyramid level.
"""
    c = Canvas(page_width=760, page_height=420)
    c.add_element(block("bb", 40, 160, "Backbone", "#DAE8FC"))
    c.add_element(block("p2", 260, 60, "P2", "#D5E8D4", w=180, h=50))
    c.add_element(block("p3", 290, 150, "P3", "#D5E8D4", w=120, h=50))
    c.add_element(block("p4", 320, 240, "P4", "#D5E8D4", w=60, h=50))
    c.add_element(block("hd", 540, 160, "Det Head", "#FFE6CC"))
    c.add_connector(arrow("e1", "bb", "p3", "features"))
    c.add_connector(arrow("e2", "p3", "hd", "levels"))
    return text, c


def seg_attention() -> tuple[str, Canvas]:
    text = """theme: segmentation
concept: encoder | patch token encoder
concept: cross_attention | cross attention fusion
concept: mask_head | mask prediction head
edge: encoder -> cross_attention | tokens
edge: cross_attention -> mask_head | attended features

Our segmentation model encodes the image into patch tokens, fuses a set
of learned queries with the tokens through cross attention, and decodes
each query into a mask with a light prediction head.
"""
    c = Canvas(page_width=760, page_height=420)
    c.add_element(block("en", 40, 150, "Encoder", "#DAE8FC"))
    c.add_element(block("at", 280, 150, "Cross-Attention", "#FFF2CC", w=180))
    c.add_element(block("mh", 560, 150, "Mask Head", "#FFE6CC"))
    c.add_connector(arrow("e1", "en", "at", "tokens"))
    c.add_connector(arrow("e2", "at", "mh"))
    return text, c


def cls_margin() -> tuple[str, Canvas]:
    text = """theme: classification
concept: feature_extractor | deep feature extractor
concept: margin_loss | additive margin objective
concept: classifier | cosine classifier
edge: feature_extractor -> classifier | embeddings
edge: classifier -> margin_loss | logits

For fine-grained classification we train a deep feature extractor with a
cosine classifier under an additive margin objective. The margin term
sharpens decision boundaries between visually close classes.
"""
    c = Canvas(page_width=760, page_height=420)
    c.add_element(block("fx", 40, 150, "Extractor", "#DAE8FC"))
    c.add_element(block("cl", 280, 150, "Classifier", "#D5E8D4"))
    c.add_element(
        SceneElement(
            id="ls", kind="ellipse", x=540, y=150, width=140, height=60, label="Margin Loss",
            style=StyleSpec(fill_color="#F8CECC", stroke_color="#B85450"),
        )
    )
    c.add_connector(arrow("e1", "fx", "cl", "embeddings"))
    c.add_connector(arrow("e2", "cl", "ls", "logits"))
    return text, c


def det_anchor() -> tuple[str, Canvas]:
    text = """theme: detection
concept: anchor_generator | dense anchor grid
concept: box_refiner | iterative box refinement
edge: anchor_generator -> box_refiner | proposals

This detector seeds a dense grid of anchors over the image and refines
them in two rounds. Each round re-scores the surviving anchors and
shifts them toward the nearest object center.
"""
    c = Canvas(page_width=760, page_height=420)
    c.add_element(block("ag", 60, 150, "Anchors", "#FFF2CC"))
    c.add_element(block("r1", 300, 150, "Refine 1", "#DAE8FC"))
    c.add_element(block("r2", 520, 150, "Refine 2", "#DAE8FC"))
    c.add_connector(arrow("e1", "ag", "r1", "proposals"))
    c.add_connector(arrow("e2", "r1", "r2"))
    return text, c


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for pair_id, build in (
        ("cls_margin", cls_margin),
        ("det_anchor", det_anchor),
        ("det_pyramid", det_pyramid),
        ("seg_attention", seg_attention),
    ):
        text, canvas = build()
        (OUT / f"{pair_id}.txt").write_text(text, encoding="utf-8")
        (OUT / f"{pair_id}.drawio").write_text(canvas.to_mxgraph_xml(), encoding="utf-8")
        print(f"wrote {pair_id}: {len(canvas.elements)} elements")


if __name__ == "__main__":
    main()
