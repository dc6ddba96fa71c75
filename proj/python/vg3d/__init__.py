"""Desk-scale 3D visual grounding: box-surface relative position encoding,
text-confidence-gated cross-attention, and a parallel dual-branch decoder."""

from vg3d._core import (
    box_iou,
    box_surface_offset,
    center_offset,
    closest_point_on_box,
    decouple,
    gated_cross_attention,
    gen_dataset,
    grad_check_sigmoid_sum,
    offset_field,
    partition,
    pe_bias,
    pe_cost,
    token_confidence_gate,
    tokenize,
)

__all__ = [
    "box_iou",
    "box_surface_offset",
    "center_offset",
    "closest_point_on_box",
    "decouple",
    "gated_cross_attention",
    "gen_dataset",
    "grad_check_sigmoid_sum",
    "offset_field",
    "partition",
    "pe_bias",
    "pe_cost",
    "token_confidence_gate",
    "tokenize",
]
