"""Anchor grids, box-delta regression targets, and non-maximum suppression.

Run: python3 demos/03_proposal_geometry.py
"""

from drivearea import (
    AnchorConfig,
    Box,
    box_iou,
    decode_deltas,
    encode_deltas,
    generate_anchors,
    nms,
)

# Anchors tile the feature grid: one box per (cell, ratio, scale), all with
# area (base * scale)^2 and the requested height:width ratio.
cfg = AnchorConfig(base_size=16, scales=(8,), ratios=(0.5, 1.0, 2.0), feature_stride=16)
anchors = generate_anchors(cfg, (3, 4))
print(f"{len(anchors)} anchors on a 3x4 grid (3 ratios x 1 scale)")
for a in anchors[:3]:
    print(f"  center=({a.cx:.0f},{a.cy:.0f}) w={a.w:.2f} h={a.h:.2f} "
          f"area={a.w * a.h:.1f} h/w={a.h / a.w:.2f}")

# Box deltas are the regression parameterization between an anchor and a
# target: normalized center offsets plus log size ratios. Encoding then
# decoding is the identity.
anchor = Box(0, 0, 10, 10)
target = Box(5, 5, 20, 10)
d = encode_deltas(anchor, target)
print(f"\ndeltas anchor->target: dx={d.dx} dy={d.dy} dw={d.dw:.4f} dh={d.dh}")
print(f"decoded back: {decode_deltas(anchor, d)}")

# Greedy NMS keeps the best-scored box of each overlapping cluster.
boxes = [
    Box(10, 10, 20, 20),   # cluster 1, best
    Box(12, 11, 20, 20),   # cluster 1, suppressed
    Box(13, 12, 21, 19),   # cluster 1, suppressed
    Box(60, 40, 18, 18),   # cluster 2
]
scores = [0.95, 0.90, 0.85, 0.80]
kept = nms(boxes, scores, iou_threshold=0.5)
print(f"\nNMS kept indices {kept} out of {len(boxes)} boxes")
for i in kept:
    print(f"  kept box {i}: {boxes[i]} score {scores[i]}")
print(f"overlap of the two suppressed boxes with the winner: "
      f"{box_iou(boxes[0], boxes[1]):.2f}, {box_iou(boxes[0], boxes[2]):.2f}")
