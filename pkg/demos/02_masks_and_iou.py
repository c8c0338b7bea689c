"""Rasterize lane polygons to bitmaps, encode them as RLE, compare with IoU.

Run: python3 demos/02_masks_and_iou.py
"""

import numpy as np

from drivearea import (
    box_iou,
    Box,
    mask_iou,
    mask_to_bbox,
    polygon_area,
    polygon_perimeter,
    rasterize_polygon,
    rle_decode,
    rle_encode,
)

W, H = 48, 27

# A pixel is set iff its center lies inside the polygon (even-odd rule).
lane = [(10.0, 26.0), (38.0, 26.0), (28.0, 8.0), (20.0, 8.0)]
mask = rasterize_polygon(lane, W, H)
print(f"lane mask: {mask.count} of {W * H} pixels set")
print(f"shoelace area {polygon_area(lane):.1f}, perimeter {polygon_perimeter(lane):.1f}")
print(f"pixel count stays within area +- (perimeter + vertices): "
      f"|{mask.count} - {polygon_area(lane):.1f}| <= {polygon_perimeter(lane) + 4:.1f}")

# ASCII view, one char per pixel.
print()
for row in mask.bits:
    print("".join("#" if v else "." for v in row))

# Run-length encoding round-trips bit for bit.
rle = rle_encode(mask)
assert rle_decode(rle) == mask
print(f"\nRLE: {len(rle.runs)} runs, first few: {rle.runs[:8]}")

# IoU between the lane and a shifted copy of itself.
shifted = [(x + 6, y) for x, y in lane]
other = rasterize_polygon(shifted, W, H)
print(f"\nmask IoU with 6px-shifted copy: {mask_iou(mask, other):.4f}")

# The tight bounding box lets box-level matching run on mask predictions.
bbox = mask_to_bbox(mask)
print(f"tight bbox: {bbox}")
print(f"box IoU of (0,0,2,2) vs (1,1,2,2): {box_iou(Box(0, 0, 2, 2), Box(1, 1, 2, 2)):.6f} (= 1/7)")
