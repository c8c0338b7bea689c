"""Why RoIAlign exists: quantified RoIPool misalignment on a tiny feature map.

Run: python3 demos/04_roi_pool_vs_align.py
"""

import numpy as np

from drivearea import Box, FeatureGrid, RoiSpec, misalignment_report, roi_align, roi_pool

# An 8x8 feature map whose value is just the cell's x coordinate, so any
# horizontal shift is directly visible in the pooled numbers.
ramp = np.tile(np.arange(8, dtype=np.float64), (8, 1))
feat = FeatureGrid.from_2d(ramp)

# A region at image x=7 with a 1/16 feature stride lands at feature
# coordinate 7/16 = 0.4375: not on a cell boundary.
roi = Box(7, 16, 48, 48)
scale = 1 / 16
spec = RoiSpec(roi=roi, spatial_scale=scale, output_size=(2, 2), sampling_points=2)

report = misalignment_report(roi, scale)
print("quantization offsets (feature cells):")
print(f"  roi_pool : {report.pool.as_dict()}")
print(f"  roi_align: {report.align.as_dict()}  (no quantization, by construction)")

pooled = roi_pool(feat, spec)
aligned = roi_align(feat, spec)
print(f"\nroi_pool bins:\n{pooled.values[0]}")
print(f"roi_align bins:\n{aligned.values[0]}")

# RoIPool cannot tell this roi from one snapped onto the cell grid; RoIAlign can.
snapped = RoiSpec(roi=Box(0, 16, 48, 48), spatial_scale=scale, output_size=(2, 2), sampling_points=2)
print(f"\nroi_pool(roi) == roi_pool(snapped roi):  {roi_pool(feat, spec) == roi_pool(feat, snapped)}")
print(f"roi_align(roi) == roi_align(snapped roi): {roi_align(feat, spec) == roi_align(feat, snapped)}")

delta = aligned.values[0] - roi_align(feat, snapped).values[0]
print(f"roi_align sees the 0.4375-cell shift in every bin: {delta.round(4).tolist()}")
