"""
From a mesh to 1024 shape tokens and back
=========================================

A procedural chair is voxelized, a small codec is trained on a desk of
random furniture, and the chair goes through encode/decode. The round
trip is scored with voxel IoU and point-cloud distances.
"""

import numpy as np

from voxtok import latent_coder as lc, metrics, shapes, voxelizer
from voxtok.mesh_io import normalize_to_unit_cube

# Mesh in, 64^3 occupancy out. The surface shell is conservative: every
# cell a triangle touches is marked. Filling closes the interior.
mesh = normalize_to_unit_cube(shapes.chair(np.random.default_rng(1)))
shell = voxelizer.voxelize_surface(mesh)
solid = voxelizer.solid_fill(shell)
print(f"chair: {len(mesh.triangles)} triangles, shell {shell.count} cells, solid {solid.count} cells")

# A codec trained on 120 random desk shapes. k = 512 keeps this quick;
# the library default is 8192.
train = shapes.desk_grids(120, seed=0)
model, history = lc.train_model(train, k=512, seed=0, epochs=2)
print(f"stage 1 mse {model.codebook.history[0]:.4f} -> {model.codebook.history[-1]:.4f}")
for i, h in enumerate(history):
    print(f"stage 2 epoch {i}: voxel mse {h.start:.5f} -> {h.after_basis:.5f}")

tokens = lc.encode(solid, model)
print("first tokens:", tokens.ids[:12].tolist())
back = lc.decode(tokens, model)
print(f"chair IoU after round trip: {metrics.voxel_iou(solid, back):.3f}")

# Held-out shapes, reported the same way as `voxtok eval`.
report = metrics.roundtrip_report(shapes.desk_grids(10, seed=1), model, n_points=2048)
print(metrics.format_table([report]))
