"""
Limited-angle CT with the Radon transform and FBP
=================================================

A Shepp-Logan phantom is projected with the parallel-beam Radon transform
and reconstructed by filtered backprojection, once from a full 180 degree
scan and once with a 30 degree wedge of angles removed.
"""

import os
from pathlib import Path

import numpy as np

from innstab import operators as op
from innstab import render

out = Path(os.environ.get("INNSTAB_OUTPUT", "innstab-out")) / "notebooks"
out.mkdir(parents=True, exist_ok=True)

n = 128
x = op.shepp_logan(n)
full = op.RadonGeometry.create(n, num_angles=180, missing_wedge=None)
limited = op.RadonGeometry.create(n, num_angles=180, missing_wedge=(75, 105))
print("angles:", full.num_angles, "vs", limited.num_angles)

###############################################################################
# The projector is a sparse matrix, so backprojection is its exact adjoint.

rng = np.random.default_rng(0)
u, s = rng.random((n, n)), rng.standard_normal(full.sinogram_shape)
print("adjoint gap:", abs(np.vdot(op.radon(u, full), s) - np.vdot(u, op.backproject(s, full))))

###############################################################################
# Reconstructions.  The missing wedge leaves streaks along the unseen
# directions.

rec_full = op.fbp(op.radon(x, full), full)
rec_lim = op.fbp(op.radon(x, limited), limited)
print(f"PSNR full {op.psnr(rec_full, x):.2f} dB, limited {op.psnr(rec_lim, x):.2f} dB")

strip = render.panel([x, rec_full, rec_lim, np.abs(rec_lim - x)], [(0, 1), (0, 1), (0, 1), (0, 0.3)])
render.write_pgm(out / "radon_fbp.pgm", strip)
