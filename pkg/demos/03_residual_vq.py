"""Residual vector quantization with EMA codebooks.

Run: python demos/03_residual_vq.py
"""

# %% Fit a two-stage quantizer to a clustered cloud of points with EMA updates only.
import numpy as np

from fusionsf.tensor import Tensor
from fusionsf.vq import ResidualVQ, residual_quantize, rvq_ema_update

rng = np.random.default_rng(2)
centres = rng.standard_normal((6, 4)) * 3
data = centres[rng.integers(0, 6, 2000)] + 0.2 * rng.standard_normal((2000, 4))

rvq = ResidualVQ.init_from(data[:256], 2, 16, rng)
for step in range(200):
    batch = data[rng.integers(0, len(data), 256)]
    res = residual_quantize(rvq, Tensor(batch))
    rvq_ema_update(rvq, res, rng=rng, dead_after=20)
    if step % 50 == 0:
        print(f"step {step:3d}  commitment {res.commit.item():.4f}")

# %% Each stage can only shrink the reconstruction error (later stages keep a zero code).
for q in (1, 2):
    z = residual_quantize(ResidualVQ(rvq.stages[:q]), Tensor(data)).z_q
    print(f"{q} stage(s): mean error {np.linalg.norm(data - z, axis=1).mean():.4f}")
