"""Rotary position encoding: scores depend only on the offset between positions.

Run: python demos/02_rope.py
"""

# %%
import numpy as np

from fusionsf.rope import AttentionParams, apply_rope, build_rope_tables, cross_attention
from fusionsf.tensor import Tensor

rng = np.random.default_rng(1)
q, k = rng.standard_normal(16), rng.standard_normal(16)


def score(m, n):
    rq = apply_rope(Tensor(q[None]), build_rope_tables(np.array([m]), 16)).data[0]
    rk = apply_rope(Tensor(k[None]), build_rope_tables(np.array([n]), 16)).data[0]
    return rq @ rk


for shift in (0.0, 3.0, 17.5, -40.0):
    print(f"score(5+{shift}, 2+{shift}) = {score(5 + shift, 2 + shift):+.12f}")

# %% Two-axis tables for image patches: half the channels follow latitude, half longitude.
centres = np.array([[0.5, -0.5], [0.5, 0.5], [-0.5, -0.5], [-0.5, 0.5]])
tab = build_rope_tables(centres, 8, max_freq=128)
print("sin table for patch centres\n", np.round(tab.sin, 3))

# %% Cross-attention of four patch tokens over three series tokens.
p = AttentionParams(8, 2, 4, rng, kv_dim=6)
out = cross_attention(Tensor(rng.standard_normal((4, 8))), Tensor(rng.standard_normal((3, 6))), p,
                      build_rope_tables(centres, 4), build_rope_tables(np.zeros((3, 2)), 4))
print("cross-attention output shape", out.shape)
