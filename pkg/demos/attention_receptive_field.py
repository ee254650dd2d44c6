"""
Receptive field of the three attention variants
===============================================

Each variant's spatial branch is a chain of depth-wise convolutions. With
every kernel set to ones, the response to a single centred impulse shows the
support of the whole chain.
"""
import numpy as np

from lckasr.blocks import AttentionVariant, impulse_response
from lckasr.complexity import probe_receptive_field, spatial_params_per_channel

np.set_printoptions(linewidth=140)

for kind in ("lka", "lska", "lcka"):
    v = AttentionVariant(kind, kernel=5, dilation=3)
    rf = probe_receptive_field(v)
    print(f"{kind:5s} support {rf.height}x{rf.width} dense={rf.dense} "
          f"weights/channel={spatial_params_per_channel(v)}")

# the 2-D kernel costs 2*25 weights per channel, the 1-D split 4*5
# the dilated stage fills the gaps left by its own stride because the
# local 5-tap stage before it is wider than the dilation
resp = impulse_response(AttentionVariant("lcka"))
rows, cols = np.nonzero(resp)
print(resp[rows.min():rows.max() + 1, cols.min():cols.max() + 1].astype(int)[8])

# LSKA and LCKA run the same four 1-D kernels in a different order
print(np.array_equal(impulse_response(AttentionVariant("lska")), impulse_response(AttentionVariant("lcka"))))

# a degenerate kernel collapses to a single pixel
print(probe_receptive_field(AttentionVariant("lcka", kernel=1, dilation=1)))
