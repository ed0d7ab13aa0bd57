"""
Complex layers and the CSM distance
===================================

A tour of the complex building blocks: activations that keep the phase,
the full-kernel convolution, and the slice-weighted CSM distance that the
generator is trained against.
"""

# %%
import numpy as np

from csmgan import cxnn
from csmgan.csm import csm_distance, csm_distance_grad

z = np.array([1.0, 0.1 + 0.1j, -2.0, 3j])
print("modReLU(b=-1/4)      ", np.round(cxnn.modrelu(z, -0.25), 4))
print("cardioid(alpha=1/2)  ", np.round(cxnn.leaky_cardioid(z, 0.5), 4))
print("split sigmoid mean(0)", cxnn.split_sigmoid_mean(np.zeros(3, complex)))

# %%
# A full-kernel convolution is a dense layer over the flattened tensor.
rng = np.random.default_rng(0)
conv = cxnn.FullConv((4, 4, 2), 3, rng)
x = cxnn.ComplexTensor.from_complex(rng.standard_normal((1, 4, 4, 2)) + 1j * rng.standard_normal((1, 4, 4, 2)))
print("conv output shape", conv.forward(x).shape)

# %%
# The distance mixes correlation (weight kappa = 0.9) and norm mismatch.
a = rng.standard_normal((6, 6, 2)) + 1j * rng.standard_normal((6, 6, 2))
a = 0.5 * (a + np.conj(np.swapaxes(a, 0, 1)))
print("d(a, a)  =", csm_distance(a, a))
print("d(a, 2a) =", round(csm_distance(a, 2 * a), 4))
print("d(a, -a) =", round(csm_distance(a, -a), 4))

# %%
# Following the analytic gradient lowers the distance.
b = a + 0.5 * (rng.standard_normal(a.shape) + 1j * rng.standard_normal(a.shape))
b = 0.5 * (b + np.conj(np.swapaxes(b, 0, 1)))
for step in range(5):
    print(f"step {step}: d = {csm_distance(a, b):.4f}")
    b = b - 0.5 * csm_distance_grad(a[None], b[None])[0]
