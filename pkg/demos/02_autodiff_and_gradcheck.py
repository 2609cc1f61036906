"""The minimal reverse-mode autodiff layer, and the exhaustive
finite-difference check of the full loss (classification + regression +
IoU guidance) on the reduced network.

Run: python3 demos/02_autodiff_and_gradcheck.py   (~10 s)
"""

import time

import numpy as np

from igtrack import autodiff as ad
from igtrack.autodiff import Var
from igtrack.gradcheck import run_gradcheck

print("== A tiny reverse-mode graph ==")
x = Var(np.array([1.0, 2.0, 3.0]))
w = Var(np.array([0.5, -1.0, 2.0]))
loss = (ad.exp(x * w) + x * x).sum()
loss.backward()
print(f"loss           = {loss.data:.4f}")
print(f"dloss/dx       = {np.round(x.grad, 4)}")
print(f"dloss/dw       = {np.round(w.grad, 4)}")
print("(check dloss/dw[0] by hand: x0*exp(x0*w0) = 1*e^0.5 =",
      f"{np.exp(0.5):.4f})")

print("\n== Convolution + depthwise cross-correlation ==")
img = Var(np.random.default_rng(0).normal(size=(3, 8, 8)))
kernel = Var(np.random.default_rng(1).normal(size=(2, 3, 3, 3)))
bias = Var(np.zeros(2))
feat = ad.relu(ad.conv2d(img, kernel, bias, stride=2))
print(f"conv output shape: {feat.data.shape}")
tmpl = Var(np.random.default_rng(2).normal(size=(2, 2, 2)))
resp = ad.xcorr_depthwise(feat, tmpl)
print(f"correlation response shape: {resp.data.shape}")
resp.sum().backward()
print(f"gradient flows back to the image: |dimg| max = {np.abs(img.grad).max():.4f}")

print("\n== Full-network gradient check (reduced config, float64) ==")
t0 = time.time()
passed, errors = run_gradcheck(seed=3, tolerance=1e-3)
for name, err in errors.items():
    print(f"  {name:12s} max relative error {err:.2e}")
print(f"{'PASS' if passed else 'FAIL'} in {time.time() - t0:.1f} s")
