"""Ray transfer matrices of the eye, and how big a blur a defocused eye sees.

Run: python demos/01_ray_matrices.py
"""
import numpy as np

from vcd.optics import apply, compose, eye_transport, invert, refract, translate

# An eye focused at 38 cm with the retina 25 mm behind the lens.
d_f, d_e = 0.38, 0.025
f = 1.0 / (1.0 / d_f + 1.0 / d_e)
print(f"eye focal length {f * 1e3:.3f} mm")

# Display -> lens -> retina. When the display sits at the focal plane the
# top-right entry vanishes: every ray from one display point meets one retinal point.
for d_o in (0.38, 0.25):
    chain = compose(translate(d_e), compose(refract(f), translate(d_o)))
    print(f"display at {d_o * 100:.0f} cm: B = {chain.b:+.3e} m")

# The full transport also records where each ray crossed the pupil. It is
# invertible for any geometry: det = -d_e.
m = eye_transport(0.25, f, d_e)
print("det M =", m.det)
ray = (1e-3, 0.004)  # 1 mm off axis on the display, small slope
back = apply(invert(m), apply(m, ray))
print("round trip", np.allclose(back, ray, atol=1e-15))

# Similar triangles give the blur circle on the display plane for a 6 mm pupil.
pupil = 0.006
print(f"blur diameter on the display {pupil * abs(1 - 0.25 / d_f) * 1e3:.2f} mm "
      f"(about {pupil * abs(1 - 0.25 / d_f) / 1e-4:.0f} panel pixels at 254 ppi)")
