"""Why the pinhole display needs a brighter panel.

A pinhole mask passes only (aperture / pitch)^2 of the light; a lenslet
passes nearly all of it. With the same panel gain, the lenslet display is
far brighter.

Run: python demos/03_brightness.py
"""
import numpy as np

from vcd.config import load_config
from vcd.panel import PanelImage
from vcd.pipeline import render_panel

config = load_config(preset="hyperopic", overrides=["pinhole.emission_gain=1.0",
                                                    "scene.retina_resolution=[32, 32]",
                                                    "render.samples=256"])
white = PanelImage(np.ones(config.panel_resolution()))

lum = {kind: render_panel(config, white, kind).mean() for kind in ("none", "pinhole", "lenslet")}
fill = (config.pinhole.aperture / config.pinhole.pitch) ** 2
print(f"bare panel  {lum['none']:.3f}")
print(f"pinhole     {lum['pinhole']:.4f}  (ratio {lum['pinhole'] / lum['none']:.4f}, fill factor {fill:.4f})")
print(f"lenslet     {lum['lenslet']:.3f}")
