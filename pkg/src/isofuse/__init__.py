"""isofuse: fuse two anisotropic orthogonal-view volumes into one isotropic volume.

A continuous intensity model with a learnable multi-resolution hash encoding
is fit to a reference view, a sine-activated displacement network aligns the
second view to it, and a final fusion pass refines the intensity model on
both views before it is sampled on a regular isotropic grid. A built-in
simulator and metric suite support desk-scale verification end to end.
"""

__version__ = "0.1.0"
