"""Nucleus instance segmentation and classification toolkit.

HoVer target generation, loss functions with analytic gradients, HoVer-Net
style post-processing, mPQ+/R² evaluation, seeded augmentation and forward
reference math for the network blocks.
"""

__version__ = "0.1.0"
