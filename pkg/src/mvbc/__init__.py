"""Multiview behaviour-cloning workbench.

Simulated manipulation tasks observed from randomized mobile-base poses,
scripted demonstration collection, ensemble visuomotor policy training with a
spatial soft-argmax network, and the evaluation harness for the
multiview-vs-fixed-view comparisons.
"""

__version__ = "0.1.0"
