"""
SlumpVision - concrete slump estimation from top-down mixing videos
Autograd engine, spatio-temporal models, synthetic data and the training protocol
"""

__version__ = "1.0.0"
__author__ = "SlumpVision Team"
