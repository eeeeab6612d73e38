"""CoolOpt - Measurement-based resonator cooling simulator & sequence optimizer"""

__version__ = "0.1.0"
__author__ = "Ivy"
