"""Asymptotic key rates for decoy-state QKD with correlated, flawed pulses.

The pipeline runs characterization tables through correlation parameters,
overlap bounds and per-history linear programs to a secret-key rate per
channel-loss point.  :func:`qkdcorr.engine.run_sweep` is the library entry
point; ``qkdcorr`` on the command line wraps it.
"""

__version__ = "0.1.0"
