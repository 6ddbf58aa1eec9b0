"""GNSS-RTK deformation monitoring toolkit.

Synthetic double-difference baselines, time-slice 3-sigma gross-error
rejection, Butterworth smoothing, a station/edge/cloud transport model,
an append-only record store and three-level displacement warnings.
"""

__version__ = "0.1.0"
