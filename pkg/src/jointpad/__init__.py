"""Joint-angle estimation from a six-channel stretchable sensor pad.

Modules: ``core`` (sessions, I/O, preprocessing), ``entropy`` (channel
ranking), ``sim`` (synthetic data), ``lstm`` (regressor), ``transfer``
(unsupervised calibration), ``smooth`` (Kalman filter), ``evaluation``
(metrics and statistics), ``pipeline`` (stage glue) and ``cli``.
"""

__version__ = "0.1.0"
