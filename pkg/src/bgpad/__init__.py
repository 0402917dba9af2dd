"""BGP anomaly detection: MRT ingest, per-bin features, correlation features,
two-sigma feature selection, a one-class SVM and cross-event evaluation."""

from ._accel import HAVE_NUMBA, backend

__version__ = "0.1.0"
