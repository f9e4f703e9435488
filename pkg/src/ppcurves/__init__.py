"""Penalized principal curves in metric spaces, with Euclidean and W2 backends."""
from .metric import (DistanceCache, EuclideanMetric, KnotCurve, ProjectionResult,
                     WassersteinMetric, arcwise_dist, constant_speed_resample, discrete_length,
                     metric_for, project)
from .ot import DiscreteMeasure, NestedDataset, TransportPlan
from .ppc import FitTrace, PPCConfig, VoronoiPartition, fit
from .seriation import DistanceMatrix, SeriationResult, kendall_tau_error

__version__ = "0.1.0"
