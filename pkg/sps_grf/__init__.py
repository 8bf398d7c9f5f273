"""sps-grf: two-stage sparse precision selection for Gaussian random fields."""

from .errors import SpsError
from .kernels import CovarianceParams, KernelFamily, KernelTag, LocationSet, correlation, covariance_matrix
from .pipeline import fit, fit_sps
from .predict import mspe, predictive_distribution
from .sampler import SpatialDataset, distance_weights, sample_covariance, sample_grf
from .segmentation import SegmentationPlan, fit_segmented, random_segments, spatial_segments
from .stage1_admm import PrecisionEstimate, Stage1Config, solve_stage1
from .stage2_lsq import Stage2Options, Stage2Result, fit_stage2

__version__ = "0.1.0"
