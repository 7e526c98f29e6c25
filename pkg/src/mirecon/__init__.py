"""Learned point-contribution indicator fields for surface reconstruction
from un-oriented point clouds, with a discrete Gauss-integral baseline."""

from .errors import ContractError, FormatError, MalformedFileError, MireconError, NumericError, ValidationError
from .geometry import KdTree, OrientedPointSet, TriangleMesh, normalize_mesh, sample_surface, signed_distance, \
    solid_angle_winding
from .gauss import ModifiedIndicatorParams, discrete_gauss_indicator, modified_indicator
from .mcubes import marching_cubes

__version__ = "0.1.0"
