"""Material point method cloth simulation with mesh colliders, rest-shape
compensation, finite-difference parameter fitting and geometric metrics."""

__version__ = "0.1.0"

from .constitutive import ElasticParams, first_piola, psi
from .geometry import MeshSequence, TriMesh, load_mesh, load_sequence, material_frames, save_mesh
from .inverse import OptimConfig, fit_parameters, phys_loss
from .metrics import chamfer_distance, f_score, penetration_depth, signed_distance
from .mpm import SimConfig, Simulator, simulate_sequence
from .params import PhysParams
from .restshape import RestShapeParam, build_rest_state

__all__ = [
    "ElasticParams", "first_piola", "psi", "MeshSequence", "TriMesh", "load_mesh",
    "load_sequence", "material_frames", "save_mesh", "OptimConfig", "fit_parameters",
    "phys_loss", "chamfer_distance", "f_score", "penetration_depth", "signed_distance",
    "SimConfig", "Simulator", "simulate_sequence", "PhysParams", "RestShapeParam",
    "build_rest_state",
]
