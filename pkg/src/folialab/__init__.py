"""folialab: transversal harmonic and bi-harmonic map operators on discretized
Riemannian foliations, with finite-difference and spectral oracles.

Submodules are imported on first attribute access so that the command-line
entry point can configure threading before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("manifold", "section", "calculus", "tension", "variational", "flow", "cli", "errors")

_EXPORTS = {
    "build_model": "manifold", "build_target": "manifold", "validate_model": "manifold",
    "christoffel": "manifold", "curvature": "manifold", "ModelFoliation": "manifold",
    "TargetGeometry": "manifold", "BaseChart": "manifold",
    "FoliatedMapField": "section", "PullbackSection": "section", "PullbackOneForm": "section",
    "NormalField": "section", "BasicScalarField": "section", "VariationPath": "section",
    "eval_path": "section", "random_field": "section", "random_map": "section",
    "identity_map": "section", "linear_map": "section", "constant_map": "section",
    "circle_map": "section", "inner_product_fields": "section",
    "WeightedMeasure": "calculus", "integrate": "calculus", "covariant_derivative": "calculus",
    "pullback_derivative": "calculus", "rough_laplacian": "calculus", "divergence": "calculus",
    "check_divergence_theorem": "calculus", "a_y_operator": "calculus",
    "basic_laplacian": "calculus", "exterior_derivative": "calculus",
    "codifferential": "calculus", "twisted_codifferential": "calculus",
    "bundle_laplacian": "calculus", "weitzenbock_check": "calculus",
    "d_T": "tension", "tension": "tension", "totally_geodesic_residual": "tension",
    "stress_energy": "tension", "conservation_residual": "tension",
    "relative_harmonicity_residual": "tension", "curvature_action": "tension",
    "jacobi_apply": "tension", "generalized_jacobi_identity_residual": "tension",
    "bitension": "tension",
    "energy": "variational", "bienergy": "variational", "fd_first_variation": "variational",
    "fd_second_variation": "variational", "thess": "variational",
    "assemble_jacobi": "variational", "stability_report": "variational",
    "bienergy_hessian": "variational",
    "FlowConfig": "flow", "harmonic_flow": "flow", "bienergy_descent": "flow",
}

__all__ = list(_EXPORTS) + list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _EXPORTS:
        mod = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(mod, name)
    raise AttributeError(f"module 'folialab' has no attribute {name!r}")
