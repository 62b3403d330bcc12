"""spherepose: pose distributions on SO(3) from planar feature maps.

The pipeline: a small conv encoder produces a feature map, which is
orthographically projected onto the visible hemisphere and fit with real
spherical harmonics; an S^2 group convolution lifts it to a signal on SO(3);
an optional SO(3) convolution refines it; querying the signal on an
equal-volume rotation grid and applying a softmax yields a categorical
distribution over rotations, trained with cross-entropy.
"""

__version__ = "0.1.0"

__all__ = [
    "Model",
    "ModelConfig",
    "SpherePoseEstimator",
    "TrainConfig",
    "__version__",
    "evaluate",
    "generate",
    "load_dataset",
    "mollweide_svg",
    "train",
]

_LAZY = {
    "Model": ("spherepose.model", "Model"),
    "ModelConfig": ("spherepose.model", "ModelConfig"),
    "SpherePoseEstimator": ("spherepose.estimator", "SpherePoseEstimator"),
    "TrainConfig": ("spherepose.trainer", "TrainConfig"),
    "evaluate": ("spherepose.metrics", "evaluate"),
    "generate": ("spherepose.solids", "generate"),
    "load_dataset": ("spherepose.solids", "load_dataset"),
    "mollweide_svg": ("spherepose.viz", "mollweide_svg"),
    "train": ("spherepose.trainer", "train"),
}


def __getattr__(name):
    # lazy: keeps `import spherepose.rotations` free of numpy-heavy siblings
    # and of the sklearn import inside the estimator module
    try:
        module, attr = _LAZY[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    import importlib

    return getattr(importlib.import_module(module), attr)
