__version__ = "0.1.0"

__all__ = [
    "certify",
    "config",
    "datasets",
    "errors",
    "experiments",
    "lipfun",
    "numerics",
    "odeflow",
    "plotting",
    "resnet",
    "results_analyzer",
    "spec_store",
    "suites",
    "training",
    "types",
]
