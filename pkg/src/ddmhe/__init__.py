"""Moving horizon estimation from Hankel-matrix data, with robust variant, error-bound constants and benchmarks."""
__version__ = "0.1.0"
