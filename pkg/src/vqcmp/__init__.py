"""vqcmp: build visual-quality-comparison instruction datasets from weak
supervisors and evaluate chat models on comparison benchmarks."""

__version__ = "0.1.0"
