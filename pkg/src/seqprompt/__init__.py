"""Class-incremental learning with an input-agnostic prompt encoder and
feedback-controlled prompt momentum, on a from-scratch autodiff core."""

__version__ = "0.1.0"
