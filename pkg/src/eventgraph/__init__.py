"""Event-stream voxel graphs and a relational graph classifier on a small numpy autodiff engine."""

__version__ = "0.1.0"
