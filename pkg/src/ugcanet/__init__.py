"""UGCANet: multi-task endoscopy segmentation and classification on a small autodiff engine."""

__version__ = "0.1.0"
