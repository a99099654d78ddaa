"""Image-folder to feature-file exporter for the selection engine."""

from .export import ExportError, ExportJob, export

__all__ = ["ExportError", "ExportJob", "export"]
__version__ = "0.1.0"
