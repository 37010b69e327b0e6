"""Portable exports of truncated feature networks for bmodelab."""

from .export import (ExportError, NETWORKS, NetworkDef, build_network, export,
                     validation_image_path, validation_input,
                     weights_checksum)

__version__ = "0.1.0"

__all__ = ["ExportError", "NETWORKS", "NetworkDef", "build_network", "export",
           "validation_image_path", "validation_input", "weights_checksum",
           "__version__"]
