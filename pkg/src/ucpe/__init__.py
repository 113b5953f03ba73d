"""Unified CPE pipeline: ingestion, name standardization, extraction, graphs and filtering."""

from .cpe import CpeName, Part, UcpeEntry, VersionConstraint, compare_versions, format_cpe, parse_cpe
from .errors import UcpeError

__all__ = [
    "CpeName",
    "Part",
    "UcpeEntry",
    "UcpeError",
    "VersionConstraint",
    "compare_versions",
    "format_cpe",
    "parse_cpe",
]
__version__ = "0.1.0"
