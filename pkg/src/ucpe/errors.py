"""Exception hierarchy shared by every pipeline stage.

Each error carries a machine-readable ``code`` and the ``module`` that raised
it so the CLI can emit a stable ``{code, module, message, context}`` payload.
"""

from __future__ import annotations

from typing import Any


class UcpeError(Exception):
    code = "error"
    module = "ucpe"

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "module": self.module,
            "message": self.message,
            "context": {k: _jsonable(v) for k, v in self.context.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return str(value)


# cpe_model
class MalformedCpe(UcpeError, ValueError):
    code = "malformed_cpe"
    module = "cpe_model"


# feed_ingest
class FeedSchemaError(UcpeError, ValueError):
    code = "feed_schema"
    module = "feed_ingest"


# inconsistency
class UnknownVendor(UcpeError, KeyError):
    code = "unknown_vendor"
    module = "inconsistency"

    def __str__(self) -> str:
        return self.message


class ConflictingGroups(UcpeError, ValueError):
    code = "conflicting_groups"
    module = "inconsistency"


class ReviewFileError(UcpeError, ValueError):
    code = "review_file"
    module = "inconsistency"


# postprocess
class UnresolvableName(UcpeError, LookupError):
    code = "unresolvable_name"
    module = "postprocess"


class UnrecognizedDescriptor(UcpeError, ValueError):
    code = "unrecognized_descriptor"
    module = "postprocess"


# config_graph
class GraphError(UcpeError, ValueError):
    code = "graph_invalid"
    module = "config_graph"


class DanglingUcpe(GraphError):
    code = "dangling_ucpe"


class InventorySchemaError(UcpeError, ValueError):
    code = "inventory_schema"
    module = "config_graph"


class IntegrityViolation(UcpeError, ValueError):
    code = "integrity_violation"
    module = "config_graph"


class StorageIo(UcpeError, OSError):
    code = "storage_io"
    module = "config_graph"


# fp_filter
class StaleState(UcpeError, RuntimeError):
    code = "stale_state"
    module = "fp_filter"


# eval_harness
class GroundTruthMissing(UcpeError, FileNotFoundError):
    code = "ground_truth_missing"
    module = "eval_harness"


# cli
class ConfigError(UcpeError, ValueError):
    code = "config"
    module = "cli"
