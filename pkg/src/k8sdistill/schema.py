"""Local schema cache and strict structural validation.

The cache is a directory of self-contained JSON Schema files, one per GVK,
named by a configurable template (default "{kind}-{group}-{version}.json",
lowercased; "{kind}-{version}.json" for the core group), plus a
cache-manifest.json declaring the Kubernetes version. A bundled cache for
1.30.0 ships with the package.

Validation is strict: required fields, scalar types, enum membership, and
rejection of fields absent from the schema. The walker covers the keyword
subset the bundled schemas use ($ref into $defs, type, enum, properties,
required, additionalProperties, items, minItems, minimum, oneOf).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from k8sdistill.manifest import GroupVersionKind

__all__ = [
    "SchemaStore",
    "SchemaStoreError",
    "SchemaViolation",
    "bundled_cache_path",
    "load_store",
    "validate_tree",
]

DEFAULT_TEMPLATE = "{kind}-{group}-{version}.json"
MANIFEST_NAME = "cache-manifest.json"

# Violation codes surfaced as schema-level rule ids.
REQUIRED_FIELD = "required-field"
UNKNOWN_FIELD = "unknown-field"
WRONG_TYPE = "wrong-type"
BAD_ENUM = "bad-enum"
BAD_VALUE = "bad-value"


class SchemaStoreError(Exception):
    """The schema cache is missing or unreadable (a configuration error,
    distinct from a validation failure)."""


@dataclass(frozen=True)
class SchemaViolation:
    code: str
    path: str
    message: str


def bundled_cache_path() -> Path:
    """Path of the schema cache shipped inside the package."""
    return Path(resources.files("k8sdistill") / "data" / "schemas" / "k8s-v1.30.0")


class SchemaStore:
    """Read-only view over a schema cache directory, loaded once and shared."""

    def __init__(self, root: Path, kubernetes_version: str,
                 filename_template: str = DEFAULT_TEMPLATE):
        self.root = root
        self.kubernetes_version = kubernetes_version
        self.filename_template = filename_template
        self._cache: dict[GroupVersionKind, dict | None] = {}

    @classmethod
    def load(cls, root: str | Path) -> "SchemaStore":
        root = Path(root)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise SchemaStoreError(f"schema cache manifest not found: {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaStoreError(f"unreadable schema cache manifest: {exc}") from exc
        version = manifest.get("kubernetes_version")
        if not isinstance(version, str) or not version:
            raise SchemaStoreError("cache manifest lacks kubernetes_version")
        template = manifest.get("filename_template", DEFAULT_TEMPLATE)
        return cls(root=root, kubernetes_version=version, filename_template=template)

    def filename_for(self, gvk: GroupVersionKind) -> str:
        name = self.filename_template.format(
            kind=gvk.kind.lower(), group=gvk.group.lower(),
            version=gvk.version.lower())
        # Core-group resources drop the empty group segment entirely.
        return name.replace("--", "-") if not gvk.group else name

    def schema_for(self, gvk: GroupVersionKind) -> dict | None:
        """The schema document for a GVK, or None when the cache has none."""
        if gvk in self._cache:
            return self._cache[gvk]
        path = self.root / self.filename_for(gvk)
        schema = None
        if path.is_file():
            try:
                schema = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise SchemaStoreError(f"unreadable schema file {path}: {exc}") from exc
        self._cache[gvk] = schema
        return schema


@lru_cache(maxsize=8)
def load_store(root: str) -> SchemaStore:
    """Process-wide store per cache path; the directory is read-only."""
    return SchemaStore.load(root)


_TYPE_CHECKS = {
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "null": lambda v: v is None,
}


def _resolve_ref(schema: dict, root: dict) -> dict:
    ref = schema.get("$ref")
    while ref is not None:
        if not ref.startswith("#/"):
            raise SchemaStoreError(f"unsupported external $ref: {ref}")
        node = root
        for part in ref[2:].split("/"):
            node = node[part]
        schema = node
        ref = schema.get("$ref")
    return schema


def _type_name(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    return "object"


def _walk(value, schema: dict, root: dict, path: str,
          out: list[SchemaViolation]) -> None:
    schema = _resolve_ref(schema, root)

    if "oneOf" in schema:
        for candidate in schema["oneOf"]:
            if not _check(value, candidate, root):
                continue
            _walk(value, candidate, root, path, out)
            return
        out.append(SchemaViolation(
            BAD_VALUE, path,
            f"value {value!r} matches none of the allowed forms"))
        return

    expected = schema.get("type")
    if expected is not None:
        allowed = expected if isinstance(expected, list) else [expected]
        if not any(_TYPE_CHECKS[t](value) for t in allowed):
            out.append(SchemaViolation(
                WRONG_TYPE, path,
                f"expected {' or '.join(allowed)}, got {_type_name(value)}"))
            return

    if "enum" in schema:
        if value not in schema["enum"]:
            out.append(SchemaViolation(
                BAD_ENUM, path,
                f"value {value!r} not one of {schema['enum']}"))
            return

    if "minimum" in schema and isinstance(value, (int, float)) \
            and not isinstance(value, bool):
        if value < schema["minimum"]:
            out.append(SchemaViolation(
                BAD_VALUE, path,
                f"value {value!r} below minimum {schema['minimum']}"))

    if isinstance(value, dict):
        properties = schema.get("properties", {})
        for name in schema.get("required", []):
            if name not in value:
                out.append(SchemaViolation(
                    REQUIRED_FIELD, f"{path}.{name}" if path else name,
                    f"required field {name!r} is missing"))
        additional = schema.get("additionalProperties", True)
        for key, item in value.items():
            child = f"{path}.{key}" if path else str(key)
            if key in properties:
                _walk(item, properties[key], root, child, out)
            elif additional is False:
                out.append(SchemaViolation(
                    UNKNOWN_FIELD, child,
                    f"field {key!r} is not allowed here"))
            elif isinstance(additional, dict):
                _walk(item, additional, root, child, out)

    elif isinstance(value, list):
        if "minItems" in schema and len(value) < schema["minItems"]:
            out.append(SchemaViolation(
                BAD_VALUE, path,
                f"expected at least {schema['minItems']} items, got {len(value)}"))
        items = schema.get("items")
        if items is not None:
            for index, item in enumerate(value):
                _walk(item, items, root, f"{path}[{index}]", out)


def _check(value, schema: dict, root: dict) -> bool:
    probe: list[SchemaViolation] = []
    _walk(value, schema, root, "", probe)
    return not probe


def validate_tree(tree: dict, schema: dict) -> list[SchemaViolation]:
    """Validate one document tree against its GVK schema, strict mode."""
    out: list[SchemaViolation] = []
    _walk(tree, schema, schema, "", out)
    return out
