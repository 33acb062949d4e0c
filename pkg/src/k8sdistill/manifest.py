"""Manifest substrate: domain types, YAML parsing, canonical form, hashing.

Everything downstream (validation circuit, corpus pipeline, metrics) consumes
the types and pure functions defined here. All types are immutable after
construction and every function is side-effect free, so they are safe to call
from any number of concurrent workers.

Canonical form: UTF-8, comments stripped, mapping keys sorted lexicographically
by code point at every depth, sequence order preserved, block style only,
2-space indent, scalars normalized (lowercase booleans, plain integers, strings
quoted only when YAML requires it), documents joined by a line containing
exactly "---", single trailing newline.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import yaml

__all__ = [
    "GroupVersionKind",
    "ManifestDocument",
    "ManifestPackage",
    "ManifestSyntaxError",
    "parse_package",
    "canonicalize",
    "structural_exact_match",
    "strip_llm_wrapping",
    "content_hash",
]

# Fixed reason codes for syntax-level (L1) rejections.
L1_EMPTY = "empty"
L1_BAD_INDENT = "bad-indent"
L1_BAD_ESCAPE = "bad-escape"
L1_PROSE = "prose-outside-yaml"
L1_NON_MAPPING_ROOT = "non-mapping-root"
L1_MISSING_API_KIND = "missing-apiversion-kind"
L1_DUPLICATE_KEY = "duplicate-key"


class ManifestSyntaxError(Exception):
    """A text failed syntax-level parsing. Carries a fixed reason code."""

    def __init__(self, code: str, message: str, line: int | None = None,
                 column: int | None = None):
        self.code = code
        self.message = message
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{code}: {message}{where}")


@dataclass(frozen=True, order=True)
class GroupVersionKind:
    """Identifies a Kubernetes resource type, e.g. apps/v1 Deployment."""

    group: str
    version: str
    kind: str

    def __post_init__(self):
        if not self.version or not self.kind:
            raise ValueError("version and kind must be non-empty")

    @classmethod
    def from_api_version(cls, api_version: str, kind: str) -> "GroupVersionKind":
        group, _, version = api_version.rpartition("/")
        return cls(group=group, version=version, kind=kind)

    @property
    def api_version(self) -> str:
        return f"{self.group}/{self.version}" if self.group else self.version

    def __str__(self) -> str:
        return f"{self.api_version} {self.kind}"


@dataclass(frozen=True)
class ManifestDocument:
    """One parsed YAML document with a mapping root and apiVersion/kind."""

    raw_text: str
    tree: dict
    gvk: GroupVersionKind
    name: str
    namespace: str | None = None


@dataclass(frozen=True)
class ManifestPackage:
    """An ordered multi-document YAML artifact."""

    documents: tuple[ManifestDocument, ...]

    def __post_init__(self):
        if not self.documents:
            raise ValueError("a package holds at least one document")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)


class _DuplicateKey(Exception):
    def __init__(self, key, mark):
        self.key = key
        self.mark = mark


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader variant: duplicate mapping keys are an error, anchors and
    merge keys are expanded, and timestamps stay plain strings."""

    def construct_mapping(self, node, deep=False):
        if isinstance(node, yaml.MappingNode):
            self.flatten_mapping(node)
            seen = set()
            for key_node, _ in node.value:
                key = self.construct_object(key_node, deep=True)
                if isinstance(key, (dict, list)):
                    raise yaml.constructor.ConstructorError(
                        None, None, "complex mapping keys are not supported",
                        key_node.start_mark)
                if key in seen:
                    raise _DuplicateKey(key, key_node.start_mark)
                seen.add(key)
        return super().construct_mapping(node, deep=deep)


# Strip the YAML 1.1 timestamp resolver: bare dates stay strings, so trees
# round-trip through the canonical emitter without tag surprises.
_StrictLoader.yaml_implicit_resolvers = {
    ch: [(tag, regexp) for tag, regexp in resolvers
         if tag != "tag:yaml.org,2002:timestamp"]
    for ch, resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items()
}


def _classify_yaml_error(exc: yaml.YAMLError) -> str:
    text = str(exc)
    if "\\t" in text or "'\t'" in text or "tab" in text:
        return L1_BAD_INDENT
    if "expected <block end>" in text or "indentation" in text:
        return L1_BAD_INDENT
    if "escape" in text:
        return L1_BAD_ESCAPE
    # Anything else the scanner/parser rejects is treated as text that is not
    # YAML at all, which in practice means prose wrapped around the manifest.
    return L1_PROSE


def _error_mark(exc: yaml.YAMLError):
    mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
    if mark is None:
        return None, None
    return mark.line + 1, mark.column + 1


def parse_package(text: str) -> ManifestPackage:
    """Parse multi-document YAML text into a ManifestPackage.

    Documents whose root parses to null are dropped; a text with no surviving
    documents is rejected. Raises ManifestSyntaxError with a reason code and,
    where the parser provides one, a line/column position.
    """
    if not text or not text.strip():
        raise ManifestSyntaxError(L1_EMPTY, "input is empty")

    loader = _StrictLoader(text)
    raw_docs: list[tuple[str, object]] = []
    try:
        while loader.check_node():
            node = loader.get_node()
            raw = text[node.start_mark.index:node.end_mark.index]
            tree = loader.construct_document(node)
            raw_docs.append((raw, tree))
    except _DuplicateKey as exc:
        raise ManifestSyntaxError(
            L1_DUPLICATE_KEY, f"duplicate mapping key {exc.key!r}",
            exc.mark.line + 1, exc.mark.column + 1) from None
    except yaml.YAMLError as exc:
        line, column = _error_mark(exc)
        raise ManifestSyntaxError(
            _classify_yaml_error(exc), str(exc).replace("\n", " "),
            line, column) from None
    finally:
        loader.dispose()

    documents = []
    for raw, tree in raw_docs:
        if tree is None or tree == "":
            continue  # stray separators and comment-only documents
        index = len(documents)
        if not isinstance(tree, dict):
            raise ManifestSyntaxError(
                L1_NON_MAPPING_ROOT,
                f"document {index} root is {type(tree).__name__}, not a mapping")
        for key in tree:
            if not isinstance(key, str) or re.search(r"\s", key):
                raise ManifestSyntaxError(
                    L1_PROSE,
                    f"document {index} has non-field root key {key!r}; "
                    "output contains text outside YAML structure")
        api_version = tree.get("apiVersion")
        kind = tree.get("kind")
        if not isinstance(api_version, str) or not api_version \
                or not isinstance(kind, str) or not kind:
            raise ManifestSyntaxError(
                L1_MISSING_API_KIND,
                f"document {index} lacks scalar apiVersion/kind fields")
        metadata = tree.get("metadata")
        name, namespace = "", None
        if isinstance(metadata, dict):
            if isinstance(metadata.get("name"), str):
                name = metadata["name"]
            if isinstance(metadata.get("namespace"), str):
                namespace = metadata["namespace"]
        documents.append(ManifestDocument(
            raw_text=raw.strip("\n"),
            tree=tree,
            gvk=GroupVersionKind.from_api_version(api_version, kind),
            name=name,
            namespace=namespace,
        ))

    if not documents:
        raise ManifestSyntaxError(L1_EMPTY, "no non-empty documents in input")
    return ManifestPackage(documents=tuple(documents))


def _key_order(key) -> str:
    # Mapping keys are usually strings; code-point order on the canonical
    # scalar rendering keeps mixed-type keys deterministic too.
    if isinstance(key, str):
        return key
    if key is None:
        return "null"
    if isinstance(key, bool):
        return "true" if key else "false"
    return str(key)


def _sorted_tree(value):
    if isinstance(value, dict):
        return {k: _sorted_tree(value[k]) for k in sorted(value, key=_key_order)}
    if isinstance(value, list):
        return [_sorted_tree(item) for item in value]
    return value


class _CanonicalDumper(yaml.SafeDumper):
    pass


# PyYAML indents top-level block sequences at column 0 by default; keep that,
# but never let the emitter fold long lines (byte determinism).
_DUMP_ARGS = dict(
    Dumper=_CanonicalDumper,
    default_flow_style=False,
    sort_keys=False,
    indent=2,
    width=2 ** 30,
    allow_unicode=True,
)


def canonicalize(pkg: ManifestPackage) -> str:
    """Render a package into its canonical byte form (idempotent)."""
    parts = []
    for doc in pkg:
        dumped = yaml.dump(_sorted_tree(doc.tree), **_DUMP_ARGS)
        parts.append(dumped if dumped.endswith("\n") else dumped + "\n")
    return "---\n".join(parts)


def structural_exact_match(a: str, b: str) -> bool:
    """True iff both texts parse and share identical canonical bytes."""
    try:
        return canonicalize(parse_package(a)) == canonicalize(parse_package(b))
    except ManifestSyntaxError:
        return False


def content_hash(pkg: ManifestPackage) -> str:
    """SHA-256 of the canonical text, as lowercase hex."""
    return hashlib.sha256(canonicalize(pkg).encode("utf-8")).hexdigest()


_FENCE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)


def strip_llm_wrapping(text: str) -> str:
    """Remove Markdown fences from raw model output.

    With fenced blocks present, returns their bodies joined by document
    separators; otherwise returns the trimmed input. Never fabricates content;
    an empty result signals an empty-output failure to the caller.
    """
    bodies = [body.strip("\n").rstrip() for body in _FENCE.findall(text)]
    bodies = [body for body in bodies if body.strip()]
    if bodies:
        return "\n---\n".join(bodies)
    return text.strip()
