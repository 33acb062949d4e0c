"""k8sdistill: corpus distillation and instrumental verification for Kubernetes manifests."""

__version__ = "0.1.0"

from k8sdistill.manifest import (
    GroupVersionKind,
    ManifestDocument,
    ManifestPackage,
    ManifestSyntaxError,
    canonicalize,
    content_hash,
    parse_package,
    strip_llm_wrapping,
    structural_exact_match,
)

__all__ = [
    "__version__",
    "GroupVersionKind",
    "ManifestDocument",
    "ManifestPackage",
    "ManifestSyntaxError",
    "canonicalize",
    "content_hash",
    "parse_package",
    "strip_llm_wrapping",
    "structural_exact_match",
]
