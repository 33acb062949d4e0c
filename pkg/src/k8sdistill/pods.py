"""Traversal helpers for pod-bearing resources."""
from __future__ import annotations

WORKLOAD_KINDS = ("Deployment", "StatefulSet", "DaemonSet", "Job", "CronJob")

DEFAULT_NAMESPACE = "default"


def effective_namespace(tree: dict) -> str:
    """Namespace used for cross-resource resolution (absent means default)."""
    metadata = tree.get("metadata")
    if isinstance(metadata, dict) and isinstance(metadata.get("namespace"), str):
        return metadata["namespace"]
    return DEFAULT_NAMESPACE


def _dig(tree: dict, *keys):
    node = tree
    for key in keys:
        if not isinstance(node, dict):
            return None
        node = node.get(key)
    return node


def iter_pod_specs(tree: dict):
    """Yield (path, pod_spec) pairs found in one document tree."""
    kind = tree.get("kind")
    if kind == "Pod":
        spec = tree.get("spec")
        if isinstance(spec, dict):
            yield "spec", spec
    elif kind in ("Deployment", "StatefulSet", "DaemonSet", "ReplicaSet", "Job"):
        spec = _dig(tree, "spec", "template", "spec")
        if isinstance(spec, dict):
            yield "spec.template.spec", spec
    elif kind == "CronJob":
        spec = _dig(tree, "spec", "jobTemplate", "spec", "template", "spec")
        if isinstance(spec, dict):
            yield "spec.jobTemplate.spec.template.spec", spec


def iter_containers(pod_spec: dict):
    """Yield (path_fragment, container) over app and init containers."""
    for field in ("containers", "initContainers"):
        entries = pod_spec.get(field)
        if not isinstance(entries, list):
            continue
        for index, container in enumerate(entries):
            if isinstance(container, dict):
                yield f"{field}[{index}]", container


def pod_template_labels(tree: dict) -> dict | None:
    """Pod-template labels of a workload document, or None when absent."""
    kind = tree.get("kind")
    if kind == "CronJob":
        labels = _dig(tree, "spec", "jobTemplate", "spec", "template",
                      "metadata", "labels")
    elif kind in WORKLOAD_KINDS:
        labels = _dig(tree, "spec", "template", "metadata", "labels")
    else:
        return None
    return labels if isinstance(labels, dict) else None
