"""The domain context model: allowed types, schema cache, compositions, validators.

A ContextModel pins what a corpus is allowed to contain: the set of allowed
GVKs, the local schema cache (with its declared Kubernetes version), known
composition chains, and the identifiers of the semantic rules and critical
policies the circuit enforces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from k8sdistill.manifest import GroupVersionKind
from k8sdistill.policies import CRITICAL_POLICIES
from k8sdistill.rules import RULES
from k8sdistill.schema import SchemaStore, bundled_cache_path, load_store

__all__ = ["ContextModel", "FAMILIES", "COMPOSITIONS", "default_context_model"]


def _gvk(api_version: str, kind: str) -> GroupVersionKind:
    return GroupVersionKind.from_api_version(api_version, kind)


# The eight stratification families and the GVKs each may emit.
FAMILIES: dict[str, tuple[GroupVersionKind, ...]] = {
    "RBAC": (
        _gvk("rbac.authorization.k8s.io/v1", "Role"),
        _gvk("rbac.authorization.k8s.io/v1", "RoleBinding"),
        _gvk("rbac.authorization.k8s.io/v1", "ClusterRole"),
        _gvk("rbac.authorization.k8s.io/v1", "ClusterRoleBinding"),
        _gvk("v1", "ServiceAccount"),
    ),
    "StatefulSet": (
        _gvk("apps/v1", "StatefulSet"),
        _gvk("v1", "Service"),
        _gvk("v1", "PersistentVolumeClaim"),
    ),
    "CronJob": (_gvk("batch/v1", "CronJob"), _gvk("batch/v1", "Job")),
    "Ingress": (
        _gvk("networking.k8s.io/v1", "Ingress"),
        _gvk("v1", "Service"),
        _gvk("apps/v1", "Deployment"),
    ),
    "NetworkPolicy": (_gvk("networking.k8s.io/v1", "NetworkPolicy"),),
    "HPA": (
        _gvk("autoscaling/v2", "HorizontalPodAutoscaler"),
        _gvk("apps/v1", "Deployment"),
    ),
    "ConfigMap/Secret": (_gvk("v1", "ConfigMap"), _gvk("v1", "Secret")),
    "composite": (
        _gvk("apps/v1", "Deployment"),
        _gvk("v1", "Service"),
        _gvk("networking.k8s.io/v1", "Ingress"),
        _gvk("v1", "ConfigMap"),
        _gvk("autoscaling/v2", "HorizontalPodAutoscaler"),
    ),
}

# Typical artifact composition chains (ordered kind sequences).
COMPOSITIONS: dict[str, tuple[str, ...]] = {
    "web-stack": ("Deployment", "Service", "Ingress"),
    "autoscaled-app": ("Deployment", "Service", "HorizontalPodAutoscaler"),
    "stateful-service": ("StatefulSet", "Service"),
    "scheduled-job": ("CronJob",),
    "service-account-binding": ("ServiceAccount", "Role", "RoleBinding"),
}


@dataclass(frozen=True)
class ContextModel:
    """Ordered description of the target domain."""

    meta_spec: frozenset[GroupVersionKind]
    schema_store: str
    compositions: dict[str, tuple[str, ...]]
    semantic_rules: tuple[str, ...]
    critical_policies: tuple[str, ...]
    kubernetes_version: str

    def __post_init__(self):
        for rule_id in self.semantic_rules:
            if rule_id not in RULES:
                raise ValueError(f"unknown semantic rule {rule_id!r}")
        for policy_id in self.critical_policies:
            if policy_id not in CRITICAL_POLICIES:
                raise ValueError(f"unknown critical policy {policy_id!r}")
        store = self.schemas
        if store.kubernetes_version != self.kubernetes_version:
            raise ValueError(
                f"context model version {self.kubernetes_version!r} does not "
                f"match schema cache version {store.kubernetes_version!r}")

    @property
    def schemas(self) -> SchemaStore:
        return load_store(str(self.schema_store))

    def gvks_for_family(self, family: str) -> tuple[GroupVersionKind, ...]:
        if family not in FAMILIES:
            raise KeyError(f"unknown resource family {family!r}")
        return FAMILIES[family]


def default_context_model(schema_cache: str | Path | None = None,
                          semantic_rules: tuple[str, ...] | None = None,
                          critical_policies: tuple[str, ...] | None = None,
                          ) -> ContextModel:
    """Context model over the bundled 1.30.0 schema cache."""
    cache = Path(schema_cache) if schema_cache else bundled_cache_path()
    store = load_store(str(cache))
    meta = frozenset(gvk for gvks in FAMILIES.values() for gvk in gvks)
    return ContextModel(
        meta_spec=meta,
        schema_store=str(cache),
        compositions=dict(COMPOSITIONS),
        semantic_rules=semantic_rules if semantic_rules is not None
        else tuple(sorted(RULES)),
        critical_policies=critical_policies if critical_policies is not None
        else tuple(sorted(CRITICAL_POLICIES)),
        kubernetes_version=store.kubernetes_version,
    )
