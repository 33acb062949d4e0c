"""Security policy checks (L4).

Critical policies (violations discard a record):
  P01  privileged container
  P02  host namespace sharing (hostNetwork / hostPID / hostIPC)
  P03  hostPath volume
  P04  capabilities.add containing SYS_ADMIN or NET_ADMIN
  P05  RoleBinding/ClusterRoleBinding granting cluster-admin to a default
       service account

Warning policies (recorded, never discard):
  W01  container without resources.limits
  W02  image tagged :latest or untagged
  W03  runAsNonRoot not asserted
  W04  allowPrivilegeEscalation not disabled
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from k8sdistill.manifest import ManifestPackage
from k8sdistill.pods import iter_containers, iter_pod_specs

__all__ = ["Policy", "PolicyFinding", "CRITICAL_POLICIES", "WARNING_POLICIES",
           "apply_policies"]

DANGEROUS_CAPABILITIES = ("SYS_ADMIN", "NET_ADMIN")


@dataclass(frozen=True)
class PolicyFinding:
    policy_id: str
    path: str
    message: str


@dataclass(frozen=True)
class Policy:
    policy_id: str
    description: str
    check: Callable[[ManifestPackage], list[PolicyFinding]]


def _for_each_container(pkg: ManifestPackage):
    for index, doc in enumerate(pkg):
        for spec_path, pod_spec in iter_pod_specs(doc.tree):
            for frag, container in iter_containers(pod_spec):
                yield f"doc[{index}].{spec_path}.{frag}", pod_spec, container


def _security_context(container: dict) -> dict:
    ctx = container.get("securityContext")
    return ctx if isinstance(ctx, dict) else {}


def _privileged(pkg):
    return [PolicyFinding("P01", f"{path}.securityContext.privileged",
                          f"container {container.get('name')!r} runs privileged")
            for path, _, container in _for_each_container(pkg)
            if _security_context(container).get("privileged") is True]


def _host_namespaces(pkg):
    findings = []
    for index, doc in enumerate(pkg):
        for spec_path, pod_spec in iter_pod_specs(doc.tree):
            for flag in ("hostNetwork", "hostPID", "hostIPC"):
                if pod_spec.get(flag) is True:
                    findings.append(PolicyFinding(
                        "P02", f"doc[{index}].{spec_path}.{flag}",
                        f"pod shares the host {flag[4:].lower()} namespace"))
    return findings


def _hostpath_volumes(pkg):
    findings = []
    for index, doc in enumerate(pkg):
        for spec_path, pod_spec in iter_pod_specs(doc.tree):
            volumes = pod_spec.get("volumes")
            if not isinstance(volumes, list):
                continue
            for v_index, volume in enumerate(volumes):
                if isinstance(volume, dict) and "hostPath" in volume:
                    findings.append(PolicyFinding(
                        "P03", f"doc[{index}].{spec_path}.volumes[{v_index}]",
                        f"volume {volume.get('name')!r} mounts a host path"))
    return findings


def _dangerous_capabilities(pkg):
    findings = []
    for path, _, container in _for_each_container(pkg):
        caps = _security_context(container).get("capabilities")
        added = caps.get("add") if isinstance(caps, dict) else None
        if not isinstance(added, list):
            continue
        bad = [cap for cap in added if cap in DANGEROUS_CAPABILITIES]
        if bad:
            findings.append(PolicyFinding(
                "P04", f"{path}.securityContext.capabilities.add",
                f"container {container.get('name')!r} adds {', '.join(bad)}"))
    return findings


def _cluster_admin_default_sa(pkg):
    findings = []
    for index, doc in enumerate(pkg):
        if doc.gvk.kind not in ("RoleBinding", "ClusterRoleBinding"):
            continue
        role_ref = doc.tree.get("roleRef")
        if not isinstance(role_ref, dict) or role_ref.get("name") != "cluster-admin":
            continue
        subjects = doc.tree.get("subjects")
        if not isinstance(subjects, list):
            continue
        for s_index, subject in enumerate(subjects):
            if isinstance(subject, dict) \
                    and subject.get("kind") == "ServiceAccount" \
                    and subject.get("name") == "default":
                findings.append(PolicyFinding(
                    "P05", f"doc[{index}].subjects[{s_index}]",
                    "cluster-admin bound to a default service account"))
    return findings


def _missing_limits(pkg):
    findings = []
    for path, _, container in _for_each_container(pkg):
        resources = container.get("resources")
        limits = resources.get("limits") if isinstance(resources, dict) else None
        if not isinstance(limits, dict) or not limits:
            findings.append(PolicyFinding(
                "W01", f"{path}.resources.limits",
                f"container {container.get('name')!r} sets no resource limits"))
    return findings


def _latest_or_untagged(pkg):
    findings = []
    for path, _, container in _for_each_container(pkg):
        image = container.get("image")
        if not isinstance(image, str) or not image:
            continue
        last = image.rsplit("/", 1)[-1]
        if "@" in last:
            continue  # digest-pinned
        if ":" not in last or last.endswith(":latest"):
            findings.append(PolicyFinding(
                "W02", f"{path}.image",
                f"image {image!r} is untagged or uses :latest"))
    return findings


def _run_as_nonroot_unasserted(pkg):
    findings = []
    for path, pod_spec, container in _for_each_container(pkg):
        effective = _security_context(container).get("runAsNonRoot")
        if effective is None:
            pod_ctx = pod_spec.get("securityContext")
            if isinstance(pod_ctx, dict):
                effective = pod_ctx.get("runAsNonRoot")
        if effective is not True:
            findings.append(PolicyFinding(
                "W03", f"{path}.securityContext.runAsNonRoot",
                f"container {container.get('name')!r} does not assert runAsNonRoot"))
    return findings


def _privilege_escalation_open(pkg):
    return [PolicyFinding(
                "W04", f"{path}.securityContext.allowPrivilegeEscalation",
                f"container {container.get('name')!r} leaves privilege "
                "escalation enabled")
            for path, _, container in _for_each_container(pkg)
            if _security_context(container).get("allowPrivilegeEscalation")
            is not False]


CRITICAL_POLICIES: dict[str, Policy] = {
    "P01": Policy("P01", "no privileged containers", _privileged),
    "P02": Policy("P02", "no host namespace sharing", _host_namespaces),
    "P03": Policy("P03", "no hostPath volumes", _hostpath_volumes),
    "P04": Policy("P04", "no SYS_ADMIN/NET_ADMIN capabilities",
                  _dangerous_capabilities),
    "P05": Policy("P05", "no cluster-admin for default service accounts",
                  _cluster_admin_default_sa),
}

WARNING_POLICIES: dict[str, Policy] = {
    "W01": Policy("W01", "containers should set resources.limits",
                  _missing_limits),
    "W02": Policy("W02", "images should be tag-pinned", _latest_or_untagged),
    "W03": Policy("W03", "runAsNonRoot should be asserted",
                  _run_as_nonroot_unasserted),
    "W04": Policy("W04", "allowPrivilegeEscalation should be disabled",
                  _privilege_escalation_open),
}


def apply_policies(pkg: ManifestPackage,
                   policy_ids: tuple[str, ...] | None = None,
                   ) -> tuple[list[PolicyFinding], list[PolicyFinding]]:
    """Run critical policies (optionally a subset) and all warning policies.

    Returns (critical findings, warnings).
    """
    selected = CRITICAL_POLICIES if policy_ids is None else {
        pid: CRITICAL_POLICIES[pid] for pid in policy_ids}
    critical: list[PolicyFinding] = []
    for policy in selected.values():
        critical.extend(policy.check(pkg))
    warnings: list[PolicyFinding] = []
    for policy in WARNING_POLICIES.values():
        warnings.extend(policy.check(pkg))
    return critical, warnings
