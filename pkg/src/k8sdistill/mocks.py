"""Offline mock teacher: deterministic fixture replies for every family.

Ships with the repo so the whole pipeline is exercisable without API spend.
Given the same task, the mock always produces the same reply. Replies are
realistic: YAML is emitted in authoring order (not canonical form) and is
wrapped in Markdown fences for a deterministic subset of tasks, so the
stripping path is exercised.

A defect_rate > 0 makes a deterministic fraction of replies fail the circuit,
one defect class per level, rotating L1 -> L2 -> L3 -> L4.
"""
from __future__ import annotations

import hashlib
import re

import yaml

from k8sdistill.teacher import REAL_REVERSE, GenerationTask

__all__ = ["MockTeacher"]

_STEM = re.compile(r"name stem '([a-z0-9-]+)'")


def _digest(task: GenerationTask) -> int:
    payload = "|".join([task.stream, task.family, task.complexity,
                        *task.constraints])
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "big")


def _stem(task: GenerationTask) -> str:
    for constraint in task.constraints:
        match = _STEM.search(constraint)
        if match:
            return match.group(1)
    return f"app-{_digest(task) % 100000:05d}"


def _meta(name: str, labels: dict | None = None, namespace: str | None = None):
    meta = {"name": name}
    if namespace:
        meta["namespace"] = namespace
    if labels:
        meta["labels"] = labels
    return meta


def _container(stem: str, seed: int, port: int):
    return {
        "name": stem,
        "image": f"registry.local/{stem.rsplit('-', 1)[0]}:v1.{seed % 10}",
        "ports": [{"containerPort": port}],
        "resources": {
            "limits": {"cpu": f"{250 + (seed % 4) * 250}m",
                       "memory": f"{128 << (seed % 3)}Mi"},
            "requests": {"cpu": "100m", "memory": "64Mi"},
        },
        "securityContext": {"runAsNonRoot": True,
                            "allowPrivilegeEscalation": False},
    }


def _deployment(stem: str, seed: int, port: int):
    labels = {"app": stem}
    return {
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": _meta(stem, labels),
        "spec": {
            "replicas": 1 + seed % 4,
            "selector": {"matchLabels": labels},
            "template": {
                "metadata": {"labels": labels},
                "spec": {"containers": [_container(stem, seed, port)]},
            },
        },
    }


def _service(stem: str, seed: int, port: int, headless: bool = False):
    spec = {"selector": {"app": stem},
            "ports": [{"port": port, "targetPort": port}]}
    if headless:
        spec["clusterIP"] = "None"
    return {"apiVersion": "v1", "kind": "Service",
            "metadata": _meta(stem), "spec": spec}


def _configmap(name: str, seed: int):
    return {"apiVersion": "v1", "kind": "ConfigMap",
            "metadata": _meta(name),
            "data": {"LOG_LEVEL": ("info", "debug", "warning")[seed % 3],
                     "WORKERS": str(2 + seed % 6)}}


def _secret(name: str, seed: int):
    return {"apiVersion": "v1", "kind": "Secret",
            "metadata": _meta(name), "type": "Opaque",
            "stringData": {"API_TOKEN": f"token-{seed % 99999:05d}"}}


def _ingress(stem: str, seed: int, port: int):
    return {
        "apiVersion": "networking.k8s.io/v1",
        "kind": "Ingress",
        "metadata": _meta(stem),
        "spec": {"rules": [{
            "host": f"{stem}.example.com",
            "http": {"paths": [{
                "path": "/", "pathType": "Prefix",
                "backend": {"service": {"name": stem,
                                        "port": {"number": port}}}}]},
        }]},
    }


def _hpa(stem: str, seed: int, target: str):
    return {
        "apiVersion": "autoscaling/v2",
        "kind": "HorizontalPodAutoscaler",
        "metadata": _meta(stem + "-hpa"),
        "spec": {
            "scaleTargetRef": {"apiVersion": "apps/v1", "kind": "Deployment",
                               "name": target},
            "minReplicas": 1 + seed % 2,
            "maxReplicas": 4 + seed % 6,
            "metrics": [{"type": "Resource",
                         "resource": {"name": "cpu",
                                      "target": {"type": "Utilization",
                                                 "averageUtilization":
                                                     60 + (seed % 4) * 10}}}],
        },
    }


def _statefulset(stem: str, seed: int, port: int):
    labels = {"app": stem}
    return {
        "apiVersion": "apps/v1",
        "kind": "StatefulSet",
        "metadata": _meta(stem, labels),
        "spec": {
            "replicas": 1 + seed % 3,
            "serviceName": stem,
            "selector": {"matchLabels": labels},
            "template": {"metadata": {"labels": labels},
                         "spec": {"containers": [_container(stem, seed, port)]}},
            "volumeClaimTemplates": [{
                "metadata": {"name": "data"},
                "spec": {"accessModes": ["ReadWriteOnce"],
                         "resources": {"requests":
                                       {"storage": f"{1 << (seed % 4)}Gi"}}},
            }],
        },
    }


def _cronjob(stem: str, seed: int):
    return {
        "apiVersion": "batch/v1",
        "kind": "CronJob",
        "metadata": _meta(stem),
        "spec": {
            "schedule": f"{seed % 60} {seed % 24} * * *",
            "concurrencyPolicy": ("Allow", "Forbid", "Replace")[seed % 3],
            "jobTemplate": {"spec": {"template": {"spec": {
                "restartPolicy": "OnFailure",
                "containers": [_container(stem, seed, 8080)],
            }}}},
        },
    }


def _job(stem: str, seed: int):
    return {
        "apiVersion": "batch/v1",
        "kind": "Job",
        "metadata": _meta(stem + "-init"),
        "spec": {"backoffLimit": seed % 4,
                 "template": {"spec": {
                     "restartPolicy": "Never",
                     "containers": [_container(stem, seed, 8080)]}}},
    }


def _network_policy(stem: str, seed: int, port: int, egress: bool = False):
    policy = {
        "apiVersion": "networking.k8s.io/v1",
        "kind": "NetworkPolicy",
        "metadata": _meta(stem + ("-egress" if egress else "-ingress")),
        "spec": {
            "podSelector": {"matchLabels": {"app": stem}},
            "policyTypes": ["Egress"] if egress else ["Ingress"],
        },
    }
    if egress:
        policy["spec"]["egress"] = [{"to": [{"ipBlock": {"cidr": "10.0.0.0/8"}}],
                                     "ports": [{"port": 53, "protocol": "UDP"}]}]
    else:
        policy["spec"]["ingress"] = [{
            "from": [{"podSelector": {"matchLabels": {"role": "frontend"}}}],
            "ports": [{"port": port, "protocol": "TCP"}]}]
    return policy


def _service_account(stem: str):
    return {"apiVersion": "v1", "kind": "ServiceAccount",
            "metadata": _meta(stem + "-sa")}


def _role(stem: str, seed: int, cluster: bool = False):
    resources = (["pods"], ["pods", "pods/log"], ["configmaps"],
                 ["services", "endpoints"])[seed % 4]
    return {
        "apiVersion": "rbac.authorization.k8s.io/v1",
        "kind": "ClusterRole" if cluster else "Role",
        "metadata": _meta(stem + ("-cluster-reader" if cluster else "-reader")),
        "rules": [{"apiGroups": [""], "resources": resources,
                   "verbs": ["get", "list", "watch"]}],
    }


def _role_binding(stem: str, cluster: bool = False):
    suffix = "-cluster" if cluster else ""
    return {
        "apiVersion": "rbac.authorization.k8s.io/v1",
        "kind": "ClusterRoleBinding" if cluster else "RoleBinding",
        "metadata": _meta(f"{stem}{suffix}-binding"),
        "roleRef": {"apiGroup": "rbac.authorization.k8s.io",
                    "kind": "ClusterRole" if cluster else "Role",
                    "name": stem + ("-cluster-reader" if cluster else "-reader")},
        "subjects": [{"kind": "ServiceAccount", "name": stem + "-sa",
                      "namespace": "default"}],
    }


def _pvc(stem: str, seed: int):
    return {"apiVersion": "v1", "kind": "PersistentVolumeClaim",
            "metadata": _meta(stem + "-archive"),
            "spec": {"accessModes": ["ReadWriteOnce"],
                     "resources": {"requests":
                                   {"storage": f"{2 << (seed % 3)}Gi"}}}}


def _documents(task: GenerationTask, stem: str, seed: int) -> list[dict]:
    port = 8000 + seed % 1000
    family, level = task.family, task.complexity
    if family == "RBAC":
        if level == "simple":
            return [_role(stem, seed)]
        docs = [_service_account(stem), _role(stem, seed), _role_binding(stem)]
        if level == "complex":
            docs += [_role(stem, seed, cluster=True),
                     _role_binding(stem, cluster=True)]
        return docs
    if family == "StatefulSet":
        if level == "simple":
            return [_statefulset(stem, seed, port)]
        docs = [_statefulset(stem, seed, port),
                _service(stem, seed, port, headless=True)]
        if level == "complex":
            docs += [_configmap(stem + "-config", seed), _pvc(stem, seed)]
        return docs
    if family == "CronJob":
        if level == "simple":
            return [_cronjob(stem, seed)]
        docs = [_cronjob(stem, seed), _configmap(stem + "-config", seed)]
        if level == "complex":
            docs += [_job(stem, seed), _secret(stem + "-credentials", seed)]
        return docs
    if family == "Ingress":
        if level == "simple":
            return [_ingress(stem, seed, port)]
        docs = [_deployment(stem, seed, port), _service(stem, seed, port),
                _ingress(stem, seed, port)]
        if level == "complex":
            docs.append(_configmap(stem + "-config", seed))
        return docs
    if family == "NetworkPolicy":
        if level == "simple":
            return [_network_policy(stem, seed, port)]
        docs = [_network_policy(stem, seed, port), _deployment(stem, seed, port)]
        if level == "complex":
            docs += [_network_policy(stem, seed, port, egress=True),
                     _service(stem, seed, port)]
        return docs
    if family == "HPA":
        docs = [_deployment(stem, seed, port), _hpa(stem, seed, stem)]
        if level in ("medium", "complex"):
            docs.insert(1, _service(stem, seed, port))
        if level == "complex":
            docs.append(_configmap(stem + "-config", seed))
        return docs
    if family == "ConfigMap/Secret":
        if level == "simple":
            return [_configmap(stem + "-config", seed)]
        docs = [_configmap(stem + "-config", seed),
                _secret(stem + "-credentials", seed)]
        if level == "complex":
            docs += [_configmap(stem + "-flags", seed + 1),
                     _secret(stem + "-keys", seed + 1)]
        return docs
    # composite
    docs = [_deployment(stem, seed, port), _service(stem, seed, port)]
    if level in ("medium", "complex"):
        docs.append(_ingress(stem, seed, port))
    if level == "complex":
        docs += [_configmap(stem + "-config", seed), _hpa(stem, seed, stem)]
    return docs


DEFECTS = ("l1-prose", "l2-unknown-field", "l3-dangling-hpa", "l4-privileged")


class MockTeacher:
    """Transport double for EndpointConfig-driven clients."""

    def __init__(self, defect_rate: float = 0.0):
        self.defect_rate = defect_rate

    def __call__(self, prompt: str, task: GenerationTask) -> str:
        seed = _digest(task)
        if task.stream == REAL_REVERSE:
            return (f"Write the Kubernetes YAML package labelled "
                    f"{_stem(task)!r} exactly as deployed.")
        stem = _stem(task)
        docs = _documents(task, stem, seed)
        defect = None
        if self.defect_rate > 0 and (seed >> 8) % 1000 < self.defect_rate * 1000:
            defect = DEFECTS[(seed >> 20) % len(DEFECTS)]
            docs = self._corrupt(docs, defect, stem, seed)
        text = "---\n".join(
            yaml.dump(doc, sort_keys=False, default_flow_style=False, indent=2)
            for doc in docs)
        if defect == "l1-prose":
            return f"Here is the manifest you asked for:\n{text}"
        if seed % 3 != 0:
            return f"```yaml\n{text}```"
        return text

    @staticmethod
    def _corrupt(docs: list[dict], defect: str, stem: str, seed: int) -> list[dict]:
        docs = [dict(doc) for doc in docs]
        if defect == "l2-unknown-field":
            target = docs[0]
            if isinstance(target.get("spec"), dict):
                target["spec"] = {**target["spec"], "replicaCount": 3}
            else:
                target["replicaCount"] = 3
        elif defect == "l3-dangling-hpa":
            docs.append(_hpa(stem + "-orphan", seed, stem + "-missing"))
        elif defect == "l4-privileged":
            docs.append({
                "apiVersion": "v1", "kind": "Pod",
                "metadata": _meta(stem + "-debug"),
                "spec": {"containers": [{
                    "name": "debug", "image": "busybox:1.36",
                    "securityContext": {"privileged": True}}]},
            })
        return docs
