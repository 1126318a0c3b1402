"""Infrastructure-as-code engine: render a templated YAML configuration,
create the declared resources in dependency order, and destroy them cleanly.

The template language is substitution only -- ``{{ key }}`` -- with no loops
or conditionals.  Creation follows a topological order of ``depends_on``;
any mid-deploy failure rolls back everything already created, so a failed
deploy leaves the emulator exactly as it found it.
"""

from __future__ import annotations

import base64
import re
import secrets
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from . import errors, services
from .core import Emulator, account_email

RESOURCE_TYPES = (
    "storage.bucket",
    "storage.object",
    "compute.instance",
    "functions.function",
    "iam.binding",
    "sourcerepo.repo",
    "registry.image",
    "logging.entries",
)

_PLACEHOLDER_RE = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@dataclass
class TemplateContext:
    project_id: str
    nonce: str
    level_name: str = ""
    extra: dict[str, str] = field(default_factory=dict)

    @classmethod
    def fresh(cls, project_id: str, level_name: str = "", extra: Optional[dict[str, str]] = None):
        return cls(
            project_id=project_id,
            nonce=secrets.token_hex(4),
            level_name=level_name,
            extra=dict(extra or {}),
        )

    def mapping(self) -> dict[str, str]:
        base = {
            "project_id": self.project_id,
            "nonce": self.nonce,
            "level_name": self.level_name,
        }
        base.update(self.extra)
        return base


def render_text(text: str, mapping: dict[str, str]) -> str:
    """Replace every ``{{ key }}`` with its context value."""

    def repl(match: re.Match) -> str:
        key = match.group(1)
        if key not in mapping:
            raise errors.UnknownPlaceholder(key)
        return str(mapping[key])

    rendered = _PLACEHOLDER_RE.sub(repl, text)
    if "{{" in rendered:
        raise errors.ValidationError("malformed template placeholder")
    return rendered


# ---------------------------------------------------------------------------
# Config model
# ---------------------------------------------------------------------------

@dataclass
class ResourceDecl:
    name: str
    type: str
    properties: dict[str, Any]
    depends_on: list[str] = field(default_factory=list)


@dataclass
class DeploymentConfig:
    resources: list[ResourceDecl]

    def ordered(self) -> list[ResourceDecl]:
        """Topological order of depends_on, stable in declaration order."""
        by_name = {r.name: r for r in self.resources}
        remaining_deps = {r.name: set(r.depends_on) for r in self.resources}
        done: set[str] = set()
        order: list[ResourceDecl] = []
        while len(order) < len(self.resources):
            progressed = False
            for decl in self.resources:
                if decl.name in done:
                    continue
                if remaining_deps[decl.name] <= done:
                    order.append(decl)
                    done.add(decl.name)
                    progressed = True
            if not progressed:
                stuck = sorted(set(by_name) - done)
                raise errors.ValidationError(f"dependency cycle among: {', '.join(stuck)}")
        return order


def parse_config(text: str) -> DeploymentConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise errors.YamlParseError(str(exc)) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("resources"), list):
        raise errors.ValidationError("deployment config must contain a 'resources' list")
    resources: list[ResourceDecl] = []
    seen: set[str] = set()
    for raw in doc["resources"]:
        if not isinstance(raw, dict):
            raise errors.ValidationError("each resource must be a mapping")
        name = raw.get("name")
        rtype = raw.get("type")
        if not isinstance(name, str) or not name:
            raise errors.ValidationError("resource missing a name")
        if name in seen:
            raise errors.ValidationError(f"duplicate resource name: {name}")
        seen.add(name)
        if rtype not in RESOURCE_TYPES:
            raise errors.ValidationError(f"unknown resource type: {rtype!r}")
        props = raw.get("properties") or {}
        if not isinstance(props, dict):
            raise errors.ValidationError(f"bad properties for {name}")
        deps = raw.get("depends_on") or []
        if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
            raise errors.ValidationError(f"bad depends_on for {name}")
        resources.append(ResourceDecl(name=name, type=rtype, properties=props, depends_on=deps))
    for decl in resources:
        for dep in decl.depends_on:
            if dep not in seen:
                raise errors.ValidationError(f"{decl.name} depends on undeclared {dep!r}")
    config = DeploymentConfig(resources)
    config.ordered()  # raises on cycles
    return config


def render_template(config_text: str, ctx: TemplateContext) -> DeploymentConfig:
    return parse_config(render_text(config_text, ctx.mapping()))


# ---------------------------------------------------------------------------
# Deployment records
# ---------------------------------------------------------------------------

@dataclass
class Handle:
    """One created resource, with enough data to delete it again."""

    kind: str
    data: dict[str, Any]


@dataclass
class DeploymentRecord:
    level_name: str
    project_id: str
    context: dict[str, str]
    rendered_config: str
    handles: list[Handle] = field(default_factory=list)
    inverse_actions: list[dict[str, Any]] = field(default_factory=list)
    status: str = "active"
    # policy version counter at deploy time; destroy rewinds to it so a pure
    # create/destroy round trip restores the project state exactly
    policy_version_before: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "level_name": self.level_name,
            "project_id": self.project_id,
            "context": dict(self.context),
            "status": self.status,
            "resources": [{"kind": h.kind, **h.data} for h in self.handles],
        }


# ---------------------------------------------------------------------------
# Create / destroy
# ---------------------------------------------------------------------------

def deploy(
    emu: Emulator,
    project_id: str,
    config: DeploymentConfig,
    *,
    level_name: str = "",
    context: Optional[TemplateContext] = None,
    rendered_config: str = "",
    fail_before_index: Optional[int] = None,
) -> DeploymentRecord:
    """Create every declared resource; all-or-nothing.

    ``fail_before_index`` injects a deterministic failure just before the
    Nth creation -- the hook the rollback tests drive.
    """
    with emu.exclusive():
        if emu.active_deployment is not None:
            raise errors.ActiveDeploymentExists("destroy the active deployment first")
        record = DeploymentRecord(
            level_name=level_name,
            project_id=project_id,
            context=context.mapping() if context else {},
            rendered_config=rendered_config,
            policy_version_before=emu.project(project_id).policy.version,
        )
        try:
            for index, decl in enumerate(config.ordered()):
                if fail_before_index is not None and index == fail_before_index:
                    raise errors.ResourceCreateError(decl.name, "injected failure")
                _create_resource(emu, project_id, decl, record)
        except errors.EmuError as exc:
            _delete_handles(emu, record.handles)
            emu.project(project_id).policy.version = record.policy_version_before
            if isinstance(exc, errors.ResourceCreateError):
                raise
            raise errors.ResourceCreateError(decl.name, exc.message) from exc
        emu.active_deployment = record
        return record


def destroy(emu: Emulator, record: Optional[DeploymentRecord] = None) -> None:
    """Tear down the active deployment: helper inverses first (newest first),
    then resources in reverse creation order.  Per-resource deletes are
    delete-if-exists, so a partially hand-deleted deployment still comes
    down cleanly."""
    with emu.exclusive():
        record = record or emu.active_deployment
        if record is None or record.status != "active":
            raise errors.NotActive("no active deployment")
        for action in reversed(record.inverse_actions):
            _apply_inverse(emu, action)
        _delete_handles(emu, record.handles)
        try:
            emu.project(record.project_id).policy.version = record.policy_version_before
        except errors.UnknownProject:
            pass
        record.status = "destroyed"
        emu.active_deployment = None


def _delete_handles(emu: Emulator, handles: list[Handle]) -> None:
    for handle in reversed(handles):
        _delete_resource(emu, handle)
    handles.clear()


# -- resource creation ---------------------------------------------------------

def _account_ref(project_id: str, value: str) -> str:
    return value if "@" in value else account_email(value, project_id)


def _ensure_account(emu: Emulator, project_id: str, ref: str, record: DeploymentRecord) -> str:
    """Instances and functions may name accounts that do not exist yet; they
    are provisioned on first use and torn down with the deployment."""
    email = _account_ref(project_id, ref)
    if emu.find_account(email) is None:
        name = email.split("@", 1)[0]
        emu.create_service_account(project_id, name, description="level runtime account")
        record.handles.append(
            Handle("service_account", {"project_id": project_id, "email": email})
        )
    return email


def _decode_content(props: dict[str, Any]) -> bytes:
    if "content_base64" in props:
        return base64.b64decode(props["content_base64"])
    return str(props.get("content", "")).encode("utf-8")


def _create_resource(
    emu: Emulator, project_id: str, decl: ResourceDecl, record: DeploymentRecord
) -> None:
    props = decl.properties
    try:
        if decl.type == "storage.bucket":
            name = str(props["name"])
            services.create_bucket(emu, project_id, name)
            record.handles.append(Handle("bucket", {"project_id": project_id, "name": name}))
        elif decl.type == "storage.object":
            bucket = str(props["bucket"])
            name = str(props["name"])
            services.object_put_unchecked(emu, bucket, name, _decode_content(props))
            record.handles.append(Handle("object", {"bucket": bucket, "name": name}))
        elif decl.type == "compute.instance":
            email = _ensure_account(emu, project_id, str(props["service_account"]), record)
            name = str(props["name"])
            metadata = {str(k): str(v) for k, v in (props.get("metadata") or {}).items()}
            services.create_instance(
                emu,
                project_id,
                name,
                zone=str(props.get("zone", "emu-central1-a")),
                metadata=metadata,
                attached_service_account=email,
                container_image=props.get("image"),
                serving_port=props.get("serving_port"),
            )
            record.handles.append(Handle("instance", {"project_id": project_id, "name": name}))
        elif decl.type == "functions.function":
            email = _ensure_account(emu, project_id, str(props["service_account"]), record)
            name = str(props["name"])
            env = {str(k): str(v) for k, v in (props.get("env") or {}).items()}
            services.create_function(
                emu,
                project_id,
                name,
                source=str(props["source"]),
                env=env,
                require_auth=bool(props.get("require_auth", False)),
                runtime_account=email,
            )
            record.handles.append(Handle("function", {"project_id": project_id, "name": name}))
        elif decl.type == "iam.binding":
            role = str(props["role"])
            members = [
                m if m == "allUsers" else _account_ref(project_id, str(m))
                for m in props.get("members", [])
            ]
            existing = emu.project(project_id).policy.bindings.get(role, set())
            added = [m for m in members if m not in existing]
            emu.grant(project_id, role, added)
            record.handles.append(
                Handle("binding", {"project_id": project_id, "role": role, "members": added})
            )
        elif decl.type == "sourcerepo.repo":
            name = str(props["name"])
            services.create_repo(emu, project_id, name)
            record.handles.append(Handle("repo", {"project_id": project_id, "name": name}))
        elif decl.type == "registry.image":
            path = str(props["path"])
            files = {
                str(p): str(data).encode("utf-8") for p, data in (props.get("files") or {}).items()
            }
            services.image_push(emu, project_id, path, files)
            record.handles.append(Handle("image", {"project_id": project_id, "path": path}))
        elif decl.type == "logging.entries":
            logger = str(props.get("logger", "system"))
            ids = []
            for entry in props.get("entries", []):
                if isinstance(entry, str):
                    severity, message = "INFO", entry
                else:
                    severity = str(entry.get("severity", "INFO"))
                    message = str(entry.get("message", ""))
                ids.append(emu.append_log(project_id, severity, logger, message).entry_id)
            record.handles.append(
                Handle("log_entries", {"project_id": project_id, "entry_ids": ids})
            )
        else:  # unreachable given parse_config validation
            raise errors.ValidationError(f"unknown resource type: {decl.type}")
    except errors.ResourceCreateError:
        raise
    except KeyError as exc:
        raise errors.ResourceCreateError(decl.name, f"missing property {exc}") from exc
    except errors.EmuError as exc:
        raise errors.ResourceCreateError(decl.name, exc.message) from exc


def _delete_resource(emu: Emulator, handle: Handle) -> None:
    data = handle.data
    if handle.kind == "bucket":
        services.delete_bucket(emu, data["project_id"], data["name"])
    elif handle.kind == "object":
        services.object_delete_unchecked(emu, data["bucket"], data["name"])
    elif handle.kind == "instance":
        services.delete_instance(emu, data["project_id"], data["name"])
    elif handle.kind == "function":
        services.delete_function(emu, data["project_id"], data["name"])
    elif handle.kind == "binding":
        emu.revoke(data["project_id"], data["role"], data["members"])
    elif handle.kind == "repo":
        services.delete_repo(emu, data["project_id"], data["name"])
    elif handle.kind == "image":
        services.image_delete(emu, data["project_id"], data["path"])
    elif handle.kind == "log_entries":
        emu.remove_log_entries(data["project_id"], data["entry_ids"])
    elif handle.kind == "service_account":
        emu.delete_service_account(data["project_id"], data["email"])


# -- helper inverses (recorded by the level framework) ---------------------------

def _apply_inverse(emu: Emulator, action: dict[str, Any]) -> None:
    kind = action["kind"]
    if kind == "restore_object":
        if action["previous_base64"] is None:
            services.object_delete_unchecked(emu, action["bucket"], action["name"])
        else:
            services.object_put_unchecked(
                emu, action["bucket"], action["name"], base64.b64decode(action["previous_base64"])
            )
    elif kind == "remove_binding_members":
        emu.revoke(action["project_id"], action["role"], action["members"])
    elif kind == "remove_log_entries":
        emu.remove_log_entries(action["project_id"], action["entry_ids"])
    elif kind == "remove_commits":
        project = emu.project(action["project_id"])
        chain = project.repos.get(action["repo"])
        if chain is not None:
            drop = set(action["commit_ids"])
            project.repos[action["repo"]] = [c for c in chain if c.commit_id not in drop]
    elif kind == "delete_image":
        services.image_delete(emu, action["project_id"], action["path"])
    elif kind == "restore_instance_metadata":
        project = emu.project(action["project_id"])
        instance = project.instances.get(action["instance"])
        if instance is not None:
            if action["previous"] is None:
                instance.metadata.pop(action["key"], None)
            else:
                instance.metadata[action["key"]] = action["previous"]
    elif kind == "restore_function_env":
        project = emu.project(action["project_id"])
        fn = project.functions.get(action["function"])
        if fn is not None:
            if action["previous"] is None:
                fn.env.pop(action["key"], None)
            else:
                fn.env[action["key"]] = action["previous"]
    elif kind == "delete_service_account":
        emu.delete_service_account(action["project_id"], action["email"])
