"""Emulator core: projects, service accounts, bearer tokens, the role
catalog, and the IAM policy evaluator that every emulated service consults.

All mutable state lives on one ``Emulator`` instance.  Mutations are applied
serially under a re-entrant lock (linearizable writes, read-your-writes);
request handlers never hold the lock across I/O.
"""

from __future__ import annotations

import base64
import contextlib
import hashlib
import json
import re
import secrets
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import yaml

from . import errors
from .clock import Clock

PROJECT_ID_RE = re.compile(r"[a-z][a-z0-9-]{4,28}")
ACCOUNT_NAME_RE = re.compile(r"[a-z][a-z0-9-]{2,30}")

ACCOUNT_DOMAIN = "iam.emucloud"

TOKEN_TTL_SECONDS = 3600.0

# Metadata server hardening modes.  "strict-header" additionally requires the
# custom header, which kills the classic proxy-forwarding SSRF vector.
HARDENING_DEFAULT = "default"
HARDENING_STRICT = "strict-header"
METADATA_FLAVOR_HEADER = "Metadata-Flavor"
METADATA_FLAVOR_VALUE = "Google"
METADATA_CUSTOM_HEADER = "X-EmuCloud-Metadata-Request"
METADATA_CUSTOM_VALUE = "true"

ANONYMOUS = "anonymous"
ALL_USERS = "allUsers"


def account_email(name: str, project_id: str) -> str:
    return f"{name}@{project_id}.{ACCOUNT_DOMAIN}"


def new_secret(prefix: str, nbytes: int = 24) -> str:
    """Random opaque secret; nbytes >= 16 keeps every credential above the
    128-bit entropy floor."""
    return f"{prefix}{secrets.token_hex(nbytes)}"


def derive_public_key(private_material: str) -> str:
    """Opaque 'ed-style' key pairs: the public half is a digest of the
    private half.  The property exercised by the levels is key placement,
    not cryptography."""
    digest = hashlib.sha256(private_material.strip().encode("utf-8")).hexdigest()
    return f"emu-pub-{digest[:40]}"


def generate_keypair() -> tuple[str, str]:
    """Returns (private, public)."""
    private = new_secret("emu-priv-")
    return private, derive_public_key(private)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class ServiceAccount:
    email: str
    project_id: str
    key_material: str
    description: str = ""


@dataclass
class AccessToken:
    token_id: str
    principal: str
    project_id: str
    expires_at: float
    kind: str = "access"  # "access" | "identity"
    audience: str = ""    # identity tokens only


@dataclass
class ObjectRecord:
    content: bytes
    content_type: str = "application/octet-stream"
    updated_at: float = 0.0


@dataclass
class Bucket:
    name: str
    project_id: str
    objects: dict[str, ObjectRecord] = field(default_factory=dict)


@dataclass
class Instance:
    name: str
    project_id: str
    zone: str
    metadata: dict[str, str] = field(default_factory=dict)
    attached_service_account: str = ""
    container_image: Optional[str] = None
    serving_port: Optional[int] = None


@dataclass
class FunctionDef:
    name: str
    project_id: str
    url: str
    env: dict[str, str] = field(default_factory=dict)
    source: str = ""
    require_auth: bool = False
    runtime_account: str = ""


@dataclass
class LogEntry:
    entry_id: str
    project_id: str
    timestamp: float
    severity: str  # DEBUG | INFO | ERROR
    logger: str
    message: str
    seq: int = 0


@dataclass
class Commit:
    commit_id: str
    parent_id: Optional[str]
    message: str
    files: dict[str, bytes]


@dataclass
class ContainerImage:
    registry_path: str  # "<project_id>/<name>:<tag>"
    files: dict[str, bytes]


@dataclass
class InstanceSession:
    session_id: str
    project_id: str
    instance_name: str


class Policy:
    """Project IAM policy: at most one binding per role, members merged.
    The etag bumps on every successful write; stale writes are rejected."""

    def __init__(self) -> None:
        self.bindings: dict[str, set[str]] = {}
        self._version = 1

    @property
    def etag(self) -> str:
        return f"etag-{self._version}"

    @property
    def version(self) -> int:
        return self._version

    @version.setter
    def version(self, value: int) -> None:
        self._version = value

    def bump(self) -> None:
        self._version += 1

    def members_with_permission(self, permission: str, catalog: dict[str, frozenset[str]]) -> set[str]:
        out: set[str] = set()
        for role, members in self.bindings.items():
            if permission in catalog.get(role, frozenset()):
                out |= members
        return out

    def to_wire(self) -> dict[str, Any]:
        return {
            "etag": self.etag,
            "bindings": [
                {"role": role, "members": sorted(members)}
                for role, members in sorted(self.bindings.items())
                if members
            ],
        }


@dataclass
class Project:
    project_id: str
    display_name: str
    created_at: float
    accounts: dict[str, ServiceAccount] = field(default_factory=dict)
    policy: Policy = field(default_factory=Policy)
    buckets: dict[str, Bucket] = field(default_factory=dict)
    instances: dict[str, Instance] = field(default_factory=dict)
    functions: dict[str, FunctionDef] = field(default_factory=dict)
    logs: list[LogEntry] = field(default_factory=list)
    repos: dict[str, list[Commit]] = field(default_factory=dict)
    images: dict[str, ContainerImage] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Role catalog
# ---------------------------------------------------------------------------

def load_catalog(text: str) -> dict[str, frozenset[str]]:
    """Parse the YAML role catalog: ``roles: [{role, permissions: [...]}]``."""
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict) or not isinstance(doc.get("roles"), list):
        raise errors.ValidationError("role catalog must contain a 'roles' list")
    catalog: dict[str, frozenset[str]] = {}
    for item in doc["roles"]:
        role = item.get("role")
        perms = item.get("permissions")
        if not isinstance(role, str) or not role.startswith("roles/"):
            raise errors.ValidationError(f"bad role name in catalog: {role!r}")
        if not isinstance(perms, list) or not all(isinstance(p, str) for p in perms):
            raise errors.ValidationError(f"bad permission list for {role}")
        catalog[role] = frozenset(perms)
    return catalog


def default_catalog_text() -> str:
    from importlib.resources import files

    return files("thunderctf.data").joinpath("roles.yaml").read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# Emulator
# ---------------------------------------------------------------------------

class Emulator:
    """Single logical owner of all emulated cloud state."""

    def __init__(
        self,
        clock: Optional[Clock] = None,
        catalog: Optional[dict[str, frozenset[str]]] = None,
        metadata_hardening: str = HARDENING_DEFAULT,
    ):
        if metadata_hardening not in (HARDENING_DEFAULT, HARDENING_STRICT):
            raise errors.ValidationError(f"unknown hardening mode: {metadata_hardening}")
        self.clock = clock or Clock()
        self.catalog = catalog if catalog is not None else load_catalog(default_catalog_text())
        self.metadata_hardening = metadata_hardening
        self.projects: dict[str, Project] = {}
        self.tokens: dict[str, AccessToken] = {}
        self.sessions: dict[str, InstanceSession] = {}
        # progress ledger: project_id -> {"completed": {...}, "submissions": [...], "hints": {...}}
        self.progress: dict[str, dict[str, Any]] = {}
        # the single active DeploymentRecord, owned by the deploy engine
        self.active_deployment: Optional[Any] = None
        self._bucket_index: dict[str, str] = {}  # bucket name -> project_id
        self._log_seq = 0
        self._lock = threading.RLock()
        self._exclusive_owner: Optional[int] = None

    # -- locking -------------------------------------------------------------

    @contextlib.contextmanager
    def locked(self):
        with self._lock:
            yield

    @contextlib.contextmanager
    def exclusive(self):
        """Deploy/destroy critical section.  While held, requests from other
        threads are turned away with 409 instead of queueing behind a long
        multi-resource mutation."""
        with self._lock:
            if self._exclusive_owner is not None and self._exclusive_owner != threading.get_ident():
                raise errors.DeploymentInProgress("a deployment operation is in progress")
            prev = self._exclusive_owner
            self._exclusive_owner = threading.get_ident()
        try:
            yield
        finally:
            with self._lock:
                self._exclusive_owner = prev

    def blocked_for_current_thread(self) -> bool:
        with self._lock:
            return (
                self._exclusive_owner is not None
                and self._exclusive_owner != threading.get_ident()
            )

    # -- projects & accounts ---------------------------------------------------

    def create_project(self, project_id: str, display_name: str = "") -> Project:
        with self.locked():
            if not PROJECT_ID_RE.fullmatch(project_id):
                raise errors.MalformedProjectId(f"bad project id: {project_id!r}")
            if project_id in self.projects:
                raise errors.DuplicateProject(f"project exists: {project_id}")
            project = Project(project_id, display_name, created_at=self.clock.now())
            self.projects[project_id] = project
            return project

    def project(self, project_id: str) -> Project:
        with self.locked():
            try:
                return self.projects[project_id]
            except KeyError:
                raise errors.UnknownProject(f"no such project: {project_id}") from None

    def create_service_account(
        self, project_id: str, name: str, description: str = ""
    ) -> ServiceAccount:
        with self.locked():
            project = self.project(project_id)
            if not ACCOUNT_NAME_RE.fullmatch(name):
                raise errors.MalformedAccountName(f"bad account name: {name!r}")
            email = account_email(name, project_id)
            if email in project.accounts:
                raise errors.DuplicateAccount(f"account exists: {email}")
            sa = ServiceAccount(
                email=email,
                project_id=project_id,
                key_material=new_secret("emu-key-"),
                description=description,
            )
            project.accounts[email] = sa
            return sa

    def delete_service_account(self, project_id: str, email: str) -> None:
        with self.locked():
            project = self.project(project_id)
            project.accounts.pop(email, None)
            self.revoke_tokens_for(email)

    def find_account(self, email: str) -> Optional[ServiceAccount]:
        with self.locked():
            for project in self.projects.values():
                if email in project.accounts:
                    return project.accounts[email]
            return None

    # -- tokens ---------------------------------------------------------------

    def mint_access_token(self, email: str, key_material: str) -> AccessToken:
        """Exchange a downloaded key for a bearer token.  Unknown account and
        wrong key produce the identical error, by design."""
        with self.locked():
            sa = self.find_account(email)
            if sa is None or not secrets.compare_digest(sa.key_material, key_material):
                raise errors.BadCredentials("invalid account or key")
            return self._mint(sa.email, sa.project_id, kind="access")

    def mint_identity_token(self, access_token_id: str, audience: str) -> AccessToken:
        with self.locked():
            token = self.resolve_token(access_token_id)
            if token is None or token.kind != "access":
                raise errors.InvalidToken("a valid access token is required")
            if not audience:
                raise errors.MissingAudience("identity tokens require an audience")
            return self._mint(token.principal, token.project_id, kind="identity", audience=audience)

    def mint_token_for_principal(self, principal: str, project_id: str) -> AccessToken:
        """Internal minting used by the metadata server and ssh sessions."""
        with self.locked():
            return self._mint(principal, project_id, kind="access")

    def _mint(self, principal: str, project_id: str, kind: str, audience: str = "") -> AccessToken:
        prefix = "emu-at-" if kind == "access" else "emu-it-"
        token = AccessToken(
            token_id=new_secret(prefix, 20),
            principal=principal,
            project_id=project_id,
            expires_at=self.clock.now() + TOKEN_TTL_SECONDS,
            kind=kind,
            audience=audience if kind == "identity" else "",
        )
        self.tokens[token.token_id] = token
        return token

    def resolve_token(self, token_id: Optional[str]) -> Optional[AccessToken]:
        """Look up an unexpired token; expired or unknown ids resolve to None."""
        if not token_id:
            return None
        with self.locked():
            token = self.tokens.get(token_id)
            if token is None or self.clock.now() >= token.expires_at:
                return None
            return token

    def revoke_tokens_for(self, principal: str) -> None:
        with self.locked():
            self.tokens = {
                tid: tok for tid, tok in self.tokens.items() if tok.principal != principal
            }

    # -- the evaluator ----------------------------------------------------------

    def check_permission(self, token: Any, permission: str, project_id: str) -> bool:
        """Total function behind every gated API.

        ``token`` may be a token id string, an AccessToken, or None.  Absent
        or unknown tokens evaluate as the anonymous principal; expired or
        identity-kind tokens authorize nothing.
        """
        with self.locked():
            principal = ANONYMOUS
            if isinstance(token, AccessToken):
                resolved: Optional[AccessToken] = token
                if self.clock.now() >= token.expires_at:
                    return False
            elif isinstance(token, str) and token:
                resolved = self.tokens.get(token)
                if resolved is not None and self.clock.now() >= resolved.expires_at:
                    return False
            else:
                resolved = None
            if resolved is not None:
                if resolved.kind != "access":
                    return False
                principal = resolved.principal
            project = self.projects.get(project_id)
            if project is None:
                return False
            allowed = project.policy.members_with_permission(permission, self.catalog)
            if ALL_USERS in allowed:
                return True
            return principal != ANONYMOUS and principal in allowed

    def test_iam_permissions(
        self, token: Any, permissions: Iterable[str], project_id: str
    ) -> list[str]:
        """Exactly the sublist for which check_permission allows, order kept."""
        return [p for p in permissions if self.check_permission(token, p, project_id)]

    def permission_catalog(self) -> list[str]:
        perms: set[str] = set()
        for ps in self.catalog.values():
            perms |= ps
        return sorted(perms)

    # -- policy read / write ------------------------------------------------------

    def get_iam_policy(self, token: Any, project_id: str) -> dict[str, Any]:
        with self.locked():
            if not self.check_permission(token, "resourcemanager.projects.getIamPolicy", project_id):
                raise errors.PermissionDenied("resourcemanager.projects.getIamPolicy")
            return self.project(project_id).policy.to_wire()

    def set_iam_policy(self, token: Any, project_id: str, policy: dict[str, Any]) -> dict[str, Any]:
        """Wholesale replace, guarded by optimistic etag concurrency.  This is
        the real-cloud semantics the escalation levels depend on."""
        with self.locked():
            if not self.check_permission(token, "resourcemanager.projects.setIamPolicy", project_id):
                raise errors.PermissionDenied("resourcemanager.projects.setIamPolicy")
            project = self.project(project_id)
            etag = policy.get("etag")
            if etag != project.policy.etag:
                raise errors.StaleEtag(f"policy etag is {project.policy.etag}, got {etag!r}")
            bindings = policy.get("bindings")
            if not isinstance(bindings, list):
                raise errors.ValidationError("policy requires a 'bindings' list")
            merged: dict[str, set[str]] = {}
            for binding in bindings:
                role = binding.get("role")
                members = binding.get("members", [])
                if role not in self.catalog:
                    raise errors.UnknownRole(f"unknown role: {role}")
                if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
                    raise errors.ValidationError(f"bad members for {role}")
                merged.setdefault(role, set()).update(members)
            project.policy.bindings = merged
            project.policy.bump()
            return project.policy.to_wire()

    # ungated primitives for the deploy engine and level helpers

    def grant(self, project_id: str, role: str, members: Iterable[str]) -> None:
        with self.locked():
            if role not in self.catalog:
                raise errors.UnknownRole(f"unknown role: {role}")
            policy = self.project(project_id).policy
            policy.bindings.setdefault(role, set()).update(members)
            policy.bump()

    def revoke(self, project_id: str, role: str, members: Iterable[str]) -> None:
        with self.locked():
            policy = self.project(project_id).policy
            if role in policy.bindings:
                policy.bindings[role] -= set(members)
                if not policy.bindings[role]:
                    del policy.bindings[role]
                policy.bump()

    # -- logging ------------------------------------------------------------------

    def append_log(self, project_id: str, severity: str, logger: str, message: str) -> LogEntry:
        with self.locked():
            project = self.project(project_id)
            self._log_seq += 1
            entry = LogEntry(
                entry_id=f"log-{secrets.token_hex(8)}",
                project_id=project_id,
                timestamp=self.clock.now(),
                severity=severity,
                logger=logger,
                message=message,
                seq=self._log_seq,
            )
            project.logs.append(entry)
            return entry

    def remove_log_entries(self, project_id: str, entry_ids: Iterable[str]) -> None:
        with self.locked():
            project = self.project(project_id)
            drop = set(entry_ids)
            project.logs = [e for e in project.logs if e.entry_id not in drop]

    # -- bucket name index ----------------------------------------------------------

    def claim_bucket_name(self, name: str, project_id: str) -> None:
        with self.locked():
            if name in self._bucket_index:
                raise errors.DuplicateResource(f"bucket name taken: {name}")
            self._bucket_index[name] = project_id

    def release_bucket_name(self, name: str) -> None:
        with self.locked():
            self._bucket_index.pop(name, None)

    def find_bucket(self, name: str) -> Optional[Bucket]:
        with self.locked():
            project_id = self._bucket_index.get(name)
            if project_id is None:
                return None
            return self.projects[project_id].buckets.get(name)

    # -- progress ledger --------------------------------------------------------------

    def progress_for(self, project_id: str) -> dict[str, Any]:
        with self.locked():
            return self.progress.setdefault(
                project_id, {"completed": [], "submissions": [], "hints": {}}
            )

    # -- snapshot / restore -------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        """Versioned, JSON-safe view of the whole emulator state."""
        with self.locked():
            return {
                "version": 1,
                "metadata_hardening": self.metadata_hardening,
                "projects": {
                    pid: _project_to_dict(p) for pid, p in sorted(self.projects.items())
                },
                "tokens": {
                    tid: {
                        "principal": t.principal,
                        "project_id": t.project_id,
                        "expires_at": t.expires_at,
                        "kind": t.kind,
                        "audience": t.audience,
                    }
                    for tid, t in sorted(self.tokens.items())
                },
                "progress": json.loads(json.dumps(self.progress)),
            }

    def restore(self, snap: dict[str, Any]) -> None:
        if snap.get("version") != 1:
            raise errors.ValidationError(f"unsupported snapshot version: {snap.get('version')!r}")
        with self.locked():
            self.metadata_hardening = snap.get("metadata_hardening", HARDENING_DEFAULT)
            self.projects = {}
            self._bucket_index = {}
            for pid, pdata in snap.get("projects", {}).items():
                project = _project_from_dict(pid, pdata)
                self.projects[pid] = project
                for bname in project.buckets:
                    self._bucket_index[bname] = pid
            self.tokens = {
                tid: AccessToken(
                    token_id=tid,
                    principal=t["principal"],
                    project_id=t["project_id"],
                    expires_at=t["expires_at"],
                    kind=t["kind"],
                    audience=t.get("audience", ""),
                )
                for tid, t in snap.get("tokens", {}).items()
            }
            self.progress = json.loads(json.dumps(snap.get("progress", {})))
            self.sessions = {}

    def save_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.snapshot(), fh, sort_keys=True, indent=2)

    def load_json(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as fh:
            self.restore(json.load(fh))


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


def _project_to_dict(p: Project) -> dict[str, Any]:
    return {
        "display_name": p.display_name,
        "created_at": p.created_at,
        "accounts": {
            email: {"key_material": sa.key_material, "description": sa.description}
            for email, sa in sorted(p.accounts.items())
        },
        "policy": {
            "etag": p.policy.etag,
            "bindings": {role: sorted(m) for role, m in sorted(p.policy.bindings.items()) if m},
        },
        "buckets": {
            name: {
                "objects": {
                    oname: {
                        "content": _b64(obj.content),
                        "content_type": obj.content_type,
                        "updated_at": obj.updated_at,
                    }
                    for oname, obj in sorted(b.objects.items())
                }
            }
            for name, b in sorted(p.buckets.items())
        },
        "instances": {
            name: {
                "zone": i.zone,
                "metadata": dict(sorted(i.metadata.items())),
                "attached_service_account": i.attached_service_account,
                "container_image": i.container_image,
                "serving_port": i.serving_port,
            }
            for name, i in sorted(p.instances.items())
        },
        "functions": {
            name: {
                "url": f.url,
                "env": dict(sorted(f.env.items())),
                "source": f.source,
                "require_auth": f.require_auth,
                "runtime_account": f.runtime_account,
            }
            for name, f in sorted(p.functions.items())
        },
        "logs": [
            {
                "entry_id": e.entry_id,
                "timestamp": e.timestamp,
                "severity": e.severity,
                "logger": e.logger,
                "message": e.message,
                "seq": e.seq,
            }
            for e in p.logs
        ],
        "repos": {
            name: [
                {
                    "commit_id": c.commit_id,
                    "parent_id": c.parent_id,
                    "message": c.message,
                    "files": {path: _b64(data) for path, data in sorted(c.files.items())},
                }
                for c in commits
            ]
            for name, commits in sorted(p.repos.items())
        },
        "images": {
            path: {"files": {fp: _b64(data) for fp, data in sorted(img.files.items())}}
            for path, img in sorted(p.images.items())
        },
    }


def _project_from_dict(pid: str, d: dict[str, Any]) -> Project:
    project = Project(pid, d.get("display_name", ""), d.get("created_at", 0.0))
    for email, sa in d.get("accounts", {}).items():
        project.accounts[email] = ServiceAccount(
            email=email,
            project_id=pid,
            key_material=sa["key_material"],
            description=sa.get("description", ""),
        )
    policy = d.get("policy", {})
    project.policy.bindings = {
        role: set(members) for role, members in policy.get("bindings", {}).items()
    }
    etag = policy.get("etag", "etag-1")
    project.policy._version = int(etag.split("-", 1)[1])
    for name, b in d.get("buckets", {}).items():
        bucket = Bucket(name=name, project_id=pid)
        for oname, obj in b.get("objects", {}).items():
            bucket.objects[oname] = ObjectRecord(
                content=_unb64(obj["content"]),
                content_type=obj.get("content_type", "application/octet-stream"),
                updated_at=obj.get("updated_at", 0.0),
            )
        project.buckets[name] = bucket
    for name, i in d.get("instances", {}).items():
        project.instances[name] = Instance(
            name=name,
            project_id=pid,
            zone=i.get("zone", ""),
            metadata=dict(i.get("metadata", {})),
            attached_service_account=i.get("attached_service_account", ""),
            container_image=i.get("container_image"),
            serving_port=i.get("serving_port"),
        )
    for name, f in d.get("functions", {}).items():
        project.functions[name] = FunctionDef(
            name=name,
            project_id=pid,
            url=f.get("url", f"/fn/{pid}/{name}"),
            env=dict(f.get("env", {})),
            source=f.get("source", ""),
            require_auth=bool(f.get("require_auth", False)),
            runtime_account=f.get("runtime_account", ""),
        )
    for e in d.get("logs", []):
        project.logs.append(
            LogEntry(
                entry_id=e["entry_id"],
                project_id=pid,
                timestamp=e["timestamp"],
                severity=e["severity"],
                logger=e["logger"],
                message=e["message"],
                seq=e.get("seq", 0),
            )
        )
    for name, commits in d.get("repos", {}).items():
        project.repos[name] = [
            Commit(
                commit_id=c["commit_id"],
                parent_id=c.get("parent_id"),
                message=c["message"],
                files={path: _unb64(data) for path, data in c.get("files", {}).items()},
            )
            for c in commits
        ]
    for path, img in d.get("images", {}).items():
        project.images[path] = ContainerImage(
            registry_path=path,
            files={fp: _unb64(data) for fp, data in img.get("files", {}).items()},
        )
    return project
