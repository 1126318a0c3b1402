"""Emulated resource services.

Every operation here is gated by exactly one permission, checked through
the core evaluator; the API router declares the same gates, and the test
suite cross-checks the two.  Resource lookups happen only after the
permission check passes, so a denial never reveals whether the target
exists.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional
from urllib.parse import urlsplit

from . import archive, dsl, errors
from .core import (
    ALL_USERS,
    Bucket,
    Commit,
    ContainerImage,
    Emulator,
    FunctionDef,
    HARDENING_STRICT,
    Instance,
    InstanceSession,
    METADATA_CUSTOM_HEADER,
    METADATA_CUSTOM_VALUE,
    METADATA_FLAVOR_HEADER,
    METADATA_FLAVOR_VALUE,
    ObjectRecord,
    derive_public_key,
    new_secret,
)

# Hosts reachable from handler fetch().  Everything else is outside the
# emulator network and is refused.
METADATA_HOSTS = ("169.254.169.254", "metadata.google.internal")

# list responses are capped instead of paginated
LIST_CAP = 1000
API_ALIAS_HOST = "api.emucloud.internal"

REQUEST_PATH_HEADER = "X-Request-Path"


def _require(emu: Emulator, token: Any, permission: str, project_id: str) -> None:
    if not emu.check_permission(token, permission, project_id):
        raise errors.PermissionDenied(permission)


# ---------------------------------------------------------------------------
# Storage
# ---------------------------------------------------------------------------

def create_bucket(emu: Emulator, project_id: str, name: str) -> Bucket:
    with emu.locked():
        project = emu.project(project_id)
        emu.claim_bucket_name(name, project_id)
        bucket = Bucket(name=name, project_id=project_id)
        project.buckets[name] = bucket
        return bucket


def delete_bucket(emu: Emulator, project_id: str, name: str) -> None:
    with emu.locked():
        project = emu.project(project_id)
        if project.buckets.pop(name, None) is not None:
            emu.release_bucket_name(name)


def buckets_list(emu: Emulator, token: Any, project_id: str) -> list[str]:
    _require(emu, token, "storage.buckets.list", project_id)
    with emu.locked():
        return sorted(emu.project(project_id).buckets)[:LIST_CAP]


def objects_list(emu: Emulator, token: Any, bucket_name: str) -> list[str]:
    with emu.locked():
        bucket = emu.find_bucket(bucket_name)
        if bucket is None:
            raise errors.NotFound(f"no such bucket: {bucket_name}")
        _require(emu, token, "storage.objects.list", bucket.project_id)
        return sorted(bucket.objects)[:LIST_CAP]


def object_get(emu: Emulator, token: Any, bucket_name: str, object_name: str) -> bytes:
    with emu.locked():
        bucket = emu.find_bucket(bucket_name)
        if bucket is None:
            raise errors.NotFound(f"no such bucket: {bucket_name}")
        _require(emu, token, "storage.objects.get", bucket.project_id)
        record = bucket.objects.get(object_name)
        if record is None:
            raise errors.NotFound(f"no such object: {object_name}")
        return record.content


def object_put(
    emu: Emulator,
    token: Any,
    bucket_name: str,
    object_name: str,
    content: bytes,
    content_type: str = "application/octet-stream",
) -> None:
    if not object_name or ".." in object_name.split("/"):
        raise errors.ValidationError(f"bad object name: {object_name!r}")
    with emu.locked():
        bucket = emu.find_bucket(bucket_name)
        if bucket is None:
            raise errors.NotFound(f"no such bucket: {bucket_name}")
        _require(emu, token, "storage.objects.create", bucket.project_id)
        bucket.objects[object_name] = ObjectRecord(
            content=content, content_type=content_type, updated_at=emu.clock.now()
        )


def object_put_unchecked(
    emu: Emulator, bucket_name: str, object_name: str, content: bytes
) -> Optional[bytes]:
    """Helper-path write.  Returns the previous content (None if absent) so
    the level framework can record the inverse action."""
    if not object_name or ".." in object_name.split("/"):
        raise errors.ValidationError(f"bad object name: {object_name!r}")
    with emu.locked():
        bucket = emu.find_bucket(bucket_name)
        if bucket is None:
            raise errors.UnknownResource(f"no such bucket: {bucket_name}")
        prev = bucket.objects.get(object_name)
        bucket.objects[object_name] = ObjectRecord(content=content, updated_at=emu.clock.now())
        return prev.content if prev else None


def object_delete_unchecked(emu: Emulator, bucket_name: str, object_name: str) -> None:
    with emu.locked():
        bucket = emu.find_bucket(bucket_name)
        if bucket is not None:
            bucket.objects.pop(object_name, None)


# ---------------------------------------------------------------------------
# Compute: instances, ssh sessions, metadata server
# ---------------------------------------------------------------------------

def create_instance(
    emu: Emulator,
    project_id: str,
    name: str,
    zone: str,
    metadata: Optional[dict[str, str]] = None,
    attached_service_account: str = "",
    container_image: Optional[str] = None,
    serving_port: Optional[int] = None,
) -> Instance:
    with emu.locked():
        project = emu.project(project_id)
        if name in project.instances:
            raise errors.DuplicateResource(f"instance exists: {name}")
        if attached_service_account not in project.accounts:
            raise errors.UnknownResource(
                f"attached service account missing: {attached_service_account}"
            )
        instance = Instance(
            name=name,
            project_id=project_id,
            zone=zone,
            metadata=dict(metadata or {}),
            attached_service_account=attached_service_account,
            container_image=container_image,
            serving_port=serving_port,
        )
        project.instances[name] = instance
        return instance


def delete_instance(emu: Emulator, project_id: str, name: str) -> None:
    with emu.locked():
        project = emu.project(project_id)
        project.instances.pop(name, None)
        emu.sessions = {
            sid: s
            for sid, s in emu.sessions.items()
            if not (s.project_id == project_id and s.instance_name == name)
        }


def instances_list(emu: Emulator, token: Any, project_id: str) -> list[dict[str, Any]]:
    """Summaries expose metadata keys (not values) plus the attached account,
    which is what the discovery steps of the levels rely on."""
    _require(emu, token, "compute.instances.list", project_id)
    with emu.locked():
        out = []
        for name in sorted(emu.project(project_id).instances)[:LIST_CAP]:
            inst = emu.project(project_id).instances[name]
            out.append(
                {
                    "name": inst.name,
                    "zone": inst.zone,
                    "metadata_keys": sorted(inst.metadata),
                    "attached_service_account": inst.attached_service_account,
                    "container_image": inst.container_image,
                    "serving_port": inst.serving_port,
                }
            )
        return out


def instance_set_metadata(
    emu: Emulator, token: Any, project_id: str, instance_name: str, key: str, value: str
) -> None:
    _require(emu, token, "compute.instances.setMetadata", project_id)
    with emu.locked():
        project = emu.project(project_id)
        instance = project.instances.get(instance_name)
        if instance is None:
            raise errors.UnknownInstance(f"no such instance: {instance_name}")
        instance.metadata[key] = value


def _ssh_key_entries(value: str) -> list[tuple[str, str]]:
    entries = []
    for line in value.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        user, pub = line.split(":", 1)
        entries.append((user.strip(), pub.strip()))
    return entries


def ssh_connect(
    emu: Emulator, project_id: str, instance_name: str, private_key: str
) -> InstanceSession:
    """Key-checked session establishment; the 'ssh' of this emulator.  The
    public half derived from the offered private key must appear in the
    instance's ssh-keys metadata."""
    with emu.locked():
        project = emu.project(project_id)
        instance = project.instances.get(instance_name)
        if instance is None:
            raise errors.UnknownInstance(f"no such instance: {instance_name}")
        offered = derive_public_key(private_key)
        known = {pub for _, pub in _ssh_key_entries(instance.metadata.get("ssh-keys", ""))}
        if offered not in known:
            raise errors.KeyRejected("offered key is not present in instance metadata")
        session = InstanceSession(
            session_id=new_secret("sess-", 16),
            project_id=project_id,
            instance_name=instance_name,
        )
        emu.sessions[session.session_id] = session
        return session


def session_get(emu: Emulator, session_id: str) -> InstanceSession:
    with emu.locked():
        session = emu.sessions.get(session_id)
        if session is None:
            raise errors.UnknownSession("unknown or expired session")
        return session


def session_token(emu: Emulator, session_id: str):
    """Fresh access token for the instance's attached service account."""
    with emu.locked():
        session = session_get(emu, session_id)
        instance = emu.project(session.project_id).instances.get(session.instance_name)
        if instance is None:
            raise errors.UnknownInstance(f"no such instance: {session.instance_name}")
        return emu.mint_token_for_principal(instance.attached_service_account, session.project_id)


@dataclass(frozen=True)
class MetadataContext:
    """Identifies whose metadata server a caller can reach: an instance's, or
    the synthetic per-execution context of a function run."""

    project_id: str
    service_account: str
    instance_name: Optional[str] = None


def metadata_context_for_session(emu: Emulator, session_id: str) -> MetadataContext:
    session = session_get(emu, session_id)
    instance = emu.project(session.project_id).instances.get(session.instance_name)
    if instance is None:
        raise errors.UnknownInstance(f"no such instance: {session.instance_name}")
    return MetadataContext(
        project_id=session.project_id,
        service_account=instance.attached_service_account,
        instance_name=session.instance_name,
    )


def metadata_get(
    emu: Emulator, ctx: MetadataContext, path: str, headers: dict[str, str]
) -> str:
    """The per-instance metadata endpoint.  Never mounted on the public API:
    reachable only via handler fetch() or an ssh session."""
    flavor = _header_get(headers, METADATA_FLAVOR_HEADER)
    if flavor != METADATA_FLAVOR_VALUE:
        raise errors.MissingHeader(f"{METADATA_FLAVOR_HEADER}: {METADATA_FLAVOR_VALUE} header required")
    if emu.metadata_hardening == HARDENING_STRICT:
        if _header_get(headers, METADATA_CUSTOM_HEADER) != METADATA_CUSTOM_VALUE:
            raise errors.MissingHeader(f"{METADATA_CUSTOM_HEADER}: {METADATA_CUSTOM_VALUE} header required")
    path = path.rstrip()
    base = "/computeMetadata/v1/instance"
    if path == f"{base}/service-accounts/default/token":
        token = emu.mint_token_for_principal(ctx.service_account, ctx.project_id)
        return token.token_id
    if path == f"{base}/service-accounts/default/email":
        return ctx.service_account
    if path == f"{base}/service-accounts/":
        return "default/\n"
    if path.startswith(f"{base}/attributes"):
        if ctx.instance_name is None:
            raise errors.UnknownPath("no instance attributes in this context")
        instance = emu.project(ctx.project_id).instances.get(ctx.instance_name)
        if instance is None:
            raise errors.UnknownPath("instance is gone")
        rest = path[len(f"{base}/attributes"):]
        if rest in ("", "/"):
            return "".join(f"{k}\n" for k in sorted(instance.metadata))
        key = rest[1:]
        if key in instance.metadata:
            return instance.metadata[key]
        raise errors.UnknownPath(f"no such attribute: {key}")
    raise errors.UnknownPath(f"no such metadata path: {path}")


def _header_get(headers: dict[str, str], name: str) -> str:
    lowered = name.lower()
    for key, value in headers.items():
        if key.lower() == lowered:
            return value
    return ""


# ---------------------------------------------------------------------------
# Handler execution and the emulator-internal fetch
# ---------------------------------------------------------------------------

# api_get(path_with_query, headers) -> body text; injected by the router so
# this module stays independent of it.
ApiGet = Callable[[str, dict[str, str]], str]


def build_fetcher(emu: Emulator, ctx: MetadataContext, api_get: Optional[ApiGet]):
    """fetch() implementation bound to one runtime context.

    The second fetch argument is a single header: either a full
    ``Name: value`` line, or a bare value which is taken as Metadata-Flavor
    (what a forwarding proxy typically passes along).  Header values must
    not contain control characters, so headers cannot be smuggled through
    a forwarded value.
    """

    def fetch(url: str, header_line: str) -> str:
        headers = _parse_header_arg(header_line)
        parts = urlsplit(url)
        if parts.scheme != "http" or not parts.hostname:
            raise errors.HandlerError(f"fetch blocked: {url}")
        host = parts.hostname
        if host in METADATA_HOSTS:
            try:
                return metadata_get(emu, ctx, parts.path, headers)
            except errors.EmuError as exc:
                return json.dumps({"error": {"code": exc.code, "message": exc.message}})
        if host == API_ALIAS_HOST:
            if api_get is None:
                raise errors.HandlerError("emulator API is not reachable from this context")
            path = parts.path + (f"?{parts.query}" if parts.query else "")
            return api_get(path, headers)
        raise errors.HandlerError(f"fetch blocked: {url}")

    return fetch


def _parse_header_arg(header_line: str) -> dict[str, str]:
    line = header_line.strip()
    if not line:
        return {}
    if any(ord(c) < 32 for c in line):
        raise errors.HandlerError("invalid header value")
    if ":" in line:
        name, value = line.split(":", 1)
        return {name.strip(): value.strip()}
    return {METADATA_FLAVOR_HEADER: line}


def handler_eval(
    emu: Emulator,
    script: str,
    *,
    project_id: str,
    logger: str,
    params: dict[str, str],
    headers: dict[str, str],
    env: dict[str, str],
    ctx: MetadataContext,
    api_get: Optional[ApiGet] = None,
) -> tuple[int, str, str]:
    """Run a handler script; returns (status, body, content_type).

    Runtime failures are written to the project log at ERROR severity with
    the full message, while the HTTP response stays generic -- reading the
    log is the intended way to see the details.
    """
    program = dsl.parse(script)
    runtime = dsl.Runtime(
        env=dict(env),
        params=dict(params),
        headers=dict(headers),
        fetcher=build_fetcher(emu, ctx, api_get),
        log_sink=lambda severity, message: emu.append_log(project_id, severity, logger, message),
    )
    try:
        result = dsl.execute(program, runtime)
    except errors.HandlerError as exc:  # includes LimitExceeded
        emu.append_log(project_id, "ERROR", logger, exc.message)
        body = json.dumps(
            {"error": {"code": exc.code, "message": "handler failed; details in project logs"}}
        )
        return 500, body, "application/json"
    return result.status, result.body, "text/plain; charset=utf-8"


# ---------------------------------------------------------------------------
# Functions
# ---------------------------------------------------------------------------

def create_function(
    emu: Emulator,
    project_id: str,
    name: str,
    source: str,
    env: Optional[dict[str, str]] = None,
    require_auth: bool = False,
    runtime_account: str = "",
) -> FunctionDef:
    dsl.parse(source)  # reject bad handlers at deploy time
    with emu.locked():
        project = emu.project(project_id)
        if name in project.functions:
            raise errors.DuplicateResource(f"function exists: {name}")
        if runtime_account not in project.accounts:
            raise errors.UnknownResource(f"runtime account missing: {runtime_account}")
        fn = FunctionDef(
            name=name,
            project_id=project_id,
            url=f"/fn/{project_id}/{name}",
            env=dict(env or {}),
            source=source,
            require_auth=require_auth,
            runtime_account=runtime_account,
        )
        project.functions[name] = fn
        return fn


def delete_function(emu: Emulator, project_id: str, name: str) -> None:
    with emu.locked():
        emu.project(project_id).functions.pop(name, None)


def functions_list(emu: Emulator, token: Any, project_id: str) -> list[dict[str, Any]]:
    _require(emu, token, "cloudfunctions.functions.list", project_id)
    with emu.locked():
        return [
            {
                "name": fn.name,
                "url": fn.url,
                "require_auth": fn.require_auth,
                "runtime_account": fn.runtime_account,
            }
            for _, fn in sorted(emu.project(project_id).functions.items())[:LIST_CAP]
        ]


def function_get(emu: Emulator, token: Any, project_id: str, name: str) -> dict[str, Any]:
    """Full function metadata, environment included."""
    _require(emu, token, "cloudfunctions.functions.get", project_id)
    fn = _function(emu, project_id, name)
    return {
        "name": fn.name,
        "url": fn.url,
        "env": dict(sorted(fn.env.items())),
        "require_auth": fn.require_auth,
        "runtime_account": fn.runtime_account,
    }


def function_source_get(emu: Emulator, token: Any, project_id: str, name: str) -> str:
    _require(emu, token, "cloudfunctions.functions.sourceCodeGet", project_id)
    return _function(emu, project_id, name).source


def function_update(emu: Emulator, token: Any, project_id: str, name: str, new_source: str) -> None:
    _require(emu, token, "cloudfunctions.functions.update", project_id)
    with emu.locked():
        fn = _function(emu, project_id, name)
        dsl.parse(new_source)
        fn.source = new_source


def function_set_env(emu: Emulator, project_id: str, name: str, key: str, value: str) -> Optional[str]:
    """Helper-path env upsert; returns the previous value (None if unset)."""
    with emu.locked():
        fn = _function(emu, project_id, name)
        prev = fn.env.get(key)
        fn.env[key] = value
        return prev


def _function(emu: Emulator, project_id: str, name: str) -> FunctionDef:
    with emu.locked():
        fn = emu.project(project_id).functions.get(name)
        if fn is None:
            raise errors.NotFound(f"no such function: {name}")
        return fn


def function_invoke(
    emu: Emulator,
    project_id: str,
    name: str,
    params: dict[str, str],
    headers: dict[str, str],
    bearer: Optional[str],
    subpath: str = "/",
    api_get: Optional[ApiGet] = None,
) -> tuple[int, str, str]:
    fn = _function(emu, project_id, name)
    if fn.require_auth:
        token = emu.resolve_token(bearer)
        if token is None or token.kind != "identity":
            raise errors.AuthRequired("this function requires an identity token")
        if token.audience != fn.url:
            raise errors.PermissionDenied(f"identity token audience does not match {fn.url}")
    run_headers = dict(headers)
    run_headers[REQUEST_PATH_HEADER] = subpath or "/"
    ctx = MetadataContext(project_id=project_id, service_account=fn.runtime_account)
    return handler_eval(
        emu,
        fn.source,
        project_id=project_id,
        logger=fn.name,
        params=params,
        headers=run_headers,
        env=fn.env,
        ctx=ctx,
        api_get=api_get,
    )


# ---------------------------------------------------------------------------
# Instance web serving
# ---------------------------------------------------------------------------

def instance_serve(
    emu: Emulator,
    project_id: str,
    instance_name: str,
    path: str,
    params: dict[str, str],
    headers: dict[str, str],
    api_get: Optional[ApiGet] = None,
) -> tuple[int, str, str]:
    """Serve an HTTP request against the container web app of an instance."""
    with emu.locked():
        project = emu.project(project_id)
        instance = project.instances.get(instance_name)
        if instance is None:
            raise errors.UnknownInstance(f"no such instance: {instance_name}")
        if not instance.container_image or not instance.serving_port:
            raise errors.NotFound(f"instance {instance_name} is not serving")
        image = project.images.get(instance.container_image)
        if image is None or "/app/server.dsl" not in image.files:
            raise errors.NotFound(f"no web app available on {instance_name}")
        script = image.files["/app/server.dsl"].decode("utf-8")
        ctx = MetadataContext(
            project_id=project_id,
            service_account=instance.attached_service_account,
            instance_name=instance_name,
        )
    run_headers = dict(headers)
    run_headers[REQUEST_PATH_HEADER] = path or "/"
    return handler_eval(
        emu,
        script,
        project_id=project_id,
        logger=instance_name,
        params=params,
        headers=run_headers,
        env={},
        ctx=ctx,
        api_get=api_get,
    )


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

def logs_list(
    emu: Emulator, token: Any, project_id: str, filter_logger: Optional[str] = None
) -> list[dict[str, Any]]:
    _require(emu, token, "logging.logEntries.list", project_id)
    with emu.locked():
        entries = sorted(emu.project(project_id).logs, key=lambda e: (e.timestamp, e.seq))
        return [
            {
                "timestamp": e.timestamp,
                "severity": e.severity,
                "logger": e.logger,
                "message": e.message,
            }
            for e in entries
            if filter_logger is None or e.logger == filter_logger
        ][:LIST_CAP]


# ---------------------------------------------------------------------------
# Source repositories
# ---------------------------------------------------------------------------

def commit_digest(parent_id: Optional[str], message: str, files: dict[str, bytes]) -> str:
    """Content address of a commit.

    canonical form: ``(parent or "")\\n message \\n`` followed by one line per
    file in path order: ``path NUL sha256(content).hex \\n``.
    """
    h = hashlib.sha256()
    h.update(((parent_id or "") + "\n").encode("utf-8"))
    h.update((message + "\n").encode("utf-8"))
    for path in sorted(files):
        h.update(path.encode("utf-8"))
        h.update(b"\x00")
        h.update(hashlib.sha256(files[path]).hexdigest().encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


def create_repo(emu: Emulator, project_id: str, name: str) -> None:
    with emu.locked():
        project = emu.project(project_id)
        if name in project.repos:
            raise errors.DuplicateResource(f"repo exists: {name}")
        project.repos[name] = []


def delete_repo(emu: Emulator, project_id: str, name: str) -> None:
    with emu.locked():
        emu.project(project_id).repos.pop(name, None)


def repo_append_commits(
    emu: Emulator, project_id: str, repo: str, commits: Iterable[dict[str, Any]]
) -> list[str]:
    """Append commits (oldest first); each is {message, files: {path: bytes|str}}.
    Returns the new commit ids."""
    with emu.locked():
        project = emu.project(project_id)
        if repo not in project.repos:
            raise errors.UnknownResource(f"no such repo: {repo}")
        chain = project.repos[repo]
        new_ids = []
        for spec in commits:
            files = {
                path: (data.encode("utf-8") if isinstance(data, str) else bytes(data))
                for path, data in spec.get("files", {}).items()
            }
            parent = chain[-1].commit_id if chain else None
            commit = Commit(
                commit_id=commit_digest(parent, spec["message"], files),
                parent_id=parent,
                message=spec["message"],
                files=files,
            )
            chain.append(commit)
            new_ids.append(commit.commit_id)
        return new_ids


def repo_log(emu: Emulator, token: Any, project_id: str, repo: str) -> list[dict[str, Any]]:
    _require(emu, token, "sourcerepo.repos.get", project_id)
    with emu.locked():
        chain = emu.project(project_id).repos.get(repo)
        if chain is None:
            raise errors.NotFound(f"no such repo: {repo}")
        return [
            {
                "commit_id": c.commit_id,
                "parent_id": c.parent_id,
                "message": c.message,
                "paths": sorted(c.files),
            }
            for c in list(reversed(chain))[:LIST_CAP]
        ]


def repo_show(emu: Emulator, token: Any, project_id: str, repo: str, commit_id: str, path: str) -> bytes:
    _require(emu, token, "sourcerepo.repos.get", project_id)
    with emu.locked():
        chain = emu.project(project_id).repos.get(repo)
        if chain is None:
            raise errors.NotFound(f"no such repo: {repo}")
        for commit in chain:
            if commit.commit_id == commit_id:
                if path not in commit.files:
                    raise errors.PathNotInCommit(f"{path} is not in commit {commit_id[:12]}")
                return commit.files[path]
        raise errors.UnknownCommit(f"no such commit: {commit_id}")


# ---------------------------------------------------------------------------
# Container registry
# ---------------------------------------------------------------------------

def image_push(emu: Emulator, project_id: str, registry_path: str, files: dict[str, bytes]) -> ContainerImage:
    expected_prefix = f"{project_id}/"
    if not registry_path.startswith(expected_prefix) or ":" not in registry_path:
        raise errors.ValidationError(
            f"registry path must look like {project_id}/<name>:<tag>, got {registry_path!r}"
        )
    with emu.locked():
        project = emu.project(project_id)
        project.images[registry_path] = ContainerImage(
            registry_path=registry_path,
            files={p: bytes(d) for p, d in files.items()},
        )
        return project.images[registry_path]


def image_delete(emu: Emulator, project_id: str, registry_path: str) -> None:
    with emu.locked():
        emu.project(project_id).images.pop(registry_path, None)


def images_list(emu: Emulator, token: Any, project_id: str) -> list[str]:
    _require(emu, token, "containerregistry.images.list", project_id)
    with emu.locked():
        return sorted(emu.project(project_id).images)[:LIST_CAP]


def image_pull(emu: Emulator, token: Any, registry_path: str) -> bytes:
    project_id = registry_path.split("/", 1)[0]
    _require(emu, token, "containerregistry.images.pull", project_id)
    with emu.locked():
        image = emu.project(project_id).images.get(registry_path)
        if image is None:
            raise errors.UnknownImage(f"no such image: {registry_path}")
        return archive.pack(image.files)
