"""HTTP API surface: one origin, path-prefixed services, bearer-token auth.

Route dispatch is table-driven; each route declares the permission that
gates it (enforcement happens in the service layer, and the test suite
checks that the declared gate and the enforced gate agree).  Error bodies
are always ``{"error": {"code": ..., "message": ...}}``.

Status discipline: 401 only for a presented-but-invalid credential or a
missing identity token where one is required; anonymous callers are
evaluated as the anonymous principal and denied with 403 unless an
``allUsers`` binding lets them through.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional
from urllib.parse import parse_qsl, unquote, urlsplit

from . import deploy, errors, hints, levels, services
from .core import Emulator

DEFAULT_ADDR = "127.0.0.1:8085"


@dataclass
class ApiRequest:
    method: str
    path: str
    headers: dict[str, str] = field(default_factory=dict)
    query: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    @classmethod
    def from_target(
        cls,
        method: str,
        target: str,
        headers: Optional[dict[str, str]] = None,
        body: bytes = b"",
    ) -> "ApiRequest":
        parts = urlsplit(target)
        query = dict(parse_qsl(parts.query, keep_blank_values=True))
        return cls(
            method=method.upper(),
            path=unquote(parts.path),
            headers=dict(headers or {}),
            query=query,
            body=body,
        )

    def json(self) -> dict[str, Any]:
        if not self.body:
            return {}
        try:
            doc = json.loads(self.body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise errors.EmuError(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise errors.EmuError("request body must be a JSON object")
        return doc


@dataclass
class ApiResponse:
    status: int
    body: bytes
    content_type: str = "application/json"


def json_response(status: int, payload: Any) -> ApiResponse:
    return ApiResponse(
        status=status,
        body=json.dumps(payload, sort_keys=True).encode("utf-8"),
        content_type="application/json",
    )


def error_response(status: int, code: str, message: str) -> ApiResponse:
    return json_response(status, {"error": {"code": code, "message": message}})


@dataclass(frozen=True)
class Route:
    name: str
    method: str
    pattern: re.Pattern
    gate: Optional[str]  # permission gating this endpoint, None if ungated
    handler_name: str


def _route(name: str, method: str, pattern: str, gate: Optional[str], handler: str) -> Route:
    return Route(name, method, re.compile(pattern), gate, handler)


ROUTES: list[Route] = [
    _route("health", "GET", r"^/healthz$", None, "h_health"),
    # IAM / tokens
    _route("iam.mint_token", "POST", r"^/iam/v1/token$", None, "h_mint_token"),
    _route("iam.identity_token", "POST", r"^/iam/v1/identity-token$", None, "h_identity_token"),
    _route(
        "iam.test_permissions",
        "POST",
        r"^/iam/v1/projects/([^/:]+):testIamPermissions$",
        None,
        "h_test_permissions",
    ),
    _route(
        "iam.get_policy",
        "GET",
        r"^/iam/v1/projects/([^/:]+):getIamPolicy$",
        "resourcemanager.projects.getIamPolicy",
        "h_get_policy",
    ),
    _route(
        "iam.set_policy",
        "POST",
        r"^/iam/v1/projects/([^/:]+):setIamPolicy$",
        "resourcemanager.projects.setIamPolicy",
        "h_set_policy",
    ),
    _route("iam.roles", "GET", r"^/iam/v1/roles$", None, "h_roles"),
    _route("iam.permissions", "GET", r"^/iam/v1/permissions$", None, "h_permissions"),
    # Storage
    _route("storage.buckets_list", "GET", r"^/storage/v1/b$", "storage.buckets.list", "h_buckets_list"),
    _route("storage.objects_list", "GET", r"^/storage/v1/b/([^/]+)/o$", "storage.objects.list", "h_objects_list"),
    _route("storage.object_get", "GET", r"^/storage/v1/b/([^/]+)/o/(.+)$", "storage.objects.get", "h_object_get"),
    _route("storage.object_put", "PUT", r"^/storage/v1/b/([^/]+)/o/(.+)$", "storage.objects.create", "h_object_put"),
    # Compute
    _route(
        "compute.instances_list",
        "GET",
        r"^/compute/v1/projects/([^/]+)/instances$",
        "compute.instances.list",
        "h_instances_list",
    ),
    _route(
        "compute.set_metadata",
        "POST",
        r"^/compute/v1/projects/([^/]+)/instances/([^/:]+):setMetadata$",
        "compute.instances.setMetadata",
        "h_set_metadata",
    ),
    _route(
        "compute.ssh_connect",
        "POST",
        r"^/compute/v1/projects/([^/]+)/instances/([^/:]+):connect$",
        None,
        "h_ssh_connect",
    ),
    _route("compute.session_token", "POST", r"^/compute/v1/sessions/([^/:]+):token$", None, "h_session_token"),
    _route(
        "compute.session_metadata",
        "POST",
        r"^/compute/v1/sessions/([^/:]+):metadata$",
        None,
        "h_session_metadata",
    ),
    # Logging
    _route(
        "logging.list",
        "GET",
        r"^/logging/v1/projects/([^/]+)/entries$",
        "logging.logEntries.list",
        "h_logs_list",
    ),
    # Functions (management)
    _route(
        "functions.list",
        "GET",
        r"^/functions/v1/projects/([^/]+)/functions$",
        "cloudfunctions.functions.list",
        "h_functions_list",
    ),
    _route(
        "functions.get",
        "GET",
        r"^/functions/v1/projects/([^/]+)/functions/([^/:]+)$",
        "cloudfunctions.functions.get",
        "h_function_get",
    ),
    _route(
        "functions.source",
        "GET",
        r"^/functions/v1/projects/([^/]+)/functions/([^/:]+):source$",
        "cloudfunctions.functions.sourceCodeGet",
        "h_function_source",
    ),
    _route(
        "functions.update",
        "POST",
        r"^/functions/v1/projects/([^/]+)/functions/([^/:]+):update$",
        "cloudfunctions.functions.update",
        "h_function_update",
    ),
    # Source repos
    _route(
        "repos.log",
        "GET",
        r"^/repos/v1/projects/([^/]+)/repos/([^/]+)/log$",
        "sourcerepo.repos.get",
        "h_repo_log",
    ),
    _route(
        "repos.show",
        "GET",
        r"^/repos/v1/projects/([^/]+)/repos/([^/]+)/commits/([^/]+)/files/(.+)$",
        "sourcerepo.repos.get",
        "h_repo_show",
    ),
    # Container registry
    _route(
        "registry.list",
        "GET",
        r"^/registry/v1/projects/([^/]+)/images$",
        "containerregistry.images.list",
        "h_images_list",
    ),
    _route("registry.pull", "GET", r"^/registry/v1/images/(.+)$", "containerregistry.images.pull", "h_image_pull"),
    # Serving surfaces
    _route("fn.invoke", "*", r"^/fn/([^/]+)/([^/]+)(/.*)?$", None, "h_fn_invoke"),
    _route("vm.serve", "*", r"^/vm/([^/]+)/([^/]+)(/.*)?$", None, "h_vm_serve"),
    # CTF control plane
    _route("ctf.levels", "GET", r"^/ctf/v1/levels$", None, "h_levels_list"),
    _route("ctf.level_info", "GET", r"^/ctf/v1/levels/([^/]+)/([^/:]+)$", None, "h_level_info"),
    _route("ctf.create", "POST", r"^/ctf/v1/levels:create$", None, "h_level_create"),
    _route("ctf.destroy", "POST", r"^/ctf/v1/levels:destroy$", None, "h_level_destroy"),
    _route("ctf.validate", "POST", r"^/ctf/v1/validate$", None, "h_validate"),
    _route("ctf.hints_get", "GET", r"^/ctf/v1/hints$", None, "h_hints_get"),
    _route("ctf.hints_reveal", "POST", r"^/ctf/v1/hints/reveal$", None, "h_hints_reveal"),
    _route("ctf.hints_slideshow", "GET", r"^/ctf/v1/hints/slideshow$", None, "h_hints_slideshow"),
    _route("ctf.progress", "GET", r"^/ctf/v1/progress$", None, "h_progress"),
    _route("ctf.status", "GET", r"^/ctf/v1/status$", None, "h_status"),
    _route("ctf.project_create", "POST", r"^/ctf/v1/projects$", None, "h_project_create"),
]

# Routes whose success depends on a permission; used by the authorization
# matrix tests.  Maps route name -> gate permission.
GATED_ROUTES: dict[str, str] = {r.name: r.gate for r in ROUTES if r.gate}


class Router:
    def __init__(
        self,
        emu: Emulator,
        registry: levels.LevelRegistry,
        default_project_id: str = "",
    ):
        self.emu = emu
        self.registry = registry
        self.default_project_id = default_project_id

    # -- dispatch ------------------------------------------------------------

    def route(self, req: ApiRequest) -> ApiResponse:
        if self.emu.blocked_for_current_thread():
            return error_response(409, "deployment_in_progress", "try again shortly")
        for route in ROUTES:
            if route.method != "*" and route.method != req.method:
                continue
            match = route.pattern.match(req.path)
            if match is None:
                continue
            handler = getattr(self, route.handler_name)
            try:
                bearer = self._bearer(req, strict=route.gate is not None)
                return handler(req, match, bearer)
            except errors.EmuError as exc:
                return error_response(exc.http_status, exc.code, exc.message)
        return error_response(404, "route_not_found", f"no route for {req.method} {req.path}")

    def _bearer(self, req: ApiRequest, strict: bool) -> Optional[str]:
        """Resolve the Authorization header to a token id.

        On gated routes a presented-but-unusable credential is rejected with
        401 up front (credentials are required there); ungated routes pass
        the token through so stale credentials cannot wedge the control
        plane, and the serving surfaces apply their own auth semantics.
        A syntactically malformed Authorization header is 401 everywhere.
        """
        value = None
        for key, v in req.headers.items():
            if key.lower() == "authorization":
                value = v
                break
        if value is None:
            return None
        if not value.startswith("Bearer ") or not value[7:].strip():
            raise errors.InvalidToken("Authorization header must be 'Bearer <token>'")
        token_id = value[7:].strip()
        if strict and self.emu.resolve_token(token_id) is None:
            raise errors.InvalidToken("token is unknown or expired")
        return token_id

    def _project_query(self, req: ApiRequest) -> str:
        project = req.query.get("project") or self.default_project_id
        if not project:
            raise errors.EmuError("a 'project' query parameter is required")
        return project

    # internal GET used by handler fetch(); returns the body text whatever
    # the status, like a plain HTTP client would see.
    def api_get_text(self, target: str, headers: dict[str, str]) -> str:
        req = ApiRequest.from_target("GET", target, headers=headers)
        resp = self.route(req)
        return resp.body.decode("utf-8", errors="replace")

    # -- health / meta ---------------------------------------------------------

    def h_health(self, req, match, bearer) -> ApiResponse:
        return json_response(200, {"status": "ok"})

    def h_status(self, req, match, bearer) -> ApiResponse:
        record = self.emu.active_deployment
        return json_response(
            200,
            {
                "default_project_id": self.default_project_id,
                "metadata_hardening": self.emu.metadata_hardening,
                "active_level": record.level_name if record else None,
            },
        )

    def h_project_create(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        project = self.emu.create_project(
            str(doc.get("project_id", "")), str(doc.get("display_name", ""))
        )
        return json_response(200, {"project_id": project.project_id})

    # -- IAM ---------------------------------------------------------------------

    def h_mint_token(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        token = self.emu.mint_access_token(str(doc.get("email", "")), str(doc.get("key", "")))
        return json_response(
            200,
            {
                "token": token.token_id,
                "principal": token.principal,
                "project_id": token.project_id,
                "kind": token.kind,
                "expires_in": int(token.expires_at - self.emu.clock.now()),
            },
        )

    def h_identity_token(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        token = self.emu.mint_identity_token(bearer or "", str(doc.get("audience", "")))
        return json_response(
            200,
            {
                "token": token.token_id,
                "principal": token.principal,
                "kind": token.kind,
                "audience": token.audience,
            },
        )

    def h_test_permissions(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        perms = doc.get("permissions", [])
        if not isinstance(perms, list) or not all(isinstance(p, str) for p in perms):
            raise errors.EmuError("'permissions' must be a list of strings")
        granted = self.emu.test_iam_permissions(bearer, perms, match.group(1))
        return json_response(200, {"permissions": granted})

    def h_get_policy(self, req, match, bearer) -> ApiResponse:
        return json_response(200, self.emu.get_iam_policy(bearer, match.group(1)))

    def h_set_policy(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        policy = doc.get("policy")
        if not isinstance(policy, dict):
            raise errors.EmuError("body must contain a 'policy' object")
        return json_response(200, self.emu.set_iam_policy(bearer, match.group(1), policy))

    def h_roles(self, req, match, bearer) -> ApiResponse:
        return json_response(
            200,
            {
                "roles": [
                    {"role": role, "permissions": sorted(perms)}
                    for role, perms in sorted(self.emu.catalog.items())
                ]
            },
        )

    def h_permissions(self, req, match, bearer) -> ApiResponse:
        return json_response(200, {"permissions": self.emu.permission_catalog()})

    # -- storage --------------------------------------------------------------------

    def h_buckets_list(self, req, match, bearer) -> ApiResponse:
        project = self._project_query(req)
        return json_response(200, {"buckets": services.buckets_list(self.emu, bearer, project)})

    def h_objects_list(self, req, match, bearer) -> ApiResponse:
        return json_response(200, {"objects": services.objects_list(self.emu, bearer, match.group(1))})

    def h_object_get(self, req, match, bearer) -> ApiResponse:
        content = services.object_get(self.emu, bearer, match.group(1), match.group(2))
        return ApiResponse(200, content, content_type="application/octet-stream")

    def h_object_put(self, req, match, bearer) -> ApiResponse:
        services.object_put(self.emu, bearer, match.group(1), match.group(2), req.body)
        return json_response(200, {"bucket": match.group(1), "name": match.group(2)})

    # -- compute ----------------------------------------------------------------------

    def h_instances_list(self, req, match, bearer) -> ApiResponse:
        return json_response(
            200, {"instances": services.instances_list(self.emu, bearer, match.group(1))}
        )

    def h_set_metadata(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        services.instance_set_metadata(
            self.emu, bearer, match.group(1), match.group(2),
            str(doc.get("key", "")), str(doc.get("value", "")),
        )
        return json_response(200, {"instance": match.group(2), "key": doc.get("key", "")})

    def h_ssh_connect(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        session = services.ssh_connect(
            self.emu, match.group(1), match.group(2), str(doc.get("private_key", ""))
        )
        return json_response(
            200, {"session": session.session_id, "instance": session.instance_name}
        )

    def h_session_token(self, req, match, bearer) -> ApiResponse:
        token = services.session_token(self.emu, match.group(1))
        return json_response(
            200, {"token": token.token_id, "principal": token.principal, "kind": token.kind}
        )

    def h_session_metadata(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        ctx = services.metadata_context_for_session(self.emu, match.group(1))
        headers = doc.get("headers") or {}
        if not isinstance(headers, dict):
            raise errors.EmuError("'headers' must be an object")
        value = services.metadata_get(
            self.emu, ctx, str(doc.get("path", "")), {str(k): str(v) for k, v in headers.items()}
        )
        return ApiResponse(200, value.encode("utf-8"), content_type="text/plain; charset=utf-8")

    # -- logging -----------------------------------------------------------------------

    def h_logs_list(self, req, match, bearer) -> ApiResponse:
        entries = services.logs_list(
            self.emu, bearer, match.group(1), req.query.get("logger") or None
        )
        return json_response(200, {"entries": entries})

    # -- functions ----------------------------------------------------------------------

    def h_functions_list(self, req, match, bearer) -> ApiResponse:
        return json_response(
            200, {"functions": services.functions_list(self.emu, bearer, match.group(1))}
        )

    def h_function_get(self, req, match, bearer) -> ApiResponse:
        return json_response(
            200, services.function_get(self.emu, bearer, match.group(1), match.group(2))
        )

    def h_function_source(self, req, match, bearer) -> ApiResponse:
        source = services.function_source_get(self.emu, bearer, match.group(1), match.group(2))
        return ApiResponse(200, source.encode("utf-8"), content_type="text/plain; charset=utf-8")

    def h_function_update(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        services.function_update(
            self.emu, bearer, match.group(1), match.group(2), str(doc.get("source", ""))
        )
        return json_response(200, {"function": match.group(2), "status": "updated"})

    def h_fn_invoke(self, req, match, bearer) -> ApiResponse:
        params = dict(req.query)
        if req.body:
            try:
                doc = req.json()
                params.update({str(k): str(v) for k, v in doc.items()})
            except errors.EmuError:
                pass  # non-JSON bodies are ignored; params come from the query
        status, body, ctype = services.function_invoke(
            self.emu,
            match.group(1),
            match.group(2),
            params=params,
            headers=req.headers,
            bearer=bearer,
            subpath=match.group(3) or "/",
            api_get=self.api_get_text,
        )
        return ApiResponse(status, body.encode("utf-8"), content_type=ctype)

    def h_vm_serve(self, req, match, bearer) -> ApiResponse:
        status, body, ctype = services.instance_serve(
            self.emu,
            match.group(1),
            match.group(2),
            path=match.group(3) or "/",
            params=dict(req.query),
            headers=req.headers,
            api_get=self.api_get_text,
        )
        return ApiResponse(status, body.encode("utf-8"), content_type=ctype)

    # -- repos ------------------------------------------------------------------------

    def h_repo_log(self, req, match, bearer) -> ApiResponse:
        return json_response(
            200,
            {"commits": services.repo_log(self.emu, bearer, match.group(1), match.group(2))},
        )

    def h_repo_show(self, req, match, bearer) -> ApiResponse:
        content = services.repo_show(
            self.emu, bearer, match.group(1), match.group(2), match.group(3), match.group(4)
        )
        return ApiResponse(200, content, content_type="application/octet-stream")

    # -- registry ----------------------------------------------------------------------

    def h_images_list(self, req, match, bearer) -> ApiResponse:
        return json_response(200, {"images": services.images_list(self.emu, bearer, match.group(1))})

    def h_image_pull(self, req, match, bearer) -> ApiResponse:
        blob = services.image_pull(self.emu, bearer, match.group(1))
        return ApiResponse(200, blob, content_type="application/octet-stream")

    # -- CTF control plane ------------------------------------------------------------------

    def h_levels_list(self, req, match, bearer) -> ApiResponse:
        namespace = req.query.get("namespace") or None
        out = []
        for ns, name in self.registry.list(namespace):
            level = self.registry.get(f"{ns}/{name}")
            out.append({"namespace": ns, "name": name, "ref": level.ref, "title": level.title})
        return json_response(200, {"levels": out})

    def h_level_info(self, req, match, bearer) -> ApiResponse:
        level = self.registry.get(f"{match.group(1)}/{match.group(2)}")
        project = req.query.get("project") or self.default_project_id
        intro = level.intro
        if project:
            try:
                mapping = {
                    "project_id": project,
                    "level_name": level.ref,
                    **level.context,
                }
                if level.handout_account:
                    from .core import account_email

                    mapping["handout_email"] = account_email(level.handout_account, project)
                intro = deploy.render_text(level.intro, mapping)
            except errors.EmuError:
                pass  # intro templates may reference create-time values
        deck = hints.parse_hint_file(level.hints_text, level.ref)
        completed = []
        if project and project in self.emu.progress:
            completed = self.emu.progress[project].get("completed", [])
        return json_response(
            200,
            {
                "namespace": level.namespace,
                "name": level.name,
                "ref": level.ref,
                "title": level.title,
                "intro": intro,
                "writeup": level.writeup,
                "hint_total": len(deck.hints),
                "completed": level.ref in completed,
            },
        )

    def h_level_create(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        ref = str(doc.get("level", ""))
        project = str(doc.get("project_id") or self.default_project_id)
        info = levels.create_level(self.emu, self.registry, ref, project)
        return json_response(200, info.to_dict())

    def h_level_destroy(self, req, match, bearer) -> ApiResponse:
        record = self.emu.active_deployment
        name = record.level_name if record else None
        levels.destroy_level(self.emu)
        return json_response(200, {"destroyed": name})

    def h_validate(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        ref = str(doc.get("level", ""))
        project = str(doc.get("project_id") or self.default_project_id)
        verdict = levels.validate_flag(
            self.emu, self.registry, ref, project, str(doc.get("flag", ""))
        )
        return json_response(200, {"result": verdict})

    def h_hints_get(self, req, match, bearer) -> ApiResponse:
        ref = req.query.get("level", "")
        level = self.registry.get(ref)
        project = req.query.get("project") or self.default_project_id
        deck = hints.parse_hint_file(level.hints_text, level.ref)
        return json_response(200, hints.revealed_hints(self.emu, deck, ref, project))

    def h_hints_reveal(self, req, match, bearer) -> ApiResponse:
        doc = req.json()
        ref = str(doc.get("level", ""))
        level = self.registry.get(ref)
        project = str(doc.get("project_id") or self.default_project_id)
        deck = hints.parse_hint_file(level.hints_text, level.ref)
        return json_response(200, hints.reveal_next(self.emu, deck, ref, project))

    def h_hints_slideshow(self, req, match, bearer) -> ApiResponse:
        ref = req.query.get("level", "")
        level = self.registry.get(ref)
        deck = hints.parse_hint_file(level.hints_text, level.ref)
        return ApiResponse(
            200, hints.render_slideshow(deck).encode("utf-8"), content_type="text/html; charset=utf-8"
        )

    def h_progress(self, req, match, bearer) -> ApiResponse:
        project = req.query.get("project") or self.default_project_id
        ledger = self.emu.progress_for(project)
        return json_response(
            200,
            {
                "project_id": project,
                "completed": list(ledger["completed"]),
                "submissions": list(ledger["submissions"]),
                "hints": dict(ledger["hints"]),
            },
        )
