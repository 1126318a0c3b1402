from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor

from thunderctf import services
from thunderctf.api import ApiRequest, GATED_ROUTES, Router
from thunderctf.core import ALL_USERS

from . import authmatrix
from .conftest import PROJECT


def call(router, method, target, token=None, body=None):
    headers = {}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    raw = json.dumps(body).encode() if body is not None else b""
    return router.route(ApiRequest.from_target(method, target, headers=headers, body=raw))


# ---------------------------------------------------------------------------
# Dispatch basics
# ---------------------------------------------------------------------------

def test_unknown_route_is_404_route_not_found(router):
    resp = call(router, "GET", "/nope/v1/things")
    assert resp.status == 404
    assert json.loads(resp.body)["error"]["code"] == "route_not_found"


def test_error_envelope_shape(router):
    resp = call(router, "GET", "/storage/v1/b?project=" + PROJECT)
    err = json.loads(resp.body)["error"]
    assert set(err) == {"code", "message"}
    assert resp.status == 403


def test_health(router):
    resp = call(router, "GET", "/healthz")
    assert resp.status == 200


def test_malformed_authorization_header_is_401(router):
    req = ApiRequest.from_target("GET", "/healthz", headers={"Authorization": "Token abc"})
    resp = router.route(req)
    assert resp.status == 401
    assert json.loads(resp.body)["error"]["code"] == "invalid_token"


def test_garbage_bearer_is_401_everywhere():
    world = authmatrix.build_world()
    world.tokens["garbage"] = "emu-at-" + "0" * 40
    for name in GATED_ROUTES:
        req = authmatrix.REQUEST_BUILDERS[name](world, "garbage")
        resp = world.router.route(req)
        assert resp.status == 401, name
        assert json.loads(resp.body)["error"]["code"] == "invalid_token"


def test_expired_bearer_is_401(emu, registry, clock):
    router = Router(emu, registry, default_project_id=PROJECT)
    sa = emu.create_service_account(PROJECT, "shortlived")
    token = emu.mint_access_token(sa.email, sa.key_material)
    clock.advance(4000)
    resp = call(router, "GET", f"/storage/v1/b?project={PROJECT}", token=token.token_id)
    assert resp.status == 401


# ---------------------------------------------------------------------------
# The authorization matrix
# ---------------------------------------------------------------------------

def test_matrix_request_builders_cover_every_gated_route():
    assert authmatrix.builders_cover_every_gated_route()


def test_authorization_matrix_exact_statuses():
    """no token -> anonymous deny (403); valid-but-unauthorized -> 403;
    authorized -> 200.  Zero exceptions over every gated endpoint."""
    for name, principal, status, allows in authmatrix.run_matrix():
        if principal == "allpowerful":
            assert status == 200, (name, principal, status)
        else:
            assert status == 403, (name, principal, status)
        assert (status == 200) == allows, (name, principal)


def test_authorization_soundness_success_iff_evaluator_allows():
    """The declared gate of each endpoint, checked against the evaluator for
    every principal -- the response succeeds exactly when the evaluator says
    the gate permission is held."""
    for name, principal, status, allows in authmatrix.run_matrix():
        assert (status == 200) == allows, (name, principal, status)


def test_key_material_never_appears_in_api_responses():
    """Account keys are handed out only by the level control plane; no
    emulated-cloud response may carry one, even to an all-powerful caller."""
    world = authmatrix.build_world()
    keys = [
        sa.key_material
        for project in world.emu.projects.values()
        for sa in project.accounts.values()
    ]
    assert keys
    for name in GATED_ROUTES:
        for principal in ("anonymous", "allpowerful"):
            resp = world.router.route(authmatrix.REQUEST_BUILDERS[name](world, principal))
            body = resp.body.decode("utf-8", "replace")
            for key in keys:
                assert key not in body, name


# ---------------------------------------------------------------------------
# Specific wire behaviours
# ---------------------------------------------------------------------------

def test_anonymous_object_get_with_all_users_binding(emu, router):
    services.create_bucket(emu, PROJECT, "open-bucket")
    services.object_put_unchecked(emu, "open-bucket", "flag.txt", b"CTF{0123456789abcdef}")
    emu.grant(PROJECT, "roles/storage.objectViewer", [ALL_USERS])
    resp = call(router, "GET", "/storage/v1/b/open-bucket/o/flag.txt")
    assert resp.status == 200
    assert resp.body == b"CTF{0123456789abcdef}"


def test_fn_invoke_auth_required_401(emu, router):
    sa = emu.create_service_account(PROJECT, "fn-sa")
    services.create_function(
        emu, PROJECT, "locked", 'respond("in")', {}, True, sa.email
    )
    resp = call(router, "POST", f"/fn/{PROJECT}/locked")
    assert resp.status == 401
    assert json.loads(resp.body)["error"]["code"] == "auth_required"


def test_fn_invoke_with_identity_token_and_params(emu, router):
    sa = emu.create_service_account(PROJECT, "fn-sa")
    services.create_function(
        emu, PROJECT, "echo", 'respond("got " + param("x"))', {}, True, sa.email
    )
    access = emu.mint_access_token(sa.email, sa.key_material)
    identity = emu.mint_identity_token(access.token_id, f"/fn/{PROJECT}/echo")
    resp = call(router, "POST", f"/fn/{PROJECT}/echo?x=42", token=identity.token_id)
    assert (resp.status, resp.body) == (200, b"got 42")


def test_fn_invoke_params_merge_from_json_body(emu, router):
    sa = emu.create_service_account(PROJECT, "fn-sa")
    services.create_function(emu, PROJECT, "echo", 'respond(param("a") + param("b"))', {}, False, sa.email)
    resp = call(router, "POST", f"/fn/{PROJECT}/echo?a=1", body={"b": "2"})
    assert resp.body == b"12"


def test_vm_serve_passes_path_params_headers(emu, router):
    sa = emu.create_service_account(PROJECT, "web-sa")
    services.image_push(
        emu, PROJECT, f"{PROJECT}/w:v1",
        {"/app/server.dsl": (
            b'if header("X-Request-Path") == "/proxy" '
            b'{ respond("proxy " + param("url") + " " + header("Metadata-Flavor")) } '
            b'else { respond("front") }'
        )},
    )
    services.create_instance(
        emu, PROJECT, "web-vm", "z", {}, sa.email,
        container_image=f"{PROJECT}/w:v1", serving_port=8080,
    )
    resp = router.route(
        ApiRequest.from_target(
            "GET",
            f"/vm/{PROJECT}/web-vm/proxy?url=http://t",
            headers={"Metadata-Flavor": "Google"},
        )
    )
    assert resp.body == b"proxy http://t Google"
    resp = call(router, "GET", f"/vm/{PROJECT}/web-vm/")
    assert resp.body == b"front"


def test_handler_fetch_reaches_api_through_router(emu, router):
    """A handler can GET the management API via the internal alias, with its
    own Authorization header -- the building block of the vault levels."""
    services.create_bucket(emu, PROJECT, "vault")
    services.object_put_unchecked(emu, "vault", "flag.txt", b"the-payload")
    runner = emu.create_service_account(PROJECT, "runner")
    emu.grant(PROJECT, "roles/storage.objectViewer", [runner.email])
    services.create_function(
        emu, PROJECT, "tunnel",
        source=(
            'respond(fetch("http://api.emucloud.internal/storage/v1/b/vault/o/flag.txt", '
            '"Authorization: Bearer " + '
            'fetch("http://169.254.169.254/computeMetadata/v1/instance/service-accounts/default/token", '
            '"Metadata-Flavor: Google")))'
        ),
        runtime_account=runner.email,
    )
    resp = call(router, "POST", f"/fn/{PROJECT}/tunnel")
    assert (resp.status, resp.body) == (200, b"the-payload")


def test_idempotent_gets(emu, router):
    world_routes = [
        f"/storage/v1/b?project={PROJECT}",
        f"/compute/v1/projects/{PROJECT}/instances",
        f"/functions/v1/projects/{PROJECT}/functions",
        f"/iam/v1/projects/{PROJECT}:getIamPolicy",
        "/iam/v1/roles",
        "/iam/v1/permissions",
        "/ctf/v1/levels",
        "/ctf/v1/status",
    ]
    sa = emu.create_service_account(PROJECT, "reader")
    for role in emu.catalog:
        emu.grant(PROJECT, role, [sa.email])
    token = emu.mint_access_token(sa.email, sa.key_material).token_id
    for target in world_routes:
        first = call(router, "GET", target, token=token)
        second = call(router, "GET", target, token=token)
        assert first.body == second.body, target


def test_requests_during_deploy_get_409(emu, router):
    started = threading.Event()
    release = threading.Event()

    def hold_exclusive():
        with emu.exclusive():
            started.set()
            release.wait(timeout=5)

    worker = threading.Thread(target=hold_exclusive)
    worker.start()
    try:
        assert started.wait(timeout=5)
        with ThreadPoolExecutor(max_workers=1) as pool:
            resp = pool.submit(call, router, "GET", "/healthz").result(timeout=5)
        assert resp.status == 409
        assert json.loads(resp.body)["error"]["code"] == "deployment_in_progress"
    finally:
        release.set()
        worker.join(timeout=5)


# ---------------------------------------------------------------------------
# IAM endpoints
# ---------------------------------------------------------------------------

def test_mint_and_identity_flow_over_api(emu, router):
    sa = emu.create_service_account(PROJECT, "api-sa")
    resp = call(router, "POST", "/iam/v1/token", body={"email": sa.email, "key": sa.key_material})
    assert resp.status == 200
    token = json.loads(resp.body)["token"]
    resp = call(router, "POST", "/iam/v1/identity-token", token=token, body={"audience": "/fn/x/y"})
    assert resp.status == 200
    assert json.loads(resp.body)["kind"] == "identity"


def test_mint_with_bad_key_is_401(emu, router):
    sa = emu.create_service_account(PROJECT, "api-sa")
    resp = call(router, "POST", "/iam/v1/token", body={"email": sa.email, "key": "wrong"})
    assert resp.status == 401


def test_test_permissions_endpoint_anonymous_ok(emu, router):
    resp = call(
        router, "POST", f"/iam/v1/projects/{PROJECT}:testIamPermissions",
        body={"permissions": ["storage.objects.get"]},
    )
    assert resp.status == 200
    assert json.loads(resp.body) == {"permissions": []}


def test_ctf_validate_endpoint(router, registry):
    from thunderctf.levels import generate_flag

    level = registry.get("thunder/a1openbucket")
    good = generate_flag(level.seed, PROJECT)
    resp = call(
        router, "POST", "/ctf/v1/validate",
        body={"level": "thunder/a1openbucket", "project_id": PROJECT, "flag": good},
    )
    assert json.loads(resp.body) == {"result": "correct"}
    resp = call(
        router, "POST", "/ctf/v1/validate",
        body={"level": "thunder/a1openbucket", "project_id": PROJECT, "flag": good + " "},
    )
    assert json.loads(resp.body) == {"result": "incorrect"}
