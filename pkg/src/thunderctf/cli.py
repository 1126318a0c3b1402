"""The ``thunder`` command-line tool: serve the emulator, create/destroy
levels, and play them with gcloud-like verbs.

Exit codes: 0 success, 1 API error, 2 server unreachable, 3 usage error.
In ``--json`` mode the printed output is byte-identical to the API response
body, which is what the scripted level solvers parse.
"""

from __future__ import annotations

import argparse
import json
import os
import stat
import sys
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Optional
from urllib.parse import quote, urlencode

from . import archive, hints, levels
from .core import derive_public_key, generate_keypair

DEFAULT_ADDR = "127.0.0.1:8085"
DEFAULT_PROJECT = "ctf-sandbox"


class UsageError(Exception):
    pass


class ConnectivityError(Exception):
    pass


class ApiCallError(Exception):
    def __init__(self, status: int, code: str, message: str, body: bytes):
        super().__init__(f"{code}: {message}")
        self.status = status
        self.code = code
        self.body = body


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are exit code 3, not 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config file
# ---------------------------------------------------------------------------

def thunder_home() -> Path:
    return Path(os.environ.get("THUNDER_HOME") or (Path.home() / ".thunderctf"))


def load_config() -> dict[str, Any]:
    path = thunder_home() / "config.json"
    if path.is_file():
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError):
            return {}
    return {}


def save_config(config: dict[str, Any]) -> None:
    home = thunder_home()
    home.mkdir(parents=True, exist_ok=True)
    path = home / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")
    path.chmod(stat.S_IRUSR | stat.S_IWUSR)  # the active token lives here


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------

class ApiClient:
    def __init__(self, address: str, token: Optional[str] = None):
        self.base = f"http://{address}"
        self.token = token

    def request(
        self,
        method: str,
        path: str,
        *,
        body: Optional[dict[str, Any]] = None,
        raw_body: Optional[bytes] = None,
        headers: Optional[dict[str, str]] = None,
        query: Optional[dict[str, str]] = None,
        with_auth: bool = True,
    ) -> tuple[int, bytes, str]:
        url = self.base + path
        if query:
            url += "?" + urlencode(query)
        data = raw_body
        req_headers = dict(headers or {})
        if body is not None:
            data = json.dumps(body).encode("utf-8")
            req_headers.setdefault("Content-Type", "application/json")
        if with_auth and self.token:
            req_headers.setdefault("Authorization", f"Bearer {self.token}")
        request = urllib.request.Request(url, data=data, headers=req_headers, method=method)
        try:
            with urllib.request.urlopen(request) as resp:
                return resp.status, resp.read(), resp.headers.get("Content-Type", "")
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read(), exc.headers.get("Content-Type", "")
        except (urllib.error.URLError, ConnectionError, OSError) as exc:
            raise ConnectivityError(f"cannot reach emulator at {self.base}: {exc}") from exc

    def call(self, method: str, path: str, **kwargs) -> tuple[bytes, str]:
        """Request that treats HTTP >= 400 as an API error."""
        status, body, ctype = self.request(method, path, **kwargs)
        if status >= 400:
            code, message = "api_error", body.decode("utf-8", "replace")[:200]
            try:
                err = json.loads(body)["error"]
                code, message = err.get("code", code), err.get("message", message)
            except (json.JSONDecodeError, KeyError, TypeError):
                pass
            raise ApiCallError(status, code, message, body)
        return body, ctype


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

class Ctx:
    """Resolved invocation context: address, project, token, output mode."""

    def __init__(self, args: argparse.Namespace):
        config = load_config()
        self.config = config
        self.address = (
            args.addr
            or os.environ.get("EMUCLOUD_ADDR")
            or config.get("api_address")
            or DEFAULT_ADDR
        )
        self.project = args.project or config.get("active_project_id") or ""
        self.json_mode = bool(args.json) or config.get("output_mode") == "json"
        self.client = ApiClient(self.address, config.get("active_token"))

    def emit(self, body: bytes, text_renderer) -> None:
        """JSON mode prints the raw API body; text mode renders it."""
        if self.json_mode:
            sys.stdout.buffer.write(body)
            if not body.endswith(b"\n"):
                sys.stdout.write("\n")
        else:
            text_renderer(json.loads(body.decode("utf-8")))

    def project_query(self) -> dict[str, str]:
        return {"project": self.project} if self.project else {}

    def require_project(self) -> str:
        if self.project:
            return self.project
        # fall back to the server default
        body, _ = self.client.call("GET", "/ctf/v1/status")
        project = json.loads(body).get("default_project_id") or ""
        if not project:
            raise UsageError("no project configured; pass --project or run 'thunder create'")
        self.project = project
        return project


def _kv_params(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--param expects k=v, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = value
    return out


def _split_headers(lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines or []:
        if ":" not in line:
            raise UsageError(f"--header expects 'Name: value', got {line!r}")
        name, value = line.split(":", 1)
        out[name.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    # imported lazily so player commands stay light
    from .api import Router
    from .core import Emulator
    from .server import EmuCloudServer

    emu = Emulator(metadata_hardening=args.metadata_hardening)
    if args.state_file and Path(args.state_file).is_file():
        emu.load_json(args.state_file)
    project_id = args.project or DEFAULT_PROJECT
    if project_id not in emu.projects:
        emu.create_project(project_id, "thunder ctf sandbox")
    registry = levels.LevelRegistry()
    levels.load_shipped(registry)
    router = Router(emu, registry, default_project_id=project_id)
    host, _, port = (args.addr or os.environ.get("EMUCLOUD_ADDR") or DEFAULT_ADDR).partition(":")
    ui_dir = Path(args.ui_dir).resolve() if args.ui_dir else None
    server = EmuCloudServer(router, host=host, port=int(port or 8085), ui_dir=ui_dir)
    print(f"emucloud listening on http://{server.address} (project: {project_id})")
    if ui_dir:
        print(f"web ui: http://{server.address}/ui/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        if args.state_file:
            emu.save_json(args.state_file)
            print(f"state saved to {args.state_file}")
    return 0


def cmd_list_levels(ctx: Ctx, args) -> int:
    query = {"namespace": args.namespace} if args.namespace else {}
    body, _ = ctx.client.call("GET", "/ctf/v1/levels", query=query)

    def render(doc):
        for level in doc["levels"]:
            print(f"{level['ref']:28s} {level['title']}")

    ctx.emit(body, render)
    return 0


def cmd_create(ctx: Ctx, args) -> int:
    payload: dict[str, Any] = {"level": args.level}
    if ctx.project:
        payload["project_id"] = ctx.project
    body, _ = ctx.client.call("POST", "/ctf/v1/levels:create", body=payload)
    doc = json.loads(body)
    # remember the project, drop any stale token, stash the handout key
    ctx.config["api_address"] = ctx.address
    ctx.config["active_project_id"] = doc["project_id"]
    ctx.config.pop("active_token", None)
    save_config(ctx.config)
    key_path = None
    if doc.get("handout"):
        keys_dir = thunder_home() / "keys"
        keys_dir.mkdir(parents=True, exist_ok=True)
        key_path = keys_dir / (args.level.replace("/", "-") + ".json")
        key_path.write_text(
            json.dumps(
                {"email": doc["handout"]["email"], "key": doc["handout"]["key_material"]},
                indent=2,
            ),
            encoding="utf-8",
        )
        key_path.chmod(stat.S_IRUSR | stat.S_IWUSR)
    if ctx.json_mode:
        ctx.emit(body, lambda d: None)
        return 0
    print(f"level {doc['level']} deployed in project {doc['project_id']}")
    print()
    print(doc["intro"].rstrip())
    print()
    if key_path:
        print(f"handout credential: {doc['handout']['email']}")
        print(f"key file written to {key_path}")
        print(f"activate it with: thunder auth activate-key {key_path}")
    else:
        print("this level starts unauthenticated; no credential handed out")
    print(f"{doc['hint_count']} hints available: thunder hints show --level {doc['level']}")
    return 0


def cmd_destroy(ctx: Ctx, args) -> int:
    body, _ = ctx.client.call("POST", "/ctf/v1/levels:destroy")
    ctx.emit(body, lambda d: print(f"destroyed {d['destroyed']}"))
    return 0


def cmd_submit(ctx: Ctx, args) -> int:
    payload = {"level": args.level, "flag": args.flag}
    if ctx.project:
        payload["project_id"] = ctx.project
    body, _ = ctx.client.call("POST", "/ctf/v1/validate", body=payload)
    ctx.emit(body, lambda d: print(d["result"]))
    return 0 if json.loads(body)["result"] == "correct" else 1


def cmd_keygen(args) -> int:
    private, public = generate_keypair()
    out = Path(args.out)
    out.write_text(private + "\n", encoding="utf-8")
    out.chmod(stat.S_IRUSR | stat.S_IWUSR)
    print(f"private key written to {out}")
    print(f"public key: {public}")
    return 0


# -- auth ----------------------------------------------------------------------

def cmd_auth(ctx: Ctx, args) -> int:
    if args.auth_cmd == "activate-key":
        doc = json.loads(Path(args.file).read_text(encoding="utf-8"))
        body, _ = ctx.client.call(
            "POST",
            "/iam/v1/token",
            body={"email": doc["email"], "key": doc.get("key") or doc.get("key_material")},
            with_auth=False,
        )
        token_doc = json.loads(body)
        ctx.config.update(
            {
                "api_address": ctx.address,
                "active_token": token_doc["token"],
                "active_project_id": token_doc["project_id"],
            }
        )
        save_config(ctx.config)
        ctx.emit(body, lambda d: print(f"activated {d['principal']}"))
        return 0
    if args.auth_cmd == "activate-token":
        value = args.token
        if os.path.isfile(value):
            value = Path(value).read_text(encoding="utf-8").strip()
        # accept a raw token or a JSON blob that carries one
        if value.startswith("{"):
            doc = json.loads(value)
            value = doc.get("token") or doc.get("access_token") or ""
        if not value:
            raise UsageError("no token found in the given value")
        ctx.config.update({"api_address": ctx.address, "active_token": value})
        if ctx.project:
            ctx.config["active_project_id"] = ctx.project
        save_config(ctx.config)
        print("token activated")
        return 0
    if args.auth_cmd == "print-token":
        token = ctx.config.get("active_token")
        if not token:
            print("no active token", file=sys.stderr)
            return 1
        print(token)
        return 0
    if args.auth_cmd == "mint-identity":
        body, _ = ctx.client.call(
            "POST", "/iam/v1/identity-token", body={"audience": args.audience}
        )
        ctx.emit(body, lambda d: print(d["token"]))
        return 0
    raise UsageError(f"unknown auth command {args.auth_cmd!r}")


# -- iam ----------------------------------------------------------------------

def cmd_iam(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    if args.iam_cmd == "test-permissions":
        perms = args.permissions
        if not perms:
            body, _ = ctx.client.call("GET", "/iam/v1/permissions")
            perms = json.loads(body)["permissions"]
        body, _ = ctx.client.call(
            "POST",
            f"/iam/v1/projects/{project}:testIamPermissions",
            body={"permissions": perms},
        )

        def render(doc):
            granted = doc["permissions"]
            if not granted:
                print("(no permissions granted)")
            for p in granted:
                print(p)

        ctx.emit(body, render)
        return 0
    if args.iam_cmd == "get-policy":
        body, _ = ctx.client.call("GET", f"/iam/v1/projects/{project}:getIamPolicy")

        def render(doc):
            print(f"etag: {doc['etag']}")
            for binding in doc["bindings"]:
                print(f"{binding['role']}:")
                for member in binding["members"]:
                    print(f"  - {member}")

        ctx.emit(body, render)
        return 0
    if args.iam_cmd == "set-policy":
        policy = json.loads(Path(args.file).read_text(encoding="utf-8"))
        body, _ = ctx.client.call(
            "POST", f"/iam/v1/projects/{project}:setIamPolicy", body={"policy": policy}
        )
        ctx.emit(body, lambda d: print(f"policy updated, etag now {d['etag']}"))
        return 0
    if args.iam_cmd == "add-binding":
        # read-modify-write with the fresh etag
        body, _ = ctx.client.call("GET", f"/iam/v1/projects/{project}:getIamPolicy")
        policy = json.loads(body)
        for binding in policy["bindings"]:
            if binding["role"] == args.role:
                if args.member not in binding["members"]:
                    binding["members"].append(args.member)
                break
        else:
            policy["bindings"].append({"role": args.role, "members": [args.member]})
        body, _ = ctx.client.call(
            "POST", f"/iam/v1/projects/{project}:setIamPolicy", body={"policy": policy}
        )
        ctx.emit(body, lambda d: print(f"added {args.member} to {args.role}"))
        return 0
    raise UsageError(f"unknown iam command {args.iam_cmd!r}")


# -- storage ----------------------------------------------------------------------

def cmd_buckets(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    body, _ = ctx.client.call("GET", "/storage/v1/b", query={"project": project})
    ctx.emit(body, lambda d: print("\n".join(d["buckets"]) or "(no buckets)"))
    return 0


def cmd_objects(ctx: Ctx, args) -> int:
    if args.objects_cmd == "list":
        body, _ = ctx.client.call("GET", f"/storage/v1/b/{quote(args.bucket)}/o")
        ctx.emit(body, lambda d: print("\n".join(d["objects"]) or "(empty bucket)"))
        return 0
    if args.objects_cmd == "cat":
        path = f"/storage/v1/b/{quote(args.bucket)}/o/{quote(args.name, safe='')}"
        body, _ = ctx.client.call("GET", path)
        sys.stdout.buffer.write(body)
        sys.stdout.buffer.flush()
        return 0
    if args.objects_cmd == "put":
        data = Path(args.file).read_bytes()
        path = f"/storage/v1/b/{quote(args.bucket)}/o/{quote(args.name, safe='')}"
        body, _ = ctx.client.call("PUT", path, raw_body=data)
        ctx.emit(body, lambda d: print(f"wrote {d['bucket']}/{d['name']}"))
        return 0
    raise UsageError(f"unknown objects command {args.objects_cmd!r}")


# -- compute ----------------------------------------------------------------------

def cmd_instances(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    if args.instances_cmd == "list":
        body, _ = ctx.client.call("GET", f"/compute/v1/projects/{project}/instances")

        def render(doc):
            for inst in doc["instances"]:
                print(f"{inst['name']}  zone={inst['zone']}  sa={inst['attached_service_account']}")
                if inst["metadata_keys"]:
                    print(f"  metadata keys: {', '.join(inst['metadata_keys'])}")
                if inst.get("container_image"):
                    print(f"  container: {inst['container_image']} port={inst['serving_port']}")
            if not doc["instances"]:
                print("(no instances)")

        ctx.emit(body, render)
        return 0
    if args.instances_cmd == "add-ssh-key":
        private = Path(args.key_file).read_text(encoding="utf-8").strip()
        public = derive_public_key(private)
        body, _ = ctx.client.call(
            "POST",
            f"/compute/v1/projects/{project}/instances/{quote(args.instance)}:setMetadata",
            body={"key": "ssh-keys", "value": f"{args.user}:{public}"},
        )
        ctx.emit(body, lambda d: print(f"ssh key for {args.user} installed on {args.instance}"))
        return 0
    if args.instances_cmd == "curl":
        params = _kv_params(args.param)
        headers = _split_headers(args.header)
        path = args.path if args.path.startswith("/") else "/" + args.path
        target = f"/vm/{project}/{quote(args.instance)}{path}"
        status, body, _ = ctx.client.request("GET", target, query=params, headers=headers)
        sys.stdout.buffer.write(body)
        if not body.endswith(b"\n"):
            sys.stdout.write("\n")
        return 0 if status < 400 else 1
    raise UsageError(f"unknown instances command {args.instances_cmd!r}")


def cmd_ssh(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    private = Path(args.key).read_text(encoding="utf-8").strip()
    body, _ = ctx.client.call(
        "POST",
        f"/compute/v1/projects/{project}/instances/{quote(args.instance)}:connect",
        body={"private_key": private},
    )
    session = json.loads(body)["session"]
    if args.exec == "token":
        body, _ = ctx.client.call("POST", f"/compute/v1/sessions/{session}:token")
        ctx.emit(body, lambda d: print(d["token"]))
        return 0
    if args.exec == "metadata":
        if not args.path:
            raise UsageError("--exec metadata requires --path")
        headers = {"Metadata-Flavor": "Google"}
        headers.update(_split_headers(args.header))
        body, _ = ctx.client.call(
            "POST",
            f"/compute/v1/sessions/{session}:metadata",
            body={"path": args.path, "headers": headers},
        )
        sys.stdout.buffer.write(body)
        if not body.endswith(b"\n"):
            sys.stdout.write("\n")
        return 0
    raise UsageError("--exec must be 'token' or 'metadata'")


# -- functions ----------------------------------------------------------------------

def cmd_functions(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    if args.functions_cmd == "list":
        body, _ = ctx.client.call("GET", f"/functions/v1/projects/{project}/functions")

        def render(doc):
            for fn in doc["functions"]:
                auth = "auth required" if fn["require_auth"] else "public"
                print(f"{fn['name']}  {fn['url']}  [{auth}]  runs as {fn['runtime_account']}")
            if not doc["functions"]:
                print("(no functions)")

        ctx.emit(body, render)
        return 0
    if args.functions_cmd == "get":
        body, _ = ctx.client.call(
            "GET", f"/functions/v1/projects/{project}/functions/{quote(args.name)}"
        )

        def render(doc):
            print(f"name: {doc['name']}")
            print(f"url: {doc['url']}")
            print(f"require_auth: {doc['require_auth']}")
            print(f"runtime_account: {doc['runtime_account']}")
            print("env:")
            for key, value in doc["env"].items():
                print(f"  {key}={value}")

        ctx.emit(body, render)
        return 0
    if args.functions_cmd == "source":
        body, _ = ctx.client.call(
            "GET", f"/functions/v1/projects/{project}/functions/{quote(args.name)}:source"
        )
        sys.stdout.buffer.write(body)
        if not body.endswith(b"\n"):
            sys.stdout.write("\n")
        return 0
    if args.functions_cmd == "deploy":
        source = Path(args.file).read_text(encoding="utf-8")
        body, _ = ctx.client.call(
            "POST",
            f"/functions/v1/projects/{project}/functions/{quote(args.name)}:update",
            body={"source": source},
        )
        ctx.emit(body, lambda d: print(f"function {d['function']} updated"))
        return 0
    if args.functions_cmd == "call":
        params = _kv_params(args.param)
        headers = {}
        if args.identity:
            audience = f"/fn/{project}/{args.name}"
            tok_body, _ = ctx.client.call(
                "POST", "/iam/v1/identity-token", body={"audience": audience}
            )
            headers["Authorization"] = f"Bearer {json.loads(tok_body)['token']}"
        status, body, _ = ctx.client.request(
            "POST",
            f"/fn/{project}/{quote(args.name)}",
            query=params,
            headers=headers,
            with_auth=not args.identity,
        )
        sys.stdout.buffer.write(body)
        if not body.endswith(b"\n"):
            sys.stdout.write("\n")
        return 0 if status < 400 else 1
    raise UsageError(f"unknown functions command {args.functions_cmd!r}")


# -- logs / repos / images --------------------------------------------------------------

def cmd_logs(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    query = {"logger": args.logger} if args.logger else {}
    body, _ = ctx.client.call("GET", f"/logging/v1/projects/{project}/entries", query=query)

    def render(doc):
        for entry in doc["entries"]:
            print(f"[{entry['severity']:5s}] {entry['logger']}: {entry['message']}")
        if not doc["entries"]:
            print("(no log entries)")

    ctx.emit(body, render)
    return 0


def cmd_repo(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    if args.repo_cmd == "log":
        body, _ = ctx.client.call(
            "GET", f"/repos/v1/projects/{project}/repos/{quote(args.repo)}/log"
        )

        def render(doc):
            for commit in doc["commits"]:
                print(f"commit {commit['commit_id']}")
                print(f"  message: {commit['message']}")
                print(f"  files: {', '.join(commit['paths'])}")

        ctx.emit(body, render)
        return 0
    if args.repo_cmd == "show":
        path = (
            f"/repos/v1/projects/{project}/repos/{quote(args.repo)}"
            f"/commits/{quote(args.commit)}/files/{quote(args.path, safe='')}"
        )
        body, _ = ctx.client.call("GET", path)
        sys.stdout.buffer.write(body)
        sys.stdout.buffer.flush()
        return 0
    raise UsageError(f"unknown repo command {args.repo_cmd!r}")


def cmd_images(ctx: Ctx, args) -> int:
    project = ctx.require_project()
    if args.images_cmd == "list":
        body, _ = ctx.client.call("GET", f"/registry/v1/projects/{project}/images")
        ctx.emit(body, lambda d: print("\n".join(d["images"]) or "(no images)"))
        return 0
    if args.images_cmd == "pull":
        body, _ = ctx.client.call("GET", f"/registry/v1/images/{quote(args.path, safe='/:')}")
        if args.out:
            Path(args.out).write_bytes(body)
            print(f"archive written to {args.out}")
        if args.extract_to:
            dest = Path(args.extract_to)
            dest.mkdir(parents=True, exist_ok=True)
            for file_path, data in archive.unpack(body).items():
                rel = file_path.lstrip("/")
                if ".." in rel.split("/"):
                    raise UsageError(f"archive contains unsafe path {file_path!r}")
                target = dest / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
                print(f"extracted {target}")
        if not args.out and not args.extract_to:
            sys.stdout.buffer.write(body)
            sys.stdout.buffer.flush()
        return 0
    raise UsageError(f"unknown images command {args.images_cmd!r}")


# -- hints --------------------------------------------------------------------------

def cmd_hints(ctx: Ctx, args) -> int:
    if args.hints_cmd == "build":
        registry = levels.LevelRegistry()
        levels.load_shipped(registry)
        out_root = Path(args.out)
        for ns, name in registry.list():
            level = registry.get(f"{ns}/{name}")
            deck = hints.parse_hint_file(level.hints_text, level.ref)
            out_dir = out_root / ns / name
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "index.html").write_text(hints.render_slideshow(deck), encoding="utf-8")
            print(f"wrote {out_dir / 'index.html'}")
        return 0

    def render(doc):
        print(f"{doc['revealed']}/{doc['total']} hints revealed for {doc['level']}")
        for hint in doc["hints"]:
            print(f"\n--- hint {hint['index']}: {hint['title']} ---")
            print(hint["body"].rstrip())

    if args.hints_cmd == "show":
        query = {"level": args.level}
        query.update(ctx.project_query())
        body, _ = ctx.client.call("GET", "/ctf/v1/hints", query=query)
        ctx.emit(body, render)
        return 0
    if args.hints_cmd == "reveal":
        payload: dict[str, Any] = {"level": args.level}
        if ctx.project:
            payload["project_id"] = ctx.project
        body, _ = ctx.client.call("POST", "/ctf/v1/hints/reveal", body=payload)
        ctx.emit(body, render)
        return 0
    raise UsageError(f"unknown hints command {args.hints_cmd!r}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="thunder", description="EmuCloud CTF: play cloud-security levels locally")
    parser.add_argument("--addr", help="emulator address host:port (env EMUCLOUD_ADDR)")
    parser.add_argument("--project", help="project id to operate on")
    parser.add_argument("--json", action="store_true", help="print raw API response bodies")

    # the global flags are also accepted after the subcommand; SUPPRESS keeps
    # them from clobbering values given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--addr", default=argparse.SUPPRESS)
    common.add_argument("--project", default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)

    subparsers = parser.add_subparsers(dest="cmd", required=True)

    class _Sub:
        def add_parser(self, name, **kwargs):
            return subparsers.add_parser(name, parents=[common], **kwargs)

    sub = _Sub()

    serve = sub.add_parser("serve", help="run the emulator + API server")
    serve.add_argument(
        "--metadata-hardening",
        choices=["default", "strict-header"],
        default="default",
        help="require the custom metadata header (kills the SSRF vector)",
    )
    serve.add_argument("--state-file", help="load state at boot, save on shutdown")
    serve.add_argument("--ui-dir", help="directory with the built web UI, served at /ui/")

    sub.add_parser("list-levels", help="list registered levels").add_argument(
        "--namespace", help="filter by namespace"
    )
    create = sub.add_parser("create", help="deploy a level, e.g. thunder create thunder/a1openbucket")
    create.add_argument("level")
    sub.add_parser("destroy", help="tear down the active level")
    submit = sub.add_parser("submit", help="submit a flag for validation")
    submit.add_argument("level")
    submit.add_argument("flag")

    keygen = sub.add_parser("keygen", help="generate an ssh-style key pair")
    keygen.add_argument("-o", "--out", required=True, help="private key output file")

    auth = sub.add_parser("auth", help="credential management")
    auth_sub = auth.add_subparsers(dest="auth_cmd", required=True)
    ak = auth_sub.add_parser("activate-key", help="mint a token from a key file")
    ak.add_argument("file")
    at = auth_sub.add_parser("activate-token", help="adopt a raw bearer token")
    at.add_argument("token", help="token string, JSON blob, or file containing either")
    auth_sub.add_parser("print-token", help="print the active token")
    mi = auth_sub.add_parser("mint-identity", help="mint an identity token for an audience")
    mi.add_argument("--audience", required=True)

    iam = sub.add_parser("iam", help="policy and permission operations")
    iam_sub = iam.add_subparsers(dest="iam_cmd", required=True)
    tp = iam_sub.add_parser("test-permissions", help="show which permissions the token holds")
    tp.add_argument("permissions", nargs="*")
    iam_sub.add_parser("get-policy", help="read the project IAM policy")
    sp = iam_sub.add_parser("set-policy", help="replace the project IAM policy")
    sp.add_argument("-f", "--file", required=True, help="policy JSON file (must carry the current etag)")
    ab = iam_sub.add_parser("add-binding", help="add a member to a role binding")
    ab.add_argument("--role", required=True)
    ab.add_argument("--member", required=True)

    buckets = sub.add_parser("buckets", help="storage buckets")
    buckets.add_subparsers(dest="buckets_cmd", required=True).add_parser("list")

    objects = sub.add_parser("objects", help="storage objects")
    objects_sub = objects.add_subparsers(dest="objects_cmd", required=True)
    ol = objects_sub.add_parser("list")
    ol.add_argument("bucket")
    oc = objects_sub.add_parser("cat")
    oc.add_argument("bucket")
    oc.add_argument("name")
    op = objects_sub.add_parser("put")
    op.add_argument("bucket")
    op.add_argument("name")
    op.add_argument("-f", "--file", required=True)

    instances = sub.add_parser("instances", help="compute instances")
    inst_sub = instances.add_subparsers(dest="instances_cmd", required=True)
    inst_sub.add_parser("list")
    ak2 = inst_sub.add_parser("add-ssh-key", help="install a public key in instance metadata")
    ak2.add_argument("instance")
    ak2.add_argument("--user", required=True)
    ak2.add_argument("--key-file", required=True, help="private key file (public half derived)")
    ic = inst_sub.add_parser("curl", help="request the instance's web app")
    ic.add_argument("instance")
    ic.add_argument("path")
    ic.add_argument("--param", action="append", default=[])
    ic.add_argument("--header", action="append", default=[])

    ssh = sub.add_parser("ssh", help="key-checked session on an instance")
    ssh.add_argument("instance")
    ssh.add_argument("--key", required=True, help="private key file")
    ssh.add_argument("--exec", required=True, choices=["token", "metadata"])
    ssh.add_argument("--path", help="metadata path for --exec metadata")
    ssh.add_argument("--header", action="append", default=[])

    functions = sub.add_parser("functions", help="serverless functions")
    fn_sub = functions.add_subparsers(dest="functions_cmd", required=True)
    fn_sub.add_parser("list")
    fg = fn_sub.add_parser("get")
    fg.add_argument("name")
    fs = fn_sub.add_parser("source")
    fs.add_argument("name")
    fd = fn_sub.add_parser("deploy", help="replace a function's source")
    fd.add_argument("name")
    fd.add_argument("-f", "--file", required=True)
    fc = fn_sub.add_parser("call")
    fc.add_argument("name")
    fc.add_argument("--param", action="append", default=[])
    fc.add_argument("--identity", action="store_true", help="mint + attach an identity token")

    logs = sub.add_parser("logs", help="project logs")
    logs_sub = logs.add_subparsers(dest="logs_cmd", required=True)
    lr = logs_sub.add_parser("read")
    lr.add_argument("--logger")

    repo = sub.add_parser("repo", help="source repositories")
    repo_sub = repo.add_subparsers(dest="repo_cmd", required=True)
    rl = repo_sub.add_parser("log")
    rl.add_argument("repo")
    rs = repo_sub.add_parser("show")
    rs.add_argument("repo")
    rs.add_argument("commit")
    rs.add_argument("path")

    images = sub.add_parser("images", help="container registry")
    images_sub = images.add_subparsers(dest="images_cmd", required=True)
    images_sub.add_parser("list")
    ip = images_sub.add_parser("pull")
    ip.add_argument("path")
    ip.add_argument("--out")
    ip.add_argument("--extract-to")

    hints_p = sub.add_parser("hints", help="hint decks")
    hints_sub = hints_p.add_subparsers(dest="hints_cmd", required=True)
    hs = hints_sub.add_parser("show")
    hs.add_argument("--level", required=True)
    hr = hints_sub.add_parser("reveal")
    hr.add_argument("--level", required=True)
    hb = hints_sub.add_parser("build", help="write static slideshow bundles")
    hb.add_argument("-o", "--out", default="site")

    return parser


_DISPATCH = {
    "list-levels": cmd_list_levels,
    "create": cmd_create,
    "destroy": cmd_destroy,
    "submit": cmd_submit,
    "auth": cmd_auth,
    "iam": cmd_iam,
    "buckets": cmd_buckets,
    "objects": cmd_objects,
    "instances": cmd_instances,
    "ssh": cmd_ssh,
    "functions": cmd_functions,
    "logs": cmd_logs,
    "repo": cmd_repo,
    "images": cmd_images,
    "hints": cmd_hints,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    try:
        if args.cmd == "serve":
            return cmd_serve(args)
        if args.cmd == "keygen":
            return cmd_keygen(args)
        ctx = Ctx(args)
        return _DISPATCH[args.cmd](ctx, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 3
    except ConnectivityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ApiCallError as exc:
        if getattr(args, "json", False):
            sys.stdout.buffer.write(exc.body)
            sys.stdout.write("\n")
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
