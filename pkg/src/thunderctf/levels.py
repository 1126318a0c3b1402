"""Level framework: the namespace registry, level modules loaded from data
directories, polymorphic flag generation/validation, and the create/destroy
lifecycle that drives the deploy engine and the setup helpers.

A level directory holds four files::

    levels/<namespace>/<name>/
        level.yaml    # metadata, seed, handout, generated context, setup steps
        config.yaml   # templated deployment configuration
        hints.yaml    # hint deck
        writeup.md    # ties the scenario back to the real-world breach

Flags are per-player: ``CTF{`` + first 16 hex chars of
SHA-256("<level_seed>:<project_id>") + ``}``.  Validation is an exact,
constant-time comparison.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from . import deploy, errors, services
from .core import Emulator, account_email, generate_keypair

FLAG_RE_TEXT = r"CTF\{[0-9a-f]{16}\}"

HELPER_ACTIONS = (
    "upload_object",
    "add_binding",
    "seed_log_entries",
    "seed_repo",
    "push_image",
    "set_instance_metadata",
    "set_function_env",
)


def generate_flag(level_seed: str, project_id: str) -> str:
    """Deterministic per-(seed, project) flag."""
    if not level_seed or not project_id:
        raise errors.ValidationError("level seed and project id must be non-empty")
    digest = hashlib.sha256(f"{level_seed}:{project_id}".encode("utf-8")).hexdigest()
    return "CTF{" + digest[:16] + "}"


# ---------------------------------------------------------------------------
# Level modules
# ---------------------------------------------------------------------------

@dataclass
class LevelModule:
    namespace: str
    name: str
    seed: str
    title: str
    intro: str
    config_template: str
    hints_text: str
    writeup: str
    handout_account: Optional[str] = None
    handout_description: str = ""
    context: dict[str, str] = field(default_factory=dict)
    keypairs: list[str] = field(default_factory=list)
    secret_names: list[str] = field(default_factory=list)
    setup_steps: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ref(self) -> str:
        return f"{self.namespace}/{self.name}"


def load_level_dir(path: Path) -> LevelModule:
    meta = yaml.safe_load((path / "level.yaml").read_text(encoding="utf-8"))
    if not isinstance(meta, dict):
        raise errors.ValidationError(f"{path}/level.yaml is not a mapping")
    for key in ("name", "namespace", "seed"):
        if not meta.get(key):
            raise errors.ValidationError(f"{path}/level.yaml missing {key!r}")
    handout = meta.get("handout") or {}
    steps = meta.get("setup") or []
    for i, step in enumerate(steps):
        if not isinstance(step, dict) or len(step) != 1:
            raise errors.ValidationError(f"{path}: setup step {i} must have exactly one action")
        action = next(iter(step))
        if action not in HELPER_ACTIONS:
            raise errors.ValidationError(f"{path}: unknown setup action {action!r}")
    return LevelModule(
        namespace=str(meta["namespace"]),
        name=str(meta["name"]),
        seed=str(meta["seed"]),
        title=str(meta.get("title", meta["name"])),
        intro=str(meta.get("intro", "")),
        config_template=(path / "config.yaml").read_text(encoding="utf-8"),
        hints_text=(path / "hints.yaml").read_text(encoding="utf-8"),
        writeup=(path / "writeup.md").read_text(encoding="utf-8")
        if (path / "writeup.md").exists()
        else "",
        handout_account=handout.get("account"),
        handout_description=str(handout.get("description", "")),
        context={str(k): str(v) for k, v in (meta.get("context") or {}).items()},
        keypairs=[str(k) for k in (meta.get("keypairs") or [])],
        secret_names=[str(s) for s in (meta.get("secrets") or [])],
        setup_steps=steps,
    )


class LevelRegistry:
    """Immutable-after-startup map of (namespace, name) -> LevelModule."""

    def __init__(self) -> None:
        self._levels: dict[tuple[str, str], LevelModule] = {}

    def register(self, level: LevelModule) -> None:
        key = (level.namespace, level.name)
        if key in self._levels:
            raise errors.DuplicateLevel(f"level exists: {level.ref}")
        self._levels[key] = level

    def list(self, namespace: Optional[str] = None) -> list[tuple[str, str]]:
        return sorted(k for k in self._levels if namespace is None or k[0] == namespace)

    def get(self, ref: str) -> LevelModule:
        if "/" not in ref:
            raise errors.UnknownLevel(f"level refs look like namespace/name, got {ref!r}")
        namespace, name = ref.split("/", 1)
        level = self._levels.get((namespace, name))
        if level is None:
            raise errors.UnknownLevel(f"no such level: {ref}")
        return level


def shipped_levels_root() -> Path:
    from importlib.resources import files

    return Path(str(files("thunderctf.data").joinpath("levels")))


def load_shipped(registry: LevelRegistry, root: Optional[Path] = None) -> None:
    root = root or shipped_levels_root()
    if not root.is_dir():
        return
    for level_yaml in sorted(root.glob("*/*/level.yaml")):
        registry.register(load_level_dir(level_yaml.parent))


# ---------------------------------------------------------------------------
# Lifecycle
# ---------------------------------------------------------------------------

@dataclass
class StartInfo:
    level: str
    project_id: str
    intro: str
    handout_email: Optional[str]
    handout_key: Optional[str]
    hint_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "project_id": self.project_id,
            "intro": self.intro,
            "handout": (
                {"email": self.handout_email, "key_material": self.handout_key}
                if self.handout_email
                else None
            ),
            "hint_count": self.hint_count,
        }


def _count_hints(hints_text: str) -> int:
    try:
        doc = yaml.safe_load(hints_text)
        return len(doc.get("hints", []))
    except Exception:
        return 0


def build_context(level: LevelModule, project_id: str) -> deploy.TemplateContext:
    """Template context for one deployment: static extras, generated key
    pairs and secrets, the handout email, and a fresh nonce."""
    extra: dict[str, str] = dict(level.context)
    for kp in level.keypairs:
        private, public = generate_keypair()
        extra[f"{kp}_private"] = private
        extra[f"{kp}_public"] = public
    for name in level.secret_names:
        extra[name] = secrets.token_hex(8)
    if level.handout_account:
        extra["handout_email"] = account_email(level.handout_account, project_id)
    return deploy.TemplateContext.fresh(project_id, level_name=level.ref, extra=extra)


def create_level(
    emu: Emulator, registry: LevelRegistry, ref: str, project_id: str
) -> StartInfo:
    """Render the level's config, deploy it, run setup, return the handout."""
    level = registry.get(ref)
    emu.project(project_id)  # raises UnknownProject early
    if emu.active_deployment is not None:
        raise errors.ActiveDeploymentExists("destroy the active level first")

    ctx = build_context(level, project_id)
    handout_email = ctx.extra.get("handout_email")
    rendered = deploy.render_text(level.config_template, ctx.mapping())
    config = deploy.parse_config(rendered)
    record = deploy.deploy(
        emu,
        project_id,
        config,
        level_name=level.ref,
        context=ctx,
        rendered_config=rendered,
    )

    handout_key: Optional[str] = None
    try:
        if level.handout_account:
            sa = emu.create_service_account(
                project_id, level.handout_account, description=level.handout_description
            )
            handout_key = sa.key_material
            record.handles.append(
                deploy.Handle(
                    "service_account", {"project_id": project_id, "email": sa.email}
                )
            )
        flag = generate_flag(level.seed, project_id)
        step_ctx = dict(ctx.mapping())
        step_ctx["flag"] = flag
        for index, step in enumerate(level.setup_steps):
            action = next(iter(step))
            try:
                _run_helper(emu, project_id, record, action, step[action], step_ctx)
            except errors.EmuError as exc:
                raise errors.HelperError(index, exc.message) from exc
    except errors.EmuError:
        deploy.destroy(emu, record)
        raise

    intro = deploy.render_text(level.intro, ctx.mapping())
    return StartInfo(
        level=level.ref,
        project_id=project_id,
        intro=intro,
        handout_email=handout_email,
        handout_key=handout_key,
        hint_count=_count_hints(level.hints_text),
    )


def destroy_level(emu: Emulator) -> None:
    deploy.destroy(emu)


# -- setup helpers ----------------------------------------------------------------

def _rendered(value: Any, mapping: dict[str, str]) -> Any:
    if isinstance(value, str):
        return deploy.render_text(value, mapping)
    if isinstance(value, dict):
        return {k: _rendered(v, mapping) for k, v in value.items()}
    if isinstance(value, list):
        return [_rendered(v, mapping) for v in value]
    return value


def _run_helper(
    emu: Emulator,
    project_id: str,
    record: deploy.DeploymentRecord,
    action: str,
    raw_args: dict[str, Any],
    step_ctx: dict[str, str],
) -> None:
    args = _rendered(raw_args, step_ctx)
    if action == "upload_object":
        bucket, name = args["bucket"], args["object"]
        content = str(args.get("content", "")).encode("utf-8")
        prev = services.object_put_unchecked(emu, bucket, name, content)
        record.inverse_actions.append(
            {
                "kind": "restore_object",
                "bucket": bucket,
                "name": name,
                "previous_base64": _b64_or_none(prev),
            }
        )
    elif action == "add_binding":
        role = args["role"]
        members = args.get("members") or [args["member"]]
        members = [
            m if m == "allUsers" else (m if "@" in m else account_email(m, project_id))
            for m in members
        ]
        existing = emu.project(project_id).policy.bindings.get(role, set())
        added = [m for m in members if m not in existing]
        emu.grant(project_id, role, added)
        record.inverse_actions.append(
            {
                "kind": "remove_binding_members",
                "project_id": project_id,
                "role": role,
                "members": added,
            }
        )
    elif action == "seed_log_entries":
        logger = args["logger"]
        ids = []
        for entry in args.get("entries", []):
            if isinstance(entry, str):
                severity, message = "INFO", entry
            else:
                severity = str(entry.get("severity", "INFO"))
                message = str(entry.get("message", ""))
            ids.append(emu.append_log(project_id, severity, logger, message).entry_id)
        record.inverse_actions.append(
            {"kind": "remove_log_entries", "project_id": project_id, "entry_ids": ids}
        )
    elif action == "seed_repo":
        repo = args["repo"]
        ids = services.repo_append_commits(emu, project_id, repo, args.get("commits", []))
        record.inverse_actions.append(
            {
                "kind": "remove_commits",
                "project_id": project_id,
                "repo": repo,
                "commit_ids": ids,
            }
        )
    elif action == "push_image":
        path = args["path"]
        files = {p: str(data).encode("utf-8") for p, data in args.get("files", {}).items()}
        services.image_push(emu, project_id, path, files)
        record.inverse_actions.append(
            {"kind": "delete_image", "project_id": project_id, "path": path}
        )
    elif action == "set_instance_metadata":
        instance_name = args["instance"]
        instance = emu.project(project_id).instances.get(instance_name)
        if instance is None:
            raise errors.UnknownResource(f"no such instance: {instance_name}")
        key, value = args["key"], str(args["value"])
        prev = instance.metadata.get(key)
        instance.metadata[key] = value
        record.inverse_actions.append(
            {
                "kind": "restore_instance_metadata",
                "project_id": project_id,
                "instance": instance_name,
                "key": key,
                "previous": prev,
            }
        )
    elif action == "set_function_env":
        fn_name = args["function"]
        key, value = args["key"], str(args["value"])
        try:
            prev = services.function_set_env(emu, project_id, fn_name, key, value)
        except errors.NotFound as exc:
            raise errors.UnknownResource(exc.message) from exc
        record.inverse_actions.append(
            {
                "kind": "restore_function_env",
                "project_id": project_id,
                "function": fn_name,
                "key": key,
                "previous": prev,
            }
        )
    else:
        raise errors.ValidationError(f"unknown setup action: {action}")


def _b64_or_none(data: Optional[bytes]) -> Optional[str]:
    import base64

    return base64.b64encode(data).decode("ascii") if data is not None else None


# ---------------------------------------------------------------------------
# Flag validation and the progress ledger
# ---------------------------------------------------------------------------

def validate_flag(
    emu: Emulator, registry: LevelRegistry, ref: str, project_id: str, submitted: str
) -> str:
    """Exact-match, constant-time comparison; every submission is recorded
    in the per-project progress ledger."""
    level = registry.get(ref)
    expected = generate_flag(level.seed, project_id)
    ok = hmac.compare_digest(expected.encode("utf-8"), submitted.encode("utf-8"))
    verdict = "correct" if ok else "incorrect"
    with emu.locked():
        ledger = emu.progress_for(project_id)
        ledger["submissions"].append(
            {"level": ref, "verdict": verdict, "at": emu.clock.now()}
        )
        if ok and ref not in ledger["completed"]:
            ledger["completed"].append(ref)
    return verdict
