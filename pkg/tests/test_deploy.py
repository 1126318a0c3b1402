from __future__ import annotations

import json

import pytest

from thunderctf import deploy, errors, levels, services
from thunderctf.deploy import TemplateContext, parse_config, render_template, render_text

from .conftest import PROJECT


def snap(emu) -> str:
    return json.dumps(emu.snapshot(), sort_keys=True)


# ---------------------------------------------------------------------------
# Template rendering
# ---------------------------------------------------------------------------

def test_substitution():
    ctx = {"project_id": "proj-a", "nonce": "1f2e3d4c"}
    out = render_text("name: bucket-{{ project_id }}-{{ nonce }}", ctx)
    assert out == "name: bucket-proj-a-1f2e3d4c"


def test_spacing_variants():
    ctx = {"k": "v"}
    assert render_text("{{k}} {{ k }} {{  k  }}", ctx) == "v v v"


def test_unknown_placeholder_names_the_key():
    with pytest.raises(errors.UnknownPlaceholder) as err:
        render_text("x: {{ missing }}", {"present": "1"})
    assert err.value.key == "missing"


def test_malformed_leftover_braces_rejected():
    with pytest.raises(errors.ValidationError):
        render_text("x: {{ 9bad }}", {})


def test_render_template_parses_yaml():
    text = """
resources:
  - name: b
    type: storage.bucket
    properties: {name: "b-{{ nonce }}"}
"""
    config = render_template(text, TemplateContext("proj-a", "abcd1234"))
    assert config.resources[0].properties["name"] == "b-abcd1234"


def test_yaml_parse_error():
    with pytest.raises(errors.YamlParseError):
        parse_config("resources:\n  - {name: x, type: [unclosed")


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

def _decl(name, rtype="storage.bucket", deps=None, props=None):
    return {
        "name": name,
        "type": rtype,
        "properties": props or {"name": name},
        "depends_on": deps or [],
    }


def test_duplicate_names_rejected():
    with pytest.raises(errors.ValidationError):
        parse_config(json.dumps({"resources": [_decl("a"), _decl("a")]}))


def test_unknown_type_rejected():
    with pytest.raises(errors.ValidationError):
        parse_config(json.dumps({"resources": [_decl("a", rtype="quantum.qubit")]}))


def test_undeclared_dependency_rejected():
    with pytest.raises(errors.ValidationError):
        parse_config(json.dumps({"resources": [_decl("a", deps=["ghost"])]}))


def test_cycle_rejected():
    doc = {"resources": [_decl("a", deps=["b"]), _decl("b", deps=["a"])]}
    with pytest.raises(errors.ValidationError) as err:
        parse_config(json.dumps(doc))
    assert "cycle" in str(err.value)


def test_topological_order_stable():
    doc = {
        "resources": [
            _decl("c", deps=["a", "b"]),
            _decl("b", deps=["a"]),
            _decl("a"),
            _decl("d"),
        ]
    }
    config = parse_config(json.dumps(doc))
    assert [r.name for r in config.ordered()] == ["a", "d", "b", "c"]


# ---------------------------------------------------------------------------
# a1 fixture shape (derived from the shipped template)
# ---------------------------------------------------------------------------

def test_a1_template_renders_to_bucket_object_binding(registry):
    level = registry.get("thunder/a1openbucket")
    config = render_template(
        level.config_template, TemplateContext("proj-a", "1f2e3d4c", level.ref)
    )
    types = sorted(r.type for r in config.resources)
    assert types == ["iam.binding", "storage.bucket", "storage.object"]
    assert len(config.resources) == 3


# ---------------------------------------------------------------------------
# Deploy / destroy
# ---------------------------------------------------------------------------

SIMPLE = {
    "resources": [
        {"name": "b", "type": "storage.bucket", "properties": {"name": "dep-bucket"}},
        {
            "name": "o",
            "type": "storage.object",
            "depends_on": ["b"],
            "properties": {"bucket": "dep-bucket", "name": "x.txt", "content": "hello"},
        },
        {
            "name": "grant",
            "type": "iam.binding",
            "properties": {"role": "roles/storage.objectViewer", "members": ["allUsers"]},
        },
    ]
}


def test_deploy_creates_in_order_and_destroy_reverses(emu):
    before = snap(emu)
    record = deploy.deploy(emu, PROJECT, parse_config(json.dumps(SIMPLE)))
    assert [h.kind for h in record.handles] == ["bucket", "object", "binding"]
    assert services.object_get(emu, None, "dep-bucket", "x.txt") == b"hello"
    deploy.destroy(emu, record)
    assert snap(emu) == before
    assert record.status == "destroyed"


def test_second_deploy_rejected_while_active(emu):
    deploy.deploy(emu, PROJECT, parse_config(json.dumps(SIMPLE)))
    with pytest.raises(errors.ActiveDeploymentExists):
        deploy.deploy(emu, PROJECT, parse_config(json.dumps(SIMPLE)))


def test_destroy_twice_not_active(emu):
    record = deploy.deploy(emu, PROJECT, parse_config(json.dumps(SIMPLE)))
    deploy.destroy(emu, record)
    with pytest.raises(errors.NotActive):
        deploy.destroy(emu, record)
    with pytest.raises(errors.NotActive):
        deploy.destroy(emu)


def test_destroy_survives_partial_manual_deletion(emu):
    record = deploy.deploy(emu, PROJECT, parse_config(json.dumps(SIMPLE)))
    services.delete_bucket(emu, PROJECT, "dep-bucket")  # someone nuked it by hand
    deploy.destroy(emu, record)
    assert emu.active_deployment is None


def test_instance_auto_provisions_service_account(emu):
    doc = {
        "resources": [
            {
                "name": "vm",
                "type": "compute.instance",
                "properties": {"name": "auto-vm", "service_account": "fresh-sa"},
            }
        ]
    }
    before = snap(emu)
    record = deploy.deploy(emu, PROJECT, parse_config(json.dumps(doc)))
    assert f"fresh-sa@{PROJECT}.iam.emucloud" in emu.project(PROJECT).accounts
    assert [h.kind for h in record.handles] == ["service_account", "instance"]
    deploy.destroy(emu, record)
    assert snap(emu) == before


def test_binding_destroy_removes_only_added_members(emu):
    emu.grant(PROJECT, "roles/storage.objectViewer", ["keep@x.iam.emucloud"])
    doc = {
        "resources": [
            {
                "name": "g",
                "type": "iam.binding",
                "properties": {
                    "role": "roles/storage.objectViewer",
                    "members": ["keep@x.iam.emucloud", "new@x.iam.emucloud"],
                },
            }
        ]
    }
    record = deploy.deploy(emu, PROJECT, parse_config(json.dumps(doc)))
    deploy.destroy(emu, record)
    members = emu.project(PROJECT).policy.bindings["roles/storage.objectViewer"]
    assert members == {"keep@x.iam.emucloud"}


def test_unknown_role_in_binding_fails_deploy_cleanly(emu):
    before = snap(emu)
    doc = {
        "resources": [
            {"name": "b", "type": "storage.bucket", "properties": {"name": "will-rollback"}},
            {
                "name": "g",
                "type": "iam.binding",
                "properties": {"role": "roles/no.such.role", "members": ["allUsers"]},
            },
        ]
    }
    with pytest.raises(errors.ResourceCreateError):
        deploy.deploy(emu, PROJECT, parse_config(json.dumps(doc)))
    assert snap(emu) == before
    assert emu.active_deployment is None


# ---------------------------------------------------------------------------
# Rollback totality over every shipped level at every index
# ---------------------------------------------------------------------------

def test_fault_injection_rolls_back_every_shipped_level(emu, registry):
    for namespace, name in registry.list():
        level = registry.get(f"{namespace}/{name}")
        ctx = levels.build_context(level, PROJECT)
        config = render_template(level.config_template, ctx)
        before = snap(emu)
        for index in range(len(config.resources)):
            with pytest.raises(errors.ResourceCreateError):
                deploy.deploy(emu, PROJECT, config, fail_before_index=index)
            assert snap(emu) == before, f"{level.ref} rollback at index {index}"
            assert emu.active_deployment is None


def test_observed_creation_order_is_topological_for_shipped_levels(registry):
    for namespace, name in registry.list():
        level = registry.get(f"{namespace}/{name}")
        ctx = levels.build_context(level, PROJECT)
        config = render_template(level.config_template, ctx)
        order = [r.name for r in config.ordered()]
        position = {n: i for i, n in enumerate(order)}
        for decl in config.resources:
            for dep in decl.depends_on:
                assert position[dep] < position[decl.name], f"{level.ref}: {dep} after {decl.name}"


def test_nonce_freshness_consecutive_creates_disjoint(emu, registry):
    level = registry.get("thunder/a1openbucket")
    names = set()
    for _ in range(2):
        info_ctx = levels.build_context(level, PROJECT)
        config = render_template(level.config_template, info_ctx)
        record = deploy.deploy(emu, PROJECT, config, context=info_ctx)
        created = {
            h.data["name"] for h in record.handles if h.kind == "bucket"
        }
        assert not (created & names)
        names |= created
        deploy.destroy(emu, record)
