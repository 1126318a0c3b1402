from __future__ import annotations

import json
from dataclasses import dataclass

import pytest

from thunderctf import levels as levels_mod
from thunderctf.api import Router
from thunderctf.clock import ManualClock
from thunderctf.core import Emulator
from thunderctf.server import EmuCloudServer

PROJECT = "proj-alpha1"


@pytest.fixture
def clock() -> ManualClock:
    return ManualClock()


@pytest.fixture
def emu(clock) -> Emulator:
    e = Emulator(clock=clock)
    e.create_project(PROJECT, "Alpha")
    return e


@pytest.fixture(scope="session")
def registry() -> levels_mod.LevelRegistry:
    reg = levels_mod.LevelRegistry()
    levels_mod.load_shipped(reg)
    return reg


@pytest.fixture
def router(emu, registry) -> Router:
    return Router(emu, registry, default_project_id=PROJECT)


@dataclass
class Live:
    emu: Emulator
    registry: levels_mod.LevelRegistry
    router: Router
    server: EmuCloudServer

    @property
    def address(self) -> str:
        return self.server.address


def _start_live(registry, monkeypatch, tmp_path, hardening="default") -> Live:
    emu = Emulator(metadata_hardening=hardening)
    emu.create_project(PROJECT, "Alpha")
    router = Router(emu, registry, default_project_id=PROJECT)
    server = EmuCloudServer(router, host="127.0.0.1", port=0)
    server.start_background()
    home = tmp_path / "thunder-home"
    home.mkdir(parents=True, exist_ok=True)
    monkeypatch.setenv("THUNDER_HOME", str(home))
    monkeypatch.setenv("EMUCLOUD_ADDR", server.address)
    return Live(emu=emu, registry=registry, router=router, server=server)


@pytest.fixture
def live(registry, monkeypatch, tmp_path) -> Live:
    """Real HTTP server on an ephemeral port, with THUNDER_HOME isolated."""
    lv = _start_live(registry, monkeypatch, tmp_path)
    yield lv
    lv.server.shutdown()


@pytest.fixture
def live_strict(registry, monkeypatch, tmp_path) -> Live:
    lv = _start_live(registry, monkeypatch, tmp_path, hardening="strict-header")
    yield lv
    lv.server.shutdown()


class CliRunner:
    """Runs the thunder CLI in-process and captures its stdout."""

    def __init__(self, capsys):
        self.capsys = capsys

    def run(self, *argv: str, expect: int | None = 0) -> str:
        from thunderctf.cli import main

        self.capsys.readouterr()  # drop anything pending
        code = main(list(argv))
        out = self.capsys.readouterr().out
        if expect is not None:
            assert code == expect, f"thunder {' '.join(argv)} exited {code}:\n{out}"
        return out

    def json(self, *argv: str, expect: int | None = 0) -> dict:
        out = self.run("--json", *argv, expect=expect)
        return json.loads(out)


@pytest.fixture
def cli(live, capsys) -> CliRunner:
    return CliRunner(capsys)


@pytest.fixture
def cli_strict(live_strict, capsys) -> CliRunner:
    return CliRunner(capsys)
