from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

from igtsim.cli import main


class CampaignRuns:
    """Runs bundled scenarios through the CLI once per (name, seed, copy) and caches the output."""

    def __init__(self, factory: pytest.TempPathFactory):
        self.factory = factory
        self.cache: dict[tuple, Path] = {}
        self.wall: dict[tuple, float] = {}

    def __call__(self, name: str, seed: int | None = None, copy: int = 0) -> Path:
        key = (name, seed, copy)
        if key not in self.cache:
            out = self.factory.mktemp(f"{name}-{seed}-{copy}")
            argv = ["run", name, "--out", str(out)]
            if seed is not None:
                argv += ["--seed", str(seed)]
            t0 = time.perf_counter()
            assert main(argv) == 0
            self.wall[key] = time.perf_counter() - t0
            self.cache[key] = out
        return self.cache[key]

    def summary(self, name: str, seed: int | None = None) -> dict:
        return json.loads((self(name, seed) / "summary.json").read_text())


@pytest.fixture(scope="session")
def campaigns(tmp_path_factory) -> CampaignRuns:
    return CampaignRuns(tmp_path_factory)


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion's pass/fail line, echo it, and assert on it."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
