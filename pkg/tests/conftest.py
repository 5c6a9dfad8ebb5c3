"""Shared fixtures: synthetic songs, mock pipelines, fault-injection wrappers."""

import time
from pathlib import Path

import pytest

from reelforge.config import PipelineConfig
from reelforge.generation import BackendError, BackendRequest, BackendResponse
from reelforge.pipeline import Pipeline, mock_components
from reelforge.synth import load_song_metadata, make_context, write_fixture

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_FIXTURE = REPO_ROOT / "fixtures" / "demo_song"

NO_SLEEP = lambda _s: None  # noqa: E731  (retry backoff shortcut for tests)


@pytest.fixture(scope="session")
def demo_fixture() -> Path:
    assert DEMO_FIXTURE.exists(), "checked-in demo fixture missing"
    return DEMO_FIXTURE


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory) -> Path:
    """A short synthetic song, cheap enough for per-test pipeline runs."""
    fixture = tmp_path_factory.mktemp("fixture") / "song"
    write_fixture(fixture, make_context(5, min_seconds=60, max_seconds=90), messy_seed=5)
    return fixture


@pytest.fixture
def make_pipeline(tmp_path):
    """Factory building a mock-mode pipeline in a fresh workdir."""

    counter = {"n": 0}

    def build(fixture: Path, config: PipelineConfig | None = None, workdir: Path | None = None) -> Pipeline:
        config = config or PipelineConfig(seed=5)
        if workdir is None:
            counter["n"] += 1
            workdir = tmp_path / f"work{counter['n']}"
        components = mock_components(workdir, config, fixture)
        return Pipeline(workdir, config, components, sleep=NO_SLEEP)

    return build


def run_pipeline(pipe: Pipeline, fixture: Path):
    return pipe.run(load_song_metadata(fixture))


class FailingImageBackend:
    """Delegates until the predicate matches, then rejects permanently."""

    def __init__(self, inner, should_fail):
        self.inner = inner
        self.should_fail = should_fail

    def capability(self):
        return self.inner.capability()

    def generate(self, request: BackendRequest) -> BackendResponse:
        if self.should_fail(request):
            raise BackendError("injected image failure")
        return self.inner.generate(request)


class FailingVideoBackend:
    def __init__(self, inner, should_fail):
        self.inner = inner
        self.should_fail = should_fail

    def capability(self):
        return self.inner.capability()

    def render(self, request: BackendRequest) -> BackendResponse:
        if self.should_fail(request):
            raise BackendError("injected video failure")
        return self.inner.render(request)


class SlowVideoBackend:
    """Real sleep per render, to hold generation open for conflict tests."""

    def __init__(self, inner, delay: float):
        self.inner = inner
        self.delay = delay

    def capability(self):
        return self.inner.capability()

    def render(self, request: BackendRequest) -> BackendResponse:
        time.sleep(self.delay)
        return self.inner.render(request)


class FlakyVideoBackend:
    """Raises a retriable error the first `failures` calls, then recovers."""

    def __init__(self, inner, failures: int):
        from reelforge.generation import RetriableBackendError

        self.inner = inner
        self.failures = failures
        self.calls = 0
        self._error = RetriableBackendError

    def capability(self):
        return self.inner.capability()

    def render(self, request: BackendRequest) -> BackendResponse:
        self.calls += 1
        if self.calls <= self.failures:
            raise self._error("transient backend hiccup")
        return self.inner.render(request)
