"""Shared fixtures: synthetic scenes, scene files, and a local HTTP stub."""

from __future__ import annotations

import http.server
import json
import threading
from contextlib import contextmanager
from pathlib import Path

import pytest

from visionflow.core import ImageRef, SceneShape, SceneSpec, save_scene


@pytest.fixture
def dog_scene() -> SceneSpec:
    return SceneSpec(
        width=64,
        height=64,
        shapes=(
            SceneShape("dogs", "rect", 10, 10, 20, 20),
            SceneShape("dogs", "ellipse", 40, 30, 12, 18),
        ),
    )


@pytest.fixture
def lemon_scene() -> SceneSpec:
    return SceneSpec(
        width=48,
        height=48,
        shapes=(
            SceneShape("lemons", "ellipse", 5, 5, 10, 10),
            SceneShape("lemons", "rect", 20, 20, 8, 8),
            SceneShape("lemons", "rect", 33, 33, 9, 9),
        ),
    )


def write_scene(scene: SceneSpec, path: Path, index: int = 0) -> ImageRef:
    save_scene(scene, path)
    return ImageRef(
        id=f"img-{index}-{path.stem}", width=scene.width, height=scene.height, uri=str(path)
    )


@pytest.fixture
def scene_ref(tmp_path, dog_scene) -> ImageRef:
    return write_scene(dog_scene, tmp_path / "dogs.json")


class _StubHandler(http.server.BaseHTTPRequestHandler):
    server_version = "stub"

    def do_POST(self):  # noqa: N802 (http.server naming)
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        self.server.requests.append((self.path, body))
        status, payload, delay = self.server.script(self.path, body)
        if delay:
            import time

            time.sleep(delay)
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@contextmanager
def http_stub(script):
    """Spin a local HTTP server whose replies come from ``script(path, body)``.

    ``script`` returns (status, payload, delay_seconds). Captured requests are
    available on the yielded server as ``.requests``.
    """
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.script = script
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server, f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        server.server_close()
