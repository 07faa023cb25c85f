"""Line-delimited JSON client for external detector / embedder processes.

Wire format, one JSON object per line on the plugin's stdin/stdout:

    -> {"op": "hello", "version": 1}
    <- {"ok": true, "ops": ["detect", "embed"]}
    -> {"op": "detect", "image": "<base64 PNG>"}
    <- {"boxes": [{"x": 0, "y": 0, "w": 10, "h": 10}]}   or   {"error": "..."}

Responses arrive in request order. A client is not thread-safe; give each
worker its own.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import subprocess
import threading
from collections import deque
from typing import Sequence

from .errors import PluginProtocolError, PluginTransportError
from .imgops import ImageBuffer, encode_png

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0

_EOF = object()


def image_to_b64(img: ImageBuffer) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


class PluginClient:
    def __init__(self, command: Sequence[str], timeout: float = DEFAULT_TIMEOUT):
        self.command = list(command)
        self.timeout = timeout
        self.ops: list[str] = []
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._stderr: deque[str] = deque(maxlen=20)

    def start(self) -> "PluginClient":
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise PluginTransportError(f"cannot start plugin {self.command}: {exc}") from exc
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        reply = self.request({"op": "hello", "version": PROTOCOL_VERSION})
        if reply.get("ok") is not True or not isinstance(reply.get("ops"), list):
            self.close()
            raise PluginProtocolError(f"bad handshake reply: {reply!r}")
        self.ops = [str(op) for op in reply["ops"]]
        return self

    def _pump_stdout(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            if line.strip():
                self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self) -> None:
        assert self._proc is not None and self._proc.stderr is not None
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip())

    def _stderr_tail(self) -> str:
        return " | ".join(self._stderr) or "<no stderr>"

    def request(self, payload: dict) -> dict:
        if self._proc is None:
            raise PluginTransportError("plugin not started")
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise PluginTransportError(f"plugin stdin closed: {exc}; stderr: {self._stderr_tail()}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise PluginTransportError(f"plugin timed out after {self.timeout}s on op {payload.get('op')!r}")
        if line is _EOF:
            code = self._proc.poll()
            raise PluginTransportError(f"plugin exited (code {code}); stderr: {self._stderr_tail()}")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PluginProtocolError(f"plugin sent invalid JSON: {line[:200]!r}") from exc
        if not isinstance(reply, dict):
            raise PluginProtocolError(f"plugin reply is not an object: {reply!r}")
        if "error" in reply:
            raise PluginProtocolError(f"plugin reported error: {reply['error']}")
        return reply

    def require(self, op: str) -> None:
        if op not in self.ops:
            raise PluginProtocolError(f"plugin does not advertise {op!r} (ops: {self.ops})")

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "PluginClient":
        if self._proc is None:
            self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()
