import json
import sys
import textwrap

import numpy as np
import pytest

from obfair.imgops import ImageBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, w, h, channels=3) -> ImageBuffer:
    return ImageBuffer.from_array(rng.integers(0, 256, (h, w, channels), dtype=np.uint8))


FAKE_PLUGIN = """
import json, sys, time
SCRIPT = json.loads({script!r})
ops = {ops!r}
i = 0
for line in sys.stdin:
    req = json.loads(line)
    if req.get("op") == "hello":
        print(json.dumps({{"ok": True, "ops": ops}}), flush=True)
        continue
    reply = SCRIPT[min(i, len(SCRIPT) - 1)]
    i += 1
    if reply == "CRASH":
        sys.exit(3)
    if reply == "HANG":
        time.sleep(60)
    if reply == "GARBAGE":
        print("not json", flush=True)
        continue
    print(json.dumps(reply), flush=True)
"""


@pytest.fixture
def fake_plugin(tmp_path):
    """Command line for a plugin that answers requests with canned replies, in order."""

    def make(replies, ops=("detect", "embed")):
        path = tmp_path / f"plugin_{abs(hash(repr(replies)))}.py"
        path.write_text(textwrap.dedent(FAKE_PLUGIN.format(script=json.dumps(list(replies)), ops=list(ops))))
        return [sys.executable, str(path)]

    return make


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
