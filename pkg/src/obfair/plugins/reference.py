"""Reference plugin speaking the detector/embedder wire protocol.

detect: the gradient-energy oracle (threshold from argv[1], default 12).
embed:  the face box resized to 8x16 grey levels, scaled to [0, 1], as
        128 numbers. Crude, but pixel-dependent, so obfuscation matters.

Run as ``python -m obfair.plugins.reference [threshold]``.
"""

import base64
import json
import sys

import numpy as np

from obfair.detect import OracleDetectorConfig, luma, oracle_detect
from obfair.imgops import FaceBox, ImageBuffer, decode_image


def embed_pixels(img: ImageBuffer, box: FaceBox) -> list[float]:
    y = luma(img)[box.y : box.y + box.h, box.x : box.x + box.w]
    rows = np.linspace(0, box.h - 1, 16).round().astype(int)
    cols = np.linspace(0, box.w - 1, 8).round().astype(int)
    return (y[np.ix_(rows, cols)] / 255.0).ravel().tolist()


def handle(req: dict, cfg: OracleDetectorConfig) -> dict:
    op = req.get("op")
    if op == "hello":
        return {"ok": True, "ops": ["detect", "embed"]}
    if op not in ("detect", "embed"):
        return {"error": f"unsupported op {op!r}"}
    img = decode_image(base64.b64decode(req["image"]))
    if op == "detect":
        return {"boxes": [b.to_dict() for b in oracle_detect(cfg, img)]}
    return {"encoding": embed_pixels(img, FaceBox.from_dict(req["box"]))}


def main() -> None:
    cfg = OracleDetectorConfig(float(sys.argv[1]) if len(sys.argv) > 1 else 12.0)
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            reply = handle(json.loads(line), cfg)
        except Exception as exc:
            reply = {"error": f"{type(exc).__name__}: {exc}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
