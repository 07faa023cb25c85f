import sys

import numpy as np
import pytest

from obfair.embed import (
    ENCODING_DIM,
    Encoding,
    PluginEmbedder,
    SyntheticEmbedder,
    SyntheticEmbedderConfig,
    identity_centroid,
    synthetic_embed,
    subprocess_embed,
)
from obfair.errors import PluginProtocolError
from obfair.imgops import FaceBox
from obfair.plugin import PluginClient

from .conftest import random_image


class TestEncoding:
    def test_wrong_length(self):
        with pytest.raises(ValueError):
            Encoding("a", np.zeros(127))

    def test_non_finite(self):
        v = np.zeros(ENCODING_DIM)
        v[3] = np.inf
        with pytest.raises(ValueError):
            Encoding("a", v)

    def test_read_only(self):
        e = Encoding("a", np.zeros(ENCODING_DIM))
        with pytest.raises(ValueError):
            e.vector[0] = 1.0


class TestSynthetic:
    def test_zero_noise_gives_centroid(self):
        cfg = SyntheticEmbedderConfig(seed=7, noise_scale=0.0)
        e = synthetic_embed(cfg, "id1", "img1", "White Male", is_obfuscated=False)
        np.testing.assert_array_equal(e.vector, identity_centroid(cfg, "id1"))

    def test_deterministic_across_calls(self):
        cfg = SyntheticEmbedderConfig(seed=3, obfuscation_noise={"White": 1.5})
        a = synthetic_embed(cfg, "id1", "img1", "White", True)
        b = synthetic_embed(cfg, "id1", "img1", "White", True)
        assert a.vector.tobytes() == b.vector.tobytes()

    def test_seed_and_ids_matter(self):
        base = SyntheticEmbedderConfig(seed=1)
        v = synthetic_embed(base, "id1", "img1", "x", False).vector
        assert not np.allclose(v, synthetic_embed(SyntheticEmbedderConfig(seed=2), "id1", "img1", "x", False).vector)
        assert not np.allclose(v, synthetic_embed(base, "id2", "img1", "x", False).vector)
        assert not np.allclose(v, synthetic_embed(base, "id1", "img2", "x", False).vector)

    def test_centroid_scale(self):
        cfg = SyntheticEmbedderConfig(seed=0, identity_scale=3.0)
        norms = [np.linalg.norm(identity_centroid(cfg, f"id{i}")) for i in range(200)]
        # E||N(0, s^2 I_128)|| is about s * sqrt(128)
        assert np.mean(norms) == pytest.approx(3.0 * np.sqrt(ENCODING_DIM), rel=0.02)

    def test_noise_for_first_match_wins(self):
        cfg = SyntheticEmbedderConfig(seed=0, obfuscation_noise={"White": 1.0, "White Female": 2.0, "Female": 3.0})
        assert cfg.noise_for(("White Female", "White", "Female")) == 2.0
        assert cfg.noise_for(("White Male", "White", "Male")) == 1.0
        assert cfg.noise_for(("Non-White Female", "Non-White", "Female")) == 3.0
        assert cfg.noise_for(("Non-White Male", "Non-White", "Male")) == 0.0

    def test_zero_obfuscation_noise_matches_clean(self):
        cfg = SyntheticEmbedderConfig(seed=2, obfuscation_noise={"White": 0.0})
        for groups in (("White",), ("Male",)):
            clean = synthetic_embed(cfg, "i", "m", groups, False).vector
            np.testing.assert_array_equal(synthetic_embed(cfg, "i", "m", groups, True).vector, clean)

    def test_unobfuscated_ignores_group_noise(self):
        cfg = SyntheticEmbedderConfig(seed=0, obfuscation_noise={"B": 5.0})
        a = synthetic_embed(cfg, "i", "m", "B", False).vector
        b = synthetic_embed(SyntheticEmbedderConfig(seed=0), "i", "m", "B", False).vector
        np.testing.assert_array_equal(a, b)

    def test_group_noise_moves_encodings_further(self):
        cfg = SyntheticEmbedderConfig(seed=11, obfuscation_noise={"A": 0.0, "B": 5.0})
        dist = {"A": [], "B": []}
        for g in dist:
            for i in range(1000):
                ident = f"{g}{i % 20}"
                e = synthetic_embed(cfg, ident, f"{g}img{i}", g, True)
                dist[g].append(np.linalg.norm(e.vector - identity_centroid(cfg, ident)))
        assert np.mean(dist["B"]) > np.mean(dist["A"])
        # about sqrt(128 * (0.25^2 + 5^2)) vs sqrt(128) * 0.25
        assert np.mean(dist["B"]) == pytest.approx(np.sqrt(128 * 25.0625), rel=0.02)
        assert np.mean(dist["A"]) == pytest.approx(0.25 * np.sqrt(128), rel=0.02)

    @pytest.mark.parametrize("kw", [{"identity_scale": 0}, {"noise_scale": -1}, {"obfuscation_noise": {"A": float("nan")}}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SyntheticEmbedderConfig(seed=0, **kw)

    def test_embedder_wrapper(self):
        cfg = SyntheticEmbedderConfig(seed=5)
        emb = SyntheticEmbedder(cfg)
        assert not emb.needs_pixels
        e = emb.embed(None, None, image_id="m", identity_id="i", groups=("White",), obfuscated=False)
        np.testing.assert_array_equal(e.vector, synthetic_embed(cfg, "i", "m", "White", False).vector)


class TestSubprocess:
    box = FaceBox(0, 0, 8, 8)

    def test_valid_encoding(self, fake_plugin, rng):
        vec = [float(i) / 10 for i in range(ENCODING_DIM)]
        with PluginClient(fake_plugin([{"encoding": vec}])) as client:
            e = subprocess_embed(client, random_image(rng, 8, 8), self.box, "m")
        assert e.image_id == "m" and e.vector.tolist() == vec

    @pytest.mark.parametrize(
        "reply",
        [
            {"encoding": [0.0] * 127},
            {"encoding": [0.0] * 127 + [float("nan")]},
            {"encoding": [0.0] * 127 + ["x"]},
            {"vector": [0.0] * 128},
        ],
        ids=["short", "nan", "non-number", "missing-key"],
    )
    def test_bad_encoding(self, fake_plugin, rng, reply):
        with PluginClient(fake_plugin([reply])) as client:
            with pytest.raises(PluginProtocolError):
                subprocess_embed(client, random_image(rng, 8, 8), self.box, "m")

    def test_requires_embed_capability(self, fake_plugin):
        with PluginClient(fake_plugin([], ops=["detect"])) as client:
            with pytest.raises(PluginProtocolError):
                PluginEmbedder(client)

    def test_reference_plugin(self, rng):
        img = random_image(rng, 40, 30)
        box = FaceBox(5, 5, 20, 16)
        with PluginClient([sys.executable, "-m", "obfair.plugins.reference"]) as client:
            emb = PluginEmbedder(client)
            e = emb.embed(img, box, image_id="m", identity_id="i", groups=(), obfuscated=False)
        from obfair.plugins.reference import embed_pixels

        assert e.vector.tolist() == embed_pixels(img, box)
        assert np.all((0 <= e.vector) & (e.vector <= 1))
