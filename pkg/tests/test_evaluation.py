import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retimbre import data_toolkit, dsp, evaluation
from retimbre.dsp import AudioClip, MelFeatureConfig
from retimbre.errors import DataError
from retimbre.evaluation import (
    Embedder,
    EmbeddingStats,
    EvalReport,
    builtin_embedder,
    embed_stats,
    evaluate_directory,
    frechet_distance,
)

RATE = 16000


def _stub_embedder(fn, dim):
    return Embedder(name="stub", dim=dim, fn=fn)


def _noise_clip(seed, seconds=0.5, amp=0.3):
    r = np.random.default_rng(seed)
    return AudioClip(
        samples=(amp * r.standard_normal(int(seconds * RATE))).clip(-1, 1).astype(np.float32),
        sample_rate=RATE,
    )


class TestEmbedStats:
    def test_identical_clips_zero_covariance(self):
        emb = _stub_embedder(lambda c: np.array([1.0, 2.0]), 2)
        stats = embed_stats([_noise_clip(0)] * 3, emb)
        np.testing.assert_array_equal(stats.covariance, np.zeros((2, 2)))

    def test_two_scalar_embeddings(self):
        values = iter([0.0, 2.0])
        emb = _stub_embedder(lambda c: np.array([next(values)]), 1)
        stats = embed_stats([_noise_clip(0), _noise_clip(1)], emb)
        assert stats.mean[0] == pytest.approx(1.0)
        assert stats.covariance[0, 0] == pytest.approx(2.0)  # unbiased (n-1)

    def test_order_invariance(self):
        emb = builtin_embedder()
        clips = [_noise_clip(s) for s in range(4)]
        a = embed_stats(clips, emb)
        b = embed_stats(list(reversed(clips)), emb)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-12)

    def test_fewer_than_two_rejected(self):
        with pytest.raises(DataError):
            embed_stats([_noise_clip(0)], builtin_embedder())


class TestFrechetDistance:
    def test_identical_stats_zero(self, rng):
        x = rng.standard_normal((20, 5))
        stats = EmbeddingStats(mean=x.mean(0), covariance=np.cov(x, rowvar=False), n=20)
        assert frechet_distance(stats, stats) <= 1e-8

    def test_one_dimensional_closed_form(self):
        a = EmbeddingStats(mean=np.array([0.0]), covariance=np.array([[1.0]]), n=10)
        b = EmbeddingStats(mean=np.array([1.0]), covariance=np.array([[1.0]]), n=10)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_two_dimensional_diagonal_case(self):
        mu = np.zeros(2)
        a = EmbeddingStats(mean=mu, covariance=np.diag([1.0, 4.0]), n=10)
        b = EmbeddingStats(mean=mu, covariance=np.diag([4.0, 1.0]), n=10)
        # diagonal closed form: (1-2)^2 + (2-1)^2 = 2
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-10)

    def test_symmetry(self, rng):
        def rand_stats():
            x = rng.standard_normal((30, 6))
            return EmbeddingStats(mean=x.mean(0), covariance=np.cov(x, rowvar=False), n=30)

        a, b = rand_stats(), rand_stats()
        assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-9

    def test_nonnegative(self, rng):
        for _ in range(20):
            xa = rng.standard_normal((12, 4))
            xb = rng.standard_normal((12, 4)) + rng.standard_normal(4)
            a = EmbeddingStats(mean=xa.mean(0), covariance=np.cov(xa, rowvar=False), n=12)
            b = EmbeddingStats(mean=xb.mean(0), covariance=np.cov(xb, rowvar=False), n=12)
            assert frechet_distance(a, b) >= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=8))
    def test_commuting_covariances_match_eigenvalue_form(self, seed, dim):
        # diagonal covariances commute; FD reduces to
        # ||dmu||^2 + sum_i (sqrt(la_i) - sqrt(lb_i))^2
        r = np.random.default_rng(seed)
        la = r.uniform(0.1, 5.0, dim)
        lb = r.uniform(0.1, 5.0, dim)
        mu_a, mu_b = r.standard_normal(dim), r.standard_normal(dim)
        a = EmbeddingStats(mean=mu_a, covariance=np.diag(la), n=5)
        b = EmbeddingStats(mean=mu_b, covariance=np.diag(lb), n=5)
        closed = float(((mu_a - mu_b) ** 2).sum() + ((np.sqrt(la) - np.sqrt(lb)) ** 2).sum())
        assert frechet_distance(a, b) == pytest.approx(closed, abs=1e-8)

    def test_dimension_mismatch_rejected(self):
        a = EmbeddingStats(mean=np.zeros(2), covariance=np.eye(2), n=5)
        b = EmbeddingStats(mean=np.zeros(3), covariance=np.eye(3), n=5)
        with pytest.raises(DataError):
            frechet_distance(a, b)


class TestBuiltinEmbedder:
    def test_dimension_384(self):
        emb = builtin_embedder()
        assert emb.dim == 384
        vec = emb.embed(_noise_clip(0, seconds=1.5))
        assert vec.shape == (384,)

    def test_zero_clip_finite(self):
        emb = builtin_embedder()
        clip = AudioClip(samples=np.zeros(RATE, dtype=np.float32), sample_rate=RATE)
        vec = emb.embed(clip)
        assert np.all(np.isfinite(vec))

    def test_too_short_clip_rejected(self):
        emb = builtin_embedder()
        with pytest.raises(DataError):
            emb.embed(AudioClip(samples=np.zeros(10, dtype=np.float32), sample_rate=RATE))

    def test_shifted_copy_closer_than_other_instrument(self):
        # stationary long tone: shifted copy stays near itself in embedding
        # space, far from a different harmonic profile at the same pitch
        t = np.arange(4 * RATE) / RATE

        def tone(harmonics):
            x = sum(a * np.sin(2 * np.pi * k * 330.0 * t) for k, a in enumerate(harmonics, 1))
            return (0.5 * x / np.max(np.abs(x))).astype(np.float32)

        reed = tone(data_toolkit.REED.harmonics)
        bow = tone(data_toolkit.BOW.harmonics)
        emb = builtin_embedder()
        shift = int(0.3 * RATE)
        e_reed = emb.embed(AudioClip(samples=reed, sample_rate=RATE))
        e_shift = emb.embed(AudioClip(samples=np.roll(reed, shift), sample_rate=RATE))
        e_bow = emb.embed(AudioClip(samples=bow, sample_rate=RATE))
        assert np.linalg.norm(e_reed - e_shift) < 0.25 * np.linalg.norm(e_reed - e_bow)

    def test_deterministic(self):
        emb = builtin_embedder()
        clip = _noise_clip(5, seconds=2.3)
        np.testing.assert_array_equal(emb.embed(clip), emb.embed(clip))

    def test_required_rate_resampling(self):
        inner = builtin_embedder()
        emb = Embedder(name="rate-pinned", dim=inner.dim, fn=inner.fn, required_rate=8000)
        clip = _noise_clip(1, seconds=1.0)
        vec = emb.embed(clip)  # resampled internally, must not raise
        assert vec.shape == (inner.dim,)


class TestEvaluateDirectory:
    def _write_set(self, directory, seeds):
        directory.mkdir(parents=True, exist_ok=True)
        for s in seeds:
            dsp.write_wav(directory / f"clip_{s}.wav", _noise_clip(s, seconds=0.6))

    def test_same_directory_scores_near_zero(self, tmp_path):
        gen = tmp_path / "gen"
        self._write_set(gen, range(4))
        report = evaluate_directory(gen, gen)
        assert report.fad_like_score <= 1e-6
        assert report.n_gen == report.n_ref == 4

    def test_unreadable_file_listed_and_skipped(self, tmp_path):
        gen = tmp_path / "gen"
        ref = tmp_path / "ref"
        self._write_set(gen, range(3))
        self._write_set(ref, range(3, 6))
        (gen / "broken.wav").write_bytes(b"garbage")
        report = evaluate_directory(gen, ref)
        assert report.n_gen == 3
        assert any("broken" in s for s in report.skipped_files)

    def test_too_few_clips_rejected(self, tmp_path):
        gen = tmp_path / "gen"
        ref = tmp_path / "ref"
        self._write_set(gen, [0])
        self._write_set(ref, range(2))
        with pytest.raises(DataError):
            evaluate_directory(gen, ref)

    def test_report_roundtrip(self, tmp_path):
        gen = tmp_path / "gen"
        self._write_set(gen, range(3))
        report = evaluate_directory(gen, gen)
        back = EvalReport.from_json(report.to_json())
        assert back == report
        doc = json.loads(report.to_json())
        assert {"fad_like_score", "n_gen", "n_ref", "embedder_name"} <= set(doc)
        # reserved slots for externally computed metrics
        assert doc["visqol"] is None and doc["peaq_odg"] is None and doc["peaq_di"] is None


class TestStatsValidation:
    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(Exception):
            EmbeddingStats(mean=np.zeros(2), covariance=cov, n=5)

    def test_min_count(self):
        with pytest.raises(DataError):
            EmbeddingStats(mean=np.zeros(2), covariance=np.eye(2), n=1)
