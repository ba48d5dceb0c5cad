"""Attention operator, codecs, guidance, and built-in denoiser tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texsync import ConfigError
from texsync.denoise import (
    ConsensusToyDenoiser,
    DenoiseRequest,
    DownscaleCodec,
    IdentityCodec,
    TargetDenoiser,
    ViewGraph,
    apply_guidance,
    guidance_schedule,
    related_view_attention,
)
from texsync.schedule import NoiseSchedule

from oracles import attention_reference


def rand_views(rng, n, tokens, dim):
    return [rng.normal(size=(tokens, dim)) for _ in range(n)]


class TestRelatedViewAttention:
    def test_self_only_equals_standard_self_attention(self):
        rng = np.random.default_rng(0)
        q, k, v = (rand_views(rng, 1, 5, 4) for _ in range(3))
        graph = ViewGraph(1, ((0,),))
        out = related_view_attention(q, k, v, graph)[0]
        logits = q[0] @ k[0].T / np.sqrt(4)
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        expected = (e / e.sum(axis=-1, keepdims=True)) @ v[0]
        assert np.allclose(out, expected, atol=1e-12)

    def test_equal_keys_average_all_values(self):
        rng = np.random.default_rng(1)
        n, tokens, dim = 3, 4, 3
        k = [np.ones((tokens, dim))] * n
        q = rand_views(rng, n, tokens, dim)
        v = rand_views(rng, n, tokens, dim)
        graph = ViewGraph.complete(n)
        out = related_view_attention(q, k, v, graph)
        mean_v = np.concatenate(v, axis=0).mean(axis=0)
        for o in out:
            assert np.allclose(o, mean_v[None, :].repeat(tokens, 0), atol=1e-12)

    def test_matches_brute_force_on_ring(self):
        rng = np.random.default_rng(2)
        q, k, v = (rand_views(rng, 3, 2, 2) for _ in range(3))
        graph = ViewGraph.ring(3)
        out = related_view_attention(q, k, v, graph)
        ref = attention_reference(q, k, v, graph.related)
        for a, b in zip(out, ref):
            assert np.allclose(a, b, atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(1, 4),
        tokens=st.integers(1, 6),
        dim=st.integers(1, 8),
        seed=st.integers(0, 2**31),
    )
    def test_matches_brute_force_random(self, n, tokens, dim, seed):
        rng = np.random.default_rng(seed)
        q, k, v = (rand_views(rng, n, tokens, dim) for _ in range(3))
        graph = ViewGraph.complete(n)
        out = related_view_attention(q, k, v, graph)
        ref = attention_reference(q, k, v, graph.related)
        for a, b in zip(out, ref):
            assert np.allclose(a, b, atol=1e-9)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        q, k, _ = (rand_views(rng, 2, 4, 3) for _ in range(3))
        graph = ViewGraph.ring(2)
        ones = [np.ones((4, 3))] * 2
        out = related_view_attention(q, k, ones, graph)
        for o in out:
            assert np.allclose(o, 1.0, atol=1e-6)

    def test_key_order_invariance(self):
        rng = np.random.default_rng(4)
        q, k, v = (rand_views(rng, 3, 4, 5) for _ in range(3))
        fwd = ViewGraph(3, ((0, 1, 2), (1, 2, 0), (2, 0, 1)))
        rev = ViewGraph(3, ((2, 1, 0), (0, 2, 1), (1, 0, 2)))
        a = related_view_attention(q, k, v, fwd)
        b = related_view_attention(q, k, v, rev)
        for x, y in zip(a, b):
            assert np.allclose(x, y, atol=1e-12)

    def test_batched_leading_axis(self):
        rng = np.random.default_rng(5)
        q = [rng.normal(size=(7, 2, 3)) for _ in range(2)]
        graph = ViewGraph.complete(2)
        out = related_view_attention(q, q, q, graph)
        for b in range(7):
            single = related_view_attention(
                [a[b] for a in q], [a[b] for a in q], [a[b] for a in q], graph
            )
            for n in range(2):
                assert np.allclose(out[n][b], single[n], atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        graph = ViewGraph.complete(2)
        q = [np.zeros((2, 3)), np.zeros((2, 4))]
        with pytest.raises(ConfigError):
            related_view_attention(q, q, q, graph)


class TestViewGraph:
    def test_ring_includes_self_and_neighbors(self):
        g = ViewGraph.ring(6)
        assert g.related[0] == (5, 0, 1)
        assert g.related[3] == (2, 3, 4)

    def test_ring_small_n_deduplicates(self):
        assert ViewGraph.ring(1).related == ((0,),)
        assert ViewGraph.ring(2).related == ((1, 0), (0, 1))

    def test_complete(self):
        g = ViewGraph.complete(3)
        assert all(ids == (0, 1, 2) for ids in g.related)

    def test_invalid_ids_rejected(self):
        with pytest.raises(ConfigError):
            ViewGraph(2, ((0,), (5,)))


class TestCodecs:
    def test_identity_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, size=(16, 12, 3)).astype(np.float32)
        codec = IdentityCodec()
        assert np.array_equal(codec.decode(codec.encode(img)), img)

    def test_downscale_constant_recovered_exactly(self):
        codec = DownscaleCodec(2)
        img = np.full((8, 8, 3), 0.25, dtype=np.float32)
        out = codec.decode(codec.encode(img))
        assert out.shape == img.shape
        assert np.allclose(out, img, atol=1e-7)

    def test_downscale_checkerboard_period_two_becomes_gray(self):
        codec = DownscaleCodec(2)
        ij = np.add.outer(np.arange(8), np.arange(8))
        img = ((ij % 2).astype(np.float32))[:, :, None].repeat(3, 2)
        latent = codec.encode(img)
        assert np.allclose(latent, 0.5, atol=1e-7)  # box filter of the 2x2 tile
        assert np.allclose(codec.decode(latent), 0.5, atol=1e-7)

    def test_indivisible_resolution_rejected(self):
        with pytest.raises(ConfigError):
            DownscaleCodec(2).encode(np.zeros((7, 8, 3), np.float32))


class TestGuidance:
    def test_schedule_endpoints(self):
        g = guidance_schedule(50)
        assert g[0] == 10.0
        assert g[-1] == 7.0
        assert np.all(np.diff(g) < 0)

    def test_degenerate_scale_one(self):
        rng = np.random.default_rng(1)
        e_un, e_c = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        assert np.array_equal(apply_guidance(e_un, e_c, 1.0), e_c)

    def test_blend_arithmetic(self):
        e_un = np.zeros((2, 2))
        e_c = np.ones((2, 2))
        assert np.allclose(apply_guidance(e_un, e_c, 7.5), 7.5)


class TestBuiltinDenoisers:
    def make_requests(self, sched, targets, t=500, rng=None):
        rng = rng or np.random.default_rng(0)
        reqs = []
        for vid, target in targets.items():
            latent = rng.normal(size=target.shape).astype(np.float32)
            reqs.append(
                DenoiseRequest(
                    view_id=vid,
                    latent=latent,
                    timestep=t,
                    prompt=f"view {vid}",
                    depth=np.ones(target.shape[:2], np.float32),
                    guidance_scale=8.0,
                )
            )
        return reqs

    def test_target_denoiser_estimate_recovers_target(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(2)
        targets = {v: rng.uniform(0, 1, (16, 16, 3)).astype(np.float32) for v in range(3)}
        den = TargetDenoiser(sched, targets)
        reqs = self.make_requests(sched, targets, t=750, rng=rng)
        eps = den.denoise_batch(reqs, ViewGraph.ring(3))
        for req, e in zip(reqs, eps):
            x0 = sched.estimate_x0(req.latent, e, req.timestep)
            assert np.allclose(x0, targets[req.view_id], atol=1e-4)

    def test_consensus_equals_target_when_targets_identical(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(3)
        shared = rng.uniform(0, 1, (16, 16, 3)).astype(np.float32)
        targets = {v: shared.copy() for v in range(3)}
        reqs = self.make_requests(sched, targets, t=400, rng=rng)
        graph = ViewGraph.complete(3)
        eps_t = TargetDenoiser(sched, targets).denoise_batch(reqs, graph)
        eps_c = ConsensusToyDenoiser(sched, targets).denoise_batch(reqs, graph)
        for a, b in zip(eps_t, eps_c):
            assert np.allclose(a, b, atol=1e-5)

    def test_consensus_mixes_conflicting_targets(self):
        sched = NoiseSchedule()
        red = np.zeros((8, 8, 3), np.float32)
        red[..., 0] = 1.0
        blue = np.zeros((8, 8, 3), np.float32)
        blue[..., 2] = 1.0
        den = ConsensusToyDenoiser(sched, {0: red, 1: blue})
        mixed = den.mixed_targets([0, 1], ViewGraph.complete(2))
        # each view's target moves toward the other's (similarity-weighted)
        assert mixed[0][..., 2].mean() > 0.005
        assert mixed[0][..., 0].mean() < 0.995
        assert mixed[1][..., 0].mean() > 0.005
        # symmetric setup mixes symmetrically
        assert mixed[0][..., 0].mean() == pytest.approx(mixed[1][..., 2].mean(), abs=1e-6)

    def test_batch_purity(self):
        sched = NoiseSchedule()
        rng = np.random.default_rng(4)
        targets = {v: rng.uniform(0, 1, (8, 8, 3)).astype(np.float32) for v in range(2)}
        den = TargetDenoiser(sched, targets)
        reqs = self.make_requests(sched, targets, rng=np.random.default_rng(9))
        graph = ViewGraph.ring(2)
        a = den.denoise_batch(reqs, graph)
        b = den.denoise_batch(reqs, graph)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_missing_target_rejected(self):
        sched = NoiseSchedule()
        den = TargetDenoiser(sched, {0: np.zeros((4, 4, 3), np.float32)})
        reqs = self.make_requests(sched, {1: np.zeros((4, 4, 3), np.float32)})
        with pytest.raises(ConfigError):
            den.denoise_batch(reqs, ViewGraph.ring(1))

    def test_request_validation(self):
        bad = np.full((4, 4, 3), np.nan, np.float32)
        with pytest.raises(ConfigError):
            DenoiseRequest(0, bad, 10, "p", np.ones((4, 4), np.float32), 7.0)
        with pytest.raises(ConfigError):
            DenoiseRequest(
                0, np.zeros((4, 4, 3), np.float32), 10, "p",
                np.ones((2, 2), np.float32), 7.0,
            )
