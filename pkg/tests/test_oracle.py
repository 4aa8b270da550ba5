"""Analytic densities, noise predictions, and the overlap diagnostic."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scorelab.oracle import (
    Mode,
    OracleWorld,
    PromptEmbedding,
    eps_pred,
    interpolate_embeddings,
    log_noised_density,
    mode_responsibilities,
    noised_density,
    overlap_ratio,
)
from scorelab.schedule import build_schedule
from scorelab.worlds import two_mode_world, unimodal_world

SCHED = build_schedule(1000, 1e-4, 0.02)


def _std_normal_density(x):
    d = x.shape[-1]
    return (2 * np.pi) ** (-d / 2) * np.exp(-0.5 * np.sum(x * x, axis=-1))


def disjoint_two_prompt_world(separation=8.0):
    """Two modes, each owned entirely by one prompt."""
    return OracleWorld(
        dim=2,
        modes=(
            Mode("a", np.array([-separation / 2, 0.0]), 1.0),
            Mode("b", np.array([separation / 2, 0.0]), 1.0),
        ),
        prompts={
            "left": PromptEmbedding(np.array([1.0, 0.0])),
            "right": PromptEmbedding(np.array([0.0, 1.0])),
        },
        prior={"left": 0.5, "right": 0.5},
    )


class TestTypes:
    def test_embedding_rejects_negative_weights(self):
        with pytest.raises(ValueError, match="nonnegative"):
            PromptEmbedding(np.array([1.2, -0.2]))

    def test_embedding_rejects_bad_sum(self):
        with pytest.raises(ValueError, match="sum"):
            PromptEmbedding(np.array([0.5, 0.4]))

    def test_mode_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError, match="cov_scale"):
            Mode("m", np.zeros(2), 0.0)

    def test_world_checks_prompt_length(self):
        with pytest.raises(ValueError, match="weights"):
            OracleWorld(
                dim=1,
                modes=(Mode("m", np.zeros(1), 1.0),),
                prompts={"p": PromptEmbedding(np.array([0.5, 0.5]))},
                prior={"p": 1.0},
            )

    def test_interpolation_renormalizes(self):
        e1 = PromptEmbedding(np.array([1.0, 0.0]))
        e2 = PromptEmbedding(np.array([0.0, 1.0]))
        mid = interpolate_embeddings(e1, e2, 0.25)
        np.testing.assert_allclose(mid.weights, [0.25, 0.75])
        assert mid.weights.sum() == pytest.approx(1.0, abs=1e-15)


class TestNoisedDensity:
    def test_t_zero_equals_clean_mixture(self):
        world = two_mode_world()
        emb = world.embedding("a")
        x = np.array([1.0, -0.5])
        expected = sum(
            w * _std_normal_density((x - m.mean)[None])[0]
            for w, m in zip(emb.weights, world.modes)
        )
        assert noised_density(world, emb, x, 0, SCHED) == pytest.approx(expected, rel=1e-12)

    def test_standard_normal_fixed_point(self):
        """A unit mode at the origin stays standard normal at every t."""
        world = unimodal_world(mean=(0.0, 0.0), cov_scale=1.0)
        emb = world.embedding("only")
        x = np.array([0.3, -1.1])
        for t in (0, 1, 250, 999):
            assert noised_density(world, emb, x, t, SCHED) == pytest.approx(
                _std_normal_density(x[None])[0], rel=1e-12
            )

    def test_quadrature_integrates_to_one(self):
        """Trapezoid quadrature over a wide box catches all mixture mass."""
        world = two_mode_world(separation=6.0, cov_scale=0.8)
        emb = world.embedding("b")
        grid = np.linspace(-10, 10, 401)
        xx, yy = np.meshgrid(grid, grid)
        pts = np.stack([xx, yy], axis=-1)
        for t in (0, 400, 900):
            dens = noised_density(world, emb, pts, t, SCHED)
            total = np.trapezoid(np.trapezoid(dens, grid, axis=1), grid)
            assert total == pytest.approx(1.0, abs=1e-3)

    def test_dimension_mismatch(self):
        world = two_mode_world()
        with pytest.raises(ValueError, match="dimension"):
            noised_density(world, world.embedding("a"), np.zeros(3), 10, SCHED)


class TestEpsPred:
    def test_single_unit_mode_identity(self):
        """For N(0, I) data the optimal prediction is sqrt(1-abar) * x."""
        world = unimodal_world(mean=(0.0, 0.0), cov_scale=1.0)
        x = np.array([0.7, -2.0])
        for t in (1, 100, 999):
            out = eps_pred(world, "only", x, t, SCHED)
            np.testing.assert_allclose(
                out, np.sqrt(1 - SCHED.alpha_bars[t]) * x, rtol=1e-12
            )

    def test_vanishes_in_clean_limit(self):
        """As abar approaches 1 the prediction scales like sqrt(1-abar)."""
        world = two_mode_world()
        x = np.array([1.0, 1.0])
        tiny = build_schedule(1, 1e-10, 1e-10)
        out = eps_pred(world, "a", x, 1, tiny)
        clean_score_scale = np.linalg.norm(out) / np.sqrt(1 - tiny.alpha_bars[1])
        assert np.linalg.norm(out) < 1e-4
        assert 0 < clean_score_scale < 20

    def test_concentrated_responsibility_matches_single_mode(self):
        """At a well-separated mode's noised mean the local formula applies."""
        world = two_mode_world(separation=16.0)
        t = 100
        abar = SCHED.alpha_bars[t]
        m0 = np.sqrt(abar) * world.modes[0].mean
        out = eps_pred(world, "a", m0 + 0.1, t, SCHED)
        v = abar * world.modes[0].cov_scale + 1 - abar
        single = np.sqrt(1 - abar) * (m0 + 0.1 - m0) / v
        np.testing.assert_allclose(out, single, atol=1e-6)

    def test_unknown_label(self):
        world = two_mode_world()
        with pytest.raises(KeyError, match="nope"):
            eps_pred(world, "nope", np.zeros(2), 10, SCHED)

    def test_t_range(self):
        world = two_mode_world()
        with pytest.raises(IndexError):
            eps_pred(world, "a", np.zeros(2), 0, SCHED)

    def test_score_matches_finite_difference(self):
        """-eps/sqrt(1-abar) equals the central difference of log density."""
        rng = np.random.default_rng(5)
        world = two_mode_world(separation=5.0, cov_scale=1.4)
        emb = world.embedding("a")
        h = 1e-4
        for _ in range(25):
            x = rng.normal(0, 3, size=2)
            t = int(rng.integers(1, 1001))
            eps = eps_pred(world, emb, x, t, SCHED)
            score = -eps / np.sqrt(1 - SCHED.alpha_bars[t])
            for axis in range(2):
                step = np.zeros(2)
                step[axis] = h
                fd = (
                    log_noised_density(world, emb, x + step, t, SCHED)
                    - log_noised_density(world, emb, x - step, t, SCHED)
                ) / (2 * h)
                assert score[axis] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_density_linear_in_embedding(self):
        world = two_mode_world()
        e1, e2 = world.embedding("a"), world.embedding("b")
        r = 0.3
        mix = PromptEmbedding(r * e1.weights + (1 - r) * e2.weights)
        x = np.array([0.5, 2.0])
        for t in (0, 300):
            lhs = noised_density(world, mix, x, t, SCHED)
            rhs = r * noised_density(world, e1, x, t, SCHED) + (1 - r) * noised_density(
                world, e2, x, t, SCHED
            )
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_unconditional_equals_prior_average(self):
        world = two_mode_world(prior=(0.3, 0.7))
        x = np.array([1.2, -0.4])
        uncond = eps_pred(world, None, x, 77, SCHED)
        avg = world.unconditional_embedding()
        np.testing.assert_array_equal(uncond, eps_pred(world, avg, x, 77, SCHED))

    def test_batched_evaluation_matches_loop(self):
        world = two_mode_world()
        xs = np.random.default_rng(0).normal(0, 2, (8, 2))
        batch = eps_pred(world, "a", xs, 200, SCHED)
        rows = np.stack([eps_pred(world, "a", x, 200, SCHED) for x in xs])
        np.testing.assert_array_equal(batch, rows)

    def test_batched_timesteps(self):
        world = two_mode_world()
        xs = np.random.default_rng(1).normal(0, 2, (4, 2))
        ts = np.array([10, 200, 600, 999])
        batch = eps_pred(world, "a", xs, ts, SCHED)
        rows = np.stack(
            [eps_pred(world, "a", x, int(t), SCHED) for x, t in zip(xs, ts)]
        )
        np.testing.assert_array_equal(batch, rows)


class TestOverlapRatio:
    def test_same_prompt_gives_inverse_conditional(self):
        """With disjoint prompt supports, R(c, c) is exactly 1/p(c|x)."""
        world = disjoint_two_prompt_world()
        x = np.array([-1.0, 0.5])
        dens_l = noised_density(world, world.embedding("left"), x, 0, SCHED)
        dens_r = noised_density(world, world.embedding("right"), x, 0, SCHED)
        p_left = 0.5 * dens_l / (0.5 * dens_l + 0.5 * dens_r)
        r = overlap_ratio(world, "left", "left", x)
        assert r == pytest.approx(1.0 / p_left, rel=1e-10)
        assert r >= 1.0

    def test_identical_caption_distributions_are_independent(self):
        """When both prompts relate to every mode identically, R is 1."""
        world = OracleWorld(
            dim=1,
            modes=(Mode("m0", np.array([-2.0]), 1.0), Mode("m1", np.array([2.0]), 1.0)),
            prompts={
                "p": PromptEmbedding(np.array([0.5, 0.5])),
                "q": PromptEmbedding(np.array([0.5, 0.5])),
            },
            prior={"p": 0.4, "q": 0.6},
        )
        for x in ([0.0], [1.3], [-2.4]):
            assert overlap_ratio(world, "p", "q", np.array(x)) == pytest.approx(1.0)

    def test_overlapping_prompts_against_direct_enumeration(self):
        """Brute-force mode enumeration from raw component densities."""
        world = OracleWorld(
            dim=2,
            modes=(
                Mode("m0", np.array([-3.0, 0.0]), 1.0),
                Mode("m1", np.array([3.0, 0.0]), 2.0),
                Mode("m2", np.array([0.0, 3.0]), 0.5),
            ),
            prompts={
                "p": PromptEmbedding(np.array([0.6, 0.4, 0.0])),
                "q": PromptEmbedding(np.array([0.0, 0.5, 0.5])),
            },
            prior={"p": 0.45, "q": 0.55},
        )
        x = np.array([0.8, 0.6])

        # independent oracle: direct per-mode density evaluation
        def gauss(x, mean, s):
            d = len(x)
            return (2 * np.pi * s) ** (-d / 2) * np.exp(
                -np.sum((x - mean) ** 2) / (2 * s)
            )

        comp = np.array([gauss(x, m.mean, m.cov_scale) for m in world.modes])
        u = 0.45 * world.prompts["p"].weights + 0.55 * world.prompts["q"].weights
        post = u * comp / np.sum(u * comp)
        cap_p = 0.45 * world.prompts["p"].weights / u
        cap_q = 0.55 * world.prompts["q"].weights / u
        joint = np.sum(post * cap_p * cap_q)
        marg_p = np.sum(post * cap_p)
        marg_q = np.sum(post * cap_q)
        expected = joint / (marg_p * marg_q)

        assert overlap_ratio(world, "p", "q", x) == pytest.approx(expected, rel=1e-12)
        assert expected != pytest.approx(1.0, abs=1e-3)

    def test_concentrated_point_is_independent(self):
        """Deep inside one mode the captions decouple and R approaches 1."""
        world = OracleWorld(
            dim=1,
            modes=(Mode("m0", np.array([-8.0]), 1.0), Mode("m1", np.array([8.0]), 1.0)),
            prompts={
                "p": PromptEmbedding(np.array([0.7, 0.3])),
                "q": PromptEmbedding(np.array([0.4, 0.6])),
            },
            prior={"p": 0.5, "q": 0.5},
        )
        assert overlap_ratio(world, "p", "q", np.array([-8.0])) == pytest.approx(
            1.0, abs=1e-9
        )

    def test_unknown_label(self):
        world = disjoint_two_prompt_world()
        with pytest.raises(KeyError):
            overlap_ratio(world, "left", "nope", np.zeros(2))

    def test_degenerate_far_point(self):
        world = disjoint_two_prompt_world()
        with pytest.raises(ValueError, match="degenerate|underflow"):
            overlap_ratio(world, "left", "right", np.array([1e6, 1e6]))


class TestModeResponsibilities:
    def test_rows_sum_to_one(self):
        world = two_mode_world()
        xs = np.random.default_rng(2).normal(0, 4, (10, 2))
        resp = mode_responsibilities(world, world.unconditional_embedding(), xs)
        np.testing.assert_allclose(resp.sum(axis=-1), 1.0, rtol=1e-12)

    @given(st.floats(-6, 6), st.floats(-6, 6))
    @settings(max_examples=50, deadline=None)
    def test_responsibilities_bounded(self, x0, x1):
        world = two_mode_world()
        resp = mode_responsibilities(
            world, world.embedding("a"), np.array([x0, x1])
        )
        assert np.all(resp >= 0) and np.all(resp <= 1)
