"""Generation loops, mode classification, and success tabulation."""

import numpy as np
import pytest

from scorelab.compose import ComposerConfig
from scorelab.oracle import Mode, OracleWorld, PromptEmbedding
from scorelab.sampler import (
    SampleRun,
    classify_mode,
    classify_modes,
    generate,
    success_table,
)
from scorelab.schedule import build_schedule
from scorelab.worlds import two_mode_world, unimodal_world

SCHED = build_schedule(1000, 1e-4, 0.02)


class TestSampleRunValidation:
    def test_rejects_bad_counts(self):
        cfg = ComposerConfig()
        with pytest.raises(ValueError, match="n"):
            SampleRun(seed=0, n=0, steps=10, composer="cfg", config=cfg, positive="a")
        with pytest.raises(ValueError, match="steps"):
            SampleRun(seed=0, n=1, steps=0, composer="cfg", config=cfg, positive="a")
        with pytest.raises(ValueError, match="seed"):
            SampleRun(seed=-1, n=1, steps=10, composer="cfg", config=cfg, positive="a")

    def test_rejects_unknown_composer(self):
        with pytest.raises(ValueError, match="composer"):
            SampleRun(seed=0, n=1, steps=10, composer="foo",
                      config=ComposerConfig(), positive="a")

    def test_cfg_takes_no_negatives(self):
        with pytest.raises(ValueError, match="negatives"):
            SampleRun(seed=0, n=1, steps=10, composer="cfg",
                      config=ComposerConfig(), positive="a",
                      negatives=(("b", 1.0),))


class TestGenerate:
    def test_bit_exact_determinism(self):
        world = two_mode_world()
        run = SampleRun(seed=3, n=16, steps=20, composer="cfg",
                        config=ComposerConfig(guidance=2.0), positive="a")
        a = generate(world, run, SCHED).samples
        b = generate(world, run, SCHED).samples
        np.testing.assert_array_equal(a, b)

    def test_raw_conditional_hits_unimodal_target(self):
        world = unimodal_world(mean=(2.0, -1.0))
        n = 10_000
        run = SampleRun(seed=0, n=n, steps=50, composer="cfg",
                        config=ComposerConfig(guidance=0.0), positive="only")
        x = generate(world, run, SCHED).samples
        se = 1.0 / np.sqrt(n)
        assert np.all(np.abs(x.mean(axis=0) - [2.0, -1.0]) < 3 * se + 0.02)

    def test_perp_neg_empty_negatives_reconciles_with_cfg(self):
        """Guidance tau+1 on the projected composer equals plain guidance tau."""
        world = two_mode_world()
        tau = 3.0
        run_cfg = SampleRun(seed=5, n=8, steps=25, composer="cfg",
                            config=ComposerConfig(guidance=tau), positive="a")
        run_perp = SampleRun(seed=5, n=8, steps=25, composer="perp_neg",
                             config=ComposerConfig(guidance=tau + 1, w_pos=1.0),
                             positive="a")
        a = generate(world, run_cfg, SCHED).samples
        b = generate(world, run_perp, SCHED).samples
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_unresolvable_label(self):
        world = two_mode_world()
        run = SampleRun(seed=0, n=1, steps=10, composer="cfg",
                        config=ComposerConfig(), positive="nope")
        with pytest.raises(KeyError, match="nope"):
            generate(world, run, SCHED)

    def test_steps_exceeding_schedule(self):
        world = two_mode_world()
        short = build_schedule(10, 1e-3, 0.02)
        run = SampleRun(seed=0, n=1, steps=11, composer="cfg",
                        config=ComposerConfig(), positive="a")
        with pytest.raises(ValueError, match="steps"):
            generate(world, run, short)

    def test_trajectory_rows(self):
        world = two_mode_world()
        run = SampleRun(seed=1, n=3, steps=5, composer="cfg",
                        config=ComposerConfig(guidance=1.0), positive="a",
                        trajectory_capture=True, run_id="tr")
        result = generate(world, run, SCHED)
        assert len(result.trajectory) == 3 * 6
        first = result.trajectory[0]
        assert first[0] == "tr" and first[1] == 0 and first[2] == 0
        assert first[3] == 1000
        # last row per sample is the terminal state
        last = result.trajectory[5]
        np.testing.assert_array_equal(np.array(last[4:]), result.samples[0])

    def test_proportions_follow_embedding_weights(self):
        """Raw conditional sampling reproduces mixture proportions."""
        world = two_mode_world()
        n = 4000
        run = SampleRun(seed=0, n=n, steps=50, composer="cfg",
                        config=ComposerConfig(guidance=0.0), positive="a")
        x = generate(world, run, SCHED).samples
        ids = classify_modes(world, x)
        frac = sum(i == "left" for i in ids) / n
        assert frac == pytest.approx(0.6, abs=0.05)


class TestClassifyMode:
    def test_at_mode_mean(self):
        world = two_mode_world()
        assert classify_mode(world, world.modes[1].mean) == "right"

    def test_midpoint_tie_breaks_to_lower_id(self):
        world = OracleWorld(
            dim=1,
            modes=(Mode("b", np.array([2.0]), 1.0), Mode("a", np.array([-2.0]), 1.0)),
            prompts={"p": PromptEmbedding(np.array([0.5, 0.5]))},
            prior={"p": 1.0},
        )
        assert classify_mode(world, np.array([0.0])) == "a"

    def test_six_sigma_separation_rarely_misclassifies(self):
        world = two_mode_world(separation=6.0, cov_scale=1.0,
                               weights_a=(1.0, 0.0), weights_b=(0.0, 1.0),
                               prior=(0.5, 0.5))
        rng = np.random.default_rng(9)
        draws = world.modes[0].mean + rng.standard_normal((20_000, 2))
        ids = classify_modes(world, draws)
        frac = sum(i == "left" for i in ids) / len(ids)
        assert frac >= 0.997


class TestSuccessTable:
    def _runs(self, world, seeds, composer="cfg", negatives=(), n=1, guidance=0.0):
        return [
            SampleRun(seed=s, n=n, steps=20, composer=composer,
                      config=ComposerConfig(guidance=guidance),
                      positive="a", negatives=negatives)
            for s in seeds
        ]

    def test_all_samples_at_target(self):
        world = two_mode_world(weights_a=(1.0, 0.0), weights_b=(0.0, 1.0))
        report = success_table(world, self._runs(world, range(5), n=10), SCHED, "left")
        assert report.success_rate == 1.0
        assert report.successes == report.n == 50

    def test_rate_is_exact_fraction(self):
        world = two_mode_world()
        report = success_table(world, self._runs(world, range(4), n=25), SCHED, "left")
        assert report.success_rate == report.successes / 100

    def test_empty_runs_rejected(self):
        world = two_mode_world()
        with pytest.raises(ValueError, match="runs"):
            success_table(world, [], SCHED, "left")

    def test_unknown_target(self):
        world = two_mode_world()
        with pytest.raises(KeyError):
            success_table(world, self._runs(world, [0]), SCHED, "nope")

    def test_grouped_execution_matches_individual_runs(self):
        """The stacked fast path must be bit-identical to per-run generate."""
        world = two_mode_world()
        runs = self._runs(world, range(6), composer="perp_neg",
                          negatives=(("b", 1.5),), guidance=4.0)
        report = success_table(world, runs, SCHED, "left")
        for run, outcome in zip(runs, report.per_run):
            solo = generate(world, run, SCHED)
            np.testing.assert_array_equal(
                classify_modes(world, solo.samples), outcome.assignments
            )

    def test_per_combination_breakdown(self):
        world = two_mode_world()
        runs = self._runs(world, range(3)) + self._runs(
            world, range(3), composer="naive_neg", negatives=(("b", 1.0),)
        )
        report = success_table(world, runs, SCHED, "left")
        assert len(report.per_combination) == 2
        for key, rate in report.per_combination.items():
            assert 0.0 <= rate <= 1.0


class TestGuidanceMonotonicity:
    def test_dominant_mode_fraction_non_decreasing(self):
        world = two_mode_world()
        n = 4000
        fractions = []
        for tau in (0.0, 1.0, 3.0, 7.5):
            run = SampleRun(seed=0, n=n, steps=50, composer="cfg",
                            config=ComposerConfig(guidance=tau), positive="a")
            ids = classify_modes(world, generate(world, run, SCHED).samples)
            fractions.append(sum(i == "left" for i in ids) / n)
        for lo, hi in zip(fractions, fractions[1:]):
            assert hi >= lo - 0.02
