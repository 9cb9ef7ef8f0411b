from dataclasses import asdict

import pytest

from sflab.errors import InvalidInputError
from sflab.theory_harness import (
    Claim,
    ExperimentConfig,
    Verdict,
    frequency_test,
    prop1_sweep,
    run_experiment,
    verify_lemmas,
    verify_prop1,
    verify_theorem1,
)

FAST_PROP1 = {
    "d": 8, "datasets": 3, "sweep_n": [2, 3], "sweep_k": [1], "sweep_tilt": [0.0],
    "mc_samples": 20_000, "seeds": [1],
}


def _claims(verdict, prefix):
    return [c for c in verdict.claims if c.name.startswith(prefix)]


class TestExperimentConfig:
    def test_defaults_per_experiment(self):
        cfg = ExperimentConfig.from_mapping("theorem1")
        assert (cfg.n, cfg.d, cfg.k, cfg.m) == (8, 16, 2, 4096)
        assert cfg.seeds == (1, 2, 3, 4, 5)

    def test_overrides(self):
        cfg = ExperimentConfig.from_mapping("prop1", {"sweep_n": [2], "workers": 3})
        assert cfg.sweep_n == (2,)
        assert cfg.workers == 3
        assert cfg.to_dict()["sweep_n"] == [2]

    def test_unknown_key(self):
        with pytest.raises(InvalidInputError, match="widht"):
            ExperimentConfig.from_mapping("theorem1", {"widht": 10})

    def test_mismatched_experiment(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_mapping("theorem1", {"which": "prop1"})

    @pytest.mark.parametrize("mapping", [
        {"delta": 0.0},
        {"delta": 1.5},
        {"seeds": []},
        {"seeds": [-1]},
        {"target": "cubic"},
        {"m": 0},
        {"kernel_log_every": 0},
    ])
    def test_rejects(self, mapping):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_mapping("theorem1", mapping)

    def test_unknown_experiment(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig.from_mapping("theorem3")


class TestFrequencyTest:
    def test_no_failures_passes(self):
        result = frequency_test(0, 200, 0.1)
        assert result.passed
        assert result.p_value == 1.0

    def test_rate_at_bound_passes(self):
        assert frequency_test(20, 200, 0.1).passed

    def test_excess_failures(self):
        result = frequency_test(60, 200, 0.1)
        assert not result.passed
        assert result.rate == 0.3

    def test_bound_above_one_is_clipped(self):
        assert frequency_test(5, 5, 3.0).bound == 1.0

    def test_needs_trials(self):
        with pytest.raises(InvalidInputError):
            frequency_test(0, 0, 0.1)


class TestVerdict:
    def test_informational_claims_do_not_fail(self):
        verdict = Verdict("prop1", claims=[
            Claim("a", "x <= y", {}, "none", True, "seed=1"),
            Claim("b", "x <= y", {}, "informational", False, "seed=1", required=False),
        ])
        assert verdict.passed
        assert verdict.failed_claims == []
        assert verdict.to_dict()["passed"] is True


class TestProp1:
    def test_sweep_order(self):
        cfg = ExperimentConfig.from_mapping("prop1", {"datasets": 7})
        sweep = prop1_sweep(cfg)
        assert sweep[:4] == [(2, 1, 0.0), (4, 1, 0.0), (8, 1, 0.0), (2, 2, 0.0)]
        assert sweep[6] == (2, 1, 0.3)

    def test_sweep_drops_tilt_without_directions(self):
        cfg = ExperimentConfig.from_mapping("prop1", {"datasets": 2, "sweep_k": [0], "sweep_tilt": [0.3]})
        assert all(tilt == 0.0 for _, _, tilt in prop1_sweep(cfg))

    def test_small_sweep_passes(self):
        verdict = verify_prop1(ExperimentConfig.from_mapping("prop1", FAST_PROP1))
        assert len(_claims(verdict, "prop1[")) == 3
        assert len(_claims(verdict, "lemma6[")) == 3
        assert verdict.passed, verdict.failed_claims

    def test_worker_count_does_not_change_claims(self):
        one = verify_prop1(ExperimentConfig.from_mapping("prop1", {**FAST_PROP1, "workers": 1}))
        three = verify_prop1(ExperimentConfig.from_mapping("prop1", {**FAST_PROP1, "workers": 3}))
        assert [asdict(c) for c in one.claims] == [asdict(c) for c in three.claims]
        assert one.environment.keys() == three.environment.keys()


class TestLemmas:
    @pytest.fixture(scope="class")
    def verdict(self):
        cfg = ExperimentConfig.from_mapping("lemmas", {
            "n": 3, "d": 8, "k": 1, "m": 200, "seeds": list(range(1, 31)),
            "mc_samples": 20_000, "lemma1_points": 10,
        })
        return verify_lemmas(cfg)

    def test_claim_battery(self, verdict):
        names = {c.name for c in verdict.claims}
        assert names >= {
            "lemma1_value_gradient", "lemma1_direction_gradient", "lemma1_neuron_kernel",
            "lemma2_width", "lemma2_frequency", "lemma3_frequency", "lemma3_value_moment",
            "lemma3_direction_moment", "lemma6", "lemma7", "matrix_chernoff",
        }

    def test_deterministic_bounds_hold(self, verdict):
        by_name = {c.name: c for c in verdict.claims}
        for name in ("lemma1_value_gradient", "lemma1_direction_gradient", "lemma1_neuron_kernel", "lemma6", "lemma7"):
            assert by_name[name].passed, by_name[name]

    def test_lemma7_is_exact_for_orthonormal_frames(self, verdict):
        lemma7 = next(c for c in verdict.claims if c.name == "lemma7")
        assert lemma7.measured["min_eigenvalue"] == pytest.approx(1.0, abs=1e-10)

    def test_sweep_counts_every_seed(self, verdict):
        lemma3 = next(c for c in verdict.claims if c.name == "lemma3_frequency")
        assert lemma3.measured["trials"] == 30


class TestTheorem1:
    def test_underparameterized_run_reports_failures(self):
        cfg = ExperimentConfig.from_mapping("theorem1", {
            "n": 4, "d": 8, "k": 1, "m": 8, "steps": 50, "seeds": [1, 2],
            "mc_samples": 20_000, "log_every": 10, "kernel_log_every": 10,
        })
        verdict = run_experiment(cfg)
        assert verdict.experiment == "theorem1"
        assert not verdict.passed
        assert verdict.failed_claims
        assert all("seed=" in c.provenance for c in verdict.claims)
        width = [c for c in verdict.claims if c.name == "lemma2_width"]
        assert len(width) == 2 and not any(c.required for c in width)

    def test_claims_follow_seed_order(self):
        cfg = ExperimentConfig.from_mapping("theorem1", {
            "n": 2, "d": 6, "k": 1, "m": 16, "steps": 5, "seeds": [3, 1, 2],
            "mc_samples": 20_000, "kernel_log_every": 5, "workers": 3,
        })
        order = [c.provenance.split()[0] for c in verify_theorem1(cfg).claims]
        assert order == sorted(order)


@pytest.mark.slow
def test_theorem1_desk_scale():
    verdict = run_experiment(ExperimentConfig.from_mapping("theorem1"))
    assert verdict.passed, verdict.failed_claims
    assert len(_claims(verdict, "loss_reduction")) == 5


@pytest.mark.slow
def test_theorem1_without_directions():
    cfg = ExperimentConfig.from_mapping("theorem1", {"k": 0})
    verdict = run_experiment(cfg)
    for prefix in ("loss_reduction", "pathwise_rate", "escape_time", "neuron_drift"):
        assert all(c.passed for c in _claims(verdict, prefix)), prefix


@pytest.mark.slow
def test_theorem2_antipodal_pair():
    verdict = run_experiment(ExperimentConfig.from_mapping("theorem2"))
    assert verdict.passed, verdict.failed_claims
    assert len(_claims(verdict, "loss_reduction")) == 5
    uncertified = _claims(verdict, "no_bias_uncertified")
    assert len(uncertified) == 1 and uncertified[0].passed


@pytest.mark.slow
def test_prop1_full_sweep():
    assert run_experiment(ExperimentConfig.from_mapping("prop1")).passed


@pytest.mark.slow
def test_lemmas_full_sweep():
    verdict = run_experiment(ExperimentConfig.from_mapping("lemmas"))
    assert verdict.passed, verdict.failed_claims
