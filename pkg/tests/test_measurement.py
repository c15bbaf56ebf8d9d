import json
import math

import numpy as np
import pytest

from jitter_transfer.errors import EstimationFailedError
from jitter_transfer.measurement import (CSV_HEADER, MeasurementRecord, composite_neg_loglik, estimate_from_phases,
                                         estimate_ratio, estimate_total_jitter, lag_counts, measure_stream,
                                         pair_probability_11, read_records_csv, resolve_ratio,
                                         write_records_csv)
from jitter_transfer.oscillator import AccumulatedVolatility, OscillatorParams
from jitter_transfer.simulator import simulate_pair
from jitter_transfer.transfer import transfer_accumulated

RATIO_01 = 1 / 0.724


@pytest.fixture(scope="module")
def stream01():
    from jitter_transfer.simulator import three_ring_oscillators
    r = three_ring_oscillators()
    return simulate_pair(r[0], r[1], 1_000_000, seed=2024, pair=(0, 1), record_phases=True)


def brute_lag_counts(bits, m):
    a, b = bits[:-m], bits[m:]
    return (np.sum((a == 1) & (b == 1)), np.sum((a == 1) & (b == 0)),
            np.sum((a == 0) & (b == 1)), np.sum((a == 0) & (b == 0)))


class TestRatio:
    def test_noise_free_fraction(self):
        s = simulate_pair(OscillatorParams(5.0), OscillatorParams(7.0), 10_000)
        assert estimate_ratio(s) == pytest.approx(0.4, abs=1e-6)

    def test_delay_elements_resolve_integer_part(self):
        s = simulate_pair(OscillatorParams(5.0), OscillatorParams(7.0), 10_000)
        # ring lengths are inversely proportional to frequency
        assert estimate_ratio(s, delay_elements=(7, 5)) == pytest.approx(1.4, abs=1e-6)

    def test_reference_pair(self, stream01):
        assert estimate_ratio(stream01) == pytest.approx(RATIO_01 - 1, abs=1e-3)

    def test_constant_stream_fails(self):
        with pytest.raises(EstimationFailedError):
            estimate_ratio(np.ones(10_000, dtype=np.uint8))

    def test_white_noise_fails(self, rng):
        with pytest.raises(EstimationFailedError) as exc:
            estimate_ratio(rng.integers(0, 2, 100_000))
        assert "peak_to_mean" in exc.value.diagnostics

    def test_bad_delay_elements(self):
        s = simulate_pair(OscillatorParams(5.0), OscillatorParams(7.0), 1000)
        with pytest.raises(ValueError):
            estimate_ratio(s, delay_elements=(0, 5))

    @pytest.mark.parametrize("frac,nominal,expected", [
        (0.4, 1.38, 1.4), (0.4, 1.61, 1.6), (0.38, 1.7, 1.62), (0.38, 2.1, 2.38),
        (0.1, 0.05, 0.1), (0.25, 3.74, 3.75),
    ])
    def test_resolve(self, frac, nominal, expected):
        assert resolve_ratio(frac, nominal) == pytest.approx(expected)


class TestLagCounts:
    def test_matches_direct_count(self, rng):
        bits = rng.integers(0, 2, 3000).astype(np.uint8)
        m, n11, n10, n01, n00 = lag_counts(bits, 50)
        for lag in (1, 2, 17, 50):
            assert (n11[lag - 1], n10[lag - 1], n01[lag - 1], n00[lag - 1]) == brute_lag_counts(bits, lag)
        assert np.all(n11 + n10 + n01 + n00 == len(bits) - m)

    def test_lag_capped_by_length(self):
        m, *_ = lag_counts([1, 0, 1], 10)
        assert m.tolist() == [1, 2]

    def test_too_short(self):
        with pytest.raises(ValueError):
            lag_counts([1], 1)


class TestPairProbability:
    def test_no_offset_no_noise(self):
        assert pair_probability_11(0.0, 1e-20, 0.3) == pytest.approx(0.3)

    def test_half_period_offset(self):
        # a kink sits at the mean, so the residual is of order sd = 1e-10
        assert pair_probability_11(0.5, 1e-20, 0.5) == pytest.approx(0.0, abs=1e-9)

    def test_large_noise_decorrelates(self):
        assert pair_probability_11(0.37, 25.0, 0.3) == pytest.approx(0.09, abs=1e-9)

    @pytest.mark.parametrize("mean,var,duty", [(0.2, 0.01, 0.5), (3.7, 0.04, 0.3), (-1.1, 0.2, 0.6)])
    def test_monte_carlo(self, rng, mean, var, duty):
        n = 1_000_000
        u = rng.random(n)
        v = u + mean + math.sqrt(var) * rng.standard_normal(n)
        hit = (u < duty) & (np.mod(v, 1.0) < duty)
        p = pair_probability_11(mean, var, duty)
        assert abs(hit.mean() - p) < 5 * math.sqrt(p * (1 - p) / n)

    def test_vectorized(self):
        out = pair_probability_11(np.array([0.1, 0.2]), np.array([0.01, 0.02]), 0.5)
        assert out.shape == (2,)
        assert out[0] == pytest.approx(pair_probability_11(0.1, 0.01, 0.5))


class TestTotalJitter:
    def test_reference_pair_bits(self, stream01):
        rec = estimate_total_jitter(stream01, RATIO_01)
        # reference measurement was 2.39e-3 for this pair
        assert rec.sigma_prime == pytest.approx(2.39e-3, rel=0.05)
        truth = transfer_accumulated(stream01.sampler, stream01.sampled).value
        assert rec.sigma_prime == pytest.approx(truth, rel=0.03)
        assert rec.reference_period == pytest.approx(1e-3)
        assert rec.method == "bit_mle" and rec.pair == (0, 1)
        assert rec.std_error is not None and rec.flags == []

    def test_agrees_with_phase_oracle(self, stream01):
        a = estimate_total_jitter(stream01, RATIO_01)
        b = estimate_from_phases(stream01)
        assert abs(a.sigma_prime - b.sigma_prime) <= 1.96 * (a.std_error + b.std_error)

    def test_zero_jitter_flagged(self):
        s = simulate_pair(OscillatorParams(1000.0), OscillatorParams(1000 / 0.724), 100_000)
        rec = estimate_total_jitter(s, RATIO_01)
        assert rec.sigma_prime < 1e-4
        assert "wide_confidence_interval" in rec.flags

    def test_constant_stream_fails(self):
        with pytest.raises(EstimationFailedError):
            estimate_total_jitter(np.zeros(1000, dtype=np.uint8), 1.3, duty=0.5)

    def test_input_validation(self):
        bits = np.array([0, 1] * 100, dtype=np.uint8)
        with pytest.raises(ValueError):
            estimate_total_jitter(bits, 1.3)
        with pytest.raises(ValueError):
            estimate_total_jitter(bits, 1.3, duty=1.0)
        with pytest.raises(ValueError):
            estimate_total_jitter(bits, -1.3, duty=0.5)

    def test_likelihood_prefers_truth(self, stream01):
        counts = lag_counts(stream01.bits, 300)
        truth = math.log(transfer_accumulated(stream01.sampler, stream01.sampled).value)
        at_truth = composite_neg_loglik(truth, RATIO_01, 0.5, counts)
        assert at_truth < composite_neg_loglik(truth + 0.3, RATIO_01, 0.5, counts)
        assert at_truth < composite_neg_loglik(truth - 0.3, RATIO_01, 0.5, counts)

    @pytest.mark.parametrize("c", [0.5, 2.0])
    def test_scale_equivariance(self, rings, c):
        a, b = rings[0], rings[1]
        a2 = OscillatorParams(a.frequency, c * a.volatility)
        b2 = OscillatorParams(b.frequency, c * b.volatility)
        base = estimate_total_jitter(simulate_pair(a, b, 300_000, seed=8), RATIO_01, n_blocks=0)
        scaled = estimate_total_jitter(simulate_pair(a2, b2, 300_000, seed=8), RATIO_01, n_blocks=0)
        assert scaled.sigma_prime / base.sigma_prime == pytest.approx(c, rel=0.04)

    @pytest.mark.slow
    def test_consistency_in_length(self, rings):
        a, b = rings[0], rings[1]
        medians = []
        for n in (10_000, 100_000, 1_000_000):
            errs = []
            for seed in range(20):
                s = simulate_pair(a, b, n, seed=500 + seed, record_phases=True)
                oracle = estimate_from_phases(s).sigma_prime
                errs.append(abs(estimate_total_jitter(s, RATIO_01, n_blocks=0).sigma_prime - oracle) / oracle)
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]


class TestPhaseOracle:
    def test_reference_pair(self, rings):
        s = simulate_pair(rings[0], rings[2], 1_000_000, seed=77, pair=(0, 2), record_phases=True)
        rec = estimate_from_phases(s)
        assert rec.sigma_prime == pytest.approx(3.36e-3, rel=0.02)
        assert rec.ratio_estimate == pytest.approx(1 / 0.652, rel=1e-5)
        assert rec.pair == (0, 2) and rec.method == "phase_oracle"

    def test_deterministic(self):
        s = simulate_pair(OscillatorParams(5.0), OscillatorParams(7.0), 100, record_phases=True)
        rec = estimate_from_phases(s)
        assert rec.sigma_prime == pytest.approx(0.0, abs=1e-12)
        assert rec.ratio_estimate == pytest.approx(1.4)

    def test_two_pass(self, rng):
        phases = np.cumsum(rng.normal(1.3, 0.01, 1000))
        rec = estimate_from_phases(phases, reference_period=2.0)
        inc = [phases[k + 1] - phases[k] for k in range(len(phases) - 1)]
        mean = sum(inc) / len(inc)
        var = sum((v - mean) ** 2 for v in inc) / (len(inc) - 1)
        assert rec.ratio_estimate == pytest.approx(mean, rel=1e-13)
        assert rec.sigma_prime**2 == pytest.approx(var, rel=1e-10)
        assert rec.reference_period == 2.0

    def test_matches_nig_variance(self):
        a, b = OscillatorParams(1.0, 0.05), OscillatorParams(1.4, 0.03)
        n = 100_000
        rec = estimate_from_phases(simulate_pair(a, b, n + 1, seed=3, record_phases=True))
        from jitter_transfer.distributions import nig_of_pair
        v = nig_of_pair(1.0, 0.05, 1.4, 0.03).variance
        assert abs(rec.sigma_prime**2 - v) < 5 * v * math.sqrt(2.0 / n) * 1.2

    def test_needs_phases(self, rings):
        with pytest.raises(ValueError):
            estimate_from_phases(simulate_pair(rings[0], rings[1], 100))


class TestRecord:
    def make(self):
        return MeasurementRecord((0, 2), 1.53, AccumulatedVolatility(3.3e-3, 1e-3), 1000, "bit_mle",
                                 std_error=1e-5, flags=["x"])

    def test_json_round_trip(self):
        r = self.make()
        assert MeasurementRecord.from_dict(json.loads(json.dumps(r.to_dict()))) == r

    def test_csv_round_trip(self, tmp_path):
        r = self.make()
        write_records_csv([r], tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
        back = read_records_csv(tmp_path / "r.csv")[0]
        assert back.pair == r.pair and back.sigma_prime == r.sigma_prime
        assert back.reference_period == r.reference_period and back.ratio_estimate == r.ratio_estimate

    def test_csv_missing_columns(self, tmp_path):
        (tmp_path / "bad.csv").write_text("i,j\n0,1\n")
        with pytest.raises(ValueError):
            read_records_csv(tmp_path / "bad.csv")

    def test_confidence_interval(self):
        lo, hi = self.make().confidence_interval()
        assert lo == pytest.approx(3.3e-3 - 1.96e-5) and hi == pytest.approx(3.3e-3 + 1.96e-5)
        assert MeasurementRecord((0, 1), 1.0, AccumulatedVolatility(1.0, 1.0), 1, "expected").confidence_interval() is None

    def test_validation(self):
        with pytest.raises(ValueError):
            MeasurementRecord((0, 1), 1.0, AccumulatedVolatility(1.0, 1.0), 1, "guess")
        with pytest.raises(ValueError):
            MeasurementRecord((0, 1), 0.0, AccumulatedVolatility(1.0, 1.0), 1, "bit_mle")


class TestMeasureStream:
    def test_resolves_configured_ratio(self, stream01):
        rec = measure_stream(stream01, n_blocks=0)
        assert rec.ratio_estimate == pytest.approx(RATIO_01, abs=1e-4)

    def test_phase_oracle_route(self, stream01):
        assert measure_stream(stream01, "phase_oracle").method == "phase_oracle"

    def test_unknown_method(self, stream01):
        with pytest.raises(ValueError):
            measure_stream(stream01, "magic")
