//! Event-level simulation of the postselected protocol.
//!
//! Each event draws Alice's complex amplitude from an isotropic Gaussian with
//! variance `d/4` per quadrature, lets Bob pick the X or Y quadrature with a
//! fair coin, and samples his homodyne outcome through a channel of
//! transmission `η`. Eve's tap is modelled at the optimal-discrimination
//! bound: her guess is correct with the Helstrom probability for the
//! event's effective amplitude.
//!
//! Events are generated in fixed-size batches. Batch `k` draws from ChaCha
//! stream `k` of the master seed and batches are reduced in index order, so
//! a session is bit-reproducible from its seed for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::coherent_info::{raw, ChannelParams};
use crate::error::{Error, Result};
use crate::postselect::{self, GridSpec};
use crate::quadrature::CompensatedSum;

/// Events per RNG stream.
pub const BATCH_SIZE: u64 = 1 << 14;

/// Batches held in memory at once while streaming records.
const RECORD_WINDOW: usize = 64;

/// Quantile of the Kolmogorov distribution at 99 %.
const KOLMOGOROV_99: f64 = 1.627_62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Basis::X => f.write_str("X"),
            Basis::Y => f.write_str("Y"),
        }
    }
}

/// One transmission event after sifting and selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub amp_q: f64,
    pub amp_p: f64,
    /// `|amp_q + i·amp_p|`
    pub alpha: f64,
    /// Signal-set phase with `alpha·cos(theta)` equal to the effective amplitude.
    pub theta: f64,
    pub basis: Basis,
    pub bit: u8,
    pub x_out: f64,
    pub eve_correct: bool,
    pub selected: bool,
}

impl SignalRecord {
    /// The basis-relevant amplitude component, signed.
    pub fn component(&self) -> f64 {
        match self.basis {
            Basis::X => self.amp_q,
            Basis::Y => self.amp_p,
        }
    }

    pub fn effective_amplitude(&self) -> f64 {
        self.component().abs()
    }

    /// Bob's sign decision on his outcome.
    pub fn bob_bit(&self) -> u8 {
        u8::from(self.x_out <= 0.0)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTally {
    pub n: u64,
    pub n_selected: u64,
    pub n_errors_selected: u64,
}

impl BasisTally {
    pub fn error_selected(&self) -> Option<f64> {
        ratio(self.n_errors_selected, self.n_selected)
    }

    fn merge(&mut self, other: &BasisTally) {
        self.n += other.n;
        self.n_selected += other.n_selected;
        self.n_errors_selected += other.n_errors_selected;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub eta: f64,
    pub d: f64,
    pub seed: u64,
    pub n_total: u64,
    pub n_selected: u64,
    pub n_errors_selected: u64,
    pub n_eve_correct_selected: u64,
    /// Bob's bit-error rate among selected events.
    pub emp_error_selected: Option<f64>,
    /// Eve's guessing rate among selected events.
    pub emp_eve_success_selected: Option<f64>,
    /// Sample mean of `max(ΔI, 0)` over all events, the empirical `R_k / R_r`.
    pub emp_rate: f64,
    /// Standard error of `emp_rate`.
    pub emp_rate_std_err: f64,
    pub x_basis: BasisTally,
    pub y_basis: BasisTally,
}

impl SessionStats {
    pub fn selected_fraction(&self) -> f64 {
        self.n_selected as f64 / self.n_total as f64
    }
}

/// Empirical value against its analytic prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub empirical: f64,
    pub analytic: f64,
    /// Standard deviation of `empirical` under the analytic model.
    pub sigma: f64,
    pub z: f64,
    /// `|z| ≤ 3`
    pub agrees: bool,
}

impl ConsistencyCheck {
    fn new(empirical: f64, analytic: f64, sigma: f64) -> Self {
        let diff = empirical - analytic;
        let z = if diff == 0.0 { 0.0 } else { diff / sigma };
        Self {
            empirical,
            analytic,
            sigma,
            z,
            agrees: z.abs() <= 3.0,
        }
    }
}

/// Kolmogorov–Smirnov comparison against the folded amplitude Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub critical_1pct: f64,
    pub passes: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    x: BasisTally,
    y: BasisTally,
    n_eve_correct_selected: u64,
    rate: CompensatedSum,
    rate_sq: CompensatedSum,
}

impl Accumulator {
    fn record(&mut self, rec: &SignalRecord, clipped_delta: f64) {
        let tally = match rec.basis {
            Basis::X => &mut self.x,
            Basis::Y => &mut self.y,
        };
        tally.n += 1;
        if rec.selected {
            tally.n_selected += 1;
            if rec.bob_bit() != rec.bit {
                tally.n_errors_selected += 1;
            }
            if rec.eve_correct {
                self.n_eve_correct_selected += 1;
            }
        }
        self.rate.add(clipped_delta);
        self.rate_sq.add(clipped_delta * clipped_delta);
    }

    fn merge(&mut self, other: &Accumulator) {
        self.x.merge(&other.x);
        self.y.merge(&other.y);
        self.n_eve_correct_selected += other.n_eve_correct_selected;
        self.rate.merge(&other.rate);
        self.rate_sq.merge(&other.rate_sq);
    }

    fn finish(&self, params: &ChannelParams, seed: u64) -> SessionStats {
        let n_total = self.x.n + self.y.n;
        let n_selected = self.x.n_selected + self.y.n_selected;
        let n_errors_selected = self.x.n_errors_selected + self.y.n_errors_selected;
        let n = n_total as f64;
        let mean = self.rate.value() / n;
        let var = if n_total > 1 {
            ((self.rate_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        SessionStats {
            eta: params.eta(),
            d: params.d(),
            seed,
            n_total,
            n_selected,
            n_errors_selected,
            n_eve_correct_selected: self.n_eve_correct_selected,
            emp_error_selected: ratio(n_errors_selected, n_selected),
            emp_eve_success_selected: ratio(self.n_eve_correct_selected, n_selected),
            emp_rate: mean,
            emp_rate_std_err: (var / n).sqrt(),
            x_basis: self.x,
            y_basis: self.y,
        }
    }
}

/// Draws one event. The order of draws is fixed and part of the
/// reproducibility contract.
fn draw_event<R: Rng>(rng: &mut R, eta: f64, sd: f64) -> (SignalRecord, f64) {
    let amp_q = sd * rng.sample::<f64, _>(StandardNormal);
    let amp_p = sd * rng.sample::<f64, _>(StandardNormal);
    let basis = if rng.random::<bool>() { Basis::X } else { Basis::Y };
    let noise: f64 = rng.sample(StandardNormal);
    let eve_draw: f64 = rng.random();

    let component = match basis {
        Basis::X => amp_q,
        Basis::Y => amp_p,
    };
    let e = component.abs();
    let bit = u8::from(component < 0.0);
    let x_out = eta.sqrt() * component + 0.5 * noise;
    let alpha = amp_q.hypot(amp_p);
    let theta = if alpha > 0.0 { (e / alpha).min(1.0).acos() } else { 0.0 };

    let delta = raw::delta_info(eta, e, x_out);
    let rec = SignalRecord {
        amp_q,
        amp_p,
        alpha,
        theta,
        basis,
        bit,
        x_out,
        eve_correct: eve_draw < raw::eve_helstrom_success(eta, e),
        selected: delta > 0.0,
    };
    (rec, delta.max(0.0))
}

fn simulate_batch(
    params: &ChannelParams,
    seed: u64,
    batch: u64,
    len: u64,
    keep: bool,
) -> (Accumulator, Vec<SignalRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    let eta = params.eta();
    let sd = 0.5 * params.d().sqrt();
    let mut acc = Accumulator::default();
    let mut records = Vec::with_capacity(if keep { len as usize } else { 0 });
    for _ in 0..len {
        let (rec, clipped) = draw_event(&mut rng, eta, sd);
        acc.record(&rec, clipped);
        if keep {
            records.push(rec);
        }
    }
    (acc, records)
}

fn run(
    params: &ChannelParams,
    n: u64,
    seed: u64,
    mut sink: Option<&mut dyn FnMut(&SignalRecord)>,
) -> Result<SessionStats> {
    if n == 0 {
        return Err(Error::EmptySession);
    }
    let params = ChannelParams::new(params.eta(), params.d())?;
    let n_batches = n.div_ceil(BATCH_SIZE);
    let batch_len = |b: u64| BATCH_SIZE.min(n - b * BATCH_SIZE);
    let keep = sink.is_some();
    let window = if keep { RECORD_WINDOW as u64 } else { n_batches };

    let mut total = Accumulator::default();
    let mut start = 0;
    while start < n_batches {
        let end = (start + window).min(n_batches);
        let results: Vec<_> = (start..end)
            .into_par_iter()
            .map(|b| simulate_batch(&params, seed, b, batch_len(b), keep))
            .collect();
        for (acc, records) in results {
            total.merge(&acc);
            if let Some(sink) = sink.as_mut() {
                records.iter().for_each(&mut *sink);
            }
        }
        start = end;
    }
    Ok(total.finish(&params, seed))
}

/// Simulates `n` events and aggregates their statistics.
pub fn run_session(params: &ChannelParams, n: u64, seed: u64) -> Result<SessionStats> {
    run(params, n, seed, None)
}

/// As [`run_session`], handing every event to `sink` in generation order.
pub fn run_session_with_records<F: FnMut(&SignalRecord)>(
    params: &ChannelParams,
    n: u64,
    seed: u64,
    mut sink: F,
) -> Result<SessionStats> {
    run(params, n, seed, Some(&mut sink))
}

/// Compares Bob's selected-event error rate with `∬_S p·p_e / ∬_S p`.
///
/// `None` when no event was selected or the analytic selection is empty.
pub fn error_consistency_check(
    stats: &SessionStats,
    params: &ChannelParams,
    grid: &GridSpec,
) -> Result<Option<ConsistencyCheck>> {
    let Some(empirical) = stats.emp_error_selected else {
        return Ok(None);
    };
    let Some(analytic) = postselect::selection_conditioned_error(params, grid)? else {
        return Ok(None);
    };
    let sigma = (analytic * (1.0 - analytic) / stats.n_selected as f64).sqrt();
    Ok(Some(ConsistencyCheck::new(empirical, analytic, sigma)))
}

/// Compares the empirical clipped-`ΔI` mean with the quadrature key rate.
pub fn rate_consistency_check(
    stats: &SessionStats,
    params: &ChannelParams,
    grid: &GridSpec,
) -> Result<ConsistencyCheck> {
    let analytic = postselect::key_rate_single(params, grid)?.rate;
    Ok(ConsistencyCheck::new(stats.emp_rate, analytic, stats.emp_rate_std_err))
}

/// CDF of the effective amplitude, a half-normal with scale `√d / 2`.
pub fn amplitude_cdf(d: f64, e: f64) -> f64 {
    if e <= 0.0 {
        0.0
    } else {
        erf((2.0 / d).sqrt() * e)
    }
}

/// One-sample KS test of effective amplitudes against [`amplitude_cdf`] at the 1 % level.
pub fn amplitude_ks_test(samples: &mut [f64], d: f64) -> KsResult {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let nf = n as f64;
    let statistic = samples
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let cdf = amplitude_cdf(d, e);
            (cdf - i as f64 / nf).max((i + 1) as f64 / nf - cdf)
        })
        .fold(0.0, f64::max);
    let sqrt_n = nf.sqrt();
    let critical_1pct = KOLMOGOROV_99 / (sqrt_n + 0.12 + 0.11 / sqrt_n);
    KsResult {
        n,
        statistic,
        critical_1pct,
        passes: statistic < critical_1pct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eta: f64, d: f64) -> ChannelParams {
        ChannelParams::new(eta, d).unwrap()
    }

    #[test]
    fn same_seed_same_stats() {
        let p = params(0.5, 2.1);
        let a = run_session(&p, 40_000, 11).unwrap();
        let b = run_session(&p, 40_000, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.emp_rate.to_bits(), b.emp_rate.to_bits());
        let c = run_session(&p, 40_000, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streaming_matches_plain_run() {
        let p = params(0.5, 2.1);
        let mut count = 0u64;
        let mut selected = 0u64;
        let streamed = run_session_with_records(&p, 50_000, 3, |r| {
            count += 1;
            selected += u64::from(r.selected);
        })
        .unwrap();
        assert_eq!(streamed, run_session(&p, 50_000, 3).unwrap());
        assert_eq!(count, 50_000);
        assert_eq!(selected, streamed.n_selected);
    }

    #[test]
    fn record_invariants() {
        let p = params(0.5, 2.1);
        run_session_with_records(&p, 20_000, 5, |r| {
            assert!((r.alpha * r.theta.cos() - r.effective_amplitude()).abs() < 1e-12);
            assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&r.theta));
            assert_eq!(r.bit == 0, r.component() >= 0.0);
            let e = r.effective_amplitude();
            assert_eq!(r.selected, postselect::is_selected(0.5, e, r.x_out).unwrap());
        })
        .unwrap();
    }

    #[test]
    fn counts_add_up() {
        let s = run_session(&params(0.5, 2.1), 12_345, 1).unwrap();
        assert_eq!(s.n_total, 12_345);
        assert_eq!(s.x_basis.n + s.y_basis.n, s.n_total);
        assert_eq!(s.x_basis.n_selected + s.y_basis.n_selected, s.n_selected);
        assert!(s.n_errors_selected <= s.n_selected && s.n_selected <= s.n_total);
    }

    #[test]
    fn lossless_eve_guesses_at_random() {
        let s = run_session(&params(1.0, 2.1), 200_000, 9).unwrap();
        let rate = s.emp_eve_success_selected.unwrap();
        let sigma = (0.25 / s.n_selected as f64).sqrt();
        assert!((rate - 0.5).abs() <= 3.0 * sigma, "{rate}");
    }

    #[test]
    fn narrow_modulation_yields_no_key() {
        // For E → 0 both informations scale as E², so selection reduces to
        // |x| > √((1−η)/(4η)) = ½ at η = ½ while the key per event vanishes.
        let s = run_session(&params(0.5, 0.01), 100_000, 2).unwrap();
        assert!(s.emp_rate < 5e-3, "{}", s.emp_rate);
        let expected = 0.317_310_507_862_914_1; // P(|N(0, ¼)| > ½)
        let sigma = (expected * (1.0 - expected) / 100_000.0f64).sqrt();
        assert!((s.selected_fraction() - expected).abs() < 5.0 * sigma + 0.01);
    }

    #[test]
    fn lossless_channel_errs_less_overall() {
        let mut errors = [0u64; 2];
        for (slot, eta) in [1.0, 0.5].into_iter().enumerate() {
            run_session_with_records(&params(eta, 2.1), 200_000, 4, |r| {
                errors[slot] += u64::from(r.bob_bit() != r.bit);
            })
            .unwrap();
        }
        assert!(errors[0] < errors[1], "{errors:?}");
    }

    #[test]
    fn small_sessions_widen_sigma() {
        let p = params(0.5, 2.1);
        let grid = GridSpec::new(4.0, 4.0, 201, 401).unwrap();
        let small = run_session(&p, 100, 8).unwrap();
        let large = run_session(&p, 100_000, 8).unwrap();
        let cs = error_consistency_check(&small, &p, &grid).unwrap().unwrap();
        let cl = error_consistency_check(&large, &p, &grid).unwrap().unwrap();
        assert!(cs.sigma > 10.0 * cl.sigma);
        assert!(cs.agrees);
    }

    #[test]
    fn empty_session_is_rejected() {
        assert_eq!(run_session(&params(0.5, 2.1), 0, 1), Err(Error::EmptySession));
    }

    #[test]
    fn ks_rejects_wrong_width() {
        let mut good = Vec::new();
        let mut bad = Vec::new();
        run_session_with_records(&params(0.5, 2.1), 100_000, 21, |r| {
            if r.basis == Basis::X {
                good.push(r.effective_amplitude());
                bad.push(r.effective_amplitude());
            }
        })
        .unwrap();
        assert!(amplitude_ks_test(&mut good, 2.1).passes);
        assert!(!amplitude_ks_test(&mut bad, 2.5).passes);
    }

    #[test]
    fn amplitude_cdf_limits() {
        assert_eq!(amplitude_cdf(2.1, 0.0), 0.0);
        assert!((amplitude_cdf(2.1, 10.0) - 1.0).abs() < 1e-15);
    }
}
