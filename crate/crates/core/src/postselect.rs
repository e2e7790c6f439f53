//! Selection of secure effective channels and the key-rate integral.
//!
//! Channel uses are weighted by the joint density of effective amplitude and
//! Bob's outcome. The key rate per raw channel use integrates `I_AB − I_AE`
//! against that density over the channels where the difference is positive.
//! Both integrands are even in `x`, so only `x ≥ 0` is evaluated and doubled.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherent_info::{self, raw, ChannelParams, DENSITY_PEAK};
use crate::error::{Error, Result};
use crate::optimize::golden_section_max;
use crate::quadrature::{linspace, simpson_weights};

/// Relative change under node doubling above which a rate is not converged.
pub const CONVERGENCE_TOLERANCE: f64 = 5e-3;

/// Default modulation-width search interval for [`optimize_d`].
pub const DEFAULT_D_INTERVAL: (f64, f64) = (0.1, 10.0);

/// Bracket width at which the width search stops.
pub const D_TOLERANCE: f64 = 1e-3;

const SCAN_POINTS: usize = 25;
const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// Integration box `E ∈ [0, e_max]`, `x ∈ [−x_max, x_max]` and node counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub e_max: f64,
    pub x_max: f64,
    pub n_e: usize,
    pub n_x: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            e_max: 4.0,
            x_max: 4.0,
            n_e: 801,
            n_x: 1601,
        }
    }
}

impl GridSpec {
    pub fn new(e_max: f64, x_max: f64, n_e: usize, n_x: usize) -> Result<Self> {
        let grid = Self { e_max, x_max, n_e, n_x };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_max.is_finite() && self.e_max > 0.0) {
            return Err(Error::Grid(format!("e_max must be positive, got {}", self.e_max)));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(Error::Grid(format!("x_max must be positive, got {}", self.x_max)));
        }
        if self.n_e < 2 || self.n_x < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 nodes per axis, got n_e = {}, n_x = {}",
                self.n_e, self.n_x
            )));
        }
        Ok(())
    }

    /// The same box with every interval halved.
    pub fn refined(&self) -> Self {
        Self {
            n_e: 2 * (self.n_e - 1) + 1,
            n_x: 2 * (self.n_x - 1) + 1,
            ..*self
        }
    }

    pub fn e_nodes(&self) -> Vec<f64> {
        linspace(0.0, self.e_max, self.n_e)
    }

    /// Symmetric `x` nodes; mirrored pairs are exact negatives of each other.
    pub fn x_nodes(&self) -> Vec<f64> {
        let n = self.n_x;
        let mut nodes = linspace(-self.x_max, self.x_max, n);
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        for k in n.div_ceil(2)..n {
            nodes[k] = -nodes[n - 1 - k];
        }
        nodes
    }

    /// Node count of the `x ≥ 0` half grid; matches the non-negative nodes
    /// of [`GridSpec::x_nodes`] when `n_x` is odd.
    fn half_x_nodes(&self) -> usize {
        self.n_x / 2 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateResult {
    /// Secure bits per raw channel use, `R_k / R_r`.
    pub rate: f64,
    /// Probability mass of the selected channels.
    pub selected_mass: f64,
    #[serde(rename = "d")]
    pub d_used: f64,
    #[serde(rename = "eta")]
    pub eta_used: f64,
    pub grid: GridSpec,
    /// Whether halving every interval moved `rate` by at most 0.5 %.
    pub converged: bool,
}

/// `ΔI` tabulated on a grid, plus the selection threshold of each `E` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMapGrid {
    pub eta: f64,
    pub e: Vec<f64>,
    pub x: Vec<f64>,
    /// Row-major, `values[i * x.len() + j]` at `(e[i], x[j])`.
    pub values: Vec<f64>,
    pub boundary: Vec<Option<f64>>,
}

impl InfoMapGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.x.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.x.len();
        &self.values[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub d: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub d_star: f64,
    pub result: KeyRateResult,
    /// The maximum sits at an end of the search interval.
    pub on_boundary: bool,
    /// The coarse scan showed a single interior peak or a monotone profile.
    pub unimodal: bool,
    pub scan: Vec<ScanPoint>,
}

/// Probability density of a channel use landing at `(E, x)`, folded onto `E ≥ 0`.
pub fn joint_density(params: &ChannelParams, e: f64, x: f64) -> Result<f64> {
    coherent_info::check_amplitude(e)?;
    if !x.is_finite() {
        return Err(Error::Outcome(x));
    }
    Ok(amplitude_density(params.d(), e) * outcome_density(params.eta(), e, x))
}

/// Folded Gaussian of effective amplitudes, `2·√(2/(dπ))·exp(−2E²/d)`.
fn amplitude_density(d: f64, e: f64) -> f64 {
    2.0 * DENSITY_PEAK / d.sqrt() * (-2.0 * e * e / d).exp()
}

/// Bob's outcome density averaged over the two equiprobable bits.
fn outcome_density(eta: f64, e: f64, x: f64) -> f64 {
    let m = eta.sqrt() * e;
    0.5 * (raw::gaussian(x, m) + raw::gaussian(x, -m))
}

/// Whether the channel `(E, x)` carries more information to Bob than to Eve.
pub fn is_selected(eta: f64, e: f64, x: f64) -> Result<bool> {
    Ok(coherent_info::delta_info(eta, e, x)? > 0.0)
}

/// Outcome magnitude `x* ≥ 0` at which `ΔI` changes sign for amplitude `E`.
///
/// `None` when no outcome is ever selected (`E = 0`, or Eve's information
/// saturates at one bit).
pub fn boundary_x(eta: f64, e: f64) -> Result<Option<f64>> {
    coherent_info::check_eta(eta)?;
    coherent_info::check_amplitude(e)?;
    Ok(raw_boundary_x(eta, e))
}

fn raw_boundary_x(eta: f64, e: f64) -> Option<f64> {
    if e == 0.0 {
        return None;
    }
    let delta = |x: f64| raw::delta_info(eta, e, x);
    if delta(0.0) >= 0.0 {
        return Some(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while delta(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return None;
        }
    }
    while hi - lo > BOUNDARY_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if delta(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Default, Clone, Copy)]
struct Integrals {
    /// `∬ p · max(ΔI, 0)`
    rate: f64,
    /// `∬_S p`
    selected_mass: f64,
    /// `∬_S p · p_e`
    selected_error: f64,
    /// `∬ p`
    total_mass: f64,
}

impl Integrals {
    fn scaled_add(&mut self, w: f64, other: &Integrals) {
        self.rate += w * other.rate;
        self.selected_mass += w * other.selected_mass;
        self.selected_error += w * other.selected_error;
        self.total_mass += w * other.total_mass;
    }
}

/// Tensor-product Simpson integration over the grid, exploiting `x → −x`.
///
/// Rows are evaluated in parallel and reduced in row order, so the result
/// does not depend on the thread count.
fn integrate(params: &ChannelParams, grid: &GridSpec) -> Integrals {
    let (eta, d) = (params.eta(), params.d());
    let e_nodes = grid.e_nodes();
    let e_weights = simpson_weights(grid.n_e, grid.e_max / (grid.n_e - 1) as f64);
    let m = grid.half_x_nodes();
    let x_nodes = linspace(0.0, grid.x_max, m);
    let x_weights = simpson_weights(m, grid.x_max / (m - 1) as f64);

    let rows: Vec<Integrals> = e_nodes
        .par_iter()
        .map(|&e| {
            let i_ae = raw::eve_info(eta, e);
            let pe_weight = amplitude_density(d, e);
            let mut row = Integrals::default();
            for (&x, &w) in x_nodes.iter().zip(&x_weights) {
                let p = pe_weight * outcome_density(eta, e, x);
                let p_e = raw::error_prob(eta, e, x);
                let delta = raw::bob_info(p_e) - i_ae;
                row.total_mass += w * p;
                if delta > 0.0 {
                    row.rate += w * p * delta;
                    row.selected_mass += w * p;
                    row.selected_error += w * p * p_e;
                }
            }
            row
        })
        .collect();

    let mut total = Integrals::default();
    for (row, &w) in rows.iter().zip(&e_weights) {
        total.scaled_add(2.0 * w, row);
    }
    total
}

fn validate(params: &ChannelParams, grid: &GridSpec) -> Result<()> {
    ChannelParams::new(params.eta(), params.d())?;
    grid.validate()
}

fn result_from(params: &ChannelParams, grid: &GridSpec, integrals: &Integrals, converged: bool) -> KeyRateResult {
    KeyRateResult {
        rate: integrals.rate.max(0.0),
        selected_mass: integrals.selected_mass.clamp(0.0, 1.0),
        d_used: params.d(),
        eta_used: params.eta(),
        grid: *grid,
        converged,
    }
}

fn relative_change(coarse: f64, fine: f64) -> f64 {
    if coarse == fine {
        0.0
    } else {
        (fine - coarse).abs() / coarse.abs().max(fine.abs())
    }
}

/// Key rate `R_k / R_r` on `grid`, checked against the same box with halved intervals.
pub fn key_rate(params: &ChannelParams, grid: &GridSpec) -> Result<KeyRateResult> {
    validate(params, grid)?;
    let coarse = integrate(params, grid);
    let fine = integrate(params, &grid.refined());
    let change = relative_change(coarse.rate, fine.rate);
    let converged = change <= CONVERGENCE_TOLERANCE;
    if !converged {
        warn!(
            "key rate not converged at eta = {}, d = {}: node doubling moved it by {:.3} %",
            params.eta(),
            params.d(),
            100.0 * change
        );
    }
    Ok(result_from(params, grid, &coarse, converged))
}

/// Key rate on `grid` without the refinement check; `converged` is `false`.
pub fn key_rate_single(params: &ChannelParams, grid: &GridSpec) -> Result<KeyRateResult> {
    validate(params, grid)?;
    Ok(result_from(params, grid, &integrate(params, grid), false))
}

/// Key rate obtained by integrating each `E` row only over `|x| ≥ x*(E)`.
///
/// Independent of the positive-part clipping in [`key_rate`]: the selection
/// region is located by bisection and each row gets its own node set.
pub fn key_rate_by_boundary(params: &ChannelParams, grid: &GridSpec) -> Result<f64> {
    validate(params, grid)?;
    let (eta, d) = (params.eta(), params.d());
    let e_nodes = grid.e_nodes();
    let e_weights = simpson_weights(grid.n_e, grid.e_max / (grid.n_e - 1) as f64);
    let m = grid.half_x_nodes();

    let rows: Vec<f64> = e_nodes
        .par_iter()
        .map(|&e| match raw_boundary_x(eta, e) {
            Some(start) if start < grid.x_max => {
                let i_ae = raw::eve_info(eta, e);
                let weight = amplitude_density(d, e);
                let h = (grid.x_max - start) / (m - 1) as f64;
                linspace(start, grid.x_max, m)
                    .into_iter()
                    .zip(simpson_weights(m, h))
                    .map(|(x, w)| {
                        let delta = raw::bob_info(raw::error_prob(eta, e, x)) - i_ae;
                        w * weight * outcome_density(eta, e, x) * delta.max(0.0)
                    })
                    .sum()
            }
            _ => 0.0,
        })
        .collect();

    Ok(rows.iter().zip(&e_weights).map(|(r, w)| 2.0 * w * r).sum())
}

/// Total probability mass of [`joint_density`] inside the grid box.
pub fn density_mass(params: &ChannelParams, grid: &GridSpec) -> Result<f64> {
    validate(params, grid)?;
    Ok(integrate(params, grid).total_mass)
}

/// Bob's error rate conditioned on selection, `∬_S p·p_e / ∬_S p`.
///
/// Returns `None` when nothing is selected.
pub fn selection_conditioned_error(params: &ChannelParams, grid: &GridSpec) -> Result<Option<f64>> {
    validate(params, grid)?;
    let integrals = integrate(params, grid);
    Ok((integrals.selected_mass > 0.0).then(|| integrals.selected_error / integrals.selected_mass))
}

/// `ΔI` on every grid node together with the per-row boundary.
pub fn info_map(eta: f64, grid: &GridSpec) -> Result<InfoMapGrid> {
    coherent_info::check_eta(eta)?;
    grid.validate()?;
    let e = grid.e_nodes();
    let x = grid.x_nodes();

    let rows: Vec<(Vec<f64>, Option<f64>)> = e
        .par_iter()
        .map(|&ei| {
            let i_ae = raw::eve_info(eta, ei);
            let values = x
                .iter()
                .map(|&xj| raw::bob_info(raw::error_prob(eta, ei, xj)) - i_ae)
                .collect();
            (values, raw_boundary_x(eta, ei))
        })
        .collect();

    let mut values = Vec::with_capacity(e.len() * x.len());
    let mut boundary = Vec::with_capacity(e.len());
    for (row, b) in rows {
        values.extend(row);
        boundary.push(b);
    }
    Ok(InfoMapGrid {
        eta,
        e,
        x,
        values,
        boundary,
    })
}

/// Maximizes the key rate over the modulation width `d` within `interval`.
///
/// A coarse scan locates the peak and checks the profile for a single
/// maximum. Golden-section search then refines inside the bracketing scan
/// cells to [`D_TOLERANCE`], and the rate at the optimum gets the full
/// convergence check.
pub fn optimize_d(eta: f64, grid: &GridSpec, interval: (f64, f64)) -> Result<OptimizeResult> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(Error::Interval { lo, hi });
    }
    let base = ChannelParams::new(eta, lo)?;
    grid.validate()?;
    let rate_at = |d: f64| integrate(&ChannelParams::new(eta, d).unwrap_or(base), grid).rate;

    let scan: Vec<ScanPoint> = linspace(lo, hi, SCAN_POINTS)
        .into_iter()
        .map(|d| ScanPoint { d, rate: rate_at(d) })
        .collect();

    let best = scan
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.rate.total_cmp(&b.1.rate))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let peaks = scan
        .windows(3)
        .filter(|w| w[1].rate > w[0].rate && w[1].rate > w[2].rate)
        .count();
    let unimodal = peaks <= 1;
    if !unimodal {
        warn!("rate(d) at eta = {eta} shows {peaks} interior peaks on [{lo}, {hi}]; refining the highest");
    }

    let left = scan[best.saturating_sub(1)].d;
    let right = scan[(best + 1).min(SCAN_POINTS - 1)].d;
    let refined = golden_section_max(rate_at, left, right, D_TOLERANCE);
    let d_star = refined.x;

    let on_boundary = (best == 0 && d_star - lo <= D_TOLERANCE)
        || (best == SCAN_POINTS - 1 && hi - d_star <= D_TOLERANCE);
    if on_boundary {
        warn!("optimal d = {d_star:.4} at eta = {eta} lies on the search interval boundary [{lo}, {hi}]");
    }

    let result = key_rate(&ChannelParams::new(eta, d_star)?, grid)?;
    Ok(OptimizeResult {
        d_star,
        result,
        on_boundary,
        unimodal,
        scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coarse() -> GridSpec {
        GridSpec::new(4.0, 4.0, 201, 401).unwrap()
    }

    #[test]
    fn joint_density_values() {
        let p = ChannelParams::new(0.37, 2.0).unwrap();
        // 2·√(1/π)·√(2/π), independent of eta
        assert_abs_diff_eq!(joint_density(&p, 0.0, 0.0).unwrap(), 0.900_316_316_157_106_1, epsilon = 1e-15);
        assert!(joint_density(&p, -1.0, 0.0).is_err());
    }

    #[test]
    fn x_marginal_is_amplitude_density() {
        let p = ChannelParams::new(0.5, 2.1).unwrap();
        for e in [0.0, 0.4, 1.0, 2.5] {
            let marginal = crate::quadrature::simpson(|x| joint_density(&p, e, x).unwrap(), -12.0, 12.0, 4001);
            assert_abs_diff_eq!(marginal, amplitude_density(2.1, e), epsilon = 1e-12);
        }
    }

    #[test]
    fn selection_examples() {
        assert!(!is_selected(0.5, 1.0, 0.5).unwrap());
        assert!(is_selected(0.5, 1.0, 0.6).unwrap());
        assert!(!is_selected(0.5, 1.0, -0.5).unwrap());
        assert!(is_selected(0.5, 1.0, -0.6).unwrap());
        for x in [-3.0, 0.0, 0.7, 10.0] {
            assert!(!is_selected(0.3, 0.0, x).unwrap());
        }
    }

    #[test]
    fn boundary_examples() {
        let x_star = boundary_x(0.5, 1.0).unwrap().unwrap();
        assert!(x_star > 0.5 && x_star < 0.6);
        // root of ΔI found independently to 40 digits
        assert_abs_diff_eq!(x_star, 0.585_998_642_019_744_3, epsilon = 2e-9);
        assert_eq!(boundary_x(1.0, 1.0).unwrap(), Some(0.0));
        assert_eq!(boundary_x(0.5, 0.0).unwrap(), None);
        // Eve's information rounds to a full bit
        assert_eq!(boundary_x(0.5, 30.0).unwrap(), None);
    }

    #[test]
    fn boundary_separates_selection() {
        for e in [0.05, 0.3, 1.0, 1.7, 3.2] {
            let x_star = boundary_x(0.25, e).unwrap().unwrap();
            for k in 0..50 {
                let x = k as f64 * 0.13;
                if x < x_star - 1e-6 {
                    assert!(!is_selected(0.25, e, x).unwrap());
                    assert!(!is_selected(0.25, e, -x).unwrap());
                } else if x > x_star + 1e-6 {
                    assert!(is_selected(0.25, e, x).unwrap());
                    assert!(is_selected(0.25, e, -x).unwrap());
                }
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(0.0, 4.0, 10, 10).is_err());
        assert!(GridSpec::new(4.0, -1.0, 10, 10).is_err());
        assert!(GridSpec::new(4.0, 4.0, 1, 10).is_err());
        assert!(GridSpec::new(4.0, 4.0, 10, 1).is_err());
        let g = GridSpec::default().refined();
        assert_eq!((g.n_e, g.n_x), (1601, 3201));
    }

    #[test]
    fn x_nodes_are_mirrored() {
        for n in [2, 3, 10, 11, 1601] {
            let g = GridSpec::new(1.0, 3.7, 2, n).unwrap();
            let x = g.x_nodes();
            for k in 0..n {
                assert_eq!(x[k], -x[n - 1 - k]);
            }
        }
    }

    #[test]
    fn rate_bounded_by_selected_mass() {
        for eta in [0.25, 0.5, 1.0] {
            let r = key_rate_single(&ChannelParams::new(eta, 2.1).unwrap(), &coarse()).unwrap();
            assert!(r.rate >= 0.0 && r.rate <= r.selected_mass && r.selected_mass <= 1.0);
        }
    }

    #[test]
    fn lossless_rate_dominates() {
        let r1 = key_rate_single(&ChannelParams::new(1.0, 2.1).unwrap(), &coarse()).unwrap();
        let r5 = key_rate_single(&ChannelParams::new(0.5, 2.1).unwrap(), &coarse()).unwrap();
        assert!(r1.rate > 0.0 && r1.rate > r5.rate);
    }

    #[test]
    fn tiny_width_selects_nothing_worthwhile() {
        let r = key_rate_single(&ChannelParams::new(0.5, 1e-4).unwrap(), &coarse()).unwrap();
        assert!(r.rate < 1e-6);
    }

    #[test]
    fn clipping_and_boundary_routes_agree() {
        for eta in [0.25, 0.5, 0.8] {
            let p = ChannelParams::new(eta, 2.1).unwrap();
            let clipped = key_rate_single(&p, &GridSpec::default()).unwrap().rate;
            let bounded = key_rate_by_boundary(&p, &GridSpec::default()).unwrap();
            assert!((clipped - bounded).abs() <= 1e-3 * bounded, "{clipped} vs {bounded}");
        }
    }

    #[test]
    fn info_map_shape_and_symmetry() {
        let g = GridSpec::new(2.0, 2.0, 21, 41).unwrap();
        let map = info_map(0.5, &g).unwrap();
        assert_eq!(map.values.len(), 21 * 41);
        assert_eq!(map.boundary.len(), 21);
        assert!(map.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(map.boundary[0], None);
        for i in 0..21 {
            for j in 0..41 {
                assert_eq!(map.value(i, j), map.value(i, 40 - j));
            }
        }
        // E = 1 row: x = 0.6 selected, x = 0.5 not
        let i = 10;
        assert_eq!(map.e[i], 1.0);
        let j6 = map.x.iter().position(|&x| (x - 0.6).abs() < 1e-12).unwrap();
        let j5 = map.x.iter().position(|&x| (x - 0.5).abs() < 1e-12).unwrap();
        assert!(map.value(i, j6) > 0.0 && map.value(i, j5) < 0.0);
    }

    #[test]
    fn optimizer_rejects_bad_interval() {
        assert!(optimize_d(0.5, &coarse(), (0.0, 3.0)).is_err());
        assert!(optimize_d(0.5, &coarse(), (3.0, 1.0)).is_err());
    }

    #[test]
    fn optimizer_flags_boundary_for_lossless_channel() {
        let g = GridSpec::new(4.0, 4.0, 101, 201).unwrap();
        let opt = optimize_d(1.0, &g, (0.5, 4.0)).unwrap();
        assert!(opt.on_boundary);
        let reference = key_rate_single(&ChannelParams::new(1.0, 2.1).unwrap(), &g).unwrap();
        assert!(opt.result.rate >= reference.rate);
    }
}
