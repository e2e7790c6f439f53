//! Per-channel information quantities for a binary coherent-state alphabet.
//!
//! For an effective channel with amplitude `E` the two signal states reach
//! Bob with displacement `±√η·E` and Eve with displacement `±√(1−η)·E`. Eve
//! is bounded by the accessible information of two pure states with overlap
//! `f`, Bob decodes the sign of his homodyne outcome.
//!
//! The checked functions validate their inputs and return [`Error`] on a
//! domain violation. The [`raw`] submodule holds the unchecked kernels used by
//! the integrators once a [`ChannelParams`] has been validated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `√(2/π)`, peak of a quadrature density with variance ¼.
pub const DENSITY_PEAK: f64 = 0.797_884_560_802_865_4;

/// Transmission and modulation width of one protocol configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    eta: f64,
    d: f64,
}

impl ChannelParams {
    pub fn new(eta: f64, d: f64) -> Result<Self> {
        check_eta(eta)?;
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::ModulationWidth(d));
        }
        Ok(Self { eta, d })
    }

    /// Builds parameters from a linear loss fraction `1 − η`.
    pub fn from_loss(loss: f64, d: f64) -> Result<Self> {
        Self::new(1.0 - loss, d)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn with_d(&self, d: f64) -> Result<Self> {
        Self::new(self.eta, d)
    }
}

/// A point `(E, x)` of the effective-channel plane, with `E ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveChannel {
    e: f64,
    x: f64,
}

impl EffectiveChannel {
    pub fn new(e: f64, x: f64) -> Result<Self> {
        check_amplitude(e)?;
        check_outcome(x)?;
        Ok(Self { e, x })
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn x(&self) -> f64 {
        self.x
    }
}

/// Every per-channel quantity at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoBreakdown {
    /// Overlap of Eve's two conditional states.
    pub f: f64,
    /// Eve's accessible information on Alice's bit.
    pub i_ae: f64,
    /// Bob's decoding error probability.
    pub p_e: f64,
    /// Alice–Bob mutual information.
    pub i_ab: f64,
    /// `i_ab − i_ae`.
    pub delta: f64,
}

impl InfoBreakdown {
    pub fn evaluate(eta: f64, channel: EffectiveChannel) -> Result<Self> {
        check_eta(eta)?;
        let (e, x) = (channel.e, channel.x);
        let f = raw::overlap(eta, e);
        let i_ae = raw::eve_info(eta, e);
        let p_e = raw::error_prob(eta, e, x);
        let i_ab = raw::bob_info(p_e);
        Ok(Self {
            f,
            i_ae,
            p_e,
            i_ab,
            delta: i_ab - i_ae,
        })
    }
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Transmission(eta))
    }
}

pub(crate) fn check_amplitude(e: f64) -> Result<()> {
    if e.is_finite() && e >= 0.0 {
        Ok(())
    } else {
        Err(Error::Amplitude(e))
    }
}

fn check_outcome(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Outcome(x))
    }
}

fn check_channel(eta: f64, e: f64) -> Result<()> {
    check_eta(eta)?;
    check_amplitude(e)
}

/// Overlap `exp(−2(1−η)E²)` of Eve's two conditional coherent states.
pub fn overlap(eta: f64, e: f64) -> Result<f64> {
    check_channel(eta, e)?;
    Ok(raw::overlap(eta, e))
}

/// Eve's accessible information in bits for two equiprobable pure states.
pub fn eve_info(eta: f64, e: f64) -> Result<f64> {
    check_channel(eta, e)?;
    Ok(raw::eve_info(eta, e))
}

/// Density of Bob's outcome `x` given Alice sent `bit` (0 ↦ `+√η·E`, 1 ↦ `−√η·E`).
pub fn bob_conditional_density(eta: f64, e: f64, x: f64, bit: u8) -> Result<f64> {
    check_channel(eta, e)?;
    check_outcome(x)?;
    let sign = match bit {
        0 => 1.0,
        1 => -1.0,
        other => return Err(Error::Bit(other)),
    };
    Ok(raw::gaussian(x, sign * eta.sqrt() * e))
}

/// Bob's sign-decoding error probability.
pub fn error_prob(eta: f64, e: f64, x: f64) -> Result<f64> {
    check_channel(eta, e)?;
    check_outcome(x)?;
    Ok(raw::error_prob(eta, e, x))
}

/// Error probability as the posterior of the minority hypothesis, formed
/// directly from the two conditional densities.
///
/// Returns `None` where both densities underflow and the ratio is `0/0`.
/// [`error_prob`] is the numerically stable equivalent.
pub fn error_prob_from_densities(eta: f64, e: f64, x: f64) -> Result<Option<f64>> {
    let p0 = bob_conditional_density(eta, e, x, 0)?;
    let p1 = bob_conditional_density(eta, e, x, 1)?;
    let total = p0 + p1;
    if total == 0.0 || !total.is_finite() {
        return Ok(None);
    }
    let minority = if x > 0.0 {
        p1
    } else if x < 0.0 {
        p0
    } else {
        return Ok(Some(0.5));
    };
    Ok(Some(minority / total))
}

/// Mutual information `1 − h(p_e)` of a binary symmetric channel.
pub fn bob_info(p_e: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p_e) {
        Ok(raw::bob_info(p_e))
    } else {
        Err(Error::Probability(p_e))
    }
}

/// `I_AB − I_AE` for one effective channel.
pub fn delta_info(eta: f64, e: f64, x: f64) -> Result<f64> {
    check_channel(eta, e)?;
    check_outcome(x)?;
    Ok(raw::delta_info(eta, e, x))
}

/// Probability that an optimal measurement identifies Eve's state correctly.
pub fn eve_helstrom_success(eta: f64, e: f64) -> Result<f64> {
    check_channel(eta, e)?;
    Ok(raw::eve_helstrom_success(eta, e))
}

/// Unchecked kernels. Callers guarantee `0 < η ≤ 1`, `E ≥ 0` and finite `x`.
pub mod raw {
    use std::f64::consts::LN_2;

    use super::DENSITY_PEAK;

    const TINY: f64 = 1e-300;

    #[inline]
    pub fn gaussian(x: f64, mean: f64) -> f64 {
        let u = x - mean;
        DENSITY_PEAK * (-2.0 * u * u).exp()
    }

    #[inline]
    pub fn overlap(eta: f64, e: f64) -> f64 {
        (-2.0 * (1.0 - eta) * e * e).exp()
    }

    /// Returns `(s, 1 − s)` with `s = √(1 − f²)`, both to full relative precision.
    #[inline]
    fn discrimination_gap(eta: f64, e: f64) -> (f64, f64) {
        let a = 2.0 * (1.0 - eta) * e * e;
        // 1 − f² = −expm1(−2a); 1 − s = f² / (1 + s)
        let s = (-(-2.0 * a).exp_m1()).sqrt();
        let f2 = (-2.0 * a).exp();
        (s, f2 / (1.0 + s))
    }

    #[inline]
    pub fn eve_info(eta: f64, e: f64) -> f64 {
        if eta == 1.0 || e == 0.0 {
            return 0.0;
        }
        let (s, one_minus_s) = discrimination_gap(eta, e);
        let upper = 0.5 * (1.0 + s) * s.ln_1p();
        let lower = if one_minus_s < TINY {
            0.0
        } else {
            0.5 * one_minus_s * one_minus_s.ln()
        };
        ((upper + lower) / LN_2).clamp(0.0, 1.0)
    }

    #[inline]
    pub fn eve_helstrom_success(eta: f64, e: f64) -> f64 {
        let (s, _) = discrimination_gap(eta, e);
        0.5 * (1.0 + s)
    }

    #[inline]
    pub fn error_prob(eta: f64, e: f64, x: f64) -> f64 {
        let z = 8.0 * eta.sqrt() * e * x.abs();
        // exp(−z)/(1 + exp(−z)) never overflows
        let t = (-z).exp();
        t / (1.0 + t)
    }

    #[inline]
    pub fn bob_info(p: f64) -> f64 {
        let q = 1.0 - p;
        let a = if p < TINY { 0.0 } else { p * p.ln() };
        let b = if q < TINY { 0.0 } else { q * (-p).ln_1p() };
        (1.0 + (a + b) / LN_2).clamp(0.0, 1.0)
    }

    #[inline]
    pub fn delta_info(eta: f64, e: f64, x: f64) -> f64 {
        bob_info(error_prob(eta, e, x)) - eve_info(eta, e)
    }
}
