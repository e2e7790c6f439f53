//! Secure key rates for coherent-state continuous-variable QKD with
//! postselection, evaluated against the beamsplitter attack.
//!
//! Every quantity is resolved per *effective channel* `(E, x)`: the effective
//! amplitude `E = α cos θ` of Alice's signal pair and Bob's homodyne outcome
//! `x`. Alice and Bob keep a channel use when their mutual information exceeds
//! Eve's accessible information, which lets the protocol produce key beyond
//! 50 % line loss.
//!
//! * [`coherent_info`] — closed-form per-channel information quantities.
//! * [`postselect`] — selection region, key-rate integral and width optimizer.
//! * [`montecarlo`] — event-level protocol simulation for cross-validation.
//!
//! Quadrature variables use the vacuum-variance-¼ convention throughout and
//! all informations are in bits.

pub mod coherent_info;
mod error;
pub mod montecarlo;
pub mod optimize;
pub mod postselect;
pub mod quadrature;

pub use coherent_info::{ChannelParams, EffectiveChannel, InfoBreakdown};
pub use error::{Error, Result};
pub use montecarlo::{SessionStats, SignalRecord};
pub use postselect::{GridSpec, InfoMapGrid, KeyRateResult};
