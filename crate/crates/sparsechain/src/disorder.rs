//! Disorder sampling: per-site pinning frequencies and the sparse 0/1 mask
//! that switches the quartic interaction on or off.
//!
//! Each site draws from its own counter-based stream, so a realization can be
//! regenerated bit-identically from its spec, in parallel, and conditioning a
//! stretch of the mask never changes the frequency stream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Law of the per-site frequency omega_x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaLaw {
    /// Uniform on [min, max]. The classical chain requires min > 0.
    Uniform { min: f64, max: f64 },
}

impl OmegaLaw {
    fn sample(&self, u: f64) -> f64 {
        match *self {
            OmegaLaw::Uniform { min, max } => min + (max - min) * u,
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            OmegaLaw::Uniform { min, .. } => min,
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            OmegaLaw::Uniform { max, .. } => max,
        }
    }
}

/// Everything needed to regenerate a disorder realization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisorderSpec {
    /// Number of sites.
    pub l: usize,
    /// Probability that a site carries the quartic interaction (tau_x = 1).
    pub p: f64,
    pub omega_law: OmegaLaw,
    pub seed: u64,
}

/// The laboratory defaults used throughout: 256 sites, half of them
/// interacting, pinning frequencies uniform in [0.5, 1.5].
impl Default for DisorderSpec {
    fn default() -> Self {
        DisorderSpec {
            l: 256,
            p: 0.5,
            omega_law: OmegaLaw::Uniform { min: 0.5, max: 1.5 },
            seed: 1,
        }
    }
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::config("disorder: chain length must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::config(format!(
                "disorder: interaction density p must lie in [0, 1], got {}",
                self.p
            )));
        }
        let (lo, hi) = (self.omega_law.min(), self.omega_law.max());
        if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || lo > hi {
            return Err(Error::config(format!(
                "disorder: omega law needs 0 <= min <= max, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// A sampled disorder configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub spec: DisorderSpec,
    /// Per-site frequencies omega_x (not squared).
    pub omega: Vec<f64>,
    /// Per-site interaction mask, 0 or 1.
    pub tau: Vec<u8>,
}

impl DisorderRealization {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Fail unless all frequencies are strictly positive (classical model).
    pub fn require_positive_frequencies(&self) -> Result<()> {
        match self.omega.iter().cloned().fold(f64::INFINITY, f64::min) {
            m if m > 0.0 => Ok(()),
            m => Err(Error::contract(format!(
                "classical chain needs omega_x > 0 everywhere, min is {m}"
            ))),
        }
    }

    /// True if tau vanishes on the closed window [lo, hi].
    pub fn is_zero_stretch(&self, lo: usize, hi: usize) -> bool {
        lo <= hi && hi < self.tau.len() && self.tau[lo..=hi].iter().all(|&t| t == 0)
    }
}

/// Sample a realization from its spec. Bit-reproducible: the value at site x
/// depends only on (seed, x, stream), never on the other sites.
pub fn sample_disorder(spec: &DisorderSpec) -> Result<DisorderRealization> {
    spec.validate()?;
    let mut omega = Vec::with_capacity(spec.l);
    let mut tau = Vec::with_capacity(spec.l);
    for x in 0..spec.l {
        omega.push(spec.omega_law.sample(rng::uniform(spec.seed, x as u64, Stream::Omega)));
        let u = rng::uniform(spec.seed, x as u64, Stream::Tau);
        tau.push(u8::from(u < spec.p));
    }
    Ok(DisorderRealization {
        spec: *spec,
        omega,
        tau,
    })
}

/// Force tau = 0 on the closed window [lo, hi], leaving omega untouched.
/// Idempotent; models conditioning on a non-interacting stretch.
pub fn condition_zero_stretch(
    real: &DisorderRealization,
    lo: usize,
    hi: usize,
) -> Result<DisorderRealization> {
    if lo > hi || hi >= real.len() {
        return Err(Error::Index(format!(
            "zero-stretch window [{lo}, {hi}] out of bounds for length {}",
            real.len()
        )));
    }
    let mut out = real.clone();
    for t in &mut out.tau[lo..=hi] {
        *t = 0;
    }
    Ok(out)
}
