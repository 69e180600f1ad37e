//! Rare anharmonicity-free regions: locating them, the statistics of their
//! spacings, and the transport exponent predicted from their density and the
//! localization length.
//!
//! A site x is a candidate at half-width ell when tau vanishes on the whole
//! window [x-ell, x+ell] (so the window also has to fit inside the chain).
//! The kept set additionally demands a small splitting edge mass r_x, by
//! default r_x <= ell^2 exp(-ell / xi).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{sample_disorder, DisorderRealization, DisorderSpec, OmegaLaw};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::splitting::site_r;

/// Candidate sites: tau-free windows of half-width ell, fully inside the chain.
pub fn candidate_sites(real: &DisorderRealization, ell: usize) -> Vec<usize> {
    let l = real.len();
    if 2 * ell >= l {
        return Vec::new();
    }
    // running length of the tau-free suffix ending at each site
    let mut run = 0usize;
    let mut out = Vec::new();
    for y in 0..l {
        if real.tau[y] == 0 {
            run += 1;
        } else {
            run = 0;
        }
        // window [x-ell, x+ell] ends at y when x = y - ell
        if run >= 2 * ell + 1 {
            out.push(y - ell);
        }
    }
    out
}

/// How to turn candidates into the kept set.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GriffithsOptions {
    /// Localization length used by the default edge-mass threshold.
    pub xi: f64,
    /// Replace the default threshold ell^2 exp(-ell/xi) with a fixed value.
    pub threshold_override: Option<f64>,
    /// Apply the edge-mass filter at all (when false the kept set is the
    /// candidate set and no operators are diagonalized).
    pub apply_r_filter: bool,
}

impl GriffithsOptions {
    pub fn with_xi(xi: f64) -> Self {
        GriffithsOptions {
            xi,
            threshold_override: None,
            apply_r_filter: true,
        }
    }

    pub fn unfiltered() -> Self {
        GriffithsOptions {
            xi: f64::INFINITY,
            threshold_override: None,
            apply_r_filter: false,
        }
    }

    pub fn threshold(&self, ell: usize) -> f64 {
        self.threshold_override
            .unwrap_or((ell * ell) as f64 * (-(ell as f64) / self.xi).exp())
    }

    fn validate(&self) -> Result<()> {
        if self.apply_r_filter && self.threshold_override.is_none() && !(self.xi > 0.0) {
            return Err(Error::config(format!(
                "edge-mass filter needs xi > 0 (or an explicit threshold), got xi = {}",
                self.xi
            )));
        }
        if let Some(t) = self.threshold_override {
            if !(t >= 0.0) {
                return Err(Error::config(format!("threshold must be >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// The kept rare-region sites of one realization.
#[derive(Clone, Debug)]
pub struct GriffithsSet {
    pub ell: usize,
    /// Candidates before the edge-mass filter, ascending.
    pub candidates: Vec<usize>,
    /// Kept sites, ascending.
    pub sites: Vec<usize>,
    /// Threshold actually applied (None when the filter was off).
    pub threshold: Option<f64>,
    /// Edge masses aligned with `candidates` (empty when the filter was off).
    pub r_values: Vec<f64>,
}

/// Locate the rare-region sites of `real` at half-width `ell`.
pub fn griffiths_sites(
    real: &DisorderRealization,
    ell: usize,
    coupling: f64,
    opts: &GriffithsOptions,
) -> Result<GriffithsSet> {
    if ell == 0 {
        return Err(Error::config("half-width ell must be at least 1"));
    }
    opts.validate()?;
    let candidates = candidate_sites(real, ell);
    if !opts.apply_r_filter {
        return Ok(GriffithsSet {
            ell,
            sites: candidates.clone(),
            candidates,
            threshold: None,
            r_values: Vec::new(),
        });
    }
    let threshold = opts.threshold(ell);
    let r_values: Vec<f64> = candidates
        .par_iter()
        .map(|&x| site_r(real, x, ell, coupling))
        .collect::<Result<Vec<_>>>()?;
    let sites = candidates
        .iter()
        .zip(&r_values)
        .filter(|&(_, &r)| r <= threshold)
        .map(|(&x, _)| x)
        .collect();
    Ok(GriffithsSet {
        ell,
        candidates,
        sites,
        threshold: Some(threshold),
        r_values,
    })
}

/// Spacings of consecutive kept sites.
pub fn gaps(sites: &[usize]) -> Vec<usize> {
    sites.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Site of `sites` closest to `target`; ties go to the smaller site.
pub fn nearest_site(sites: &[usize], target: usize) -> Option<usize> {
    if sites.is_empty() {
        return None;
    }
    let idx = sites.partition_point(|&s| s < target);
    let mut best = None::<usize>;
    for cand in [idx.checked_sub(1), Some(idx)] {
        let Some(i) = cand else { continue };
        if i >= sites.len() {
            continue;
        }
        let s = sites[i];
        let d = s.abs_diff(target);
        best = match best {
            None => Some(s),
            Some(b) => {
                let bd = b.abs_diff(target);
                if d < bd || (d == bd && s < b) {
                    Some(s)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Reference spacing scale (1-p)^(-3 ell).
pub fn d0(p: f64, ell: usize) -> f64 {
    (1.0 - p).powi(-(3 * ell as i32))
}

/// Tail bound exp(-d / d0), meaningful for d >= 2 ell + 2.
pub fn survival_bound(p: f64, ell: usize, d: usize) -> f64 {
    (-(d as f64) / d0(p, ell)).exp()
}

/// Sharper tail bound from block independence:
/// exp(-d (1-p)^(2 ell + 1) / (4 (ell + 1))).
pub fn block_survival_bound(p: f64, ell: usize, d: usize) -> f64 {
    let q = (1.0 - p).powi(2 * ell as i32 + 1);
    (-(d as f64) * q / (4.0 * (ell as f64 + 1.0))).exp()
}

/// Lower bound on the density of kept sites: (1-p)^(2 ell + 1) / 2.
pub fn density_bound(p: f64, ell: usize) -> f64 {
    0.5 * (1.0 - p).powi(2 * ell as i32 + 1)
}

/// Parameters of the spacing-tail experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapTailSpec {
    pub l: usize,
    pub p: f64,
    pub omega_law: OmegaLaw,
    pub ells: Vec<usize>,
    pub realizations: usize,
    pub seed: u64,
    pub coupling: f64,
    pub options: GriffithsOptions,
}

/// Spacing statistics at one half-width.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapTailResult {
    pub ell: usize,
    pub d0: f64,
    pub n_sites: usize,
    pub n_gaps: usize,
    /// Kept-site density per usable site, with the binomial standard error.
    pub density: f64,
    pub density_stderr: f64,
    pub density_lower_bound: f64,
    /// Sorted spacings (ascending).
    pub sorted_gaps: Vec<usize>,
    /// Largest value of (empirical survival) - exp(-d/d0) over d >= 2 ell + 2;
    /// the tail bound holds when this is <= 0.
    pub max_violation: f64,
    /// Same against the block-independence bound.
    pub max_block_violation: f64,
}

impl GapTailResult {
    /// Empirical survival P(gap >= d).
    pub fn survival(&self, d: usize) -> f64 {
        if self.sorted_gaps.is_empty() {
            return 0.0;
        }
        let below = self.sorted_gaps.partition_point(|&g| g < d);
        (self.sorted_gaps.len() - below) as f64 / self.sorted_gaps.len() as f64
    }
}

/// Pool spacings over many realizations and compare their tail against the
/// closed-form bounds.
pub fn gap_tail(spec: &GapTailSpec) -> Result<Vec<GapTailResult>> {
    if spec.realizations == 0 {
        return Err(Error::config("need at least one realization"));
    }
    if !(spec.p > 0.0 && spec.p < 1.0) {
        return Err(Error::config(format!(
            "spacing statistics need 0 < p < 1, got {}",
            spec.p
        )));
    }
    let mut ells = spec.ells.clone();
    ells.sort_unstable();
    ells.dedup();
    if ells.is_empty() || ells[0] == 0 {
        return Err(Error::config("need half-widths >= 1"));
    }
    let ell_max = *ells.last().expect("nonempty");
    if spec.l < 10 * (2 * ell_max + 1) {
        return Err(Error::config(format!(
            "chain length {} too short for half-width {ell_max}",
            spec.l
        )));
    }

    struct PerMember {
        gaps_by_ell: Vec<Vec<usize>>,
        count_by_ell: Vec<usize>,
    }

    let members: Vec<PerMember> = (0..spec.realizations)
        .into_par_iter()
        .map(|m| -> Result<PerMember> {
            let dspec = DisorderSpec {
                l: spec.l,
                p: spec.p,
                omega_law: spec.omega_law,
                seed: rng::derive_seed(spec.seed, m as u64, Stream::Member),
            };
            let real = sample_disorder(&dspec)?;
            let mut gaps_by_ell = Vec::with_capacity(ells.len());
            let mut count_by_ell = Vec::with_capacity(ells.len());
            for &ell in &ells {
                let set = griffiths_sites(&real, ell, spec.coupling, &spec.options)?;
                gaps_by_ell.push(gaps(&set.sites));
                count_by_ell.push(set.sites.len());
            }
            Ok(PerMember {
                gaps_by_ell,
                count_by_ell,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(ells.len());
    for (i, &ell) in ells.iter().enumerate() {
        let mut pooled: Vec<usize> = members
            .iter()
            .flat_map(|m| m.gaps_by_ell[i].iter().cloned())
            .collect();
        pooled.sort_unstable();
        let n_sites: usize = members.iter().map(|m| m.count_by_ell[i]).sum();
        let usable = (spec.l - 2 * ell) * spec.realizations;
        let density = n_sites as f64 / usable as f64;
        let density_stderr = (density * (1.0 - density) / usable as f64).sqrt();
        let n_gaps = pooled.len();
        let d_min = 2 * ell + 2;
        let mut max_violation = f64::NEG_INFINITY;
        let mut max_block_violation = f64::NEG_INFINITY;
        let mut check = |d: usize, pooled: &[usize]| {
            if n_gaps == 0 {
                return;
            }
            let below = pooled.partition_point(|&g| g < d);
            let surv = (n_gaps - below) as f64 / n_gaps as f64;
            max_violation = max_violation.max(surv - survival_bound(spec.p, ell, d));
            max_block_violation =
                max_block_violation.max(surv - block_survival_bound(spec.p, ell, d));
        };
        check(d_min, &pooled);
        for &g in pooled.iter().filter(|&&g| g >= d_min) {
            check(g, &pooled);
        }
        out.push(GapTailResult {
            ell,
            d0: d0(spec.p, ell),
            n_sites,
            n_gaps,
            density,
            density_stderr,
            density_lower_bound: density_bound(spec.p, ell),
            sorted_gaps: pooled,
            max_violation,
            max_block_violation,
        });
    }
    Ok(out)
}

/// The transport exponent predicted from the rare-region density parameter
/// and the localization length.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExponentPrediction {
    /// Density rate v = 3 ln(1/(1-p)).
    pub v: f64,
    /// Predicted decay exponent of the current correlation.
    pub gamma: f64,
    /// Linear growth rate entering the optimization, -2/xi + 2v.
    pub b1: f64,
    /// Second growth rate, 4v.
    pub b2: f64,
    /// Optimal window growth coefficient 1/(v + 1/xi).
    pub a_opt: f64,
    /// Dilution at which gamma crosses 1 for this xi.
    pub threshold_p: f64,
}

/// Evaluate the closed-form exponent prediction.
pub fn predict_exponent(p: f64, xi: f64) -> Result<ExponentPrediction> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::config(format!(
            "exponent prediction needs 0 < p < 1, got {p}"
        )));
    }
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::config(format!(
            "exponent prediction needs a finite xi > 0, got {xi}"
        )));
    }
    let v = 3.0 * (1.0 / (1.0 - p)).ln();
    let gamma = 4.0 / (1.0 + 1.0 / (v * xi));
    let b1 = -2.0 / xi + 2.0 * v;
    let b2 = 4.0 * v;
    let a_opt = 1.0 / (v + 1.0 / xi);
    let threshold_p = 1.0 - (-1.0 / (9.0 * xi)).exp();
    Ok(ExponentPrediction {
        v,
        gamma,
        b1,
        b2,
        a_opt,
        threshold_p,
    })
}

/// Window half-width grown logarithmically in time with coefficient a.
pub fn ell_schedule(t: f64, a: f64) -> usize {
    if !(t.is_finite() && a.is_finite()) || a <= 0.0 {
        return 1;
    }
    let val = a * t.max(std::f64::consts::E).ln();
    val.floor().max(1.0) as usize
}
