//! Integrated current correlations: ensemble estimates of the classical
//! C(t), its free-fermion counterpart, power-law exponent fits with
//! jackknife errors, and the audit that decomposes the total current into
//! interface currents, window potentials, and boundary fluctuations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{Chain, GibbsSpec, Integrator, State};
use crate::disorder::{sample_disorder, DisorderSpec};
use crate::error::{Error, Result};
use crate::fermion::FreeChain;
use crate::griffiths::{griffiths_sites, nearest_site, GriffithsOptions};
use crate::rng::{derive_seed, Stream};
use crate::splitting::{classical_splitting, Splitting};
use crate::stats::{self, LineFit};

/// Power-law fit of a correlation curve over a time window, with a
/// leave-one-out error over ensemble members when available.
#[derive(Clone, Debug)]
pub struct ExponentFit {
    pub exponent: f64,
    pub stderr: f64,
    pub amplitude: f64,
    pub window: (f64, f64),
    pub r2: f64,
    pub n_points: usize,
}

/// Least-squares slope of log C against log t over [t_lo, t_hi]. Points
/// with nonpositive value or time are skipped.
pub fn fit_exponent(times: &[f64], values: &[f64], t_lo: f64, t_hi: f64) -> Result<LineFit> {
    assert_eq!(times.len(), values.len(), "times and values must align");
    if !(t_lo > 0.0 && t_hi > t_lo) {
        return Err(Error::config(format!(
            "fit window [{t_lo}, {t_hi}] must be positive and ordered"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= t_lo && t <= t_hi && t > 0.0 && v > 0.0 {
            xs.push(t.ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::Estimation(format!(
            "exponent fit needs at least 3 usable points in [{t_lo}, {t_hi}], found {}",
            xs.len()
        )));
    }
    stats::linear_fit(&xs, &ys)
}

/// Ensemble estimate of a correlation curve on a fixed time grid.
#[derive(Clone, Debug)]
pub struct CorrelationEstimate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub ensemble: usize,
    /// Fit over the last decade [t_max/10, t_max], when it converged.
    pub exponent: Option<ExponentFit>,
    /// Fraction of members whose total energy drifted beyond the tolerance
    /// over the trajectory. Only classical estimates track this; the
    /// free-fermion evaluation is exact in time.
    pub drift_failure_rate: Option<f64>,
}

fn combine_members(
    times: Vec<f64>,
    curves: Vec<Vec<f64>>,
    fit_window: (f64, f64),
) -> CorrelationEstimate {
    let ensemble = curves.len();
    let n_t = times.len();
    let mut mean = Vec::with_capacity(n_t);
    let mut stderr = Vec::with_capacity(n_t);
    let mut column = vec![0.0; ensemble];
    for k in 0..n_t {
        for (m, curve) in curves.iter().enumerate() {
            column[m] = curve[k];
        }
        mean.push(stats::mean(&column));
        stderr.push(if ensemble > 1 {
            stats::stderr_of_mean(&column)
        } else {
            0.0
        });
    }
    let exponent = exponent_with_jackknife(&times, &curves, &mean, fit_window).ok();
    CorrelationEstimate {
        times,
        mean,
        stderr,
        ensemble,
        exponent,
        drift_failure_rate: None,
    }
}

fn exponent_with_jackknife(
    times: &[f64],
    curves: &[Vec<f64>],
    mean: &[f64],
    window: (f64, f64),
) -> Result<ExponentFit> {
    let full = fit_exponent(times, mean, window.0, window.1)?;
    let m = curves.len();
    let stderr = if m > 2 {
        let n_t = times.len();
        let sums: Vec<f64> = (0..n_t)
            .map(|k| {
                let col: Vec<f64> = curves.iter().map(|c| c[k]).collect();
                stats::pairwise_sum(&col)
            })
            .collect();
        let mut estimates = Vec::with_capacity(m);
        for leave in 0..m {
            let reduced: Vec<f64> = (0..n_t)
                .map(|k| (sums[k] - curves[leave][k]) / (m - 1) as f64)
                .collect();
            estimates.push(fit_exponent(times, &reduced, window.0, window.1)?.slope);
        }
        // delete-one jackknife error of the fitted slope
        let rm = stats::mean(&estimates);
        let ss: f64 = estimates.iter().map(|r| (r - rm) * (r - rm)).sum();
        ((m - 1) as f64 / m as f64 * ss).sqrt()
    } else {
        full.slope_stderr
    };
    Ok(ExponentFit {
        exponent: full.slope,
        stderr,
        amplitude: full.intercept.exp(),
        window,
        r2: full.r2,
        n_points: full.n,
    })
}

/// Ensemble estimate of the classical integrated-current correlation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassicalCorrelationSpec {
    pub disorder: DisorderSpec,
    pub g0: f64,
    pub g: f64,
    pub beta: f64,
    pub ensemble: usize,
    pub t_max: f64,
    pub dt: f64,
    /// Number of stored points on the time grid (the grid always includes
    /// t = 0 and t = t_max).
    pub n_checkpoints: usize,
    pub integrator: Integrator,
    pub burn_in: Option<usize>,
    /// Relative energy-drift budget per trajectory; members exceeding it
    /// count into the reported failure rate. Defaults to 1e-5.
    pub drift_tolerance: Option<f64>,
}

impl ClassicalCorrelationSpec {
    fn validate(&self) -> Result<()> {
        if self.ensemble == 0 {
            return Err(Error::config("ensemble must not be empty"));
        }
        if !(self.t_max > 0.0 && self.dt > 0.0 && self.dt < self.t_max) {
            return Err(Error::config(format!(
                "need 0 < dt < t_max, got dt {} and t_max {}",
                self.dt, self.t_max
            )));
        }
        if self.n_checkpoints < 4 {
            return Err(Error::config(
                "at least 4 checkpoints are needed for the exponent fit",
            ));
        }
        Ok(())
    }
}

fn checkpoint_steps(steps: usize, n_checkpoints: usize) -> Vec<usize> {
    let stride = (steps / (n_checkpoints - 1)).max(1);
    let mut cps: Vec<usize> = (0..steps).step_by(stride).collect();
    if *cps.last().expect("at least step 0") != steps {
        cps.push(steps);
    }
    cps
}

/// Estimate C(t) = <(integral of the total current)^2> / L over an ensemble
/// of disorder realizations, one thermal initial state each.
pub fn estimate_classical(spec: &ClassicalCorrelationSpec) -> Result<CorrelationEstimate> {
    spec.validate()?;
    let steps = (spec.t_max / spec.dt).round().max(1.0) as usize;
    let cps = checkpoint_steps(steps, spec.n_checkpoints);
    let times: Vec<f64> = cps.iter().map(|&s| s as f64 * spec.dt).collect();
    let drift_tol = spec.drift_tolerance.unwrap_or(1e-5);
    let members: Result<Vec<(Vec<f64>, bool)>> = (0..spec.ensemble)
        .into_par_iter()
        .map(|member| {
            let mut dspec = spec.disorder.clone();
            dspec.seed = derive_seed(spec.disorder.seed, member as u64, Stream::Member);
            let real = sample_disorder(&dspec)?;
            let l = real.len();
            let chain = Chain::new(real, spec.g0, spec.g)?;
            chain.check_dt(spec.dt, spec.beta)?;
            let mut gspec = GibbsSpec::new(spec.beta, 1, spec.disorder.seed);
            gspec.stream_index = member as u64;
            if let Some(burn) = spec.burn_in {
                gspec.burn_in = burn;
            }
            let (states, _diag) = chain.gibbs_sample(&gspec)?;
            let mut state = states.into_iter().next().expect("one sample requested");
            let energy_start = chain.total_energy(&state);
            let mut integral = 0.0;
            let mut prev = 0.0;
            let mut out = vec![0.0; cps.len()];
            let mut next_cp = 0usize;
            chain.evolve_observed(
                &mut state,
                spec.dt,
                steps,
                spec.integrator,
                |step, st: &State| {
                    let cur = chain.current_sum(st);
                    if step > 0 {
                        integral += 0.5 * spec.dt * (prev + cur);
                    }
                    prev = cur;
                    if next_cp < cps.len() && step == cps[next_cp] {
                        out[next_cp] = integral * integral / l as f64;
                        next_cp += 1;
                    }
                },
            )?;
            let energy_end = chain.total_energy(&state);
            let drift = (energy_end - energy_start).abs() / energy_start.abs().max(1.0);
            Ok((out, drift <= drift_tol))
        })
        .collect();
    let members = members?;
    let failures = members.iter().filter(|(_, ok)| !ok).count();
    let rate = failures as f64 / members.len() as f64;
    let curves = members.into_iter().map(|(curve, _)| curve).collect();
    let mut estimate = combine_members(times, curves, (spec.t_max / 10.0, spec.t_max));
    estimate.drift_failure_rate = Some(rate);
    Ok(estimate)
}

/// Ensemble estimate of the free-fermion integrated-current correlation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantumCorrelationSpec {
    pub disorder: DisorderSpec,
    pub j: f64,
    pub mu: f64,
    pub ensemble: usize,
    pub times: Vec<f64>,
}

pub fn estimate_quantum(spec: &QuantumCorrelationSpec) -> Result<CorrelationEstimate> {
    if spec.ensemble == 0 {
        return Err(Error::config("ensemble must not be empty"));
    }
    if spec.times.is_empty() {
        return Err(Error::config("time grid must not be empty"));
    }
    let t_max = spec.times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(t_max > 0.0) {
        return Err(Error::config("time grid must reach past zero"));
    }
    let curves: Result<Vec<Vec<f64>>> = (0..spec.ensemble)
        .into_par_iter()
        .map(|member| {
            let mut dspec = spec.disorder.clone();
            dspec.seed = derive_seed(spec.disorder.seed, member as u64, Stream::Member);
            let real = sample_disorder(&dspec)?;
            let chain = FreeChain::new(&real, spec.j)?;
            Ok(chain.current_correlation(spec.mu, &spec.times))
        })
        .collect();
    Ok(combine_members(
        spec.times.clone(),
        curves?,
        (t_max / 10.0, t_max),
    ))
}

/// Configuration of the current-decomposition audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionAuditSpec {
    pub disorder: DisorderSpec,
    pub g0: f64,
    pub g: f64,
    pub beta: f64,
    pub ell: usize,
    pub options: GriffithsOptions,
    pub t_max: f64,
    pub dt: f64,
    pub n_checkpoints: usize,
    pub integrator: Integrator,
    pub gibbs_stream: u64,
    /// Flip the sign of the energy spans right of their interface. This
    /// breaks the bookkeeping on purpose and serves as a negative control:
    /// the residual must blow up when this is set.
    pub negate_right_spans: bool,
}

/// Result of the audit: the identity
/// (integrated total current) + (integrated fluctuations) = (potential change)
/// checked at a grid of times along one thermal trajectory.
#[derive(Clone, Debug)]
pub struct DecompositionAudit {
    pub sites: Vec<usize>,
    pub multiplicity: Vec<usize>,
    /// Integer weight of each site energy in the potential V.
    pub weights: Vec<i64>,
    pub times: Vec<f64>,
    pub integrated_current: Vec<f64>,
    pub integrated_fluctuation: Vec<f64>,
    pub potential_change: Vec<f64>,
    /// Relative residual at each time.
    pub residual: Vec<f64>,
    pub max_residual: f64,
}

/// Decompose the total current through interface currents at the kept
/// windows and verify the integrated identity along a trajectory.
pub fn audit_current_decomposition(spec: &DecompositionAuditSpec) -> Result<DecompositionAudit> {
    if !(spec.t_max > 0.0 && spec.dt > 0.0 && spec.dt < spec.t_max) {
        return Err(Error::config(format!(
            "need 0 < dt < t_max, got dt {} and t_max {}",
            spec.dt, spec.t_max
        )));
    }
    if spec.n_checkpoints < 2 {
        return Err(Error::config("need at least 2 checkpoints"));
    }
    let real = sample_disorder(&spec.disorder)?;
    let l = real.len();
    let set = griffiths_sites(&real, spec.ell, spec.g0, &spec.options)?;
    if set.sites.is_empty() {
        return Err(Error::Estimation(
            "no windows survive the filter; the audit has no interfaces to work with".into(),
        ));
    }
    let sites = set.sites.clone();
    let chain = Chain::new(real, spec.g0, spec.g)?;
    chain.check_dt(spec.dt, spec.beta)?;
    let splittings: Vec<Splitting> = sites
        .iter()
        .map(|&g| classical_splitting(&chain, g, spec.ell))
        .collect::<Result<_>>()?;

    // route every bond to its nearest kept site and accumulate the energy
    // span between them: for a bond b left of its site g,
    // j_b = j_g + d/dt sum of h_y over y in [b, g-1]; right of it the span
    // [g, b-1] enters with the opposite sign
    let mut multiplicity = vec![0usize; sites.len()];
    let mut weights = vec![0i64; l];
    for b in 1..l {
        let g = nearest_site(&sites, b).expect("kept set checked nonempty above");
        let idx = sites.binary_search(&g).expect("site from the kept set");
        multiplicity[idx] += 1;
        if b < g {
            for w in weights.iter_mut().take(g).skip(b) {
                *w += 1;
            }
        } else {
            let sign = if spec.negate_right_spans { 1 } else { -1 };
            for w in weights.iter_mut().take(b).skip(g) {
                *w += sign;
            }
        }
    }

    // even step count so Simpson prefixes land on every other checkpoint
    let mut steps = (spec.t_max / spec.dt).round().max(2.0) as usize;
    if steps % 2 == 1 {
        steps += 1;
    }
    let mut cps = checkpoint_steps(steps, spec.n_checkpoints);
    for cp in cps.iter_mut() {
        if *cp % 2 == 1 {
            *cp += 1;
        }
    }
    cps.dedup();
    let times: Vec<f64> = cps.iter().map(|&s| s as f64 * spec.dt).collect();

    let mut gspec = GibbsSpec::new(spec.beta, 1, spec.disorder.seed);
    gspec.stream_index = spec.gibbs_stream;
    let (states, _diag) = chain.gibbs_sample(&gspec)?;
    let mut state = states.into_iter().next().expect("one sample requested");

    let potential = |st: &State| -> f64 {
        let mut v = 0.0;
        for (i, split) in splittings.iter().enumerate() {
            v += multiplicity[i] as f64 * split.u(&chain, st, 0.0);
        }
        for (y, &w) in weights.iter().enumerate() {
            if w != 0 {
                v += w as f64 * chain.energy_density(st, y);
            }
        }
        v
    };

    let mut current_samples = Vec::with_capacity(steps + 1);
    let mut fluct_samples = Vec::with_capacity(steps + 1);
    let mut v_at_cp = vec![0.0; cps.len()];
    let mut next_cp = 0usize;
    chain.evolve_observed(
        &mut state,
        spec.dt,
        steps,
        spec.integrator,
        |step, st: &State| {
            current_samples.push(chain.current_sum(st));
            let mut f_tot = 0.0;
            for (i, split) in splittings.iter().enumerate() {
                f_tot += multiplicity[i] as f64 * split.fluctuation(&chain, st);
            }
            fluct_samples.push(f_tot);
            if next_cp < cps.len() && step == cps[next_cp] {
                v_at_cp[next_cp] = potential(st);
                next_cp += 1;
            }
        },
    )?;

    let mut integrated_current = Vec::with_capacity(cps.len());
    let mut integrated_fluctuation = Vec::with_capacity(cps.len());
    let mut potential_change = Vec::with_capacity(cps.len());
    let mut residual = Vec::with_capacity(cps.len());
    let mut max_residual = 0.0_f64;
    for (k, &cp) in cps.iter().enumerate() {
        let i_j = stats::simpson(&current_samples[..=cp], spec.dt);
        let i_f = stats::simpson(&fluct_samples[..=cp], spec.dt);
        let dv = v_at_cp[k] - v_at_cp[0];
        let denom = 1.0_f64.max(i_j.abs()).max(i_f.abs()).max(dv.abs());
        let r = (i_j + i_f - dv).abs() / denom;
        integrated_current.push(i_j);
        integrated_fluctuation.push(i_f);
        potential_change.push(dv);
        residual.push(r);
        max_residual = max_residual.max(r);
    }
    Ok(DecompositionAudit {
        sites,
        multiplicity,
        weights,
        times,
        integrated_current,
        integrated_fluctuation,
        potential_change,
        residual,
        max_residual,
    })
}
