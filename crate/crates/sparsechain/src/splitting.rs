//! Splitting of conserved quantities across an interface inside a harmonic
//! window: the mode-weighted left energy, the correction matrices gamma
//! (momentum sector) and alpha (position sector), the interface residual
//! identity, and the boundary-decay experiments built on top of them.
//!
//! Conventions. A window of half-width ell around site g covers the 2*ell+1
//! sites {g-ell, ..., g+ell}. The left part is {g-ell, ..., g-1}, the right
//! part starts at g, and the interface bond is (g-1, g) whose current is
//! `Chain::current(state, g)`. With P the mode-weighted projector and D the
//! left-site indicator,
//!   gamma = (P - D) / 2,    alpha = (M - K_left) / 2,
//! and the split energy satisfies, pointwise in phase space,
//!   (mode-split left energy) - (left cell energy)
//!     = p' gamma p + q' alpha q - (g0/2)(q_g - q_{g-1})^2.
//! Along the flow of the full chain, with u that difference minus any
//! constant, d/dt u = j_g + f where f is supported on the window edges.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anderson::{build_operator, eigendecompose, EigenBasis, Model};
use crate::chain::{Chain, State};
use crate::disorder::{sample_disorder, DisorderRealization, DisorderSpec, OmegaLaw};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self};

/// Splitting data for one classical interface.
#[derive(Clone, Debug)]
pub struct Splitting {
    /// Absolute label of the first window site (g - ell).
    pub window_start: usize,
    /// Absolute label of the interface site g (first site of the right part).
    pub site: usize,
    pub ell: usize,
    pub g0: f64,
    pub basis: EigenBasis,
    /// Left mode weights c_k, each in [0, 1].
    pub c_left: Vec<f64>,
    /// Momentum-sector correction, window-local indices.
    pub gamma: DMatrix<f64>,
    /// Position-sector correction, window-local indices.
    pub alpha: DMatrix<f64>,
    /// True when the anharmonic coefficient vanishes on the whole window.
    pub harmonic_window: bool,
    /// Edge mass: sum of |gamma| over the two outermost window rows.
    pub r: f64,
}

fn edge_mass(gamma: &DMatrix<f64>) -> f64 {
    let n = gamma.nrows();
    let mut r = 0.0;
    for z in [0, n - 1] {
        for w in 0..n {
            r += gamma[(z, w)].abs();
        }
    }
    r
}

/// Left mode weights and the P, M matrices for a basis and a split point
/// (window-local index of the first right-part site).
fn mode_matrices(basis: &EigenBasis, split: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = basis.len();
    let c: Vec<f64> = (0..n)
        .map(|k| (0..split).map(|y| basis.psi[(y, k)] * basis.psi[(y, k)]).sum())
        .collect();
    let cd = DMatrix::from_diagonal(&DVector::from_iterator(n, c.iter().cloned()));
    let cnd = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        c.iter().zip(&basis.nu2).map(|(&ck, &nu2)| ck * nu2),
    ));
    let p = &basis.psi * cd * basis.psi.transpose();
    let m = &basis.psi * cnd * basis.psi.transpose();
    (c, p, m)
}

/// Stiffness of the left part alone: on-site terms for z < split plus the
/// bonds strictly inside the left part. The bridge bond belongs to the right.
fn left_stiffness(n: usize, split: usize, g0: f64, omega2: &[f64]) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    for z in 0..split {
        k[(z, z)] += omega2[z];
    }
    for y in 0..split.saturating_sub(1) {
        k[(y, y)] += g0;
        k[(y + 1, y + 1)] += g0;
        k[(y, y + 1)] -= g0;
        k[(y + 1, y)] -= g0;
    }
    k
}

/// gamma and alpha for a classical window basis, split at local index `split`.
pub fn classical_coefficients(
    basis: &EigenBasis,
    split: usize,
    g0: f64,
    omega2: &[f64],
) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = basis.len();
    assert!(split <= n, "split {split} beyond window size {n}");
    assert_eq!(omega2.len(), n, "need one omega^2 per window site");
    let (c, p, m) = mode_matrices(basis, split);
    let mut gamma = p.clone();
    for z in 0..split {
        gamma[(z, z)] -= 1.0;
    }
    gamma.scale_mut(0.5);
    let mut alpha = m - left_stiffness(n, split, g0, omega2);
    alpha.scale_mut(0.5);
    (c, gamma, alpha)
}

/// Build the splitting at interface site `site` with half-width `ell`.
pub fn classical_splitting(chain: &Chain, site: usize, ell: usize) -> Result<Splitting> {
    if ell == 0 {
        return Err(Error::config("window half-width ell must be at least 1"));
    }
    if site < ell || site + ell >= chain.len() {
        return Err(Error::Index(format!(
            "window [{}-{ell}, {}+{ell}] does not fit in a chain of length {}",
            site,
            site,
            chain.len()
        )));
    }
    let start = site - ell;
    let n = 2 * ell + 1;
    let op = build_operator(&chain.real, start, n, Model::Classical, chain.g0)?;
    let basis = eigendecompose(&op)?;
    let omega2 = &chain.omega2()[start..start + n];
    let (c_left, gamma, alpha) = classical_coefficients(&basis, ell, chain.g0, omega2);
    let harmonic_window = chain.quartic()[start..start + n].iter().all(|&v| v == 0.0);
    let r = edge_mass(&gamma);
    Ok(Splitting {
        window_start: start,
        site,
        ell,
        g0: chain.g0,
        basis,
        c_left,
        gamma,
        alpha,
        harmonic_window,
        r,
    })
}

impl Splitting {
    pub fn window_len(&self) -> usize {
        2 * self.ell + 1
    }

    /// Mode-split left energy: sum over modes of c_k times the mode energy
    /// (pi_k^2 + nu_k^2 phi_k^2) / 2 with phi, pi the mode coordinates of
    /// the window restriction of the state.
    pub fn mode_split_energy(&self, state: &State) -> f64 {
        let n = self.window_len();
        let q = &state.q[self.window_start..self.window_start + n];
        let p = &state.p[self.window_start..self.window_start + n];
        let mut total = 0.0;
        for k in 0..n {
            let mut phi = 0.0;
            let mut pi = 0.0;
            for z in 0..n {
                phi += self.basis.psi[(z, k)] * q[z];
                pi += self.basis.psi[(z, k)] * p[z];
            }
            total += self.c_left[k] * 0.5 * (pi * pi + self.basis.nu2[k] * phi * phi);
        }
        total
    }

    /// Left cell energy: sum of the energy densities of the left-part sites,
    /// each owning the bond to its right (so the bridge bond is included).
    pub fn cell_energy(&self, chain: &Chain, state: &State) -> f64 {
        (self.window_start..self.site)
            .map(|y| chain.energy_density(state, y))
            .sum()
    }

    /// The splitting observable u = (mode-split energy) - (cell energy) - shift.
    pub fn u(&self, chain: &Chain, state: &State, shift: f64) -> f64 {
        self.mode_split_energy(state) - self.cell_energy(chain, state) - shift
    }

    /// Quadratic-form route to u + shift; equals
    /// mode_split_energy - cell_energy exactly on harmonic windows.
    pub fn u_quadratic(&self, state: &State) -> f64 {
        let n = self.window_len();
        let q = &state.q[self.window_start..self.window_start + n];
        let p = &state.p[self.window_start..self.window_start + n];
        let mut acc = 0.0;
        for z in 0..n {
            for w in 0..n {
                acc += self.gamma[(z, w)] * p[z] * p[w] + self.alpha[(z, w)] * q[z] * q[w];
            }
        }
        let dq = state.q[self.site] - state.q[self.site - 1];
        acc - 0.5 * self.g0 * dq * dq
    }

    /// Fluctuation force f: supported on the two outermost window sites,
    /// present only where the window has an outside neighbor.
    pub fn fluctuation(&self, chain: &Chain, state: &State) -> f64 {
        let n = self.window_len();
        let mut total = 0.0;
        let edges = [
            (0usize, self.window_start.checked_sub(1)),
            (
                n - 1,
                if self.window_start + n < chain.len() {
                    Some(self.window_start + n)
                } else {
                    None
                },
            ),
        ];
        for (z_local, outside) in edges {
            let Some(out) = outside else { continue };
            let z_abs = self.window_start + z_local;
            let dq = state.q[z_abs] - state.q[out];
            let mut s = 0.0;
            for w in 0..n {
                s += self.gamma[(z_local, w)] * state.p[self.window_start + w];
            }
            total += s * dq;
        }
        -2.0 * chain.g0 * total
    }

    /// Current across the interface bond (g-1, g).
    pub fn interface_current(&self, chain: &Chain, state: &State) -> f64 {
        chain.current(state, self.site)
    }

    /// Exact time derivative of u along the full-chain flow, computed from
    /// the analytic gradients; defined on harmonic windows.
    pub fn liouville_u(&self, chain: &Chain, state: &State) -> Result<f64> {
        if !self.harmonic_window {
            return Err(Error::contract(
                "the splitting observable needs a harmonic window; tau is nonzero inside",
            ));
        }
        let n = self.window_len();
        let grad_h = chain.grad_potential(&state.q);
        let bridge = chain.g0 * (state.q[self.site] - state.q[self.site - 1]);
        let mut acc = 0.0;
        for z in 0..n {
            let abs = self.window_start + z;
            let mut du_dq = 0.0;
            let mut du_dp = 0.0;
            for w in 0..n {
                du_dq += 2.0 * self.alpha[(z, w)] * state.q[self.window_start + w];
                du_dp += 2.0 * self.gamma[(z, w)] * state.p[self.window_start + w];
            }
            if abs == self.site {
                du_dq -= bridge;
            }
            if abs + 1 == self.site {
                du_dq += bridge;
            }
            acc += du_dq * state.p[abs] - du_dp * grad_h[abs];
        }
        Ok(acc)
    }

    /// Equilibrium mean of (mode-split energy) - (cell energy).
    pub fn mean_shift(&self, chain: &Chain, beta: f64, oracle: MeanShift<'_>) -> Result<f64> {
        match oracle {
            MeanShift::None => Ok(0.0),
            MeanShift::MonteCarlo(samples) => {
                if samples.is_empty() {
                    return Err(Error::Sampling(
                        "mean shift estimate needs at least one sample".into(),
                    ));
                }
                let vals: Vec<f64> = samples
                    .iter()
                    .map(|s| self.mode_split_energy(s) - self.cell_energy(chain, s))
                    .collect();
                Ok(stats::mean(&vals))
            }
            MeanShift::ExactGaussian => {
                if chain.quartic().iter().any(|&v| v != 0.0) {
                    return Err(Error::contract(
                        "exact Gaussian mean shift needs a fully harmonic chain",
                    ));
                }
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::config(format!("beta must be positive, got {beta}")));
                }
                let l = chain.len();
                let full = build_operator(&chain.real, 0, l, Model::Classical, chain.g0)?;
                let n = self.window_len();
                // covariance columns <q_i q_{start+w}> = (stiffness^-1)[i, start+w] / beta
                let mut cov = Vec::with_capacity(n);
                for w in 0..n {
                    let mut e = vec![0.0; l];
                    e[self.window_start + w] = 1.0;
                    let mut col = full.solve(&e)?;
                    col.iter_mut().for_each(|v| *v /= beta);
                    cov.push(col);
                }
                let mut shift = self.gamma.trace() / beta;
                for z in 0..n {
                    for w in 0..n {
                        shift += self.alpha[(z, w)] * cov[w][self.window_start + z];
                    }
                }
                let g_loc = self.ell;
                let var_bridge = cov[g_loc][self.site] + cov[g_loc - 1][self.site - 1]
                    - 2.0 * cov[g_loc][self.site - 1];
                shift -= 0.5 * chain.g0 * var_bridge;
                Ok(shift)
            }
        }
    }
}

/// How to obtain the equilibrium mean subtracted from u.
#[derive(Clone, Copy, Debug)]
pub enum MeanShift<'a> {
    /// Tridiagonal-inverse covariance; valid only for fully harmonic chains.
    ExactGaussian,
    /// Average over the provided equilibrium samples.
    MonteCarlo(&'a [State]),
    /// No centering.
    None,
}

/// Number splitting for the fermionic chain: with P the mode-weighted
/// projector and D the left indicator, gamma = D - P, so that the
/// difference (sharp left number) - (mode-split left number) is the
/// quadratic form of gamma in the fermion operators.
#[derive(Clone, Debug)]
pub struct NumberSplitting {
    pub window_start: usize,
    pub site: usize,
    pub ell: usize,
    pub c_left: Vec<f64>,
    /// Mode-weighted projector P, window-local.
    pub p_left: DMatrix<f64>,
    /// gamma = D - P, window-local.
    pub gamma: DMatrix<f64>,
    pub r: f64,
}

/// Build the fermionic number splitting from a window eigenbasis.
pub fn quantum_number_splitting(basis: &EigenBasis, site: usize) -> Result<NumberSplitting> {
    let n = basis.len();
    let start = basis.op.start;
    if site <= start || site >= start + n {
        return Err(Error::Index(format!(
            "interface site {site} must lie strictly inside the window [{start}, {})",
            start + n
        )));
    }
    let split = site - start;
    let (c_left, p, _m) = mode_matrices(basis, split);
    let mut gamma = -p.clone();
    for z in 0..split {
        gamma[(z, z)] += 1.0;
    }
    let r = edge_mass(&gamma);
    Ok(NumberSplitting {
        window_start: start,
        site,
        ell: split.min(n - split),
        c_left,
        p_left: p,
        gamma,
        r,
    })
}

/// Edge mass r for one interface of a realization, built from the window
/// operator alone (the anharmonic marks play no role in gamma).
pub fn site_r(real: &DisorderRealization, site: usize, ell: usize, g0: f64) -> Result<f64> {
    if ell == 0 {
        return Err(Error::config("window half-width ell must be at least 1"));
    }
    if site < ell || site + ell >= real.len() {
        return Err(Error::Index(format!(
            "window around site {site} with half-width {ell} exceeds length {}",
            real.len()
        )));
    }
    let start = site - ell;
    let n = 2 * ell + 1;
    let op = build_operator(real, start, n, Model::Classical, g0)?;
    let basis = eigendecompose(&op)?;
    let omega2: Vec<f64> = real.omega[start..start + n].iter().map(|w| w * w).collect();
    let (_c, gamma, _alpha) = classical_coefficients(&basis, ell, g0, &omega2);
    Ok(edge_mass(&gamma))
}

/// Ensemble decay of the splitting coefficients with window size.
#[derive(Clone, Debug)]
pub struct BoundaryDecay {
    pub ells: Vec<usize>,
    pub mean_r: Vec<f64>,
    pub stderr_r: Vec<f64>,
    /// Decay rate of E[r] with ell (positive for decay).
    pub rate_r: f64,
    /// Distance-resolved gamma row mass at the largest ell.
    pub gamma_distance: Vec<usize>,
    pub gamma_profile: Vec<f64>,
    /// Decay rate of the gamma row mass with distance from the interface.
    pub rate_gamma: f64,
    pub ensemble: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryDecaySpec {
    pub omega_law: OmegaLaw,
    pub g0: f64,
    pub ells: Vec<usize>,
    pub ensemble: usize,
    pub seed: u64,
}

/// Measure how the splitting coefficients decay away from the interface.
///
/// Each ensemble member draws one frequency realization on a window of the
/// largest requested half-width; nested sub-windows share the realization so
/// the ell-dependence is smooth in the ensemble mean.
pub fn boundary_decay_experiment(spec: &BoundaryDecaySpec) -> Result<BoundaryDecay> {
    if spec.ells.len() < 2 {
        return Err(Error::config("boundary decay needs at least two window sizes"));
    }
    let mut ells = spec.ells.clone();
    ells.sort_unstable();
    ells.dedup();
    if ells[0] < 1 {
        return Err(Error::config("window half-widths must be at least 1"));
    }
    if spec.ensemble < 50 {
        return Err(Error::config(format!(
            "boundary decay needs ensemble >= 50, got {}",
            spec.ensemble
        )));
    }
    let ell_max = *ells.last().expect("nonempty after validation");
    let n_max = 2 * ell_max + 1;

    struct MemberOut {
        r_by_ell: Vec<f64>,
        gamma_rows: Vec<f64>,
    }

    let members: Vec<MemberOut> = (0..spec.ensemble)
        .into_par_iter()
        .map(|m| -> Result<MemberOut> {
            let dspec = DisorderSpec {
                l: n_max,
                p: 0.0,
                omega_law: spec.omega_law,
                seed: rng::derive_seed(spec.seed, m as u64, Stream::Member),
            };
            let real = sample_disorder(&dspec)?;
            let omega2_all: Vec<f64> = real.omega.iter().map(|w| w * w).collect();
            let mut r_by_ell = Vec::with_capacity(ells.len());
            let mut gamma_rows = Vec::new();
            for &ell in &ells {
                let start = ell_max - ell;
                let n = 2 * ell + 1;
                let op = build_operator(&real, start, n, Model::Classical, spec.g0)?;
                let basis = eigendecompose(&op)?;
                let (_c, gamma, _a) =
                    classical_coefficients(&basis, ell, spec.g0, &omega2_all[start..start + n]);
                r_by_ell.push(edge_mass(&gamma));
                if ell == ell_max {
                    gamma_rows = (0..n)
                        .map(|z| (0..n).map(|w| gamma[(z, w)].abs()).sum())
                        .collect();
                }
            }
            Ok(MemberOut { r_by_ell, gamma_rows })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mean_r = Vec::with_capacity(ells.len());
    let mut stderr_r = Vec::with_capacity(ells.len());
    for (i, _ell) in ells.iter().enumerate() {
        let col: Vec<f64> = members.iter().map(|m| m.r_by_ell[i]).collect();
        mean_r.push(stats::mean(&col));
        stderr_r.push(stats::stderr_of_mean(&col));
    }
    let xs: Vec<f64> = ells.iter().map(|&e| e as f64).collect();
    let ys: Vec<f64> = mean_r.iter().map(|v| v.ln()).collect();
    let fit_r = stats::linear_fit(&xs, &ys)?;
    if fit_r.slope >= 0.0 {
        return Err(Error::Estimation(format!(
            "edge mass does not decay with window size (slope {:.3e})",
            fit_r.slope
        )));
    }

    // distance-resolved profile at the largest window
    let split = ell_max;
    let mut acc = vec![0.0; ell_max.max(1)];
    let mut cnt = vec![0usize; ell_max.max(1)];
    for member in &members {
        for (z, &row) in member.gamma_rows.iter().enumerate() {
            let d = if z < split { split - 1 - z } else { z - split };
            if d < acc.len() {
                acc[d] += row;
                cnt[d] += 1;
            }
        }
    }
    let gamma_profile: Vec<f64> = acc
        .iter()
        .zip(&cnt)
        .map(|(a, &c)| if c > 0 { a / c as f64 } else { f64::NAN })
        .collect();
    let d_lo = 1usize;
    let mut d_hi = gamma_profile.len() - 1;
    while d_hi > d_lo && !(gamma_profile[d_hi] > 1e-14) {
        d_hi -= 1;
    }
    if d_hi <= d_lo {
        return Err(Error::Estimation(
            "gamma profile too short to fit a distance decay".into(),
        ));
    }
    let dx: Vec<f64> = (d_lo..=d_hi).map(|d| d as f64).collect();
    let dy: Vec<f64> = (d_lo..=d_hi).map(|d| gamma_profile[d].ln()).collect();
    let fit_g = stats::linear_fit(&dx, &dy)?;
    if fit_g.slope >= 0.0 {
        return Err(Error::Estimation(format!(
            "gamma row mass does not decay with distance (slope {:.3e})",
            fit_g.slope
        )));
    }

    Ok(BoundaryDecay {
        ells,
        mean_r,
        stderr_r,
        rate_r: -fit_r.slope,
        gamma_distance: (0..gamma_profile.len()).collect(),
        gamma_profile,
        rate_gamma: -fit_g.slope,
        ensemble: spec.ensemble,
    })
}
