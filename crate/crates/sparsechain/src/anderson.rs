//! One-body disordered operators on an interval, their eigenbases, and the
//! localization profile used to estimate the decay length.
//!
//! Classical flavor: stiffness matrix of the harmonic chain, diag omega_x^2
//! plus the Neumann graph Laplacian times the coupling (boundary sites have
//! degree 1, interior degree 2), offdiag -g0.
//!
//! Quantum flavor: hopping matrix of the free fermion chain shifted to be
//! positive, diag omega_x + 2J at every site, offdiag +J. The uniform shift
//! changes eigenvalues only, never eigenvectors or quadratic observables.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{sample_disorder, DisorderRealization, DisorderSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats::{self, LineFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Classical,
    Quantum,
}

/// Symmetric tridiagonal operator restricted to a window of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AndersonOperator {
    pub model: Model,
    /// First site of the window (0-based, inclusive).
    pub start: usize,
    pub diag: Vec<f64>,
    /// Off-diagonal value shared by all bonds (tridiagonal Toeplitz offdiag).
    pub offdiag: f64,
    pub coupling: f64,
}

impl AndersonOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Window as a 0-based half-open range of chain sites.
    pub fn sites(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.offdiag;
                m[(i + 1, i)] = self.offdiag;
            }
        }
        m
    }

    /// Matrix-vector product without materializing the dense matrix.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        assert_eq!(v.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * v[i];
            if i > 0 {
                acc += self.offdiag * v[i - 1];
            }
            if i + 1 < n {
                acc += self.offdiag * v[i + 1];
            }
            out[i] = acc;
        }
    }

    /// Solve (self) x = b by LDL^T on the tridiagonal; requires positive
    /// definiteness, which holds for the classical stiffness operator.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if b.len() != n {
            return Err(Error::Index("solve: rhs length mismatch".into()));
        }
        // forward elimination
        let mut d = vec![0.0; n];
        let mut l = vec![0.0; n.max(1) - 1];
        d[0] = self.diag[0];
        if d[0] <= 0.0 {
            return Err(Error::Numerical("tridiagonal solve: not positive definite".into()));
        }
        for i in 1..n {
            l[i - 1] = self.offdiag / d[i - 1];
            d[i] = self.diag[i] - l[i - 1] * self.offdiag;
            if d[i] <= 0.0 {
                return Err(Error::Numerical(
                    "tridiagonal solve: not positive definite".into(),
                ));
            }
        }
        let mut y = b.to_vec();
        for i in 1..n {
            y[i] -= l[i - 1] * y[i - 1];
        }
        let mut x = y;
        for i in 0..n {
            x[i] /= d[i];
        }
        for i in (0..n.max(1) - 1).rev() {
            x[i] -= l[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Largest-eigenvalue upper bound by Gershgorin discs.
    pub fn gershgorin_max(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut r = 0.0;
                if i > 0 {
                    r += self.offdiag.abs();
                }
                if i + 1 < n {
                    r += self.offdiag.abs();
                }
                self.diag[i] + r
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Build the one-body operator on the window [start, start+len) of `real`.
pub fn build_operator(
    real: &DisorderRealization,
    start: usize,
    len: usize,
    model: Model,
    coupling: f64,
) -> Result<AndersonOperator> {
    if len == 0 || start + len > real.len() {
        return Err(Error::Index(format!(
            "operator window [{start}, {}) out of bounds for chain length {}",
            start + len,
            real.len()
        )));
    }
    if !coupling.is_finite() || coupling < 0.0 {
        return Err(Error::config(format!("coupling must be >= 0, got {coupling}")));
    }
    let omega = &real.omega[start..start + len];
    let diag: Vec<f64> = match model {
        Model::Classical => {
            real.require_positive_frequencies_on(start, len)?;
            (0..len)
                .map(|i| {
                    let degree = if len == 1 {
                        0.0
                    } else if i == 0 || i == len - 1 {
                        1.0
                    } else {
                        2.0
                    };
                    omega[i] * omega[i] + degree * coupling
                })
                .collect()
        }
        Model::Quantum => omega.iter().map(|&w| w + 2.0 * coupling).collect(),
    };
    let offdiag = match model {
        Model::Classical => -coupling,
        Model::Quantum => coupling,
    };
    Ok(AndersonOperator {
        model,
        start,
        diag,
        offdiag,
        coupling,
    })
}

impl DisorderRealization {
    fn require_positive_frequencies_on(&self, start: usize, len: usize) -> Result<()> {
        match self.omega[start..start + len]
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
        {
            m if m > 0.0 => Ok(()),
            m => Err(Error::contract(format!(
                "classical operator needs omega_x > 0 on its window, min is {m}"
            ))),
        }
    }
}

/// Orthonormal eigenbasis of an operator, eigenvalues ascending.
///
/// Sign convention: in each eigenvector the entry of largest magnitude
/// (lowest index on ties) is positive, so bases are reproducible.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    pub op: AndersonOperator,
    /// Column k is the k-th eigenvector.
    pub psi: DMatrix<f64>,
    /// Eigenvalues nu_k^2 (classical: squared mode frequencies).
    pub nu2: Vec<f64>,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.nu2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu2.is_empty()
    }

    /// Spectral norm of the operator (largest |eigenvalue|).
    pub fn spectral_norm(&self) -> f64 {
        self.nu2.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
    }
}

/// Dense symmetric eigendecomposition with deterministic ordering and signs.
pub fn eigendecompose(op: &AndersonOperator) -> Result<EigenBasis> {
    let n = op.len();
    let dense = op.dense();
    let eig = dense
        .clone()
        .symmetric_eigen();
    // sort ascending, stable in the original index on ties
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalue NaN")
            .then(a.cmp(&b))
    });
    let mut psi = DMatrix::zeros(n, n);
    let mut nu2 = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        // largest-magnitude entry (lowest index on near-ties) made positive
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() + 1e-14 {
                best = i;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            psi[(i, dst)] = sign * col[i];
        }
        nu2.push(eig.eigenvalues[src]);
    }
    let basis = EigenBasis {
        op: op.clone(),
        psi,
        nu2,
    };
    // residual contract: ||H psi - nu2 psi||_inf <= 1e-10 * ||H||
    let scale = basis.spectral_norm().max(1.0);
    let mut worst = 0.0_f64;
    let mut hv = vec![0.0; n];
    for k in 0..n {
        let col: Vec<f64> = (0..n).map(|i| basis.psi[(i, k)]).collect();
        op.apply(&col, &mut hv);
        for i in 0..n {
            worst = worst.max((hv[i] - basis.nu2[k] * col[i]).abs());
        }
    }
    if worst > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "eigendecomposition residual {worst:.3e} exceeds 1e-10 * ||H|| for operator {op:?}"
        )));
    }
    Ok(basis)
}

/// Ensemble-averaged localization profile and fitted decay length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationProfile {
    /// profile[d] = E. mean over bulk pairs at distance d of sum_k |psi_k(x) psi_k(y)|.
    pub distance: Vec<usize>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub xi_hat: f64,
    pub fit_slope: f64,
    pub fit_slope_stderr: f64,
    pub fit_r2: f64,
    /// Distances actually used in the fit.
    pub fit_window: (usize, usize),
    pub ensemble: usize,
}

/// Estimate the eigenfunction-correlator profile on boxes of `b_size` sites.
///
/// For each ensemble member a fresh frequency realization is drawn, the
/// operator diagonalized, and sum_k |psi_k(x) psi_k(y)| averaged over pairs
/// at fixed distance, excluding sites within 2 of the box boundary.
pub fn localization_profile(
    spec: &DisorderSpec,
    b_size: usize,
    ensemble: usize,
    model: Model,
    coupling: f64,
) -> Result<LocalizationProfile> {
    if ensemble < 100 {
        return Err(Error::config(format!(
            "localization profile needs ensemble >= 100, got {ensemble}"
        )));
    }
    if b_size < 16 {
        return Err(Error::config(format!(
            "localization profile needs b_size >= 16, got {b_size}"
        )));
    }
    let margin = 2usize;
    let usable = b_size - 2 * margin;
    let d_max = usable - 1;

    // per-member mean profile, then ensemble statistics per distance
    let members: Vec<Vec<f64>> = (0..ensemble)
        .into_par_iter()
        .map(|m| -> Result<Vec<f64>> {
            let mspec = DisorderSpec {
                l: b_size,
                seed: rng::derive_seed(spec.seed, m as u64, Stream::Member),
                ..*spec
            };
            let real = sample_disorder(&mspec)?;
            let op = build_operator(&real, 0, b_size, model, coupling)?;
            let basis = eigendecompose(&op)?;
            let mut acc = vec![0.0; d_max + 1];
            let mut cnt = vec![0usize; d_max + 1];
            for x in margin..b_size - margin {
                for y in x..b_size - margin {
                    let d = y - x;
                    let mut s = 0.0;
                    for k in 0..b_size {
                        s += (basis.psi[(x, k)] * basis.psi[(y, k)]).abs();
                    }
                    acc[d] += s;
                    cnt[d] += 1;
                }
            }
            Ok(acc
                .iter()
                .zip(&cnt)
                .map(|(a, &c)| if c > 0 { a / c as f64 } else { f64::NAN })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut value = Vec::with_capacity(d_max + 1);
    let mut stderr = Vec::with_capacity(d_max + 1);
    for d in 0..=d_max {
        let col: Vec<f64> = members.iter().map(|m| m[d]).collect();
        value.push(stats::mean(&col));
        stderr.push(stats::stderr_of_mean(&col));
    }

    let (xi_hat, fit) = fit_decay_length(&value, b_size)?;
    let window = fit_window(&value, b_size);
    Ok(LocalizationProfile {
        distance: (0..=d_max).collect(),
        value,
        stderr,
        xi_hat,
        fit_slope: fit.slope,
        fit_slope_stderr: fit.slope_stderr,
        fit_r2: fit.r2,
        fit_window: window,
        ensemble,
    })
}

fn fit_window(value: &[f64], b_size: usize) -> (usize, usize) {
    let floor = 10.0 * f64::EPSILON;
    let hi = (b_size / 2).min(value.len() - 1);
    let mut lo = 1usize;
    while lo <= hi && !(value[lo] > floor) {
        lo += 1;
    }
    let mut last = lo;
    for d in lo..=hi {
        if value[d] > floor {
            last = d;
        } else {
            break;
        }
    }
    (lo, last)
}

fn fit_decay_length(value: &[f64], b_size: usize) -> Result<(f64, LineFit)> {
    let (lo, hi) = fit_window(value, b_size);
    if hi < lo {
        return Err(Error::Estimation(
            "localization profile has no usable decay window".into(),
        ));
    }
    if hi == lo {
        // single usable point: slope from the exact d = 0 normalization
        let slope = value[lo].ln() / lo as f64;
        if slope >= 0.0 {
            return Err(Error::Estimation(
                "localization profile does not decay (delocalized-looking data)".into(),
            ));
        }
        let fit = LineFit {
            slope,
            intercept: 0.0,
            slope_stderr: f64::NAN,
            r2: f64::NAN,
            n: 1,
        };
        return Ok((-1.0 / slope, fit));
    }
    let xs: Vec<f64> = (lo..=hi).map(|d| d as f64).collect();
    let ys: Vec<f64> = (lo..=hi).map(|d| value[d].ln()).collect();
    let fit = stats::linear_fit(&xs, &ys)?;
    if fit.slope >= 0.0 {
        return Err(Error::Estimation(format!(
            "localization profile does not decay (slope {:.3e}); delocalized-looking data",
            fit.slope
        )));
    }
    let xi = -1.0 / fit.slope;
    if xi > b_size as f64 {
        return Err(Error::Estimation(format!(
            "fitted decay length {xi:.1} exceeds the box size {b_size}; cannot resolve localization"
        )));
    }
    Ok((xi, fit))
}
