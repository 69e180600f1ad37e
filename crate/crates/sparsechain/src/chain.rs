//! Classical chain dynamics: Hamiltonian evaluation, energy currents,
//! symplectic integration, and Gibbs sampling of initial data.
//!
//! Site convention is 0-based throughout. The energy density h[s] owns the
//! bond to the right of site s, so the continuity identity reads
//! d/dt h[s] = j[s] - j[s+1] with the bond current
//! j[x] = -g0 * p[x] * (q[x] - q[x-1]) for 1 <= x <= L-1 and j = 0 outside.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderRealization;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats;

/// Phase-space point of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    pub fn zeros(l: usize) -> Self {
        State {
            q: vec![0.0; l],
            p: vec![0.0; l],
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

/// Anharmonic oscillator chain with nearest-neighbor springs.
#[derive(Clone, Debug)]
pub struct Chain {
    pub real: DisorderRealization,
    pub g0: f64,
    pub g: f64,
    /// omega_x^2, precomputed.
    omega2: Vec<f64>,
    /// g * tau_x, the coefficient multiplying q^4 / 4.
    quartic: Vec<f64>,
}

/// Integration scheme. All are symplectic and time-reversible; the
/// composition schemes stack velocity Verlet stages to raise the order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Verlet,
    Composition4,
    Composition6,
}

impl Integrator {
    pub fn order(self) -> u32 {
        match self {
            Integrator::Verlet => 2,
            Integrator::Composition4 => 4,
            Integrator::Composition6 => 6,
        }
    }

    /// Per-stage step fractions. Each stage is one velocity Verlet sweep of
    /// weight w * dt; weights sum to 1, negative entries are the backward
    /// stages of the composition.
    pub fn weights(self) -> Vec<f64> {
        fn extend(weights: Vec<f64>, order_from: u32) -> Vec<f64> {
            // raise order 2k -> 2k+2 by the three-fold symmetric composition
            let k = order_from as f64;
            let alpha = 1.0 / (2.0 - 2.0_f64.powf(1.0 / (k + 1.0)));
            let beta = 1.0 - 2.0 * alpha;
            let mut out = Vec::with_capacity(weights.len() * 3);
            for &outer in &[alpha, beta, alpha] {
                out.extend(weights.iter().map(|w| w * outer));
            }
            out
        }
        match self {
            Integrator::Verlet => vec![1.0],
            Integrator::Composition4 => extend(vec![1.0], 2),
            Integrator::Composition6 => extend(extend(vec![1.0], 2), 4),
        }
    }
}

impl Chain {
    pub fn new(real: DisorderRealization, g0: f64, g: f64) -> Result<Self> {
        if !(g0.is_finite() && g0 >= 0.0) {
            return Err(Error::config(format!("spring coupling g0 must be >= 0, got {g0}")));
        }
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::config(format!("anharmonic strength g must be >= 0, got {g}")));
        }
        if real.omega.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::contract(
                "classical chain needs omega_x > 0 at every site",
            ));
        }
        let omega2 = real.omega.iter().map(|w| w * w).collect();
        let quartic = real.tau.iter().map(|&t| g * t as f64).collect();
        Ok(Chain {
            real,
            g0,
            g,
            omega2,
            quartic,
        })
    }

    pub fn len(&self) -> usize {
        self.omega2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega2.is_empty()
    }

    pub fn omega2(&self) -> &[f64] {
        &self.omega2
    }

    pub fn quartic(&self) -> &[f64] {
        &self.quartic
    }

    /// Potential energy of configuration q.
    pub fn potential(&self, q: &[f64]) -> f64 {
        let l = self.len();
        assert_eq!(q.len(), l, "configuration length mismatch");
        let mut onsite = Vec::with_capacity(l);
        for s in 0..l {
            let q2 = q[s] * q[s];
            onsite.push(0.5 * self.omega2[s] * q2 + 0.25 * self.quartic[s] * q2 * q2);
        }
        let mut bonds = Vec::with_capacity(l.saturating_sub(1));
        for s in 0..l.saturating_sub(1) {
            let d = q[s + 1] - q[s];
            bonds.push(0.5 * self.g0 * d * d);
        }
        stats::pairwise_sum(&onsite) + stats::pairwise_sum(&bonds)
    }

    /// Total energy H(q, p).
    pub fn total_energy(&self, state: &State) -> f64 {
        let kin: Vec<f64> = state.p.iter().map(|p| 0.5 * p * p).collect();
        stats::pairwise_sum(&kin) + self.potential(&state.q)
    }

    /// Energy density at site s; the bond to the right belongs to s.
    pub fn energy_density(&self, state: &State, s: usize) -> f64 {
        let l = self.len();
        assert!(s < l, "site index {s} out of range for length {l}");
        let q = state.q[s];
        let q2 = q * q;
        let mut h = 0.5 * state.p[s] * state.p[s]
            + 0.5 * self.omega2[s] * q2
            + 0.25 * self.quartic[s] * q2 * q2;
        if s + 1 < l {
            let d = state.q[s + 1] - q;
            h += 0.5 * self.g0 * d * d;
        }
        h
    }

    /// Energy current across the bond (x-1, x); zero outside 1..=L-1.
    pub fn current(&self, state: &State, x: usize) -> f64 {
        if x == 0 || x >= self.len() {
            return 0.0;
        }
        -self.g0 * state.p[x] * (state.q[x] - state.q[x - 1])
    }

    /// All bond currents j[0..=L-1]; j[0] is identically zero.
    pub fn currents(&self, state: &State) -> Vec<f64> {
        (0..self.len()).map(|x| self.current(state, x)).collect()
    }

    /// Sum of all bond currents (the extensive current functional).
    pub fn current_sum(&self, state: &State) -> f64 {
        let js: Vec<f64> = (1..self.len()).map(|x| self.current(state, x)).collect();
        stats::pairwise_sum(&js)
    }

    /// Force -dH/dq written into `out`.
    pub fn forces_into(&self, q: &[f64], out: &mut [f64]) {
        let l = self.len();
        assert_eq!(q.len(), l);
        assert_eq!(out.len(), l);
        for s in 0..l {
            let left = if s > 0 { q[s - 1] } else { q[s] };
            let right = if s + 1 < l { q[s + 1] } else { q[s] };
            out[s] = -self.omega2[s] * q[s] - self.quartic[s] * q[s] * q[s] * q[s]
                - self.g0 * (2.0 * q[s] - left - right);
        }
    }

    /// Gradient of the potential (the negative of the force).
    pub fn grad_potential(&self, q: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.len()];
        self.forces_into(q, &mut f);
        f.iter_mut().for_each(|v| *v = -*v);
        f
    }

    /// Largest step size for which integration is trusted at inverse
    /// temperature beta: 0.05 over the root of a curvature bound that
    /// includes the anharmonic stiffening at thermal amplitude.
    pub fn dt_max(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::config(format!("beta must be positive, got {beta}")));
        }
        let w2_max = self.omega2.iter().cloned().fold(0.0_f64, f64::max);
        let w2_min = self.omega2.iter().cloned().fold(f64::INFINITY, f64::min);
        let g_max = self.quartic.iter().cloned().fold(0.0_f64, f64::max);
        let q2_cap = 1.0 / (beta * w2_min);
        Ok(0.05 / (w2_max + 4.0 * self.g0 + 3.0 * g_max * q2_cap).sqrt())
    }

    /// Refuse a step size that exceeds the trusted bound at this beta.
    pub fn check_dt(&self, dt: f64, beta: f64) -> Result<()> {
        let bound = self.dt_max(beta)?;
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Integration(format!("step size must be finite and nonzero, got {dt}")));
        }
        if dt.abs() > bound {
            return Err(Error::Integration(format!(
                "step size {dt} exceeds the trusted bound {bound:.6} at beta {beta}"
            )));
        }
        Ok(())
    }

    /// One velocity Verlet sweep (kick, drift, kick) of size dt.
    /// `force` must hold the force at the current q and is left holding the
    /// force at the updated q.
    fn verlet_sweep(&self, state: &mut State, dt: f64, force: &mut [f64]) {
        let l = self.len();
        let half = 0.5 * dt;
        for s in 0..l {
            state.p[s] += half * force[s];
        }
        for s in 0..l {
            state.q[s] += dt * state.p[s];
        }
        self.forces_into(&state.q, force);
        for s in 0..l {
            state.p[s] += half * force[s];
        }
    }

    /// Integrate `steps` steps of size dt in place, calling the observer
    /// after every step and once before the first (observer receives the
    /// step count completed so far, 0..=steps).
    pub fn evolve_observed<F>(
        &self,
        state: &mut State,
        dt: f64,
        steps: usize,
        method: Integrator,
        mut observe: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &State),
    {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Integration(format!(
                "step size must be finite and nonzero, got {dt}"
            )));
        }
        if state.len() != self.len() || state.p.len() != state.q.len() {
            return Err(Error::Index("state length does not match chain".into()));
        }
        if !state.is_finite() {
            return Err(Error::Integration("initial state is not finite".into()));
        }
        let weights = method.weights();
        let mut force = vec![0.0; self.len()];
        observe(0, state);
        for step in 1..=steps {
            self.forces_into(&state.q, &mut force);
            for &w in &weights {
                self.verlet_sweep(state, w * dt, &mut force);
            }
            if step % 128 == 0 && !state.is_finite() {
                return Err(Error::Integration(format!(
                    "trajectory diverged by step {step} (dt {dt})"
                )));
            }
            observe(step, state);
        }
        if !state.is_finite() {
            return Err(Error::Integration("trajectory diverged at final step".into()));
        }
        Ok(())
    }

    /// Integrate without observation.
    pub fn evolve(
        &self,
        state: &mut State,
        dt: f64,
        steps: usize,
        method: Integrator,
    ) -> Result<()> {
        self.evolve_observed(state, dt, steps, method, |_, _| {})
    }

    /// Draw `n_samples` approximately independent states from the Gibbs
    /// measure exp(-beta H) / Z. Momenta are exact Gaussians; positions come
    /// from a Langevin (MALA) walk with automatic thinning.
    pub fn gibbs_sample(
        &self,
        spec: &GibbsSpec,
    ) -> Result<(Vec<State>, GibbsDiagnostics)> {
        spec.validate()?;
        let l = self.len();
        let beta = spec.beta;
        let mut rng = rng::chain_rng(spec.seed, spec.stream_index, Stream::Gibbs);

        // step scale from the curvature at the thermal amplitude; for a purely
        // harmonic chain this is exactly max(omega^2) + 4 g0
        let mut curvature = 0.0_f64;
        for s in 0..l {
            let sigma2_h = 1.0 / (beta * self.omega2[s]);
            let sigma2 = if self.quartic[s] > 0.0 {
                sigma2_h.min(1.0 / (beta * self.quartic[s]).sqrt())
            } else {
                sigma2_h
            };
            curvature = curvature.max(self.omega2[s] + 3.0 * self.quartic[s] * sigma2);
        }
        let lambda_max = curvature + 4.0 * self.g0;
        let mut eps = 0.5 / (beta * lambda_max).sqrt();

        let normal = Normal::new(0.0, 1.0).expect("unit normal is well formed");

        // Start from an exact draw of the decoupled single-site densities.
        // Ignoring the quartic term here puts soft anharmonic sites far out in
        // the tail, where the fixed-step Langevin drift overshoots on every
        // proposal and the chain never leaves its initial state.
        let mut q: Vec<f64> = (0..l)
            .map(|s| {
                if self.quartic[s] <= 0.0 {
                    return normal.sample(&mut rng) / (beta * self.omega2[s]).sqrt();
                }
                let sigma = 1.0 / (beta * self.omega2[s]).sqrt();
                // rejection from the harmonic envelope, weight exp(-beta k q^4/4)
                for _ in 0..1000 {
                    let cand = sigma * normal.sample(&mut rng);
                    let weight = (-0.25 * beta * self.quartic[s] * cand.powi(4)).exp();
                    if rng.random::<f64>() < weight {
                        return cand;
                    }
                }
                sigma.min((beta * self.quartic[s]).powf(-0.25)) * normal.sample(&mut rng)
            })
            .collect();
        let mut grad = self.grad_potential(&q);
        let mut u = self.potential(&q);
        let mut accepted = 0usize;
        let mut proposed = 0usize;

        let mala_step = |q: &mut Vec<f64>,
                             grad: &mut Vec<f64>,
                             u: &mut f64,
                             rng: &mut rand_chacha::ChaCha8Rng,
                             accepted: &mut usize,
                             proposed: &mut usize,
                             eps: f64| {
            let mut q_new = vec![0.0; l];
            let mut noise = vec![0.0; l];
            for s in 0..l {
                noise[s] = normal.sample(rng);
                q_new[s] = q[s] - 0.5 * eps * eps * beta * grad[s] + eps * noise[s];
            }
            let grad_new = self.grad_potential(&q_new);
            let u_new = self.potential(&q_new);
            // log q(q | q_new) - log q(q_new | q), Gaussian proposal kernels
            let mut log_fwd = 0.0;
            let mut log_bwd = 0.0;
            for s in 0..l {
                let mf = q[s] - 0.5 * eps * eps * beta * grad[s];
                let df = q_new[s] - mf;
                log_fwd -= df * df / (2.0 * eps * eps);
                let mb = q_new[s] - 0.5 * eps * eps * beta * grad_new[s];
                let db = q[s] - mb;
                log_bwd -= db * db / (2.0 * eps * eps);
            }
            let log_ratio = -beta * (u_new - *u) + log_bwd - log_fwd;
            *proposed += 1;
            if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                *q = q_new;
                *grad = grad_new;
                *u = u_new;
                *accepted += 1;
            }
        };

        // During the first half of burn-in the step shrinks whenever a window
        // of proposals is nearly all rejected; a chain that starts in a stiff
        // corner of the quartic potential would otherwise reject forever. The
        // step never grows, so a chain that is healthy at the initial guess
        // runs exactly as if no adaptation existed.
        let window = 100usize;
        let adapt_until = spec.burn_in / 2;
        let mut window_accepted = 0usize;
        for step in 0..spec.burn_in {
            let before = accepted;
            mala_step(&mut q, &mut grad, &mut u, &mut rng, &mut accepted, &mut proposed, eps);
            window_accepted += accepted - before;
            if (step + 1) % window == 0 {
                if step < adapt_until && (window_accepted as f64) < 0.3 * window as f64 {
                    eps *= 0.7;
                }
                window_accepted = 0;
            }
        }

        // pilot run to estimate the autocorrelation time of U(q)
        let mut pilot_u = Vec::with_capacity(spec.pilot);
        for _ in 0..spec.pilot {
            mala_step(&mut q, &mut grad, &mut u, &mut rng, &mut accepted, &mut proposed, eps);
            pilot_u.push(u);
        }
        let iact = stats::integrated_autocorr_time(&pilot_u);
        let thinning = (3.0 * iact).ceil().max(1.0) as usize;
        let thinning = thinning.min(spec.max_thinning);

        let mut samples = Vec::with_capacity(spec.n_samples);
        let mut sample_u = Vec::with_capacity(spec.n_samples);
        for _ in 0..spec.n_samples {
            for _ in 0..thinning {
                mala_step(&mut q, &mut grad, &mut u, &mut rng, &mut accepted, &mut proposed, eps);
            }
            let p: Vec<f64> = (0..l)
                .map(|_| normal.sample(&mut rng) / beta.sqrt())
                .collect();
            samples.push(State { q: q.clone(), p });
            sample_u.push(u);
        }

        let acceptance_rate = accepted as f64 / proposed.max(1) as f64;
        let sample_iact = if spec.n_samples >= 10 {
            stats::integrated_autocorr_time(&sample_u)
        } else {
            f64::NAN
        };
        let ess = if spec.n_samples >= 10 {
            spec.n_samples as f64 / sample_iact
        } else {
            f64::NAN
        };
        if spec.n_samples >= 10 && ess < spec.n_samples as f64 / 8.0 {
            return Err(Error::Sampling(format!(
                "thinned chain still strongly correlated: effective sample size {ess:.1} of {}",
                spec.n_samples
            )));
        }
        if acceptance_rate < 0.1 {
            return Err(Error::Sampling(format!(
                "Langevin acceptance rate {acceptance_rate:.3} is too low to trust"
            )));
        }
        Ok((
            samples,
            GibbsDiagnostics {
                acceptance_rate,
                thinning,
                pilot_iact: iact,
                sample_iact,
                ess,
                step_scale: eps,
            },
        ))
    }

    /// Log of the Metropolis ratio for the Langevin proposal q -> q_new.
    /// Exposed for the detailed-balance reciprocity check.
    pub fn mala_log_ratio(&self, beta: f64, eps: f64, q: &[f64], q_new: &[f64]) -> f64 {
        let grad = self.grad_potential(q);
        let grad_new = self.grad_potential(q_new);
        let u = self.potential(q);
        let u_new = self.potential(q_new);
        let mut log_fwd = 0.0;
        let mut log_bwd = 0.0;
        for s in 0..q.len() {
            let mf = q[s] - 0.5 * eps * eps * beta * grad[s];
            let df = q_new[s] - mf;
            log_fwd -= df * df / (2.0 * eps * eps);
            let mb = q_new[s] - 0.5 * eps * eps * beta * grad_new[s];
            let db = q[s] - mb;
            log_bwd -= db * db / (2.0 * eps * eps);
        }
        -beta * (u_new - u) + log_bwd - log_fwd
    }
}

/// Parameters of the Gibbs sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsSpec {
    pub beta: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Index of the sampling stream (distinct ensemble members use distinct indices).
    pub stream_index: u64,
    pub burn_in: usize,
    pub pilot: usize,
    pub max_thinning: usize,
}

impl GibbsSpec {
    pub fn new(beta: f64, n_samples: usize, seed: u64) -> Self {
        GibbsSpec {
            beta,
            n_samples,
            seed,
            stream_index: 0,
            burn_in: 10_000,
            pilot: 2_000,
            max_thinning: 1_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if self.pilot < 100 {
            return Err(Error::config("pilot run must be at least 100 steps"));
        }
        Ok(())
    }
}

/// What the sampler measured about its own walk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GibbsDiagnostics {
    pub acceptance_rate: f64,
    pub thinning: usize,
    pub pilot_iact: f64,
    pub sample_iact: f64,
    pub ess: f64,
    pub step_scale: f64,
}
