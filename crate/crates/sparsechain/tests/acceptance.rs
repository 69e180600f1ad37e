//! End-to-end acceptance suite.
//!
//! Nine tests, one per headline property of the laboratory, each printing a
//! single summary line of the form
//!
//!   [acceptance k/9] <name>: PASS (<headline numbers>, <elapsed>)
//!
//! Run `cargo test --test acceptance -- --nocapture` to see the lines; the
//! asserts behind them carry the same numbers, so a plain `cargo test` still
//! fails loudly when a property breaks. Tests grab a shared lock before
//! doing real work, so wall-clock budgets are measured one test at a time
//! whatever thread count the harness uses.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use sparsechain::anderson::{build_operator, localization_profile, Model};
use sparsechain::chain::{Chain, GibbsSpec, Integrator, State};
use sparsechain::correlation::{
    audit_current_decomposition, estimate_classical, ClassicalCorrelationSpec,
    DecompositionAuditSpec,
};
use sparsechain::disorder::{sample_disorder, DisorderRealization, DisorderSpec, OmegaLaw};
use sparsechain::fermion::{
    full_current_r, full_hamiltonian, full_number, full_site_number, FreeChain, Interacting,
};
use sparsechain::griffiths::{
    gap_tail, griffiths_sites, predict_exponent, GapTailSpec, GriffithsOptions,
};
use sparsechain::rng::{self, Stream};
use sparsechain::splitting::{boundary_decay_experiment, classical_splitting, BoundaryDecaySpec};
use sparsechain::stats;

static GATE: Mutex<()> = Mutex::new(());

fn run_alone() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn uniform_law() -> OmegaLaw {
    OmegaLaw::Uniform { min: 0.5, max: 1.5 }
}

fn report(index: usize, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("[acceptance {index}/9] {name}: {verdict} ({detail})");
}

fn gaussian_state(l: usize, seed: u64, scale: f64) -> State {
    let mut rng = rng::chain_rng(seed, 0, Stream::State);
    let normal = Normal::new(0.0, scale).expect("normal parameters are finite");
    State {
        q: (0..l).map(|_| normal.sample(&mut rng)).collect(),
        p: (0..l).map(|_| normal.sample(&mut rng)).collect(),
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
}

/// Scan seeds from `start` until a realization carries at least one kept
/// window of half-width `ell`; deterministic given the constants.
fn kept_window(l: usize, p: f64, ell: usize, start: u64) -> (DisorderRealization, usize, u64) {
    let opts = GriffithsOptions::with_xi(4.0);
    for seed in start.. {
        let spec = DisorderSpec { l, p, omega_law: uniform_law(), seed };
        let real = sample_disorder(&spec).expect("disorder sampling must succeed");
        let set = griffiths_sites(&real, ell, 0.4, &opts).expect("window scan must succeed");
        if let Some(&site) = set.sites.first() {
            return (real, site, seed);
        }
    }
    unreachable!("the seed scan terminates long before exhausting u64");
}

/// Window energies split exactly: left plus right reassembles the window
/// energy, the correction matrices of the two sides cancel, their entries
/// stay bounded by one, and the split energy is a constant of the window's
/// own motion.
#[test]
fn splitting_identities_are_exact_on_random_windows() {
    let _alone = run_alone();
    let start = Instant::now();
    let realizations = 500usize;

    let mut worst_energy_sum = 0.0_f64;
    let mut worst_cancel = 0.0_f64;
    let mut worst_entry = 0.0_f64;
    let mut worst_drift = 0.0_f64;

    for m in 0..realizations {
        let ell = 1 + m % 15;
        let n = 2 * ell + 1;
        let spec = DisorderSpec {
            l: n,
            p: 0.0,
            omega_law: uniform_law(),
            seed: rng::derive_seed(1701, m as u64, Stream::Member),
        };
        let real = sample_disorder(&spec).expect("disorder sampling must succeed");
        let chain = Chain::new(real, 0.4, 1.0).expect("chain construction must succeed");
        let split = classical_splitting(&chain, ell, ell).expect("splitting must build");
        let basis = &split.basis;

        // right-side coefficients assembled independently from the defining
        // mode sums; they must cancel the left-side matrix entrywise
        let c_right: Vec<f64> = (0..n)
            .map(|k| (ell..n).map(|y| basis.psi[(y, k)] * basis.psi[(y, k)]).sum())
            .collect();
        let mut gamma_r = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            for z in 0..n {
                let pz = basis.psi[(z, k)];
                if pz == 0.0 {
                    continue;
                }
                for w in 0..n {
                    gamma_r[(z, w)] += c_right[k] * pz * basis.psi[(w, k)];
                }
            }
        }
        for z in ell..n {
            gamma_r[(z, z)] -= 1.0;
        }
        gamma_r.scale_mut(0.5);
        for z in 0..n {
            for w in 0..n {
                worst_cancel = worst_cancel.max((split.gamma[(z, w)] + gamma_r[(z, w)]).abs());
                worst_entry = worst_entry.max(split.gamma[(z, w)].abs());
            }
        }

        // left plus right mode energy reassembles the window energy
        let state = gaussian_state(n, 9000 + m as u64, 0.6);
        let e_left = split.mode_split_energy(&state);
        let mut e_right = 0.0;
        for k in 0..n {
            let mut phi = 0.0;
            let mut pi = 0.0;
            for z in 0..n {
                phi += basis.psi[(z, k)] * state.q[z];
                pi += basis.psi[(z, k)] * state.p[z];
            }
            e_right += c_right[k] * 0.5 * (pi * pi + basis.nu2[k] * phi * phi);
        }
        let window_energy = chain.total_energy(&state);
        worst_energy_sum = worst_energy_sum.max((e_left + e_right - window_energy).abs());

        // the split energy is conserved by the window's own flow over t = 50
        let mut moving = state;
        let e0 = split.mode_split_energy(&moving);
        let mut drift = 0.0_f64;
        chain
            .evolve_observed(&mut moving, 0.01, 5000, Integrator::Composition6, |step, st| {
                if step % 4 == 0 {
                    drift = drift.max((split.mode_split_energy(st) - e0).abs());
                }
            })
            .expect("window evolution must stay finite");
        worst_drift = worst_drift.max(drift);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok_sum = worst_energy_sum <= 1e-12;
    let ok_cancel = worst_cancel <= 1e-12;
    let ok_entry = worst_entry <= 1.0 + 1e-12;
    let ok_drift = worst_drift <= 1e-8;
    let ok_time = elapsed < 120.0;
    let ok = ok_sum && ok_cancel && ok_entry && ok_drift && ok_time;
    report(
        1,
        "splitting exactness",
        ok,
        &format!(
            "max |E_L + E_R - E_window| {worst_energy_sum:.2e}, \
             max |gamma_L + gamma_R| {worst_cancel:.2e}, max |gamma| {worst_entry:.6}, \
             max split-energy drift {worst_drift:.2e} over t = 50, \
             {realizations} realizations, {elapsed:.1}s"
        ),
    );
    assert!(ok_sum, "energy reassembly off by {worst_energy_sum:.3e}, tolerance 1e-12");
    assert!(ok_cancel, "left/right cancellation off by {worst_cancel:.3e}, tolerance 1e-12");
    assert!(ok_entry, "a gamma entry reached {worst_entry}, bound is 1");
    assert!(ok_drift, "split energy drifted {worst_drift:.3e}, tolerance 1e-8");
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 120s budget");
}

/// Along thermal trajectories the window observable moves exactly as fast
/// as the interface current plus the boundary fluctuation, and the
/// integrated bookkeeping over every kept window closes.
#[test]
fn window_observable_follows_current_plus_fluctuation() {
    let _alone = run_alone();
    let start = Instant::now();
    let (l, p, ell, dt) = (64usize, 0.5, 2usize, 0.01);
    let steps = 5000usize;

    let mut worst_fd = 0.0_f64;
    let mut seed_cursor = 1u64;
    let mut first_seed = None;
    for traj in 0..3u64 {
        let (real, site, seed) = kept_window(l, p, ell, seed_cursor);
        seed_cursor = seed + 1;
        first_seed.get_or_insert(seed);
        let chain = Chain::new(real, 0.4, 1.0).expect("chain construction must succeed");
        chain.check_dt(dt, 1.0).expect("step size must be admissible");
        let split = classical_splitting(&chain, site, ell).expect("splitting must build");
        assert!(split.harmonic_window, "kept windows are interaction-free by construction");

        let mut gspec = GibbsSpec::new(1.0, 1, seed);
        gspec.stream_index = traj;
        let (states, _diag) = chain.gibbs_sample(&gspec).expect("thermal sampling must succeed");
        let mut state = states.into_iter().next().expect("one thermal state requested");

        let mut u = Vec::with_capacity(steps + 1);
        let mut rhs = Vec::with_capacity(steps + 1);
        chain
            .evolve_observed(&mut state, dt, steps, Integrator::Composition6, |_, st| {
                u.push(split.u(&chain, st, 0.0));
                rhs.push(split.interface_current(&chain, st) + split.fluctuation(&chain, st));
            })
            .expect("trajectory must stay finite");
        for k in 2..steps - 1 {
            let fd = (-u[k + 2] + 8.0 * u[k + 1] - 8.0 * u[k - 1] + u[k - 2]) / (12.0 * dt);
            worst_fd = worst_fd.max((fd - rhs[k]).abs());
        }
    }

    let audit_spec = DecompositionAuditSpec {
        disorder: DisorderSpec {
            l,
            p,
            omega_law: uniform_law(),
            seed: first_seed.expect("at least one trajectory ran"),
        },
        g0: 0.4,
        g: 1.0,
        beta: 1.0,
        ell,
        options: GriffithsOptions::with_xi(4.0),
        t_max: 50.0,
        dt,
        n_checkpoints: 26,
        integrator: Integrator::Composition6,
        gibbs_stream: 7,
        negate_right_spans: false,
    };
    let audit = audit_current_decomposition(&audit_spec).expect("audit must run");

    let elapsed = start.elapsed().as_secs_f64();
    let ok_fd = worst_fd <= 1e-5;
    let ok_audit = audit.max_residual <= 1e-6;
    let ok_time = elapsed < 300.0;
    let ok = ok_fd && ok_audit && ok_time;
    report(
        2,
        "interface equation of motion",
        ok,
        &format!(
            "max finite-difference residual {worst_fd:.2e} over 3 trajectories, \
             audit residual {:.2e} over {} windows, {elapsed:.1}s",
            audit.max_residual,
            audit.sites.len()
        ),
    );
    assert!(ok_fd, "finite-difference residual {worst_fd:.3e}, tolerance 1e-5");
    assert!(
        ok_audit,
        "decomposition audit residual {:.3e}, tolerance 1e-6",
        audit.max_residual
    );
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 300s budget");
}

/// The fitted localization length is stable across seeds, and both
/// splitting-decay rates (edge mass with window size, row mass with
/// distance) track its inverse within a factor of two.
#[test]
fn localization_length_sets_the_splitting_decay_rates() {
    let _alone = run_alone();
    let start = Instant::now();

    let profile = |seed: u64| {
        let spec = DisorderSpec { l: 64, p: 0.5, omega_law: uniform_law(), seed };
        localization_profile(&spec, 64, 500, Model::Classical, 0.4)
            .expect("profile estimation must succeed")
    };
    let prof_a = profile(11);
    let prof_b = profile(12);
    let xi_a = prof_a.xi_hat;
    let xi_b = prof_b.xi_hat;
    let xi_hat = 0.5 * (xi_a + xi_b);
    let seed_spread = (xi_a - xi_b).abs() / xi_hat;

    let decay = boundary_decay_experiment(&BoundaryDecaySpec {
        omega_law: uniform_law(),
        g0: 0.4,
        ells: vec![2, 3, 4, 5, 6, 7, 8],
        ensemble: 500,
        seed: 21,
    })
    .expect("decay experiment must succeed");

    let target = 1.0 / xi_hat;
    let in_band = |rate: f64| rate >= 0.5 * target && rate <= 2.0 * target;

    let elapsed = start.elapsed().as_secs_f64();
    let ok_seed = seed_spread <= 0.10;
    let ok_r = in_band(decay.rate_r);
    let ok_gamma = in_band(decay.rate_gamma);
    let ok_time = elapsed < 600.0;
    let ok = ok_seed && ok_r && ok_gamma && ok_time;
    report(
        3,
        "localization decay",
        ok,
        &format!(
            "xi_hat {xi_a:.3} vs {xi_b:.3} (spread {:.1}%), edge-mass rate {:.4}, \
             row-mass rate {:.4}, band [{:.4}, {:.4}], {elapsed:.1}s",
            100.0 * seed_spread,
            decay.rate_r,
            decay.rate_gamma,
            0.5 * target,
            2.0 * target
        ),
    );
    assert!(ok_seed, "xi_hat spread {seed_spread:.3} across seeds, tolerance 0.10");
    assert!(
        ok_r,
        "edge-mass decay rate {:.4} outside [{:.4}, {:.4}]",
        decay.rate_r,
        0.5 * target,
        2.0 * target
    );
    assert!(
        ok_gamma,
        "row-mass decay rate {:.4} outside [{:.4}, {:.4}]",
        decay.rate_gamma,
        0.5 * target,
        2.0 * target
    );
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 600s budget");
}

/// Without anharmonic sites the integrated-current correlation of the
/// disordered chain stops growing: C(200) stays within 1.5x of C(50).
#[test]
fn harmonic_chain_correlation_reaches_a_plateau() {
    let _alone = run_alone();
    let start = Instant::now();
    let spec = ClassicalCorrelationSpec {
        disorder: DisorderSpec { l: 256, p: 0.0, omega_law: uniform_law(), seed: 707 },
        g0: 0.4,
        g: 1.0,
        beta: 1.0,
        ensemble: 200,
        t_max: 200.0,
        dt: 0.01,
        n_checkpoints: 5,
        integrator: Integrator::Composition4,
        burn_in: None,
        drift_tolerance: None,
    };
    let est = estimate_classical(&spec).expect("estimation must succeed");
    assert_eq!(est.times.len(), 5, "five checkpoints requested");
    assert!(
        (est.times[1] - 50.0).abs() < 1e-9 && (est.times[4] - 200.0).abs() < 1e-9,
        "checkpoints must land on t = 50 and t = 200, got {:?}",
        est.times
    );
    let c50 = est.mean[1];
    let c200 = est.mean[4];
    let ratio = c200 / c50;
    let drift_rate = est.drift_failure_rate.expect("classical estimates track drift");

    let elapsed = start.elapsed().as_secs_f64();
    let ok_pos = c50 > 0.0;
    let ok_ratio = ratio < 1.5;
    let ok_drift = drift_rate <= 0.05;
    let ok_time = elapsed < 1200.0;
    let ok = ok_pos && ok_ratio && ok_drift && ok_time;
    report(
        4,
        "harmonic plateau",
        ok,
        &format!(
            "C(50) {c50:.4} +- {:.4}, C(200) {c200:.4} +- {:.4}, ratio {ratio:.3}, \
             drift failures {:.1}%, {elapsed:.1}s",
            est.stderr[1],
            est.stderr[4],
            100.0 * drift_rate
        ),
    );
    assert!(ok_pos, "C(50) must be positive, got {c50}");
    assert!(ok_ratio, "C(200)/C(50) = {ratio:.4}, bound 1.5");
    assert!(ok_drift, "drift failure rate {drift_rate:.3} above 5%");
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 1200s budget");
}

/// Spacings between rare interaction-free windows have a survival function
/// that stays below the closed-form exponential bound in its region of
/// validity, at the largest half-width tested.
#[test]
fn rare_window_spacings_respect_the_survival_bound() {
    let _alone = run_alone();
    let start = Instant::now();
    let spec = GapTailSpec {
        l: 200_000,
        p: 0.5,
        omega_law: uniform_law(),
        ells: vec![2, 3, 4, 5, 6],
        realizations: 1000,
        seed: 505,
        coupling: 0.4,
        options: GriffithsOptions::unfiltered(),
    };
    let results = gap_tail(&spec).expect("spacing statistics must succeed");
    let largest = results
        .iter()
        .find(|r| r.ell == 6)
        .expect("half-width 6 was requested");

    let elapsed = start.elapsed().as_secs_f64();
    let ok_support = largest.n_gaps > 1000;
    let ok_bound = largest.max_violation <= 0.0;
    let ok_time = elapsed < 120.0;
    let ok = ok_support && ok_bound && ok_time;
    report(
        5,
        "gap-tail bound",
        ok,
        &format!(
            "ell 6: {} gaps pooled, d0 {:.0}, max violation {:.3e}, \
             block-bound violation {:.3e}, {elapsed:.1}s",
            largest.n_gaps, largest.d0, largest.max_violation, largest.max_block_violation
        ),
    );
    assert!(ok_support, "only {} spacings pooled at ell 6", largest.n_gaps);
    assert!(
        ok_bound,
        "empirical survival exceeded the bound by {:.3e} at ell 6",
        largest.max_violation
    );
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 120s budget");
}

/// The closed-form transport exponent crosses one exactly at the threshold
/// dilution for any localization length, and the optimal window-growth
/// coefficient balances the two competing growth rates.
#[test]
fn exponent_prediction_crosses_one_at_the_threshold_dilution() {
    let _alone = run_alone();
    let start = Instant::now();
    let mut worst_gamma = 0.0_f64;
    let mut worst_balance = 0.0_f64;
    for k in 0..100u64 {
        let xi = 10.0_f64.powf(-0.5 + 2.0 * rng::uniform(606, k, Stream::State));
        let p_star = 1.0 - (-1.0 / (9.0 * xi)).exp();
        let at_threshold = predict_exponent(p_star, xi).expect("prediction must evaluate");
        worst_gamma = worst_gamma.max((at_threshold.gamma - 1.0).abs());

        let p = 0.01 + 0.98 * rng::uniform(607, k, Stream::State);
        let pred = predict_exponent(p, xi).expect("prediction must evaluate");
        worst_balance =
            worst_balance.max((2.0 + pred.a_opt * pred.b1 - pred.a_opt * pred.b2).abs());
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok_gamma = worst_gamma <= 1e-12;
    let ok_balance = worst_balance <= 1e-12;
    let ok = ok_gamma && ok_balance;
    report(
        6,
        "exponent formula",
        ok,
        &format!(
            "max |gamma - 1| at threshold {worst_gamma:.2e}, \
             max rate-balance defect {worst_balance:.2e}, 100 draws each, {elapsed:.2}s"
        ),
    );
    assert!(ok_gamma, "gamma at threshold off by {worst_gamma:.3e}, tolerance 1e-12");
    assert!(ok_balance, "rate balance off by {worst_balance:.3e}, tolerance 1e-12");
}

/// At g = 0 the covariance-based correlation matches full diagonalization,
/// and on the full many-body space the particle number is conserved while
/// the occupation of every site changes exactly by the current divergence.
#[test]
fn fermion_routes_agree_and_currents_balance() {
    let _alone = run_alone();
    let start = Instant::now();
    let ts = [1.0, 5.0, 10.0];

    let mut worst_route = 0.0_f64;
    for seed in [71, 72, 73] {
        let spec = DisorderSpec { l: 6, p: 0.5, omega_law: uniform_law(), seed };
        let real = sample_disorder(&spec).expect("disorder sampling must succeed");
        let covariance_route = FreeChain::new(&real, 1.0)
            .expect("free chain must build")
            .current_correlation(1.0, &ts);
        let spectral_route = Interacting::new(&real, 1.0, 0.0)
            .expect("sector diagonalization must build")
            .current_correlation(1.0, &ts);
        for (a, b) in covariance_route.iter().zip(&spectral_route) {
            worst_route = worst_route.max((a - b).abs());
        }
    }

    let l = 8usize;
    let spec8 = DisorderSpec { l, p: 0.5, omega_law: uniform_law(), seed: 74 };
    let real8 = sample_disorder(&spec8).expect("disorder sampling must succeed");
    let n_tot = full_number(l).expect("number operator must build");
    let mut worst_conservation = 0.0_f64;
    let mut worst_continuity = 0.0_f64;
    for g in [0.0, 0.7] {
        let h = full_hamiltonian(&real8, 1.0, g).expect("Hamiltonian must build");
        worst_conservation = worst_conservation.max(max_abs(&(&h * &n_tot - &n_tot * &h)));
        for x in 0..l {
            let n_x = full_site_number(l, x).expect("site occupation must build");
            let inflow = full_current_r(l, 1.0, x).expect("bond current must build");
            let outflow = full_current_r(l, 1.0, x + 1).expect("bond current must build");
            let commutator = &h * &n_x - &n_x * &h;
            let divergence = inflow - outflow;
            worst_continuity = worst_continuity.max(max_abs(&(commutator - divergence)));
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok_route = worst_route <= 1e-8;
    let ok_conservation = worst_conservation <= 1e-13;
    let ok_continuity = worst_continuity <= 1e-13;
    let ok_time = elapsed < 300.0;
    let ok = ok_route && ok_conservation && ok_continuity && ok_time;
    report(
        7,
        "quantum oracle equivalence",
        ok,
        &format!(
            "covariance vs spectral route {worst_route:.2e} over 3 realizations at t in {{1,5,10}}, \
             number conservation {worst_conservation:.2e}, continuity {worst_continuity:.2e}, \
             {elapsed:.1}s"
        ),
    );
    assert!(ok_route, "correlation routes differ by {worst_route:.3e}, tolerance 1e-8");
    assert!(
        ok_conservation,
        "[H, N] reached {worst_conservation:.3e}, tolerance 1e-13"
    );
    assert!(
        ok_continuity,
        "occupation continuity off by {worst_continuity:.3e}, tolerance 1e-13"
    );
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 300s budget");
}

/// Sparse anharmonicity slows the growth of the integrated-current
/// correlation: the fitted late-window exponent at dilution 0.2 sits below
/// the dense-chain exponent by more than twice the combined uncertainty.
#[test]
fn sparse_interactions_slow_the_correlation_growth() {
    let _alone = run_alone();
    let start = Instant::now();
    let make = |p: f64, seed: u64| ClassicalCorrelationSpec {
        disorder: DisorderSpec { l: 128, p, omega_law: uniform_law(), seed },
        g0: 0.4,
        g: 1.0,
        beta: 1.0,
        ensemble: 200,
        t_max: 500.0,
        dt: 0.01,
        n_checkpoints: 65,
        integrator: Integrator::Composition4,
        burn_in: None,
        drift_tolerance: None,
    };
    let sparse = estimate_classical(&make(0.2, 808)).expect("sparse estimation must succeed");
    let dense = estimate_classical(&make(1.0, 809)).expect("dense estimation must succeed");
    let fit_sparse = sparse.exponent.as_ref().expect("late-window fit must converge");
    let fit_dense = dense.exponent.as_ref().expect("late-window fit must converge");
    let gap = fit_dense.exponent - fit_sparse.exponent;
    let combined = fit_sparse.stderr.hypot(fit_dense.stderr);
    let sparse_drift = sparse.drift_failure_rate.unwrap_or(1.0);
    let dense_drift = dense.drift_failure_rate.unwrap_or(1.0);

    let elapsed = start.elapsed().as_secs_f64();
    let ok_order = gap > 2.0 * combined;
    let ok_drift = sparse_drift <= 0.05 && dense_drift <= 0.05;
    let ok_time = elapsed < 14_400.0;
    let ok = ok_order && ok_drift && ok_time;
    report(
        8,
        "directional subdiffusion",
        ok,
        &format!(
            "exponent p=0.2: {:.3} +- {:.3}, p=1.0: {:.3} +- {:.3}, gap {gap:.3} vs 2 sigma {:.3}, \
             drift failures {:.1}% / {:.1}%, {elapsed:.0}s",
            fit_sparse.exponent,
            fit_sparse.stderr,
            fit_dense.exponent,
            fit_dense.stderr,
            2.0 * combined,
            100.0 * sparse_drift,
            100.0 * dense_drift
        ),
    );
    assert!(
        ok_order,
        "exponent gap {gap:.4} not larger than twice the combined error {combined:.4}"
    );
    assert!(
        ok_drift,
        "drift failure rates {sparse_drift:.3} / {dense_drift:.3} above 5%"
    );
    assert!(ok_time, "runtime {elapsed:.0}s exceeded the 4h budget");
}

/// The thermal sampler reproduces the exact marginals: unit momentum
/// temperature, zero mean currents, and (at g = 0) the position covariance
/// of the inverse stiffness matrix.
#[test]
fn thermal_sampler_matches_the_exact_marginals() {
    let _alone = run_alone();
    let start = Instant::now();
    let (l, beta) = (32usize, 1.0);
    let base = DisorderSpec { l, p: 0.5, omega_law: uniform_law(), seed: 909 };
    let real = sample_disorder(&base).expect("disorder sampling must succeed");

    // anharmonic chain: momentum temperature and mean currents
    let chain = Chain::new(real.clone(), 0.4, 1.0).expect("chain construction must succeed");
    let mut gspec = GibbsSpec::new(beta, 5000, 909);
    gspec.stream_index = 0;
    let (samples, diag) = chain.gibbs_sample(&gspec).expect("sampling must succeed");
    let momenta_sq: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.p.iter().map(|&v| v * v))
        .collect();
    let mean_p2 = stats::mean(&momenta_sq);
    let p2_error = (mean_p2 - 1.0 / beta).abs() * beta;

    let mut worst_current_sigma = 0.0_f64;
    for x in [8usize, 16, 24] {
        let series: Vec<f64> = samples.iter().map(|s| chain.current(s, x)).collect();
        let m = stats::mean(&series);
        let se = stats::stderr_of_mean(&series);
        worst_current_sigma = worst_current_sigma.max(m.abs() / se);
    }

    // harmonic chain: position covariance against the inverse stiffness
    let chain0 = Chain::new(real, 0.4, 0.0).expect("chain construction must succeed");
    let mut gspec0 = GibbsSpec::new(beta, 5000, 910);
    gspec0.stream_index = 1;
    let (samples0, _) = chain0.gibbs_sample(&gspec0).expect("sampling must succeed");
    let op = build_operator(&chain0.real, 0, l, Model::Classical, 0.4)
        .expect("stiffness operator must build");
    let mut worst_cov_sigma = 0.0_f64;
    for (i, j) in [(8usize, 8usize), (16, 16), (16, 17), (16, 18), (12, 16)] {
        let mut unit = vec![0.0; l];
        unit[j] = 1.0;
        let column = op.solve(&unit).expect("tridiagonal solve must succeed");
        let oracle = column[i] / beta;
        let series: Vec<f64> = samples0.iter().map(|s| s.q[i] * s.q[j]).collect();
        let m = stats::mean(&series);
        let se = stats::stderr_of_mean(&series);
        worst_cov_sigma = worst_cov_sigma.max((m - oracle).abs() / se);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ok_p2 = p2_error <= 0.01;
    let ok_current = worst_current_sigma <= 3.0;
    let ok_cov = worst_cov_sigma <= 3.0;
    let ok_time = elapsed < 300.0;
    let ok = ok_p2 && ok_current && ok_cov && ok_time;
    report(
        9,
        "sampler validity",
        ok,
        &format!(
            "<p^2> off by {:.2}% of 1/beta, worst current pull {worst_current_sigma:.2} sigma, \
             worst covariance pull {worst_cov_sigma:.2} sigma over 5 entries, \
             acceptance {:.2}, thinning {}, {elapsed:.1}s",
            100.0 * p2_error,
            diag.acceptance_rate,
            diag.thinning
        ),
    );
    assert!(ok_p2, "<p^2> relative error {p2_error:.4}, tolerance 0.01");
    assert!(
        ok_current,
        "a mean current sits {worst_current_sigma:.2} sigma from zero, limit 3"
    );
    assert!(
        ok_cov,
        "a covariance entry sits {worst_cov_sigma:.2} sigma from its oracle, limit 3"
    );
    assert!(ok_time, "runtime {elapsed:.1}s exceeded the 300s budget");
}
