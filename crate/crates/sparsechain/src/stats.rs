//! Small statistics toolbox: deterministic reductions, least-squares fits,
//! quantiles, autocorrelation times, jackknife errors.

use crate::error::{Error, Result};

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// much better conditioned than a running sum; used for every ensemble
/// reduction so results do not depend on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let devs: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&devs) / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Interpolated quantile of unsorted data, q in [0,1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] * (1.0 - frac) + v[hi] * frac
}

/// Ordinary least squares y = intercept + slope * x.
#[derive(Clone, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(Error::Estimation(format!(
            "linear fit needs >= 2 paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx = pairwise_sum(&xs.iter().map(|x| (x - mx) * (x - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(
        &xs.iter()
            .zip(ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .collect::<Vec<_>>(),
    );
    let syy = pairwise_sum(&ys.iter().map(|y| (y - my) * (y - my)).collect::<Vec<_>>());
    if sxx <= 0.0 {
        return Err(Error::Estimation("degenerate abscissa in linear fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        r2,
        n,
    })
}

/// Integrated autocorrelation time of a scalar series.
///
/// Sums normalized autocovariances until the first negative term
/// (initial-positive-sequence rule), capped at n/4 lags.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 8 {
        return 1.0;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for k in 1..(n / 4).max(2) {
        let ck: f64 = (0..n - k)
            .map(|i| (xs[i] - m) * (xs[i + k] - m))
            .sum::<f64>()
            / (n - k) as f64;
        let rho = ck / c0;
        if rho < 0.0 {
            break;
        }
        tau += 2.0 * rho;
    }
    tau.max(1.0)
}

/// Delete-one jackknife standard error of `statistic` computed on members.
pub fn jackknife_stderr<F>(members: &[f64], statistic: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = members.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut reps = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&members[..i]);
        buf.extend_from_slice(&members[i + 1..]);
        reps.push(statistic(&buf));
    }
    let rm = mean(&reps);
    let ss: f64 = reps.iter().map(|r| (r - rm) * (r - rm)).sum();
    ((n - 1) as f64 / n as f64 * ss).sqrt()
}

/// Composite Simpson integral of evenly spaced samples (step h).
/// Handles an odd final interval with a three-point closed rule.
pub fn simpson(ys: &[f64], h: f64) -> f64 {
    let n = ys.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (ys[0] + ys[1]);
    }
    let intervals = n - 1;
    let even_end = if intervals % 2 == 0 { n } else { n - 1 };
    let mut s = ys[0] + ys[even_end - 1];
    for (i, y) in ys[1..even_end - 1].iter().enumerate() {
        s += if i % 2 == 0 { 4.0 * y } else { 2.0 * y };
    }
    let mut total = s * h / 3.0;
    if intervals % 2 != 0 {
        // last interval via quadratic through the final three points
        total += h * (-ys[n - 3] + 8.0 * ys[n - 2] + 5.0 * ys[n - 1]) / 12.0;
    }
    total
}

/// Cumulative trapezoid integral; out[k] = integral up to sample k.
pub fn cumulative_trapezoid(ys: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in ys.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}
