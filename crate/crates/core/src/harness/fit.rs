//! One-parameter least-squares fits.

use thiserror::Error;

use crate::quantum::Histogram;
use crate::theory::{var_p0, Profile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("not enough usable points ({0})")]
    TooFewPoints(usize),
    #[error("fit window [{0}, {1}] spans less than a decade")]
    WindowTooNarrow(f64, f64),
    #[error("poor fit: relative rms residual {rel_rms:.3} exceeds {threshold}")]
    PoorFit { rel_rms: f64, threshold: f64, result: FitResult },
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub value: f64,
    pub std_error: f64,
    /// Root-mean-square residual divided by the rms of the data.
    pub residual_norm: f64,
    pub window: (f64, f64),
}

/// Break-time fits with a larger relative rms residual are rejected.
pub const BREAK_FIT_MAX_REL_RMS: f64 = 0.2;

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fits `V(t) = D* t* [1 - exp(-t/t*)]` with `t* = D*/ħ²` to `v[t]`,
/// `t = 0..v.len()`, in the single parameter `D*`.
pub fn fit_break_time(v: &[f64], hbar: f64, max_rel_rms: f64) -> Result<FitResult, FitError> {
    let pts: Vec<(f64, f64)> = v.iter().enumerate().map(|(t, &y)| (t as f64, y)).filter(|(_, y)| y.is_finite()).collect();
    if pts.len() < 3 {
        return Err(FitError::TooFewPoints(pts.len()));
    }
    let h2 = hbar * hbar;
    let model = |d: f64, t: f64| var_p0(t, d, d / h2);
    let rss = |d: f64| pts.iter().map(|&(t, y)| (y - model(d, t)).powi(2)).sum::<f64>();

    // saturation D*²/ħ² ≈ late-time level gives the starting scale
    let tail = &pts[pts.len() - pts.len() / 4 - 1..];
    let level = tail.iter().map(|p| p.1).sum::<f64>() / tail.len() as f64;
    let d0 = (level.max(f64::MIN_POSITIVE) * h2).sqrt();
    let ln_d = golden_min(|x| rss(x.exp()), (d0 / 20.0).ln(), (d0 * 20.0).ln(), 1e-12);
    let d = ln_d.exp();

    let n = pts.len() as f64;
    let r = rss(d);
    let eps = 1e-6 * d;
    let jtj: f64 = pts.iter().map(|&(t, _)| ((model(d + eps, t) - model(d - eps, t)) / (2.0 * eps)).powi(2)).sum();
    let std_error = (r / (n - 1.0) / jtj).sqrt();
    let scale = (pts.iter().map(|p| p.1 * p.1).sum::<f64>() / n).sqrt();
    let rel = (r / n).sqrt() / scale;
    let result = FitResult { value: d, std_error, residual_norm: rel, window: (pts[0].0, pts[pts.len() - 1].0) };
    if rel > max_rel_rms {
        return Err(FitError::PoorFit { rel_rms: rel, threshold: max_rel_rms, result });
    }
    Ok(result)
}

/// Ordinary least-squares slope of `ln y` against `ln t` for points with
/// `window.0 ≤ t ≤ window.1` and `y > 0`. The window must span a decade.
pub fn fit_power_law(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<FitResult, FitError> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= 10.0 * lo * (1.0 - 1e-12)) {
        return Err(FitError::WindowTooNarrow(lo, hi));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(&t, &y)| t >= lo && t <= hi && y > 0.0 && y.is_finite())
        .map(|(&t, &y)| (t.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(FitError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let std_error = (rss / (nf - 2.0) / sxx).sqrt();
    Ok(FitResult { value: slope, std_error, residual_norm: (rss / nf).sqrt(), window })
}

/// Outcome of the Gaussian-versus-exponential comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileFit {
    pub profile: Profile,
    /// Fitted variance of the winning model.
    pub variance: f64,
    /// Decay rate `λ = √(2/v)` of the exponential fit.
    pub lambda: f64,
    pub gaussian_variance: f64,
    pub exponential_variance: f64,
    pub rss_gaussian: f64,
    pub rss_exponential: f64,
    pub bins_used: usize,
}

/// Outer fraction of the histogram's half-extent left out of profile fits;
/// on a periodic momentum grid this is where wrapped-around weight piles up.
pub const PROFILE_EDGE_FRACTION: f64 = 0.1;

/// Fits `(2πv)^{-1/2} e^{-p²/2v}` and `(λ/2) e^{-λ|p|}`, `λ = √(2/v)`, to the
/// log-density of bins above `1e-6` of the peak, skipping the bin nearest
/// `p = 0` and the outer [`PROFILE_EDGE_FRACTION`] of the support, and
/// returns the model with the smaller residual.
pub fn fit_profile(h: &Histogram) -> Result<ProfileFit, FitError> {
    let peak = h.density.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(FitError::DegenerateHistogram("no positive density".into()));
    }
    let centre = h
        .centers
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .expect("nonempty");
    let extent = h.centers.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let reach = (1.0 - PROFILE_EDGE_FRACTION) * extent;
    let pts: Vec<(f64, f64)> = h
        .centers
        .iter()
        .zip(&h.density)
        .enumerate()
        .filter(|&(i, (&p, &d))| i != centre && d > 1e-6 * peak && p.abs() <= reach)
        .map(|(_, (&p, &d))| (p, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(FitError::DegenerateHistogram(format!("only {} usable bins", pts.len())));
    }
    let m2 = pts.iter().map(|p| p.0 * p.0 * p.1.exp()).sum::<f64>() / pts.iter().map(|p| p.1.exp()).sum::<f64>();
    let v0 = m2.max(f64::MIN_POSITIVE);

    let rss_g = |v: f64| {
        let c = -0.5 * (2.0 * std::f64::consts::PI * v).ln();
        pts.iter().map(|&(p, y)| (y - c + p * p / (2.0 * v)).powi(2)).sum::<f64>()
    };
    let rss_e = |v: f64| {
        let lam = (2.0 / v).sqrt();
        let c = (lam / 2.0).ln();
        pts.iter().map(|&(p, y)| (y - c + lam * p.abs()).powi(2)).sum::<f64>()
    };
    let (lo, hi) = ((v0 / 1e4).ln(), (v0 * 1e4).ln());
    let vg = golden_min(|x| rss_g(x.exp()), lo, hi, 1e-10).exp();
    let ve = golden_min(|x| rss_e(x.exp()), lo, hi, 1e-10).exp();
    let (rg, re) = (rss_g(vg), rss_e(ve));
    let (profile, variance) = if rg <= re { (Profile::Gaussian, vg) } else { (Profile::Exponential, ve) };
    Ok(ProfileFit {
        profile,
        variance,
        lambda: (2.0 / ve).sqrt(),
        gaussian_variance: vg,
        exponential_variance: ve,
        rss_gaussian: rg,
        rss_exponential: re,
        bins_used: pts.len(),
    })
}
