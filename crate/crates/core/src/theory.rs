//! Analytic and semi-analytic predictions for the noisy rotator.
//!
//! The central object is the decoherence factor
//! `𝒟(t', t'') = E[exp(-count(t', t'')/t_c)]`, the generating function of the
//! event count at `z = -1/t_c`. Kick `a` (counted from 0) is followed by the
//! events in `(b, a]` since kick `b`, so `𝒟(a, b)` is the two-time generating
//! function of [`RenewalSeries`] without any index shift.
//!
//! The momentum variance is evaluated from the discrete double sum
//!
//! ```text
//! var p(t) = Σ_{a,b<t} c₀(|a-b|) 𝒟(max(a,b), min(a,b)) + (κ/2) N̄(t)
//! ```
//!
//! with `c₀` the force correlation reconstructed from the noiseless variance.

use std::io::{self, Write};

use thiserror::Error;

use crate::harness::fmt_sig;
use crate::renewal::{RenewalError, RenewalSeries, WaitingTimeDist};
use crate::specfun::{ln_gamma_unchecked, mittag_leffler, MlfEvalPolicy, SpecFunError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("invalid theory parameter: {0}")]
    InvalidParams(String),
    #[error("{0} requires 0 < alpha < 1")]
    NeedsSubunitAlpha(&'static str),
    #[error("momentum variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("time {requested} exceeds horizon {horizon}")]
    HorizonExceeded { requested: u64, horizon: u64 },
    #[error(transparent)]
    Renewal(#[from] RenewalError),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// Parameters shared by all predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    pub d_star: f64,
    /// `D*/ħ²`.
    pub t_star: f64,
    /// `2ħ²/κ`; infinite without noise.
    pub t_c: f64,
    /// Localization length in levels, `t*/2`.
    pub xi: f64,
    pub hbar: f64,
    pub kappa: f64,
    pub dist: WaitingTimeDist,
}

impl TheoryParams {
    pub fn new(d_star: f64, hbar: f64, kappa: f64, dist: WaitingTimeDist) -> Result<Self, TheoryError> {
        if !(d_star > 0.0 && d_star.is_finite()) {
            return Err(TheoryError::InvalidParams(format!("D* = {d_star}")));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(TheoryError::InvalidParams(format!("hbar = {hbar}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(TheoryError::InvalidParams(format!("kappa = {kappa}")));
        }
        let t_star = d_star / (hbar * hbar);
        let t_c = if kappa == 0.0 { f64::INFINITY } else { 2.0 * hbar * hbar / kappa };
        Ok(Self { d_star, t_star, t_c, xi: t_star / 2.0, hbar, kappa, dist })
    }

    /// Momentum scale `p* = D*/ħ`.
    pub fn p_star(&self) -> f64 {
        self.d_star / self.hbar
    }

    /// `t_c > 10 t*`.
    pub fn weak_noise(&self) -> bool {
        self.t_c > 10.0 * self.t_star
    }

    /// Coherence time of the exponential regime: `t_c` for noise on every
    /// kick, `τ̄ t_c` for stationary Yule–Simon noise, `None` otherwise.
    pub fn t_c_eff(&self) -> Option<f64> {
        self.dist.mean_waiting_time().map(|tau| tau * self.t_c)
    }

    /// Profile assumed for the IPR term of the purity.
    pub fn default_profile(&self) -> Profile {
        match self.dist.alpha() {
            Some(a) if a <= 1.0 => Profile::Exponential,
            _ => Profile::Gaussian,
        }
    }

    fn z(&self) -> f64 {
        -1.0 / self.t_c
    }
}

/// `D* t* [1 - exp(-t/t*)]`.
pub fn var_p0(t: f64, d_star: f64, t_star: f64) -> f64 {
    -d_star * t_star * (-t / t_star).exp_m1()
}

/// Exact `𝒟(t', t'')` from the renewal recursions up to `t'`.
pub fn decoherence_factor(params: &TheoryParams, t_prime: u64, t_dprime: u64) -> Result<f64, TheoryError> {
    if t_dprime > t_prime {
        return Err(RenewalError::WindowOrder { t_prime, t_dprime }.into());
    }
    let series = RenewalSeries::compute(&params.dist, params.z(), t_prime as usize);
    Ok(series.two_time(t_prime, t_dprime)?)
}

/// `E_α[-Γ(1+α) N̄(t)/t_c]`.
pub fn decoherence_ml_approx(alpha: f64, t_c: f64, nbar_t: f64) -> Result<f64, TheoryError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TheoryError::NeedsSubunitAlpha("decoherence_ml_approx"));
    }
    let x = -ln_gamma_unchecked(1.0 + alpha).exp() * nbar_t / t_c;
    Ok(mittag_leffler(alpha, x, &MlfEvalPolicy::default())?)
}

/// Force correlation `c₀(Δ)` for `Δ = 0..V.len()-1` from a noiseless variance
/// series `V(0..)`: `c₀(0) = V(1)`, `c₀(Δ) = [V(Δ+1) - 2V(Δ) + V(Δ-1)]/2`.
///
/// The last entry needs `V(len)`, so the output is one shorter than `v`.
pub fn noiseless_force_correlation(v: &[f64]) -> Vec<f64> {
    if v.len() < 2 {
        return Vec::new();
    }
    let mut c = Vec::with_capacity(v.len() - 1);
    c.push(v[1] - v[0]);
    for d in 1..v.len() - 1 {
        c.push(0.5 * (v[d + 1] - 2.0 * v[d] + v[d - 1]));
    }
    c
}

/// `var p(t)` for `t = 0..=horizon` from the discrete double sum, with `𝒟`
/// supplied by `series` (which must reach `horizon`).
///
/// Each new kick adds one row, `c₀(0) + 2 Σ_{b<a} c₀(a-b) 𝒟(a,b)`, computed
/// with the running two-time sum in `O(a)`.
pub fn var_p_discrete(c0: &[f64], series: &RenewalSeries, kappa: f64, horizon: usize) -> Vec<f64> {
    assert!(c0.len() >= horizon, "force correlation too short");
    assert!(series.mgf.len() > horizon, "renewal series too short");
    let em1 = series.z.exp_m1();
    let (f, m) = (&series.sprinkling, &series.mgf);
    let mut out = vec![0.0; horizon + 1];
    let mut acc = 0.0;
    for a in 0..horizon {
        // 𝒟(a, b) = M(a) - (e^z - 1) Σ_{s=1}^{b} f(s) M(a-s)
        let mut row = 0.0;
        let mut d = m[a];
        for b in 0..a {
            row += c0[a - b] * d;
            d -= em1 * f[b + 1] * m[a - b - 1];
        }
        acc += c0[0] + 2.0 * row;
        out[a + 1] = acc + 0.5 * kappa * series.mean_count[a + 1];
    }
    out
}

/// `var p(t)` at a single time; see [`TheorySeries`] for whole series.
pub fn var_p_prediction(params: &TheoryParams, t: u64) -> f64 {
    let h = t as usize;
    let v: Vec<f64> = (0..=h + 1).map(|s| var_p0(s as f64, params.d_star, params.t_star)).collect();
    let c0 = noiseless_force_correlation(&v);
    let series = RenewalSeries::compute(&params.dist, params.z(), h);
    var_p_discrete(&c0, &series, params.kappa, h)[h]
}

/// Closed form for exponential decoherence with coherence time `t_c_eff`.
pub fn var_p_crossover(t: f64, d_star: f64, t_star: f64, t_c_eff: f64) -> f64 {
    let lin = d_star / (1.0 + t_c_eff / t_star) * t;
    let sat = d_star * t_star / (1.0 + t_star / t_c_eff).powi(2);
    lin - sat * (-t / t_star - t / t_c_eff).exp_m1()
}

/// Asymptotic `(D* t*/t_c) sin(πα)/(πc) t^α` for `α < 1`.
pub fn var_p_subdiffusive(t: f64, params: &TheoryParams) -> Result<f64, TheoryError> {
    let alpha = params.dist.alpha().filter(|&a| a < 1.0).ok_or(TheoryError::NeedsSubunitAlpha("var_p_subdiffusive"))?;
    let c = params.dist.tail_constant().expect("Yule-Simon has a tail constant");
    let pref = (std::f64::consts::PI * alpha).sin() / (std::f64::consts::PI * c);
    Ok(params.d_star * params.t_star / params.t_c * pref * t.powf(alpha))
}

/// Momentum profile used by the quasiclassical IPR estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Gaussian,
    Exponential,
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Exponential => "exponential",
        })
    }
}

/// `ħ/√(π var p)` for a Gaussian, `ħ/√(2 var p)` for a two-sided exponential.
pub fn ipr_prediction(var_p: f64, hbar: f64, profile: Profile) -> Result<f64, TheoryError> {
    if !(var_p > 0.0) {
        return Err(TheoryError::NonPositiveVariance(var_p));
    }
    Ok(match profile {
        Profile::Gaussian => hbar / (std::f64::consts::PI * var_p).sqrt(),
        Profile::Exponential => hbar / (2.0 * var_p).sqrt(),
    })
}

/// `-2 N̄(t)/t_c`.
pub fn logfid_prediction(params: &TheoryParams, nbar_t: f64) -> f64 {
    -2.0 * nbar_t / params.t_c
}

/// `𝒟²(t,0) + IPR(t)`, clipped to 1; the IPR term is taken as 1 while the
/// predicted variance is still zero.
pub fn purity_prediction(params: &TheoryParams, d_t0: f64, var_p: f64) -> f64 {
    let ipr = ipr_prediction(var_p, params.hbar, params.default_profile()).map_or(1.0, |v| v.min(1.0));
    (d_t0 * d_t0 + ipr).min(1.0)
}

/// Predictions at selected times.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySeries {
    pub times: Vec<u64>,
    pub var_p_pred: Vec<f64>,
    pub decoherence: Vec<f64>,
    pub ipr_pred: Vec<f64>,
    pub purity_pred: Vec<f64>,
    pub logfid_pred: Vec<f64>,
    pub mean_count: Vec<f64>,
}

impl TheorySeries {
    /// Evaluates every prediction on `0..=horizon` (the double sum is
    /// `O(horizon²)`) and keeps the values at `times`.
    pub fn compute(params: &TheoryParams, horizon: u64, times: &[u64]) -> Result<Self, TheoryError> {
        if let Some(&t) = times.iter().find(|&&t| t > horizon) {
            return Err(TheoryError::HorizonExceeded { requested: t, horizon });
        }
        let h = horizon as usize;
        let v: Vec<f64> = (0..=h + 1).map(|s| var_p0(s as f64, params.d_star, params.t_star)).collect();
        let c0 = noiseless_force_correlation(&v);
        let series = RenewalSeries::compute(&params.dist, params.z(), h);
        let var = var_p_discrete(&c0, &series, params.kappa, h);
        let profile = params.default_profile();

        let mut out = Self {
            times: times.to_vec(),
            var_p_pred: Vec::with_capacity(times.len()),
            decoherence: Vec::with_capacity(times.len()),
            ipr_pred: Vec::with_capacity(times.len()),
            purity_pred: Vec::with_capacity(times.len()),
            logfid_pred: Vec::with_capacity(times.len()),
            mean_count: Vec::with_capacity(times.len()),
        };
        for &t in times {
            let k = t as usize;
            // rounding can lift M a few ulp above 1 at z ≈ 0
            let d = series.mgf[k].min(1.0);
            out.var_p_pred.push(var[k]);
            out.decoherence.push(d);
            out.ipr_pred.push(ipr_prediction(var[k], params.hbar, profile).map_or(1.0, |v| v.min(1.0)));
            out.purity_pred.push(purity_prediction(params, d, var[k]));
            out.logfid_pred.push(logfid_prediction(params, series.mean_count[k]));
            out.mean_count.push(series.mean_count[k]);
        }
        Ok(out)
    }

    /// CSV with header `t,var_p_pred,D,ipr_pred,purity_pred,logfid_pred`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,var_p_pred,D,ipr_pred,purity_pred,logfid_pred")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[k],
                fmt_sig(self.var_p_pred[k]),
                fmt_sig(self.decoherence[k]),
                fmt_sig(self.ipr_pred[k]),
                fmt_sig(self.purity_pred[k]),
                fmt_sig(self.logfid_pred[k])
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D_STAR: f64 = 45.28;

    fn hbar_full() -> f64 {
        2.0 * std::f64::consts::PI * 577.0 / 13872.0
    }

    fn ys(a: f64) -> WaitingTimeDist {
        WaitingTimeDist::yule_simon(a).unwrap()
    }

    #[test]
    fn params_derived_quantities() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, ys(2.0)).unwrap();
        let h2 = hbar_full().powi(2);
        assert!((p.t_star - D_STAR / h2).abs() < 1e-12 * p.t_star);
        assert!((p.t_c - 600.0 * h2).abs() < 1e-12 * p.t_c);
        assert!((p.t_c_eff().unwrap() / p.t_star - 0.1236).abs() < 5e-4);
        assert!(!p.weak_noise());
        let q = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 30000.0, ys(2.0)).unwrap();
        assert!((q.t_c_eff().unwrap() / q.t_star - 12.36).abs() < 0.05);
        assert!(!q.weak_noise());
        let r = TheoryParams::new(D_STAR, hbar_full(), 1e-6, ys(2.0)).unwrap();
        assert!(r.weak_noise());
        assert!(TheoryParams::new(-1.0, 1.0, 0.0, ys(2.0)).is_err());
    }

    #[test]
    fn var_p0_limits() {
        let ts = D_STAR / hbar_full().powi(2);
        assert_eq!(var_p0(0.0, D_STAR, ts), 0.0);
        assert!((var_p0(1e9, D_STAR, ts) - 3.002e4).abs() < 5.0);
        assert!((var_p0(1e-3, D_STAR, ts) / (D_STAR * 1e-3) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn force_correlation_cases() {
        let v: Vec<f64> = (0..50).map(|t| 3.0 * t as f64).collect();
        let c = noiseless_force_correlation(&v);
        assert_eq!(c[0], 3.0);
        assert!(c[1..].iter().all(|&x| x == 0.0));

        let v: Vec<f64> = (0..=101).map(|t| var_p0(t as f64, D_STAR, 60.0)).collect();
        let c = noiseless_force_correlation(&v);
        assert!(c[1..].iter().all(|&x| x < 0.0));
        for t in 1..=100usize {
            let mut s = 0.0;
            for a in 0..t {
                for b in 0..t {
                    s += c[a.abs_diff(b)];
                }
            }
            assert!((s - v[t]).abs() < 1e-9 * v[t].max(1.0), "t = {t}");
        }
    }

    #[test]
    fn noiseless_prediction_reproduces_var_p0() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 0.0, ys(0.5)).unwrap();
        let times: Vec<u64> = vec![1, 10, 100, 1000, 3000];
        let s = TheorySeries::compute(&p, 3000, &times).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let v0 = var_p0(t as f64, D_STAR, p.t_star);
            assert!((s.var_p_pred[k] / v0 - 1.0).abs() < 1e-6);
            assert!((s.decoherence[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_decoherence_is_exponential() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, WaitingTimeDist::DeterministicUnit).unwrap();
        let tc = p.t_c;
        // exact z makes 𝒟 = exp(-(t'-t'')/t_c) for integer windows
        let d = decoherence_factor(&p, 120, 80).unwrap();
        assert!((d - (-40.0 / tc).exp()).abs() < 1e-13);
        assert_eq!(decoherence_factor(&p, 7, 7).unwrap(), 1.0);
        assert!(decoherence_factor(&p, 7, 8).is_err());
    }

    #[test]
    fn decoherence_monotone_in_both_arguments() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 0.1, ys(0.5)).unwrap();
        let s = RenewalSeries::compute(&p.dist, p.z(), 400);
        for a in (10..400).step_by(37) {
            let row = s.two_time_row(a);
            assert!(row.windows(2).all(|w| w[1] >= w[0] - 1e-15));
            assert!(row.iter().all(|&d| d > 0.0 && d <= 1.0 + 1e-15));
            let next = s.two_time_row(a + 1);
            for b in 0..=a {
                assert!(next[b] <= row[b] + 1e-15);
            }
        }
    }

    #[test]
    fn ml_approx_cases() {
        assert_eq!(decoherence_ml_approx(0.5, 10.0, 0.0).unwrap(), 1.0);
        assert!(decoherence_ml_approx(1.0, 10.0, 1.0).is_err());
        // large-argument power law: E_α(-y) ≈ 1/(y Γ(1-α))
        let (a, tc) = (0.5, 3.0);
        let c = ys(a).tail_constant().unwrap();
        let t: f64 = 1e8;
        let nbar = t.powf(a) * (std::f64::consts::PI * a).sin() / (std::f64::consts::PI * c);
        let approx = decoherence_ml_approx(a, tc, nbar).unwrap();
        let power = c * tc / a * t.powf(-a);
        assert!((approx / power - 1.0).abs() < 1e-3);
    }

    #[test]
    fn crossover_limits() {
        let ts = 600.0;
        let tce = 74.0;
        let big = 1e7;
        let slope = (var_p_crossover(big + 1.0, D_STAR, ts, tce) - var_p_crossover(big, D_STAR, ts, tce)).abs();
        assert!((slope - D_STAR / (1.0 + tce / ts)).abs() < 1e-6);
        for t in [1.0, 100.0, 5000.0] {
            let a = var_p_crossover(t, D_STAR, ts, 1e300);
            assert!((a - var_p0(t, D_STAR, ts)).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn subdiffusive_law() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, ys(0.5)).unwrap();
        let a = var_p_subdiffusive(1000.0, &p).unwrap();
        let b = var_p_subdiffusive(2000.0, &p).unwrap();
        assert!((b / a - 2f64.sqrt()).abs() < 1e-12);
        let c = ys(0.5).tail_constant().unwrap();
        assert!(((std::f64::consts::PI * 0.5).sin() / (std::f64::consts::PI * c) - 0.7183).abs() < 1e-4);
        let q = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, ys(2.0)).unwrap();
        assert!(var_p_subdiffusive(10.0, &q).is_err());
    }

    #[test]
    fn ipr_formulas() {
        let h = 0.3;
        let g = ipr_prediction(5.0, h, Profile::Gaussian).unwrap();
        let e = ipr_prediction(5.0, h, Profile::Exponential).unwrap();
        assert!((g / e - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((ipr_prediction(h * h, h, Profile::Gaussian).unwrap() - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!(ipr_prediction(0.0, h, Profile::Gaussian).is_err());
    }

    #[test]
    fn purity_and_logfid() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, WaitingTimeDist::DeterministicUnit).unwrap();
        let s = TheorySeries::compute(&p, 50, &[0, 1, 10, 50]).unwrap();
        assert_eq!(s.purity_pred[0], 1.0);
        assert_eq!(s.logfid_pred[0], 0.0);
        for k in 1..4 {
            let t = s.times[k] as f64;
            assert!((s.logfid_pred[k] + 2.0 * t / p.t_c).abs() < 1e-12);
            assert!(s.purity_pred[k] >= s.decoherence[k].powi(2));
            assert!(s.purity_pred[k] >= s.ipr_pred[k].min(1.0) - 1e-15);
        }
        // short times: purity ≈ exp(-2t/t_c) plus the small IPR term
        assert!((s.decoherence[2].powi(2) - (-20.0 / p.t_c).exp()).abs() < 1e-12);
        assert!(TheorySeries::compute(&p, 50, &[51]).is_err());
    }

    #[test]
    fn csv_header() {
        let p = TheoryParams::new(D_STAR, hbar_full(), 1.0 / 300.0, ys(2.0)).unwrap();
        let s = TheorySeries::compute(&p, 5, &[0, 5]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,var_p_pred,D,ipr_pred,purity_pred,logfid_pred\n0,"));
    }
}
