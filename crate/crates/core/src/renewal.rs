//! Integer-time renewal processes: waiting-time laws, timeline sampling,
//! and exact counting statistics of the number of events.
//!
//! Conventions used throughout:
//!
//! * events occur at integer kick indices `t ≥ 1`;
//! * `count(t', t'')` is the number of events in the window `t'' < t ≤ t'`,
//!   so `count(t, 0)` counts the noisy kicks among the first `t` kicks;
//! * series indexed by time have length `horizon + 1` and slot `0` holds the
//!   value at `t = 0` (`f(0) = 0`, `N̄(0) = 0`, `M(z; 0) = 1`).
//!
//! All series are computed by exact integer-time recursions, `O(T²)` in the
//! horizon `T`.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::specfun::{ln_gamma_ratio, ln_gamma_unchecked};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenewalError {
    #[error("Yule-Simon exponent must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("waiting times start at 1, got tau = {0}")]
    TauOutOfRange(u64),
    #[error("window end t' = {t_prime} precedes start t'' = {t_dprime}")]
    WindowOrder { t_prime: u64, t_dprime: u64 },
    #[error("time {requested} exceeds horizon {horizon}")]
    HorizonExceeded { requested: u64, horizon: u64 },
    #[error("event count must be at least 1")]
    ZeroEvents,
}

/// Waiting-time law of the renewal process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaitingTimeDist {
    /// Every kick is a noise event, `ω(τ) = δ_{τ,1}`.
    DeterministicUnit,
    /// `ω(τ) = α Γ(τ) Γ(α+1) / Γ(τ+α+1)`, tail `~ αΓ(α+1) τ^{-1-α}`.
    YuleSimon { alpha: f64 },
}

impl fmt::Display for WaitingTimeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DeterministicUnit => f.write_str("deterministic-unit"),
            Self::YuleSimon { alpha } => write!(f, "yule-simon(alpha={alpha})"),
        }
    }
}

impl WaitingTimeDist {
    pub fn yule_simon(alpha: f64) -> Result<Self, RenewalError> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self::YuleSimon { alpha })
        } else {
            Err(RenewalError::InvalidAlpha(alpha))
        }
    }

    /// `None` for `DeterministicUnit`, otherwise the alpha passed to `yule_simon`.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Self::DeterministicUnit => None,
            Self::YuleSimon { alpha } => Some(alpha),
        }
    }

    /// Tail constant `c` in `ω(τ) ~ c τ^{-1-α}`; `c = αΓ(α+1)` for Yule–Simon.
    pub fn tail_constant(&self) -> Option<f64> {
        self.alpha().map(|a| a * ln_gamma_unchecked(a + 1.0).exp())
    }

    /// Mean waiting time, `None` when it diverges (`α ≤ 1`).
    pub fn mean_waiting_time(&self) -> Option<f64> {
        match *self {
            Self::DeterministicUnit => Some(1.0),
            Self::YuleSimon { alpha } if alpha > 1.0 => Some(alpha / (alpha - 1.0)),
            Self::YuleSimon { .. } => None,
        }
    }

    /// `true` for laws whose sprinkling rate tends to a constant.
    pub fn is_stationary(&self) -> bool {
        self.mean_waiting_time().is_some()
    }

    pub fn pmf(&self, tau: u64) -> Result<f64, RenewalError> {
        if tau == 0 {
            return Err(RenewalError::TauOutOfRange(tau));
        }
        Ok(self.pmf_unchecked(tau))
    }

    fn pmf_unchecked(&self, tau: u64) -> f64 {
        match *self {
            Self::DeterministicUnit => {
                if tau == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::YuleSimon { alpha } => {
                // α Γ(α+1) · Γ(τ)/Γ(τ+α+1)
                let ln = alpha.ln() + ln_gamma_unchecked(alpha + 1.0) + ln_gamma_ratio(tau as f64, alpha + 1.0);
                ln.exp()
            }
        }
    }

    /// `P(τ > k)`. For Yule–Simon this is the closed form
    /// `k B(k, α+1) = Γ(k+1)Γ(α+1)/Γ(k+α+1)`.
    pub fn survival(&self, k: u64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        match *self {
            Self::DeterministicUnit => 0.0,
            Self::YuleSimon { alpha } => {
                (ln_gamma_unchecked(alpha + 1.0) + ln_gamma_ratio(k as f64 + 1.0, alpha)).exp()
            }
        }
    }

    /// `ω(0..=horizon)` with `ω(0) = 0`.
    pub fn pmf_table(&self, horizon: usize) -> Vec<f64> {
        let mut w = vec![0.0; horizon + 1];
        for (tau, slot) in w.iter_mut().enumerate().skip(1) {
            *slot = self.pmf_unchecked(tau as u64);
        }
        w
    }

    /// Largest waiting time with nonzero probability, if bounded.
    fn support_end(&self) -> Option<usize> {
        match self {
            Self::DeterministicUnit => Some(1),
            Self::YuleSimon { .. } => None,
        }
    }
}

/// Reproducibility identifier: master seed plus an independent stream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SeedTag {
    pub master: u64,
    pub stream: u64,
}

impl SeedTag {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    /// ChaCha generator on this tag's stream; identical tags give identical
    /// sequences regardless of which thread runs them.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Inverse-transform sampler for a [`WaitingTimeDist`].
///
/// Holds the survival function tabulated up to `table_len`; draws beyond the
/// table are resolved by bracketing and bisection on the closed form.
#[derive(Debug, Clone)]
pub struct WaitingTimeSampler {
    dist: WaitingTimeDist,
    survival: Vec<f64>,
}

/// Draws larger than this are reported as this value.
pub const MAX_WAITING_TIME: u64 = 1 << 62;

impl WaitingTimeSampler {
    pub const DEFAULT_TABLE_LEN: usize = 1_000_000;

    pub fn new(dist: WaitingTimeDist) -> Self {
        Self::with_table_len(dist, Self::DEFAULT_TABLE_LEN)
    }

    pub fn with_table_len(dist: WaitingTimeDist, table_len: usize) -> Self {
        let survival = match dist {
            WaitingTimeDist::DeterministicUnit => Vec::new(),
            WaitingTimeDist::YuleSimon { .. } => (0..=table_len.max(1) as u64).map(|k| dist.survival(k)).collect(),
        };
        Self { dist, survival }
    }

    pub fn dist(&self) -> WaitingTimeDist {
        self.dist
    }

    /// Smallest `k ≥ 1` with `survival(k) ≤ u`, `u` uniform on `(0, 1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if let WaitingTimeDist::DeterministicUnit = self.dist {
            return 1;
        }
        let u = 1.0 - rng.random::<f64>();
        let table = &self.survival[1..];
        let idx = table.partition_point(|&s| s > u);
        if idx < table.len() {
            return idx as u64 + 1;
        }
        // tail: survival(lo) > u, find hi with survival(hi) <= u
        let mut lo = table.len() as u64;
        let mut hi = lo.saturating_mul(2);
        while self.dist.survival(hi) > u {
            if hi >= MAX_WAITING_TIME {
                return MAX_WAITING_TIME;
            }
            lo = hi;
            hi = hi.saturating_mul(2).min(MAX_WAITING_TIME);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.dist.survival(mid) > u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// One sampled sequence of noise-event times up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTimeline {
    pub horizon: u64,
    /// Strictly increasing event times in `[1, horizon]`.
    pub event_times: Vec<u64>,
    pub seed_tag: SeedTag,
}

impl NoiseTimeline {
    /// Cumulative sums of waiting times drawn from `rng`, truncated at the
    /// horizon. `on_event` is invoked once per retained event, after its
    /// waiting time has been drawn, so callers can attach marks from the
    /// same stream.
    pub fn generate_with<R: Rng + ?Sized>(
        sampler: &WaitingTimeSampler,
        horizon: u64,
        rng: &mut R,
        seed_tag: SeedTag,
        mut on_event: impl FnMut(&mut R, u64),
    ) -> Self {
        let mut event_times = Vec::new();
        let mut t = 0u64;
        loop {
            let tau = sampler.sample(rng);
            t = t.saturating_add(tau);
            if t > horizon {
                break;
            }
            event_times.push(t);
            on_event(rng, t);
        }
        Self { horizon, event_times, seed_tag }
    }

    /// Timeline generated from the generator of `seed_tag`.
    pub fn generate(sampler: &WaitingTimeSampler, horizon: u64, seed_tag: SeedTag) -> Self {
        let mut rng = seed_tag.rng();
        Self::generate_with(sampler, horizon, &mut rng, seed_tag, |_, _| {})
    }

    /// Timeline without events.
    pub fn empty(horizon: u64) -> Self {
        Self { horizon, event_times: Vec::new(), seed_tag: SeedTag::default() }
    }

    /// Number of events with `t'' < t ≤ t'`.
    pub fn count(&self, t_prime: u64, t_dprime: u64) -> Result<usize, RenewalError> {
        if t_dprime > t_prime {
            return Err(RenewalError::WindowOrder { t_prime, t_dprime });
        }
        let upto = |t: u64| self.event_times.partition_point(|&e| e <= t);
        Ok(upto(t_prime) - upto(t_dprime))
    }

    pub fn is_event(&self, t: u64) -> bool {
        self.event_times.binary_search(&t).is_ok()
    }
}

/// Sprinkling distribution `f(0..=horizon)`: probability of an event at `t`.
///
/// `f(t) = ω(t) + Σ_{τ=1}^{t-1} ω(τ) f(t-τ)`.
pub fn sprinkling(dist: &WaitingTimeDist, horizon: usize) -> Vec<f64> {
    let w = dist.pmf_table(horizon);
    sprinkling_from_pmf(&w, dist.support_end())
}

fn sprinkling_from_pmf(w: &[f64], support: Option<usize>) -> Vec<f64> {
    let horizon = w.len() - 1;
    let mut f = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        let top = support.map_or(t - 1, |s| s.min(t - 1));
        let mut acc = w[t];
        for tau in 1..=top {
            acc += w[tau] * f[t - tau];
        }
        f[t] = acc;
    }
    f
}

/// Mean number of events `N̄(t, 0) = Σ_{s ≤ t} f(s)`, for `t = 0..=horizon`.
pub fn mean_inverse_time(dist: &WaitingTimeDist, horizon: usize) -> Vec<f64> {
    cumulative(&sprinkling(dist, horizon))
}

fn cumulative(f: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    f.iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

/// `M(z; t, 0) = E[exp(z N(t, 0))]` for `t = 0..=horizon`, from the
/// first-event decomposition `M(t) = S(t) + e^z Σ_{τ=1}^{t} ω(τ) M(t-τ)`.
pub fn mgf_inverse_time(dist: &WaitingTimeDist, z: f64, horizon: usize) -> Vec<f64> {
    let w = dist.pmf_table(horizon);
    mgf_from_pmf(dist, &w, z)
}

fn mgf_from_pmf(dist: &WaitingTimeDist, w: &[f64], z: f64) -> Vec<f64> {
    let horizon = w.len() - 1;
    let ez = z.exp();
    let support = dist.support_end();
    let mut m = vec![0.0; horizon + 1];
    m[0] = 1.0;
    for t in 1..=horizon {
        let top = support.map_or(t, |s| s.min(t));
        let mut acc = 0.0;
        for tau in 1..=top {
            acc += w[tau] * m[t - tau];
        }
        m[t] = dist.survival(t as u64) + ez * acc;
    }
    m
}

/// `M(z; t', t'') = E[exp(z · count(t', t''))]`.
///
/// Builds the single-time tables up to `t'`; use [`RenewalSeries::two_time`]
/// when many windows share a horizon.
pub fn mgf_two_time(dist: &WaitingTimeDist, z: f64, t_prime: u64, t_dprime: u64) -> Result<f64, RenewalError> {
    if t_dprime > t_prime {
        return Err(RenewalError::WindowOrder { t_prime, t_dprime });
    }
    RenewalSeries::compute(dist, z, t_prime as usize).two_time(t_prime, t_dprime)
}

/// `P(t_N = t)` for `t = 0..=horizon`: the `n`-fold convolution of the pmf.
/// Mass beyond the horizon is dropped, so the total is `P(t_N ≤ horizon)`.
pub fn random_time_distribution(
    dist: &WaitingTimeDist,
    n_events: usize,
    horizon: usize,
) -> Result<Vec<f64>, RenewalError> {
    if n_events == 0 {
        return Err(RenewalError::ZeroEvents);
    }
    let w = dist.pmf_table(horizon);
    let mut p = w.clone();
    for _ in 1..n_events {
        let mut next = vec![0.0; horizon + 1];
        for (t, slot) in next.iter_mut().enumerate().skip(2) {
            let mut acc = 0.0;
            for tau in 1..t {
                acc += w[tau] * p[t - tau];
            }
            *slot = acc;
        }
        p = next;
    }
    Ok(p)
}

/// Sprinkling, mean count and MGF of one process at one `z`, on a common
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSeries {
    pub dist: WaitingTimeDist,
    pub z: f64,
    pub sprinkling: Vec<f64>,
    pub mean_count: Vec<f64>,
    pub mgf: Vec<f64>,
}

impl RenewalSeries {
    pub fn compute(dist: &WaitingTimeDist, z: f64, horizon: usize) -> Self {
        let w = dist.pmf_table(horizon);
        let sprinkling = sprinkling_from_pmf(&w, dist.support_end());
        let mean_count = cumulative(&sprinkling);
        let mgf = mgf_from_pmf(dist, &w, z);
        Self { dist: *dist, z, sprinkling, mean_count, mgf }
    }

    pub fn horizon(&self) -> u64 {
        (self.mgf.len() - 1) as u64
    }

    /// `M(z; t', t'') = M(t') - (e^z - 1) Σ_{s=1}^{t''} f(s) M(t' - s)`.
    pub fn two_time(&self, t_prime: u64, t_dprime: u64) -> Result<f64, RenewalError> {
        if t_dprime > t_prime {
            return Err(RenewalError::WindowOrder { t_prime, t_dprime });
        }
        if t_prime > self.horizon() {
            return Err(RenewalError::HorizonExceeded { requested: t_prime, horizon: self.horizon() });
        }
        if t_prime == t_dprime {
            return Ok(1.0);
        }
        let a = t_prime as usize;
        let em1 = self.z.exp_m1();
        let acc: f64 = (1..=t_dprime as usize).map(|s| self.sprinkling[s] * self.mgf[a - s]).sum();
        Ok(self.mgf[a] - em1 * acc)
    }

    /// `M(z; a, b)` for `b = 0..=a`, by accumulating the two-time sum.
    pub fn two_time_row(&self, a: usize) -> Vec<f64> {
        let em1 = self.z.exp_m1();
        let mut row = Vec::with_capacity(a + 1);
        let mut acc = self.mgf[a];
        row.push(acc);
        for b in 1..=a {
            acc -= em1 * self.sprinkling[b] * self.mgf[a - b];
            row.push(acc);
        }
        row[a] = 1.0;
        row
    }

    /// CSV with header `t,f,nbar,mgf`, twelve significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,f,nbar,mgf")?;
        for t in 0..self.mgf.len() {
            writeln!(
                out,
                "{},{},{},{}",
                t,
                crate::harness::fmt_sig(self.sprinkling[t]),
                crate::harness::fmt_sig(self.mean_count[t]),
                crate::harness::fmt_sig(self.mgf[t])
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ys(alpha: f64) -> WaitingTimeDist {
        WaitingTimeDist::yule_simon(alpha).unwrap()
    }

    #[test]
    fn pmf_values() {
        let det = WaitingTimeDist::DeterministicUnit;
        assert_eq!(det.pmf(1).unwrap(), 1.0);
        assert_eq!(det.pmf(2).unwrap(), 0.0);
        assert!((ys(0.5).pmf(1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(det.pmf(0), Err(RenewalError::TauOutOfRange(0))));
    }

    #[test]
    fn pmf_power_law_tail() {
        let d = ys(2.0);
        for &tau in &[1e4f64, 1e6] {
            let ratio = d.pmf(tau as u64).unwrap() / (4.0 * tau.powi(-3));
            assert!((ratio - 1.0).abs() < 5.0 / tau, "tau = {tau}, ratio = {ratio}");
        }
    }

    #[test]
    fn survival_values() {
        assert_eq!(WaitingTimeDist::DeterministicUnit.survival(0), 1.0);
        assert_eq!(WaitingTimeDist::DeterministicUnit.survival(1), 0.0);
        assert_eq!(ys(0.7).survival(0), 1.0);
        // partial-sum oracle
        let d = ys(0.5);
        let partial: f64 = (1..=10).map(|t| d.pmf(t).unwrap()).sum();
        assert!((d.survival(10) - (1.0 - partial)).abs() < 1e-12);
    }

    #[test]
    fn normalization_holds_for_many_truncations() {
        for &alpha in &[0.25, 0.5, 1.0, 2.0, 3.5] {
            let d = ys(alpha);
            let mut acc = 0.0;
            for t in 1..=5000u64 {
                acc += d.pmf(t).unwrap();
                if t % 250 == 0 {
                    assert!((acc + d.survival(t) - 1.0).abs() < 1e-12, "α={alpha} T={t}");
                }
            }
        }
    }

    #[test]
    fn derived_constants() {
        let d = ys(0.5);
        let c = d.tail_constant().unwrap();
        assert!((c - 0.5 * 0.886_226_925_452_758).abs() < 1e-14);
        assert_eq!(d.mean_waiting_time(), None);
        assert_eq!(ys(2.0).mean_waiting_time(), Some(2.0));
        assert!(WaitingTimeDist::yule_simon(0.0).is_err());
        assert!(WaitingTimeDist::yule_simon(f64::NAN).is_err());
    }

    #[test]
    fn deterministic_timeline() {
        let s = WaitingTimeSampler::new(WaitingTimeDist::DeterministicUnit);
        let tl = NoiseTimeline::generate(&s, 5, SeedTag::new(1, 0));
        assert_eq!(tl.event_times, vec![1, 2, 3, 4, 5]);
        assert_eq!(tl.count(5, 0).unwrap(), 5);
        assert_eq!(tl.count(4, 2).unwrap(), 2);
        assert!(tl.count(2, 4).is_err());
    }

    #[test]
    fn timeline_is_deterministic_per_seed() {
        let s = WaitingTimeSampler::with_table_len(ys(0.5), 1000);
        let a = NoiseTimeline::generate(&s, 10_000, SeedTag::new(7, 3));
        let b = NoiseTimeline::generate(&s, 10_000, SeedTag::new(7, 3));
        let c = NoiseTimeline::generate(&s, 10_000, SeedTag::new(7, 4));
        assert_eq!(a, b);
        assert_ne!(a.event_times, c.event_times);
        assert!(a.event_times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.event_times.iter().all(|&t| (1..=10_000).contains(&t)));
    }

    #[test]
    fn sampler_tail_beyond_table_matches_closed_form() {
        // a tiny table forces the bracketing path
        let d = ys(0.5);
        let small = WaitingTimeSampler::with_table_len(d, 4);
        let big = WaitingTimeSampler::with_table_len(d, 100_000);
        let mut r1 = SeedTag::new(11, 0).rng();
        let mut r2 = SeedTag::new(11, 0).rng();
        for _ in 0..20_000 {
            assert_eq!(small.sample(&mut r1), big.sample(&mut r2));
        }
    }

    #[test]
    fn series_trivial_cases() {
        let det = WaitingTimeDist::DeterministicUnit;
        assert!(sprinkling(&det, 20).iter().skip(1).all(|&f| f == 1.0));
        let nbar = mean_inverse_time(&det, 20);
        assert!(nbar.iter().enumerate().all(|(t, &n)| n == t as f64));
        let z = -0.3;
        let m = mgf_inverse_time(&det, z, 30);
        for (t, &v) in m.iter().enumerate() {
            assert!((v - (z * t as f64).exp()).abs() < 1e-14);
        }
        for d in [det, ys(0.5), ys(2.0)] {
            assert!(mgf_inverse_time(&d, 0.0, 50).iter().all(|&v| (v - 1.0).abs() < 1e-13));
        }
    }

    #[test]
    fn two_time_boundaries() {
        let d = ys(0.5);
        let s = RenewalSeries::compute(&d, -0.05, 300);
        assert_eq!(s.two_time(120, 120).unwrap(), 1.0);
        assert_eq!(s.two_time(120, 0).unwrap(), s.mgf[120]);
        assert!(s.two_time(10, 20).is_err());
        assert!(s.two_time(301, 0).is_err());
        let row = s.two_time_row(200);
        for b in [0usize, 1, 50, 199] {
            assert!((row[b] - s.two_time(200, b as u64).unwrap()).abs() < 1e-13);
        }
        let det = RenewalSeries::compute(&WaitingTimeDist::DeterministicUnit, -0.05, 100);
        assert!((det.two_time(80, 30).unwrap() - (-0.05f64 * 50.0).exp()).abs() < 1e-13);
    }

    #[test]
    fn random_time_distribution_cases() {
        let p = random_time_distribution(&WaitingTimeDist::DeterministicUnit, 3, 10).unwrap();
        assert_eq!(p[3], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        let p = random_time_distribution(&ys(0.5), 2, 10).unwrap();
        assert!((p[2] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert!(random_time_distribution(&ys(0.5), 0, 10).is_err());
    }

    #[test]
    fn csv_header_and_width() {
        let s = RenewalSeries::compute(&ys(2.0), -0.1, 3);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,f,nbar,mgf"));
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert!((row[1].parse::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-11);
    }
}
