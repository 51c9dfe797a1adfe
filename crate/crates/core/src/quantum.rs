//! Quantum kicked rotator on a finite momentum grid.
//!
//! States are stored in the momentum basis in FFT order: slot `i` holds level
//! `l = i` for `i < ceil(N/2)` and `l = i - N` otherwise, so the physical grid
//! is centred at zero, `l ∈ [-N/2, N/2)`. One Floquet period applies the kick
//! `exp(-i K_t cos θ / ħ)` on the angle grid `θ_j = 2πj/N` and then the free
//! rotation `exp(-i ħ l² / 2)` in momentum space.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::harness::fmt_sig;
use crate::renewal::{NoiseTimeline, SeedTag, WaitingTimeDist, WaitingTimeSampler};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("invalid rotator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
    #[error("requested {requested} kicks but the noise timeline ends at {horizon}")]
    HorizonExceeded { requested: u64, horizon: u64 },
    #[error("at least 2 realizations are required, got {0}")]
    TooFewRealizations(usize),
    #[error("all {0} fidelity pairs underflowed")]
    AllPairsUnderflowed(usize),
    #[error("state length {got} does not match grid size {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Shipped grid sizes, successive convergents of the same continued fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// `M = 577, N = 13872`.
    Full,
    /// `M = 24, N = 577`.
    Fast,
}

impl Preset {
    pub fn m_n(self) -> (u64, usize) {
        match self {
            Self::Full => (577, 13872),
            Self::Fast => (24, 577),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Fast => "fast",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "fast" => Ok(Self::Fast),
            other => Err(format!("unknown preset '{other}' (expected full or fast)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Physical and numerical parameters of the rotator.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatorConfig {
    pub k: f64,
    pub m: u64,
    pub n: usize,
    /// `2πM/N`.
    pub hbar: f64,
}

/// Regular kick strength used throughout.
pub const DEFAULT_K: f64 = 7.5;

impl RotatorConfig {
    pub fn new(k: f64, m: u64, n: usize) -> Result<Self, QuantumError> {
        if n < 2 {
            return Err(QuantumError::InvalidConfig(format!("N = {n} is too small")));
        }
        if m == 0 {
            return Err(QuantumError::InvalidConfig("M must be positive".into()));
        }
        if !k.is_finite() {
            return Err(QuantumError::InvalidConfig(format!("K = {k} is not finite")));
        }
        if (m as u128 * n as u128) % 2 == 1 {
            // the rotation phase exp(-iħl²/2) is periodic in l only for even MN
            log::warn!("M*N is odd; the momentum grid is not exactly periodic");
        }
        let hbar = 2.0 * PI * m as f64 / n as f64;
        Ok(Self { k, m, n, hbar })
    }

    pub fn preset(preset: Preset) -> Self {
        let (m, n) = preset.m_n();
        Self::new(DEFAULT_K, m, n).expect("presets are valid")
    }

    /// Momentum level of FFT slot `i`.
    #[inline]
    pub fn level(&self, i: usize) -> i64 {
        if i < self.n.div_ceil(2) {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// FFT slot of momentum level `l`, if `l` is on the grid.
    pub fn slot(&self, l: i64) -> Option<usize> {
        let lo = -(self.n as i64 / 2);
        let hi = lo + self.n as i64;
        if l < lo || l >= hi {
            return None;
        }
        Some(l.rem_euclid(self.n as i64) as usize)
    }

    pub fn momentum(&self, i: usize) -> f64 {
        self.hbar * self.level(i) as f64
    }

    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n as f64
    }
}

/// Amplitude noise: box-distributed detunings on `(-W, W)` at renewal events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub w: f64,
    /// `W²/3`.
    pub kappa: f64,
    pub dist: WaitingTimeDist,
}

impl NoiseParams {
    pub fn from_w(w: f64, dist: WaitingTimeDist) -> Result<Self, QuantumError> {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(QuantumError::InvalidNoise(format!("W = {w} must be finite and nonnegative")));
        }
        Ok(Self { w, kappa: w * w / 3.0, dist })
    }

    pub fn from_kappa(kappa: f64, dist: WaitingTimeDist) -> Result<Self, QuantumError> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(QuantumError::InvalidNoise(format!("kappa = {kappa} must be finite and nonnegative")));
        }
        Ok(Self { w: (3.0 * kappa).sqrt(), kappa, dist })
    }

    pub fn noiseless() -> Self {
        Self { w: 0.0, kappa: 0.0, dist: WaitingTimeDist::DeterministicUnit }
    }
}

/// One sampled noise history: event times and the detuning at each event.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub timeline: NoiseTimeline,
    /// `detunings[i]` belongs to `timeline.event_times[i]`.
    pub detunings: Vec<f64>,
}

impl NoiseRealization {
    /// Waiting times and detunings are drawn alternately from the stream of
    /// `seed_tag`.
    pub fn generate(params: &NoiseParams, sampler: &WaitingTimeSampler, horizon: u64, seed_tag: SeedTag) -> Self {
        let mut rng = seed_tag.rng();
        let mut detunings = Vec::new();
        let w = params.w;
        let timeline = NoiseTimeline::generate_with(sampler, horizon, &mut rng, seed_tag, |rng, _| {
            detunings.push(w * (2.0 * rng.random::<f64>() - 1.0));
        });
        Self { timeline, detunings }
    }

    pub fn noiseless(horizon: u64) -> Self {
        Self { timeline: NoiseTimeline::empty(horizon), detunings: Vec::new() }
    }

    pub fn detuning(&self, t: u64) -> Option<f64> {
        self.timeline.event_times.binary_search(&t).ok().map(|i| self.detunings[i])
    }

    fn cursor(&self) -> KickCursor<'_> {
        KickCursor { noise: self, next: 0 }
    }
}

/// Walks the event list in step with the kick counter.
#[derive(Debug, Clone)]
struct KickCursor<'a> {
    noise: &'a NoiseRealization,
    next: usize,
}

impl KickCursor<'_> {
    /// Kick strength at kick `t`; calls must come with increasing `t`.
    fn strength(&mut self, k: f64, t: u64) -> f64 {
        let events = &self.noise.timeline.event_times;
        while self.next < events.len() && events[self.next] < t {
            self.next += 1;
        }
        if self.next < events.len() && events[self.next] == t {
            k + self.noise.detunings[self.next]
        } else {
            k
        }
    }
}

/// Momentum-basis wave function, FFT-ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amps: Vec<Complex64>,
}

impl QuantumState {
    /// All weight on level `l = 0`.
    pub fn initial(config: &RotatorConfig) -> Self {
        Self::momentum_eigenstate(config, 0).expect("level 0 is on every grid")
    }

    pub fn momentum_eigenstate(config: &RotatorConfig, l: i64) -> Option<Self> {
        let slot = config.slot(l)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); config.n];
        amps[slot] = Complex64::new(1.0, 0.0);
        Some(Self { amps })
    }

    /// Wraps FFT-ordered amplitudes without normalising them.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Self {
        Self { amps }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨self|other⟩`.
    pub fn overlap(&self, other: &Self) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }
}

thread_local! {
    static FFT_SCRATCH: RefCell<Vec<Complex64>> = const { RefCell::new(Vec::new()) };
}

/// Split-step Floquet propagator; cheap to share between threads.
#[derive(Clone)]
pub struct FloquetOperator {
    config: RotatorConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `exp(-iħl²/2)/N`, the `1/N` undoing the unnormalised FFT pair.
    rotation: Vec<Complex64>,
    cos_over_hbar: Vec<f64>,
    regular_kick: Vec<Complex64>,
}

impl fmt::Debug for FloquetOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FloquetOperator").field("config", &self.config).finish_non_exhaustive()
    }
}

impl FloquetOperator {
    pub fn new(config: &RotatorConfig) -> Self {
        let n = config.n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let inv_n = 1.0 / n as f64;
        let rotation = (0..n)
            .map(|i| {
                // ħl²/2 = πMl²/N, reduced modulo 2π in integer arithmetic
                let ml2 = (config.level(i) as i128).pow(2) * config.m as i128;
                let r = (ml2 % (2 * n as i128)) as f64;
                Complex64::from_polar(inv_n, -PI * r / n as f64)
            })
            .collect();
        let cos_over_hbar: Vec<f64> = (0..n).map(|j| config.angle(j).cos() / config.hbar).collect();
        let regular_kick = cos_over_hbar.iter().map(|&c| Complex64::cis(-config.k * c)).collect();
        Self { config: config.clone(), forward, inverse, rotation, cos_over_hbar, regular_kick }
    }

    pub fn config(&self) -> &RotatorConfig {
        &self.config
    }

    fn with_scratch(&self, f: impl FnOnce(&mut [Complex64])) {
        let need = self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len());
        FFT_SCRATCH.with(|cell| {
            let mut s = cell.borrow_mut();
            if s.len() < need {
                s.resize(need, Complex64::new(0.0, 0.0));
            }
            f(&mut s[..need]);
        });
    }

    fn kick(&self, buf: &mut [Complex64], kt: f64, sign: f64) {
        if kt == self.config.k {
            if sign < 0.0 {
                buf.iter_mut().zip(&self.regular_kick).for_each(|(a, p)| *a *= p);
            } else {
                buf.iter_mut().zip(&self.regular_kick).for_each(|(a, p)| *a *= p.conj());
            }
        } else {
            buf.iter_mut()
                .zip(&self.cos_over_hbar)
                .for_each(|(a, &c)| *a *= Complex64::cis(sign * kt * c));
        }
    }

    /// One period with kick strength `kt`: kick, then free rotation.
    pub fn step(&self, state: &mut QuantumState, kt: f64) {
        let buf = &mut state.amps;
        self.with_scratch(|scratch| {
            self.inverse.process_with_scratch(buf, scratch);
            self.kick(buf, kt, -1.0);
            self.forward.process_with_scratch(buf, scratch);
        });
        buf.iter_mut().zip(&self.rotation).for_each(|(a, r)| *a *= r);
    }

    /// Exact inverse of [`step`](Self::step) with the same `kt`.
    pub fn step_inverse(&self, state: &mut QuantumState, kt: f64) {
        let buf = &mut state.amps;
        // conj(rotation) carries 1/N, which normalises the FFT pair below
        buf.iter_mut().zip(&self.rotation).for_each(|(a, r)| *a *= r.conj());
        self.with_scratch(|scratch| {
            self.inverse.process_with_scratch(buf, scratch);
            self.kick(buf, kt, 1.0);
            self.forward.process_with_scratch(buf, scratch);
        });
    }
}

/// First two momentum moments and the weight near the grid edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean_p: f64,
    pub var_p: f64,
    /// Probability on levels within 5% of either end of the grid.
    pub edge_mass: f64,
}

/// Edge weight above which the grid is considered to wrap around.
pub const EDGE_MASS_WARN: f64 = 1e-6;

pub fn momentum_moments(state: &QuantumState, config: &RotatorConfig) -> Moments {
    let edge = (0.45 * config.n as f64) as i64;
    let (mut m1, mut m2, mut em) = (0.0, 0.0, 0.0);
    for (i, a) in state.amps.iter().enumerate() {
        let prob = a.norm_sqr();
        let l = config.level(i);
        let p = config.hbar * l as f64;
        m1 += p * prob;
        m2 += p * p * prob;
        if l.abs() >= edge {
            em += prob;
        }
    }
    Moments { mean_p: m1, var_p: (m2 - m1 * m1).max(0.0), edge_mass: em }
}

/// `Σ_l |ψ_l|⁴` in the momentum basis.
pub fn ipr(state: &QuantumState) -> f64 {
    state.amps.iter().map(|a| a.norm_sqr().powi(2)).sum()
}

pub fn ensemble_ipr(states: &[QuantumState]) -> f64 {
    states.iter().map(ipr).sum::<f64>() / states.len() as f64
}

/// Estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

/// Above this many realizations only `PAIRS_PER_REALIZATION · R` random pairs
/// enter the purity estimate.
pub const FULL_PAIR_LIMIT: usize = 64;
pub const PAIRS_PER_REALIZATION: usize = 64;

/// Mean of `|⟨ψ_i|ψ_j⟩|²` over unordered pairs `i ≠ j`.
///
/// The standard error uses the U-statistic projection: twice the spread of
/// the per-realization row means over `√R`.
pub fn purity_estimate(states: &[QuantumState], pair_seed: SeedTag) -> Result<Estimate, QuantumError> {
    let r = states.len();
    if r < 2 {
        return Err(QuantumError::TooFewRealizations(r));
    }
    let all_pairs = r * (r - 1) / 2;
    let pairs: Vec<(usize, usize)> = if r <= FULL_PAIR_LIMIT || all_pairs <= PAIRS_PER_REALIZATION * r {
        (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).collect()
    } else {
        let mut rng = pair_seed.rng();
        (0..PAIRS_PER_REALIZATION * r)
            .map(|_| {
                let i = rng.random_range(0..r);
                let mut j = rng.random_range(0..r - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| states[i].overlap(&states[j]).norm_sqr()).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;

    let mut row_sum = vec![0.0; r];
    let mut row_cnt = vec![0usize; r];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        row_sum[i] += v;
        row_sum[j] += v;
        row_cnt[i] += 1;
        row_cnt[j] += 1;
    }
    let rows: Vec<f64> = row_sum.iter().zip(&row_cnt).filter(|(_, &c)| c > 0).map(|(s, &c)| s / c as f64).collect();
    let se = if rows.len() > 1 { 2.0 * sample_sd(&rows) / (rows.len() as f64).sqrt() } else { 0.0 };
    Ok(Estimate { mean, se })
}

/// Averaged log-fidelity over the disjoint pairs `(0,1), (2,3), …`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogFidelity {
    pub mean: f64,
    pub se: f64,
    pub pairs: usize,
    pub skipped: usize,
}

/// Overlaps below this are treated as underflow and skipped.
pub const FIDELITY_FLOOR: f64 = 1e-300;

pub fn log_fidelity_estimate(states: &[QuantumState]) -> Result<LogFidelity, QuantumError> {
    let r = states.len();
    if r < 2 {
        return Err(QuantumError::TooFewRealizations(r));
    }
    let mut logs = Vec::with_capacity(r / 2);
    let mut skipped = 0;
    for pair in states.chunks_exact(2) {
        let f = pair[0].overlap(&pair[1]).norm_sqr();
        if f < FIDELITY_FLOOR {
            skipped += 1;
        } else {
            logs.push(f.ln());
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} fidelity pair(s) underflowed and were skipped");
    }
    if logs.is_empty() {
        return Err(QuantumError::AllPairsUnderflowed(skipped));
    }
    let n = logs.len();
    let mean = logs.iter().sum::<f64>() / n as f64;
    let se = if n > 1 { sample_sd(&logs) / (n as f64).sqrt() } else { f64::NAN };
    Ok(LogFidelity { mean, se, pairs: n, skipped })
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Momentum density on groups of consecutive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Bin centres in units of momentum.
    pub centers: Vec<f64>,
    /// Bin widths in units of momentum (edge bins may be narrower).
    pub widths: Vec<f64>,
    /// Probability per unit momentum.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn total_mass(&self) -> f64 {
        self.density.iter().zip(&self.widths).map(|(d, w)| d * w).sum()
    }

    /// Same histogram with momentum measured in units of `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        Self {
            centers: self.centers.iter().map(|c| c / scale).collect(),
            widths: self.widths.iter().map(|w| w / scale).collect(),
            density: self.density.iter().map(|d| d * scale).collect(),
        }
    }

    /// CSV with header `p_over_pstar,density` (momentum in units of `p_star`).
    pub fn write_csv<W: Write>(&self, p_star: f64, mut out: W) -> io::Result<()> {
        let h = self.rescaled(p_star);
        writeln!(out, "p_over_pstar,density")?;
        for (c, d) in h.centers.iter().zip(&h.density) {
            writeln!(out, "{},{}", fmt_sig(*c), fmt_sig(*d))?;
        }
        Ok(())
    }
}

/// Ensemble-averaged `|ψ_l|²`, summed over groups of `rebin_width` levels.
///
/// Bin `j` holds levels `[j·w - w/2, j·w - w/2 + w)`, so level 0 always sits
/// in the central bin.
pub fn momentum_distribution(states: &[QuantumState], config: &RotatorConfig, rebin_width: usize) -> Histogram {
    let w = rebin_width.max(1) as i64;
    let half = w / 2;
    let n = config.n as i64;
    let lo = -(n / 2);
    let hi = lo + n - 1;
    let bin_of = |l: i64| (l + half).div_euclid(w);
    let (b_lo, b_hi) = (bin_of(lo), bin_of(hi));
    let nb = (b_hi - b_lo + 1) as usize;
    let mut mass = vec![0.0; nb];
    for s in states {
        for (i, a) in s.amps.iter().enumerate() {
            mass[(bin_of(config.level(i)) - b_lo) as usize] += a.norm_sqr();
        }
    }
    let norm = states.len().max(1) as f64;
    let mut centers = Vec::with_capacity(nb);
    let mut widths = Vec::with_capacity(nb);
    let mut density = Vec::with_capacity(nb);
    for (k, m) in mass.iter().enumerate() {
        let b = b_lo + k as i64;
        let first = (b * w - half).max(lo);
        let last = (b * w - half + w - 1).min(hi);
        let levels = (last - first + 1) as f64;
        let width = levels * config.hbar;
        centers.push(config.hbar * 0.5 * (first + last) as f64);
        widths.push(width);
        density.push(m / norm / width);
    }
    Histogram { centers, widths, density }
}

/// Observables of one realization at its sample times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    pub times: Vec<u64>,
    pub mean_p: Vec<f64>,
    pub mean_p2: Vec<f64>,
    pub ipr: Vec<f64>,
    pub max_edge_mass: f64,
}

impl Track {
    pub fn var_p(&self) -> Vec<f64> {
        self.mean_p.iter().zip(&self.mean_p2).map(|(m, m2)| (m2 - m * m).max(0.0)).collect()
    }
}

/// Propagates `state` through kicks `1..=t_max`, recording observables at
/// each of `sample_times` (sorted, `≤ t_max`; `0` records the input state).
pub fn propagate(
    state: &mut QuantumState,
    op: &FloquetOperator,
    noise: &NoiseRealization,
    t_max: u64,
    sample_times: &[u64],
) -> Result<Track, QuantumError> {
    if t_max > noise.timeline.horizon {
        return Err(QuantumError::HorizonExceeded { requested: t_max, horizon: noise.timeline.horizon });
    }
    let config = op.config();
    let mut track = Track::default();
    let record = |t: u64, st: &QuantumState, track: &mut Track| {
        let m = momentum_moments(st, config);
        track.times.push(t);
        track.mean_p.push(m.mean_p);
        track.mean_p2.push(m.var_p + m.mean_p * m.mean_p);
        track.ipr.push(ipr(st));
        track.max_edge_mass = track.max_edge_mass.max(m.edge_mass);
    };
    let mut samples = sample_times.iter().copied().filter(|&t| t <= t_max).peekable();
    if samples.peek() == Some(&0) {
        record(0, state, &mut track);
        samples.next();
    }
    let mut cursor = noise.cursor();
    for t in 1..=t_max {
        op.step(state, cursor.strength(config.k, t));
        if samples.peek() == Some(&t) {
            record(t, state, &mut track);
            samples.next();
        }
    }
    Ok(track)
}

/// Noiseless `var p(t)` for `t = 0..=t_max`, averaged over initial momentum
/// eigenstates `|l₀⟩` with the variance taken about `ħl₀`. Passing `&[0]`
/// gives the single trace.
pub fn noiseless_variance(op: &FloquetOperator, t_max: u64, initial_levels: &[i64]) -> Result<Vec<f64>, QuantumError> {
    let config = op.config();
    let times: Vec<u64> = (0..=t_max).collect();
    let noise = NoiseRealization::noiseless(t_max);
    let tracks: Vec<Track> = initial_levels
        .par_iter()
        .map(|&l0| {
            let mut st = QuantumState::momentum_eigenstate(config, l0)
                .ok_or_else(|| QuantumError::InvalidConfig(format!("initial level {l0} is off the grid")))?;
            propagate(&mut st, op, &noise, t_max, &times)
        })
        .collect::<Result<_, _>>()?;
    let edge = tracks.iter().map(|tr| tr.max_edge_mass).fold(0.0, f64::max);
    if edge > EDGE_MASS_WARN {
        log::warn!("noiseless run reached the momentum grid edge (max weight {edge:.3e})");
    }
    let mut out = vec![0.0; times.len()];
    for (tr, &l0) in tracks.iter().zip(initial_levels) {
        let p0 = config.hbar * l0 as f64;
        for (k, o) in out.iter_mut().enumerate() {
            // ⟨(p - p0)²⟩
            *o += tr.mean_p2[k] - 2.0 * p0 * tr.mean_p[k] + p0 * p0;
        }
    }
    let n = initial_levels.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// What [`ensemble_run`] should do.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub realizations: usize,
    pub t_max: u64,
    /// Sorted times in `[0, t_max]` at which observables are reduced.
    pub sample_times: Vec<u64>,
    /// Times (subset of `sample_times`) at which `P(p;t)` is stored.
    pub snapshot_times: Vec<u64>,
    pub rebin_width: usize,
    pub master_seed: u64,
    /// Compute purity and log-fidelity (costs `O(R²N)` per sample time).
    pub pair_observables: bool,
}

/// Default group size for momentum histograms, about one classical cell.
pub const DEFAULT_REBIN: usize = 24;

/// Ensemble-reduced observables at the sample times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservableSeries {
    pub times: Vec<u64>,
    /// Mean over realizations of the per-realization variance.
    pub var_p: Vec<f64>,
    pub var_p_se: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub mean_p_se: Vec<f64>,
    pub ipr: Vec<f64>,
    pub purity: Vec<f64>,
    pub purity_se: Vec<f64>,
    pub logfid: Vec<f64>,
    pub logfid_se: Vec<f64>,
    pub snapshots: Vec<(u64, Histogram)>,
    pub realizations: usize,
    pub max_edge_mass: f64,
}

impl ObservableSeries {
    pub fn value_at(&self, t: u64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    /// CSV with header `t,var_p,ipr,purity,purity_se,logfid,logfid_se`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,var_p,ipr,purity,purity_se,logfid,logfid_se")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.times[k],
                fmt_sig(self.var_p[k]),
                fmt_sig(self.ipr[k]),
                fmt_sig(self.purity[k]),
                fmt_sig(self.purity_se[k]),
                fmt_sig(self.logfid[k]),
                fmt_sig(self.logfid_se[k])
            )?;
        }
        Ok(())
    }
}

struct Member {
    state: QuantumState,
    noise: NoiseRealization,
    next_event: usize,
}

impl Member {
    fn advance(&mut self, op: &FloquetOperator, from: u64, to: u64) {
        let k = op.config().k;
        let events = &self.noise.timeline.event_times;
        for t in from + 1..=to {
            while self.next_event < events.len() && events[self.next_event] < t {
                self.next_event += 1;
            }
            let kt = if self.next_event < events.len() && events[self.next_event] == t {
                k + self.noise.detunings[self.next_event]
            } else {
                k
            };
            op.step(&mut self.state, kt);
        }
    }
}

/// Propagates `R` independent realizations from `|p=0⟩` in lock-step and
/// reduces observables at the sample times. Realization `i` draws its noise
/// from stream `i` of the master seed; reductions run in index order, so the
/// output does not depend on the thread count.
pub fn ensemble_run(
    config: &RotatorConfig,
    noise: &NoiseParams,
    spec: &EnsembleSpec,
) -> Result<ObservableSeries, QuantumError> {
    let r = spec.realizations;
    if r < 2 {
        return Err(QuantumError::TooFewRealizations(r));
    }
    let op = FloquetOperator::new(config);
    let sampler = WaitingTimeSampler::new(noise.dist);
    let mut members: Vec<Member> = (0..r as u64)
        .into_par_iter()
        .map(|i| Member {
            state: QuantumState::initial(config),
            noise: NoiseRealization::generate(noise, &sampler, spec.t_max, SeedTag::new(spec.master_seed, i)),
            next_event: 0,
        })
        .collect();

    let mut times: Vec<u64> = spec.sample_times.iter().copied().filter(|&t| t <= spec.t_max).collect();
    times.sort_unstable();
    times.dedup();

    let mut out = ObservableSeries { realizations: r, ..Default::default() };
    let mut now = 0u64;
    for (si, &t) in times.iter().enumerate() {
        members.par_iter_mut().for_each(|m| m.advance(&op, now, t));
        now = t;

        let moments: Vec<(Moments, f64)> =
            members.par_iter().map(|m| (momentum_moments(&m.state, config), ipr(&m.state))).collect();
        let vars: Vec<f64> = moments.iter().map(|(m, _)| m.var_p).collect();
        let means: Vec<f64> = moments.iter().map(|(m, _)| m.mean_p).collect();
        let rf = r as f64;
        out.times.push(t);
        out.var_p.push(vars.iter().sum::<f64>() / rf);
        out.var_p_se.push(sample_sd(&vars) / rf.sqrt());
        out.mean_p.push(means.iter().sum::<f64>() / rf);
        out.mean_p_se.push(sample_sd(&means) / rf.sqrt());
        out.ipr.push(moments.iter().map(|(_, i)| i).sum::<f64>() / rf);
        let edge = moments.iter().map(|(m, _)| m.edge_mass).fold(0.0, f64::max);
        out.max_edge_mass = out.max_edge_mass.max(edge);

        if spec.pair_observables || spec.snapshot_times.contains(&t) {
            let states: Vec<QuantumState> = members.iter().map(|m| m.state.clone()).collect();
            if spec.pair_observables {
                let pur = purity_estimate(&states, SeedTag::new(spec.master_seed, u64::MAX - si as u64))?;
                out.purity.push(pur.mean);
                out.purity_se.push(pur.se);
                match log_fidelity_estimate(&states) {
                    Ok(lf) => {
                        out.logfid.push(lf.mean);
                        out.logfid_se.push(lf.se);
                    }
                    Err(QuantumError::AllPairsUnderflowed(_)) => {
                        out.logfid.push(f64::NEG_INFINITY);
                        out.logfid_se.push(f64::NAN);
                    }
                    Err(e) => return Err(e),
                }
            }
            if spec.snapshot_times.contains(&t) {
                out.snapshots.push((t, momentum_distribution(&states, config, spec.rebin_width)));
            }
        }
        if !spec.pair_observables {
            out.purity.push(f64::NAN);
            out.purity_se.push(f64::NAN);
            out.logfid.push(f64::NAN);
            out.logfid_se.push(f64::NAN);
        }
    }
    if out.max_edge_mass > EDGE_MASS_WARN {
        log::warn!("ensemble reached the momentum grid edge (max weight {:.3e})", out.max_edge_mass);
    }
    Ok(out)
}
