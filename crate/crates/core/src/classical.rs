//! Classical standard map under the same renewal-timed amplitude noise.

use std::f64::consts::TAU;
use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::harness::fmt_sig;
use crate::quantum::{NoiseParams, NoiseRealization, RotatorConfig};
use crate::renewal::{SeedTag, WaitingTimeSampler};

/// Particles of the standard map; angles are kept in `[0, 2π)`, momenta are
/// unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalEnsemble {
    pub thetas: Vec<f64>,
    pub momenta: Vec<f64>,
}

impl ClassicalEnsemble {
    /// `size` particles at `p = 0` with uniformly drawn angles.
    pub fn uniform<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let thetas = (0..size).map(|_| TAU * rng.random::<f64>()).collect();
        Self { thetas, momenta: vec![0.0; size] }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// `p ← p + K_t sin θ`, then `θ ← θ + p mod 2π`, for every particle.
    pub fn step(&mut self, kt: f64) {
        for (th, p) in self.thetas.iter_mut().zip(self.momenta.iter_mut()) {
            *p += kt * th.sin();
            *th = wrap_angle(*th + *p);
        }
    }

    pub fn mean_p(&self) -> f64 {
        self.momenta.iter().sum::<f64>() / self.len() as f64
    }

    pub fn var_p(&self) -> f64 {
        let m = self.mean_p();
        self.momenta.iter().map(|p| (p - m).powi(2)).sum::<f64>() / self.len() as f64
    }
}

#[inline]
fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to TAU itself
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Ensemble variance of the classical momentum for `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalSeries {
    pub var_p: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub particles: usize,
}

impl ClassicalSeries {
    /// CSV with header `t,var_p_classical`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,var_p_classical")?;
        for (t, v) in self.var_p.iter().enumerate() {
            writeln!(out, "{},{}", t, fmt_sig(*v))?;
        }
        Ok(())
    }
}

const BLOCK: usize = 256;

/// Runs `particles` independent trajectories from `p = 0` and uniform `θ`,
/// each with its own noise history drawn from stream `i` of `seed`.
///
/// Partial sums are formed per fixed-size block and combined in block order,
/// so the result does not depend on the thread count.
pub fn classical_var_series(
    config: &RotatorConfig,
    noise: &NoiseParams,
    particles: usize,
    t_max: u64,
    seed: u64,
) -> ClassicalSeries {
    let sampler = WaitingTimeSampler::new(noise.dist);
    let len = t_max as usize + 1;
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..particles.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut s1 = vec![0.0; len];
            let mut s2 = vec![0.0; len];
            for i in b * BLOCK..((b + 1) * BLOCK).min(particles) {
                let tag = SeedTag::new(seed, i as u64);
                let realization = NoiseRealization::generate(noise, &sampler, t_max, tag);
                // angle from a separate stream so it does not shift the noise draws
                let mut theta = TAU * SeedTag::new(!seed, i as u64).rng().random::<f64>();
                let mut p = 0.0;
                let mut ev = realization.timeline.event_times.iter().zip(&realization.detunings).peekable();
                for t in 1..len {
                    let mut kt = config.k;
                    if let Some(&(&te, &d)) = ev.peek() {
                        if te == t as u64 {
                            kt += d;
                            ev.next();
                        }
                    }
                    p += kt * theta.sin();
                    theta = wrap_angle(theta + p);
                    s1[t] += p;
                    s2[t] += p * p;
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; len];
    let mut s2 = vec![0.0; len];
    for (b1, b2) in &blocks {
        for t in 0..len {
            s1[t] += b1[t];
            s2[t] += b2[t];
        }
    }
    let n = particles as f64;
    let mean_p: Vec<f64> = s1.iter().map(|s| s / n).collect();
    let var_p = s2.iter().zip(&mean_p).map(|(s, m)| (s / n - m * m).max(0.0)).collect();
    ClassicalSeries { var_p, mean_p, particles }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::Preset;
    use crate::renewal::WaitingTimeDist;

    #[test]
    fn zero_kick_keeps_momenta() {
        let mut rng = SeedTag::new(1, 0).rng();
        let mut e = ClassicalEnsemble::uniform(100, &mut rng);
        e.momenta.iter_mut().enumerate().for_each(|(i, p)| *p = i as f64 * 0.1);
        let before = e.momenta.clone();
        e.step(0.0);
        assert_eq!(e.momenta, before);
        assert!(e.thetas.iter().all(|&t| (0.0..TAU).contains(&t)));
    }

    #[test]
    fn one_step_variance_is_half_k_squared() {
        let mut rng = SeedTag::new(2, 0).rng();
        let mut e = ClassicalEnsemble::uniform(200_000, &mut rng);
        e.step(7.5);
        // var(K sin θ) = K²/2, sd of the estimator ≈ K²/2·√(1/n)
        let v = e.var_p();
        assert!((v - 28.125).abs() < 4.0 * 28.125 / (200_000f64).sqrt(), "{v}");
        assert!(e.thetas.iter().all(|&t| (0.0..TAU).contains(&t)));
    }

    #[test]
    fn series_starts_at_zero_and_is_deterministic() {
        let c = RotatorConfig::preset(Preset::Fast);
        let n = NoiseParams::from_kappa(1.0 / 300.0, WaitingTimeDist::yule_simon(0.5).unwrap()).unwrap();
        let a = classical_var_series(&c, &n, 600, 50, 4);
        let b = classical_var_series(&c, &n, 600, 50, 4);
        assert_eq!(a, b);
        assert_eq!(a.var_p[0], 0.0);
        assert!((a.var_p[1] - 28.125).abs() < 5.0);
    }
}
