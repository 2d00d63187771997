//! Reference prices and error metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::BsProblem;
use crate::sampling::{RngStream, StreamLabel};

/// Standard normal CDF via `erfc`, accurate to ~1e-16 absolute.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// European put under Black-Scholes at spot `s` and time `t`.
pub fn bs_put_exact(s: f64, t: f64, strike: f64, r: f64, sigma: f64, t_max: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(t <= t_max) || !(s >= 0.0) {
        return Err(Error::Domain(format!(
            "need S >= 0 and t <= T, got S = {s}, t = {t}, T = {t_max}"
        )));
    }
    let tau = t_max - t;
    let disc_k = strike * (-r * tau).exp();
    if tau == 0.0 {
        return Ok((strike - s).max(0.0));
    }
    if s == 0.0 {
        return Ok(disc_k);
    }
    let vol = sigma * tau.sqrt();
    let d1 = ((s / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    Ok(disc_k * norm_cdf(-d2) - s * norm_cdf(-d1))
}

/// Margrabe exchange price with time-to-expiry `tau` and combined volatility `sigma`.
pub fn margrabe_tau(s1: f64, s2: f64, tau: f64, sigma: f64) -> f64 {
    if s2 == 0.0 {
        return s1;
    }
    if s1 == 0.0 {
        return 0.0;
    }
    if tau <= 0.0 || sigma == 0.0 {
        return (s1 - s2).max(0.0);
    }
    let vol = sigma * tau.sqrt();
    let d1 = ((s1 / s2).ln() + 0.5 * sigma * sigma * tau) / vol;
    let d2 = d1 - vol;
    s1 * norm_cdf(d1) - s2 * norm_cdf(d2)
}

pub fn margrabe_exact(s1: f64, s2: f64, t: f64, prob: &BsProblem) -> Result<f64> {
    if prob.d != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: prob.d,
        });
    }
    if !(s1 >= 0.0 && s2 >= 0.0) || !(t <= prob.t_max) {
        return Err(Error::Domain(format!(
            "need S1, S2 >= 0 and t <= T, got ({s1}, {s2}, {t})"
        )));
    }
    Ok(margrabe_tau(s1, s2, prob.t_max - t, prob.exchange_sigma()))
}

/// Lower Cholesky factor `L` with `L Lᵀ = a`.
pub fn cholesky_lower(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.iter().map(Vec::len).find(|&l| l != n).unwrap_or(n),
        });
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 1e-12) {
                    return Err(Error::NotPositiveDefinite { index: i, value: sum });
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: u64,
    pub seed: u64,
    #[serde(default = "default_antithetic")]
    pub antithetic: bool,
}

fn default_antithetic() -> bool {
    true
}

impl McConfig {
    pub fn new(n_paths: u64, seed: u64) -> Self {
        McConfig {
            n_paths,
            seed,
            antithetic: true,
        }
    }
}

const MC_BATCH: u64 = 1 << 16;

/// Discounted expected payoff under correlated GBM, sampled exactly at `T`.
///
/// Returns `(price, standard error)`. With antithetic variates the error is
/// computed over pair averages. Paths are split into fixed batches with their
/// own substreams and reduced in batch order.
pub fn mc_price(prob: &BsProblem, s0: &[f64], cfg: &McConfig) -> Result<(f64, f64)> {
    if s0.len() != prob.d {
        return Err(Error::DimensionMismatch {
            expected: prob.d,
            got: s0.len(),
        });
    }
    if cfg.n_paths < 2 {
        return Err(Error::InvalidConfig("mc: n_paths must be at least 2".into()));
    }
    if s0.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::Domain(format!("negative spot in {s0:?}")));
    }
    let chol = cholesky_lower(&prob.rho)?;
    mc_price_with_factor(prob, s0, cfg, &chol)
}

pub(crate) fn mc_price_with_factor(
    prob: &BsProblem,
    s0: &[f64],
    cfg: &McConfig,
    chol: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let d = prob.d;
    let t = prob.t_max;
    let drift: Vec<f64> = prob.sigma.iter().map(|s| (prob.r - 0.5 * s * s) * t).collect();
    let vol: Vec<f64> = prob.sigma.iter().map(|s| s * t.sqrt()).collect();
    let disc = (-prob.r * t).exp();
    // samples = independent draws entering the mean (pairs when antithetic)
    let samples = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let samples = samples.max(1);
    let batches = samples.div_ceil(MC_BATCH);

    let terminal_payoff = |z: &[f64], s_t: &mut [f64], sign: f64| -> f64 {
        for i in 0..d {
            let mut w = 0.0;
            for k in 0..=i {
                w += chol[i][k] * z[k];
            }
            s_t[i] = s0[i] * (drift[i] + sign * vol[i] * w).exp();
        }
        disc * prob.payoff_unchecked(s_t)
    };

    let partial: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::with_substream(cfg.seed, StreamLabel::MonteCarlo, b);
            let count = MC_BATCH.min(samples - b * MC_BATCH);
            let mut z = vec![0.0; d];
            let mut s_t = vec![0.0; d];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = rng.standard_normal();
                }
                let x = if cfg.antithetic {
                    0.5 * (terminal_payoff(&z, &mut s_t, 1.0) + terminal_payoff(&z, &mut s_t, -1.0))
                } else {
                    terminal_payoff(&z, &mut s_t, 1.0)
                };
                sum += x;
                sum_sq += x * x;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// One priced point with its pointwise absolute error.
#[derive(Debug, Clone, PartialEq)]
pub struct PricedPoint {
    pub point: Vec<f64>,
    pub predicted: f64,
    pub reference: f64,
    pub pae: f64,
}

impl PricedPoint {
    pub fn new(point: Vec<f64>, predicted: f64, reference: f64) -> Self {
        PricedPoint {
            point,
            predicted,
            reference,
            pae: (predicted - reference).abs(),
        }
    }
}

fn check_pair(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Domain("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn pae(pred: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    check_pair(pred, reference)?;
    Ok(pred.iter().zip(reference).map(|(a, b)| (a - b).abs()).collect())
}

pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    let ss: f64 = pred.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// The eleven `(S₁, S₂)` pairs at `t = 0` used to tabulate the exchange option.
pub fn exchange_table_points() -> Vec<[f64; 3]> {
    (0..=10).map(|k| [20.0, 4.0 * k as f64, 0.0]).collect()
}

/// The basket anchor `(1,1,1,1)` and its eight ±0.1 neighbours at `t = 0`.
pub fn basket_table_points() -> Vec<[f64; 5]> {
    let mut pts = vec![[1.0, 1.0, 1.0, 1.0, 0.0]];
    for i in 0..4 {
        for delta in [0.1, -0.1] {
            let mut p = [1.0, 1.0, 1.0, 1.0, 0.0];
            p[i] += delta;
            pts.push(p);
        }
    }
    pts
}
