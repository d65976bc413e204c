use serde::{Deserialize, Serialize};

use super::layers::Real;

/// Loss terms of one sample or a summed batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Summed absolute reconstruction error.
    pub recon: f64,
    /// KL divergence of the latent posterior from the unit Gaussian.
    pub kl: f64,
    pub beta: f64,
    /// `recon + beta * kl`.
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, kl: f64, beta: f64) -> Self {
        LossBreakdown {
            recon,
            kl,
            beta,
            total: recon + beta * kl,
        }
    }

    /// Elementwise sum of several breakdowns sharing one beta.
    pub fn sum(parts: &[LossBreakdown], beta: f64) -> Self {
        let recon = parts.iter().map(|p| p.recon).sum();
        let kl = parts.iter().map(|p| p.kl).sum();
        LossBreakdown::new(recon, kl, beta)
    }
}

/// `sum |x - x_hat|`, accumulated in f64.
pub fn recon_l1<T: Real>(x: &[T], x_hat: &[T]) -> f64 {
    x.iter()
        .zip(x_hat)
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum()
}

/// `-1/2 * sum(1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_divergence<T: Real>(mu: &[T], logvar: &[T]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &v)| {
            let (m, v) = (m.as_f64(), v.as_f64());
            1.0 + v - m * m - v.exp()
        })
        .sum::<f64>()
}

/// Batch loss over flat `[batch][...]` buffers. Returns the summed breakdown
/// and the per-sample breakdowns.
pub fn loss<T: Real>(
    x: &[T],
    x_hat: &[T],
    mu: &[T],
    logvar: &[T],
    beta: f64,
    batch: usize,
) -> (LossBreakdown, Vec<LossBreakdown>) {
    assert!(batch > 0 && x.len() == x_hat.len() && mu.len() == logvar.len());
    let per_x = x.len() / batch;
    let per_z = mu.len() / batch;
    let samples: Vec<LossBreakdown> = (0..batch)
        .map(|i| {
            let xs = i * per_x..(i + 1) * per_x;
            let zs = i * per_z..(i + 1) * per_z;
            LossBreakdown::new(
                recon_l1(&x[xs.clone()], &x_hat[xs]),
                kl_divergence(&mu[zs.clone()], &logvar[zs]),
                beta,
            )
        })
        .collect();
    (LossBreakdown::sum(&samples, beta), samples)
}
