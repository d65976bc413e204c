//! Forward and backward passes of the VAE for a single sample, plus batch
//! wrappers. Batches are processed sample by sample; gradients are reduced
//! in a fixed order so results do not depend on the worker count.

use rayon::prelude::*;

use super::layers::{
    conv_backward, conv_forward, conv_transpose_backward, conv_transpose_forward, linear_backward, linear_forward,
    relu_backward_in_place, relu_in_place, sigmoid, ConvGeom, Real,
};
use super::loss::{kl_divergence, recon_l1, LossBreakdown};
use super::params::{Slots, VaeParams};
use super::{VaeConfig, VaeError};

/// Samples per gradient accumulation group. The reduction order depends on
/// this constant only.
const GRAD_GROUP: usize = 4;

/// Latent statistics and draw for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub sigma: Vec<T>,
    pub eps: Vec<T>,
    pub z: Vec<T>,
}

impl<T: Real> LatentSample<T> {
    /// `z = mu + exp(0.5 * logvar) * eps`, elementwise.
    pub fn new(mu: Vec<T>, logvar: Vec<T>, eps: Vec<T>) -> Self {
        let half = T::from_f64(0.5);
        let sigma: Vec<T> = logvar.iter().map(|&v| (half * v).exp()).collect();
        let z = mu
            .iter()
            .zip(&sigma)
            .zip(&eps)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        LatentSample {
            mu,
            logvar,
            sigma,
            eps,
            z,
        }
    }
}

/// `z = mu + exp(0.5 * logvar) ⊙ eps` over flat batches.
pub fn reparameterize<T: Real>(mu: &[T], logvar: &[T], eps: &[T]) -> Result<Vec<T>, VaeError> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(VaeError::ShapeMismatch {
            expected: mu.len(),
            actual: if logvar.len() != mu.len() {
                logvar.len()
            } else {
                eps.len()
            },
        });
    }
    let half = T::from_f64(0.5);
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &v), &e)| m + (half * v).exp() * e)
        .collect())
}

/// Every intermediate activation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Unfolded input of each encoder convolution.
    pub enc_cols: Vec<Vec<T>>,
    /// Post-ReLU output of each encoder convolution.
    pub enc_out: Vec<Vec<T>>,
    pub latent: LatentSample<T>,
    /// `fc_decode` output, the input of the first transposed convolution.
    pub dec_in: Vec<T>,
    /// Output of each transposed convolution after its activation; the last
    /// entry is the reconstruction.
    pub dec_out: Vec<Vec<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn reconstruction(&self) -> &[T] {
        self.dec_out.last().expect("decoder has at least one stage")
    }
}

struct Encoded<T> {
    cols: Vec<Vec<T>>,
    out: Vec<Vec<T>>,
    mu: Vec<T>,
    logvar: Vec<T>,
}

fn geom(config: &VaeConfig, big: usize, small: usize) -> ConvGeom {
    ConvGeom {
        big,
        small,
        kernel: config.kernel,
        stride: config.stride,
        padding: config.padding,
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), VaeError> {
    if expected != actual {
        return Err(VaeError::ShapeMismatch { expected, actual });
    }
    Ok(())
}

fn encode_one<T: Real>(params: &VaeParams<T>, x: &[T], keep_cols: bool) -> Encoded<T> {
    let config = params.config();
    let slots = Slots::new(config);
    let sizes = config.encoder_sizes();
    let channels = config.encoder_channels();
    let mut cols = Vec::new();
    let mut out: Vec<Vec<T>> = Vec::new();
    for i in 0..config.depth() {
        let (w, b) = slots.encoder(i);
        let input = if i == 0 { x } else { &out[i - 1] };
        let g = geom(config, sizes[i], sizes[i + 1]);
        let (c, mut y) = conv_forward(
            input,
            params.tensor(w),
            params.tensor(b),
            channels[i],
            channels[i + 1],
            &g,
        );
        relu_in_place(&mut y);
        if keep_cols {
            cols.push(c);
        }
        out.push(y);
    }
    let h = out.last().unwrap();
    let (mw, mb) = slots.fc_mu();
    let (vw, vb) = slots.fc_logvar();
    let mu = linear_forward(h, params.tensor(mw), params.tensor(mb));
    let logvar = linear_forward(h, params.tensor(vw), params.tensor(vb));
    Encoded { cols, out, mu, logvar }
}

fn decode_one<T: Real>(params: &VaeParams<T>, z: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
    let config = params.config();
    let slots = Slots::new(config);
    let (fw, fb) = slots.fc_decode();
    let dec_in = linear_forward(z, params.tensor(fw), params.tensor(fb));
    let stages = config.decoder_stages();
    let mut dec_out: Vec<Vec<T>> = Vec::with_capacity(stages.len());
    for (i, &(cin, cout, small, big)) in stages.iter().enumerate() {
        let (w, b) = slots.decoder(i);
        let input = if i == 0 { &dec_in } else { &dec_out[i - 1] };
        let g = geom(config, big, small);
        let mut y = conv_transpose_forward(input, params.tensor(w), params.tensor(b), cin, cout, &g);
        if i + 1 == stages.len() {
            for v in &mut y {
                *v = sigmoid(*v);
            }
        } else {
            relu_in_place(&mut y);
        }
        dec_out.push(y);
    }
    (dec_in, dec_out)
}

/// Full forward pass of one sample with explicit noise `eps`.
pub fn forward<T: Real>(params: &VaeParams<T>, x: &[T], eps: &[T]) -> Result<ForwardTrace<T>, VaeError> {
    let config = params.config();
    check_len(config.input_len(), x.len())?;
    check_len(config.latent_dim, eps.len())?;
    let enc = encode_one(params, x, true);
    let latent = LatentSample::new(enc.mu, enc.logvar, eps.to_vec());
    let (dec_in, dec_out) = decode_one(params, &latent.z);
    Ok(ForwardTrace {
        enc_cols: enc.cols,
        enc_out: enc.out,
        latent,
        dec_in,
        dec_out,
    })
}

/// Encodes a flat batch `[batch][channels][size][size]` into `(mu, logvar)`,
/// each `[batch][latent]`.
pub fn encode<T: Real>(params: &VaeParams<T>, x: &[T]) -> Result<(Vec<T>, Vec<T>), VaeError> {
    let config = params.config();
    let per = config.input_len();
    if x.is_empty() || !x.len().is_multiple_of(per) {
        return Err(VaeError::ShapeMismatch {
            expected: per,
            actual: x.len(),
        });
    }
    let outs: Vec<(Vec<T>, Vec<T>)> = x
        .par_chunks(per)
        .map(|s| {
            let e = encode_one(params, s, false);
            (e.mu, e.logvar)
        })
        .collect();
    let mut mu = Vec::with_capacity(outs.len() * config.latent_dim);
    let mut logvar = Vec::with_capacity(outs.len() * config.latent_dim);
    for (m, v) in outs {
        mu.extend(m);
        logvar.extend(v);
    }
    Ok((mu, logvar))
}

/// Decodes a flat batch of latents `[batch][latent]` into reconstructions.
pub fn decode<T: Real>(params: &VaeParams<T>, z: &[T]) -> Result<Vec<T>, VaeError> {
    let s = params.config().latent_dim;
    if z.is_empty() || !z.len().is_multiple_of(s) {
        return Err(VaeError::ShapeMismatch {
            expected: s,
            actual: z.len(),
        });
    }
    let outs: Vec<Vec<T>> = z
        .par_chunks(s)
        .map(|zi| decode_one(params, zi).1.pop().unwrap())
        .collect();
    Ok(outs.concat())
}

/// Deterministic reconstruction of one sample through the latent mean.
/// Returns the reconstruction, `mu` and `logvar`.
#[allow(clippy::type_complexity)]
pub fn reconstruct<T: Real>(params: &VaeParams<T>, x: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>), VaeError> {
    check_len(params.config().input_len(), x.len())?;
    let enc = encode_one(params, x, false);
    let (_, mut dec_out) = decode_one(params, &enc.mu);
    Ok((dec_out.pop().unwrap(), enc.mu, enc.logvar))
}

/// Gradient of `recon + beta * kl` for one sample, accumulated into `grad`
/// (laid out like the parameter buffer).
pub fn backward<T: Real>(params: &VaeParams<T>, trace: &ForwardTrace<T>, x: &[T], beta: T, grad: &mut [T]) {
    let config = params.config();
    let slots = Slots::new(config);
    let sizes = config.encoder_sizes();
    let channels = config.encoder_channels();
    let stages = config.decoder_stages();
    let layout = params.layout();
    let span = |index: usize| {
        let s = &layout[index];
        s.offset..s.offset + s.len
    };
    // Split borrows of two disjoint tensors inside `grad`.
    fn pair<T>(grad: &mut [T], w: std::ops::Range<usize>, b: std::ops::Range<usize>) -> (&mut [T], &mut [T]) {
        debug_assert!(w.end <= b.start);
        let (head, tail) = grad.split_at_mut(b.start);
        (&mut head[w], &mut tail[..b.end - b.start])
    }

    // d(L1)/d(x_hat) through the sigmoid.
    let xhat = trace.reconstruction();
    let mut g: Vec<T> = xhat
        .iter()
        .zip(x)
        .map(|(&y, &t)| {
            let sign = if y > t {
                T::one()
            } else if y < t {
                -T::one()
            } else {
                T::zero()
            };
            sign * y * (T::one() - y)
        })
        .collect();

    for i in (0..stages.len()).rev() {
        let (cin, cout, small, big) = stages[i];
        let (w, b) = slots.decoder(i);
        let input = if i == 0 { &trace.dec_in } else { &trace.dec_out[i - 1] };
        let gm = geom(config, big, small);
        let (dw, db) = pair(grad, span(w), span(b));
        let mut dx = conv_transpose_backward(&g, input, params.tensor(w), cin, cout, &gm, dw, db);
        if i > 0 {
            relu_backward_in_place(&mut dx, &trace.dec_out[i - 1]);
        }
        g = dx;
    }

    // fc_decode, then the reparameterization.
    let latent = &trace.latent;
    let mut dz = vec![T::zero(); config.latent_dim];
    {
        let (w, b) = slots.fc_decode();
        let (dw, db) = pair(grad, span(w), span(b));
        linear_backward(&g, &latent.z, params.tensor(w), dw, db, &mut dz);
    }
    let half = T::from_f64(0.5);
    let dmu: Vec<T> = (0..config.latent_dim).map(|j| dz[j] + beta * latent.mu[j]).collect();
    let dlogvar: Vec<T> = (0..config.latent_dim)
        .map(|j| {
            let var = latent.sigma[j] * latent.sigma[j];
            dz[j] * latent.eps[j] * half * latent.sigma[j] + beta * half * (var - T::one())
        })
        .collect();

    let h = trace.enc_out.last().unwrap();
    let mut dh = vec![T::zero(); h.len()];
    for (slot, d) in [(slots.fc_mu(), &dmu), (slots.fc_logvar(), &dlogvar)] {
        let (w, b) = slot;
        let (dw, db) = pair(grad, span(w), span(b));
        linear_backward(d, h, params.tensor(w), dw, db, &mut dh);
    }
    relu_backward_in_place(&mut dh, h);

    let mut g = dh;
    for i in (0..config.depth()).rev() {
        let (w, b) = slots.encoder(i);
        let gm = geom(config, sizes[i], sizes[i + 1]);
        let (dw, db) = pair(grad, span(w), span(b));
        let dx = conv_backward(
            &g,
            &trace.enc_cols[i],
            params.tensor(w),
            channels[i],
            channels[i + 1],
            &gm,
            dw,
            db,
            i > 0,
        );
        if let Some(mut dx) = dx {
            relu_backward_in_place(&mut dx, &trace.enc_out[i - 1]);
            g = dx;
        }
    }
}

/// Loss terms of one sample given its forward trace.
pub fn sample_loss<T: Real>(trace: &ForwardTrace<T>, x: &[T], beta: f64) -> LossBreakdown {
    let recon = recon_l1(x, trace.reconstruction());
    let kl = kl_divergence(&trace.latent.mu, &trace.latent.logvar);
    LossBreakdown::new(recon, kl, beta)
}

/// Summed gradient and per-sample losses over a batch.
///
/// `inputs[i]` and `eps[i]` belong to sample `i`. Samples are grouped in
/// fixed-size runs that may execute concurrently; group sums are then added
/// in index order, so the result is independent of the thread count.
pub fn batch_gradient<T: Real>(
    params: &VaeParams<T>,
    inputs: &[&[T]],
    eps: &[Vec<T>],
    beta: f64,
) -> Result<(Vec<T>, Vec<LossBreakdown>), VaeError> {
    check_len(inputs.len(), eps.len())?;
    let beta_t = T::from_f64(beta);
    type Group<T> = Result<(Vec<T>, Vec<LossBreakdown>), VaeError>;
    let groups: Vec<Group<T>> = inputs
        .par_chunks(GRAD_GROUP)
        .zip(eps.par_chunks(GRAD_GROUP))
        .map(|(xs, es)| {
            let mut grad = vec![T::zero(); params.len()];
            let mut losses = Vec::with_capacity(xs.len());
            for (x, e) in xs.iter().zip(es) {
                let trace = forward(params, x, e)?;
                losses.push(sample_loss(&trace, x, beta));
                backward(params, &trace, x, beta_t, &mut grad);
            }
            Ok((grad, losses))
        })
        .collect();
    let mut total = vec![T::zero(); params.len()];
    let mut losses = Vec::with_capacity(inputs.len());
    for group in groups {
        let (g, l) = group?;
        for (t, v) in total.iter_mut().zip(g) {
            *t = *t + v;
        }
        losses.extend(l);
    }
    Ok((total, losses))
}
