//! Encoder and residual-decoder networks with exact reverse-mode gradients.
//!
//! The encoder maps a transition pair `(x0, x1)` in `R^{2d}` to a latent
//! `z` in `R^{nz}`; the decoder maps `(x0, z)` to a residual in `R^d` and is
//! always consumed as `x0 + residual`, so a zero-parameter model is exactly
//! the identity map. Hidden layers use eLU (alpha = 1); output layers are
//! linear. Parameters live in one flat vector per network, laid out layer by
//! layer as a row-major weight matrix followed by the bias vector.
//!
//! Gradients are hand-rolled over this fixed structure rather than traced:
//! the model family is closed, and a flat layout keeps the optimizer and the
//! checkpoint format trivial.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::losses::{self, LossWeights};
use crate::rng::{self, domain};
use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// eLU with alpha = 1.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// eLU derivative recovered from the activation's output value.
///
/// For x >= 0 the output is x and the slope 1; for x < 0 the output is
/// e^x - 1 and the slope e^x = output + 1. Both branches agree at 0.
#[inline]
fn elu_slope_from_output(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Fully connected network: widths plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    /// Layer widths `[input, hidden.., output]`; at least two entries.
    pub layer_sizes: Vec<usize>,
    /// Per layer: weights (fan_out x fan_in, row-major), then biases.
    pub params: Vec<f64>,
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "network needs at least input and output widths, all nonzero, got {sizes:?}"
        )));
    }
    Ok(())
}

impl NetParams {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(NetParams {
            layer_sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        })
    }

    /// He-style fan-in uniform weights, zero biases.
    pub fn he_uniform(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut p = 0;
        for w in net.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for slot in &mut net.params[p..p + fan_out * fan_in] {
                *slot = (2.0 * rng.gen::<f64>() - 1.0) * bound;
            }
            p += fan_out * fan_in + fan_out; // biases stay zero
        }
        Ok(net)
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total activation storage for one cached forward pass.
    pub fn cache_len(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Forward pass writing every post-activation into `cache`, laid out
    /// `[a0 | a1 | .. | aL]` with `a0 = x`. The network output is the tail.
    pub fn forward_cache_into(&self, x: &[f64], cache: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim());
        debug_assert_eq!(cache.len(), self.cache_len());
        cache[..x.len()].copy_from_slice(x);
        let last = self.layer_sizes.len() - 1;
        let mut a_off = 0;
        let mut p = 0;
        for l in 1..=last {
            let (fan_in, fan_out) = (self.layer_sizes[l - 1], self.layer_sizes[l]);
            let (head, rest) = cache[a_off..].split_at_mut(fan_in);
            let w = &self.params[p..p + fan_out * fan_in];
            let b = &self.params[p + fan_out * fan_in..p + fan_out * fan_in + fan_out];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s = b[o];
                for i in 0..fan_in {
                    s += row[i] * head[i];
                }
                rest[o] = if l == last { s } else { elu(s) };
            }
            a_off += fan_in;
            p += fan_out * fan_in + fan_out;
        }
    }

    /// Output slice of a cache filled by [`NetParams::forward_cache_into`].
    pub fn output_of<'c>(&self, cache: &'c [f64]) -> &'c [f64] {
        &cache[self.cache_len() - self.out_dim()..]
    }

    /// Forward pass into `out`, reusing `scratch` for activations.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        scratch.resize(self.cache_len(), 0.0);
        self.forward_cache_into(x, scratch);
        out.copy_from_slice(self.output_of(scratch));
    }

    /// Reverse pass from the output cotangent `dy`.
    ///
    /// Accumulates (`+=`) parameter gradients into `dparams` (same layout as
    /// `params`) and, when requested, writes the input gradient into `dx`.
    /// `delta` is scratch sized to the widest layer.
    pub fn backward_from_cache(
        &self,
        cache: &[f64],
        dy: &[f64],
        dparams: &mut [f64],
        mut dx: Option<&mut [f64]>,
        delta: &mut Vec<f64>,
    ) {
        debug_assert_eq!(dy.len(), self.out_dim());
        debug_assert_eq!(dparams.len(), self.params.len());
        let last = self.layer_sizes.len() - 1;

        // Per-layer cursors, walked forward once, then consumed in reverse.
        let mut a_offs = Vec::with_capacity(last + 1);
        let mut p_offs = Vec::with_capacity(last);
        let mut a = 0;
        let mut p = 0;
        for l in 0..=last {
            a_offs.push(a);
            a += self.layer_sizes[l];
            if l < last {
                p_offs.push(p);
                p += (self.layer_sizes[l] + 1) * self.layer_sizes[l + 1];
            }
        }

        let width = *self.layer_sizes.iter().max().unwrap();
        delta.resize(2 * width, 0.0);
        let (cur, prev) = delta.split_at_mut(width);
        cur[..dy.len()].copy_from_slice(dy);

        for l in (1..=last).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l - 1], self.layer_sizes[l]);
            let a_prev = &cache[a_offs[l - 1]..a_offs[l - 1] + fan_in];
            let p0 = p_offs[l - 1];
            let w = &self.params[p0..p0 + fan_out * fan_in];
            let (gw, gb) = dparams[p0..p0 + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);

            prev[..fan_in].fill(0.0);
            for o in 0..fan_out {
                let d = cur[o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += d * a_prev[i];
                    prev[i] += row[i] * d;
                }
                gb[o] += d;
            }
            if l > 1 {
                for i in 0..fan_in {
                    cur[i] = prev[i] * elu_slope_from_output(a_prev[i]);
                }
            } else if let Some(dx) = dx.as_deref_mut() {
                dx.copy_from_slice(&prev[..fan_in]);
            }
        }
    }
}

/// Default hidden widths: three eLU layers of 20 nodes.
pub const DEFAULT_HIDDEN: [usize; 3] = [20, 20, 20];

/// Encoder plus residual decoder for one-step transitions at step size `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FmlModel {
    pub encoder: NetParams,
    pub decoder: NetParams,
    pub dim: usize,
    pub latent_dim: usize,
    pub dt: f64,
}

impl FmlModel {
    fn shapes(dim: usize, latent_dim: usize, hidden: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        if dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "model needs dim >= 1 and latent_dim >= 1, got {dim} and {latent_dim}"
            )));
        }
        let mut enc = vec![2 * dim];
        enc.extend_from_slice(hidden);
        enc.push(latent_dim);
        let mut dec = vec![dim + latent_dim];
        dec.extend_from_slice(hidden);
        dec.push(dim);
        Ok((enc, dec))
    }

    fn check_dt(dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be strictly positive, got {dt}"
            )));
        }
        Ok(())
    }

    /// Fresh model with He-uniform weights and zero biases, drawn from the
    /// init stream of `seed`.
    pub fn new(dim: usize, latent_dim: usize, hidden: &[usize], dt: f64, seed: u64) -> Result<Self> {
        Self::check_dt(dt)?;
        let (enc, dec) = Self::shapes(dim, latent_dim, hidden)?;
        let mut r = rng::stream_rng(rng::mix_seed(seed, domain::INIT, 0), 0);
        Ok(FmlModel {
            encoder: NetParams::he_uniform(&enc, &mut r)?,
            decoder: NetParams::he_uniform(&dec, &mut r)?,
            dim,
            latent_dim,
            dt,
        })
    }

    /// All-zero parameters: encodes everything to 0 and maps x0 to x0.
    pub fn zeros(dim: usize, latent_dim: usize, hidden: &[usize], dt: f64) -> Result<Self> {
        Self::check_dt(dt)?;
        let (enc, dec) = Self::shapes(dim, latent_dim, hidden)?;
        Ok(FmlModel {
            encoder: NetParams::zeros(&enc)?,
            decoder: NetParams::zeros(&dec)?,
            dim,
            latent_dim,
            dt,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.params.len() + self.decoder.params.len()
    }

    /// Encoder and decoder parameters as one contiguous vector.
    pub fn params_concat(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.param_count());
        all.extend_from_slice(&self.encoder.params);
        all.extend_from_slice(&self.decoder.params);
        all
    }

    pub fn set_params_from(&mut self, blob: &[f64]) -> Result<()> {
        if blob.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter blob",
                expected: self.param_count(),
                got: blob.len(),
            });
        }
        let ne = self.encoder.params.len();
        self.encoder.params.copy_from_slice(&blob[..ne]);
        self.decoder.params.copy_from_slice(&blob[ne..]);
        Ok(())
    }

    fn check_state(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Latent code of the transition `(x0, x1)`.
    pub fn encode(&self, x0: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
        self.check_state("encode x0", x0)?;
        self.check_state("encode x1", x1)?;
        let mut input = Vec::with_capacity(2 * self.dim);
        input.extend_from_slice(x0);
        input.extend_from_slice(x1);
        let mut out = vec![0.0; self.latent_dim];
        let mut scratch = Vec::new();
        self.encoder.forward_into(&input, &mut out, &mut scratch);
        Ok(out)
    }

    /// One-step prediction `x0 + residual(x0, z)`.
    pub fn decode(&self, x0: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_state("decode x0", x0)?;
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "decode z",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        let mut input = Vec::with_capacity(self.dim + self.latent_dim);
        input.extend_from_slice(x0);
        input.extend_from_slice(z);
        let mut out = vec![0.0; self.dim];
        let mut scratch = Vec::new();
        self.decoder.forward_into(&input, &mut out, &mut scratch);
        for (o, x) in out.iter_mut().zip(x0) {
            *o += x;
        }
        Ok(out)
    }

    /// Allocation-free [`Self::encode`]; `ws` is reusable scratch.
    pub fn encode_into(
        &self,
        x0: &[f64],
        x1: &[f64],
        out: &mut [f64],
        ws: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_state("encode x0", x0)?;
        self.check_state("encode x1", x1)?;
        if out.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "encode output",
                expected: self.latent_dim,
                got: out.len(),
            });
        }
        let in_len = 2 * self.dim;
        ws.resize(in_len + self.encoder.cache_len(), 0.0);
        let (input, cache) = ws.split_at_mut(in_len);
        input[..self.dim].copy_from_slice(x0);
        input[self.dim..].copy_from_slice(x1);
        self.encoder.forward_cache_into(input, cache);
        out.copy_from_slice(self.encoder.output_of(cache));
        Ok(())
    }

    /// Allocation-free [`Self::decode`]; `ws` is reusable scratch.
    pub fn decode_into(
        &self,
        x0: &[f64],
        z: &[f64],
        out: &mut [f64],
        ws: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_state("decode x0", x0)?;
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "decode z",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "decode output",
                expected: self.dim,
                got: out.len(),
            });
        }
        let in_len = self.dim + self.latent_dim;
        ws.resize(in_len + self.decoder.cache_len(), 0.0);
        let (input, cache) = ws.split_at_mut(in_len);
        input[..self.dim].copy_from_slice(x0);
        input[self.dim..].copy_from_slice(z);
        self.decoder.forward_cache_into(input, cache);
        let res = self.decoder.output_of(cache);
        for i in 0..self.dim {
            out[i] = x0[i] + res[i];
        }
        Ok(())
    }

    fn check_batch(&self, x0: &ArrayView2<'_, f64>, other: &ArrayView2<'_, f64>, other_cols: usize) -> Result<()> {
        if x0.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "batch x0 columns",
                expected: self.dim,
                got: x0.ncols(),
            });
        }
        if other.ncols() != other_cols || other.nrows() != x0.nrows() {
            return Err(Error::DimensionMismatch {
                what: "batch companion shape",
                expected: x0.nrows() * other_cols,
                got: other.len(),
            });
        }
        if x0.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        Ok(())
    }

    /// Encoder applied to every row pair; rows assemble in input order.
    pub fn encode_batch(
        &self,
        x0: ArrayView2<'_, f64>,
        x1: ArrayView2<'_, f64>,
        ex: Exec,
    ) -> Result<Array2<f64>> {
        self.check_batch(&x0, &x1, self.dim)?;
        let (n, d, nz) = (x0.nrows(), self.dim, self.latent_dim);
        let ranges = exec::chunk_ranges(n);
        let chunks: Vec<Vec<f64>> = exec::map_indexed(ex, ranges.len(), |c| {
            let r = &ranges[c];
            let mut out = vec![0.0; r.len() * nz];
            let mut input = vec![0.0; 2 * d];
            let mut scratch = Vec::new();
            for (k, i) in r.clone().enumerate() {
                input[..d].copy_from_slice(row(&x0, i));
                input[d..].copy_from_slice(row(&x1, i));
                self.encoder
                    .forward_into(&input, &mut out[k * nz..(k + 1) * nz], &mut scratch);
            }
            out
        });
        let flat: Vec<f64> = chunks.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((n, nz), flat).expect("chunk assembly"))
    }

    /// Decoder applied row-wise, including the identity skip.
    pub fn decode_batch(
        &self,
        x0: ArrayView2<'_, f64>,
        z: ArrayView2<'_, f64>,
        ex: Exec,
    ) -> Result<Array2<f64>> {
        self.check_batch(&x0, &z, self.latent_dim)?;
        let (n, d, nz) = (x0.nrows(), self.dim, self.latent_dim);
        let ranges = exec::chunk_ranges(n);
        let chunks: Vec<Vec<f64>> = exec::map_indexed(ex, ranges.len(), |c| {
            let r = &ranges[c];
            let mut out = vec![0.0; r.len() * d];
            let mut input = vec![0.0; d + nz];
            let mut scratch = Vec::new();
            for (k, i) in r.clone().enumerate() {
                let xr = row(&x0, i);
                input[..d].copy_from_slice(xr);
                input[d..].copy_from_slice(row(&z, i));
                let o = &mut out[k * d..(k + 1) * d];
                self.decoder.forward_into(&input, o, &mut scratch);
                for (v, x) in o.iter_mut().zip(xr) {
                    *v += x;
                }
            }
            out
        });
        let flat: Vec<f64> = chunks.into_iter().flatten().collect();
        Ok(Array2::from_shape_vec((n, d), flat).expect("chunk assembly"))
    }
}

#[inline]
fn row<'a>(m: &'a ArrayView2<'_, f64>, i: usize) -> &'a [f64] {
    let c = m.ncols();
    let s = m.to_slice().expect("batch array is contiguous");
    &s[i * c..(i + 1) * c]
}

/// Loss values of one batch under the composed objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub kde: f64,
    pub moment: f64,
    pub total: f64,
}

/// Composed objective value on a batch: encode, decode, then
/// `mse + lambda * (kde + tau * moment)` on the latents.
pub fn batch_loss(
    model: &FmlModel,
    x0: ArrayView2<'_, f64>,
    x1: ArrayView2<'_, f64>,
    w: &LossWeights,
    ex: Exec,
) -> Result<LossBreakdown> {
    let z = model.encode_batch(x0, x1, ex)?;
    let pred = model.decode_batch(x0, z.view(), ex)?;
    let mse = losses::mse_loss(pred.view(), x1)?;
    let kde = if w.squared_distance {
        losses::kde_l2_squared(z.view(), w.bandwidth, ex)?
    } else {
        losses::kde_l2_distance(z.view(), w.bandwidth, ex)?
    };
    let moment = losses::moment_loss_nd(z.view(), w.nu)?;
    Ok(LossBreakdown {
        mse,
        kde,
        moment,
        total: mse + w.lambda * (kde + w.tau * moment),
    })
}

/// Parameter gradients of the composed objective over one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub loss: LossBreakdown,
}

struct ChunkForward {
    enc_caches: Vec<f64>,
    dec_caches: Vec<f64>,
    z: Vec<f64>,
    pred: Vec<f64>,
}

/// Exact reverse-mode gradients of [`batch_loss`] in every encoder and
/// decoder parameter, including the path from the latents through the
/// decoder. Deterministic for a fixed batch regardless of execution mode.
pub fn batch_gradients(
    model: &FmlModel,
    x0: ArrayView2<'_, f64>,
    x1: ArrayView2<'_, f64>,
    w: &LossWeights,
    ex: Exec,
) -> Result<BatchGradients> {
    model.check_batch(&x0, &x1, model.dim)?;
    let (n, d, nz) = (x0.nrows(), model.dim, model.latent_dim);
    let nf = n as f64;
    let enc_clen = model.encoder.cache_len();
    let dec_clen = model.decoder.cache_len();
    let ranges = exec::chunk_ranges(n);

    // Forward everything once, keeping per-sample activation caches.
    let fwd: Vec<ChunkForward> = exec::map_indexed(ex, ranges.len(), |c| {
        let r = &ranges[c];
        let mut out = ChunkForward {
            enc_caches: vec![0.0; r.len() * enc_clen],
            dec_caches: vec![0.0; r.len() * dec_clen],
            z: vec![0.0; r.len() * nz],
            pred: vec![0.0; r.len() * d],
        };
        let mut enc_in = vec![0.0; 2 * d];
        let mut dec_in = vec![0.0; d + nz];
        for (k, i) in r.clone().enumerate() {
            let xr = row(&x0, i);
            enc_in[..d].copy_from_slice(xr);
            enc_in[d..].copy_from_slice(row(&x1, i));
            let ec = &mut out.enc_caches[k * enc_clen..(k + 1) * enc_clen];
            model.encoder.forward_cache_into(&enc_in, ec);
            let z = model.encoder.output_of(ec);
            out.z[k * nz..(k + 1) * nz].copy_from_slice(z);

            dec_in[..d].copy_from_slice(xr);
            dec_in[d..].copy_from_slice(z);
            let dc = &mut out.dec_caches[k * dec_clen..(k + 1) * dec_clen];
            model.decoder.forward_cache_into(&dec_in, dc);
            let res = model.decoder.output_of(dc);
            for (p, (rv, xv)) in out.pred[k * d..(k + 1) * d]
                .iter_mut()
                .zip(res.iter().zip(xr))
            {
                *p = rv + xv;
            }
        }
        out
    });

    let mut z_flat = Vec::with_capacity(n * nz);
    let mut pred_flat = Vec::with_capacity(n * d);
    for f in &fwd {
        z_flat.extend_from_slice(&f.z);
        pred_flat.extend_from_slice(&f.pred);
    }
    let z = Array2::from_shape_vec((n, nz), z_flat).expect("chunk assembly");
    let pred = Array2::from_shape_vec((n, d), pred_flat).expect("chunk assembly");

    let mse = losses::mse_loss(pred.view(), x1)?;
    let (kde, moment, dz_dist) = losses::distributional_loss_with_grad(z.view(), w, ex)?;
    let total = mse + w.lambda * (kde + w.tau * moment);
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }

    // Backward: MSE cotangent through the decoder, then the combined latent
    // cotangent (reconstruction + distributional) through the encoder.
    let pred_v = pred.view();
    let dz_v = dz_dist.view();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = exec::map_indexed(ex, ranges.len(), |c| {
        let r = &ranges[c];
        let f = &fwd[c];
        let mut genc = vec![0.0; model.encoder.params.len()];
        let mut gdec = vec![0.0; model.decoder.params.len()];
        let mut dy = vec![0.0; d];
        let mut dxz = vec![0.0; d + nz];
        let mut dz = vec![0.0; nz];
        let mut delta = Vec::new();
        for (k, i) in r.clone().enumerate() {
            let pr = row(&pred_v, i);
            let tr = row(&x1, i);
            for j in 0..d {
                dy[j] = 2.0 * (pr[j] - tr[j]) / nf;
            }
            let dc = &f.dec_caches[k * dec_clen..(k + 1) * dec_clen];
            model
                .decoder
                .backward_from_cache(dc, &dy, &mut gdec, Some(&mut dxz), &mut delta);
            let dzr = row(&dz_v, i);
            for j in 0..nz {
                dz[j] = dxz[d + j] + w.lambda * dzr[j];
            }
            let ecache = &f.enc_caches[k * enc_clen..(k + 1) * enc_clen];
            model
                .encoder
                .backward_from_cache(ecache, &dz, &mut genc, None, &mut delta);
        }
        (genc, gdec)
    });

    let mut encoder = vec![0.0; model.encoder.params.len()];
    let mut decoder = vec![0.0; model.decoder.params.len()];
    for (ge, gd) in partials {
        for (a, b) in encoder.iter_mut().zip(&ge) {
            *a += b;
        }
        for (a, b) in decoder.iter_mut().zip(&gd) {
            *a += b;
        }
    }

    Ok(BatchGradients {
        encoder,
        decoder,
        loss: LossBreakdown {
            mse,
            kde,
            moment,
            total,
        },
    })
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators of one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update in place. A non-finite gradient leaves
    /// parameters and moments untouched.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        betas: (f64, f64),
        eps: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                what: "adam operands",
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let (b1, b2) = betas;
        self.t += 1;
        let bc1 = 1.0 - b1.powf(self.t as f64);
        let bc2 = 1.0 - b2.powf(self.t as f64);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}
