//! Training objective: reconstruction MSE plus a distributional penalty that
//! pulls the encoder's latent batch toward a standard normal.
//!
//! The distributional term compares the Gaussian-kernel density estimate of
//! the latent batch `z_1..z_N` against the `N(0, I)` density in L2. With
//! kernel bandwidth `h` the squared distance has a closed form:
//!
//! ```text
//! s = (1/N^2) sum_ij G(z_i - z_j; 2h^2 I)
//!   - (2/N)   sum_i  G(z_i; (1 + h^2) I)
//!   + (4 pi)^(-nz/2)
//! ```
//!
//! where `G(v; c I)` is the centered Gaussian density with covariance `c I`
//! evaluated at `v`. The reported distance is `sqrt(max(s, 0))` (a squared
//! mode is available). A moment penalty matches the first six latent sample
//! moments to their standard-normal values, plus a pairwise-correlation
//! penalty in the multivariate case.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Range;

/// Targets and scalings for the first six standard-normal moments.
///
/// The first entry targets the raw mean; entries two through six target the
/// population central moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    pub targets: [f64; 6],
    pub scalings: [f64; 6],
}

impl GaussianMoments {
    pub const STANDARD: GaussianMoments = GaussianMoments {
        targets: [0.0, 1.0, 0.0, 3.0, 0.0, 15.0],
        scalings: [1.0, 1.0, 2.0, 3.0, 8.0, 15.0],
    };
}

/// Guard below which the square root's gradient switches to the smoothed
/// form `sqrt(s + KDE_ROOT_GUARD)`.
pub const KDE_ROOT_GUARD: f64 = 1e-12;

/// Weights of the composed objective
/// `mse + lambda * (kde + tau * moment)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the distributional term against the MSE.
    pub lambda: f64,
    /// Weight of the moment penalty inside the distributional term.
    pub tau: f64,
    /// Weight of the pairwise-correlation penalty (multivariate only).
    pub nu: f64,
    /// Kernel bandwidth of the KDE term.
    pub bandwidth: f64,
    /// Report the squared L2 distance instead of the norm.
    #[serde(default)]
    pub squared_distance: bool,
}

impl LossWeights {
    pub fn new(lambda: f64, tau: f64, bandwidth: f64) -> Result<Self> {
        let w = LossWeights {
            lambda,
            tau,
            nu: 0.1,
            bandwidth,
            squared_distance: false,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("tau", self.tau),
            ("nu", self.nu),
            ("bandwidth", self.bandwidth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Silverman-style default bandwidth `N^(-1/(nz+4))`.
    pub fn silverman_bandwidth(n: usize, nz: usize) -> f64 {
        (n as f64).powf(-1.0 / (nz as f64 + 4.0))
    }
}

/// Mean squared error `(1/N) sum_i |pred_i - target_i|^2`.
pub fn mse_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            what: "mse operands",
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.nrows() == 0 {
        return Err(Error::InvalidArgument("mse of an empty batch".into()));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / pred.nrows() as f64)
}

fn check_latent_batch(z: ArrayView2<'_, f64>, h: f64) -> Result<()> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(Error::InvalidArgument("empty latent batch".into()));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be strictly positive, got {h}"
        )));
    }
    Ok(())
}

#[inline]
fn row<'a>(z: &'a ArrayView2<'_, f64>, i: usize) -> &'a [f64] {
    let nz = z.ncols();
    let s = z.to_slice().expect("latent batch is contiguous");
    &s[i * nz..(i + 1) * nz]
}

/// Pairwise kernel sum over `i < j` within the row blocks `a` and `b`.
fn pair_sum(z: &ArrayView2<'_, f64>, a: &Range<usize>, b: &Range<usize>, inv2c: f64) -> f64 {
    let mut acc = 0.0;
    for i in a.clone() {
        let zi = row(z, i);
        let j_lo = if b.start > i { b.start } else { i + 1 };
        for j in j_lo..b.end {
            let zj = row(z, j);
            let mut q = 0.0;
            for k in 0..zi.len() {
                let d = zi[k] - zj[k];
                q += d * d;
            }
            acc += (-q * inv2c).exp();
        }
    }
    acc
}

/// Squared L2 distance between the latent KDE and the standard normal.
fn kde_sq(z: ArrayView2<'_, f64>, h: f64, ex: Exec) -> f64 {
    let (n, nz) = (z.nrows(), z.ncols());
    let nf = n as f64;
    let c1 = 2.0 * h * h;
    let c2 = 1.0 + h * h;
    let norm1 = (2.0 * PI * c1).powf(-(nz as f64) / 2.0);
    let norm2 = (2.0 * PI * c2).powf(-(nz as f64) / 2.0);

    let ranges = exec::chunk_ranges(n);
    let mut tasks = Vec::new();
    for a in 0..ranges.len() {
        for b in a..ranges.len() {
            tasks.push((ranges[a].clone(), ranges[b].clone()));
        }
    }
    let partials = exec::map_indexed(ex, tasks.len(), |t| {
        pair_sum(&z, &tasks[t].0, &tasks[t].1, 0.5 / c1)
    });
    let cross: f64 = partials.into_iter().sum();

    let t2_partials = exec::map_indexed(ex, ranges.len(), |c| {
        let mut acc = 0.0;
        for i in ranges[c].clone() {
            let zi = row(&z, i);
            let q: f64 = zi.iter().map(|v| v * v).sum();
            acc += (-q / (2.0 * c2)).exp();
        }
        acc
    });
    let t2_sum: f64 = t2_partials.into_iter().sum();

    let t1 = norm1 * (nf + 2.0 * cross) / (nf * nf);
    let t2 = 2.0 * norm2 * t2_sum / nf;
    t1 - t2 + (4.0 * PI).powf(-(nz as f64) / 2.0)
}

/// L2 distance between the latent batch's Gaussian KDE and `N(0, I)`.
///
/// Closed form, `O(N^2)` in the batch size. Returns the norm, guarded below
/// by zero against rounding.
pub fn kde_l2_distance(z: ArrayView2<'_, f64>, h: f64, ex: Exec) -> Result<f64> {
    check_latent_batch(z, h)?;
    Ok(kde_sq(z, h, ex).max(0.0).sqrt())
}

/// Squared-distance variant of [`kde_l2_distance`].
pub fn kde_l2_squared(z: ArrayView2<'_, f64>, h: f64, ex: Exec) -> Result<f64> {
    check_latent_batch(z, h)?;
    Ok(kde_sq(z, h, ex))
}

struct PairBlockGrad {
    sum: f64,
    ga: Array2<f64>,
    gb: Option<Array2<f64>>,
}

/// KDE distance and its gradient with respect to every latent sample.
///
/// `squared` selects the squared distance; otherwise the root is taken and
/// its gradient is smoothed with [`KDE_ROOT_GUARD`] near zero.
pub fn kde_l2_with_grad(
    z: ArrayView2<'_, f64>,
    h: f64,
    squared: bool,
    ex: Exec,
) -> Result<(f64, Array2<f64>)> {
    check_latent_batch(z, h)?;
    let (n, nz) = (z.nrows(), z.ncols());
    let nf = n as f64;
    let c1 = 2.0 * h * h;
    let c2 = 1.0 + h * h;
    let norm1 = (2.0 * PI * c1).powf(-(nz as f64) / 2.0);
    let norm2 = (2.0 * PI * c2).powf(-(nz as f64) / 2.0);

    let ranges = exec::chunk_ranges(n);
    let mut tasks = Vec::new();
    for a in 0..ranges.len() {
        for b in a..ranges.len() {
            tasks.push((a, b));
        }
    }

    // Pair blocks: kernel sum plus the antisymmetric pair gradients.
    let partials: Vec<PairBlockGrad> = exec::map_indexed(ex, tasks.len(), |t| {
        let (ra, rb) = (&ranges[tasks[t].0], &ranges[tasks[t].1]);
        let mut ga = Array2::zeros((ra.len(), nz));
        let mut gb = if tasks[t].0 == tasks[t].1 {
            None
        } else {
            Some(Array2::zeros((rb.len(), nz)))
        };
        let mut sum = 0.0;
        for i in ra.clone() {
            let zi = row(&z, i);
            let j_lo = if rb.start > i { rb.start } else { i + 1 };
            for j in j_lo..rb.end {
                let zj = row(&z, j);
                let mut q = 0.0;
                for k in 0..nz {
                    let d = zi[k] - zj[k];
                    q += d * d;
                }
                let w = (-q / (2.0 * c1)).exp();
                sum += w;
                // d/dz_i of (2/N^2) G(z_i - z_j; c1 I), and its negation for z_j.
                let f = 2.0 * norm1 * w / (nf * nf * c1);
                match &mut gb {
                    Some(gb) => {
                        for k in 0..nz {
                            let d = zi[k] - zj[k];
                            ga[(i - ra.start, k)] -= f * d;
                            gb[(j - rb.start, k)] += f * d;
                        }
                    }
                    None => {
                        for k in 0..nz {
                            let d = zi[k] - zj[k];
                            ga[(i - ra.start, k)] -= f * d;
                            ga[(j - ra.start, k)] += f * d;
                        }
                    }
                }
            }
        }
        PairBlockGrad { sum, ga, gb }
    });

    let mut grad = Array2::zeros((n, nz));
    let mut cross = 0.0;
    for (t, p) in partials.into_iter().enumerate() {
        let (a, b) = tasks[t];
        cross += p.sum;
        grad.slice_mut(ndarray::s![ranges[a].clone(), ..])
            .scaled_add(1.0, &p.ga);
        if let Some(gb) = p.gb {
            grad.slice_mut(ndarray::s![ranges[b].clone(), ..])
                .scaled_add(1.0, &gb);
        }
    }

    // Cross term against the target density: value and per-row gradient.
    let t2_parts: Vec<(f64, Array2<f64>)> = exec::map_indexed(ex, ranges.len(), |c| {
        let r = &ranges[c];
        let mut acc = 0.0;
        let mut g = Array2::zeros((r.len(), nz));
        for i in r.clone() {
            let zi = row(&z, i);
            let q: f64 = zi.iter().map(|v| v * v).sum();
            let w = norm2 * (-q / (2.0 * c2)).exp();
            acc += w;
            for k in 0..nz {
                g[(i - r.start, k)] = 2.0 * w * zi[k] / (nf * c2);
            }
        }
        (acc, g)
    });
    let mut t2_sum = 0.0;
    for (c, (acc, g)) in t2_parts.into_iter().enumerate() {
        t2_sum += acc;
        grad.slice_mut(ndarray::s![ranges[c].clone(), ..])
            .scaled_add(1.0, &g);
    }

    let t1 = norm1 * (nf + 2.0 * cross) / (nf * nf);
    let s = t1 - 2.0 * t2_sum / nf + (4.0 * PI).powf(-(nz as f64) / 2.0);

    if squared {
        return Ok((s, grad));
    }
    let value = s.max(0.0).sqrt();
    let dfac = if s < KDE_ROOT_GUARD {
        0.5 / (s.max(0.0) + KDE_ROOT_GUARD).sqrt()
    } else {
        0.5 / s.sqrt()
    };
    grad.mapv_inplace(|g| g * dfac);
    Ok((value, grad))
}

fn check_moment_batch(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "moment loss needs at least two samples, got {n}"
        )));
    }
    Ok(())
}

/// Sample moments of a scalar batch: raw mean first, then population central
/// moments of orders two through six.
fn sample_moments(z: &[f64]) -> [f64; 6] {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let mut m = [mean, 0.0, 0.0, 0.0, 0.0, 0.0];
    for &v in z {
        let c = v - mean;
        let c2 = c * c;
        let c3 = c2 * c;
        m[1] += c2;
        m[2] += c3;
        m[3] += c2 * c2;
        m[4] += c2 * c3;
        m[5] += c3 * c3;
    }
    for v in &mut m[1..] {
        *v /= n;
    }
    m
}

/// Scaled squared deviation of the first six sample moments from the
/// standard normal's: `sum_j (m_j - mu_j)^2 / c_j`.
pub fn moment_loss_1d(z: &[f64]) -> Result<f64> {
    check_moment_batch(z.len())?;
    let gm = GaussianMoments::STANDARD;
    let m = sample_moments(z);
    Ok((0..6)
        .map(|j| {
            let d = m[j] - gm.targets[j];
            d * d / gm.scalings[j]
        })
        .sum())
}

fn moment_grad_1d_into(z: &[f64], scale: f64, out: &mut [f64]) {
    let gm = GaussianMoments::STANDARD;
    let n = z.len() as f64;
    let m = sample_moments(z);
    let mean = m[0];
    // Population central moments of orders 1..=5 feed the chain rule.
    let mut lower = [0.0; 6]; // lower[j] = mean((z - mean)^j), lower[1] = 0
    for &v in z {
        let c = v - mean;
        let mut p = c;
        for l in lower.iter_mut().skip(1) {
            *l += p;
            p *= c;
        }
    }
    for l in &mut lower[1..] {
        *l /= n;
    }

    let w1 = 2.0 * (m[0] - gm.targets[0]) / gm.scalings[0];
    let mut wj = [0.0; 6];
    for j in 2..=6 {
        wj[j - 1] = 2.0 * (m[j - 1] - gm.targets[j - 1]) / gm.scalings[j - 1];
    }
    for (i, &v) in z.iter().enumerate() {
        let c = v - mean;
        let mut g = w1 / n;
        for j in 2..=6usize {
            g += wj[j - 1] * (j as f64 / n) * (powi(c, j - 1) - lower[j - 1]);
        }
        out[i] += scale * g;
    }
}

#[inline]
fn powi(x: f64, k: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..k {
        acc *= x;
    }
    acc
}

/// Multivariate moment loss: the 1-D loss summed over marginals plus a
/// pairwise-correlation penalty `(nu / K) sum_{j<k} rho_jk^2`,
/// `K = nz (nz - 1) / 2`. Delegates to [`moment_loss_1d`] when `nz == 1`.
pub fn moment_loss_nd(z: ArrayView2<'_, f64>, nu: f64) -> Result<f64> {
    check_moment_batch(z.nrows())?;
    let nz = z.ncols();
    if nz == 0 {
        return Err(Error::InvalidArgument("empty latent batch".into()));
    }
    if nz == 1 {
        let col: Vec<f64> = z.column(0).to_vec();
        return moment_loss_1d(&col);
    }
    let mut total = 0.0;
    for k in 0..nz {
        let col: Vec<f64> = z.column(k).to_vec();
        total += moment_loss_1d(&col)?;
    }
    total += nu * correlation_penalty(z)? / n_pairs(nz) as f64;
    Ok(total)
}

fn n_pairs(nz: usize) -> usize {
    nz * (nz - 1) / 2
}

/// Bitwise constancy; mean-centering cannot be trusted to produce an exact
/// zero variance for a constant column.
fn constant_column(col: &[f64]) -> bool {
    col.iter().all(|v| v.to_bits() == col[0].to_bits())
}

/// Sum of squared pairwise correlations; errors on a zero-variance column.
fn correlation_penalty(z: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, nz) = (z.nrows(), z.ncols());
    let nf = n as f64;
    for k in 0..nz {
        if constant_column(&z.column(k).to_vec()) {
            return Err(Error::ZeroVariance(k));
        }
    }
    let means: Vec<f64> = (0..nz).map(|k| z.column(k).sum() / nf).collect();
    let mut cov = Array2::<f64>::zeros((nz, nz));
    for i in 0..n {
        for a in 0..nz {
            let ca = z[(i, a)] - means[a];
            for b in a..nz {
                cov[(a, b)] += ca * (z[(i, b)] - means[b]);
            }
        }
    }
    cov.mapv_inplace(|v| v / nf);
    for a in 0..nz {
        if cov[(a, a)] <= 0.0 {
            return Err(Error::ZeroVariance(a));
        }
    }
    let mut acc = 0.0;
    for a in 0..nz {
        for b in (a + 1)..nz {
            let rho = cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt();
            acc += rho * rho;
        }
    }
    Ok(acc)
}

/// Moment loss and its gradient with respect to every latent sample.
pub fn moment_loss_with_grad(z: ArrayView2<'_, f64>, nu: f64) -> Result<(f64, Array2<f64>)> {
    check_moment_batch(z.nrows())?;
    let (n, nz) = (z.nrows(), z.ncols());
    let nf = n as f64;
    let mut grad = Array2::zeros((n, nz));

    let mut total = 0.0;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(nz);
    for k in 0..nz {
        let col: Vec<f64> = z.column(k).to_vec();
        total += moment_loss_1d(&col)?;
        let mut g = vec![0.0; n];
        moment_grad_1d_into(&col, 1.0, &mut g);
        for i in 0..n {
            grad[(i, k)] += g[i];
        }
        cols.push(col);
    }

    if nz > 1 {
        for (k, col) in cols.iter().enumerate() {
            if constant_column(col) {
                return Err(Error::ZeroVariance(k));
            }
        }
        let k_pairs = n_pairs(nz) as f64;
        let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
        let centered: Vec<Vec<f64>> = cols
            .iter()
            .zip(&means)
            .map(|(c, &m)| c.iter().map(|v| v - m).collect())
            .collect();
        let var: Vec<f64> = centered
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf)
            .collect();
        for (a, v) in var.iter().enumerate() {
            if *v <= 0.0 {
                return Err(Error::ZeroVariance(a));
            }
        }
        for a in 0..nz {
            for b in (a + 1)..nz {
                let cab = centered[a]
                    .iter()
                    .zip(&centered[b])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / nf;
                let (sa, sb) = (var[a].sqrt(), var[b].sqrt());
                let rho = cab / (sa * sb);
                total += nu * rho * rho / k_pairs;
                let w = 2.0 * nu * rho / k_pairs;
                for i in 0..n {
                    // d rho / d z_ia = zc_b / (N sa sb) - rho zc_a / (N sa^2)
                    grad[(i, a)] +=
                        w * (centered[b][i] / (nf * sa * sb) - rho * centered[a][i] / (nf * var[a]));
                    grad[(i, b)] +=
                        w * (centered[a][i] / (nf * sa * sb) - rho * centered[b][i] / (nf * var[b]));
                }
            }
        }
    }
    Ok((total, grad))
}

/// Distributional penalty `kde + tau * moment` of a latent batch.
pub fn distributional_loss(z: ArrayView2<'_, f64>, w: &LossWeights, ex: Exec) -> Result<f64> {
    let kde = if w.squared_distance {
        kde_l2_squared(z, w.bandwidth, ex)?
    } else {
        kde_l2_distance(z, w.bandwidth, ex)?
    };
    Ok(kde + w.tau * moment_loss_nd(z, w.nu)?)
}

/// Value and per-sample gradient of the distributional penalty, with the
/// KDE and moment parts reported separately.
pub fn distributional_loss_with_grad(
    z: ArrayView2<'_, f64>,
    w: &LossWeights,
    ex: Exec,
) -> Result<(f64, f64, Array2<f64>)> {
    let (kde, kde_grad) = kde_l2_with_grad(z, w.bandwidth, w.squared_distance, ex)?;
    let (moment, mom_grad) = moment_loss_with_grad(z, w.nu)?;
    let mut grad = kde_grad;
    grad.scaled_add(w.tau, &mom_grad);
    Ok((kde, moment, grad))
}

/// Composed batch objective `mse(pred, target) + lambda * (kde + tau * moment)`.
pub fn total_loss(
    pred: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    w: &LossWeights,
    ex: Exec,
) -> Result<f64> {
    Ok(mse_loss(pred, target)? + w.lambda * distributional_loss(z, w, ex)?)
}
