//! Model validation against ground truth: ensemble rollouts, effective
//! drift/diffusion recovery, one-step conditional distributions, and
//! latent-Gaussianity checks.
//!
//! Model rollouts and reference solutions run through one code path: a
//! [`PathSampler`] advances a state one step, and the ensemble machinery
//! (member streams, divergence exclusion, streaming statistics) is shared,
//! so like-for-like comparisons differ only in the sampler.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::neural::FmlModel;
use crate::rng;
use crate::sde::{self, euler_maruyama_step, NoiseKind, SdeSpec};
use ndarray::{Array2, Array3, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Fraction of ensemble paths allowed to diverge before the run is an error.
pub const EXCLUSION_CAP: f64 = 0.01;

/// A coordinate whose one-step conditional std falls below
/// `DETERMINISTIC_STD_FACTOR * sqrt(dt)` is treated as noise-free.
pub const DETERMINISTIC_STD_FACTOR: f64 = 0.05;

/// One-step state advance used by the ensemble machinery.
///
/// `step` may leave non-finite values in `out`; the caller treats that as
/// path divergence. `ws` is caller-provided scratch the sampler may resize.
pub trait PathSampler: Sync {
    fn dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn step(&self, x: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64], ws: &mut Vec<f64>)
        -> Result<()>;
}

/// Rolls a trained model forward with fresh unit-Gaussian latents.
pub struct ModelSampler<'a> {
    pub model: &'a FmlModel,
}

impl PathSampler for ModelSampler<'_> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn dt(&self) -> f64 {
        self.model.dt
    }

    fn step(
        &self,
        x: &[f64],
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
        ws: &mut Vec<f64>,
    ) -> Result<()> {
        let (d, nz) = (self.model.dim, self.model.latent_dim);
        debug_assert_eq!(x.len(), d);
        let in_len = d + nz;
        ws.resize(in_len + self.model.decoder.cache_len(), 0.0);
        let (input, cache) = ws.split_at_mut(in_len);
        input[..d].copy_from_slice(x);
        for v in input[d..].iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        self.model.decoder.forward_cache_into(input, cache);
        let res = self.model.decoder.output_of(cache);
        for i in 0..d {
            out[i] = x[i] + res[i];
        }
        Ok(())
    }
}

/// Advances the true SDE by Euler-Maruyama; the reference for comparisons.
pub struct SdeSampler<'a> {
    pub spec: &'a SdeSpec,
    pub dt: f64,
}

impl PathSampler for SdeSampler<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(
        &self,
        x: &[f64],
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
        ws: &mut Vec<f64>,
    ) -> Result<()> {
        let m = self.spec.noise_dim();
        ws.resize(m, 0.0);
        sde::sample_noise_into(self.spec.noise_kind(), rng, ws);
        if self.spec.noise_kind() != NoiseKind::Lognormal {
            let s = self.dt.sqrt();
            for v in ws.iter_mut() {
                *v *= s;
            }
        }
        match euler_maruyama_step(self.spec, x, self.dt, ws) {
            Ok(y) => out.copy_from_slice(&y),
            // Divergence is the machinery's to handle: surface it as a
            // non-finite state instead of an error.
            Err(Error::StepDiverged { .. }) => out.fill(f64::NAN),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

/// Per-step ensemble mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    /// Time grid `k * dt`, `k = 0..=n_steps`.
    pub times: Vec<f64>,
    /// `(n_steps + 1) x d` mean across surviving paths.
    pub mean: Array2<f64>,
    /// `(n_steps + 1) x d` population std across surviving paths.
    pub std: Array2<f64>,
    /// Paths that stayed finite and entered the statistics.
    pub n_samples: usize,
    /// Paths dropped for producing a non-finite state.
    pub n_excluded: usize,
}

struct EnsPartial {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    valid: usize,
    excluded: usize,
    paths: Option<Vec<f64>>,
}

fn run_ensemble<S: PathSampler + ?Sized>(
    sampler: &S,
    x0: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    ex: Exec,
    keep_paths: bool,
) -> Result<(EnsembleStats, Option<Array3<f64>>)> {
    let d = sampler.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            what: "ensemble start state",
            expected: d,
            got: x0.len(),
        });
    }
    if n_samples == 0 || n_steps == 0 {
        return Err(Error::InvalidArgument(
            "ensemble needs n_samples >= 1 and n_steps >= 1".into(),
        ));
    }
    let rows = n_steps + 1;
    let ranges = exec::chunk_ranges(n_samples);

    let partials: Vec<Result<EnsPartial>> = exec::map_indexed(ex, ranges.len(), |c| {
        let r = &ranges[c];
        let mut p = EnsPartial {
            sum: vec![0.0; rows * d],
            sumsq: vec![0.0; rows * d],
            valid: 0,
            excluded: 0,
            paths: keep_paths.then(|| vec![f64::NAN; r.len() * rows * d]),
        };
        let mut path = vec![0.0; rows * d];
        let mut next = vec![0.0; d];
        let mut ws = Vec::new();
        for (k, member) in r.clone().enumerate() {
            let mut rng = rng::stream_rng(seed, member as u64);
            path[..d].copy_from_slice(x0);
            let mut alive = true;
            let mut steps_done = 0;
            for s in 0..n_steps {
                let (head, tail) = path.split_at_mut((s + 1) * d);
                let x = &head[s * d..];
                sampler.step(x, &mut rng, &mut next, &mut ws)?;
                if next.iter().any(|v| !v.is_finite()) {
                    alive = false;
                    break;
                }
                tail[..d].copy_from_slice(&next);
                steps_done = s + 1;
            }
            if let Some(paths) = &mut p.paths {
                let keep = (steps_done + 1) * d;
                paths[k * rows * d..k * rows * d + keep].copy_from_slice(&path[..keep]);
            }
            if alive {
                p.valid += 1;
                // Accumulate deviations from x0: the raw second moment loses
                // ~9 digits to cancellation when paths hover near a large
                // common offset.
                for (i, v) in path.iter().enumerate() {
                    let u = v - x0[i % d];
                    p.sum[i] += u;
                    p.sumsq[i] += u * u;
                }
            } else {
                p.excluded += 1;
            }
        }
        Ok(p)
    });

    let mut sum = vec![0.0; rows * d];
    let mut sumsq = vec![0.0; rows * d];
    let mut valid = 0usize;
    let mut excluded = 0usize;
    let mut all_paths = keep_paths.then(|| Vec::with_capacity(n_samples * rows * d));
    for p in partials {
        let p = p?;
        for i in 0..rows * d {
            sum[i] += p.sum[i];
            sumsq[i] += p.sumsq[i];
        }
        valid += p.valid;
        excluded += p.excluded;
        if let (Some(all), Some(part)) = (&mut all_paths, p.paths) {
            all.extend_from_slice(&part);
        }
    }

    if excluded as f64 > EXCLUSION_CAP * n_samples as f64 {
        return Err(Error::TooManyExcluded {
            excluded,
            total: n_samples,
            percent: EXCLUSION_CAP * 100.0,
        });
    }

    let nf = valid as f64;
    let mut mean = Array2::zeros((rows, d));
    let mut std = Array2::zeros((rows, d));
    for s in 0..rows {
        for k in 0..d {
            let m = sum[s * d + k] / nf;
            mean[(s, k)] = x0[k] + m;
            std[(s, k)] = (sumsq[s * d + k] / nf - m * m).max(0.0).sqrt();
        }
    }
    let stats = EnsembleStats {
        times: (0..rows).map(|k| k as f64 * sampler.dt()).collect(),
        mean,
        std,
        n_samples: valid,
        n_excluded: excluded,
    };
    let paths = all_paths
        .map(|flat| Array3::from_shape_vec((n_samples, rows, d), flat).expect("chunk assembly"));
    Ok((stats, paths))
}

/// Ensemble statistics of a sampler without retaining the paths.
pub fn ensemble_stats<S: PathSampler + ?Sized>(
    sampler: &S,
    x0: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    ex: Exec,
) -> Result<EnsembleStats> {
    run_ensemble(sampler, x0, n_samples, n_steps, seed, ex, false).map(|(s, _)| s)
}

/// As [`ensemble_stats`], additionally returning every path.
///
/// Excluded paths stay in the array with NaN from their divergence point on,
/// so row `i` always belongs to member stream `i`.
pub fn ensemble_paths<S: PathSampler + ?Sized>(
    sampler: &S,
    x0: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    ex: Exec,
) -> Result<(EnsembleStats, Array3<f64>)> {
    run_ensemble(sampler, x0, n_samples, n_steps, seed, ex, true)
        .map(|(s, p)| (s, p.expect("paths requested")))
}

/// Roll the trained model forward `n_steps` from `x0` across an ensemble,
/// drawing fresh latents every step.
pub fn rollout_ensemble(
    model: &FmlModel,
    x0: &[f64],
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    ex: Exec,
) -> Result<EnsembleStats> {
    ensemble_stats(&ModelSampler { model }, x0, n_samples, n_steps, seed, ex)
}

/// Reference ensemble from the true SDE under the same machinery and
/// member streams as [`rollout_ensemble`].
pub fn reference_stats(
    spec: &SdeSpec,
    x0: &[f64],
    n_samples: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    ex: Exec,
) -> Result<EnsembleStats> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    ensemble_stats(&SdeSampler { spec, dt }, x0, n_samples, n_steps, seed, ex)
}

/// How one-step conditional moments translate into drift and diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    /// `a(x) = E[y - x]/dt`, `b(x) = Std[y]/sqrt(dt)`.
    Arithmetic,
    /// `a(x) = ln(E[y/x])/dt`, `b(x) = Std[y]` (reported unscaled).
    Geometric,
}

/// Effective drift and diffusion on an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffTable {
    pub x_points: Array2<f64>,
    pub a_hat: Array2<f64>,
    pub b_hat: Array2<f64>,
    pub mode: RecoveryMode,
    pub n_mc: usize,
}

/// Estimate the one-step map's effective drift and diffusion per coordinate
/// by Monte Carlo over the latent at every grid point.
pub fn recover_drift_diffusion(
    model: &FmlModel,
    x_points: ArrayView2<'_, f64>,
    n_mc: usize,
    mode: RecoveryMode,
    seed: u64,
    ex: Exec,
) -> Result<DriftDiffTable> {
    let d = model.dim;
    if x_points.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "grid columns",
            expected: d,
            got: x_points.ncols(),
        });
    }
    let n_pts = x_points.nrows();
    if n_pts == 0 {
        return Err(Error::InvalidArgument("empty evaluation grid".into()));
    }
    if n_mc < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_mc must be at least 2, got {n_mc}"
        )));
    }
    if d == 1 {
        for i in 1..n_pts {
            if !(x_points[(i, 0)] > x_points[(i - 1, 0)]) {
                return Err(Error::InvalidArgument(
                    "grid must be strictly increasing".into(),
                ));
            }
        }
    }
    if mode == RecoveryMode::Geometric {
        for i in 0..n_pts {
            if x_points.row(i).iter().any(|v| v.abs() < 1e-9) {
                return Err(Error::InvalidArgument(format!(
                    "geometric recovery rejects grid point {i}: a coordinate is within 1e-9 of zero"
                )));
            }
        }
    }

    let dt = model.dt;
    let nz = model.latent_dim;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = exec::map_indexed(ex, n_pts, |p| {
        let x: Vec<f64> = x_points.row(p).to_vec();
        let mut rng = rng::stream_rng(seed, p as u64);
        let mut z = vec![0.0; nz];
        let mut y = vec![0.0; d];
        let mut ws = Vec::new();
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        let mut sum_ratio = vec![0.0; d];
        for _ in 0..n_mc {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            model.decode_into(&x, &z, &mut y, &mut ws)?;
            // Increments, not raw states: keeps the identity map at an exact
            // zero table and avoids cancellation in the variance.
            for k in 0..d {
                let u = y[k] - x[k];
                sum[k] += u;
                sumsq[k] += u * u;
                if mode == RecoveryMode::Geometric {
                    sum_ratio[k] += y[k] / x[k];
                }
            }
        }
        let nf = n_mc as f64;
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        for k in 0..d {
            let mean = sum[k] / nf;
            let var = (sumsq[k] / nf - mean * mean).max(0.0);
            match mode {
                RecoveryMode::Arithmetic => {
                    a[k] = mean / dt;
                    b[k] = var.sqrt() / dt.sqrt();
                }
                RecoveryMode::Geometric => {
                    let ratio = sum_ratio[k] / nf;
                    if !(ratio > 0.0) {
                        return Err(Error::InvalidArgument(format!(
                            "geometric recovery at grid point {p}: mean one-step ratio {ratio} is not positive"
                        )));
                    }
                    a[k] = ratio.ln() / dt;
                    b[k] = var.sqrt();
                }
            }
        }
        Ok((a, b))
    });

    let mut a_hat = Array2::zeros((n_pts, d));
    let mut b_hat = Array2::zeros((n_pts, d));
    for (p, row) in rows.into_iter().enumerate() {
        let (a, b) = row?;
        for k in 0..d {
            a_hat[(p, k)] = a[k];
            b_hat[(p, k)] = b[k];
        }
    }
    Ok(DriftDiffTable {
        x_points: x_points.to_owned(),
        a_hat,
        b_hat,
        mode,
        n_mc,
    })
}

/// Draws from the model's one-step conditional distribution at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSamples {
    pub x0: Vec<f64>,
    pub samples: Array2<f64>,
}

pub fn conditional_samples(
    model: &FmlModel,
    x: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<ConditionalSamples> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let d = model.dim;
    let nz = model.latent_dim;
    let mut rng = rng::stream_rng(seed, 0);
    let mut z = vec![0.0; nz];
    let mut y = vec![0.0; d];
    let mut ws = Vec::new();
    let mut samples = Array2::zeros((n_mc, d));
    for i in 0..n_mc {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        model.decode_into(x, &z, &mut y, &mut ws)?;
        for k in 0..d {
            samples[(i, k)] = y[k];
        }
    }
    Ok(ConditionalSamples {
        x0: x.to_vec(),
        samples,
    })
}

/// Population std of each column.
pub fn column_stds(samples: ArrayView2<'_, f64>) -> Vec<f64> {
    let (n, d) = (samples.nrows(), samples.ncols());
    let nf = n as f64;
    (0..d)
        .map(|k| {
            let col = samples.column(k);
            let mean = col.sum() / nf;
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf)
                .max(0.0)
                .sqrt()
        })
        .collect()
}

/// Flags coordinates whose conditional spread is too small to carry noise:
/// std below [`DETERMINISTIC_STD_FACTOR`] times `sqrt(dt)`.
pub fn deterministic_coordinates(samples: ArrayView2<'_, f64>, dt: f64) -> Vec<bool> {
    column_stds(samples)
        .into_iter()
        .map(|s| s < DETERMINISTIC_STD_FACTOR * dt.sqrt())
        .collect()
}

/// Standard normal CDF via the error function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// One-sample Kolmogorov-Smirnov statistic against N(0, 1).
pub fn ks_statistic(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "KS statistic needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "KS statistic over non-finite samples".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let phi = standard_normal_cdf(*x);
        let hi = (i as f64 + 1.0) / n - phi;
        let lo = phi - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// Gaussian-kernel density estimate of scalar samples on a grid.
pub fn empirical_pdf(samples: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be strictly positive, got {bandwidth}"
        )));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "grid must be strictly increasing".into(),
            ));
        }
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            let mut acc = 0.0;
            for &x in samples {
                let u = (g - x) / bandwidth;
                acc += (-0.5 * u * u).exp();
            }
            acc * norm
        })
        .collect())
}

/// Latent-recovery check on held-out transitions: simulate `n` fresh
/// one-step transitions of the true SDE from the fixed state `x0`, encode
/// each, and return one KS statistic per latent coordinate.
pub fn held_out_latent_ks(
    model: &FmlModel,
    spec: &SdeSpec,
    x0: &[f64],
    n: usize,
    dt: f64,
    seed: u64,
    ex: Exec,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "held-out check needs at least 2 transitions, got {n}"
        )));
    }
    if x0.len() != model.dim || spec.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            what: "held-out start state",
            expected: model.dim,
            got: x0.len().min(spec.dim()),
        });
    }
    let nz = model.latent_dim;
    let sampler = SdeSampler { spec, dt };
    let ranges = exec::chunk_ranges(n);
    let chunks: Vec<Result<Vec<f64>>> = exec::map_indexed(ex, ranges.len(), |c| {
        let r = &ranges[c];
        let mut out = vec![0.0; r.len() * nz];
        let mut x1 = vec![0.0; model.dim];
        let mut ws = Vec::new();
        let mut enc_ws = Vec::new();
        for (k, i) in r.clone().enumerate() {
            let mut rng = rng::stream_rng(seed, i as u64);
            sampler.step(x0, &mut rng, &mut x1, &mut ws)?;
            if x1.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepDiverged { value: f64::NAN });
            }
            model.encode_into(x0, &x1, &mut out[k * nz..(k + 1) * nz], &mut enc_ws)?;
        }
        Ok(out)
    });
    let mut z = Vec::with_capacity(n * nz);
    for c in chunks {
        z.extend_from_slice(&c?);
    }
    (0..nz)
        .map(|k| {
            let col: Vec<f64> = (0..n).map(|i| z[i * nz + k]).collect();
            ks_statistic(&col)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use ndarray::arr2;

    fn zero_model(d: usize, nz: usize) -> FmlModel {
        FmlModel::zeros(d, nz, &[4], 0.01).unwrap()
    }

    #[test]
    fn zero_model_rollout_is_constant() {
        let model = zero_model(2, 1);
        let stats =
            rollout_ensemble(&model, &[1.5, -0.5], 40, 20, 9, Exec::auto()).unwrap();
        assert_eq!(stats.n_samples, 40);
        assert_eq!(stats.n_excluded, 0);
        for s in 0..=20 {
            assert_eq!(stats.mean[(s, 0)], 1.5);
            assert_eq!(stats.mean[(s, 1)], -0.5);
            assert_eq!(stats.std[(s, 0)], 0.0);
            assert_eq!(stats.std[(s, 1)], 0.0);
        }
        assert!((stats.times[20] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_sample_has_zero_std() {
        let model = FmlModel::new(1, 1, &[5], 0.01, 3).unwrap();
        let stats = rollout_ensemble(&model, &[0.7], 1, 15, 4, Exec::auto()).unwrap();
        for s in 0..=15 {
            assert_eq!(stats.std[(s, 0)], 0.0);
        }
    }

    #[test]
    fn reference_matches_generic_machinery_exactly() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let a = reference_stats(&spec, &[1.5], 300, 50, 0.01, 77, Exec::auto()).unwrap();
        let b = ensemble_stats(
            &SdeSampler { spec: &spec, dt: 0.01 },
            &[1.5],
            300,
            50,
            77,
            Exec::auto(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_is_deterministic_across_exec_modes() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let s = reference_stats(&spec, &[1.0], 600, 30, 0.01, 5, Exec::Sequential).unwrap();
        let p = reference_stats(&spec, &[1.0], 600, 30, 0.01, 5, Exec::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn ou_reference_approaches_stationary_moments() {
        // theta = 1, mu = 1.2, sigma = 0.3: at T = 5 the mean is
        // mu + (x0 - mu) e^{-5} and the std is near sigma/sqrt(2 theta).
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let stats = reference_stats(&spec, &[1.5], 20_000, 500, 0.01, 11, Exec::auto()).unwrap();
        let last = stats.times.len() - 1;
        let want_mean = 1.2 + 0.3 * (-5.0f64).exp();
        let want_std = 0.3 / 2.0f64.sqrt();
        assert!((stats.mean[(last, 0)] - want_mean).abs() < 0.01);
        assert!((stats.std[(last, 0)] - want_std).abs() < 0.01);
    }

    #[test]
    fn zero_diffusion_reference_has_zero_std() {
        let spec = crate::sde::SdeSpec::new(
            "pure-drift",
            1,
            1,
            NoiseKind::Gaussian,
            std::sync::Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0]),
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
        )
        .unwrap();
        let stats = reference_stats(&spec, &[2.0], 50, 40, 0.01, 3, Exec::auto()).unwrap();
        // All members follow one deterministic path; the streaming moment
        // accumulator leaves a rounding floor well below any physical std.
        for s in 0..stats.times.len() {
            assert!(stats.std[(s, 0)] < 1e-6, "step {s}: {}", stats.std[(s, 0)]);
        }
    }

    #[test]
    fn paths_align_with_stats_and_mark_divergence() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let (stats, paths) =
            ensemble_paths(&SdeSampler { spec: &spec, dt: 0.01 }, &[1.5], 64, 25, 13, Exec::auto())
                .unwrap();
        assert_eq!(paths.shape(), &[64, 26, 1]);
        assert_eq!(stats.n_excluded, 0);
        // Recompute the step-10 mean from raw paths.
        let mut acc = 0.0;
        for i in 0..64 {
            acc += paths[(i, 10, 0)];
        }
        assert!((acc / 64.0 - stats.mean[(10, 0)]).abs() < 1e-12);
    }

    #[test]
    fn translation_equivariant_map_shifts_mean_and_keeps_std() {
        // With decode(x, z) = x + a dt + b sqrt(dt) z the whole path from
        // x0 + c is the path from x0 plus c (same member streams), so the
        // mean shifts by c and the std surface is unchanged.
        let dt = 0.01;
        let mut model = FmlModel::zeros(1, 1, &[], dt).unwrap();
        model.decoder.params = vec![0.0, 0.5 * dt.sqrt(), 2.0 * dt];
        let a = rollout_ensemble(&model, &[0.4], 300, 12, 21, Exec::auto()).unwrap();
        let b = rollout_ensemble(&model, &[3.4], 300, 12, 21, Exec::auto()).unwrap();
        for s in 0..=12 {
            assert!((b.mean[(s, 0)] - a.mean[(s, 0)] - 3.0).abs() < 1e-9);
            assert!((b.std[(s, 0)] - a.std[(s, 0)]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_model_recovery_is_zero() {
        let model = zero_model(1, 1);
        let grid = arr2(&[[0.5], [1.0], [1.5], [2.0]]);
        let table = recover_drift_diffusion(
            &model,
            grid.view(),
            128,
            RecoveryMode::Arithmetic,
            3,
            Exec::auto(),
        )
        .unwrap();
        for p in 0..4 {
            assert_eq!(table.a_hat[(p, 0)], 0.0);
            assert_eq!(table.b_hat[(p, 0)], 0.0);
        }
    }

    #[test]
    fn synthetic_affine_decoder_recovers_its_constants() {
        // decode(x, z) = x + a dt + b sqrt(dt) z with a = 2, b = 0.5:
        // a single linear decoder layer [1, b sqrt(dt)] and bias a dt.
        let dt = 0.01;
        let mut model = FmlModel::zeros(1, 1, &[], dt).unwrap();
        model.decoder.params = vec![0.0, 0.5 * dt.sqrt(), 2.0 * dt];
        let grid = arr2(&[[0.5], [1.0], [2.0]]);
        let n_mc = 20_000;
        let table = recover_drift_diffusion(
            &model,
            grid.view(),
            n_mc,
            RecoveryMode::Arithmetic,
            7,
            Exec::auto(),
        )
        .unwrap();
        // Monte-Carlo error bars: 3 sigma of the mean and std estimators.
        let se_mean = 0.5 / (n_mc as f64).sqrt() / dt.sqrt(); // Std[y]/sqrt(n)/dt scaled
        for p in 0..3 {
            assert!(
                (table.a_hat[(p, 0)] - 2.0).abs() < 3.0 * se_mean,
                "a_hat {}",
                table.a_hat[(p, 0)]
            );
            assert!(
                (table.b_hat[(p, 0)] - 0.5).abs() < 0.5 * 3.0 / (2.0 * n_mc as f64).sqrt() * 2.0,
                "b_hat {}",
                table.b_hat[(p, 0)]
            );
        }
    }

    #[test]
    fn geometric_mode_rejects_near_zero_grid_points() {
        let model = zero_model(1, 1);
        let grid = arr2(&[[1e-12]]);
        assert!(recover_drift_diffusion(
            &model,
            grid.view(),
            16,
            RecoveryMode::Geometric,
            1,
            Exec::auto()
        )
        .is_err());
    }

    #[test]
    fn non_increasing_grid_is_rejected() {
        let model = zero_model(1, 1);
        let grid = arr2(&[[1.0], [1.0]]);
        assert!(recover_drift_diffusion(
            &model,
            grid.view(),
            16,
            RecoveryMode::Arithmetic,
            1,
            Exec::auto()
        )
        .is_err());
    }

    #[test]
    fn zero_model_conditional_samples_collapse_to_x() {
        let model = zero_model(2, 1);
        let cond = conditional_samples(&model, &[0.3, -0.9], 50, 5).unwrap();
        for i in 0..50 {
            assert_eq!(cond.samples[(i, 0)], 0.3);
            assert_eq!(cond.samples[(i, 1)], -0.9);
        }
        let flags = deterministic_coordinates(cond.samples.view(), model.dt);
        assert_eq!(flags, vec![true, true]);
    }

    #[test]
    fn conditional_mean_tightens_with_more_draws() {
        // Monte-Carlo convergence: quadrupling draws roughly halves the
        // deviation of the sample mean from the many-draw limit.
        let dt = 0.01;
        let mut model = FmlModel::zeros(1, 1, &[], dt).unwrap();
        model.decoder.params = vec![0.0, 1.0, 0.0]; // y = x + z
        let big = conditional_samples(&model, &[0.0], 64_000, 9).unwrap();
        let small = conditional_samples(&model, &[0.0], 1_000, 9).unwrap();
        let mean = |c: &ConditionalSamples| c.samples.column(0).sum() / c.samples.nrows() as f64;
        assert!(mean(&big).abs() < 3.0 / (64_000f64).sqrt());
        assert!(mean(&small).abs() < 3.0 / (1_000f64).sqrt());
    }

    #[test]
    fn ks_of_constant_zero_samples_is_half() {
        let ks = ks_statistic(&[0.0; 16]).unwrap();
        assert!((ks - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_at_normal_quantiles_is_small() {
        // x_i = Phi^{-1}((i - 0.5)/n) makes the empirical CDF straddle the
        // theoretical one, leaving at most 0.5/n discrepancy.
        let n = 64;
        let quantile = |p: f64| -> f64 {
            // bisection on the CDF; plenty for test accuracy
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if standard_normal_cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let samples: Vec<f64> = (0..n)
            .map(|i| quantile((i as f64 + 0.5) / n as f64))
            .collect();
        let ks = ks_statistic(&samples).unwrap();
        assert!(ks <= 0.5 / n as f64 + 1e-9, "ks {ks}");
    }

    #[test]
    fn ks_is_permutation_invariant() {
        let a = [0.3, -1.2, 0.8, 2.0, -0.4];
        let b = [2.0, 0.8, -1.2, -0.4, 0.3];
        assert_eq!(ks_statistic(&a).unwrap(), ks_statistic(&b).unwrap());
    }

    #[test]
    fn gaussian_draws_have_small_ks() {
        let mut rng = rng::stream_rng(123, 0);
        let samples: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ks = ks_statistic(&samples).unwrap();
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn single_sample_pdf_is_the_kernel() {
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let pdf = empirical_pdf(&[0.0], &grid, 1.0).unwrap();
        for (g, p) in grid.iter().zip(&pdf) {
            let want = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_samples_give_even_pdf() {
        let grid: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        let pdf = empirical_pdf(&[-0.8, 0.8], &grid, 0.5).unwrap();
        let n = grid.len();
        for i in 0..n {
            assert!((pdf[i] - pdf[n - 1 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let mut rng = rng::stream_rng(5, 0);
        let samples: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = 0.3;
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
        let m = 2000;
        let grid: Vec<f64> = (0..=m)
            .map(|i| lo + (hi - lo) * i as f64 / m as f64)
            .collect();
        let pdf = empirical_pdf(&samples, &grid, h).unwrap();
        let mut integral = 0.0;
        for i in 0..m {
            integral += 0.5 * (pdf[i] + pdf[i + 1]) * (grid[i + 1] - grid[i]);
        }
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn held_out_ks_is_tiny_for_the_true_encoder_shape() {
        // A decoder y = x + z paired with an encoder recovering z = x1 - x0
        // reproduces exact unit Gaussians, so KS is at noise level.
        let dt = 0.01;
        let mut model = FmlModel::zeros(1, 1, &[], dt).unwrap();
        model.decoder.params = vec![0.0, 1.0, 0.0]; // unused by the check
        model.encoder.params = vec![-1.0, 1.0, 0.0]; // z = x1 - x0
        // True SDE with sigma = 1, drift 0 at dt = 1: x1 - x0 ~ N(0, 1).
        let spec = crate::sde::SdeSpec::new(
            "unit-noise",
            1,
            1,
            NoiseKind::Gaussian,
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 1.0),
        )
        .unwrap();
        let ks = held_out_latent_ks(&model, &spec, &[1.5], 4000, 1.0, 19, Exec::auto()).unwrap();
        assert_eq!(ks.len(), 1);
        assert!(ks[0] < 0.03, "ks {}", ks[0]);
    }

    #[test]
    fn exclusion_cap_triggers_a_hard_error() {
        // Explosive cubic drift: most paths blow up within 60 steps.
        let spec = crate::sde::SdeSpec::new(
            "explosive",
            1,
            1,
            NoiseKind::Gaussian,
            std::sync::Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * x[0]),
            std::sync::Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
        )
        .unwrap();
        match reference_stats(&spec, &[5.0], 32, 200, 0.5, 1, Exec::auto()) {
            Err(Error::TooManyExcluded { excluded, total, .. }) => {
                assert!(excluded > 0);
                assert_eq!(total, 32);
            }
            other => panic!("expected exclusion error, got {other:?}"),
        }
    }
}
