//! Itô diffusions and their Euler–Maruyama discretization.
//!
//! A [`SdeSpec`] describes a time-homogeneous SDE
//! `dx = b(x) dt + sigma(x) dW` with state dimension `d` and `m` driving
//! noise channels. One step of the explicit scheme is
//!
//! ```text
//! x' = x + b(x) dt + sigma(x) * w,   w = sqrt(dt) * eta
//! ```
//!
//! where `eta` is a vector of unit draws of the spec's noise kind. The
//! caller owns the `sqrt(dt)` scaling; [`simulate_trajectories`] applies it
//! when it samples. The `Lognormal` kind replaces the additive scheme with
//! the multiplicative update `x' = m^dt * x^(1 - theta*dt) * eta^(sigma*sqrt(dt))`.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::rng;
use ndarray::{Array3, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal, StandardNormal};
use std::fmt;
use std::sync::Arc;

/// Distribution of the per-step unit noise vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// `eta ~ N(0, I)`; the step consumes `sqrt(dt) * eta`.
    Gaussian,
    /// `eta ~ Exp(1)`; the step consumes `sqrt(dt) * eta`.
    Exponential,
    /// `eta ~ Lognormal(0, 1)`, used multiplicatively (unscaled).
    Lognormal,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::Gaussian => write!(f, "gaussian"),
            NoiseKind::Exponential => write!(f, "exponential"),
            NoiseKind::Lognormal => write!(f, "lognormal"),
        }
    }
}

/// Parameters of the multiplicative lognormal update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalMap {
    pub m: f64,
    pub theta: f64,
    pub sigma: f64,
}

/// Writes `f(x)` into a caller-provided buffer.
pub type StateFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Immutable description of an SDE: dimensions, coefficient functions and
/// the noise kind. Cloning is cheap (coefficients are shared).
#[derive(Clone)]
pub struct SdeSpec {
    name: String,
    dim: usize,
    noise_dim: usize,
    noise_kind: NoiseKind,
    drift: Arc<StateFn>,
    diffusion: Arc<StateFn>,
    lognormal: Option<LognormalMap>,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("noise_kind", &self.noise_kind)
            .field("lognormal", &self.lognormal)
            .finish()
    }
}

/// Specs compare by name, dimensions, noise kind and lognormal parameters;
/// coefficient closures are assumed to be determined by the name.
impl PartialEq for SdeSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dim == other.dim
            && self.noise_dim == other.noise_dim
            && self.noise_kind == other.noise_kind
            && self.lognormal == other.lognormal
    }
}

impl SdeSpec {
    /// Build a spec with additive (Gaussian or exponential) noise.
    ///
    /// `drift` maps a state of length `dim` to a drift vector of length
    /// `dim`; `diffusion` fills a row-major `dim x noise_dim` matrix.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        noise_kind: NoiseKind,
        drift: Arc<StateFn>,
        diffusion: Arc<StateFn>,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::InvalidArgument(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if noise_kind == NoiseKind::Lognormal {
            return Err(Error::InvalidArgument(
                "lognormal specs must be built with SdeSpec::lognormal".into(),
            ));
        }
        Ok(SdeSpec {
            name: name.into(),
            dim,
            noise_dim,
            noise_kind,
            drift,
            diffusion,
            lognormal: None,
        })
    }

    /// Build a scalar spec with the multiplicative lognormal update.
    ///
    /// The stored drift/diffusion are the Itô-equivalent coefficients of
    /// `d ln x = (ln m - theta ln x) dt + sigma dW`; the simulator itself
    /// dispatches on the noise kind and applies the exact update.
    pub fn lognormal(name: impl Into<String>, m: f64, theta: f64, sigma: f64) -> Result<Self> {
        if !(m > 0.0) || !sigma.is_finite() || !theta.is_finite() {
            return Err(Error::InvalidArgument(
                "lognormal map requires m > 0 and finite theta, sigma".into(),
            ));
        }
        let drift = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * (m.ln() - theta * x[0].ln() + 0.5 * sigma * sigma);
        });
        let diffusion = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = sigma * x[0];
        });
        Ok(SdeSpec {
            name: name.into(),
            dim: 1,
            noise_dim: 1,
            noise_kind: NoiseKind::Lognormal,
            drift,
            diffusion,
            lognormal: Some(LognormalMap { m, theta, sigma }),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }

    pub fn lognormal_map(&self) -> Option<LognormalMap> {
        self.lognormal
    }

    /// Evaluate the drift into `out` (length `dim`).
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state(x)?;
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "drift output",
                expected: self.dim,
                got: out.len(),
            });
        }
        (self.drift)(x, out);
        Ok(())
    }

    /// Evaluate the diffusion matrix into `out` (row-major `dim x noise_dim`).
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state(x)?;
        if out.len() != self.dim * self.noise_dim {
            return Err(Error::DimensionMismatch {
                what: "diffusion output",
                expected: self.dim * self.noise_dim,
                got: out.len(),
            });
        }
        (self.diffusion)(x, out);
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out)?;
        Ok(out)
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(x, &mut out)?;
        Ok(out)
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Draw `n` unit noise values of the given kind (no `sqrt(dt)` scaling).
pub fn sample_noise(kind: NoiseKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    sample_noise_into(kind, rng, &mut out);
    out
}

pub(crate) fn sample_noise_into(kind: NoiseKind, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    match kind {
        NoiseKind::Gaussian => {
            for v in out.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        }
        NoiseKind::Exponential => {
            for v in out.iter_mut() {
                *v = Exp1.sample(rng);
            }
        }
        NoiseKind::Lognormal => {
            // Unit lognormal: exp of a standard normal.
            let d = LogNormal::new(0.0, 1.0).expect("valid lognormal");
            for v in out.iter_mut() {
                *v = d.sample(rng);
            }
        }
    }
}

/// Advance one step of the explicit scheme.
///
/// `noise` must already carry the scaling the scheme expects: `sqrt(dt) * eta`
/// for the additive kinds, the raw unit lognormal draw for `Lognormal`.
pub fn euler_maruyama_step(spec: &SdeSpec, x: &[f64], dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: spec.dim(),
            got: x.len(),
        });
    }
    if noise.len() != spec.noise_dim() {
        return Err(Error::DimensionMismatch {
            what: "noise",
            expected: spec.noise_dim(),
            got: noise.len(),
        });
    }

    let mut out = vec![0.0; spec.dim()];
    match spec.noise_kind() {
        NoiseKind::Lognormal => {
            let map = spec
                .lognormal_map()
                .expect("lognormal spec carries its map parameters");
            let eta = noise[0];
            out[0] = map.m.powf(dt) * x[0].powf(1.0 - map.theta * dt) * eta.powf(map.sigma * dt.sqrt());
        }
        NoiseKind::Gaussian | NoiseKind::Exponential => {
            let d = spec.dim();
            let m = spec.noise_dim();
            let mut drift = vec![0.0; d];
            let mut diff = vec![0.0; d * m];
            (spec.drift)(x, &mut drift);
            (spec.diffusion)(x, &mut diff);
            for i in 0..d {
                let mut acc = x[i] + drift[i] * dt;
                for j in 0..m {
                    acc += diff[i * m + j] * noise[j];
                }
                out[i] = acc;
            }
        }
    }

    if let Some(&bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::StepDiverged { value: bad });
    }
    Ok(out)
}

/// A bundle of equally long trajectories on a fixed time grid.
///
/// `states` has shape `(n_traj, len + 1, dim)`; row `[i, n, :]` is the state
/// of trajectory `i` after `n` steps of size `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub states: Array3<f64>,
    pub dt: f64,
    pub seed: u64,
}

impl TrajectoryDataset {
    pub fn n_traj(&self) -> usize {
        self.states.shape()[0]
    }

    /// Number of steps per trajectory (states per trajectory minus one).
    pub fn len(&self) -> usize {
        self.states.shape()[1] - 1
    }

    pub fn is_empty(&self) -> bool {
        self.n_traj() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn state(&self, traj: usize, step: usize) -> ArrayView1<'_, f64> {
        self.states.slice(ndarray::s![traj, step, ..])
    }
}

/// Simulate `n_traj` independent trajectories of `len` steps.
///
/// Initial states are uniform on the box `[init_low, init_high]` (one
/// coordinate per dimension). Trajectory `i` consumes stream `i` of the
/// seeded generator, so the dataset is bit-reproducible for a given seed
/// regardless of scheduling; resimulating with the same arguments yields an
/// identical dataset.
#[allow(clippy::too_many_arguments)]
pub fn simulate_trajectories(
    spec: &SdeSpec,
    init_low: &[f64],
    init_high: &[f64],
    n_traj: usize,
    len: usize,
    dt: f64,
    seed: u64,
    ex: Exec,
) -> Result<TrajectoryDataset> {
    let d = spec.dim();
    if init_low.len() != d {
        return Err(Error::DimensionMismatch {
            what: "init_low",
            expected: d,
            got: init_low.len(),
        });
    }
    if init_high.len() != d {
        return Err(Error::DimensionMismatch {
            what: "init_high",
            expected: d,
            got: init_high.len(),
        });
    }
    if init_low.iter().zip(init_high).any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidArgument(
            "init box must satisfy low <= high in every dimension".into(),
        ));
    }
    if n_traj == 0 || len == 0 {
        return Err(Error::InvalidArgument(
            "n_traj and len must be positive".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }

    let m = spec.noise_dim();
    let kind = spec.noise_kind();
    let sqrt_dt = dt.sqrt();

    let rows: Vec<Vec<f64>> = exec::try_map_indexed(ex, n_traj, |i| -> Result<Vec<f64>> {
        let mut rng = rng::stream_rng(seed, i as u64);
        let mut row = vec![0.0; (len + 1) * d];
        for k in 0..d {
            let u: f64 = rng.gen();
            row[k] = init_low[k] + (init_high[k] - init_low[k]) * u;
        }
        let mut eta = vec![0.0; m];
        for n in 0..len {
            sample_noise_into(kind, &mut rng, &mut eta);
            if kind != NoiseKind::Lognormal {
                for v in eta.iter_mut() {
                    *v *= sqrt_dt;
                }
            }
            let x = &row[n * d..(n + 1) * d];
            let next = euler_maruyama_step(spec, x, dt, &eta).map_err(|e| match e {
                Error::StepDiverged { value } => Error::TrajectoryDiverged {
                    trajectory: i,
                    step: n,
                    value,
                },
                other => other,
            })?;
            row[(n + 1) * d..(n + 2) * d].copy_from_slice(&next);
        }
        Ok(row)
    })?;

    let mut states = Array3::zeros((n_traj, len + 1, d));
    for (i, row) in rows.into_iter().enumerate() {
        states
            .slice_mut(ndarray::s![i, .., ..])
            .as_slice_mut()
            .expect("contiguous slice")
            .copy_from_slice(&row);
    }
    Ok(TrajectoryDataset { states, dt, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn ou_step_matches_hand_computation() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let next = euler_maruyama_step(&spec, &[0.0], 0.01, &[0.0]).unwrap();
        assert!((next[0] - 0.012).abs() < 1e-15);
    }

    #[test]
    fn gbm_step_matches_hand_computation() {
        let spec = catalog::gbm(2.0, 1.0).unwrap();
        let next = euler_maruyama_step(&spec, &[0.5], 0.01, &[0.1]).unwrap();
        assert!((next[0] - 0.56).abs() < 1e-15);
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        assert!(matches!(
            euler_maruyama_step(&spec, &[0.0, 1.0], 0.01, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            euler_maruyama_step(&spec, &[0.0], 0.01, &[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn step_flags_non_finite_states() {
        let spec = catalog::gbm(2.0, 1.0).unwrap();
        let err = euler_maruyama_step(&spec, &[f64::MAX], 1.0, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::StepDiverged { .. }));
    }

    #[test]
    fn lognormal_step_is_multiplicative() {
        let spec = catalog::lognormal(1.0 / std::f64::consts::E.sqrt(), 1.0, 0.3).unwrap();
        let map = spec.lognormal_map().unwrap();
        let (x, dt, eta) = (0.4, 0.01, 1.7);
        let got = euler_maruyama_step(&spec, &[x], dt, &[eta]).unwrap()[0];
        let want = map.m.powf(dt) * x.powf(1.0 - map.theta * dt) * eta.powf(map.sigma * dt.sqrt());
        assert_eq!(got.to_bits(), want.to_bits());
    }

    #[test]
    fn simulation_is_reproducible_and_scheduling_independent() {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let a = simulate_trajectories(&spec, &[0.0], &[2.5], 16, 20, 0.01, 9, Exec::Sequential)
            .unwrap();
        let b = simulate_trajectories(&spec, &[0.0], &[2.5], 16, 20, 0.01, 9, Exec::Parallel)
            .unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectories(&spec, &[0.0], &[2.5], 16, 20, 0.01, 9, Exec::auto())
            .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn initial_states_fall_in_the_box() {
        let spec = catalog::ou2d().unwrap();
        let ds = simulate_trajectories(
            &spec,
            &[-4.0, -3.0],
            &[4.0, 3.0],
            64,
            2,
            0.01,
            1,
            Exec::auto(),
        )
        .unwrap();
        for i in 0..ds.n_traj() {
            let x0 = ds.state(i, 0);
            assert!(x0[0] >= -4.0 && x0[0] <= 4.0);
            assert!(x0[1] >= -3.0 && x0[1] <= 3.0);
        }
    }

    #[test]
    fn divergence_reports_trajectory_and_step() {
        // Explosive cubic drift with a huge time step blows up quickly.
        let spec = SdeSpec::new(
            "explosive",
            1,
            1,
            NoiseKind::Gaussian,
            Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * x[0]),
            Arc::new(|_: &[f64], out: &mut [f64]| out[0] = 0.0),
        )
        .unwrap();
        let err =
            simulate_trajectories(&spec, &[5.0], &[6.0], 2, 200, 10.0, 3, Exec::auto()).unwrap_err();
        assert!(matches!(err, Error::TrajectoryDiverged { .. }));
    }
}
