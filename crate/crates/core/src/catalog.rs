//! Benchmark SDE catalog.
//!
//! Parametric constructors for the benchmark families plus a name lookup
//! with each family at its reference parameters. Multi-dimensional linear
//! systems use `dx = B x dt + Sigma dW` with constant matrices.

use crate::error::{Error, Result};
use crate::sde::{NoiseKind, SdeSpec, StateFn};
use std::f64::consts::PI;
use std::sync::Arc;

fn scalar_spec(
    name: &str,
    kind: NoiseKind,
    drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
    diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<SdeSpec> {
    let d: Arc<StateFn> = Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = drift(x[0]));
    let s: Arc<StateFn> = Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = diffusion(x[0]));
    SdeSpec::new(name, 1, 1, kind, d, s)
}

/// Ornstein–Uhlenbeck: `dx = theta (mu - x) dt + sigma dW`.
pub fn ou1d(theta: f64, mu: f64, sigma: f64) -> Result<SdeSpec> {
    scalar_spec("ou1d", NoiseKind::Gaussian, move |x| theta * (mu - x), move |_| sigma)
}

/// Geometric Brownian motion: `dx = mu x dt + sigma x dW`.
pub fn gbm(mu: f64, sigma: f64) -> Result<SdeSpec> {
    scalar_spec("gbm", NoiseKind::Gaussian, move |x| mu * x, move |x| sigma * x)
}

/// Linear drift with exponentially decaying diffusion:
/// `dx = -mu x dt + sigma exp(-x^2) dW`.
pub fn expdiff(mu: f64, sigma: f64) -> Result<SdeSpec> {
    scalar_spec(
        "expdiff",
        NoiseKind::Gaussian,
        move |x| -mu * x,
        move |x| sigma * (-x * x).exp(),
    )
}

/// Trigonometric coefficients: `dx = sin(2 k pi x) dt + sigma cos(2 k pi x) dW`.
pub fn trig(k: u32, sigma: f64) -> Result<SdeSpec> {
    let w = 2.0 * f64::from(k) * PI;
    scalar_spec(
        "trig",
        NoiseKind::Gaussian,
        move |x| (w * x).sin(),
        move |x| sigma * (w * x).cos(),
    )
}

/// Double-well drift: `dx = (x - x^3) dt + sigma dW`.
pub fn doublewell(sigma: f64) -> Result<SdeSpec> {
    scalar_spec("doublewell", NoiseKind::Gaussian, |x| x - x * x * x, move |_| sigma)
}

/// Linear SDE driven by Exp(1) noise: `dx = mu x dt + sigma sqrt(dt) eta`.
pub fn expnoise(mu: f64, sigma: f64) -> Result<SdeSpec> {
    scalar_spec("expnoise", NoiseKind::Exponential, move |x| mu * x, move |_| sigma)
}

/// Multiplicative lognormal update with parameters `(m, theta, sigma)`.
pub fn lognormal(m: f64, theta: f64, sigma: f64) -> Result<SdeSpec> {
    SdeSpec::lognormal("lognormal", m, theta, sigma)
}

/// Linear system `dx = B x dt + Sigma dW`; `b` and `sigma` are row-major
/// `dim x dim` matrices.
pub fn linear_system(name: &str, dim: usize, b: &[f64], sigma: &[f64]) -> Result<SdeSpec> {
    if b.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            what: "drift matrix",
            expected: dim * dim,
            got: b.len(),
        });
    }
    if sigma.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            what: "diffusion matrix",
            expected: dim * dim,
            got: sigma.len(),
        });
    }
    let b = b.to_vec();
    let sigma = sigma.to_vec();
    let drift: Arc<StateFn> = Arc::new(move |x: &[f64], out: &mut [f64]| {
        for i in 0..x.len() {
            out[i] = (0..x.len()).map(|j| b[i * x.len() + j] * x[j]).sum();
        }
    });
    let diff: Arc<StateFn> = Arc::new(move |_: &[f64], out: &mut [f64]| {
        out.copy_from_slice(&sigma);
    });
    SdeSpec::new(name, dim, dim, NoiseKind::Gaussian, drift, diff)
}

/// Two-dimensional OU system at its reference parameters.
pub fn ou2d() -> Result<SdeSpec> {
    linear_system(
        "ou2d",
        2,
        &[-1.0, -0.5, -1.0, -1.0],
        &[1.0, 0.0, 0.0, 0.5],
    )
}

const OU5D_B: [f64; 25] = [
    0.2, 1.0, 0.2, 0.4, 0.2, //
    -1.0, 0.0, 0.2, 0.8, -1.0, //
    0.2, 0.2, -0.8, -1.2, 0.2, //
    -0.6, 0.0, 1.2, -0.2, 0.6, //
    0.2, 0.2, 0.6, 0.4, 0.0,
];

/// Diffusion matrix of the five-dimensional OU family; `rank` selects the
/// matrix of that rank (1 through 5).
pub fn ou5d_sigma(rank: usize) -> Result<[f64; 25]> {
    #[rustfmt::skip]
    let s: [f64; 25] = match rank {
        1 => [
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
        ],
        2 => [
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.8, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, -0.8,
        ],
        3 => [
            0.8, 0.2, 0.0, 0.0, 0.0,
            -0.4, 0.6, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.7, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
        ],
        4 => [
            0.7, 0.0, -0.4, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0,
            0.1, 0.0, 0.6, 0.2, -0.1,
            0.0, 0.0, 0.1, -0.6, 0.2,
            0.0, 0.0, 0.0, 0.3, 0.8,
        ],
        5 => [
            0.8, 0.2, 0.1, -0.3, 0.1,
            -0.3, 0.6, 0.1, 0.0, -0.1,
            0.2, -0.1, 0.9, 0.1, 0.2,
            0.1, 0.1, -0.2, 0.7, 0.0,
            -0.1, 0.1, 0.1, -0.1, 0.5,
        ],
        _ => {
            return Err(Error::InvalidArgument(format!(
                "ou5d diffusion rank must be 1..=5, got {rank}"
            )))
        }
    };
    Ok(s)
}

/// Five-dimensional OU system with the rank-`rank` diffusion matrix.
pub fn ou5d(rank: usize) -> Result<SdeSpec> {
    let sigma = ou5d_sigma(rank)?;
    linear_system(&format!("ou5d_k{rank}"), 5, &OU5D_B, &sigma)
}

/// All benchmark systems at their reference parameters.
pub fn benchmark_catalog() -> Vec<SdeSpec> {
    let e = std::f64::consts::E;
    vec![
        ou1d(1.0, 1.2, 0.3).unwrap(),
        gbm(2.0, 1.0).unwrap(),
        expdiff(5.0, 0.5).unwrap(),
        trig(1, 0.5).unwrap(),
        doublewell(0.5).unwrap(),
        expnoise(-2.0, 0.1).unwrap(),
        lognormal(1.0 / e.sqrt(), 1.0, 0.3).unwrap(),
        ou2d().unwrap(),
        ou5d(1).unwrap(),
        ou5d(2).unwrap(),
        ou5d(3).unwrap(),
        ou5d(4).unwrap(),
        ou5d(5).unwrap(),
    ]
}

/// Look up a catalog entry by name.
pub fn by_name(name: &str) -> Result<SdeSpec> {
    benchmark_catalog()
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| Error::UnknownSpec(name.to_string()))
}

/// Reference initial-state box for each catalog entry, `(low, high)`.
pub fn reference_init_box(name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    match name {
        "ou1d" => Ok((vec![0.0], vec![2.5])),
        "gbm" => Ok((vec![0.0], vec![2.0])),
        "expdiff" => Ok((vec![-1.0], vec![1.0])),
        "trig" => Ok((vec![0.35], vec![0.7])),
        "doublewell" => Ok((vec![-2.5], vec![2.5])),
        "expnoise" | "lognormal" => Ok((vec![0.2], vec![0.9])),
        "ou2d" => Ok((vec![-4.0, -3.0], vec![4.0, 3.0])),
        _ if name.starts_with("ou5d_k") => Ok((vec![-4.0; 5], vec![4.0; 5])),
        _ => Err(Error::UnknownSpec(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_all_entries_with_consistent_dims() {
        let cat = benchmark_catalog();
        assert_eq!(cat.len(), 13);
        for spec in &cat {
            assert!(spec.dim() >= 1);
            assert_eq!(by_name(spec.name()).unwrap(), *spec);
            let (lo, hi) = reference_init_box(spec.name()).unwrap();
            assert_eq!(lo.len(), spec.dim());
            assert_eq!(hi.len(), spec.dim());
        }
    }

    #[test]
    fn lookups_compare_equal() {
        assert_eq!(by_name("ou1d").unwrap(), by_name("ou1d").unwrap());
        assert_ne!(by_name("ou1d").unwrap(), by_name("gbm").unwrap());
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(matches!(by_name("nope"), Err(Error::UnknownSpec(_))));
    }

    #[test]
    fn ou2d_coefficients() {
        let spec = ou2d().unwrap();
        let drift = spec.drift(&[1.0, 2.0]).unwrap();
        assert_eq!(drift, vec![-1.0 - 1.0, -1.0 - 2.0]);
        let diff = spec.diffusion(&[0.0, 0.0]).unwrap();
        assert_eq!(diff, vec![1.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn trig_coefficients_at_zero() {
        let spec = trig(1, 0.5).unwrap();
        assert!(spec.drift(&[0.0]).unwrap()[0].abs() < 1e-15);
        assert!((spec.diffusion(&[0.0]).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    /// Row-reduction rank with a fixed pivot tolerance.
    fn rank(mut m: Vec<f64>, n: usize) -> usize {
        let mut rank = 0;
        for col in 0..n {
            let pivot = (rank..n).max_by(|&a, &b| {
                m[a * n + col].abs().partial_cmp(&m[b * n + col].abs()).unwrap()
            });
            let Some(p) = pivot else { break };
            if m[p * n + col].abs() < 1e-10 {
                continue;
            }
            for c in 0..n {
                m.swap(rank * n + c, p * n + c);
            }
            for r in 0..n {
                if r != rank {
                    let f = m[r * n + col] / m[rank * n + col];
                    for c in 0..n {
                        m[r * n + c] -= f * m[rank * n + c];
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn ou5d_diffusion_ranks_match_their_index() {
        for k in 1..=5 {
            let s = ou5d_sigma(k).unwrap();
            assert_eq!(rank(s.to_vec(), 5), k, "sigma_{k}");
        }
    }
}
