//! Independent oracles shared by the integration suites: adaptive quadrature
//! for the KDE distance, analytic Ornstein-Uhlenbeck moments, and a brute
//! force neighbor search.

use ndarray::ArrayView2;
use std::f64::consts::PI;

/// Adaptive Simpson quadrature with Richardson acceptance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(f, a, fa, m, fm, flm);
        let right = simpson(f, m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
            + rec(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = simpson(f, a, fa, b, fb, fm);
    rec(f, a, fa, b, fb, fm, whole, tol, 48)
}

fn normal_pdf_iso(s: &[f64], center: &[f64], var: f64) -> f64 {
    let d = s.len() as f64;
    let q: f64 = s
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (2.0 * PI * var).powf(-d / 2.0) * (-q / (2.0 * var)).exp()
}

/// Squared integrand of the KDE-to-standard-normal L2 distance at `s`.
fn kde_integrand(z: &ArrayView2<'_, f64>, h: f64, s: &[f64]) -> f64 {
    let n = z.nrows() as f64;
    let mut kde = 0.0;
    for i in 0..z.nrows() {
        let c: Vec<f64> = z.row(i).to_vec();
        kde += normal_pdf_iso(s, &c, h * h);
    }
    kde /= n;
    let target = normal_pdf_iso(s, &vec![0.0; s.len()], 1.0);
    let d = kde - target;
    d * d
}

/// L2 distance between the batch KDE and the standard normal, by nested
/// adaptive quadrature over a box that holds all kernel and target mass.
pub fn kde_l2_distance_quadrature(z: ArrayView2<'_, f64>, h: f64) -> f64 {
    let nz = z.ncols();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in z.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let pad = 9.0 * h.max(1.0);
    let (a, b) = (lo - pad, hi + pad);
    let sq = match nz {
        1 => adaptive_simpson(&|s| kde_integrand(&z, h, &[s]), a, b, 1e-13),
        2 => adaptive_simpson(
            &|s1| adaptive_simpson(&|s2| kde_integrand(&z, h, &[s1, s2]), a, b, 1e-14),
            a,
            b,
            1e-12,
        ),
        other => panic!("quadrature oracle supports 1 or 2 latent dims, got {other}"),
    };
    sq.max(0.0).sqrt()
}

/// Mean of an OU process `dx = theta (mu - x) dt + sigma dW` at time `t`.
pub fn ou_mean(t: f64, x0: f64, theta: f64, mu: f64) -> f64 {
    mu + (x0 - mu) * (-theta * t).exp()
}

/// Standard deviation of the same OU process at time `t`.
pub fn ou_std(t: f64, theta: f64, sigma: f64) -> f64 {
    (sigma * sigma / (2.0 * theta) * (1.0 - (-2.0 * theta * t).exp())).sqrt()
}

/// Indices of the `k` nearest rows of `x0` to `query`, by exhaustive scan.
pub fn brute_force_knn(x0: ArrayView2<'_, f64>, query: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..x0.nrows())
        .map(|i| {
            let d: f64 = x0
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dist.truncate(k);
    dist.into_iter().map(|(_, i)| i).collect()
}
