//! Desk-scale OU pilot: loss floors, full recovery table, per-slice encoder
//! statistics. Dev diagnostic, not part of the shipped surface.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sfml_core::catalog;
use sfml_core::dataset::build_pairs;
use sfml_core::evaluation::{held_out_latent_ks, recover_drift_diffusion, RecoveryMode};
use sfml_core::losses::{kde_l2_distance, moment_loss_1d, LossWeights};
use sfml_core::rng::{domain, mix_seed};
use sfml_core::sde::simulate_trajectories;
use sfml_core::training::{train, TrainConfig};
use sfml_core::Exec;
use std::time::Instant;

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let lambda: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let tau: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let lr: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let bw: Option<f64> = std::env::args().nth(5).and_then(|s| s.parse().ok());
    let seed: u64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let hidden: Vec<usize> = std::env::args()
        .nth(7)
        .map(|s| s.split(',').map(|w| w.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![20, 20, 20]);
    let ex = Exec::auto();

    // Loss floors: what the batch losses evaluate to on ideal N(0,1) samples,
    // and their sensitivity to mean shift / scale error.
    let n = 2000;
    let h = bw.unwrap_or_else(|| LossWeights::silverman_bandwidth(n, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let base: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    println!("floors at N={n}, h={h:.4}:");
    for (delta, scale) in [
        (0.0, 1.0),
        (0.027, 1.0),
        (0.1, 1.0),
        (0.3, 1.0),
        (0.0, 0.976),
        (0.0, 0.9),
    ] {
        let z: Vec<f64> = base.iter().map(|v| v * scale + delta).collect();
        let za = Array2::from_shape_vec((n, 1), z.clone()).unwrap();
        let kde = kde_l2_distance(za.view(), h, ex).unwrap();
        let mom = moment_loss_1d(&z).unwrap();
        println!("  shift {delta:+.3} scale {scale:.3}: kde {kde:.5}  mom {mom:.4}");
    }

    let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
    let t0 = Instant::now();
    let ds = simulate_trajectories(
        &spec,
        &[0.0],
        &[2.5],
        2000,
        100,
        0.01,
        mix_seed(seed, domain::DATA, 0),
        ex,
    )
    .unwrap();
    let store = build_pairs(&ds).unwrap();
    println!("data: {} pairs in {:.2?}", store.len(), t0.elapsed());

    let mut cfg = TrainConfig::desk(1, seed);
    cfg.epochs = epochs;
    cfg.deterministic = false;
    cfg.weights.lambda = lambda;
    cfg.weights.tau = tau;
    cfg.lr = lr;
    cfg.lr_min = lr / 100.0;
    cfg.hidden = hidden.clone();
    if let Some(b) = bw {
        cfg.auto_bandwidth = false;
        cfg.weights.bandwidth = b;
    }
    let t1 = Instant::now();
    let (model, hist) = train(&store, &cfg, ex).unwrap();
    let total = t1.elapsed();
    for r in hist.records.iter().rev().take(3).rev() {
        println!(
            "epoch {:3}  mse {:.6e}  kde {:.4e}  mom {:.4e}  total {:.4e}  {:.2}s",
            r.epoch, r.mse, r.kde, r.moment, r.total, r.seconds
        );
    }
    println!(
        "train: {:.2?} total, {:.2?}/epoch (lambda {lambda}, tau {tau}, lr {lr}, h {h:.4}, hidden {hidden:?})",
        total,
        total / epochs as u32
    );
    sfml_core::io::save_checkpoint("/tmp/pilot_ckpt.bin", &model, "pilot").unwrap();

    // Full recovery table plus per-slice data density and encoder statistics.
    let grid = Array2::from_shape_fn((16, 1), |(i, _)| 0.5 + 1.5 * i as f64 / 15.0);
    let table =
        recover_drift_diffusion(&model, grid.view(), 10_000, RecoveryMode::Arithmetic, seed, ex)
            .unwrap();
    let x0s = store.x0();
    let x1s = store.x1();
    println!("   x      a_err     b_err   pairs/0.05  enc_mean  enc_std");
    let mut max_a = 0.0f64;
    let mut max_b = 0.0f64;
    for p in 0..16 {
        let x = grid[(p, 0)];
        let a_err = table.a_hat[(p, 0)] - (1.2 - x);
        let b_err = table.b_hat[(p, 0)] - 0.3;
        max_a = max_a.max(a_err.abs());
        max_b = max_b.max(b_err.abs());
        let mut zs = Vec::new();
        for i in 0..store.len() {
            if (x0s[(i, 0)] - x).abs() <= 0.05 {
                let z = model
                    .encode(&[x0s[(i, 0)]], &[x1s[(i, 0)]])
                    .unwrap();
                zs.push(z[0]);
            }
        }
        let m = zs.iter().sum::<f64>() / zs.len().max(1) as f64;
        let v = zs.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / zs.len().max(1) as f64;
        println!(
            "  {x:.2}  {a_err:+.4}  {b_err:+.4}   {:6}     {m:+.4}   {:.4}",
            zs.len(),
            v.sqrt()
        );
    }
    println!("max|a_err| = {max_a:.4}, max|b_err| = {max_b:.4}");

    for x0 in [0.6, 1.5, 1.9] {
        let ks = held_out_latent_ks(
            &model,
            &spec,
            &[x0],
            10_000,
            0.01,
            mix_seed(seed, domain::HELD_OUT, 0),
            ex,
        )
        .unwrap();
        println!("held-out KS at x0={x0}: {:.4}", ks[0]);
    }
}
