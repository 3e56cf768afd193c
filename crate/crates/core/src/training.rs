//! Epoch loop: fresh batch plan per epoch, one Adam step per batch, loss
//! history tracking, plus the latent-dimension sweep.

use crate::dataset::{self, PairStore};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io;
use crate::losses::LossWeights;
use crate::neural::{self, batch_gradients, AdamState, FmlModel};
use crate::rng::{self, domain};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Loss above which training halts with a divergence report.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// MSE-drop factor separating "noise dimension explains more variance" from
/// the plateau in the latent sweep.
pub const DEFAULT_DROP_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batches drawn per epoch.
    pub n_batches: usize,
    /// Pairs per batch (anchor plus nearest neighbors).
    pub batch_size: usize,
    pub weights: LossWeights,
    /// When set, `weights.bandwidth` is replaced by the Silverman default
    /// `batch_size^(-1/(latent_dim+4))` at training time.
    pub auto_bandwidth: bool,
    pub lr: f64,
    /// Final learning rate of the cosine schedule. The rate anneals from
    /// `lr` to `lr_min` across the epochs; setting `lr_min = lr` keeps it
    /// constant. Annealing bounds the late-training random walk of the
    /// latent distribution, which otherwise drifts while the reconstruction
    /// term stays converged.
    pub lr_min: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Zeroes wall-clock fields in persisted reports so repeated runs are
    /// byte-identical. Loss values are bit-reproducible either way.
    pub deterministic: bool,
}

impl TrainConfig {
    /// Desk-scale defaults for a store of around 200k pairs.
    pub fn desk(latent_dim: usize, seed: u64) -> Self {
        TrainConfig {
            epochs: 200,
            n_batches: 100,
            batch_size: 2000,
            weights: LossWeights {
                lambda: 1.0,
                tau: 1.0,
                nu: 0.1,
                bandwidth: 1.0,
                squared_distance: false,
            },
            auto_bandwidth: true,
            lr: 1e-3,
            lr_min: 1e-5,
            seed,
            latent_dim,
            hidden: neural::DEFAULT_HIDDEN.to_vec(),
            deterministic: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("n_batches", self.n_batches),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 2 (moment statistics degenerate)".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be strictly positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_min > 0.0) || !self.lr_min.is_finite() || self.lr_min > self.lr {
            return Err(Error::InvalidArgument(format!(
                "lr_min must satisfy 0 < lr_min <= lr, got lr_min {} with lr {}",
                self.lr_min, self.lr
            )));
        }
        self.weights.validate()
    }

    /// Learning rate for an epoch under the cosine schedule.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr;
        }
        let phase = std::f64::consts::PI * epoch as f64 / (self.epochs - 1) as f64;
        self.lr_min + (self.lr - self.lr_min) * 0.5 * (1.0 + phase.cos())
    }

    /// Weights actually used by the loop, with the bandwidth resolved.
    pub fn resolved_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.auto_bandwidth {
            w.bandwidth = LossWeights::silverman_bandwidth(self.batch_size, self.latent_dim);
        }
        w
    }

    /// Hex SHA-256 of the canonical JSON encoding; ties checkpoints to the
    /// configuration that produced them.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        io::sha256_hex(json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch means over batches.
    pub mse: f64,
    pub kde: f64,
    pub moment: f64,
    pub total: f64,
    /// Wall time of the epoch; 0 when the deterministic flag is set.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Hex SHA-256 of the final parameter vector (little-endian bytes).
    pub final_checksum: String,
}

impl TrainHistory {
    pub fn final_mse(&self) -> f64 {
        self.records.last().map(|r| r.mse).unwrap_or(f64::NAN)
    }
}

/// Train a fresh model on the store.
///
/// Per epoch: a new batch plan from the epoch-derived seed, then one Adam
/// step per batch in plan order. With a fixed seed the result is
/// bit-reproducible regardless of the execution mode.
pub fn train(store: &PairStore, cfg: &TrainConfig, ex: Exec) -> Result<(FmlModel, TrainHistory)> {
    cfg.validate()?;
    let weights = cfg.resolved_weights();
    let mut model = FmlModel::new(store.dim(), cfg.latent_dim, &cfg.hidden, store.dt(), cfg.seed)?;
    let mut adam_enc = AdamState::new(model.encoder.params.len());
    let mut adam_dec = AdamState::new(model.decoder.params.len());

    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let epoch_seed = rng::mix_seed(cfg.seed, domain::EPOCH, epoch as u64);
        let plan = dataset::resample_batches(store, cfg.n_batches, cfg.batch_size, epoch_seed, ex)?;

        let lr = cfg.epoch_lr(epoch);
        let (mut mse, mut kde, mut moment, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (batch_idx, members) in plan.batches.iter().enumerate() {
            let (x0, x1) = store.gather(members);
            let grads = batch_gradients(&model, x0.view(), x1.view(), &weights, ex).map_err(
                |e| match e {
                    Error::NonFiniteLoss(loss) => Error::TrainingDiverged {
                        epoch,
                        batch: batch_idx,
                        loss,
                    },
                    other => other,
                },
            )?;
            if grads.loss.total > DIVERGENCE_LIMIT {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    loss: grads.loss.total,
                });
            }
            adam_enc.step(
                &mut model.encoder.params,
                &grads.encoder,
                lr,
                neural::ADAM_BETAS,
                neural::ADAM_EPS,
            )?;
            adam_dec.step(
                &mut model.decoder.params,
                &grads.decoder,
                lr,
                neural::ADAM_BETAS,
                neural::ADAM_EPS,
            )?;
            mse += grads.loss.mse;
            kde += grads.loss.kde;
            moment += grads.loss.moment;
            total += grads.loss.total;
        }

        let nb = cfg.n_batches as f64;
        records.push(EpochRecord {
            epoch,
            mse: mse / nb,
            kde: kde / nb,
            moment: moment / nb,
            total: total / nb,
            seconds: if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        });
    }

    let checksum = io::sha256_hex(&io::params_le_bytes(&model));
    Ok((
        model,
        TrainHistory {
            records,
            final_checksum: checksum,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nz: usize,
    /// Final-epoch mean MSE of the model trained at this latent dimension.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Smallest latent dimension on the MSE plateau.
    pub detected_dim: usize,
    pub drop_ratio: f64,
    /// No MSE drop of at least `drop_ratio` anywhere in the sweep; the data
    /// is explained as well by one latent dimension as by any tested number.
    pub no_drop_observed: bool,
}

/// Train one model per latent dimension `1..=max_nz` under otherwise
/// identical configuration, then locate the MSE plateau.
///
/// `detected_dim` is the smallest dimension whose MSE is within
/// `drop_ratio` of every higher-dimensional result.
pub fn sweep_latent_dim(
    store: &PairStore,
    base_cfg: &TrainConfig,
    max_nz: usize,
    drop_ratio: f64,
    ex: Exec,
) -> Result<SweepReport> {
    if max_nz == 0 {
        return Err(Error::InvalidArgument("max_nz must be at least 1".into()));
    }
    if !(drop_ratio > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "drop_ratio must exceed 1, got {drop_ratio}"
        )));
    }
    let mut rows = Vec::with_capacity(max_nz);
    for nz in 1..=max_nz {
        let mut cfg = base_cfg.clone();
        cfg.latent_dim = nz;
        let (_, history) = train(store, &cfg, ex)?;
        rows.push(SweepRow {
            nz,
            mse: history.final_mse(),
        });
    }
    Ok(report_from_rows(rows, drop_ratio))
}

/// Plateau detection on already-measured sweep rows.
pub fn report_from_rows(rows: Vec<SweepRow>, drop_ratio: f64) -> SweepReport {
    let n = rows.len();
    let plateau = |i: usize| -> bool {
        (i + 1..n).all(|j| rows[i].mse / rows[j].mse < drop_ratio)
    };
    let detected_dim = (0..n).find(|&i| plateau(i)).map(|i| rows[i].nz).unwrap_or(1);
    let no_drop_observed = (0..n).all(|i| plateau(i));
    SweepReport {
        rows,
        detected_dim,
        drop_ratio,
        no_drop_observed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::dataset::build_pairs;
    use crate::sde::simulate_trajectories;

    fn tiny_store() -> PairStore {
        let spec = catalog::ou1d(1.0, 1.2, 0.3).unwrap();
        let ds = simulate_trajectories(&spec, &[0.5], &[2.0], 4, 8, 0.01, 11, Exec::auto()).unwrap();
        build_pairs(&ds).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            n_batches: 1,
            batch_size: 16,
            weights: LossWeights::new(1.0, 1.0, 0.5).unwrap(),
            auto_bandwidth: true,
            lr: 1e-3,
            lr_min: 1e-3,
            seed: 3,
            latent_dim: 1,
            hidden: vec![6, 6],
            deterministic: true,
        }
    }

    #[test]
    fn smoke_run_yields_one_record_per_epoch() {
        let store = tiny_store();
        let mut cfg = tiny_cfg();
        cfg.epochs = 3;
        let (model, history) = train(&store, &cfg, Exec::auto()).unwrap();
        assert_eq!(history.records.len(), 3);
        for (i, r) in history.records.iter().enumerate() {
            assert_eq!(r.epoch, i);
            assert!(r.total.is_finite());
            assert_eq!(r.seconds, 0.0);
        }
        assert_eq!(model.latent_dim, 1);
        assert_eq!(history.final_checksum.len(), 64);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let store = tiny_store();
        let mut cfg = tiny_cfg();
        cfg.epochs = 2;
        let (m1, h1) = train(&store, &cfg, Exec::Sequential).unwrap();
        let (m2, h2) = train(&store, &cfg, Exec::Parallel).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn optimizer_steps_equal_epochs_times_batches() {
        let store = tiny_store();
        let mut cfg = tiny_cfg();
        cfg.epochs = 2;
        cfg.n_batches = 3;
        // The Adam step count is internal; assert indirectly through the
        // loop contract: training succeeds and produces 2 records whose
        // batch means stay finite with 3 batches each.
        let (_, h) = train(&store, &cfg, Exec::auto()).unwrap();
        assert_eq!(h.records.len(), 2);
    }

    #[test]
    fn epochs_use_distinct_plans() {
        let store = tiny_store();
        let a = rng::mix_seed(5, domain::EPOCH, 0);
        let b = rng::mix_seed(5, domain::EPOCH, 1);
        let pa = dataset::resample_batches(&store, 2, 8, a, Exec::auto()).unwrap();
        let pb = dataset::resample_batches(&store, 2, 8, b, Exec::auto()).unwrap();
        assert_ne!(pa.anchors, pb.anchors);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let store = tiny_store();
        let mut cfg = tiny_cfg();
        cfg.batch_size = store.len() + 1;
        assert!(train(&store, &cfg, Exec::auto()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg();
        cfg.weights.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = tiny_cfg();
        let mut b = tiny_cfg();
        assert_eq!(a.config_hash(), b.config_hash());
        b.lr = 2e-3;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn plateau_detection_matches_drop_rule() {
        let rows = |mses: &[f64]| -> Vec<SweepRow> {
            mses.iter()
                .enumerate()
                .map(|(i, &mse)| SweepRow { nz: i + 1, mse })
                .collect()
        };
        // Large drop from 1 to 2, plateau after.
        let r = report_from_rows(rows(&[1.1e-3, 6.4e-7, 5.9e-7]), 10.0);
        assert_eq!(r.detected_dim, 2);
        assert!(!r.no_drop_observed);
        // Flat everywhere.
        let r = report_from_rows(rows(&[2e-6, 1.8e-6, 2.1e-6]), 10.0);
        assert_eq!(r.detected_dim, 1);
        assert!(r.no_drop_observed);
        // Drop at the last dimension.
        let r = report_from_rows(rows(&[1e-3, 9e-4, 1e-5]), 10.0);
        assert_eq!(r.detected_dim, 3);
        assert!(!r.no_drop_observed);
    }

    #[test]
    fn sweep_produces_contiguous_rows() {
        let store = tiny_store();
        let cfg = tiny_cfg();
        let report = sweep_latent_dim(&store, &cfg, 2, 10.0, Exec::auto()).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].nz, 1);
        assert_eq!(report.rows[1].nz, 2);
        assert!(report.detected_dim >= 1);
    }

    #[test]
    fn resolved_weights_apply_silverman_default() {
        let cfg = tiny_cfg();
        let w = cfg.resolved_weights();
        let want = LossWeights::silverman_bandwidth(cfg.batch_size, cfg.latent_dim);
        assert_eq!(w.bandwidth, want);
        let mut fixed = cfg;
        fixed.auto_bandwidth = false;
        assert_eq!(fixed.resolved_weights().bandwidth, 0.5);
    }
}
