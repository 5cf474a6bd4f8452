use image::RgbImage;

use crate::datagen::{self, AugmentConfig, BalancedBatches, Dataset};
use crate::error::{Error, Result};
use crate::geometry::ControlVector;
use crate::raster;
use crate::seed;
use crate::sequences::Sequence;

use super::adam::{adam_step, AdamState};
use super::graph::{backward, forward, Graph, Mode, NetParams};
use super::loss::euclidean_loss;
use super::tensor::Tensor;

/// A validation loss must drop by at least this much to count as progress.
pub const MIN_IMPROVEMENT: f32 = 1e-4;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub decay_factor: f32,
    /// Epochs without validation progress before the learning rate decays.
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub near_zero_tau: f64,
    pub max_near_zero_frac: f64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            decay_factor: 0.5,
            plateau_patience: 10,
            batch_size: 128,
            batches_per_epoch: 50,
            epochs: 300,
            seed: 0,
            near_zero_tau: 0.1,
            max_near_zero_frac: 0.5,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} must lie in (0, 1)",
                self.decay_factor
            )));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config("batch size and batches per epoch must be positive".into()));
        }
        self.augment.validate()
    }
}

/// Training and validation sets, plus the sequences they were cut from so
/// translations can re-crop.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub sources: &'a [Sequence],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_loss: f32,
    /// Learning rate used during this epoch.
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen, the untrained ones
    /// included.
    pub params: NetParams,
    /// One entry per epoch. Entry 0 holds the losses of the untrained
    /// parameters on the unaugmented training and validation sets.
    pub history: Vec<EpochStats>,
    /// Validation loss of the parameters before the first update.
    pub initial_val_loss: f32,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
    /// The near-zero cap could not be enforced on this training set.
    pub balance_waived: bool,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for h in &self.history {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6e}\n",
                h.epoch, h.train_loss, h.val_loss, h.lr
            ));
        }
        out
    }
}

/// Stack images into a `[N, 3, h, w]` tensor with values in `[0, 1]`,
/// resizing any image of a different size.
pub fn images_to_tensor(images: &[&RgbImage], w: u32, h: u32) -> Tensor {
    let mut data = Vec::with_capacity(images.len() * 3 * (w * h) as usize);
    for img in images {
        if img.width() == w && img.height() == h {
            raster::push_chw(img, &mut data);
        } else {
            raster::push_chw(&raster::fit(img, w, h), &mut data);
        }
    }
    Tensor::from_vec(&[images.len(), 3, h as usize, w as usize], data).expect("stacked image shape")
}

fn input_size(graph: &Graph) -> (u32, u32) {
    (graph.input.2 as u32, graph.input.1 as u32)
}

/// Network predictions for every sample, in infer mode.
pub fn predict_dataset(graph: &Graph, params: &NetParams, ds: &Dataset) -> Result<Vec<ControlVector>> {
    let (w, h) = input_size(graph);
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.samples.chunks(EVAL_CHUNK) {
        let imgs: Vec<&RgbImage> = chunk.iter().map(|s| &s.image).collect();
        let pass = forward(graph, params, &images_to_tensor(&imgs, w, h), Mode::infer())?;
        out.extend(pass.controls());
    }
    Ok(out)
}

/// Mean Euclidean loss over a whole dataset in infer mode.
pub fn evaluate_loss(graph: &Graph, params: &NetParams, ds: &Dataset) -> Result<f32> {
    if ds.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let (w, h) = input_size(graph);
    let mut total = 0.0f64;
    for chunk in ds.samples.chunks(EVAL_CHUNK) {
        let imgs: Vec<&RgbImage> = chunk.iter().map(|s| &s.image).collect();
        let labels: Vec<ControlVector> = chunk.iter().map(|s| s.label).collect();
        let pass = forward(graph, params, &images_to_tensor(&imgs, w, h), Mode::infer())?;
        total += euclidean_loss(pass.output(), &labels)? as f64 * chunk.len() as f64;
    }
    Ok((total / ds.len() as f64) as f32)
}

const SEED_BATCHES: u64 = 1;
const SEED_AUGMENT: u64 = 2;
const SEED_DROPOUT: u64 = 3;

/// Minibatch Adam on balanced, augmented batches with validation after each
/// epoch and step decay of the learning rate on plateaus.
pub fn train(graph: &Graph, params: NetParams, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    graph.check_params(&params)?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Domain("training and validation sets must be non-empty".into()));
    }
    let initial_val_loss = evaluate_loss(graph, &params, data.val)?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(EpochStats {
        epoch: 0,
        train_loss: evaluate_loss(graph, &params, data.train)?,
        val_loss: initial_val_loss,
        lr: cfg.lr,
    });
    let mut outcome = TrainOutcome {
        params: params.clone(),
        history,
        initial_val_loss,
        best_epoch: 0,
        balance_waived: false,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }

    let labels = data.train.labels();
    let mut batches = BalancedBatches::new(
        &labels,
        cfg.batch_size,
        cfg.near_zero_tau,
        cfg.max_near_zero_frac,
        seed::derive(cfg.seed, &[SEED_BATCHES]),
    )?;
    outcome.balance_waived = batches.waived();

    let (w, h) = input_size(graph);
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut lr = cfg.lr;
    let mut best_val = initial_val_loss;
    let mut plateau_ref = initial_val_loss;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        for step in 0..cfg.batches_per_epoch {
            let idx = batches.next_batch();
            let mut samples = Vec::with_capacity(idx.len());
            for (k, &i) in idx.iter().enumerate() {
                let s = &data.train.samples[i];
                let src = datagen::source_frame(data.sources, &s.meta);
                let aug_seed = seed::derive(cfg.seed, &[SEED_AUGMENT, epoch as u64, step as u64, k as u64]);
                samples.push(datagen::augment_sample(s, src, &cfg.augment, aug_seed)?);
            }
            let imgs: Vec<&RgbImage> = samples.iter().map(|s| &s.image).collect();
            let truth: Vec<ControlVector> = samples.iter().map(|s| s.label).collect();
            let x = images_to_tensor(&imgs, w, h);
            let mode = Mode::train(seed::derive(cfg.seed, &[SEED_DROPOUT, epoch as u64, step as u64]));
            let pass = forward(graph, &params, &x, mode)?;
            let (loss, grads) = backward(graph, &params, &pass, &truth)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {step}"
                )));
            }
            let stats = pass.running_stat_updates(graph, &params);
            adam_step(&mut params, &grads, &mut adam, lr)?;
            params.apply_running_stats(&stats);
            if !params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch}, batch {step}"
                )));
            }
            loss_sum += loss as f64;
        }
        let val_loss = evaluate_loss(graph, &params, data.val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let train_loss = (loss_sum / cfg.batches_per_epoch as f64) as f32;
        outcome.history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");

        if val_loss < best_val {
            best_val = val_loss;
            outcome.best_epoch = epoch;
            outcome.params = params.clone();
        }
        if val_loss <= plateau_ref - MIN_IMPROVEMENT {
            plateau_ref = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= cfg.decay_factor;
                stale = 0;
                log::info!("validation plateau; learning rate now {lr:.2e}");
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::{build_c3net, Scale};
    use crate::sequences::{synth_sequence, SynthConfig};

    fn tiny_data() -> (Sequence, Dataset, Dataset) {
        let seq = synth_sequence(
            &SynthConfig {
                frames: 20,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let ds = datagen::generate_samples(&seq, 24, 64, 48, 2).unwrap();
        let (tr, va) = datagen::split_dataset(ds, 0.5, 3).unwrap();
        (seq, tr, va)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (seq, tr, va) = tiny_data();
        let (g, p) = build_c3net(64, 48, Scale::Tiny, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: &tr,
            val: &va,
            sources: std::slice::from_ref(&seq),
        };
        let out = train(&g, p.clone(), data, &cfg).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].val_loss, out.initial_val_loss);
    }

    #[test]
    fn short_run_is_deterministic_and_logged() {
        let (seq, tr, va) = tiny_data();
        let (g, p) = build_c3net(64, 48, Scale::Tiny, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            batches_per_epoch: 3,
            plateau_patience: 1,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: &tr,
            val: &va,
            sources: std::slice::from_ref(&seq),
        };
        let a = train(&g, p.clone(), data, &cfg).unwrap();
        let b = train(&g, p, data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 3);
        assert!(a.history_csv().starts_with("epoch,train_loss,val_loss,lr\n0,"));
        let best = a
            .history
            .iter()
            .map(|h| h.val_loss)
            .fold(a.initial_val_loss, f32::min);
        assert_eq!(evaluate_loss(&g, &a.params, &va).unwrap(), best);
    }

    #[test]
    fn plateau_decays_learning_rate() {
        let (seq, tr, va) = tiny_data();
        let (g, p) = build_c3net(64, 48, Scale::Tiny, 0).unwrap();
        // Weight updates this small barely move the loss; only the
        // batchnorm running statistics change it.
        let cfg = TrainConfig {
            lr: 1e-9,
            epochs: 6,
            batch_size: 2,
            batches_per_epoch: 1,
            plateau_patience: 2,
            ..TrainConfig::default()
        };
        let data = TrainData {
            train: &tr,
            val: &va,
            sources: std::slice::from_ref(&seq),
        };
        let out = train(&g, p, data, &cfg).unwrap();
        // Replay the schedule from the logged validation losses.
        let (mut lr, mut reference, mut stale) = (cfg.lr, out.initial_val_loss, 0);
        let mut decays = 0;
        for h in &out.history[1..] {
            assert_eq!(h.lr, lr, "epoch {}", h.epoch);
            if h.val_loss <= reference - MIN_IMPROVEMENT {
                reference = h.val_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.plateau_patience {
                    lr *= cfg.decay_factor;
                    stale = 0;
                    decays += 1;
                }
            }
        }
        assert!(decays >= 1, "{:?}", out.history);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let (seq, tr, _) = tiny_data();
        let (g, p) = build_c3net(64, 48, Scale::Tiny, 0).unwrap();
        let empty = Dataset::default();
        let data = TrainData {
            train: &tr,
            val: &empty,
            sources: std::slice::from_ref(&seq),
        };
        assert!(train(&g, p, data, &TrainConfig::default()).is_err());
    }
}
