//! Subcommand implementations. Every output lands under the run directory
//! unless a path is given explicitly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};

use activecam_core::controllers::{
    BaselineController, CnnController, Controller, OracleController, StaticController,
    SyntheticDetector,
};
use activecam_core::datagen::{self, Dataset};
use activecam_core::metrics::{self, StillImageErrors, TraceMetrics};
use activecam_core::nn::{self, Graph, NetParams, TrainData};
use activecam_core::output_filter::WmaState;
use activecam_core::sequences::{load_sequence, save_sequence, synth_sequence};
use activecam_core::simulator::{run_episode, CameraState, CropSink, EpisodeTrace};
use activecam_core::{seed, RgbImage, Sequence, Window};

use crate::config::{ControllerKind, RunConfig, SeedOffset, StartWindow};

pub const SEQUENCES_DIR: &str = "sequences";
pub const DATASET_DIR: &str = "dataset";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_REPORT: &str = "train_report.kv";
pub const STILL_REPORT: &str = "still_report";
pub const SEQ_REPORT: &str = "seq_report";
pub const TRACES_DIR: &str = "traces";
pub const RUN_TRACE: &str = "run_trace.csv";
pub const RUN_REPORT: &str = "run_report";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Subdirectories of `run/sequences`, sorted by name.
pub fn default_sequences(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.run_dir.join(SEQUENCES_DIR);
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no sequences in {}; run `synth` first or pass --sequence", dir.display());
    }
    Ok(out)
}

fn resolve_sequences(cfg: &RunConfig, given: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if given.is_empty() {
        default_sequences(cfg)
    } else {
        Ok(given.to_vec())
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Sequence>> {
    paths
        .iter()
        .map(|p| load_sequence(p).with_context(|| format!("loading sequence {}", p.display())))
        .collect()
}

/// `synth`: write `synth.count` sequences; returns their directories.
pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let root = out.map_or_else(|| cfg.run_dir.join(SEQUENCES_DIR), Path::to_path_buf);
    let base = cfg.module_seed(SeedOffset::Synth);
    let mut dirs = Vec::new();
    for i in 0..cfg.synth_count {
        let mut sc = cfg.synth.clone();
        let s = if cfg.synth_count == 1 {
            base
        } else {
            sc.name = format!("{}_{i}", sc.name);
            seed::derive(base, &[i as u64])
        };
        let seq = synth_sequence(&sc, s)?;
        let dir = root.join(&seq.name);
        save_sequence(&seq, &dir)?;
        info!("wrote {} frames to {}", seq.len(), dir.display());
        dirs.push(dir);
    }
    Ok(dirs)
}

/// `gen-data`: `datagen.samples` crops spread evenly over the sequences,
/// the first ones taking the remainder.
pub fn gen_data(cfg: &RunConfig, sequences: &[PathBuf], out: Option<&Path>) -> Result<PathBuf> {
    let paths = resolve_sequences(cfg, sequences)?;
    let seqs = load_all(&paths)?;
    let n = seqs.len();
    let base = cfg.module_seed(SeedOffset::Datagen);
    let mut ds = Dataset {
        samples: Vec::new(),
        crop_w: cfg.crop_w,
        crop_h: cfg.crop_h,
    };
    for (i, seq) in seqs.iter().enumerate() {
        let k = cfg.samples / n + usize::from(i < cfg.samples % n);
        let part = datagen::generate_samples(seq, k, cfg.crop_w, cfg.crop_h, seed::derive(base, &[i as u64]))?;
        ds.extend(part)?;
    }
    let dir = out.map_or_else(|| cfg.run_dir.join(DATASET_DIR), Path::to_path_buf);
    datagen::save_dataset(&ds, &dir)?;
    info!("wrote {} samples to {}", ds.len(), dir.display());
    Ok(dir)
}

/// Fresh network for the configured scale and input size.
pub fn build_network(cfg: &RunConfig) -> Result<(Graph, NetParams)> {
    Ok(nn::build_c3net(
        cfg.input_w as usize,
        cfg.input_h as usize,
        cfg.scale,
        cfg.module_seed(SeedOffset::Init),
    )?)
}

pub fn load_network(cfg: &RunConfig, weights: &Path) -> Result<(Graph, NetParams)> {
    let (graph, _) = build_network(cfg)?;
    let params = nn::load_weights(weights).with_context(|| format!("loading {}", weights.display()))?;
    graph
        .check_params(&params)
        .with_context(|| format!("{} does not fit the configured network", weights.display()))?;
    Ok((graph, params))
}

#[derive(Debug)]
pub struct TrainSummary {
    pub weights: PathBuf,
    pub initial_val_loss: f32,
    pub best_val_loss: f32,
    pub best_epoch: usize,
}

/// `train`: split the dataset, train, write weights, history and summary.
pub fn train(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    sequences: &[PathBuf],
    weights_out: Option<&Path>,
) -> Result<TrainSummary> {
    let ds_dir = dataset.map_or_else(|| cfg.run_dir.join(DATASET_DIR), Path::to_path_buf);
    let ds = datagen::load_dataset(&ds_dir).with_context(|| format!("loading dataset {}", ds_dir.display()))?;
    // Source frames let augmentation re-crop shifted windows; without them
    // translation is skipped.
    let sources = if sequences.is_empty() {
        match default_sequences(cfg) {
            Ok(p) => load_all(&p)?,
            Err(_) => {
                warn!("no source sequences found; translation augmentation disabled");
                Vec::new()
            }
        }
    } else {
        load_all(sequences)?
    };
    let (train_ds, val_ds) = datagen::split_dataset(ds, cfg.train_fraction, cfg.module_seed(SeedOffset::Split))?;
    info!("training on {} samples, validating on {}", train_ds.len(), val_ds.len());
    let (graph, params) = build_network(cfg)?;
    let tc = cfg.train_config();
    let outcome = nn::train(
        &graph,
        params,
        TrainData {
            train: &train_ds,
            val: &val_ds,
            sources: &sources,
        },
        &tc,
    )?;
    let weights = weights_out.map_or_else(|| cfg.run_dir.join(WEIGHTS_FILE), Path::to_path_buf);
    if let Some(parent) = weights.parent() {
        create_dir(parent)?;
    }
    nn::save_weights(&outcome.params, &weights)?;
    write(&cfg.run_dir.join(HISTORY_FILE), &outcome.history_csv())?;
    let best = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch)
        .map_or(outcome.initial_val_loss, |h| h.val_loss);
    write(
        &cfg.run_dir.join(TRAIN_REPORT),
        &format!(
            "train_samples = {}\nval_samples = {}\ninitial_val_loss = {:.6}\nbest_val_loss = {:.6}\nbest_epoch = {}\nbalance_waived = {}\n",
            train_ds.len(),
            val_ds.len(),
            outcome.initial_val_loss,
            best,
            outcome.best_epoch,
            outcome.balance_waived
        ),
    )?;
    Ok(TrainSummary {
        weights,
        initial_val_loss: outcome.initial_val_loss,
        best_val_loss: best,
        best_epoch: outcome.best_epoch,
    })
}

/// A controller ready for an episode, and the filter `run_episode` should
/// apply to it.
pub fn make_controller(
    cfg: &RunConfig,
    kind: ControllerKind,
    network: Option<&(Graph, NetParams)>,
    closed_loop: bool,
) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Static => Box::new(StaticController),
        ControllerKind::Oracle => Box::new(OracleController),
        ControllerKind::Baseline => {
            let mut tracker = cfg.tracker;
            if !closed_loop {
                // A single image can confirm nothing under min_hits > 1.
                tracker.min_hits = 1;
            }
            let det = SyntheticDetector::new(cfg.detector, cfg.module_seed(SeedOffset::Detector));
            Box::new(BaselineController::new(det, tracker))
        }
        ControllerKind::Cnn => {
            let (g, p) = network.context("the cnn controller needs --weights or a trained run")?;
            let filter = (closed_loop && cfg.filter_cnn).then(|| WmaState::new(cfg.filter_k));
            Box::new(CnnController::new(g.clone(), p.clone(), filter)?)
        }
    })
}

fn network_for(cfg: &RunConfig, kinds: &[ControllerKind], weights: Option<&Path>) -> Result<Option<(Graph, NetParams)>> {
    if !kinds.contains(&ControllerKind::Cnn) {
        return Ok(None);
    }
    let path = weights.map_or_else(|| cfg.run_dir.join(WEIGHTS_FILE), Path::to_path_buf);
    Ok(Some(load_network(cfg, &path)?))
}

/// `eval-still`: per-axis errors of each controller on a dataset.
pub fn eval_still(
    cfg: &RunConfig,
    dataset: Option<&Path>,
    sequences: &[PathBuf],
    weights: Option<&Path>,
) -> Result<Vec<(ControllerKind, StillImageErrors)>> {
    let ds_dir = dataset.map_or_else(|| cfg.run_dir.join(DATASET_DIR), Path::to_path_buf);
    let ds = datagen::load_dataset(&ds_dir).with_context(|| format!("loading dataset {}", ds_dir.display()))?;
    let sources = load_all(&resolve_sequences(cfg, sequences)?)?;
    let net = network_for(cfg, &cfg.controllers, weights)?;
    let mut rows = Vec::new();
    for &kind in &cfg.controllers {
        let mut c = make_controller(cfg, kind, net.as_ref(), false)?;
        let e = metrics::still_image_errors(c.as_mut(), &ds, &sources)
            .with_context(|| format!("evaluating {}", kind.name()))?;
        rows.push((kind, e));
    }
    let named: Vec<(&str, StillImageErrors)> = rows.iter().map(|(k, e)| (k.name(), *e)).collect();
    let kv: String = rows
        .iter()
        .flat_map(|(k, e)| e.to_kv().lines().map(|l| format!("{}.{l}\n", k.name())).collect::<Vec<_>>())
        .collect();
    write(&cfg.run_dir.join(format!("{STILL_REPORT}.txt")), &metrics::still_table(&named))?;
    write(&cfg.run_dir.join(format!("{STILL_REPORT}.kv")), &kv)?;
    Ok(rows)
}

pub fn start_state(cfg: &RunConfig, seq: &Sequence) -> Result<CameraState> {
    let (w, h) = (cfg.crop_w as f64, cfg.crop_h as f64);
    Ok(match cfg.start {
        StartWindow::Targets => CameraState::centered_on_targets(seq, w, h)?,
        StartWindow::At(x, y) => CameraState::start(seq, Window::new(x, y, w, h)?)?,
    })
}

fn episode(
    cfg: &RunConfig,
    seq: &Sequence,
    kind: ControllerKind,
    net: Option<&(Graph, NetParams)>,
    sink: Option<&mut CropSink<'_>>,
) -> Result<(EpisodeTrace, TraceMetrics)> {
    let mut c = make_controller(cfg, kind, net, true)?;
    let trace = run_episode(seq, c.as_mut(), start_state(cfg, seq)?, None, sink)
        .with_context(|| format!("{} on {}", kind.name(), seq.name))?;
    let m = metrics::evaluate_trace(&trace, seq)?;
    Ok((trace, m))
}

#[derive(Debug)]
pub struct SeqResult {
    pub sequence: String,
    pub controller: ControllerKind,
    pub metrics: TraceMetrics,
}

/// `eval-seq`: closed-loop episodes for every controller on every sequence.
pub fn eval_seq(cfg: &RunConfig, sequences: &[PathBuf], weights: Option<&Path>) -> Result<Vec<SeqResult>> {
    let seqs = load_all(&resolve_sequences(cfg, sequences)?)?;
    let net = network_for(cfg, &cfg.controllers, weights)?;
    let mut results = Vec::new();
    let mut table = String::new();
    let mut kv = String::new();
    let traces = cfg.run_dir.join(TRACES_DIR);
    for seq in &seqs {
        let mut rows = Vec::new();
        for &kind in &cfg.controllers {
            let (trace, m) = episode(cfg, seq, kind, net.as_ref(), None)?;
            write(
                &traces.join(format!("{}_{}.csv", seq.name, kind.name())),
                &trace.to_csv(),
            )?;
            for l in m.to_kv().lines() {
                kv.push_str(&format!("{}.{}.{l}\n", seq.name, kind.name()));
            }
            rows.push((kind.name(), m));
            results.push(SeqResult {
                sequence: seq.name.clone(),
                controller: kind,
                metrics: m,
            });
        }
        table.push_str(&format!("sequence {} ({} frames)\n", seq.name, seq.len()));
        table.push_str(&metrics::trace_table(&rows));
        table.push('\n');
    }
    write(&cfg.run_dir.join(format!("{SEQ_REPORT}.txt")), &table)?;
    write(&cfg.run_dir.join(format!("{SEQ_REPORT}.kv")), &kv)?;
    Ok(results)
}

/// `run`: one episode of one controller, optionally dumping every crop.
pub fn run(
    cfg: &RunConfig,
    kind: ControllerKind,
    sequence: &Path,
    weights: Option<&Path>,
    dump_crops: Option<&Path>,
) -> Result<TraceMetrics> {
    let seq = load_sequence(sequence).with_context(|| format!("loading sequence {}", sequence.display()))?;
    let net = network_for(cfg, &[kind], weights)?;
    let (trace, m) = match dump_crops {
        Some(dir) => {
            create_dir(dir)?;
            let mut sink = |i: usize, crop: &RgbImage| -> activecam_core::Result<()> {
                let path = dir.join(format!("crop_{i:06}.png"));
                crop.save(&path).map_err(|e| activecam_core::Error::Image { path, source: e })
            };
            episode(cfg, &seq, kind, net.as_ref(), Some(&mut sink))?
        }
        None => episode(cfg, &seq, kind, net.as_ref(), None)?,
    };
    write(&cfg.run_dir.join(RUN_TRACE), &trace.to_csv())?;
    write(
        &cfg.run_dir.join(format!("{RUN_REPORT}.txt")),
        &metrics::trace_table(&[(kind.name(), m)]),
    )?;
    write(&cfg.run_dir.join(format!("{RUN_REPORT}.kv")), &m.to_kv())?;
    Ok(m)
}
