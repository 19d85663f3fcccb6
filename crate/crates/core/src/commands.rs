//! Implementations behind the `leanstereo` subcommands.
//!
//! Each command takes a resolved [`RunConfig`] plus its paths and writes its
//! artifacts; the binary only parses arguments and maps errors to exit codes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::ImageBatch;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::io::read_rgb;
use crate::data::{
    generate_synthetic_pair, read_kitti_disparity, read_pfm_disparity, sample_seed,
    write_pfm_disparity, write_synthetic_dataset, Dataset, DatasetKind, DatasetSpec, Split,
    StereoSample,
};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, predict_sample, EvalOutcome};
use crate::head::Mode;
use crate::losses::validity_mask;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::LeanStereo;
use crate::profiler::{
    benchmark_inference, resolve_device, BenchmarkResult, ConstantLatencyStub, InferenceTarget,
    ProfileReport, DEVICE_ENV,
};
use crate::tensor::Tensor;
use crate::train::{BatchSampler, Trainer};
use crate::viz;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Flag over environment over config file; the winner is written back.
pub fn apply_device(cfg: &mut RunConfig, flag: Option<&str>) -> Result<()> {
    let name = flag
        .map(str::to_string)
        .or_else(|| std::env::var(DEVICE_ENV).ok())
        .unwrap_or_else(|| cfg.device.clone());
    resolve_device(Some(&name))?;
    cfg.device = name;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// The configured dataset split. A synthetic config without a root yields
/// `data.synth.count` pairs generated in memory from the run seed.
pub fn open_dataset(cfg: &RunConfig, split: Split, max_disparity: f32) -> Result<Dataset> {
    match (&cfg.data.root, cfg.data.kind) {
        (Some(root), kind) => {
            let spec = DatasetSpec {
                root: root.clone(),
                split,
                kind,
                crop: cfg.train.crop,
            };
            spec.validate()?;
            Dataset::open(&spec, max_disparity)
        }
        (None, DatasetKind::Synthetic) => {
            let samples = (0..cfg.data.synth_count)
                .map(|i| generate_synthetic_pair(sample_seed(cfg.seed, i), &cfg.data.synth))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset::in_memory(samples, max_disparity))
        }
        (None, kind) => Err(Error::Dataset(format!(
            "no dataset root given for {} data",
            kind
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    /// `(iteration, pooled report)` for every validation pass.
    pub validations: Vec<(usize, MetricsReport)>,
    pub best_epe: Option<f64>,
}

/// Train from `cfg`, optionally resuming from `resume`, writing
/// `resolved_config.txt`, `loss_curve.csv`, `last.ckpt` and `best.ckpt`.
pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    create_dir(out)?;
    write_text(&out.join("resolved_config.txt"), &cfg.to_text())?;
    let max_disp = cfg.model.cost_volume.max_disparity as f32;
    let train_set = open_dataset(cfg, Split::Train, max_disp)?;
    let val_set = match cfg.data.root {
        Some(_) => match open_dataset(cfg, Split::Val, max_disp) {
            Ok(v) => Some(v),
            Err(Error::Dataset(msg)) => {
                log::warn!(
                    "no validation split ({}); validating on the training set",
                    msg
                );
                None
            }
            Err(e) => return Err(e),
        },
        None => None,
    };
    let val_set = val_set.as_ref().unwrap_or(&train_set);

    let model = LeanStereo::new(&cfg.model, cfg.seed)?;
    let mut trainer = Trainer::new(
        model,
        cfg.optim.clone(),
        cfg.train.schedule(),
        cfg.loss.clone(),
    )?;
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path)?;
        trainer.iteration = ckpt.iteration as usize;
        ckpt.load_into(&mut trainer.model)?;
        log::info!(
            "resumed from {} at iteration {}",
            path.display(),
            trainer.iteration
        );
    }
    let mut sampler = BatchSampler::new(
        train_set.len(),
        cfg.train.crop,
        cfg.train.batch_size,
        sample_seed(cfg.seed, usize::MAX),
    );

    let curve_path = out.join("loss_curve.csv");
    let mut curve = fs::File::create(&curve_path)
        .map_err(|e| Error::io(format!("creating {}", curve_path.display()), e))?;
    let io_err = |e| Error::io(format!("writing {}", curve_path.display()), e);
    writeln!(curve, "iteration,lr,loss,val_epe").map_err(io_err)?;

    let total = cfg.train.iterations;
    let mut summary = TrainSummary {
        losses: Vec::new(),
        validations: Vec::new(),
        best_epe: None,
    };
    while trainer.iteration < total {
        let it = trainer.iteration;
        let lr = trainer.schedule.lr_at(it);
        let batch = sampler.next_batch(&train_set)?;
        let loss = trainer.step(&batch)?;
        summary.losses.push(loss);
        let done = trainer.iteration;
        let validate =
            done == total || (cfg.train.val_every > 0 && done % cfg.train.val_every == 0);
        let mut val_epe = String::new();
        if validate {
            let report = evaluate(&trainer.model, val_set)?.pooled;
            log::info!(
                "iteration {} loss {:.4} val EPE {:.3} 3px {:.2}%",
                done,
                loss,
                report.epe,
                report.px3
            );
            val_epe = format!("{}", report.epe);
            if summary.best_epe.is_none_or(|b| report.epe < b) {
                summary.best_epe = Some(report.epe);
                Checkpoint::from_model(&trainer.model, done as u64).save(out.join("best.ckpt"))?;
            }
            summary.validations.push((done, report));
        } else {
            log::debug!("iteration {} loss {:.4}", done, loss);
        }
        writeln!(curve, "{},{},{},{}", done, lr, loss, val_epe).map_err(io_err)?;
    }
    Checkpoint::from_model(&trainer.model, trainer.iteration as u64).save(out.join("last.ckpt"))?;
    if summary.best_epe.is_none() {
        fs::copy(out.join("last.ckpt"), out.join("best.ckpt"))
            .map_err(|e| Error::io("copying last.ckpt to best.ckpt", e))?;
    }
    Ok(summary)
}

/// Pooled metrics of `checkpoint` on one split; writes `metrics.txt` when
/// `out` is given.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    split: Split,
    out: Option<&Path>,
) -> Result<EvalOutcome> {
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    let ds = open_dataset(cfg, split, model.max_disparity() as f32)?;
    let outcome = evaluate(&model, &ds)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut text = outcome.pooled.to_table();
        text.push('\n');
        text.push_str(&outcome.pooled.to_records());
        for (i, r) in outcome.per_sample.iter().enumerate() {
            match r {
                Some(r) => text.push_str(&format!(
                    "sample={} {}\n",
                    i,
                    r.row().split_whitespace().collect::<Vec<_>>().join(" ")
                )),
                None => text.push_str(&format!("sample={} no-valid-pixels\n", i)),
            }
        }
        write_text(&dir.join("metrics.txt"), &text)?;
    }
    Ok(outcome)
}

fn read_gt(path: &Path) -> Result<(Tensor, Vec<bool>)> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_kitti_disparity(path),
        _ => {
            let d = read_pfm_disparity(path)?;
            let valid = d.data().iter().map(|v| v.is_finite() && *v > 0.0).collect();
            Ok((d, valid))
        }
    }
}

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub disparity: Tensor,
    pub metrics: Option<MetricsReport>,
}

/// Predict one pair and write `disparity.pfm`, `disparity.png` and, with
/// ground truth, `error.png` and `metrics.txt`.
pub fn infer(
    checkpoint: &Path,
    left: &Path,
    right: &Path,
    gt: Option<&Path>,
    out: &Path,
) -> Result<InferOutput> {
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    let left = read_rgb(left)?;
    let right = read_rgb(right)?;
    let (h, w) = (left.dim(1), left.dim(2));
    let (gt_map, valid) = match gt {
        Some(p) => read_gt(p)?,
        None => (Tensor::zeros(&[h, w]), vec![false; h * w]),
    };
    let sample = StereoSample {
        left,
        right,
        gt: gt_map,
        valid,
    };
    sample.validate()?;
    let disparity = predict_sample(&model, &sample)?;
    create_dir(out)?;
    write_pfm_disparity(out.join("disparity.pfm"), &disparity)?;
    let max_disp = model.max_disparity() as f32;
    viz::save_png(
        &viz::colorize_disparity(&disparity, max_disp)?,
        out.join("disparity.png"),
    )?;
    let metrics = match gt {
        None => None,
        Some(_) => {
            let mut mask = validity_mask(&sample.gt, max_disp);
            for (m, v) in mask.iter_mut().zip(&sample.valid) {
                *m &= v;
            }
            viz::save_png(
                &viz::colorize_error(&disparity, &sample.gt, &mask)?,
                out.join("error.png"),
            )?;
            let mut acc = MetricsAccumulator::default();
            acc.add(&disparity, &sample.gt, &mask)?;
            let report = acc.report()?;
            write_text(
                &out.join("metrics.txt"),
                &format!("{}\n{}", report.to_table(), report.to_records()),
            )?;
            Some(report)
        }
    };
    Ok(InferOutput { disparity, metrics })
}

/// The network to profile: the checkpoint's if given, else the config's.
pub fn load_or_build(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<LeanStereo> {
    match checkpoint {
        Some(p) => Checkpoint::load(p)?.into_model(),
        None => LeanStereo::new(&cfg.model, cfg.seed),
    }
}

/// Eval-mode parameter and MAC report at `profile.size`.
pub fn profile(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ProfileReport> {
    load_or_build(cfg, checkpoint)?.profile(cfg.profile_hw, Mode::Eval, 1)
}

struct ModelTarget {
    model: LeanStereo,
    left: ImageBatch,
    right: ImageBatch,
}

impl InferenceTarget for ModelTarget {
    fn infer(&mut self) -> Result<()> {
        self.model.predict(&self.left, &self.right).map(drop)
    }
}

fn random_batch(hw: (usize, usize), rng: &mut ChaCha8Rng) -> Result<ImageBatch> {
    let (h, w) = hw;
    ImageBatch::new(
        Tensor::from_fn(&[1, 3, h, w], |_| rng.gen_range(-1.0..1.0)),
        hw,
    )
}

/// What `benchmark` times.
pub enum BenchTarget<'a> {
    Model(Option<&'a Path>),
    /// Fixed per-pass latency; exercises the protocol without a network.
    Stub(Duration),
}

pub fn benchmark(cfg: &RunConfig, target: BenchTarget) -> Result<BenchmarkResult> {
    match target {
        BenchTarget::Stub(latency) => {
            benchmark_inference(&mut ConstantLatencyStub::new(latency), cfg.bench)
        }
        BenchTarget::Model(checkpoint) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut t = ModelTarget {
                model: load_or_build(cfg, checkpoint)?,
                left: random_batch(cfg.bench_hw, &mut rng)?,
                right: random_batch(cfg.bench_hw, &mut rng)?,
            };
            benchmark_inference(&mut t, cfg.bench)
        }
    }
}

/// Write `data.synth.count` generated pairs under `root/<split>`.
pub fn synth(cfg: &RunConfig, root: &Path, split: Split) -> Result<PathBuf> {
    cfg.data.synth.validate()?;
    write_synthetic_dataset(root, split, cfg.data.synth_count, cfg.seed, &cfg.data.synth)?;
    Ok(root.join(split.to_string()))
}
