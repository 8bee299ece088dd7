//! The five commands. Each returns the text to print; files are written
//! here and nowhere else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use igd_core::oracle::Report;
use igd_core::reverse::{generate, redenoise};
use igd_core::rng::{domain, keyed_rng};
use igd_core::state::Sequence;
use igd_core::tasks::{tv_hist, w1_proxy};
use igd_nn::train::{MetricRecord, TrainSnapshot};
use igd_nn::{train, Checkpoint, CheckpointHeader, DiscoDit, NetworkDenoiser};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::samples::{read_samples, timestamp, write_samples, SamplesHeader};
use crate::suite::run_suite;
use crate::task::Task;

/// Command-line options shared by the commands.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub condition: Option<PathBuf>,
    pub force: bool,
}

impl Options {
    fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn config_echo(cfg: &RunConfig) -> String {
    let mut s = String::from("# effective config\n");
    for line in cfg.to_toml().lines() {
        writeln!(s, "#   {line}").unwrap();
    }
    s
}

/// Result of `verify`: the report text and the counts that decide the exit
/// code.
pub struct VerifyOutcome {
    pub text: String,
    pub report: Report,
}

pub fn verify(cfg: &RunConfig, opts: &Options) -> Result<VerifyOutcome> {
    let task = Task::build(cfg)?;
    let seed = opts.seed(cfg);
    let report = run_suite(cfg, &task, seed)?;
    let mut text = format!(
        "# igd verify\n# task: {}\n# config_hash: {}\n# seed: {seed}\n",
        cfg.task.name(),
        cfg.hash()
    );
    text.push_str(&config_echo(cfg));
    text.push_str(&report.to_string());
    writeln!(text, "warnings: {}", report.warnings.len()).unwrap();
    writeln!(text, "failures: {}", report.failures()).unwrap();
    if let Some(out) = &opts.out {
        write_file(out, text.as_bytes())?;
    }
    Ok(VerifyOutcome { text, report })
}

/// A network rebuilt from a checkpoint.
pub struct LoadedModel {
    pub model: DiscoDit,
    pub checkpoint: Checkpoint,
}

impl LoadedModel {
    pub fn denoiser(&self, cfg: &RunConfig) -> NetworkDenoiser<'_> {
        NetworkDenoiser {
            model: &self.model,
            params: self.checkpoint.sampling_params(),
            flavor: cfg.trainer.discrete_loss,
        }
    }
}

pub fn checkpoint_path(cfg: &RunConfig, opts: &Options) -> PathBuf {
    opts.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoints.join("final.ckpt"))
}

/// Loads a checkpoint and checks that it was trained under this config
/// (hash and schedule fingerprint); `force` turns a mismatch into a warning.
pub fn load_model(cfg: &RunConfig, task: &Task, path: &Path, force: bool) -> Result<(LoadedModel, Vec<String>)> {
    let checkpoint = Checkpoint::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut warnings = Vec::new();
    let h = &checkpoint.header;
    for (what, got, want) in [
        ("config hash", &h.config_hash, &cfg.hash()),
        (
            "schedule fingerprint",
            &h.schedule_fingerprint,
            &task.table.fingerprint(),
        ),
    ] {
        if got != want {
            let msg = format!("checkpoint {what} {got} does not match {want}");
            if !force {
                return Err(CliError::Validation(format!("{msg} (use --force to override)")));
            }
            warnings.push(msg);
        }
    }
    let mut rng = keyed_rng(0, &[]);
    let (model, _) = DiscoDit::new(h.model.clone(), task.layout.clone(), h.t_c, &mut rng)?;
    model.check_params(checkpoint.sampling_params())?;
    Ok((LoadedModel { model, checkpoint }, warnings))
}

fn header_for(cfg: &RunConfig, task: &Task, step: usize, seed: u64, model: &DiscoDit) -> CheckpointHeader {
    let mut model_cfg = model.config().clone();
    model_cfg.t_c = Some(model.t_c());
    CheckpointHeader {
        config_hash: cfg.hash(),
        schedule_fingerprint: task.table.fingerprint(),
        step,
        seed,
        model: model_cfg,
        t_c: model.t_c(),
        tensors: vec![],
        has_ema: true,
    }
}

pub fn metrics_jsonl(metrics: &[MetricRecord]) -> String {
    metrics
        .iter()
        .map(|m| serde_json::to_string(m).expect("metric serializes") + "\n")
        .collect()
}

/// Trains from scratch. Writes `step-NNNNNNNN.ckpt` every
/// `checkpoint_every` steps, `final.ckpt` (parameters plus EMA) at the end,
/// and the metrics log as line-delimited JSON.
pub fn train_cmd(cfg: &RunConfig, opts: &Options) -> Result<String> {
    let task = Task::build(cfg)?;
    let seed = opts.seed(cfg);
    let mut rng = keyed_rng(seed, &[domain::PARAM_INIT]);
    let (model, params) = DiscoDit::new(cfg.model.clone(), task.layout.clone(), task.default_t_c(), &mut rng)?;
    let dir = cfg.paths.checkpoints.clone();
    fs::create_dir_all(&dir)?;
    let mut save = |snap: TrainSnapshot<'_>| -> igd_nn::Result<()> {
        let ck = Checkpoint {
            header: header_for(cfg, &task, snap.step, seed, &model),
            params: snap.params.clone(),
            ema: Some(snap.ema.clone()),
        };
        ck.save(&dir.join(format!("step-{:08}.ckpt", snap.step)))
    };
    let outcome = match &task.target {
        Some(target) => train(&model, params, &task.table, target, &cfg.trainer, seed, &mut save)?,
        None if task.train.is_empty() => return Err(CliError::Validation("no training data".into())),
        None => train(&model, params, &task.table, &task.train, &cfg.trainer, seed, &mut save)?,
    };
    let final_ck = Checkpoint {
        header: header_for(cfg, &task, cfg.trainer.steps, seed, &model),
        params: outcome.params,
        ema: Some(outcome.ema),
    };
    let final_path = dir.join("final.ckpt");
    final_ck.save(&final_path)?;
    let metrics_path = opts
        .out
        .clone()
        .unwrap_or_else(|| cfg.paths.reports.join("train_metrics.jsonl"));
    write_file(&metrics_path, metrics_jsonl(&outcome.metrics).as_bytes())?;
    let last = outcome.metrics.last();
    Ok(format!(
        "trained {} steps; final loss {}; continuous fraction {:.4}\ncheckpoint: {}\nmetrics: {}\n",
        cfg.trainer.steps,
        last.map_or("n/a".into(), |m| format!("{:.6}", m.loss)),
        outcome.continuous_fraction,
        final_path.display(),
        metrics_path.display()
    ))
}

fn conditions(task: &Task, opts: &Options, n: usize) -> Result<Vec<Sequence>> {
    if let Some(path) = &opts.condition {
        let text = fs::read_to_string(path)?;
        let (_, rows) = read_samples(&task.layout, &text, true)?;
        let rows: Vec<Sequence> = rows.into_iter().flatten().collect();
        if rows.is_empty() {
            return Err(CliError::Validation("condition file has no rows".into()));
        }
        return Ok((0..n).map(|i| rows[i % rows.len()].clone()).collect());
    }
    (0..n as u64).map(|i| task.template(i)).collect()
}

fn samples_out(cfg: &RunConfig, opts: &Options, default: &str) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| cfg.paths.reports.join(default))
}

fn diagnostics_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".diagnostics.jsonl");
    PathBuf::from(s)
}

/// Generates `--n` samples from a checkpoint. Applies top-p and, when
/// configured, ReDeNoise.
pub fn sample_cmd(cfg: &RunConfig, opts: &Options) -> Result<String> {
    let task = Task::build(cfg)?;
    let seed = opts.seed(cfg);
    let n = opts.n.ok_or_else(|| CliError::Validation("sample needs --n".into()))?;
    let path = checkpoint_path(cfg, opts);
    let (loaded, warnings) = load_model(cfg, &task, &path, opts.force)?;
    let conds = conditions(&task, opts, n)?;
    let ids: Vec<u64> = (0..n as u64).collect();
    let den = loaded.denoiser(cfg);
    let out = generate(&den, &task.table, &cfg.sampler, &conds, seed, &ids)?;
    let header = SamplesHeader {
        config_hash: cfg.hash(),
        seed,
        timestamp: timestamp(),
        extra: vec![
            ("task".into(), cfg.task.name().into()),
            ("checkpoint_step".into(), loaded.checkpoint.header.step.to_string()),
            ("samples".into(), n.to_string()),
        ],
    };
    let text = write_samples(&header, &out.samples);
    let dest = samples_out(cfg, opts, "samples.txt");
    write_file(&dest, text.as_bytes())?;
    write_file(&diagnostics_path(&dest), out.diagnostics.to_jsonl().as_bytes())?;
    let mut msg = String::new();
    for w in &warnings {
        writeln!(msg, "warning: {w}").unwrap();
    }
    writeln!(
        msg,
        "wrote {n} samples ({} aborted, {} clamp events) to {}",
        out.diagnostics.nonfinite_aborts.len(),
        out.diagnostics.clamp_events,
        dest.display()
    )
    .unwrap();
    Ok(msg)
}

fn load_samples(task: &Task, path: &Path) -> Result<Vec<Option<Sequence>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let (_, rows) = read_samples(&task.layout, &text, false)?;
    rows.into_iter()
        .map(|r| r.map(|s| task.recondition(s)).transpose())
        .collect()
}

/// Task metrics of a samples file against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub samples: usize,
    pub aborted: usize,
    pub token_tv: Option<f64>,
    pub w1_proxy: Option<f64>,
    pub constraint_accuracy: Option<f64>,
    pub ideal_constraint_accuracy: Option<f64>,
}

pub fn evaluate(task: &Task, samples: &[Option<Sequence>], reference: &[Sequence]) -> EvalMetrics {
    let done: Vec<Sequence> = samples.iter().flatten().cloned().collect();
    let layout = &task.layout;
    let fixed = task
        .template(0)
        .map(|t| t.cond_mask().tokens.clone())
        .unwrap_or_default();
    let free: Vec<usize> = (0..layout.discrete_len())
        .filter(|&p| !fixed.get(p).copied().unwrap_or(false))
        .collect();
    let token_tv = (!free.is_empty() && !done.is_empty() && !reference.is_empty()).then(|| {
        let bins = layout.vocab_size() as usize;
        free.iter()
            .map(|&p| {
                let a: Vec<usize> = done.iter().map(|s| s.tokens()[p] as usize).collect();
                let b: Vec<usize> = reference.iter().map(|s| s.tokens()[p] as usize).collect();
                tv_hist(&a, &b, bins)
            })
            .sum::<f64>()
            / free.len() as f64
    });
    let flat = |s: &Sequence| s.vectors().iter().flatten().copied().collect::<Vec<f64>>();
    let w1 = (layout.continuous_len() > 0 && !done.is_empty() && !reference.is_empty()).then(|| {
        let a: Vec<Vec<f64>> = done.iter().map(flat).collect();
        let b: Vec<Vec<f64>> = reference.iter().map(flat).collect();
        w1_proxy(&a, &b)
    });
    EvalMetrics {
        samples: samples.len(),
        aborted: samples.len() - done.len(),
        token_tv,
        w1_proxy: w1,
        constraint_accuracy: task.constraint_accuracy(&done),
        ideal_constraint_accuracy: task.ideal_accuracy(),
    }
}

pub fn eval_cmd(cfg: &RunConfig, opts: &Options) -> Result<String> {
    let task = Task::build(cfg)?;
    let seed = opts.seed(cfg);
    let path = opts
        .samples
        .clone()
        .ok_or_else(|| CliError::Validation("eval needs --samples".into()))?;
    let samples = load_samples(&task, &path)?;
    let reference: Vec<Sequence> = match &opts.reference {
        Some(r) => load_samples(&task, r)?.into_iter().flatten().collect(),
        None => task.reference(opts.n.unwrap_or(samples.len().max(10_000)), seed),
    };
    let m = evaluate(&task, &samples, &reference);
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    let mut text = format!(
        "# igd eval\n# task: {}\n# config_hash: {}\n# seed: {seed}\n",
        cfg.task.name(),
        cfg.hash()
    );
    writeln!(text, "# samples_file: {}", path.display()).unwrap();
    text.push_str(&config_echo(cfg));
    writeln!(text, "metric\tvalue").unwrap();
    writeln!(text, "samples\t{}", m.samples).unwrap();
    writeln!(text, "aborted\t{}", m.aborted).unwrap();
    writeln!(text, "reference\t{}", reference.len()).unwrap();
    writeln!(text, "token_tv\t{}", fmt(m.token_tv)).unwrap();
    writeln!(text, "w1_proxy\t{}", fmt(m.w1_proxy)).unwrap();
    writeln!(text, "constraint_accuracy\t{}", fmt(m.constraint_accuracy)).unwrap();
    writeln!(text, "ideal_constraint_accuracy\t{}", fmt(m.ideal_constraint_accuracy)).unwrap();
    if let Some(out) = &opts.out {
        write_file(out, text.as_bytes())?;
    }
    Ok(text)
}

/// Re-noises the samples of `--samples` through the first
/// `sampler.redenoise_rounds` rounds and denoises them back,
/// `sampler.redenoise_iterations` times.
pub fn redenoise_cmd(cfg: &RunConfig, opts: &Options) -> Result<String> {
    let task = Task::build(cfg)?;
    let seed = opts.seed(cfg);
    if cfg.sampler.redenoise_rounds == 0 || cfg.sampler.redenoise_iterations == 0 {
        return Err(CliError::Validation(
            "redenoise needs sampler.redenoise_rounds and sampler.redenoise_iterations > 0".into(),
        ));
    }
    let path = opts
        .samples
        .clone()
        .ok_or_else(|| CliError::Validation("redenoise needs --samples".into()))?;
    let input = load_samples(&task, &path)?;
    let (loaded, warnings) = load_model(cfg, &task, &checkpoint_path(cfg, opts), opts.force)?;
    let (idx, live): (Vec<usize>, Vec<Sequence>) = input
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.clone().map(|s| (i, s)))
        .unzip();
    let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
    let den = loaded.denoiser(cfg);
    let out = redenoise(&den, &task.table, &cfg.sampler, live, seed, &ids)?;
    let mut result: Vec<Option<Sequence>> = vec![None; input.len()];
    for (i, s) in idx.into_iter().zip(out.samples) {
        result[i] = s;
    }
    let header = SamplesHeader {
        config_hash: cfg.hash(),
        seed,
        timestamp: timestamp(),
        extra: vec![
            ("task".into(), cfg.task.name().into()),
            ("checkpoint_step".into(), loaded.checkpoint.header.step.to_string()),
            ("redenoise_rounds".into(), cfg.sampler.redenoise_rounds.to_string()),
            (
                "redenoise_iterations".into(),
                cfg.sampler.redenoise_iterations.to_string(),
            ),
            ("input".into(), path.display().to_string()),
        ],
    };
    let dest = samples_out(cfg, opts, "redenoised.txt");
    write_file(&dest, write_samples(&header, &result).as_bytes())?;
    write_file(&diagnostics_path(&dest), out.diagnostics.to_jsonl().as_bytes())?;
    let mut msg = String::new();
    for w in &warnings {
        writeln!(msg, "warning: {w}").unwrap();
    }
    writeln!(msg, "wrote {} samples to {}", result.len(), dest.display()).unwrap();
    Ok(msg)
}
