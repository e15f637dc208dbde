use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use aad_core::dataset::{load_clip, load_manifest, parse_manifest, split_train_val, ClipLabel, Manifest, Split};
use aad_core::eval::{
    comparison_table, export_artifacts, per_type_report, read_scores, write_scores, EvalReport, Reconstruction,
    ScoreRecord,
};
use aad_core::features::{cache_paths, log_mel_spectrogram, read_cache, read_sidecar, write_cache};
use aad_core::models::{build, train_model};
use aad_core::nn::Checkpoint;
use aad_core::{IsolationForest, MelSpectrogram, Model};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use crate::config::{ModelId, RunConfig};

/// Per-item failures of a command that otherwise completed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<(String, String)>,
}

impl Outcome {
    pub fn ok() -> Self {
        Self::default()
    }
}

fn load_run_manifest(cfg: &RunConfig) -> Result<Manifest> {
    match &cfg.dataset_root {
        Some(root) => {
            let text = fs::read_to_string(&cfg.manifest)
                .with_context(|| format!("reading manifest {}", cfg.manifest.display()))?;
            Ok(parse_manifest(&text, &cfg.manifest, root)?)
        }
        None => Ok(load_manifest(&cfg.manifest)?),
    }
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// A cache entry is current when its sidecar records the same front-end
/// settings, the blob has the promised size and is newer than the audio.
fn cache_is_current(cfg: &RunConfig, audio: &Path, clip_id: &str) -> bool {
    let Ok(sidecar) = read_sidecar(&cfg.cache_dir, clip_id) else {
        return false;
    };
    if sidecar.features.as_ref() != Some(&cfg.features) {
        return false;
    }
    let (_, bin) = cache_paths(&cfg.cache_dir, clip_id);
    let size_ok = fs::metadata(&bin)
        .map(|m| m.len() == (sidecar.shape[0] * sidecar.shape[1] * 4) as u64)
        .unwrap_or(false);
    size_ok && matches!((modified(&bin), modified(audio)), (Some(b), Some(a)) if b >= a)
}

pub fn preprocess(cfg: &RunConfig) -> Result<Outcome> {
    let manifest = load_run_manifest(cfg)?;
    fs::create_dir_all(&cfg.cache_dir).with_context(|| format!("creating {}", cfg.cache_dir.display()))?;
    let results: Vec<(String, Result<bool>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let audio = manifest.audio_path(entry);
            let run = || -> Result<bool> {
                if cache_is_current(cfg, &audio, &entry.clip_id) {
                    return Ok(false);
                }
                let mut clip = load_clip(&audio)?;
                clip.clip_id = entry.clip_id.clone();
                let spec = log_mel_spectrogram(&clip, &cfg.features)?;
                write_cache(&cfg.cache_dir, &spec, &cfg.features)?;
                Ok(true)
            };
            (entry.clip_id.clone(), run())
        })
        .collect();
    let mut outcome = Outcome::ok();
    let (mut written, mut skipped) = (0, 0);
    for (id, r) in results {
        match r {
            Ok(true) => written += 1,
            Ok(false) => skipped += 1,
            Err(e) => outcome.failures.push((id, format!("{e:#}"))),
        }
    }
    println!(
        "preprocess: {written} written, {skipped} up to date, {} failed ({})",
        outcome.failures.len(),
        cfg.cache_dir.display()
    );
    Ok(outcome)
}

/// Reads cached features for `ids`, naming every missing entry on failure.
fn read_features(cfg: &RunConfig, ids: &[String]) -> Result<Vec<MelSpectrogram>> {
    let results: Vec<_> = ids.par_iter().map(|id| read_cache(&cfg.cache_dir, id)).collect();
    let mut specs = Vec::with_capacity(ids.len());
    let mut missing = Vec::new();
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(s) => specs.push(s),
            Err(e) => missing.push(format!("{id} ({e})")),
        }
    }
    if !missing.is_empty() {
        bail!(
            "{} cache entries unavailable in {}, run `aad preprocess` first:\n  {}",
            missing.len(),
            cfg.cache_dir.display(),
            missing.join("\n  ")
        );
    }
    Ok(specs)
}

fn split_ids(manifest: &Manifest, split: Split) -> Vec<String> {
    manifest.split(split).map(|e| e.clip_id.clone()).collect()
}

pub fn train(cfg: &RunConfig) -> Result<Outcome> {
    let ModelId::Network(arch) = cfg.model else {
        bail!("the isolation forest has no training step; `aad score --model iforest` fits and scores it");
    };
    let manifest = load_run_manifest(cfg)?;
    let (train_ids, val_ids) = split_train_val(&manifest, cfg.train.val_fraction, cfg.seed)?;
    let train_specs = read_features(cfg, &train_ids)?;
    let val_specs = read_features(cfg, &val_ids)?;
    let mut arch_cfg = cfg.architecture.clone();
    arch_cfg.input_hw = train_specs[0].shape();
    let mut model = Model::<f32>::new(build(arch, &arch_cfg)?, cfg.seed)?;
    log::info!(
        "training {arch} on {} clips, validating on {}, {} parameters",
        train_specs.len(),
        val_specs.len(),
        model.params().trainable_count()
    );
    let tr: Vec<&MelSpectrogram> = train_specs.iter().collect();
    let va: Vec<&MelSpectrogram> = val_specs.iter().collect();
    let history = train_model(&mut model, &tr, &va, &cfg.train)?;

    let dir = cfg.model_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    model
        .to_checkpoint(history.best_epoch, Some(history.best_val_loss))?
        .save(&cfg.checkpoint_path())?;
    let hist_path = dir.join("history.csv");
    fs::write(&hist_path, history.to_csv()).with_context(|| format!("writing {}", hist_path.display()))?;
    let mut effective = cfg.clone();
    effective.architecture = arch_cfg;
    fs::write(dir.join("config.json"), effective.to_json()?)?;
    println!(
        "train: {arch} ran {} epochs, best epoch {} with validation loss {:.6}{}; checkpoint {}",
        history.len(),
        history.best_epoch,
        history.best_val_loss,
        if history.stopped_early { " (stopped early)" } else { "" },
        cfg.checkpoint_path().display()
    );
    Ok(Outcome::ok())
}

/// Pairs scores with manifest labels; an unlabeled clip is an error.
fn join_labels(manifest: &Manifest, scored: Vec<(String, f64)>) -> Result<Vec<ScoreRecord>> {
    let labels = manifest.by_id();
    scored
        .into_iter()
        .map(|(id, score)| {
            let label: &ClipLabel = labels
                .get(id.as_str())
                .ok_or_else(|| anyhow!("no label for scored clip `{id}`"))?;
            Ok(ScoreRecord::new(id, score, label.anomaly_type))
        })
        .collect()
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<f32>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = Model::from_checkpoint(&ckpt)?;
    match cfg.model {
        ModelId::Network(a) if a == model.graph().architecture => Ok(model),
        other => bail!(
            "checkpoint {} holds `{}` but the run selects `{other}` (pass --model {})",
            checkpoint.display(),
            model.graph().architecture,
            model.graph().architecture
        ),
    }
}

pub fn score(cfg: &RunConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<Outcome> {
    let manifest = load_run_manifest(cfg)?;
    let eval_ids = split_ids(&manifest, Split::Eval);
    if eval_ids.is_empty() {
        bail!("manifest {} has no eval clips", cfg.manifest.display());
    }
    let eval_specs = read_features(cfg, &eval_ids)?;
    let scores = match cfg.model {
        ModelId::IsolationForest => {
            let train_specs = read_features(cfg, &split_ids(&manifest, Split::Train))?;
            let rows: Vec<&[f32]> = train_specs.iter().map(|s| s.values.as_slice()).collect();
            let forest = IsolationForest::fit(&rows, &cfg.iforest)?;
            let eval_rows: Vec<&[f32]> = eval_specs.iter().map(|s| s.values.as_slice()).collect();
            forest.score_many(&eval_rows)?
        }
        ModelId::Network(_) => {
            let path = checkpoint
                .map(Path::to_path_buf)
                .unwrap_or_else(|| cfg.checkpoint_path());
            let model = load_model(cfg, &path)?;
            let refs: Vec<&MelSpectrogram> = eval_specs.iter().collect();
            model.anomaly_scores(&refs)?
        }
    };
    let records = join_labels(&manifest, eval_ids.into_iter().zip(scores).collect())?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.scores_path());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_scores(&path, &records)?;
    println!(
        "score: {} clips scored by {} -> {}",
        records.len(),
        cfg.model,
        path.display()
    );
    Ok(Outcome::ok())
}

/// Name of the model behind a scores file: the parent directory for
/// `.../<model>/scores.csv`, the file stem otherwise.
pub fn model_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "scores" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub struct EvalArgs<'a> {
    pub scores: &'a [PathBuf],
    pub out: &'a Path,
    pub max_fpr: f64,
    pub per_type: bool,
    /// Checkpoint and count of top-scoring clips to render.
    pub images: Option<(&'a Path, usize)>,
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs<'_>) -> Result<Outcome> {
    if args.images.is_some() && args.scores.len() != 1 {
        bail!("reconstruction images need exactly one scores file");
    }
    let mut names: Vec<String> = args.scores.iter().map(|p| model_name(p)).collect();
    for i in 0..names.len() {
        if names[..i].contains(&names[i]) {
            names[i] = format!("{}_{i}", names[i]);
        }
    }
    let reports: Vec<(EvalReport, Vec<ScoreRecord>)> = args
        .scores
        .par_iter()
        .zip(&names)
        .map(|(path, name)| {
            let records = read_scores(path)?;
            let report = per_type_report(name, &records, args.max_fpr)
                .with_context(|| format!("evaluating {}", path.display()))?;
            Ok((report, records))
        })
        .collect::<Result<_>>()?;
    for (report, records) in &reports {
        let dir = args.out.join(&report.model);
        let recons = match args.images {
            Some((ckpt, n)) => reconstructions(cfg, ckpt, records, n)?,
            None => Vec::new(),
        };
        export_artifacts(&dir, report, &recons)?;
        println!("eval: {} -> {}", report.model, dir.display());
    }
    let reports: Vec<EvalReport> = reports.into_iter().map(|(r, _)| r).collect();
    let table = comparison_table(&reports, args.per_type);
    print!("{table}");
    if reports.len() > 1 || args.per_type {
        fs::write(args.out.join("comparison.txt"), &table)?;
    }
    Ok(Outcome::ok())
}

/// Reconstructions of the `n` highest-scoring clips.
fn reconstructions(
    cfg: &RunConfig,
    checkpoint: &Path,
    records: &[ScoreRecord],
    n: usize,
) -> Result<Vec<Reconstruction>> {
    let model = load_model(cfg, checkpoint)?;
    let mut ranked: Vec<&ScoreRecord> = records.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let ids: Vec<String> = ranked.iter().take(n).map(|r| r.clip_id.clone()).collect();
    let specs = read_features(cfg, &ids)?;
    let refs: Vec<&MelSpectrogram> = specs.iter().collect();
    let outputs = model.reconstruct_batch(&refs)?;
    Ok(specs
        .into_iter()
        .zip(outputs)
        .map(|(input, output)| Reconstruction { input, output })
        .collect())
}

/// Loads `report.json` from each path (a file or its directory) and prints
/// the comparison table.
pub fn report(paths: &[PathBuf], per_type: bool, out: Option<&Path>) -> Result<Outcome> {
    let reports: Vec<EvalReport> = paths
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
        })
        .collect::<Result<_>>()?;
    let table = comparison_table(&reports, per_type);
    print!("{table}");
    if let Some(out) = out {
        fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(Outcome::ok())
}
