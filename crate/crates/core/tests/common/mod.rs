//! Routines shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use aad_core::features::log_mel_spectrogram;
use aad_core::models::{build, train_model};
use aad_core::nn::fit;
use aad_core::{ArchConfig, Architecture, FeatureConfig, MelSpectrogram, Model, SyntheticConfig, TrainConfig};

/// Noiseless stationary harmonic tones of 10 s, one per board draw.
pub fn stationary_tones(n: usize, seed: u64) -> Vec<MelSpectrogram> {
    let cfg = SyntheticConfig {
        n_train: n,
        n_eval_normal: 1,
        n_eval_anomalous: 1,
        duration_secs: 10.0,
        noise_std: 0.0,
        max_glide: 0.0,
        board_pass: false,
        seed,
        ..Default::default()
    };
    let fc = FeatureConfig::default();
    cfg.generate()
        .unwrap()
        .iter()
        .take(n)
        .map(|c| log_mel_spectrogram(&c.audio, &fc).unwrap())
        .collect()
}

pub struct Overfit {
    pub first: f64,
    pub best: f64,
    pub epochs: usize,
}

impl Overfit {
    pub fn ratio(&self) -> f64 {
        self.best / self.first
    }
}

/// Trains Skip-CAE on eight clips for 200 epochs, reusing them for validation.
pub fn skip_cae_overfit(seed: u64) -> Overfit {
    let specs = stationary_tones(8, seed);
    let refs: Vec<&MelSpectrogram> = specs.iter().collect();
    let arch = ArchConfig {
        input_hw: specs[0].shape(),
        ..Default::default()
    };
    let mut model = Model::<f32>::new(build(Architecture::SkipCae, &arch).unwrap(), seed).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 4,
        lr_max: 1e-2,
        lr_min: 1e-4,
        restarts: 1,
        patience: 200,
        weight_decay: 0.0,
        seed,
        ..Default::default()
    };
    let hist = train_model(&mut model, &refs, &refs, &cfg).unwrap();
    Overfit {
        first: hist.epochs[0].train_loss,
        best: hist.epochs.iter().map(|r| r.train_loss).fold(f64::INFINITY, f64::min),
        epochs: hist.len(),
    }
}

pub struct ScriptedStop {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Restored weights serialize to the same bytes as the best epoch's checkpoint.
    pub restored_bit_exact: bool,
}

/// Runs the epoch loop on a real model whose weights move every epoch while
/// the validation losses follow `[1.0, 0.8, 0.9, 0.9, ...]`.
pub fn scripted_early_stop() -> ScriptedStop {
    let arch = ArchConfig {
        input_hw: [16, 20],
        ..Default::default()
    };
    let mut model = Model::<f32>::new(build(Architecture::SkipCae, &arch).unwrap(), 3).unwrap();
    let cfg = TrainConfig::default();
    let mut saved: Vec<Vec<u8>> = Vec::new();
    let hist = fit(&cfg, &mut model, |epoch, lr, m| {
        let ids: Vec<_> = m.params().ids().collect();
        for id in ids {
            for (i, w) in m.params_mut().get_mut(id).data_mut().iter_mut().enumerate() {
                *w += (lr * ((epoch * 31 + i) as f64).sin()) as f32;
            }
        }
        saved.push(m.to_checkpoint(0, None).unwrap().to_bytes().unwrap());
        let val = match epoch {
            0 => 1.0,
            1 => 0.8,
            _ => 0.9,
        };
        Ok((val, val))
    })
    .unwrap();
    let restored = model.to_checkpoint(0, None).unwrap().to_bytes().unwrap();
    ScriptedStop {
        epochs_run: hist.len(),
        best_epoch: hist.best_epoch,
        restored_bit_exact: restored == saved[hist.best_epoch] && restored != saved[hist.len() - 1],
    }
}

pub struct ExperimentRun {
    pub seed: u64,
    pub arch: Architecture,
    pub auc: f64,
    pub pauc: f64,
    pub secs: f64,
}

/// Trains `archs` on the default synthetic suite for each seed and scores
/// the eval clips. The last tenth of the training clips validates.
pub fn synthetic_experiment(seeds: &[u64], archs: &[Architecture], epochs: usize) -> Vec<ExperimentRun> {
    use aad_core::eval::{compute_auc, compute_pauc, ScoreRecord};
    use aad_core::Split;

    let clips = SyntheticConfig::default().generate().unwrap();
    let fc = FeatureConfig::default();
    let specs: Vec<MelSpectrogram> = clips
        .iter()
        .map(|c| log_mel_spectrogram(&c.audio, &fc).unwrap())
        .collect();
    let train: Vec<&MelSpectrogram> = clips
        .iter()
        .zip(&specs)
        .filter(|(c, _)| c.label.split == Split::Train)
        .map(|(_, s)| s)
        .collect();
    let (tr, va) = train.split_at(train.len() - train.len() / 10);
    let eval: Vec<_> = clips
        .iter()
        .zip(&specs)
        .filter(|(c, _)| c.label.split == Split::Eval)
        .collect();
    let eval_specs: Vec<&MelSpectrogram> = eval.iter().map(|(_, s)| *s).collect();
    let arch_cfg = ArchConfig {
        input_hw: specs[0].shape(),
        ..Default::default()
    };
    let mut runs = Vec::new();
    for &seed in seeds {
        for &arch in archs {
            let start = std::time::Instant::now();
            let mut model = Model::<f32>::new(build(arch, &arch_cfg).unwrap(), seed).unwrap();
            let cfg = TrainConfig {
                epochs,
                batch_size: 8,
                lr_max: 3e-3,
                restarts: 1,
                seed,
                ..Default::default()
            };
            train_model(&mut model, tr, va, &cfg).unwrap();
            let scores = model.anomaly_scores(&eval_specs).unwrap();
            let records: Vec<ScoreRecord> = eval
                .iter()
                .zip(scores)
                .map(|((c, _), s)| ScoreRecord::new(c.label.clip_id.clone(), s, c.label.anomaly_type))
                .collect();
            runs.push(ExperimentRun {
                seed,
                arch,
                auc: compute_auc(&records).unwrap(),
                pauc: compute_pauc(&records, 0.1).unwrap(),
                secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    runs
}
