//! Toy planer recordings for smoke tests and the end-to-end experiment.
//!
//! Normal clips are band-limited harmonic tones over a low white-noise floor.
//! The fundamental depends on the board type and varies per clip, and the
//! tone only sounds while a board passes the cutter.
//! Anomalous clips are normal clips with a few broadband impulsive bursts.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_clip_pcm16, AnomalyType, AudioClip, BoardType, ClipLabel, Manifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_eval_normal: usize,
    pub n_eval_anomalous: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    /// Highest harmonic frequency in Hz.
    pub band_limit_hz: f64,
    pub noise_std: f64,
    /// Largest relative change of the fundamental over a clip.
    pub max_glide: f64,
    /// Tone sounds only between random entry and exit times.
    pub board_pass: bool,
    pub bursts: [usize; 2],
    pub burst_ms: [f64; 2],
    pub burst_amplitude: [f64; 2],
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_eval_normal: 50,
            n_eval_anomalous: 10,
            duration_secs: 3.0,
            sample_rate: 20_000,
            band_limit_hz: 4_000.0,
            noise_std: 0.002,
            max_glide: 0.05,
            board_pass: true,
            bursts: [3, 6],
            burst_ms: [20.0, 60.0],
            burst_amplitude: [0.2, 0.5],
            seed: 0,
        }
    }
}

const BOARDS: [BoardType; 3] = [BoardType::B2x3, BoardType::B2x4, BoardType::B2x6];

fn fundamental_range(board: BoardType) -> (f64, f64) {
    match board {
        BoardType::B2x3 => (160.0, 240.0),
        BoardType::B2x4 => (120.0, 180.0),
        _ => (90.0, 140.0),
    }
}

/// One labeled clip with its samples.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub label: ClipLabel,
    pub audio: AudioClip,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_eval_normal == 0 || self.n_eval_anomalous == 0 {
            return Err(Error::Config(
                "need at least 2 training clips and one normal and one anomalous eval clip".into(),
            ));
        }
        if !(self.duration_secs > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("duration and sample rate must be positive".into()));
        }
        if self.band_limit_hz >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config("band limit must stay below Nyquist".into()));
        }
        if self.bursts[0] == 0 || self.bursts[0] > self.bursts[1] || self.burst_ms[0] > self.burst_ms[1] {
            return Err(Error::Config("burst ranges must be non-empty and ordered".into()));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }

    /// A normal clip: harmonics `k·f0(t)` up to the band limit with `1/k`
    /// amplitudes and random phases, gated by a board pass with random entry
    /// and exit times, plus white noise. `f0` glides linearly by up to
    /// `±max_glide`.
    pub fn normal_samples(&self, board: BoardType, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let sr = self.sample_rate as f64;
        let n = self.n_samples();
        let dur = n as f64 / sr;
        let (lo, hi) = fundamental_range(board);
        let f0 = rng.gen_range(lo..hi);
        let glide: f64 = rng.gen_range(-1.0..1.0) * self.max_glide;
        let level = rng.gen_range(0.15..0.25);
        let n_harmonics = (self.band_limit_hz / (f0 * (1.0 + glide.abs()))).floor() as usize;
        let harmonics: Vec<(f64, f64)> = (1..=n_harmonics)
            .map(|k| (level / k as f64 * rng.gen_range(0.8..1.2), rng.gen_range(0.0..TAU)))
            .collect();
        let (t_on, t_off) = if self.board_pass {
            (rng.gen_range(0.0..0.4 * dur), rng.gen_range(0.6 * dur..dur))
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let ramp = 0.02;
        let mut phase = 0.0;
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                phase += TAU * f0 * (1.0 + glide * (t / dur - 0.5)) / sr;
                let gate = ((t - t_on) / ramp)
                    .clamp(0.0, 1.0)
                    .min(((t_off - t) / ramp).clamp(0.0, 1.0));
                let tone: f64 = harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, ph))| a * ((k + 1) as f64 * phase + ph).sin())
                    .sum();
                let noise: f64 = StandardNormal.sample(rng);
                (gate * tone + self.noise_std * noise) as f32
            })
            .collect()
    }

    /// Adds decaying white-noise bursts in place.
    pub fn add_bursts(&self, samples: &mut [f32], rng: &mut ChaCha8Rng) {
        let sr = self.sample_rate as f64;
        let n = rng.gen_range(self.bursts[0]..=self.bursts[1]);
        for _ in 0..n {
            let len = (rng.gen_range(self.burst_ms[0]..=self.burst_ms[1]) * sr / 1000.0) as usize;
            let len = len.clamp(1, samples.len());
            let start = rng.gen_range(0..=samples.len() - len);
            let amp = rng.gen_range(self.burst_amplitude[0]..=self.burst_amplitude[1]);
            let tau = len as f64 / 3.0;
            for (j, s) in samples[start..start + len].iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(rng);
                *s += (amp * (-(j as f64) / tau).exp() * noise) as f32;
            }
        }
    }

    /// All clips: training normals, then eval normals, then eval anomalies.
    /// Clip `i` draws from ChaCha stream `i` of the seed.
    pub fn generate(&self) -> Result<Vec<SyntheticClip>> {
        self.validate()?;
        let mut plan: Vec<(String, Split, AnomalyType)> = Vec::new();
        plan.extend((0..self.n_train).map(|i| (format!("train_{i:04}"), Split::Train, AnomalyType::None)));
        plan.extend((0..self.n_eval_normal).map(|i| (format!("eval_normal_{i:04}"), Split::Eval, AnomalyType::None)));
        plan.extend(
            (0..self.n_eval_anomalous).map(|i| (format!("eval_anomaly_{i:04}"), Split::Eval, AnomalyType::BrokenBoard)),
        );
        let clips = plan
            .into_par_iter()
            .enumerate()
            .map(|(i, (id, split, anomaly_type))| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64);
                let board = BOARDS[rng.gen_range(0..BOARDS.len())];
                let mut samples = self.normal_samples(board, &mut rng);
                if anomaly_type != AnomalyType::None {
                    self.add_bursts(&mut samples, &mut rng);
                }
                SyntheticClip {
                    label: ClipLabel {
                        relative_path: PathBuf::from("audio").join(format!("{id}.wav")),
                        clip_id: id.clone(),
                        split,
                        is_anomaly: anomaly_type != AnomalyType::None,
                        anomaly_type,
                        board_type: board,
                    },
                    audio: AudioClip::new(id, samples, self.sample_rate),
                }
            })
            .collect();
        Ok(clips)
    }
}

/// Writes `manifest.csv` and 16-bit WAV files under `root/audio`.
pub fn write_dataset(root: &Path, cfg: &SyntheticConfig) -> Result<Manifest> {
    let clips = cfg.generate()?;
    let audio = root.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    clips
        .par_iter()
        .try_for_each(|c| write_clip_pcm16(&c.audio, &root.join(&c.label.relative_path)))?;
    let manifest = Manifest::new(clips.into_iter().map(|c| c.label).collect(), root)?;
    manifest.write(&root.join("manifest.csv"))?;
    Ok(manifest)
}
