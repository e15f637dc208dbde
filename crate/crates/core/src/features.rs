//! Log-scaled mel spectrograms.
//!
//! A 10 s clip at 20 kHz framed at 50 ms / 25 ms with centered, reflect
//! padded framing yields 401 frames; with 80 mel bands that is the 401×80
//! (32,080 value) model input.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::AudioClip;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub frame_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    pub fft_size: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_ms: 50,
            hop_ms: 25,
            n_mels: 80,
            fft_size: 1024,
            fmin: 0.0,
            fmax: 10_000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    fn samples_for(&self, ms: u32, sample_rate: u32, what: &str) -> Result<usize> {
        let scaled = sample_rate as u64 * ms as u64;
        if scaled % 1000 != 0 || scaled == 0 {
            return Err(Error::Config(format!(
                "{what} of {ms} ms is not a whole number of samples at {sample_rate} Hz"
            )));
        }
        Ok((scaled / 1000) as usize)
    }

    pub fn frame_len(&self, sample_rate: u32) -> Result<usize> {
        self.samples_for(self.frame_ms, sample_rate, "frame")
    }

    pub fn hop_len(&self, sample_rate: u32) -> Result<usize> {
        self.samples_for(self.hop_ms, sample_rate, "hop")
    }

    /// Number of frames produced for a signal of `n_samples` samples.
    pub fn n_frames(&self, n_samples: usize, sample_rate: u32) -> Result<usize> {
        let hop = self.hop_len(sample_rate)?;
        Ok(n_samples / hop + 1)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let frame = self.frame_len(sample_rate)?;
        self.hop_len(sample_rate)?;
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < frame {
            return Err(Error::Config(format!(
                "fft_size {} must be a power of two no smaller than the {frame}-sample frame",
                self.fft_size
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax, got {} and {}",
                self.fmin, self.fmax
            )));
        }
        if self.fmax > nyquist {
            return Err(Error::Config(format!(
                "fmax {} Hz exceeds the Nyquist frequency {nyquist} Hz",
                self.fmax
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `[n_frames × n_mels]` natural-log mel power.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub clip_id: String,
    pub n_frames: usize,
    pub n_mels: usize,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(clip_id: impl Into<String>, n_frames: usize, n_mels: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(shape_err!(
                "{} values cannot form a {n_frames}x{n_mels} spectrogram",
                values.len()
            ));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            n_frames,
            n_mels,
            values,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.n_frames, self.n_mels]
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_mels..(i + 1) * self.n_mels]
    }
}

/// Maps any integer index onto `[0, n)` by mirror reflection without
/// repeating the edge sample (numpy's `reflect` mode, iterated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Centered framing: the signal is reflect-padded by `frame_len / 2` on
/// both sides and cut into `floor(N / hop) + 1` frames.
pub fn frame_signal(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Vec<Vec<f32>>> {
    let frame = cfg.frame_len(clip.sample_rate)?;
    let hop = cfg.hop_len(clip.sample_rate)?;
    let n = clip.samples.len();
    if n < hop {
        return Err(Error::InvalidInput(format!(
            "clip `{}` has {n} samples, shorter than one {hop}-sample hop",
            clip.clip_id
        )));
    }
    let pad = (frame / 2) as isize;
    let n_frames = n / hop + 1;
    Ok((0..n_frames)
        .map(|f| {
            let start = (f * hop) as isize - pad;
            (0..frame as isize)
                .map(|k| clip.samples[reflect_index(start + k, n)])
                .collect()
        })
        .collect())
}

/// Periodic Hann window of length `len`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, row-major `[n_mels × (fft_size / 2 + 1)]`, peak weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `weights · power`, one value per mel band.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Result<MelFilterbank> {
    if cfg.n_mels == 0 {
        return Err(Error::Config("n_mels must be at least 1".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if cfg.fmax > nyquist {
        return Err(Error::Config(format!(
            "fmax {} Hz exceeds the Nyquist frequency {nyquist} Hz",
            cfg.fmax
        )));
    }
    if !(cfg.fmin >= 0.0 && cfg.fmin < cfg.fmax) {
        return Err(Error::Config(format!(
            "need 0 <= fmin < fmax, got {} and {}",
            cfg.fmin, cfg.fmax
        )));
    }
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let step = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;

    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[m * n_bins + k] = w;
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
        weights,
    })
}

/// Reusable STFT + mel projection for one sample rate and config.
pub struct MelFrontEnd {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl MelFrontEnd {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let frame = cfg.frame_len(sample_rate)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window: hann_window(frame),
            fft,
            filterbank: mel_filterbank(cfg, sample_rate)?,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// `|DFT(window · frame)|²` for bins `0..=fft_size/2`.
    pub fn power_spectrum(&self, frame: &[f32]) -> Result<Vec<f64>> {
        if frame.len() > self.cfg.fft_size {
            return Err(shape_err!(
                "frame of {} samples exceeds fft size {}",
                frame.len(),
                self.cfg.fft_size
            ));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let window = if frame.len() == self.window.len() {
            self.window.clone()
        } else {
            hann_window(frame.len())
        };
        for (slot, (&x, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            slot.re = x as f64 * w;
        }
        self.fft.process(&mut buf);
        Ok(buf[..self.cfg.fft_size / 2 + 1].iter().map(|c| c.norm_sqr()).collect())
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "clip `{}` is at {} Hz, front end expects {} Hz",
                clip.clip_id, clip.sample_rate, self.sample_rate
            )));
        }
        let frames = frame_signal(clip, &self.cfg)?;
        let floor = self.cfg.log_floor;
        let mut values = Vec::with_capacity(frames.len() * self.cfg.n_mels);
        for frame in &frames {
            let power = self.power_spectrum(frame)?;
            values.extend(
                self.filterbank
                    .apply(&power)
                    .into_iter()
                    .map(|e| e.max(floor).ln() as f32),
            );
        }
        MelSpectrogram::new(clip.clip_id.clone(), frames.len(), self.cfg.n_mels, values)
    }
}

pub fn power_spectrum(frame: &[f32], cfg: &FeatureConfig, sample_rate: u32) -> Result<Vec<f64>> {
    MelFrontEnd::new(cfg, sample_rate)?.power_spectrum(frame)
}

pub fn log_mel_spectrogram(clip: &AudioClip, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    MelFrontEnd::new(cfg, clip.sample_rate)?.compute(clip)
}

/// JSON sidecar written next to each cached feature blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub clip_id: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Front-end settings the blob was computed with; used for staleness checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureConfig>,
}

pub const CACHE_DTYPE: &str = "f32le";

pub fn cache_paths(dir: &Path, clip_id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{clip_id}.json")), dir.join(format!("{clip_id}.f32")))
}

/// Writes `<clip_id>.f32` (row-major little-endian f32) and `<clip_id>.json`.
pub fn write_cache(dir: &Path, spec: &MelSpectrogram, cfg: &FeatureConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (json_path, bin_path) = cache_paths(dir, &spec.clip_id);
    let mut bytes = Vec::with_capacity(spec.values.len() * 4);
    for v in &spec.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let sidecar = CacheSidecar {
        clip_id: spec.clip_id.clone(),
        shape: spec.shape(),
        dtype: CACHE_DTYPE.into(),
        features: Some(cfg.clone()),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))
}

pub fn read_sidecar(dir: &Path, clip_id: &str) -> Result<CacheSidecar> {
    let (json_path, _) = cache_paths(dir, clip_id);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_cache(dir: &Path, clip_id: &str) -> Result<MelSpectrogram> {
    let sidecar = read_sidecar(dir, clip_id)?;
    if sidecar.dtype != CACHE_DTYPE {
        return Err(Error::InvalidInput(format!(
            "cache entry `{clip_id}` has dtype {}, expected {CACHE_DTYPE}",
            sidecar.dtype
        )));
    }
    let (_, bin_path) = cache_paths(dir, clip_id);
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let [rows, cols] = sidecar.shape;
    if bytes.len() != rows * cols * 4 {
        return Err(shape_err!(
            "{} holds {} bytes, sidecar promises {rows}x{cols} f32 values",
            bin_path.display(),
            bytes.len()
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    MelSpectrogram::new(sidecar.clip_id, rows, cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SAMPLE_RATE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new("c", samples, SAMPLE_RATE)
    }

    fn naive_dft_power(x: &[f64], n_fft: usize) -> Vec<f64> {
        (0..=n_fft / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / n_fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn frame_counts() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.frame_len(SAMPLE_RATE).unwrap(), 1000);
        assert_eq!(cfg.hop_len(SAMPLE_RATE).unwrap(), 500);
        let frames = frame_signal(&clip(vec![0.1; 200_000]), &cfg).unwrap();
        assert_eq!(frames.len(), 401);
        assert!(frames.iter().all(|f| f.len() == 1000));

        let short = frame_signal(&clip(vec![0.0; 500]), &cfg).unwrap();
        assert_eq!(short.len(), 2);
        assert!(short.iter().flatten().all(|&v| v == 0.0));

        assert!(frame_signal(&clip(vec![0.0; 499]), &cfg).is_err());
    }

    #[test]
    fn impulse_lands_at_frame_center() {
        let mut x = vec![0.0; 1000];
        x[0] = 1.0;
        let frames = frame_signal(&clip(x), &FeatureConfig::default()).unwrap();
        let hits: Vec<usize> = frames[0]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hits, vec![500]);
    }

    #[test]
    fn reflect_padding_matches_hand_trace() {
        // x = [0, 1, 2, 3], reflect-padded: ... 2 1 | 0 1 2 3 | 2 1 0 1 ...
        let n = 4;
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, n)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn power_spectrum_matches_naive_dft() {
        let cfg = FeatureConfig::default();
        let fe = MelFrontEnd::new(&cfg, SAMPLE_RATE).unwrap();

        let zero = fe.power_spectrum(&[0.0; 1000]).unwrap();
        assert_eq!(zero.len(), 513);
        assert!(zero.iter().all(|&v| v == 0.0));

        let ones = fe.power_spectrum(&[1.0; 1000]).unwrap();
        let wsum: f64 = hann_window(1000).iter().sum();
        assert!((ones[0] - wsum * wsum).abs() < 1e-6 * wsum * wsum);

        // Sinusoid centered on bin 64 of a 1024-point transform.
        let frame: Vec<f32> = (0..1000)
            .map(|n| (2.0 * std::f64::consts::PI * 64.0 * n as f64 / 1024.0).sin() as f32)
            .collect();
        let got = fe.power_spectrum(&frame).unwrap();
        let windowed: Vec<f64> = frame
            .iter()
            .zip(hann_window(1000))
            .map(|(&x, w)| x as f64 * w)
            .collect();
        let want = naive_dft_power(&windowed, 1024);
        let scale = want.iter().cloned().fold(0.0, f64::max);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * scale);
        }
        let peak = got.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 64);
        let near: f64 = got[62..=66].iter().sum();
        let total: f64 = got.iter().sum();
        assert!(near / total > 0.99);
    }

    #[test]
    fn filterbank_shape_and_formula() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg, SAMPLE_RATE).unwrap();
        assert_eq!((fb.n_mels, fb.n_bins), (80, 513));
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);

        // Independent evaluation of one filter from the triangle definition.
        let m = 40;
        let step = hz_to_mel(10_000.0) / 81.0;
        let (l, c, r) = (
            mel_to_hz(step * m as f64),
            mel_to_hz(step * (m + 1) as f64),
            mel_to_hz(step * (m + 2) as f64),
        );
        for k in 0..513 {
            let f = k as f64 * 20_000.0 / 1024.0;
            let want = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            assert!((fb.row(m)[k] - want).abs() < 1e-12);
        }

        for m in 0..fb.n_mels {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0), "filter {m} is empty");
            let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert!(row[..peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));

        let bad = FeatureConfig { fmax: 12_000.0, ..cfg };
        assert!(mel_filterbank(&bad, SAMPLE_RATE).is_err());
    }

    #[test]
    fn spectrogram_geometry_and_floor() {
        let cfg = FeatureConfig::default();
        let silent = log_mel_spectrogram(&clip(vec![0.0; 200_000]), &cfg).unwrap();
        assert_eq!(silent.shape(), [401, 80]);
        assert_eq!(silent.values.len(), 32_080);
        let floor = (1e-10f64).ln() as f32;
        assert!(silent.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn amplitude_scaling_shifts_log_power() {
        let cfg = FeatureConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f32> = (0..20_000).map(|_| rng.gen_range(-0.01f32..0.01)).collect();
        let a = log_mel_spectrogram(&clip(x.clone()), &cfg).unwrap();
        let b = log_mel_spectrogram(&clip(x.iter().map(|v| v * 10.0).collect()), &cfg).unwrap();
        let floor = (1e-10f64).ln() as f32;
        let shift = 2.0 * 10f32.ln();
        // Bins far below the peak are dominated by f32 rounding of the samples.
        let peak = a.values.iter().copied().fold(f32::MIN, f32::max);
        let mut checked = 0;
        for (va, vb) in a.values.iter().zip(&b.values) {
            if *va > floor + 1.0 && *va > peak - 12.0 {
                assert!((vb - va - shift).abs() < 1e-3, "{va} -> {vb}");
                checked += 1;
            }
            assert!(vb >= va);
        }
        assert!(checked > 1000);
        assert_eq!(a, log_mel_spectrogram(&clip(x), &cfg).unwrap());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FeatureConfig::default();
        let x: Vec<f32> = (0..10_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        let spec = log_mel_spectrogram(&AudioClip::new("clip_7", x, SAMPLE_RATE), &cfg).unwrap();
        write_cache(dir.path(), &spec, &cfg).unwrap();
        let back = read_cache(dir.path(), "clip_7").unwrap();
        assert_eq!(back, spec);
        let sidecar = read_sidecar(dir.path(), "clip_7").unwrap();
        assert_eq!(sidecar.shape, [21, 80]);
        assert_eq!(sidecar.dtype, "f32le");
        let raw = fs::read(dir.path().join("clip_7.f32")).unwrap();
        assert_eq!(&raw[..4], &spec.values[0].to_le_bytes());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn frame_count_rule(n in 500usize..6000) {
                let cfg = FeatureConfig::default();
                let frames = frame_signal(&clip(vec![0.25; n]), &cfg).unwrap();
                prop_assert_eq!(frames.len(), n / 500 + 1);
            }

            #[test]
            fn amplification_never_decreases(gain in 1.01f32..8.0, seed in 0u32..1000) {
                let cfg = FeatureConfig::default();
                let x: Vec<f32> = (0..3000)
                    .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32 / u32::MAX as f32 - 0.5) * 0.2)
                    .collect();
                let a = log_mel_spectrogram(&clip(x.clone()), &cfg).unwrap();
                let b = log_mel_spectrogram(&clip(x.iter().map(|v| v * gain).collect()), &cfg).unwrap();
                for (va, vb) in a.values.iter().zip(&b.values) {
                    prop_assert!(vb >= va);
                }
            }
        }
    }
}
