//! Recordings, labels and the train/validation split.
//!
//! Clips are 20 kHz mono WAV files (16-bit PCM or 32-bit float). Labels
//! come from a CSV manifest with the fixed header
//! `clip_id,relative_path,split,is_anomaly,anomaly_type,board_type`.
//!
//! The validation split is drawn by shuffling the training clip ids in
//! manifest order with a Fisher-Yates shuffle driven by `ChaCha8Rng`
//! seeded from the caller's seed; the first `floor(fraction * n)` shuffled
//! ids form the validation set. ChaCha output is platform independent, so
//! the split is reproducible everywhere.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate accepted by the loader.
pub const SAMPLE_RATE: u32 = 20_000;

/// Header line of the label manifest.
pub const MANIFEST_HEADER: &str = "clip_id,relative_path,split,is_anomaly,anomaly_type,board_type";

/// A mono recording with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(clip_id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            clip_id: clip_id.into(),
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyType {
    None,
    BrokenBoard,
    BoardStuck,
    UnevenOrThick,
}

impl AnomalyType {
    pub const ANOMALOUS: [AnomalyType; 3] = [
        AnomalyType::BrokenBoard,
        AnomalyType::BoardStuck,
        AnomalyType::UnevenOrThick,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::None => "none",
            AnomalyType::BrokenBoard => "broken_board",
            AnomalyType::BoardStuck => "board_stuck",
            AnomalyType::UnevenOrThick => "uneven_or_thick",
        }
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AnomalyType::None),
            "broken_board" => Ok(AnomalyType::BrokenBoard),
            "board_stuck" => Ok(AnomalyType::BoardStuck),
            "uneven_or_thick" => Ok(AnomalyType::UnevenOrThick),
            other => Err(format!("unknown anomaly_type `{other}`")),
        }
    }
}

/// Lumber dimensions of the boards heard in a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoardType {
    #[serde(rename = "2x3")]
    B2x3,
    #[serde(rename = "2x4")]
    B2x4,
    #[serde(rename = "2x6")]
    B2x6,
    #[serde(rename = "unknown")]
    Unknown,
}

impl BoardType {
    pub fn as_str(self) -> &'static str {
        match self {
            BoardType::B2x3 => "2x3",
            BoardType::B2x4 => "2x4",
            BoardType::B2x6 => "2x6",
            BoardType::Unknown => "unknown",
        }
    }
}

impl fmt::Display for BoardType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoardType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2x3" => Ok(BoardType::B2x3),
            "2x4" => Ok(BoardType::B2x4),
            "2x6" => Ok(BoardType::B2x6),
            "unknown" => Ok(BoardType::Unknown),
            other => Err(format!("unknown board_type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipLabel {
    pub clip_id: String,
    pub relative_path: PathBuf,
    pub split: Split,
    pub is_anomaly: bool,
    pub anomaly_type: AnomalyType,
    pub board_type: BoardType,
}

impl ClipLabel {
    /// Checks the label-level invariants: the anomaly flag agrees with the
    /// anomaly type and training clips are normal.
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidLabel {
            clip_id: self.clip_id.clone(),
            message: message.to_string(),
        };
        if self.clip_id.is_empty() {
            return Err(invalid("empty clip id"));
        }
        if self.is_anomaly != (self.anomaly_type != AnomalyType::None) {
            return Err(invalid("is_anomaly disagrees with anomaly_type"));
        }
        if self.split == Split::Train && self.is_anomaly {
            return Err(invalid("training clips must be normal"));
        }
        Ok(())
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.clip_id,
            self.relative_path.display(),
            self.split.as_str(),
            u8::from(self.is_anomaly),
            self.anomaly_type,
            self.board_type
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ClipLabel>,
    pub root_path: PathBuf,
}

/// Recording counts per split, board type and anomaly type.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestSummary {
    pub train: usize,
    pub eval: usize,
    pub anomalies: usize,
    pub per_board: BTreeMap<(Split, BoardType), usize>,
    pub per_anomaly: BTreeMap<AnomalyType, usize>,
}

impl Manifest {
    /// Builds a manifest from entries, enforcing unique ids and label invariants.
    pub fn new(entries: Vec<ClipLabel>, root_path: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for entry in &entries {
            entry.validate()?;
            if !seen.insert(entry.clip_id.as_str()) {
                return Err(Error::DuplicateClip(entry.clip_id.clone()));
            }
        }
        Ok(Self {
            entries,
            root_path: root_path.into(),
        })
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipLabel> {
        self.entries.iter().find(|e| e.clip_id == clip_id)
    }

    pub fn by_id(&self) -> BTreeMap<&str, &ClipLabel> {
        self.entries.iter().map(|e| (e.clip_id.as_str(), e)).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipLabel> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn audio_path(&self, entry: &ClipLabel) -> PathBuf {
        self.root_path.join(&entry.relative_path)
    }

    /// Fails on the first entry whose audio file is missing.
    pub fn validate_files(&self) -> Result<()> {
        for entry in &self.entries {
            let path = self.audio_path(entry);
            if !path.is_file() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "audio file not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> ManifestSummary {
        let mut s = ManifestSummary::default();
        for e in &self.entries {
            match e.split {
                Split::Train => s.train += 1,
                Split::Eval => s.eval += 1,
            }
            if e.is_anomaly {
                s.anomalies += 1;
            }
            *s.per_board.entry((e.split, e.board_type)).or_default() += 1;
            *s.per_anomaly.entry(e.anomaly_type).or_default() += 1;
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.entries.len() + 1));
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&e.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Parses manifest CSV text. `origin` is only used in error messages.
pub fn parse_manifest(text: &str, origin: &Path, root_path: &Path) -> Result<Manifest> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l.trim()),
            None => return Err(parse_err(1, "empty manifest".into())),
        }
    };
    if header.1 != MANIFEST_HEADER {
        return Err(parse_err(
            header.0,
            format!("expected header `{MANIFEST_HEADER}`, found `{}`", header.1),
        ));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(parse_err(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let split = fields[2].parse::<Split>().map_err(|m| parse_err(line_no, m))?;
        let is_anomaly = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    line_no,
                    format!("is_anomaly must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let anomaly_type = fields[4].parse::<AnomalyType>().map_err(|m| parse_err(line_no, m))?;
        let board_type = fields[5].parse::<BoardType>().map_err(|m| parse_err(line_no, m))?;
        let label = ClipLabel {
            clip_id: fields[0].to_string(),
            relative_path: PathBuf::from(fields[1]),
            split,
            is_anomaly,
            anomaly_type,
            board_type,
        };
        label.validate().map_err(|e| parse_err(line_no, e.to_string()))?;
        if !seen.insert(label.clip_id.clone()) {
            return Err(parse_err(line_no, Error::DuplicateClip(label.clip_id).to_string()));
        }
        entries.push(label);
    }
    Ok(Manifest {
        entries,
        root_path: root_path.to_path_buf(),
    })
}

/// Reads a manifest CSV. Audio paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, path, root)
}

/// Decodes a mono 20 kHz WAV file. 16-bit PCM is scaled by 1/32768.
pub fn load_clip(path: &Path) -> Result<AudioClip> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let unsupported = |message: String| Error::UnsupportedAudio {
        path: path.to_path_buf(),
        message,
    };

    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(format!("{} channels (mono required)", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(format!(
            "sample rate {} Hz (expected {SAMPLE_RATE} Hz, resample externally)",
            spec.sample_rate
        )));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>().map_err(wav_err)?,
        (format, bits) => {
            return Err(unsupported(format!(
                "{bits}-bit {format:?} samples (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    if samples.is_empty() {
        return Err(unsupported("no samples".into()));
    }
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip::new(clip_id, samples, spec.sample_rate))
}

/// Writes a clip as 16-bit PCM. Samples are clamped to the representable range.
pub fn write_clip_pcm16(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Writes a clip as 32-bit IEEE float.
pub fn write_clip_f32(clip: &AudioClip, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in &clip.samples {
        writer.write_sample(s).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

/// Splits the training clips of `manifest` into training and validation ids.
/// Both parts keep at least one clip.
pub fn split_train_val(manifest: &Manifest, fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut ids: Vec<String> = manifest.split(Split::Train).map(|e| e.clip_id.clone()).collect();
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training split has {} clips, need at least 2",
            ids.len()
        )));
    }
    let n_val = ((fraction * ids.len() as f64).floor() as usize).clamp(1, ids.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let train = ids.split_off(n_val);
    Ok((train, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(id: &str, split: Split, anomaly: AnomalyType) -> ClipLabel {
        ClipLabel {
            clip_id: id.to_string(),
            relative_path: PathBuf::from(format!("{id}.wav")),
            split,
            is_anomaly: anomaly != AnomalyType::None,
            anomaly_type: anomaly,
            board_type: BoardType::B2x6,
        }
    }

    fn parse(text: &str) -> Result<Manifest> {
        parse_manifest(text, Path::new("m.csv"), Path::new("."))
    }

    #[test]
    fn minimal_manifest_parses() {
        let text = format!("{MANIFEST_HEADER}\na,train/a.wav,train,0,none,2x4\nb,eval/b.wav,eval,1,board_stuck,2x6\n");
        let m = parse(&text).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].anomaly_type, AnomalyType::BoardStuck);
        assert_eq!(m.entries[0].board_type, BoardType::B2x4);
        assert_eq!(parse(&m.to_csv()).unwrap(), m);
    }

    #[test]
    fn anomalous_training_row_is_rejected_with_line_number() {
        let text = format!("{MANIFEST_HEADER}\nok,a.wav,train,0,none,2x4\nbad,b.wav,train,1,broken_board,2x4\n");
        match parse(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("normal"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_bad_enums_are_rejected() {
        let dup = format!("{MANIFEST_HEADER}\na,a.wav,train,0,none,2x4\na,b.wav,eval,0,none,2x4\n");
        assert!(matches!(parse(&dup), Err(Error::Parse { line: 3, .. })));
        let bad = format!("{MANIFEST_HEADER}\na,a.wav,test,0,none,2x4\n");
        assert!(matches!(parse(&bad), Err(Error::Parse { line: 2, .. })));
        let flag = format!("{MANIFEST_HEADER}\na,a.wav,eval,1,none,2x4\n");
        assert!(parse(&flag).is_err());
        assert!(parse("clip,path\n").is_err());
        let dup_entries = vec![
            label("x", Split::Train, AnomalyType::None),
            label("x", Split::Eval, AnomalyType::None),
        ];
        assert!(matches!(Manifest::new(dup_entries, "."), Err(Error::DuplicateClip(_))));
    }

    #[test]
    fn full_dataset_counts() {
        // Board and anomaly counts of the published planer dataset.
        let mut entries = Vec::new();
        let mut n = 0;
        for (board, count) in [(BoardType::B2x3, 90), (BoardType::B2x4, 1897), (BoardType::B2x6, 2340)] {
            for _ in 0..count {
                let mut l = label(&format!("t{n}"), Split::Train, AnomalyType::None);
                l.board_type = board;
                entries.push(l);
                n += 1;
            }
        }
        let anomalies = [
            (AnomalyType::BrokenBoard, 4),
            (AnomalyType::BoardStuck, 29),
            (AnomalyType::UnevenOrThick, 72),
        ];
        let mut eval = 0;
        for (kind, count) in anomalies {
            for _ in 0..count {
                entries.push(label(&format!("e{eval}"), Split::Eval, kind));
                eval += 1;
            }
        }
        while eval < 3235 {
            entries.push(label(&format!("e{eval}"), Split::Eval, AnomalyType::None));
            eval += 1;
        }
        let m = parse(&Manifest::new(entries, ".").unwrap().to_csv()).unwrap();
        let s = m.summary();
        assert_eq!((s.train, s.eval, s.anomalies), (4327, 3235, 105));
        assert_eq!(s.per_board[&(Split::Eval, BoardType::B2x6)], 3235);
        assert_eq!(s.per_anomaly[&AnomalyType::BoardStuck], 29);

        let (train, val) = split_train_val(&m, 0.1, 0).unwrap();
        assert_eq!((train.len(), val.len()), (3895, 432));
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let entries: Vec<_> = (0..10)
            .map(|i| label(&format!("c{i}"), Split::Train, AnomalyType::None))
            .chain(std::iter::once(label("e", Split::Eval, AnomalyType::BrokenBoard)))
            .collect();
        let m = Manifest::new(entries, ".").unwrap();
        let (t1, v1) = split_train_val(&m, 0.1, 7).unwrap();
        let (t2, v2) = split_train_val(&m, 0.1, 7).unwrap();
        assert_eq!((t1.len(), v1.len()), (9, 1));
        assert_eq!((&t1, &v1), (&t2, &v2));
        let mut all: Vec<_> = t1.iter().chain(&v1).cloned().collect();
        all.sort();
        let mut expected: Vec<_> = (0..10).map(|i| format!("c{i}")).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_errors() {
        let one = Manifest::new(vec![label("a", Split::Train, AnomalyType::None)], ".").unwrap();
        assert!(split_train_val(&one, 0.1, 0).is_err());
        let two = Manifest::new(
            vec![
                label("a", Split::Train, AnomalyType::None),
                label("b", Split::Train, AnomalyType::None),
            ],
            ".",
        )
        .unwrap();
        assert!(split_train_val(&two, 0.0, 0).is_err());
        assert!(split_train_val(&two, 1.0, 0).is_err());
    }

    #[test]
    fn wav_loading() {
        let dir = tempfile::tempdir().unwrap();
        let ten_s = AudioClip::new(
            "tone",
            (0..200_000).map(|i| 0.5 * (i as f32 * 0.01).sin()).collect(),
            SAMPLE_RATE,
        );
        let path = dir.path().join("tone.wav");
        write_clip_pcm16(&ten_s, &path).unwrap();
        let loaded = load_clip(&path).unwrap();
        assert_eq!(loaded.samples.len(), 200_000);
        assert_eq!(loaded.clip_id, "tone");
        assert_eq!(loaded, load_clip(&path).unwrap());

        let silence = AudioClip::new("s", vec![0.0; 20_000], SAMPLE_RATE);
        let path = dir.path().join("s.wav");
        write_clip_f32(&silence, &path).unwrap();
        let loaded = load_clip(&path).unwrap();
        assert_eq!(loaded.samples, vec![0.0; 20_000]);

        let stereo = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let path = dir.path().join("stereo.wav");
        let mut w = hound::WavWriter::create(&path, stereo).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(load_clip(&path), Err(Error::UnsupportedAudio { .. })));

        let rate = AudioClip::new("r", vec![0.0; 100], 16_000);
        let path = dir.path().join("r.wav");
        write_clip_pcm16(&rate, &path).unwrap();
        assert!(matches!(load_clip(&path), Err(Error::UnsupportedAudio { .. })));

        let path = dir.path().join("missing.wav");
        assert!(matches!(load_clip(&path), Err(Error::Io { .. })));
        fs::write(dir.path().join("junk.wav"), b"not a wav").unwrap();
        assert!(load_clip(&dir.path().join("junk.wav")).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn pcm16_round_trip(samples in proptest::collection::vec(-1.0f32..0.9999, 1..400)) {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("x.wav");
                let clip = AudioClip::new("x", samples.clone(), SAMPLE_RATE);
                write_clip_pcm16(&clip, &path).unwrap();
                let back = load_clip(&path).unwrap();
                prop_assert_eq!(back.samples.len(), samples.len());
                for (a, b) in back.samples.iter().zip(&samples) {
                    prop_assert!((a - b).abs() <= 1.0 / 32768.0);
                }
            }

            #[test]
            fn split_partitions_train_ids(n in 2usize..60, seed in any::<u64>(), fraction in 0.05f64..0.95) {
                let entries: Vec<_> = (0..n)
                    .map(|i| label(&format!("c{i}"), Split::Train, AnomalyType::None))
                    .collect();
                let m = Manifest::new(entries, ".").unwrap();
                let (train, val) = split_train_val(&m, fraction, seed).unwrap();
                prop_assert_eq!(val.len(), ((fraction * n as f64).floor() as usize).clamp(1, n - 1));
                let t: HashSet<_> = train.iter().collect();
                let v: HashSet<_> = val.iter().collect();
                prop_assert!(t.is_disjoint(&v));
                prop_assert_eq!(t.len() + v.len(), n);
            }
        }
    }
}
