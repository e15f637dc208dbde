//! ROC curves, AUC, standardized partial AUC and per-type reports.
//!
//! The ROC has one vertex per distinct score, swept in descending order, so
//! tied scores form a single diagonal segment. AUC is the trapezoidal area
//! under that curve, which equals the Mann-Whitney probability with ties
//! counted as one half. The partial AUC integrates the curve over
//! `fpr ∈ [0, p]` and applies the McClish standardization, under which a
//! chance classifier scores 0.5 and a perfect one 1.0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::dataset::AnomalyType;
use crate::error::{Error, Result};
use crate::features::MelSpectrogram;

/// False-positive-rate bound of the partial AUC.
pub const DEFAULT_MAX_FPR: f64 = 0.1;

pub const SCORES_HEADER: &str = "clip_id,score,is_anomaly,anomaly_type";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub score: f64,
    pub is_anomaly: bool,
    pub anomaly_type: AnomalyType,
}

impl ScoreRecord {
    pub fn new(clip_id: impl Into<String>, score: f64, anomaly_type: AnomalyType) -> Self {
        Self {
            clip_id: clip_id.into(),
            score,
            is_anomaly: anomaly_type != AnomalyType::None,
            anomaly_type,
        }
    }
}

/// Renders records as `scores.csv`. Scores use the shortest round-trip form.
pub fn scores_to_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.clip_id,
            r.score,
            u8::from(r.is_anomaly),
            r.anomaly_type
        );
    }
    out
}

pub fn parse_scores(text: &str, origin: &Path) -> Result<Vec<ScoreRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORES_HEADER => {}
        _ => return Err(err(1, format!("expected header `{SCORES_HEADER}`"))),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(err(i + 1, format!("expected 4 columns, got {}", cols.len())));
        }
        let score: f64 = cols[1]
            .parse()
            .map_err(|_| err(i + 1, format!("bad score `{}`", cols[1])))?;
        if !score.is_finite() {
            return Err(err(i + 1, format!("score of `{}` is not finite", cols[0])));
        }
        let is_anomaly = match cols[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(i + 1, format!("bad is_anomaly `{other}`"))),
        };
        let anomaly_type: AnomalyType = cols[3].parse().map_err(|m| err(i + 1, m))?;
        if is_anomaly != (anomaly_type != AnomalyType::None) {
            return Err(err(
                i + 1,
                format!("`{}`: is_anomaly disagrees with anomaly_type", cols[0]),
            ));
        }
        records.push(ScoreRecord {
            clip_id: cols[0].to_string(),
            score,
            is_anomaly,
            anomaly_type,
        });
    }
    Ok(records)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    fs::write(path, scores_to_csv(records)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are flagged. The first vertex uses +inf.
    pub threshold: f64,
}

fn class_counts(records: &[ScoreRecord]) -> Result<(usize, usize)> {
    let pos = records.iter().filter(|r| r.is_anomaly).count();
    let neg = records.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(format!(
            "ROC needs both classes, got {pos} anomalous and {neg} normal records"
        )));
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::InvalidInput(format!("score of `{}` is not finite", r.clip_id)));
    }
    Ok((pos, neg))
}

/// ROC vertices from (0, 0) to (1, 1), one per distinct score.
pub fn compute_roc(records: &[ScoreRecord]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(records)?;
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.score, r.is_anomaly)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut roc = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok(roc)
}

/// Trapezoidal area under `roc` over `fpr ∈ [0, max_fpr]`, interpolating
/// linearly at the bound.
pub fn roc_area(roc: &[RocPoint], max_fpr: f64) -> f64 {
    let mut area = 0.0;
    for w in roc.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.fpr >= max_fpr {
            break;
        }
        if b.fpr <= max_fpr {
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
        } else {
            let t = a.tpr + (b.tpr - a.tpr) * (max_fpr - a.fpr) / (b.fpr - a.fpr);
            area += (max_fpr - a.fpr) * (a.tpr + t) / 2.0;
            break;
        }
    }
    area
}

fn check_max_fpr(max_fpr: f64) -> Result<()> {
    if max_fpr > 0.0 && max_fpr <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "pAUC bound must lie in (0, 1], got {max_fpr}"
        )))
    }
}

/// McClish standardization of a partial area over `[0, max_fpr]`.
pub fn standardize_partial_area(area: f64, max_fpr: f64) -> f64 {
    let min_area = max_fpr * max_fpr / 2.0;
    0.5 * (1.0 + (area - min_area) / (max_fpr - min_area))
}

pub fn compute_auc(records: &[ScoreRecord]) -> Result<f64> {
    Ok(roc_area(&compute_roc(records)?, 1.0))
}

pub fn compute_pauc(records: &[ScoreRecord], max_fpr: f64) -> Result<f64> {
    check_max_fpr(max_fpr)?;
    let roc = compute_roc(records)?;
    Ok(standardize_partial_area(roc_area(&roc, max_fpr), max_fpr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub auc: f64,
    pub pauc: f64,
    pub n_pos: usize,
}

/// Metrics of one model. `roc` is stored in `roc.csv`, not `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub auc: f64,
    pub pauc: f64,
    pub p: f64,
    pub per_type: BTreeMap<String, TypeMetrics>,
    pub n_neg: usize,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// Overall metrics on all records; per-type metrics on the anomalies of each
/// type against every normal record.
pub fn per_type_report(model: &str, records: &[ScoreRecord], max_fpr: f64) -> Result<EvalReport> {
    check_max_fpr(max_fpr)?;
    let roc = compute_roc(records)?;
    let auc = roc_area(&roc, 1.0);
    let pauc = standardize_partial_area(roc_area(&roc, max_fpr), max_fpr);
    let normals: Vec<&ScoreRecord> = records.iter().filter(|r| !r.is_anomaly).collect();
    let mut per_type = BTreeMap::new();
    for t in AnomalyType::ANOMALOUS {
        let mut subset: Vec<ScoreRecord> = records.iter().filter(|r| r.anomaly_type == t).cloned().collect();
        if subset.is_empty() {
            log::warn!("{model}: no `{t}` anomalies, omitted from the per-type report");
            continue;
        }
        let n_pos = subset.len();
        subset.extend(normals.iter().map(|r| (*r).clone()));
        let roc_t = compute_roc(&subset)?;
        per_type.insert(
            t.as_str().to_string(),
            TypeMetrics {
                auc: roc_area(&roc_t, 1.0),
                pauc: standardize_partial_area(roc_area(&roc_t, max_fpr), max_fpr),
                n_pos,
            },
        );
    }
    Ok(EvalReport {
        model: model.to_string(),
        auc,
        pauc,
        p: max_fpr,
        per_type,
        n_neg: normals.len(),
        roc,
    })
}

pub fn roc_to_csv(roc: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in roc {
        let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    out
}

pub fn parse_roc(text: &str, origin: &Path) -> Result<Vec<RocPoint>> {
    let mut roc = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if v.len() != 3 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 columns, got {}", v.len()),
            });
        }
        roc.push(RocPoint {
            fpr: v[0],
            tpr: v[1],
            threshold: v[2],
        });
    }
    Ok(roc)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Reads `report.json` and `roc.csv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut report: EvalReport = serde_json::from_str(&text)?;
        let roc_path = dir.join("roc.csv");
        let roc_text = fs::read_to_string(&roc_path).map_err(|e| Error::io(&roc_path, e))?;
        report.roc = parse_roc(&roc_text, &roc_path)?;
        Ok(report)
    }
}

/// Input, reconstruction and absolute error of one clip.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub input: MelSpectrogram,
    pub output: MelSpectrogram,
}

/// Grayscale image with time on the horizontal axis and the lowest mel band
/// at the bottom, min-max scaled to 0..=255. A constant map is all black.
pub fn spectrogram_image(n_frames: usize, n_mels: usize, values: &[f32]) -> GrayImage {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    GrayImage::from_fn(n_frames as u32, n_mels as u32, |x, y| {
        let v = values[x as usize * n_mels + (n_mels - 1 - y as usize)];
        let level = if range > 0.0 {
            ((v - lo) / range * 255.0).round() as u8
        } else {
            0
        };
        Luma([level])
    })
}

/// Writes `roc.csv`, `report.json` and, per reconstruction,
/// `<clip>_input.png`, `<clip>_recon.png` and `<clip>_error.png`.
pub fn export_artifacts(dir: &Path, report: &EvalReport, recons: &[Reconstruction]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let roc_path = dir.join("roc.csv");
    fs::write(&roc_path, roc_to_csv(&report.roc)).map_err(|e| Error::io(&roc_path, e))?;
    written.push(roc_path);
    let report_path = dir.join("report.json");
    fs::write(&report_path, report.to_json()?).map_err(|e| Error::io(&report_path, e))?;
    written.push(report_path);
    for r in recons {
        if r.input.shape() != r.output.shape() {
            return Err(crate::error::shape_err!(
                "`{}`: input {:?} and reconstruction {:?} differ",
                r.input.clip_id,
                r.input.shape(),
                r.output.shape()
            ));
        }
        let [t, m] = r.input.shape();
        let error: Vec<f32> = r
            .input
            .values
            .iter()
            .zip(&r.output.values)
            .map(|(a, b)| (a - b).abs())
            .collect();
        for (suffix, values) in [
            ("input", &r.input.values),
            ("recon", &r.output.values),
            ("error", &error),
        ] {
            let path = dir.join(format!("{}_{suffix}.png", r.input.clip_id));
            spectrogram_image(t, m, values).save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Side-by-side AUC/pAUC table, one row per model, with per-type columns
/// when `per_type` is set.
pub fn comparison_table(reports: &[EvalReport], per_type: bool) -> String {
    let types: Vec<&str> = if per_type {
        AnomalyType::ANOMALOUS
            .iter()
            .map(|t| t.as_str())
            .filter(|t| reports.iter().any(|r| r.per_type.contains_key(*t)))
            .collect()
    } else {
        Vec::new()
    };
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>6}  {:>6}", "model", "AUC", "pAUC");
    for t in &types {
        let _ = write!(out, "  {:>20}", format!("{t} AUC/pAUC"));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<width$}  {:>6.3}  {:>6.3}", r.model, r.auc, r.pauc);
        for t in &types {
            let cell = match r.per_type.get(*t) {
                Some(m) => format!("{:.3}/{:.3}", m.auc, m.pauc),
                None => "-".to_string(),
            };
            let _ = write!(out, "  {cell:>20}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rec(score: f64, anomaly: bool) -> ScoreRecord {
        let t = if anomaly {
            AnomalyType::BrokenBoard
        } else {
            AnomalyType::None
        };
        ScoreRecord::new("c", score, t)
    }

    fn records(scores: &[(f64, bool)]) -> Vec<ScoreRecord> {
        scores.iter().map(|&(s, a)| rec(s, a)).collect()
    }

    fn pairwise_auc(r: &[ScoreRecord]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for p in r.iter().filter(|r| r.is_anomaly) {
            for n in r.iter().filter(|r| !r.is_anomaly) {
                pairs += 1.0;
                wins += if p.score > n.score {
                    1.0
                } else if p.score == n.score {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / pairs
    }

    #[test]
    fn two_point_roc() {
        let roc = compute_roc(&records(&[(0.9, true), (0.1, false)])).unwrap();
        let v: Vec<(f64, f64)> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(v, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(roc[0].threshold, f64::INFINITY);
        assert_eq!(roc[1].threshold, 0.9);
    }

    #[test]
    fn total_tie_is_the_diagonal() {
        let r = records(&[(1.0, true), (1.0, false), (1.0, false), (1.0, true)]);
        let roc = compute_roc(&r).unwrap();
        assert_eq!(roc.len(), 2);
        assert_eq!(compute_auc(&r).unwrap(), 0.5);
        assert!((compute_pauc(&r, 0.1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted() {
        let r = records(&[(3.0, true), (2.0, true), (1.0, false), (0.0, false)]);
        assert_eq!(compute_auc(&r).unwrap(), 1.0);
        for p in [0.01, 0.1, 0.5, 1.0] {
            assert!((compute_pauc(&r, p).unwrap() - 1.0).abs() < 1e-12);
        }
        let inv: Vec<ScoreRecord> = r
            .iter()
            .map(|x| ScoreRecord {
                score: -x.score,
                ..x.clone()
            })
            .collect();
        assert_eq!(compute_auc(&inv).unwrap(), 0.0);
    }

    #[test]
    fn single_class_and_bad_bound_are_errors() {
        assert!(compute_roc(&records(&[(1.0, true), (2.0, true)])).is_err());
        assert!(compute_auc(&records(&[(1.0, false)])).is_err());
        let r = records(&[(1.0, true), (0.0, false)]);
        assert!(compute_pauc(&r, 0.0).is_err());
        assert!(compute_pauc(&r, 1.5).is_err());
        assert!(compute_auc(&records(&[(f64::NAN, true), (0.0, false)])).is_err());
    }

    #[test]
    fn roc_matches_threshold_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r: Vec<ScoreRecord> = (0..50)
            .map(|_| rec((rng.gen_range(0..20) as f64) / 4.0, rng.gen_bool(0.4)))
            .collect();
        let roc = compute_roc(&r).unwrap();
        let mut thresholds: Vec<f64> = r.iter().map(|x| x.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let pos = r.iter().filter(|x| x.is_anomaly).count() as f64;
        let neg = r.len() as f64 - pos;
        assert_eq!(roc.len(), thresholds.len() + 1);
        for (p, t) in roc[1..].iter().zip(thresholds) {
            let tp = r.iter().filter(|x| x.is_anomaly && x.score >= t).count() as f64;
            let fp = r.iter().filter(|x| !x.is_anomaly && x.score >= t).count() as f64;
            assert_eq!((p.fpr, p.tpr, p.threshold), (fp / neg, tp / pos, t));
        }
    }

    #[test]
    fn chance_pauc_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<ScoreRecord> = (0..20_000).map(|i| rec(rng.gen(), i % 2 == 0)).collect();
        let p = compute_pauc(&r, 0.1).unwrap();
        assert!((0.45..=0.55).contains(&p), "{p}");
    }

    #[test]
    fn full_range_pauc_is_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r: Vec<ScoreRecord> = (0..40).map(|_| rec(rng.gen(), rng.gen_bool(0.5))).collect();
        assert!((compute_pauc(&r, 1.0).unwrap() - compute_auc(&r).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn per_type_uses_all_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut r = Vec::new();
        for i in 0..200 {
            r.push(ScoreRecord::new(format!("n{i}"), rng.gen(), AnomalyType::None));
        }
        for i in 0..200 {
            r.push(ScoreRecord::new(
                format!("a{i}"),
                2.0 + rng.gen::<f64>(),
                AnomalyType::BrokenBoard,
            ));
            r.push(ScoreRecord::new(format!("b{i}"), rng.gen(), AnomalyType::BoardStuck));
        }
        let report = per_type_report("m", &r, 0.1).unwrap();
        assert_eq!(report.per_type.len(), 2);
        assert_eq!(report.n_neg, 200);
        assert_eq!(report.per_type["broken_board"].auc, 1.0);
        assert_eq!(report.per_type["broken_board"].n_pos, 200);
        assert!((report.per_type["board_stuck"].auc - 0.5).abs() < 0.07);
        assert_eq!(report.auc, compute_auc(&r).unwrap());
        let only: Vec<ScoreRecord> = r
            .iter()
            .filter(|x| x.anomaly_type != AnomalyType::BoardStuck)
            .cloned()
            .collect();
        assert_eq!(per_type_report("m", &only, 0.1).unwrap().per_type.len(), 1);
    }

    #[test]
    fn scores_csv_round_trip() {
        let r = vec![
            ScoreRecord::new("a", 0.1 + 0.2, AnomalyType::None),
            ScoreRecord::new("b", 1e-300, AnomalyType::UnevenOrThick),
        ];
        let text = scores_to_csv(&r);
        assert!(text.starts_with("clip_id,score,is_anomaly,anomaly_type\na,0.30000000000000004,0,none\n"));
        assert_eq!(parse_scores(&text, Path::new("s.csv")).unwrap(), r);
        assert!(parse_scores("clip_id,score\n", Path::new("s.csv")).is_err());
        let bad = format!("{SCORES_HEADER}\na,1.0,1,none\n");
        assert!(parse_scores(&bad, Path::new("s.csv")).is_err());
        let nan = format!("{SCORES_HEADER}\na,NaN,0,none\n");
        assert!(parse_scores(&nan, Path::new("s.csv")).is_err());
    }

    #[test]
    fn artifacts_round_trip_and_images() {
        let dir = tempfile::tempdir().unwrap();
        let r = records(&[(0.9, true), (0.5, false), (0.7, true), (0.1, false)]);
        let report = per_type_report("skip_cae", &r, 0.1).unwrap();
        let files = export_artifacts(dir.path(), &report, &[]).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(EvalReport::load(dir.path()).unwrap(), report);

        let input = MelSpectrogram::new("clip", 3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let recon = Reconstruction {
            input: input.clone(),
            output: input.clone(),
        };
        let files = export_artifacts(dir.path(), &report, &[recon]).unwrap();
        assert_eq!(files.len(), 5);
        let err = image::open(dir.path().join("clip_error.png")).unwrap().to_luma8();
        assert!(err.pixels().all(|p| p.0[0] == 0));
        let img = image::open(dir.path().join("clip_input.png")).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (3, 2));
        // Frame 0, band 0 is the minimum and sits bottom-left.
        assert_eq!(img.get_pixel(0, 1).0[0], 0);
        assert_eq!(img.get_pixel(2, 0).0[0], 255);
    }

    #[test]
    fn comparison_table_lists_models() {
        let r = records(&[(0.9, true), (0.5, false)]);
        let a = per_type_report("skip_cae", &r, 0.1).unwrap();
        let b = per_type_report("dcase_ae", &r, 0.1).unwrap();
        let t = comparison_table(&[a, b], true);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("skip_cae") && t.contains("broken_board AUC/pAUC") && t.contains("1.000/1.000"));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise(scores in prop::collection::vec((0u8..12, any::<bool>()), 2..50)) {
            let mut r: Vec<ScoreRecord> = scores.iter().map(|&(s, a)| rec(s as f64 / 3.0, a)).collect();
            r[0].is_anomaly = true;
            r[0].anomaly_type = AnomalyType::BrokenBoard;
            r[1].is_anomaly = false;
            r[1].anomaly_type = AnomalyType::None;
            let auc = compute_auc(&r).unwrap();
            prop_assert!((auc - pairwise_auc(&r)).abs() < 1e-12);
            let shifted: Vec<ScoreRecord> = r.iter().map(|x| ScoreRecord { score: (x.score * 2.0).exp() + 1.0, ..x.clone() }).collect();
            prop_assert!((compute_auc(&shifted).unwrap() - auc).abs() < 1e-12);
            let neg: Vec<ScoreRecord> = r.iter().map(|x| ScoreRecord { score: -x.score, ..x.clone() }).collect();
            prop_assert!((compute_auc(&neg).unwrap() - (1.0 - auc)).abs() < 1e-12);
            let roc = compute_roc(&r).unwrap();
            prop_assert!(roc.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
            prop_assert_eq!((roc.last().unwrap().fpr, roc.last().unwrap().tpr), (1.0, 1.0));
            let pauc = compute_pauc(&r, 0.1).unwrap();
            prop_assert!((0.0..=1.0).contains(&pauc));
        }
    }
}
