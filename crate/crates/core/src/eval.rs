//! Accuracy evaluation on corpora with ground truth, the scripted oracle
//! annotator, and the network-vs-ratio-baseline comparison.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{AnnotationRecord, AnnotationStore, DatasetManifest, FrameEntry, LabeledAnnotation, Split};
use crate::error::{Error, Result};
use crate::neural::{
    linear_baseline_fit, linear_baseline_predict, mlp_train, MlpModel, TrainConfig, TrainOutcome,
    TrainingRecord,
};
use crate::pipeline::{
    analyze_response, apply_threshold, average_intensity, count_peaks, enhance, features, PeakReport,
    PipelineConfig, ResponseMap,
};
use crate::raster::{load_image, GrayImage};
use crate::synth::GroundTruth;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub truth: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
}

/// Greedy one-to-one matching: the closest remaining `(pred, truth)` pair
/// within `tol` is taken first; ties go to the lower prediction index, then
/// the lower truth index.
pub fn match_centroids(pred: &[(f64, f64)], truth: &[(f64, f64)], tol: f64) -> Result<MatchResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance", format!("must be > 0, got {tol}")));
    }
    let mut candidates = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt();
            if d <= tol {
                candidates.push(MatchPair { pred: i, truth: j, distance: d });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.pred.cmp(&b.pred))
            .then(a.truth.cmp(&b.truth))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !pred_used[c.pred] && !truth_used[c.truth] {
            pred_used[c.pred] = true;
            truth_used[c.truth] = true;
            pairs.push(c);
        }
    }
    let matched = pairs.len();
    Ok(MatchResult {
        pairs,
        matched,
        missed: truth.len() - matched,
        spurious: pred.len() - matched,
    })
}

pub fn match_peaks(pred: &PeakReport, truth: &GroundTruth, tol: f64) -> Result<MatchResult> {
    match_centroids(&pred.centroids(), &truth.centroids(), tol)
}

/// Scripted stand-in for a human annotator: the midpoint between the weakest
/// pit peak (lowest per-pit maximum of the response inside the pit) and the
/// strongest response farther than `a + disk_radius` from every pit center.
/// Without pits the threshold sits 5% above the strongest response.
pub fn oracle_threshold(resp: &ResponseMap, truth: &GroundTruth, cfg: &PipelineConfig) -> f64 {
    let img = resp.image();
    let (w, h) = img.dims();
    let reach = cfg.disk_radius();
    let mut strongest: f64 = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64, c as f64);
            let far = truth.tracks.iter().all(|t| {
                let d = ((t.centroid[0] - y).powi(2) + (t.centroid[1] - x).powi(2)).sqrt();
                d > t.semi_axes[0] + reach
            });
            if far {
                strongest = strongest.max(img.get(r, c));
            }
        }
    }
    let mut weakest = f64::INFINITY;
    for t in &truth.tracks {
        let a = t.semi_axes[0];
        let clip = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64) as usize;
        let (r0, r1) = (clip((t.centroid[0] - a).floor(), h), clip((t.centroid[0] + a).ceil(), h));
        let (c0, c1) = (clip((t.centroid[1] - a).floor(), w), clip((t.centroid[1] + a).ceil(), w));
        let mut peak = f64::NEG_INFINITY;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if t.contains(r as f64, c as f64) {
                    peak = peak.max(img.get(r, c));
                }
            }
        }
        if peak.is_finite() {
            weakest = weakest.min(peak);
        }
    }
    if !weakest.is_finite() {
        weakest = 1.1 * strongest;
    }
    0.5 * (weakest + strongest)
}

pub fn load_frame(manifest: &DatasetManifest, entry: &FrameEntry) -> Result<(GrayImage, GroundTruth)> {
    let img = load_image(manifest.image_path(entry))?;
    let truth = GroundTruth::load(manifest.truth_path(entry))?;
    Ok((img, truth))
}

fn frames_sorted(manifest: &DatasetManifest, split: Split) -> Vec<&FrameEntry> {
    let mut frames: Vec<_> = manifest.frames_in(split).collect();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    frames
}

/// Annotates every training frame of `manifest` with [`oracle_threshold`].
/// Returns the records written, ordered by frame id.
pub fn oracle_annotate(
    manifest: &DatasetManifest,
    store: &AnnotationStore,
    cfg: &PipelineConfig,
) -> Result<Vec<AnnotationRecord>> {
    let hash = cfg.config_hash();
    let records = frames_sorted(manifest, Split::Train)
        .par_iter()
        .map(|entry| -> Result<AnnotationRecord> {
            let (img, truth) = load_frame(manifest, entry)?;
            let resp = enhance(&img, cfg)?;
            let t = oracle_threshold(&resp, &truth, cfg);
            Ok(AnnotationRecord::now(&entry.frame_id, average_intensity(&resp), t, &hash))
        })
        .collect::<Result<Vec<_>>>()?;
    store.record_all(manifest, records.clone())?;
    Ok(records)
}

/// Training records from annotated train-split frames made with `config_hash`.
pub fn training_records(annotations: &[LabeledAnnotation], config_hash: &str) -> Vec<TrainingRecord> {
    annotations
        .iter()
        .filter(|a| a.split == Split::Train && a.record.config_hash == config_hash)
        .map(|a| TrainingRecord {
            frame_id: a.record.frame_id.clone(),
            features: vec![a.record.average_intensity],
            manual_threshold: a.record.manual_threshold,
        })
        .collect()
}

/// Every training frame must carry an annotation made with `cfg`.
fn require_complete(
    manifest: &DatasetManifest,
    annotations: &[LabeledAnnotation],
    cfg: &PipelineConfig,
) -> Result<Vec<TrainingRecord>> {
    let hash = cfg.config_hash();
    for entry in frames_sorted(manifest, Split::Train) {
        let mine: Vec<_> = annotations
            .iter()
            .filter(|a| a.record.frame_id == entry.frame_id)
            .collect();
        if mine.is_empty() {
            return Err(Error::MissingAnnotation(entry.frame_id.clone()));
        }
        if !mine.iter().any(|a| a.record.config_hash == hash) {
            return Err(Error::ConfigMismatch {
                frame_id: entry.frame_id.clone(),
                expected: hash,
                found: mine[0].record.config_hash.clone(),
            });
        }
    }
    Ok(training_records(annotations, &hash))
}

/// Trains the category model on the (complete) training annotations.
pub fn train_category(
    manifest: &DatasetManifest,
    annotations: &[LabeledAnnotation],
    cfg: &PipelineConfig,
    train_cfg: &TrainConfig,
) -> Result<(Vec<TrainingRecord>, TrainOutcome)> {
    let records = require_complete(manifest, annotations, cfg)?;
    let outcome = mlp_train(&manifest.category, &records, train_cfg)?;
    Ok((records, outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub frame_id: String,
    pub true_count: usize,
    pub predicted: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub n_train_frames: usize,
    pub n_test_frames: usize,
    pub total_true_tracks: usize,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    /// `matched / total_true_tracks` (1 when there are no tracks).
    pub track_accuracy: f64,
    /// Fraction of test frames whose predicted count equals the true count.
    pub frame_exact_rate: f64,
    /// Training fit of the threshold model, in threshold units.
    pub train_rmse: f64,
    pub frames: Vec<FrameRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub categories: Vec<CategoryReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>5} {:>7} {:>8} {:>7} {:>9} {:>9} {:>11}",
            "category", "train", "test", "tracks", "matched", "missed", "spurious", "accuracy", "frame_exact"
        );
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>5} {:>7} {:>8} {:>7} {:>9} {:>9.4} {:>11.4}",
                c.category,
                c.n_train_frames,
                c.n_test_frames,
                c.total_true_tracks,
                c.matched,
                c.missed,
                c.spurious,
                c.track_accuracy,
                c.frame_exact_rate
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,true,predicted,matched,missed,spurious,threshold\n");
        for row in self.categories.iter().flat_map(|c| &c.frames) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.frame_id, row.true_count, row.predicted, row.matched, row.missed, row.spurious, row.threshold
            );
        }
        out
    }
}

/// Runs `model` on every test frame and aggregates matches against truth.
pub fn evaluate_model(
    manifest: &DatasetManifest,
    model: &MlpModel,
    cfg: &PipelineConfig,
    tol: f64,
) -> Result<CategoryReport> {
    let test = frames_sorted(manifest, Split::Test);
    let frames = test
        .par_iter()
        .map(|entry| -> Result<FrameRow> {
            let (img, truth) = load_frame(manifest, entry)?;
            let analysis = analyze_response(enhance(&img, cfg)?, cfg, model)?;
            let m = match_peaks(&analysis.report, &truth, tol)?;
            Ok(FrameRow {
                frame_id: entry.frame_id.clone(),
                true_count: truth.len(),
                predicted: analysis.report.count,
                matched: m.matched,
                missed: m.missed,
                spurious: m.spurious,
                threshold: analysis.threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = |f: fn(&FrameRow) -> usize| frames.iter().map(f).sum::<usize>();
    let total = sum(|r| r.true_count);
    let matched = sum(|r| r.matched);
    let exact = frames.iter().filter(|r| r.predicted == r.true_count).count();
    Ok(CategoryReport {
        category: manifest.category.clone(),
        n_train_frames: manifest.frames_in(Split::Train).count(),
        n_test_frames: frames.len(),
        total_true_tracks: total,
        matched,
        missed: sum(|r| r.missed),
        spurious: sum(|r| r.spurious),
        track_accuracy: if total == 0 { 1.0 } else { matched as f64 / total as f64 },
        frame_exact_rate: if frames.is_empty() { 0.0 } else { exact as f64 / frames.len() as f64 },
        train_rmse: f64::NAN,
        frames,
    })
}

/// Trains the category model from the training annotations, then evaluates
/// it on the test split. `tol` defaults to `cfg.max_track_radius`.
pub fn evaluate(
    manifest: &DatasetManifest,
    annotations: &[LabeledAnnotation],
    cfg: &PipelineConfig,
    train_cfg: &TrainConfig,
    tol: Option<f64>,
) -> Result<CategoryReport> {
    let (_, outcome) = train_category(manifest, annotations, cfg, train_cfg)?;
    let mut report = evaluate_model(manifest, &outcome.model, cfg, tol.unwrap_or(cfg.max_track_radius))?;
    report.train_rmse = outcome.final_rmse;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub frame_id: String,
    pub true_count: usize,
    pub nn_count: usize,
    pub linear_count: usize,
    pub nn_threshold: f64,
    pub linear_threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    /// Frames where the network's count is closer to the truth.
    pub nn_better: usize,
    pub equal: usize,
    pub nn_worse: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub category: String,
    /// Fitted ratio of the linear baseline.
    pub k: f64,
    pub rows: Vec<CompareRow>,
    pub summary: CompareSummary,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>5} {:>5} {:>7}", "frame_id", "true", "nn", "linear");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>5} {:>7}",
                r.frame_id, r.true_count, r.nn_count, r.linear_count
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "nn closer: {}  equal: {}  linear closer: {}  (k = {})",
            s.nn_better, s.equal, s.nn_worse, self.k
        );
        out
    }
}

/// Counts every test frame with both the trained network and the ratio
/// baseline fitted on the same training annotations.
pub fn compare_baseline(
    manifest: &DatasetManifest,
    annotations: &[LabeledAnnotation],
    cfg: &PipelineConfig,
    train_cfg: &TrainConfig,
) -> Result<Comparison> {
    let (records, outcome) = train_category(manifest, annotations, cfg, train_cfg)?;
    let k = linear_baseline_fit(&records)?;
    let model = outcome.model;
    let rows = frames_sorted(manifest, Split::Test)
        .par_iter()
        .map(|entry| -> Result<CompareRow> {
            let (img, truth) = load_frame(manifest, entry)?;
            let resp = enhance(&img, cfg)?;
            let linear_threshold = linear_baseline_predict(k, &features(&resp));
            let linear = count_peaks(&apply_threshold(&resp, linear_threshold), cfg, &resp)?;
            let nn = analyze_response(resp, cfg, &model)?;
            Ok(CompareRow {
                frame_id: entry.frame_id.clone(),
                true_count: truth.len(),
                nn_count: nn.report.count,
                linear_count: linear.count,
                nn_threshold: nn.threshold,
                linear_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = CompareSummary::default();
    for r in &rows {
        let nn_err = r.nn_count.abs_diff(r.true_count);
        let lin_err = r.linear_count.abs_diff(r.true_count);
        match nn_err.cmp(&lin_err) {
            std::cmp::Ordering::Less => summary.nn_better += 1,
            std::cmp::Ordering::Equal => summary.equal += 1,
            std::cmp::Ordering::Greater => summary.nn_worse += 1,
        }
    }
    Ok(Comparison {
        category: manifest.category.clone(),
        k,
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Track;

    #[test]
    fn identical_centroids_all_match() {
        let pts = [(1.0, 2.0), (10.0, 10.0), (30.0, 5.0)];
        let m = match_centroids(&pts, &pts, 1.0).unwrap();
        assert_eq!((m.matched, m.missed, m.spurious), (3, 0, 0));
    }

    #[test]
    fn empty_prediction_misses_everything() {
        let m = match_centroids(&[], &[(0.0, 0.0), (5.0, 5.0), (9.0, 9.0)], 2.0).unwrap();
        assert_eq!((m.matched, m.missed, m.spurious), (0, 3, 0));
        assert!(match_centroids(&[], &[], 0.0).is_err());
    }

    #[test]
    fn crossing_configuration() {
        // p1 is 1.0 from t1 and 1.5 from t2; p2 is 2.0 from t2 only.
        let t1 = (0.0, 0.0);
        let t2 = (0.0, 2.5);
        let p1 = (0.0, 1.0);
        let p2 = (0.0, 4.5);
        let m = match_centroids(&[p1, p2], &[t1, t2], 3.0).unwrap();
        let pairs: Vec<_> = m.pairs.iter().map(|p| (p.pred, p.truth)).collect();
        assert_eq!(pairs, [(0, 0), (1, 1)]);
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let m = match_centroids(&[(0.0, 1.0), (0.0, -1.0)], &[(0.0, 0.0)], 2.0).unwrap();
        assert_eq!(m.pairs[0].pred, 0);
    }

    #[test]
    fn oracle_between_pit_and_background() {
        let mut img = GrayImage::filled(40, 40, 1.0);
        img.set(20, 20, 9.0);
        img.set(2, 2, 3.0);
        let resp = ResponseMap::new(img).unwrap();
        let cfg = PipelineConfig::for_radius(3.0).unwrap();
        let truth = GroundTruth { tracks: vec![Track::circle(20.0, 20.0, 3.0)] };
        assert_eq!(oracle_threshold(&resp, &truth, &cfg), 6.0);
        assert!((oracle_threshold(&resp, &GroundTruth::default(), &cfg) - 0.5 * (9.0 + 9.9)).abs() < 1e-12);
    }
}
