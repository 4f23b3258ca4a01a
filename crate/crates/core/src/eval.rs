//! Reconstruction scoring, precision–recall analysis and threshold calibration.
//!
//! The positive class is `anomaly`. A score is predicted positive when it is
//! strictly greater than the threshold, so a score equal to its threshold is
//! normal.

use std::fmt;

use crate::error::{Error, Result};
use crate::models::Autoencoder;
use crate::tensor::Tensor;
use crate::volume::{AnomalyType, Label, Volume};

/// Reconstruction scores of one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub volume_id: String,
    pub score_l1: f64,
    pub score_l2: f64,
    pub label: Label,
    pub anomaly_type: AnomalyType,
}

impl ScoreRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("score_l1", self.score_l1), ("score_l2", self.score_l2)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Data(format!(
                    "{}: {name} = {s} must be finite and >= 0",
                    self.volume_id
                )));
            }
        }
        match (self.label, self.anomaly_type) {
            (Label::Normal, AnomalyType::None) => Ok(()),
            (Label::Anomaly, t) if t != AnomalyType::None => Ok(()),
            (l, t) => Err(Error::Data(format!(
                "{}: label {l} with anomaly type {t}",
                self.volume_id
            ))),
        }
    }

    pub fn score(&self, field: ScoreField) -> f64 {
        match field {
            ScoreField::L1 => self.score_l1,
            ScoreField::L2 => self.score_l2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScoreField {
    L1,
    L2,
}

impl ScoreField {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreField::L1 => "l1",
            ScoreField::L2 => "l2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ThresholdMode {
    L1Only,
    L2Only,
    /// Anomalous only when both scores exceed their thresholds.
    Conjunction,
}

impl ThresholdMode {
    pub const ALL: [ThresholdMode; 3] = [
        ThresholdMode::L1Only,
        ThresholdMode::L2Only,
        ThresholdMode::Conjunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::L1Only => "l1-only",
            ThresholdMode::L2Only => "l2-only",
            ThresholdMode::Conjunction => "conjunction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l1-only" => Ok(ThresholdMode::L1Only),
            "l2-only" => Ok(ThresholdMode::L2Only),
            "conjunction" => Ok(ThresholdMode::Conjunction),
            other => Err(Error::Config(format!("unknown threshold mode '{other}'"))),
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub t_l1: f64,
    pub t_l2: f64,
    pub mode: ThresholdMode,
}

impl Thresholds {
    pub fn new(t_l1: f64, t_l2: f64, mode: ThresholdMode) -> Result<Self> {
        for (name, t) in [("t_l1", t_l1), ("t_l2", t_l2)] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Evaluation(format!(
                    "{name} = {t} must be finite and >= 0"
                )));
            }
        }
        Ok(Self { t_l1, t_l2, mode })
    }

    pub fn with_mode(self, mode: ThresholdMode) -> Self {
        Self { mode, ..self }
    }
}

/// Summed L1 and L2 residuals between two equally shaped tensors.
pub fn score_pair(x: &Tensor<f32>, x_hat: &Tensor<f32>) -> Result<(f64, f64)> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Config(format!(
            "reconstruction shape {:?} differs from input {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let (mut l1, mut l2) = (0.0, 0.0);
    for (&a, &b) in x.data().iter().zip(x_hat.data()) {
        let r = (a as f64 - b as f64).abs();
        l1 += r;
        l2 += r * r;
    }
    Ok((l1, l2))
}

/// L1 and L2 reconstruction errors of one preprocessed volume (batch of one).
pub fn score_volume(model: &dyn Autoencoder<f32>, x: &Volume) -> Result<(f64, f64)> {
    let want = model.arch().input_dims;
    if x.dims != want {
        return Err(Error::Config(format!(
            "volume '{}' has dims {:?}, model expects {:?}",
            x.meta.subject, x.dims, want
        )));
    }
    let t = x.to_tensor();
    score_pair(&t, &model.reconstruct(&t)?)
}

/// Scores every volume and keeps its label metadata.
pub fn score_all(model: &dyn Autoencoder<f32>, volumes: &[Volume]) -> Result<Vec<ScoreRecord>> {
    volumes
        .iter()
        .map(|v| {
            let (score_l1, score_l2) = score_volume(model, v)?;
            Ok(ScoreRecord {
                volume_id: v.meta.subject.clone(),
                score_l1,
                score_l2,
                label: v.meta.label,
                anomaly_type: v.meta.anomaly_type,
            })
        })
        .collect()
}

/// Confusion counts at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Anomaly, Label::Anomaly) => self.tp += 1,
            (Label::Normal, Label::Anomaly) => self.fp += 1,
            (Label::Anomaly, Label::Normal) => self.fn_ += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
        }
    }

    /// `TP / (TP + FP)`, or 0 with no predicted positives.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, or 0 with no actual positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, the harmonic mean of precision and recall.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Points ordered by strictly increasing threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    pub field: ScoreField,
    pub points: Vec<PrPoint>,
}

fn check_classes(records: &[ScoreRecord]) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    let pos = records.iter().filter(|r| r.label == Label::Anomaly).count();
    if pos == 0 || pos == records.len() {
        return Err(Error::Evaluation(format!(
            "precision-recall analysis needs both classes; got {pos} anomalous of {}",
            records.len()
        )));
    }
    Ok(())
}

/// One candidate threshold per distinct score: the midpoints between
/// consecutive distinct scores plus one below the smallest score.
///
/// The lowest candidate is half the smallest score, or, when that score is
/// 0, half a gap (or 0.5) below it.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let Some(&first) = v.first() else {
        return Vec::new();
    };
    let below = if first > 0.0 {
        first / 2.0
    } else {
        first - v.get(1).map_or(0.5, |next| (next - first) / 2.0)
    };
    std::iter::once(below)
        .chain(v.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0))
        .collect()
}

pub fn pr_curve(records: &[ScoreRecord], field: ScoreField) -> Result<PrCurve> {
    check_classes(records)?;
    let scores: Vec<f64> = records.iter().map(|r| r.score(field)).collect();
    let points = candidate_thresholds(&scores)
        .into_iter()
        .map(|threshold| {
            let mut c = Confusion::default();
            for r in records {
                let predicted = if r.score(field) > threshold {
                    Label::Anomaly
                } else {
                    Label::Normal
                };
                c.add(r.label, predicted);
            }
            PrPoint {
                threshold,
                precision: c.precision(),
                recall: c.recall(),
                confusion: c,
            }
        })
        .collect();
    Ok(PrCurve { field, points })
}

/// The F1-maximising threshold; ties go to the larger threshold.
pub fn select_threshold_max_f1(curve: &PrCurve) -> Result<f64> {
    let mut best: Option<&PrPoint> = None;
    for p in &curve.points {
        // Points ascend in threshold, so `>=` keeps the last of equal F1 values.
        if best.is_none_or(|b| p.confusion.f1() >= b.confusion.f1()) {
            best = Some(p);
        }
    }
    best.map(|p| p.threshold)
        .ok_or_else(|| Error::Evaluation("cannot select a threshold from an empty curve".into()))
}

/// Step-wise average precision: `Σ (R_n − R_{n−1}) · P_n` over cut points in
/// descending score order.
pub fn auprc(records: &[ScoreRecord], field: ScoreField) -> Result<f64> {
    let curve = pr_curve(records, field)?;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for p in curve.points.iter().rev() {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// Calibrates both thresholds on `records` (the validation split).
pub fn calibrate(records: &[ScoreRecord], mode: ThresholdMode) -> Result<Thresholds> {
    let t_l1 = select_threshold_max_f1(&pr_curve(records, ScoreField::L1)?)?;
    let t_l2 = select_threshold_max_f1(&pr_curve(records, ScoreField::L2)?)?;
    Thresholds::new(t_l1, t_l2, mode)
}

pub fn classify(record: &ScoreRecord, t: &Thresholds) -> Label {
    let over_l1 = record.score_l1 > t.t_l1;
    let over_l2 = record.score_l2 > t.t_l2;
    let anomalous = match t.mode {
        ThresholdMode::L1Only => over_l1,
        ThresholdMode::L2Only => over_l2,
        ThresholdMode::Conjunction => over_l1 && over_l2,
    };
    if anomalous {
        Label::Anomaly
    } else {
        Label::Normal
    }
}

pub fn classify_all(records: &[ScoreRecord], t: &Thresholds) -> Vec<Label> {
    records.iter().map(|r| classify(r, t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeMetrics {
    pub mode: ThresholdMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

/// Per-mode detection metrics plus per-score AUPRC.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub thresholds: Thresholds,
    pub modes: Vec<ModeMetrics>,
    /// `None` when the records hold a single class.
    pub auprc_l1: Option<f64>,
    pub auprc_l2: Option<f64>,
}

pub fn metrics_report(records: &[ScoreRecord], t: &Thresholds) -> Result<MetricsReport> {
    for r in records {
        r.validate()?;
    }
    let modes = ThresholdMode::ALL
        .iter()
        .map(|&mode| {
            let tm = t.with_mode(mode);
            let mut c = Confusion::default();
            for r in records {
                c.add(r.label, classify(r, &tm));
            }
            ModeMetrics {
                mode,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
                confusion: c,
            }
        })
        .collect();
    Ok(MetricsReport {
        thresholds: *t,
        modes,
        auprc_l1: auprc(records, ScoreField::L1).ok(),
        auprc_l2: auprc(records, ScoreField::L2).ok(),
    })
}

/// Correct-over-total tally of one category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

impl fmt::Display for Tally {
    /// `0.91 (31/34)`: two decimals with trailing zeros trimmed to one,
    /// `n/a (0/0)` for an empty category.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fraction() {
            None => write!(f, "n/a (0/0)"),
            Some(x) => {
                let mut s = format!("{x:.2}");
                if s.ends_with('0') {
                    s.pop();
                }
                write!(f, "{s} ({}/{})", self.correct, self.total)
            }
        }
    }
}

/// Accuracy per category, in the column order normal, mucosal thickening,
/// polyps, cysts.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnomalyAccuracy {
    pub normal: Tally,
    pub thickening: Tally,
    pub polyp: Tally,
    pub cyst: Tally,
}

impl AnomalyAccuracy {
    pub const COLUMNS: [&'static str; 4] = ["Normal", "Mucosal Thickening", "Polyps", "Cysts"];

    pub fn cells(&self) -> [Tally; 4] {
        [self.normal, self.thickening, self.polyp, self.cyst]
    }

    pub fn get(&self, t: AnomalyType) -> Tally {
        match t {
            AnomalyType::None => self.normal,
            AnomalyType::Thickening => self.thickening,
            AnomalyType::Polyp => self.polyp,
            AnomalyType::Cyst => self.cyst,
        }
    }
}

pub fn per_anomaly_accuracy(
    records: &[ScoreRecord],
    predictions: &[Label],
) -> Result<AnomalyAccuracy> {
    if records.len() != predictions.len() {
        return Err(Error::Dimension(format!(
            "{} records but {} predictions",
            records.len(),
            predictions.len()
        )));
    }
    let mut acc = AnomalyAccuracy::default();
    for (r, &p) in records.iter().zip(predictions) {
        r.validate()?;
        let tally = match r.anomaly_type {
            AnomalyType::None => &mut acc.normal,
            AnomalyType::Thickening => &mut acc.thickening,
            AnomalyType::Polyp => &mut acc.polyp,
            AnomalyType::Cyst => &mut acc.cyst,
        };
        tally.total += 1;
        if p == r.label {
            tally.correct += 1;
        }
    }
    Ok(acc)
}
