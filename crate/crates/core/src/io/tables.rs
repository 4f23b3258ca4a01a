//! Manifest and score CSVs, the thresholds file and the metrics report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::eval::{AnomalyAccuracy, MetricsReport, ScoreRecord, ThresholdMode, Thresholds};
use crate::phantom::Split;
use crate::volume::{AnomalyType, Label};

/// One dataset member; `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub volume_id: String,
    pub split: Split,
    pub label: Label,
    pub anomaly_type: AnomalyType,
    pub path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestCsv {
    volume_id: String,
    split: String,
    label: String,
    anomaly_type: String,
    path: String,
}

fn csv_bytes<S: Serialize>(rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn csv_rows<D: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<D>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let bytes = csv_bytes(rows.iter().map(|r| ManifestCsv {
        volume_id: r.volume_id.clone(),
        split: r.split.as_str().into(),
        label: r.label.as_str().into(),
        anomaly_type: r.anomaly_type.as_str().into(),
        path: r.path.to_string_lossy().replace('\\', "/"),
    }))?;
    write_file(path, &bytes)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    csv_rows::<ManifestCsv>(&read_file(path)?)?
        .into_iter()
        .map(|r| {
            Ok(ManifestRow {
                volume_id: r.volume_id,
                split: Split::parse(&r.split)?,
                label: Label::parse(&r.label)?,
                anomaly_type: AnomalyType::parse(&r.anomaly_type)?,
                path: PathBuf::from(r.path),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ScoreCsv {
    volume_id: String,
    score_l1: f64,
    score_l2: f64,
    label: String,
    anomaly_type: String,
}

pub fn scores_csv(records: &[ScoreRecord]) -> Result<Vec<u8>> {
    csv_bytes(records.iter().map(|r| ScoreCsv {
        volume_id: r.volume_id.clone(),
        score_l1: r.score_l1,
        score_l2: r.score_l2,
        label: r.label.as_str().into(),
        anomaly_type: r.anomaly_type.as_str().into(),
    }))
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    write_file(path, &scores_csv(records)?)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    csv_rows::<ScoreCsv>(&read_file(path)?)?
        .into_iter()
        .map(|r| {
            let rec = ScoreRecord {
                volume_id: r.volume_id,
                score_l1: r.score_l1,
                score_l2: r.score_l2,
                label: Label::parse(&r.label)?,
                anomaly_type: AnomalyType::parse(&r.anomaly_type)?,
            };
            rec.validate()?;
            Ok(rec)
        })
        .collect()
}

pub fn thresholds_text(t: &Thresholds) -> String {
    format!("t_l1 = {}\nt_l2 = {}\nmode = {}\n", t.t_l1, t.t_l2, t.mode)
}

pub fn parse_thresholds(text: &str) -> Result<Thresholds> {
    let (mut l1, mut l2, mut mode) = (None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("thresholds: malformed line '{line}'")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("thresholds: bad number '{}'", v.trim())))
        };
        match k.trim() {
            "t_l1" => l1 = Some(num(v)?),
            "t_l2" => l2 = Some(num(v)?),
            "mode" => mode = Some(ThresholdMode::parse(v.trim())?),
            other => return Err(Error::Format(format!("thresholds: unknown key '{other}'"))),
        }
    }
    match (l1, l2, mode) {
        (Some(a), Some(b), Some(m)) => Thresholds::new(a, b, m),
        _ => Err(Error::Format(
            "thresholds: t_l1, t_l2 and mode are all required".into(),
        )),
    }
}

pub fn write_thresholds(path: &Path, t: &Thresholds) -> Result<()> {
    write_file(path, thresholds_text(t).as_bytes())
}

pub fn read_thresholds(path: &Path) -> Result<Thresholds> {
    let bytes = read_file(path)?;
    parse_thresholds(&String::from_utf8_lossy(&bytes))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

/// Tab-separated text: header lines, per-mode detection metrics with both
/// AUPRC values, then per-category accuracy cells like `0.91 (31/34)`.
pub fn report_text(title: &str, report: &MetricsReport, accuracy: &AnomalyAccuracy) -> String {
    let t = &report.thresholds;
    let mut s = format!("# {title}\n");
    s += &format!("t_l1\t{}\nt_l2\t{}\nmode\t{}\n\n", t.t_l1, t.t_l2, t.mode);
    s += "threshold\tprecision\trecall\tf1\ttp\tfp\tfn\ttn\n";
    for m in &report.modes {
        let c = m.confusion;
        s += &format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\n",
            m.mode, m.precision, m.recall, m.f1, c.tp, c.fp, c.fn_, c.tn
        );
    }
    s += &format!(
        "\nauprc_l1\t{}\nauprc_l2\t{}\n\n",
        opt(report.auprc_l1),
        opt(report.auprc_l2)
    );
    s += &format!("accuracy per category ({})\n", t.mode);
    s += &AnomalyAccuracy::COLUMNS.join("\t");
    s += "\n";
    s += &accuracy.cells().map(|c| c.to_string()).join("\t");
    s += "\n";
    s
}
