//! Pipeline stages over a work directory.
//!
//! Each stage reads only the artifacts of earlier stages and writes its own:
//!
//! ```text
//! raw/manifest.csv, raw/<id>.svol, raw/<id>.mask.svol        gen-data
//! pre/manifest.csv, pre/<id>.svol, pre/<id>.mask.svol        preprocess
//! <model>/model.suad, <model>/history.csv                     train
//! <model>/val_scores.csv, <model>/thresholds.txt              calibrate
//! <model>/test_scores.csv, <model>/report.txt                 evaluate
//! <model>/heatmaps/<id>_<plane>_<index>.ppm                   heatmap
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{self, AnomalyAccuracy, MetricsReport, ScoreRecord, Thresholds};
use crate::heatmap;
use crate::io::checkpoint::{self, Checkpoint};
use crate::io::config::RunConfig;
use crate::io::tables::{self, ManifestRow};
use crate::io::volume as volume_io;
use crate::models::{Model, ModelKind};
use crate::phantom::{self, Split};
use crate::preprocess::flip_coronal;
use crate::training::{self, EpochLoss};
use crate::volume::{Label, Side, Volume};

/// Paths of every artifact under one work directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn pre_dir(&self) -> PathBuf {
        self.root.join("pre")
    }

    pub fn model_dir(&self, kind: ModelKind) -> PathBuf {
        self.root.join(kind.as_str())
    }

    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("model.suad")
    }

    pub fn history(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("history.csv")
    }

    pub fn val_scores(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("val_scores.csv")
    }

    pub fn thresholds(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("thresholds.txt")
    }

    pub fn test_scores(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("test_scores.csv")
    }

    pub fn report(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("report.txt")
    }

    pub fn heatmap_dir(&self, kind: ModelKind) -> PathBuf {
        self.model_dir(kind).join("heatmaps")
    }
}

const MANIFEST: &str = "manifest.csv";

fn mask_path(volume: &Path) -> PathBuf {
    volume.with_extension("mask.svol")
}

/// Reads the volumes of `split` listed in the manifest under `dir`.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Volume>> {
    tables::read_manifest(&dir.join(MANIFEST))?
        .iter()
        .filter(|r| r.split == split)
        .map(|r| volume_io::read(&dir.join(&r.path)))
        .collect()
}

/// Reads the lesion masks of `split`, aligned with [`load_split`].
pub fn load_split_masks(dir: &Path, split: Split) -> Result<Vec<Volume>> {
    tables::read_manifest(&dir.join(MANIFEST))?
        .iter()
        .filter(|r| r.split == split)
        .map(|r| volume_io::read(&mask_path(&dir.join(&r.path))))
        .collect()
}

fn mirror_to_right(v: &Volume) -> Volume {
    let mut out = flip_coronal(v);
    out.meta.side = Side::Right;
    out
}

/// Writes the phantom dataset. Odd instances are stored as right-side
/// volumes (mirrored), so preprocessing has right sides to canonicalise.
pub fn gen_data(cfg: &RunConfig) -> Result<Vec<ManifestRow>> {
    cfg.phantom.validate()?;
    let dir = Workspace::new(&cfg.work_dir).raw_dir();
    let mut rows = Vec::new();
    for item in phantom::plan(&cfg.phantom) {
        let mut p = phantom::generate(&cfg.phantom, &item)?;
        if item.instance % 2 == 1 {
            p.volume = mirror_to_right(&p.volume);
            p.mask = mirror_to_right(&p.mask);
        }
        for v in [&mut p.volume, &mut p.mask] {
            v.meta
                .extra
                .insert("seed".into(), cfg.phantom.seed.to_string());
        }
        let rel = PathBuf::from(format!("{}.svol", item.volume_id));
        volume_io::write(&dir.join(&rel), &p.volume)?;
        volume_io::write(&mask_path(&dir.join(&rel)), &p.mask)?;
        rows.push(ManifestRow {
            volume_id: item.volume_id,
            split: item.split,
            label: p.volume.meta.label,
            anomaly_type: item.anomaly_type,
            path: rel,
        });
    }
    tables::write_manifest(&dir.join(MANIFEST), &rows)?;
    Ok(rows)
}

/// Runs the configured pipeline over every raw volume and its mask.
pub fn preprocess(cfg: &RunConfig) -> Result<Vec<ManifestRow>> {
    let ws = Workspace::new(&cfg.work_dir);
    let pipeline = cfg.pipeline()?;
    let (raw, pre) = (ws.raw_dir(), ws.pre_dir());
    let rows = tables::read_manifest(&raw.join(MANIFEST))?;
    for row in &rows {
        let src = raw.join(&row.path);
        let v = volume_io::read(&src)?;
        volume_io::write(&pre.join(&row.path), &pipeline.run(&v)?)?;
        let mask_src = mask_path(&src);
        if mask_src.exists() {
            let m = volume_io::read(&mask_src)?;
            volume_io::write(&mask_path(&pre.join(&row.path)), &pipeline.run_mask(&m)?)?;
        }
    }
    tables::write_manifest(&pre.join(MANIFEST), &rows)?;
    Ok(rows)
}

fn model_meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([("seed".to_string(), cfg.seed.to_string())])
}

/// Fits a fresh model to the healthy training split and checkpoints it.
pub fn train(cfg: &RunConfig, kind: ModelKind) -> Result<Vec<EpochLoss>> {
    let ws = Workspace::new(&cfg.work_dir);
    let rows = tables::read_manifest(&ws.pre_dir().join(MANIFEST))?;
    if let Some(bad) = rows
        .iter()
        .find(|r| r.split == Split::Train && r.label != Label::Normal)
    {
        return Err(Error::Contract(format!(
            "training split must be healthy only; '{}' is labelled {}",
            bad.volume_id, bad.label
        )));
    }
    let data = load_split(&ws.pre_dir(), Split::Train)?;
    let mut model = Model::init(kind, &cfg.arch, cfg.seed)?;
    let history = match &mut model {
        Model::Cae(m) => training::fit(m, &data, &cfg.train)?,
        Model::Vae(m) => training::fit(m, &data, &cfg.train)?,
    };
    let ck = Checkpoint {
        model,
        meta: model_meta(cfg),
    };
    checkpoint::write(&ws.checkpoint(kind), &ck)?;
    crate::io::write_file(
        &ws.history(kind),
        training::history_csv(&history).as_bytes(),
    )?;
    Ok(history)
}

fn score_split(cfg: &RunConfig, kind: ModelKind, split: Split) -> Result<Vec<ScoreRecord>> {
    let ws = Workspace::new(&cfg.work_dir);
    let ck = checkpoint::read(&ws.checkpoint(kind))?;
    let volumes = load_split(&ws.pre_dir(), split)?;
    eval::score_all(ck.model.as_autoencoder(), &volumes)
}

/// Scores the validation split and picks the F1-maximising thresholds.
pub fn calibrate(cfg: &RunConfig, kind: ModelKind) -> Result<Thresholds> {
    let ws = Workspace::new(&cfg.work_dir);
    let records = score_split(cfg, kind, Split::Val)?;
    tables::write_scores(&ws.val_scores(kind), &records)?;
    let t = eval::calibrate(&records, cfg.eval_mode)?;
    tables::write_thresholds(&ws.thresholds(kind), &t)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<ScoreRecord>,
    pub predictions: Vec<Label>,
    pub report: MetricsReport,
    pub accuracy: AnomalyAccuracy,
}

/// Scores the test split against the calibrated thresholds.
pub fn evaluate(cfg: &RunConfig, kind: ModelKind) -> Result<Evaluation> {
    let ws = Workspace::new(&cfg.work_dir);
    let t = tables::read_thresholds(&ws.thresholds(kind))?;
    let records = score_split(cfg, kind, Split::Test)?;
    tables::write_scores(&ws.test_scores(kind), &records)?;
    let predictions = eval::classify_all(&records, &t);
    let report = eval::metrics_report(&records, &t)?;
    let accuracy = eval::per_anomaly_accuracy(&records, &predictions)?;
    let title = format!("{} test split, seed {}", kind.as_str(), cfg.seed);
    crate::io::write_file(
        &ws.report(kind),
        tables::report_text(&title, &report, &accuracy).as_bytes(),
    )?;
    Ok(Evaluation {
        records,
        predictions,
        report,
        accuracy,
    })
}

/// Renders heat maps for test volumes classified anomalous (all of them when
/// `cfg.heatmap_all`), returning the files written.
pub fn heatmaps(cfg: &RunConfig, kind: ModelKind) -> Result<Vec<PathBuf>> {
    let ws = Workspace::new(&cfg.work_dir);
    let t = tables::read_thresholds(&ws.thresholds(kind))?;
    let ck = checkpoint::read(&ws.checkpoint(kind))?;
    let ae = ck.model.as_autoencoder();
    let dir = ws.heatmap_dir(kind);
    let mut written = Vec::new();
    for v in load_split(&ws.pre_dir(), Split::Test)? {
        let x = v.to_tensor();
        let x_hat = ae.reconstruct(&x)?;
        let (score_l1, score_l2) = eval::score_pair(&x, &x_hat)?;
        let record = ScoreRecord {
            volume_id: v.meta.subject.clone(),
            score_l1,
            score_l2,
            label: v.meta.label,
            anomaly_type: v.meta.anomaly_type,
        };
        if !cfg.heatmap_all && eval::classify(&record, &t) != Label::Anomaly {
            continue;
        }
        let (_, slices) = heatmap::heatmaps(&v, &v.with_tensor_data(&x_hat)?, cfg.heatmap_kernel)?;
        for s in slices {
            let path = dir.join(heatmap::file_name(&v.meta.subject, s.plane, s.index));
            crate::io::write_file(&path, &s.image.to_ppm())?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Every stage in order for one model kind.
pub fn run_all(cfg: &RunConfig, kind: ModelKind) -> Result<Evaluation> {
    gen_data(cfg)?;
    preprocess(cfg)?;
    train(cfg, kind)?;
    calibrate(cfg, kind)?;
    let ev = evaluate(cfg, kind)?;
    heatmaps(cfg, kind)?;
    Ok(ev)
}
