use std::collections::BTreeMap;
use std::path::Path;

use suad_core::io::tables::read_manifest;
use suad_core::phantom::{gen_anomalous, gen_healthy};
use suad_core::stages::gen_data;
use suad_core::{AnomalyType, Label, PhantomConfig, RunConfig, Split, Volume};

const BINS: usize = 32;

fn histogram(v: &Volume) -> [f64; BINS] {
    let mut h = [0.0; BINS];
    for &x in &v.data {
        h[((x * BINS as f32) as usize).min(BINS - 1)] += 1.0;
    }
    h.map(|c| c / v.len() as f64)
}

fn hist_l1(a: &[f64; BINS], b: &[f64; BINS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn healthy_histograms_cluster_apart_from_polyps() {
    let cfg = PhantomConfig::default();
    let healthy: Vec<[f64; BINS]> = (0..12)
        .map(|i| histogram(&gen_healthy(&cfg, i).unwrap().volume))
        .collect();
    let polyps: Vec<[f64; BINS]> = (12..24)
        .map(|i| histogram(&gen_anomalous(&cfg, i, AnomalyType::Polyp).unwrap().volume))
        .collect();
    let mut within = Vec::new();
    for i in 0..healthy.len() {
        for j in i + 1..healthy.len() {
            within.push(hist_l1(&healthy[i], &healthy[j]));
        }
    }
    let across: Vec<f64> = healthy
        .iter()
        .flat_map(|h| polyps.iter().map(move |p| hist_l1(h, p)))
        .collect();
    assert!(
        mean(&within) < mean(&across),
        "within {} vs across {}",
        mean(&within),
        mean(&across)
    );
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn desk_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk().with_seed(4);
    cfg.work_dir = dir.to_path_buf();
    cfg
}

#[test]
fn dataset_regeneration_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_data(&desk_config(a.path())).unwrap();
    gen_data(&desk_config(b.path())).unwrap();
    let (ta, tb) = (
        read_tree(&a.path().join("raw")),
        read_tree(&b.path().join("raw")),
    );
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn manifest_lists_every_written_volume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path());
    let rows = gen_data(&cfg).unwrap();
    let raw = dir.path().join("raw");
    assert_eq!(read_manifest(&raw.join("manifest.csv")).unwrap(), rows);
    assert_eq!(rows.len(), cfg.phantom.counts.total());
    let volumes = std::fs::read_dir(&raw)
        .unwrap()
        .filter(|e| {
            let name = e
                .as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .into_owned();
            name.ends_with(".svol") && !name.ends_with(".mask.svol")
        })
        .count();
    assert_eq!(volumes, rows.len());
    for r in &rows {
        assert!(raw.join(&r.path).exists());
    }
    let train: Vec<_> = rows.iter().filter(|r| r.split == Split::Train).collect();
    assert_eq!(train.len(), 21);
    assert!(train
        .iter()
        .all(|r| r.label == Label::Normal && r.anomaly_type == AnomalyType::None));
}
