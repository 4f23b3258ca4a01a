//! Procedural maxillary-sinus phantoms.
//!
//! A healthy phantom is an ellipsoidal air cavity lined by a bright mucosal
//! wall, sitting in mid-intensity soft tissue, with partial-volume edges and
//! additive Gaussian noise. Anomalous phantoms modify the same base:
//!
//! - thickening: the wall grows inward over one patch (subtle),
//! - polyp: a bright sphere anchored on the inner wall, protruding into air,
//! - cyst: a dome resting on the cavity floor (`+H`, inferior).
//!
//! Each instance draws its geometry and noise from stream `2·i` of a ChaCha
//! generator keyed by the dataset seed and its lesion from stream `2·i + 1`,
//! so an anomalous phantom and its healthy base share identical noise and
//! instances can be generated in any order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::volume::{AnomalyType, Label, Volume, VolumeMeta};

/// Volumes per split; the training split holds healthy volumes only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train_normal: usize,
    pub val_normal: usize,
    pub val_anomaly: usize,
    pub test_normal: usize,
    pub test_anomaly: usize,
}

impl SplitCounts {
    pub const FULL: SplitCounts = SplitCounts {
        train_normal: 172,
        val_normal: 43,
        val_anomaly: 52,
        test_normal: 54,
        test_anomaly: 78,
    };

    /// Every full-scale count multiplied by `factor`, floored, at least one.
    pub fn scaled(factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).floor() as usize).max(1);
        let p = Self::FULL;
        Self {
            train_normal: s(p.train_normal),
            val_normal: s(p.val_normal),
            val_anomaly: s(p.val_anomaly),
            test_normal: s(p.test_normal),
            test_anomaly: s(p.test_anomaly),
        }
    }

    pub fn total(&self) -> usize {
        self.train_normal
            + self.val_normal
            + self.val_anomaly
            + self.test_normal
            + self.test_anomaly
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub seed: u64,
    pub counts: SplitCounts,
    /// Proportions of (thickening, polyp, cyst) among anomalous volumes.
    pub anomaly_mix: [f64; 3],
    pub noise_sigma: f64,
    /// Half-width of the uniform per-volume jitter on tissue intensities.
    pub intensity_jitter: f64,
    /// Wall thickness range as a fraction of the smallest dimension.
    pub wall_thickness: (f64, f64),
    /// Polyp/cyst radius range as a fraction of the smallest dimension.
    pub lesion_radius: (f64, f64),
    /// Extra wall thickness of a thickening patch, fraction of the smallest dimension.
    pub thickening_extra: (f64, f64),
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            seed: 0,
            counts: SplitCounts::scaled(1.0 / 8.0),
            // Test-set category sizes 29 / 34 / 15.
            anomaly_mix: [29.0 / 78.0, 34.0 / 78.0, 15.0 / 78.0],
            noise_sigma: 0.01,
            intensity_jitter: 0.0,
            wall_thickness: (0.07, 0.09),
            lesion_radius: (0.16, 0.22),
            thickening_extra: (0.07, 0.1),
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 4) {
            return Err(Error::Config(format!(
                "phantom dims {:?} must be >= 4",
                self.dims
            )));
        }
        if self.anomaly_mix.iter().any(|&p| p.is_nan() || p < 0.0)
            || (self.anomaly_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "anomaly mix {:?} must be non-negative and sum to 1",
                self.anomaly_mix
            )));
        }
        for (name, (lo, hi)) in [
            ("wall_thickness", self.wall_thickness),
            ("lesion_radius", self.lesion_radius),
            ("thickening_extra", self.thickening_extra),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::Config(format!(
                    "{name} range ({lo}, {hi}) is invalid"
                )));
            }
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=0.05).contains(&self.intensity_jitter) {
            return Err(Error::Config(
                "intensity_jitter must lie in [0, 0.05]".into(),
            ));
        }
        Ok(())
    }

    fn min_dim(&self) -> f64 {
        *self.dims.iter().min().unwrap() as f64
    }

    /// Anomaly types for `n` anomalous volumes, allocated by largest remainder
    /// and listed in (thickening, polyp, cyst) order.
    pub fn allocate(&self, n: usize) -> Vec<AnomalyType> {
        let exact: Vec<f64> = self.anomaly_mix.iter().map(|p| p * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut rest: Vec<usize> = (0..3).collect();
        rest.sort_by(|&a, &b| {
            let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &i in rest.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        AnomalyType::LESIONS
            .iter()
            .zip(counts)
            .flat_map(|(&t, c)| std::iter::repeat_n(t, c))
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Debug)]
struct Geometry {
    center: [f64; 3],
    radii: [f64; 3],
    wall: f64,
    background: f64,
    mucosa: f64,
    air: f64,
}

impl Geometry {
    fn sample(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Self {
        let dims = cfg.dims.map(|d| d as f64);
        let center = dims.map(|d| d / 2.0 + rng.random_range(-0.05..0.05) * d);
        let radii = dims.map(|d| d * rng.random_range(0.30..0.35));
        let wall = cfg.min_dim() * rng.random_range(cfg.wall_thickness.0..=cfg.wall_thickness.1);
        Self {
            center,
            radii,
            wall,
            background: 0.5 + cfg.intensity_jitter * rng.random_range(-1.0..1.0),
            mucosa: 0.85 + cfg.intensity_jitter * rng.random_range(-1.0..1.0),
            air: 0.08 + cfg.intensity_jitter * rng.random_range(-1.0..1.0),
        }
    }

    /// Approximate signed distance to the ellipsoid surface (negative inside)
    /// and the unit direction from the center.
    fn surface(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let rel = [0, 1, 2].map(|a| p[a] - self.center[a]);
        let len = rel.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len < 1e-12 {
            let inner = -self.radii.iter().cloned().fold(f64::INFINITY, f64::min);
            return (inner, [0.0, 1.0, 0.0]);
        }
        let rho = [0, 1, 2]
            .map(|a| rel[a] / self.radii[a])
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        (len * (rho - 1.0) / rho, rel.map(|v| v / len))
    }

    /// Inner-wall anchor point along direction `u`.
    fn inner_anchor(&self, u: [f64; 3]) -> [f64; 3] {
        let rho = [0, 1, 2]
            .map(|a| u[a] / self.radii[a])
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let reach = 1.0 / rho - self.wall;
        [0, 1, 2].map(|a| self.center[a] + u[a] * reach)
    }
}

#[derive(Clone, Debug)]
enum Lesion {
    None,
    Thickening {
        axis: [f64; 3],
        extra: f64,
    },
    Blob {
        anchor: [f64; 3],
        radius: f64,
        intensity: f64,
    },
}

/// A thickening patch starts where the direction cosine to its axis passes
/// `PATCH_EDGE` and reaches full height `PATCH_RAMP` later.
const PATCH_EDGE: f64 = 0.6;
const PATCH_RAMP: f64 = 0.2;

/// Partial-volume occupancy of a voxel at signed distance `s` from an edge.
fn occupancy(s: f64) -> f64 {
    (0.5 - s).clamp(0.0, 1.0)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [0; 3].map(|_| rng.random_range(-1.0..1.0f64));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn sample_lesion(
    cfg: &PhantomConfig,
    geo: &Geometry,
    kind: AnomalyType,
    rng: &mut ChaCha8Rng,
) -> Lesion {
    let min_dim = cfg.min_dim();
    match kind {
        AnomalyType::None => Lesion::None,
        AnomalyType::Thickening => Lesion::Thickening {
            axis: unit_vector(rng),
            extra: min_dim * rng.random_range(cfg.thickening_extra.0..=cfg.thickening_extra.1),
        },
        AnomalyType::Polyp => {
            // Lateral wall direction, kept away from the floor used by cysts.
            let mut u = unit_vector(rng);
            u[1] *= 0.5;
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u = u.map(|x| x / n);
            Lesion::Blob {
                anchor: geo.inner_anchor(u),
                radius: min_dim * rng.random_range(cfg.lesion_radius.0..=cfg.lesion_radius.1),
                intensity: geo.mucosa - 0.05,
            }
        }
        AnomalyType::Cyst => Lesion::Blob {
            anchor: geo.inner_anchor([0.0, 1.0, 0.0]),
            radius: min_dim * rng.random_range(cfg.lesion_radius.0..=cfg.lesion_radius.1) * 1.1,
            intensity: 0.7,
        },
    }
}

fn render(cfg: &PhantomConfig, geo: &Geometry, lesion: &Lesion) -> Vec<f64> {
    let [nd, nh, nw] = cfg.dims;
    let mut out = Vec::with_capacity(nd * nh * nw);
    for d in 0..nd {
        for h in 0..nh {
            for w in 0..nw {
                let p = [d as f64, h as f64, w as f64];
                let (sd, dir) = geo.surface(p);
                let wall = match lesion {
                    Lesion::Thickening { axis, extra } => {
                        let dot: f64 = dir.iter().zip(axis).map(|(a, b)| a * b).sum();
                        geo.wall + extra * ((dot - PATCH_EDGE) / PATCH_RAMP).clamp(0.0, 1.0)
                    }
                    _ => geo.wall,
                };
                let inside = occupancy(sd);
                let air = occupancy(sd + wall);
                let mut v =
                    geo.background * (1.0 - inside) + geo.mucosa * (inside - air) + geo.air * air;
                if let Lesion::Blob {
                    anchor,
                    radius,
                    intensity,
                } = lesion
                {
                    let dist = p
                        .iter()
                        .zip(anchor)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    let cover = occupancy(dist - radius) * inside;
                    v = v * (1.0 - cover) + intensity * cover;
                }
                out.push(v);
            }
        }
    }
    out
}

/// A generated volume with its lesion mask (1 inside the lesion, else 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume,
    pub mask: Volume,
}

impl Phantom {
    pub fn mask_voxels(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m > 0.5).count()
    }
}

fn build(cfg: &PhantomConfig, instance: u64, kind: AnomalyType) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, 2 * instance);
    let geo = Geometry::sample(cfg, &mut rng);
    let base = render(cfg, &geo, &Lesion::None);
    let (clean, mask) = if kind == AnomalyType::None {
        let n = base.len();
        (base, vec![0.0f32; n])
    } else {
        let mut lrng = stream(cfg.seed, 2 * instance + 1);
        let lesion = sample_lesion(cfg, &geo, kind, &mut lrng);
        let clean = render(cfg, &geo, &lesion);
        let mask = clean
            .iter()
            .zip(&base)
            .map(|(a, b)| if (a - b).abs() > 0.1 { 1.0 } else { 0.0 })
            .collect();
        (clean, mask)
    };
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let data = clean
        .iter()
        .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
        .collect();
    let meta = VolumeMeta {
        subject: format!("phantom-{instance:05}"),
        label: if kind == AnomalyType::None {
            Label::Normal
        } else {
            Label::Anomaly
        },
        anomaly_type: kind,
        ..VolumeMeta::default()
    };
    let volume = Volume::new(cfg.dims, [1.0; 3], data, meta.clone())?;
    let mask = Volume::new(cfg.dims, [1.0; 3], mask, meta)?;
    Ok(Phantom { volume, mask })
}

/// Healthy phantom for `instance`; its mask is empty.
pub fn gen_healthy(cfg: &PhantomConfig, instance: u64) -> Result<Phantom> {
    build(cfg, instance, AnomalyType::None)
}

/// The healthy phantom for `instance`, modified by a lesion of type `kind`.
pub fn gen_anomalous(cfg: &PhantomConfig, instance: u64, kind: AnomalyType) -> Result<Phantom> {
    if kind == AnomalyType::None {
        return Err(Error::Parameter(
            "anomalous phantom needs a lesion type".into(),
        ));
    }
    let p = build(cfg, instance, kind)?;
    if p.mask_voxels() == 0 {
        return Err(Error::Numeric(format!(
            "{kind} lesion for instance {instance} changed no voxels; enlarge the lesion ranges"
        )));
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

/// One planned dataset member.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedVolume {
    pub volume_id: String,
    pub split: Split,
    pub instance: u64,
    pub anomaly_type: AnomalyType,
}

/// The ordered list of volumes a dataset of `cfg` contains.
pub fn plan(cfg: &PhantomConfig) -> Vec<PlannedVolume> {
    let c = cfg.counts;
    let mut out = Vec::with_capacity(c.total());
    let mut instance = 0u64;
    let mut push = |split: Split, kinds: Vec<AnomalyType>| {
        for (i, kind) in kinds.into_iter().enumerate() {
            let tag = if kind == AnomalyType::None { "n" } else { "a" };
            out.push(PlannedVolume {
                volume_id: format!("{}-{tag}-{i:03}", split.as_str()),
                split,
                instance,
                anomaly_type: kind,
            });
            instance += 1;
        }
    };
    push(Split::Train, vec![AnomalyType::None; c.train_normal]);
    push(Split::Val, vec![AnomalyType::None; c.val_normal]);
    push(Split::Val, cfg.allocate(c.val_anomaly));
    push(Split::Test, vec![AnomalyType::None; c.test_normal]);
    push(Split::Test, cfg.allocate(c.test_anomaly));
    out
}

/// Generates one planned member.
pub fn generate(cfg: &PhantomConfig, item: &PlannedVolume) -> Result<Phantom> {
    let mut p = match item.anomaly_type {
        AnomalyType::None => gen_healthy(cfg, item.instance)?,
        kind => gen_anomalous(cfg, item.instance, kind)?,
    };
    p.volume.meta.subject = item.volume_id.clone();
    p.mask.meta.subject = item.volume_id.clone();
    Ok(p)
}
