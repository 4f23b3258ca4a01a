//! Scalar volumes and their subject metadata.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
    /// A right-side volume mirrored into left-side appearance.
    RightFlipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Anomaly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnomalyType {
    None,
    Thickening,
    Polyp,
    Cyst,
}

macro_rules! string_enum {
    ($ty:ident, $what:literal, { $($variant:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $s),+ }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$variant),)+
                    other => Err(Error::Data(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(Side, "side", { Left => "left", Right => "right", RightFlipped => "right-flipped" });
string_enum!(Label, "label", { Normal => "normal", Anomaly => "anomaly" });
string_enum!(AnomalyType, "anomaly type", {
    None => "none",
    Thickening => "thickening",
    Polyp => "polyp",
    Cyst => "cyst",
});

impl AnomalyType {
    pub const LESIONS: [AnomalyType; 3] = [
        AnomalyType::Thickening,
        AnomalyType::Polyp,
        AnomalyType::Cyst,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VolumeMeta {
    pub subject: String,
    pub side: Side,
    pub label: Label,
    pub anomaly_type: AnomalyType,
    /// Additional key/value pairs carried through the file format (e.g. `seed`).
    pub extra: BTreeMap<String, String>,
}

impl Default for VolumeMeta {
    fn default() -> Self {
        Self {
            subject: String::new(),
            side: Side::Left,
            label: Label::Normal,
            anomaly_type: AnomalyType::None,
            extra: BTreeMap::new(),
        }
    }
}

impl VolumeMeta {
    pub fn validate(&self) -> Result<()> {
        match (self.label, self.anomaly_type) {
            (Label::Normal, AnomalyType::None) => Ok(()),
            (Label::Normal, t) => Err(Error::Data(format!(
                "normal volume '{}' carries anomaly type {t}",
                self.subject
            ))),
            (Label::Anomaly, AnomalyType::None) => Err(Error::Data(format!(
                "anomalous volume '{}' has no anomaly type",
                self.subject
            ))),
            _ => Ok(()),
        }
    }
}

/// A `[D,H,W]` field stored row-major with `W` fastest.
///
/// Axis convention: `D` runs anterior–posterior (coronal slices), `H` runs
/// superior–inferior (axial slices), `W` runs left–right (sagittal slices).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    /// Voxel size in millimetres along (D, H, W).
    pub spacing: [f32; 3],
    pub data: Vec<f32>,
    pub meta: VolumeMeta,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        data: Vec<f32>,
        meta: VolumeMeta,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "volume dims {dims:?} must be positive"
            )));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "volume dims {dims:?} need {n} voxels, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
            meta,
        })
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![value; dims.iter().product()],
            meta: VolumeMeta::default(),
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    data.push(f(d, h, w));
                }
            }
        }
        Self {
            dims,
            spacing: [1.0; 3],
            data,
            meta: VolumeMeta::default(),
        }
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(d, h, w)]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// `[1,1,D,H,W]` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [d, h, w] = self.dims;
        Tensor::new(vec![1, 1, d, h, w], self.data.clone()).expect("volume invariant")
    }

    /// Stacks same-sized volumes into `[N,1,D,H,W]`.
    pub fn batch(volumes: &[&Volume]) -> Result<Tensor<f32>> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::Dimension("cannot batch zero volumes".into()))?;
        let dims = first.dims;
        let mut data = Vec::with_capacity(volumes.len() * first.len());
        for v in volumes {
            if v.dims != dims {
                return Err(Error::Dimension(format!(
                    "batch mixes volume dims {dims:?} and {:?}",
                    v.dims
                )));
            }
            data.extend_from_slice(&v.data);
        }
        Tensor::new(vec![volumes.len(), 1, dims[0], dims[1], dims[2]], data)
    }

    /// Rebuilds a volume from a `[1,1,D,H,W]` tensor, keeping this volume's metadata.
    pub fn with_tensor_data(&self, t: &Tensor<f32>) -> Result<Self> {
        let [d, h, w] = self.dims;
        if t.shape() != [1, 1, d, h, w] {
            return Err(Error::Dimension(format!(
                "tensor {:?} does not match volume dims {:?}",
                t.shape(),
                self.dims
            )));
        }
        Ok(Self {
            data: t.data().to_vec(),
            ..self.clone()
        })
    }
}
