//! Volume preprocessing: rigid alignment, resampling, sinus cropping,
//! left/right canonicalisation, resizing and intensity normalisation.
//!
//! Every step is a pure function of its input volume. [`Pipeline`] chains
//! them and refuses any order other than
//! rigid → resample → crop → flip → resize → normalize (steps may be omitted).

use crate::error::{Error, Result};
use crate::tensor::interp::{axis_taps, sample_trilinear, Tap};
use crate::volume::{Side, Volume};

/// Rotation about the volume center followed by a translation, both in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Right-handed rotation by `degrees` about `axis` (0 = D, 1 = H, 2 = W).
    pub fn rotation_about(axis: usize, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        // Snap so quarter turns are exact permutations.
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        let (s, c) = (snap(s), snap(c));
        let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut r = Self::identity().rotation;
        r[i][i] = c;
        r[i][j] = -s;
        r[j][i] = s;
        r[j][j] = c;
        Self {
            rotation: r,
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter()
            .flatten()
            .chain(&self.translation)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Transform(
                "rigid transform has non-finite entries".into(),
            ));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return Err(Error::Transform(format!(
                        "rotation is not orthonormal: (RᵀR)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::Transform(format!(
                "rotation has determinant {det}, expected +1"
            )));
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resamples `v` under `t`: output voxel `p` (in mm, relative to the volume
/// center `c`) reads the input at `c + Rᵀ(p − c − t)`. Reads outside the
/// volume are 0.
pub fn apply_rigid(v: &Volume, t: &RigidTransform) -> Result<Volume> {
    t.validate()?;
    let sp = v.spacing.map(|s| s as f64);
    let center = [0, 1, 2].map(|a| (v.dims[a] as f64 - 1.0) / 2.0 * sp[a]);
    let r = &t.rotation;
    let mut data = Vec::with_capacity(v.len());
    for d in 0..v.dims[0] {
        for h in 0..v.dims[1] {
            for w in 0..v.dims[2] {
                let idx = [d, h, w];
                let q = [0, 1, 2].map(|a| idx[a] as f64 * sp[a] - center[a] - t.translation[a]);
                let src = [0, 1, 2].map(|a| {
                    let rotated: f64 = (0..3).map(|k| r[k][a] * q[k]).sum();
                    snap((rotated + center[a]) / sp[a])
                });
                data.push(sample_trilinear(&v.data, v.dims, src, 0.0));
            }
        }
    }
    Volume::new(v.dims, v.spacing, data, v.meta.clone())
}

fn resample_axis(src: &[f64], dims: [usize; 3], axis: usize, taps: &[Tap]) -> Vec<f64> {
    let mut out_dims = dims;
    out_dims[axis] = taps.len();
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for o in 0..outer {
        let base = o * dims[axis] * stride;
        for tap in taps {
            let lo = base + tap.lo * stride;
            let hi = base + tap.hi * stride;
            for i in 0..stride {
                let a = src[lo + i];
                out.push(if tap.frac == 0.0 {
                    a
                } else {
                    a * (1.0 - tap.frac) + src[hi + i] * tap.frac
                });
            }
        }
    }
    out
}

/// Trilinear resize to `target` with the half-pixel convention shared with
/// the network upsample layer. Spacing scales so the physical extent is kept.
pub fn resample_trilinear(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.contains(&0) {
        return Err(Error::Dimension(format!(
            "resample target {target:?} must be positive"
        )));
    }
    let mut dims = v.dims;
    let mut buf: Vec<f64> = v.data.iter().map(|&x| x as f64).collect();
    for axis in 0..3 {
        if dims[axis] != target[axis] {
            buf = resample_axis(&buf, dims, axis, &axis_taps(dims[axis], target[axis]));
            dims[axis] = target[axis];
        }
    }
    let spacing =
        [0, 1, 2].map(|a| (v.spacing[a] as f64 * v.dims[a] as f64 / target[a] as f64) as f32);
    Volume::new(
        target,
        spacing,
        buf.into_iter().map(|x| x as f32).collect(),
        v.meta.clone(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropSize {
    Small,
    Medium,
    Large,
}

impl CropSize {
    pub fn as_str(self) -> &'static str {
        match self {
            CropSize::Small => "small",
            CropSize::Medium => "medium",
            CropSize::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(CropSize::Small),
            "medium" => Ok(CropSize::Medium),
            "large" => Ok(CropSize::Large),
            other => Err(Error::Config(format!("unknown crop size '{other}'"))),
        }
    }

    /// Window extent in (D, H, W) voxels of the 128³ frame.
    pub fn extent(self) -> [usize; 3] {
        match self {
            CropSize::Small => [33, 47, 45],
            CropSize::Medium => [46, 57, 55],
            CropSize::Large => [53, 67, 65],
        }
    }
}

/// A sinus crop window: an extent plus one center per side.
#[derive(Clone, Debug, PartialEq)]
pub struct CropSpec {
    pub name: CropSize,
    pub extent: [usize; 3],
    pub center_left: [usize; 3],
    pub center_right: [usize; 3],
}

impl CropSpec {
    /// Window of the given size around mirror-symmetric default centers.
    pub fn new(name: CropSize) -> Self {
        Self {
            name,
            extent: name.extent(),
            center_left: [64, 64, 40],
            center_right: [64, 64, 87],
        }
    }

    pub fn center(&self, side: Side) -> [usize; 3] {
        match side {
            Side::Left => self.center_left,
            Side::Right | Side::RightFlipped => self.center_right,
        }
    }

    /// First voxel of the window; the center sits at `start + extent / 2`.
    pub fn start(&self, side: Side, dims: [usize; 3]) -> Result<[usize; 3]> {
        let c = self.center(side);
        let mut start = [0; 3];
        for a in 0..3 {
            let half = self.extent[a] / 2;
            if self.extent[a] == 0 || c[a] < half || c[a] - half + self.extent[a] > dims[a] {
                return Err(Error::Geometry(format!(
                    "{} crop on axis {a}: extent {} around center {} leaves [0, {})",
                    self.name.as_str(),
                    self.extent[a],
                    c[a],
                    dims[a]
                )));
            }
            start[a] = c[a] - half;
        }
        Ok(start)
    }
}

impl Default for CropSpec {
    fn default() -> Self {
        Self::new(CropSize::Medium)
    }
}

/// Copies the `spec` window for `side` out of `v` and tags the side.
pub fn extract_subvolume(v: &Volume, spec: &CropSpec, side: Side) -> Result<Volume> {
    let s = spec.start(side, v.dims)?;
    let [ed, eh, ew] = spec.extent;
    let mut data = Vec::with_capacity(ed * eh * ew);
    for d in s[0]..s[0] + ed {
        for h in s[1]..s[1] + eh {
            let row = v.index(d, h, s[2]);
            data.extend_from_slice(&v.data[row..row + ew]);
        }
    }
    let mut meta = v.meta.clone();
    meta.side = side;
    Volume::new(spec.extent, v.spacing, data, meta)
}

/// Mirrors the left–right (`W`) axis; toggles `Right` ↔ `RightFlipped`.
pub fn flip_coronal(v: &Volume) -> Volume {
    let w = v.dims[2];
    let mut out = v.clone();
    for row in out.data.chunks_exact_mut(w) {
        row.reverse();
    }
    out.meta.side = match v.meta.side {
        Side::Left => Side::Left,
        Side::Right => Side::RightFlipped,
        Side::RightFlipped => Side::Right,
    };
    out
}

/// Resizes to the network input extent.
pub fn resize_to_input(v: &Volume, input_dims: [usize; 3]) -> Result<Volume> {
    resample_trilinear(v, input_dims)
}

/// Per-volume min–max scaling to `[0, 1]`; a constant volume becomes all zeros.
pub fn normalize01(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let mut out = v.clone();
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        out.data.iter_mut().for_each(|x| *x = 0.0);
        return out;
    }
    let (lo, span) = (lo as f64, hi as f64 - lo as f64);
    for x in &mut out.data {
        *x = ((*x as f64 - lo) / span) as f32;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Rigid(RigidTransform),
    Resample([usize; 3]),
    Crop(CropSpec),
    /// Mirrors right-side volumes only.
    Flip,
    Resize([usize; 3]),
    Normalize,
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::Rigid(_) => "rigid",
            Step::Resample(_) => "resample",
            Step::Crop(_) => "crop",
            Step::Flip => "flip",
            Step::Resize(_) => "resize",
            Step::Normalize => "normalize",
        }
    }

    fn rank(&self) -> usize {
        match self {
            Step::Rigid(_) => 0,
            Step::Resample(_) => 1,
            Step::Crop(_) => 2,
            Step::Flip => 3,
            Step::Resize(_) => 4,
            Step::Normalize => 5,
        }
    }

    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        match self {
            Step::Rigid(t) => apply_rigid(v, t),
            Step::Resample(d) => resample_trilinear(v, *d),
            Step::Crop(spec) => extract_subvolume(v, spec, v.meta.side),
            Step::Flip if v.meta.side == Side::Right => Ok(flip_coronal(v)),
            Step::Flip => Ok(v.clone()),
            Step::Resize(d) => resize_to_input(v, *d),
            Step::Normalize => Ok(normalize01(v)),
        }
    }
}

/// An order-checked preprocessing chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    steps: Vec<Step>,
}

impl Pipeline {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        for pair in steps.windows(2) {
            if pair[1].rank() <= pair[0].rank() {
                return Err(Error::Config(format!(
                    "preprocessing step '{}' may not follow '{}'; order is rigid, resample, crop, flip, resize, normalize",
                    pair[1].name(),
                    pair[0].name()
                )));
            }
        }
        Ok(Self { steps })
    }

    /// The full clinical chain with an identity registration.
    pub fn full(crop: CropSpec, input_dims: [usize; 3]) -> Self {
        Self {
            steps: vec![
                Step::Rigid(RigidTransform::identity()),
                Step::Resample([128; 3]),
                Step::Crop(crop),
                Step::Flip,
                Step::Resize(input_dims),
                Step::Normalize,
            ],
        }
    }

    /// The chain for already-cropped sinus volumes such as phantoms.
    pub fn cropped(input_dims: [usize; 3]) -> Self {
        Self {
            steps: vec![Step::Flip, Step::Resize(input_dims), Step::Normalize],
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn run(&self, v: &Volume) -> Result<Volume> {
        let mut cur = v.clone();
        for step in &self.steps {
            cur = step.apply(&cur)?;
        }
        Ok(cur)
    }

    /// Applies the geometric steps only and binarises at 0.5, so a lesion
    /// mask stays aligned with its preprocessed volume.
    pub fn run_mask(&self, mask: &Volume) -> Result<Volume> {
        let mut cur = mask.clone();
        for step in self.steps.iter().filter(|s| !matches!(s, Step::Normalize)) {
            cur = step.apply(&cur)?;
        }
        cur.data
            .iter_mut()
            .for_each(|m| *m = if *m > 0.5 { 1.0 } else { 0.0 });
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_matrix_is_exact() {
        let r = RigidTransform::rotation_about(2, 90.0);
        r.validate().unwrap();
        assert_eq!(
            r.rotation,
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        );
    }

    #[test]
    fn rejects_reflections_and_skew() {
        let mut t = RigidTransform::identity();
        t.rotation[0][0] = -1.0;
        assert!(matches!(t.validate(), Err(Error::Transform(_))));
        t.rotation[0][0] = 1.1;
        assert!(matches!(t.validate(), Err(Error::Transform(_))));
    }

    #[test]
    fn crop_out_of_bounds_names_the_axis() {
        let mut spec = CropSpec::new(CropSize::Large);
        spec.center_left = [64, 10, 64];
        let v = Volume::filled([128; 3], 0.0);
        let err = extract_subvolume(&v, &spec, Side::Left).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }

    #[test]
    fn default_windows_fit_both_sides() {
        for size in [CropSize::Small, CropSize::Medium, CropSize::Large] {
            let spec = CropSpec::new(size);
            spec.start(Side::Left, [128; 3]).unwrap();
            spec.start(Side::Right, [128; 3]).unwrap();
        }
    }
}
