//! Residual heat maps: `|x − x̂|`, a cubic median filter, orthogonal slices
//! and a gray-to-red overlay written as binary PPM.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Median filter extent used for rendering.
pub const DEFAULT_KERNEL: usize = 5;

/// Voxel-wise `|x − x̂|`, carrying `x`'s metadata.
pub fn residual(x: &Volume, x_hat: &Volume) -> Result<Volume> {
    if x.dims != x_hat.dims {
        return Err(Error::Dimension(format!(
            "residual of volumes with dims {:?} and {:?}",
            x.dims, x_hat.dims
        )));
    }
    let data = x
        .data
        .iter()
        .zip(&x_hat.data)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(Volume { data, ..x.clone() })
}

/// Median over the `kernel³` neighborhood of each voxel, replicating edges.
pub fn median_filter3d(v: &Volume, kernel: usize) -> Result<Volume> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "median kernel {kernel} must be odd and >= 1"
        )));
    }
    let r = (kernel / 2) as isize;
    let [nd, nh, nw] = v.dims;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut window = Vec::with_capacity(kernel.pow(3));
    let mut out = Vec::with_capacity(v.len());
    for d in 0..nd as isize {
        for h in 0..nh as isize {
            for w in 0..nw as isize {
                window.clear();
                for dd in -r..=r {
                    let zd = clamp(d + dd, nd);
                    for dh in -r..=r {
                        let zh = clamp(h + dh, nh);
                        let row = (zd * nh + zh) * nw;
                        for dw in -r..=r {
                            window.push(v.data[row + clamp(w + dw, nw)]);
                        }
                    }
                }
                let mid = window.len() / 2;
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out.push(*m);
            }
        }
    }
    Ok(Volume {
        data: out,
        ..v.clone()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Plane {
    /// Fixed `D`; rows run along `H`, columns along `W`.
    Coronal,
    /// Fixed `H`; rows run along `D`, columns along `W`.
    Axial,
    /// Fixed `W`; rows run along `H`, columns along `D`.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Coronal, Plane::Axial, Plane::Sagittal];

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Coronal => "coronal",
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
        }
    }

    /// Volume axis held fixed by this plane.
    pub fn axis(self) -> usize {
        match self {
            Plane::Coronal => 0,
            Plane::Axial => 1,
            Plane::Sagittal => 2,
        }
    }

    /// Volume coordinate of image pixel `(row, col)` on slice `index`.
    pub fn voxel(self, index: usize, row: usize, col: usize) -> [usize; 3] {
        match self {
            Plane::Coronal => [index, row, col],
            Plane::Axial => [row, index, col],
            Plane::Sagittal => [col, row, index],
        }
    }

    /// `(rows, cols)` of this plane's slices of a `dims` volume.
    pub fn image_dims(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Plane::Coronal => (dims[1], dims[2]),
            Plane::Axial => (dims[0], dims[2]),
            Plane::Sagittal => (dims[1], dims[0]),
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }
}

pub fn slice_extract(v: &Volume, plane: Plane, index: usize) -> Result<Image> {
    let n = v.dims[plane.axis()];
    if index >= n {
        return Err(Error::Geometry(format!(
            "{plane} slice {index} outside [0, {n})"
        )));
    }
    let (rows, cols) = plane.image_dims(v.dims);
    let mut data = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let [d, h, w] = plane.voxel(index, row, col);
            data.push(v.get(d, h, w));
        }
    }
    Ok(Image { rows, cols, data })
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Binary PPM (`P6`, max value 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(self.data.iter().flatten());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// Overlay opacity `clamp(r / r_max, 0, 1)`; 0 everywhere when `r_max` is 0.
pub fn overlay_alpha(r: f32, r_max: f32) -> f32 {
    if r_max > 0.0 {
        (r / r_max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Blends the gray underlay `g = clamp(base, 0, 1)` toward pure red by
/// `α = r / r_max`: `RGB = (1 − α)·(g, g, g) + α·(1, 0, 0)`.
pub fn render_heatmap(base: &Image, residual: &Image, r_max: f32) -> Result<RgbImage> {
    if (base.rows, base.cols) != (residual.rows, residual.cols) {
        return Err(Error::Dimension(format!(
            "underlay {}x{} and residual {}x{} differ",
            base.rows, base.cols, residual.rows, residual.cols
        )));
    }
    let data = base
        .data
        .iter()
        .zip(&residual.data)
        .map(|(&b, &r)| {
            let g = b.clamp(0.0, 1.0);
            let a = overlay_alpha(r, r_max);
            [
                to_byte((1.0 - a) * g + a),
                to_byte((1.0 - a) * g),
                to_byte((1.0 - a) * g),
            ]
        })
        .collect();
    Ok(RgbImage {
        rows: base.rows,
        cols: base.cols,
        data,
    })
}

/// One rendered slice.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSlice {
    pub plane: Plane,
    pub index: usize,
    pub image: RgbImage,
}

/// `volumeid_plane_index.ppm`.
pub fn file_name(volume_id: &str, plane: Plane, index: usize) -> String {
    format!("{volume_id}_{plane}_{index}.ppm")
}

/// Filtered residual plus one slice per plane through its maximum, normalised
/// by that maximum.
pub fn heatmaps(x: &Volume, x_hat: &Volume, kernel: usize) -> Result<(Volume, Vec<HeatmapSlice>)> {
    let filtered = median_filter3d(&residual(x, x_hat)?, kernel)?;
    let (argmax, r_max) =
        filtered
            .data
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, &r)| {
                if r > best.1 {
                    (i, r)
                } else {
                    best
                }
            });
    let [_, nh, nw] = x.dims;
    let at = [argmax / (nh * nw), (argmax / nw) % nh, argmax % nw];
    let slices = Plane::ALL
        .iter()
        .map(|&plane| {
            let index = at[plane.axis()];
            let image = render_heatmap(
                &slice_extract(x, plane, index)?,
                &slice_extract(&filtered, plane, index)?,
                r_max,
            )?;
            Ok(HeatmapSlice {
                plane,
                index,
                image,
            })
        })
        .collect::<Result<_>>()?;
    Ok((filtered, slices))
}
