//! Half-pixel (align-corners = false) linear interpolation tables.
//!
//! Output index `i` of an axis resized from `src_len` to `dst_len` samples the
//! source at `(i + 0.5) * src_len / dst_len - 0.5`, clamped to
//! `[0, src_len - 1]`. Both the differentiable upsample and volume resampling
//! use these tables, so they agree bit for bit.

/// Two-tap interpolation entry: `lo` with weight `1 - frac`, `hi` with `frac`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Source coordinate for output index `i`.
pub fn source_coord(i: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

pub fn axis_taps(src_len: usize, dst_len: usize) -> Vec<Tap> {
    (0..dst_len)
        .map(|i| {
            let x = source_coord(i, src_len, dst_len);
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            Tap {
                lo,
                hi,
                frac: x - lo as f64,
            }
        })
        .collect()
}

/// Samples a `[D,H,W]` field at a continuous voxel coordinate.
///
/// Reads outside `[0, dim-1]` along any axis contribute `outside`.
pub fn sample_trilinear(data: &[f32], dims: [usize; 3], p: [f64; 3], outside: f32) -> f32 {
    let mut idx = [[0usize; 2]; 3];
    let mut w = [[0f64; 2]; 3];
    let mut valid = [[false; 2]; 3];
    for a in 0..3 {
        let f = p[a].floor();
        let t = p[a] - f;
        for (k, off) in [0.0, 1.0].into_iter().enumerate() {
            let c = f + off;
            valid[a][k] = c >= 0.0 && c <= (dims[a] - 1) as f64;
            idx[a][k] = if valid[a][k] { c as usize } else { 0 };
            w[a][k] = if k == 0 { 1.0 - t } else { t };
        }
    }
    let mut acc = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                let weight = w[0][i] * w[1][j] * w[2][k];
                if weight == 0.0 {
                    continue;
                }
                let v = if valid[0][i] && valid[1][j] && valid[2][k] {
                    data[(idx[0][i] * dims[1] + idx[1][j]) * dims[2] + idx[2][k]]
                } else {
                    outside
                };
                acc += weight * v as f64;
            }
        }
    }
    acc as f32
}
