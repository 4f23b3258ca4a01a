//! Direct 3D cross-correlation kernels.
//!
//! Loops are ordered so the innermost pass walks one output row, which keeps
//! stride-1 layers vectorizable without an im2col buffer.

use super::Element;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub input: [usize; 5],
    pub weight: [usize; 5],
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_len(&self, axis: usize) -> usize {
        (self.input[2 + axis] + 2 * self.padding - self.weight[2 + axis]) / self.stride + 1
    }

    pub fn output(&self) -> [usize; 5] {
        [
            self.input[0],
            self.weight[0],
            self.out_len(0),
            self.out_len(1),
            self.out_len(2),
        ]
    }
}

/// Output indices `o` in `[lo, hi)` whose input tap `o*stride + k - pad`
/// lands inside `[0, in_len)`.
#[inline]
fn valid_range(
    k: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let top = in_len + pad - 1;
    if top < k {
        return (0, 0);
    }
    let hi = ((top - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Walks every (output voxel, kernel tap) pair that touches the input,
/// handing the callback flat offsets into input, weight and output.
#[inline(always)]
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let [n_batch, cin, d, h, w] = g.input;
    let [fout, _, kd, kh, kw] = g.weight;
    let [_, _, od, oh, ow] = g.output();
    let s = g.stride;
    let p = g.padding;
    for n in 0..n_batch {
        for fo in 0..fout {
            let out_base = (n * fout + fo) * od * oh * ow;
            for c in 0..cin {
                let in_base = (n * cin + c) * d * h * w;
                let w_base = (fo * cin + c) * kd * kh * kw;
                for a in 0..kd {
                    let (da, db) = valid_range(a, p, s, d, od);
                    for b in 0..kh {
                        let (ha, hb) = valid_range(b, p, s, h, oh);
                        for e in 0..kw {
                            let (wa, wb) = valid_range(e, p, s, w, ow);
                            if wa >= wb {
                                continue;
                            }
                            let widx = w_base + (a * kh + b) * kw + e;
                            for z in da..db {
                                let iz = z * s + a - p;
                                for y in ha..hb {
                                    let iy = y * s + b - p;
                                    let orow = out_base + (z * oh + y) * ow;
                                    let irow = in_base + (iz * h + iy) * w;
                                    f(irow + wa * s + e - p, widx, orow + wa, wb - wa, s);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(x: &[T], wt: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let out_shape = g.output();
    let spatial = out_shape[2] * out_shape[3] * out_shape[4];
    let mut out = vec![T::zero(); out_shape.iter().product()];
    for (i, chunk) in out.chunks_mut(spatial).enumerate() {
        let b = bias[i % out_shape[1]];
        chunk.iter_mut().for_each(|v| *v = b);
    }
    for_each_tap(g, |i0, widx, o0, len, s| {
        let wv = wt[widx];
        let orow = &mut out[o0..o0 + len];
        if s == 1 {
            for (o, &xv) in orow.iter_mut().zip(&x[i0..i0 + len]) {
                *o += wv * xv;
            }
        } else {
            for (j, o) in orow.iter_mut().enumerate() {
                *o += wv * x[i0 + j * s];
            }
        }
    });
    out
}

/// Gradients with respect to (input, weight, bias).
pub(crate) fn backward<T: Element>(
    x: &[T],
    wt: &[T],
    gout: &[T],
    g: &ConvGeom,
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let mut gx = want_input.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_weight.then(|| vec![T::zero(); wt.len()]);
    for_each_tap(g, |i0, widx, o0, len, s| {
        let go = &gout[o0..o0 + len];
        if let Some(gx) = gx.as_mut() {
            let wv = wt[widx];
            if s == 1 {
                for (gi, &gv) in gx[i0..i0 + len].iter_mut().zip(go) {
                    *gi += wv * gv;
                }
            } else {
                for (j, &gv) in go.iter().enumerate() {
                    gx[i0 + j * s] += wv * gv;
                }
            }
        }
        if let Some(gw) = gw.as_mut() {
            let mut acc = T::zero();
            if s == 1 {
                for (&xv, &gv) in x[i0..i0 + len].iter().zip(go) {
                    acc += xv * gv;
                }
            } else {
                for (j, &gv) in go.iter().enumerate() {
                    acc += x[i0 + j * s] * gv;
                }
            }
            gw[widx] += acc;
        }
    });
    let out_shape = g.output();
    let spatial = out_shape[2] * out_shape[3] * out_shape[4];
    let mut gb = vec![T::zero(); out_shape[1]];
    for (i, chunk) in gout.chunks(spatial).enumerate() {
        gb[i % out_shape[1]] += chunk.iter().copied().sum::<T>();
    }
    (gx, gw, gb)
}
