use super::interp::{axis_taps, Tap};
use super::Element;

pub(crate) struct UpsamplePlan {
    pub input: [usize; 5],
    pub output: [usize; 5],
    taps: [Vec<Tap>; 3],
}

impl UpsamplePlan {
    pub fn new(input: [usize; 5], output_spatial: [usize; 3]) -> Self {
        let [n, c, d, h, w] = input;
        let [od, oh, ow] = output_spatial;
        Self {
            input,
            output: [n, c, od, oh, ow],
            taps: [axis_taps(d, od), axis_taps(h, oh), axis_taps(w, ow)],
        }
    }

    /// Visits every output voxel with its eight (source index, weight) taps.
    #[inline(always)]
    fn visit<T: Element>(&self, mut f: impl FnMut(usize, usize, T)) {
        let [n, c, d, h, w] = self.input;
        let [_, _, od, oh, ow] = self.output;
        let mut out = 0;
        for plane in 0..n * c {
            let base = plane * d * h * w;
            for tz in &self.taps[0][..od] {
                let wz = [T::from_f64(1.0 - tz.frac), T::from_f64(tz.frac)];
                let iz = [tz.lo, tz.hi];
                for ty in &self.taps[1][..oh] {
                    let wy = [T::from_f64(1.0 - ty.frac), T::from_f64(ty.frac)];
                    let iy = [ty.lo, ty.hi];
                    for tx in &self.taps[2][..ow] {
                        let wx = [T::from_f64(1.0 - tx.frac), T::from_f64(tx.frac)];
                        let ix = [tx.lo, tx.hi];
                        for a in 0..2 {
                            for b in 0..2 {
                                let row = base + (iz[a] * h + iy[b]) * w;
                                let wab = wz[a] * wy[b];
                                f(out, row + ix[0], wab * wx[0]);
                                f(out, row + ix[1], wab * wx[1]);
                            }
                        }
                        out += 1;
                    }
                }
            }
        }
    }

    pub fn forward<T: Element>(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output.iter().product()];
        self.visit(|o, i, wgt: T| out[o] += wgt * x[i]);
        out
    }

    pub fn backward<T: Element>(&self, gout: &[T]) -> Vec<T> {
        let mut gx = vec![T::zero(); self.input.iter().product()];
        self.visit(|o, i, wgt: T| gx[i] += wgt * gout[o]);
        gx
    }
}
