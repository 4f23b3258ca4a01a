//! Central-difference verification of tape gradients.

use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued graph that can be built in any precision.
///
/// `x` is the leaf being checked; everything else the graph needs is captured
/// by the implementor (typically in `f64`) and cast on the fly.
pub trait ScalarGraph {
    fn build<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var>;
}

/// Precision of the analytic gradient under test.
///
/// In `F32` mode the analytic gradient comes from an `f32` tape while the
/// central differences are taken on the same graph evaluated in `f64` at the
/// `f32`-rounded point; an all-`f32` difference quotient has a noise floor of
/// roughly `ε₃₂·|f| / h`, far above the tolerances we check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckPrecision {
    F32,
    F64,
}

fn analytic<T: Element, F: ScalarGraph>(f: &F, x: &Tensor<f64>) -> Result<Vec<f64>> {
    let mut tape = Tape::<T>::new();
    let xv = tape.leaf(x.cast::<T>().with_grad(true));
    let out = f.build(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let g = grads
        .get(xv)
        .ok_or_else(|| Error::Contract("checked leaf received no gradient".into()))?;
    Ok(g.data().iter().map(|v| v.as_f64()).collect())
}

/// Branch pattern of the graph at `point`.
fn branches_at<F: ScalarGraph>(f: &F, point: &Tensor<f64>) -> Result<Vec<bool>> {
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(point.clone());
    f.build(&mut tape, xv)?;
    Ok(tape.branches())
}

/// The graph on the smooth piece `pattern`, at `point` moved by `step` along
/// coordinate `i`.
fn probe<F: ScalarGraph>(
    f: &F,
    pattern: &[bool],
    point: &Tensor<f64>,
    i: usize,
    step: f64,
) -> Result<f64> {
    let mut p = point.clone();
    p.data_mut()[i] += step;
    let mut tape = Tape::with_branches(pattern.to_vec());
    let xv = tape.leaf(p);
    let out = f.build(&mut tape, xv)?;
    tape.value(out).item()
}

/// Richardson-extrapolated central difference `(4·D(h/2) − D(h)) / 3` along
/// coordinate `i`.
fn central<F: ScalarGraph>(
    f: &F,
    pattern: &[bool],
    point: &Tensor<f64>,
    i: usize,
    h: f64,
) -> Result<f64> {
    let [a, b, c, d] = [h, -h, h / 2.0, -h / 2.0].map(|s| probe(f, pattern, point, i, s));
    let wide = (a? - b?) / (2.0 * h);
    let narrow = (c? - d?) / h;
    Ok((4.0 * narrow - wide) / 3.0)
}

/// Max-norm relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` between the analytic
/// gradient `a` and extrapolated central differences `n` with step `h`.
///
/// Measured against the tensor's largest component rather than element by
/// element: a component orders of magnitude below the rest sits under the
/// difference quotient's rounding floor `≈ ε·|f| / h` in any precision.
///
/// The differences are taken on the smooth piece containing `x`: ReLU and L1
/// nodes keep the branch they take at `x` (see [`Tape::with_branches`]). That
/// piece agrees with the graph on a neighbourhood of `x`, so it has the same
/// derivative there, and `h` need not be small enough to avoid every kink.
pub fn grad_check<F: ScalarGraph>(
    f: &F,
    x: &Tensor<f64>,
    h: f64,
    precision: CheckPrecision,
) -> Result<f64> {
    let (ana, point) = match precision {
        CheckPrecision::F32 => (analytic::<f32, F>(f, x)?, x.cast::<f32>().cast::<f64>()),
        CheckPrecision::F64 => (analytic::<f64, F>(f, x)?, x.clone()),
    };
    let pattern = branches_at(f, &point)?;
    let (mut diff, mut scale) = (0.0f64, 1e-300f64);
    for (i, &a) in ana.iter().enumerate() {
        let num = central(f, &pattern, &point, i, h)?;
        diff = diff.max((a - num).abs());
        scale = scale.max(a.abs()).max(num.abs());
    }
    Ok(diff / scale)
}
