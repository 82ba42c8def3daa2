//! Numeric kernels shared by the transformer's forward and backward passes.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

/// Floating-point element type of a model. Production runs in `f32`;
/// gradient checks run the same code in `f64`.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache<S> {
    pub xhat: Array2<S>,
    pub inv_std: Array1<S>,
}

pub(crate) fn layer_norm<S: Scalar>(
    x: ArrayView2<S>,
    gain: ArrayView1<S>,
    bias: ArrayView1<S>,
) -> (Array2<S>, LnCache<S>) {
    let d = S::lit(x.ncols() as f64);
    let eps = S::lit(LN_EPS);
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.outer_iter_mut().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<S>() / d;
        *istd = S::one() / (var + eps).sqrt();
        let s = *istd;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row).and(&gain).and(&bias).for_each(|v, &g, &b| *v = *v * g + b);
    });
    (y, LnCache { xhat, inv_std })
}

/// Returns `dx`; accumulates into `dgain`/`dbias`.
pub(crate) fn layer_norm_backward<S: Scalar>(
    dy: ArrayView2<S>,
    cache: &LnCache<S>,
    gain: ArrayView1<S>,
    dgain: &mut Array1<S>,
    dbias: &mut Array1<S>,
) -> Array2<S> {
    let d = S::lit(dy.ncols() as f64);
    *dgain += &(&dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, dyr), xh), &istd) in dx
        .outer_iter_mut()
        .zip(dy.outer_iter())
        .zip(cache.xhat.outer_iter())
        .zip(cache.inv_std.iter())
    {
        let dxhat: Array1<S> = &dyr * &gain;
        let mean_d = dxhat.sum() / d;
        let mean_dx = dxhat.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>() / d;
        Zip::from(&mut out)
            .and(&dxhat)
            .and(&xh)
            .for_each(|o, &g, &h| *o = istd * (g - mean_d - h * mean_dx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

// libm tanh is several times slower than exp
fn tanh<S: Scalar>(z: S) -> S {
    let two = S::lit(2.0);
    S::one() - two / ((two * z).exp() + S::one())
}

pub(crate) fn gelu<S: Scalar>(u: S) -> S {
    let half = S::lit(0.5);
    let inner = S::lit(GELU_C) * (u + S::lit(GELU_A) * u * u * u);
    half * u * (S::one() + tanh(inner))
}

pub(crate) fn gelu_grad<S: Scalar>(u: S) -> S {
    let half = S::lit(0.5);
    let inner = S::lit(GELU_C) * (u + S::lit(GELU_A) * u * u * u);
    let th = tanh(inner);
    let dinner = S::lit(GELU_C) * (S::one() + S::lit(3.0 * GELU_A) * u * u);
    half * (S::one() + th) + half * u * (S::one() - th * th) * dinner
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<S: Scalar>(mut m: ArrayViewMut2<S>) {
    for mut row in m.outer_iter_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = S::one() / sum;
        row.mapv_inplace(|v| v * inv);
    }
}

/// `x · w + b` with `b` broadcast over rows.
pub(crate) fn affine<S: Scalar>(x: ArrayView2<S>, w: ArrayView2<S>, b: ArrayView1<S>) -> Array2<S> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tanh_matches_std() {
        for &z in &[-40.0f64, -3.0, -1e-3, 0.0, 1e-3, 0.5, 3.0, 40.0] {
            assert!((tanh(z) - z.tanh()).abs() < 1e-15);
        }
        for &z in &[-9.0f32, -0.25, 0.0, 0.25, 9.0, 100.0] {
            assert!((tanh(z) - z.tanh()).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &u in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = array![[0.3f64, -1.2, 2.0, 0.1], [1.0, 1.5, -0.5, 0.0]];
        let g = array![1.1f64, 0.9, -0.3, 2.0];
        let b = array![0.1f64, 0.0, -0.2, 0.3];
        let w = array![[0.5f64, -1.0, 0.25, 2.0], [1.5, 0.3, -0.7, 0.2]];
        let loss = |x: &Array2<f64>| (&layer_norm(x.view(), g.view(), b.view()).0 * &w).sum();
        let (_, cache) = layer_norm(x.view(), g.view(), b.view());
        let mut dg = Array1::zeros(4);
        let mut db = Array1::zeros(4);
        let dx = layer_norm_backward(w.view(), &cache, g.view(), &mut dg, &mut db);
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let fd = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "{fd} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = array![[1.0f32, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        softmax_rows(m.view_mut());
        for row in m.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!((m[[1, 0]] - 0.5).abs() < 1e-6);
    }
}
