//! Small vector helpers shared by the solvers.
//!
//! Inner products are sesquilinear: `dot(a, b) = Σ conj(a_i) b_i`.

use num_complex::Complex64;

pub type C64 = Complex64;
pub type CVec = Vec<C64>;

pub fn zeros(n: usize) -> CVec {
    vec![C64::new(0.0, 0.0); n]
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_real(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_assign(y: &mut [C64], x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn add_assign_real(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn scale(alpha: C64, x: &[C64]) -> CVec {
    x.iter().map(|v| alpha * v).collect()
}

pub fn to_complex(x: &[f64]) -> CVec {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}

pub fn all_finite(x: &[C64]) -> bool {
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Parallel map over `0..n` with results in index order.
#[cfg(feature = "parallel")]
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Parameter-space vectors that derivative transposes accumulate into.
pub trait ParamVec: Clone + Send + Sync {
    fn add_from(&mut self, other: &Self);
}

impl ParamVec for Vec<f64> {
    fn add_from(&mut self, other: &Self) {
        add_assign_real(self, other);
    }
}

impl ParamVec for Vec<C64> {
    fn add_from(&mut self, other: &Self) {
        add_assign(self, other);
    }
}
