//! Derivatives of φ_ℓ(L(p))w with respect to a parameter of L, with `w` held
//! fixed.
//!
//! Resolvent path: with `v_i = (s_i I − L)^{-1} w`,
//! `∂(φ(L)w)/∂p · d = Σ_i c_i (s_i I − L)^{-1} ∂(L v_i)/∂p · d`.

use crate::error::{EtdError, Result};
use crate::linalg::{axpy, CVec, ParamVec, C64};
use crate::phi::{matvec, matvec_adj, poly_coefficients, resolvent_inverses, PolyBasis, QuadratureNodes};
use nalgebra::DMatrix;

/// `forward(v, d) = ∂(L v)/∂p · d`; `transpose(v, z) = (∂(L v)/∂p)^H z`.
pub struct OperatorDerivativeAction<'a, P> {
    pub forward: &'a (dyn Fn(&[C64], &P) -> CVec + Sync),
    pub transpose: &'a (dyn Fn(&[C64], &[C64]) -> P + Sync),
}

/// `Σ_i g_i R_i ∂(L R_i w)·d` for precomputed resolvents `R_i`.
pub fn resolvent_forward<P>(
    inverses: &[DMatrix<C64>],
    weights: &[C64],
    w: &[C64],
    forward: &(dyn Fn(&[C64], &P) -> CVec + Sync),
    dir: &P,
) -> CVec {
    let mut out = vec![C64::new(0.0, 0.0); w.len()];
    for (r, g) in inverses.iter().zip(weights) {
        if *g == C64::new(0.0, 0.0) {
            continue;
        }
        let v = matvec(r, w);
        let dv = forward(&v, dir);
        axpy(*g, &matvec(r, &dv), &mut out);
    }
    out
}

/// Adjoint of [`resolvent_forward`] in the direction argument.
pub fn resolvent_transpose<P: ParamVec>(
    inverses: &[DMatrix<C64>],
    weights: &[C64],
    w: &[C64],
    transpose: &(dyn Fn(&[C64], &[C64]) -> P + Sync),
    z: &[C64],
    zero: P,
) -> P {
    let mut acc = zero;
    for (r, g) in inverses.iter().zip(weights) {
        if *g == C64::new(0.0, 0.0) {
            continue;
        }
        let v = matvec(r, w);
        let rz: CVec = matvec_adj(r, z).into_iter().map(|x| g.conj() * x).collect();
        acc.add_from(&transpose(&v, &rz));
    }
    acc
}

fn check_dims(l: &DMatrix<C64>, w: &[C64]) -> Result<()> {
    if l.nrows() != w.len() || l.ncols() != w.len() {
        return Err(EtdError::Dimension(format!("operator {}x{} with vector {}", l.nrows(), l.ncols(), w.len())));
    }
    Ok(())
}

pub fn dphi_apply_forward<P>(
    _ell: usize,
    l: &DMatrix<C64>,
    w: &[C64],
    dl: &OperatorDerivativeAction<P>,
    dir: &P,
    nodes: &QuadratureNodes,
) -> Result<CVec> {
    check_dims(l, w)?;
    let inv = resolvent_inverses(l, &nodes.nodes)?;
    let mut out = resolvent_forward(&inv, &nodes.weights, w, dl.forward, dir);
    if nodes.real_symmetric {
        out.iter_mut().for_each(|x| x.im = 0.0);
    }
    Ok(out)
}

/// `zero` is the additive identity of the parameter space.
pub fn dphi_apply_transpose<P: ParamVec>(
    _ell: usize,
    l: &DMatrix<C64>,
    w: &[C64],
    dl: &OperatorDerivativeAction<P>,
    z: &[C64],
    nodes: &QuadratureNodes,
    zero: P,
) -> Result<P> {
    check_dims(l, w)?;
    let inv = resolvent_inverses(l, &nodes.nodes)?;
    let z: CVec = if nodes.real_symmetric { z.iter().map(|x| C64::new(x.re, 0.0)).collect() } else { z.to_vec() };
    Ok(resolvent_transpose(&inv, &nodes.weights, w, dl.transpose, &z, zero))
}

/// Derivative of the polynomial approximation through its recurrence.
pub fn dphi_apply_poly_forward<P>(
    ell: usize,
    l: &DMatrix<C64>,
    w: &[C64],
    dl: &OperatorDerivativeAction<P>,
    dir: &P,
    degree: usize,
    basis: PolyBasis,
) -> Result<CVec> {
    check_dims(l, w)?;
    let coef = poly_coefficients(ell, degree, basis)?;
    let n = w.len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    match basis {
        PolyBasis::Monomial => {
            // p_j = L^j w, dp_j = ∂L·p_{j-1} + L dp_{j-1}
            let mut p = w.to_vec();
            let mut dp = vec![C64::new(0.0, 0.0); n];
            for c in &coef[1..] {
                let mut next_dp = (dl.forward)(&p, dir);
                crate::linalg::add_assign(&mut next_dp, &matvec(l, &dp));
                p = matvec(l, &p);
                dp = next_dp;
                axpy(C64::new(*c, 0.0), &dp, &mut out);
            }
        }
        PolyBasis::Chebyshev => {
            let mut t_prev = w.to_vec();
            let mut t_cur = matvec(l, w);
            let mut d_prev = vec![C64::new(0.0, 0.0); n];
            let mut d_cur = (dl.forward)(w, dir);
            axpy(C64::new(coef[1], 0.0), &d_cur, &mut out);
            for c in &coef[2..] {
                let lt = matvec(l, &t_cur);
                let dlt = (dl.forward)(&t_cur, dir);
                let ld = matvec(l, &d_cur);
                let t_next: CVec = lt.iter().zip(&t_prev).map(|(a, b)| 2.0 * a - b).collect();
                let d_next: CVec = (0..n).map(|i| 2.0 * (dlt[i] + ld[i]) - d_prev[i]).collect();
                axpy(C64::new(*c, 0.0), &d_next, &mut out);
                t_prev = std::mem::replace(&mut t_cur, t_next);
                d_prev = std::mem::replace(&mut d_cur, d_next);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, dot_real};
    use crate::phi::{contour_for_spectrum, contour_nodes, phi_apply_dense, phi_apply_poly, ContourSpec, SpectrumBound};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    /// L(p) = L0 + p D with real symmetric L0 and diagonal D.
    struct Family {
        l0: DMatrix<C64>,
        d: Vec<f64>,
    }

    impl Family {
        fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let s: DMatrix<f64> = &b * b.transpose();
            let l0 = (s / -(n as f64)).map(|x| c(x - 0.2));
            Self { l0, d: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect() }
        }
        fn at(&self, p: f64) -> DMatrix<C64> {
            let mut l = self.l0.clone();
            for (i, di) in self.d.iter().enumerate() {
                l[(i, i)] += c(p * di);
            }
            l
        }
        fn fwd(&self) -> impl Fn(&[C64], &Vec<f64>) -> CVec + Sync + '_ {
            move |v, dir| v.iter().zip(&self.d).map(|(x, di)| x * di * dir[0]).collect()
        }
        fn tr(&self) -> impl Fn(&[C64], &[C64]) -> Vec<f64> + Sync + '_ {
            move |v, z| vec![v.iter().zip(&self.d).zip(z).map(|((x, di), zi)| (x.conj() * di * zi).re).sum()]
        }
    }

    #[test]
    fn zero_derivative_gives_zero() {
        let l = DMatrix::from_diagonal_element(3, 3, c(-1.0));
        let f = |v: &[C64], _: &Vec<f64>| vec![c(0.0); v.len()];
        let t = |_: &[C64], _: &[C64]| vec![0.0];
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let q = contour_nodes(&ContourSpec::parabola(32), 1).unwrap();
        let w = vec![c(1.0); 3];
        assert!(dphi_apply_forward(1, &l, &w, &dl, &vec![1.0], &q).unwrap().iter().all(|x| x.norm() == 0.0));
        assert_eq!(dphi_apply_transpose(1, &l, &w, &dl, &vec![c(0.0); 3], &q, vec![0.0]).unwrap(), vec![0.0]);
        let p = dphi_apply_poly_forward(1, &l, &w, &dl, &vec![1.0], 20, PolyBasis::Monomial).unwrap();
        assert!(p.iter().all(|x| x.norm() == 0.0));
    }

    fn scalar_family() -> (impl Fn(&[C64], &Vec<f64>) -> CVec + Sync, impl Fn(&[C64], &[C64]) -> Vec<f64> + Sync) {
        (|v: &[C64], d: &Vec<f64>| vec![v[0] * d[0]], |v: &[C64], z: &[C64]| vec![(v[0].conj() * z[0]).re])
    }

    #[test]
    fn scalar_exponential_derivative() {
        let (f, t) = scalar_family();
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let p = -0.7;
        let l = DMatrix::from_element(1, 1, c(p));
        let q = contour_nodes(&ContourSpec::parabola(32), 0).unwrap();
        let v = dphi_apply_forward(0, &l, &[c(1.0)], &dl, &vec![0.3], &q).unwrap();
        assert!((v[0] - c(p.exp() * 0.3)).norm() < 1e-9);
    }

    #[test]
    fn scalar_phi1_transpose_derivative() {
        let (f, t) = scalar_family();
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let p: f64 = -1.3;
        let l = DMatrix::from_element(1, 1, c(p));
        let q = contour_nodes(&ContourSpec::parabola(32), 1).unwrap();
        let g = dphi_apply_transpose(1, &l, &[c(1.0)], &dl, &[c(1.0)], &q, vec![0.0]).unwrap();
        let exact = (p.exp() * (p - 1.0) + 1.0) / (p * p);
        assert!((g[0] - exact).abs() < 1e-8);
    }

    fn phi_at(fam: &Family, ell: usize, p: f64, w: &[C64]) -> CVec {
        let l = fam.at(p);
        let q = contour_nodes(&ContourSpec::parabola(32), ell).unwrap();
        phi_apply_dense(ell, &l, w, &q).unwrap()
    }

    #[test]
    fn resolvent_derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fam = Family::random(4, &mut rng);
        let (f, t) = (fam.fwd(), fam.tr());
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let w: CVec = (0..4).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        let p = 0.4;
        for ell in 0..=3 {
            let q = contour_nodes(&ContourSpec::parabola(32), ell).unwrap();
            let an = dphi_apply_forward(ell, &fam.at(p), &w, &dl, &vec![1.0], &q).unwrap();
            let eps = 1e-5;
            let (a, b) = (phi_at(&fam, ell, p + eps, &w), phi_at(&fam, ell, p - eps, &w));
            let fd: CVec = a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * eps)).collect();
            let err: f64 = an.iter().zip(&fd).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * crate::linalg::norm(&an), "ell={ell} err={err}");
        }
    }

    #[test]
    fn central_difference_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fam = Family::random(4, &mut rng);
        let (f, t) = (fam.fwd(), fam.tr());
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let w: CVec = (0..4).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        let q = contour_nodes(&ContourSpec::parabola(32), 2).unwrap();
        let an = dphi_apply_forward(2, &fam.at(0.0), &w, &dl, &vec![3.0], &q).unwrap();
        let err = |eps: f64| {
            let (a, b) = (phi_at(&fam, 2, 3.0 * eps, &w), phi_at(&fam, 2, -3.0 * eps, &w));
            a.iter().zip(&b).zip(&an).map(|((x, y), z)| ((x - y) / (2.0 * eps) - z).norm_sqr()).sum::<f64>().sqrt()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!((e1 / e2 - 4.0).abs() < 0.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn forward_and_transpose_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = 2 + trial % 5;
            let fam = Family::random(n, &mut rng);
            let (f, t) = (fam.fwd(), fam.tr());
            let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
            let ell = trial % 4;
            let l = fam.at(0.2);
            let q = contour_for_spectrum(&ContourSpec::adaptive_circle(32), ell, &SpectrumBound::real(-3.0, 0.5)).unwrap();
            let w: CVec = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let z: CVec = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let dir = vec![rng.gen_range(-1.0..1.0)];
            let lhs = dot(&dphi_apply_forward(ell, &l, &w, &dl, &dir, &q).unwrap(), &z).re;
            let rhs = dot_real(&dir, &dphi_apply_transpose(ell, &l, &w, &dl, &z, &q, vec![0.0]).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn linear_in_direction_and_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fam = Family::random(5, &mut rng);
        let (f, t) = (fam.fwd(), fam.tr());
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let q = contour_nodes(&ContourSpec::parabola(32), 1).unwrap();
        let l = fam.at(0.1);
        let w1: CVec = (0..5).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        let w2: CVec = (0..5).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        let sum: CVec = w1.iter().zip(&w2).map(|(a, b)| a + 2.0 * b).collect();
        let a = dphi_apply_forward(1, &l, &w1, &dl, &vec![0.5], &q).unwrap();
        let b = dphi_apply_forward(1, &l, &w2, &dl, &vec![0.5], &q).unwrap();
        let s = dphi_apply_forward(1, &l, &sum, &dl, &vec![0.5], &q).unwrap();
        let d = dphi_apply_forward(1, &l, &w1, &dl, &vec![1.5], &q).unwrap();
        for i in 0..5 {
            assert!((s[i] - a[i] - 2.0 * b[i]).norm() < 1e-13);
            assert!((d[i] - 3.0 * a[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn monomial_path_power_rule_on_commuting_family() {
        // L(p) = diag(p, 2p): d/dp e^{L}w = diag(1, 2) e^{L} w
        let p = 0.3;
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(p), c(2.0 * p)]));
        let f = |v: &[C64], d: &Vec<f64>| vec![v[0] * d[0], 2.0 * v[1] * d[0]];
        let t = |v: &[C64], z: &[C64]| vec![(v[0].conj() * z[0] + 2.0 * v[1].conj() * z[1]).re];
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let w = vec![c(1.0), c(-0.5)];
        let an = dphi_apply_poly_forward(0, &l, &w, &dl, &vec![1.0], 30, PolyBasis::Monomial).unwrap();
        let exact = [p.exp(), -0.5 * 2.0 * (2.0 * p).exp()];
        let eps = 1e-5;
        let at = |q: f64| {
            let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(q), c(2.0 * q)]));
            phi_apply_poly(0, &m, &w, 30, PolyBasis::Monomial).unwrap()
        };
        let (a, b) = (at(p + eps), at(p - eps));
        for i in 0..2 {
            assert!((an[i].re - exact[i]).abs() < 1e-12);
            assert!((an[i] - (a[i] - b[i]) / (2.0 * eps)).norm() < 1e-7);
        }
    }

    #[test]
    fn chebyshev_path_agrees_with_resolvent_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 8;
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let s: DMatrix<f64> = &b * b.transpose();
        let top = s.symmetric_eigenvalues().max();
        let l = (s / -(1.2 * top)).map(c);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let f = |v: &[C64], dir: &Vec<f64>| v.iter().zip(&d).map(|(x, di)| x * di * dir[0]).collect::<CVec>();
        let t = |v: &[C64], z: &[C64]| vec![v.iter().zip(&d).zip(z).map(|((x, di), zi)| (x.conj() * di * zi).re).sum()];
        let dl = OperatorDerivativeAction { forward: &f, transpose: &t };
        let w: CVec = (0..n).map(|_| c(rng.gen_range(-1.0..1.0))).collect();
        for ell in 0..=3 {
            let q = contour_nodes(&ContourSpec::parabola(32), ell).unwrap();
            let a = dphi_apply_forward(ell, &l, &w, &dl, &vec![1.0], &q).unwrap();
            let p = dphi_apply_poly_forward(ell, &l, &w, &dl, &vec![1.0], 40, PolyBasis::Chebyshev).unwrap();
            let diff: f64 = a.iter().zip(&p).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
            assert!(diff <= 1e-7 * crate::linalg::norm(&a), "ell={ell} diff={diff}");
        }
    }
}
