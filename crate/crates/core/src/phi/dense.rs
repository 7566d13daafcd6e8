use super::{phi_scalar, PhiBackendConfig, QuadratureNodes};
use crate::error::{EtdError, Result};
use crate::linalg::{ordered_map, CVec, C64};
use nalgebra::{DMatrix, DVector};

pub fn matvec(a: &DMatrix<C64>, x: &[C64]) -> CVec {
    let n = a.nrows();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = a.column(j);
        for i in 0..n {
            out[i] += col[i] * xj;
        }
    }
    out
}

/// `a^H x`
pub fn matvec_adj(a: &DMatrix<C64>, x: &[C64]) -> CVec {
    (0..a.ncols())
        .map(|j| a.column(j).iter().zip(x).map(|(aij, xi)| aij.conj() * xi).sum())
        .collect()
}

/// Elementwise φ_ℓ(scale·λ_j).
pub fn phi_apply_diag(ell: usize, eigs: &[C64], scale: f64, cfg: &PhiBackendConfig) -> Result<CVec> {
    eigs.iter().map(|&l| phi_scalar(ell, l * scale, cfg)).collect()
}

fn shifted(l: &DMatrix<C64>, s: C64) -> DMatrix<C64> {
    let mut a = -l.clone();
    for d in 0..a.nrows() {
        a[(d, d)] += s;
    }
    a
}

/// `Σ c_i (s_i I − L)^{-1} w`; real part of the sum for folded nodes.
pub fn phi_apply_dense(_ell: usize, l: &DMatrix<C64>, w: &[C64], nodes: &QuadratureNodes) -> Result<CVec> {
    let n = l.nrows();
    if l.ncols() != n || w.len() != n {
        return Err(EtdError::Dimension(format!("operator {}x{} with vector {}", n, l.ncols(), w.len())));
    }
    let rhs = DVector::from_column_slice(w);
    let solves = ordered_map(nodes.nodes.len(), |i| {
        shifted(l, nodes.nodes[i]).lu().solve(&rhs).map(|v| v * nodes.weights[i])
    });
    let mut acc = DVector::<C64>::zeros(n);
    for (i, s) in solves.into_iter().enumerate() {
        acc += s.ok_or(EtdError::SingularResolvent { node: i })?;
    }
    if nodes.real_symmetric {
        acc.iter_mut().for_each(|v| v.im = 0.0);
    }
    Ok(acc.as_slice().to_vec())
}

/// `(s_i I − L)^{-1}` for every node.
pub fn resolvent_inverses(l: &DMatrix<C64>, nodes: &[C64]) -> Result<Vec<DMatrix<C64>>> {
    let inv = ordered_map(nodes.len(), |i| shifted(l, nodes[i]).lu().try_inverse());
    inv.into_iter().enumerate().map(|(i, r)| r.ok_or(EtdError::SingularResolvent { node: i })).collect()
}
