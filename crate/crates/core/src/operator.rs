//! Per-step operator records: φ_ℓ(cτL) blocks cached by `(ell, c)` and, on
//! demand, the resolvents needed to differentiate them.

use crate::error::{EtdError, Result};
use crate::linalg::{axpy, CVec, ParamVec, C64};
use crate::phi::{contour_for_spectrum, matvec, matvec_adj, phi_apply_diag, resolvent_inverses, PhiBackendConfig};
use crate::phi::{inv_factorial, SpectrumBound};
use crate::phi_diff::{resolvent_forward, resolvent_transpose};
use crate::problem::LinearOperator;
use crate::tableau::PhiTerm;
use nalgebra::DMatrix;
use std::collections::BTreeMap;

type Key = (usize, u64);

fn key(ell: usize, scale: f64) -> Key {
    (ell, scale.to_bits())
}

#[derive(Clone, Debug)]
enum Block {
    Diag(CVec),
    Dense(DMatrix<C64>),
}

/// Resolvents `(s_i − hL)^{-1}` for one node set, with the weights of every
/// `ell` that uses it.
#[derive(Clone, Debug)]
struct NodeSet {
    nodes: Vec<C64>,
    inverses: Vec<DMatrix<C64>>,
    weights: BTreeMap<usize, Vec<C64>>,
}

/// Contour resolvents for one node scale `c`, i.e. for the matrix `cτL`.
/// `ell = 0` may sit on a shifted contour and then has a set of its own.
#[derive(Clone, Debug)]
struct ScaleGroup {
    h: f64,
    sets: Vec<NodeSet>,
}

impl ScaleGroup {
    fn set_for(&self, ell: usize) -> Option<(&NodeSet, &Vec<C64>)> {
        self.sets.iter().find_map(|set| set.weights.get(&ell).map(|w| (set, w)))
    }
}

fn scale_group(
    matrix: &DMatrix<C64>,
    spectrum: &SpectrumBound,
    h: f64,
    ells: &[usize],
    cfg: &PhiBackendConfig,
) -> Result<ScaleGroup> {
    let bound = spectrum.scaled(h);
    let scaled = matrix * C64::new(h, 0.0);
    let mut sets: Vec<NodeSet> = Vec::new();
    for &ell in ells {
        let q = contour_for_spectrum(&cfg.contour, ell, &bound)?;
        match sets.iter_mut().find(|set| set.nodes == q.nodes) {
            Some(set) => {
                set.weights.insert(ell, q.weights);
            }
            None => sets.push(NodeSet {
                inverses: resolvent_inverses(&scaled, &q.nodes)?,
                nodes: q.nodes,
                weights: BTreeMap::from([(ell, q.weights)]),
            }),
        }
    }
    Ok(ScaleGroup { h, sets })
}

#[derive(Clone, Debug)]
pub struct StepOperator {
    pub op: LinearOperator,
    pub tau: f64,
    /// Index of the state the operator was linearized about.
    pub lin_index: usize,
    keys: Vec<(usize, f64)>,
    cfg: PhiBackendConfig,
    cache: BTreeMap<Key, Block>,
}

impl StepOperator {
    pub fn build(op: LinearOperator, tau: f64, lin_index: usize, keys: &[(usize, f64)], cfg: &PhiBackendConfig) -> Result<Self> {
        let mut cache = BTreeMap::new();
        match &op {
            LinearOperator::Diagonal { eigs } => {
                for &(ell, c) in keys.iter().filter(|k| k.1 > 0.0) {
                    cache.insert(key(ell, c), Block::Diag(phi_apply_diag(ell, eigs, c * tau, cfg)?));
                }
            }
            LinearOperator::Dense { matrix, spectrum } => {
                for (c, ells) in group_by_scale(keys) {
                    let g = scale_group(matrix, spectrum, c * tau, &ells, cfg)?;
                    for ell in ells {
                        let (set, w) = g.set_for(ell).expect("every ell has a node set");
                        let mut acc = DMatrix::<C64>::zeros(matrix.nrows(), matrix.ncols());
                        for (r, wi) in set.inverses.iter().zip(w) {
                            acc += r * *wi;
                        }
                        cache.insert(key(ell, c), Block::Dense(acc));
                    }
                }
            }
        }
        Ok(Self { op, tau, lin_index, keys: keys.to_vec(), cfg: cfg.clone(), cache })
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    fn block(&self, ell: usize, scale: f64) -> Result<&Block> {
        self.cache
            .get(&key(ell, scale))
            .ok_or_else(|| EtdError::InvalidInput(format!("φ_{ell} at node scale {scale} was not prepared for this step")))
    }

    /// φ_ℓ(cτL) w; `c = 0` gives `w/ℓ!`.
    pub fn phi(&self, ell: usize, scale: f64, w: &[C64]) -> Result<CVec> {
        if scale == 0.0 {
            return Ok(w.iter().map(|x| x * inv_factorial(ell)).collect());
        }
        Ok(match self.block(ell, scale)? {
            Block::Diag(d) => d.iter().zip(w).map(|(a, b)| a * b).collect(),
            Block::Dense(m) => matvec(m, w),
        })
    }

    /// φ_ℓ(cτL)^H z
    pub fn phi_adj(&self, ell: usize, scale: f64, z: &[C64]) -> Result<CVec> {
        if scale == 0.0 {
            return Ok(z.iter().map(|x| x * inv_factorial(ell)).collect());
        }
        Ok(match self.block(ell, scale)? {
            Block::Diag(d) => d.iter().zip(z).map(|(a, b)| a.conj() * b).collect(),
            Block::Dense(m) => matvec_adj(m, z),
        })
    }

    pub fn combo(&self, terms: &[PhiTerm], w: &[C64]) -> Result<CVec> {
        let mut out = vec![C64::new(0.0, 0.0); w.len()];
        for x in terms {
            axpy(C64::new(x.weight, 0.0), &self.phi(x.ell, x.node_scale, w)?, &mut out);
        }
        Ok(out)
    }

    pub fn combo_adj(&self, terms: &[PhiTerm], z: &[C64]) -> Result<CVec> {
        let mut out = vec![C64::new(0.0, 0.0); z.len()];
        for x in terms {
            axpy(C64::new(x.weight, 0.0), &self.phi_adj(x.ell, x.node_scale, z)?, &mut out);
        }
        Ok(out)
    }

    /// Resolvents for differentiating this step's φ blocks. Only dense
    /// operators can depend on state or parameters.
    pub fn deriv_kit(&self) -> Result<DerivKit> {
        let LinearOperator::Dense { matrix, spectrum } = &self.op else {
            return Err(EtdError::Unsupported("derivatives of a diagonal operator".into()));
        };
        let mut groups = Vec::new();
        for (c, ells) in group_by_scale(&self.keys) {
            groups.push((c.to_bits(), scale_group(matrix, spectrum, c * self.tau, &ells, &self.cfg)?));
        }
        Ok(DerivKit { groups })
    }
}

fn group_by_scale(keys: &[(usize, f64)]) -> Vec<(f64, Vec<usize>)> {
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for &(ell, c) in keys.iter().filter(|k| k.1 > 0.0) {
        match out.iter_mut().find(|g| g.0 == c) {
            Some(g) => {
                if !g.1.contains(&ell) {
                    g.1.push(ell)
                }
            }
            None => out.push((c, vec![ell])),
        }
    }
    out
}

/// Differentiates `Σ_terms weight · φ_ℓ(cτL(p)) w` with `w` fixed, given
/// `∂(L v)/∂p` as a callback.
pub struct DerivKit {
    groups: Vec<(u64, ScaleGroup)>,
}

impl DerivKit {
    /// Per-node-set weights `h · Σ_terms weight · c_{ℓ,i}`.
    fn combined(&self, terms: &[PhiTerm]) -> Result<Vec<(&NodeSet, Vec<C64>)>> {
        let mut out: Vec<(&NodeSet, Vec<C64>)> = Vec::new();
        for x in terms {
            let Some((_, g)) = self.groups.iter().find(|(b, _)| *b == x.node_scale.to_bits()) else {
                return Err(EtdError::InvalidInput(format!("node scale {} not prepared", x.node_scale)));
            };
            let (set, w) = g
                .set_for(x.ell)
                .ok_or_else(|| EtdError::InvalidInput(format!("φ_{} not prepared", x.ell)))?;
            let pos = match out.iter().position(|(s, _)| std::ptr::eq(*s, set)) {
                Some(p) => p,
                None => {
                    out.push((set, vec![C64::new(0.0, 0.0); w.len()]));
                    out.len() - 1
                }
            };
            for (acc, wi) in out[pos].1.iter_mut().zip(w) {
                *acc += wi * (x.weight * g.h);
            }
        }
        Ok(out)
    }

    pub fn forward<P>(
        &self,
        terms: &[PhiTerm],
        w: &[C64],
        dl: &(dyn Fn(&[C64], &P) -> CVec + Sync),
        dir: &P,
    ) -> Result<CVec> {
        let mut out = vec![C64::new(0.0, 0.0); w.len()];
        for (g, gw) in self.combined(terms)? {
            crate::linalg::add_assign(&mut out, &resolvent_forward(&g.inverses, &gw, w, dl, dir));
        }
        Ok(out)
    }

    /// Adds the transpose action to `acc`.
    pub fn transpose<P: ParamVec>(
        &self,
        terms: &[PhiTerm],
        w: &[C64],
        dl_t: &(dyn Fn(&[C64], &[C64]) -> P + Sync),
        z: &[C64],
        acc: &mut P,
    ) -> Result<()> {
        for (g, gw) in self.combined(terms)? {
            let zero = dl_t(w, &vec![C64::new(0.0, 0.0); z.len()]);
            let part = resolvent_transpose(&g.inverses, &gw, w, dl_t, z, zero);
            acc.add_from(&part);
        }
        Ok(())
    }
}

/// Reuses the last kit while consecutive steps share one operator record
/// (fixed-L runs), and rebuilds it otherwise.
#[derive(Default)]
pub struct KitCache {
    last: Option<(*const StepOperator, DerivKit)>,
}

impl KitCache {
    pub fn get(&mut self, op: &std::sync::Arc<StepOperator>) -> Result<&DerivKit> {
        let ptr = std::sync::Arc::as_ptr(op);
        if self.last.as_ref().map(|(p, _)| *p != ptr).unwrap_or(true) {
            self.last = Some((ptr, op.deriv_kit()?));
        }
        Ok(&self.last.as_ref().expect("kit was just built").1)
    }
}

/// `e^{cτL}` as a single term; `None` when `c = 0`.
pub fn exp_term(c: f64) -> Option<[PhiTerm; 1]> {
    (c > 0.0).then_some([PhiTerm { ell: 0, node_scale: c, weight: 1.0 }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::phi_scalar;
    use crate::tableau::{make_tableau, Scheme};
    use nalgebra::DVector;

    #[test]
    fn diagonal_and_dense_records_agree() {
        let eigs: CVec = (0..5).map(|k| C64::new(-0.4 * k as f64 - 0.1, 0.0)).collect();
        let keys = make_tableau(Scheme::HochbruckOstermann).phi_keys();
        let cfg = PhiBackendConfig::default();
        let d = StepOperator::build(LinearOperator::Diagonal { eigs: eigs.clone() }, 0.3, 0, &keys, &cfg).unwrap();
        let m = DMatrix::from_diagonal(&DVector::from_vec(eigs.clone()));
        let s = StepOperator::build(LinearOperator::dense_bounded(m), 0.3, 0, &keys, &cfg).unwrap();
        let w: CVec = (0..5).map(|k| C64::new(1.0, k as f64)).collect();
        for &(ell, c) in &keys {
            let a = d.phi(ell, c, &w).unwrap();
            let b = s.phi(ell, c, &w).unwrap();
            for i in 0..5 {
                assert!((a[i] - b[i]).norm() < 1e-12 * a[i].norm().max(1.0));
                let exact = phi_scalar(ell, eigs[i] * (c * 0.3), &cfg).unwrap() * w[i];
                assert!((a[i] - exact).norm() < 1e-15 * exact.norm().max(1.0));
            }
        }
        assert_eq!(d.phi(2, 0.0, &w).unwrap()[1], w[1] * 0.5);
        assert!(d.phi(7, 1.0, &w).is_err());
        assert!(d.deriv_kit().is_err());
    }
}
