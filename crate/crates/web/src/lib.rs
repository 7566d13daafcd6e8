//! Browser bindings: a φ-function explorer, a small Swift-Hohenberg run and
//! an adjoint gradient check on the toy problem.

use etd_core::forward::{integrate, Mode};
use etd_core::observation::ObservationSet;
use etd_core::phi::{contour_for_spectrum, phi_scalar, ContourSpec, PhiBackendConfig, SpectrumBound};
use etd_core::problem::{SemilinearProblem, TimeGrid};
use etd_core::sh::{build_sh_problem, make_stripe_params, ShConfig};
use etd_core::tableau::{make_tableau, Scheme};
use etd_core::toy::make_toy_problem;
use etd_core::verify::GradientCase;
use etd_core::{EtdError, C64};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// `[z, φ_ℓ(z) direct, φ_ℓ(z) by contour quadrature, relative difference]`
/// for `n` real points spread over `[lo, hi]`, flattened row by row. The
/// contour is parabolic where that is supported, a circle otherwise.
pub fn phi_table(ell: usize, lo: f64, hi: f64, n: usize) -> etd_core::Result<Vec<f64>> {
    let cfg = PhiBackendConfig::default();
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        let x = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        let z = C64::new(x, 0.0);
        let direct = phi_scalar(ell, z, &cfg)?;
        let bound = SpectrumBound::real(x, x);
        let q = match contour_for_spectrum(&ContourSpec::parabola(32), ell, &bound) {
            Err(EtdError::Unsupported(_)) => contour_for_spectrum(&ContourSpec::adaptive_circle(32), ell, &bound)?,
            other => other?,
        };
        let quad = q.eval(z);
        out.extend([x, direct.re, quad.re, (quad - direct).norm() / direct.norm().max(1e-300)]);
    }
    Ok(out)
}

/// Real field after integrating an `n × n` Swift-Hohenberg problem with
/// stripe parameters `(r_outer, 0.04, −1, 1)` from seeded noise.
pub fn sh_field(n: usize, t_final: f64, tau: f64, r_outer: f64, scheme: &str, seed: u64) -> etd_core::Result<Vec<f64>> {
    let cfg = ShConfig::desk(n, t_final, tau, seed);
    let problem = build_sh_problem(&cfg)?;
    let params = make_stripe_params(&cfg, r_outer, 0.04, -1.0, 1.0).values;
    let tab = make_tableau(scheme.parse()?);
    let trace = integrate(&problem, &tab, &problem.initial_state(seed), &params, &cfg.time_grid()?, Mode::FixedL, &PhiBackendConfig::default())?;
    Ok(problem.field(trace.final_state()))
}

/// `[adjoint derivative, best central-difference relative error, observed
/// difference order]` per random direction on an 8-dimensional toy problem
/// integrated to `t = 1`, flattened.
pub fn toy_gradient_errors(scheme: &str, rosenbrock: bool, seed: u64) -> etd_core::Result<Vec<f64>> {
    let toy = make_toy_problem(8, seed, rosenbrock)?;
    let mode = if rosenbrock { Mode::Rosenbrock } else { Mode::FixedL };
    let tab = make_tableau(scheme.parse::<Scheme>()?);
    let phi = PhiBackendConfig::default();
    let grid = TimeGrid::uniform(1.0, 0.1)?;
    let y0 = toy.initial_state(seed);
    let truth = toy.default_model(seed);
    let tr = integrate(&toy, &tab, &y0, &truth, &grid, mode, &phi)?;
    let data = [5usize, 10].iter().map(|&k| toy.observe(&tr.states[k])).collect();
    let obs = ObservationSet::new(vec![grid.times[5], grid.times[10]], data, 0.0)?;
    let case = GradientCase { problem: &toy, tableau: &tab, mode, phi: &phi, y0: &y0, grid: &grid, observations: &obs };
    let m: Vec<f64> = truth.iter().map(|x| x + 0.2).collect();
    let dirs = case.check(&m, 5, &[1e-2, 5e-3, 2.5e-3, 1e-3, 1e-4], seed)?;
    Ok(dirs.iter().flat_map(|d| [d.adjoint, d.best(), d.observed_order()]).collect())
}

#[wasm_bindgen(js_name = phiTable)]
pub fn phi_table_js(ell: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, JsError> {
    phi_table(ell, lo, hi, n).map_err(js)
}

#[wasm_bindgen(js_name = shField)]
pub fn sh_field_js(n: usize, t_final: f64, tau: f64, r_outer: f64, scheme: &str, seed: u64) -> Result<Vec<f64>, JsError> {
    sh_field(n, t_final, tau, r_outer, scheme, seed).map_err(js)
}

#[wasm_bindgen(js_name = toyGradientErrors)]
pub fn toy_gradient_errors_js(scheme: &str, rosenbrock: bool, seed: u64) -> Result<Vec<f64>, JsError> {
    toy_gradient_errors(scheme, rosenbrock, seed).map_err(js)
}
