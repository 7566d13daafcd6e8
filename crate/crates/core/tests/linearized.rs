use etd_core::adjoint::{
    adjoint_step, adjoint_step_krogstad, misfit_gradient, sensitivity_transpose_apply, solve_adjoint, AdjointSource,
};
use etd_core::forward::{integrate, ForwardTrace, Mode};
use etd_core::linalg::{dot, CVec, C64};
use etd_core::observation::ObservationSet;
use etd_core::operator::KitCache;
use etd_core::phi::PhiBackendConfig;
use etd_core::problem::{SemilinearProblem, TimeGrid};
use etd_core::tableau::{make_tableau, Scheme};
use etd_core::tangent::{linearized_step, linearized_step_krogstad, sensitivity_apply, solve_linearized, TangentSource};
use etd_core::toy::{make_toy_problem, ToyProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    (0..n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect()
}

fn setup(scheme: Scheme, state_dep: bool) -> (ToyProblem, ForwardTrace) {
    let toy = make_toy_problem(8, 3, state_dep).unwrap();
    let m = toy.default_model(3);
    let y0 = toy.initial_state(3);
    let grid = TimeGrid::uniform(1.0, 0.1).unwrap();
    let mode = if state_dep { Mode::Rosenbrock } else { Mode::FixedL };
    let trace = integrate(&toy, &make_tableau(scheme), &y0, &m, &grid, mode, &PhiBackendConfig::default()).unwrap();
    (toy, trace)
}

fn random_tangent_source(trace: &ForwardTrace, rng: &mut ChaCha8Rng) -> TangentSource {
    let mut q = TangentSource::zeros(trace);
    let n = q.initial.len();
    q.initial = rvec(rng, n);
    for s in q.stages.iter_mut().flatten() {
        *s = rvec(rng, n);
    }
    for s in q.states.iter_mut() {
        *s = rvec(rng, n);
    }
    q
}

fn random_adjoint_source(trace: &ForwardTrace, rng: &mut ChaCha8Rng) -> AdjointSource {
    let mut t = AdjointSource::zeros(trace);
    let n = t.states[0].len();
    for s in t.stages.iter_mut().flatten() {
        *s = rvec(rng, n);
    }
    for s in t.states.iter_mut() {
        *s = rvec(rng, n);
    }
    t
}

#[test]
fn adjoint_identity_all_schemes_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for state_dep in [false, true] {
        for scheme in Scheme::ALL {
            let (toy, trace) = setup(scheme, state_dep);
            for _ in 0..5 {
                let q = random_tangent_source(&trace, &mut rng);
                let th = random_adjoint_source(&trace, &mut rng);
                let v = solve_linearized(&trace, &toy, &q).unwrap();
                let l = solve_adjoint(&trace, &toy, &th).unwrap();
                let mut lhs = C64::new(0.0, 0.0);
                for (a, b) in th.states.iter().zip(&v.states) {
                    lhs += dot(a, b);
                }
                for (a, b) in th.stages.iter().flatten().zip(v.stages.iter().flatten()) {
                    lhs += dot(a, b);
                }
                let mut rhs = dot(&l.states[0], &q.initial);
                for (a, b) in l.states[1..].iter().zip(&q.states) {
                    rhs += dot(a, b);
                }
                for (a, b) in l.stages.iter().flatten().zip(q.stages.iter().flatten()) {
                    rhs += dot(a, b);
                }
                let rel = (lhs - rhs).norm() / lhs.norm().max(rhs.norm());
                assert!(rel < 1e-10, "{scheme} state_dep={state_dep}: {rel:e}");
            }
        }
    }
}

#[test]
fn tangent_matches_state_perturbation() {
    for state_dep in [false, true] {
        for scheme in Scheme::ALL {
            let (toy, trace) = setup(scheme, state_dep);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let dir: CVec = (0..8).map(|_| C64::new(rng.sample(StandardNormal), 0.0)).collect();
            let mut q = TangentSource::zeros(&trace);
            q.initial = dir.clone();
            let v = solve_linearized(&trace, &toy, &q).unwrap();
            let eps = 1e-5;
            let run = |s: f64| {
                let y0: CVec = trace.states[0].iter().zip(&dir).map(|(a, b)| a + b * s).collect();
                integrate(&toy, &trace.tableau, &y0, &trace.model, &trace.grid, trace.mode, &PhiBackendConfig::default())
                    .unwrap()
            };
            let (p, m) = (run(eps), run(-eps));
            let fd: CVec = p.final_state().iter().zip(m.final_state()).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
            let err: f64 = fd.iter().zip(v.states.last().unwrap()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let nrm: f64 = fd.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            assert!(err / nrm < 1e-7, "{scheme} state_dep={state_dep}: {:e}", err / nrm);
        }
    }
}

#[test]
fn zero_source_gives_zero_solution() {
    let (toy, trace) = setup(Scheme::HochbruckOstermann, true);
    let v = solve_linearized(&trace, &toy, &TangentSource::zeros(&trace)).unwrap();
    assert!(v.states.iter().flatten().all(|x| x.norm() == 0.0));
    let l = solve_adjoint(&trace, &toy, &AdjointSource::zeros(&trace)).unwrap();
    assert!(l.states.iter().flatten().all(|x| x.norm() == 0.0));
}

#[test]
fn krogstad_specialization_matches_generic() {
    for state_dep in [false, true] {
        let (toy, trace) = setup(Scheme::Krogstad, state_dep);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut kits = KitCache::default();
        for k in [0, 4, 9] {
            let kit = if state_dep { Some(kits.get(&trace.operators[k]).unwrap()) } else { None };
            let vk = rvec(&mut rng, 8);
            let qs: Vec<CVec> = (0..4).map(|_| rvec(&mut rng, 8)).collect();
            let q = rvec(&mut rng, 8);
            let (sa, na) = linearized_step(&trace, &toy, k, kit, &vk, &qs, &q).unwrap();
            let (sb, nb) = linearized_step_krogstad(&trace, &toy, k, kit, &vk, &qs, &q).unwrap();
            for (a, b) in sa.iter().flatten().zip(sb.iter().flatten()).chain(na.iter().zip(&nb)) {
                assert!((a - b).norm() < 1e-13 * (1.0 + a.norm()), "tangent k={k}");
            }
            let lam = rvec(&mut rng, 8);
            let th = rvec(&mut rng, 8);
            let a = adjoint_step(&trace, &toy, k, kit, &lam, &th, Some(&qs)).unwrap();
            let b = adjoint_step_krogstad(&trace, &toy, k, kit, &lam, &th, Some(&qs)).unwrap();
            for (x, y) in a.lambda.iter().zip(&b.lambda).chain(a.stages.iter().flatten().zip(b.stages.iter().flatten())) {
                assert!((x - y).norm() < 1e-13 * (1.0 + x.norm()), "adjoint k={k}");
            }
        }
    }
}

#[test]
fn sensitivity_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for state_dep in [false, true] {
        for scheme in Scheme::ALL {
            let (toy, trace) = setup(scheme, state_dep);
            let steps = [2, 5, 10];
            let w: Vec<f64> = (0..toy.model_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let u: Vec<f64> = (0..3 * 8).map(|_| rng.sample(StandardNormal)).collect();
            let jw = sensitivity_apply(&trace, &toy, &steps, &w).unwrap();
            let jtu = sensitivity_transpose_apply(&trace, &toy, &steps, &u).unwrap();
            let a: f64 = jw.iter().zip(&u).map(|(x, y)| x * y).sum();
            let b: f64 = jtu.iter().zip(&w).map(|(x, y)| x * y).sum();
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "{scheme}: {a} vs {b}");
        }
    }
}

#[test]
fn misfit_gradient_matches_central_difference() {
    for state_dep in [false, true] {
        for scheme in Scheme::ALL {
            let (toy, trace) = setup(scheme, state_dep);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let times = vec![0.5, 1.0];
            let data = (0..2).map(|_| (0..8).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1).collect()).collect();
            let obs = ObservationSet::new(times, data, 0.0).unwrap();
            let g = misfit_gradient(&trace, &toy, &obs).unwrap();
            let value = |m: &[f64]| {
                let t = integrate(&toy, &trace.tableau, &trace.states[0], m, &trace.grid, trace.mode, &PhiBackendConfig::default())
                    .unwrap();
                misfit_gradient(&t, &toy, &obs).unwrap().value
            };
            let dir: Vec<f64> = (0..toy.model_dim()).map(|_| rng.sample(StandardNormal)).collect();
            let eps = 1e-5;
            let shift = |s: f64| trace.model.iter().zip(&dir).map(|(a, b)| a + s * b).collect::<Vec<_>>();
            let fd = (value(&shift(eps)) - value(&shift(-eps))) / (2.0 * eps);
            let an: f64 = g.gradient.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1e-3), "{scheme} state_dep={state_dep}: {fd} vs {an}");
        }
    }
}
