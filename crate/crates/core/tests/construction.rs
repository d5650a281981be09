use proptest::prelude::*;
use shrinker_core::construction::*;
use shrinker_core::flows::{evolve_rdtf_with, rate_fit, FlowContext, FlowOptions};
use shrinker_core::geometry::Background;
use shrinker_core::spectral::{ModeClass, SpectralDecomposition};
use shrinker_core::{Error, Result};

fn uniform(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let n = ((t1 - t0) / step).round() as usize;
    (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect()
}

fn find(d: &SpectralDecomposition, lambda: f64, class: ModeClass) -> usize {
    d.modes.iter().position(|m| (m.eigenvalue - lambda).abs() < 1e-8 && m.class == Some(class)).unwrap()
}

struct Lab {
    bg: Background,
    ctx: FlowContext,
}

impl Lab {
    fn new(l_max: usize) -> Self {
        let bg = Background::round_sphere(3, l_max).unwrap();
        let ctx = FlowContext::new(&bg).unwrap();
        Lab { bg, ctx }
    }

    fn nonlinearity(&self) -> RdtfNonlinearity<'_> {
        RdtfNonlinearity::new(&self.bg, &self.ctx, 1e-2, 16, 5).unwrap()
    }
}

#[test]
fn ancient_single_mode_integrals() {
    // x' = lambda x + e^{2 tau}. Below theta the solution from -infinity is
    // e^{2 tau} / (2 - lambda); above it, anchored at 0, it is
    // (e^{2 tau} - e^{lambda tau}) / (2 - lambda).
    let eigs = [-1.0, 0.25, 1.0, 1.8];
    let taus = uniform(-13.0, 0.0, 0.01);
    let g: Vec<Vec<f64>> = taus.iter().map(|t| vec![(2.0 * t).exp(); 4]).collect();
    let out = duhamel_solve(&eigs, Direction::Ancient, 1.5, 2.0, &taus, &g).unwrap();
    assert!(out.tail_bound <= TAIL_TOL);
    for (k, t) in taus.iter().enumerate() {
        for (i, &l) in eigs.iter().enumerate() {
            let want = if l < 1.5 { (2.0 * t).exp() / (2.0 - l) } else { ((2.0 * t).exp() - (l * t).exp()) / (2.0 - l) };
            assert!((out.x[k][i] - want).abs() < 1e-12, "lambda {l} tau {t}");
        }
    }
    assert!(duhamel_residual(&eigs, &taus, &out.x, &g) < 1e-8);
}

#[test]
fn immortal_unstable_mode_is_integrated_from_infinity() {
    let eigs = [0.25];
    let taus = uniform(0.0, 12.0, 0.01);
    let g: Vec<Vec<f64>> = taus.iter().map(|t| vec![(-2.0 * t).exp()]).collect();
    let out = duhamel_solve(&eigs, Direction::Immortal, -1.5, -2.0, &taus, &g).unwrap();
    for (k, t) in taus.iter().enumerate() {
        assert!((out.x[k][0] - (-2.0 * t).exp() / -2.25).abs() < 1e-12);
    }
}

#[test]
fn zero_source_gives_zero_solution() {
    let taus = uniform(-5.0, 0.0, 0.1);
    let g = vec![vec![0.0; 3]; taus.len()];
    let out = duhamel_solve(&[1.0, 0.25, -1.0], Direction::Ancient, 1.5, 2.0, &taus, &g).unwrap();
    assert!(out.x.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn short_grids_and_resonant_exponents_are_refused() {
    let taus = uniform(-1.0, 0.0, 0.1);
    let g: Vec<Vec<f64>> = taus.iter().map(|t| vec![(2.0 * t).exp()]).collect();
    assert!(matches!(duhamel_solve(&[-1.0], Direction::Ancient, 1.5, 2.0, &taus, &g), Err(Error::Tail(_))));
    assert!(matches!(
        duhamel_solve(&[-1.0, 1.5], Direction::Ancient, 1.5, 2.0, &taus, &g.iter().map(|v| vec![v[0], 0.0]).collect::<Vec<_>>()),
        Err(Error::SpectralClearance(_))
    ));
}

#[test]
fn linear_picard_is_one_duhamel_pass() {
    let eigs = vec![-1.0, 0.25];
    let taus = uniform(-13.0, 0.0, 0.02);
    let g: Vec<Vec<f64>> = taus.iter().map(|t| vec![(2.0 * t).exp(), -(2.0 * t).exp()]).collect();
    let direct = duhamel_solve(&eigs, Direction::Ancient, 1.5, 2.0, &taus, &g).unwrap();
    let p = ConstructionProblem {
        eigenvalues: eigs.clone(),
        direction: Direction::Ancient,
        theta: 1.5,
        mu: 2.0,
        taus: taus.clone(),
        homogeneous: vec![vec![0.0; 2]; taus.len()],
        forcing: Some(g),
        base: None,
        nonlinearity: None,
    };
    let sol = picard_solve(&p).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.trajectory.coords, direct.x);
}

/// `N(x) = x |x|` on a single mode.
struct Quadratic;

impl Nonlinearity for Quadratic {
    fn eval(&self, _tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter().map(|v| v * v.abs()).collect())
    }

    fn c0(&self) -> f64 {
        1.0
    }
}

fn rk4(x0: f64, t0: f64, t1: f64, steps: usize) -> f64 {
    let f = |x: f64| -x + x * x.abs();
    let h = (t1 - t0) / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn scalar_model_against_an_independent_integrator() {
    let a = 0.05;
    let taus = uniform(0.0, 10.0, 0.01);
    let p = ConstructionProblem {
        eigenvalues: vec![-1.0],
        direction: Direction::Immortal,
        theta: -1.5,
        mu: -2.5,
        taus: taus.clone(),
        homogeneous: taus.iter().map(|t| vec![a * (-t).exp()]).collect(),
        forcing: None,
        base: None,
        nonlinearity: Some(&Quadratic),
    };
    let sol = picard_solve(&p).unwrap();
    assert!(sol.iterations >= 3);
    assert!(sol.contraction.iter().skip(1).all(|c| *c <= 0.5), "{:?}", sol.contraction);
    assert!(sol.residual < 1e-8);
    let x = &sol.trajectory.coords;
    let x0 = x[0][0];
    for k in [100, 300, 600, 1000] {
        let want = rk4(x0, 0.0, taus[k], 20 * k);
        assert!((x[k][0] - want).abs() < 1e-9, "tau {}: {} vs {want}", taus[k], x[k][0]);
    }
    // e^{tau} x -> a.
    assert!((x[1000][0] * 10f64.exp() - a).abs() < 1e-5);
}

#[test]
fn ricci_stratum_is_the_conformal_family() {
    let lab = Lab::new(16);
    let d = &lab.ctx.decomp;
    let nl = lab.nonlinearity();
    let ric = find(d, 1.0, ModeClass::Essential);
    let a = 1e-3;
    let s = build_s(d, Some(&nl), &[(ric, a)], &BuildOptions::default()).unwrap();
    let tr = &s.trajectory;
    for k in 0..tr.len() {
        for (i, v) in tr.coords[k].iter().enumerate() {
            let want = if i == ric { a * tr.taus[k].exp() } else { 0.0 };
            assert!((v - want).abs() <= 1e-8);
        }
    }
    // The coordinate is along the unit Ricci mode, which is g / sqrt(3).
    let h = tr.tensor_at(d, tr.len() - 1);
    assert!((h.c[0] - a / 3f64.sqrt()).abs() < 1e-15);
    assert!(s.contraction.iter().skip(1).all(|c| *c <= 0.5));
    assert!(s.residual <= 1e-8);
    assert!(s.gate <= 0.25);
    assert!(s.decay_constant.is_finite() && (s.decay_rate - 1.0).abs() < 1e-12);
}

#[test]
fn time_shift_identity() {
    let lab = Lab::new(12);
    let d = &lab.ctx.decomp;
    let nl = lab.nonlinearity();
    let ric = find(d, 1.0, ModeClass::Essential);
    let (a, shift) = (1e-3, 1.0f64);
    let opts = BuildOptions { anchor: 0.0, step: 0.01, horizon: Some(12.0) };
    let s1 = build_s(d, Some(&nl), &[(ric, a)], &opts).unwrap();
    let s2 = build_s(d, Some(&nl), &[(ric, (-shift).exp() * a)], &opts).unwrap();
    // S(a)(tau - s) = S(e^{-s} a)(tau) for tau - s still on the grid.
    let t = &s1.trajectory;
    let m = (shift / 0.01).round() as usize;
    for k in m..t.len() {
        let x1 = &t.coords[k - m];
        let x2 = &s2.trajectory.coords[k];
        let diff: f64 = x1.iter().zip(x2).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-8, "tau {}", t.taus[k]);
    }
}

#[test]
fn zero_prescription_is_the_shrinker() {
    let lab = Lab::new(8);
    let s = build_s(&lab.ctx.decomp, None, &[], &BuildOptions::default()).unwrap();
    assert!(s.trajectory.coords.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn only_essential_modes_of_the_right_sign_can_be_prescribed() {
    let lab = Lab::new(8);
    let d = &lab.ctx.decomp;
    let lie = find(d, 0.25, ModeClass::Lie);
    let neg = find(d, -1.0, ModeClass::Essential);
    let ric = find(d, 1.0, ModeClass::Essential);
    assert!(matches!(build_s(d, None, &[(lie, 1e-3)], &BuildOptions::default()), Err(Error::InvalidParameter(_))));
    assert!(matches!(build_s(d, None, &[(neg, 1e-3)], &BuildOptions::default()), Err(Error::InvalidParameter(_))));
    assert!(matches!(build_s_forward(d, None, &[(ric, 1e-3)], &BuildOptions::default()), Err(Error::InvalidParameter(_))));
}

#[test]
fn ricci_strata_and_horizon_independence() {
    let lab = Lab::new(12);
    let d = &lab.ctx.decomp;
    let nl = lab.nonlinearity();
    let ric = find(d, 1.0, ModeClass::Essential);
    let limit = |anchor: f64| {
        let opts = BuildOptions { anchor, step: 0.01, horizon: Some(14.0) };
        let sa = build_s(d, Some(&nl), &[(ric, 2e-3)], &opts).unwrap();
        let sb = build_s(d, Some(&nl), &[(ric, 1e-3)], &opts).unwrap();
        strata_verify(d, &sa, &sb, ric, 1e-3).unwrap()
    };
    let (r0, r2) = (limit(0.0), limit(-2.0));
    for r in [&r0, &r2] {
        assert!((r.limit_coefficient - 1e-3).abs() <= 1e-6);
        assert!(r.delta_prime > 0.0);
    }
    assert!((r0.limit_coefficient - r2.limit_coefficient).abs() <= 1e-7);
}

#[test]
fn strata_fit_recovers_a_spectral_gap() {
    // Difference of two synthetic solutions: (a - b) e^{tau/4} Y_slow + c e^{tau} Y_fast.
    let lab = Lab::new(6);
    let d = &lab.ctx.decomp;
    let slow = find(d, 0.25, ModeClass::Lie);
    let fast = find(d, 1.0, ModeClass::Essential);
    let taus = uniform(-20.0, 0.0, 0.05);
    let traj = |a: f64, c: f64| -> ConstructedSolution {
        let coords = taus
            .iter()
            .map(|t| {
                let mut v = vec![0.0; d.modes.len()];
                v[slow] = a * (0.25 * t).exp();
                v[fast] = c * t.exp();
                v
            })
            .collect();
        ConstructedSolution {
            direction: Direction::Ancient,
            trajectory: ModalTrajectory { taus: taus.clone(), coords },
            iterations: 0,
            increments: vec![],
            contraction: vec![],
            residual: 0.0,
            tail_bound: 0.0,
            theta: 0.5,
            anchor: 0.0,
            gate: 0.0,
            decay_constant: 0.0,
            decay_rate: 0.25,
        }
    };
    let r = strata_verify(d, &traj(3e-3, 1e-3), &traj(1e-3, 0.0), slow, 2e-3).unwrap();
    assert!(!r.floor_limited);
    assert!((r.delta_prime - 0.75).abs() < 1e-8, "{}", r.delta_prime);
    assert!((r.limit_coefficient - 2e-3).abs() < 1e-12);
    let same = strata_verify(d, &traj(1e-3, 1e-3), &traj(1e-3, 1e-3), slow, 0.0).unwrap();
    assert!(same.residuals.iter().all(|v| *v == 0.0));

    let dm = dominant_mode_extract(d, &traj(3e-3, 1e-3).trajectory, &traj(1e-3, 0.0).trajectory, Direction::Ancient).unwrap();
    assert_eq!(dm.mode, slow);
    assert!((dm.lambda - 0.25).abs() < 1e-3);
}

#[test]
fn dominant_mode_of_two_ricci_solutions() {
    let lab = Lab::new(10);
    let d = &lab.ctx.decomp;
    let nl = lab.nonlinearity();
    let ric = find(d, 1.0, ModeClass::Essential);
    let sa = build_s(d, Some(&nl), &[(ric, 2e-3)], &BuildOptions::default()).unwrap();
    let sb = build_s(d, Some(&nl), &[(ric, 5e-4)], &BuildOptions::default()).unwrap();
    let dm = dominant_mode_extract(d, &sa.trajectory, &sb.trajectory, Direction::Ancient).unwrap();
    assert_eq!(dm.mode, ric);
    assert!((dm.lambda - 1.0).abs() < 1e-6);
    assert!((dm.alignment - 1.0).abs() < 1e-12);
}

#[test]
fn immortal_solution_on_the_stable_essential_mode() {
    let lab = Lab::new(16);
    let d = &lab.ctx.decomp;
    let nl = lab.nonlinearity();
    let m = find(d, -1.0, ModeClass::Essential);
    let s1 = build_s_forward(d, Some(&nl), &[(m, 1e-3)], &BuildOptions::default()).unwrap();
    assert!(s1.contraction.iter().skip(1).all(|c| *c <= 0.5), "{:?}", s1.contraction);
    assert!(s1.residual <= 1e-8);
    let t = &s1.trajectory;
    let norms: Vec<f64> = (0..t.len()).map(|k| t.norm_at(k)).collect();
    let fit = rate_fit(&t.taus, &norms).unwrap();
    assert!((-1.05..=-0.95).contains(&fit.exponent));
    // Two-sided bounds |X| e^{tau} in [1/C, C].
    let scaled: Vec<f64> = norms.iter().zip(&t.taus).map(|(n, tau)| n * tau.exp()).collect();
    let (lo, hi) = scaled.iter().fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!(hi / lo < 1.01, "{lo} {hi}");

    // Independent oracle: the forward flow from the constructed datum.
    let h0 = t.tensor_at(d, 0);
    let opts = FlowOptions { tau_end: 4.0, entropy: false, ..Default::default() };
    let flow = evolve_rdtf_with(&lab.bg, &lab.ctx, &h0, &opts).unwrap();
    for s in &flow.samples {
        let k = t.index_of(s.tau + s1.anchor).unwrap();
        let diff: f64 = s.modal.iter().zip(&t.coords[k]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(diff < 1e-10, "tau {}: {diff:e}", s.tau);
    }

    let s2 = build_s_forward(d, Some(&nl), &[(m, 2e-3)], &BuildOptions::default()).unwrap();
    let dm = dominant_mode_extract(d, &s2.trajectory, &s1.trajectory, Direction::Immortal).unwrap();
    assert_eq!(dm.mode, m);
    assert!((dm.lambda + 1.0).abs() <= 0.02);
    let st = strata_verify(d, &s2, &s1, m, 1e-3).unwrap();
    assert!((st.limit_coefficient - 1e-3).abs() <= 1e-6);
    assert!(st.delta_prime < 0.0);
}

#[test]
fn fast_decay_levels() {
    let eigs = [1.0, 0.25, -1.0, -2.75];
    let forcing = |t: f64| vec![(-t * t).exp(); 4];
    let levels = fast_decay_solve(&eigs, &forcing, &[1.0, 2.0, 4.0], 0.0, 12.0, 0.01).unwrap();
    assert_eq!(levels.len(), 3);
    for l in &levels {
        assert!(l.achieved <= -l.lambda, "{l:?}");
        assert!(l.tail_bound <= TAIL_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_mode_forward_branch_matches_closed_form(lambda in -3.0f64..1.0, rate in 1.6f64..3.0) {
        let taus = uniform(-30.0 / rate, 0.0, 0.02);
        let g: Vec<Vec<f64>> = taus.iter().map(|t| vec![(rate * t).exp()]).collect();
        let out = duhamel_solve(&[lambda], Direction::Ancient, 1.5, rate, &taus, &g).unwrap();
        for (k, t) in taus.iter().enumerate() {
            let want = (rate * t).exp() / (rate - lambda);
            prop_assert!((out.x[k][0] - want).abs() < 1e-11 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn theta_choice_is_clear_of_the_spectrum(lo in -3.0f64..0.0, width in 0.1f64..2.0) {
        let eigs = [1.0, 0.25, -1.0, -2.75];
        let th = choose_theta(&eigs, lo, lo + width).unwrap();
        prop_assert!(th > lo && th < lo + width);
        prop_assert!(eigs.iter().all(|l| (l - th).abs() >= CLEARANCE));
    }
}
