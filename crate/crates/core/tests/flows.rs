use proptest::prelude::*;
use shrinker_core::flows::*;
use shrinker_core::geometry::{AxisymTensor, AxisymVector, Background};
use shrinker_core::spectral::{ModeClass, Selector};
use shrinker_core::Error;

fn essential(ctx: &FlowContext, lambda: f64) -> usize {
    ctx.decomp
        .modes
        .iter()
        .position(|m| (m.eigenvalue - lambda).abs() < 1e-8 && m.class == Some(ModeClass::Essential))
        .unwrap()
}

#[test]
fn conformal_right_hand_side_is_exact() {
    let bg = Background::round_sphere(3, 8).unwrap();
    let h = AxisymTensor::conformal(8, 0.03);
    let mut r = bg.rdtf_rhs(&h).unwrap();
    r.axpy(-1.0, &h);
    assert!(r.max_abs_coeff() < 1e-14);
}

#[test]
fn right_hand_side_linearises_to_the_spectrum() {
    let bg = Background::round_sphere(3, 10).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let eps = 1e-6;
    for i in [0, 1, 2, 5] {
        let e = ctx.decomp.mode_tensor(i);
        let mut r = bg.rdtf_rhs(&e.scaled(eps)).unwrap();
        r.axpy(-eps * ctx.decomp.modes[i].eigenvalue, &e);
        assert!(bg.norm_tensor(&r) < 100.0 * eps * eps, "mode {i}: {:e}", bg.norm_tensor(&r));
    }
}

#[test]
fn zero_data_gives_a_flat_trace() {
    let bg = Background::round_sphere(3, 6).unwrap();
    let tr = evolve_rdtf(&bg, &AxisymTensor::zeros(6), &FlowOptions { tau_end: 0.5, ..Default::default() }).unwrap();
    assert!(tr.halted.is_none());
    assert!(tr.samples.iter().all(|s| s.l2f_norm == 0.0));
}

#[test]
fn ricci_direction_follows_the_conformal_solution() {
    let bg = Background::round_sphere(3, 12).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let h0 = AxisymTensor::conformal(12, 1e-3);
    let opts = FlowOptions { tau_end: 3.0, ..Default::default() };
    let tr = evolve_rdtf_with(&bg, &ctx, &h0, &opts).unwrap();
    for s in &tr.samples {
        let mut e = s.h.clone();
        e.axpy(-1.0, &AxisymTensor::conformal(12, 1e-3 * s.tau.exp()));
        assert!(e.max_abs_coeff() < 1e-6, "tau {}", s.tau);
    }
    let rep = dynamics_report(&bg, &ctx, &tr, &DynamicsOptions::default());
    assert!(rep.violations().is_empty(), "{:?}", rep.violations());
    let dom = rep.get("dominance_essential_unstable");
    assert!(!dom.is_empty());
    assert!(dom.iter().all(|c| c.verdict == Verdict::Pass && c.measured <= 2.0), "{dom:?}");
}

#[test]
fn large_data_is_refused() {
    let bg = Background::round_sphere(3, 6).unwrap();
    let r = evolve_rdtf(&bg, &AxisymTensor::conformal(6, 0.5), &FlowOptions::default());
    assert!(matches!(r, Err(Error::Smallness { .. })));
}

#[test]
fn stable_essential_mode_decays_at_rate_one() {
    let bg = Background::round_sphere(3, 16).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let h0 = ctx.decomp.mode_tensor(essential(&ctx, -1.0)).scaled(1e-3);
    let opts = FlowOptions { tau_end: 6.0, ..Default::default() };
    let shot = shoot_stable(&bg, &ctx, &h0, &opts).unwrap();
    let fit = rate_fit_trace(&ctx.decomp, &shot.trace, (0.0, 6.0), TraceQuantity::L2f).unwrap();
    assert!((-1.05..=-0.95).contains(&fit.exponent), "{fit:?}");
    // The correction is second order and sits in the Ricci direction.
    let ric = essential(&ctx, 1.0);
    for (i, c) in &shot.correction {
        if *i == ric {
            assert!(c.abs() < 1e-5);
        } else {
            assert!(c.abs() < 1e-15);
        }
    }
    let rep = dynamics_report(&bg, &ctx, &shot.trace, &DynamicsOptions::default());
    assert!(rep.violations().is_empty(), "{:?}", rep.violations());
    assert_eq!(rep.get("entropy_monotone")[0].verdict, Verdict::Pass);
}

#[test]
fn harmonic_map_flow_linearisation() {
    let bg = Background::round_sphere(3, 16).unwrap();
    let eps = 1e-4;
    let mut x = AxisymVector::zeros(16);
    x.e[1] = eps;
    let tr = evolve_hmhf(&bg, &MetricPath::Static(AxisymTensor::zeros(16)), &GaugeMap::from_vector(x), &HmhfOptions::default())
        .unwrap();
    let worst = tr.samples.iter().map(|s| s.linear_defect.unwrap()).fold(0.0, f64::max);
    assert!(worst <= 100.0 * eps * eps, "{worst:e}");
    let last = tr.samples.last().unwrap();
    assert!((last.x.e[1] / eps - (0.25f64).exp()).abs() < 1e-3);
}

#[test]
fn second_gradient_decays_in_the_harmonic_map_flow() {
    let bg = Background::round_sphere(3, 12).unwrap();
    let eps = 1e-5;
    let mut x = AxisymVector::zeros(12);
    x.e[2] = eps;
    let tr = evolve_hmhf(&bg, &MetricPath::Static(AxisymTensor::zeros(12)), &GaugeMap::from_vector(x), &HmhfOptions::default())
        .unwrap();
    let last = tr.samples.last().unwrap();
    assert!((last.x.e[2] / eps - (-1.0f64).exp()).abs() < 1e-3, "{}", last.x.e[2] / eps);
}

#[test]
fn pullback_defect_is_quadratic() {
    let bg = Background::round_sphere(3, 16).unwrap();
    let epss = [1e-2, 1e-3, 1e-4];
    let defects: Vec<f64> = epss
        .iter()
        .map(|&eps| {
            let mut x = AxisymVector::zeros(16);
            x.e[1] = eps;
            x.e[2] = 0.5 * eps;
            let p = gauge_pullback(&bg, &GaugeMap::from_vector(x.clone()), &AxisymTensor::zeros(16)).unwrap();
            let mut d = p;
            d.axpy(-1.0, &bg.analyze_tensor(&bg.lie_derivative_bg(&x)));
            bg.norm_tensor(&d)
        })
        .collect();
    let lx: Vec<f64> = epss.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = defects.iter().map(|d| d.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 3.0;
    let my = ly.iter().sum::<f64>() / 3.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() <= 0.1, "slope {slope}");
}

#[test]
fn lie_reduction_removes_a_gauge_mode() {
    let bg = Background::round_sphere(3, 12).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let eps = 1e-3;
    let mut x = AxisymVector::zeros(12);
    x.e[1] = eps;
    let h = bg.analyze_tensor(&bg.lie_derivative_bg(&x));
    let red = lie_reduction(&bg, &ctx.decomp, &h, 0.0, 1e-10).unwrap();
    let sel = Selector::of_class(ModeClass::Lie).at_least(0.0);
    let coords = ctx.decomp.modal_coords(&bg, &red.reduced);
    assert!(ctx.decomp.projected_norm2(&coords, &sel).sqrt() <= 1e-9);
    assert!(bg.norm_tensor(&red.reduced) <= 10.0 * eps * eps);
}

#[test]
fn slice_projection_of_a_mixed_perturbation() {
    let bg = Background::round_sphere(3, 16).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let ric = essential(&ctx, 1.0);
    let mut x = AxisymVector::zeros(16);
    x.e[1] = 1.2e-3;
    x.e[3] = 4e-4;
    let mut h = bg.analyze_tensor(&bg.lie_derivative_bg(&x));
    h.axpy(8e-4, &ctx.decomp.mode_tensor(essential(&ctx, -1.0)));
    h.axpy(4e-4, &ctx.decomp.mode_tensor(ric));
    assert!(bg.c2_estimate(&h) <= 1e-2);
    let red = slice_projection(&bg, &ctx.decomp, &h).unwrap();
    assert!(red.iterations <= 30);
    let lie = ctx.decomp.project(&bg, &red.reduced, &Selector::of_class(ModeClass::Lie));
    assert!(bg.norm_tensor(&lie) < 1e-8);
    // The Ricci coefficient moves only at second order.
    let before = ctx.decomp.modal_coords(&bg, &h)[ric];
    let after = ctx.decomp.modal_coords(&bg, &red.reduced)[ric];
    assert!((before - after).abs() < 1e-4);
}

#[test]
fn essential_perturbations_are_already_in_the_slice() {
    let bg = Background::round_sphere(3, 10).unwrap();
    let ctx = FlowContext::new(&bg).unwrap();
    let h = ctx.decomp.mode_tensor(essential(&ctx, -1.0)).scaled(1e-3);
    let red = slice_projection(&bg, &ctx.decomp, &h).unwrap();
    assert_eq!(red.iterations, 0);
    assert_eq!(red.reduced, h);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_fit_recovers_exponentials(rate in -3.0f64..3.0, amp in 1e-6f64..1e3) {
        let taus: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
        let vals: Vec<f64> = taus.iter().map(|t| amp * (rate * t).exp()).collect();
        let fit = rate_fit(&taus, &vals).unwrap();
        prop_assert!((fit.exponent - rate).abs() < 1e-9);
        prop_assert!((fit.intercept - amp.ln()).abs() < 1e-8);
    }

    #[test]
    fn pullback_by_identity_is_exact(coeffs in prop::collection::vec(-1e-3f64..1e-3, 10)) {
        let bg = Background::round_sphere(3, 4).unwrap();
        let h = AxisymTensor::from_flat(&coeffs[..bg.tensor_dim()]);
        let p = gauge_pullback(&bg, &GaugeMap::identity(), &h).unwrap();
        let mut d = p;
        d.axpy(-1.0, &h);
        prop_assert!(d.max_abs_coeff() < 1e-13);
    }
}
