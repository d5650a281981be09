use shrinker_core::entropy::*;
use shrinker_core::geometry::{AxisymTensor, AxisymVector, Background};
use shrinker_core::spectral::{assemble_operator, ModeClass, OperatorKind, SpectralDecomposition};

fn setup(l_max: usize) -> (Background, SpectralDecomposition) {
    let bg = Background::round_sphere(3, l_max).unwrap();
    let d = SpectralDecomposition::new(&bg, &assemble_operator(&bg, OperatorKind::Stability).unwrap()).unwrap();
    (bg, d)
}

fn mode(d: &SpectralDecomposition, lambda: f64, class: ModeClass) -> usize {
    d.modes.iter().position(|m| (m.eigenvalue - lambda).abs() < 1e-8 && m.class == Some(class)).unwrap()
}

#[test]
fn entropy_of_the_shrinker() {
    let bg = Background::round_sphere(3, 8).unwrap();
    let r = mu_entropy(&bg, &AxisymTensor::zeros(8)).unwrap();
    let want = (2.0 * std::f64::consts::PI.sqrt()).ln() - 1.5;
    assert!((r.mu - want).abs() < 1e-8);
    // The minimiser is the constant potential.
    assert!((r.minimizer_f.coeffs[0] - bg.f_const()).abs() < 1e-8);
    assert!(r.minimizer_f.coeffs[1..].iter().all(|c| c.abs() < 1e-8));
}

#[test]
fn entropy_of_the_round_two_sphere() {
    let bg = Background::round_sphere(2, 6).unwrap();
    let r = mu_entropy(&bg, &AxisymTensor::zeros(6)).unwrap();
    // e^{-f} (4 pi)^{-1} Vol(S^2(sqrt 2)) = 1 with Vol = 8 pi.
    let f = 2.0f64.ln();
    assert!((r.mu - (f - 1.0)).abs() < 1e-8);
    assert!((mu_closed_form(2, 1.0) - (f - 1.0)).abs() < 1e-12);
}

#[test]
fn scaling_identity_two_ways() {
    let bg = Background::round_sphere(3, 6).unwrap();
    let s = 0.01;
    let direct = mu_entropy_at(&bg, &AxisymTensor::conformal(6, s), 1.0, None).unwrap().mu;
    let scaled = mu_entropy_at(&bg, &AxisymTensor::zeros(6), 1.0 / (1.0 + s), None).unwrap().mu;
    assert!((direct - scaled).abs() < 1e-7, "{direct} vs {scaled}");
    assert!((scaled - mu_closed_form(3, 1.0 / (1.0 + s))).abs() < 1e-8);
}

#[test]
fn second_variation_on_essential_modes() {
    let (bg, d) = setup(8);
    for (lam, want) in [(1.0, 0.5), (-1.0, -0.5)] {
        let h = d.mode_tensor(mode(&d, lam, ModeClass::Essential));
        let sv = second_variation(&bg, &d, &h).unwrap();
        assert!((sv.spectral - want).abs() < 1e-9);
        assert!((sv.operator - want).abs() < 1e-7, "operator form {}", sv.operator);
    }
}

#[test]
fn second_variation_vanishes_on_lie_derivatives() {
    let (bg, d) = setup(8);
    let mut x = AxisymVector::zeros(8);
    x.e[1] = 0.7;
    x.e[3] = -0.2;
    let h = bg.analyze_tensor(&bg.lie_derivative_bg(&x));
    let sv = second_variation(&bg, &d, &h).unwrap();
    assert!(sv.spectral.abs() < 1e-10);
    assert!(sv.operator.abs() < 1e-8);
}

#[test]
fn finite_differences_match_the_spectral_form() {
    let (bg, d) = setup(6);
    for lam in [1.0, -1.0] {
        let h = d.mode_tensor(mode(&d, lam, ModeClass::Essential));
        let fd = fd_second_variation(&bg, &h, &[1e-3]).unwrap();
        let want = 0.5 * lam;
        assert!((fd.estimate - want).abs() <= 0.01 * want.abs(), "lambda {lam}: {}", fd.estimate);
    }
    let h = d.mode_tensor(mode(&d, 0.25, ModeClass::Lie));
    let fd = fd_second_variation(&bg, &h, &[1e-3]).unwrap();
    assert!(fd.estimate.abs() < 1e-4, "generic {}", fd.estimate);
}

#[test]
fn rejects_out_of_range_steps() {
    let bg = Background::round_sphere(3, 4).unwrap();
    assert!(fd_second_variation(&bg, &AxisymTensor::conformal(4, 1.0), &[]).is_err());
    assert!(fd_second_variation(&bg, &AxisymTensor::conformal(4, 1.0), &[0.5]).is_err());
}
