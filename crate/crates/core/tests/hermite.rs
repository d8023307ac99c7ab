use bou_lab::hermite::{
    eigenfunction_eval, gradient_mean, gradient_mean_by_parts, hermite_coefficients,
    hermite_polynomial, sigma2_critical, sigma2_small, sigma2_small_integral,
};
use bou_lab::ou_kernel::{equilibrium_expectation, ou_semigroup_apply};
use bou_lab::poly::Polynomial;
use bou_lab::{ModelParams, MultiIndex, SpectralFunction};
use proptest::prelude::*;

fn small() -> ModelParams {
    ModelParams::new(1, 1.0, 1.0, 1.0, 0.75).unwrap()
}

fn critical() -> ModelParams {
    ModelParams::new(1, 1.0, 0.25, 1.0, 0.75).unwrap()
}

fn panel() -> Vec<SpectralFunction> {
    ["x", "x^2 + x", "x^3 + x", "x^4 - x", "0.5*x^5 - x^2 + 2"]
        .iter()
        .map(|s| SpectralFunction::parse_polynomial(s, 1).unwrap())
        .collect()
}

fn poly_from(coeffs: &[f64]) -> SpectralFunction {
    let terms: Vec<(f64, Vec<u32>)> = coeffs.iter().enumerate().map(|(k, c)| (*c, vec![k as u32])).collect();
    SpectralFunction::polynomial(Polynomial::from_terms(1, terms).unwrap())
}

#[test]
fn orthonormality_up_to_degree_six() {
    for params in [small(), ModelParams::new(2, 0.7, 0.4, 1.0, 0.75).unwrap()] {
        let basis = MultiIndex::all_up_to(params.d(), 6);
        for a in &basis {
            for b in &basis {
                let (pa, pb) = (a.clone(), b.clone());
                let prod = SpectralFunction::custom(params.d(), "h_a h_b", move |x| {
                    eigenfunction_eval(&pa, x, &params) * eigenfunction_eval(&pb, x, &params)
                });
                let ip = equilibrium_expectation(&prod, &params).unwrap();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-9, "{a:?} {b:?}: {ip}");
            }
        }
    }
}

#[test]
fn variance_paths_agree_on_panel() {
    for f in panel() {
        let series = sigma2_small(&f, &small()).unwrap();
        let integral = sigma2_small_integral(&f, &small()).unwrap();
        assert!(((series.value - integral) / integral).abs() < 1e-6, "{}: {series:?} vs {integral}", f.label());
        assert_eq!(series.tail_bound, 0.0);

        let c = sigma2_critical(&f, &critical()).unwrap();
        assert!((c.value - c.hermite_path).abs() < 1e-10 * c.value.max(1.0), "{}", f.label());
    }
}

#[test]
fn variance_paths_agree_in_two_dimensions() {
    let params = ModelParams::new(2, 1.0, 1.0, 1.0, 0.75).unwrap();
    let f = SpectralFunction::parse_polynomial("x1^2 + x1*x2 + x2", 2).unwrap();
    let series = sigma2_small(&f, &params).unwrap().value;
    let integral = sigma2_small_integral(&f, &params).unwrap();
    assert!(((series - integral) / integral).abs() < 1e-6, "{series} vs {integral}");
}

#[test]
fn documented_values() {
    // Degree-1 eigenfunction with v = 1.
    let unit = ModelParams::new(1, 2f64.sqrt(), 1.0, 1.0, 0.75).unwrap();
    let h1 = SpectralFunction::from_hermite(&[(1.0, MultiIndex::new(vec![1]))], &unit).unwrap();
    assert!((sigma2_small(&h1, &unit).unwrap().value - 2.0).abs() < 1e-12);
    let x = SpectralFunction::parse_polynomial("x", 1).unwrap();
    assert!((sigma2_critical(&x, &critical()).unwrap().value - 3.0).abs() < 1e-12);
    let f = SpectralFunction::parse_polynomial("x^2 + x", 1).unwrap();
    let a = sigma2_small(&f, &small()).unwrap().value;
    let b = sigma2_small_integral(&f, &small()).unwrap();
    assert!(((a - b) / b).abs() < 1e-6);
}

#[test]
fn gradient_paths_agree() {
    let f = SpectralFunction::parse_polynomial("x^3 + x", 1).unwrap();
    for params in [small(), critical()] {
        let a = gradient_mean(&f, &params).unwrap();
        let b = gradient_mean_by_parts(&f, &params).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-10, "{a:?} {b:?}");
    }
}

#[test]
fn coefficients_vanish_above_the_degree() {
    let f = SpectralFunction::parse_polynomial("x^3 - 2*x + 1", 1).unwrap();
    let exp = hermite_coefficients(&f, 8, &small()).unwrap();
    for (alpha, c) in &exp.coefficients {
        if alpha.degree() > 3 {
            assert!(c.abs() <= 1e-12, "{alpha:?}: {c}");
        }
    }
}

#[test]
fn declared_hermite_coefficients_round_trip() {
    let params = ModelParams::new(2, 0.9, 0.5, 1.0, 0.75).unwrap();
    let terms = [(1.5, MultiIndex::new(vec![1, 0])), (-0.5, MultiIndex::new(vec![2, 1]))];
    let f = SpectralFunction::from_hermite(&terms, &params).unwrap();
    let exp = hermite_coefficients(&f, 4, &params).unwrap();
    for (c, a) in &terms {
        assert!((exp.coefficient(a) - c).abs() < 1e-12);
    }
    assert!((exp.sum_of_squares() - 2.5).abs() < 1e-12);
}

#[test]
fn non_polynomial_functions_report_a_tail() {
    let f = SpectralFunction::custom(1, "cos", |x: &[f64]| x[0].cos()).with_max_degree(10);
    let exp = hermite_coefficients(&f, 10, &small()).unwrap();
    // cos is even: odd coefficients vanish and the tail is small but positive.
    assert!(exp.coefficient(&MultiIndex::new(vec![1])).abs() < 1e-12);
    assert!(exp.tail < 1e-8);
    let s = sigma2_small(&f, &small()).unwrap();
    let i = sigma2_small_integral(&f, &small()).unwrap();
    assert!((s.value - i).abs() <= s.tail_bound + 1e-6 * i);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval(c in prop::collection::vec(-2.0..2.0f64, 7), sigma in 0.3..2.0f64, mu in 0.3..2.0f64) {
        let params = ModelParams::new(1, sigma, mu, 1.0, 0.75).unwrap();
        let f = poly_from(&c);
        let exp = hermite_coefficients(&f, 6, &params).unwrap();
        let mean = equilibrium_expectation(&f, &params).unwrap();
        let g = f.clone();
        let sq = SpectralFunction::custom(1, "f~^2", move |x| (g.eval(x) - mean).powi(2));
        let norm2 = equilibrium_expectation(&sq, &params).unwrap();
        prop_assert!((exp.sum_of_squares() - norm2).abs() <= 1e-9 * norm2.max(1.0));
        prop_assert!(exp.sum_of_squares() <= norm2 + 1e-10 * norm2.max(1.0));
    }

    #[test]
    fn eigenrelation(deg in 0u32..=5, t in 0.0..4.0f64, x in -3.0..3.0f64, mu in 0.2..2.0f64) {
        let params = ModelParams::new(1, 1.0, mu, 1.0, 0.75).unwrap();
        let h = SpectralFunction::polynomial(hermite_polynomial(&MultiIndex::new(vec![deg]), &params));
        let got = ou_semigroup_apply(&h, t, &[x], &params).unwrap();
        let want = (-(deg as f64) * mu * t).exp() * h.eval(&[x]);
        prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn variance_scales_quadratically(c in prop::collection::vec(-2.0..2.0f64, 4), k in -5.0..5.0f64) {
        let f = poly_from(&c);
        let base = sigma2_small(&f, &small()).unwrap().value;
        let scaled = sigma2_small(&f.scaled(k), &small()).unwrap().value;
        prop_assert!((scaled - k * k * base).abs() <= 1e-10 * (k * k * base).max(1.0));
        let cb = sigma2_critical(&f, &critical()).unwrap().value;
        let cs = sigma2_critical(&f.scaled(k), &critical()).unwrap().value;
        prop_assert!((cs - k * k * cb).abs() <= 1e-10 * (k * k * cb).max(1.0));
    }

    #[test]
    fn constants_have_zero_variance(c in -10.0..10.0f64) {
        let f = SpectralFunction::constant(1, c);
        prop_assert!(sigma2_small(&f, &small()).unwrap().value.abs() < 1e-20);
        prop_assert!(sigma2_critical(&f, &critical()).unwrap().value.abs() < 1e-20);
    }
}
