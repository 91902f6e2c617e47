use gscreen_core::certify::{
    certify_lemma49, closed_form_bracket, criterion_matrix, fourth_order_test, Verdict,
    FOURTH_ORDER_TOL,
};
use gscreen_core::expr::VarSpace;
use gscreen_core::linalg::sym_eig_range;
use gscreen_core::model::sample::sample_box;
use gscreen_core::model::{builtin, Contract, Domains, Family, FamilyKind, Measure, ModelSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn unit_point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..0.999_999, 3)
}

fn scaled(spec: &ModelSpec, u: &[f64]) -> Vec<f64> {
    spec.xyz_bounds()
        .iter()
        .zip(u)
        .map(|(&(lo, hi), t)| lo + t * (hi - lo))
        .collect()
}

fn family_model(kind: FamilyKind, b: &str, f: Option<&str>, a: Option<&str>) -> ModelSpec {
    let fam = Family::parse(kind, VarSpace::new(1, 1), b, f, a).unwrap();
    let d = Domains {
        x: vec![(0.5, 1.5)],
        y: vec![(0.0, 1.0)],
        z: (0.0, 1.0),
    };
    ModelSpec::from_family(d, fam, Contract::new(vec![0.0], 0.0), Measure::Uniform).unwrap()
}

/// -1, 0 or 1 per eigenvalue sign, with zero band `tol * max(1, |A|)`.
fn sign_pattern(a: &DMatrix<f64>, tol: f64) -> (i8, i8) {
    let (lo, hi) = sym_eig_range(a);
    let band = tol * a.norm().max(1.0);
    let s = |v: f64| {
        if v > band {
            1
        } else if v < -band {
            -1
        } else {
            0
        }
    };
    (s(lo), s(hi))
}

fn sign_agreement(spec: &ModelSpec, count: usize, seed: u64) -> (usize, usize) {
    let tol = 1e-8;
    let mut agree = 0;
    let mut severe = 0;
    for p in sample_box(&spec.xyz_bounds(), count, seed) {
        let a = criterion_matrix(spec, &p).unwrap().matrix();
        let (bracket, h) = closed_form_bracket(spec, &p).unwrap();
        let n = bracket.nrows();
        let mut c = DMatrix::zeros(n + 1, n + 1);
        c.view_mut((0, 0), (n, n)).copy_from(&(-bracket));
        c[(n, n)] = -h;
        if sign_pattern(&a, tol) == sign_pattern(&c, tol) {
            agree += 1;
        } else {
            let (lo, hi) = sym_eig_range(&c);
            if lo.abs().min(hi.abs()) >= 10.0 * tol {
                severe += 1;
            }
        }
    }
    (agree, severe)
}

#[test]
fn closed_forms_classify_like_the_generic_matrix() {
    let families = [
        family_model(
            FamilyKind::Inhomogeneous,
            "x1*y1",
            Some("z + x1*z^2/2 + x1^2*z"),
            None,
        ),
        family_model(
            FamilyKind::Inhomogeneous,
            "x1*y1 + y1^2*x1^2/4",
            Some("z + x1*z^2/2 + x1^2*z"),
            Some("(y1 - 0.5)^3"),
        ),
        family_model(
            FamilyKind::Inhomogeneous,
            "x1*y1",
            Some("z*exp(x1*z/4)"),
            Some("y1^2/2 - y1^3/2"),
        ),
    ];
    for spec in &families {
        let (agree, severe) = sign_agreement(spec, 1000, 11);
        assert!(agree >= 990, "{agree}/1000");
        assert_eq!(severe, 0);
    }
}

#[test]
fn indefinite_verdicts_carry_witnesses() {
    let d = Domains {
        x: vec![(0.0, 1.0)],
        y: vec![(0.0, 1.0)],
        z: (0.0, 1.0),
    };
    let spec = ModelSpec::from_strings(
        d,
        "x1*y1 - z - z^2/2",
        "z + y1^2/2",
        Contract::new(vec![0.0], 0.0),
    )
    .unwrap();
    let r = certify_lemma49(&spec, 256, 1e-8, 5).unwrap();
    assert_eq!(r.verdict, Verdict::Indefinite);
    assert!(r.counterexamples.iter().any(|s| s.eig_max > 1e-8));
    assert!(r.counterexamples.iter().any(|s| s.eig_min < -1e-8));
}

#[test]
fn fourth_order_flags_a_g3_violation() {
    let d = Domains {
        x: vec![(0.0, 0.4)],
        y: vec![(0.0, 1.0)],
        z: (0.0, 1.0),
    };
    let spec = ModelSpec::from_strings(
        d,
        "x1*y1 - x1^2*y1^3/3 - z",
        "z - y1^2/2",
        Contract::new(vec![0.0], 0.0),
    )
    .unwrap();
    let r = fourth_order_test(&spec, 512, FOURTH_ORDER_TOL, 2).unwrap();
    assert!(!r.supports_g3());
    assert!(!r.witnesses.is_empty() && !r.direct_witnesses.is_empty());
    assert!(r.min < -FOURTH_ORDER_TOL || r.max > FOURTH_ORDER_TOL);
}

#[test]
fn fourth_order_agrees_with_direct_on_builtins() {
    for name in ["quasilinear", "price_sensitive", "inhomogeneous"] {
        let r = fourth_order_test(&builtin(name).unwrap(), 512, FOURTH_ORDER_TOL, 4).unwrap();
        assert!(r.agreement_rate() >= 0.99, "{name}: {}", r.agreement_rate());
        assert_eq!(r.severe_disagreements, 0);
        assert!(r.supports_g3());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn zero_sum_matrix_vanishes(u in unit_point()) {
        let spec = builtin("zero_sum_profit").unwrap();
        let s = criterion_matrix(&spec, &scaled(&spec, &u)).unwrap();
        prop_assert!(s.norm() < 1e-8, "{}", s.norm());
    }

    #[test]
    fn inhomogeneous_matrix_is_hand_value(u in unit_point()) {
        // b = x y, f = z + x z^2/2, a = y^2/2: A = diag(-1, -y)
        let spec = builtin("inhomogeneous").unwrap();
        let p = scaled(&spec, &u);
        let a = criterion_matrix(&spec, &p).unwrap().matrix();
        prop_assert!((a[(0, 0)] + 1.0).abs() < 1e-6);
        prop_assert!((a[(1, 1)] + p[1]).abs() < 1e-6);
        prop_assert!(a[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn uniform_modulus_bounds_every_sample(u in unit_point()) {
        // price_sensitive: A = diag(-1, -1/(1+z)), so lambda = 1/2 on Z = (0, 1)
        let spec = builtin("price_sensitive").unwrap();
        let r = certify_lemma49(&spec, 512, 1e-8, 9).unwrap();
        prop_assert_eq!(r.verdict, Verdict::UniformlyConcave);
        prop_assert!((r.lambda - 0.5).abs() < 1e-6);
        let p = scaled(&spec, &u);
        let s = criterion_matrix(&spec, &p).unwrap();
        prop_assert!((s.eig_max + 1.0 / (1.0 + p[2])).abs() < 1e-6);
        prop_assert!(s.eig_max <= -r.lambda + 1e-6);
    }
}
