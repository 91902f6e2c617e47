use super::{ModelError, ModelSpec};

/// Where the price that gives utility `u` falls relative to `cl(Z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceLevel {
    Exact(f64),
    /// `u < G(x, y, z_max)`: the required price exceeds the cap.
    AboveCap,
    /// `u > G(x, y, z_min)`: the required price is below the floor.
    BelowFloor,
}

fn tolerance(u: f64) -> f64 {
    1e-12 * (1.0 + u.abs())
}

/// Solve `G(x, y, z) = u` for `z` in `cl(Z)`, assuming `G` decreases in `z`.
///
/// Safeguarded Newton: Newton steps inside the current bracket, bisection
/// otherwise.
pub fn price_for_utility(
    spec: &ModelSpec,
    x: &[f64],
    y: &[f64],
    u: f64,
) -> Result<PriceLevel, ModelError> {
    let (zlo, zhi) = spec.domains().z;
    let zi = spec.space().z();
    let mut p = spec.point_ybar(x, &[y, &[zlo]].concat());
    let mut ev = spec.g().evaluator();
    let tol = tolerance(u);

    let g_lo = ev.value(&p)?;
    if (g_lo - u).abs() <= tol {
        return Ok(PriceLevel::Exact(zlo));
    }
    if u > g_lo {
        return Ok(PriceLevel::BelowFloor);
    }
    p[zi] = zhi;
    let g_hi = ev.value(&p)?;
    if (g_hi - u).abs() <= tol {
        return Ok(PriceLevel::Exact(zhi));
    }
    if u < g_hi {
        return Ok(PriceLevel::AboveCap);
    }

    let (mut a, mut b) = (zlo, zhi);
    let mut z = 0.5 * (a + b);
    let mut best = (f64::INFINITY, z);
    for _ in 0..200 {
        p[zi] = z;
        let f = ev.gradient(&p)? - u;
        let df = ev.grad()[zi];
        if f.abs() < best.0 {
            best = (f.abs(), z);
        }
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            a = z;
        } else {
            b = z;
        }
        if f.abs() <= 1e-3 * tol || b - a <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
            break;
        }
        let newton = z - f / df;
        z = if df < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    if best.0 < tol {
        Ok(PriceLevel::Exact(best.1))
    } else {
        Err(ModelError::NoConvergence { residual: best.0 })
    }
}

/// The price `H(x, y, u)` with `G(x, y, H) = u`.
pub fn invert_price(spec: &ModelSpec, x: &[f64], y: &[f64], u: f64) -> Result<f64, ModelError> {
    match price_for_utility(spec, x, y, u)? {
        PriceLevel::Exact(z) => Ok(z),
        _ => {
            let (zlo, zhi) = spec.domains().z;
            let lo = spec.utility(x, &super::Contract::new(y.to_vec(), zhi))?;
            let hi = spec.utility(x, &super::Contract::new(y.to_vec(), zlo))?;
            Err(ModelError::OutOfRange { u, lo, hi })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin, Contract, Domains};
    use super::*;

    fn square_model() -> ModelSpec {
        let d = Domains {
            x: vec![(0.0, 2.0)],
            y: vec![(0.0, 2.0)],
            z: (0.1, 2.0),
        };
        ModelSpec::from_strings(d, "x1*y1 - z^2", "z", Contract::new(vec![0.0], 0.1)).unwrap()
    }

    #[test]
    fn closed_form_quasilinear() {
        let spec = builtin("quasilinear").unwrap();
        let z = invert_price(&spec, &[0.5], &[1.0], 0.2).unwrap();
        assert!((z - 0.3).abs() < 1e-15);
    }

    #[test]
    fn square_price() {
        let z = invert_price(&square_model(), &[1.0], &[1.0], 0.0).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range() {
        let spec = builtin("quasilinear").unwrap();
        // G(0.5, 1, z) ranges over [-1.5, 0.5]
        assert!(matches!(
            invert_price(&spec, &[0.5], &[1.0], 0.6),
            Err(ModelError::OutOfRange { .. })
        ));
        assert_eq!(
            price_for_utility(&spec, &[0.5], &[1.0], -1.6).unwrap(),
            PriceLevel::AboveCap
        );
        assert_eq!(
            price_for_utility(&spec, &[0.5], &[1.0], 0.6).unwrap(),
            PriceLevel::BelowFloor
        );
        assert_eq!(
            price_for_utility(&spec, &[0.5], &[1.0], 0.5).unwrap(),
            PriceLevel::Exact(0.0)
        );
    }

    #[test]
    fn decreasing_in_utility() {
        let spec = square_model();
        // u decreases with k, so H must increase
        let mut last = f64::NEG_INFINITY;
        for k in 0..50 {
            let u = 1.4 - 3.8 * k as f64 / 49.0;
            let z = invert_price(&spec, &[1.0], &[1.5], u).unwrap();
            assert!(z > last);
            last = z;
        }
    }
}
