use super::{Contract, Domains, Family, FamilyKind, Measure, ModelError, ModelSpec};
use crate::expr::VarSpace;

pub const BUILTIN_NAMES: [&str; 4] = [
    "quasilinear",
    "price_sensitive",
    "inhomogeneous",
    "zero_sum_profit",
];

/// One-dimensional builtin models on `X = Y = (0, 1)` with outside option
/// `(y, z) = (0, 0)` and uniform agent measure.
///
/// | name            | G                         | pi           | Z      |
/// |-----------------|---------------------------|--------------|--------|
/// | quasilinear     | x1*y1 - z                 | z - y1^2/2   | (0, 2) |
/// | price_sensitive | x1*y1 - (z + z^2/2)       | z - y1^2/2   | (0, 1) |
/// | inhomogeneous   | x1*y1 - (z + x1*z^2/2)    | z - y1^2/2   | (0, 1) |
/// | zero_sum_profit | x1*y1 - z                 | -G           | (0, 2) |
pub fn builtin(name: &str) -> Result<ModelSpec, ModelError> {
    let kind =
        FamilyKind::from_name(name).ok_or_else(|| ModelError::UnknownBuiltin(name.to_string()))?;
    let (f, a, zmax) = match kind {
        FamilyKind::Quasilinear => (None, Some("y1^2/2"), 2.0),
        FamilyKind::PriceSensitive => (Some("z + z^2/2"), Some("y1^2/2"), 1.0),
        FamilyKind::Inhomogeneous => (Some("z + x1*z^2/2"), Some("y1^2/2"), 1.0),
        FamilyKind::ZeroSumProfit => (None, None, 2.0),
    };
    let family = Family::parse(kind, VarSpace::new(1, 1), "x1*y1", f, a)?;
    let domains = Domains {
        x: vec![(0.0, 1.0)],
        y: vec![(0.0, 1.0)],
        z: (0.0, zmax),
    };
    ModelSpec::from_family(
        domains,
        family,
        Contract::new(vec![0.0], 0.0),
        Measure::Uniform,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_load() {
        for name in BUILTIN_NAMES {
            let spec = builtin(name).unwrap();
            assert_eq!(spec.family().unwrap().kind.name(), name);
        }
        assert!(matches!(
            builtin("nope"),
            Err(ModelError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn builtin_formulas() {
        let p = [0.5, 0.4, 0.2];
        let q = builtin("quasilinear").unwrap();
        assert!((q.g().eval(&p).unwrap() - 0.0).abs() < 1e-15);
        assert!((q.pi().eval(&p).unwrap() - 0.12).abs() < 1e-15);
        let i = builtin("inhomogeneous").unwrap();
        assert!((i.g().eval(&p).unwrap() - (0.2 - 0.2 - 0.01)).abs() < 1e-15);
    }
}
