//! JSON model files.

use std::collections::BTreeMap;
use std::path::Path;

use gscreen_core::expr::{Expr, VarSpace};
use gscreen_core::model::{Contract, Domains, Family, FamilyKind, Measure, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainsFile {
    #[serde(rename = "X")]
    pub x: Vec<[f64; 2]>,
    #[serde(rename = "Y")]
    pub y: Vec<[f64; 2]>,
    #[serde(rename = "Z")]
    pub z: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expressions {
    #[serde(rename = "G")]
    pub g: String,
    pub pi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub name: String,
    #[serde(default)]
    pub parts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutsideOption {
    pub y: Vec<f64>,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dimensions: Dimensions,
    pub domains: DomainsFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<Expressions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyFile>,
    pub outside_option: OutsideOption,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureFile>,
}

const BUILTIN_FILES: [(&str, &str); 4] = [
    ("quasilinear", include_str!("../models/quasilinear.json")),
    ("price_sensitive", include_str!("../models/price_sensitive.json")),
    ("inhomogeneous", include_str!("../models/inhomogeneous.json")),
    ("zero_sum_profit", include_str!("../models/zero_sum_profit.json")),
];

/// JSON text of a builtin model file.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTIN_FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

impl ModelFile {
    pub fn parse(source: &str) -> Result<ModelFile, CliError> {
        serde_json::from_str(source).map_err(|e| invalid(format!("model file: {e}")))
    }

    /// Read `path`, or the builtin `NAME` when given as `builtin:NAME`.
    pub fn load(path: &str) -> Result<ModelFile, CliError> {
        if let Some(name) = path.strip_prefix("builtin:") {
            let src = builtin_source(name).ok_or_else(|| invalid(format!("unknown builtin model `{name}`")))?;
            return ModelFile::parse(src);
        }
        let text = std::fs::read_to_string(Path::new(path)).map_err(|e| invalid(format!("{path}: {e}")))?;
        ModelFile::parse(&text)
    }

    pub fn to_spec(&self) -> Result<ModelSpec, CliError> {
        let Dimensions { m, n } = self.dimensions;
        if self.domains.x.len() != m || self.domains.y.len() != n {
            return Err(invalid(format!(
                "domains give {} x-axes and {} y-axes but dimensions are m = {m}, n = {n}",
                self.domains.x.len(),
                self.domains.y.len()
            )));
        }
        let pair = |a: &[f64; 2]| (a[0], a[1]);
        let domains = Domains {
            x: self.domains.x.iter().map(pair).collect(),
            y: self.domains.y.iter().map(pair).collect(),
            z: pair(&self.domains.z),
        };
        let space = VarSpace::new(m, n);
        let outside = Contract::new(self.outside_option.y.clone(), self.outside_option.z);
        let measure = match &self.measure {
            None => Measure::Uniform,
            Some(MeasureFile { kind, density }) => match (kind.as_str(), density) {
                ("uniform", None) => Measure::Uniform,
                ("density", Some(d)) => Measure::Density(Expr::parse(d, space)?),
                _ => {
                    return Err(invalid(
                        "measure must be {\"kind\": \"uniform\"} or {\"kind\": \"density\", \"density\": ...}",
                    ))
                }
            },
        };
        match (&self.expressions, &self.family) {
            (Some(e), None) => {
                let g = Expr::parse(&e.g, space)?;
                let pi = Expr::parse(&e.pi, space)?;
                Ok(ModelSpec::new(domains, g, pi, outside, measure)?)
            }
            (None, Some(f)) => {
                let kind = FamilyKind::from_name(&f.name).ok_or_else(|| invalid(format!("unknown family `{}`", f.name)))?;
                if let Some(k) = f.parts.keys().find(|k| !["a", "b", "f"].contains(&k.as_str())) {
                    return Err(invalid(format!("unknown family part `{k}`")));
                }
                let b = f.parts.get("b").ok_or_else(|| invalid("family part `b` is required"))?;
                let family = Family::parse(
                    kind,
                    space,
                    b,
                    f.parts.get("f").map(String::as_str),
                    f.parts.get("a").map(String::as_str),
                )?;
                Ok(ModelSpec::from_family(domains, family, outside, measure)?)
            }
            _ => Err(invalid("exactly one of `expressions` and `family` must be given")),
        }
    }
}
