use serde::Serialize;

use super::GeometryError;
use crate::model::ModelSpec;

/// Finite agent grid with normalized measure weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentGrid {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Per-axis coordinates when the grid is a tensor grid (first axis
    /// slowest in `points`).
    pub axes: Option<Vec<Vec<f64>>>,
}

fn uniform_axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Tensor grid over a box, endpoints included (a single point per axis sits
/// at the midpoint).
pub fn product_grid(bounds: &[(f64, f64)], counts: &[usize]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), &c)| uniform_axis(lo, hi, c))
        .collect();
    tensor_points(&axes)
}

impl AgentGrid {
    /// Uniform tensor grid on `cl(X)` weighted by the model's measure.
    pub fn tensor(spec: &ModelSpec, counts: &[usize]) -> Result<AgentGrid, GeometryError> {
        if counts.len() != spec.m() || counts.contains(&0) {
            return Err(GeometryError::InvalidInput(format!(
                "agent grid needs {} positive per-axis counts",
                spec.m()
            )));
        }
        let axes: Vec<Vec<f64>> = spec
            .domains()
            .x
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), &c)| uniform_axis(lo, hi, c))
            .collect();
        let points = tensor_points(&axes);
        let raw = points
            .iter()
            .map(|x| spec.weight(x))
            .collect::<Result<Vec<_>, _>>()?;
        let mut grid = AgentGrid::from_points(points, raw)?;
        grid.axes = Some(axes);
        Ok(grid)
    }

    /// Arbitrary agents with nonnegative weights, normalized to total mass 1.
    pub fn from_points(
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    ) -> Result<AgentGrid, GeometryError> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(GeometryError::InvalidInput(
                "agent grid needs one weight per point".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(GeometryError::InvalidInput(
                "agent weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(GeometryError::InvalidInput(
                "agent weights sum to zero".into(),
            ));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(AgentGrid {
            points,
            weights,
            axes: None,
        })
    }

    /// Equally weighted agents.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<AgentGrid, GeometryError> {
        let w = vec![1.0; points.len()];
        AgentGrid::from_points(points, w)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    #[test]
    fn tensor_grid_layout() {
        let g = product_grid(&[(0.0, 1.0), (2.0, 3.0)], &[3, 2]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.0, 2.0]);
        assert_eq!(g[1], vec![0.0, 3.0]);
        assert_eq!(g[5], vec![1.0, 3.0]);
        assert_eq!(product_grid(&[(0.0, 1.0)], &[1]), vec![vec![0.5]]);
    }

    #[test]
    fn weights_are_normalized() {
        let spec = builtin("quasilinear").unwrap();
        let g = AgentGrid::tensor(&spec, &[11]).unwrap();
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g.points[10], vec![1.0]);
        assert!(AgentGrid::from_points(vec![vec![0.0]], vec![-1.0]).is_err());
    }
}
