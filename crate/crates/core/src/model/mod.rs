//! Domain types of the bilateral model: outcome spaces, contracts, compatible
//! distributions, action domains, and the basic payoff arithmetic.

mod function;

pub use function::{euler_residual, homogeneity_check, Family, FunctionSpec, Objective, GRADIENT_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Finite signal vectors with a known convex hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    dimension: usize,
    outcomes: Vec<Vec<f64>>,
    contains_origin: bool,
}

impl OutcomeSpace {
    pub fn new(dimension: usize, outcomes: Vec<Vec<f64>>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Input("dimension must be at least 1".into()));
        }
        if outcomes.len() < 2 {
            return Err(Error::Input(format!("need at least 2 outcomes, got {}", outcomes.len())));
        }
        for (k, x) in outcomes.iter().enumerate() {
            if x.len() != dimension {
                return Err(Error::Input(format!("outcome {k} has length {}, expected {dimension}", x.len())));
            }
            if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Input(format!("outcome {k} has entry {v}; entries must be finite and nonnegative")));
            }
        }
        for i in 0..outcomes.len() {
            for j in (i + 1)..outcomes.len() {
                if outcomes[i] == outcomes[j] {
                    return Err(Error::Input(format!("outcomes {i} and {j} coincide")));
                }
            }
        }
        let mut space = OutcomeSpace { dimension, outcomes, contains_origin: false };
        space.contains_origin = space.hull_weights(&vec![0.0; dimension])?.is_some();
        Ok(space)
    }

    /// Scalar outcome space from a list of real outputs.
    pub fn scalar(outputs: &[f64]) -> Result<Self> {
        OutcomeSpace::new(1, outputs.iter().map(|&x| vec![x]).collect())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn contains_origin(&self) -> bool {
        self.contains_origin
    }

    pub fn outcome(&self, k: usize) -> Result<&[f64]> {
        self.outcomes
            .get(k)
            .map(|x| x.as_slice())
            .ok_or_else(|| Error::Input(format!("outcome index {k} out of range (m = {})", self.outcomes.len())))
    }

    /// Convex weights realizing `a` as a mixture of outcomes, if `a` lies in the hull.
    pub fn hull_weights(&self, a: &[f64]) -> Result<Option<Vec<f64>>> {
        if a.len() != self.dimension {
            return Err(Error::Input(format!("point has length {}, expected {}", a.len(), self.dimension)));
        }
        let m = self.outcomes.len();
        let mut rows: Vec<Vec<f64>> = (0..self.dimension).map(|i| self.outcomes.iter().map(|x| x[i]).collect()).collect();
        rows.push(vec![1.0; m]);
        let mut rhs = a.to_vec();
        rhs.push(1.0);
        let sol = solve_lp(&LpProblem::new(Sense::Minimize, vec![0.0; m], rows, rhs))?;
        Ok(match sol.status {
            LpStatus::Optimal => Some(sol.primal),
            _ => None,
        })
    }

    pub fn in_hull(&self, a: &[f64]) -> Result<bool> {
        Ok(self.hull_weights(a)?.is_some())
    }

    /// Per-coordinate maxima of the outcomes.
    pub fn upper_corner(&self) -> Vec<f64> {
        (0..self.dimension).map(|i| self.outcomes.iter().map(|x| x[i]).fold(0.0, f64::max)).collect()
    }
}

/// Finite outcome → payment table aligned with an [`OutcomeSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularContract {
    pub payments: Vec<f64>,
}

impl TabularContract {
    /// Limited-liability contract: every payment must be nonnegative.
    pub fn new(payments: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = payments.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::Input(format!("payment {k} is {v}; payments must be finite and nonnegative")));
        }
        Ok(TabularContract { payments })
    }

    /// Principal-level contract in common agency, where only the aggregate is sign-constrained.
    pub fn signed(payments: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = payments.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Input(format!("payment {k} is {v}; payments must be finite")));
        }
        Ok(TabularContract { payments })
    }

    pub fn check_against(&self, space: &OutcomeSpace) -> Result<()> {
        if self.payments.len() != space.len() {
            return Err(Error::Input(format!(
                "contract has {} payments but the outcome space has {} outcomes",
                self.payments.len(),
                space.len()
            )));
        }
        Ok(())
    }

    pub fn payment(&self, index: usize) -> Result<f64> {
        self.payments
            .get(index)
            .copied()
            .ok_or_else(|| Error::Input(format!("outcome index {index} out of range (m = {})", self.payments.len())))
    }
}

/// `ψ₀ + ⟨ψ, x⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineContract {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl AffineContract {
    pub fn new(intercept: f64, slope: Vec<f64>) -> Self {
        AffineContract { intercept, slope }
    }

    pub fn zero(dimension: usize) -> Self {
        AffineContract { intercept: 0.0, slope: vec![0.0; dimension] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.slope, x)
    }

    /// Payments on every outcome of the space.
    pub fn on_space(&self, space: &OutcomeSpace) -> Vec<f64> {
        space.outcomes().iter().map(|x| self.eval(x)).collect()
    }
}

/// `⟨φ, x⟩` with nonnegative slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearContract {
    pub slope: Vec<f64>,
}

impl LinearContract {
    pub fn new(slope: Vec<f64>) -> Result<Self> {
        if let Some(v) = slope.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Input(format!("linear contract slope entry {v} must be finite and nonnegative")));
        }
        Ok(LinearContract { slope })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.slope, x)
    }
}

/// One column `F(a)` of a distribution mapping, supported on outcome indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionAtAction {
    pub action: Vec<f64>,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
}

/// How far a distribution column is from being compatible with its action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityResiduals {
    pub weight_sum: f64,
    pub mean: f64,
    pub min_weight: f64,
}

impl CompatibilityResiduals {
    pub fn is_compatible(&self) -> bool {
        self.weight_sum <= 1e-10 && self.mean <= 1e-8 && self.min_weight >= -1e-12
    }
}

impl DistributionAtAction {
    /// Keeps entries with weight above `threshold`, merging nothing.
    pub fn from_dense(action: Vec<f64>, dense: &[f64], threshold: f64) -> Self {
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for (k, &w) in dense.iter().enumerate() {
            if w > threshold {
                support.push(k);
                weights.push(w);
            }
        }
        DistributionAtAction { action, support, weights }
    }

    pub fn point_mass(action: Vec<f64>, index: usize) -> Self {
        DistributionAtAction { action, support: vec![index], weights: vec![1.0] }
    }

    pub fn mean(&self, space: &OutcomeSpace) -> Vec<f64> {
        let mut m = vec![0.0; space.dimension()];
        for (&k, &w) in self.support.iter().zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(&space.outcomes()[k]) {
                *mi += w * xi;
            }
        }
        m
    }

    /// `Σⱼ λⱼ v[supportⱼ]`.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.support.iter().zip(&self.weights).map(|(&k, &w)| w * values[k]).sum()
    }

    pub fn residuals(&self, space: &OutcomeSpace) -> CompatibilityResiduals {
        let total: f64 = self.weights.iter().sum();
        CompatibilityResiduals {
            weight_sum: (total - 1.0).abs(),
            mean: max_abs_diff(&self.mean(space), &self.action),
            min_weight: self.weights.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn validate(&self, space: &OutcomeSpace) -> Result<()> {
        if self.support.len() != self.weights.len() {
            return Err(Error::Input("support and weights have different lengths".into()));
        }
        if let Some(&k) = self.support.iter().find(|&&k| k >= space.len()) {
            return Err(Error::Input(format!("support index {k} out of range")));
        }
        let r = self.residuals(space);
        if !r.is_compatible() {
            return Err(Error::numeric_with(
                "distribution is not compatible with its action",
                [("weight_sum", r.weight_sum), ("mean", r.mean), ("min_weight", r.min_weight)],
            ));
        }
        Ok(())
    }
}

/// The agent's compact, downward-closed action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionDomain {
    /// `[0, upper₁] × … × [0, upper_d]`.
    Box { upper: Vec<f64> },
    /// The convex hull of the outcome space.
    Hull,
}

impl ActionDomain {
    pub fn bounding_box(&self, space: &OutcomeSpace) -> Vec<f64> {
        match self {
            ActionDomain::Box { upper } => upper.clone(),
            ActionDomain::Hull => space.upper_corner(),
        }
    }

    pub fn contains(&self, a: &[f64], space: &OutcomeSpace) -> Result<bool> {
        match self {
            ActionDomain::Box { upper } => {
                Ok(a.len() == upper.len() && a.iter().zip(upper).all(|(x, u)| *x >= -1e-12 && *x <= u + 1e-12))
            }
            ActionDomain::Hull => space.in_hull(a),
        }
    }

    pub fn contains_origin(&self, space: &OutcomeSpace) -> bool {
        match self {
            ActionDomain::Box { .. } => true,
            ActionDomain::Hull => space.contains_origin(),
        }
    }

    /// Checks that the domain is usable with the outcome space: boxes must lie in the hull.
    pub fn check_against(&self, space: &OutcomeSpace) -> Result<()> {
        if let ActionDomain::Box { upper } = self {
            if upper.len() != space.dimension() {
                return Err(Error::Input(format!(
                    "box domain has {} bounds, expected {}",
                    upper.len(),
                    space.dimension()
                )));
            }
            if upper.iter().any(|u| !u.is_finite() || *u <= 0.0) {
                return Err(Error::Input("box bounds must be finite and positive".into()));
            }
            for corner in box_corners(upper) {
                if !space.in_hull(&corner)? {
                    return Err(Error::Precondition(format!(
                        "box corner {corner:?} lies outside the convex hull of the outcomes"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn box_corners(upper: &[f64]) -> Vec<Vec<f64>> {
    let d = upper.len();
    (0..(1usize << d))
        .map(|mask| (0..d).map(|i| if mask >> i & 1 == 1 { upper[i] } else { 0.0 }).collect())
        .collect()
}

/// `E[w] − c(a)`.
pub fn agent_utility(payment_at_a: f64, cost: &FunctionSpec, a: &[f64]) -> f64 {
    payment_at_a - cost.value(a)
}

/// `u(a*) − E[w]`.
pub fn principal_payoff(utility: &FunctionSpec, a_star: &[f64], expected_payment: f64) -> f64 {
    utility.value(a_star) - expected_payment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1() -> (OutcomeSpace, TabularContract) {
        let space =
            OutcomeSpace::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        (space, TabularContract::new(vec![0.0, 2.0, 2.0, 3.0]).unwrap())
    }

    #[test]
    fn payment_rules() {
        let (_, w) = e1();
        assert_eq!(w.payment(3).unwrap(), 3.0);
        assert!(matches!(w.payment(4), Err(Error::Input(_))));
        assert_eq!(AffineContract::new(1.0, vec![1.0, 1.0]).eval(&[1.0, 1.0]), 3.0);
        assert_eq!(LinearContract::new(vec![1.0, 1.0]).unwrap().eval(&[0.5, 0.5]), 1.0);
    }

    #[test]
    fn outcome_space_validation() {
        assert!(OutcomeSpace::new(1, vec![vec![0.0]]).is_err());
        assert!(OutcomeSpace::new(1, vec![vec![0.0], vec![0.0]]).is_err());
        assert!(OutcomeSpace::new(1, vec![vec![0.0], vec![-1.0]]).is_err());
        let (space, _) = e1();
        assert!(space.contains_origin());
        let off = OutcomeSpace::new(1, vec![vec![0.5], vec![1.0]]).unwrap();
        assert!(!off.contains_origin());
    }

    #[test]
    fn negative_payment_rejected() {
        assert!(TabularContract::new(vec![0.0, -1.0]).is_err());
        assert!(TabularContract::signed(vec![0.0, -1.0]).is_ok());
        assert!(LinearContract::new(vec![-0.1]).is_err());
    }

    #[test]
    fn payoff_arithmetic() {
        let square = FunctionSpec::power_sum(vec![1.0], 2.0);
        assert!((agent_utility(0.32, &square, &[0.4]) - 0.16).abs() < 1e-15);
        assert_eq!(agent_utility(0.0, &square, &[0.0]), 0.0);
        let quad = FunctionSpec::norm_power(1.0, 2.0);
        assert!((agent_utility(2.0, &quad, &[0.5, 0.5]) - 1.5).abs() < 1e-15);

        let u = FunctionSpec::linear(vec![2.0, 2.0]);
        assert!((principal_payoff(&u, &[0.5, 0.5], 1.0) - 1.0).abs() < 1e-15);
        assert!(principal_payoff(&u, &[0.5, 0.5], 2.0).abs() < 1e-15);
        assert_eq!(principal_payoff(&u, &[0.0, 0.0], 0.0), 0.0);
    }

    #[test]
    fn affine_invariance_on_compatible_column() {
        let (space, _) = e1();
        let col = DistributionAtAction { action: vec![0.5, 0.5], support: vec![0, 1, 2, 3], weights: vec![0.25; 4] };
        col.validate(&space).unwrap();
        let psi = AffineContract::new(0.7, vec![1.3, -0.2]);
        assert!((col.expectation(&psi.on_space(&space)) - psi.eval(&[0.5, 0.5])).abs() < 1e-12);
    }

    #[test]
    fn box_domain_must_fit_hull() {
        let (space, _) = e1();
        assert!(ActionDomain::Box { upper: vec![1.0, 1.0] }.check_against(&space).is_ok());
        assert!(ActionDomain::Box { upper: vec![1.5, 1.0] }.check_against(&space).is_err());
    }
}
