use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles;

/// Solvers clamp iterates to this floor before evaluating gradients.
pub const GRADIENT_FLOOR: f64 = 1e-12;

const HOMOGENEITY_SEED: u64 = 0x686f_6d6f;

/// Anything with a value and a gradient on the nonnegative orthant.
pub trait Objective: Sync {
    fn value(&self, a: &[f64]) -> f64;
    fn gradient(&self, a: &[f64]) -> Vec<f64>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn value(&self, a: &[f64]) -> f64 {
        (**self).value(a)
    }
    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        (**self).gradient(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    /// `Σᵢ cᵢ aᵢ^p`
    PowerSum { coefficients: Vec<f64>, exponent: f64 },
    /// `s · ‖a‖₂^p`
    NormPower { scale: f64, exponent: f64 },
    /// `s · Πᵢ aᵢ^{θᵢ}`
    CobbDouglas { scale: f64, exponents: Vec<f64> },
    /// `⟨c, a⟩`
    Linear { coefficients: Vec<f64> },
    /// `aᵀ Q a`
    Quadratic { matrix: Vec<Vec<f64>> },
    /// Pointwise sum.
    SumOfSpecs { specs: Vec<FunctionSpec> },
}

/// A closed-family function with exact gradients and an optional declared degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub degree: Option<f64>,
}

impl FunctionSpec {
    pub fn new(family: Family) -> Self {
        FunctionSpec { family, degree: None }
    }

    pub fn power_sum(coefficients: Vec<f64>, exponent: f64) -> Self {
        FunctionSpec::new(Family::PowerSum { coefficients, exponent })
    }

    pub fn norm_power(scale: f64, exponent: f64) -> Self {
        FunctionSpec::new(Family::NormPower { scale, exponent })
    }

    pub fn cobb_douglas(scale: f64, exponents: Vec<f64>) -> Self {
        FunctionSpec::new(Family::CobbDouglas { scale, exponents })
    }

    pub fn linear(coefficients: Vec<f64>) -> Self {
        FunctionSpec::new(Family::Linear { coefficients })
    }

    pub fn quadratic(matrix: Vec<Vec<f64>>) -> Self {
        FunctionSpec::new(Family::Quadratic { matrix })
    }

    pub fn sum(specs: Vec<FunctionSpec>) -> Self {
        FunctionSpec::new(Family::SumOfSpecs { specs })
    }

    pub fn with_degree(mut self, degree: f64) -> Self {
        self.degree = Some(degree);
        self
    }

    /// Declares the family's own homogeneity degree, when it has one.
    pub fn with_natural_degree(mut self) -> Self {
        self.degree = self.natural_degree();
        self
    }

    /// Exact homogeneity degree implied by the family parameters.
    pub fn natural_degree(&self) -> Option<f64> {
        match &self.family {
            Family::PowerSum { exponent, .. } | Family::NormPower { exponent, .. } => Some(*exponent),
            Family::CobbDouglas { exponents, .. } => Some(exponents.iter().sum()),
            Family::Linear { .. } => Some(1.0),
            Family::Quadratic { .. } => Some(2.0),
            Family::SumOfSpecs { specs } => {
                let degrees: Option<Vec<f64>> = specs.iter().map(|s| s.natural_degree()).collect();
                let degrees = degrees?;
                let first = *degrees.first()?;
                degrees.iter().all(|d| (d - first).abs() < 1e-12).then_some(first)
            }
        }
    }

    /// Number of arguments, when fixed by the parameters.
    pub fn dimension(&self) -> Option<usize> {
        match &self.family {
            Family::PowerSum { coefficients, .. } | Family::Linear { coefficients } => Some(coefficients.len()),
            Family::CobbDouglas { exponents, .. } => Some(exponents.len()),
            Family::Quadratic { matrix } => Some(matrix.len()),
            Family::NormPower { .. } => None,
            Family::SumOfSpecs { specs } => specs.iter().find_map(|s| s.dimension()),
        }
    }

    /// Structural validation of the parameters against an argument dimension.
    pub fn check_dimension(&self, dim: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Input(format!("{what} has wrong length for dimension {dim}")));
        match &self.family {
            Family::PowerSum { coefficients, exponent } => {
                if coefficients.len() != dim {
                    return bad("power_sum coefficients");
                }
                if *exponent <= 0.0 || !exponent.is_finite() {
                    return Err(Error::Input("power_sum exponent must be positive".into()));
                }
            }
            Family::NormPower { exponent, scale } => {
                if *exponent <= 0.0 || !exponent.is_finite() || !scale.is_finite() {
                    return Err(Error::Input("norm_power exponent must be positive".into()));
                }
            }
            Family::CobbDouglas { exponents, scale } => {
                if exponents.len() != dim {
                    return bad("cobb_douglas exponents");
                }
                if exponents.iter().any(|t| *t < 0.0 || !t.is_finite()) || !scale.is_finite() {
                    return Err(Error::Input("cobb_douglas exponents must be nonnegative".into()));
                }
            }
            Family::Linear { coefficients } => {
                if coefficients.len() != dim {
                    return bad("linear coefficients");
                }
            }
            Family::Quadratic { matrix } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return bad("quadratic matrix");
                }
            }
            Family::SumOfSpecs { specs } => {
                if specs.is_empty() {
                    return Err(Error::Input("sum_of_specs needs at least one term".into()));
                }
                for s in specs {
                    s.check_dimension(dim)?;
                }
            }
        }
        Ok(())
    }

    /// Gradient with boundary checking: exponents below one at a zero coordinate are rejected.
    pub fn grad_fn(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.check_boundary(a)?;
        Ok(self.raw_gradient(a))
    }

    fn check_boundary(&self, a: &[f64]) -> Result<()> {
        match &self.family {
            Family::PowerSum { coefficients, exponent } if *exponent < 1.0 => {
                if let Some(i) = (0..a.len()).find(|&i| a[i] <= 0.0 && coefficients[i] != 0.0) {
                    return Err(Error::BoundaryGradient { coordinate: i });
                }
            }
            Family::NormPower { exponent, scale } if *exponent <= 1.0 && *scale != 0.0 => {
                if a.iter().all(|x| *x == 0.0) {
                    return Err(Error::BoundaryGradient { coordinate: 0 });
                }
            }
            Family::CobbDouglas { exponents, scale } if *scale != 0.0 => {
                if let Some(i) = (0..a.len()).find(|&i| a[i] <= 0.0 && exponents[i] > 0.0 && exponents[i] < 1.0) {
                    return Err(Error::BoundaryGradient { coordinate: i });
                }
            }
            Family::SumOfSpecs { specs } => {
                for s in specs {
                    s.check_boundary(a)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn raw_value(&self, a: &[f64]) -> f64 {
        match &self.family {
            Family::PowerSum { coefficients, exponent } => {
                coefficients.iter().zip(a).map(|(c, x)| if *c == 0.0 { 0.0 } else { c * x.max(0.0).powf(*exponent) }).sum()
            }
            Family::NormPower { scale, exponent } => {
                let sq: f64 = a.iter().map(|x| x * x).sum();
                scale * sq.powf(exponent / 2.0)
            }
            Family::CobbDouglas { scale, exponents } => {
                scale
                    * exponents
                        .iter()
                        .zip(a)
                        .map(|(t, x)| if *t == 0.0 { 1.0 } else { x.max(0.0).powf(*t) })
                        .product::<f64>()
            }
            Family::Linear { coefficients } => coefficients.iter().zip(a).map(|(c, x)| c * x).sum(),
            Family::Quadratic { matrix } => {
                matrix.iter().zip(a).map(|(row, xi)| xi * row.iter().zip(a).map(|(q, xj)| q * xj).sum::<f64>()).sum()
            }
            Family::SumOfSpecs { specs } => specs.iter().map(|s| s.raw_value(a)).sum(),
        }
    }

    fn raw_gradient(&self, a: &[f64]) -> Vec<f64> {
        let d = a.len();
        match &self.family {
            Family::PowerSum { coefficients, exponent } => coefficients
                .iter()
                .zip(a)
                .map(|(c, x)| if *c == 0.0 { 0.0 } else { c * exponent * x.max(0.0).powf(exponent - 1.0) })
                .collect(),
            Family::NormPower { scale, exponent } => {
                let sq: f64 = a.iter().map(|x| x * x).sum();
                if sq == 0.0 {
                    return vec![0.0; d];
                }
                let f = scale * exponent * sq.powf(exponent / 2.0 - 1.0);
                a.iter().map(|x| f * x).collect()
            }
            Family::CobbDouglas { scale, exponents } => (0..d)
                .map(|i| {
                    let ti = exponents[i];
                    if ti == 0.0 {
                        return 0.0;
                    }
                    let mut g = scale * ti * a[i].max(0.0).powf(ti - 1.0);
                    for j in (0..d).filter(|&j| j != i) {
                        if exponents[j] != 0.0 {
                            g *= a[j].max(0.0).powf(exponents[j]);
                        }
                    }
                    g
                })
                .collect(),
            Family::Linear { coefficients } => coefficients.clone(),
            Family::Quadratic { matrix } => (0..d)
                .map(|i| (0..d).map(|j| (matrix[i][j] + matrix[j][i]) * a[j]).sum())
                .collect(),
            Family::SumOfSpecs { specs } => {
                let mut g = vec![0.0; d];
                for s in specs {
                    for (gi, si) in g.iter_mut().zip(s.raw_gradient(a)) {
                        *gi += si;
                    }
                }
                g
            }
        }
    }

    /// Cost-function requirements: zero at the origin and numerically convex.
    pub fn validate_as_cost(&self, dim: usize) -> Result<()> {
        self.check_dimension(dim)?;
        let at_origin = self.value(&vec![0.0; dim]);
        if at_origin.abs() > 1e-12 {
            return Err(Error::Model(format!("cost must vanish at the origin, c(0) = {at_origin}")));
        }
        let curvature = oracles::sampled_curvature(&|a: &[f64]| self.value(a), dim, 24, 0xc057);
        if curvature.min_eigenvalue < -1e-6 * (1.0 + curvature.spectral_scale) {
            return Err(Error::Model(format!(
                "cost is not convex: sampled Hessian eigenvalue {:.3e}",
                curvature.min_eigenvalue
            )));
        }
        Ok(())
    }

    /// Utility-function requirement: numerically concave.
    pub fn validate_as_utility(&self, dim: usize) -> Result<()> {
        self.check_dimension(dim)?;
        let curvature = oracles::sampled_curvature(&|a: &[f64]| self.value(a), dim, 24, 0x0711);
        if curvature.max_eigenvalue > 1e-6 * (1.0 + curvature.spectral_scale) {
            return Err(Error::Model(format!(
                "utility is not concave: sampled Hessian eigenvalue {:.3e}",
                curvature.max_eigenvalue
            )));
        }
        Ok(())
    }

    /// Dimension used for sampling when the family leaves it open.
    pub fn sampling_dimension(&self) -> usize {
        self.dimension().unwrap_or(2)
    }
}

impl Objective for FunctionSpec {
    fn value(&self, a: &[f64]) -> f64 {
        self.raw_value(a)
    }

    /// Gradient at the point clamped to `aᵢ ≥ GRADIENT_FLOOR`.
    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        let clamped: Vec<f64> = a.iter().map(|x| x.max(GRADIENT_FLOOR)).collect();
        self.raw_gradient(&clamped)
    }
}

/// Largest sampled `|f(λa) − λᵏ f(a)| / (1 + |f(a)|)` over `a ∈ [0.1, 2]^d`, `λ ∈ [0.5, 2]`.
pub fn homogeneity_check(spec: &FunctionSpec, k: f64, sample_count: usize) -> f64 {
    let d = spec.sampling_dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(HOMOGENEITY_SEED);
    let mut worst = 0.0_f64;
    for _ in 0..sample_count.max(1) {
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..2.0)).collect();
        let lambda = rng.gen_range(0.5..2.0);
        let scaled: Vec<f64> = a.iter().map(|x| lambda * x).collect();
        let fa = spec.value(&a);
        let r = (spec.value(&scaled) - lambda.powf(k) * fa).abs() / (1.0 + fa.abs());
        worst = worst.max(r);
    }
    worst
}

/// `|⟨∇f(a), a⟩ − k f(a)|`.
pub fn euler_residual(spec: &FunctionSpec, k: f64, a: &[f64]) -> f64 {
    let g = spec.gradient(a);
    (super::dot(&g, a) - k * spec.value(a)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_values_and_gradients() {
        let q = FunctionSpec::norm_power(1.0, 2.0).with_degree(2.0);
        assert!((q.value(&[0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert_eq!(q.grad_fn(&[0.5, 0.5]).unwrap(), vec![1.0, 1.0]);

        let p = FunctionSpec::power_sum(vec![1.0], 2.0);
        assert!((p.value(&[0.4]) - 0.16).abs() < 1e-15);
        assert!((p.grad_fn(&[0.4]).unwrap()[0] - 0.8).abs() < 1e-15);

        let cd = FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]);
        assert!((cd.value(&[1.0, 1.0]) - 1.0).abs() < 1e-15);
        let g = cd.grad_fn(&[1.0, 1.0]).unwrap();
        assert!((g[0] - 0.2).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn boundary_gradient_reported() {
        let cd = FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]);
        assert_eq!(cd.grad_fn(&[0.0, 1.0]), Err(Error::BoundaryGradient { coordinate: 0 }));
        let sqrt = FunctionSpec::power_sum(vec![1.0], 0.5);
        assert!(sqrt.grad_fn(&[0.0]).is_err());
        // Clamped evaluation stays finite.
        assert!(sqrt.gradient(&[0.0])[0].is_finite());
        let sq = FunctionSpec::power_sum(vec![1.0], 2.0);
        assert_eq!(sq.grad_fn(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn homogeneity_examples() {
        let q = FunctionSpec::norm_power(1.0, 2.0);
        assert!(homogeneity_check(&q, 2.0, 50) <= 1e-10);
        let cd = FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]);
        assert!(homogeneity_check(&cd, 0.4, 50) <= 1e-10);
        assert!(homogeneity_check(&q, 1.0, 50) > 0.1);
        // The derived point: a = (1,1), λ = 2 gives |8 − 4| / 3.
        let r = (q.value(&[2.0, 2.0]) - 2.0 * q.value(&[1.0, 1.0])).abs() / (1.0 + q.value(&[1.0, 1.0]));
        assert!(r > 0.1);
    }

    #[test]
    fn euler_examples() {
        let sq = FunctionSpec::power_sum(vec![1.0], 2.0);
        assert!(euler_residual(&sq, 2.0, &[0.25]) < 1e-15);
        let sq2 = FunctionSpec::power_sum(vec![1.0, 1.0], 2.0);
        assert!(euler_residual(&sq2, 2.0, &[0.5, 0.5]) < 1e-15);
        let sqrt = FunctionSpec::power_sum(vec![1.0], 0.5);
        assert!(euler_residual(&sqrt, 0.5, &[0.25]) < 1e-15);
    }

    #[test]
    fn natural_degrees() {
        assert_eq!(FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.3]).natural_degree(), Some(0.5));
        let mixed = FunctionSpec::sum(vec![FunctionSpec::linear(vec![1.0]), FunctionSpec::power_sum(vec![1.0], 2.0)]);
        assert_eq!(mixed.natural_degree(), None);
    }

    #[test]
    fn json_shape() {
        let spec = FunctionSpec::power_sum(vec![1.0, 2.0], 2.0).with_degree(2.0);
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["family"], "power_sum");
        assert_eq!(v["params"]["exponent"], 2.0);
        assert_eq!(v["degree"], 2.0);
        let back: FunctionSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
        let null_degree: FunctionSpec =
            serde_json::from_str(r#"{"family":"linear","params":{"coefficients":[1.0]},"degree":null}"#).unwrap();
        assert_eq!(null_degree.degree, None);
    }

    #[test]
    fn validation_hooks() {
        assert!(FunctionSpec::norm_power(1.0, 2.0).validate_as_cost(2).is_ok());
        assert!(FunctionSpec::power_sum(vec![1.0], 0.5).validate_as_cost(1).is_err());
        assert!(FunctionSpec::power_sum(vec![1.0], 0.5).validate_as_utility(1).is_ok());
        assert!(FunctionSpec::norm_power(1.0, 2.0).validate_as_utility(2).is_err());
        let shifted = FunctionSpec::sum(vec![FunctionSpec::linear(vec![1.0]), FunctionSpec::power_sum(vec![1.0], 2.0)]);
        assert!(shifted.validate_as_cost(1).is_ok());
    }
}
