//! Isentropic constitutive law and the energy functionals of the scaled and
//! limit systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{self, grad_tensor, integrate, ScalarField, VectorField};

/// Density values in `[-DENSITY_CLAMP, 0)` are treated as round-off and clamped.
pub const DENSITY_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("negative density {value:e} at lattice point {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("viscosity invariant violated: need nu > 0 and nu + lambda >= 0 (nu = {nu}, lambda = {lambda})")]
    Viscosity { nu: f64, lambda: f64 },
    #[error("adiabatic exponent gamma = {gamma} not admissible in {dim}D (need gamma > {bound})")]
    Gamma { gamma: f64, dim: usize, bound: f64 },
    #[error("epsilon must be non-negative and finite, got {0}")]
    Epsilon(f64),
}

/// Coefficients of the scaled system. `epsilon = 0` denotes the limit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidParams {
    pub epsilon: f64,
    pub nu: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl FluidParams {
    pub fn new(epsilon: f64, nu: f64, lambda: f64, gamma: f64) -> Self {
        Self {
            epsilon,
            nu,
            lambda,
            gamma,
        }
    }

    /// Lower bound on γ for which weak solutions are available in `dim` dimensions.
    pub fn gamma_bound(dim: usize) -> f64 {
        if dim >= 3 {
            1.5
        } else {
            1.0
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), ModelError> {
        if !(self.nu > 0.0 && self.nu + self.lambda >= 0.0)
            || !self.nu.is_finite()
            || !self.lambda.is_finite()
        {
            return Err(ModelError::Viscosity {
                nu: self.nu,
                lambda: self.lambda,
            });
        }
        let bound = Self::gamma_bound(dim);
        if !(self.gamma > bound) || !self.gamma.is_finite() {
            return Err(ModelError::Gamma {
                gamma: self.gamma,
                dim,
                bound,
            });
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(ModelError::Epsilon(self.epsilon));
        }
        Ok(())
    }

    /// Longitudinal Lamé coefficient `2ν + λ`.
    pub fn longitudinal(&self) -> f64 {
        2.0 * self.nu + self.lambda
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }
}

/// Energy bookkeeping at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub time: f64,
    pub kinetic_scaled: f64,
    pub internal: f64,
    pub dissipation_cum: f64,
}

impl EnergyBudget {
    /// Kinetic plus internal energy.
    pub fn energy(&self) -> f64 {
        self.kinetic_scaled + self.internal
    }

    /// Energy plus cumulative dissipation; constant for exact solutions.
    pub fn total(&self) -> f64 {
        self.energy() + self.dissipation_cum
    }

    pub const CSV_HEADER: &'static str = "time,kinetic_scaled,internal,dissipation_cum,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.time,
            self.kinetic_scaled,
            self.internal,
            self.dissipation_cum,
            self.total()
        )
    }
}

/// Clamp round-off negatives; reject anything below `-DENSITY_CLAMP`.
pub fn clamp_density(rho: &ScalarField) -> Result<ScalarField, ModelError> {
    if let Some((index, &value)) = rho
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| v < -DENSITY_CLAMP || v.is_nan())
    {
        return Err(ModelError::NegativeDensity { index, value });
    }
    Ok(rho.map(|v| v.max(0.0)))
}

/// Pointwise `ρ^γ`.
pub fn pressure(rho: &ScalarField, gamma: f64) -> Result<ScalarField, ModelError> {
    Ok(clamp_density(rho)?.map(|v| pow_gamma(v, gamma)))
}

#[inline]
pub(crate) fn pow_gamma(v: f64, gamma: f64) -> f64 {
    if gamma == 2.0 {
        v * v
    } else {
        v.powf(gamma)
    }
}

/// `∫ ρ^γ/(γ-1) dx`.
pub fn internal_energy(rho: &ScalarField, gamma: f64) -> Result<f64, ModelError> {
    Ok(integrate(&pressure(rho, gamma)?) / (gamma - 1.0))
}

/// `(ε/2) ∫ ρ|u|² dx`.
pub fn kinetic_energy_scaled(rho: &ScalarField, u: &VectorField, epsilon: f64) -> f64 {
    let w = u.norm_squared().zip_map(rho, |a, b| a * b);
    0.5 * epsilon * integrate(&w)
}

/// `ν∫|∇u|² + (ν+λ)∫|div u|²`.
pub fn dissipation_rate(u: &VectorField, nu: f64, lambda: f64) -> f64 {
    let grad = grad_tensor(u);
    let frob = integrate(&grad.frobenius_squared());
    let div = grad
        .entries
        .iter()
        .enumerate()
        .fold(ScalarField::zeros(u.grid()), |acc, (i, row)| {
            acc.zip_map(&row[i], |a, b| a + b)
        });
    nu * frob + (nu + lambda) * field::inner(&div, &div)
}

/// `ε ∫ ρ₀|u₀|² dx`; must vanish along a well-prepared ε-sequence.
pub fn well_preparedness(rho0: &ScalarField, u0: &VectorField, epsilon: f64) -> f64 {
    2.0 * kinetic_energy_scaled(rho0, u0, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gradient, random_smooth, random_smooth_vector, TorusGrid};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn g2() -> TorusGrid {
        TorusGrid::new(2, 32).unwrap()
    }

    #[test]
    fn pressure_examples() {
        let g = g2();
        let p = pressure(&ScalarField::constant(&g, 1.0), 2.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));
        let p = pressure(&ScalarField::zeros(&g), 2.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        let rho = g.sample(|x| 1.0 + 0.3 * x[0].cos());
        let p = pressure(&rho, 2.0).unwrap();
        let expect = g.sample(|x| 1.0 + 0.6 * x[0].cos() + 0.09 * x[0].cos().powi(2));
        for (a, b) in p.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pressure_clamps_roundoff_and_rejects_negative() {
        let g = g2();
        let mut rho = ScalarField::constant(&g, 1.0);
        rho.values_mut()[3] = -1e-13;
        let p = pressure(&rho, 2.0).unwrap();
        assert_eq!(p.values()[3], 0.0);
        rho.values_mut()[5] = -1e-6;
        assert!(matches!(
            pressure(&rho, 2.0),
            Err(ModelError::NegativeDensity { index: 5, .. })
        ));
    }

    #[test]
    fn internal_energy_examples() {
        let g = g2();
        assert_abs_diff_eq!(
            internal_energy(&ScalarField::constant(&g, 1.0), 2.0).unwrap(),
            39.478418,
            epsilon = 1e-6
        );
        assert_eq!(internal_energy(&ScalarField::zeros(&g), 2.0).unwrap(), 0.0);
        let rho = g.sample(|x| 1.0 + 0.5 * x[0].cos());
        assert_abs_diff_eq!(internal_energy(&rho, 2.0).unwrap(), 44.413220, epsilon = 1e-6);
    }

    #[test]
    fn kinetic_examples() {
        let g = g2();
        let one = ScalarField::constant(&g, 1.0);
        let u = VectorField::constant(&g, &[1.0, 0.0]);
        assert_abs_diff_eq!(kinetic_energy_scaled(&one, &u, 0.01), 0.197392, epsilon = 1e-6);
        assert_eq!(kinetic_energy_scaled(&one, &VectorField::zeros(&g), 0.3), 0.0);
        let rho = g.sample(|x| 1.0 + 0.3 * x[0].cos());
        let u = VectorField::new(vec![g.sample(|x| x[0].sin()), ScalarField::zeros(&g)]).unwrap();
        assert_abs_diff_eq!(kinetic_energy_scaled(&rho, &u, 1.0), 9.869604, epsilon = 1e-6);
    }

    #[test]
    fn dissipation_examples() {
        let g = g2();
        let u = VectorField::new(vec![g.sample(|x| x[1].sin()), ScalarField::zeros(&g)]).unwrap();
        assert_abs_diff_eq!(dissipation_rate(&u, 1.0, 0.0), 19.739209, epsilon = 1e-6);
        assert!(dissipation_rate(&VectorField::constant(&g, &[3.0, 1.0]), 1.0, 0.0) < 1e-25);
        let u = gradient(&g.sample(|x| x[0].cos()));
        assert_abs_diff_eq!(dissipation_rate(&u, 1.0, 1.0), 59.217626, epsilon = 1e-6);
    }

    #[test]
    fn well_preparedness_examples() {
        let g = g2();
        let rho = random_smooth(&g, 3, 1).map(|v| 1.0 + 0.2 * v);
        assert_eq!(well_preparedness(&rho, &VectorField::zeros(&g), 0.1), 0.0);
        let u = random_smooth_vector(&g, 3, 2);
        let a = well_preparedness(&rho, &u, 0.2);
        let b = well_preparedness(&rho, &u, 0.1);
        assert_eq!(a, 2.0 * b);
        let one = ScalarField::constant(&g, 1.0);
        let u = VectorField::constant(&g, &[1.0, 0.0]);
        assert_abs_diff_eq!(well_preparedness(&one, &u, 0.1), 3.947842, epsilon = 1e-6);
    }

    #[test]
    fn params_validation() {
        assert!(FluidParams::new(0.1, 0.1, 0.0, 2.0).validate(2).is_ok());
        assert!(matches!(
            FluidParams::new(0.1, -1.0, 0.0, 2.0).validate(2),
            Err(ModelError::Viscosity { .. })
        ));
        assert!(matches!(
            FluidParams::new(0.1, 1.0, -1.5, 2.0).validate(2),
            Err(ModelError::Viscosity { .. })
        ));
        assert!(FluidParams::new(0.1, 1.0, 0.0, 1.2).validate(2).is_ok());
        assert!(matches!(
            FluidParams::new(0.1, 1.0, 0.0, 1.2).validate(3),
            Err(ModelError::Gamma { .. })
        ));
        assert!(FluidParams::new(0.1, 1.0, 0.0, 1.0).validate(2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn internal_energy_is_convex(s1 in 0u64..1000, s2 in 0u64..1000, theta in 0.0f64..1.0, gamma in 1.1f64..3.0) {
            let g = TorusGrid::new(2, 16).unwrap();
            let f = random_smooth(&g, 3, s1).map(|v| 1.0 + 0.4 * v);
            let h = random_smooth(&g, 3, s2).map(|v| 0.8 + 0.3 * v);
            let mix = f.zip_map(&h, |a, b| theta * a + (1.0 - theta) * b);
            let lhs = internal_energy(&mix, gamma).unwrap();
            let rhs = theta * internal_energy(&f, gamma).unwrap() + (1.0 - theta) * internal_energy(&h, gamma).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-14));
        }

        #[test]
        fn kinetic_is_linear_in_epsilon(seed in 0u64..1000, eps in 0.0f64..10.0) {
            let g = TorusGrid::new(2, 16).unwrap();
            let rho = random_smooth(&g, 3, seed).map(|v| 1.0 + 0.3 * v);
            let u = random_smooth_vector(&g, 3, seed + 1);
            let a = kinetic_energy_scaled(&rho, &u, eps);
            let b = eps * kinetic_energy_scaled(&rho, &u, 1.0);
            prop_assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
        }

        #[test]
        fn dissipation_dominates_shear_part(seed in 0u64..1000, nu in 0.01f64..2.0, extra in 0.0f64..3.0) {
            let g = TorusGrid::new(2, 16).unwrap();
            let u = random_smooth_vector(&g, 4, seed);
            let lambda = extra - nu;
            let shear = nu * integrate(&grad_tensor(&u).frobenius_squared());
            let d = dissipation_rate(&u, nu, lambda);
            prop_assert!(d >= shear * (1.0 - 1e-14));
            prop_assert!(shear >= 0.0);
        }

        #[test]
        fn functionals_translation_invariant(seed in 0u64..1000, sx in 0usize..16, sy in 0usize..16) {
            let g = TorusGrid::new(2, 16).unwrap();
            let rho = random_smooth(&g, 3, seed).map(|v| 1.0 + 0.3 * v);
            let u = random_smooth_vector(&g, 3, seed + 7);
            let s = [sx, sy, 0];
            let (rt, ut) = (rho.translated(s), u.translated(s));
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
            prop_assert!(close(internal_energy(&rho, 2.0).unwrap(), internal_energy(&rt, 2.0).unwrap()));
            prop_assert!(close(kinetic_energy_scaled(&rho, &u, 0.3), kinetic_energy_scaled(&rt, &ut, 0.3)));
            prop_assert!(close(dissipation_rate(&u, 0.4, 0.1), dissipation_rate(&ut, 0.4, 0.1)));
        }
    }
}
