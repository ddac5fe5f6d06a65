//! CIR parameterization, the Lamperti-transformed coefficients, regime
//! classification and closed-form oracles.
//!
//! The process is
//!
//! ```text
//! dX = κ(θ − X) dt + σ √X dW,   X(0) = X₀ ≥ 0
//! ```
//!
//! and with `Y = √X` it becomes the additive-noise equation
//!
//! ```text
//! dY = (α / Y − β Y) dt + γ dW,   α = (4κθ − σ²)/8,  β = κ/2,  γ = σ/2
//! ```

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{CirError, Result};

/// Relative tolerance under which two sides of a regime boundary are
/// treated as equal. Landmark values such as σ = 0.4 at κθ = 0.04 are
/// not exactly representable, so exact float comparison would put them
/// on the wrong side.
pub const BOUNDARY_RTOL: f64 = 1e-12;

/// Coefficients of the CIR equation together with the simulation horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub x0: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    1.0
}

impl CirParams {
    pub fn new(kappa: f64, theta: f64, sigma: f64, x0: f64, horizon: f64) -> Result<Self> {
        let p = CirParams {
            kappa,
            theta,
            sigma,
            x0,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma", self.sigma),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CirError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if !(self.x0.is_finite() && self.x0 >= 0.0) {
            return Err(CirError::InvalidParameter(format!(
                "x0 must be finite and >= 0, got {}",
                self.x0
            )));
        }
        Ok(())
    }

    /// Same parameters with a different volatility.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        CirParams { sigma, ..*self }
    }

    /// Degrees of freedom `4κθ/σ²` of the transition law.
    pub fn degrees_of_freedom(&self) -> f64 {
        4.0 * self.kappa * self.theta / (self.sigma * self.sigma)
    }
}

/// Coefficients of the Lamperti-transformed equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformedParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TransformedParams {
    /// Recovers `(κ, θ, σ)`.
    pub fn reconstruct(&self) -> (f64, f64, f64) {
        let kappa = 2.0 * self.beta;
        let sigma = 2.0 * self.gamma;
        let theta = (8.0 * self.alpha + sigma * sigma) / (4.0 * kappa);
        (kappa, theta, sigma)
    }
}

pub fn transform(p: &CirParams) -> TransformedParams {
    let four_kt = 4.0 * p.kappa * p.theta;
    let s2 = p.sigma * p.sigma;
    let alpha = if near(four_kt, s2) {
        0.0
    } else {
        (four_kt - s2) / 8.0
    };
    TransformedParams {
        alpha,
        beta: p.kappa / 2.0,
        gamma: p.sigma / 2.0,
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= BOUNDARY_RTOL * a.abs().max(b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegimeKind {
    /// κθ > σ²: the regime covered by the convergence theorems.
    StrongInverse,
    /// α ≥ 0: the scheme is well defined on any mesh.
    NonnegAlpha,
    /// α < 0: adaptivity and the soft zero are required.
    NegAlpha,
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegimeKind::StrongInverse => "StrongInverse",
            RegimeKind::NonnegAlpha => "NonnegAlpha",
            RegimeKind::NegAlpha => "NegAlpha",
        };
        f.write_str(s)
    }
}

/// Which equality boundary, if any, the parameters sit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// κθ = σ²
    StrongInverse,
    /// 2κθ = σ²
    Feller,
    /// 4κθ = σ² (α = 0)
    AlphaZero,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Boundary::StrongInverse => "kappa*theta == sigma^2",
            Boundary::Feller => "2*kappa*theta == sigma^2",
            Boundary::AlphaZero => "4*kappa*theta == sigma^2 (alpha == 0)",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub feller: bool,
    pub alpha: f64,
    pub boundary: Option<Boundary>,
}

pub fn classify_regime(p: &CirParams) -> Regime {
    let kt = p.kappa * p.theta;
    let s2 = p.sigma * p.sigma;
    let alpha = transform(p).alpha;

    let boundary = if near(kt, s2) {
        Some(Boundary::StrongInverse)
    } else if near(2.0 * kt, s2) {
        Some(Boundary::Feller)
    } else if near(4.0 * kt, s2) {
        Some(Boundary::AlphaZero)
    } else {
        None
    };

    // Strict inequalities exclude the boundary itself.
    let strong = kt > s2 && boundary != Some(Boundary::StrongInverse);
    let feller = 2.0 * kt > s2 && boundary != Some(Boundary::Feller);
    let kind = if strong {
        RegimeKind::StrongInverse
    } else if alpha >= 0.0 {
        RegimeKind::NonnegAlpha
    } else {
        RegimeKind::NegAlpha
    };
    Regime {
        kind,
        feller,
        alpha,
        boundary,
    }
}

/// `E[X(t_n + dt) | X(t_n) = x]`, which is also the exact flow of the
/// mean-reversion ODE `u' = κ(θ − u)`.
pub fn conditional_mean(p: &CirParams, x: f64, dt: f64) -> f64 {
    let decay = (-p.kappa * dt).exp();
    decay * x + p.theta * (-(-p.kappa * dt).exp_m1())
}

/// Parameters of the scaled noncentral chi-square transition law:
/// `X(t+dt) = c · χ'²(d, λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionLaw {
    pub scale: f64,
    pub degrees: f64,
    pub noncentrality: f64,
}

pub fn transition_law(p: &CirParams, x: f64, dt: f64) -> Result<TransitionLaw> {
    if !(dt > 0.0) {
        return Err(CirError::InvalidParameter(format!(
            "transition step must be > 0, got {dt}"
        )));
    }
    if !(x >= 0.0) {
        return Err(CirError::InvalidParameter(format!(
            "state must be >= 0, got {x}"
        )));
    }
    let scale = p.sigma * p.sigma * (-(-p.kappa * dt).exp_m1()) / (4.0 * p.kappa);
    Ok(TransitionLaw {
        scale,
        degrees: p.degrees_of_freedom(),
        noncentrality: x * (-p.kappa * dt).exp() / scale,
    })
}

/// Variance of the transition law, `c²·2(d + 2λ)`.
pub fn conditional_variance(p: &CirParams, x: f64, dt: f64) -> Result<f64> {
    let law = transition_law(p, x, dt)?;
    Ok(law.scale * law.scale * 2.0 * (law.degrees + 2.0 * law.noncentrality))
}

/// Draws `X(t_n + dt)` from the exact transition law as a Poisson mixture
/// of gammas: `K ~ Poisson(λ/2)`, `X = c · Gamma(d/2 + K, 2)`.
pub fn exact_conditional_sample<R: Rng + ?Sized>(
    p: &CirParams,
    x: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    let law = transition_law(p, x, dt)?;
    let half_lambda = 0.5 * law.noncentrality;
    let k = if half_lambda > 0.0 {
        let pois = Poisson::new(half_lambda)
            .map_err(|e| CirError::Domain(format!("poisson({half_lambda}): {e}")))?;
        pois.sample(rng)
    } else {
        0.0
    };
    let shape = 0.5 * law.degrees + k;
    let gamma =
        Gamma::new(shape, 2.0).map_err(|e| CirError::Domain(format!("gamma({shape}): {e}")))?;
    Ok(law.scale * gamma.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(sigma: f64) -> CirParams {
        CirParams::new(2.0, 0.02, sigma, 0.0, 1.0).unwrap()
    }

    #[test]
    fn transform_examples() {
        let t = transform(&p(0.2));
        assert!((t.alpha - 0.015).abs() < 1e-15);
        assert_eq!(t.beta, 1.0);
        assert!((t.gamma - 0.1).abs() < 1e-15);

        assert_eq!(transform(&p(0.4)).alpha, 0.0);
        assert!((transform(&p(0.8)).alpha + 0.06).abs() < 1e-15);
    }

    #[test]
    fn regime_examples() {
        let r = classify_regime(&p(0.1));
        assert_eq!(r.kind, RegimeKind::StrongInverse);
        assert!(r.feller);

        let r = classify_regime(&p(0.2));
        assert_eq!(r.kind, RegimeKind::NonnegAlpha);
        assert!(r.feller);
        assert_eq!(r.boundary, Some(Boundary::StrongInverse));

        let r = classify_regime(&p(0.4));
        assert_eq!(r.kind, RegimeKind::NonnegAlpha);
        assert_eq!(r.alpha, 0.0);
        assert!(!r.feller);

        let r = classify_regime(&p(0.8));
        assert_eq!(r.kind, RegimeKind::NegAlpha);
        assert!(!r.feller);

        // Feller boundary itself is not Feller.
        let r = classify_regime(&p((2.0f64 * 0.04).sqrt()));
        assert_eq!(r.boundary, Some(Boundary::Feller));
        assert!(!r.feller);
        assert_eq!(r.kind, RegimeKind::NonnegAlpha);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(CirParams::new(0.0, 0.02, 0.1, 0.0, 1.0).is_err());
        assert!(CirParams::new(2.0, -0.02, 0.1, 0.0, 1.0).is_err());
        assert!(CirParams::new(2.0, 0.02, 0.1, -1e-3, 1.0).is_err());
        assert!(CirParams::new(2.0, 0.02, 0.1, 0.0, 0.0).is_err());
        assert!(CirParams::new(2.0, 0.02, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn conditional_mean_examples() {
        let q = p(0.2);
        let m = conditional_mean(&q, 0.01, 0.5);
        let expected = (-1.0f64).exp() * 0.01 + 0.02 * (1.0 - (-1.0f64).exp());
        assert!((m - expected).abs() < 1e-16);
        assert!((m - 0.0163212).abs() < 1e-7);
        assert!((conditional_mean(&q, 0.02, 3.7) - 0.02).abs() < 1e-17);
        assert_eq!(conditional_mean(&q, 0.013, 0.0), 0.013);
    }

    #[test]
    fn transition_law_at_alpha_zero() {
        let law = transition_law(&p(0.4), 0.0, 1.0).unwrap();
        assert!((law.degrees - 1.0).abs() < 1e-12);
        assert_eq!(law.noncentrality, 0.0);
        assert!(transition_law(&p(0.4), 0.0, 0.0).is_err());
        assert!(transition_law(&p(0.4), 0.0, -1.0).is_err());
    }

    #[test]
    fn exact_sampler_matches_conditional_mean() {
        let q = CirParams::new(2.0, 0.02, 0.3, 0.01, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let dt = 0.25;
        let draws: Vec<f64> = (0..n)
            .map(|_| exact_conditional_sample(&q, 0.01, dt, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let target = conditional_mean(&q, 0.01, dt);
        assert!(
            (mean - target).abs() < 4.0 * se,
            "{mean} vs {target} (se {se})"
        );
        // Variance agrees with the closed form to a few percent.
        let v = conditional_variance(&q, 0.01, dt).unwrap();
        assert!((var / v - 1.0).abs() < 0.05, "{var} vs {v}");
    }

    #[test]
    fn exact_sampler_small_step_concentrates() {
        let q = p(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mean = (0..n)
            .map(|_| exact_conditional_sample(&q, 0.01, 1e-7, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.01).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn reconstruction_is_exact(kappa in 0.1f64..10.0, theta in 1e-3f64..1.0, sigma in 1e-2f64..2.0) {
            let q = CirParams::new(kappa, theta, sigma, 0.0, 1.0).unwrap();
            let (k, t, s) = transform(&q).reconstruct();
            prop_assert!((k - kappa).abs() <= 1e-15 * kappa);
            prop_assert!((s - sigma).abs() <= 1e-15 * sigma);
            prop_assert!((t - theta).abs() <= 1e-12 * theta);
        }

        #[test]
        fn alpha_identity(kappa in 0.1f64..10.0, theta in 1e-3f64..1.0, sigma in 1e-2f64..2.0) {
            let q = CirParams::new(kappa, theta, sigma, 0.0, 1.0).unwrap();
            let a = transform(&q).alpha;
            let lhs = 2.0 * a + sigma * sigma / 4.0;
            prop_assert!((lhs - kappa * theta).abs() <= 1e-14 * (kappa * theta).max(sigma * sigma));
        }

        #[test]
        fn regime_implications(kappa in 0.1f64..10.0, theta in 1e-3f64..1.0, sigma in 1e-2f64..2.0) {
            let r = classify_regime(&CirParams::new(kappa, theta, sigma, 0.0, 1.0).unwrap());
            if r.kind == RegimeKind::StrongInverse {
                prop_assert!(r.feller && r.alpha > 0.0);
            }
            if r.kind == RegimeKind::NegAlpha {
                prop_assert!(!r.feller);
            }
        }

        #[test]
        fn mean_semigroup(x in 0.0f64..1.0, s in 0.0f64..2.0, t in 0.0f64..2.0, kappa in 0.1f64..5.0) {
            let q = CirParams::new(kappa, 0.05, 0.2, 0.0, 1.0).unwrap();
            let direct = conditional_mean(&q, x, s + t);
            let composed = conditional_mean(&q, conditional_mean(&q, x, s), t);
            prop_assert!((direct - composed).abs() <= 1e-12 * direct.abs().max(1e-300));
        }

        #[test]
        fn mean_bounded_and_monotone(x in 0.0f64..1.0, dx in 0.0f64..1.0, dt in 0.0f64..3.0) {
            let q = p(0.3);
            let m = conditional_mean(&q, x, dt);
            prop_assert!(m <= x + q.theta);
            prop_assert!(conditional_mean(&q, x + dx, dt) >= m);
        }

        #[test]
        fn exact_samples_non_negative(seed in any::<u64>(), x in 0.0f64..0.1, sigma in 0.05f64..1.5) {
            let q = p(sigma);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                prop_assert!(exact_conditional_sample(&q, x, 0.01, &mut rng).unwrap() >= 0.0);
            }
        }
    }
}
