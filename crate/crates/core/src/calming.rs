//! Calming functions: bounded, 1-Lipschitz truncations of the identity that
//! replace the advecting velocity inside the rotational nonlinearity.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalmingVariant {
    /// `x / (1 + ε|x|)`
    Z1,
    /// `x / (1 + ε²|x|²)`
    Z2,
    /// component-wise `arctan(ε x_i) / ε`
    Z3,
    /// `q^ε(|x|) x / |x|` with a C¹ quadratic bridge between `1/ε` and `2/ε`
    Z4,
    /// No calming; unbounded.
    Identity,
}

impl CalmingVariant {
    pub const ALL_CALMED: [CalmingVariant; 4] = [Self::Z1, Self::Z2, Self::Z3, Self::Z4];
    pub const NAMES: &'static str = "z1, z2, z3, z4, identity";

    /// Whether `ζ(x)` is always parallel to `x`.
    pub fn is_radial(self) -> bool {
        !matches!(self, Self::Z3)
    }
}

impl fmt::Display for CalmingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Z1 => "z1",
            Self::Z2 => "z2",
            Self::Z3 => "z3",
            Self::Z4 => "z4",
            Self::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for CalmingVariant {
    type Err = CalmingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "z1" => Ok(Self::Z1),
            "z2" => Ok(Self::Z2),
            "z3" => Ok(Self::Z3),
            "z4" => Ok(Self::Z4),
            "identity" => Ok(Self::Identity),
            other => Err(CalmingError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalmingError {
    #[error("unknown calming variant `{0}`, expected one of: {names}", names = CalmingVariant::NAMES)]
    UnknownVariant(String),
    #[error("calming parameter must be positive and finite, got {0}")]
    InvalidEps(f64),
    #[error("the identity variant is unbounded")]
    Unbounded,
}

/// Constants `(C, α, β)` in `|ζ(x) - x| ≤ C ε^α |x|^β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualConstants {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalmingSpec<T: Real> {
    variant: CalmingVariant,
    eps: T,
}

impl<T: Real> CalmingSpec<T> {
    pub fn new(variant: CalmingVariant, eps: T) -> Result<Self, CalmingError> {
        if !(eps > T::zero() && eps.is_finite()) {
            return Err(CalmingError::InvalidEps(eps.to_f64_lossy()));
        }
        Ok(Self { variant, eps })
    }

    pub fn identity() -> Self {
        Self {
            variant: CalmingVariant::Identity,
            eps: T::one(),
        }
    }

    pub fn variant(&self) -> CalmingVariant {
        self.variant
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    /// Radial profile of ζ₄:
    /// `r` below `1/ε`, `-(ε/2)(r - 2/ε)² + 3/(2ε)` up to `2/ε`, then `3/(2ε)`.
    pub fn q4(&self, r: T) -> T {
        let e = self.eps;
        let one = T::one() / e;
        let two = T::lit(2.0) / e;
        let cap = T::lit(1.5) / e;
        if r < one {
            r
        } else if r < two {
            let d = r - two;
            -(e / T::lit(2.0)) * d * d + cap
        } else {
            cap
        }
    }

    /// `ζ^ε(x)`.
    pub fn eval(&self, x: [T; 3]) -> [T; 3] {
        let e = self.eps;
        let norm = || (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        match self.variant {
            CalmingVariant::Identity => x,
            CalmingVariant::Z1 => {
                let s = T::one() / (T::one() + e * norm());
                x.map(|c| c * s)
            }
            CalmingVariant::Z2 => {
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                let s = T::one() / (T::one() + e * e * r2);
                x.map(|c| c * s)
            }
            CalmingVariant::Z3 => x.map(|c| (e * c).atan() / e),
            CalmingVariant::Z4 => {
                let r = norm();
                if r == T::zero() {
                    return [T::zero(); 3];
                }
                let s = self.q4(r) / r;
                x.map(|c| c * s)
            }
        }
    }

    /// `M_ε = sup |ζ^ε|`.
    pub fn sup_norm(&self) -> Result<T, CalmingError> {
        let e = self.eps;
        match self.variant {
            CalmingVariant::Identity => Err(CalmingError::Unbounded),
            CalmingVariant::Z1 => Ok(T::one() / e),
            CalmingVariant::Z2 => Ok(T::one() / (T::lit(2.0) * e)),
            CalmingVariant::Z3 => Ok(T::lit(3f64.sqrt()) * T::PI() / (T::lit(2.0) * e)),
            CalmingVariant::Z4 => Ok(T::lit(1.5) / e),
        }
    }

    pub fn residual_constants(&self) -> Option<ResidualConstants> {
        let (c, alpha, beta) = match self.variant {
            CalmingVariant::Z1 => (1.0, 1.0, 2.0),
            CalmingVariant::Z2 => (1.0, 2.0, 3.0),
            CalmingVariant::Z3 => (1.0 / 3.0, 2.0, 3.0),
            CalmingVariant::Z4 => (2.5, 1.0, 2.0),
            CalmingVariant::Identity => return None,
        };
        Some(ResidualConstants { c, alpha, beta })
    }

    /// Pointwise application to physical component arrays, in place.
    pub fn calm_field(&self, x: &mut [T], y: &mut [T], z: &mut [T]) {
        if self.variant == CalmingVariant::Identity {
            return;
        }
        for ((a, b), c) in x.iter_mut().zip(y.iter_mut()).zip(z.iter_mut()) {
            let [p, q, r] = self.eval([*a, *b, *c]);
            *a = p;
            *b = q;
            *c = r;
        }
    }
}

/// Outcome of sampling the three calming axioms.
#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    pub variant: CalmingVariant,
    pub eps: f64,
    pub samples: usize,
    pub lipschitz_ok: bool,
    pub bounded_ok: bool,
    pub residual_ok: bool,
    /// `max |ζ(x) - ζ(y)| / |x - y|`
    pub worst_lipschitz_ratio: f64,
    /// `max |ζ(x)| / M_ε` (∞ when unbounded)
    pub worst_bound_ratio: f64,
    /// `max |ζ(x) - x| / (C ε^α |x|^β)`
    pub worst_residual_ratio: f64,
    pub violations: Vec<AxiomViolation>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.lipschitz_ok && self.bounded_ok && self.residual_ok
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomViolation {
    pub axiom: &'static str,
    pub x: [f64; 3],
    pub y: Option<[f64; 3]>,
    pub ratio: f64,
}

pub const LIPSCHITZ_TOL: f64 = 1e-9;
pub const BOUND_TOL: f64 = 1e-12;

fn sample_ball<R: Rng>(rng: &mut R, radius: f64) -> [f64; 3] {
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if r2 <= 1.0 {
            return p.map(|c| c * radius);
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Samples `sample_count` seeded pairs in the ball of `radius` and checks
/// Lipschitz-1, boundedness by `M_ε` and the residual bound. Half of the
/// pairs are close neighbours so that the local slope is probed.
pub fn verify_calming_axioms(
    spec: &CalmingSpec<f64>,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> AxiomReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sup = spec.sup_norm().ok();
    let residual = spec.residual_constants();
    let mut report = AxiomReport {
        variant: spec.variant(),
        eps: spec.eps(),
        samples: sample_count,
        lipschitz_ok: true,
        bounded_ok: true,
        residual_ok: true,
        worst_lipschitz_ratio: 0.0,
        worst_bound_ratio: 0.0,
        worst_residual_ratio: 0.0,
        violations: Vec::new(),
    };
    if sup.is_none() {
        report.bounded_ok = false;
        report.worst_bound_ratio = f64::INFINITY;
    }
    for i in 0..sample_count {
        let x = sample_ball(&mut rng, radius);
        let y = if i % 2 == 0 {
            sample_ball(&mut rng, radius)
        } else {
            let h = sample_ball(&mut rng, 1e-3 * radius);
            [x[0] + h[0], x[1] + h[1], x[2] + h[2]]
        };
        let (zx, zy) = (spec.eval(x), spec.eval(y));
        let dxy = dist(x, y);
        if dxy > 0.0 {
            let ratio = dist(zx, zy) / dxy;
            report.worst_lipschitz_ratio = report.worst_lipschitz_ratio.max(ratio);
            if ratio > 1.0 + LIPSCHITZ_TOL {
                report.lipschitz_ok = false;
                report.violations.push(AxiomViolation {
                    axiom: "lipschitz",
                    x,
                    y: Some(y),
                    ratio,
                });
            }
        }
        let mag = dist(zx, [0.0; 3]);
        if let Some(m) = sup {
            report.worst_bound_ratio = report.worst_bound_ratio.max(mag / m);
            if mag > m + BOUND_TOL {
                report.bounded_ok = false;
                report.violations.push(AxiomViolation {
                    axiom: "bounded",
                    x,
                    y: None,
                    ratio: mag / m,
                });
            }
        }
        if let Some(rc) = residual {
            let r = dist(x, [0.0; 3]);
            let allowed = rc.c * spec.eps().powf(rc.alpha) * r.powf(rc.beta);
            let actual = dist(zx, x);
            if allowed > 0.0 {
                let ratio = actual / allowed;
                report.worst_residual_ratio = report.worst_residual_ratio.max(ratio);
                // Rounding slack scaled to the magnitude of x.
                if actual > allowed + 4.0 * f64::EPSILON * r {
                    report.residual_ok = false;
                    report.violations.push(AxiomViolation {
                        axiom: "residual",
                        x,
                        y: None,
                        ratio,
                    });
                }
            }
        }
    }
    report.violations.truncate(16);
    report
}
