//! Weight functions: submultiplicative `w` and `w`-moderate `v`.
//!
//! Three parametric families are shipped, all radial in the Euclidean norm:
//!
//! * `constant`:        w(x) = 1
//! * `polynomial(s)`:   w(x) = (1 + |x|)^s,        s >= 0
//! * `subexponential`:  w(x) = exp(a |x|^b),       a >= 0, 0 < b < 1
//!
//! Each is continuous, symmetric, strictly positive and submultiplicative:
//! `w(x+y) <= w(x) w(y)`. A pair `(w, v)` is moderate when
//! `v(x+y) <= C0 w(x) v(y)`; the moderation constant `C0` is estimated
//! empirically over random pairs with a 5% inflation margin.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Weight family. All kinds evaluate through the Euclidean norm of the point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightKind {
    /// w = 1.
    Constant,
    /// w(x) = (1 + |x|)^s with s >= 0.
    Polynomial { s: f64 },
    /// w(x) = exp(a |x|^beta) with a >= 0 and beta in (0, 1).
    Subexponential { a: f64, beta: f64 },
}

/// A weight function on R^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub dimension: usize,
}

impl WeightSpec {
    pub fn new(kind: WeightKind, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("weight dimension must be >= 1".into()));
        }
        match kind {
            WeightKind::Polynomial { s } if !(s >= 0.0 && s.is_finite()) => {
                return Err(Error::InvalidInput(format!(
                    "polynomial weight exponent must be finite and >= 0, got {s}"
                )));
            }
            WeightKind::Subexponential { a, beta } => {
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "subexponential weight rate must be finite and >= 0, got {a}"
                    )));
                }
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "subexponential weight exponent must lie in (0,1), got {beta}"
                    )));
                }
            }
            _ => {}
        }
        Ok(Self { kind, dimension })
    }

    pub fn constant(dimension: usize) -> Self {
        Self { kind: WeightKind::Constant, dimension }
    }

    /// Evaluate at the radius r = |x| >= 0.
    pub fn eval_radial(&self, r: f64) -> f64 {
        match self.kind {
            WeightKind::Constant => 1.0,
            WeightKind::Polynomial { s } => (1.0 + r).powf(s),
            WeightKind::Subexponential { a, beta } => (a * r.powf(beta)).exp(),
        }
    }

    /// Evaluate at a point of R^d.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        self.eval_radial(norm2(x))
    }

    /// Evaluate at a scalar point (d = 1).
    pub fn eval1(&self, x: f64) -> f64 {
        self.eval_radial(x.abs())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, WeightKind::Constant)
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|t| t * t).sum::<f64>().sqrt()
}

/// Checked evaluation; rejects non-finite coordinates.
pub fn evaluate_weight(w: &WeightSpec, x: &[f64]) -> Result<f64> {
    if x.len() != w.dimension {
        return Err(Error::InvalidInput(format!(
            "point dimension {} does not match weight dimension {}",
            x.len(),
            w.dimension
        )));
    }
    if x.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("evaluate_weight"));
    }
    Ok(w.eval(x))
}

/// Outcome of the randomized submultiplicativity check.
#[derive(Debug, Clone, Copy)]
pub struct SubmultReport {
    /// max over sampled pairs of w(x+y) - w(x) w(y).
    pub max_violation: f64,
    /// Scale used for the pass threshold: max(1, max sampled w(x) w(y)).
    pub scale: f64,
    pub pass: bool,
}

/// Samples `trial_count` pairs (x, y) in [-box_radius, box_radius]^{2d} and
/// reports the worst violation of `w(x+y) <= w(x) w(y)`.
///
/// Pairs are drawn from a single seeded stream, so for a fixed seed the set
/// of pairs at a larger trial count extends the smaller one.
pub fn verify_submultiplicative(
    w: &WeightSpec,
    trial_count: usize,
    box_radius: f64,
    seed: u64,
) -> Result<SubmultReport> {
    if trial_count == 0 {
        return Err(Error::InvalidInput("trial_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = w.dimension;
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut max_violation = f64::NEG_INFINITY;
    let mut scale = 1.0f64;
    for _ in 0..trial_count {
        for i in 0..d {
            x[i] = box_radius * (2.0 * rng.gen::<f64>() - 1.0);
            y[i] = box_radius * (2.0 * rng.gen::<f64>() - 1.0);
            sum[i] = x[i] + y[i];
        }
        let lhs = w.eval(&sum);
        let prod = w.eval(&x) * w.eval(&y);
        max_violation = max_violation.max(lhs - prod);
        scale = scale.max(prod);
    }
    Ok(SubmultReport { max_violation, scale, pass: max_violation <= 1e-12 * scale })
}

/// Empirical moderation constant: `1.05 * max v(x+y) / (w(x) v(y))` over
/// sampled pairs. Monotone non-decreasing in `trial_count` for a fixed seed.
pub fn estimate_c0(
    omega: &WeightSpec,
    nu: &WeightSpec,
    trial_count: usize,
    box_radius: f64,
    seed: u64,
) -> Result<f64> {
    if trial_count == 0 {
        return Err(Error::InvalidInput("trial_count must be >= 1".into()));
    }
    if omega.dimension != nu.dimension {
        return Err(Error::InvalidInput(
            "omega and nu must share a dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = omega.dimension;
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut max_ratio = 0.0f64;
    for _ in 0..trial_count {
        for i in 0..d {
            x[i] = box_radius * (2.0 * rng.gen::<f64>() - 1.0);
            y[i] = box_radius * (2.0 * rng.gen::<f64>() - 1.0);
            sum[i] = x[i] + y[i];
        }
        let num = nu.eval(&sum);
        let den = omega.eval(&x) * nu.eval(&y);
        if !num.is_finite() || !den.is_finite() || den == 0.0 {
            let suggested = suggest_radius(omega).min(suggest_radius(nu));
            return Err(Error::WeightOverflow { radius: box_radius, suggested });
        }
        max_ratio = max_ratio.max(num / den);
    }
    Ok(1.05 * max_ratio)
}

/// Radius below which exp(a r^beta) stays clear of f64 overflow.
fn suggest_radius(w: &WeightSpec) -> f64 {
    match w.kind {
        WeightKind::Subexponential { a, beta } if a > 0.0 => (600.0 / a).powf(1.0 / beta),
        _ => f64::INFINITY,
    }
}

/// A submultiplicative weight and an omega-moderate companion, with the
/// moderation constant used everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeratePair {
    pub omega: WeightSpec,
    pub nu: WeightSpec,
    pub c0: f64,
}

impl ModeratePair {
    pub fn new(omega: WeightSpec, nu: WeightSpec, c0: f64) -> Result<Self> {
        if omega.dimension != nu.dimension {
            return Err(Error::InvalidInput(
                "omega and nu must share a dimension".into(),
            ));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::InvalidInput(format!("C0 must be positive, got {c0}")));
        }
        Ok(Self { omega, nu, c0 })
    }

    /// Build with an empirically estimated C0 (1000 pairs by default works
    /// well; callers pick the budget).
    pub fn with_estimated_c0(
        omega: WeightSpec,
        nu: WeightSpec,
        trial_count: usize,
        box_radius: f64,
        seed: u64,
    ) -> Result<Self> {
        let c0 = estimate_c0(&omega, &nu, trial_count, box_radius, seed)?;
        Self::new(omega, nu, c0)
    }

    /// Both weights constant; C0 = 1.05 (the empirical estimate for the
    /// identically-one ratio).
    pub fn unweighted(dimension: usize) -> Self {
        Self {
            omega: WeightSpec::constant(dimension),
            nu: WeightSpec::constant(dimension),
            c0: 1.05,
        }
    }

    pub fn dimension(&self) -> usize {
        self.omega.dimension
    }
}

/// Parses the config syntax `"const" | "poly:S" | "subexp:A:B"`.
pub fn parse_weight(text: &str, dimension: usize) -> Result<WeightSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = |msg: &str| Error::Config(format!("weight `{text}`: {msg}"));
    match parts.as_slice() {
        ["const"] => WeightSpec::new(WeightKind::Constant, dimension),
        ["poly", s] => {
            let s: f64 = s.parse().map_err(|_| bad("exponent not a number"))?;
            WeightSpec::new(WeightKind::Polynomial { s }, dimension)
        }
        ["subexp", a, b] => {
            let a: f64 = a.parse().map_err(|_| bad("rate not a number"))?;
            let beta: f64 = b.parse().map_err(|_| bad("exponent not a number"))?;
            WeightSpec::new(WeightKind::Subexponential { a, beta }, dimension)
        }
        _ => Err(bad("expected `const`, `poly:S` or `subexp:A:B`")),
    }
}

/// Formats a weight back into config syntax.
pub fn format_weight(w: &WeightSpec) -> String {
    match w.kind {
        WeightKind::Constant => "const".to_string(),
        WeightKind::Polynomial { s } => format!("poly:{s}"),
        WeightKind::Subexponential { a, beta } => format!("subexp:{a}:{beta}"),
    }
}
