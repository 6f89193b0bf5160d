//! Generators and their duals for shift-invariant kernel systems.
//!
//! A generator is a centered cardinal B-spline `B_m` (support [-m/2, m/2])
//! or a Gaussian bump `exp(-x^2 / 2 sigma^2)`. Both have integer-shift Gram
//! sequences in closed form:
//!
//! * B-spline:  `<B_m, B_m(.-k)> = B_{2m}(k)`  (autocorrelation identity)
//! * Gaussian:  `<g, g(.-k)> = sigma sqrt(pi) exp(-k^2 / 4 sigma^2)`
//!
//! The orthonormalized generator divides by the square root of the Gram
//! symbol on the Fourier side: its shift coefficients are the Fourier
//! coefficients of `G(xi)^{-1/2}`, computed with a trapezoid rule on a fine
//! periodic grid (spectrally accurate since `G` is analytic and positive).
//! The Gram-dual generator inverts the banded Toeplitz Gram matrix on a
//! truncated index range instead.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Points at which the base generator is treated as exactly zero.
const BASE_TAIL: f64 = 1e-16;
/// Shift-expansion coefficients below this relative size are dropped; the
/// value sits above the compensated-summation noise floor of the coefficient
/// quadrature.
const COEFF_TAIL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// Centered cardinal B-spline of the given order (1 = box, 2 = hat,
    /// 4 = cubic); support [-order/2, order/2].
    BSpline { order: u32 },
    /// Gaussian `exp(-x^2 / 2 sigma^2)`.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Duality {
    /// Primal = dual = orthonormalized generator.
    Orthonormalized,
    /// Primal = raw generator, dual from the inverted shift Gram matrix.
    GramDual,
}

impl GeneratorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GeneratorKind::BSpline { order } => {
                if !(1..=6).contains(&order) {
                    return Err(Error::InvalidInput(format!(
                        "B-spline order must lie in 1..=6, got {order}"
                    )));
                }
            }
            GeneratorKind::Gaussian { sigma } => {
                if !(sigma > 0.05 && sigma <= 8.0) {
                    return Err(Error::InvalidInput(format!(
                        "Gaussian width must lie in (0.05, 8], got {sigma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pointwise evaluation of the raw generator.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GeneratorKind::BSpline { order } => bspline(order, x),
            GeneratorKind::Gaussian { sigma } => {
                let r = self.support_radius();
                if x.abs() > r {
                    0.0
                } else {
                    (-x * x / (2.0 * sigma * sigma)).exp()
                }
            }
        }
    }

    /// Radius beyond which the raw generator is treated as zero.
    pub fn support_radius(&self) -> f64 {
        match *self {
            GeneratorKind::BSpline { order } => order as f64 / 2.0,
            GeneratorKind::Gaussian { sigma } => sigma * (-2.0 * BASE_TAIL.ln()).sqrt(),
        }
    }

    /// Integer-shift Gram coefficient `<phi, phi(.-k)>`.
    pub fn gram_coeff(&self, k: i64) -> f64 {
        match *self {
            GeneratorKind::BSpline { order } => bspline(2 * order, k as f64),
            GeneratorKind::Gaussian { sigma } => {
                let kf = k as f64;
                sigma * std::f64::consts::PI.sqrt() * (-kf * kf / (4.0 * sigma * sigma)).exp()
            }
        }
    }

    /// Half-bandwidth of the Gram sequence (coefficients are negligible
    /// beyond it).
    pub fn gram_band(&self) -> i64 {
        match *self {
            GeneratorKind::BSpline { order } => (order as i64 - 1).max(0),
            GeneratorKind::Gaussian { sigma } => (13.0 * sigma).ceil() as i64 + 1,
        }
    }
}

/// Centered cardinal B-spline of order `m` (degree m-1, support [-m/2, m/2]).
/// `m = 1` is the half-open box indicator of [-1/2, 1/2).
pub fn bspline(m: u32, x: f64) -> f64 {
    let mf = m as f64;
    let t = x + 0.5 * mf;
    if !(0.0..=mf).contains(&t) {
        return 0.0;
    }
    let deg = (m - 1) as i32;
    let mut acc = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=m {
        let u = t - k as f64;
        let term = if deg == 0 {
            if u >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else if u > 0.0 {
            u.powi(deg)
        } else {
            0.0
        };
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * term;
        binom = binom * ((m - k) as f64) / ((k + 1) as f64);
    }
    acc / factorial((m - 1) as u64)
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|i| i as f64).product::<f64>().max(1.0)
}

/// Gram symbol `G(xi) = sum_k g_k e^{-i k xi}` (real and even).
#[derive(Debug, Clone)]
pub struct GramSymbol {
    /// g_0, g_1, ..., g_band (symmetric).
    coeffs: Vec<f64>,
}

impl GramSymbol {
    pub fn of(kind: &GeneratorKind) -> Self {
        let band = kind.gram_band();
        let coeffs = (0..=band).map(|k| kind.gram_coeff(k)).collect();
        Self { coeffs }
    }

    pub fn eval(&self, xi: f64) -> f64 {
        let mut v = self.coeffs[0];
        for (k, &g) in self.coeffs.iter().enumerate().skip(1) {
            v += 2.0 * g * (k as f64 * xi).cos();
        }
        v
    }

    /// Minimum over a fine grid; positivity certifies the Riesz property at
    /// working precision.
    pub fn min_on_grid(&self) -> f64 {
        let n = 4096;
        (0..=n)
            .map(|i| self.eval(std::f64::consts::PI * i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A function expressed as a finite combination of integer shifts of a base
/// generator: `f(x) = sum_j c_j base(x - j)`.
#[derive(Debug, Clone)]
pub struct ShiftExpansion {
    base: GeneratorKind,
    /// Symmetric coefficients c_0, c_1, ..., c_J; c_{-j} = c_j.
    coeffs: Vec<f64>,
}

impl ShiftExpansion {
    pub fn delta(base: GeneratorKind) -> Self {
        Self { base, coeffs: vec![1.0] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let r = self.base.support_radius();
        let j_max = (self.coeffs.len() - 1) as i64;
        let lo = ((x - r).ceil() as i64).max(-j_max);
        let hi = ((x + r).floor() as i64).min(j_max);
        let mut v = 0.0;
        for j in lo..=hi {
            v += self.coeffs[j.unsigned_abs() as usize] * self.base.eval(x - j as f64);
        }
        v
    }

    /// Radius outside which the expansion is exactly zero (base truncation
    /// included).
    pub fn support_radius(&self) -> f64 {
        (self.coeffs.len() - 1) as f64 + self.base.support_radius()
    }

    /// Radius outside which |f| stays below `tol * max|coeff|`, from the
    /// coefficient tail.
    pub fn effective_radius(&self, tol: f64) -> f64 {
        let peak = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let mut j = self.coeffs.len() - 1;
        while j > 0 && self.coeffs[j].abs() < tol * peak {
            j -= 1;
        }
        j as f64 + self.base.support_radius()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn base(&self) -> &GeneratorKind {
        &self.base
    }

    /// Sum of all coefficients (= value of the coefficient symbol at 0).
    pub fn coeff_sum(&self) -> f64 {
        self.coeffs[0] + 2.0 * self.coeffs.iter().skip(1).sum::<f64>()
    }
}

fn trim_symmetric(mut coeffs: Vec<f64>) -> Vec<f64> {
    let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    while coeffs.len() > 1 && coeffs.last().map_or(false, |c| c.abs() < COEFF_TAIL * peak) {
        coeffs.pop();
    }
    coeffs
}

/// Fourier coefficients of `G(xi)^power` by trapezoid quadrature on the
/// periodic grid (spectrally accurate: `G` is analytic and bounded away from
/// zero).
fn symbol_power_coeffs(symbol: &GramSymbol, power: f64) -> Result<Vec<f64>> {
    let g_min = symbol.min_on_grid();
    if g_min <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "Gram symbol not positive (min {g_min:.3e}); shifts are not a Riesz basis \
             at working precision"
        )));
    }
    let n = 1usize << 14;
    let vals: Vec<f64> = (0..n)
        .map(|i| {
            let xi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            symbol.eval(xi).powf(power)
        })
        .collect();
    let max_j = 512.min(n / 2);
    let mut coeffs = Vec::with_capacity(max_j + 1);
    for j in 0..=max_j {
        // Kahan summation keeps the noise floor near machine epsilon.
        let mut acc = 0.0;
        let mut carry = 0.0;
        for (i, &v) in vals.iter().enumerate() {
            let xi = 2.0 * std::f64::consts::PI * (i as f64) * (j as f64) / n as f64;
            let term = v * xi.cos() - carry;
            let t = acc + term;
            carry = (t - acc) - term;
            acc = t;
        }
        coeffs.push(acc / n as f64);
    }
    Ok(trim_symmetric(coeffs))
}

/// The primal/dual generator pair realizing the configured duality.
#[derive(Debug, Clone)]
pub struct GeneratorPair {
    pub kind: GeneratorKind,
    pub duality: Duality,
    primal: ShiftExpansion,
    dual: ShiftExpansion,
}

impl GeneratorPair {
    pub fn build(kind: GeneratorKind, duality: Duality) -> Result<Self> {
        kind.validate()?;
        let symbol = GramSymbol::of(&kind);
        let (primal, dual) = match duality {
            Duality::Orthonormalized => {
                let ortho =
                    ShiftExpansion { base: kind, coeffs: symbol_power_coeffs(&symbol, -0.5)? };
                (ortho.clone(), ortho)
            }
            Duality::GramDual => {
                let dual = ShiftExpansion { base: kind, coeffs: gram_inverse_column(&kind)? };
                (ShiftExpansion::delta(kind), dual)
            }
        };
        Ok(Self { kind, duality, primal, dual })
    }

    pub fn primal(&self) -> &ShiftExpansion {
        &self.primal
    }

    pub fn dual(&self) -> &ShiftExpansion {
        &self.dual
    }

    /// Envelope value |primal(x)| + |dual(x)|.
    pub fn envelope(&self, x: f64) -> f64 {
        self.primal.eval(x).abs() + self.dual.eval(x).abs()
    }

    /// Common support radius of the pair.
    pub fn support_radius(&self) -> f64 {
        self.primal.support_radius().max(self.dual.support_radius())
    }

    /// Radius where the pair's envelope drops below `tol` relative to its
    /// peak coefficient.
    pub fn effective_radius(&self, tol: f64) -> f64 {
        self.primal.effective_radius(tol).max(self.dual.effective_radius(tol))
    }
}

/// Central column of the inverse Gram matrix on a truncated index range:
/// coefficients of the canonical dual generator.
fn gram_inverse_column(kind: &GeneratorKind) -> Result<Vec<f64>> {
    let symbol = GramSymbol::of(kind);
    let g_min = symbol.min_on_grid();
    if g_min <= 0.0 {
        return Err(Error::InvalidInput(
            "Gram matrix not positive definite at working precision".into(),
        ));
    }
    let band = kind.gram_band();
    // Truncation radius from the decay of 1/G's Fourier coefficients; grown
    // until the edge coefficient is negligible.
    let mut half = (4 * band + 16) as usize;
    loop {
        let n = 2 * half + 1;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let k = i as i64 - j as i64;
                if k.abs() <= band {
                    m[(i, j)] = kind.gram_coeff(k);
                }
            }
        }
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        rhs[half] = 1.0;
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput("Gram matrix solve failed".into()))?;
        let center = sol[half];
        let edge = sol[n - 1].abs();
        if edge < COEFF_TAIL * center.abs() || half >= 512 {
            let coeffs: Vec<f64> = (0..=half).map(|j| sol[half + j]).collect();
            return Ok(trim_symmetric(coeffs));
        }
        half *= 2;
    }
}

/// Uniform tabulation of a scalar function on [-radius, radius]; lookups
/// must land on the grid.
#[derive(Debug, Clone)]
pub struct Table {
    pub step: f64,
    pub radius: f64,
    values: Vec<f64>,
}

impl Table {
    pub fn build<F: Fn(f64) -> f64>(step: f64, radius: f64, f: F) -> Self {
        let n = (radius / step).round() as i64;
        let radius = n as f64 * step;
        let values = (-n..=n).map(|i| f(i as f64 * step)).collect();
        Self { step, radius, values }
    }

    /// Value at a grid-aligned point; zero outside the tabulated range.
    #[inline]
    pub fn at(&self, x: f64) -> f64 {
        let idx = (x + self.radius) / self.step;
        let i = idx.round();
        debug_assert!(
            (idx - i).abs() < 1e-6,
            "table lookup off-grid: x={x}, step={}",
            self.step
        );
        if i < 0.0 || i >= self.values.len() as f64 {
            0.0
        } else {
            self.values[i as usize]
        }
    }
}
