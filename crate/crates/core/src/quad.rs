//! Composite one-dimensional quadrature on panel grids.
//!
//! All integrals in the kernel and subspace modules run through
//! [`QuadratureConfig`]: the interval is split at every multiple of the step
//! `h` (plus the exact endpoints), and each panel is integrated with the
//! configured rule. Keeping panel boundaries on the `h`-grid keeps spline
//! knots at panel edges, so Gauss-Legendre panels integrate the piecewise
//! polynomials exactly.
//!
//! Envelope-type quantities (Wiener norms, moduli of continuity) are known
//! only on the uniform grid; [`integrate_table`] handles those with composite
//! Boole/Simpson weights.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuadRule {
    Midpoint,
    GaussLegendre(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Panel width; a dyadic value (2^-j) keeps lattice arithmetic exact.
    pub h: f64,
    /// Truncation radius of the integration box [-t_rad, t_rad]^d.
    pub t_rad: f64,
    pub rule: QuadRule,
}

impl QuadratureConfig {
    pub fn new(h: f64, t_rad: f64, rule: QuadRule) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("quadrature step must be positive, got {h}")));
        }
        if !(t_rad >= h && t_rad.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "truncation radius must be finite and >= h, got {t_rad}"
            )));
        }
        if let QuadRule::GaussLegendre(q) = rule {
            if !(1..=16).contains(&q) {
                return Err(Error::InvalidInput(format!(
                    "Gauss-Legendre order must lie in 1..=16, got {q}"
                )));
            }
        }
        Ok(Self { h, t_rad, rule })
    }

    pub fn default_rule() -> QuadRule {
        QuadRule::GaussLegendre(4)
    }

    /// Declared per-integral error budget of the configuration; refinement
    /// tests and the idempotency check are gated against this.
    pub fn tolerance_budget(&self) -> f64 {
        match self.rule {
            QuadRule::Midpoint => self.h * self.h / 8.0,
            QuadRule::GaussLegendre(q) => {
                let e = (0.5 * self.h).powi(2 * q.min(6) as i32);
                e.max(1e-11)
            }
        }
    }

    /// Quadrature nodes and weights for the interval [a, b].
    pub fn nodes(&self, a: f64, b: f64) -> Nodes1d {
        let mut edges = panel_edges(a, b, self.h);
        if edges.len() < 2 {
            edges = vec![a, b];
        }
        let (rx, rw) = reference_rule(self.rule);
        let mut x = Vec::with_capacity((edges.len() - 1) * rx.len());
        let mut w = Vec::with_capacity(x.capacity());
        for pair in edges.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&xi, &wi) in rx.iter().zip(rw.iter()) {
                x.push(mid + half * xi);
                w.push(half * wi);
            }
        }
        Nodes1d { x, w }
    }

    /// Nodes over the configured box [-t_rad, t_rad].
    pub fn box_nodes(&self) -> Nodes1d {
        self.nodes(-self.t_rad, self.t_rad)
    }

    /// Uniform evaluation grid over [a, b] at step h, endpoints included.
    pub fn uniform_grid(&self, a: f64, b: f64) -> Vec<f64> {
        uniform_grid(a, b, self.h)
    }
}

/// Uniform grid over [a, b] at the given step, endpoints included.
pub fn uniform_grid(a: f64, b: f64, step: f64) -> Vec<f64> {
    let n = ((b - a) / step).round().max(1.0) as usize;
    let mut g = Vec::with_capacity(n + 1);
    for i in 0..=n {
        g.push(a + (b - a) * (i as f64) / (n as f64));
    }
    g
}

/// Panel boundaries: a, every multiple of h strictly inside (a, b), then b.
fn panel_edges(a: f64, b: f64, h: f64) -> Vec<f64> {
    debug_assert!(b > a);
    let mut edges = vec![a];
    let mut k = (a / h).floor() + 1.0;
    loop {
        let t = k * h;
        if t >= b - 1e-12 * h {
            break;
        }
        if t > a + 1e-12 * h {
            edges.push(t);
        }
        k += 1.0;
    }
    edges.push(b);
    edges
}

/// Quadrature nodes with weights; `sum(w_i f(x_i))` approximates the integral.
#[derive(Debug, Clone)]
pub struct Nodes1d {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Nodes1d {
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.x.iter().zip(self.w.iter()).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn reference_rule(rule: QuadRule) -> (Vec<f64>, Vec<f64>) {
    match rule {
        QuadRule::Midpoint => (vec![0.0], vec![2.0]),
        QuadRule::GaussLegendre(q) => gauss_legendre(q as usize),
    }
}

/// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration on
/// the Legendre polynomial. Deterministic to the last bit for a given order.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q {
        // Chebyshev-like initial guess.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, t);
        x[q - 1 - i] = t;
        w[q - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

fn legendre_with_derivative(q: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Integrates values sampled on a uniform grid of step `h` (endpoints
/// included) with composite Boole / Simpson / trapezoid weights, falling back
/// in that order depending on the panel count.
pub fn integrate_table(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let panels = n - 1;
    let mut total = 0.0;
    let mut i = 0;
    // Boole blocks of 4 panels.
    while panels - i >= 4 {
        total += (2.0 * h / 45.0)
            * (7.0 * values[i]
                + 32.0 * values[i + 1]
                + 12.0 * values[i + 2]
                + 32.0 * values[i + 3]
                + 7.0 * values[i + 4]);
        i += 4;
    }
    // Simpson blocks of 2 panels.
    while panels - i >= 2 {
        total += (h / 3.0) * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
        i += 2;
    }
    // Trapezoid remainder.
    while panels - i >= 1 {
        total += 0.5 * h * (values[i] + values[i + 1]);
        i += 1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl_nodes_integrate_polynomials_exactly() {
        // GL(q) is exact on degree 2q-1.
        for q in 1..=8usize {
            let (x, w) = gauss_legendre(q);
            let deg = 2 * q - 1;
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-13, "q={q} deg={deg}: {got} vs {exact}");
            let total: f64 = w.iter().sum();
            assert_relative_eq!(total, 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn composite_gl_integrates_gaussian() {
        let cfg = QuadratureConfig::new(1.0 / 64.0, 8.0, QuadRule::GaussLegendre(4)).unwrap();
        let nodes = cfg.box_nodes();
        let v = nodes.integrate(|x| (-x * x).exp() / std::f64::consts::PI.sqrt());
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn midpoint_integrates_box_exactly_on_aligned_panels() {
        let cfg = QuadratureConfig::new(1.0 / 64.0, 2.0, QuadRule::Midpoint).unwrap();
        let nodes = cfg.nodes(-0.5, 0.5);
        let v = nodes.integrate(|_| 1.0);
        assert_relative_eq!(v, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn panels_split_at_grid_and_endpoints() {
        let edges = panel_edges(-0.1, 0.26, 0.125);
        assert_relative_eq!(edges[0], -0.1);
        assert_relative_eq!(edges[1], 0.0);
        assert_relative_eq!(edges[2], 0.125);
        assert_relative_eq!(edges[3], 0.25);
        assert_relative_eq!(edges[4], 0.26);
    }

    #[test]
    fn table_integrator_matches_closed_form() {
        let h = 1.0 / 64.0;
        let grid = uniform_grid(-8.0, 8.0, h);
        let vals: Vec<f64> =
            grid.iter().map(|&t| (-t * t).exp() / std::f64::consts::PI.sqrt()).collect();
        let v = integrate_table(&vals, h);
        assert!((v - 1.0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn table_integrator_handles_odd_counts() {
        for n in [2usize, 3, 5, 6, 7, 9] {
            let h = 1.0 / (n as f64 - 1.0);
            let vals: Vec<f64> = (0..n).map(|i| (i as f64) * h).collect();
            let v = integrate_table(&vals, h);
            assert_relative_eq!(v, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn halving_h_moves_integral_less_than_budget() {
        let f = |x: f64| (-(x * x) / 2.0).exp() * (1.0 + x.sin());
        let coarse = QuadratureConfig::new(1.0 / 64.0, 6.0, QuadratureConfig::default_rule())
            .unwrap();
        let fine = QuadratureConfig::new(1.0 / 128.0, 6.0, QuadratureConfig::default_rule())
            .unwrap();
        let a = coarse.box_nodes().integrate(f);
        let b = fine.box_nodes().integrate(f);
        assert!((a - b).abs() <= coarse.tolerance_budget(), "{}", (a - b).abs());
    }
}
