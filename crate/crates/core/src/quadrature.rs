//! Moment integrals `∫ λ^k dλ/(λ y)` over the cycles of a spectral curve.
//!
//! Every period of `Θ_b` is a linear combination `Σ b_k m_k` of these
//! moments, so each cycle is integrated once per curve.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve::{continue_sqrt_of, principal_sqrt, ArcLoop, MobiusArc, SpectralCurve, SymPath};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Starting node count (per cut, per contour piece).
    pub nodes: usize,
    /// Relative change between successive doublings accepted as converged.
    pub tol: f64,
    pub max_nodes: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            nodes: 64,
            tol: 1e-10,
            max_nodes: 1 << 15,
        }
    }
}

type Rule<'a> = dyn Fn(usize) -> Result<Vec<Complex64>> + 'a;

/// Run a node-count-parametrized rule with doubling until successive moment
/// vectors agree to `tol` relative to their largest entry.
fn converge(cfg: &QuadConfig, what: &str, rule: &Rule<'_>) -> Result<Vec<Complex64>> {
    let mut n = cfg.nodes.max(4);
    let mut prev = rule(n)?;
    loop {
        let next_n = 2 * n;
        if next_n > cfg.max_nodes {
            return Err(Error::Quadrature(format!(
                "{what}: no convergence to {:e} within {} nodes",
                cfg.tol, cfg.max_nodes
            )));
        }
        let next = rule(next_n)?;
        let scale = next.iter().map(|m| m.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let change = prev
            .iter()
            .zip(&next)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        if change <= cfg.tol * scale {
            return Ok(next);
        }
        prev = next;
        n = next_n;
    }
}

fn powers(lam: Complex64, count: usize) -> impl Iterator<Item = Complex64> {
    // λ^{k-1}, k = 0..count
    let inv = lam.inv();
    (0..count).scan(inv, move |p, _| {
        let v = *p;
        *p *= lam;
        Some(v)
    })
}

fn zeros_of(curve: &SpectralCurve) -> Vec<Complex64> {
    let mut z = curve.branch_points.clone();
    z.push(Complex64::new(0.0, 0.0));
    z
}

/// Moments over the A-cycle collapsed onto `arc` (from `η` to `1/conj η`):
/// twice the integral along the arc. With `λ = M(s)` the arc map and
/// `λ a(λ) = −(1−s²)(q−p)² c M ã(M)/D(s)²`, where `ã` is `a` with the two
/// endpoint roots removed, the integrand becomes
/// `λ^{k−1} · 2c/(D(s) w(s)) · ds/√(1−s²)` with `w = √(−c M ã(M))`
/// continued from its principal value at `s = −1`. Gauss–Chebyshev absorbs
/// the inverse square-root endpoint behaviour exactly.
pub fn a_cycle_moments(curve: &SpectralCurve, arc: &MobiusArc, cfg: &QuadConfig) -> Result<Vec<Complex64>> {
    let count = curve.genus() + 2;
    let (e, far) = (arc.p, arc.q);
    // product form: dividing out a root far outside the disc is unstable
    let others: Vec<Complex64> = curve.branch_points.iter().copied().filter(|&z| z != e && z != far).collect();
    let lead = curve.a.top();
    let c = arc.c;
    let w2 = move |s: Complex64| {
        let l = arc.map(s);
        -(c * l * others.iter().fold(lead, |acc, r| acc * (l - r)))
    };
    let mut zeros: Vec<Complex64> = zeros_of(curve)
        .into_iter()
        .filter(|&z| z != e && z != far)
        .map(|z| arc.inverse(z))
        .collect();
    zeros.extend(arc.pole());
    let rule = |n: usize| -> Result<Vec<Complex64>> {
        // nodes ordered from s ≈ −1 to s ≈ +1, preceded by the endpoint s = −1
        let mut ss = Vec::with_capacity(n + 1);
        ss.push(Complex64::new(-1.0, 0.0));
        ss.extend((1..=n).rev().map(|k| Complex64::new(((2 * k - 1) as f64 * PI / (2 * n) as f64).cos(), 0.0)));
        let ws = continue_sqrt_of(&w2, &zeros, &ss, principal_sqrt(w2(ss[0])))?;
        let mut m = vec![Complex64::new(0.0, 0.0); count];
        for (s, w) in ss.iter().zip(&ws).skip(1) {
            let f = c * 2.0 / (arc.denom(*s) * w);
            for (mk, p) in m.iter_mut().zip(powers(arc.map(*s), count)) {
                *mk += p * f;
            }
        }
        let weight = 2.0 * PI / n as f64;
        Ok(m.into_iter().map(|v| v * weight).collect())
    };
    converge(cfg, "A-cycle", &rule)
}

/// Moments over a closed arc loop by the periodic trapezoid rule, `y`
/// continued around the loop from the principal root at θ = 0.
pub fn loop_moments(curve: &SpectralCurve, contour: &ArcLoop, cfg: &QuadConfig) -> Result<Vec<Complex64>> {
    let count = curve.genus() + 2;
    let zeros = zeros_of(curve);
    let rule = |n: usize| -> Result<Vec<Complex64>> {
        let pts: Vec<Complex64> = (0..=n).map(|k| contour.point(TAU * k as f64 / n as f64)).collect();
        let ys = continue_sqrt_of(&|l| curve.h(l), &zeros, &pts, principal_sqrt(curve.h(pts[0])))?;
        if (ys[n] - ys[0]).norm() > 1e-8 * ys[0].norm() {
            return Err(Error::Reality(format!(
                "contour around the arc from {} to {} does not close on the curve",
                contour.arc.p, contour.arc.q
            )));
        }
        let mut m = vec![Complex64::new(0.0, 0.0); count];
        for k in 0..n {
            let f = contour.velocity(TAU * k as f64 / n as f64) / ys[k];
            for (mk, p) in m.iter_mut().zip(powers(pts[k], count)) {
                *mk += p * f;
            }
        }
        let weight = TAU / n as f64;
        Ok(m.into_iter().map(|v| v * weight).collect())
    };
    converge(cfg, "B-cycle", &rule)
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

const PANEL: usize = 16;

/// Moments over the Sym path. The outward leg retraces the inward leg on
/// the opposite sheet in the opposite direction, so it contributes the same
/// amount; the path integral is twice the inward leg plus the circle.
pub fn sym_moments(curve: &SpectralCurve, path: &SymPath, cfg: &QuadConfig) -> Result<Vec<Complex64>> {
    let count = curve.genus() + 2;
    let zeros = zeros_of(curve);
    let (x, w) = gauss_legendre(PANEL);
    let start = path.lambda0;
    let inner = path.inner();
    let phi0 = start.arg();
    let rule = |n: usize| -> Result<Vec<Complex64>> {
        let panels = (n / PANEL).max(1);
        // (point, dλ weight) along the inward leg, then the circle
        let mut pts = vec![start];
        let mut dl = vec![Complex64::new(0.0, 0.0)];
        let leg = inner - start;
        for p in 0..panels {
            for (xi, wi) in x.iter().zip(&w) {
                let t = (p as f64 + 0.5 * (xi + 1.0)) / panels as f64;
                pts.push(start + leg * t);
                dl.push(leg * (0.5 * wi / panels as f64));
            }
        }
        let leg_end = pts.len();
        pts.push(inner);
        dl.push(Complex64::new(0.0, 0.0));
        for p in 0..panels {
            for (xi, wi) in x.iter().zip(&w) {
                let t = (p as f64 + 0.5 * (xi + 1.0)) / panels as f64;
                let phi = phi0 + TAU * t;
                let l = Complex64::from_polar(path.radius, phi);
                pts.push(l);
                dl.push(Complex64::new(0.0, 1.0) * l * (TAU * 0.5 * wi / panels as f64));
            }
        }
        let ys = continue_sqrt_of(&|l| curve.h(l), &zeros, &pts, -principal_sqrt(curve.h(start)))?;
        let mut m = vec![Complex64::new(0.0, 0.0); count];
        for (k, ((l, d), y)) in pts.iter().zip(&dl).zip(&ys).enumerate() {
            if d.norm() == 0.0 {
                continue;
            }
            let f = if k < leg_end { d * 2.0 / y } else { d / y };
            for (mk, p) in m.iter_mut().zip(powers(*l, count)) {
                *mk += p * f;
            }
        }
        Ok(m)
    };
    converge(cfg, "Sym path", &rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 16] {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-14);
            let deg = 2 * n - 1;
            let approx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((approx - exact).abs() < 1e-13, "n={n}");
        }
    }
}
