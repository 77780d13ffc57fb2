//! Integer invariants of the pencil `(b1, b2)`: the degree of `f = b1/b2`,
//! the winding number of `f̃ = (b1 + i b2)/(b1 − i b2)` on the unit circle
//! (by argument accumulation and by root counting), the stratum of a curve,
//! and numerical probes of the conditions characterising points of `R^g`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::Serialize;

use crate::curve::{build_curve, CurveSpec, SpectralCurve};
use crate::error::{Error, Result};
use crate::linalg::{tangent_dimension, TangentFit};
use crate::periods::{solve_ba, PencilBasis};
use crate::polyring::{approx_gcd, resultant, roots, CPoly};
use crate::quadrature::QuadConfig;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default number of initial unit-circle samples for the argument count.
pub const WINDING_SAMPLES: usize = 256;

const MAX_REFINE_DEPTH: u32 = 48;

/// Distance from the unit circle within which a gcd root counts as a point
/// of `S¹`.
pub fn s1_tolerance(tol: f64) -> f64 {
    tol.sqrt()
}

/// `(gcd, b1/gcd, b2/gcd)`.
pub fn deflate(b1: &CPoly, b2: &CPoly, tol: f64) -> (CPoly, CPoly, CPoly) {
    let g = approx_gcd(b1, b2, tol);
    if g.formal_degree() == 0 {
        return (g, b1.clone(), b2.clone());
    }
    let (q1, _) = b1.div_rem(&g, 0.0);
    let (q2, _) = b2.div_rem(&g, 0.0);
    (g, q1, q2)
}

pub fn deg_f(b1: &CPoly, b2: &CPoly, tol: f64) -> usize {
    let d = b1.formal_degree().max(b2.formal_degree());
    d - approx_gcd(b1, b2, tol).formal_degree()
}

fn numerator_denominator(b1: &CPoly, b2: &CPoly) -> (CPoly, CPoly) {
    (b1 + &b2.scale(I), b1 - &b2.scale(I))
}

/// Winding number of `f̃` by accumulating argument increments over the unit
/// circle. A step is accepted once its increment is below `π/2` and the
/// logarithmic derivatives of numerator and denominator at both ends bound
/// the possible turning within the step by `π/4`; otherwise it is bisected.
/// A logarithmic derivative above `1/tol` (a zero within about `tol` of the
/// circle) is reported as a boundary root.
pub fn winding_arg(b1: &CPoly, b2: &CPoly, samples: usize, tol: f64) -> Result<i64> {
    let (_, d1, d2) = deflate(b1, b2, tol);
    let (p, q) = numerator_denominator(&d1, &d2);
    struct Pt {
        t: f64,
        f: Complex64,
        speed: f64,
    }
    // f̃ and the bound on |d arg f̃ / dθ| at angle t
    let eval = |t: f64| -> Result<Pt> {
        let z = Complex64::from_polar(1.0, t);
        let (pv, pd) = p.eval_with_derivative(z);
        let (qv, qd) = q.eval_with_derivative(z);
        let (lp, lq) = ((pd / pv).norm(), (qd / qv).norm());
        if !(lp < 1.0 / tol && lq < 1.0 / tol) {
            return Err(Error::BoundaryRoot(z));
        }
        let f = pv / qv;
        if !f.is_finite() || f.norm() == 0.0 {
            return Err(Error::WindingUnresolved(0.5));
        }
        Ok(Pt { t, f, speed: lp + lq })
    };
    fn step<F: Fn(f64) -> Result<Pt>>(eval: &F, a: &Pt, b: &Pt, depth: u32) -> Result<f64> {
        let d = (b.f / a.f).arg();
        let h = b.t - a.t;
        if d.abs() < PI / 2.0 && h * a.speed.max(b.speed) < PI / 4.0 {
            return Ok(d);
        }
        if depth == 0 {
            return Err(Error::WindingUnresolved(0.5));
        }
        let m = eval(0.5 * (a.t + b.t))?;
        Ok(step(eval, a, &m, depth - 1)? + step(eval, &m, b, depth - 1)?)
    }
    let n = samples.max(8);
    let mut total = 0.0;
    let mut prev = eval(0.0)?;
    for k in 1..=n {
        let next = eval(TAU * k as f64 / n as f64)?;
        total += step(&eval, &prev, &next, MAX_REFINE_DEPTH)?;
        prev = next;
    }
    let w = total / TAU;
    let snapped = w.round();
    let err = (w - snapped).abs();
    if err.is_nan() || err >= 0.25 {
        return Err(Error::WindingUnresolved(err));
    }
    Ok(snapped as i64)
}

/// Winding number of `f̃` as the difference of disc root counts of
/// `b1 + i b2` and `b1 − i b2` (argument principle), after removing the gcd.
pub fn winding_roots(b1: &CPoly, b2: &CPoly, tol: f64) -> Result<i64> {
    let (_, d1, d2) = deflate(b1, b2, tol);
    let (p, q) = numerator_denominator(&d1, &d2);
    let inside = |poly: &CPoly| -> Result<i64> {
        if poly.effective_degree(tol).unwrap_or(0) == 0 {
            return Ok(0);
        }
        let mut n = 0;
        for r in roots(poly, tol)? {
            if (r.norm() - 1.0).abs() <= tol {
                return Err(Error::BoundaryRoot(r));
            }
            if r.norm() < 1.0 {
                n += 1;
            }
        }
        Ok(n)
    };
    Ok(inside(&p)? - inside(&q)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Stratum {
    /// Coprime pencil with winding number `j`.
    V { j: i64 },
    /// Every element of the pencil vanishes at these points of `S¹`.
    S {
        #[serde(with = "crate::pairs::vec")]
        lambda0: Vec<Complex64>,
    },
    /// Common roots, none on `S¹`.
    ROnly,
}

impl Stratum {
    pub fn label(&self) -> String {
        match self {
            Stratum::V { j } => format!("V{j}"),
            Stratum::S { .. } => "S".into(),
            Stratum::ROnly => "R".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub genus: usize,
    pub deg_f: usize,
    pub gcd_degree: usize,
    #[serde(with = "crate::pairs::vec")]
    pub gcd_roots: Vec<Complex64>,
    pub winding_arg: i64,
    pub winding_roots: i64,
    pub stratum: Stratum,
    /// `g = 0`, `deg f = 1`, `deg f = n(f̃)`.
    pub genus0_flags: [bool; 3],
}

impl InvariantReport {
    pub fn winding(&self) -> i64 {
        self.winding_arg
    }

    /// Parity and range constraints relating degree and winding; for
    /// coprime pencils of positive genus also `|n| ≤ deg f − 2`.
    pub fn bounds_hold(&self) -> bool {
        let d = self.deg_f as i64;
        let n = self.winding_arg;
        let parity = (n - d).rem_euclid(2) == 0;
        let range = -d < n && n <= d;
        let strict = self.genus == 0 || self.gcd_degree > 0 || n.abs() <= d - 2;
        parity && range && strict
    }

    pub fn lambda0(&self) -> &[Complex64] {
        match &self.stratum {
            Stratum::S { lambda0 } => lambda0,
            _ => &[],
        }
    }
}

/// Invariants of a pencil `(b1, b2)` of formal degree `g + 1`, with no
/// curve attached.
pub fn classify_pencil(b1: &CPoly, b2: &CPoly, tol: f64) -> Result<InvariantReport> {
    let genus = b1.formal_degree().max(b2.formal_degree()) - 1;
    let gcd = approx_gcd(b1, b2, tol);
    let gcd_degree = gcd.formal_degree();
    let gcd_roots = if gcd_degree > 0 { roots(&gcd, 0.0)? } else { Vec::new() };
    let deg = genus + 1 - gcd_degree;
    let wa = winding_arg(b1, b2, WINDING_SAMPLES, tol)?;
    let wr = winding_roots(b1, b2, tol)?;
    if wa != wr {
        return Err(Error::WindingMismatch { arg: wa, roots: wr });
    }
    let near = s1_tolerance(tol);
    let on_circle: Vec<Complex64> = gcd_roots
        .iter()
        .filter(|r| (r.norm() - 1.0).abs() <= near)
        .map(|r| r / r.norm())
        .collect();
    let stratum = if !on_circle.is_empty() {
        Stratum::S { lambda0: on_circle }
    } else if gcd_degree > 0 {
        Stratum::ROnly
    } else {
        Stratum::V { j: wa }
    };
    let flags = [genus == 0, deg == 1, deg as i64 == wa];
    Ok(InvariantReport {
        genus,
        deg_f: deg,
        gcd_degree,
        gcd_roots,
        winding_arg: wa,
        winding_roots: wr,
        stratum,
        genus0_flags: flags,
    })
}

pub fn classify(curve: &SpectralCurve, basis: &PencilBasis, tol: f64) -> Result<InvariantReport> {
    if basis.genus() != curve.genus() {
        return Err(Error::InvalidInput("basis and curve have different genus".into()));
    }
    let report = classify_pencil(&basis.b1, &basis.b2, tol)?;
    let flags = report.genus0_flags;
    if flags.iter().any(|&f| f != flags[0]) {
        return Err(Error::Invariant(format!(
            "genus-zero characterisation flags disagree: {flags:?} (g = {}, deg f = {}, winding = {})",
            report.genus, report.deg_f, report.winding_arg
        )));
    }
    Ok(report)
}

/// Build, solve and classify in one step.
pub fn classify_spec(spec: &CurveSpec, quad: &QuadConfig, tol: f64) -> Result<(SpectralCurve, PencilBasis, InvariantReport)> {
    let curve = build_curve(spec, tol)?;
    let basis = solve_ba(&curve, quad)?;
    let report = classify(&curve, &basis, tol)?;
    Ok((curve, basis, report))
}

fn eta_coords(spec: &CurveSpec) -> Vec<f64> {
    spec.eta.iter().flat_map(|e| [e.re, e.im]).collect()
}

fn spec_from_coords(x: &[f64]) -> CurveSpec {
    CurveSpec::new(x.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

#[derive(Debug, Clone)]
pub struct SPoint {
    pub curve: SpectralCurve,
    pub basis: PencilBasis,
    /// Parameter along the segment between the two input specs.
    pub t: f64,
    pub lambda0: Complex64,
    pub windings: (i64, i64),
}

/// Locate a point of `S^g` on the segment between two curves with
/// different winding numbers, by bisection on the winding.
pub fn locate_s_point(from: &CurveSpec, to: &CurveSpec, quad: &QuadConfig, tol: f64) -> Result<SPoint> {
    if from.genus != to.genus {
        return Err(Error::InvalidInput("endpoint specs have different genus".into()));
    }
    let at = |t: f64| -> CurveSpec {
        CurveSpec::new(from.eta.iter().zip(&to.eta).map(|(a, b)| a * (1.0 - t) + b * t).collect())
    };
    let winding_at = |t: f64| -> Result<i64> {
        let curve = build_curve(&at(t), tol)?;
        let basis = solve_ba(&curve, quad)?;
        winding_arg(&basis.b1, &basis.b2, WINDING_SAMPLES, tol)
    };
    let w0 = winding_at(0.0)?;
    let w1 = winding_at(1.0)?;
    if w0 == w1 {
        return Err(Error::Precondition(format!("both endpoints have winding {w0}")));
    }
    // coarse bracket on the winding
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        match winding_at(mid) {
            Ok(w) if w == w0 => lo = mid,
            Ok(_) => hi = mid,
            Err(Error::WindingUnresolved(_)) | Err(Error::BoundaryRoot(_)) => break,
            Err(e) => return Err(e),
        }
    }
    // then regula falsi (Illinois) on log|r| for the root r of b1 + i b2
    // nearest the circle, which crosses it inside the bracket
    let crossing = |t: f64| -> Result<f64> {
        let curve = build_curve(&at(t), tol)?;
        let basis = solve_ba(&curve, quad)?;
        let p = &basis.b1 + &basis.b2.scale(I);
        Ok(roots(&p, tol)?
            .into_iter()
            .filter(|r| r.norm() > 0.0)
            .map(|r| r.norm().ln())
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(f64::INFINITY))
    };
    let (mut flo, mut fhi) = (crossing(lo)?, crossing(hi)?);
    if flo.signum() != fhi.signum() {
        let mut side = 0;
        for _ in 0..100 {
            let t = (lo * fhi - hi * flo) / (fhi - flo);
            let ft = crossing(t)?;
            if ft == 0.0 || hi - lo < 1e-15 {
                lo = t;
                hi = t;
                break;
            }
            if ft.signum() == flo.signum() {
                lo = t;
                flo = ft;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                fhi = ft;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
            if ft.abs() < 1e-15 {
                lo = t;
                hi = t;
                break;
            }
        }
    }
    let t = 0.5 * (lo + hi);
    let curve = build_curve(&at(t), tol)?;
    let basis = solve_ba(&curve, quad)?;
    // the pencil's S¹ zero: gcd root if certified, otherwise the root of
    // b1 + i b2 nearest the circle
    let gcd = approx_gcd(&basis.b1, &basis.b2, tol);
    let candidates = if gcd.formal_degree() > 0 {
        roots(&gcd, 0.0)?
    } else {
        roots(&(&basis.b1 + &basis.b2.scale(I)), tol)?
    };
    let lambda0 = candidates
        .into_iter()
        .min_by(|a, b| (a.norm() - 1.0).abs().total_cmp(&(b.norm() - 1.0).abs()))
        .map(|r| r / r.norm())
        .ok_or_else(|| Error::Invariant("no candidate root for the S¹ zero".into()))?;
    Ok(SPoint {
        curve,
        basis,
        t,
        lambda0,
        windings: (w0, w1),
    })
}

/// Side-by-side numerical surrogates for the conditions characterising a
/// point of `R^g` (an empirical probe, not a decision procedure).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionProbe {
    pub genus: usize,
    pub fd_step: f64,
    #[serde(with = "crate::pairs::one")]
    pub lambda0: Complex64,
    pub gcd_degree: usize,
    /// gcd of degree exactly one.
    pub gcd_degree_one: bool,
    /// Winding numbers seen over the perturbation star.
    pub star_windings: Vec<i64>,
    pub two_windings: bool,
    /// Estimated local dimension of `R^g` (zero set of the resultant).
    pub r_dimension: usize,
    pub r_dimension_expected: bool,
    /// Estimated local dimension of curves whose pencil vanishes at `λ₀`.
    pub s_dimension: usize,
    pub s_dimension_expected: bool,
    pub kind: &'static str,
}

fn resultant_residual(basis: &PencilBasis) -> Vec<f64> {
    let (b1, b2) = (&basis.b1, &basis.b2);
    let deg = b1.formal_degree() as i32;
    let r = resultant(b1, b2) / (b1.norm2() * b2.norm2()).powi(deg);
    vec![r.re, r.im]
}

fn vanishing_residual(basis: &PencilBasis, lambda0: Complex64) -> Vec<f64> {
    let (v1, v2) = (basis.b1.eval(lambda0), basis.b2.eval(lambda0));
    vec![v1.re, v1.im, v2.re, v2.im]
}

pub fn condition_probe(curve: &SpectralCurve, quad: &QuadConfig, tol: f64, fd_step: f64) -> Result<ConditionProbe> {
    let g = curve.genus();
    let basis = solve_ba(curve, quad)?;
    let gcd = approx_gcd(&basis.b1, &basis.b2, tol);
    if g == 0 || gcd.formal_degree() == 0 {
        return Err(Error::OffStratum(format!(
            "pencil is coprime at tolerance {tol:e} (genus {g})"
        )));
    }
    let lambda0 = roots(&gcd, 0.0)?
        .into_iter()
        .min_by(|a, b| (a.norm() - 1.0).abs().total_cmp(&(b.norm() - 1.0).abs()))
        .map(|r| r / r.norm())
        .ok_or(Error::ZeroPolynomial)?;

    let x0 = eta_coords(&curve.spec);
    let solve_at = |x: &[f64]| -> Result<PencilBasis> {
        let c = build_curve(&spec_from_coords(x), tol)?;
        solve_ba(&c, quad)
    };

    let mut star = Vec::new();
    for k in 0..x0.len() {
        for s in [-1.0, 1.0] {
            let mut x = x0.clone();
            x[k] += s * fd_step;
            let b = solve_at(&x)?;
            if let Ok(w) = winding_arg(&b.b1, &b.b2, WINDING_SAMPLES, tol) {
                if approx_gcd(&b.b1, &b.b2, tol).formal_degree() == 0 && !star.contains(&w) {
                    star.push(w);
                }
            }
        }
    }
    star.sort_unstable();

    let r_fit: TangentFit = tangent_dimension(&|x: &[f64]| Ok(resultant_residual(&solve_at(x)?)), &x0, fd_step, 1e3)?;
    let s_fit = tangent_dimension(&|x: &[f64]| Ok(vanishing_residual(&solve_at(x)?, lambda0)), &x0, fd_step, 1e3)?;
    log::debug!(
        "condition probe: resultant singular values {:?}, vanishing singular values {:?}",
        r_fit.singular,
        s_fit.singular
    );
    Ok(ConditionProbe {
        genus: g,
        fd_step,
        lambda0,
        gcd_degree: gcd.formal_degree(),
        gcd_degree_one: gcd.formal_degree() == 1,
        two_windings: star.len() >= 2,
        star_windings: star,
        r_dimension: r_fit.dimension,
        r_dimension_expected: r_fit.dimension == 2 * g - 1,
        s_dimension: s_fit.dimension,
        s_dimension_expected: s_fit.dimension == 2 * g - 2,
        kind: "empirical",
    })
}
