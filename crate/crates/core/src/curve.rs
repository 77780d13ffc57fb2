//! Spectral curves `y² = λ a(λ)` built from the roots of `a` inside the unit
//! disc, with a radial cut layout, continuation of `y` along paths and a
//! concrete homology basis.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyring::CPoly;

/// Minimum separation between distinct branch points, and between cuts.
pub const MIN_SEPARATION: f64 = 1e-6;
/// Number of unit-circle samples for the positivity check.
pub const POSITIVITY_GRID: usize = 1024;
/// Minimum angular distance between a Sym point and a cut crossing of S¹.
pub const SYM_CUT_MARGIN: f64 = 1e-3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub genus: usize,
    #[serde(with = "crate::pairs::vec")]
    pub eta: Vec<Complex64>,
}

impl CurveSpec {
    pub fn new(eta: Vec<Complex64>) -> Self {
        Self { genus: eta.len(), eta }
    }

    /// Spec with every root rotated by `e^{iφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let r = Complex64::from_polar(1.0, phi);
        Self::new(self.eta.iter().map(|&e| e * r).collect())
    }
}

/// Straight segment between two finite points of the λ-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    #[serde(with = "crate::pairs::one")]
    pub from: Complex64,
    #[serde(with = "crate::pairs::one")]
    pub to: Complex64,
}

impl Segment {
    pub fn distance_to_point(&self, p: Complex64) -> f64 {
        let d = self.to - self.from;
        let len2 = d.norm_sqr();
        if len2 == 0.0 {
            return (p - self.from).norm();
        }
        let t = ((p - self.from) * d.conj()).re / len2;
        (p - (self.from + d * t.clamp(0.0, 1.0))).norm()
    }

    pub fn distance_to_segment(&self, other: &Segment) -> f64 {
        let cross = |o: Complex64, a: Complex64, b: Complex64| ((a - o).conj() * (b - o)).im;
        let d1 = cross(self.from, self.to, other.from);
        let d2 = cross(self.from, self.to, other.to);
        let d3 = cross(other.from, other.to, self.from);
        let d4 = cross(other.from, other.to, self.to);
        if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
            return 0.0;
        }
        self.distance_to_point(other.from)
            .min(self.distance_to_point(other.to))
            .min(other.distance_to_point(self.from))
            .min(other.distance_to_point(self.to))
    }
}

/// Cut joining 0 to ∞ along the ray `arg λ = angle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseCut {
    pub angle: f64,
}

/// Circular arc from `p` (at `z = −1`) to `q` (at `z = 1`), the image of
/// `[−1, 1]` under the Möbius map `z ↦ p + (q − p)(1+z)/D(z)` with
/// `D(z) = (1+z) + c(1−z)` and `|c| = 1`. `c = 1` is the straight segment;
/// `c = e^{iψ}` bends the arc to one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobiusArc {
    pub p: Complex64,
    pub q: Complex64,
    pub c: Complex64,
}

impl MobiusArc {
    pub fn straight(p: Complex64, q: Complex64) -> Self {
        Self { p, q, c: ONE }
    }

    pub fn bent(p: Complex64, q: Complex64, psi: f64) -> Self {
        Self { p, q, c: Complex64::from_polar(1.0, psi) }
    }

    pub fn denom(&self, z: Complex64) -> Complex64 {
        (ONE + z) + self.c * (ONE - z)
    }

    pub fn map(&self, z: Complex64) -> Complex64 {
        self.p + (self.q - self.p) * (ONE + z) / self.denom(z)
    }

    pub fn derivative(&self, z: Complex64) -> Complex64 {
        let d = self.denom(z);
        (self.q - self.p) * self.c * 2.0 / (d * d)
    }

    pub fn inverse(&self, x: Complex64) -> Complex64 {
        let u = (x - self.p) / (self.q - self.p);
        let r = (u.inv() - ONE) / self.c;
        (ONE - r) / (ONE + r)
    }

    /// Preimage of ∞, or `None` for the straight segment.
    pub fn pole(&self) -> Option<Complex64> {
        let k = ONE - self.c;
        (k.norm() > 1e-14).then(|| -(ONE + self.c) / k)
    }

    /// Bend parameter of the arc of this family passing through `x`.
    pub fn bend_through(p: Complex64, q: Complex64, x: Complex64) -> f64 {
        let u = (x - p) / (q - p);
        ((ONE - u) / u).arg()
    }
}

/// Elliptic radius `ρ ≥ 0` of `w` with respect to the segment `[−1, 1]`:
/// `w = J(z)` with `|z| = e^ρ`, `J(z) = (z + 1/z)/2`.
pub fn joukowski_radius(w: Complex64) -> f64 {
    let s = (w * w - ONE).sqrt();
    let z = if (w + s).norm() >= (w - s).norm() { w + s } else { w - s };
    z.norm().ln()
}

/// Loop `λ(θ) = arc(J(e^{ρ+iθ}))`, θ ∈ [0, 2π), around an arc; for the
/// straight arc this is the confocal ellipse with foci at its endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcLoop {
    pub arc: MobiusArc,
    pub rho: f64,
}

impl ArcLoop {
    pub fn ellipse(f1: Complex64, f2: Complex64, rho: f64) -> Self {
        Self { arc: MobiusArc::straight(f1, f2), rho }
    }

    pub fn point(&self, theta: f64) -> Complex64 {
        let z = Complex64::from_polar(self.rho.exp(), theta);
        self.arc.map((z + z.inv()) * 0.5)
    }

    pub fn velocity(&self, theta: f64) -> Complex64 {
        let z = Complex64::from_polar(self.rho.exp(), theta);
        let dj = (z - z.inv()) * Complex64::new(0.0, 0.5);
        self.arc.derivative((z + z.inv()) * 0.5) * dj
    }

    pub fn polyline(&self, n: usize) -> Vec<Complex64> {
        (0..=n).map(|k| self.point(TAU * k as f64 / n as f64)).collect()
    }
}

/// Pick an arc from `p` to `q` clear of `obstacles`, together with its
/// clearance (smallest elliptic radius of an obstacle preimage). The straight
/// segment is kept unless it passes close to an obstacle; a bent arc is only
/// admissible when no obstacle lies between it and the segment, so every
/// choice bounds the same homotopy class of loops.
pub fn choose_arc(p: Complex64, q: Complex64, obstacles: &[Complex64]) -> (MobiusArc, f64) {
    let clearance = |arc: &MobiusArc| {
        let mut m = obstacles
            .iter()
            .map(|&x| joukowski_radius(arc.inverse(x)))
            .fold(f64::INFINITY, f64::min);
        if let Some(pole) = arc.pole() {
            m = m.min(joukowski_radius(pole));
        }
        m
    };
    let straight = MobiusArc::straight(p, q);
    let base = clearance(&straight);
    if base >= 0.2 {
        return (straight, base);
    }
    let bends: Vec<f64> = obstacles.iter().map(|&x| MobiusArc::bend_through(p, q, x)).collect();
    let mut best = (straight, base);
    for k in 1..=12 {
        for sign in [1.0, -1.0] {
            let psi = sign * 0.2 * k as f64;
            let blocked = bends
                .iter()
                .any(|&b| b.signum() == psi.signum() && b.abs() <= psi.abs() + 1e-9);
            if blocked {
                continue;
            }
            let arc = MobiusArc::bent(p, q, psi);
            let cl = clearance(&arc);
            if cl > best.1 {
                best = (arc, cl);
            }
        }
    }
    best
}

/// The Sym path: radial segment from `λ₀` in to `r·λ₀`, a counterclockwise
/// circle of radius `r` around 0, then back out. It starts on the sheet
/// `y = −√(λ₀ a(λ₀))` (principal root) and ends on `+√`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymPath {
    pub lambda0: Complex64,
    pub radius: f64,
}

impl SymPath {
    pub fn inner(&self) -> Complex64 {
        self.lambda0 * self.radius
    }

    pub fn polyline(&self, n: usize) -> Vec<Complex64> {
        let mut pts = Vec::with_capacity(3 * n + 1);
        let (o, i) = (self.lambda0, self.inner());
        for k in 0..n {
            pts.push(o + (i - o) * (k as f64 / n as f64));
        }
        let phi0 = self.lambda0.arg();
        for k in 0..n {
            pts.push(Complex64::from_polar(self.radius, phi0 + TAU * k as f64 / n as f64));
        }
        for k in 0..=n {
            pts.push(i + (o - i) * (k as f64 / n as f64));
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cycle {
    /// Loop around the cut joining `η_j` and `1/conj(η_j)`; the period is
    /// evaluated on the cut itself.
    A { index: usize, cut: Segment, contour: ArcLoop },
    /// Loop around an arc from 0 to `η_j`, enclosing the branch points 0 and
    /// `η_j` only.
    B { index: usize, contour: ArcLoop },
    Sym(SymPath),
}

impl Cycle {
    /// Sampled λ-plane polyline of the cycle (closed loops repeat the start).
    pub fn polyline(&self, n: usize) -> Vec<Complex64> {
        match self {
            Cycle::A { contour, .. } | Cycle::B { contour, .. } => contour.polyline(n),
            Cycle::Sym(p) => p.polyline(n),
        }
    }

    /// Sign of `y` at the start relative to the principal square root.
    pub fn seed_sign(&self) -> f64 {
        match self {
            Cycle::Sym(_) => -1.0,
            _ => 1.0,
        }
    }

    pub fn sheet_path(&self, curve: &SpectralCurve, n: usize) -> Result<SheetPath> {
        curve.y_along(&self.polyline(n), self.seed_sign())
    }
}

#[derive(Debug, Clone)]
pub struct HomologyBasis {
    pub a: Vec<Cycle>,
    pub b: Vec<Cycle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SheetPath {
    pub points: Vec<Complex64>,
    pub y_values: Vec<Complex64>,
    pub sheet_seed: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralCurve {
    pub spec: CurveSpec,
    pub a: CPoly,
    /// Finite nonzero branch points, ordered `η_1, 1/conj η_1, η_2, …`.
    pub branch_points: Vec<Complex64>,
    pub cuts: Vec<Segment>,
    pub base_cut: BaseCut,
    pub homology: HomologyBasis,
}

/// Principal square root (branch along the negative real axis).
pub fn principal_sqrt(z: Complex64) -> Complex64 {
    z.sqrt()
}

pub fn build_curve(spec: &CurveSpec, tol: f64) -> Result<SpectralCurve> {
    let g = spec.genus;
    if spec.eta.len() != g {
        return Err(Error::InvalidCurve(format!(
            "genus {g} needs {g} roots in eta, got {}",
            spec.eta.len()
        )));
    }
    for (j, &e) in spec.eta.iter().enumerate() {
        if !e.re.is_finite() || !e.im.is_finite() {
            return Err(Error::InvalidCurve(format!("eta[{j}] is not finite")));
        }
        if e.norm() == 0.0 {
            return Err(Error::InvalidCurve(format!(
                "eta[{j}]: root at origin violates punctured disc"
            )));
        }
        if e.norm() >= 1.0 {
            return Err(Error::InvalidCurve(format!(
                "eta[{j}] = {e} has |eta| = {} ≥ 1; roots must lie in the open unit disc",
                e.norm()
            )));
        }
    }
    let mut branch_points = Vec::with_capacity(2 * g);
    for &e in &spec.eta {
        branch_points.push(e);
        branch_points.push(e.conj().inv());
    }
    let mut with_origin = branch_points.clone();
    with_origin.push(ZERO);
    for i in 0..with_origin.len() {
        for j in 0..i {
            let d = (with_origin[i] - with_origin[j]).norm();
            if d < MIN_SEPARATION {
                return Err(Error::InvalidCurve(format!(
                    "branch points {} and {} coincide (distance {d:e}); roots of a must be pairwise distinct",
                    with_origin[i], with_origin[j]
                )));
            }
        }
    }

    let cuts: Vec<Segment> = spec
        .eta
        .iter()
        .map(|&e| Segment { from: e, to: e.conj().inv() })
        .collect();
    for i in 0..g {
        for j in 0..i {
            let d = cuts[i].distance_to_segment(&cuts[j]);
            if d < MIN_SEPARATION {
                return Err(Error::InvalidCurve(format!(
                    "cuts through eta[{j}] and eta[{i}] touch (distance {d:e}); radial cuts must be disjoint"
                )));
            }
        }
    }

    let a = build_a(&spec.eta);
    let scale = a.norm_inf();
    let real = a.reality_check(tol * scale.max(1.0));
    if !real.is_real {
        return Err(Error::InvalidCurve(format!(
            "a is not real with respect to rho (defect {:e})",
            real.max_defect
        )));
    }
    if (a.top().norm() - 1.0).abs() > tol.max(1e-12) {
        return Err(Error::InvalidCurve(format!(
            "highest coefficient of a has modulus {} ≠ 1",
            a.top().norm()
        )));
    }
    for k in 0..POSITIVITY_GRID {
        let lam = Complex64::from_polar(1.0, TAU * k as f64 / POSITIVITY_GRID as f64);
        let v = a.eval(lam) * lam.powi(-(g as i32));
        if v.re <= 0.0 || v.im.abs() > 1e3 * tol.max(1e-15) * scale.max(1.0) {
            return Err(Error::InvalidCurve(format!(
                "lambda^-g a(lambda) = {v} is not positive at lambda = {lam}"
            )));
        }
    }

    let base_cut = BaseCut { angle: base_cut_angle(&spec.eta) };
    let homology = layout_homology(&spec.eta, &branch_points, &cuts);
    Ok(SpectralCurve {
        spec: spec.clone(),
        a,
        branch_points,
        cuts,
        base_cut,
        homology,
    })
}

/// Continue a branch of `√f` along the straight segments joining consecutive
/// points of `path`, where `zeros` are the zeros of `f`. Each segment is
/// refined until `arg f` moves by less than π/2 per step and the step is at
/// most half the distance to the nearest zero; the root nearest the previous
/// value is then taken.
pub fn continue_sqrt_of(
    f: &dyn Fn(Complex64) -> Complex64,
    zeros: &[Complex64],
    path: &[Complex64],
    y0: Complex64,
) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(path.len());
    let mut y = y0;
    out.push(y);
    for w in path.windows(2) {
        y = continue_segment(f, zeros, w[0], w[1], y, 0)?;
        out.push(y);
    }
    Ok(out)
}

fn continue_segment(
    f: &dyn Fn(Complex64) -> Complex64,
    zeros: &[Complex64],
    p: Complex64,
    q: Complex64,
    y: Complex64,
    depth: usize,
) -> Result<Complex64> {
    let dist_to = |l: Complex64| zeros.iter().map(|&z| (z - l).norm()).fold(f64::INFINITY, f64::min);
    let dist = dist_to(p).min(dist_to(q));
    if dist < 1e-10 * (1.0 + p.norm()) || depth > 60 {
        let point = zeros
            .iter()
            .copied()
            .min_by(|u, v| (u - p).norm().total_cmp(&(v - p).norm()))
            .unwrap_or(p);
        return Err(Error::NearBranchPoint { point, margin: dist });
    }
    let fp = f(p);
    let fq = f(q);
    if (q - p).norm() > 0.5 * dist || (fq / fp).arg().abs() >= 0.5 * PI {
        let m = (p + q) * 0.5;
        let ym = continue_segment(f, zeros, p, m, y, depth + 1)?;
        return continue_segment(f, zeros, m, q, ym, depth + 1);
    }
    let s = principal_sqrt(fq);
    Ok(if (s - y).norm() <= (s + y).norm() { s } else { -s })
}

/// `a(λ) = (−1)^g Π (conj η/|η|)(λ − η)(λ − 1/conj η)`.
pub fn build_a(eta: &[Complex64]) -> CPoly {
    let mut a = CPoly::constant(if eta.len().is_multiple_of(2) { ONE } else { -ONE });
    for &e in eta {
        // (conj η/|η|)(λ−η)(λ−1/conj η), each factor ρ-real on its own
        let r = e.norm();
        let u = e / r;
        a = &a * &CPoly::new(vec![u, Complex64::new(-(r + 1.0 / r), 0.0), u.conj()]);
    }
    a.rho_real_part()
}

fn angular_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(TAU);
    d.min(TAU - d)
}

fn base_cut_angle(eta: &[Complex64]) -> f64 {
    if eta.is_empty() {
        return PI;
    }
    let angles: Vec<f64> = eta.iter().map(|e| e.arg()).collect();
    let clearance = |t: f64| angles.iter().map(|&a| angular_distance(a, t)).fold(f64::INFINITY, f64::min);

    let mut sorted = angles.clone();
    sorted.sort_by(f64::total_cmp);
    let mut gap_mid = sorted[0] + PI;
    let mut gap = TAU;
    if sorted.len() > 1 {
        gap = 0.0;
        for k in 0..sorted.len() {
            let lo = sorted[k];
            let hi = if k + 1 < sorted.len() { sorted[k + 1] } else { sorted[0] + TAU };
            if hi - lo > gap {
                gap = hi - lo;
                gap_mid = 0.5 * (lo + hi);
            }
        }
    }
    let mean: Complex64 = eta.iter().map(|e| e / e.norm()).sum();
    if mean.norm() > 1e-9 * eta.len() as f64 {
        let t = mean.arg() + PI;
        if clearance(t) >= (gap / 4.0).min(0.1) {
            return t;
        }
    }
    gap_mid
}

fn layout_homology(eta: &[Complex64], branch: &[Complex64], cuts: &[Segment]) -> HomologyBasis {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (j, &e) in eta.iter().enumerate() {
        let far = e.conj().inv();
        let others: Vec<Complex64> = branch
            .iter()
            .copied()
            .chain(std::iter::once(ZERO))
            .filter(|&p| p != e && p != far)
            .collect();
        let (arc, clear) = choose_arc(e, far, &others);
        a.push(Cycle::A {
            index: j,
            cut: cuts[j],
            contour: ArcLoop { arc, rho: (0.5 * clear).min(1.0) },
        });
        let others: Vec<Complex64> = branch.iter().copied().filter(|&p| p != e).collect();
        let (arc, clear) = choose_arc(ZERO, e, &others);
        b.push(Cycle::B {
            index: j,
            contour: ArcLoop { arc, rho: (0.5 * clear).min(2.0) },
        });
    }
    HomologyBasis { a, b }
}

impl SpectralCurve {
    pub fn genus(&self) -> usize {
        self.spec.genus
    }

    pub fn eta(&self) -> &[Complex64] {
        &self.spec.eta
    }

    /// `λ a(λ)`, the right-hand side of the curve equation.
    pub fn h(&self, lam: Complex64) -> Complex64 {
        // product form stays accurate near the far branch points
        self.branch_points.iter().fold(lam * self.a.top(), |acc, r| acc * (lam - r))
    }

    /// Distance from `lam` to the nearest finite branch point (including 0).
    pub fn branch_distance(&self, lam: Complex64) -> f64 {
        self.branch_points
            .iter()
            .map(|&p| (p - lam).norm())
            .fold(lam.norm(), f64::min)
    }

    /// Continue `y = √(λ a(λ))` along a polyline from
    /// `seed_sign · principal_sqrt` at the first point.
    pub fn y_along(&self, path: &[Complex64], seed_sign: f64) -> Result<SheetPath> {
        let y_values = self.continue_sqrt(path, principal_sqrt(self.h(path[0])) * seed_sign)?;
        Ok(SheetPath {
            points: path.to_vec(),
            y_values,
            sheet_seed: seed_sign,
        })
    }

    /// Continue a branch of `√(λ a(λ))` with prescribed start value along the
    /// straight segments joining consecutive points.
    pub fn continue_sqrt(&self, path: &[Complex64], y0: Complex64) -> Result<Vec<Complex64>> {
        let mut zeros = self.branch_points.clone();
        zeros.push(ZERO);
        continue_sqrt_of(&|l| self.h(l), &zeros, path, y0)
    }

    /// Sym path for `λ₀ ∈ S¹`.
    pub fn sym_path(&self, lambda0: Complex64) -> Result<SymPath> {
        if (lambda0.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("Sym point {lambda0} is not on the unit circle")));
        }
        for &e in self.eta() {
            if angular_distance(e.arg(), lambda0.arg()) < SYM_CUT_MARGIN {
                return Err(Error::SymPointOnCut(lambda0));
            }
        }
        let radius = if self.genus() == 0 {
            0.5
        } else {
            0.5 * self.eta().iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min)
        };
        Ok(SymPath { lambda0, radius })
    }

    pub fn homology_cycles(&self, lambda0: Complex64) -> Result<(HomologyBasis, Cycle)> {
        Ok((self.homology.clone(), Cycle::Sym(self.sym_path(lambda0)?)))
    }
}
