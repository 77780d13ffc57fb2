//! Periods of `Θ_b = b dλ/(λ y)`, the pencil `B_a` of ρ-real `b` with purely
//! imaginary periods, its derived pencil `(b0, b∞)`, and the normalized
//! period map used for the torus (rationality) probe.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::curve::{Cycle, SpectralCurve};
use crate::error::{Error, Result};
use crate::linalg;
use crate::polyring::{from_rho_real_coords, rho_real_basis, CPoly};
use crate::quadrature::{a_cycle_moments, loop_moments, sym_moments, QuadConfig};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Required ratio between the smallest kept and the largest dropped singular
/// value of the period map.
pub const KERNEL_GAP: f64 = 1e6;

/// Moment vectors `m_k = ∫ λ^k dλ/(λ y)`, `k = 0..=g+1`, for each A- and
/// B-cycle of a curve.
#[derive(Debug, Clone)]
pub struct PeriodTable {
    pub a: Vec<Vec<Complex64>>,
    pub b: Vec<Vec<Complex64>>,
}

impl PeriodTable {
    pub fn new(curve: &SpectralCurve, quad: &QuadConfig) -> Result<Self> {
        let mut a = Vec::with_capacity(curve.genus());
        let mut b = Vec::with_capacity(curve.genus());
        for cyc in &curve.homology.a {
            if let Cycle::A { contour, .. } = cyc {
                a.push(a_cycle_moments(curve, &contour.arc, quad)?);
            }
        }
        for cyc in &curve.homology.b {
            if let Cycle::B { contour, .. } = cyc {
                b.push(loop_moments(curve, contour, quad)?);
            }
        }
        Ok(Self { a, b })
    }
}

fn pair(b: &CPoly, moments: &[Complex64]) -> Complex64 {
    b.coeffs().iter().zip(moments).map(|(c, m)| c * m).sum()
}

fn check_degree(curve: &SpectralCurve, b: &CPoly) -> Result<()> {
    if b.formal_degree() != curve.genus() + 1 {
        return Err(Error::InvalidInput(format!(
            "b must have formal degree g+1 = {}, got {}",
            curve.genus() + 1,
            b.formal_degree()
        )));
    }
    Ok(())
}

/// Complex A-periods from a precomputed table.
pub fn a_periods_complex(table: &PeriodTable, b: &CPoly) -> Vec<Complex64> {
    table.a.iter().map(|m| pair(b, m)).collect()
}

pub fn b_periods_from(table: &PeriodTable, b: &CPoly) -> Vec<Complex64> {
    table.b.iter().map(|m| pair(b, m)).collect()
}

/// Real A-periods; the imaginary residue of each must stay below
/// `10³·tol` relative to the integrand scale.
pub fn a_periods(curve: &SpectralCurve, b: &CPoly, quad: &QuadConfig) -> Result<Vec<f64>> {
    check_degree(curve, b)?;
    let table = PeriodTable::new(curve, quad)?;
    real_a_periods(&table, b, quad.tol)
}

pub fn real_a_periods(table: &PeriodTable, b: &CPoly, tol: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(table.a.len());
    for (j, m) in table.a.iter().enumerate() {
        let v = pair(b, m);
        let scale: f64 = b.coeffs().iter().zip(m).map(|(c, m)| c.norm() * m.norm()).sum();
        if v.im.abs() > 1e3 * tol * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Reality(format!(
                "A-period {j} has imaginary part {:e} (scale {scale:e})",
                v.im
            )));
        }
        out.push(v.re);
    }
    Ok(out)
}

pub fn b_periods(curve: &SpectralCurve, b: &CPoly, quad: &QuadConfig) -> Result<Vec<Complex64>> {
    check_degree(curve, b)?;
    let table = PeriodTable::new(curve, quad)?;
    Ok(b_periods_from(&table, b))
}

pub fn sym_moments_at(curve: &SpectralCurve, lambda0: Complex64, quad: &QuadConfig) -> Result<Vec<Complex64>> {
    let path = curve.sym_path(lambda0)?;
    sym_moments(curve, &path, quad)
}

/// `∫_γ Θ_b` over the Sym path at `λ₀`.
pub fn sym_integral(curve: &SpectralCurve, b: &CPoly, lambda0: Complex64, quad: &QuadConfig) -> Result<Complex64> {
    check_degree(curve, b)?;
    Ok(pair(b, &sym_moments_at(curve, lambda0, quad)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodRecord {
    pub cycle: String,
    pub value_re: f64,
    pub value_im: f64,
}

/// Flat list of period records for `b`, A-cycles then B-cycles, then the Sym
/// path when `λ₀` is supplied.
pub fn period_report(
    curve: &SpectralCurve,
    b: &CPoly,
    lambda0: Option<Complex64>,
    quad: &QuadConfig,
) -> Result<Vec<PeriodRecord>> {
    check_degree(curve, b)?;
    let table = PeriodTable::new(curve, quad)?;
    let mut out = Vec::new();
    let mut push = |name: String, v: Complex64| {
        out.push(PeriodRecord { cycle: name, value_re: v.re, value_im: v.im })
    };
    for (j, v) in a_periods_complex(&table, b).into_iter().enumerate() {
        push(format!("A{}", j + 1), v);
    }
    for (j, v) in b_periods_from(&table, b).into_iter().enumerate() {
        push(format!("B{}", j + 1), v);
    }
    if let Some(l0) = lambda0 {
        push("gamma".into(), sym_integral(curve, b, l0, quad)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PencilBasis {
    pub curve: SpectralCurve,
    pub b1: CPoly,
    pub b2: CPoly,
    pub kernel_gap: f64,
    /// Singular values of the real period map, decreasing.
    pub singular_values: Vec<f64>,
    pub table: PeriodTable,
}

impl PencilBasis {
    pub fn genus(&self) -> usize {
        self.curve.genus()
    }

    /// Largest |A-period| and largest |Re B-period| over `b1`, `b2`.
    pub fn residuals(&self) -> (f64, f64) {
        let mut a_res: f64 = 0.0;
        let mut b_res: f64 = 0.0;
        for b in [&self.b1, &self.b2] {
            for v in a_periods_complex(&self.table, b) {
                a_res = a_res.max(v.norm());
            }
            for v in b_periods_from(&self.table, b) {
                b_res = b_res.max(v.re.abs());
            }
        }
        (a_res, b_res)
    }

    /// The element of the pencil with prescribed value at 0.
    pub fn element_with_value_at_zero(&self, v: Complex64) -> CPoly {
        &self.b1.scale(Complex64::new(v.re, 0.0)) + &self.b2.scale(Complex64::new(v.im, 0.0))
    }
}

/// Real period map on the coordinates of `P^{g+1}_R`: rows are `Re A_j`,
/// `Im A_j`, `Re B_j`.
pub fn period_matrix(table: &PeriodTable, g: usize) -> DMatrix<f64> {
    let basis = rho_real_basis(g + 1);
    let mut m = DMatrix::<f64>::zeros(3 * g, g + 2);
    for (c, e) in basis.iter().enumerate() {
        for j in 0..g {
            let av = pair(e, &table.a[j]);
            let bv = pair(e, &table.b[j]);
            m[(j, c)] = av.re;
            m[(g + j, c)] = av.im;
            m[(2 * g + j, c)] = bv.re;
        }
    }
    m
}

/// Solve for the normalized basis `b1(0) = 1`, `b2(0) = i` of `B_a`.
pub fn solve_ba(curve: &SpectralCurve, quad: &QuadConfig) -> Result<PencilBasis> {
    let g = curve.genus();
    let table = PeriodTable::new(curve, quad)?;
    let (v1, v2, gap, singular) = if g == 0 {
        (vec![1.0, 0.0], vec![0.0, 1.0], f64::INFINITY, vec![])
    } else {
        let m = period_matrix(&table, g);
        let svd = linalg::sorted_svd(&m);
        let s = &svd.singular;
        let kept = s[g - 1];
        let dropped = s[g];
        let gap = if dropped == 0.0 { f64::INFINITY } else { kept / dropped };
        if gap.is_nan() || gap <= KERNEL_GAP {
            return Err(Error::DegeneratePeriodMap(format!(
                "kernel dimension is not 2 at gap {KERNEL_GAP:e}: singular values {s:?}"
            )));
        }
        let col = |k: usize| svd.v.column(k).iter().copied().collect::<Vec<f64>>();
        (col(g), col(g + 1), gap, s.clone())
    };
    // recombine so that the (Re p0, Im p0) coordinates become (1,0) and (0,1)
    let k = nalgebra::Matrix2::new(v1[0], v2[0], v1[1], v2[1]);
    let kinv = k.try_inverse().filter(|_| k.determinant().abs() > 1e-12).ok_or_else(|| {
        Error::DegeneratePeriodMap("evaluation at 0 is not injective on the kernel".into())
    })?;
    let combine = |c0: f64, c1: f64| -> Vec<f64> { v1.iter().zip(&v2).map(|(a, b)| c0 * a + c1 * b).collect() };
    let mut x1 = combine(kinv[(0, 0)], kinv[(1, 0)]);
    let mut x2 = combine(kinv[(0, 1)], kinv[(1, 1)]);
    x1[0] = 1.0;
    x1[1] = 0.0;
    x2[0] = 0.0;
    x2[1] = 1.0;
    let b1 = from_rho_real_coords(g + 1, &x1);
    let b2 = from_rho_real_coords(g + 1, &x2);
    Ok(PencilBasis {
        curve: curve.clone(),
        b1,
        b2,
        kernel_gap: gap,
        singular_values: singular,
        table,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivedPencil {
    pub b0: CPoly,
    pub binf: CPoly,
    #[serde(with = "crate::pairs::one")]
    pub alpha: Complex64,
    #[serde(with = "crate::pairs::one")]
    pub beta: Complex64,
}

impl DerivedPencil {
    /// `f̃ = (b1 + i b2)/(b1 − i b2) = −b0/b∞` at `λ`.
    pub fn f_tilde(&self, lam: Complex64) -> Complex64 {
        -self.b0.eval(lam) / self.binf.eval(lam)
    }
}

/// `b0 = α b1 + β b2` with `b0(0) = 0` and top coefficient `−2i`, and
/// `b∞ = conj(ρ* b0)`.
pub fn derived_pencil(b1: &CPoly, b2: &CPoly, tol: f64) -> Result<DerivedPencil> {
    let (p, q) = (b1.coeff(0), b2.coeff(0));
    let den = p * q.conj() - q * p.conj();
    if den.norm() <= tol {
        return Err(Error::DegeneratePeriodMap("b1(0), b2(0) are real-linearly dependent".into()));
    }
    let alpha = I * 2.0 * q / den;
    let beta = -I * 2.0 * p / den;
    let mut b0 = &b1.scale(alpha) + &b2.scale(beta);
    let top = b0.top();
    if top.norm() <= tol * b0.norm_inf().max(1.0) {
        return Err(Error::DegenerateB0(top.norm()));
    }
    b0 = b0.scale(Complex64::new(0.0, -2.0) / top);
    b0.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
    let d = b0.formal_degree();
    b0.coeffs_mut()[d] = Complex64::new(0.0, -2.0);
    let binf = b0.rho_conj();
    Ok(DerivedPencil { b0, binf, alpha, beta })
}

pub fn derived(basis: &PencilBasis, tol: f64) -> Result<DerivedPencil> {
    derived_pencil(&basis.b1, &basis.b2, tol)
}

/// `φ_a(b1)`, `φ_a(b2)` as rows: the B-periods and the Sym-path integral
/// divided by `2πi`.
pub fn phi_map(basis: &PencilBasis, lambda0: Complex64, quad: &QuadConfig) -> Result<DMatrix<f64>> {
    let g = basis.genus();
    let sym = sym_moments_at(&basis.curve, lambda0, quad)?;
    let mut m = DMatrix::<f64>::zeros(2, g + 1);
    let norm = Complex64::new(0.0, 2.0 * PI).inv();
    for (r, b) in [&basis.b1, &basis.b2].into_iter().enumerate() {
        let mut vals = b_periods_from(&basis.table, b);
        vals.push(pair(b, &sym));
        for (c, v) in vals.into_iter().enumerate() {
            let w = v * norm;
            if w.im.abs() > 1e-6 * (1.0 + w.re.abs()) {
                return Err(Error::Reality(format!(
                    "normalized period {c} of b{} has imaginary part {:e}",
                    r + 1,
                    w.im
                )));
            }
            m[(r, c)] = w.re;
        }
    }
    Ok(m)
}

fn gcd_i64(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd_i64(b, a % b) }
}

fn orthonormal_rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    // orthonormal basis of the row span (rank decided by a relative cut)
    let svd = linalg::sorted_svd(&m.transpose());
    let smax = svd.singular.first().copied().unwrap_or(0.0);
    (0..svd.singular.len())
        .filter(|&k| svd.singular[k] > 1e-12 * smax && k < m.ncols())
        .map(|k| svd.u.column(k).clone_owned().rows(0, m.ncols()).into_owned())
        .collect()
}

/// Largest principal angle between span `U` and span of `vs`.
fn largest_angle(u: &[DVector<f64>], vs: &[DVector<f64>]) -> f64 {
    let n = u[0].len();
    let mut a = DMatrix::<f64>::zeros(n, vs.len());
    for (k, v) in vs.iter().enumerate() {
        a.set_column(k, v);
    }
    let q = orthonormal_rows(&a.transpose());
    if q.len() < u.len() {
        return PI / 2.0;
    }
    let mut c = DMatrix::<f64>::zeros(u.len(), q.len());
    for (i, ui) in u.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            c[(i, j)] = ui.dot(qj);
        }
    }
    let s = linalg::sorted_svd(&c).singular;
    let smin = s.iter().take(u.len()).copied().fold(f64::INFINITY, f64::min).min(1.0);
    smin.acos()
}

/// Smallest largest-principal-angle between the row span of `matrix` and a
/// subspace of the same dimension spanned by integer vectors with entries
/// bounded by `max_den` in absolute value. Exhaustive over primitive
/// vectors when their number is small, otherwise over rounded scalings of
/// the span's basis vectors.
pub fn rational_plane_distance(matrix: &DMatrix<f64>, max_den: i64) -> f64 {
    let u = orthonormal_rows(matrix);
    if u.is_empty() {
        return 0.0;
    }
    let n = matrix.ncols();
    let side = (2 * max_den + 1) as f64;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if side.powi(n as i32) <= 2e6 {
        let mut v = vec![-max_den; n];
        loop {
            let g = v.iter().fold(0, |acc, &x| gcd_i64(acc, x));
            let first_nonzero = v.iter().find(|&&x| x != 0).copied().unwrap_or(0);
            if g == 1 && first_nonzero > 0 {
                candidates.push(DVector::from_iterator(n, v.iter().map(|&x| x as f64)));
            }
            let mut i = 0;
            while i < n {
                v[i] += 1;
                if v[i] <= max_den {
                    break;
                }
                v[i] = -max_den;
                i += 1;
            }
            if i == n {
                break;
            }
        }
    } else {
        let mut rng_dirs: Vec<DVector<f64>> = u.clone();
        if u.len() == 2 {
            for k in 1..64 {
                let t = PI * k as f64 / 64.0;
                rng_dirs.push(&u[0] * t.cos() + &u[1] * t.sin());
            }
        }
        for d in rng_dirs {
            let amax = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for den in 1..=max_den {
                let v = d.map(|x| (x / amax * den as f64).round());
                if v.iter().any(|&x| x != 0.0) {
                    candidates.push(v);
                }
            }
        }
    }
    // keep the candidates closest to the span
    let angle_to_span = |v: &DVector<f64>| {
        let nv = v.norm();
        let proj: f64 = u.iter().map(|ui| ui.dot(v).powi(2)).sum::<f64>().sqrt();
        (proj / nv).min(1.0).acos()
    };
    let mut scored: Vec<(f64, DVector<f64>)> = candidates.into_iter().map(|v| (angle_to_span(&v), v)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(64);
    if u.len() == 1 {
        return scored.first().map(|s| s.0).unwrap_or(PI / 2.0);
    }
    let mut best = PI / 2.0;
    for i in 0..scored.len() {
        for j in (i + 1)..scored.len() {
            if scored[i].0.max(scored[j].0) >= best {
                continue;
            }
            let ang = largest_angle(&u, &[scored[i].1.clone(), scored[j].1.clone()]);
            best = best.min(ang);
        }
    }
    best
}
