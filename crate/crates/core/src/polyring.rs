//! Complex polynomials with an explicit formal degree, the ρ-reality
//! structure `p_{d-i} = conj(p_i)`, root finding and tolerance-based
//! gcd/resultant machinery.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Polynomial `Σ coeffs[i] λ^i` of formal degree `coeffs.len() - 1`.
///
/// Trailing (top) zeros are kept: the formal degree decides how `rho_star`
/// reverses the coefficients.
#[derive(Clone, PartialEq)]
pub struct CPoly {
    coeffs: Vec<Complex64>,
}

impl CPoly {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        assert!(!coeffs.is_empty(), "a polynomial needs at least one coefficient");
        Self { coeffs }
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    pub fn zero(degree: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); degree + 1])
    }

    pub fn constant(c: Complex64) -> Self {
        Self::new(vec![c])
    }

    pub fn monomial(k: usize, c: Complex64) -> Self {
        let mut p = Self::zero(k);
        p.coeffs[k] = c;
        p
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        roots.iter().fold(Self::constant(Complex64::new(1.0, 0.0)), |acc, &r| {
            acc.mul_linear(r)
        })
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn formal_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, i: usize) -> Complex64 {
        self.coeffs.get(i).copied().unwrap_or_default()
    }

    pub fn top(&self) -> Complex64 {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// Value and first derivative by a single Horner sweep.
    pub fn eval_with_derivative(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero(0);
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    /// `λ · p` with formal degree raised by one.
    pub fn shift(&self) -> Self {
        let mut c = Vec::with_capacity(self.coeffs.len() + 1);
        c.push(Complex64::new(0.0, 0.0));
        c.extend_from_slice(&self.coeffs);
        Self::new(c)
    }

    /// `p · (λ - r)`.
    pub fn mul_linear(&self, r: Complex64) -> Self {
        let mut out = self.shift();
        for (i, &c) in self.coeffs.iter().enumerate() {
            out.coeffs[i] -= r * c;
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.coeffs.iter().map(|&c| c * s).collect())
    }

    pub fn conj(&self) -> Self {
        Self::new(self.coeffs.iter().map(|c| c.conj()).collect())
    }

    /// Re-declare the formal degree, padding with zeros or dropping top
    /// coefficients (which must then be negligible).
    pub fn with_formal_degree(&self, d: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.resize(d + 1, Complex64::new(0.0, 0.0));
        Self::new(c)
    }

    pub fn norm_inf(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn norm2(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Degree after stripping top coefficients with modulus `≤ tol · ‖p‖_∞`.
    /// Returns `None` for the zero polynomial.
    pub fn effective_degree(&self, tol: f64) -> Option<usize> {
        let scale = self.norm_inf();
        if scale == 0.0 {
            return None;
        }
        self.coeffs.iter().rposition(|c| c.norm() > tol * scale)
    }

    /// Copy truncated to its effective degree.
    pub fn trimmed(&self, tol: f64) -> Self {
        match self.effective_degree(tol) {
            Some(d) => Self::new(self.coeffs[..=d].to_vec()),
            None => Self::zero(0),
        }
    }

    pub fn monic(&self, tol: f64) -> Self {
        let t = self.trimmed(tol);
        let lead = t.top();
        t.scale(lead.inv())
    }

    /// Euclidean division `self = q · d + r` with `deg r < deg d` (effective
    /// degree of the divisor at `tol`).
    pub fn div_rem(&self, divisor: &CPoly, tol: f64) -> (CPoly, CPoly) {
        let d = divisor.trimmed(tol);
        let dd = d.formal_degree();
        let n = self.formal_degree();
        if n < dd {
            return (Self::zero(0), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let mut quot = vec![Complex64::new(0.0, 0.0); n - dd + 1];
        let lead = d.top();
        for k in (0..=n - dd).rev() {
            let c = rem[k + dd] / lead;
            quot[k] = c;
            for (j, &dc) in d.coeffs.iter().enumerate() {
                rem[k + j] -= c * dc;
            }
        }
        rem.truncate(dd.max(1));
        (Self::new(quot), Self::new(rem))
    }

    /// Coefficient reversal with respect to the formal degree:
    /// `result[i] = p[d - i]`.
    pub fn rho_star(&self) -> Self {
        Self::new(self.coeffs.iter().rev().copied().collect())
    }

    /// `conj(rho_star(p))`; ρ-real polynomials are its fixed points.
    pub fn rho_conj(&self) -> Self {
        Self::new(self.coeffs.iter().rev().map(|c| c.conj()).collect())
    }

    pub fn reality_check(&self, tol: f64) -> RealityReport {
        let d = self.formal_degree();
        let max_defect = (0..=d)
            .map(|i| (self.coeffs[d - i] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max);
        RealityReport {
            is_real: max_defect <= tol,
            max_defect,
        }
    }

    pub fn is_rho_real(&self, tol: f64) -> bool {
        self.reality_check(tol).is_real
    }

    /// Project onto the ρ-real polynomials of the same formal degree.
    pub fn rho_real_part(&self) -> Self {
        let r = self.rho_conj();
        Self::new(
            self.coeffs
                .iter()
                .zip(&r.coeffs)
                .map(|(&a, &b)| (a + b) * 0.5)
                .collect(),
        )
    }
}

impl fmt::Debug for CPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CPoly[")?;
        for (i, c) in self.coeffs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{:.6}{:+.6}i", c.re, c.im)?;
        }
        write!(f, "]")
    }
}

impl Serialize for CPoly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.coeffs.iter().map(|c| [c.re, c.im]).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CPoly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        if pairs.is_empty() {
            return Err(serde::de::Error::custom("polynomial needs at least one coefficient"));
        }
        Ok(CPoly::new(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect()))
    }
}

impl Add for &CPoly {
    type Output = CPoly;
    fn add(self, rhs: &CPoly) -> CPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        CPoly::new((0..n).map(|i| self.coeff(i) + rhs.coeff(i)).collect())
    }
}

impl Sub for &CPoly {
    type Output = CPoly;
    fn sub(self, rhs: &CPoly) -> CPoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        CPoly::new((0..n).map(|i| self.coeff(i) - rhs.coeff(i)).collect())
    }
}

impl Mul for &CPoly {
    type Output = CPoly;
    fn mul(self, rhs: &CPoly) -> CPoly {
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        CPoly::new(out)
    }
}

impl Neg for &CPoly {
    type Output = CPoly;
    fn neg(self) -> CPoly {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for CPoly {
            type Output = CPoly;
            fn $m(self, rhs: CPoly) -> CPoly {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealityReport {
    pub is_real: bool,
    pub max_defect: f64,
}

pub fn rho_star(p: &CPoly) -> CPoly {
    p.rho_star()
}

pub fn reality_check(p: &CPoly, tol: f64) -> RealityReport {
    p.reality_check(tol)
}

// ---------------------------------------------------------------------------
// Real coordinates of ρ-real polynomials

/// Basis of the real vector space `P^d_R` of ρ-real polynomials of formal
/// degree `d` (dimension `d + 1`).
///
/// Coordinate order: `Re p_0`, `Im p_0`, then the middle block
/// `Re p_1, Im p_1, Re p_2, Im p_2, …` over `1 ≤ i < d - i`, and finally the
/// real self-paired coefficient `p_{d/2}` when `d` is even. For `d = 0` the
/// single coordinate is the real constant.
pub fn rho_real_basis(d: usize) -> Vec<CPoly> {
    let one = Complex64::new(1.0, 0.0);
    if d == 0 {
        return vec![CPoly::constant(one)];
    }
    let mut basis = Vec::with_capacity(d + 1);
    let pair = |i: usize, c: Complex64| {
        let mut p = CPoly::zero(d);
        p.coeffs[i] = c;
        p.coeffs[d - i] = c.conj();
        p
    };
    basis.push(pair(0, one));
    basis.push(pair(0, I));
    let mut i = 1;
    while i < d - i {
        basis.push(pair(i, one));
        basis.push(pair(i, I));
        i += 1;
    }
    if d.is_multiple_of(2) {
        basis.push(CPoly::monomial(d, Complex64::new(0.0, 0.0)).with_formal_degree(d));
        basis.last_mut().unwrap().coeffs[d / 2] = one;
    }
    debug_assert_eq!(basis.len(), d + 1);
    basis
}

/// Real coordinates of a ρ-real polynomial in the [`rho_real_basis`] order.
/// The ρ-real part of `p` is used, so slightly non-real input is projected.
pub fn rho_real_coords(p: &CPoly) -> Vec<f64> {
    let d = p.formal_degree();
    let p = p.rho_real_part();
    if d == 0 {
        return vec![p.coeffs[0].re];
    }
    let mut x = vec![p.coeffs[0].re, p.coeffs[0].im];
    let mut i = 1;
    while i < d - i {
        x.push(p.coeffs[i].re);
        x.push(p.coeffs[i].im);
        i += 1;
    }
    if d.is_multiple_of(2) {
        x.push(p.coeffs[d / 2].re);
    }
    x
}

pub fn from_rho_real_coords(d: usize, x: &[f64]) -> CPoly {
    assert_eq!(x.len(), d + 1, "P^d_R has real dimension d + 1");
    rho_real_basis(d)
        .iter()
        .zip(x)
        .fold(CPoly::zero(d), |acc, (e, &xi)| &acc + &e.scale(Complex64::new(xi, 0.0)))
}

// ---------------------------------------------------------------------------
// Roots

/// All roots (with multiplicity) of `p` after stripping leading coefficients
/// below `tol · ‖p‖_∞`, by Aberth–Ehrlich iteration with Newton polishing.
pub fn roots(p: &CPoly, tol: f64) -> Result<Vec<Complex64>> {
    let deg = p.effective_degree(tol).ok_or(Error::ZeroPolynomial)?;
    let t = CPoly::new(p.coeffs[..=deg].to_vec());
    // exact zero roots
    let zeros = t.coeffs.iter().take_while(|c| c.norm() == 0.0).count();
    let mut out = vec![Complex64::new(0.0, 0.0); zeros];
    let core = CPoly::new(t.coeffs[zeros..].to_vec());
    out.extend(aberth(&core));
    Ok(out)
}

fn aberth(p: &CPoly) -> Vec<Complex64> {
    let n = p.formal_degree();
    match n {
        0 => return vec![],
        1 => return vec![-p.coeffs[0] / p.coeffs[1]],
        _ => {}
    }
    let monic = p.scale(p.top().inv());
    // initial radius: geometric mean of root moduli
    let r0 = monic.coeffs[0].norm().powf(1.0 / n as f64).max(1e-3);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(r0, 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4))
        .collect();
    let eps = f64::EPSILON;
    for _ in 0..2000 {
        let mut max_step: f64 = 0.0;
        for k in 0..n {
            let (v, dv) = monic.eval_with_derivative(z[k]);
            if v.norm() == 0.0 {
                continue;
            }
            let ratio = if dv.norm() == 0.0 { Complex64::new(1e-8, 0.0) } else { v / dv };
            let s: Complex64 = (0..n)
                .filter(|&j| j != k)
                .map(|j| {
                    let d = z[k] - z[j];
                    if d.norm() == 0.0 { Complex64::new(0.0, 0.0) } else { d.inv() }
                })
                .sum();
            let denom = Complex64::new(1.0, 0.0) - ratio * s;
            let w = if denom.norm() == 0.0 { ratio } else { ratio / denom };
            z[k] -= w;
            max_step = max_step.max(w.norm() / (1.0 + z[k].norm()));
        }
        if max_step < 4.0 * eps {
            break;
        }
    }
    // Newton polish on the monic polynomial, keeping only improvements
    for zk in z.iter_mut() {
        for _ in 0..3 {
            let (v, dv) = monic.eval_with_derivative(*zk);
            if dv.norm() == 0.0 {
                break;
            }
            let cand = *zk - v / dv;
            if monic.eval(cand).norm() < v.norm() {
                *zk = cand;
            } else {
                break;
            }
        }
    }
    z
}

// ---------------------------------------------------------------------------
// GCD and resultant

/// Sylvester-type subresultant system whose null vectors `(u, v)` satisfy
/// `u·p + v·q = 0` with `deg u ≤ deg q - k`, `deg v ≤ deg p - k`.
fn subresultant(p: &CPoly, q: &CPoly, k: usize) -> DMatrix<Complex64> {
    let n = p.formal_degree();
    let m = q.formal_degree();
    let rows = n + m - k + 1;
    let cu = m - k + 1;
    let cv = n - k + 1;
    let mut s = DMatrix::<Complex64>::zeros(rows, cu + cv);
    for j in 0..cu {
        for (i, &c) in p.coeffs.iter().enumerate() {
            s[(i + j, j)] = c;
        }
    }
    for j in 0..cv {
        for (i, &c) in q.coeffs.iter().enumerate() {
            s[(i + j, cu + j)] = c;
        }
    }
    s
}

fn convolution_matrix(f: &CPoly, k: usize) -> DMatrix<Complex64> {
    // columns: coefficients of f·λ^j, j = 0..=k
    let rows = f.formal_degree() + k + 1;
    let mut m = DMatrix::<Complex64>::zeros(rows, k + 1);
    for j in 0..=k {
        for (i, &c) in f.coeffs.iter().enumerate() {
            m[(i + j, j)] = c;
        }
    }
    m
}

/// Smallest singular value of the degree-`k` subresultant system of the
/// unit-normalized pair, i.e. the certificate used by [`approx_gcd`].
pub fn gcd_certificate(p: &CPoly, q: &CPoly, k: usize, tol: f64) -> f64 {
    let p = p.trimmed(tol);
    let q = q.trimmed(tol);
    let p = p.scale(Complex64::new(1.0 / p.norm2(), 0.0));
    let q = q.scale(Complex64::new(1.0 / q.norm2(), 0.0));
    if k > p.formal_degree().min(q.formal_degree()) || k == 0 {
        return f64::INFINITY;
    }
    linalg::complex_smallest_singular(&subresultant(&p, &q, k)).0
}

/// Monic approximate gcd of maximal degree such that the subresultant
/// system certifying divisibility has smallest singular value
/// `≤ tol · (‖p‖ + ‖q‖)` (both inputs unit-normalized first).
pub fn approx_gcd(p: &CPoly, q: &CPoly, tol: f64) -> CPoly {
    let one = CPoly::constant(Complex64::new(1.0, 0.0));
    let (pn, qn) = (p.norm_inf(), q.norm_inf());
    if pn == 0.0 && qn == 0.0 {
        log::debug!("approx_gcd of two zero polynomials; returning 1");
        return one;
    }
    if qn == 0.0 {
        return p.monic(tol);
    }
    if pn == 0.0 {
        return q.monic(tol);
    }
    let p = p.trimmed(tol);
    let q = q.trimmed(tol);
    let p = p.scale(Complex64::new(1.0 / p.norm2(), 0.0));
    let q = q.scale(Complex64::new(1.0 / q.norm2(), 0.0));
    let n = p.formal_degree();
    let m = q.formal_degree();
    let threshold = tol * 2.0;
    for k in (1..=n.min(m)).rev() {
        let s = subresultant(&p, &q, k);
        let (smin, null) = linalg::complex_smallest_singular(&s);
        if smin > threshold {
            continue;
        }
        let cu = m - k + 1;
        // u = q/g, v = -p/g
        let q_hat = CPoly::new(null.rows(0, cu).iter().copied().collect());
        let p_hat = CPoly::new(null.rows(cu, n - k + 1).iter().map(|c| -c).collect());
        let a1 = convolution_matrix(&p_hat, k);
        let a2 = convolution_matrix(&q_hat, k);
        let mut a = DMatrix::<Complex64>::zeros(a1.nrows() + a2.nrows(), k + 1);
        a.view_mut((0, 0), a1.shape()).copy_from(&a1);
        a.view_mut((a1.nrows(), 0), a2.shape()).copy_from(&a2);
        let mut rhs = DVector::<Complex64>::zeros(a.nrows());
        for (i, &c) in p.coeffs.iter().enumerate() {
            rhs[i] = c;
        }
        for (i, &c) in q.coeffs.iter().enumerate() {
            rhs[a1.nrows() + i] = c;
        }
        let g = linalg::complex_lstsq(&a, &rhs);
        let g = CPoly::new(g.iter().copied().collect());
        return g.scale(g.top().inv());
    }
    one
}

/// Determinant of the Sylvester matrix at effective degrees; equals
/// `lead(p)^{deg q} · Π q(r_i)` over the roots `r_i` of `p`.
pub fn resultant(p: &CPoly, q: &CPoly) -> Complex64 {
    let p = p.trimmed(0.0);
    let q = q.trimmed(0.0);
    let n = p.formal_degree();
    let m = q.formal_degree();
    if n == 0 {
        return p.coeffs[0].powu(m as u32);
    }
    if m == 0 {
        return q.coeffs[0].powu(n as u32);
    }
    let size = n + m;
    let mut s = DMatrix::<Complex64>::zeros(size, size);
    for r in 0..m {
        for (j, &c) in p.coeffs.iter().rev().enumerate() {
            s[(r, r + j)] = c;
        }
    }
    for r in 0..n {
        for (j, &c) in q.coeffs.iter().rev().enumerate() {
            s[(m + r, r + j)] = c;
        }
    }
    s.determinant()
}
