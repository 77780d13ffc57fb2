//! Deformations of spectral data: attaching a handle at a point of the unit
//! circle, the infinitesimal Whitham system `(ȧ, ḃ1, ḃ2)` driven by a
//! Bézout triple `c1 b2 − c2 b1 = Q a`, the rotation tangent, and RK4
//! integration of the isoperiodic flow in root coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::curve::{build_curve, CurveSpec, SpectralCurve};
use crate::error::{Error, Result};
use crate::invariants::classify;
use crate::linalg::lstsq_min_norm;
use crate::periods::{b_periods_from, solve_ba, PencilBasis};
use crate::polyring::{approx_gcd, from_rho_real_coords, rho_real_basis, rho_real_coords, roots, CPoly};
use crate::quadrature::QuadConfig;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Largest coefficient of `r` relative to `scale` (zero when both vanish).
fn relative(r: &CPoly, scale: f64) -> f64 {
    let n = r.norm_inf();
    if n == 0.0 {
        0.0
    } else {
        n / scale.max(f64::MIN_POSITIVE)
    }
}

/// Residual bound applied to every produced tangent.
pub const RESIDUAL_BOUND: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct WhithamTangent {
    pub a_dot: CPoly,
    pub b1_dot: CPoly,
    pub b2_dot: CPoly,
    pub c1: CPoly,
    pub c2: CPoly,
    pub q: CPoly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentResiduals {
    pub bezout: f64,
    pub derivative: [f64; 2],
    pub compatibility: f64,
}

impl TangentResiduals {
    pub fn max(&self) -> f64 {
        self.bezout.max(self.derivative[0]).max(self.derivative[1]).max(self.compatibility)
    }
}

/// `i (2λ a c′ − a c − λ a′ c)`, the left side of the derivative equation.
fn derivative_lhs(a: &CPoly, c: &CPoly) -> CPoly {
    let lam_c1 = c.derivative().shift();
    let lam_a1 = a.derivative().shift();
    let t = &(&(a * &lam_c1).scale(re(2.0)) - &(a * c)) - &(&lam_a1 * c);
    t.scale(I)
}

impl WhithamTangent {
    /// Relative residuals of the Bézout identity, the two derivative
    /// equations `i(2λac′ − ac − λa′c) = 2aḃ − ȧb`, and the compatibility
    /// equation `2(iλ(c1′c2 − c2′c1) + c1ḃ2 − c2ḃ1) = ȧQ`.
    pub fn residuals(&self, a: &CPoly, b1: &CPoly, b2: &CPoly) -> TangentResiduals {
        let n = |p: &CPoly| p.norm_inf();
        let bez = &(&(&self.c1 * b2) - &(&self.c2 * b1)) - &(&self.q * a);
        let bez_scale = n(&self.c1) * n(b2) + n(&self.c2) * n(b1) + n(&self.q) * n(a);
        let mut deriv = [0.0; 2];
        for (k, (b, (bd, c))) in [b1, b2].into_iter().zip([(&self.b1_dot, &self.c1), (&self.b2_dot, &self.c2)]).enumerate() {
            let lhs = derivative_lhs(a, c);
            let rhs = &(a * bd).scale(re(2.0)) - &(&self.a_dot * b);
            let scale = 4.0 * n(a) * n(c) * (b.formal_degree() + 1) as f64 + 2.0 * n(a) * n(bd) + n(&self.a_dot) * n(b);
            deriv[k] = relative(&(&lhs - &rhs), scale);
        }
        let wr = &(&self.c1.derivative() * &self.c2) - &(&self.c2.derivative() * &self.c1);
        let lhs = &(&wr.shift().scale(I) + &(&self.c1 * &self.b2_dot)) - &(&self.c2 * &self.b1_dot);
        let lhs = lhs.scale(re(2.0));
        let rhs = &self.a_dot * &self.q;
        let deg = self.c1.formal_degree().max(1) as f64;
        let comp_scale = 2.0 * (2.0 * deg * n(&self.c1) * n(&self.c2) + n(&self.c1) * n(&self.b2_dot) + n(&self.c2) * n(&self.b1_dot))
            + n(&self.a_dot) * n(&self.q);
        TangentResiduals {
            bezout: relative(&bez, bez_scale),
            derivative: deriv,
            compatibility: relative(&(&lhs - &rhs), comp_scale),
        }
    }
}

/// `Q` as a ρ-real polynomial of formal degree 2, or an input error.
pub fn validate_q(q: &CPoly, tol: f64) -> Result<CPoly> {
    if q.formal_degree() > 2 || (q.formal_degree() < 2 && q.norm_inf() > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Q must have formal degree 2, got {}",
            q.formal_degree()
        )));
    }
    let q = q.with_formal_degree(2);
    let report = q.reality_check(tol * q.norm_inf().max(1.0));
    if !report.is_real {
        return Err(Error::InvalidInput(format!(
            "Q must be ρ-real (defect {:e})",
            report.max_defect
        )));
    }
    Ok(q)
}

/// ρ-real `(c1, c2)` of formal degree `g + 1` with `c1 b2 − c2 b1 = Q a`:
/// the minimum-norm solution in real coordinates, then shifted by
/// `A (b1, b2) + i B (λ+λ₀)/(λ−λ₀) (b1, b2)` when `freedom = (A, B)` is
/// given (the `B` term needs a gcd `λ − λ₀`).
pub fn bezout_solve(
    a: &CPoly,
    b1: &CPoly,
    b2: &CPoly,
    q: &CPoly,
    tol: f64,
    freedom: Option<(f64, f64)>,
) -> Result<(CPoly, CPoly)> {
    let q = validate_q(q, tol)?;
    let d = b1.formal_degree();
    let basis = rho_real_basis(d);
    let n = basis.len();
    let target = &q * a;
    let out_deg = target.formal_degree();
    let cols: Vec<Vec<f64>> = (0..2 * n)
        .map(|k| {
            let image = if k < n {
                (&basis[k] * b2).with_formal_degree(out_deg)
            } else {
                (-&(&basis[k - n] * b1)).with_formal_degree(out_deg)
            };
            rho_real_coords(&image)
        })
        .collect();
    let rows = cols[0].len();
    let m = DMatrix::from_fn(rows, 2 * n, |r, c| cols[c][r]);
    let rhs = DVector::from_vec(rho_real_coords(&target));
    let (x, _) = lstsq_min_norm(&m, &rhs, 1e-10);
    let mut c1 = from_rho_real_coords(d, &x.as_slice()[..n]);
    let mut c2 = from_rho_real_coords(d, &x.as_slice()[n..]);
    let res = &(&(&c1 * b2) - &(&c2 * b1)) - &target;
    let scale = (b1.norm_inf() + b2.norm_inf()) * (c1.norm_inf() + c2.norm_inf()) + target.norm_inf();
    let rel = relative(&res, scale);
    if rel > tol.max(1e-12) * 1e2 {
        return Err(Error::NotDivisible(rel));
    }
    if let Some((fa, fb)) = freedom {
        c1 = &c1 + &b1.scale(re(fa));
        c2 = &c2 + &b2.scale(re(fa));
        if fb != 0.0 {
            let g = approx_gcd(b1, b2, tol);
            if g.formal_degree() != 1 {
                return Err(Error::Precondition(format!(
                    "the B freedom needs a gcd of degree 1, found degree {}",
                    g.formal_degree()
                )));
            }
            let lambda0 = -g.coeff(0);
            let factor = CPoly::new(vec![lambda0 * I * fb, I * fb]);
            for (c, b) in [(&mut c1, b1), (&mut c2, b2)] {
                let (hat, _) = b.div_rem(&g, 0.0);
                *c = &*c + &(&factor * &hat);
            }
        }
    }
    Ok((c1, c2))
}

/// Solve the derivative equations for `(ȧ, ḃ1, ḃ2)` given `c1, c2`, with
/// `ȧ, ḃk` ρ-real and the gauge `Re(conj(lead a)·lead ȧ) = 0`.
pub fn solve_tangent(a: &CPoly, b1: &CPoly, b2: &CPoly, c1: &CPoly, c2: &CPoly, q: &CPoly) -> Result<WhithamTangent> {
    let da = a.formal_degree();
    let db = b1.formal_degree();
    let a_basis = rho_real_basis(da);
    let b_basis = rho_real_basis(db);
    let (na, nb) = (a_basis.len(), b_basis.len());
    let out_deg = da + db;
    let eq_len = out_deg + 1;
    let unknowns = na + 2 * nb;
    let rows = 4 * eq_len + 1;
    let mut m = DMatrix::<f64>::zeros(rows, unknowns);
    let mut put = |col: usize, block: usize, p: &CPoly| {
        let p = p.with_formal_degree(out_deg);
        for (i, z) in p.coeffs().iter().enumerate() {
            m[(block * 2 * eq_len + i, col)] = z.re;
            m[(block * 2 * eq_len + eq_len + i, col)] = z.im;
        }
    };
    // columns of ȧ enter both equations as −ȧ b_k; ḃ_k enters equation k as 2a ḃ_k
    for (j, e) in a_basis.iter().enumerate() {
        put(j, 0, &-&(e * b1));
        put(j, 1, &-&(e * b2));
    }
    for (j, e) in b_basis.iter().enumerate() {
        put(na + j, 0, &(a * e).scale(re(2.0)));
        put(na + nb + j, 1, &(a * e).scale(re(2.0)));
    }
    let lead = a.top().conj();
    for (j, e) in a_basis.iter().enumerate() {
        m[(rows - 1, j)] = (lead * e.top()).re * a.norm_inf();
    }
    let mut rhs = DVector::<f64>::zeros(rows);
    for (block, c) in [c1, c2].into_iter().enumerate() {
        let r = derivative_lhs(a, c).with_formal_degree(out_deg);
        for (i, z) in r.coeffs().iter().enumerate() {
            rhs[block * 2 * eq_len + i] = z.re;
            rhs[block * 2 * eq_len + eq_len + i] = z.im;
        }
    }
    let (x, rank) = lstsq_min_norm(&m, &rhs, 1e-10);
    if rank < unknowns {
        let s = crate::linalg::sorted_svd(&m).singular;
        let smin = s[unknowns - 1] / s[0];
        return Err(Error::NonuniqueTangent(smin));
    }
    let xs = x.as_slice();
    Ok(WhithamTangent {
        a_dot: from_rho_real_coords(da, &xs[..na]),
        b1_dot: from_rho_real_coords(db, &xs[na..na + nb]),
        b2_dot: from_rho_real_coords(db, &xs[na + nb..]),
        c1: c1.clone(),
        c2: c2.clone(),
        q: q.with_formal_degree(2),
    })
}

/// Whitham tangent for an explicit pencil; verifies all residuals.
pub fn tangent_for(
    a: &CPoly,
    b1: &CPoly,
    b2: &CPoly,
    q: &CPoly,
    freedom: Option<(f64, f64)>,
    tol: f64,
) -> Result<WhithamTangent> {
    let (c1, c2) = bezout_solve(a, b1, b2, q, tol, freedom)?;
    let t = solve_tangent(a, b1, b2, &c1, &c2, q)?;
    let r = t.residuals(a, b1, b2);
    if r.max() > RESIDUAL_BOUND {
        return Err(Error::CheckFailed {
            what: "Whitham tangent residuals".into(),
            expected: format!("≤ {RESIDUAL_BOUND:e}"),
            actual: format!("{r:?}"),
        });
    }
    Ok(t)
}

pub fn whitham_tangent(curve: &SpectralCurve, basis: &PencilBasis, q: &CPoly, tol: f64) -> Result<WhithamTangent> {
    tangent_for(&curve.a, &basis.b1, &basis.b2, q, None, tol)
}

/// Tangent of the rotation `η ↦ e^{iφ}η` in the ρ-real gauge:
/// `ȧ = iλa′ − i g a`, `ḃk = iλbk′ − i(g+1)/2 bk`, `ck = bk`, `Q = 0`.
pub fn rotation_tangent(curve: &SpectralCurve, basis: &PencilBasis) -> WhithamTangent {
    let g = curve.genus() as f64;
    let a = &curve.a;
    let a_dot = &a.derivative().shift().scale(I) - &a.scale(I * g);
    let rot = |b: &CPoly| &b.derivative().shift().scale(I) - &b.scale(I * (g + 1.0) / 2.0);
    WhithamTangent {
        a_dot: a_dot.with_formal_degree(a.formal_degree()),
        b1_dot: rot(&basis.b1).with_formal_degree(basis.b1.formal_degree()),
        b2_dot: rot(&basis.b2).with_formal_degree(basis.b2.formal_degree()),
        c1: basis.b1.clone(),
        c2: basis.b2.clone(),
        q: CPoly::zero(2),
    }
}

/// Root velocities `η̇ = −ȧ(η)/a′(η)` at the simple roots `η` of `a`.
pub fn root_velocity(a: &CPoly, a_dot: &CPoly, eta: &[Complex64]) -> Vec<Complex64> {
    eta.iter()
        .map(|&e| {
            let (_, d) = a.eval_with_derivative(e);
            -a_dot.eval(e) / d
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Handles

#[derive(Debug, Clone, Serialize)]
pub struct HandleDeformation {
    #[serde(with = "crate::pairs::one")]
    pub alpha: Complex64,
    #[serde(with = "crate::pairs::one")]
    pub sqrt_alpha_bar: Complex64,
    pub t: f64,
    pub a_t: CPoly,
    pub b_t: CPoly,
    pub spec: CurveSpec,
    #[serde(skip)]
    pub curve: SpectralCurve,
    #[serde(skip)]
    pub basis: PencilBasis,
}

fn unit(alpha: Complex64) -> Result<Complex64> {
    if !alpha.is_finite() || (alpha.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("α = {alpha} is not on the unit circle")));
    }
    Ok(alpha / alpha.norm())
}

/// `(λ − α e^t)(e^{−t} − conj(α) λ) a(λ)`, the genus-raising factor with the
/// sign that keeps `λ^{−g−1} a_t` positive on the circle.
pub fn handle_polynomial(a: &CPoly, alpha: Complex64, t: f64) -> CPoly {
    let outer = alpha * t.exp();
    let factor = CPoly::new(vec![-outer * (-t).exp(), re((-t).exp()) + alpha.conj() * outer]);
    let factor = &factor + &CPoly::new(vec![ZERO, ZERO, -alpha.conj()]);
    &factor * a
}

/// Attach a handle at `α ∈ S¹` with parameter `t ≠ 0` and continue the
/// differential `b ∈ B_a` to `b_t ∈ B_{a_t}` with
/// `b_t(0) = −i α √conj(α) b(0)`; `sqrt_choice = ±1` picks the root.
pub fn attach_handle(
    curve: &SpectralCurve,
    b: &CPoly,
    alpha: Complex64,
    sqrt_choice: f64,
    t: f64,
    quad: &QuadConfig,
    tol: f64,
) -> Result<HandleDeformation> {
    let alpha = unit(alpha)?;
    if t == 0.0 {
        return Err(Error::NodalCurve);
    }
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("t = {t} is not finite")));
    }
    let sqrt_alpha_bar = alpha.conj().sqrt() * sqrt_choice.signum();
    let mut eta = curve.spec.eta.clone();
    eta.push(alpha * (-t.abs()).exp());
    let spec = CurveSpec::new(eta);
    let new_curve = build_curve(&spec, tol)?;
    let a_t = handle_polynomial(&curve.a, alpha, t);
    let mismatch = (&a_t - &new_curve.a).norm_inf() / a_t.norm_inf();
    if mismatch > 1e-10 {
        return Err(Error::Invariant(format!(
            "handle polynomial differs from the rebuilt curve by {mismatch:e}"
        )));
    }
    let basis = solve_ba(&new_curve, quad)?;
    let target = -I * alpha * sqrt_alpha_bar * b.coeff(0);
    let b_t = basis.element_with_value_at_zero(target);
    Ok(HandleDeformation {
        alpha,
        sqrt_alpha_bar,
        t,
        a_t,
        b_t,
        spec,
        curve: new_curve,
        basis,
    })
}

/// Largest `ε = 2^{-k}·0.5` for which the handle at `α` validates.
pub fn handle_epsilon(curve: &SpectralCurve, alpha: Complex64, tol: f64) -> Result<f64> {
    let alpha = unit(alpha)?;
    let mut eps: f64 = 0.5;
    for _ in 0..40 {
        let mut eta = curve.spec.eta.clone();
        eta.push(alpha * (-eps).exp());
        if build_curve(&CurveSpec::new(eta), tol).is_ok() {
            return Ok(eps);
        }
        eps *= 0.5;
    }
    Err(Error::InvalidCurve(format!("no valid handle at α = {alpha}")))
}

/// `d arg f̃ / dθ` at `λ = e^{iθ}`, with `f̃ = (b1 + i b2)/(b1 − i b2)`.
pub fn f_tilde_speed(b1: &CPoly, b2: &CPoly, lam: Complex64) -> f64 {
    let p = b1 + &b2.scale(I);
    let q = b1 - &b2.scale(I);
    let (pv, pd) = p.eval_with_derivative(lam);
    let (qv, qd) = q.eval_with_derivative(lam);
    (lam * (pd / pv - qd / qv)).re
}

/// `b1′ b2 − b1 b2′`, whose roots are the critical points of `f = b1/b2`.
pub fn wronskian(b1: &CPoly, b2: &CPoly) -> CPoly {
    &(&b1.derivative() * b2) - &(b1 * &b2.derivative())
}

/// Critical points of `f` on the unit circle (roots of the Wronskian within
/// `1e-6` of `S¹`, projected onto it).
pub fn s1_critical_points(b1: &CPoly, b2: &CPoly) -> Result<Vec<Complex64>> {
    let w = wronskian(b1, b2);
    Ok(roots(&w, 1e-12)?
        .into_iter()
        .filter(|r| (r.norm() - 1.0).abs() < 1e-6)
        .map(|r| r / r.norm())
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HandleCheck {
    pub deg_f_before: usize,
    pub deg_f_after: usize,
    pub winding_before: i64,
    pub winding_after: i64,
    /// Sign of `d arg f̃/dθ` at `α` before attaching.
    pub df_sign: i64,
    #[serde(with = "crate::pairs::vec")]
    pub new_s1_critical_points: Vec<Complex64>,
    pub genus_after: usize,
    pub spec_after: CurveSpec,
}

/// Attach a handle and verify the degree law, the winding jump
/// `n_t = n − sign(df̃(α))` and the two new simple critical points on `S¹`
/// near `α`.
pub fn handle_invariant_check(
    curve: &SpectralCurve,
    basis: &PencilBasis,
    alpha: Complex64,
    t: f64,
    quad: &QuadConfig,
    tol: f64,
) -> Result<HandleCheck> {
    let alpha = unit(alpha)?;
    let before = classify(curve, basis, tol)?;
    if before.gcd_degree != 0 {
        return Err(Error::Precondition(format!(
            "pencil has a common factor of degree {}",
            before.gcd_degree
        )));
    }
    let speed = f_tilde_speed(&basis.b1, &basis.b2, alpha);
    let w_alpha = wronskian(&basis.b1, &basis.b2).eval(alpha).norm();
    if w_alpha <= 10.0 * tol * basis.b1.norm_inf() * basis.b2.norm_inf() {
        return Err(Error::Precondition(format!("df vanishes at α = {alpha} (|W(α)| = {w_alpha:e})")));
    }
    let handle = attach_handle(curve, &basis.b1, alpha, 1.0, t, quad, tol)?;
    let after = classify(&handle.curve, &handle.basis, tol)?;
    let df_sign = if speed > 0.0 { 1 } else { -1 };
    let old_crit = s1_critical_points(&basis.b1, &basis.b2)?;
    let new_crit_all = s1_critical_points(&handle.basis.b1, &handle.basis.b2)?;
    // match each old critical point to its nearest continuation
    let mut remaining = new_crit_all.clone();
    for o in &old_crit {
        if let Some((k, _)) = remaining
            .iter()
            .enumerate()
            .map(|(k, r)| (k, (r - o).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
        {
            remaining.swap_remove(k);
        }
    }
    remaining.sort_by(|x, y| (x - alpha).norm().total_cmp(&(y - alpha).norm()));
    let check = HandleCheck {
        deg_f_before: before.deg_f,
        deg_f_after: after.deg_f,
        winding_before: before.winding(),
        winding_after: after.winding(),
        df_sign,
        new_s1_critical_points: remaining.clone(),
        genus_after: handle.curve.genus(),
        spec_after: handle.spec.clone(),
    };
    let fail = |what: &str, expected: String, actual: String| Error::CheckFailed {
        what: what.into(),
        expected,
        actual,
    };
    if check.deg_f_after != check.deg_f_before + 1 {
        return Err(fail("deg f_t = deg f + 1", (check.deg_f_before + 1).to_string(), check.deg_f_after.to_string()));
    }
    if check.winding_after != check.winding_before - df_sign {
        return Err(fail(
            "n(f̃_t) = n(f̃) − sign(df̃(α))",
            (check.winding_before - df_sign).to_string(),
            check.winding_after.to_string(),
        ));
    }
    let near = remaining.iter().filter(|r| (*r - alpha).norm() < 0.5).count();
    let distinct = remaining.len() == 2 && (remaining[0] - remaining[1]).norm() > 1e-9;
    if remaining.len() != 2 || near != 2 || !distinct {
        return Err(fail(
            "two new simple critical points on S¹ near α",
            "2".into(),
            format!("{remaining:?}"),
        ));
    }
    Ok(check)
}

// ---------------------------------------------------------------------------
// Flow

/// Direction of a flow step: `Q` and the optional Bézout freedom `(A, B)`.
#[derive(Debug, Clone)]
pub struct FlowDirection {
    pub q: CPoly,
    pub freedom: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowStep {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    #[serde(with = "crate::pairs::vec")]
    pub eta: Vec<Complex64>,
    pub b1: CPoly,
    pub b2: CPoly,
    /// B-periods of `Θ_{b1}` then of `Θ_{b2}`.
    #[serde(with = "crate::pairs::vec")]
    pub b_periods: Vec<Complex64>,
    /// Largest change of any B-period since the start.
    pub drift: f64,
    /// Distance of the integrated pencil from the re-solved `B_a` before
    /// projection.
    pub off_pencil: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub steps: Vec<FlowStep>,
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn max_drift(&self) -> f64 {
        self.steps.iter().map(|s| s.drift).fold(0.0, f64::max)
    }
}

#[derive(Clone)]
struct State {
    eta: Vec<Complex64>,
    b1: CPoly,
    b2: CPoly,
}

impl State {
    fn axpy(&self, h: f64, d: &State) -> State {
        State {
            eta: self.eta.iter().zip(&d.eta).map(|(e, de)| e + de * h).collect(),
            b1: &self.b1 + &d.b1.scale(re(h)),
            b2: &self.b2 + &d.b2.scale(re(h)),
        }
    }
}

fn velocity<F>(s: &State, dir: &F, tol: f64) -> Result<State>
where
    F: Fn(&SpectralCurve, &CPoly, &CPoly) -> Result<FlowDirection>,
{
    let curve = build_curve(&CurveSpec::new(s.eta.clone()), tol)?;
    let d = dir(&curve, &s.b1, &s.b2)?;
    let t = tangent_for(&curve.a, &s.b1, &s.b2, &d.q, d.freedom, tol)?;
    Ok(State {
        eta: root_velocity(&curve.a, &t.a_dot, &s.eta),
        b1: t.b1_dot,
        b2: t.b2_dot,
    })
}

fn rk4<F>(s: &State, h: f64, dir: &F, tol: f64) -> Result<State>
where
    F: Fn(&SpectralCurve, &CPoly, &CPoly) -> Result<FlowDirection>,
{
    let k1 = velocity(s, dir, tol)?;
    let k2 = velocity(&s.axpy(h / 2.0, &k1), dir, tol)?;
    let k3 = velocity(&s.axpy(h / 2.0, &k2), dir, tol)?;
    let k4 = velocity(&s.axpy(h, &k3), dir, tol)?;
    let mut out = s.axpy(h / 6.0, &k1);
    out = out.axpy(h / 3.0, &k2);
    out = out.axpy(h / 3.0, &k3);
    Ok(out.axpy(h / 6.0, &k4))
}

fn periods_of(basis: &PencilBasis, b1: &CPoly, b2: &CPoly) -> Vec<Complex64> {
    let mut v = b_periods_from(&basis.table, b1);
    v.extend(b_periods_from(&basis.table, b2));
    v
}

/// Integrate the Whitham flow from `curve` with its normalized pencil as
/// initial `(b1, b2)` by classical RK4 in `(η, b1, b2)`. After each step the
/// pencil is re-solved and `(b1, b2)` projected onto it by their values at
/// 0. A step is retried at half size (up to 8 times) when the curve fails
/// validation or a B-period moves by more than `10·tol` across it.
pub fn flow<F>(curve: &SpectralCurve, dir: F, dt: f64, steps: usize, quad: &QuadConfig, tol: f64) -> Result<Trajectory>
where
    F: Fn(&SpectralCurve, &CPoly, &CPoly) -> Result<FlowDirection>,
{
    let basis = solve_ba(curve, quad)?;
    let mut state = State {
        eta: curve.spec.eta.clone(),
        b1: basis.b1.clone(),
        b2: basis.b2.clone(),
    };
    let start = periods_of(&basis, &state.b1, &state.b2);
    let mut prev = start.clone();
    let mut out = vec![FlowStep {
        step: 0,
        t: 0.0,
        dt: 0.0,
        eta: state.eta.clone(),
        b1: state.b1.clone(),
        b2: state.b2.clone(),
        b_periods: start.clone(),
        drift: 0.0,
        off_pencil: 0.0,
    }];
    let mut t = 0.0;
    for step in 1..=steps {
        let mut h = dt;
        let mut accepted = None;
        let mut last_err = String::new();
        for _ in 0..=8 {
            let attempt = (|| -> Result<(State, Vec<Complex64>, f64)> {
                let next = rk4(&state, h, &dir, tol)?;
                let c = build_curve(&CurveSpec::new(next.eta.clone()), tol)?;
                let nb = solve_ba(&c, quad)?;
                let p1 = nb.element_with_value_at_zero(next.b1.coeff(0));
                let p2 = nb.element_with_value_at_zero(next.b2.coeff(0));
                let off = (&p1 - &next.b1).norm_inf().max((&p2 - &next.b2).norm_inf());
                let per = periods_of(&nb, &p1, &p2);
                let jump = per.iter().zip(&prev).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                if jump > 10.0 * tol {
                    return Err(Error::Quadrature(format!("period drift {jump:e} across one step")));
                }
                Ok((State { eta: next.eta, b1: p1, b2: p2 }, per, off))
            })();
            match attempt {
                Ok(v) => {
                    accepted = Some(v);
                    break;
                }
                Err(e) => {
                    last_err = e.to_string();
                    h /= 2.0;
                }
            }
        }
        let Some((next, per, off)) = accepted else {
            return Ok(Trajectory {
                steps: out,
                aborted: Some(format!("step {step}: {last_err}")),
            });
        };
        t += h;
        state = next;
        let drift = per.iter().zip(&start).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        out.push(FlowStep {
            step,
            t,
            dt: h,
            eta: state.eta.clone(),
            b1: state.b1.clone(),
            b2: state.b2.clone(),
            b_periods: per.clone(),
            drift,
            off_pencil: off,
        });
        prev = per;
    }
    Ok(Trajectory { steps: out, aborted: None })
}

/// Flow direction with a fixed `Q` and no freedom.
pub fn fixed_q(q: CPoly) -> impl Fn(&SpectralCurve, &CPoly, &CPoly) -> Result<FlowDirection> {
    move |_, _, _| Ok(FlowDirection { q: q.clone(), freedom: None })
}

/// Flow direction `Q = 0`, `c = (b1, b2)`: the rotation orbit.
pub fn rotation_direction() -> impl Fn(&SpectralCurve, &CPoly, &CPoly) -> Result<FlowDirection> {
    |_, _, _| Ok(FlowDirection { q: CPoly::zero(2), freedom: Some((1.0, 0.0)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn solved(eta: Vec<Complex64>) -> (SpectralCurve, PencilBasis) {
        let curve = build_curve(&CurveSpec::new(eta), 1e-9).unwrap();
        let basis = solve_ba(&curve, &QuadConfig::default()).unwrap();
        (curve, basis)
    }

    fn sample_q() -> CPoly {
        CPoly::new(vec![c(0.3, -0.7), c(1.1, 0.0), c(0.3, 0.7)])
    }

    #[test]
    fn rotation_tangent_is_exact() {
        for eta in [vec![], vec![c(0.5, 0.0)], vec![c(0.4, 0.0), c(0.0, 0.3)]] {
            let (curve, basis) = solved(eta);
            let t = rotation_tangent(&curve, &basis);
            assert_eq!(t.q.norm_inf(), 0.0);
            let r = t.residuals(&curve.a, &basis.b1, &basis.b2);
            assert!(r.max() < 1e-14, "{r:?}");
            assert!(t.a_dot.is_rho_real(1e-14));
            assert!(t.b1_dot.is_rho_real(1e-14));
        }
    }

    #[test]
    fn genus_zero_rotation_tangent() {
        let (curve, basis) = solved(vec![]);
        let t = rotation_tangent(&curve, &basis);
        assert_eq!(t.a_dot.norm_inf(), 0.0);
        // ḃ1 = iλ − (i/2)(λ + 1)
        let expect = CPoly::new(vec![c(0.0, -0.5), c(0.0, 0.5)]);
        assert!((&t.b1_dot - &expect).norm_inf() < 1e-15);
    }

    #[test]
    fn solver_reproduces_rotation_tangent() {
        let (curve, basis) = solved(vec![c(0.4, 0.0), c(0.0, 0.3)]);
        let t = tangent_for(&curve.a, &basis.b1, &basis.b2, &CPoly::zero(2), Some((1.0, 0.0)), 1e-9).unwrap();
        let r = rotation_tangent(&curve, &basis);
        assert!((&t.a_dot - &r.a_dot).norm_inf() < 1e-9);
        assert!((&t.b1_dot - &r.b1_dot).norm_inf() < 1e-9);
        assert!((&t.b2_dot - &r.b2_dot).norm_inf() < 1e-9);
    }

    #[test]
    fn zero_q_gives_zero_tangent() {
        let (curve, basis) = solved(vec![c(0.5, 0.0)]);
        let t = whitham_tangent(&curve, &basis, &CPoly::zero(2), 1e-9).unwrap();
        assert!(t.c1.norm_inf() < 1e-12 && t.c2.norm_inf() < 1e-12);
        assert!(t.a_dot.norm_inf() < 1e-12);
    }

    #[test]
    fn bezout_divisibility() {
        let l0 = Complex64::from_polar(1.0, 0.9);
        // ρ-real multiple of (λ − λ0)
        let lin = CPoly::new(vec![-l0, c(1.0, 0.0)]).scale(I * l0.conj().sqrt());
        let b1 = &CPoly::from_real(&[1.0, 0.0, 1.0]) * &lin;
        let b2 = &CPoly::new(vec![I, c(0.4, 0.0), -I]) * &lin;
        let (_, basis) = solved(vec![c(0.3, 0.2), c(-0.5, 0.1)]);
        let a = basis.curve.a.clone();
        let q = &lin * &CPoly::new(vec![c(0.5, 0.5), c(0.5, -0.5)]);
        assert!(q.is_rho_real(1e-14));
        let (c1, c2) = bezout_solve(&a, &b1, &b2, &q, 1e-9, None).unwrap();
        let res = &(&(&c1 * &b2) - &(&c2 * &b1)) - &(&q * &a);
        assert!(res.norm_inf() < 1e-10);
        // freedom keeps the identity and ρ-reality
        let (f1, f2) = bezout_solve(&a, &b1, &b2, &q, 1e-9, Some((0.7, -1.3))).unwrap();
        let res = &(&(&f1 * &b2) - &(&f2 * &b1)) - &(&q * &a);
        assert!(res.norm_inf() < 1e-10);
        assert!(f1.is_rho_real(1e-12) && f2.is_rho_real(1e-12));
        // a Q without the factor is not reachable
        let q_bad = CPoly::new(vec![c(0.3, -0.7), c(1.1, 0.0), c(0.3, 0.7)]);
        assert!(matches!(bezout_solve(&a, &b1, &b2, &q_bad, 1e-9, None), Err(Error::NotDivisible(_))));
    }

    #[test]
    fn generic_q_residuals_genus_two() {
        let (curve, basis) = solved(vec![c(0.4, 0.0), c(0.0, 0.3)]);
        let t = whitham_tangent(&curve, &basis, &sample_q(), 1e-9).unwrap();
        let r = t.residuals(&curve.a, &basis.b1, &basis.b2);
        assert!(r.max() < 1e-9, "{r:?}");
        assert!(t.b1_dot.is_rho_real(1e-9) && t.b2_dot.is_rho_real(1e-9));
        assert!(t.c1.is_rho_real(1e-12));
    }

    #[test]
    fn handle_roots_and_nodal_limit() {
        let (curve, basis) = solved(vec![]);
        let alpha = c(1.0, 0.0);
        let h = attach_handle(&curve, &basis.b1, alpha, 1.0, 0.01, &QuadConfig::default(), 1e-9).unwrap();
        assert_eq!(h.curve.genus(), 1);
        assert!((h.spec.eta[0] - c((-0.01f64).exp(), 0.0)).norm() < 1e-15);
        let mut r = roots(&h.a_t, 1e-12).unwrap();
        r.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
        assert!((r[0] - c((-0.01f64).exp(), 0.0)).norm() < 1e-9);
        assert!((r[1] - c(0.01f64.exp(), 0.0)).norm() < 1e-9);
        let expected_b0 = -I * alpha * h.sqrt_alpha_bar * basis.b1.coeff(0);
        assert!((h.b_t.coeff(0) - expected_b0).norm() < 1e-15);
        let neg = attach_handle(&curve, &basis.b1, alpha, 1.0, -0.01, &QuadConfig::default(), 1e-9).unwrap();
        assert!((&neg.a_t - &h.a_t).norm_inf() < 1e-12);
        assert_eq!(
            attach_handle(&curve, &basis.b1, alpha, 1.0, 0.0, &QuadConfig::default(), 1e-9).unwrap_err(),
            Error::NodalCurve
        );
    }

    #[test]
    fn handle_limit_matches_normalization_factor() {
        // as t → 0 the continued differential approaches i√ᾱ(λ − α) b
        let (curve, basis) = solved(vec![c(0.5, 0.0)]);
        let alpha = Complex64::from_polar(1.0, 2.0);
        let quad = QuadConfig { tol: 1e-12, ..Default::default() };
        let mut errs = vec![];
        for t in [1e-2, 1e-3] {
            let h = attach_handle(&curve, &basis.b1, alpha, 1.0, t, &quad, 1e-9).unwrap();
            let lin = CPoly::new(vec![-alpha, c(1.0, 0.0)]).scale(I * h.sqrt_alpha_bar);
            let b0 = &lin * &basis.b1;
            assert!(b0.is_rho_real(1e-13));
            errs.push((&h.b_t - &b0).norm_inf());
        }
        assert!(errs[1] < errs[0] && errs[1] < 0.05, "{errs:?}");
    }

    #[test]
    fn handle_check_genus_one_to_two() {
        let (curve, basis) = solved(vec![c(0.5, 0.0)]);
        let quad = QuadConfig::default();
        let mut signs = vec![];
        for k in 0..12 {
            let alpha = Complex64::from_polar(1.0, 0.3 + TAU * k as f64 / 12.0);
            let chk = handle_invariant_check(&curve, &basis, alpha, 1e-2, &quad, 1e-9).unwrap();
            assert_eq!((chk.deg_f_before, chk.deg_f_after), (2, 3));
            assert_eq!(chk.winding_after, -chk.df_sign);
            signs.push(chk.df_sign);
        }
        assert!(signs.contains(&1) && signs.contains(&-1));
    }

    #[test]
    fn rotation_flow_follows_rigid_rotation() {
        let (curve, _) = solved(vec![c(0.4, 0.1), c(-0.2, 0.5)]);
        let dt = 1e-2;
        let traj = flow(&curve, rotation_direction(), dt, 20, &QuadConfig::default(), 1e-9).unwrap();
        assert!(traj.aborted.is_none());
        let last = traj.steps.last().unwrap();
        for (e0, e) in curve.spec.eta.iter().zip(&last.eta) {
            let expect = e0 * Complex64::from_polar(1.0, -last.t);
            assert!((e - expect).norm() < 1e-9, "{e} vs {expect}");
        }
        assert!(traj.max_drift() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn tangents_satisfy_residual_bounds(
            eta in proptest::collection::vec((0.1f64..0.9, 0.0f64..TAU), 1..=3),
            q in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let eta: Vec<Complex64> = eta.into_iter().map(|(r, t)| Complex64::from_polar(r, t)).collect();
            let Ok(curve) = build_curve(&CurveSpec::new(eta), 1e-9) else { return Ok(()) };
            let basis = solve_ba(&curve, &QuadConfig::default()).unwrap();
            let q = CPoly::new(vec![c(q[0], q[1]), c(q[2], 0.0), c(q[0], -q[1])]);
            let t = whitham_tangent(&curve, &basis, &q, 1e-9).unwrap();
            let r = t.residuals(&curve.a, &basis.b1, &basis.b2);
            prop_assert!(r.max() < 1e-9, "{:?}", r);
        }
    }
}
