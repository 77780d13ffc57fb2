//! Thin helpers over nalgebra's SVD: sorted spectra, null spaces and
//! minimum-norm least squares for the real coordinate systems used by the
//! period, Bézout and Whitham solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real SVD with singular values sorted in decreasing order and a full set of
/// right singular vectors (wide matrices are padded with zero rows).
pub struct SortedSvd {
    pub singular: Vec<f64>,
    /// Columns are right singular vectors, aligned with `singular`; the
    /// trailing columns span the (numerical) null space.
    pub v: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::<f64>::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::<f64>::zeros(cols, order.len());
    let mut u_sorted = DMatrix::<f64>::zeros(u.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &v_t.row(i).transpose());
        u_sorted.set_column(k, &u.column(i));
    }
    SortedSvd {
        singular,
        v,
        u: u_sorted,
    }
}

/// Minimum-norm least-squares solution of `m x = rhs`, discarding singular
/// values below `rel_cut * σ_max`. Returns the solution and the index of the
/// smallest retained singular value.
pub fn lstsq_min_norm(m: &DMatrix<f64>, rhs: &DVector<f64>, rel_cut: f64) -> (DVector<f64>, usize) {
    let s = sorted_svd(m);
    let smax = s.singular.first().copied().unwrap_or(0.0);
    let cols = m.ncols();
    let mut x = DVector::<f64>::zeros(cols);
    let mut rank = 0;
    // u has as many rows as the padded matrix; pad rhs accordingly.
    let mut r = DVector::<f64>::zeros(s.u.nrows());
    r.rows_mut(0, rhs.len()).copy_from(rhs);
    for (k, &sv) in s.singular.iter().enumerate() {
        if sv <= rel_cut * smax || sv == 0.0 {
            break;
        }
        rank = k + 1;
        let coef = s.u.column(k).dot(&r) / sv;
        x += s.v.column(k) * coef;
    }
    (x, rank)
}

/// Complex SVD returning (σ_min, right singular vector for σ_min). The matrix
/// must have at least as many rows as columns.
pub fn complex_smallest_singular(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    debug_assert!(m.nrows() >= m.ncols());
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let (idx, &smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let v = v_t.row(idx).adjoint();
    (smin, v)
}

/// Complex least squares via SVD (full column rank expected).
pub fn complex_lstsq(m: &DMatrix<Complex64>, rhs: &DVector<Complex64>) -> DVector<Complex64> {
    let svd = m.clone().svd(true, true);
    svd.solve(rhs, 1e-14 * svd.singular_values.max())
        .expect("SVD solve with computed factors")
}

/// Numerical rank with an explicit gap requirement: `r` counts singular
/// values above `floor_rel * σ_max`, and is accepted only when the retained
/// and dropped parts are separated by at least `gap` (σ_{r-1} / σ_r ≥ gap).
/// Returns `None` when no such gap exists.
pub fn gapped_rank(singular: &[f64], gap: f64, floor_rel: f64) -> Option<usize> {
    let smax = singular.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Some(0);
    }
    let r = singular
        .iter()
        .position(|&s| s <= floor_rel * smax)
        .unwrap_or(singular.len());
    if r == singular.len() || r == 0 {
        return Some(r);
    }
    let ratio = singular[r - 1] / singular[r].max(f64::MIN_POSITIVE);
    (ratio >= gap).then_some(r)
}

/// Central-difference Jacobian of `f: Rⁿ → Rᵐ` at `x` with step `h`.
pub fn fd_jacobian<F>(f: &F, x: &[f64], h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        cols.push(DVector::from_iterator(fp.len(), fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h))));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    let mut j = DMatrix::<f64>::zeros(rows, x.len());
    for (k, c) in cols.iter().enumerate() {
        j.set_column(k, c);
    }
    Ok(j)
}

/// Local dimension of the zero set of `f` through `x` (where `f(x) ≈ 0`):
/// Richardson-extrapolated Jacobian at steps `h` and `h/2`, numerical
/// kernel at a gap of `gap`, and each kernel direction kept only if the
/// residual along it decays to second order.
pub fn tangent_dimension<F>(f: &F, x: &[f64], h: f64, gap: f64) -> Result<TangentFit>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let j1 = fd_jacobian(f, x, h)?;
    let j2 = fd_jacobian(f, x, h / 2.0)?;
    let j = (&j2 * 4.0 - &j1) / 3.0;
    let n = x.len();
    let svd = sorted_svd(&j);
    let singular: Vec<f64> = svd.singular.iter().take(n).copied().collect();
    let rank = gapped_rank(&singular, gap, 1e-5).ok_or_else(|| Error::RankUnresolved(singular.clone()))?;
    let f0 = f(x)?;
    let base: f64 = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = singular.first().copied().unwrap_or(0.0).max(1e-300);
    let mut tangent = Vec::new();
    let mut orders = Vec::new();
    for k in rank..n {
        let v = svd.v.column(k);
        let along = |t: f64| -> Result<f64> {
            let xs: Vec<f64> = x.iter().zip(v.iter()).map(|(a, d)| a + t * d).collect();
            let fs = f(&xs)?;
            Ok(fs.iter().zip(&f0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        };
        let (e1, e2) = (along(h)?, along(h / 2.0)?);
        let order = if e1 <= 1e-10 * scale { 2.0 } else { (e1 / e2.max(1e-300)).log2() };
        orders.push(order);
        if order > 1.5 {
            tangent.push(v.iter().copied().collect());
        }
    }
    Ok(TangentFit {
        dimension: tangent.len(),
        rank,
        singular,
        orders,
        tangent,
        base_residual: base,
    })
}

#[derive(Debug, Clone)]
pub struct TangentFit {
    pub dimension: usize,
    pub rank: usize,
    pub singular: Vec<f64>,
    /// Observed decay order of the residual along each kernel direction.
    pub orders: Vec<f64>,
    pub tangent: Vec<Vec<f64>>,
    pub base_residual: f64,
}
