//! The open cell of the real Grassmannian `Gr(2, P^{g+1}_R)` of planes that
//! meet `{b(0) = 0}` only in zero. Such a plane is the graph of a linear map
//! `M: R² → R^g` from `(Re b(0), Im b(0))` to the middle coordinates of `b`.
//!
//! Middle coordinates of a ρ-real `b` of degree `d = g + 1` are, in order,
//! `Re p1, Im p1, Re p2, Im p2, …` over the pairs `i < d − i`, followed by
//! the real coefficient `p_{d/2}` when `d` is even.

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::curve::{build_curve, CurveSpec, SpectralCurve};
use crate::error::{Error, Result};
use crate::invariants::s1_tolerance;
use crate::linalg::{fd_jacobian, gapped_rank, sorted_svd, tangent_dimension};
use crate::periods::solve_ba;
use crate::polyring::{from_rho_real_coords, rho_real_coords, roots, CPoly};
use crate::quadrature::QuadConfig;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrPlane {
    pub genus: usize,
    /// Row `i` holds the images of `(1, 0)` and `(0, 1)` in middle
    /// coordinate `i`.
    #[serde(rename = "M")]
    pub m: Vec<[f64; 2]>,
}

impl GrPlane {
    pub fn new(genus: usize, m: Vec<[f64; 2]>) -> Result<Self> {
        if m.len() != genus {
            return Err(Error::InvalidInput(format!(
                "M must have {genus} rows for genus {genus}, got {}",
                m.len()
            )));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("M has non-finite entries".into()));
        }
        Ok(Self { genus, m })
    }

    /// Parameters `(M[·,0], M[·,1])` as one vector of length `2g`.
    pub fn params(&self) -> Vec<f64> {
        self.m.iter().map(|r| r[0]).chain(self.m.iter().map(|r| r[1])).collect()
    }

    pub fn from_params(genus: usize, x: &[f64]) -> Self {
        Self {
            genus,
            m: (0..genus).map(|i| [x[i], x[genus + i]]).collect(),
        }
    }
}

/// The basis of the plane with `b1(0) = 1` and `b2(0) = i`.
pub fn plane_basis(plane: &GrPlane) -> (CPoly, CPoly) {
    let d = plane.genus + 1;
    let build = |head: [f64; 2], col: usize| {
        let mut x = vec![head[0], head[1]];
        x.extend(plane.m.iter().map(|r| r[col]));
        from_rho_real_coords(d, &x)
    };
    (build([1.0, 0.0], 0), build([0.0, 1.0], 1))
}

/// Graph coordinates of the real span of two ρ-real polynomials of the same
/// formal degree `g + 1`.
pub fn plane_from_pencil(b1: &CPoly, b2: &CPoly, tol: f64) -> Result<GrPlane> {
    let d = b1.formal_degree();
    if d == 0 || b2.formal_degree() != d {
        return Err(Error::InvalidInput(format!(
            "pencil degrees {} and {} do not describe a plane in P^{{g+1}}",
            b1.formal_degree(),
            b2.formal_degree()
        )));
    }
    for b in [b1, b2] {
        let r = b.reality_check(tol * b.norm_inf().max(1.0));
        if !r.is_real {
            return Err(Error::Reality(format!("pencil element is not ρ-real (defect {:e})", r.max_defect)));
        }
    }
    let (v1, v2) = (b1.coeff(0), b2.coeff(0));
    let v = Matrix2::new(v1.re, v2.re, v1.im, v2.im);
    let scale = (b1.norm_inf() * b2.norm_inf()).max(f64::MIN_POSITIVE);
    if v.determinant().abs() <= tol * scale {
        return Err(Error::Precondition(
            "the plane contains a nonzero element vanishing at 0 (or is not two-dimensional)".into(),
        ));
    }
    let inv = v.try_inverse().ok_or_else(|| Error::Precondition("singular value matrix at 0".into()))?;
    let combine = |w: Vector2<f64>| {
        let c = inv * w;
        (&b1.scale(Complex64::new(c[0], 0.0)) + &b2.scale(Complex64::new(c[1], 0.0))).rho_real_part()
    };
    let n1 = rho_real_coords(&combine(Vector2::new(1.0, 0.0)));
    let n2 = rho_real_coords(&combine(Vector2::new(0.0, 1.0)));
    let m = (2..n1.len()).map(|k| [n1[k], n2[k]]).collect();
    GrPlane::new(d - 1, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrClassification {
    pub genus: usize,
    pub gcd_degree: usize,
    #[serde(with = "crate::pairs::vec")]
    pub common_roots: Vec<Complex64>,
    pub in_r: bool,
    pub in_s: bool,
    #[serde(with = "crate::pairs::vec")]
    pub s1_roots: Vec<Complex64>,
}

/// Common roots by matching the root sets of the two basis elements, each
/// root of `b1` paired with its nearest unused root of `b2` within
/// `√tol`. This is independent of the subresultant gcd used elsewhere.
pub fn common_roots(b1: &CPoly, b2: &CPoly, tol: f64) -> Result<Vec<Complex64>> {
    let r1 = roots(b1, 1e-13)?;
    let mut r2 = roots(b2, 1e-13)?;
    let radius = s1_tolerance(tol);
    let mut out = Vec::new();
    for r in r1 {
        let best = r2
            .iter()
            .enumerate()
            .map(|(k, s)| (k, (s - r).norm() / r.norm().max(1.0)))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((k, dist)) = best {
            if dist <= radius {
                out.push((r + r2.swap_remove(k)) / 2.0);
            }
        }
    }
    Ok(out)
}

pub fn gr_classify(plane: &GrPlane, tol: f64) -> Result<GrClassification> {
    let (b1, b2) = plane_basis(plane);
    let common = common_roots(&b1, &b2, tol)?;
    let near = s1_tolerance(tol);
    let s1: Vec<Complex64> = common
        .iter()
        .filter(|r| (r.norm() - 1.0).abs() <= near)
        .map(|r| r / r.norm())
        .collect();
    Ok(GrClassification {
        genus: plane.genus,
        gcd_degree: common.len(),
        in_r: !common.is_empty(),
        in_s: !s1.is_empty(),
        s1_roots: s1,
        common_roots: common,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SheetFit {
    /// Common root followed along this sheet.
    #[serde(with = "crate::pairs::one")]
    pub root: Complex64,
    pub on_circle: bool,
    pub dimension: usize,
    pub singular_values: Vec<f64>,
    pub orders: Vec<f64>,
    #[serde(skip)]
    tangent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionProbe {
    pub genus: usize,
    pub radius: f64,
    pub gcd_degree: usize,
    pub in_s: bool,
    /// Local dimension of the common-root locus (largest sheet).
    pub dimension: usize,
    pub expected: usize,
    pub sheets: Vec<SheetFit>,
    /// Largest distance of a unit tangent vector of one sheet from the
    /// tangent space of another.
    pub sheet_separation: f64,
    /// More than one distinct tangent sheet passes through the plane.
    pub singular: bool,
    /// The rerun at `radius / 10` gave the same dimensions.
    pub consistent: bool,
}

fn nearest_root(b: &CPoly, target: Complex64) -> Result<Complex64> {
    roots(b, 1e-13)?
        .into_iter()
        .min_by(|x, y| (x - target).norm().total_cmp(&(y - target).norm()))
        .ok_or(Error::ZeroPolynomial)
}

fn sheet_fit(plane: &GrPlane, root: Complex64, radius: f64) -> Result<SheetFit> {
    let g = plane.genus;
    // two elements of the plane with a simple root at `root`; a basis element
    // may vanish there to higher order
    let (b1, b2) = plane_basis(plane);
    let mix = |t: f64, p: &CPoly, q: &CPoly| &p.scale(Complex64::new(t.cos(), 0.0)) + &q.scale(Complex64::new(t.sin(), 0.0));
    let angles: Vec<f64> = (0..8).map(|k| k as f64 * std::f64::consts::PI / 8.0).collect();
    let score = |t: f64| {
        let w = mix(t, &b1, &b2);
        w.eval_with_derivative(root).1.norm() / w.norm_inf()
    };
    let t1 = angles.iter().copied().max_by(|x, y| score(*x).total_cmp(&score(*y))).unwrap_or(0.0);
    let t2 = angles
        .iter()
        .copied()
        .max_by(|x, y| (score(*x) * (x - t1).sin().abs()).total_cmp(&(score(*y) * (y - t1).sin().abs())))
        .unwrap_or(0.0);
    // residual: β1 − β2 for the roots of the two elements continuing `root`
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let (p, q) = plane_basis(&GrPlane::from_params(g, x));
        let d = nearest_root(&mix(t1, &p, &q), root)? - nearest_root(&mix(t2, &p, &q), root)?;
        Ok(vec![d.re, d.im])
    };
    let fit = tangent_dimension(&f, &plane.params(), radius, 1e3)?;
    Ok(SheetFit {
        root,
        on_circle: false,
        dimension: fit.dimension,
        singular_values: fit.singular,
        orders: fit.orders,
        tangent: fit.tangent,
    })
}

/// Distance of the unit vectors of `b` from the span of the orthonormal
/// vectors `a`.
fn subspace_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    b.iter()
        .map(|v| {
            let mut r = v.clone();
            for u in a {
                let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                for (ri, ui) in r.iter_mut().zip(u) {
                    *ri -= dot * ui;
                }
            }
            r.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// Local dimension of the common-root stratum at `plane`. One sheet is
/// fitted per common root on `S¹` and per pair `β, 1/conj(β)` off it; each
/// sheet is the locus where that root stays common, its dimension the kernel
/// of the Jacobian of the root difference with second-order persistence
/// along kernel directions.
pub fn stratum_dimension_probe(plane: &GrPlane, radius: f64, tol: f64) -> Result<DimensionProbe> {
    let class = gr_classify(plane, tol)?;
    if !class.in_r {
        return Err(Error::Precondition(format!(
            "plane is not on the common-root stratum at tolerance {tol:e}"
        )));
    }
    let g = plane.genus;
    let near = s1_tolerance(tol);
    let mut seeds: Vec<(Complex64, bool)> = class.s1_roots.iter().map(|&r| (r, true)).collect();
    for r in &class.common_roots {
        if (r.norm() - 1.0).abs() > near && r.norm() < 1.0 {
            seeds.push((*r, false));
        }
    }
    let fit_all = |h: f64| -> Result<Vec<SheetFit>> {
        seeds
            .iter()
            .map(|&(r, on)| {
                let mut s = sheet_fit(plane, r, h)?;
                s.on_circle = on;
                Ok(s)
            })
            .collect()
    };
    let sheets = fit_all(radius)?;
    let rerun = fit_all(radius / 10.0)?;
    let consistent = sheets.iter().zip(&rerun).all(|(a, b)| a.dimension == b.dimension);
    let mut separation: f64 = 0.0;
    for (i, a) in sheets.iter().enumerate() {
        for b in &sheets[i + 1..] {
            separation = separation.max(subspace_gap(&a.tangent, &b.tangent)).max(subspace_gap(&b.tangent, &a.tangent));
        }
    }
    let dimension = sheets.iter().map(|s| s.dimension).max().unwrap_or(0);
    let expected = if class.in_s { 2 * g - 1 } else { 2 * g - 2 };
    Ok(DimensionProbe {
        genus: g,
        radius,
        gcd_degree: class.gcd_degree,
        in_s: class.in_s,
        dimension,
        expected,
        singular: sheets.len() > 1 && separation > 1e-3,
        sheet_separation: separation,
        sheets,
        consistent,
    })
}

/// Graph coordinates of the solved pencil of `curve`.
pub fn b_map(curve: &SpectralCurve, quad: &QuadConfig, tol: f64) -> Result<GrPlane> {
    let basis = solve_ba(curve, quad)?;
    plane_from_pencil(&basis.b1, &basis.b2, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct ImmersionRank {
    pub genus: usize,
    pub fd_step: f64,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Numerical rank of the Jacobian of `η ↦ M` over the `2g` real root
/// coordinates (Richardson-extrapolated central differences, gap `1e4`).
pub fn immersion_rank(curve: &SpectralCurve, quad: &QuadConfig, tol: f64, fd_step: f64) -> Result<ImmersionRank> {
    let g = curve.genus();
    if g == 0 {
        return Ok(ImmersionRank {
            genus: 0,
            fd_step,
            rank: 0,
            singular_values: vec![],
        });
    }
    let x0: Vec<f64> = curve.spec.eta.iter().flat_map(|e| [e.re, e.im]).collect();
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let eta = x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        let c = build_curve(&CurveSpec::new(eta), tol)?;
        Ok(b_map(&c, quad, tol)?.params())
    };
    let j1 = fd_jacobian(&f, &x0, fd_step)?;
    let j2 = fd_jacobian(&f, &x0, fd_step / 2.0)?;
    let j: DMatrix<f64> = (&j2 * 4.0 - &j1) / 3.0;
    let s = sorted_svd(&j).singular;
    let rank = gapped_rank(&s, 1e4, 1e-6).ok_or_else(|| Error::RankUnresolved(s.clone()))?;
    Ok(ImmersionRank {
        genus: g,
        fd_step,
        rank,
        singular_values: s,
    })
}

/// A ρ-real linear factor vanishing at `λ0 ∈ S¹`.
pub fn circle_factor(lambda0: Complex64) -> CPoly {
    let u = lambda0 / lambda0.norm();
    CPoly::new(vec![-u, Complex64::new(1.0, 0.0)]).scale(I * u.conj().sqrt())
}

/// A ρ-real quadratic factor vanishing at `β` and `1/conj(β)`.
pub fn pair_factor(beta: Complex64) -> CPoly {
    let u = beta / beta.norm();
    let s = beta.norm() + 1.0 / beta.norm();
    CPoly::new(vec![u, Complex64::new(-s, 0.0), u.conj()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plane_of(factor: &CPoly, r1: &CPoly, r2: &CPoly) -> GrPlane {
        plane_from_pencil(&(factor * r1), &(factor * r2), 1e-12).unwrap()
    }

    #[test]
    fn basis_of_zero_map() {
        let (b1, b2) = plane_basis(&GrPlane::new(1, vec![[0.0, 0.0]]).unwrap());
        assert_eq!(b1, CPoly::from_real(&[1.0, 0.0, 1.0]));
        assert_eq!(b2, CPoly::new(vec![I, c(0.0, 0.0), -I]));
        let cl = gr_classify(&GrPlane::new(1, vec![[0.0, 0.0]]).unwrap(), 1e-9).unwrap();
        assert_eq!((cl.gcd_degree, cl.in_r), (0, false));
    }

    #[test]
    fn circle_root_plane() {
        let plane = GrPlane::new(1, vec![[-2.0, 0.0]]).unwrap();
        let (b1, _) = plane_basis(&plane);
        assert_eq!(b1, CPoly::from_real(&[1.0, -2.0, 1.0]));
        let cl = gr_classify(&plane, 1e-9).unwrap();
        assert!(cl.in_r && cl.in_s);
        assert_eq!(cl.gcd_degree, 1);
        // b1 has a double root at 1, so the matched root carries √ε error
        assert!((cl.s1_roots[0] - c(1.0, 0.0)).norm() < 1e-6);
        let probe = stratum_dimension_probe(&plane, 1e-3, 1e-9).unwrap();
        assert_eq!((probe.dimension, probe.expected), (1, 1));
        assert!(probe.consistent && !probe.singular);
    }

    #[test]
    fn off_circle_pair_plane() {
        let factor = pair_factor(c(0.5, 0.0));
        let plane = plane_of(&factor, &CPoly::from_real(&[1.0, 1.0]), &CPoly::new(vec![I, -I]));
        let cl = gr_classify(&plane, 1e-9).unwrap();
        assert!(cl.in_r && !cl.in_s);
        assert_eq!(cl.gcd_degree, 2);
        let probe = stratum_dimension_probe(&plane, 1e-3, 1e-9).unwrap();
        assert_eq!((probe.dimension, probe.expected), (2, 2));
    }

    #[test]
    fn two_circle_roots_are_singular() {
        let factor = &circle_factor(Complex64::from_polar(1.0, 0.4)) * &circle_factor(Complex64::from_polar(1.0, 2.5));
        let plane = plane_of(&factor, &from_rho_real_coords(1, &[1.0, 0.3]), &from_rho_real_coords(1, &[0.2, 1.0]));
        let probe = stratum_dimension_probe(&plane, 1e-3, 1e-9).unwrap();
        assert_eq!(probe.sheets.len(), 2);
        assert!(probe.sheets.iter().all(|s| s.dimension == 3));
        assert!(probe.singular, "{probe:?}");
    }

    #[test]
    fn genus_one_has_no_off_circle_pairs() {
        let factor = pair_factor(c(0.5, 0.0));
        let b1 = &factor * &CPoly::from_real(&[1.0]);
        let b2 = &factor * &CPoly::from_real(&[-0.3]);
        assert!(matches!(plane_from_pencil(&b1, &b2, 1e-12), Err(Error::Precondition(_))));
    }

    #[test]
    fn genus_zero_b_map_is_empty() {
        let curve = build_curve(&CurveSpec::new(vec![]), 1e-9).unwrap();
        let plane = b_map(&curve, &QuadConfig::default(), 1e-9).unwrap();
        assert!(plane.m.is_empty());
        assert_eq!(immersion_rank(&curve, &QuadConfig::default(), 1e-9, 1e-3).unwrap().rank, 0);
    }

    #[test]
    fn rotation_acts_on_planes() {
        let quad = QuadConfig { tol: 1e-12, ..Default::default() };
        let eta = vec![c(0.4, 0.1), c(-0.2, 0.5)];
        let curve = build_curve(&CurveSpec::new(eta.clone()), 1e-9).unwrap();
        let basis = solve_ba(&curve, &quad).unwrap();
        let phi: f64 = 0.7;
        let rotated = build_curve(&CurveSpec::new(eta.iter().map(|e| e * Complex64::from_polar(1.0, -phi)).collect()), 1e-9).unwrap();
        // b ↦ e^{−i(g+1)φ/2} b(e^{iφ}λ)
        let rot = |b: &CPoly| {
            let k = Complex64::from_polar(1.0, -1.5 * phi);
            CPoly::new(b.coeffs().iter().enumerate().map(|(j, z)| z * k * Complex64::from_polar(1.0, phi * j as f64)).collect())
        };
        let expect = plane_from_pencil(&rot(&basis.b1), &rot(&basis.b2), 1e-9).unwrap();
        let got = b_map(&rotated, &quad, 1e-9).unwrap();
        for (a, b) in expect.params().iter().zip(got.params()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let r0 = immersion_rank(&curve, &quad, 1e-9, 1e-3).unwrap();
        let r1 = immersion_rank(&rotated, &quad, 1e-9, 1e-3).unwrap();
        assert_eq!(r0.rank, r1.rank);
    }

    #[test]
    fn genus_one_immersion_rank() {
        let quad = QuadConfig { tol: 1e-12, ..Default::default() };
        let curve = build_curve(&CurveSpec::new(vec![c(0.5, 0.0)]), 1e-9).unwrap();
        let r = immersion_rank(&curve, &quad, 1e-9, 1e-3).unwrap();
        assert!(r.rank <= 2);
        assert_eq!(r.singular_values.len(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gcd_degree_survives_recombination(
            m in proptest::collection::vec(-2.0f64..2.0, 4),
            mix in proptest::array::uniform4(-1.0f64..1.0),
            theta in 0.0f64..std::f64::consts::TAU,
            with_factor in any::<bool>(),
        ) {
            let plane = if with_factor {
                let f = circle_factor(Complex64::from_polar(1.0, theta));
                let r1 = from_rho_real_coords(1, &[1.0, m[0]]);
                let r2 = from_rho_real_coords(1, &[m[1], 1.0]);
                match plane_from_pencil(&(&f * &r1), &(&f * &r2), 1e-12) { Ok(p) => p, Err(_) => return Ok(()) }
            } else {
                GrPlane::from_params(2, &m)
            };
            let (b1, b2) = plane_basis(&plane);
            prop_assert!(b1.is_rho_real(1e-15) && b2.is_rho_real(1e-15));
            prop_assert_eq!(b1.coeff(0), c(1.0, 0.0));
            prop_assert_eq!(b2.coeff(0), I);
            let det = mix[0] * mix[3] - mix[1] * mix[2];
            prop_assume!(det.abs() > 0.1);
            let n1 = &b1.scale(c(mix[0], 0.0)) + &b2.scale(c(mix[2], 0.0));
            let n2 = &b1.scale(c(mix[1], 0.0)) + &b2.scale(c(mix[3], 0.0));
            let again = plane_from_pencil(&n1, &n2, 1e-12).unwrap();
            for (a, b) in plane.params().iter().zip(again.params()) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
            prop_assert_eq!(gr_classify(&plane, 1e-9).unwrap().gcd_degree, gr_classify(&again, 1e-9).unwrap().gcd_degree);
        }
    }
}
