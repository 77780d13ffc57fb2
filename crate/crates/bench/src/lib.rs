//! Fixed curves shared by the benchmarks.

use num_complex::Complex64;
use spectral_core::CurveSpec;

/// A deterministic, well-separated root configuration of the given genus.
pub fn fixture(genus: usize) -> CurveSpec {
    let eta = (0..genus)
        .map(|k| {
            let r = 0.25 + 0.5 * (k as f64 + 0.5) / genus.max(1) as f64;
            Complex64::from_polar(r, 0.4 + 2.1 * k as f64)
        })
        .collect();
    CurveSpec::new(eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        for g in 0..=5 {
            spectral_core::build_curve(&fixture(g), 1e-9).unwrap();
        }
    }
}
