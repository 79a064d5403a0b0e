//! Floating-point front end: unitary spatial DFT and sorted element powers.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::channel::ComplexVector;
use crate::error::{invalid, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `ȳ = F·y` with `F[k][m] = exp(−j2πkm/M)/√M`.
pub fn dft_unitary(y: &ComplexVector) -> ComplexVector {
    let m = y.len();
    if m == 0 {
        return ComplexVector::default();
    }
    let mut buf: Vec<Complex64> = y.to_vec();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(m));
    fft.process(&mut buf);
    let norm = 1.0 / (m as f64).sqrt();
    for z in &mut buf {
        *z *= norm;
    }
    ComplexVector::new(buf)
}

/// Element powers in ascending order together with their total `S_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedPowerVector {
    values: Vec<f64>,
    total: f64,
}

impl SortedPowerVector {
    /// Sorts arbitrary non-negative powers.
    pub fn from_powers(mut values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid(format!("powers must be finite and >= 0, found {bad}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self::assemble(values))
    }

    /// Wraps powers that are already in ascending order.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid(format!("powers must be finite and >= 0, found {bad}")));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("powers are not in non-decreasing order"));
        }
        Ok(Self::assemble(values))
    }

    fn assemble(values: Vec<f64>) -> Self {
        let total = values.iter().sum();
        Self { values, total }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `S_M`, accumulated in ascending order.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every power by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::assemble(self.values.iter().map(|p| p * c).collect())
    }
}

/// `{|ȳ_m|²}` in ascending order.
pub fn power_sort(ybar: &ComplexVector) -> SortedPowerVector {
    let mut values: Vec<f64> = ybar.iter().map(|z| z.norm_sqr()).collect();
    values.sort_by(f64::total_cmp);
    SortedPowerVector::assemble(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn naive_dft(y: &[Complex64]) -> Vec<Complex64> {
        let m = y.len();
        (0..m)
            .map(|k| {
                y.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / m as f64;
                        v * Complex64::from_polar(1.0, ang)
                    })
                    .sum::<Complex64>()
                    / (m as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn impulse_and_flat() {
        let e0 = ComplexVector::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let f = dft_unitary(&e0);
        assert!(f.iter().all(|z| (z - c(0.5, 0.0)).norm() < 1e-12));

        let ones = ComplexVector::new(vec![c(1.0, 0.0); 4]);
        let f = dft_unitary(&ones);
        let want = [2.0, 0.0, 0.0, 0.0];
        for (z, w) in f.iter().zip(want) {
            assert!((z - c(w, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [1usize, 2, 3, 8, 12, 64] {
            let y: ComplexVector = (0..m)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let fast = dft_unitary(&y);
            let slow = naive_dft(&y);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let m = 1usize << rng.random_range(0..9);
            let y: ComplexVector = (0..m)
                .map(|_| c(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
                .collect();
            let e_in = y.energy();
            let e_out = dft_unitary(&y).energy();
            assert!((e_in - e_out).abs() <= 1e-9 * e_in.max(1e-300));
            assert!((e_in.sqrt() - e_out.sqrt()).abs() <= 1e-10 * e_in.sqrt().max(1.0));
        }
    }

    #[test]
    fn power_sort_examples() {
        let v = ComplexVector::new(vec![c(1.0, 0.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let s = power_sort(&v);
        assert_eq!(s.values(), &[1.0, 1.0, 4.0]);
        assert_eq!(s.total(), 6.0);

        let s = power_sort(&ComplexVector::zeros(5));
        assert_eq!(s.values(), &[0.0; 5]);
        assert_eq!(s.total(), 0.0);
    }

    #[test]
    fn power_sort_is_permutation_of_powers() {
        // dyadic parts so powers are exact and the multiset compare is exact
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let m = rng.random_range(1..100);
            let y: ComplexVector = (0..m)
                .map(|_| {
                    c(
                        f64::from(rng.random_range(-512i32..512)) / 64.0,
                        f64::from(rng.random_range(-512i32..512)) / 64.0,
                    )
                })
                .collect();
            let s = power_sort(&y);
            assert!(s.values().windows(2).all(|w| w[0] <= w[1]));
            let mut expected: Vec<f64> = y.iter().map(|z| z.norm_sqr()).collect();
            expected.sort_by(f64::total_cmp);
            assert_eq!(s.values(), expected.as_slice());
            let sum: f64 = expected.iter().sum();
            assert!((s.total() - sum).abs() <= 1e-9 * sum.max(1.0));
            assert!((s.total() - y.energy()).abs() <= 1e-9 * sum.max(1.0));
        }
    }

    #[test]
    fn from_sorted_validates() {
        assert!(SortedPowerVector::from_sorted(vec![1.0, 2.0, 2.0]).is_ok());
        assert!(SortedPowerVector::from_sorted(vec![2.0, 1.0]).is_err());
        assert!(SortedPowerVector::from_sorted(vec![-1.0, 1.0]).is_err());
        assert!(SortedPowerVector::from_powers(vec![3.0, f64::NAN]).is_err());
        let s = SortedPowerVector::from_powers(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.total(), 6.0);
    }
}
