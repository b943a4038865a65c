//! Convolution norm of a kernel on the integers: `sup_xi |rho^(xi)|`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::random_measure::SignedMeasure;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BilinearNorm {
    /// Largest `|rho^|` on the grid `2 pi k / G`.
    pub value: f64,
    pub grid_size: usize,
    /// Bound on `sup - value` from the derivative of the symbol.
    pub error_bound: f64,
}

/// Evaluates `rho^(xi) = sum_x rho(x) e^{-i xi x}` on at least `oversample`
/// points per unit of support length and returns the maximum modulus.
pub fn bilinear_norm_exact(kernel: &SignedMeasure, oversample: usize) -> Result<BilinearNorm> {
    if oversample < 4 {
        return Err(Error::InvalidParameter(format!("oversampling factor {oversample} below 4")));
    }
    let Some((lo, hi)) = kernel.support_range() else {
        return Ok(BilinearNorm { value: 0.0, grid_size: 0, error_bound: 0.0 });
    };
    let len = (hi - lo + 1) as usize;
    let grid_size = (oversample * len).next_power_of_two();
    let mut buf = vec![Complex::new(0.0, 0.0); grid_size];
    for (slot, x) in buf.iter_mut().zip(lo..=hi) {
        slot.re = kernel.get(x);
    }
    FftPlanner::<f64>::new().plan_fft_forward(grid_size).process(&mut buf);
    let value = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
    // |d/dxi| <= sum |x - c| |rho(x)| about the midpoint c; the grid point nearest
    // the maximiser is at most half a spacing away
    let spacing = std::f64::consts::TAU / grid_size as f64;
    let half_span = (len - 1) as f64 / 2.0;
    let error_bound = 0.5 * spacing * half_span * kernel.l1_norm();
    Ok(BilinearNorm { value, grid_size, error_bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_has_unit_symbol() {
        let k = SignedMeasure::from_points(4, &[(0, 1.0)]).unwrap();
        let b = bilinear_norm_exact(&k, 8).unwrap();
        assert!((b.value - 1.0).abs() < 1e-14);
        assert_eq!(b.error_bound, 0.0);
    }

    #[test]
    fn difference_kernel_peaks_at_two() {
        let k = SignedMeasure::from_points(4, &[(0, 1.0), (1, -1.0)]).unwrap();
        let b = bilinear_norm_exact(&k, 64).unwrap();
        assert!((b.value - 2.0).abs() < 1e-4);
        assert!(2.0 - b.value <= b.error_bound + 1e-15);
    }

    #[test]
    fn empty_kernel_is_zero() {
        assert_eq!(bilinear_norm_exact(&SignedMeasure::zero(3), 4).unwrap().value, 0.0);
        assert!(bilinear_norm_exact(&SignedMeasure::zero(3), 3).is_err());
    }
}
