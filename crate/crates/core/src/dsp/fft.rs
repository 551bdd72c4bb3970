use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const N_FFT: usize = 256;

/// Unnormalized forward DFT of exactly [`N_FFT`] points,
/// `X[k] = Σ x[n] e^{-2πi kn/N}`.
pub fn fft(signal: &[Complex64]) -> Result<Vec<Complex64>> {
    if signal.len() != N_FFT {
        return Err(Error::dim(format!(
            "fft expects {N_FFT} points, got {}",
            signal.len()
        )));
    }
    let mut buf = signal.to_vec();
    fft_in_place(&mut buf);
    Ok(buf)
}

/// Iterative radix-2 Cooley-Tukey. `buf.len()` must be a power of two.
pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if bits == 0 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, -2.0 * PI / len as f64);
        let half = len / 2;
        // Twiddles are computed directly rather than by repeated
        // multiplication to keep rounding error flat across the stage.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| {
                if k == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::from_polar(1.0, step.arg() * k as f64)
                }
            })
            .collect();
        for chunk in buf.chunks_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for ((a, b), &w) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
}
