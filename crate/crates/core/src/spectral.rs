//! Discrete Fourier transforms over `f64`.
//!
//! Forward transforms are unnormalized, inverses carry the `1/n` factor:
//!
//! ```text
//! X[k] = sum_t x[t] exp(-2 pi j k t / n)
//! x[t] = (1/n) sum_k X[k] exp(+2 pi j k t / n)
//! ```
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length is
//! reduced to a power-of-two circular convolution with the chirp-z (Bluestein)
//! identity. All functions are pure.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Result, SpectfError};

/// A single complex amplitude.
pub type ComplexValue = Complex64;

/// Non-redundant half spectrum of a real series of length `origin_length`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<ComplexValue>,
    origin_length: usize,
}

/// Number of rFFT bins for a real series of length `n`.
#[inline]
pub fn half_len(n: usize) -> usize {
    n / 2 + 1
}

impl Spectrum {
    pub fn new(bins: Vec<ComplexValue>, origin_length: usize) -> Result<Self> {
        if origin_length == 0 {
            return Err(SpectfError::invalid("spectrum origin length must be positive"));
        }
        if bins.len() != half_len(origin_length) {
            return Err(SpectfError::invalid(format!(
                "spectrum has {} bins but origin length {} requires {}",
                bins.len(),
                origin_length,
                half_len(origin_length)
            )));
        }
        Ok(Self { bins, origin_length })
    }

    pub fn bins(&self) -> &[ComplexValue] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [ComplexValue] {
        &mut self.bins
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn into_bins(self) -> Vec<ComplexValue> {
        self.bins
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|z| z.norm()).collect()
    }

    /// Zero the imaginary parts that must vanish for a real inverse: bin 0
    /// always, and the Nyquist bin when the origin length is even.
    pub fn enforce_hermitian(&mut self) {
        self.bins[0].im = 0.0;
        if self.origin_length % 2 == 0 {
            let last = self.bins.len() - 1;
            self.bins[last].im = 0.0;
        }
    }

    /// Full length-`n` spectrum obtained by Hermitian completion.
    pub fn hermitian_completion(&self) -> Vec<ComplexValue> {
        let n = self.origin_length;
        let mut full = vec![Complex64::new(0.0, 0.0); n];
        full[..self.bins.len()].copy_from_slice(&self.bins);
        for k in self.bins.len()..n {
            full[k] = self.bins[n - k].conj();
        }
        full
    }
}

fn require_nonempty<T>(x: &[T], what: &str) -> Result<()> {
    if x.is_empty() {
        Err(SpectfError::invalid(format!("{what}: input must be nonempty")))
    } else {
        Ok(())
    }
}

/// `exp(sign * 2 pi j * num / den)` with `num` reduced modulo `den` first so
/// the angle stays small.
#[inline]
fn twiddle(num: usize, den: usize, sign: f64) -> Complex64 {
    let r = (num % den) as f64;
    let theta = sign * 2.0 * PI * r / den as f64;
    Complex64::new(theta.cos(), theta.sin())
}

/// Direct `O(n^2)` DFT. Reference for the fast path.
pub fn dft_naive(x: &[ComplexValue]) -> Result<Vec<ComplexValue>> {
    require_nonempty(x, "dft_naive")?;
    Ok(naive_transform(x, -1.0))
}

/// Direct `O(n^2)` inverse DFT, including the `1/n` factor.
pub fn idft_naive(spectrum: &[ComplexValue]) -> Result<Vec<ComplexValue>> {
    require_nonempty(spectrum, "idft_naive")?;
    let n = spectrum.len() as f64;
    Ok(naive_transform(spectrum, 1.0).into_iter().map(|z| z / n).collect())
}

fn naive_transform(x: &[ComplexValue], sign: f64) -> Vec<ComplexValue> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| acc + v * twiddle(k * t, n, sign))
        })
        .collect()
}

/// Fast forward DFT for any nonempty length.
pub fn fft(x: &[ComplexValue]) -> Result<Vec<ComplexValue>> {
    require_nonempty(x, "fft")?;
    let mut buf = x.to_vec();
    transform_in_place(&mut buf);
    Ok(buf)
}

/// Fast inverse DFT (with `1/n`).
pub fn ifft(spectrum: &[ComplexValue]) -> Result<Vec<ComplexValue>> {
    require_nonempty(spectrum, "ifft")?;
    let n = spectrum.len() as f64;
    // ifft(X) = conj(fft(conj(X))) / n
    let mut buf: Vec<Complex64> = spectrum.iter().map(|z| z.conj()).collect();
    transform_in_place(&mut buf);
    Ok(buf.into_iter().map(|z| z.conj() / n).collect())
}

fn transform_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2_in_place(buf);
    } else {
        let out = bluestein(buf);
        buf.copy_from_slice(&out);
    }
}

/// Iterative decimation-in-time radix-2 forward transform.
fn radix2_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();

    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let twiddles: Vec<Complex64> = (0..n / 2).map(|k| twiddle(k, n, -1.0)).collect();

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Chirp-z reduction of an arbitrary-length DFT to a power-of-two circular
/// convolution of length `m >= 2n - 1`.
fn bluestein(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();

    // chirp[k] = exp(-pi j k^2 / n); k^2 is reduced mod 2n to keep the angle exact.
    let chirp: Vec<Complex64> = (0..n).map(|k| twiddle(k * k, 2 * n, -1.0)).collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        let c = chirp[k].conj();
        b[k] = c;
        b[m - k] = c;
    }

    radix2_in_place(&mut a);
    radix2_in_place(&mut b);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= *bi;
    }
    // inverse via conjugation
    for v in a.iter_mut() {
        *v = v.conj();
    }
    radix2_in_place(&mut a);
    let scale = 1.0 / m as f64;

    (0..n).map(|k| a[k].conj() * scale * chirp[k]).collect()
}

/// Forward transform of a real series, keeping the first `n/2 + 1` bins.
pub fn rfft(x: &[f64]) -> Result<Spectrum> {
    require_nonempty(x, "rfft")?;
    let n = x.len();
    let complex: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut full = fft(&complex)?;
    full.truncate(half_len(n));
    Spectrum::new(full, n)
}

/// Inverse of [`rfft`]. The spectrum is Hermitian-completed to length
/// `origin_length`; the imaginary residue of the inverse is discarded.
pub fn irfft(spectrum: &Spectrum) -> Result<Vec<f64>> {
    if spectrum.bins.len() != half_len(spectrum.origin_length) {
        return Err(SpectfError::invalid("irfft: bin count inconsistent with origin length"));
    }
    let full = spectrum.hermitian_completion();
    Ok(ifft(&full)?.into_iter().map(|z| z.re).collect())
}

/// Direct circular convolution `(x * h)[t] = sum_s x[s] h[(t - s) mod n]`.
pub fn circular_convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != h.len() {
        return Err(SpectfError::invalid(format!(
            "circular_convolve: length mismatch {} vs {}",
            x.len(),
            h.len()
        )));
    }
    require_nonempty(x, "circular_convolve")?;
    let n = x.len();
    Ok((0..n)
        .map(|t| (0..n).map(|s| x[s] * h[(t + n - s) % n]).sum())
        .collect())
}

/// Time-domain energy `sum |x_t|^2`.
pub fn signal_energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Frequency-domain energy `(1/n) sum |X_k|^2` of a full spectrum.
pub fn spectral_energy(spectrum: &[ComplexValue]) -> f64 {
    if spectrum.is_empty() {
        return 0.0;
    }
    spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / spectrum.len() as f64
}

/// Largest entrywise deviation between two complex sequences, relative to the
/// infinity norm of `reference` (absolute when the reference is zero).
pub fn max_relative_error(actual: &[ComplexValue], reference: &[ComplexValue]) -> f64 {
    let scale = reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let diff = actual
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
