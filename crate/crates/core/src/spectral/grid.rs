use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;
use crate::spectral::SpectralError;

/// Wavevector lattice of the periodic box `[0, 2π)³` sampled with `n` points
/// per axis.
///
/// Coefficients are stored in the real-input layout: `kx` and `ky` run over
/// all `n` FFT indices, `kz` over `0..=n/2`. Modes with `kz < 0` are implied
/// by conjugate symmetry `û(-k) = conj(û(k))`; inside the `kz = 0` plane both
/// partners are stored and [`WaveGrid::conj_index`] pairs them. Nyquist modes
/// (any `|k_i| = n/2`) are never populated.
pub struct WaveGrid<T: Real> {
    n: usize,
    nzh: usize,
    dealias: Ratio<u32>,
    wavevectors: Vec<[i32; 3]>,
    k2: Vec<u32>,
    conj: Vec<usize>,
    retained: Vec<bool>,
    shells: Vec<u32>,
    pub(crate) fft_forward: Arc<dyn Fft<T>>,
    pub(crate) fft_inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for WaveGrid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveGrid")
            .field("n", &self.n)
            .field("dealias", &self.dealias)
            .finish()
    }
}

impl<T: Real> WaveGrid<T> {
    /// Grid with the default two-thirds dealiasing rule.
    pub fn new(n: usize) -> Result<Arc<Self>, SpectralError> {
        Self::with_dealias(n, Ratio::new(2, 3))
    }

    pub fn with_dealias(n: usize, dealias: Ratio<u32>) -> Result<Arc<Self>, SpectralError> {
        if n < 4 || n % 2 != 0 {
            return Err(SpectralError::InvalidResolution(n));
        }
        if *dealias.numer() == 0 || dealias > Ratio::from_integer(1) {
            return Err(SpectralError::InvalidDealias(dealias.to_string()));
        }
        let nzh = n / 2 + 1;
        let len = n * n * nzh;
        let half = (n / 2) as i32;
        let mut wavevectors = Vec::with_capacity(len);
        let mut k2 = Vec::with_capacity(len);
        let mut conj = Vec::with_capacity(len);
        let mut retained = Vec::with_capacity(len);
        let (p, q) = (*dealias.numer() as i64, *dealias.denom() as i64);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..nzh {
                    let k = [fft_wavenumber(ix, n), fft_wavenumber(iy, n), iz as i32];
                    let nyquist = k.iter().any(|&c| c.abs() == half);
                    // |k_i| <= (p/q)(n/2)  <=>  2 q |k_i| <= p n, exact in integers.
                    let inside = k.iter().all(|&c| 2 * q * (c.abs() as i64) <= p * n as i64);
                    wavevectors.push(k);
                    k2.push((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as u32);
                    retained.push(inside && !nyquist);
                    conj.push(if iz == 0 {
                        ((n - ix) % n * n + (n - iy) % n) * nzh
                    } else {
                        usize::MAX
                    });
                }
            }
        }
        let mut shells: Vec<u32> = k2
            .iter()
            .zip(&retained)
            .filter(|(&e, &r)| r && e > 0)
            .map(|(&e, _)| e)
            .collect();
        shells.sort_unstable();
        shells.dedup();
        if shells.first() != Some(&1) {
            return Err(SpectralError::InvalidDealias(format!(
                "{dealias} removes the |k|^2 = 1 shell at n = {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(n);
        let fft_inverse = planner.plan_fft_inverse(n);
        Ok(Arc::new(Self {
            n,
            nzh,
            dealias,
            wavevectors,
            k2,
            conj,
            retained,
            shells,
            fft_forward,
            fft_inverse,
        }))
    }

    /// Grid points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored `kz` planes, `n/2 + 1`.
    pub fn nz_half(&self) -> usize {
        self.nzh
    }

    /// Stored coefficient count.
    pub fn spectral_len(&self) -> usize {
        self.n * self.n * self.nzh
    }

    /// Physical sample count `n³`.
    pub fn physical_len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn dealias_fraction(&self) -> Ratio<u32> {
        self.dealias
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.nzh + iz
    }

    #[inline]
    pub fn wavevector(&self, idx: usize) -> [i32; 3] {
        self.wavevectors[idx]
    }

    /// Stokes eigenvalue `|k|²` of a mode.
    #[inline]
    pub fn k2(&self, idx: usize) -> u32 {
        self.k2[idx]
    }

    /// Multiplicity of a stored coefficient in full-lattice sums: modes with
    /// `kz > 0` stand for themselves and their conjugate partner.
    #[inline]
    pub fn weight(&self, idx: usize) -> T {
        if idx % self.nzh == 0 {
            T::one()
        } else {
            T::lit(2.0)
        }
    }

    /// Whether the mode survives dealiasing (and is not a Nyquist mode).
    #[inline]
    pub fn is_retained(&self, idx: usize) -> bool {
        self.retained[idx]
    }

    /// Index of the stored partner `-k` for modes in the `kz = 0` plane;
    /// `None` for `kz > 0`, whose partner is implicit.
    #[inline]
    pub fn conj_index(&self, idx: usize) -> Option<usize> {
        let j = self.conj[idx];
        (j != usize::MAX).then_some(j)
    }

    /// Distinct nonzero eigenvalues `|k|²` among retained modes, ascending.
    pub fn shells(&self) -> &[u32] {
        &self.shells
    }

    /// Smallest retained nonzero eigenvalue λ₁ (equal to 1 on this torus).
    pub fn lambda1(&self) -> u32 {
        self.shells[0]
    }

    /// Largest retained eigenvalue; the natural Galerkin threshold.
    pub fn max_retained_eigenvalue(&self) -> u32 {
        *self.shells.last().expect("nonempty shells")
    }

    /// Smallest retained eigenvalue strictly above `cutoff`.
    pub fn next_eigenvalue_above(&self, cutoff: u32) -> Option<u32> {
        let pos = self.shells.partition_point(|&e| e <= cutoff);
        self.shells.get(pos).copied()
    }

    /// Position of an eigenvalue in the shell list (shell index).
    pub fn shell_index(&self, eigenvalue: u32) -> Option<usize> {
        self.shells.binary_search(&eigenvalue).ok()
    }

    /// Discrete Agmon constant `S = (Σ_{retained k≠0} |k|^{-2})^{1/2}` with
    /// `‖∇×u‖_∞ ≤ S ‖Au‖` for fields supported on retained modes.
    pub fn agmon_constant(&self) -> f64 {
        let mut sum = 0.0;
        for idx in 0..self.spectral_len() {
            if self.retained[idx] && self.k2[idx] > 0 {
                let w = if idx % self.nzh == 0 { 1.0 } else { 2.0 };
                sum += w / self.k2[idx] as f64;
            }
        }
        sum.sqrt()
    }

    /// Physical coordinate of axis index `i`.
    pub fn coordinate(&self, i: usize) -> T {
        T::lit(2.0) * T::PI() * T::from_usize(i).unwrap() / T::from_usize(self.n).unwrap()
    }

    pub fn same_as(&self, other: &Self) -> bool {
        std::ptr::eq(self, other) || (self.n == other.n && self.dealias == other.dealias)
    }
}

/// Signed wavenumber for FFT index `i` on an `n`-point axis.
#[inline]
pub fn fft_wavenumber(i: usize, n: usize) -> i32 {
    if i <= n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda1_is_one_and_shells_sorted() {
        let g = WaveGrid::<f64>::new(16).unwrap();
        assert_eq!(g.lambda1(), 1);
        assert!(g.shells().windows(2).all(|w| w[0] < w[1]));
        // |k_i| <= 5 at n = 16 under the 2/3 rule.
        assert_eq!(g.max_retained_eigenvalue(), 75);
        assert_eq!(g.next_eigenvalue_above(3), Some(4));
        assert_eq!(g.next_eigenvalue_above(75), None);
    }

    #[test]
    fn conj_map_is_involution() {
        let g = WaveGrid::<f64>::new(8).unwrap();
        for idx in 0..g.spectral_len() {
            if let Some(j) = g.conj_index(idx) {
                assert_eq!(g.conj_index(j), Some(idx));
                let (a, b) = (g.wavevector(idx), g.wavevector(j));
                if !a.iter().any(|c| c.abs() == 4) {
                    assert_eq!([-a[0], -a[1], -a[2]], b);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(WaveGrid::<f64>::new(7).is_err());
        assert!(WaveGrid::<f64>::new(2).is_err());
        assert!(WaveGrid::<f64>::with_dealias(4, Ratio::new(1, 4)).is_err());
    }

    #[test]
    fn dealias_fraction_is_exact() {
        // n = 12, 2/3 rule: |k_i| <= 4 retained exactly, 5 removed.
        let g = WaveGrid::<f64>::new(12).unwrap();
        let keep = g.index(4, 0, 0);
        let drop = g.index(5, 0, 0);
        assert!(g.is_retained(keep));
        assert!(!g.is_retained(drop));
    }
}
