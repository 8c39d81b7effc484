//! Real 3-D transforms between the half-spectrum layout and physical samples.
//!
//! Two real fields share one complex FFT: `a + i b` is transformed and the
//! halves are separated with the conjugate-symmetry map.

use num_complex::Complex;

use crate::scalar::Real;
use crate::spectral::WaveGrid;

/// Caller-owned scratch buffers for transforms and nonlinear products.
#[derive(Debug, Clone)]
pub struct Workspace<T: Real> {
    n: usize,
    pub(crate) full: Vec<Complex<T>>,
    block: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    /// Six physical scratch arrays (e.g. a vector field and its curl).
    pub(crate) phys: [Vec<T>; 6],
}

impl<T: Real> Workspace<T> {
    pub fn new(grid: &WaveGrid<T>) -> Self {
        let n = grid.n();
        let len = grid.physical_len();
        let scratch_len = grid
            .fft_forward
            .get_inplace_scratch_len()
            .max(grid.fft_inverse.get_inplace_scratch_len());
        let zero = Complex::new(T::zero(), T::zero());
        Self {
            n,
            full: vec![zero; len],
            block: vec![zero; n * n],
            scratch: vec![zero; scratch_len],
            phys: std::array::from_fn(|_| vec![T::zero(); len]),
        }
    }

    pub(crate) fn fits(&self, grid: &WaveGrid<T>) -> bool {
        self.n == grid.n()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// In-place unnormalised 3-D FFT of `ws.full` (x-major, z fastest).
fn fft3<T: Real>(grid: &WaveGrid<T>, ws: &mut Workspace<T>, dir: Direction) {
    let n = grid.n();
    let fft = match dir {
        Direction::Forward => &grid.fft_forward,
        Direction::Inverse => &grid.fft_inverse,
    };
    // z lines are contiguous.
    fft.process_with_scratch(&mut ws.full, &mut ws.scratch);
    // y lines: gather one x-slab with y fastest.
    for x in 0..n {
        let base = x * n * n;
        for y in 0..n {
            for z in 0..n {
                ws.block[z * n + y] = ws.full[base + y * n + z];
            }
        }
        fft.process_with_scratch(&mut ws.block, &mut ws.scratch);
        for y in 0..n {
            for z in 0..n {
                ws.full[base + y * n + z] = ws.block[z * n + y];
            }
        }
    }
    // x lines: gather one y-slab with x fastest.
    for y in 0..n {
        for x in 0..n {
            for z in 0..n {
                ws.block[z * n + x] = ws.full[(x * n + y) * n + z];
            }
        }
        fft.process_with_scratch(&mut ws.block, &mut ws.scratch);
        for x in 0..n {
            for z in 0..n {
                ws.full[(x * n + y) * n + z] = ws.block[z * n + x];
            }
        }
    }
}

/// Value of a Hermitian half-spectrum at full-lattice indices.
#[inline]
fn hermitian_at<T: Real>(
    grid: &WaveGrid<T>,
    half: &[Complex<T>],
    ix: usize,
    iy: usize,
    iz: usize,
) -> Complex<T> {
    let n = grid.n();
    if iz <= n / 2 {
        half[grid.index(ix, iy, iz)]
    } else {
        half[grid.index((n - ix) % n, (n - iy) % n, n - iz)].conj()
    }
}

/// Synthesise physical samples of up to two real fields from their half
/// spectra. `out_b` is written only when `b` is given.
pub fn inverse_pair<T: Real>(
    grid: &WaveGrid<T>,
    ws: &mut Workspace<T>,
    a: &[Complex<T>],
    b: Option<&[Complex<T>]>,
    out_a: &mut [T],
    out_b: Option<&mut [T]>,
) {
    let n = grid.n();
    let i = Complex::new(T::zero(), T::one());
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let mut c = hermitian_at(grid, a, ix, iy, iz);
                if let Some(b) = b {
                    c += i * hermitian_at(grid, b, ix, iy, iz);
                }
                ws.full[(ix * n + iy) * n + iz] = c;
            }
        }
    }
    fft3(grid, ws, Direction::Inverse);
    for (o, c) in out_a.iter_mut().zip(&ws.full) {
        *o = c.re;
    }
    if let Some(out_b) = out_b {
        for (o, c) in out_b.iter_mut().zip(&ws.full) {
            *o = c.im;
        }
    }
}

/// Analyse up to two real physical fields into half spectra, normalised so
/// that `u(x) = Σ_k û_k e^{ik·x}`. Nyquist content is discarded.
pub fn forward_pair<T: Real>(
    grid: &WaveGrid<T>,
    ws: &mut Workspace<T>,
    a: &[T],
    b: Option<&[T]>,
    out_a: &mut [Complex<T>],
    out_b: Option<&mut [Complex<T>]>,
) {
    let n = grid.n();
    match b {
        Some(b) => {
            for ((c, &x), &y) in ws.full.iter_mut().zip(a).zip(b) {
                *c = Complex::new(x, y);
            }
        }
        None => {
            for (c, &x) in ws.full.iter_mut().zip(a) {
                *c = Complex::new(x, T::zero());
            }
        }
    }
    fft3(grid, ws, Direction::Forward);
    let scale = T::one() / T::from_usize(grid.physical_len()).unwrap();
    let half = T::lit(0.5);
    let zero = Complex::new(T::zero(), T::zero());
    let mut out_b = out_b;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..grid.nz_half() {
                let idx = grid.index(ix, iy, iz);
                let k = grid.wavevector(idx);
                if k.iter().any(|c| c.unsigned_abs() as usize == n / 2) {
                    out_a[idx] = zero;
                    if let Some(ob) = out_b.as_deref_mut() {
                        ob[idx] = zero;
                    }
                    continue;
                }
                let c = ws.full[(ix * n + iy) * n + iz] * scale;
                if b.is_none() {
                    out_a[idx] = c;
                    continue;
                }
                let m = ws.full[(((n - ix) % n) * n + (n - iy) % n) * n + (n - iz) % n].conj() * scale;
                out_a[idx] = (c + m) * half;
                if let Some(ob) = out_b.as_deref_mut() {
                    // (c - m) / (2i)
                    let d = (c - m) * half;
                    ob[idx] = Complex::new(d.im, -d.re);
                }
            }
        }
    }
}
