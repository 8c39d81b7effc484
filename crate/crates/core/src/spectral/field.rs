use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;
use crate::spectral::transform::{forward_pair, inverse_pair, Workspace};
use crate::spectral::{SpectralError, WaveGrid};

/// Three physical component arrays of a real vector field, each `n³` long.
pub type PhysicalField<T> = [Vec<T>; 3];

/// Vector field stored as Fourier coefficients on the half lattice.
///
/// Fields produced by [`SpectralField::leray_project`] and the model are
/// divergence-free with a zero mean mode; raw transforms of physical samples
/// are not until projected.
#[derive(Clone, Debug)]
pub struct SpectralField<T: Real> {
    grid: Arc<WaveGrid<T>>,
    coeffs: Vec<[Complex<T>; 3]>,
}

/// Result of comparing a spectral tail with its Sobolev bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailReport<T> {
    /// `‖(I - P_Λ) u‖²` in L².
    pub tail_norm_sq: T,
    /// `λ_next^{-s} ‖u‖²_{Ḣ^s}`, zero when no mode lies above the cutoff.
    pub bound: T,
    pub next_eigenvalue: Option<u32>,
    pub satisfied: bool,
}

#[inline]
fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(grid: &Arc<WaveGrid<T>>) -> Self {
        Self {
            grid: Arc::clone(grid),
            coeffs: vec![[czero(); 3]; grid.spectral_len()],
        }
    }

    pub fn from_coeffs(
        grid: &Arc<WaveGrid<T>>,
        coeffs: Vec<[Complex<T>; 3]>,
    ) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.spectral_len() {
            return Err(SpectralError::ShapeMismatch {
                expected: grid.spectral_len(),
                found: coeffs.len(),
            });
        }
        Ok(Self {
            grid: Arc::clone(grid),
            coeffs,
        })
    }

    /// Field holding one Fourier mode `k` with amplitude `a` together with
    /// its conjugate partner, i.e. the real field `2 Re(a e^{ik·x})`.
    pub fn single_mode(grid: &Arc<WaveGrid<T>>, k: [i32; 3], a: [Complex<T>; 3]) -> Self {
        let mut f = Self::zeros(grid);
        f.set_mode(k, a);
        f
    }

    /// Sets the coefficient of `k` (and of `-k`), keeping conjugate symmetry.
    pub fn set_mode(&mut self, k: [i32; 3], a: [Complex<T>; 3]) {
        let n = self.grid.n() as i32;
        let flip = k[2] < 0;
        let (k, a) = if flip {
            ([-k[0], -k[1], -k[2]], a.map(|c| c.conj()))
        } else {
            (k, a)
        };
        let wrap = |c: i32| c.rem_euclid(n) as usize;
        let idx = self.grid.index(wrap(k[0]), wrap(k[1]), k[2] as usize);
        self.coeffs[idx] = a;
        if let Some(j) = self.grid.conj_index(idx) {
            if j != idx {
                self.coeffs[j] = a.map(|c| c.conj());
            }
        }
    }

    /// Coefficient of wavevector `k` (any sign; components in `-n/2..n/2`).
    pub fn mode(&self, k: [i32; 3]) -> [Complex<T>; 3] {
        let n = self.grid.n() as i32;
        let flip = k[2] < 0;
        let k = if flip { [-k[0], -k[1], -k[2]] } else { k };
        let wrap = |c: i32| c.rem_euclid(n) as usize;
        let a = self.coeffs[self.grid.index(wrap(k[0]), wrap(k[1]), k[2] as usize)];
        if flip {
            a.map(|c| c.conj())
        } else {
            a
        }
    }

    /// Seeded random divergence-free field. `spectrum(|k|²)` scales the
    /// standard-normal coefficients; only retained modes are populated.
    pub fn random_solenoidal<R: Rng + ?Sized>(
        grid: &Arc<WaveGrid<T>>,
        rng: &mut R,
        spectrum: impl Fn(u32) -> T,
    ) -> Self {
        let mut f = Self::zeros(grid);
        for idx in 0..grid.spectral_len() {
            let amp = if grid.is_retained(idx) && grid.k2(idx) > 0 {
                spectrum(grid.k2(idx))
            } else {
                T::zero()
            };
            for c in 0..3 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                f.coeffs[idx][c] = Complex::new(T::lit(re), T::lit(im)) * amp;
            }
        }
        f.enforce_symmetry();
        f.leray_project()
    }

    pub fn grid(&self) -> &Arc<WaveGrid<T>> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[[Complex<T>; 3]] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [[Complex<T>; 3]] {
        &mut self.coeffs
    }

    pub fn check_grid(&self, other: &Self) -> Result<(), SpectralError> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch)
        }
    }

    /// Restores `û(-k) = conj(û(k))` inside the `kz = 0` plane by copying the
    /// lexicographically first partner; self-conjugate modes get zero
    /// imaginary part.
    pub fn enforce_symmetry(&mut self) {
        for idx in 0..self.coeffs.len() {
            if let Some(j) = self.grid.conj_index(idx) {
                if idx < j {
                    self.coeffs[j] = self.coeffs[idx].map(|c| c.conj());
                } else if idx == j {
                    for c in &mut self.coeffs[idx] {
                        c.im = T::zero();
                    }
                }
            }
        }
    }

    /// Largest violation of conjugate symmetry in the `kz = 0` plane.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        for idx in 0..self.coeffs.len() {
            if let Some(j) = self.grid.conj_index(idx) {
                for c in 0..3 {
                    worst = worst.max((self.coeffs[idx][c] - self.coeffs[j][c].conj()).norm());
                }
            }
        }
        worst
    }

    /// `max_k |k · û_k|`.
    pub fn divergence_defect(&self) -> T {
        let mut worst = T::zero();
        for (idx, a) in self.coeffs.iter().enumerate() {
            let k = self.grid.wavevector(idx).map(|c| T::from_i32(c).unwrap());
            let d = a[0] * k[0] + a[1] * k[1] + a[2] * k[2];
            worst = worst.max(d.norm());
        }
        worst
    }

    /// Leray projection `û ↦ û - k (k·û)/|k|²`, mean mode removed.
    pub fn leray_project(&self) -> Self {
        let mut out = self.clone();
        for (idx, a) in out.coeffs.iter_mut().enumerate() {
            let k2 = self.grid.k2(idx);
            if k2 == 0 {
                *a = [czero(); 3];
                continue;
            }
            let k = self.grid.wavevector(idx).map(|c| T::from_i32(c).unwrap());
            let d = (a[0] * k[0] + a[1] * k[1] + a[2] * k[2]) / T::from_u32(k2).unwrap();
            for c in 0..3 {
                a[c] -= d * k[c];
            }
        }
        out
    }

    /// Stokes operator: multiplication by `|k|²` (divergence-free input).
    pub fn apply_stokes(&self) -> Self {
        self.map_modes(|k2| T::from_u32(k2).unwrap())
    }

    /// Multiplies every mode by `m(|k|²)`.
    pub fn map_modes(&self, m: impl Fn(u32) -> T) -> Self {
        let mut out = self.clone();
        for (idx, a) in out.coeffs.iter_mut().enumerate() {
            let s = m(self.grid.k2(idx));
            for c in a.iter_mut() {
                *c = *c * s;
            }
        }
        out
    }

    /// Keeps modes with `|k|² ≤ cutoff` (ties kept together).
    pub fn galerkin_truncate(&self, cutoff: u32) -> Self {
        self.map_modes(|k2| if k2 <= cutoff { T::one() } else { T::zero() })
    }

    /// Complement `(I - P_Λ) u`.
    pub fn galerkin_tail(&self, cutoff: u32) -> Self {
        self.map_modes(|k2| if k2 > cutoff { T::one() } else { T::zero() })
    }

    /// Zeroes modes outside the dealiased cube (and Nyquist modes).
    pub fn dealias(&self) -> Self {
        let mut out = self.clone();
        for (idx, a) in out.coeffs.iter_mut().enumerate() {
            if !self.grid.is_retained(idx) {
                *a = [czero(); 3];
            }
        }
        out
    }

    /// `∇ × u`: `û ↦ i k × û`.
    pub fn curl(&self) -> Self {
        let mut out = self.clone();
        let i = Complex::new(T::zero(), T::one());
        for (idx, a) in out.coeffs.iter_mut().enumerate() {
            let k = self.grid.wavevector(idx).map(|c| T::from_i32(c).unwrap());
            let u = *a;
            *a = [
                i * (u[2] * k[1] - u[1] * k[2]),
                i * (u[0] * k[2] - u[2] * k[0]),
                i * (u[1] * k[0] - u[0] * k[1]),
            ];
        }
        out
    }

    /// L² inner product (volume-normalised: `⟨u, w⟩ = Σ_k û_k · conj(ŵ_k)`).
    pub fn inner(&self, other: &Self) -> T {
        let mut s = T::zero();
        for (idx, (a, b)) in self.coeffs.iter().zip(&other.coeffs).enumerate() {
            let w = self.grid.weight(idx);
            let d = a[0] * b[0].conj() + a[1] * b[1].conj() + a[2] * b[2].conj();
            s += w * d.re;
        }
        s
    }

    /// Weighted sum `Σ_k m(|k|²) |û_k|²` over the full lattice.
    pub fn weighted_energy(&self, m: impl Fn(u32) -> T) -> T {
        let mut s = T::zero();
        for (idx, a) in self.coeffs.iter().enumerate() {
            let e = a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr();
            if e > T::zero() {
                s += self.grid.weight(idx) * m(self.grid.k2(idx)) * e;
            }
        }
        s
    }

    /// Homogeneous Sobolev norm `(Σ |k|^{2s} |û_k|²)^{1/2}`: `s = 0` is the
    /// L² norm, `s = 1` the V-norm `‖∇u‖`, `s = 2` gives `‖Au‖`.
    pub fn sobolev_norm(&self, s: T) -> T {
        self.weighted_energy(|k2| {
            if k2 == 0 {
                if s == T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                T::from_u32(k2).unwrap().powf(s)
            }
        })
        .sqrt()
    }

    /// Inhomogeneous variant `(Σ (1 + |k|²)^s |û_k|²)^{1/2}`.
    pub fn sobolev_norm_inhomogeneous(&self, s: T) -> T {
        self.weighted_energy(|k2| (T::one() + T::from_u32(k2).unwrap()).powf(s))
            .sqrt()
    }

    pub fn norm_l2(&self) -> T {
        self.weighted_energy(|_| T::one()).sqrt()
    }

    /// V-norm `‖∇u‖`.
    pub fn norm_v(&self) -> T {
        self.weighted_energy(|k2| T::from_u32(k2).unwrap()).sqrt()
    }

    /// `‖Au‖`.
    pub fn norm_a(&self) -> T {
        self.weighted_energy(|k2| {
            let e = T::from_u32(k2).unwrap();
            e * e
        })
        .sqrt()
    }

    /// Tail estimate `‖(I-P_Λ)u‖² ≤ λ_next^{-s} ‖u‖²_{Ḣ^s}`, with `λ_next`
    /// the smallest lattice eigenvalue above the cutoff carrying any mode of
    /// the grid.
    pub fn tail_sobolev_bound_check(&self, cutoff: u32, s: T) -> TailReport<T> {
        let tail = self.weighted_energy(|k2| if k2 > cutoff { T::one() } else { T::zero() });
        let next = (0..self.grid.spectral_len())
            .filter(|&i| {
                let k = self.grid.wavevector(i);
                !k.iter().any(|c| c.unsigned_abs() as usize == self.grid.n() / 2)
            })
            .map(|i| self.grid.k2(i))
            .filter(|&e| e > cutoff)
            .min();
        let Some(next) = next else {
            return TailReport {
                tail_norm_sq: tail,
                bound: T::zero(),
                next_eigenvalue: None,
                satisfied: true,
            };
        };
        let hs = self.sobolev_norm(s);
        let bound = T::from_u32(next).unwrap().powf(-s) * hs * hs;
        // Equality is attained on a single shell; allow rounding.
        let slack = T::lit(64.0) * T::eps() * bound;
        TailReport {
            tail_norm_sq: tail,
            bound,
            next_eigenvalue: Some(next),
            satisfied: tail <= bound + slack,
        }
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        out.scale_mut(s);
        out
    }

    pub fn scale_mut(&mut self, s: T) {
        for a in &mut self.coeffs {
            for c in a.iter_mut() {
                *c = *c * s;
            }
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for c in 0..3 {
                a[c] += b[c] * s;
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(T::one(), other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-T::one(), other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .all(|a| a.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }

    /// Rigorous sup-norm bound `Σ_k |û_k|` of the band-limited field.
    pub fn sup_bound(&self) -> T {
        let mut s = T::zero();
        for (idx, a) in self.coeffs.iter().enumerate() {
            let e = (a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr()).sqrt();
            s += self.grid.weight(idx) * e;
        }
        s
    }

    /// Physical samples of the three components.
    pub fn to_physical(&self, ws: &mut Workspace<T>) -> PhysicalField<T> {
        let len = self.grid.physical_len();
        let mut out: PhysicalField<T> = std::array::from_fn(|_| vec![T::zero(); len]);
        let [ox, oy, oz] = &mut out;
        self.to_physical_into(ws, ox, oy, oz);
        out
    }

    pub(crate) fn to_physical_into(&self, ws: &mut Workspace<T>, ox: &mut [T], oy: &mut [T], oz: &mut [T]) {
        assert!(ws.fits(&self.grid), "workspace built for a different grid");
        let [a, b, c] = self.split_components();
        inverse_pair(&self.grid, ws, &a, Some(&b), ox, Some(oy));
        inverse_pair(&self.grid, ws, &c, None, oz, None);
    }

    pub(crate) fn split_components(&self) -> [Vec<Complex<T>>; 3] {
        std::array::from_fn(|c| self.coeffs.iter().map(|a| a[c]).collect())
    }

    /// Analyses physical samples; the result is not projected.
    pub fn to_spectral(
        grid: &Arc<WaveGrid<T>>,
        samples: &PhysicalField<T>,
        ws: &mut Workspace<T>,
    ) -> Result<Self, SpectralError> {
        for s in samples {
            if s.len() != grid.physical_len() {
                return Err(SpectralError::ShapeMismatch {
                    expected: grid.physical_len(),
                    found: s.len(),
                });
            }
        }
        Ok(Self::from_physical_parts(grid, ws, &samples[0], &samples[1], &samples[2]))
    }

    pub(crate) fn from_physical_parts(
        grid: &Arc<WaveGrid<T>>,
        ws: &mut Workspace<T>,
        x: &[T],
        y: &[T],
        z: &[T],
    ) -> Self {
        let len = grid.spectral_len();
        let mut a = vec![czero(); len];
        let mut b = vec![czero(); len];
        let mut c = vec![czero(); len];
        forward_pair(grid, ws, x, Some(y), &mut a, Some(&mut b));
        forward_pair(grid, ws, z, None, &mut c, None);
        let coeffs = (0..len).map(|i| [a[i], b[i], c[i]]).collect();
        Self {
            grid: Arc::clone(grid),
            coeffs,
        }
    }
}

/// Scalar field in the same half-spectrum layout (used for pressure).
#[derive(Clone, Debug)]
pub struct ScalarField<T: Real> {
    grid: Arc<WaveGrid<T>>,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: &Arc<WaveGrid<T>>) -> Self {
        Self {
            grid: Arc::clone(grid),
            coeffs: vec![czero(); grid.spectral_len()],
        }
    }

    pub fn from_coeffs(grid: &Arc<WaveGrid<T>>, coeffs: Vec<Complex<T>>) -> Self {
        assert_eq!(coeffs.len(), grid.spectral_len());
        Self {
            grid: Arc::clone(grid),
            coeffs,
        }
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    /// `∇φ`: `φ̂ ↦ i k φ̂`.
    pub fn gradient(&self) -> SpectralField<T> {
        let i = Complex::new(T::zero(), T::one());
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(idx, &p)| {
                let k = self.grid.wavevector(idx).map(|c| T::from_i32(c).unwrap());
                [i * p * k[0], i * p * k[1], i * p * k[2]]
            })
            .collect();
        SpectralField {
            grid: Arc::clone(&self.grid),
            coeffs,
        }
    }

    pub fn norm_l2(&self) -> T {
        let mut s = T::zero();
        for (idx, c) in self.coeffs.iter().enumerate() {
            s += self.grid.weight(idx) * c.norm_sqr();
        }
        s.sqrt()
    }

    pub fn to_physical(&self, ws: &mut Workspace<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid.physical_len()];
        inverse_pair(&self.grid, ws, &self.coeffs, None, &mut out, None);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    fn grid() -> Arc<WaveGrid<f64>> {
        WaveGrid::new(8).unwrap()
    }

    #[test]
    fn leray_examples() {
        let g = grid();
        let u = SpectralField::single_mode(&g, [1, 0, 0], [c(1.0), c(1.0), c(0.0)]);
        let p = u.leray_project();
        let idx = g.index(1, 0, 0);
        assert_eq!(p.coeffs()[idx], [c(0.0), c(1.0), c(0.0)]);

        // gradient: û parallel to k
        let grad = SpectralField::single_mode(&g, [1, 2, 0], [c(1.0), c(2.0), c(0.0)]);
        assert!(grad.leray_project().norm_l2() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = SpectralField::random_solenoidal(&g, &mut rng, |_| 1.0);
        assert!(w.leray_project().sub(&w).norm_l2() < 1e-14 * w.norm_l2());
    }

    #[test]
    fn stokes_examples() {
        let g = grid();
        let u = SpectralField::single_mode(&g, [1, 0, 0], [c(0.0), c(1.0), c(0.0)]);
        assert_eq!(u.apply_stokes().coeffs(), u.coeffs());
        let u = SpectralField::single_mode(&g, [1, 1, 0], [c(1.0), c(-1.0), c(0.0)]);
        assert!(u.apply_stokes().sub(&u.scale(2.0)).norm_l2() < 1e-15);
        let z = SpectralField::zeros(&g);
        assert_eq!(z.apply_stokes().norm_l2(), 0.0);
    }

    #[test]
    fn truncation_threshold_is_inclusive() {
        let g = grid();
        let u = SpectralField::single_mode(&g, [2, 0, 0], [c(0.0), c(1.0), c(0.0)]);
        assert_eq!(u.galerkin_truncate(3).norm_l2(), 0.0);
        assert_eq!(u.galerkin_truncate(4).norm_l2(), u.norm_l2());
        assert_eq!(u.galerkin_truncate(0).norm_l2(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = SpectralField::random_solenoidal(&g, &mut rng, |_| 1.0);
        assert_eq!(w.galerkin_truncate(g.max_retained_eigenvalue()).coeffs(), w.coeffs());
    }

    #[test]
    fn norms_of_modes() {
        let g = grid();
        // unit-amplitude λ₁ mode: u = 2 Re(a e^{ix}) with |a|² = 1/2 so ‖u‖ = 1
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let u = SpectralField::single_mode(&g, [1, 0, 0], [c(0.0), c(a), c(0.0)]);
        for s in [0.0, 1.0, 2.0] {
            assert!((u.sobolev_norm(s) - 1.0).abs() < 1e-15);
        }
        let mut w = u.clone();
        w.set_mode([0, 2, 0], [c(0.0), c(0.0), c(a)]);
        // direct mode sum: 1·1 + 4·1
        assert!((w.norm_v() - 5f64.sqrt()).abs() < 1e-14);
        assert_eq!(SpectralField::zeros(&g).sobolev_norm(1.5), 0.0);
    }

    #[test]
    fn tail_bound_equality_case() {
        let g = grid();
        let u = SpectralField::single_mode(&g, [2, 0, 0], [c(0.0), c(1.0), c(0.0)]);
        let r = u.tail_sobolev_bound_check(3, 1.0);
        assert_eq!(r.next_eigenvalue, Some(4));
        assert!((r.tail_norm_sq - u.norm_l2().powi(2)).abs() < 1e-15);
        assert!((r.bound - r.tail_norm_sq).abs() < 1e-15);
        assert!(r.satisfied);
        let below = u.tail_sobolev_bound_check(4, 1.0);
        assert_eq!(below.tail_norm_sq, 0.0);
        assert!(below.satisfied);
    }

    #[test]
    fn dealias_examples() {
        let g = grid();
        // n = 8: |k_i| <= 2 retained
        let inside = SpectralField::single_mode(&g, [2, 1, 0], [c(0.0), c(0.0), c(1.0)]);
        assert_eq!(inside.dealias().coeffs(), inside.coeffs());
        let outside = SpectralField::single_mode(&g, [3, 0, 0], [c(0.0), c(1.0), c(0.0)]);
        assert_eq!(outside.dealias().norm_l2(), 0.0);
        let once = outside.add(&inside).dealias();
        assert_eq!(once.dealias().coeffs(), once.coeffs());
    }

    #[test]
    fn round_trip_zero_and_random() {
        let g = grid();
        let mut ws = Workspace::new(&g);
        let z = SpectralField::zeros(&g);
        let back = SpectralField::to_spectral(&g, &z.to_physical(&mut ws), &mut ws).unwrap();
        assert_eq!(back.norm_l2(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = SpectralField::random_solenoidal(&g, &mut rng, |k2| 1.0 / (1.0 + k2 as f64));
        let back = SpectralField::to_spectral(&g, &u.to_physical(&mut ws), &mut ws).unwrap();
        assert!(back.sub(&u).norm_l2() <= 1e-12 * u.norm_l2());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = grid();
        let mut ws = Workspace::new(&g);
        let bad = [vec![0.0; 10], vec![0.0; 10], vec![0.0; 10]];
        assert!(matches!(
            SpectralField::to_spectral(&g, &bad, &mut ws),
            Err(SpectralError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn generic_over_f32() {
        let g = WaveGrid::<f32>::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = SpectralField::<f32>::random_solenoidal(&g, &mut rng, |_| 1.0);
        let p = u.leray_project();
        assert!(p.sub(&u).norm_l2() <= 1e-5 * u.norm_l2());
        assert!(u.divergence_defect() <= 1e-5 * u.norm_v());
    }
}
