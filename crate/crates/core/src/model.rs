//! Calmed rotational Navier–Stokes right-hand sides.
//!
//! With `u = v + h z` the transformed equation reads
//!
//! ```text
//! dv/dt = -νA(v + hz) - B(ζ(u), u) + P f + γ h z,   B(a, b) = P((∇×b) × a)
//! ```
//!
//! and the untransformed drift is `-νAu - B(ζ(u), u) + P f`. Products are
//! formed on the physical grid from dealiased inputs, and every output is
//! dealiased, Leray-projected and truncated to the Galerkin cutoff `Λ`.

use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calming::{CalmingSpec, CalmingVariant};
use crate::noise::trapezoid_strided;
use crate::scalar::Real;
use crate::spectral::{ScalarField, SpectralError, SpectralField, WaveGrid, Workspace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("noise profile h is not divergence-free (defect {0:e})")]
    NotSolenoidal(f64),
    #[error("noise profile h has modes outside the dealiased band")]
    Unresolved,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    Zero,
    Constant,
    /// `f(t) = e^{σt} g`
    ExpWindow,
}

/// Deterministic forcing `f(t) = φ(t) g` with a fixed profile `g`.
#[derive(Clone, Debug)]
pub struct ForcingSpec<T: Real> {
    pub kind: ForcingKind,
    pub sigma: T,
    pub profile: SpectralField<T>,
}

impl<T: Real> ForcingSpec<T> {
    pub fn zero(grid: &Arc<WaveGrid<T>>) -> Self {
        Self {
            kind: ForcingKind::Zero,
            sigma: T::zero(),
            profile: SpectralField::zeros(grid),
        }
    }

    pub fn constant(profile: SpectralField<T>) -> Self {
        Self {
            kind: ForcingKind::Constant,
            sigma: T::zero(),
            profile,
        }
    }

    pub fn exp_window(profile: SpectralField<T>, sigma: T) -> Self {
        Self {
            kind: ForcingKind::ExpWindow,
            sigma,
            profile,
        }
    }

    pub fn factor(&self, t: T) -> T {
        match self.kind {
            ForcingKind::Zero => T::zero(),
            ForcingKind::Constant => T::one(),
            ForcingKind::ExpWindow => (self.sigma * t).exp(),
        }
    }

    pub fn at(&self, t: T) -> SpectralField<T> {
        self.profile.scale(self.factor(t))
    }

    /// `‖f(t)‖²`
    pub fn norm_sq(&self, t: T) -> T {
        let a = self.factor(t);
        let g = self.profile.norm_l2();
        a * a * g * g
    }

    /// `∫_{-∞}^{τ} e^{αs} ‖f(s)‖² ds < ∞`
    pub fn satisfies_a1(&self, alpha: T) -> bool {
        match self.kind {
            ForcingKind::Zero | ForcingKind::Constant => true,
            ForcingKind::ExpWindow => alpha + T::lit(2.0) * self.sigma > T::zero(),
        }
    }

    /// `e^{ct} ∫_{-∞}^0 e^{cs} ‖f(s+t)‖² ds → 0` as `t → -∞`, for all `c > 0`.
    /// For `e^{σt} g` the integral is `e^{2σt}‖g‖²/(c + 2σ)`, finite for
    /// every `c > 0` only when `σ ≥ 0`.
    pub fn satisfies_a2(&self) -> bool {
        match self.kind {
            ForcingKind::Zero | ForcingKind::Constant => true,
            ForcingKind::ExpWindow => self.sigma >= T::zero(),
        }
    }

    /// Closed form of `∫_{t0}^{t1} e^{αs} ‖f(s)‖² ds`.
    pub fn weighted_integral(&self, alpha: T, t0: T, t1: T) -> T {
        let g2 = self.profile.norm_l2().powi(2);
        let rate = match self.kind {
            ForcingKind::Zero => return T::zero(),
            ForcingKind::Constant => alpha,
            ForcingKind::ExpWindow => alpha + T::lit(2.0) * self.sigma,
        };
        if rate == T::zero() {
            return g2 * (t1 - t0);
        }
        g2 * ((rate * t1).exp() - (rate * t0).exp()) / rate
    }
}

/// Raw model parameters; [`Model::new`] validates them.
#[derive(Clone, Debug)]
pub struct ModelParams<T: Real> {
    pub grid: Arc<WaveGrid<T>>,
    pub nu: T,
    pub calming: CalmingSpec<T>,
    /// OU rate γ.
    pub gamma: T,
    /// Noise profile; must be divergence-free and resolved.
    pub h: SpectralField<T>,
    pub forcing: ForcingSpec<T>,
    /// Exponent of the forcing assumptions; defaults to `νλ₁/2`.
    pub alpha: Option<T>,
    /// Galerkin threshold `Λ` on `|k|²`; defaults to the largest retained.
    pub cutoff: Option<u32>,
    /// Test hook: `false` drops `B(ζ(u), u)` entirely.
    pub nonlinear: bool,
}

impl<T: Real> ModelParams<T> {
    pub fn new(grid: &Arc<WaveGrid<T>>, nu: T, calming: CalmingSpec<T>) -> Self {
        Self {
            grid: Arc::clone(grid),
            nu,
            calming,
            gamma: T::one(),
            h: SpectralField::zeros(grid),
            forcing: ForcingSpec::zero(grid),
            alpha: None,
            cutoff: None,
            nonlinear: true,
        }
    }
}

/// Validated, immutable model.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    grid: Arc<WaveGrid<T>>,
    nu: T,
    calming: CalmingSpec<T>,
    gamma: T,
    h: SpectralField<T>,
    forcing: ForcingSpec<T>,
    alpha: T,
    cutoff: u32,
    nonlinear: bool,
    /// `-νAh + γh`, applied times `z`.
    h_drive: SpectralField<T>,
    /// `P_Λ P g`
    projected_profile: SpectralField<T>,
}

impl<T: Real> Model<T> {
    pub fn new(p: ModelParams<T>) -> Result<Self, ModelError> {
        let grid = p.grid;
        if !(p.nu > T::zero() && p.nu.is_finite()) {
            return Err(invalid("model.nu", format!("must be positive, got {}", p.nu.to_f64_lossy())));
        }
        if !(p.gamma > T::zero() && p.gamma.is_finite()) {
            return Err(invalid("noise.gamma", format!("must be positive, got {}", p.gamma.to_f64_lossy())));
        }
        let lambda1 = T::from_u32(grid.lambda1()).unwrap();
        let alpha = p.alpha.unwrap_or(p.nu * lambda1 / T::lit(2.0));
        if !(alpha > T::zero() && alpha < p.nu * lambda1) {
            return Err(invalid(
                "model.alpha",
                format!(
                    "must lie in (0, νλ₁) = (0, {}), got {}",
                    (p.nu * lambda1).to_f64_lossy(),
                    alpha.to_f64_lossy()
                ),
            ));
        }
        let max = grid.max_retained_eigenvalue();
        let cutoff = p.cutoff.unwrap_or(max);
        if cutoff == 0 || cutoff > max {
            return Err(invalid(
                "grid.cutoff",
                format!("must lie in 1..={max}, got {cutoff}"),
            ));
        }
        if !p.h.grid().same_as(&grid) || !p.forcing.profile.grid().same_as(&grid) {
            return Err(SpectralError::GridMismatch.into());
        }
        let h_scale = p.h.norm_l2().to_f64_lossy();
        let defect = p.h.divergence_defect().to_f64_lossy();
        if defect > 1e-10 * h_scale.max(1.0) {
            return Err(ModelError::NotSolenoidal(defect));
        }
        if p.h.sub(&p.h.dealias()).norm_l2() > T::zero() {
            return Err(ModelError::Unresolved);
        }
        let nu = p.nu;
        let h_drive = p
            .h
            .map_modes(|k2| p.gamma - nu * T::from_u32(k2).unwrap())
            .galerkin_truncate(cutoff);
        let projected_profile = p.forcing.profile.dealias().leray_project().galerkin_truncate(cutoff);
        Ok(Self {
            grid,
            nu,
            calming: p.calming,
            gamma: p.gamma,
            h: p.h,
            forcing: p.forcing,
            alpha,
            cutoff,
            nonlinear: p.nonlinear,
            h_drive,
            projected_profile,
        })
    }

    pub fn grid(&self) -> &Arc<WaveGrid<T>> {
        &self.grid
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn calming(&self) -> &CalmingSpec<T> {
        &self.calming
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn h(&self) -> &SpectralField<T> {
        &self.h
    }

    pub fn forcing(&self) -> &ForcingSpec<T> {
        &self.forcing
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn is_nonlinear(&self) -> bool {
        self.nonlinear
    }

    /// Same model at a different Galerkin threshold.
    pub fn with_cutoff(&self, cutoff: u32) -> Result<Self, ModelError> {
        let mut p = self.params();
        p.cutoff = Some(cutoff);
        Self::new(p)
    }

    /// Same model with a different calming function.
    pub fn with_calming(&self, calming: CalmingSpec<T>) -> Result<Self, ModelError> {
        let mut p = self.params();
        p.calming = calming;
        Self::new(p)
    }

    pub fn params(&self) -> ModelParams<T> {
        ModelParams {
            grid: Arc::clone(&self.grid),
            nu: self.nu,
            calming: self.calming,
            gamma: self.gamma,
            h: self.h.clone(),
            forcing: self.forcing.clone(),
            alpha: Some(self.alpha),
            cutoff: Some(self.cutoff),
            nonlinear: self.nonlinear,
        }
    }

    /// `M_ε`, or `None` for the identity.
    pub fn m_eps(&self) -> Option<T> {
        self.calming.sup_norm().ok()
    }

    /// `κ = νλ₁ - 2M_ε²/ν` (−∞ without calming).
    pub fn kappa(&self) -> T {
        let lambda1 = T::from_u32(self.grid.lambda1()).unwrap();
        match self.m_eps() {
            Some(m) => self.nu * lambda1 - T::lit(2.0) * m * m / self.nu,
            None => T::neg_infinity(),
        }
    }

    /// `(∇×b) × ζ(a)` (or `× a` when `calm` is false), dealiased but not
    /// projected.
    fn curl_cross(
        &self,
        a: &SpectralField<T>,
        b: &SpectralField<T>,
        calm: bool,
        ws: &mut Workspace<T>,
    ) -> SpectralField<T> {
        let w = b.curl();
        let mut p = std::mem::take(&mut ws.phys);
        {
            let [ax, ay, az, wx, wy, wz] = &mut p;
            a.to_physical_into(ws, ax, ay, az);
            w.to_physical_into(ws, wx, wy, wz);
            if calm {
                self.calming.calm_field(ax, ay, az);
            }
            for i in 0..ax.len() {
                let (x, y, z) = (ax[i], ay[i], az[i]);
                ax[i] = wy[i] * z - wz[i] * y;
                ay[i] = wz[i] * x - wx[i] * z;
                az[i] = wx[i] * y - wy[i] * x;
            }
        }
        let out = SpectralField::from_physical_parts(&self.grid, ws, &p[0], &p[1], &p[2]);
        ws.phys = p;
        out.dealias()
    }

    /// `B(a, b) = P((∇×b) × a)`, dealiased and projected (not truncated).
    pub fn rotational_bilinear(
        &self,
        a: &SpectralField<T>,
        b: &SpectralField<T>,
        ws: &mut Workspace<T>,
    ) -> Result<SpectralField<T>, ModelError> {
        a.check_grid(b)?;
        self.check(a)?;
        Ok(self.curl_cross(a, b, false, ws).leray_project())
    }

    /// `b(a, b, w) = ⟨B(a, b), w⟩`.
    pub fn trilinear(
        &self,
        a: &SpectralField<T>,
        b: &SpectralField<T>,
        w: &SpectralField<T>,
        ws: &mut Workspace<T>,
    ) -> Result<T, ModelError> {
        b.check_grid(w)?;
        Ok(self.rotational_bilinear(a, b, ws)?.inner(w))
    }

    /// `P_Λ B(ζ(u), u)`; zero when the nonlinearity hook is off.
    pub fn calmed_advection(&self, u: &SpectralField<T>, ws: &mut Workspace<T>) -> SpectralField<T> {
        if !self.nonlinear {
            return SpectralField::zeros(&self.grid);
        }
        let calm = self.calming.variant() != CalmingVariant::Identity;
        self.curl_cross(u, u, calm, ws)
            .leray_project()
            .galerkin_truncate(self.cutoff)
    }

    fn check(&self, f: &SpectralField<T>) -> Result<(), ModelError> {
        if f.grid().same_as(&self.grid) {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch.into())
        }
    }

    /// Everything in `rhs_v` except `-νAv`:
    /// `(γ - νA) h z - B(ζ(u), u) + P f(t)` with `u = v + hz`.
    pub fn non_stokes(&self, v: &SpectralField<T>, t: T, z: T, ws: &mut Workspace<T>) -> SpectralField<T> {
        let mut u = v.clone();
        u.axpy(z, &self.h);
        let mut out = self.calmed_advection(&u, ws);
        out.scale_mut(-T::one());
        out.axpy(z, &self.h_drive);
        let a = self.forcing.factor(t);
        if a != T::zero() {
            out.axpy(a, &self.projected_profile);
        }
        out
    }

    /// Right-hand side of the transformed equation for `v`.
    pub fn rhs_v(&self, v: &SpectralField<T>, t: T, z: T, ws: &mut Workspace<T>) -> Result<SpectralField<T>, ModelError> {
        self.check(v)?;
        let nu = self.nu;
        let mut out = v
            .galerkin_truncate(self.cutoff)
            .map_modes(|k2| -nu * T::from_u32(k2).unwrap());
        out.axpy(T::one(), &self.non_stokes(v, t, z, ws));
        Ok(out)
    }

    /// Drift of the untransformed equation: `-νAu - B(ζ(u), u) + P f(t)`.
    pub fn rhs_u(&self, u: &SpectralField<T>, t: T, ws: &mut Workspace<T>) -> Result<SpectralField<T>, ModelError> {
        self.check(u)?;
        let nu = self.nu;
        let mut out = u
            .galerkin_truncate(self.cutoff)
            .map_modes(|k2| -nu * T::from_u32(k2).unwrap());
        let adv = self.calmed_advection(u, ws);
        out.axpy(-T::one(), &adv);
        out.axpy(self.forcing.factor(t), &self.projected_profile);
        Ok(out)
    }

    /// Pressure `π` with `∇π = (I - P)(-(∇×u) × ζ(u) + f)`, zero mean.
    pub fn recover_pressure(&self, u: &SpectralField<T>, t: T, ws: &mut Workspace<T>) -> Result<ScalarField<T>, ModelError> {
        let n = self.pressure_source(u, t, ws)?;
        let i = Complex::new(T::zero(), T::one());
        let coeffs = n
            .coeffs()
            .iter()
            .enumerate()
            .map(|(idx, a)| {
                let k2 = self.grid.k2(idx);
                if k2 == 0 {
                    return Complex::new(T::zero(), T::zero());
                }
                let k = self.grid.wavevector(idx).map(|c| T::from_i32(c).unwrap());
                let d = a[0] * k[0] + a[1] * k[1] + a[2] * k[2];
                -i * d / T::from_u32(k2).unwrap()
            })
            .collect();
        Ok(ScalarField::from_coeffs(&self.grid, coeffs))
    }

    /// `-(∇×u) × ζ(u) + f(t)`, dealiased, not projected.
    pub fn pressure_source(&self, u: &SpectralField<T>, t: T, ws: &mut Workspace<T>) -> Result<SpectralField<T>, ModelError> {
        self.check(u)?;
        let mut out = if self.nonlinear {
            let calm = self.calming.variant() != CalmingVariant::Identity;
            self.curl_cross(u, u, calm, ws).scale(-T::one())
        } else {
            SpectralField::zeros(&self.grid)
        };
        out.axpy(self.forcing.factor(t), &self.forcing.profile.dealias());
        Ok(out)
    }

    /// Checks the structural assumptions on `f` and `ζ`. `A1` is also
    /// evaluated numerically on `[-horizon, tau]`.
    pub fn validate_assumptions(&self, tau: f64, horizon: f64) -> AssumptionReport {
        let nu = self.nu.to_f64_lossy();
        let lambda1 = self.grid.lambda1() as f64;
        let alpha = self.alpha.to_f64_lossy();
        let threshold = nu * (lambda1 / 2.0).sqrt();
        let m = self.m_eps().map(|m| m.to_f64_lossy());
        let kappa = self.kappa().to_f64_lossy();
        let a3 = m.is_some_and(|m| m < threshold);
        let f = &self.forcing;
        let a1 = f.satisfies_a1(self.alpha);
        let a2 = f.satisfies_a2();
        let a1_closed_form = f
            .weighted_integral(self.alpha, T::lit(-horizon), T::lit(tau))
            .to_f64_lossy();
        let steps = 4096;
        let h = (tau + horizon) / steps as f64;
        let a1_quadrature = trapezoid_strided(steps + 1, h, 1, |j| {
            let s = -horizon + j as f64 * h;
            (alpha * s).exp() * f.norm_sq(T::lit(s)).to_f64_lossy()
        });
        let mut warnings = Vec::new();
        if !a3 {
            warnings.push(match m {
                Some(m) => format!(
                    "A3 violated: M_eps = {m} >= nu*sqrt(lambda1/2) = {threshold}; kappa = {kappa}"
                ),
                None => "A3 violated: identity calming is unbounded".to_string(),
            });
        }
        if !a1 {
            warnings.push(format!(
                "A1 violated: alpha + 2 sigma = {} <= 0",
                alpha + 2.0 * f.sigma.to_f64_lossy()
            ));
        }
        if !a2 {
            warnings.push(format!(
                "A2 violated: sigma = {} < 0",
                f.sigma.to_f64_lossy()
            ));
        }
        AssumptionReport {
            a1,
            a2,
            a3,
            kappa,
            m_eps: m,
            a3_threshold: threshold,
            a3_margin: m.map_or(f64::NEG_INFINITY, |m| threshold - m),
            alpha,
            a1_closed_form,
            a1_quadrature,
            warnings,
        }
    }

    /// Measured constant in `|b(u,v,w)| ≤ C ‖u‖_{L³} ‖∇v‖ ‖w‖_{L⁶}`.
    pub fn gns_ratio(
        &self,
        u: &SpectralField<T>,
        v: &SpectralField<T>,
        w: &SpectralField<T>,
        ws: &mut Workspace<T>,
    ) -> Result<T, ModelError> {
        let b = self.trilinear(u, v, w, ws)?.abs();
        let lu = lp_norm(u, 3, ws);
        let lw = lp_norm(w, 6, ws);
        Ok(b / (lu * v.norm_v() * lw))
    }
}

/// `(mean |u|^p)^{1/p}` over the physical grid.
pub fn lp_norm<T: Real>(u: &SpectralField<T>, p: i32, ws: &mut Workspace<T>) -> T {
    let [x, y, z] = u.to_physical(ws);
    let mut s = T::zero();
    for i in 0..x.len() {
        let r2 = x[i] * x[i] + y[i] * y[i] + z[i] * z[i];
        s += r2.sqrt().powi(p);
    }
    (s / T::from_usize(x.len()).unwrap()).powf(T::one() / T::from_i32(p).unwrap())
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub kappa: f64,
    pub m_eps: Option<f64>,
    /// `ν √(λ₁/2)`
    pub a3_threshold: f64,
    pub a3_margin: f64,
    pub alpha: f64,
    pub a1_closed_form: f64,
    pub a1_quadrature: f64,
    pub warnings: Vec<String>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a1 && self.a2 && self.a3
    }
}

/// ABC flow with unit coefficients at `|k| = 1`, scaled to L² norm `amplitude`.
pub fn abc_profile<T: Real>(grid: &Arc<WaveGrid<T>>, amplitude: T) -> SpectralField<T> {
    let mut f = SpectralField::zeros(grid);
    let half = T::lit(0.5);
    let c = |re: f64, im: f64| Complex::new(T::lit(re), T::lit(im)) * half;
    let z = Complex::new(T::zero(), T::zero());
    // sin θ = (e^{iθ} - e^{-iθ}) / 2i, cos θ = (e^{iθ} + e^{-iθ}) / 2
    // x-component: sin z + cos y; y: sin x + cos z; z: sin y + cos x
    f.set_mode([0, 0, 1], [c(0.0, -1.0), c(1.0, 0.0), z]);
    f.set_mode([0, 1, 0], [c(1.0, 0.0), z, c(0.0, -1.0)]);
    f.set_mode([1, 0, 0], [z, c(0.0, -1.0), c(1.0, 0.0)]);
    let norm = f.norm_l2();
    f.scale(amplitude / norm)
}

/// Taylor–Green cell `(sin x cos y, -cos x sin y, 0)` at `|k|² = 2`,
/// scaled to `‖∇h‖ = norm_v`.
pub fn taylor_green<T: Real>(grid: &Arc<WaveGrid<T>>, norm_v: T) -> SpectralField<T> {
    let mut f = SpectralField::zeros(grid);
    let q = T::lit(0.25);
    let z = Complex::new(T::zero(), T::zero());
    // sin x cos y = Σ_{±,±} ∓ i/4 e^{i(±x ± y)}; the y component mirrors it.
    for (k, a) in [
        ([1, 1, 0], [Complex::new(T::zero(), -q), Complex::new(T::zero(), q), z]),
        ([1, -1, 0], [Complex::new(T::zero(), -q), Complex::new(T::zero(), -q), z]),
    ] {
        f.set_mode(k, a);
    }
    let norm = f.norm_v();
    f.scale(norm_v / norm)
}
