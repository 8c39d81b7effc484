//! Time stepping of the Galerkin system for `v` with exponential
//! integrators: the Stokes part is integrated exactly, the rest explicitly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{energy_record, EnergyRecord};
use crate::model::{Model, ModelError};
use crate::noise::{NoiseError, OuPath};
use crate::scalar::Real;
use crate::spectral::{SpectralField, Workspace};

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("non-finite state at t = {t}")]
    BlowUp { t: f64 },
    #[error("invalid stepper configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Lawson–Euler: `v⁺ = E(v + dt N(v, t))`, `E = e^{-ν|k|²dt}`.
    ExpEuler,
    /// Cox–Matthews second-order exponential time differencing.
    Etdrk2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    /// Record every `stride`-th step (the final state is always recorded).
    pub stride: usize,
    /// Galerkin thresholds for the tail columns.
    pub tail_cutoffs: Vec<u32>,
    pub keep_snapshots: bool,
    /// Record the weak-form residual against low-mode test fields.
    pub weak_residual: bool,
}

impl StepperConfig {
    pub fn new(scheme: Scheme, dt: f64, t0: f64, t1: f64) -> Self {
        Self {
            scheme,
            dt,
            t0,
            t1,
            stride: 1,
            tail_cutoffs: Vec::new(),
            keep_snapshots: false,
            weak_residual: false,
        }
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(IntegratorError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t1 >= self.t0) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(IntegratorError::Config(format!(
                "need t0 <= t1, got [{}, {}]",
                self.t0, self.t1
            )));
        }
        if self.stride == 0 {
            return Err(IntegratorError::Config("stride must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps; a shorter last step closes the span if needed.
    pub fn n_steps(&self) -> usize {
        let k = (self.t1 - self.t0) / self.dt;
        let full = (k + 1e-9).floor();
        if k - full > 1e-9 {
            full as usize + 1
        } else {
            full as usize
        }
    }

    /// Time after `i` steps.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.n_steps() {
            self.t1
        } else {
            self.t0 + i as f64 * self.dt
        }
    }

    /// The noise step must divide the stepper step so that `z` is sampled on
    /// grid points at every full step.
    pub fn check_noise(&self, ou: &OuPath) -> Result<(), IntegratorError> {
        let ratio = self.dt / ou.dt();
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(IntegratorError::Config(format!(
                "stepper dt {} is not a multiple of the noise dt {}",
                self.dt,
                ou.dt()
            )));
        }
        ou.require(self.t0, self.t1)?;
        Ok(())
    }
}

/// `φ₀ = e^x`, `φ₁ = (e^x - 1)/x`, `φ₂ = (e^x - 1 - x)/x²`, per `|k|²`.
struct PhiTable<T> {
    phi0: Vec<T>,
    phi1: Vec<T>,
    phi2: Vec<T>,
}

impl<T: Real> PhiTable<T> {
    fn new(nu: T, h: T, max_k2: u32) -> Self {
        let n = max_k2 as usize + 1;
        let (mut phi0, mut phi1, mut phi2) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for k2 in 0..=max_k2 {
            let x = -nu * T::from_u32(k2).unwrap() * h;
            let e = x.exp();
            phi0.push(e);
            if x.abs() < T::lit(1e-3) {
                // Taylor series to fourth order
                let x2 = x * x;
                phi1.push(T::one() + x / T::lit(2.0) + x2 / T::lit(6.0) + x2 * x / T::lit(24.0));
                phi2.push(T::lit(0.5) + x / T::lit(6.0) + x2 / T::lit(24.0) + x2 * x / T::lit(120.0));
            } else {
                phi1.push((e - T::one()) / x);
                phi2.push((e - T::one() - x) / (x * x));
            }
        }
        Self { phi0, phi1, phi2 }
    }
}

fn apply<T: Real>(f: &SpectralField<T>, table: &[T]) -> SpectralField<T> {
    f.map_modes(|k2| table[k2 as usize])
}

fn max_k2<T: Real>(model: &Model<T>) -> u32 {
    let g = model.grid();
    (0..g.spectral_len()).map(|i| g.k2(i)).max().unwrap_or(0)
}

/// One step of length `h` from time `t`; `z0 = z(t)`, `z1 = z(t + h)`.
#[allow(clippy::too_many_arguments)]
pub fn step<T: Real>(
    model: &Model<T>,
    scheme: Scheme,
    v: &SpectralField<T>,
    t: f64,
    h: f64,
    z0: f64,
    z1: f64,
    ws: &mut Workspace<T>,
) -> Result<SpectralField<T>, IntegratorError> {
    let table = PhiTable::new(model.nu(), T::lit(h), max_k2(model));
    step_with(model, scheme, &table, v, t, h, z0, z1, ws)
}

#[allow(clippy::too_many_arguments)]
fn step_with<T: Real>(
    model: &Model<T>,
    scheme: Scheme,
    table: &PhiTable<T>,
    v: &SpectralField<T>,
    t: f64,
    h: f64,
    z0: f64,
    z1: f64,
    ws: &mut Workspace<T>,
) -> Result<SpectralField<T>, IntegratorError> {
    let hh = T::lit(h);
    let n0 = model.non_stokes(v, T::lit(t), T::lit(z0), ws);
    let out = match scheme {
        Scheme::ExpEuler => {
            let mut w = v.clone();
            w.axpy(hh, &n0);
            apply(&w, &table.phi0)
        }
        Scheme::Etdrk2 => {
            let mut a = apply(v, &table.phi0);
            a.axpy(hh, &apply(&n0, &table.phi1));
            let n1 = model.non_stokes(&a, T::lit(t + h), T::lit(z1), ws);
            a.axpy(hh, &apply(&n1.sub(&n0), &table.phi2));
            a
        }
    };
    if !out.is_finite() {
        return Err(IntegratorError::BlowUp { t: t + h });
    }
    Ok(out.galerkin_truncate(model.cutoff()))
}

/// Diagnostics of one integration.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord<T: Real> {
    pub records: Vec<EnergyRecord>,
    pub tail_cutoffs: Vec<u32>,
    pub snapshots: Vec<(f64, SpectralField<T>)>,
    /// Max over test fields of the weak-form residual, per recorded step
    /// (after the first record).
    pub weak_residuals: Vec<f64>,
    /// `∫ ‖Δv/Δt‖² dt`
    pub time_derivative_integral: f64,
    pub final_state: SpectralField<T>,
    pub final_time: f64,
    pub steps_taken: usize,
}

/// Low-mode divergence-free test fields for the weak residual.
fn test_battery<T: Real>(model: &Model<T>) -> Vec<SpectralField<T>> {
    use num_complex::Complex;
    let g = model.grid();
    let one = Complex::new(T::one(), T::zero());
    let zero = Complex::new(T::zero(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    vec![
        SpectralField::single_mode(g, [1, 0, 0], [zero, one, i]),
        SpectralField::single_mode(g, [0, 1, 0], [i, zero, one]),
        SpectralField::single_mode(g, [0, 0, 1], [one, i, zero]),
        SpectralField::single_mode(g, [1, 1, 0], [one, -one, i]),
        SpectralField::single_mode(g, [0, 1, 1], [i, one, -one]),
    ]
}

/// Steps a trajectory and records diagnostics.
pub struct Integrator<'a, T: Real> {
    model: &'a Model<T>,
    cfg: &'a StepperConfig,
    ou: &'a OuPath,
    ws: Workspace<T>,
    table: PhiTable<T>,
    battery: Vec<SpectralField<T>>,
}

impl<'a, T: Real> Integrator<'a, T> {
    pub fn new(model: &'a Model<T>, cfg: &'a StepperConfig, ou: &'a OuPath) -> Result<Self, IntegratorError> {
        cfg.validate()?;
        cfg.check_noise(ou)?;
        Ok(Self {
            model,
            cfg,
            ou,
            ws: Workspace::new(model.grid()),
            table: PhiTable::new(model.nu(), T::lit(cfg.dt), max_k2(model)),
            battery: if cfg.weak_residual { test_battery(model) } else { Vec::new() },
        })
    }

    pub fn z(&self, t: f64) -> f64 {
        self.ou.value_at(t).expect("noise coverage checked at construction")
    }

    /// Trapezoid average of `z` over `[t0, t1]` on the noise grid.
    pub fn z_mean(&self, t0: f64, t1: f64) -> f64 {
        match self.ou.window(t0, t1) {
            Ok(w) if w.len() >= 2 => {
                let inner: f64 = w[1..w.len() - 1].iter().sum();
                (inner + 0.5 * (w[0] + w[w.len() - 1])) / (w.len() - 1) as f64
            }
            _ => 0.5 * (self.z(t0) + self.z(t1)),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.cfg.n_steps()
    }

    /// Advances from step index `i` to `i + 1`.
    pub fn step(&mut self, v: &SpectralField<T>, i: usize) -> Result<SpectralField<T>, IntegratorError> {
        let (t, t_next) = (self.cfg.time(i), self.cfg.time(i + 1));
        let h = t_next - t;
        let (z0, z1) = match self.cfg.scheme {
            // exp-Euler freezes the noise at its step average
            Scheme::ExpEuler => {
                let m = self.z_mean(t, t_next);
                (m, m)
            }
            Scheme::Etdrk2 => (self.z(t), self.z(t_next)),
        };
        if (h - self.cfg.dt).abs() <= 1e-12 * self.cfg.dt {
            step_with(self.model, self.cfg.scheme, &self.table, v, t, self.cfg.dt, z0, z1, &mut self.ws)
        } else {
            step(self.model, self.cfg.scheme, v, t, h, z0, z1, &mut self.ws)
        }
    }

    fn record(&mut self, v: &SpectralField<T>, i: usize, out: &mut TrajectoryRecord<T>) {
        let t = self.cfg.time(i);
        out.records.push(energy_record(self.model, v, t, self.z(t), &self.cfg.tail_cutoffs));
        if self.cfg.keep_snapshots {
            out.snapshots.push((t, v.clone()));
        }
    }

    /// Runs steps `from..to` starting from `v` (the state after `from` steps).
    pub fn run(
        &mut self,
        v: SpectralField<T>,
        from: usize,
        to: usize,
    ) -> Result<TrajectoryRecord<T>, IntegratorError> {
        if !v.is_finite() {
            return Err(IntegratorError::BlowUp { t: self.cfg.time(from) });
        }
        let mut v = v.galerkin_truncate(self.model.cutoff());
        let mut out = TrajectoryRecord {
            records: Vec::new(),
            tail_cutoffs: self.cfg.tail_cutoffs.clone(),
            snapshots: Vec::new(),
            weak_residuals: Vec::new(),
            time_derivative_integral: 0.0,
            final_state: v.clone(),
            final_time: self.cfg.time(from),
            steps_taken: 0,
        };
        let to = to.min(self.n_steps());
        self.record(&v, from, &mut out);
        for i in from..to {
            let next = self.step(&v, i)?;
            let h = self.cfg.time(i + 1) - self.cfg.time(i);
            let dv = next.sub(&v);
            out.time_derivative_integral += dv.norm_l2().to_f64_lossy().powi(2) / h;
            let last = i + 1 == to;
            if (i + 1) % self.cfg.stride == 0 || last {
                if self.cfg.weak_residual {
                    out.weak_residuals.push(self.weak_residual(&v, &dv, i, h)?);
                }
                self.record(&next, i + 1, &mut out);
            }
            v = next;
            out.steps_taken += 1;
        }
        out.final_time = self.cfg.time(to);
        out.final_state = v;
        Ok(out)
    }

    /// `max_w |⟨Δv/h - rhs_v(v, t, z(t)), w⟩| / ‖w‖`
    fn weak_residual(&mut self, v: &SpectralField<T>, dv: &SpectralField<T>, i: usize, h: f64) -> Result<f64, IntegratorError> {
        let t = self.cfg.time(i);
        let rhs = self.model.rhs_v(v, T::lit(t), T::lit(self.z(t)), &mut self.ws)?;
        let mut r = dv.scale(T::lit(1.0 / h));
        r.axpy(-T::one(), &rhs);
        Ok(self
            .battery
            .iter()
            .map(|w| (r.inner(w) / w.norm_l2()).abs().to_f64_lossy())
            .fold(0.0, f64::max))
    }
}

/// Integrates `v0` over the configured span.
pub fn integrate<T: Real>(
    v0: &SpectralField<T>,
    cfg: &StepperConfig,
    model: &Model<T>,
    ou: &OuPath,
) -> Result<TrajectoryRecord<T>, IntegratorError> {
    let mut it = Integrator::new(model, cfg, ou)?;
    let n = it.n_steps();
    it.run(v0.clone(), 0, n)
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuousDependenceReport {
    /// `‖ũ₀‖²`
    pub initial_gap_sq: f64,
    /// `max_t ‖ũ(t)‖²`
    pub max_gap_sq: f64,
    /// `max_t ‖ũ(t)‖² / ‖ũ₀‖²`
    pub max_gap_ratio: f64,
    /// Bound `exp(C ∫₀ᵗ ‖Au_b‖ ds) ‖ũ₀‖²` at the final time.
    pub final_bound: f64,
    /// `max_t ‖ũ(t)‖² / bound(t)`
    pub worst_ratio: f64,
    pub constant: f64,
    /// Whether `M_ε ≤ ν√λ₁`, under which the bound is derived.
    pub applicable: bool,
    pub satisfied: bool,
}

/// Runs two trajectories on the same noise path and compares their gap with
/// `‖ũ(t)‖² ≤ exp(C ∫₀ᵗ ‖Au_b‖ ds) ‖ũ₀‖²`, `C = 2S`, where `S` is the
/// discrete embedding constant with `‖∇×u‖_∞ ≤ S ‖Au‖`.
pub fn continuous_dependence_experiment<T: Real>(
    v0_a: &SpectralField<T>,
    v0_b: &SpectralField<T>,
    cfg: &StepperConfig,
    model: &Model<T>,
    ou: &OuPath,
) -> Result<ContinuousDependenceReport, IntegratorError> {
    v0_a.check_grid(v0_b).map_err(ModelError::from)?;
    let mut ia = Integrator::new(model, cfg, ou)?;
    let mut ib = Integrator::new(model, cfg, ou)?;
    let constant = 2.0 * model.grid().agmon_constant();
    let nu = model.nu().to_f64_lossy();
    let applicable = model
        .m_eps()
        .is_some_and(|m| m.to_f64_lossy() <= nu * (model.grid().lambda1() as f64).sqrt());
    let cut = model.cutoff();
    let (mut a, mut b) = (v0_a.galerkin_truncate(cut), v0_b.galerkin_truncate(cut));
    let h = model.h();
    let norm_au = |v: &SpectralField<T>, z: f64| {
        let mut u = v.clone();
        u.axpy(T::lit(z), h);
        u.norm_a().to_f64_lossy()
    };
    let gap0 = a.sub(&b).norm_l2().to_f64_lossy().powi(2);
    let mut integral = 0.0;
    let mut prev_au = norm_au(&b, ia.z(cfg.time(0)));
    let (mut max_gap, mut worst) = (gap0, if gap0 > 0.0 { 1.0 } else { 0.0 });
    let mut bound = gap0;
    for i in 0..cfg.n_steps() {
        a = ia.step(&a, i)?;
        b = ib.step(&b, i)?;
        let t1 = cfg.time(i + 1);
        let au = norm_au(&b, ib.z(t1));
        integral += 0.5 * (t1 - cfg.time(i)) * (prev_au + au);
        prev_au = au;
        let gap = a.sub(&b).norm_l2().to_f64_lossy().powi(2);
        bound = (constant * integral).exp() * gap0;
        max_gap = max_gap.max(gap);
        if bound > 0.0 {
            worst = f64::max(worst, gap / bound);
        } else if gap > 0.0 {
            worst = f64::INFINITY;
        }
    }
    Ok(ContinuousDependenceReport {
        initial_gap_sq: gap0,
        max_gap_sq: max_gap,
        max_gap_ratio: if gap0 > 0.0 { max_gap / gap0 } else { 0.0 },
        final_bound: bound,
        worst_ratio: worst,
        constant,
        applicable,
        satisfied: worst <= 1.0 + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calming::{CalmingSpec, CalmingVariant};
    use crate::model::{taylor_green, ModelParams};
    use crate::noise::{OuInit, WienerPath};
    use crate::spectral::WaveGrid;
    use num_complex::Complex;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn z1(eps: f64) -> CalmingSpec<f64> {
        CalmingSpec::new(CalmingVariant::Z1, eps).unwrap()
    }

    fn smooth(g: &Arc<WaveGrid<f64>>, seed: u64, scale: f64) -> SpectralField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = SpectralField::random_solenoidal(g, &mut rng, |k2| (-(k2 as f64) / 3.0).exp());
        let n = f.norm_v();
        f.scale(scale / n)
    }

    fn eigenmode(g: &Arc<WaveGrid<f64>>) -> SpectralField<f64> {
        let c = |x: f64| Complex::new(x, 0.0);
        SpectralField::single_mode(g, [1, 0, 0], [c(0.0), c(0.6), c(0.2)])
    }

    fn quiet(t1: f64) -> OuPath {
        OuPath::zero(1.0, 1.25e-3, -1.0, t1 + 1.0).unwrap()
    }

    #[test]
    fn stokes_step_is_exact() {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 0.8, z1(1.0));
        p.nonlinear = false;
        let m = Model::new(p).unwrap();
        let mut ws = Workspace::new(&g);
        let c = |x: f64| Complex::new(x, 0.0);
        let v = SpectralField::single_mode(&g, [1, 2, 0], [c(0.4), c(-0.2), c(1.0)]);
        for scheme in [Scheme::ExpEuler, Scheme::Etdrk2] {
            let out = step(&m, scheme, &v, 0.0, 0.01, 0.0, 0.0, &mut ws).unwrap();
            let want = v.scale((-0.8f64 * 5.0 * 0.01).exp());
            assert!(out.sub(&want).norm_l2() <= 1e-15 * want.norm_l2());
        }
        let zero = SpectralField::zeros(&g);
        let full = Model::new(ModelParams::new(&g, 1.0, z1(1.0))).unwrap();
        let out = step(&full, Scheme::Etdrk2, &zero, 0.0, 0.01, 0.0, 0.0, &mut ws).unwrap();
        assert_eq!(out.norm_l2(), 0.0);
    }

    #[test]
    fn stokes_decay_over_unit_horizon() {
        let g = WaveGrid::new(16).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.nonlinear = false;
        let m = Model::new(p).unwrap();
        let v0 = eigenmode(&g);
        let cfg = StepperConfig::new(Scheme::ExpEuler, 5e-3, 0.0, 1.0);
        let rec = integrate(&v0, &cfg, &m, &quiet(1.0)).unwrap();
        let ratio = rec.final_state.norm_v() / v0.norm_v();
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(rec.steps_taken, 200);
        assert_eq!(rec.records.len(), 201);
    }

    #[test]
    fn partial_last_step_lands_on_t1() {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.nonlinear = false;
        let m = Model::new(p).unwrap();
        let cfg = StepperConfig::new(Scheme::Etdrk2, 0.3, 0.0, 1.0);
        assert_eq!(cfg.n_steps(), 4);
        let ou = OuPath::zero(1.0, 0.1, -1.0, 2.0).unwrap();
        let rec = integrate(&eigenmode(&g), &cfg, &m, &ou).unwrap();
        assert_eq!(rec.final_time, 1.0);
        let ratio = rec.final_state.norm_v() / eigenmode(&g).norm_v();
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn rejects_misaligned_noise() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let cfg = StepperConfig::new(Scheme::ExpEuler, 3e-3, 0.0, 1.0);
        let ou = OuPath::zero(1.0, 2e-3, -1.0, 2.0).unwrap();
        assert!(matches!(integrate(&eigenmode(&g), &cfg, &m, &ou), Err(IntegratorError::Config(_))));
        let short = OuPath::zero(1.0, 1e-3, -1.0, 0.5).unwrap();
        let cfg = StepperConfig::new(Scheme::ExpEuler, 2e-3, 0.0, 1.0);
        assert!(matches!(integrate(&eigenmode(&g), &cfg, &m, &short), Err(IntegratorError::Noise(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, CalmingSpec::identity())).unwrap();
        let cfg = StepperConfig::new(Scheme::ExpEuler, 0.5, 0.0, 50.0);
        let ou = OuPath::zero(1.0, 0.5, -1.0, 51.0).unwrap();
        let err = integrate(&smooth(&g, 1, 1e3), &cfg, &m, &ou).unwrap_err();
        assert!(matches!(err, IntegratorError::BlowUp { .. }));
    }

    fn local_error(m: &Model<f64>, v: &SpectralField<f64>, dt: f64) -> f64 {
        // one step at dt against eight steps at dt/8
        let mut ws = Workspace::new(m.grid());
        let coarse = step(m, Scheme::Etdrk2, v, 0.0, dt, 0.0, 0.0, &mut ws).unwrap();
        let mut fine = v.clone();
        for i in 0..8 {
            fine = step(m, Scheme::Etdrk2, &fine, i as f64 * dt / 8.0, dt / 8.0, 0.0, 0.0, &mut ws).unwrap();
        }
        coarse.sub(&fine).norm_l2()
    }

    #[test]
    fn etdrk2_local_error_is_third_order() {
        let g = WaveGrid::new(16).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(0.5))).unwrap();
        let v = smooth(&g, 3, 2.0);
        let (e1, e2) = (local_error(&m, &v, 0.02), local_error(&m, &v, 0.01));
        let ratio = e1 / e2;
        assert!((ratio.log2() - 3.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn gronwall_decay_without_data() {
        let g = WaveGrid::new(16).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let kappa = m.kappa();
        assert_eq!(kappa, 0.5);
        let v0 = smooth(&g, 9, 3.0);
        let mut cfg = StepperConfig::new(Scheme::ExpEuler, 5e-3, 0.0, 4.0);
        cfg.stride = 10;
        let rec = integrate(&v0, &cfg, &m, &quiet(4.0)).unwrap();
        let g0 = rec.records[0].norm_grad_v.powi(2);
        for r in &rec.records {
            assert!(r.norm_grad_v.powi(2) <= (-kappa * r.t).exp() * g0 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn invariants_hold_along_trajectory() {
        let g = WaveGrid::new(16).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.h = taylor_green(&g, 1.0);
        let m = Model::new(p).unwrap();
        let w = WienerPath::sample(4, -2.0, 3.0, 1.25e-3).unwrap();
        let ou = OuPath::from_wiener(&w, 1.0, OuInit::StationarySample).unwrap();
        let mut cfg = StepperConfig::new(Scheme::Etdrk2, 5e-3, 0.0, 1.0);
        cfg.stride = 20;
        cfg.keep_snapshots = true;
        cfg.tail_cutoffs = vec![2, 10];
        let rec = integrate(&smooth(&g, 2, 2.0), &cfg, &m, &ou).unwrap();
        for (_, s) in &rec.snapshots {
            assert!(s.divergence_defect() <= 1e-12 * s.norm_l2());
            assert!(s.symmetry_defect() <= 1e-14 * s.norm_l2());
        }
        for pair in rec.records.windows(2) {
            assert!(pair[1].t > pair[0].t);
        }
        let again = integrate(&smooth(&g, 2, 2.0), &cfg, &m, &ou).unwrap();
        assert_eq!(again.final_state.coeffs(), rec.final_state.coeffs());
        assert_eq!(again.records, rec.records);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.h = taylor_green(&g, 1.0);
        let m = Model::new(p).unwrap();
        let w = WienerPath::sample(6, -1.0, 2.0, 5e-3).unwrap();
        let ou = OuPath::from_wiener(&w, 1.0, OuInit::Zero).unwrap();
        let cfg = StepperConfig::new(Scheme::Etdrk2, 1e-2, 0.0, 1.0);
        let full = integrate(&smooth(&g, 5, 1.0), &cfg, &m, &ou).unwrap();
        let mut it = Integrator::new(&m, &cfg, &ou).unwrap();
        let half = it.run(smooth(&g, 5, 1.0), 0, 37).unwrap();
        let rest = it.run(half.final_state, 37, 100).unwrap();
        assert_eq!(rest.final_state.coeffs(), full.final_state.coeffs());
        assert_eq!(rest.records.last(), full.records.last());
    }

    #[test]
    fn diffusion_is_not_reversible() {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.nonlinear = false;
        let m = Model::new(p).unwrap();
        let v0 = eigenmode(&g);
        let fwd = integrate(&v0, &StepperConfig::new(Scheme::ExpEuler, 0.01, 0.0, 1.0), &m, &quiet(1.0)).unwrap();
        // running the same dissipative flow again only decays further
        let back = integrate(&fwd.final_state, &StepperConfig::new(Scheme::ExpEuler, 0.01, 0.0, 1.0), &m, &quiet(1.0)).unwrap();
        assert!(back.final_state.sub(&v0).norm_l2() > 0.5 * v0.norm_l2());
    }

    #[test]
    fn weak_residual_is_first_order() {
        let g = WaveGrid::new(16).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(1.0))).unwrap();
        let v0 = smooth(&g, 7, 2.0);
        let run = |dt: f64| {
            let mut cfg = StepperConfig::new(Scheme::ExpEuler, dt, 0.0, 0.2);
            cfg.weak_residual = true;
            let rec = integrate(&v0, &cfg, &m, &quiet(0.2)).unwrap();
            rec.weak_residuals.iter().cloned().fold(0.0, f64::max)
        };
        let (r1, r2) = (run(0.01), run(0.005));
        assert!(r1 > 0.0 && (r1 / r2 - 2.0).abs() < 0.3, "{r1} {r2}");
    }

    #[test]
    fn continuous_dependence_trivial_and_scaling() {
        let g = WaveGrid::new(16).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.h = taylor_green(&g, 1.0);
        let m = Model::new(p).unwrap();
        let w = WienerPath::sample(8, -1.0, 2.0, 1.25e-3).unwrap();
        let ou = OuPath::from_wiener(&w, 1.0, OuInit::StationarySample).unwrap();
        let cfg = StepperConfig::new(Scheme::ExpEuler, 5e-3, 0.0, 0.5);
        let a = smooth(&g, 1, 1.0);
        let same = continuous_dependence_experiment(&a, &a, &cfg, &m, &ou).unwrap();
        assert_eq!(same.max_gap_sq, 0.0);
        assert!(same.satisfied && same.applicable);
        let d = smooth(&g, 2, 1.0);
        let ratios: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&s| {
                let mut b = a.clone();
                b.axpy(s / d.norm_l2(), &d);
                let r = continuous_dependence_experiment(&a, &b, &cfg, &m, &ou).unwrap();
                assert!(r.satisfied);
                r.max_gap_ratio
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi / lo < 3.0, "{ratios:?}");
    }
}
