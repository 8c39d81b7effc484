//! Random-dynamical-systems layer: the cocycle, pullback families, absorbing
//! radius, flattening analysis and attractor-convergence diagnostics.
//!
//! A noise realisation `ω` is an [`OuPath`] holding `z(θ_t ω)`. The cocycle
//! `Φ(t, τ, ω, u_τ)` integrates `v` over `[τ, τ + t]` with noise
//! `z(θ_{s-τ} ω)` at absolute time `s` and returns `v(τ + t) + h z(θ_t ω)`,
//! where `v(τ) = u_τ - h z(ω)`. Pullback runs keep `τ` fixed and start at
//! `τ - t` on the path `θ_{-t} ω`, so every horizon sees the same absolute
//! noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calming::CalmingSpec;
use crate::diagnostics::{gronwall_monitor, ConstantsLedger, EnergyRecord};
use crate::integrator::{integrate, IntegratorError, StepperConfig, TrajectoryRecord};
use crate::model::{Model, ModelError};
use crate::noise::{aligned_index, NoiseError, OuPath};
use crate::spectral::{SpectralField, WaveGrid};
use std::sync::Arc;

type Field = SpectralField<f64>;

#[derive(Debug, Error)]
pub enum RdsError {
    #[error("theory out of range: kappa = {0} <= 0")]
    KappaNotPositive(f64),
    #[error("identity calming has no finite constants")]
    Unbounded,
    #[error("truncation horizon {horizon} too short: need e^(-kappa T) < 1e-6, i.e. T >= {required}")]
    TruncationHorizon { horizon: f64, required: f64 },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Model, noise realisation, stepper template and observation time shared
/// by all runs of one experiment.
#[derive(Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a Model<f64>,
    pub omega: &'a OuPath,
    /// Scheme, dt, stride and tail thresholds; the span is set per run.
    pub stepper: &'a StepperConfig,
    pub tau: f64,
}

impl<'a> Setup<'a> {
    fn span(&self, t0: f64, t1: f64) -> StepperConfig {
        StepperConfig {
            t0,
            t1,
            ..self.stepper.clone()
        }
    }

    /// Noise in absolute time: `z(θ_{s-τ} ω)` at `s`.
    fn absolute_noise(&self, tau: f64) -> Result<OuPath, RdsError> {
        Ok(self.omega.shift(-tau)?)
    }

    fn z(&self, t: f64) -> Result<f64, RdsError> {
        self.omega.value_at(t).ok_or_else(|| {
            RdsError::Noise(NoiseError::InsufficientHorizon {
                need_min: t,
                need_max: t,
                have_min: self.omega.t_min(),
                have_max: self.omega.t_max(),
            })
        })
    }

    fn with_h(&self, v: &Field, z: f64) -> Field {
        let mut u = v.clone();
        u.axpy(z, self.model.h());
        u
    }

    /// `Φ(t, τ, ω, u_τ)` and the trajectory of `v` on `[τ, τ + t]` (absolute times).
    pub fn cocycle_run(&self, t: f64, tau: f64, u_tau: &Field) -> Result<(Field, TrajectoryRecord<f64>), RdsError> {
        if t < 0.0 {
            return Err(RdsError::Invalid(format!("elapsed time must be >= 0, got {t}")));
        }
        let noise = self.absolute_noise(tau)?;
        let v0 = self.with_h(u_tau, -self.z(0.0)?);
        let rec = integrate(&v0, &self.span(tau, tau + t), self.model, &noise)?;
        let u = if t == 0.0 {
            u_tau.clone()
        } else {
            self.with_h(&rec.final_state, self.z(t)?)
        };
        Ok((u, rec))
    }

    /// `Φ(t, τ, ω, u_τ)`.
    pub fn cocycle(&self, t: f64, tau: f64, u_tau: &Field) -> Result<Field, RdsError> {
        Ok(self.cocycle_run(t, tau, u_tau)?.0)
    }

    /// Same setup on the shifted path `θ_s ω`.
    pub fn shifted(&self, omega: &'a OuPath) -> Setup<'a> {
        Setup { omega, ..*self }
    }
}

/// One pullback run: `Φ(t, τ - t, θ_{-t} ω, u₀)`.
#[derive(Clone, Debug)]
pub struct PullbackCell {
    pub horizon: f64,
    pub initial: usize,
    pub terminal: Field,
    /// Diagnostics of `v` at absolute times in `[τ - t, τ]`.
    pub trajectory: TrajectoryRecord<f64>,
}

/// Runs every `(horizon, initial)` cell in parallel; output is ordered by
/// horizon, then initial index.
pub fn pullback_family(setup: &Setup, t_list: &[f64], initials: &[Field]) -> Result<Vec<PullbackCell>, RdsError> {
    if t_list.windows(2).any(|w| w[1] <= w[0]) || t_list.iter().any(|&t| t < 0.0) {
        return Err(RdsError::Invalid("horizons must be nonnegative and increasing".into()));
    }
    let cells: Vec<(usize, usize)> = (0..t_list.len())
        .flat_map(|i| (0..initials.len()).map(move |j| (i, j)))
        .collect();
    cells
        .par_iter()
        .map(|&(i, j)| {
            let t = t_list[i];
            let shifted = setup.omega.shift(-t)?;
            let s = setup.shifted(&shifted);
            let (terminal, trajectory) = s.cocycle_run(t, setup.tau - t, &initials[j])?;
            Ok(PullbackCell {
                horizon: t,
                initial: j,
                terminal,
                trajectory,
            })
        })
        .collect()
}

/// Seeded smooth solenoidal fields with `‖∇u‖ = norms[j]`.
pub fn initial_family(grid: &Arc<WaveGrid<f64>>, seed: u64, norms: &[f64]) -> Vec<Field> {
    norms
        .iter()
        .enumerate()
        .map(|(j, &norm)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(j as u64 + 1));
            let f = SpectralField::random_solenoidal(grid, &mut rng, |k2| (-(k2 as f64) / 4.0).exp());
            let n = f.norm_v();
            f.scale(norm / n)
        })
        .collect()
}

/// `R_V(τ, ω) = M₁ [1 + |z(ω)|² + ∫_{-T}^0 e^{κr}(‖f(r+τ)‖² + |z(θ_r ω)|²) dr]`.
#[derive(Clone, Debug, Serialize)]
pub struct AbsorbingEstimate {
    pub tau: f64,
    pub r_v: f64,
    pub m1: f64,
    pub kappa: f64,
    pub bracket: f64,
    pub z0_sq: f64,
    pub forcing_integral: f64,
    pub ou_integral: f64,
    pub horizon: f64,
    /// `e^{-κT}`
    pub truncation_weight: f64,
}

fn ledger_for(model: &Model<f64>) -> Result<ConstantsLedger, RdsError> {
    let ledger = ConstantsLedger::derive(model).ok_or(RdsError::Unbounded)?;
    if ledger.kappa <= 0.0 {
        return Err(RdsError::KappaNotPositive(ledger.kappa));
    }
    Ok(ledger)
}

pub fn absorbing_radius(
    tau: f64,
    omega: &OuPath,
    model: &Model<f64>,
    horizon: f64,
) -> Result<AbsorbingEstimate, RdsError> {
    absorbing_radius_strided(tau, omega, model, horizon, 1)
}

/// As [`absorbing_radius`], with the OU quadrature on every `stride`-th sample.
pub fn absorbing_radius_strided(
    tau: f64,
    omega: &OuPath,
    model: &Model<f64>,
    horizon: f64,
    stride: usize,
) -> Result<AbsorbingEstimate, RdsError> {
    let ledger = ledger_for(model)?;
    let kappa = ledger.kappa;
    let required = 1e6f64.ln() / kappa;
    if horizon < required {
        return Err(RdsError::TruncationHorizon { horizon, required });
    }
    let z0 = omega.value_at(0.0).ok_or(NoiseError::InsufficientHorizon {
        need_min: 0.0,
        need_max: 0.0,
        have_min: omega.t_min(),
        have_max: omega.t_max(),
    })?;
    let forcing_integral = (-kappa * tau).exp() * model.forcing().weighted_integral(kappa, tau - horizon, tau);
    let ou_integral = omega.discounted_square_integral(kappa, -horizon, 0.0, stride)?;
    let bracket = 1.0 + z0 * z0 + forcing_integral + ou_integral;
    Ok(AbsorbingEstimate {
        tau,
        r_v: ledger.m1 * bracket,
        m1: ledger.m1,
        kappa,
        bracket,
        z0_sq: z0 * z0,
        forcing_integral,
        ou_integral,
        horizon,
        truncation_weight: (-kappa * horizon).exp(),
    })
}

/// `R_V(s, θ_{s-τ} ω)` on the noise grid for `s ∈ [τ - span, τ]`, with the
/// discounted integral accumulated from `τ - span - truncation`.
#[derive(Clone, Debug)]
pub struct RadiusProfile {
    pub start: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl RadiusProfile {
    pub fn new(setup: &Setup, span: f64, truncation: f64) -> Result<Self, RdsError> {
        let ledger = ledger_for(setup.model)?;
        let (kappa, m1) = (ledger.kappa, ledger.m1);
        let dt = setup.omega.dt();
        let tau = setup.tau;
        let n_hist = aligned_index(truncation, dt)
            .map_err(RdsError::Noise)?
            .max(0) as usize;
        let n_span = aligned_index(span, dt).map_err(RdsError::Noise)?.max(0) as usize;
        let first = -((n_hist + n_span) as f64) * dt;
        let z = setup.omega.window(first, 0.0)?;
        let forcing = setup.model.forcing();
        let g = |j: usize| {
            let r = first + j as f64 * dt;
            forcing.norm_sq(tau + r) + z[j] * z[j]
        };
        let decay = (-kappa * dt).exp();
        let mut j_int = 0.0;
        let mut values = Vec::with_capacity(n_span + 1);
        for j in 0..z.len() {
            if j > 0 {
                j_int = decay * j_int + 0.5 * dt * (decay * g(j - 1) + g(j));
            }
            if j >= n_hist {
                values.push(m1 * (1.0 + z[j] * z[j] + j_int));
            }
        }
        Ok(Self {
            start: tau - n_span as f64 * dt,
            dt,
            values,
        })
    }

    /// Linear interpolation at absolute time `s`.
    pub fn at(&self, s: f64) -> Option<f64> {
        let x = (s - self.start) / self.dt;
        let last = (self.values.len() - 1) as f64;
        if x < -1e-9 || x > last + 1e-9 {
            return None;
        }
        let x = x.clamp(0.0, last);
        let j = (x.floor() as usize).min(self.values.len().saturating_sub(2));
        let w = x - j as f64;
        if self.values.len() == 1 {
            return Some(self.values[0]);
        }
        Some(self.values[j] * (1.0 - w) + self.values[j + 1] * w)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AbsorbingCell {
    pub horizon: f64,
    pub initial: usize,
    pub initial_norm_grad: f64,
    pub terminal_norm_grad_sq: f64,
    pub r_v_tau: f64,
    pub inside_at_tau: bool,
    /// `s - τ` from which `‖∇u(s)‖² ≤ R_V(s)` for every later record.
    pub entry_time: Option<f64>,
    /// `e^{-κt} ‖∇v(τ - t)‖²`
    pub tempered_start: f64,
    pub monitor_worst_slack: f64,
    pub monitor_passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AbsorbingReport {
    pub estimate: AbsorbingEstimate,
    pub cells: Vec<AbsorbingCell>,
    /// Every initial is inside at the largest horizon.
    pub absorbed_at_largest: bool,
    /// Entry times are nonincreasing in the horizon (none = +∞).
    pub entry_monotone: bool,
    /// Once a horizon is absorbed, all larger ones are too.
    pub stays_absorbed: bool,
    pub monitors_passed: bool,
    pub passed: bool,
}

/// Pullback absorption test against `R_V`, with the energy monitor along
/// every trajectory.
pub fn absorbing_experiment(
    setup: &Setup,
    initials: &[Field],
    t_list: &[f64],
    truncation: f64,
) -> Result<AbsorbingReport, RdsError> {
    let ledger = ledger_for(setup.model)?;
    let estimate = absorbing_radius(setup.tau, setup.omega, setup.model, truncation)?;
    let t_max = t_list.last().copied().unwrap_or(0.0);
    let profile = RadiusProfile::new(setup, t_max, truncation)?;
    let family = pullback_family(setup, t_list, initials)?;
    let mut cells = Vec::with_capacity(family.len());
    for c in &family {
        let recs = &c.trajectory.records;
        let inside: Vec<bool> = recs
            .iter()
            .map(|r| r.norm_grad_u.powi(2) <= profile.at(r.t).unwrap_or(f64::INFINITY))
            .collect();
        let entry_time = match inside.iter().rposition(|&x| !x) {
            None => Some(recs[0].t - setup.tau),
            Some(k) if k + 1 < recs.len() => Some(recs[k + 1].t - setup.tau),
            Some(_) => None,
        };
        let terminal = c.terminal.norm_v().powi(2);
        let monitor = gronwall_monitor(recs, &ledger, 0.0);
        cells.push(AbsorbingCell {
            horizon: c.horizon,
            initial: c.initial,
            initial_norm_grad: initials[c.initial].norm_v(),
            terminal_norm_grad_sq: terminal,
            r_v_tau: estimate.r_v,
            inside_at_tau: terminal <= estimate.r_v,
            entry_time,
            tempered_start: (-ledger.kappa * c.horizon).exp() * recs[0].norm_grad_v.powi(2),
            monitor_worst_slack: monitor.worst_slack,
            monitor_passed: monitor.passed,
        });
    }
    let by_initial = |j: usize| cells.iter().filter(move |c| c.initial == j);
    let absorbed_at_largest = (0..initials.len())
        .all(|j| by_initial(j).last().is_some_and(|c| c.inside_at_tau && c.entry_time.is_some()));
    let entry_monotone = (0..initials.len()).all(|j| {
        let e: Vec<f64> = by_initial(j).map(|c| c.entry_time.unwrap_or(f64::INFINITY)).collect();
        e.windows(2).all(|w| w[1] <= w[0])
    });
    let stays_absorbed = (0..initials.len()).all(|j| {
        let f: Vec<bool> = by_initial(j).map(|c| c.inside_at_tau).collect();
        f.iter().position(|&x| x).is_none_or(|p| f[p..].iter().all(|&x| x))
    });
    let monitors_passed = cells.iter().all(|c| c.monitor_passed);
    Ok(AbsorbingReport {
        passed: absorbed_at_largest && entry_monotone && stays_absorbed && monitors_passed,
        estimate,
        cells,
        absorbed_at_largest,
        entry_monotone,
        stays_absorbed,
        monitors_passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatteningRow {
    pub cutoff: u32,
    pub next_eigenvalue: Option<u32>,
    /// `‖(I - P_Λ) u(τ)‖_V`
    pub tail: f64,
    /// `‖(I - P_Λ) v(τ)‖_V`
    pub tail_v: f64,
    /// `|z(ω)| ‖(I - P_Λ) h‖_V`
    pub tail_noise: f64,
    /// `tail < δ`
    pub below_delta: bool,
    /// Both split parts under `δ/2`.
    pub meets_delta: bool,
    /// `∫ e^{-νλ_next(τ-s)} (2M²/ν) ‖∇u(s)‖² ds` from the records.
    pub i2_measured: f64,
    /// `C / (νλ_next - νλ₁ + 2M²/ν)`
    pub i2_envelope: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatteningReport {
    pub horizon: f64,
    pub delta: f64,
    /// `C = (2M²/ν) max_s e^{-κ(τ-s)} ‖∇u(s)‖²`
    pub envelope_constant: f64,
    pub rows: Vec<FlatteningRow>,
    /// Thresholds at or above the largest resolved eigenvalue.
    pub unresolved: Vec<u32>,
    /// Smallest threshold whose tail is below `δ`.
    pub first_below_delta: Option<u32>,
    /// Smallest threshold meeting both `δ/2` split targets.
    pub first_split_target: Option<u32>,
    pub tails_monotone: bool,
    /// Log-log slope of the envelope against `νλ_next - νλ₁ + 2M²/ν`.
    pub envelope_slope: f64,
    pub measured_slope: f64,
}

/// `∫_{s0}^{s1} e^{-a(τ-s)} g(s) ds` for `g` linear between `g0` and `g1`.
fn exp_weighted_linear(a: f64, tau: f64, s0: f64, s1: f64, g0: f64, g1: f64) -> f64 {
    let h = s1 - s0;
    if a * h < 1e-6 {
        let (w0, w1) = ((-a * (tau - s0)).exp(), (-a * (tau - s1)).exp());
        return 0.5 * h * (w0 * g0 + w1 * g1);
    }
    let (w0, w1) = ((-a * (tau - s0)).exp(), (-a * (tau - s1)).exp());
    g0 * (w1 - w0) / a + (g1 - g0) / h * (h * w1 / a - (w1 - w0) / (a * a))
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Tail norms of the pulled-back state `u(τ)` from the single initial datum
/// `u0` after horizon `t`, per threshold in `thresholds`.
pub fn flattening_analysis(
    setup: &Setup,
    u0: &Field,
    t: f64,
    thresholds: &[u32],
    delta: f64,
) -> Result<FlatteningReport, RdsError> {
    let ledger = ledger_for(setup.model)?;
    let grid = setup.model.grid();
    let max = grid.max_retained_eigenvalue();
    let cell = pullback_family(setup, &[t], std::slice::from_ref(u0))?
        .pop()
        .expect("one cell");
    let u = &cell.terminal;
    let z0 = setup.z(0.0)?;
    let v = setup.with_h(u, -z0);
    let (nu, m, kappa, lambda1) = (ledger.nu, ledger.m_eps, ledger.kappa, ledger.lambda1);
    let pref = 2.0 * m * m / nu;
    let recs: &[EnergyRecord] = &cell.trajectory.records;
    let envelope_constant = pref
        * recs
            .iter()
            .map(|r| (-kappa * (setup.tau - r.t)).exp() * r.norm_grad_u.powi(2))
            .fold(0.0, f64::max);
    let mut rows = Vec::new();
    let mut unresolved = Vec::new();
    for &cut in thresholds {
        if cut >= max {
            unresolved.push(cut);
        }
        let next = grid.next_eigenvalue_above(cut);
        let tail_v = v.galerkin_tail(cut).norm_v();
        let tail_noise = z0.abs() * setup.model.h().galerkin_tail(cut).norm_v();
        let tail = u.galerkin_tail(cut).norm_v();
        let (i2_measured, i2_envelope) = match next {
            Some(ln) => {
                let rate = nu * ln as f64;
                let acc: f64 = recs
                    .windows(2)
                    .map(|w| {
                        let g = |r: &EnergyRecord| pref * r.norm_grad_u.powi(2);
                        exp_weighted_linear(rate, setup.tau, w[0].t, w[1].t, g(&w[0]), g(&w[1]))
                    })
                    .sum();
                (acc, envelope_constant / (rate - nu * lambda1 + pref))
            }
            None => (0.0, 0.0),
        };
        rows.push(FlatteningRow {
            cutoff: cut,
            next_eigenvalue: next,
            tail,
            tail_v,
            tail_noise,
            below_delta: tail < delta,
            meets_delta: tail_v < delta / 2.0 && tail_noise < delta / 2.0,
            i2_measured,
            i2_envelope,
        });
    }
    let tails_monotone = {
        let mut sorted: Vec<&FlatteningRow> = rows.iter().collect();
        sorted.sort_by_key(|r| r.cutoff);
        sorted.windows(2).all(|w| w[1].tail <= w[0].tail)
    };
    let first = |pick: fn(&FlatteningRow) -> bool| rows.iter().filter(|r| pick(r) && r.cutoff < max).map(|r| r.cutoff).min();
    let first_below_delta = first(|r| r.below_delta);
    let first_split_target = first(|r| r.meets_delta);
    let with_next: Vec<&FlatteningRow> = rows.iter().filter(|r| r.next_eigenvalue.is_some()).collect();
    let denom: Vec<f64> = with_next
        .iter()
        .map(|r| nu * r.next_eigenvalue.unwrap() as f64 - nu * lambda1 + pref)
        .collect();
    let env: Vec<f64> = with_next.iter().map(|r| r.i2_envelope).collect();
    let meas: Vec<f64> = with_next.iter().map(|r| r.i2_measured).collect();
    Ok(FlatteningReport {
        horizon: t,
        delta,
        envelope_constant,
        envelope_slope: loglog_slope(&denom, &env),
        measured_slope: loglog_slope(&denom, &meas),
        rows,
        unresolved,
        first_below_delta,
        first_split_target,
        tails_monotone,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyReport {
    pub horizons: Vec<f64>,
    /// `[initial][pair]`: `‖∇(u_{t_{i+1}} - u_{t_i})‖` at `τ`.
    pub horizon_gaps: Vec<Vec<f64>>,
    /// `[horizon]`: largest `‖∇(u^a - u^b)‖` over initial pairs.
    pub initial_gaps: Vec<f64>,
    /// Change of the largest-horizon state of initial 0 under dt halving.
    pub floor: f64,
    pub horizon_gaps_monotone: bool,
    pub initial_gaps_monotone: bool,
    /// Largest-horizon gaps within `10 × floor`.
    pub at_floor: bool,
    pub passed: bool,
}

/// Pullback Cauchy test: terminal states at increasing horizons should
/// converge, and different initial data should merge.
pub fn attractor_cauchy_test(setup: &Setup, initials: &[Field], horizons: &[f64]) -> Result<CauchyReport, RdsError> {
    let family = pullback_family(setup, horizons, initials)?;
    let state = |i: usize, j: usize| &family[i * initials.len() + j].terminal;
    let horizon_gaps: Vec<Vec<f64>> = (0..initials.len())
        .map(|j| {
            (0..horizons.len().saturating_sub(1))
                .map(|i| state(i + 1, j).sub(state(i, j)).norm_v())
                .collect()
        })
        .collect();
    let initial_gaps: Vec<f64> = (0..horizons.len())
        .map(|i| {
            let mut g: f64 = 0.0;
            for a in 0..initials.len() {
                for b in a + 1..initials.len() {
                    g = g.max(state(i, a).sub(state(i, b)).norm_v());
                }
            }
            g
        })
        .collect();
    let last = *horizons.last().ok_or_else(|| RdsError::Invalid("no horizons".into()))?;
    let mut half = setup.stepper.clone();
    half.dt /= 2.0;
    half.stride *= 2;
    let fine_setup = Setup { stepper: &half, ..*setup };
    let fine = pullback_family(&fine_setup, &[last], &initials[..1])?;
    let floor = fine[0].terminal.sub(state(horizons.len() - 1, 0)).norm_v();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let horizon_gaps_monotone = horizon_gaps.iter().all(|g| decreasing(g));
    let initial_gaps_monotone = decreasing(&initial_gaps);
    let at_floor = horizon_gaps.iter().all(|g| g.last().is_none_or(|&x| x <= 10.0 * floor))
        && initial_gaps.last().is_none_or(|&x| x <= 10.0 * floor);
    Ok(CauchyReport {
        horizons: horizons.to_vec(),
        horizon_gaps,
        initial_gaps,
        floor,
        horizon_gaps_monotone,
        initial_gaps_monotone,
        at_floor,
        passed: horizon_gaps_monotone && initial_gaps_monotone && at_floor,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CalmingProbeRow {
    pub eps: f64,
    /// `sup_t ‖∇(u_ε(t) - u_ref(t))‖`
    pub sup_gap_v: f64,
    /// `sup_t ‖u_ε(t) - u_ref(t)‖`
    pub sup_gap_h: f64,
    /// Grönwall bound on `sup_t ‖u_ε - u_ref‖` from the residual constants.
    pub bound_h: f64,
    /// Time at which the reference blew up, if it did.
    pub reference_blow_up: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalmingProbeReport {
    pub horizon: f64,
    pub reference: String,
    pub rows: Vec<CalmingProbeRow>,
    /// Gap shrinks as ε decreases.
    pub monotone: bool,
    pub bound_holds: bool,
}

/// Compares calmed trajectories (same variant, several `ε`) with a reference
/// calming on noise-free smooth data over `[0, horizon]`.
///
/// With `w = u_ε - u_ref`, `(∇×u_ε)×ζ(u_ε) - (∇×u_ref)×ζ_ref(u_ref)` splits into
/// `(∇×w)×ζ(u_ε) + (∇×u_ref)×(ζ(u_ε) - u_ε) + (∇×u_ref)×w + (∇×u_ref)×(u_ref - ζ_ref(u_ref))`;
/// the third term is orthogonal to `w`. For an identity reference this gives
/// `d‖w‖/dt ≤ (S_ε²/4ν)‖w‖ + ‖∇×u_ref‖_∞ C ε^α S_ε^{β-1} ‖u_ε‖`, with `S_ε`
/// the sup bound `Σ|û|` of `u_ε`.
pub fn calming_consistency_probe(
    model: &Model<f64>,
    reference: CalmingSpec<f64>,
    eps_list: &[f64],
    u0: &Field,
    dt: f64,
    horizon: f64,
) -> Result<CalmingProbeReport, RdsError> {
    let mut p = model.params();
    p.h = SpectralField::zeros(model.grid());
    let quiet_model = Model::new(p)?;
    let reference_model = quiet_model.with_calming(reference)?;
    let noise = OuPath::zero(1.0, dt, -dt, horizon + dt)?;
    let mut cfg = StepperConfig::new(self::default_scheme(), dt, 0.0, horizon);
    cfg.keep_snapshots = true;
    let (ref_snaps, ref_blow) = match integrate(u0, &cfg, &reference_model, &noise) {
        Ok(r) => (r.snapshots, None),
        Err(IntegratorError::BlowUp { t }) => {
            let mut short = cfg.clone();
            short.t1 = (t - 2.0 * dt).max(0.0);
            (integrate(u0, &short, &reference_model, &noise)?.snapshots, Some(t))
        }
        Err(e) => return Err(e.into()),
    };
    let reference_is_identity = reference.variant() == crate::calming::CalmingVariant::Identity;
    let nu = model.nu();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let spec = CalmingSpec::new(model.calming().variant(), eps).map_err(|e| RdsError::Invalid(e.to_string()))?;
        let m = quiet_model.with_calming(spec)?;
        let rec = integrate(u0, &cfg, &m, &noise)?;
        let rc = spec.residual_constants();
        let (mut gv, mut gh): (f64, f64) = (0.0, 0.0);
        let mut bound: f64 = 0.0;
        let mut prev: Option<(f64, f64, f64)> = None;
        for ((t, a), (_, b)) in rec.snapshots.iter().zip(&ref_snaps) {
            let w = a.sub(b);
            gv = gv.max(w.norm_v());
            gh = gh.max(w.norm_l2());
            if let (Some(rc), true) = (rc, reference_is_identity) {
                let s_eps = a.sup_bound();
                let curl_sup = b.curl().sup_bound();
                let growth = s_eps * s_eps / (4.0 * nu);
                let source = curl_sup * rc.c * eps.powf(rc.alpha) * s_eps.powf(rc.beta - 1.0) * a.norm_l2();
                if let Some((t_prev, g_prev, s_prev)) = prev {
                    let h = t - t_prev;
                    bound = bound * (0.5 * h * (g_prev + growth)).exp() + 0.5 * h * (s_prev + source) * (0.5 * h * (g_prev + growth)).exp();
                }
                prev = Some((*t, growth, source));
            } else {
                bound = f64::INFINITY;
            }
        }
        rows.push(CalmingProbeRow {
            eps,
            sup_gap_v: gv,
            sup_gap_h: gh,
            bound_h: bound,
            reference_blow_up: ref_blow,
        });
    }
    let mut sorted: Vec<&CalmingProbeRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    let monotone = sorted.windows(2).all(|w| w[0].sup_gap_v <= w[1].sup_gap_v);
    let bound_holds = rows.iter().all(|r| r.sup_gap_h <= r.bound_h * (1.0 + 1e-6) + 1e-12);
    Ok(CalmingProbeReport {
        horizon,
        reference: reference.variant().to_string(),
        rows,
        monotone,
        bound_holds,
    })
}

fn default_scheme() -> crate::integrator::Scheme {
    crate::integrator::Scheme::Etdrk2
}

#[derive(Clone, Debug, Serialize)]
pub struct TemperednessRow {
    pub c: f64,
    /// Maxima of `e^{ct} R_V(τ+t, θ_t ω)` over consecutive blocks of `t`,
    /// from the block ending at 0 leftwards.
    pub block_maxima: Vec<f64>,
    pub decreasing: bool,
}

/// Evidence that `K_V` is tempered: `e^{ct} R_V(τ+t, θ_t ω)` shrinks as
/// `t → -∞` over `blocks` blocks of length `block_len(c)`.
pub fn temperedness_probe(
    setup: &Setup,
    rates: &[f64],
    blocks: usize,
    block_len: impl Fn(f64) -> f64,
    truncation: f64,
) -> Result<Vec<TemperednessRow>, RdsError> {
    rates
        .iter()
        .map(|&c| {
            let len = block_len(c);
            let profile = RadiusProfile::new(setup, len * blocks as f64, truncation)?;
            let per_block = ((len / profile.dt).round() as usize).max(1);
            let n = profile.values.len();
            let block_maxima: Vec<f64> = (0..blocks)
                .map(|b| {
                    let hi = n - 1 - b * per_block;
                    let lo = hi.saturating_sub(per_block);
                    (lo..=hi)
                        .map(|j| {
                            let t = profile.start + j as f64 * profile.dt - setup.tau;
                            (c * t).exp() * profile.values[j]
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            let decreasing = block_maxima.windows(2).all(|w| w[1] < w[0]);
            Ok(TemperednessRow {
                c,
                block_maxima,
                decreasing,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calming::CalmingVariant;
    use crate::integrator::Scheme;
    use crate::model::{abc_profile, taylor_green, ForcingSpec, ModelParams};
    use crate::noise::{OuInit, WienerPath};
    use num_complex::Complex;

    fn z1(eps: f64) -> CalmingSpec<f64> {
        CalmingSpec::new(CalmingVariant::Z1, eps).unwrap()
    }

    fn noisy_model(n: usize, forcing: f64) -> Model<f64> {
        let g = WaveGrid::new(n).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.h = taylor_green(&g, 1.0);
        if forcing > 0.0 {
            p.forcing = ForcingSpec::constant(abc_profile(&g, forcing));
        }
        Model::new(p).unwrap()
    }

    fn omega(seed: u64, back: f64) -> OuPath {
        let w = WienerPath::sample(seed, -back, 2.0, 1.25e-3).unwrap();
        OuPath::from_wiener(&w, 1.0, OuInit::StationarySample).unwrap()
    }

    fn stepper(dt: f64) -> StepperConfig {
        StepperConfig::new(Scheme::ExpEuler, dt, 0.0, 0.0)
    }

    #[test]
    fn exponential_quadrature_is_exact_for_linear_data() {
        // ∫_0^1 e^{-a(1-s)} (2 + 3s) ds in closed form
        let a: f64 = 40.0;
        let e = (-a).exp();
        let want = 2.0 * (1.0 - e) / a + 3.0 * (1.0 / a - (1.0 - e) / (a * a));
        let got = exp_weighted_linear(a, 1.0, 0.0, 1.0, 2.0, 5.0);
        assert!((got - want).abs() < 1e-14);
        let tiny = exp_weighted_linear(1e-9, 1.0, 0.0, 1.0, 2.0, 5.0);
        assert!((tiny - 3.5).abs() < 1e-8);
    }

    #[test]
    fn cocycle_identity_at_zero() {
        let m = noisy_model(8, 1.0);
        let om = omega(1, 2.0);
        let st = stepper(5e-3);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let u = initial_family(m.grid(), 3, &[2.0]).pop().unwrap();
        assert_eq!(s.cocycle(0.0, 0.3, &u).unwrap().coeffs(), u.coeffs());
    }

    #[test]
    fn cocycle_without_noise_ignores_seed() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let st = stepper(5e-3);
        let u = initial_family(&g, 3, &[2.0]).pop().unwrap();
        let (a, b) = (omega(1, 2.0), omega(2, 2.0));
        let sa = Setup { model: &m, omega: &a, stepper: &st, tau: 0.0 };
        let sb = Setup { model: &m, omega: &b, stepper: &st, tau: 0.0 };
        assert_eq!(sa.cocycle(0.5, 0.0, &u).unwrap().coeffs(), sb.cocycle(0.5, 0.0, &u).unwrap().coeffs());
    }

    fn composition_gap(m: &Model<f64>, om: &OuPath, dt: f64, t: f64, s: f64) -> f64 {
        let st = stepper(dt);
        let setup = Setup { model: m, omega: om, stepper: &st, tau: 0.0 };
        let u = initial_family(m.grid(), 4, &[2.0]).pop().unwrap();
        let lhs = setup.cocycle(t + s, 0.2, &u).unwrap();
        let mid = setup.cocycle(s, 0.2, &u).unwrap();
        let shifted = om.shift(s).unwrap();
        let rhs = setup.shifted(&shifted).cocycle(t, 0.2 + s, &mid).unwrap();
        lhs.sub(&rhs).norm_v()
    }

    #[test]
    fn cocycle_property() {
        let m = noisy_model(8, 1.0);
        let om = omega(5, 2.0);
        // split on the step grid: only roundoff separates the two sides
        assert!(composition_gap(&m, &om, 0.01, 0.3, 0.2) < 1e-12);
        // split off the step grid: first-order gap, root-mean-square over paths
        let paths: Vec<OuPath> = (0..8).map(|s| omega(100 + s, 2.0)).collect();
        let gaps: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| {
                let ms: f64 = paths.iter().map(|om| composition_gap(&m, om, dt, 0.3, 0.2 + dt / 2.0).powi(2)).sum();
                (ms / paths.len() as f64).sqrt()
            })
            .collect();
        for w in gaps.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!(slope >= 0.9, "{gaps:?}");
        }
    }

    #[test]
    fn radius_trivial_cases() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let zero = OuPath::zero(1.0, 1e-2, -40.0, 1.0).unwrap();
        let e = absorbing_radius(0.0, &zero, &m, 30.0).unwrap();
        assert_eq!(e.r_v, e.m1);
        let mut p = m.params();
        p.forcing = ForcingSpec::constant(abc_profile(&g, 0.5));
        let mf = Model::new(p).unwrap();
        let e = absorbing_radius(1.0, &zero, &mf, 30.0).unwrap();
        let want = 1.0 + 0.25 / 0.5;
        assert!((e.bracket - want).abs() < 1e-6);
        assert!(matches!(absorbing_radius(0.0, &zero, &m, 10.0), Err(RdsError::TruncationHorizon { .. })));
        let bad = m.with_calming(z1(1.0)).unwrap();
        assert!(matches!(absorbing_radius(0.0, &zero, &bad, 40.0), Err(RdsError::KappaNotPositive(_))));
    }

    #[test]
    fn radius_quadrature_refinement() {
        let m = noisy_model(8, 1.0);
        let om = omega(7, 40.0);
        let fine = absorbing_radius_strided(0.0, &om, &m, 30.0, 1).unwrap();
        let coarse = absorbing_radius_strided(0.0, &om, &m, 30.0, 2).unwrap();
        assert!((fine.r_v - coarse.r_v).abs() / fine.r_v < 5e-3);
        assert!(fine.r_v >= fine.m1);
    }

    #[test]
    fn radius_profile_matches_direct_estimate() {
        let m = noisy_model(8, 0.7);
        let om = omega(8, 50.0);
        let st = stepper(5e-3);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let p = RadiusProfile::new(&s, 5.0, 30.0).unwrap();
        let direct = absorbing_radius(0.0, &om, &m, 30.0).unwrap();
        assert!((p.at(0.0).unwrap() - direct.r_v).abs() / direct.r_v < 1e-5);
    }

    #[test]
    fn pullback_zero_data_decays_monotonically() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let om = omega(1, 10.0);
        let st = stepper(1e-2);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let init = initial_family(&g, 1, &[3.0]);
        let cells = pullback_family(&s, &[0.0, 0.5, 1.0, 2.0], &init).unwrap();
        assert_eq!(cells[0].terminal.coeffs(), init[0].coeffs());
        let norms: Vec<f64> = cells.iter().map(|c| c.terminal.norm_v()).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn linear_pullback_contraction() {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 1.0, z1(2.0));
        p.nonlinear = false;
        let m = Model::new(p).unwrap();
        let om = omega(2, 10.0);
        let st = stepper(1e-2);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let c = |x: f64| Complex::new(x, 0.0);
        let u0 = SpectralField::single_mode(&g, [0, 1, 0], [c(1.0), c(0.0), c(0.5)]);
        let rep = attractor_cauchy_test(&s, &[u0.clone(), u0.scale(-1.0)], &[1.0, 2.0, 4.0]).unwrap();
        // closed form: u(τ) = e^{-t} u0, so gap(t, 2t) = e^{-t}(1 - e^{-t}) ‖∇u0‖
        let n0 = u0.norm_v();
        for (k, &t) in [1.0f64, 2.0].iter().enumerate() {
            let want = (-t).exp() * (1.0 - (-t).exp()) * n0;
            assert!((rep.horizon_gaps[0][k] - want).abs() < 1e-9 * n0);
        }
        assert!(rep.horizon_gaps_monotone && rep.initial_gaps_monotone);
        let same = attractor_cauchy_test(&s, &[u0.clone(), u0.clone()], &[1.0, 2.0]).unwrap();
        assert!(same.initial_gaps.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn absorbing_small_family() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let om = omega(3, 40.0);
        let mut st = stepper(1e-2);
        st.stride = 5;
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let r = absorbing_radius(0.0, &om, &m, 30.0).unwrap().r_v;
        // already inside with no forcing or noise: stays inside
        let init = initial_family(&g, 2, &[0.1 * r.sqrt(), 0.5 * r.sqrt()]);
        let rep = absorbing_experiment(&s, &init, &[1.0, 2.0], 30.0).unwrap();
        assert!(rep.passed, "{rep:?}");
        for c in &rep.cells {
            assert_eq!(c.entry_time, Some(-c.horizon));
        }
        let big = initial_family(&g, 2, &[10.0 * r.sqrt()]);
        let rep = absorbing_experiment(&s, &big, &[1.0, 2.0, 4.0, 8.0], 30.0).unwrap();
        assert!(rep.entry_monotone && rep.absorbed_at_largest, "{rep:?}");
        let ts: Vec<f64> = rep.cells.iter().map(|c| c.tempered_start).collect();
        assert!(ts.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn flattening_basic_properties() {
        let m = noisy_model(8, 1.0);
        let om = omega(4, 10.0);
        let st = stepper(1e-2);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let u0 = initial_family(m.grid(), 1, &[2.0]).pop().unwrap();
        let shells: Vec<u32> = m.grid().shells().to_vec();
        let rep = flattening_analysis(&s, &u0, 2.0, &shells, 1e-2).unwrap();
        assert!(rep.tails_monotone);
        let last = rep.rows.last().unwrap();
        assert_eq!(last.cutoff, m.grid().max_retained_eigenvalue());
        assert_eq!(last.tail, 0.0);
        assert_eq!(rep.unresolved, vec![last.cutoff]);
        let env: Vec<f64> = rep.rows.iter().filter(|r| r.next_eigenvalue.is_some()).map(|r| r.i2_envelope).collect();
        assert!(env.windows(2).all(|w| w[1] < w[0]));
        assert!((rep.envelope_slope + 1.0).abs() < 1e-9);
        for r in &rep.rows {
            assert!(r.i2_measured <= r.i2_envelope * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn calming_probe_trends() {
        let g = WaveGrid::new(8).unwrap();
        let m = Model::new(ModelParams::new(&g, 1.0, z1(2.0))).unwrap();
        let u0 = initial_family(&g, 6, &[3.0]).pop().unwrap();
        let same = calming_consistency_probe(&m, z1(2.0), &[2.0], &u0, 5e-3, 0.5).unwrap();
        assert_eq!(same.rows[0].sup_gap_v, 0.0);
        let rep = calming_consistency_probe(&m, CalmingSpec::identity(), &[8.0, 4.0, 1.0, 0.25], &u0, 5e-3, 0.5).unwrap();
        assert!(rep.monotone, "{rep:?}");
        assert!(rep.bound_holds, "{rep:?}");
    }

    #[test]
    fn tempered_radius() {
        let m = noisy_model(8, 1.0);
        let om = omega(11, 120.0);
        let st = stepper(1e-2);
        let s = Setup { model: &m, omega: &om, stepper: &st, tau: 0.0 };
        let rows = temperedness_probe(&s, &[0.1, 1.0, 10.0], 4, |c| (2.0 / c).max(1.0), 30.0).unwrap();
        for r in &rows {
            assert!(r.decreasing, "{r:?}");
        }
    }
}
