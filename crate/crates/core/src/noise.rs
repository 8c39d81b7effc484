//! Seeded scalar Wiener paths with shift semantics, and the Ornstein–Uhlenbeck
//! process `z(θ_t ω)` solving `dz + γ z dt = dW`.
//!
//! Increments live on an absolute integer grid `t_i = i·dt` and are drawn
//! from a counter-based generator keyed on `(seed, i)`, so any window of the
//! same path can be re-sampled without disturbing the rest. A path also keeps
//! an anchor index: the absolute grid point playing the role of time zero.
//! Shifting by `s` moves the anchor and re-references values, which makes
//! `θ_s ∘ θ_r = θ_{s+r}` hold bit-for-bit.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noise step must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("empty noise grid: need t_min <= 0 <= t_max, got [{0}, {1}]")]
    EmptyGrid(f64, f64),
    #[error("OU rate gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("time {0} is not a multiple of the noise step {1}")]
    Misaligned(f64, f64),
    #[error("insufficient noise horizon: need [{need_min}, {need_max}], have [{have_min}, {have_max}]")]
    InsufficientHorizon {
        need_min: f64,
        need_max: f64,
        have_min: f64,
        have_max: f64,
    },
    #[error("horizon {horizon} too short, need at least {required}")]
    HorizonTooShort { horizon: f64, required: f64 },
}

const INCREMENT_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const WORDS_PER_DRAW: u128 = 4;

fn word_offset(index: i64) -> u128 {
    (index as i128 + (1i128 << 63)) as u128 * WORDS_PER_DRAW
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Standard normals for absolute indices `start..start+len`, keyed on
/// `(seed, stream, index)`.
pub fn counter_normals(seed: u64, stream: u64, start: i64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_offset(start));
    (0..len).map(|_| box_muller(&mut rng)).collect()
}

/// Converts `t` to a grid index, requiring alignment to within `1e-9` steps.
pub fn aligned_index(t: f64, dt: f64) -> Result<i64, NoiseError> {
    let k = t / dt;
    let r = k.round();
    if (k - r).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(NoiseError::Misaligned(t, dt));
    }
    Ok(r as i64)
}

fn check_dt(dt: f64) -> Result<(), NoiseError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(NoiseError::InvalidDt(dt))
    }
}

/// Values of a scalar path on a uniform grid, with time zero at `anchor`.
#[derive(Clone, Debug, PartialEq)]
struct GridWindow {
    dt: f64,
    first: i64,
    anchor: i64,
}

impl GridWindow {
    fn time(&self, j: usize) -> f64 {
        (self.first + j as i64 - self.anchor) as f64 * self.dt
    }

    fn locate(&self, t: f64, len: usize) -> Option<(usize, f64)> {
        let x = t / self.dt + (self.anchor - self.first) as f64;
        let last = (len - 1) as f64;
        let tol = 1e-9 * x.abs().max(1.0);
        if x < -tol || x > last + tol {
            return None;
        }
        let x = x.clamp(0.0, last);
        let j = (x.floor() as usize).min(len.saturating_sub(2));
        Some((j, x - j as f64))
    }

    fn interpolate(&self, values: &[f64], t: f64) -> Option<f64> {
        if values.len() == 1 {
            return (t.abs() <= 1e-9 * self.dt).then_some(values[0]);
        }
        let (j, w) = self.locate(t, values.len())?;
        if w == 0.0 {
            return Some(values[j]);
        }
        if w == 1.0 {
            return Some(values[j + 1]);
        }
        Some(values[j] * (1.0 - w) + values[j + 1] * w)
    }

    fn shifted(&self, s: f64, len: usize) -> Result<GridWindow, NoiseError> {
        let k = aligned_index(s, self.dt)?;
        let anchor = self.anchor + k;
        if anchor < self.first || anchor > self.first + len as i64 - 1 {
            let (lo, hi) = (self.time(0), self.time(len - 1));
            return Err(NoiseError::InsufficientHorizon {
                need_min: s,
                need_max: s,
                have_min: lo,
                have_max: hi,
            });
        }
        Ok(GridWindow { anchor, ..self.clone() })
    }

    fn require(&self, t0: f64, t1: f64, len: usize) -> Result<(), NoiseError> {
        let (lo, hi) = (self.time(0), self.time(len - 1));
        let tol = 1e-9 * self.dt;
        if t0 < lo - tol || t1 > hi + tol {
            return Err(NoiseError::InsufficientHorizon {
                need_min: t0,
                need_max: t1,
                have_min: lo,
                have_max: hi,
            });
        }
        Ok(())
    }
}

/// A two-sided scalar Wiener path `ω` on a uniform grid with `ω(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    seed: u64,
    grid: GridWindow,
    /// `increments[j] = ω(t_{j+1}) - ω(t_j)`, keyed on absolute index `first + j`.
    increments: Vec<f64>,
    values: Vec<f64>,
}

impl WienerPath {
    /// Samples the path on `[t_min, t_max]`, widened outward to grid points.
    pub fn sample(seed: u64, t_min: f64, t_max: f64, dt: f64) -> Result<Self, NoiseError> {
        check_dt(dt)?;
        if !(t_min <= 0.0 && t_max >= 0.0 && t_min.is_finite() && t_max.is_finite()) {
            return Err(NoiseError::EmptyGrid(t_min, t_max));
        }
        let lo = (t_min / dt - 1e-9).ceil().min(0.0) as i64;
        let lo = if (lo as f64) * dt > t_min + 1e-12 { lo - 1 } else { lo };
        let hi = (t_max / dt + 1e-9).floor() as i64;
        let hi = if (hi as f64) * dt < t_max - 1e-12 { hi + 1 } else { hi };
        let len = (hi - lo) as usize;
        let increments: Vec<f64> = counter_normals(seed, INCREMENT_STREAM, lo, len)
            .into_iter()
            .map(|g| g * dt.sqrt())
            .collect();
        Ok(Self::from_increments(seed, dt, lo, 0, increments))
    }

    fn from_increments(seed: u64, dt: f64, first: i64, anchor: i64, increments: Vec<f64>) -> Self {
        let grid = GridWindow { dt, first, anchor };
        let values = cumulate(&increments, (anchor - first) as usize);
        Self {
            seed,
            grid,
            increments,
            values,
        }
    }

    /// A deterministic path with prescribed increments; time zero at index 0
    /// of `increments` shifted by `zero_at`.
    pub fn from_raw(dt: f64, zero_at: usize, increments: Vec<f64>) -> Result<Self, NoiseError> {
        check_dt(dt)?;
        if zero_at > increments.len() {
            return Err(NoiseError::EmptyGrid(0.0, 0.0));
        }
        Ok(Self::from_increments(0, dt, -(zero_at as i64), 0, increments))
    }

    /// `θ_s ω`: `(θ_s ω)(t) = ω(s + t) - ω(s)`.
    pub fn shift(&self, s: f64) -> Result<Self, NoiseError> {
        let grid = self.grid.shifted(s, self.values.len())?;
        let values = cumulate(&self.increments, (grid.anchor - grid.first) as usize);
        Ok(Self {
            seed: self.seed,
            grid,
            increments: self.increments.clone(),
            values,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn t_min(&self) -> f64 {
        self.grid.time(0)
    }

    pub fn t_max(&self) -> f64 {
        self.grid.time(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|j| self.grid.time(j))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Absolute grid index of the first stored point.
    pub fn first_index(&self) -> i64 {
        self.grid.first
    }

    /// Absolute grid index of time zero.
    pub fn anchor_index(&self) -> i64 {
        self.grid.anchor
    }

    /// `ω(t)`, linearly interpolated between grid points.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.grid.interpolate(&self.values, t)
    }
}

fn cumulate(increments: &[f64], zero: usize) -> Vec<f64> {
    let mut values = vec![0.0; increments.len() + 1];
    for j in zero..increments.len() {
        values[j + 1] = values[j] + increments[j];
    }
    for j in (0..zero).rev() {
        values[j] = values[j + 1] - increments[j];
    }
    values
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuInit {
    /// Seeded draw from the stationary law `N(0, 1/(2γ))`.
    StationarySample,
    Zero,
}

/// `z(θ_t ω)` on the grid of a Wiener path.
///
/// Uses `z_{i+1} = e^{-γdt} z_i + e^{-γdt} ΔW_i`, which is first-order
/// accurate: its stationary variance is `e^{-2γdt} dt / (1 - e^{-2γdt})`,
/// i.e. `1/(2γ) - dt/2 + O(dt²)`. The improper integral defining `z` is
/// truncated at the left end of the path; the transient from the initial
/// value decays like `e^{-γ(t - t_min)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OuPath {
    gamma: f64,
    init: OuInit,
    grid: GridWindow,
    values: Vec<f64>,
}

impl OuPath {
    pub fn from_wiener(path: &WienerPath, gamma: f64, init: OuInit) -> Result<Self, NoiseError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(NoiseError::InvalidGamma(gamma));
        }
        let dt = path.dt();
        let z0 = match init {
            OuInit::Zero => 0.0,
            OuInit::StationarySample => {
                counter_normals(path.seed, INIT_STREAM, path.grid.first, 1)[0]
                    / (2.0 * gamma).sqrt()
            }
        };
        let decay = (-gamma * dt).exp();
        let mut values = Vec::with_capacity(path.len());
        values.push(z0);
        let mut z = z0;
        for dw in &path.increments {
            z = decay * z + decay * dw;
            values.push(z);
        }
        Ok(Self {
            gamma,
            init,
            grid: path.grid.clone(),
            values,
        })
    }

    /// A synthetic path with given samples; `values[zero_at]` sits at time 0.
    pub fn synthetic(gamma: f64, dt: f64, zero_at: usize, values: Vec<f64>) -> Result<Self, NoiseError> {
        check_dt(dt)?;
        if !(gamma > 0.0) {
            return Err(NoiseError::InvalidGamma(gamma));
        }
        if zero_at >= values.len() {
            return Err(NoiseError::EmptyGrid(0.0, 0.0));
        }
        Ok(Self {
            gamma,
            init: OuInit::Zero,
            grid: GridWindow {
                dt,
                first: -(zero_at as i64),
                anchor: 0,
            },
            values,
        })
    }

    /// The identically zero path on `[t_min, t_max]` (no noise).
    pub fn zero(gamma: f64, dt: f64, t_min: f64, t_max: f64) -> Result<Self, NoiseError> {
        let w = WienerPath::from_raw(
            dt,
            (-t_min / dt).round().max(0.0) as usize,
            vec![0.0; ((t_max - t_min) / dt).round().max(0.0) as usize],
        )?;
        Self::from_wiener(&w, gamma, OuInit::Zero)
    }

    /// `z(θ_{s+·} ω)` viewed from the shifted origin.
    pub fn shift(&self, s: f64) -> Result<Self, NoiseError> {
        Ok(Self {
            grid: self.grid.shifted(s, self.values.len())?,
            ..self.clone()
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn init(&self) -> OuInit {
        self.init
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn t_min(&self) -> f64 {
        self.grid.time(0)
    }

    pub fn t_max(&self) -> f64 {
        self.grid.time(self.values.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|j| self.grid.time(j))
    }

    /// `z(θ_t ω)`, linearly interpolated.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.grid.interpolate(&self.values, t)
    }

    /// Samples on the grid points covering `[t0, t1]` (both aligned).
    pub fn window(&self, t0: f64, t1: f64) -> Result<&[f64], NoiseError> {
        self.grid.require(t0, t1, self.values.len())?;
        let off = self.grid.anchor - self.grid.first;
        let a = aligned_index(t0, self.grid.dt)? + off;
        let b = aligned_index(t1, self.grid.dt)? + off;
        Ok(&self.values[a as usize..=b as usize])
    }

    pub fn require(&self, t0: f64, t1: f64) -> Result<(), NoiseError> {
        self.grid.require(t0, t1, self.values.len())
    }

    /// Trapezoid rule for `∫_{t0}^{t1} e^{κ r} |z(θ_r ω)|² dr`, using every
    /// `stride`-th grid point.
    pub fn discounted_square_integral(
        &self,
        kappa: f64,
        t0: f64,
        t1: f64,
        stride: usize,
    ) -> Result<f64, NoiseError> {
        let w = self.window(t0, t1)?;
        let h = self.grid.dt;
        Ok(trapezoid_strided(w.len(), h, stride, |j| {
            let r = t0 + j as f64 * h;
            (kappa * r).exp() * w[j] * w[j]
        }))
    }
}

/// Composite trapezoid over samples `0..len` with spacing `h`, keeping every
/// `stride`-th sample. The last interval is shortened if `stride` does not
/// divide `len - 1`.
pub fn trapezoid_strided(len: usize, h: f64, stride: usize, f: impl Fn(usize) -> f64) -> f64 {
    if len < 2 {
        return 0.0;
    }
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    idx.windows(2)
        .map(|p| 0.5 * (p[1] - p[0]) as f64 * h * (f(p[0]) + f(p[1])))
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscountedIntegral {
    pub kappa: f64,
    pub value: f64,
    /// Same integral at twice the step, as an error gauge.
    pub coarse_value: f64,
    pub relative_gap: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TemperednessReport {
    pub horizon: f64,
    /// `max |z(θ_t ω)| / (1 + |t|)` over the stored grid.
    pub max_ratio: f64,
    pub integrals: Vec<DiscountedIntegral>,
    /// `e^{-γ(0 - t_min)}`: weight of the initial value at time 0.
    pub init_transient: f64,
}

/// Finite-horizon evidence of sublinear growth of `z(θ_t ω)`, and the
/// truncated integrals `∫_{-T}^0 e^{κr} |z(θ_r ω)|² dr`.
pub fn ou_temperedness_check(
    ou: &OuPath,
    horizon: f64,
    kappas: &[f64],
) -> Result<TemperednessReport, NoiseError> {
    let required = 10.0 / ou.gamma;
    if horizon < required {
        return Err(NoiseError::HorizonTooShort { horizon, required });
    }
    ou.require(-horizon, 0.0)?;
    let max_ratio = ou
        .times()
        .zip(&ou.values)
        .map(|(t, z)| z.abs() / (1.0 + t.abs()))
        .fold(0.0, f64::max);
    let integrals = kappas
        .iter()
        .map(|&kappa| {
            let value = ou.discounted_square_integral(kappa, -horizon, 0.0, 1)?;
            let coarse_value = ou.discounted_square_integral(kappa, -horizon, 0.0, 2)?;
            let relative_gap = if value > 0.0 {
                (value - coarse_value).abs() / value
            } else {
                0.0
            };
            Ok(DiscountedIntegral {
                kappa,
                value,
                coarse_value,
                relative_gap,
            })
        })
        .collect::<Result<_, NoiseError>>()?;
    Ok(TemperednessReport {
        horizon,
        max_ratio,
        integrals,
        init_transient: (-ou.gamma * (0.0 - ou.t_min())).exp(),
    })
}
