//! Energy functionals, the explicit-constants ledger and monitors for the
//! integrated energy inequality.
//!
//! The ledger fixes every constant that the estimates leave generic. With
//! `u = v + hz`, `M = sup|ζ|` and `D = ‖f‖ + c_h|z|`,
//! `c_h = M‖∇h‖ + ν‖Ah‖ + γ‖h‖`:
//!
//! ```text
//! d/dt ‖∇v‖² = -2ν‖Av‖² - 2⟨B(ζ(u),u), Av⟩ + 2⟨f - νzAh + γzh, Av⟩
//!            ≤ -2ν‖Av‖² + 2M‖∇v‖‖Av‖ + 2D‖Av‖
//!            ≤ -ν‖Av‖² + (2M²/ν)‖∇v‖² + (2/ν)D²       (Young, weights ν/2, ν/2)
//!            ≤ -κ‖∇v‖² + β_f‖f‖² + β_z|z|²
//! ```
//!
//! with `κ = νλ₁ - 2M²/ν`, `β_f = 4/ν`, `β_z = 4c_h²/ν`.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::model::Model;
use crate::scalar::Real;
use crate::spectral::SpectralField;

/// Per-time diagnostics of a `v` trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub norm_v: f64,
    pub norm_grad_v: f64,
    pub norm_av: f64,
    pub z: f64,
    pub norm_f: f64,
    /// `‖∇(v + hz)‖`
    pub norm_grad_u: f64,
    /// `‖(I - P_Λ) v‖_V` for each configured threshold.
    pub tails: Vec<f64>,
}

pub fn energy_record<T: Real>(
    model: &Model<T>,
    v: &SpectralField<T>,
    t: f64,
    z: f64,
    tail_cutoffs: &[u32],
) -> EnergyRecord {
    let mut u = v.clone();
    u.axpy(T::lit(z), model.h());
    EnergyRecord {
        t,
        norm_v: v.norm_l2().to_f64_lossy(),
        norm_grad_v: v.norm_v().to_f64_lossy(),
        norm_av: v.norm_a().to_f64_lossy(),
        z,
        norm_f: model.forcing().norm_sq(T::lit(t)).to_f64_lossy().sqrt(),
        norm_grad_u: u.norm_v().to_f64_lossy(),
        tails: tail_cutoffs
            .iter()
            .map(|&c| v.galerkin_tail(c).norm_v().to_f64_lossy())
            .collect(),
    }
}

/// Column names of the CSV time series.
pub fn csv_header(tail_cutoffs: &[u32]) -> Vec<String> {
    let mut h: Vec<String> = ["t", "norm_v", "norm_grad_v", "norm_Av", "z", "norm_f", "norm_grad_u"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(tail_cutoffs.iter().map(|c| format!("tail_{c}")));
    h
}

impl EnergyRecord {
    pub fn csv_row(&self) -> Vec<String> {
        let mut r: Vec<String> = [
            self.t,
            self.norm_v,
            self.norm_grad_v,
            self.norm_av,
            self.z,
            self.norm_f,
            self.norm_grad_u,
        ]
        .iter()
        .map(|x| format!("{x:e}"))
        .collect();
        r.extend(self.tails.iter().map(|x| format!("{x:e}")));
        r
    }

    pub fn from_csv_row(row: &[&str], tail_count: usize) -> Option<Self> {
        if row.len() != 7 + tail_count {
            return None;
        }
        let x: Vec<f64> = row.iter().map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
        Some(Self {
            t: x[0],
            norm_v: x[1],
            norm_grad_v: x[2],
            norm_av: x[3],
            z: x[4],
            norm_f: x[5],
            norm_grad_u: x[6],
            tails: x[7..].to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub name: &'static str,
    pub value: f64,
    pub formula: &'static str,
    /// Where the constant is used.
    pub used_in: &'static str,
    pub derivation: Vec<&'static str>,
}

/// Explicit constants for one model configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantsLedger {
    pub nu: f64,
    pub lambda1: f64,
    pub gamma: f64,
    pub m_eps: f64,
    pub kappa: f64,
    pub c_h: f64,
    pub beta_f: f64,
    pub beta_z: f64,
    /// `C` in `‖ũ(t)‖² ≤ exp(C ∫ ‖Au_b‖) ‖ũ₀‖²`.
    pub continuity_constant: f64,
    pub m1: f64,
    pub norm_grad_h: f64,
    pub entries: Vec<LedgerEntry>,
}

impl ConstantsLedger {
    /// Derives every constant; `None` for unbounded (identity) calming.
    pub fn derive<T: Real>(model: &Model<T>) -> Option<Self> {
        let nu = model.nu().to_f64_lossy();
        let lambda1 = model.grid().lambda1() as f64;
        let gamma = model.gamma().to_f64_lossy();
        let m = model.m_eps()?.to_f64_lossy();
        let h = model.h();
        let (h0, h1, h2) = (
            h.norm_l2().to_f64_lossy(),
            h.norm_v().to_f64_lossy(),
            h.norm_a().to_f64_lossy(),
        );
        let kappa = nu * lambda1 - 2.0 * m * m / nu;
        let c_h = m * h1 + nu * h2 + gamma * h0;
        let beta_f = 4.0 / nu;
        let beta_z = 4.0 * c_h * c_h / nu;
        let s = model.grid().agmon_constant();
        let continuity_constant = 2.0 * s;
        let m1 = [2.0, 2.0 * beta_f, 2.0 * beta_z, 2.0 * h1 * h1]
            .into_iter()
            .fold(0.0, f64::max);
        let entries = vec![
            LedgerEntry {
                name: "M_eps",
                value: m,
                formula: "sup |zeta^eps| (closed form per calming variant)",
                used_in: "bound |<(curl u) x zeta(u), w>| <= M ||grad u|| ||w||",
                derivation: vec!["pointwise |a x zeta| <= |a| M, then Cauchy-Schwarz"],
            },
            LedgerEntry {
                name: "kappa",
                value: kappa,
                formula: "nu*lambda1 - 2*M^2/nu",
                used_in: "energy inequality for ||grad v||^2; Gronwall decay rate",
                derivation: vec![
                    "2M||grad v||||Av|| <= (nu/2)||Av||^2 + (2M^2/nu)||grad v||^2",
                    "-nu||Av||^2 <= -nu*lambda1*||grad v||^2 (Poincare)",
                    "A3: M < nu*sqrt(lambda1/2)  <=>  2M^2/nu < nu*lambda1  <=>  kappa > 0",
                ],
            },
            LedgerEntry {
                name: "c_h",
                value: c_h,
                formula: "M*||grad h|| + nu*||Ah|| + gamma*||h||",
                used_in: "noise contribution to the energy inequality",
                derivation: vec![
                    "|<B(zeta(u), hz), Av>| <= M|z|||grad h||||Av||",
                    "|<-nu z Ah + gamma z h, Av>| <= (nu||Ah|| + gamma||h||)|z|||Av||",
                ],
            },
            LedgerEntry {
                name: "beta_f",
                value: beta_f,
                formula: "4/nu",
                used_in: "energy inequality, forcing term",
                derivation: vec![
                    "2D||Av|| <= (nu/2)||Av||^2 + (2/nu)D^2, D = ||f|| + c_h|z|",
                    "D^2 <= 2||f||^2 + 2c_h^2|z|^2",
                ],
            },
            LedgerEntry {
                name: "beta_z",
                value: beta_z,
                formula: "4*c_h^2/nu",
                used_in: "energy inequality, noise term",
                derivation: vec!["same split as beta_f"],
            },
            LedgerEntry {
                name: "C_continuity",
                value: continuity_constant,
                formula: "2*S, S = sqrt(sum over retained k != 0 of |k|^-2)",
                used_in: "continuous dependence: ||w(t)||^2 <= exp(C int ||Au_b||) ||w(0)||^2",
                derivation: vec![
                    "w = u_a - u_b; (curl u_a) x zeta_a - (curl u_b) x zeta_b = (curl w) x zeta_a + (curl u_b) x (zeta_a - zeta_b)",
                    "-2nu||grad w||^2 + 2M||grad w||||w|| <= 0 when M <= nu*sqrt(lambda1)",
                    "|zeta_a - zeta_b| <= |w| (Lipschitz 1)",
                    "||curl u_b||_inf <= sum |k||u_k| <= S ||Au_b|| (Cauchy-Schwarz over the band)",
                ],
            },
            LedgerEntry {
                name: "M1",
                value: m1,
                formula: "max(2, 2*beta_f, 2*beta_z, 2*||grad h||^2)",
                used_in: "absorbing radius R_V = M1 [1 + |z|^2 + int e^{kappa r}(||f||^2 + |z|^2) dr]",
                derivation: vec![
                    "||grad u||^2 <= 2||grad v||^2 + 2|z|^2||grad h||^2",
                    "Gronwall on the energy inequality over [tau - t, tau]",
                    "transient 2e^{-kappa t}||grad v(tau - t)||^2 <= M1 once e^{-kappa t}||grad v||^2 <= 1",
                ],
            },
        ];
        Some(Self {
            nu,
            lambda1,
            gamma,
            m_eps: m,
            kappa,
            c_h,
            beta_f,
            beta_z,
            continuity_constant,
            m1,
            norm_grad_h: h1,
            entries,
        })
    }

    /// Right-hand side weight `β_f‖f‖² + β_z|z|²`.
    pub fn source(&self, norm_f: f64, z: f64) -> f64 {
        self.beta_f * norm_f * norm_f + self.beta_z * z * z
    }
}

/// Markdown and JSON renderings of a ledger, plus the SHA-256 of the JSON.
#[derive(Clone, Debug)]
pub struct LedgerExport {
    pub markdown: String,
    pub json: String,
    pub hash: String,
}

pub fn export_ledger(ledger: &ConstantsLedger) -> LedgerExport {
    let json = serde_json::to_string_pretty(ledger).expect("ledger serialises");
    let hash = hex::encode(Sha256::digest(json.as_bytes()));
    let mut md = String::from("# Constants ledger\n\n");
    md.push_str(&format!(
        "nu = {}, lambda1 = {}, gamma = {}, ||grad h|| = {}\n\n",
        ledger.nu, ledger.lambda1, ledger.gamma, ledger.norm_grad_h
    ));
    for e in &ledger.entries {
        md.push_str(&format!("## {} = {}\n\n", e.name, e.value));
        md.push_str(&format!("- formula: `{}`\n", e.formula));
        md.push_str(&format!("- used in: {}\n", e.used_in));
        for d in &e.derivation {
            md.push_str(&format!("- step: {d}\n"));
        }
        md.push('\n');
    }
    md.push_str(&format!("sha256: {hash}\n"));
    LedgerExport {
        markdown: md,
        json,
        hash,
    }
}

/// Result of checking the integrated energy inequality on recorded data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorResult {
    /// `‖∇v(t_i)‖² - bound_i` (non-positive when the inequality holds).
    pub slack: Vec<f64>,
    pub bound: Vec<f64>,
    pub worst_slack: f64,
    pub worst_index: usize,
    /// Additive allowance for discretisation error.
    pub tolerance: f64,
    pub violations: usize,
    pub passed: bool,
}

/// Checks, at every record,
/// `‖∇v(t)‖² ≤ e^{-κ(t-t₀)}‖∇v(t₀)‖² + ∫_{t₀}^t e^{-κ(t-s)}(β_f‖f‖² + β_z|z|²) ds`,
/// with the integral evaluated from the records by the trapezoid rule.
pub fn gronwall_monitor(records: &[EnergyRecord], ledger: &ConstantsLedger, tolerance: f64) -> MonitorResult {
    let kappa = ledger.kappa;
    let mut slack = Vec::with_capacity(records.len());
    let mut bound = Vec::with_capacity(records.len());
    let Some(first) = records.first() else {
        return MonitorResult {
            slack,
            bound,
            worst_slack: f64::NEG_INFINITY,
            worst_index: 0,
            tolerance,
            violations: 0,
            passed: true,
        };
    };
    let g0 = first.norm_grad_v.powi(2);
    let mut integral = 0.0;
    let mut prev_src = ledger.source(first.norm_f, first.z);
    let mut prev_t = first.t;
    for r in records {
        let dt = r.t - prev_t;
        let decay = (-kappa * dt).exp();
        let src = ledger.source(r.norm_f, r.z);
        integral = decay * integral + 0.5 * dt * (decay * prev_src + src);
        let b = (-kappa * (r.t - first.t)).exp() * g0 + integral;
        bound.push(b);
        slack.push(r.norm_grad_v.powi(2) - b);
        prev_src = src;
        prev_t = r.t;
    }
    let (worst_index, worst_slack) = slack
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, s)| if s > a.1 { (i, s) } else { a });
    let violations = slack.iter().filter(|&&s| s > tolerance).count();
    MonitorResult {
        slack,
        bound,
        worst_slack,
        worst_index,
        tolerance,
        violations,
        passed: violations == 0,
    }
}

/// Discretisation allowance from a step-halving pair: the largest change of
/// the monitored slack between the `dt` run and the `dt/2` run at common
/// record times. For a first-order scheme this is `O(dt)`.
pub fn measure_tolerance(
    coarse: &[EnergyRecord],
    fine: &[EnergyRecord],
    ledger: &ConstantsLedger,
) -> f64 {
    let mc = gronwall_monitor(coarse, ledger, 0.0);
    let mf = gronwall_monitor(fine, ledger, 0.0);
    let mut j = 0;
    let mut worst: f64 = 0.0;
    for (i, r) in coarse.iter().enumerate() {
        while j < fine.len() && fine[j].t < r.t - 1e-9 {
            j += 1;
        }
        if j < fine.len() && (fine[j].t - r.t).abs() <= 1e-9 {
            worst = worst.max((mc.slack[i] - mf.slack[j]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calming::{CalmingSpec, CalmingVariant};
    use crate::model::{abc_profile, taylor_green, ForcingSpec, ModelParams};
    use crate::spectral::WaveGrid;
    use num_complex::Complex;

    fn model(h: bool) -> Model<f64> {
        let g = WaveGrid::new(8).unwrap();
        let mut p = ModelParams::new(&g, 1.0, CalmingSpec::new(CalmingVariant::Z1, 2.0).unwrap());
        if h {
            p.h = taylor_green(&g, 1.0);
        }
        Model::new(p).unwrap()
    }

    fn rec(t: f64, g: f64, f: f64, z: f64) -> EnergyRecord {
        EnergyRecord {
            t,
            norm_v: 0.0,
            norm_grad_v: g,
            norm_av: 0.0,
            z,
            norm_f: f,
            norm_grad_u: 0.0,
            tails: vec![],
        }
    }

    #[test]
    fn records_of_simple_states() {
        let m = model(true);
        let g = m.grid().clone();
        let r = energy_record(&m, &SpectralField::zeros(&g), 0.5, -0.3, &[1]);
        assert_eq!((r.norm_v, r.norm_grad_v, r.norm_av), (0.0, 0.0, 0.0));
        assert_eq!(r.z, -0.3);
        assert_eq!(r.tails, vec![0.0]);
        let c = |x: f64| Complex::new(x, 0.0);
        let e = SpectralField::single_mode(&g, [0, 1, 0], [c(0.3), c(0.0), c(0.4)]);
        let r = energy_record(&m, &e, 0.0, 0.0, &[]);
        assert!((r.norm_v - r.norm_grad_v).abs() < 1e-15 && (r.norm_v - r.norm_av).abs() < 1e-15);
        assert!((r.norm_v - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ledger_values() {
        let l = ConstantsLedger::derive(&model(false)).unwrap();
        assert_eq!(l.kappa, 0.5);
        assert_eq!(l.beta_f, 4.0);
        assert_eq!(l.c_h, 0.0);
        assert_eq!(l.m1, 8.0);
        let l = ConstantsLedger::derive(&model(true)).unwrap();
        // h at |k|² = 2 with ‖∇h‖ = 1: ‖h‖ = 1/√2, ‖Ah‖ = √2
        let c_h = 0.5 + 2f64.sqrt() + 0.5f64.sqrt();
        assert!((l.c_h - c_h).abs() < 1e-14);
        assert!((l.beta_z - 4.0 * c_h * c_h).abs() < 1e-12);
        assert!(l.entries.iter().all(|e| e.value.is_finite() && e.value > 0.0 || e.name == "c_h"));
        let identity = model(false).with_calming(CalmingSpec::identity()).unwrap();
        assert!(ConstantsLedger::derive(&identity).is_none());
    }

    #[test]
    fn kappa_sign_matches_a3() {
        for eps in [0.5, 1.0, 1.4, 1.5, 2.0, 4.0] {
            let m = model(false).with_calming(CalmingSpec::new(CalmingVariant::Z1, eps).unwrap()).unwrap();
            let l = ConstantsLedger::derive(&m).unwrap();
            assert_eq!(l.kappa > 0.0, m.validate_assumptions(0.0, 10.0).a3);
        }
    }

    #[test]
    fn export_is_deterministic() {
        let l = ConstantsLedger::derive(&model(true)).unwrap();
        let (a, b) = (export_ledger(&l), export_ledger(&l));
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.markdown, b.markdown);
        assert!(a.markdown.contains("kappa > 0"));
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn monitor_pure_exponential() {
        let l = ConstantsLedger::derive(&model(false)).unwrap();
        let recs: Vec<_> = (0..=100)
            .map(|i| {
                let t = i as f64 * 0.1;
                rec(t, 2.0 * (-0.25 * t).exp(), 0.0, 0.0)
            })
            .collect();
        let m = gronwall_monitor(&recs, &l, 1e-12);
        for (r, b) in recs.iter().zip(&m.bound) {
            assert!((b - 4.0 * (-0.5 * r.t).exp()).abs() < 1e-12);
        }
        assert!(m.passed);
        assert!(m.slack.iter().all(|s| s.abs() < 1e-12));
        // zero data: 0 ≤ 0
        let zero: Vec<_> = (0..5).map(|i| rec(i as f64, 0.0, 0.0, 0.0)).collect();
        let m = gronwall_monitor(&zero, &l, 0.0);
        assert!(m.passed && m.bound.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn monitor_plateau_for_constant_forcing() {
        let mut p = model(false).params();
        p.forcing = ForcingSpec::constant(abc_profile(&p.grid, 0.5));
        let l = ConstantsLedger::derive(&Model::new(p).unwrap()).unwrap();
        let recs: Vec<_> = (0..=4000).map(|i| rec(i as f64 * 0.01, 0.0, 0.5, 0.0)).collect();
        let m = gronwall_monitor(&recs, &l, 0.0);
        let plateau = l.beta_f * 0.25 / l.kappa;
        assert!((m.bound.last().unwrap() - plateau).abs() / plateau < 1e-5);
        // violations are counted beyond the tolerance only
        let mut bad = recs.clone();
        bad[10].norm_grad_v = 10.0;
        assert!(!gronwall_monitor(&bad, &l, 0.0).passed);
        assert!(gronwall_monitor(&bad, &l, 200.0).passed);
    }

    #[test]
    fn csv_round_trip() {
        let r = EnergyRecord {
            tails: vec![0.25, 1e-17],
            ..rec(0.1, 1.0 / 3.0, 2.0, -0.7)
        };
        let row = r.csv_row();
        let refs: Vec<&str> = row.iter().map(|s| s.as_str()).collect();
        assert_eq!(EnergyRecord::from_csv_row(&refs, 2), Some(r));
        assert_eq!(csv_header(&[3, 12]).last().unwrap(), "tail_12");
    }
}
