//! The classification constant κ(a) and the recurrence verdict.

use rayon::prelude::*;
use serde::Serialize;

use crate::alpha::{diagonal_limits, AlphaField, DiagonalLimits};
use crate::error::{Error, Result};

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ln(1 + x_i)` for factor `i` of the κ product at scale `k`.
#[inline]
fn log_factor(limits: &DiagonalLimits, k: u64, i: u64) -> Result<f64> {
    let m = 2 * k - 2 * i;
    let x = (2.0 * limits.star(m) + 4.0 * limits.star(m - 1) + 2.0 * limits.star(m - 2)) / k as f64;
    if !(x > -1.0) {
        return Err(Error::Domain(format!(
            "kappa factor {i} at k={k} is not positive (1 + {x}); k too small"
        )));
    }
    Ok(x.ln_1p())
}

/// The factor itself, for direct-product comparisons.
pub fn kappa_factor(limits: &DiagonalLimits, k: u64, i: u64) -> f64 {
    let m = 2 * k - 2 * i;
    1.0 + (2.0 * limits.star(m) + 4.0 * limits.star(m - 1) + 2.0 * limits.star(m - 2)) / k as f64
}

/// `∏_{i=1}^{k-1} (1 + (2α*_{2k-2i} + 4α*_{2k-2i-1} + 2α*_{2k-2i-2})/k)` in log domain.
pub fn kappa_product(limits: &DiagonalLimits, k: u64) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument("kappa_product needs k >= 2".into()));
    }
    let mut s = NeumaierSum::default();
    for i in 1..k {
        s.add(log_factor(limits, k, i)?);
    }
    Ok(s.value().exp())
}

/// `(1/k) Σ_{j=1}^{k-1} ∏_{i=1}^{j} (...)` with prefix products in log domain.
pub fn kappa_cesaro(limits: &DiagonalLimits, k: u64) -> Result<f64> {
    if k < 3 {
        return Err(Error::InvalidArgument("kappa_cesaro needs k >= 3".into()));
    }
    let mut log_prefix = NeumaierSum::default();
    let mut total = NeumaierSum::default();
    for i in 1..k {
        log_prefix.add(log_factor(limits, k, i)?);
        total.add(log_prefix.value().exp());
    }
    Ok(total.value() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KappaMode {
    CesaroAverage,
    ProductLimit,
    ClosedForm,
}

/// Requested evaluation mode; `Auto` picks closed form, then product, then Cesàro.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeRequest {
    Auto,
    Product,
    Cesaro,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Recurrent,
    Transient,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub value: f64,
    pub mode: KappaMode,
    pub k_used: u64,
    pub convergence_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedulePoint {
    pub k: u64,
    pub product: f64,
    pub cesaro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub kappa: KappaEstimate,
    pub verdict: Verdict,
    /// `ln κ`, so a constant field gives `8α`.
    pub psi_index: f64,
    /// The alternate reading `ψ = κ`.
    pub psi_literal: f64,
    /// `e^κ`.
    pub ell: f64,
    /// Richardson limit of the Cesàro form.
    pub cesaro_limit: f64,
    pub decision_margin: f64,
    pub schedule: Vec<SchedulePoint>,
    pub limits_tail_error: f64,
    pub notes: String,
}

pub const DEFAULT_SCHEDULE: [u64; 4] = [1_000, 10_000, 100_000, 1_000_000];
/// Floor of the Marginal band above 1.
pub const MARGIN_FLOOR: f64 = 1e-6;
/// Rounding allowance of the log-domain evaluation when κ sits exactly at 1.
pub const ROUNDING: f64 = 1e-12;
/// Relative refinement gap under which a sequence counts as convergent.
pub const CONVERGED: f64 = 1e-6;

/// Two-point Richardson extrapolation in `1/k`.
pub fn richardson(k1: u64, v1: f64, k2: u64, v2: f64) -> f64 {
    let (a, b) = (k1 as f64, k2 as f64);
    (b * v2 - a * v1) / (b - a)
}

/// Extrapolated value and the gap between the last two refinements.
pub fn extrapolate(points: &[(u64, f64)]) -> (f64, f64) {
    match points.len() {
        0 => (f64::NAN, f64::INFINITY),
        1 => (points[0].1, f64::INFINITY),
        2 => {
            let r = richardson(points[0].0, points[0].1, points[1].0, points[1].1);
            (r, (points[1].1 - points[0].1).abs())
        }
        n => {
            let p = &points[n - 3..];
            let r1 = richardson(p[0].0, p[0].1, p[1].0, p[1].1);
            let r2 = richardson(p[1].0, p[1].1, p[2].0, p[2].1);
            (r2, (r2 - r1).abs())
        }
    }
}

/// Recurrence decision with an uncertainty band of `3·gap`.
pub fn decide(kappa: f64, gap: f64) -> (Verdict, f64) {
    let margin = 3.0 * gap;
    let v = if kappa + margin <= 1.0 + ROUNDING {
        Verdict::Recurrent
    } else if kappa - margin > 1.0 + MARGIN_FLOOR {
        Verdict::Transient
    } else {
        Verdict::Marginal
    };
    (v, margin.max(MARGIN_FLOOR))
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub schedule: Vec<u64>,
    pub mode: ModeRequest,
    pub limits_k_max: u64,
    pub limits_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            mode: ModeRequest::Auto,
            limits_k_max: 64,
            limits_tol: 1e-12,
        }
    }
}

pub fn classify(field: &AlphaField, opts: &ClassifyOptions) -> Result<ClassificationReport> {
    let limits = diagonal_limits(field, opts.limits_k_max, opts.limits_tol)?;
    classify_limits(&limits, opts)
}

pub fn classify_limits(limits: &DiagonalLimits, opts: &ClassifyOptions) -> Result<ClassificationReport> {
    let sched = &opts.schedule;
    if sched.is_empty() || sched.windows(2).any(|w| w[0] >= w[1]) || sched[0] < 3 {
        return Err(Error::InvalidArgument("k schedule must be increasing and start at k >= 3".into()));
    }
    let points = sched
        .par_iter()
        .map(|&k| Ok(SchedulePoint { k, product: kappa_product(limits, k)?, cesaro: kappa_cesaro(limits, k)? }))
        .collect::<Result<Vec<_>>>()?;
    let prod: Vec<(u64, f64)> = points.iter().map(|p| (p.k, p.product)).collect();
    let ces: Vec<(u64, f64)> = points.iter().map(|p| (p.k, p.cesaro)).collect();
    let (p_val, p_gap) = extrapolate(&prod);
    let (c_val, c_gap) = extrapolate(&ces);
    let k_last = *sched.last().unwrap();
    let converged = |v: f64, g: f64| g <= CONVERGED * v.abs().max(1.0);
    let mut notes = Vec::new();

    let kappa = match (opts.mode, limits.constant_value()) {
        (ModeRequest::ClosedForm, None) => {
            return Err(Error::InvalidArgument("closed form exists only for constant fields".into()))
        }
        (ModeRequest::ClosedForm, Some(a)) | (ModeRequest::Auto, Some(a)) => KappaEstimate {
            value: (8.0 * a).exp(),
            mode: KappaMode::ClosedForm,
            k_used: 0,
            convergence_gap: 0.0,
        },
        (ModeRequest::Product, _) => {
            KappaEstimate { value: p_val, mode: KappaMode::ProductLimit, k_used: k_last, convergence_gap: p_gap }
        }
        (ModeRequest::Cesaro, _) => {
            KappaEstimate { value: c_val, mode: KappaMode::CesaroAverage, k_used: k_last, convergence_gap: c_gap }
        }
        (ModeRequest::Auto, None) => {
            if converged(p_val, p_gap) {
                KappaEstimate { value: p_val, mode: KappaMode::ProductLimit, k_used: k_last, convergence_gap: p_gap }
            } else {
                notes.push(format!("product sequence not convergent on schedule (gap {p_gap:e}); Cesaro form used"));
                KappaEstimate { value: c_val, mode: KappaMode::CesaroAverage, k_used: k_last, convergence_gap: c_gap }
            }
        }
    };
    if !(kappa.value > 0.0) || !kappa.value.is_finite() {
        return Err(Error::Domain(format!("kappa estimate {} is not a positive number", kappa.value)));
    }
    let (mut verdict, margin) = decide(kappa.value, kappa.convergence_gap);
    if kappa.mode != KappaMode::ClosedForm && !converged(kappa.value, kappa.convergence_gap) {
        notes.push(format!("no convergence across schedule (gap {:e})", kappa.convergence_gap));
        verdict = Verdict::Marginal;
    }
    if !limits.is_exact() {
        notes.push(format!("diagonal limits extrapolated, tail error {:e}", limits.tail_estimate_error));
    }
    notes.push(
        "index readings differ: psi_index = ln(kappa), psi_literal = kappa, ell = exp(kappa)".to_string(),
    );
    notes.push(format!("Cesaro form limit {c_val} (constant fields tend to (e^(8a)-1)/(8a))"));

    Ok(ClassificationReport {
        psi_index: kappa.value.ln(),
        psi_literal: kappa.value,
        ell: kappa.value.exp(),
        cesaro_limit: c_val,
        decision_margin: margin,
        schedule: points,
        limits_tail_error: limits.tail_estimate_error,
        notes: notes.join("; "),
        verdict,
        kappa,
    })
}
