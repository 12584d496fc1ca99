//! Norm-transition statistics from trajectories: `P_n`, `Q_n`, the boundary
//! fraction `p_n`, and the index fit `n·ln(P_n/Q_n)`.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::alpha::AlphaField;
use crate::ctmc::{self, CtmcOptions};
use crate::error::{Error, Result};
use crate::rng;
use crate::walk::{self, Trajectory, WalkState};

/// Minimum pooled visits for a norm to enter an estimate.
pub const MIN_VISITS: u64 = 1_000;
/// Windows ending below this norm carry a caveat.
pub const SHORT_WINDOW: u64 = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NormCounts {
    pub up: u64,
    pub down: u64,
    /// Departures from a state with `I = 0`.
    pub boundary: u64,
}

impl NormCounts {
    pub fn visits(&self) -> u64 {
        self.up + self.down
    }
}

/// Streaming per-norm counters; merging is exact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormStats {
    counts: Vec<NormCounts>,
}

impl NormStats {
    #[inline]
    pub fn observe(&mut self, from: WalkState, to: WalkState) {
        let n = from.norm() as usize;
        if n >= self.counts.len() {
            self.counts.resize(n + 1, NormCounts::default());
        }
        let c = &mut self.counts[n];
        if to.norm() > from.norm() {
            c.up += 1;
        } else {
            c.down += 1;
        }
        if from.i == 0 {
            c.boundary += 1;
        }
    }

    pub fn from_trajectory(t: &Trajectory) -> Self {
        let mut s = NormStats::default();
        for w in t.states.windows(2) {
            s.observe(w[0], w[1]);
        }
        s
    }

    pub fn from_trajectories(ts: &[Trajectory]) -> Self {
        let mut s = NormStats::default();
        for t in ts {
            s.merge(&NormStats::from_trajectory(t));
        }
        s
    }

    pub fn merge(&mut self, other: &NormStats) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), NormCounts::default());
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.up += b.up;
            a.down += b.down;
            a.boundary += b.boundary;
        }
    }

    pub fn get(&self, n: u64) -> NormCounts {
        self.counts.get(n as usize).copied().unwrap_or_default()
    }

    pub fn max_norm(&self) -> u64 {
        self.counts.len().saturating_sub(1) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.counts.iter().map(NormCounts::visits).sum()
    }
}

/// Walk replicas from the origin; replica `r` uses a seed split from `seed`.
pub fn walk_stats(field: &AlphaField, steps: u64, seed: u64, replicas: u64) -> Result<NormStats> {
    let parts: Vec<Result<NormStats>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = NormStats::default();
            walk::simulate_with(field, WalkState::ORIGIN, steps, rng::split_seed(seed, r), |a, b| s.observe(a, b))?;
            Ok(s)
        })
        .collect();
    let mut out = NormStats::default();
    for p in parts {
        out.merge(&p?);
    }
    Ok(out)
}

/// Jump-chain statistics of continuous-time replicas with the given horizon.
pub fn ctmc_stats(field: &AlphaField, horizon: f64, seed: u64, replicas: u64) -> Result<NormStats> {
    let mut opts = CtmcOptions::new(horizon);
    opts.batches = 1;
    let parts: Vec<Result<NormStats>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut s = NormStats::default();
            ctmc::simulate_ctmc_with(field, &opts, &mut rng::replica(seed, r), |a, b| {
                s.observe(a.folded(), b.folded())
            })?;
            Ok(s)
        })
        .collect();
    let mut out = NormStats::default();
    for p in parts {
        out.merge(&p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    pub visits: u64,
    #[serde(rename = "P_n")]
    pub p: f64,
    #[serde(rename = "Q_n")]
    pub q: f64,
    /// `n·ln(P_n/Q_n)`.
    pub n_log_ratio: f64,
    pub n_log_ratio_stderr: f64,
    /// `(P_n/Q_n)^n`.
    pub ratio_pow_n: f64,
    /// Delta-method standard error of `ratio_pow_n`.
    pub stderr: f64,
    pub p_boundary: f64,
    pub p_boundary_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexEstimate {
    pub per_n: BTreeMap<u64, NormEstimate>,
    /// Inverse-variance weighted mean of `n·ln(P_n/Q_n)` over the window.
    pub psi_hat: f64,
    pub psi_stderr: f64,
    pub n_range: (u64, u64),
    pub caveat: Option<String>,
}

fn norm_estimate(n: u64, c: NormCounts) -> NormEstimate {
    let v = c.visits() as f64;
    let p = c.up as f64 / v;
    let q = c.down as f64 / v;
    let nf = n as f64;
    let lr = nf * (p.ln() - q.ln());
    let se = nf / (v * p * q).sqrt();
    let pow = lr.exp();
    let pb = c.boundary as f64 / v;
    NormEstimate {
        visits: c.visits(),
        p,
        q,
        n_log_ratio: lr,
        n_log_ratio_stderr: se,
        ratio_pow_n: pow,
        stderr: pow * se,
        p_boundary: pb,
        p_boundary_stderr: (pb * (1.0 - pb) / v).sqrt(),
    }
}

/// Longest run of consecutive norms `n >= 1` with at least `min_visits` visits
/// and both directions observed.
pub fn adaptive_window(stats: &NormStats, min_visits: u64) -> Option<(u64, u64)> {
    let ok = |n: u64| {
        let c = stats.get(n);
        c.visits() >= min_visits && c.up > 0 && c.down > 0
    };
    let mut best: Option<(u64, u64)> = None;
    let mut start = None;
    for n in 1..=stats.max_norm() + 1 {
        match (ok(n) && n <= stats.max_norm(), start) {
            (true, None) => start = Some(n),
            (false, Some(s)) => {
                let cand = (s, n - 1);
                if best.is_none_or(|b| cand.1 - cand.0 > b.1 - b.0) {
                    best = Some(cand);
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

pub fn index_from_stats(stats: &NormStats, min_visits: u64) -> Result<IndexEstimate> {
    let (lo, hi) = adaptive_window(stats, min_visits).ok_or_else(|| {
        Error::Insufficient(format!("no norm has {min_visits} visits with both directions observed"))
    })?;
    let mut per_n = BTreeMap::new();
    let (mut sw, mut swx) = (0.0, 0.0);
    for n in lo..=hi {
        let e = norm_estimate(n, stats.get(n));
        let w = 1.0 / (e.n_log_ratio_stderr * e.n_log_ratio_stderr);
        sw += w;
        swx += w * e.n_log_ratio;
        per_n.insert(n, e);
    }
    let caveat = (hi < SHORT_WINDOW).then(|| {
        format!("window ends at n={hi}, below {SHORT_WINDOW}; the n -> infinity limit is not resolved")
    });
    Ok(IndexEstimate { per_n, psi_hat: swx / sw, psi_stderr: sw.sqrt().recip(), n_range: (lo, hi), caveat })
}

pub fn estimate_transition_ratios(trajs: &[Trajectory]) -> Result<IndexEstimate> {
    index_from_stats(&NormStats::from_trajectories(trajs), MIN_VISITS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEstimate {
    pub p_n: f64,
    pub stderr: f64,
    pub n_p_n: f64,
    /// Empirical `P_n/Q_n`, to set against `1 + p_n`.
    pub ratio: f64,
    pub visits: u64,
}

pub fn boundary_from_stats(stats: &NormStats, min_visits: u64) -> Result<BTreeMap<u64, BoundaryEstimate>> {
    let mut out = BTreeMap::new();
    for n in 1..=stats.max_norm() {
        let c = stats.get(n);
        if c.visits() < min_visits {
            continue;
        }
        let v = c.visits() as f64;
        let p = c.boundary as f64 / v;
        out.insert(
            n,
            BoundaryEstimate {
                p_n: p,
                stderr: (p * (1.0 - p) / v).sqrt(),
                n_p_n: n as f64 * p,
                ratio: c.up as f64 / c.down as f64,
                visits: c.visits(),
            },
        );
    }
    if out.is_empty() {
        return Err(Error::Insufficient(format!("no norm has {min_visits} visits")));
    }
    Ok(out)
}

pub fn estimate_boundary_probability(trajs: &[Trajectory]) -> Result<BTreeMap<u64, BoundaryEstimate>> {
    boundary_from_stats(&NormStats::from_trajectories(trajs), MIN_VISITS)
}

/// The fitted index set against both readings: `1 + ln κ` (boundary-inclusive) and `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexReadings {
    pub psi_hat: f64,
    pub psi_stderr: f64,
    pub boundary_inclusive: f64,
    pub literal: f64,
    pub z_boundary_inclusive: f64,
    pub z_literal: f64,
}

pub fn index_readings(est: &IndexEstimate, kappa: f64) -> IndexReadings {
    let b = 1.0 + kappa.ln();
    IndexReadings {
        psi_hat: est.psi_hat,
        psi_stderr: est.psi_stderr,
        boundary_inclusive: b,
        literal: kappa,
        z_boundary_inclusive: (est.psi_hat - b) / est.psi_stderr,
        z_literal: (est.psi_hat - kappa) / est.psi_stderr,
    }
}

/// CSV with columns `n,P_n,Q_n,ratio_pow_n,p_n,stderr`.
pub fn write_index_csv<W: Write>(est: &IndexEstimate, fmt: impl Fn(f64) -> String, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "P_n", "Q_n", "ratio_pow_n", "p_n", "stderr"])?;
    for (n, e) in &est.per_n {
        out.write_record([n.to_string(), fmt(e.p), fmt(e.q), fmt(e.ratio_pow_n), fmt(e.p_boundary), fmt(e.stderr)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::{make_constant_field, theta};

    #[test]
    fn one_step_is_insufficient() {
        let t = walk::simulate(&theta(), WalkState::START, 1, 1).unwrap();
        assert!(matches!(estimate_transition_ratios(&[t]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn probabilities_complement_and_log_domain_matches() {
        let s = walk_stats(&theta(), 200_000, 3, 4).unwrap();
        let e = index_from_stats(&s, MIN_VISITS).unwrap();
        for (n, v) in &e.per_n {
            assert_eq!(v.p + v.q, 1.0);
            let direct = (v.p / v.q).powi(*n as i32);
            assert!((v.ratio_pow_n - direct).abs() <= 1e-10 * direct);
        }
    }

    #[test]
    fn pooling_equals_merged_counts() {
        let f = make_constant_field(-0.1, 1.0).unwrap();
        let a = walk::simulate(&f, WalkState::ORIGIN, 50_000, 1).unwrap();
        let b = walk::simulate(&f, WalkState::ORIGIN, 50_000, 2).unwrap();
        let pooled = index_from_stats(&NormStats::from_trajectories(&[a.clone(), b.clone()]), 50).unwrap();
        let mut m = NormStats::from_trajectory(&a);
        m.merge(&NormStats::from_trajectory(&b));
        assert_eq!(pooled, index_from_stats(&m, 50).unwrap());
        let n = pooled.n_range.0;
        let (ca, cb) = (NormStats::from_trajectory(&a).get(n), NormStats::from_trajectory(&b).get(n));
        let weighted = (ca.up + cb.up) as f64 / (ca.visits() + cb.visits()) as f64;
        assert_eq!(pooled.per_n[&n].p, weighted);
    }

    #[test]
    fn interior_only_paths_have_zero_boundary_fraction() {
        let mut s = NormStats::default();
        for _ in 0..MIN_VISITS {
            s.observe(WalkState { i: 2, j: 5 }, WalkState { i: 2, j: 6 });
            s.observe(WalkState { i: 2, j: 5 }, WalkState { i: 1, j: 5 });
        }
        let b = boundary_from_stats(&s, MIN_VISITS).unwrap();
        assert_eq!((b[&7].p_n, b[&7].stderr), (0.0, 0.0));
    }

    #[test]
    fn walk_and_jump_chain_agree_for_theta() {
        let w = walk_stats(&theta(), 1_000_000, 8, 2).unwrap();
        let c = ctmc_stats(&theta(), 500_000.0, 8, 1).unwrap();
        for n in 1..=5 {
            let (a, b) = (norm_estimate(n, w.get(n)), norm_estimate(n, c.get(n)));
            let se = (a.p * a.q / a.visits as f64 + b.p * b.q / b.visits as f64).sqrt();
            assert!((a.p - b.p).abs() < 4.0 * se, "n={n}: {} vs {}", a.p, b.p);
        }
    }

    #[test]
    fn window_skips_sparse_norms() {
        let mut s = NormStats::default();
        for n in [1u64, 2, 3, 5, 6, 7, 8] {
            for _ in 0..10 {
                s.observe(WalkState { i: 0, j: n }, WalkState { i: 0, j: n + 1 });
                s.observe(WalkState { i: 0, j: n }, WalkState { i: 0, j: n - 1 });
            }
        }
        assert_eq!(adaptive_window(&s, 20), Some((5, 8)));
    }
}
