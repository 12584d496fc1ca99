//! Continuous-time form of the walk: two coupled single-server queues on the
//! full quarter plane, each switching to negative service when empty.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::alpha::AlphaField;
use crate::error::{Error, Result};
use crate::rng;
use crate::stationary::{index_of, state_count};
use crate::walk::{Trajectory, WalkState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkState {
    pub q1: u64,
    pub q2: u64,
    pub clock: f64,
}

impl NetworkState {
    pub const ORIGIN: NetworkState = NetworkState { q1: 0, q2: 0, clock: 0.0 };

    pub fn norm(&self) -> u64 {
        self.q1 + self.q2
    }

    pub fn folded(&self) -> WalkState {
        WalkState::folded(self.q1, self.q2)
    }
}

/// Event rates. A service slot of an empty queue is negative service and adds a customer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateVector {
    pub arrival1: f64,
    pub service1: f64,
    pub arrival2: f64,
    pub service2: f64,
}

impl RateVector {
    pub const UNIT: RateVector = RateVector { arrival1: 1.0, service1: 1.0, arrival2: 1.0, service2: 1.0 };

    pub fn total(&self) -> f64 {
        self.arrival1 + self.service1 + self.arrival2 + self.service2
    }

    /// Same rates with the queue labels exchanged.
    pub fn swapped(&self) -> RateVector {
        RateVector { arrival1: self.arrival2, service1: self.service2, arrival2: self.arrival1, service2: self.service1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Arrival1,
    Service1,
    Arrival2,
    Service2,
}

pub fn rate_vector(field: &AlphaField, s: &NetworkState) -> Result<RateVector> {
    let (q1, q2) = (s.q1, s.q2);
    if q1 == 0 || q2 == 0 || q1 == q2 {
        return Ok(RateVector::UNIT);
    }
    let (i, j) = (q1.min(q2), q1.max(q2));
    let x = 4.0 * field.evaluate(i, j)? / (i + j) as f64;
    // the shorter queue gets the slower arrivals and the faster service
    let r = RateVector { arrival1: 1.0 - x, service1: 1.0 + x, arrival2: 1.0 + x, service2: 1.0 - x };
    Ok(if q1 < q2 { r } else { r.swapped() })
}

pub fn apply_event(s: NetworkState, e: Event) -> NetworkState {
    let mut t = s;
    match e {
        Event::Arrival1 => t.q1 += 1,
        Event::Arrival2 => t.q2 += 1,
        Event::Service1 => t.q1 = if s.q1 == 0 { 1 } else { s.q1 - 1 },
        Event::Service2 => t.q2 = if s.q2 == 0 { 1 } else { s.q2 - 1 },
    }
    t
}

#[inline]
fn pick(r: &RateVector, u: f64) -> Event {
    let mut c = r.arrival1;
    if u < c {
        return Event::Arrival1;
    }
    c += r.service1;
    if u < c {
        return Event::Service1;
    }
    c += r.arrival2;
    if u < c {
        return Event::Arrival2;
    }
    Event::Service2
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmcOptions {
    pub horizon: f64,
    pub warmup_fraction: f64,
    /// States above this rank share one overflow bucket.
    pub max_rank: u64,
    /// Equal-length time batches per run, for standard errors.
    pub batches: u64,
}

impl CtmcOptions {
    pub fn new(horizon: f64) -> Self {
        CtmcOptions { horizon, warmup_fraction: 0.1, max_rank: 200, batches: 20 }
    }

    fn check(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument("warm-up fraction must lie in [0,1)".into()));
        }
        if self.batches == 0 {
            return Err(Error::InvalidArgument("need at least one batch".into()));
        }
        Ok(())
    }
}

#[inline]
fn tri_index(q1: u64, q2: u64) -> usize {
    let n = q1 + q2;
    (n * (n + 1) / 2 + q1) as usize
}

/// Sojourn times after warm-up. Full-plane times per state up to `max_rank`;
/// batch moments are kept on wedge-folded states for ratio standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyHistogram {
    pub max_rank: u64,
    time: Vec<f64>,
    pub overflow_time: f64,
    pub total_time: f64,
    pub events: u64,
    pub batches: u64,
    wedge_sq: Vec<f64>,
    wedge_cross: Vec<f64>,
}

impl OccupancyHistogram {
    pub fn new(max_rank: u64) -> Self {
        let full = tri_index(0, max_rank + 1);
        let wedge = state_count(max_rank);
        OccupancyHistogram {
            max_rank,
            time: vec![0.0; full],
            overflow_time: 0.0,
            total_time: 0.0,
            events: 0,
            batches: 0,
            wedge_sq: vec![0.0; wedge],
            wedge_cross: vec![0.0; wedge],
        }
    }

    /// `None` above `max_rank`.
    pub fn time_in_state(&self, q1: u64, q2: u64) -> Option<f64> {
        (q1 + q2 <= self.max_rank).then(|| self.time[tri_index(q1, q2)])
    }

    pub fn origin_time(&self) -> f64 {
        self.time[0]
    }

    /// Sum of all recorded sojourns, overflow included.
    pub fn recorded_time(&self) -> f64 {
        self.time.iter().sum::<f64>() + self.overflow_time
    }

    /// Time at `(q1,q2)` divided by origin time.
    pub fn ratio_to_origin(&self, q1: u64, q2: u64) -> Result<f64> {
        let t0 = self.origin_time();
        if !(t0 > 0.0) {
            return Err(Error::Starvation("origin never occupied after warm-up".into()));
        }
        self.time_in_state(q1, q2)
            .map(|t| t / t0)
            .ok_or_else(|| Error::InvalidArgument(format!("({q1},{q2}) above histogram rank {}", self.max_rank)))
    }

    /// `Σ_{q1+q2=n} time / origin time` for `n = 0..=max_rank`.
    pub fn rank_ratio_sums(&self) -> Result<Vec<(u64, f64)>> {
        (0..=self.max_rank)
            .map(|n| {
                let s: f64 = (0..=n).map(|a| self.time[tri_index(a, n - a)]).sum();
                let t0 = self.origin_time();
                if t0 > 0.0 {
                    Ok((n, s / t0))
                } else {
                    Err(Error::Starvation("origin never occupied after warm-up".into()))
                }
            })
            .collect()
    }

    pub fn merge(&mut self, other: &OccupancyHistogram) -> Result<()> {
        if other.max_rank != self.max_rank {
            return Err(Error::InvalidArgument("histograms with different rank limits".into()));
        }
        for (a, b) in self.time.iter_mut().zip(&other.time) {
            *a += b;
        }
        for (a, b) in self.wedge_sq.iter_mut().zip(&other.wedge_sq) {
            *a += b;
        }
        for (a, b) in self.wedge_cross.iter_mut().zip(&other.wedge_cross) {
            *a += b;
        }
        self.overflow_time += other.overflow_time;
        self.total_time += other.total_time;
        self.events += other.events;
        self.batches += other.batches;
        Ok(())
    }
}

struct Batch {
    time: Vec<f64>,
    touched: Vec<usize>,
}

impl Batch {
    fn add(&mut self, idx: usize, dt: f64) {
        if self.time[idx] == 0.0 {
            self.touched.push(idx);
        }
        self.time[idx] += dt;
    }

    fn flush(&mut self, h: &mut OccupancyHistogram) {
        let origin = self.time[0];
        for &idx in &self.touched {
            let t = self.time[idx];
            h.wedge_sq[idx] += t * t;
            h.wedge_cross[idx] += t * origin;
            self.time[idx] = 0.0;
        }
        self.touched.clear();
        h.batches += 1;
    }
}

/// One run from the origin, calling `observe(from, to)` on every event.
pub fn simulate_ctmc_with<R: Rng, F: FnMut(&NetworkState, &NetworkState)>(
    field: &AlphaField,
    opts: &CtmcOptions,
    rng: &mut R,
    mut observe: F,
) -> Result<OccupancyHistogram> {
    opts.check()?;
    let mut h = OccupancyHistogram::new(opts.max_rank);
    let mut batch = Batch { time: vec![0.0; state_count(opts.max_rank)], touched: Vec::new() };
    let warm = opts.horizon * opts.warmup_fraction;
    let span = opts.horizon - warm;
    let batch_end = |k: u64| if k + 1 == opts.batches { opts.horizon } else { warm + span * (k + 1) as f64 / opts.batches as f64 };
    let mut k = 0u64;
    let mut next_flush = batch_end(0);
    let mut s = NetworkState::ORIGIN;
    loop {
        let rates = rate_vector(field, &s)?;
        let total = rates.total();
        let e: f64 = rng.sample(Exp1);
        let end = (s.clock + e / total).min(opts.horizon);
        let mut a = s.clock.max(warm);
        while a < end {
            let b = end.min(next_flush);
            let dt = b - a;
            if s.norm() <= opts.max_rank {
                h.time[tri_index(s.q1, s.q2)] += dt;
                let w = s.folded();
                batch.add(index_of(w.i, w.j), dt);
            } else {
                h.overflow_time += dt;
            }
            a = b;
            if b == next_flush && k < opts.batches {
                batch.flush(&mut h);
                k += 1;
                next_flush = if k < opts.batches { batch_end(k) } else { f64::INFINITY };
            }
        }
        if end >= opts.horizon {
            break;
        }
        let u = rng.random::<f64>() * total;
        let mut t = apply_event(s, pick(&rates, u));
        t.clock = end;
        h.events += 1;
        observe(&s, &t);
        s = t;
    }
    while k < opts.batches {
        // horizon reached inside warm-up edge cases
        batch.flush(&mut h);
        k += 1;
    }
    h.total_time = span;
    Ok(h)
}

/// Single run from the origin with default warm-up, overflow rank and batching.
pub fn simulate_ctmc(field: &AlphaField, horizon: f64, seed: u64) -> Result<OccupancyHistogram> {
    simulate_ctmc_with(field, &CtmcOptions::new(horizon), &mut rng::seeded(seed), |_, _| {})
}

/// Independent runs on streams `0..replicas` of `seed`, merged in replica order.
pub fn simulate_replicas(field: &AlphaField, opts: &CtmcOptions, seed: u64, replicas: u64) -> Result<OccupancyHistogram> {
    const CHUNK: u64 = 64;
    const WAVE: u64 = 16;
    let chunks = replicas.div_ceil(CHUNK);
    let mut out = OccupancyHistogram::new(opts.max_rank);
    let mut c0 = 0;
    while c0 < chunks {
        let c1 = (c0 + WAVE).min(chunks);
        let parts: Vec<Result<OccupancyHistogram>> = (c0..c1)
            .into_par_iter()
            .map(|c| {
                let mut acc = OccupancyHistogram::new(opts.max_rank);
                for r in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                    let h = simulate_ctmc_with(field, opts, &mut rng::replica(seed, r), |_, _| {})?;
                    acc.merge(&h)?;
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            out.merge(&p?)?;
        }
        c0 = c1;
    }
    Ok(out)
}

/// Wedge-folded jump chain of a run from the origin, `events` transitions long.
pub fn jump_chain(field: &AlphaField, events: u64, seed: u64) -> Result<Trajectory> {
    if events == 0 {
        return Err(Error::InvalidArgument("events must be positive".into()));
    }
    let mut r = rng::seeded(seed);
    let mut states = Vec::with_capacity(events as usize + 1);
    let mut s = NetworkState::ORIGIN;
    states.push(s.folded());
    for _ in 0..events {
        let rates = rate_vector(field, &s)?;
        let u = r.random::<f64>() * rates.total();
        s = apply_event(s, pick(&rates, u));
        states.push(s.folded());
    }
    Ok(Trajectory { seed, states, step_count: events })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEntry {
    /// Pooled time over `(i,j)` and `(j,i)`.
    pub time: f64,
    pub ratio: f64,
    /// Batch delta-method standard error, NaN with fewer than two batches.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyRatios {
    pub entries: BTreeMap<WalkState, RatioEntry>,
    pub origin_time: f64,
    pub overflow_time: f64,
    pub batches: u64,
}

impl OccupancyRatios {
    pub fn get(&self, i: u64, j: u64) -> Option<&RatioEntry> {
        self.entries.get(&WalkState { i, j })
    }
}

/// Empirical `p(a, ·)` on wedge states with positive time.
pub fn occupancy_to_ratio_table(hist: &OccupancyHistogram) -> Result<OccupancyRatios> {
    let y = hist.origin_time();
    if !(y > 0.0) {
        return Err(Error::Starvation(
            "no time at the origin after warm-up; horizon too short or field too transient".into(),
        ));
    }
    let b = hist.batches as f64;
    let syy = hist.wedge_sq[0];
    let mut entries = BTreeMap::new();
    for n in 0..=hist.max_rank {
        for i in 0..=n / 2 {
            let j = n - i;
            let x = hist.time[tri_index(i, j)] + if i != j { hist.time[tri_index(j, i)] } else { 0.0 };
            if x <= 0.0 {
                continue;
            }
            let r = x / y;
            let idx = index_of(i, j);
            let stderr = if hist.batches >= 2 {
                let ss = (hist.wedge_sq[idx] - 2.0 * r * hist.wedge_cross[idx] + r * r * syy).max(0.0);
                (b * ss / (b - 1.0)).sqrt() / y
            } else {
                f64::NAN
            };
            entries.insert(WalkState { i, j }, RatioEntry { time: x, ratio: r, stderr });
        }
    }
    Ok(OccupancyRatios { entries, origin_time: y, overflow_time: hist.overflow_time, batches: hist.batches })
}

/// CSV with columns `i,j,time,ratio_to_origin,stderr`.
pub fn write_ratios_csv<W: Write>(ratios: &OccupancyRatios, fmt: impl Fn(f64) -> String, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "time", "ratio_to_origin", "stderr"])?;
    for (s, e) in &ratios.entries {
        out.write_record([s.i.to_string(), s.j.to_string(), fmt(e.time), fmt(e.ratio), fmt(e.stderr)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::{make_constant_field, theta};

    fn ns(q1: u64, q2: u64) -> NetworkState {
        NetworkState { q1, q2, clock: 0.0 }
    }

    #[test]
    fn rate_regimes() {
        let f = make_constant_field(0.1, 1.0).unwrap();
        let r = rate_vector(&f, &ns(2, 8)).unwrap();
        assert!((r.arrival1 - 0.96).abs() < 1e-15);
        assert!((r.service1 - 1.04).abs() < 1e-15);
        assert!((r.arrival2 - 1.04).abs() < 1e-15);
        assert!((r.service2 - 0.96).abs() < 1e-15);
        assert_eq!(rate_vector(&f, &ns(8, 2)).unwrap(), r.swapped());
        assert_eq!(rate_vector(&f, &ns(3, 3)).unwrap(), RateVector::UNIT);
        assert_eq!(rate_vector(&f, &ns(0, 5)).unwrap(), RateVector::UNIT);
        assert_eq!(rate_vector(&f, &ns(0, 0)).unwrap(), RateVector::UNIT);
        assert_eq!(rate_vector(&theta(), &ns(4, 9)).unwrap(), RateVector::UNIT);
    }

    #[test]
    fn negative_service_adds() {
        assert_eq!(apply_event(ns(0, 5), Event::Service1).q1, 1);
        assert_eq!(apply_event(ns(0, 5), Event::Arrival1).q1, 1);
        assert_eq!(apply_event(ns(2, 5), Event::Service1).q1, 1);
        assert_eq!(apply_event(ns(2, 0), Event::Service2).q2, 1);
    }

    #[test]
    fn times_add_up() {
        let h = simulate_ctmc(&make_constant_field(0.1, 1.0).unwrap(), 500.0, 3).unwrap();
        assert!((h.recorded_time() - h.total_time).abs() < 1e-9 * h.total_time);
        assert!((h.total_time - 450.0).abs() < 1e-12);
        assert_eq!(h.batches, 20);
    }

    #[test]
    fn tiny_horizon_sees_only_origin() {
        let h = simulate_ctmc(&theta(), 1e-9, 1).unwrap();
        let p = occupancy_to_ratio_table(&h).unwrap();
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.get(0, 0).unwrap().ratio, 1.0);
    }

    #[test]
    fn jump_chain_moves_by_one() {
        let t = jump_chain(&make_constant_field(-0.2, 1.0).unwrap(), 10_000, 9).unwrap();
        for w in t.states.windows(2) {
            assert_eq!(w[0].norm().abs_diff(w[1].norm()), 1);
        }
    }

    #[test]
    fn replicas_are_deterministic() {
        let f = theta();
        let mut o = CtmcOptions::new(50.0);
        o.batches = 1;
        let a = simulate_replicas(&f, &o, 11, 100).unwrap();
        let b = simulate_replicas(&f, &o, 11, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batches, 100);
    }

    #[test]
    fn theta_ratios_near_origin() {
        // many short runs: early-time occupation ratios near the origin already follow 1:2:4
        let mut o = CtmcOptions::new(200.0);
        o.batches = 1;
        let h = simulate_replicas(&theta(), &o, 5, 2000).unwrap();
        let p = occupancy_to_ratio_table(&h).unwrap();
        for (s, want) in [((0, 1), 4.0), ((1, 1), 4.0), ((1, 2), 8.0)] {
            let e = p.get(s.0, s.1).unwrap();
            assert!((e.ratio - want).abs() < 4.0 * e.stderr, "{s:?}: {e:?}");
        }
    }
}
