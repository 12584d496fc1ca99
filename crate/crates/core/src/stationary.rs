//! Steady-state ratios `p(a,(i,j)) = lim P_τ(a,(i,j)) / P_τ(a,0)` on a truncated wedge.
//!
//! States are ranked by `n = i + j`; rank `n` holds `(0,n), (1,n-1), …` up to the
//! diagonal. The solver runs Gauss–Seidel sweeps over the nine case equations,
//! each followed by a rank-aggregation rescaling that enforces the flux balance
//! between neighbouring ranks.

use std::io::Write;

use serde::Serialize;

use crate::alpha::{AlphaField, DiagonalLimits};
use crate::error::{Error, Result};
use crate::walk::{step_distribution, WalkState};

/// Number of states of rank `n`.
pub fn rank_len(n: u64) -> usize {
    1 + (n / 2) as usize
}

/// Offset of rank `n` in the flat state vector.
pub fn rank_offset(n: u64) -> usize {
    // Σ_{m<n} (1 + ⌊m/2⌋)
    let n = n as usize;
    n + (n / 2) * (n / 2) - if n.is_multiple_of(2) { n / 2 } else { 0 }
}

pub fn state_count(rank_max: u64) -> usize {
    rank_offset(rank_max + 1)
}

#[inline]
pub fn index_of(i: u64, j: u64) -> usize {
    rank_offset(i + j) + i as usize
}

/// Multiplier taking `p` to the flattened measure `q`.
pub fn q_factor(i: u64, j: u64) -> f64 {
    if i == 0 && j == 0 {
        8.0
    } else if i == 0 || i == j {
        2.0
    } else {
        1.0
    }
}

/// Which of the nine case equations a state obeys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Case {
    /// `i > 1`, `j > i + 1`.
    Interior,
    /// `i > 1`, `j = i + 1`.
    NearDiagonal,
    /// `i = 1`, `j > 2`.
    NextToAxis,
    /// `(1,2)`.
    OneTwo,
    /// `i = j >= 2`.
    Diagonal,
    /// `(1,1)`.
    OneOne,
    /// `(0,n)`, `n >= 2`.
    Axis,
    /// `(0,1)`.
    ZeroOne,
    Origin,
}

pub fn case_of(i: u64, j: u64) -> Case {
    match (i, j) {
        (0, 0) => Case::Origin,
        (0, 1) => Case::ZeroOne,
        (0, _) => Case::Axis,
        (1, 1) => Case::OneOne,
        (1, 2) => Case::OneTwo,
        (1, _) => Case::NextToAxis,
        _ if i == j => Case::Diagonal,
        _ if j == i + 1 => Case::NearDiagonal,
        _ => Case::Interior,
    }
}

/// Right-hand side of the case equation at `(i,j)` as `(neighbour, coefficient)` terms:
/// `p(i,j) = Σ coefficient · p(neighbour)`.
pub fn case_terms(field: &AlphaField, i: u64, j: u64) -> Result<Vec<(WalkState, f64)>> {
    let n = (i + j) as f64;
    let a = |x: u64, y: u64| field.evaluate(x, y);
    let s = |x: u64, y: u64| WalkState { i: x, j: y };
    Ok(match case_of(i, j) {
        Case::Interior => vec![
            (s(i - 1, j), 0.25 * (1.0 - 4.0 * a(i - 1, j)? / (n - 1.0))),
            (s(i, j - 1), 0.25 * (1.0 + 4.0 * a(i, j - 1)? / (n - 1.0))),
            (s(i + 1, j), 0.25 * (1.0 + 4.0 * a(i + 1, j)? / (n + 1.0))),
            (s(i, j + 1), 0.25 * (1.0 - 4.0 * a(i, j + 1)? / (n + 1.0))),
        ],
        Case::NearDiagonal => vec![
            (s(i - 1, j), 0.25 * (1.0 - 4.0 * a(i - 1, j)? / (n - 1.0))),
            (s(i, j - 1), 0.5),
            (s(i + 1, j), 0.5),
            (s(i, j + 1), 0.25 * (1.0 - 4.0 * a(i, j + 1)? / (n + 1.0))),
        ],
        Case::NextToAxis => vec![
            (s(0, j), 0.5),
            (s(1, j - 1), 0.25 * (1.0 + 4.0 * a(1, j - 1)? / (n - 1.0))),
            (s(2, j), 0.25 * (1.0 + 4.0 * a(2, j)? / (n + 1.0))),
            (s(1, j + 1), 0.25 * (1.0 - 4.0 * a(1, j + 1)? / (n + 1.0))),
        ],
        // at rank 3 the general 4α/(n+1) scaling reduces to α
        Case::OneTwo => vec![
            (s(0, 2), 0.5),
            (s(1, 1), 0.5),
            (s(2, 2), 0.5),
            (s(1, 3), 0.25 * (1.0 - a(1, 3)?)),
        ],
        Case::Diagonal => vec![
            (s(i - 1, i), 0.25 * (1.0 - 4.0 * a(i - 1, i)? / (n - 1.0))),
            (s(i, i + 1), 0.25 * (1.0 - 4.0 * a(i, i + 1)? / (n + 1.0))),
        ],
        Case::OneOne => vec![(s(0, 1), 0.5), (s(1, 2), 0.25 * (1.0 - 4.0 * a(1, 2)? / 3.0))],
        Case::Axis => vec![
            (s(0, j - 1), 0.25),
            (s(0, j + 1), 0.25),
            (s(1, j), 0.25 * (1.0 + 4.0 * a(1, j)? / (n + 1.0))),
        ],
        // the origin always steps to (0,1): its inflow coefficient is 4 · 1/4
        Case::ZeroOne => vec![(s(0, 0), 1.0), (s(1, 1), 0.5), (s(0, 2), 0.25)],
        Case::Origin => vec![(s(0, 1), 0.25)],
    })
}

/// How the equations at the top rank treat references to rank `rank_max + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Closure {
    /// Up-moves out of the top rank are suppressed (the walk holds instead).
    /// The truncated system is then itself a Markov chain.
    Reflecting,
    /// Values one rank beyond the top are extrapolated from their top-rank
    /// neighbour with the first-order adjacent-rank factor built from `α*`.
    Extrapolated,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub rank_max: u64,
    pub tol: f64,
    pub max_iters: usize,
    pub closure: Closure,
    /// Rank-aggregation rescaling after each sweep.
    pub accelerate: bool,
}

impl SolveOptions {
    pub fn new(rank_max: u64, tol: f64, max_iters: usize) -> Self {
        SolveOptions { rank_max, tol, max_iters, closure: Closure::Reflecting, accelerate: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioTable {
    pub rank_max: u64,
    pub p_values: Vec<f64>,
    pub q_values: Vec<f64>,
    pub residual_at_state: Vec<f64>,
    pub residual: f64,
    pub sweep_change: f64,
    pub iterations: usize,
    pub converged: bool,
    pub closure: Closure,
}

impl RatioTable {
    pub fn p(&self, i: u64, j: u64) -> f64 {
        assert!(i <= j && i + j <= self.rank_max, "({i},{j}) outside table");
        self.p_values[index_of(i, j)]
    }

    pub fn q(&self, i: u64, j: u64) -> f64 {
        assert!(i <= j && i + j <= self.rank_max, "({i},{j}) outside table");
        self.q_values[index_of(i, j)]
    }

    pub fn get(&self, s: WalkState) -> Option<(f64, f64)> {
        (s.i <= s.j && s.norm() <= self.rank_max).then(|| (self.p(s.i, s.j), self.q(s.i, s.j)))
    }

    pub fn states(&self) -> impl Iterator<Item = WalkState> + '_ {
        (0..=self.rank_max).flat_map(|n| (0..=n / 2).map(move |i| WalkState { i, j: n - i }))
    }
}

struct Row {
    terms: Vec<(usize, f64)>,
    self_coef: f64,
}

fn build_rows(field: &AlphaField, opts: &SolveOptions, limits: Option<&DiagonalLimits>) -> Result<Vec<Row>> {
    let r = opts.rank_max;
    let mut rows = Vec::with_capacity(state_count(r));
    for n in 0..=r {
        for i in 0..=n / 2 {
            let j = n - i;
            let mut terms = Vec::with_capacity(4);
            let mut self_coef = 0.0;
            for (u, c) in case_terms(field, i, j)? {
                if u.norm() <= r {
                    terms.push((index_of(u.i, u.j), c));
                    continue;
                }
                match opts.closure {
                    Closure::Reflecting => {}
                    Closure::Extrapolated => {
                        let lim = limits.expect("limits required for extrapolated closure");
                        let k = n as f64 / 2.0;
                        let d = j - i;
                        let fac = if u == (WalkState { i, j: j + 1 }) {
                            1.0 + 2.0 * (lim.star(d) + lim.star(d + 1)) / k
                        } else {
                            1.0 / (1.0 + 2.0 * (lim.star(d - 1) + lim.star(d)) / k)
                        };
                        self_coef += c * fac * q_factor(i, j) / q_factor(u.i, u.j);
                    }
                }
            }
            if n == r && opts.closure == Closure::Reflecting {
                self_coef = step_distribution(field, WalkState { i, j })?.up();
            }
            rows.push(Row { terms, self_coef });
        }
    }
    Ok(rows)
}

fn row_value(row: &Row, p: &[f64], own: f64) -> f64 {
    row.terms.iter().map(|&(k, c)| c * p[k]).sum::<f64>() + row.self_coef * own
}

/// Rescales each rank so that probability flux across every rank cut balances.
fn rebalance_ranks(p: &mut [f64], up: &[f64], down: &[f64], rank_max: u64) {
    // rank n is final when rank n+1 is scaled, so the sweep runs outward
    for n in 0..rank_max {
        let (a, b, c) = (rank_offset(n), rank_offset(n + 1), rank_offset(n + 2));
        let flux_up: f64 = (a..b).map(|k| p[k] * up[k]).sum();
        let flux_down: f64 = (b..c).map(|k| p[k] * down[k]).sum();
        if !(flux_down > 0.0 && flux_up > 0.0) {
            return;
        }
        let f = flux_up / flux_down;
        for v in &mut p[b..c] {
            *v *= f;
        }
    }
}

/// Banded elimination without pivoting for the extrapolated closure, whose
/// system is not a Markov chain and on which plain sweeps need not contract.
fn solve_banded(rows: &[Row]) -> Result<Vec<f64>> {
    let nrows = rows.len();
    let mut bw = 0usize;
    for (k, row) in rows.iter().enumerate() {
        for &(m, _) in &row.terms {
            bw = bw.max(k.abs_diff(m));
        }
    }
    let width = 2 * bw + 1;
    // a[k][bw + (m - k)] holds the coefficient of p_m in equation k
    let mut a = vec![0.0; nrows * width];
    let mut rhs = vec![0.0; nrows];
    let at = |k: usize, m: usize| k * width + bw + m - k;
    a[at(0, 0)] = 1.0;
    rhs[0] = 1.0;
    for (k, row) in rows.iter().enumerate().skip(1) {
        a[at(k, k)] += 1.0 - row.self_coef;
        for &(m, c) in &row.terms {
            a[at(k, m)] -= c;
        }
    }
    for piv in 0..nrows {
        let d = a[at(piv, piv)];
        if !(d.abs() > 1e-300) {
            return Err(Error::Domain(format!("zero pivot at state index {piv}")));
        }
        for k in piv + 1..(piv + bw + 1).min(nrows) {
            let f = a[at(k, piv)] / d;
            if f == 0.0 {
                continue;
            }
            for m in piv..(piv + bw + 1).min(nrows) {
                a[at(k, m)] -= f * a[at(piv, m)];
            }
            rhs[k] -= f * rhs[piv];
        }
    }
    let mut x = vec![0.0; nrows];
    for k in (0..nrows).rev() {
        let mut v = rhs[k];
        for m in k + 1..(k + bw + 1).min(nrows) {
            v -= a[at(k, m)] * x[m];
        }
        x[k] = v / a[at(k, k)];
    }
    Ok(x)
}

pub fn solve_ratios(field: &AlphaField, opts: &SolveOptions, limits: Option<&DiagonalLimits>) -> Result<RatioTable> {
    if opts.rank_max < 6 {
        return Err(Error::InvalidArgument("rank_max must be at least 6".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if opts.closure == Closure::Extrapolated && limits.is_none() {
        return Err(Error::InvalidArgument("extrapolated closure needs diagonal limits".into()));
    }
    let r = opts.rank_max;
    let rows = build_rows(field, opts, limits)?;
    let total = rows.len();
    let mut up = vec![0.0; total];
    let mut down = vec![0.0; total];
    for n in 0..=r {
        for i in 0..=n / 2 {
            let d = step_distribution(field, WalkState { i, j: n - i })?;
            up[index_of(i, n - i)] = d.up();
            down[index_of(i, n - i)] = 1.0 - d.up();
        }
    }
    let accelerate = opts.accelerate && opts.closure == Closure::Reflecting;

    // start from the θ solution
    let mut p: Vec<f64> = (0..=r)
        .flat_map(|n| (0..=n / 2).map(move |i| 8.0 / q_factor(i, n - i)))
        .collect();
    let mut prev = p.clone();
    let mut best = f64::INFINITY;
    let mut last = f64::INFINITY;
    let mut growth = 0;
    let mut residual = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut iterations = 0;

    if opts.closure == Closure::Extrapolated {
        p = solve_banded(&rows)?;
        iterations = 1;
        change = 0.0;
        residual = (0..total).map(|k| (p[k] - row_value(&rows[k], &p, p[k])).abs()).fold(0.0, f64::max);
    }
    while opts.closure == Closure::Reflecting && iterations < opts.max_iters {
        iterations += 1;
        prev.copy_from_slice(&p);
        for n in 1..=r {
            let base = rank_offset(n);
            let len = rank_len(n);
            // positions from the axis inward, marginal element last
            for i in (1..len).chain(std::iter::once(0)) {
                let k = base + i;
                let row = &rows[k];
                let inflow: f64 = row.terms.iter().map(|&(m, c)| c * p[m]).sum();
                p[k] = inflow / (1.0 - row.self_coef);
            }
        }
        if accelerate {
            rebalance_ranks(&mut p, &up, &down, r);
        }
        change = p.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residual = (0..total).map(|k| (p[k] - row_value(&rows[k], &p, p[k])).abs()).fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(Error::Divergence { iterations, residual });
        }
        if residual <= opts.tol && change <= opts.tol {
            break;
        }
        growth = if residual > last { growth + 1 } else { 0 };
        best = best.min(residual);
        last = residual;
        if growth >= 3 && residual > 10.0 * best {
            return Err(Error::Divergence { iterations, residual });
        }
    }
    let converged = residual <= opts.tol && change <= opts.tol;
    let residual_at_state: Vec<f64> = (0..total).map(|k| (p[k] - row_value(&rows[k], &p, p[k])).abs()).collect();
    if let Some(k) = p.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("non-positive ratio at state index {k}")));
    }
    let q_values = (0..=r)
        .flat_map(|n| (0..=n / 2).map(move |i| (i, n - i)))
        .zip(&p)
        .map(|((i, j), v)| v * q_factor(i, j))
        .collect();
    Ok(RatioTable {
        rank_max: r,
        p_values: p,
        q_values,
        residual_at_state,
        residual,
        sweep_change: change,
        iterations,
        converged,
        closure: opts.closure,
    })
}

/// Per-rank sums of `q`.
pub fn rank_sums(table: &RatioTable) -> Vec<(u64, f64)> {
    (0..=table.rank_max)
        .map(|n| (n, (0..=n / 2).map(|i| table.q(i, n - i)).sum()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    pub max: f64,
    /// The `l` at which the maximum occurs.
    pub at_l: u64,
    /// `max · k²`.
    pub scaled: f64,
}

/// Maximum deviations of the first-order adjacent-state relations at scale `k`.
///
/// With `q` the flattened measure:
/// * `cross_rank_even`: `q(k-l,k+l) / q(k-l+1,k+l)` against `1 + 2(α*_{2l-1} + α*_{2l})/k`, `1 <= l <= k-1`
/// * `cross_rank_odd`: `q(k-l+1,k+l) / q(k-l+1,k+l-1)` against `1 + 2(α*_{2l-2} + α*_{2l-1})/k`, `2 <= l <= k`
/// * `within_rank_even`: `q(k-l,k+l) / q(k-l+1,k+l-1)` against `1 + (2α*_{2l-2} + 4α*_{2l-1} + 2α*_{2l})/k`, `2 <= l <= k-1`
/// * `within_rank_odd`: `q(k-l,k+l+1) / q(k-l+1,k+l)` against `1 + (2α*_{2l-1} + 4α*_{2l} + 2α*_{2l+1})/k`, `1 <= l <= k-1`
/// * `axis_even`, `axis_odd`: `|q(0,2k) - q(1,2k-1)|` and `|q(0,2k+1) - q(1,2k)|`
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjacentReport {
    pub k: u64,
    pub cross_rank_even: Deviation,
    pub cross_rank_odd: Deviation,
    pub within_rank_even: Deviation,
    pub within_rank_odd: Deviation,
    pub axis_even: f64,
    pub axis_odd: f64,
}

fn max_dev(k: u64, ls: impl Iterator<Item = u64>, f: impl Fn(u64) -> f64) -> Deviation {
    let mut d = Deviation { max: 0.0, at_l: 0, scaled: 0.0 };
    for l in ls {
        let v = f(l).abs();
        if v > d.max || d.at_l == 0 {
            d.max = v;
            d.at_l = l;
        }
    }
    d.scaled = d.max * (k * k) as f64;
    d
}

pub fn verify_adjacent_relations(table: &RatioTable, limits: &DiagonalLimits, k: u64) -> Result<AdjacentReport> {
    if k < 3 || 2 * k + 2 > table.rank_max {
        return Err(Error::InvalidArgument(format!(
            "need 3 <= k and 2k + 2 <= rank_max (k={k}, rank_max={})",
            table.rank_max
        )));
    }
    let q = |i: u64, j: u64| table.q(i, j);
    let s = |m: u64| limits.star(m);
    let kf = k as f64;
    Ok(AdjacentReport {
        k,
        cross_rank_even: max_dev(k, 1..k, |l| {
            q(k - l, k + l) / q(k - l + 1, k + l) - (1.0 + 2.0 * (s(2 * l - 1) + s(2 * l)) / kf)
        }),
        cross_rank_odd: max_dev(k, 2..=k, |l| {
            q(k - l + 1, k + l) / q(k - l + 1, k + l - 1) - (1.0 + 2.0 * (s(2 * l - 2) + s(2 * l - 1)) / kf)
        }),
        within_rank_even: max_dev(k, 2..k, |l| {
            q(k - l, k + l) / q(k - l + 1, k + l - 1)
                - (1.0 + (2.0 * s(2 * l - 2) + 4.0 * s(2 * l - 1) + 2.0 * s(2 * l)) / kf)
        }),
        within_rank_odd: max_dev(k, 1..k, |l| {
            q(k - l, k + l + 1) / q(k - l + 1, k + l)
                - (1.0 + (2.0 * s(2 * l - 1) + 4.0 * s(2 * l) + 2.0 * s(2 * l + 1)) / kf)
        }),
        axis_even: (q(0, 2 * k) - q(1, 2 * k - 1)).abs(),
        axis_odd: (q(0, 2 * k + 1) - q(1, 2 * k)).abs(),
    })
}

/// CSV with columns `i,j,rank,p,q,residual_at_state`.
pub fn write_table_csv<W: Write>(table: &RatioTable, fmt: impl Fn(f64) -> String, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "rank", "p", "q", "residual_at_state"])?;
    for s in table.states() {
        let k = index_of(s.i, s.j);
        out.write_record([
            s.i.to_string(),
            s.j.to_string(),
            s.norm().to_string(),
            fmt(table.p_values[k]),
            fmt(table.q_values[k]),
            fmt(table.residual_at_state[k]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::{make_constant_field, theta};
    use crate::walk::{apply, Move};
    use std::collections::HashMap;

    #[test]
    fn indexing_is_a_bijection() {
        let r = 20;
        let mut seen = vec![false; state_count(r)];
        for n in 0..=r {
            assert_eq!(rank_len(n), 1 + (n / 2) as usize);
            for i in 0..=n / 2 {
                let k = index_of(i, n - i);
                assert!(!seen[k]);
                seen[k] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn cases_cover_the_wedge() {
        assert_eq!(case_of(5, 9), Case::Interior);
        assert_eq!(case_of(5, 6), Case::NearDiagonal);
        assert_eq!(case_of(1, 7), Case::NextToAxis);
        assert_eq!(case_of(1, 2), Case::OneTwo);
        assert_eq!(case_of(4, 4), Case::Diagonal);
        assert_eq!(case_of(1, 1), Case::OneOne);
        assert_eq!(case_of(0, 6), Case::Axis);
        assert_eq!(case_of(0, 1), Case::ZeroOne);
        assert_eq!(case_of(0, 0), Case::Origin);
    }

    /// Inflow coefficients recomputed from the walk's own transition law.
    fn walk_inflow(field: &AlphaField, t: WalkState) -> HashMap<WalkState, f64> {
        let mut out = HashMap::new();
        let n = t.norm();
        let lo = n.saturating_sub(1);
        for m in lo..=n + 1 {
            for i in 0..=m / 2 {
                let u = WalkState { i, j: m - i };
                let d = step_distribution(field, u).unwrap();
                for mv in [Move::JUp, Move::JDown, Move::IUp, Move::IDown] {
                    let pr = d.get(mv);
                    if pr > 0.0 && apply(u, mv) == t {
                        *out.entry(u).or_insert(0.0) += pr;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn case_equations_match_walk_balance() {
        let field = crate::alpha::make_user_field("mixed", 0.5, None, |i, j| {
            0.3 * ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.12
        })
        .unwrap();
        for n in 0..30 {
            for i in 0..=n / 2 {
                let t = WalkState { i, j: n - i };
                let mut want = walk_inflow(&field, t);
                for (u, c) in case_terms(&field, i, n - i).unwrap() {
                    let w = want.remove(&u).unwrap_or_else(|| panic!("{t:?}: extra term {u:?}"));
                    assert!((w - c).abs() < 1e-15, "{t:?} <- {u:?}: {c} vs {w}");
                }
                assert!(want.is_empty(), "{t:?}: missing {want:?}");
            }
        }
    }

    #[test]
    fn theta_solution_is_flat() {
        let t = solve_ratios(&theta(), &SolveOptions::new(40, 1e-10, 10_000), None).unwrap();
        assert!(t.converged);
        for s in t.states() {
            assert!((t.q(s.i, s.j) - 8.0).abs() < 1e-8, "{s:?}");
        }
        assert!((t.p(0, 0) - 1.0).abs() < 1e-15);
        assert!((t.p(0, 1) - 4.0).abs() < 1e-8);
    }

    #[test]
    fn theta_rank_sums() {
        let t = solve_ratios(&theta(), &SolveOptions::new(20, 1e-10, 10_000), None).unwrap();
        let sums = rank_sums(&t);
        assert!((sums[2].1 - 16.0).abs() < 1e-8);
        assert!((sums[7].1 - 32.0).abs() < 1e-8);
    }

    #[test]
    fn positive_field_solution() {
        let f = make_constant_field(0.1, 0.25).unwrap();
        let t = solve_ratios(&f, &SolveOptions::new(60, 1e-9, 100_000), None).unwrap();
        assert!(t.converged, "residual {} change {}", t.residual, t.sweep_change);
        assert!(t.p_values.iter().all(|&v| v > 0.0));
        assert!((t.p(0, 1) - 4.0).abs() < 1e-8);
        assert!(t.residual_at_state.iter().all(|&r| r <= t.residual));
    }

    #[test]
    fn plain_sweeps_agree_with_accelerated() {
        let f = make_constant_field(-0.1, 0.25).unwrap();
        let mut o = SolveOptions::new(16, 1e-11, 1_000_000);
        let a = solve_ratios(&f, &o, None).unwrap();
        o.accelerate = false;
        let b = solve_ratios(&f, &o, None).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.iterations < b.iterations);
        for (x, y) in a.p_values.iter().zip(&b.p_values) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn extrapolated_closure_runs() {
        let f = make_constant_field(0.1, 0.25).unwrap();
        let lim = DiagonalLimits::constant(0.1);
        let mut o = SolveOptions::new(30, 1e-9, 1_000_000);
        o.closure = Closure::Extrapolated;
        let t = solve_ratios(&f, &o, Some(&lim)).unwrap();
        assert!(t.p_values.iter().all(|&v| v > 0.0));
        // every equation but the origin's holds; the closure leaks a little mass
        assert!(t.residual_at_state[1..].iter().all(|&r| r < 1e-9));
        assert!(t.residual_at_state[0] > 0.0 && t.residual_at_state[0] < 1e-2);
        let reflecting = solve_ratios(&f, &SolveOptions::new(30, 1e-10, 100_000), None).unwrap();
        assert!((t.p(3, 5) - reflecting.p(3, 5)).abs() < 0.05 * reflecting.p(3, 5));
        assert!(solve_ratios(&f, &o, None).is_err());
    }

    #[test]
    fn rejects_small_rank() {
        assert!(solve_ratios(&theta(), &SolveOptions::new(5, 1e-8, 10), None).is_err());
    }

    #[test]
    fn adjacent_report_on_theta() {
        let t = solve_ratios(&theta(), &SolveOptions::new(40, 1e-12, 10_000), None).unwrap();
        let r = verify_adjacent_relations(&t, &DiagonalLimits::constant(0.0), 15).unwrap();
        for d in [r.cross_rank_even, r.cross_rank_odd, r.within_rank_even, r.within_rank_odd] {
            assert!(d.max < 1e-10);
        }
        assert!(r.axis_even < 1e-10 && r.axis_odd < 1e-10);
        assert!(verify_adjacent_relations(&t, &DiagonalLimits::constant(0.0), 20).is_err());
    }
}
