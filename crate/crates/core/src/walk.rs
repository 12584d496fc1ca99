//! Discrete-time walk in wedge coordinates `(I, J) = (min, max)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alpha::AlphaField;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WalkState {
    pub i: u64,
    pub j: u64,
}

impl WalkState {
    pub fn new(i: u64, j: u64) -> Result<Self> {
        if i > j {
            return Err(Error::OutsideWedge { i, j });
        }
        Ok(WalkState { i, j })
    }

    /// Folds a full quarter-plane point into the wedge.
    pub fn folded(a: u64, b: u64) -> Self {
        WalkState { i: a.min(b), j: a.max(b) }
    }

    pub const ORIGIN: WalkState = WalkState { i: 0, j: 0 };
    /// Default start state.
    pub const START: WalkState = WalkState { i: 0, j: 1 };

    #[inline]
    pub fn norm(&self) -> u64 {
        self.i + self.j
    }

    pub fn is_axis(&self) -> bool {
        self.i == 0 && self.j > 0
    }

    pub fn is_diagonal(&self) -> bool {
        self.i == self.j && self.i > 0
    }

    pub fn is_interior(&self) -> bool {
        self.i > 0 && self.i < self.j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    JUp,
    JDown,
    IUp,
    IDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDistribution {
    pub p_j_up: f64,
    pub p_j_down: f64,
    pub p_i_up: f64,
    pub p_i_down: f64,
}

impl StepDistribution {
    pub fn total(&self) -> f64 {
        self.p_j_up + self.p_j_down + self.p_i_up + self.p_i_down
    }

    /// Probability that the norm goes up.
    pub fn up(&self) -> f64 {
        self.p_j_up + self.p_i_up
    }

    pub fn get(&self, m: Move) -> f64 {
        match m {
            Move::JUp => self.p_j_up,
            Move::JDown => self.p_j_down,
            Move::IUp => self.p_i_up,
            Move::IDown => self.p_i_down,
        }
    }
}

/// Wedge target of move `m` from `s`. Only meaningful where `m` has positive probability.
#[inline]
pub fn apply(s: WalkState, m: Move) -> WalkState {
    match m {
        Move::JUp => WalkState { i: s.i, j: s.j + 1 },
        Move::JDown => WalkState { i: s.i, j: s.j - 1 },
        Move::IUp => WalkState { i: s.i + 1, j: s.j },
        Move::IDown => WalkState { i: s.i - 1, j: s.j },
    }
}

/// Identifies which move led from `a` to `b`, if any.
pub fn classify_move(a: WalkState, b: WalkState) -> Option<Move> {
    [Move::JUp, Move::JDown, Move::IUp, Move::IDown]
        .into_iter()
        .find(|&m| match m {
            Move::JDown if a.j == 0 || a.j <= a.i => false,
            Move::IDown if a.i == 0 => false,
            Move::IUp if a.i >= a.j => false,
            _ => apply(a, m) == b,
        })
}

pub fn step_distribution(field: &AlphaField, s: WalkState) -> Result<StepDistribution> {
    let WalkState { i, j } = s;
    if i > j {
        return Err(Error::OutsideWedge { i, j });
    }
    Ok(if i == 0 && j == 0 {
        StepDistribution { p_j_up: 1.0, p_j_down: 0.0, p_i_up: 0.0, p_i_down: 0.0 }
    } else if i == 0 {
        StepDistribution { p_j_up: 0.25, p_j_down: 0.25, p_i_up: 0.5, p_i_down: 0.0 }
    } else if i == j {
        StepDistribution { p_j_up: 0.5, p_j_down: 0.0, p_i_up: 0.0, p_i_down: 0.5 }
    } else {
        let d = field.evaluate(i, j)? / (i + j) as f64;
        StepDistribution {
            p_j_up: 0.25 + d,
            p_j_down: 0.25 - d,
            p_i_up: 0.25 - d,
            p_i_down: 0.25 + d,
        }
    })
}

/// One transition from `s` given a uniform draw `u` in `[0,1)`.
#[inline]
pub fn step_with(field: &AlphaField, s: WalkState, u: f64) -> Result<WalkState> {
    let WalkState { i, j } = s;
    if i == 0 {
        if j == 0 {
            return Ok(WalkState::START);
        }
        return Ok(if u < 0.25 {
            WalkState { i, j: j + 1 }
        } else if u < 0.5 {
            WalkState { i, j: j - 1 }
        } else {
            WalkState { i: 1, j }
        });
    }
    if i == j {
        return Ok(if u < 0.5 { WalkState { i, j: j + 1 } } else { WalkState { i: i - 1, j } });
    }
    let d = field.evaluate(i, j)? / (i + j) as f64;
    let a = 0.25 + d;
    Ok(if u < a {
        WalkState { i, j: j + 1 }
    } else if u < 0.5 {
        WalkState { i, j: j - 1 }
    } else if u < 0.75 - d {
        WalkState { i: i + 1, j }
    } else {
        WalkState { i: i - 1, j }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub states: Vec<WalkState>,
    pub step_count: u64,
}

/// Runs `steps` transitions, calling `observe(from, to)` for each.
pub fn simulate_with<F: FnMut(WalkState, WalkState)>(
    field: &AlphaField,
    start: WalkState,
    steps: u64,
    seed: u64,
    mut observe: F,
) -> Result<WalkState> {
    if start.i > start.j {
        return Err(Error::OutsideWedge { i: start.i, j: start.j });
    }
    let mut r = rng::seeded(seed);
    let mut s = start;
    for _ in 0..steps {
        let u: f64 = r.random();
        let t = step_with(field, s, u)?;
        observe(s, t);
        s = t;
    }
    Ok(s)
}

pub fn simulate(field: &AlphaField, start: WalkState, steps: u64, seed: u64) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let mut states = Vec::with_capacity(steps as usize + 1);
    states.push(start);
    simulate_with(field, start, steps, seed, |_, t| states.push(t))?;
    Ok(Trajectory { seed, states, step_count: steps })
}

/// Per norm `n`: transitions `n → n+1` and `n → n-1`.
pub fn norm_transition_counts(traj: &Trajectory) -> BTreeMap<u64, (u64, u64)> {
    let mut out: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for w in traj.states.windows(2) {
        let (a, b) = (w[0].norm(), w[1].norm());
        let e = out.entry(a).or_default();
        if b > a {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    out
}

/// CSV with columns `t,I,J,N`, keeping every `stride`-th state.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, stride: usize, w: W) -> Result<()> {
    let stride = stride.max(1);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "I", "J", "N"])?;
    for (t, s) in traj.states.iter().enumerate().step_by(stride) {
        out.write_record([t.to_string(), s.i.to_string(), s.j.to_string(), s.norm().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alpha::{make_constant_field, theta};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn distribution_cases() {
        let d = step_distribution(&theta(), WalkState { i: 3, j: 7 }).unwrap();
        assert_eq!((d.p_j_up, d.p_j_down, d.p_i_up, d.p_i_down), (0.25, 0.25, 0.25, 0.25));
        let f = make_constant_field(0.1, 0.25).unwrap();
        let d = step_distribution(&f, WalkState { i: 3, j: 7 }).unwrap();
        assert!(close(d.p_j_up, 0.26) && close(d.p_j_down, 0.24));
        assert!(close(d.p_i_up, 0.24) && close(d.p_i_down, 0.26));
        let d = step_distribution(&f, WalkState { i: 5, j: 5 }).unwrap();
        assert_eq!((d.p_j_up, d.p_j_down, d.p_i_up, d.p_i_down), (0.5, 0.0, 0.0, 0.5));
        let d = step_distribution(&f, WalkState { i: 0, j: 4 }).unwrap();
        assert_eq!((d.p_j_up, d.p_j_down, d.p_i_up, d.p_i_down), (0.25, 0.25, 0.5, 0.0));
        let d = step_distribution(&f, WalkState::ORIGIN).unwrap();
        assert_eq!(d.p_j_up, 1.0);
        assert_eq!(d.total(), 1.0);
    }

    #[test]
    fn origin_step_is_forced() {
        for seed in 0..20 {
            let t = simulate(&theta(), WalkState::ORIGIN, 1, seed).unwrap();
            assert_eq!(t.states, vec![WalkState::ORIGIN, WalkState { i: 0, j: 1 }]);
        }
    }

    #[test]
    fn step_with_matches_distribution() {
        // walk the unit interval finely and compare masses per target
        let f = make_constant_field(0.2, 0.5).unwrap();
        for s in [WalkState { i: 2, j: 5 }, WalkState { i: 0, j: 3 }, WalkState { i: 4, j: 4 }, WalkState { i: 1, j: 2 }] {
            let d = step_distribution(&f, s).unwrap();
            let n = 100_000;
            let mut mass = std::collections::HashMap::new();
            for k in 0..n {
                let u = (k as f64 + 0.5) / n as f64;
                *mass.entry(step_with(&f, s, u).unwrap()).or_insert(0.0) += 1.0 / n as f64;
            }
            for m in [Move::JUp, Move::JDown, Move::IUp, Move::IDown] {
                let p = d.get(m);
                if p > 0.0 {
                    assert!((mass[&apply(s, m)] - p).abs() < 1e-4, "{s:?} {m:?}");
                }
            }
        }
    }

    #[test]
    fn counts_examples() {
        let t = Trajectory { seed: 0, states: vec![WalkState::ORIGIN, WalkState { i: 0, j: 1 }], step_count: 1 };
        assert_eq!(norm_transition_counts(&t), BTreeMap::from([(0, (1, 0))]));
        let t = Trajectory {
            seed: 0,
            states: vec![WalkState { i: 0, j: 1 }, WalkState { i: 1, j: 1 }, WalkState { i: 1, j: 2 }],
            step_count: 2,
        };
        assert_eq!(norm_transition_counts(&t), BTreeMap::from([(1, (1, 0)), (2, (1, 0))]));
    }

    #[test]
    fn classify_move_inverts_apply() {
        let s = WalkState { i: 2, j: 6 };
        for m in [Move::JUp, Move::JDown, Move::IUp, Move::IDown] {
            assert_eq!(classify_move(s, apply(s, m)), Some(m));
        }
        assert_eq!(classify_move(s, WalkState { i: 4, j: 6 }), None);
    }

    #[test]
    fn constraint_violation_aborts_with_state() {
        let f = crate::alpha::make_user_field("bad at (1,2)", 5.0, None, |i, j| if (i, j) == (1, 2) { 3.0 } else { 0.0 }).unwrap();
        let e = simulate(&f, WalkState { i: 1, j: 2 }, 5, 1).unwrap_err();
        assert!(matches!(e, Error::Constraint { i: 1, j: 2, .. }));
    }

    #[test]
    fn csv_export_is_thinned() {
        let t = simulate(&theta(), WalkState::START, 10, 3).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, 5, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,I,J,N");
        assert_eq!(lines.len(), 1 + 3);
        assert!(lines[1].starts_with("0,0,1,1"));
    }
}
