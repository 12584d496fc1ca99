//! Coefficient fields `α_(i,j)` and their diagonal limits `α*_m`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

pub type UserFn = Arc<dyn Fn(u64, u64) -> f64 + Send + Sync>;

/// How a diagonal table continues past its last listed offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Cycle,
    Last,
    Zero,
}

/// How table values approach their limit along a diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// `α_(i,i+m) = α*_m` for every `i ≥ 1`.
    Exact,
    /// `α_(i,i+m) = α*_m (1 - γ^i)`.
    Geometric { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalTable {
    stars: Vec<f64>,
    tail: Tail,
    fill: Fill,
}

impl DiagonalTable {
    /// `pairs` must list every offset `1..=M` once; offset 0 may be given only as 0.
    pub fn new(pairs: &[(u64, f64)], tail: Tail, fill: Fill) -> Result<Self> {
        let mut sorted: Vec<(u64, f64)> = pairs.iter().copied().filter(|p| p.0 != 0).collect();
        if let Some(&(_, v)) = pairs.iter().find(|p| p.0 == 0) {
            if v != 0.0 {
                return Err(Error::InvalidField("alpha*_0 is forced to 0".into()));
            }
        }
        sorted.sort_by_key(|p| p.0);
        if sorted.is_empty() {
            return Err(Error::InvalidField("table needs at least one offset m >= 1".into()));
        }
        for (k, &(m, v)) in sorted.iter().enumerate() {
            if m != k as u64 + 1 {
                return Err(Error::InvalidField(format!(
                    "table offsets must be exactly 1..=M, found gap or duplicate at m={m}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidField(format!("alpha*_{m} is not finite")));
            }
        }
        if let Fill::Geometric { gamma } = fill {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::InvalidField(format!("gamma {gamma} outside (0,1)")));
            }
        }
        let mut stars = vec![0.0];
        stars.extend(sorted.iter().map(|p| p.1));
        Ok(DiagonalTable { stars, tail, fill })
    }

    pub fn star(&self, m: u64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        let top = (self.stars.len() - 1) as u64;
        if m <= top {
            return self.stars[m as usize];
        }
        match self.tail {
            Tail::Cycle => self.stars[(1 + (m - 1) % top) as usize],
            Tail::Last => self.stars[top as usize],
            Tail::Zero => 0.0,
        }
    }

    pub fn listed(&self) -> &[f64] {
        &self.stars[1..]
    }

    pub fn max_abs(&self) -> f64 {
        self.stars.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn value(&self, i: u64, j: u64) -> f64 {
        let s = self.star(j - i);
        match self.fill {
            Fill::Exact => s,
            Fill::Geometric { gamma } => s * (1.0 - gamma.powf(i as f64)),
        }
    }
}

#[derive(Clone)]
pub enum FieldKind {
    Constant(f64),
    Table(DiagonalTable),
    Expression(Expr),
    User { description: String, f: UserFn },
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Constant(a) => write!(f, "Constant({a})"),
            FieldKind::Table(t) => write!(f, "Table({t:?})"),
            FieldKind::Expression(e) => write!(f, "Expression({:?})", e.source()),
            FieldKind::User { description, .. } => write!(f, "User({description:?})"),
        }
    }
}

/// An admissible coefficient sequence. Immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct AlphaField {
    kind: FieldKind,
    bound_c: f64,
    gamma: Option<f64>,
}

impl AlphaField {
    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn bound_c(&self) -> f64 {
        self.bound_c
    }

    pub fn contraction_gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// `Some(α)` for constant fields.
    pub fn constant_value(&self) -> Option<f64> {
        match self.kind {
            FieldKind::Constant(a) => Some(a),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            FieldKind::Constant(a) => format!("constant alpha={a}"),
            FieldKind::Table(t) => format!("table {:?} tail={:?} fill={:?}", t.listed(), t.tail, t.fill),
            FieldKind::Expression(e) => format!("expression {}", e.source()),
            FieldKind::User { description, .. } => format!("user {description}"),
        }
    }

    /// The value with no admissibility check. Axis and diagonal give 0.
    #[inline]
    pub fn raw(&self, i: u64, j: u64) -> f64 {
        if i == 0 || i >= j {
            return 0.0;
        }
        match &self.kind {
            FieldKind::Constant(a) => *a,
            FieldKind::Table(t) => t.value(i, j),
            FieldKind::Expression(e) => e.eval(&[i as f64, j as f64, (i + j) as f64]),
            FieldKind::User { f, .. } => f(i, j),
        }
    }

    /// Checked evaluation: fails fast on `|α| >= min(C, (i+j)/4)`.
    #[inline]
    pub fn evaluate(&self, i: u64, j: u64) -> Result<f64> {
        if i > j {
            return Err(Error::OutsideWedge { i, j });
        }
        if i == 0 || i == j {
            return Ok(0.0);
        }
        let v = self.raw(i, j);
        let bound = self.bound_c.min((i + j) as f64 / 4.0);
        if v.abs() < bound {
            Ok(v)
        } else {
            Err(Error::Constraint { i, j, value: v, bound })
        }
    }
}

fn check_bound(bound_c: f64) -> Result<()> {
    if bound_c > 0.0 && bound_c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidField(format!("bound C must be positive and finite, got {bound_c}")))
    }
}

fn check_gamma(gamma: Option<f64>) -> Result<()> {
    match gamma {
        Some(g) if !(g > 0.0 && g < 1.0) => {
            Err(Error::InvalidField(format!("gamma {g} outside (0,1)")))
        }
        _ => Ok(()),
    }
}

pub fn make_constant_field(alpha: f64, bound_c: f64) -> Result<AlphaField> {
    check_bound(bound_c)?;
    if !(alpha.abs() < bound_c) {
        return Err(Error::InvalidField(format!("|alpha| = {} must be below C = {bound_c}", alpha.abs())));
    }
    Ok(AlphaField { kind: FieldKind::Constant(alpha), bound_c, gamma: None })
}

/// The all-zero sequence.
pub fn theta() -> AlphaField {
    AlphaField { kind: FieldKind::Constant(0.0), bound_c: 1.0, gamma: None }
}

pub fn make_table_field(table: DiagonalTable, bound_c: f64) -> Result<AlphaField> {
    check_bound(bound_c)?;
    if !(table.max_abs() < bound_c) {
        return Err(Error::InvalidField(format!(
            "table entry {} is not below C = {bound_c}",
            table.max_abs()
        )));
    }
    let gamma = match table.fill {
        Fill::Geometric { gamma } => Some(gamma),
        Fill::Exact => None,
    };
    Ok(AlphaField { kind: FieldKind::Table(table), bound_c, gamma })
}

/// Expression over `i`, `j` and `n = i + j`.
pub fn make_expression_field(source: &str, bound_c: f64, gamma: Option<f64>) -> Result<AlphaField> {
    check_bound(bound_c)?;
    check_gamma(gamma)?;
    let e = Expr::parse(source, &["i", "j", "n"])?;
    Ok(AlphaField { kind: FieldKind::Expression(e), bound_c, gamma })
}

pub fn make_user_field(
    description: &str,
    bound_c: f64,
    gamma: Option<f64>,
    f: impl Fn(u64, u64) -> f64 + Send + Sync + 'static,
) -> Result<AlphaField> {
    check_bound(bound_c)?;
    check_gamma(gamma)?;
    Ok(AlphaField {
        kind: FieldKind::User { description: description.to_string(), f: Arc::new(f) },
        bound_c,
        gamma,
    })
}

/// Serializable field description used by config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldSpec {
    Constant {
        alpha: f64,
        #[serde(default = "default_bound")]
        bound_c: f64,
    },
    Table {
        pairs: Vec<(u64, f64)>,
        #[serde(default = "default_tail")]
        tail: Tail,
        #[serde(default = "default_fill")]
        fill: Fill,
        #[serde(default = "default_bound")]
        bound_c: f64,
    },
    Expression {
        expr: String,
        #[serde(default = "default_bound")]
        bound_c: f64,
        #[serde(default)]
        gamma: Option<f64>,
    },
}

fn default_bound() -> f64 {
    1.0
}
fn default_tail() -> Tail {
    Tail::Cycle
}
fn default_fill() -> Fill {
    Fill::Exact
}

impl FieldSpec {
    pub fn build(&self) -> Result<AlphaField> {
        match self {
            FieldSpec::Constant { alpha, bound_c } => make_constant_field(*alpha, *bound_c),
            FieldSpec::Table { pairs, tail, fill, bound_c } => {
                make_table_field(DiagonalTable::new(pairs, *tail, *fill)?, *bound_c)
            }
            FieldSpec::Expression { expr, bound_c, gamma } => {
                make_expression_field(expr, *bound_c, *gamma)
            }
        }
    }

    /// `theta`, `constant:0.1`, `table:0.2,-0.2` (cyclic, exact fill) or `expr:<source>`.
    pub fn from_shorthand(s: &str) -> Result<FieldSpec> {
        let s = s.trim();
        if s == "theta" {
            return Ok(FieldSpec::Constant { alpha: 0.0, bound_c: 1.0 });
        }
        let (head, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidField(format!("expected kind:value, got {s:?}")))?;
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidField(format!("bad number {t:?}")))
        };
        match head {
            "constant" => Ok(FieldSpec::Constant { alpha: num(rest)?, bound_c: 1.0 }),
            "table" => {
                let pairs = rest
                    .split(',')
                    .enumerate()
                    .map(|(k, t)| Ok((k as u64 + 1, num(t)?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(FieldSpec::Table { pairs, tail: Tail::Cycle, fill: Fill::Exact, bound_c: 1.0 })
            }
            "expr" | "expression" => {
                Ok(FieldSpec::Expression { expr: rest.to_string(), bound_c: 1.0, gamma: None })
            }
            _ => Err(Error::InvalidField(format!("unknown field kind {head:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum LimitSource {
    Constant(f64),
    Table(DiagonalTable),
    Sampled { cache: Vec<f64>, field: AlphaField, k_max: u64, tol: f64 },
}

/// `α*_m` for every offset `m`, exact or extrapolated.
#[derive(Clone, Debug)]
pub struct DiagonalLimits {
    source: LimitSource,
    pub tail_estimate_error: f64,
}

/// Offsets extrapolated eagerly (and checked) when building sampled limits.
pub const SAMPLED_CACHE: u64 = 1024;

impl DiagonalLimits {
    pub fn from_table(table: DiagonalTable) -> Self {
        DiagonalLimits { source: LimitSource::Table(table), tail_estimate_error: 0.0 }
    }

    pub fn constant(alpha: f64) -> Self {
        DiagonalLimits { source: LimitSource::Constant(alpha), tail_estimate_error: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.source, LimitSource::Sampled { .. })
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.source {
            LimitSource::Constant(a) => Some(a),
            _ => None,
        }
    }

    /// `α*_m`. Sampled limits past the checked cache are extrapolated on demand
    /// and fall back to the last sample if that extrapolation fails.
    #[inline]
    pub fn star(&self, m: u64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        match &self.source {
            LimitSource::Constant(a) => *a,
            LimitSource::Table(t) => t.star(m),
            LimitSource::Sampled { cache, field, k_max, tol } => {
                if (m as usize) < cache.len() {
                    cache[m as usize]
                } else {
                    match extrapolate_diagonal(field, m, *k_max, *tol) {
                        Ok((v, _)) => v,
                        Err(_) => field.raw(*k_max, *k_max + m),
                    }
                }
            }
        }
    }
}

/// Limit of `α_(k,k+m)` as `k → ∞` with a geometric tail bound.
pub fn extrapolate_diagonal(field: &AlphaField, m: u64, k_max: u64, tol: f64) -> Result<(f64, f64)> {
    if m == 0 {
        return Ok((0.0, 0.0));
    }
    let a = (1..=k_max)
        .map(|k| field.evaluate(k, k + m))
        .collect::<Result<Vec<f64>>>()?;
    let d: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
    let last_k = d.iter().rposition(|x| x.abs() < tol).unwrap_or(d.len() - 1);
    let dk = d[last_k];
    let ak = a[last_k + 1];
    if dk == 0.0 {
        return Ok((ak, 0.0));
    }
    // contraction ratios over the last few nonzero steps up to last_k
    let lo = last_k.saturating_sub(4);
    let ratios: Vec<f64> = (lo.max(1)..=last_k)
        .filter(|&t| d[t - 1] != 0.0)
        .map(|t| d[t] / d[t - 1])
        .collect();
    if ratios.is_empty() {
        return Ok((ak, dk.abs()));
    }
    let rho = ratios.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    if ratios.iter().all(|r| r.abs() >= 1.0) {
        if dk.abs() < tol {
            // stalled at rounding level
            return Ok((ak, dk.abs()));
        }
        return Err(Error::NonContracting { m, ratio: *ratios.last().unwrap() });
    }
    let r = *ratios.last().unwrap();
    if r.abs() >= 1.0 || rho >= 1.0 {
        return Ok((ak, dk.abs()));
    }
    Ok((ak + dk * r / (1.0 - r), dk.abs() * rho / (1.0 - rho)))
}

pub fn diagonal_limits(field: &AlphaField, k_max: u64, tol: f64) -> Result<DiagonalLimits> {
    match &field.kind {
        FieldKind::Constant(a) => Ok(DiagonalLimits::constant(*a)),
        FieldKind::Table(t) => Ok(DiagonalLimits::from_table(t.clone())),
        _ => {
            if k_max < 3 {
                return Err(Error::InvalidArgument("k_max must be at least 3".into()));
            }
            if !(tol > 0.0) {
                return Err(Error::InvalidArgument("tol must be positive".into()));
            }
            let mut cache = vec![0.0];
            let mut err = 0.0_f64;
            for m in 1..SAMPLED_CACHE {
                let (v, e) = extrapolate_diagonal(field, m, k_max, tol)?;
                if !(v.abs() <= field.bound_c) {
                    return Err(Error::InvalidField(format!(
                        "alpha*_{m} = {v} exceeds C = {}",
                        field.bound_c
                    )));
                }
                cache.push(v);
                err = err.max(e);
            }
            Ok(DiagonalLimits {
                source: LimitSource::Sampled { cache, field: field.clone(), k_max, tol },
                tail_estimate_error: err,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Violation {
    /// `|α_(i,j)| >= min(C, (i+j)/4)`.
    Bound { i: u64, j: u64, value: f64, bound: f64 },
    /// `|α_(i+1,j+1) - α_(i,j)| > γ |α_(i,j) - α_(i-1,j-1)|`.
    Contraction { i: u64, j: u64, step: f64, previous: f64, gamma: f64 },
}

/// Exhaustive admissibility check on ranks `<= rank_max`. Fields without a
/// declared γ are checked for non-expansion (γ = 1).
pub fn validate_field(field: &AlphaField, rank_max: u64, n0: u64) -> Vec<Violation> {
    let mut out = Vec::new();
    for n in 3..=rank_max {
        for i in 1..=(n - 1) / 2 {
            let j = n - i;
            let value = field.raw(i, j);
            let bound = field.bound_c.min(n as f64 / 4.0);
            if !(value.abs() < bound) {
                out.push(Violation::Bound { i, j, value, bound });
            }
        }
    }
    let gamma = field.gamma.unwrap_or(1.0);
    for n in (n0 + 1).max(5)..=rank_max.saturating_sub(2) {
        for i in 2..=(n - 1) / 2 {
            let j = n - i;
            let (prev, cur, next) = (field.raw(i - 1, j - 1), field.raw(i, j), field.raw(i + 1, j + 1));
            let step = next - cur;
            let previous = cur - prev;
            let scale = prev.abs().max(cur.abs()).max(next.abs());
            let slack = 4.0 * f64::EPSILON * scale;
            if !(step.abs() <= gamma * previous.abs() + slack) {
                out.push(Violation::Contraction { i, j, step, previous, gamma });
            }
        }
    }
    out
}

/// Largest `|α_(i,j) - α*_(j-i)|` per rank `n = 3..=rank_max`, a view of how far
/// the field sits from its diagonal limits at finite rank.
pub fn transient_deviation(field: &AlphaField, limits: &DiagonalLimits, rank_max: u64) -> Vec<(u64, f64)> {
    (3..=rank_max)
        .map(|n| {
            let dev = (1..=(n - 1) / 2)
                .map(|i| (field.raw(i, n - i) - limits.star(n - 2 * i)).abs())
                .fold(0.0, f64::max);
            (n, dev)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_values() {
        let f = make_constant_field(0.1, 0.25).unwrap();
        assert_eq!(f.evaluate(3, 7).unwrap(), 0.1);
        assert_eq!(f.evaluate(4, 4).unwrap(), 0.0);
        assert_eq!(f.evaluate(0, 9).unwrap(), 0.0);
        assert!(matches!(f.evaluate(7, 3), Err(Error::OutsideWedge { .. })));
        assert!(make_constant_field(0.25, 0.25).is_err());
        assert!(make_constant_field(-0.3, 0.25).is_err());
    }

    #[test]
    fn evaluate_fails_fast_below_rank_bound() {
        // |α| = 0.9 < C but (1,2) has (i+j)/4 = 0.75
        let f = make_constant_field(0.9, 2.0).unwrap();
        assert!(matches!(f.evaluate(1, 2), Err(Error::Constraint { i: 1, j: 2, .. })));
        assert_eq!(f.evaluate(1, 3).unwrap(), 0.9);
    }

    #[test]
    fn theta_is_zero() {
        let f = theta();
        for i in 0..20 {
            for j in i..25 {
                assert_eq!(f.evaluate(i, j).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn limits_of_constant_and_theta() {
        let l = diagonal_limits(&make_constant_field(0.1, 0.25).unwrap(), 64, 1e-9).unwrap();
        assert_eq!(l.star(0), 0.0);
        for m in 1..50 {
            assert_eq!(l.star(m), 0.1);
        }
        assert_eq!(l.tail_estimate_error, 0.0);
        let t = diagonal_limits(&theta(), 64, 1e-9).unwrap();
        assert!((0..100).all(|m| t.star(m) == 0.0));
    }

    #[test]
    fn limits_extrapolated_for_geometric_expression() {
        let f = make_expression_field("0.2*(1-2^(-i))", 1.0, Some(0.5)).unwrap();
        let l = diagonal_limits(&f, 64, 1e-9).unwrap();
        assert!(!l.is_exact());
        assert_eq!(l.star(0), 0.0);
        for m in [1, 2, 5, 100, 2000] {
            assert!((l.star(m) - 0.2).abs() < 1e-9, "m={m}: {}", l.star(m));
        }
        assert!(l.tail_estimate_error < 1e-9);
    }

    #[test]
    fn extrapolation_uses_geometric_tail() {
        // only 10 samples: far from the limit, the tail correction must close the gap
        let f = make_expression_field("0.2*(1-0.5^i)", 1.0, Some(0.5)).unwrap();
        let (v, e) = extrapolate_diagonal(&f, 3, 10, 1e-12).unwrap();
        assert!((v - 0.2).abs() < 1e-14, "{v}");
        assert!(e > 0.0);
    }

    #[test]
    fn non_contracting_diagonal_is_an_error() {
        let f = make_user_field("oscillating", 1.0, None, |i, _| if i % 2 == 0 { 0.1 } else { -0.1 }).unwrap();
        assert!(matches!(diagonal_limits(&f, 64, 1e-9), Err(Error::NonContracting { .. })));
    }

    #[test]
    fn table_lookup_and_tails() {
        let t = DiagonalTable::new(&[(1, 0.2), (2, -0.2)], Tail::Cycle, Fill::Exact).unwrap();
        assert_eq!(t.star(0), 0.0);
        assert_eq!(t.star(1), 0.2);
        assert_eq!(t.star(2), -0.2);
        assert_eq!(t.star(3), 0.2);
        assert_eq!(t.star(1000), -0.2);
        let t = DiagonalTable::new(&[(2, 0.3), (1, 0.1)], Tail::Last, Fill::Exact).unwrap();
        assert_eq!(t.star(9), 0.3);
        let t = DiagonalTable::new(&[(1, 0.1)], Tail::Zero, Fill::Exact).unwrap();
        assert_eq!(t.star(2), 0.0);
        assert!(DiagonalTable::new(&[(1, 0.1), (3, 0.1)], Tail::Zero, Fill::Exact).is_err());
        assert!(DiagonalTable::new(&[(0, 0.1), (1, 0.1)], Tail::Zero, Fill::Exact).is_err());
    }

    #[test]
    fn geometric_table_fill() {
        let t = DiagonalTable::new(&[(1, 0.2)], Tail::Last, Fill::Geometric { gamma: 0.5 }).unwrap();
        let f = make_table_field(t, 1.0).unwrap();
        assert_eq!(f.contraction_gamma(), Some(0.5));
        assert!((f.evaluate(1, 2).unwrap() - 0.1).abs() < 1e-15);
        assert!((f.evaluate(2, 5).unwrap() - 0.15).abs() < 1e-15);
        let l = diagonal_limits(&f, 64, 1e-9).unwrap();
        assert_eq!(l.star(3), 0.2);
        assert!(validate_field(&f, 60, 4).is_empty());
    }

    #[test]
    fn validate_examples() {
        assert!(validate_field(&theta(), 50, 4).is_empty());
        let f = make_constant_field(0.3, 1.0).unwrap();
        assert!(validate_field(&f, 50, 4).is_empty());
        let bad = make_user_field("spike", 4.0, None, |i, j| if (i, j) == (2, 3) { 2.0 } else { 0.0 }).unwrap();
        let v = validate_field(&bad, 50, 4);
        assert!(v.contains(&Violation::Bound { i: 2, j: 3, value: 2.0, bound: 1.25 }));
        assert!(v.iter().all(|x| !matches!(x, Violation::Bound { i, j, .. } if (*i, *j) != (2, 3))));
    }

    #[test]
    fn validate_flags_expanding_diagonal() {
        let f = make_user_field("growing", 1.0, Some(0.5), |i, _| 0.01 * (i as f64).min(30.0)).unwrap();
        let v = validate_field(&f, 40, 4);
        assert!(v.iter().any(|x| matches!(x, Violation::Contraction { .. })));
    }

    #[test]
    fn shorthand_specs() {
        assert_eq!(
            FieldSpec::from_shorthand("constant:0.1").unwrap(),
            FieldSpec::Constant { alpha: 0.1, bound_c: 1.0 }
        );
        let t = FieldSpec::from_shorthand("table:0.2,-0.2").unwrap().build().unwrap();
        assert_eq!(t.evaluate(3, 4).unwrap(), 0.2);
        assert_eq!(t.evaluate(3, 5).unwrap(), -0.2);
        let e = FieldSpec::from_shorthand("expr:0.1*(1-1/i)").unwrap().build().unwrap();
        assert!((e.evaluate(2, 9).unwrap() - 0.05).abs() < 1e-15);
        assert!(FieldSpec::from_shorthand("nope:1").is_err());
        assert!(FieldSpec::from_shorthand("theta").unwrap().build().unwrap().constant_value() == Some(0.0));
    }

    #[test]
    fn spec_roundtrips_through_json_shape() {
        let spec = FieldSpec::Table {
            pairs: vec![(1, 0.1), (2, 0.05)],
            tail: Tail::Zero,
            fill: Fill::Geometric { gamma: 0.5 },
            bound_c: 0.5,
        };
        let f = spec.build().unwrap();
        assert_eq!(f.bound_c(), 0.5);
        assert!(transient_deviation(&f, &diagonal_limits(&f, 64, 1e-9).unwrap(), 10)
            .iter()
            .all(|&(_, d)| d <= 0.05 + 1e-15));
    }
}
