use std::io::Write;

use qpwalk::alpha::{diagonal_limits, validate_field as check_field, AlphaField, Violation};
use qpwalk::bd::{self, log_growth_fit, series_partial_sums, BDVerdict, BdClass, RateSequence};
use qpwalk::ctmc::{self, CtmcOptions};
use qpwalk::estimate::{self, IndexEstimate, IndexReadings, MIN_VISITS};
use qpwalk::expr::Expr;
use qpwalk::kappa::{self, ClassifyOptions, ModeRequest, Verdict};
use qpwalk::stationary::{self, Closure, AdjacentReport, SolveOptions};
use qpwalk::walk::{self, WalkState};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::report::{csv_string, fmt17, to_json, Artifacts, Envelope};
use crate::{CliError, Format};

fn field(cfg: &ExperimentConfig) -> Result<AlphaField, CliError> {
    cfg.field
        .as_ref()
        .ok_or_else(|| CliError::config("no field given; use --alpha or a config `field`"))?
        .build()
        .map_err(CliError::from)
}

/// Writes the JSON envelope and artifacts, then prints the requested stdout form.
fn emit<T: Serialize>(
    cfg: &ExperimentConfig,
    command: &str,
    result: T,
    mut files: Artifacts,
    fmt: Format,
    csv_name: Option<&str>,
) -> Result<(), CliError> {
    let env = Envelope { command, config_hash: cfg.hash(command), seed: cfg.seed, config: cfg, result };
    let json = to_json(&env);
    let stdout = match (fmt, csv_name.and_then(|n| files.get(n))) {
        (Format::Csv, Some(c)) => c.to_owned(),
        _ => json.clone(),
    };
    files.add(&format!("{command}.json"), json);
    if let Some(dir) = &cfg.out {
        files.write_all(dir)?;
    }
    std::io::stdout()
        .write_all(stdout.as_bytes())
        .map_err(|e| CliError::io(e.to_string()))
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Recurrent => 0,
        Verdict::Transient => 1,
        Verdict::Marginal => 2,
    }
}

fn bd_code(v: BdClass) -> u8 {
    match v {
        BdClass::Recurrent => 0,
        BdClass::Transient => 1,
        BdClass::Inconclusive => 2,
    }
}

pub fn classify(cfg: &ExperimentConfig, fmt: Format) -> Result<u8, CliError> {
    let f = field(cfg)?;
    let mut opts = ClassifyOptions::default();
    if let Some(s) = &cfg.schedule {
        opts.schedule = s.clone();
    }
    opts.mode = match cfg.mode.as_deref() {
        None | Some("auto") => ModeRequest::Auto,
        Some("product") => ModeRequest::Product,
        Some("cesaro") => ModeRequest::Cesaro,
        Some("closed-form") => ModeRequest::ClosedForm,
        Some(m) => return Err(CliError::config(format!("unknown mode {m:?}"))),
    };
    let report = kappa::classify(&f, &opts)?;
    let mut files = Artifacts::default();
    let mut csv = String::from("k,product,cesaro\n");
    for p in &report.schedule {
        csv.push_str(&format!("{},{},{}\n", p.k, fmt17(p.product), fmt17(p.cesaro)));
    }
    files.add("schedule.csv", csv);
    let code = verdict_code(report.verdict);
    emit(cfg, "classify", &report, files, fmt, Some("schedule.csv"))?;
    Ok(code)
}

#[derive(Serialize)]
struct RelationFit {
    relation: &'static str,
    k_small: u64,
    k_large: u64,
    ratio: f64,
    order: f64,
}

#[derive(Serialize)]
struct StationaryResult {
    rank_max: u64,
    closure: Closure,
    residual: f64,
    sweep_change: f64,
    iterations: usize,
    converged: bool,
    rank_sums: Vec<(u64, f64)>,
    relations: Vec<AdjacentReport>,
    relation_fit: Vec<RelationFit>,
}

pub fn stationary(cfg: &ExperimentConfig, fmt: Format) -> Result<u8, CliError> {
    let f = field(cfg)?;
    let rank_max = cfg.rank_max.unwrap_or(40);
    let mut opts = SolveOptions::new(rank_max, cfg.tol.unwrap_or(1e-8), cfg.max_iters.unwrap_or(200_000));
    opts.closure = match cfg.closure.as_deref() {
        None | Some("reflecting") => Closure::Reflecting,
        Some("extrapolated") => Closure::Extrapolated,
        Some(c) => return Err(CliError::config(format!("unknown closure {c:?}"))),
    };
    let limits = diagonal_limits(&f, 64, 1e-12)?;
    let table = stationary::solve_ratios(&f, &opts, Some(&limits))?;
    let ks = match &cfg.relation_k {
        Some(k) => k.clone(),
        None => {
            let k2 = rank_max.saturating_sub(2) / 2;
            [k2 / 2, k2].into_iter().filter(|&k| k >= 3).collect()
        }
    };
    let relations = ks
        .iter()
        .map(|&k| stationary::verify_adjacent_relations(&table, &limits, k))
        .collect::<qpwalk::Result<Vec<_>>>()?;
    let mut relation_fit = Vec::new();
    if relations.len() >= 2 {
        let (a, b) = (&relations[0], &relations[relations.len() - 1]);
        let pairs = [
            ("cross_rank_even", a.cross_rank_even.max, b.cross_rank_even.max),
            ("cross_rank_odd", a.cross_rank_odd.max, b.cross_rank_odd.max),
            ("within_rank_even", a.within_rank_even.max, b.within_rank_even.max),
            ("within_rank_odd", a.within_rank_odd.max, b.within_rank_odd.max),
        ];
        for (relation, da, db) in pairs {
            let ratio = da / db;
            relation_fit.push(RelationFit {
                relation,
                k_small: a.k,
                k_large: b.k,
                ratio,
                order: ratio.ln() / (b.k as f64 / a.k as f64).ln(),
            });
        }
    }
    let sums = stationary::rank_sums(&table);
    let mut files = Artifacts::default();
    files.add("ratios.csv", csv_string(|w| stationary::write_table_csv(&table, fmt17, w))?);
    let mut rs = String::from("n,rank_sum,flat_reference\n");
    for &(n, s) in &sums {
        rs.push_str(&format!("{n},{},{}\n", fmt17(s), fmt17(8.0 * (1 + n / 2) as f64)));
    }
    files.add("rank_sums.csv", rs);
    let converged = table.converged;
    let result = StationaryResult {
        rank_max,
        closure: table.closure,
        residual: table.residual,
        sweep_change: table.sweep_change,
        iterations: table.iterations,
        converged,
        rank_sums: sums,
        relations,
        relation_fit,
    };
    emit(cfg, "stationary", &result, files, fmt, Some("ratios.csv"))?;
    if !converged {
        eprintln!("error: solver stopped at the iteration limit before reaching the tolerance");
        return Ok(4);
    }
    Ok(0)
}

#[derive(Serialize)]
struct IndexSummary {
    psi_hat: f64,
    psi_stderr: f64,
    n_range: (u64, u64),
    caveat: Option<String>,
}

impl From<&IndexEstimate> for IndexSummary {
    fn from(e: &IndexEstimate) -> Self {
        IndexSummary { psi_hat: e.psi_hat, psi_stderr: e.psi_stderr, n_range: e.n_range, caveat: e.caveat.clone() }
    }
}

#[derive(Serialize)]
struct BoundaryPoint {
    n: u64,
    p_n: f64,
    stderr: f64,
    n_p_n: f64,
    ratio: f64,
    one_plus_p_n: f64,
}

#[derive(Serialize)]
struct WalkResult {
    engine: &'static str,
    steps: u64,
    replicas: u64,
    kappa: f64,
    verdict: Verdict,
    index: IndexSummary,
    readings: IndexReadings,
    boundary: Vec<BoundaryPoint>,
}

#[derive(Serialize)]
struct OccupancyPoint {
    i: u64,
    j: u64,
    ratio: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct CtmcResult {
    engine: &'static str,
    horizon: f64,
    replicas: u64,
    events: u64,
    origin_time: f64,
    overflow_fraction: f64,
    occupancy: Vec<OccupancyPoint>,
    rank_ratio_sums: Vec<(u64, f64)>,
    occupancy_error: Option<String>,
    index: Option<IndexSummary>,
    index_error: Option<String>,
}

fn index_csv(e: &IndexEstimate) -> Result<String, CliError> {
    csv_string(|w| estimate::write_index_csv(e, fmt17, w))
}

fn is_report_point(n: u64) -> bool {
    n <= 10 || [20, 50, 100, 200, 500, 1000, 2000, 5000, 10_000].contains(&n)
}

pub fn simulate(cfg: &ExperimentConfig, fmt: Format) -> Result<u8, CliError> {
    let f = field(cfg)?;
    let seed = cfg.seed.ok_or_else(|| CliError::config("simulate needs an explicit --seed"))?;
    let replicas = cfg.replicas.unwrap_or(1);
    if replicas == 0 {
        return Err(CliError::config("replicas must be positive"));
    }
    let min_visits = cfg.min_visits.unwrap_or(MIN_VISITS);
    match cfg.engine.as_deref().unwrap_or("walk") {
        "walk" => {
            let steps = cfg.steps.unwrap_or(1_000_000);
            if steps == 0 {
                return Err(CliError::config("steps must be positive"));
            }
            let stride = cfg.trajectory_stride.unwrap_or(0);
            let stats = estimate::walk_stats(&f, steps, seed, replicas)?;
            let index = estimate::index_from_stats(&stats, min_visits)?;
            let boundary = estimate::boundary_from_stats(&stats, min_visits)?;
            let report = kappa::classify(&f, &ClassifyOptions::default())?;
            let mut files = Artifacts::default();
            files.add("index.csv", index_csv(&index)?);
            let mut bcsv = String::from("n,p_n,stderr,n_p_n,ratio,one_plus_p_n\n");
            for (n, b) in &boundary {
                bcsv.push_str(&format!(
                    "{n},{},{},{},{},{}\n",
                    fmt17(b.p_n),
                    fmt17(b.stderr),
                    fmt17(b.n_p_n),
                    fmt17(b.ratio),
                    fmt17(1.0 + b.p_n)
                ));
            }
            files.add("boundary.csv", bcsv);
            if stride > 0 {
                if steps > 10_000_000 {
                    return Err(CliError::config("trajectory export is limited to 10^7 steps"));
                }
                let t = walk::simulate(&f, WalkState::ORIGIN, steps, qpwalk::rng::split_seed(seed, 0))?;
                files.add("trajectory.csv", csv_string(|w| walk::write_trajectory_csv(&t, stride, w))?);
            }
            let result = WalkResult {
                engine: "walk",
                steps,
                replicas,
                kappa: report.kappa.value,
                verdict: report.verdict,
                index: (&index).into(),
                readings: estimate::index_readings(&index, report.kappa.value),
                boundary: boundary
                    .iter()
                    .filter(|(n, _)| is_report_point(**n))
                    .map(|(&n, b)| BoundaryPoint {
                        n,
                        p_n: b.p_n,
                        stderr: b.stderr,
                        n_p_n: b.n_p_n,
                        ratio: b.ratio,
                        one_plus_p_n: 1.0 + b.p_n,
                    })
                    .collect(),
            };
            emit(cfg, "simulate", &result, files, fmt, Some("index.csv"))?;
            Ok(0)
        }
        "ctmc" => {
            let horizon = cfg.horizon.unwrap_or(10_000.0);
            let mut opts = CtmcOptions::new(horizon);
            if replicas > 1 {
                opts.batches = 1;
            }
            let hist = ctmc::simulate_replicas(&f, &opts, seed, replicas)?;
            let mut files = Artifacts::default();
            let (occupancy, sums, occ_err) = match ctmc::occupancy_to_ratio_table(&hist) {
                Ok(r) => {
                    files.add("histogram.csv", csv_string(|w| ctmc::write_ratios_csv(&r, fmt17, w))?);
                    let pts = r
                        .entries
                        .iter()
                        .filter(|(s, _)| s.norm() <= 12)
                        .map(|(s, e)| OccupancyPoint { i: s.i, j: s.j, ratio: e.ratio, stderr: e.stderr })
                        .collect();
                    let sums = hist.rank_ratio_sums()?.into_iter().take(13).collect();
                    (pts, sums, None)
                }
                Err(e) => (Vec::new(), Vec::new(), Some(e.to_string())),
            };
            let stats = estimate::ctmc_stats(&f, horizon, seed, replicas)?;
            let (index, index_err) = match estimate::index_from_stats(&stats, min_visits) {
                Ok(e) => {
                    files.add("index.csv", index_csv(&e)?);
                    (Some((&e).into()), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            let failed = occ_err.is_some();
            let result = CtmcResult {
                engine: "ctmc",
                horizon,
                replicas,
                events: hist.events,
                origin_time: hist.origin_time(),
                overflow_fraction: hist.overflow_time / hist.total_time,
                occupancy,
                rank_ratio_sums: sums,
                occupancy_error: occ_err,
                index,
                index_error: index_err,
            };
            emit(cfg, "simulate", &result, files, fmt, Some("histogram.csv"))?;
            if failed {
                eprintln!("error: origin starved; occupancy ratios unavailable");
                return Ok(4);
            }
            Ok(0)
        }
        e => Err(CliError::config(format!("unknown engine {e:?}"))),
    }
}

#[derive(Serialize)]
struct SeriesSummary {
    n_start: u64,
    n_terms: u64,
    tail_exponent: f64,
    verdict: BDVerdict,
    partial_sum_at_end: f64,
    /// Slope of `S_n` against `ln n` over the top three decades.
    log_slope: f64,
    /// Slope of `ln S_n` against `ln ln n` over the same range.
    log_log_exponent: f64,
}

#[derive(Serialize)]
struct BdResult {
    source: String,
    verdict: BDVerdict,
    cross_check: Option<BDVerdict>,
    series: Option<SeriesSummary>,
    series_error: Option<String>,
}

fn expr_n(src: &str) -> Result<impl Fn(u64) -> f64 + Send + Sync + Clone + 'static, CliError> {
    let e = std::sync::Arc::new(Expr::parse(src, &["n"])?);
    Ok(move |n: u64| e.eval(&[n as f64]))
}

pub fn bdtest(cfg: &ExperimentConfig, fmt: Format) -> Result<u8, CliError> {
    let k_max = cfg.k_max.unwrap_or(3);
    let window = cfg.window.unwrap_or((1_000, 1_000_000));
    let n_terms = cfg.n_terms.unwrap_or(1_000_000);
    let sources = [cfg.ratio.is_some(), cfg.lambda.is_some() || cfg.mu.is_some(), cfg.bd22 == Some(true), cfg.alpha_n.is_some()];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(CliError::config("give exactly one of --ratio, --lambda/--mu, --bd22, --alpha-n"));
    }
    let (rates, verdict, cross) = if let Some(a) = &cfg.alpha_n {
        let alpha = expr_n(a)?;
        let r = bd::threshold_classify(alpha.clone(), k_max, window)?;
        (RateSequence::from_alpha(&format!("alpha_n = {a}"), alpha), r.verdict, Some(r.cross_check))
    } else {
        let rates = if let Some(r) = &cfg.ratio {
            RateSequence::from_ratio_expr(r)?
        } else if cfg.bd22 == Some(true) {
            RateSequence::bd22()
        } else {
            let (l, m) = match (&cfg.lambda, &cfg.mu) {
                (Some(l), Some(m)) => (l, m),
                _ => return Err(CliError::config("--lambda and --mu go together")),
            };
            RateSequence::from_exprs(l, m)?
        };
        let v = bd::bertrand_test(&rates, k_max, window)?;
        (rates, v, None)
    };
    let mut files = Artifacts::default();
    // the series converges or diverges independently of its first terms
    let n_start = (1..=16).find(|&n| rates.ratio(n).is_ok_and(f64::is_finite)).unwrap_or(1);
    let (series, series_error) = match series_partial_sums(&rates, n_start, n_terms) {
        Ok(s) => {
            let end = n_start + n_terms - 1;
            let lo = (end / 1000).max(n_start + 1);
            let (log_slope, log_log_exponent) = log_growth_fit(&s, lo, end, 60);
            let mut csv = String::from("n,partial_sum,log_product\n");
            let mut n = n_start;
            while n <= end {
                csv.push_str(&format!("{n},{},{}\n", fmt17(s.sum_at(n)), fmt17(s.log_product_at(n))));
                n = (n * 2).max(n + 1);
            }
            files.add("series.csv", csv);
            (
                Some(SeriesSummary {
                    n_start,
                    n_terms,
                    tail_exponent: s.tail_exponent,
                    verdict: s.verdict.clone(),
                    partial_sum_at_end: s.sum_at(end),
                    log_slope,
                    log_log_exponent,
                }),
                None,
            )
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let code = bd_code(verdict.verdict);
    let result = BdResult { source: rates.description.clone(), verdict, cross_check: cross, series, series_error };
    emit(cfg, "bdtest", &result, files, fmt, Some("series.csv"))?;
    Ok(code)
}

#[derive(Serialize)]
struct ValidateResult {
    field: String,
    rank_max: u64,
    n0: u64,
    count: usize,
    violations: Vec<Violation>,
}

pub fn validate_field(cfg: &ExperimentConfig, fmt: Format) -> Result<u8, CliError> {
    let f = field(cfg)?;
    let rank_max = cfg.rank_max.unwrap_or(200);
    let n0 = cfg.n0.unwrap_or(1);
    let violations = check_field(&f, rank_max, n0);
    let mut files = Artifacts::default();
    let mut csv = String::from("type,i,j,value,bound\n");
    for v in &violations {
        match v {
            Violation::Bound { i, j, value, bound } => {
                csv.push_str(&format!("bound,{i},{j},{},{}\n", fmt17(*value), fmt17(*bound)))
            }
            Violation::Contraction { i, j, step, previous, gamma } => csv.push_str(&format!(
                "contraction,{i},{j},{},{}\n",
                fmt17(*step),
                fmt17(gamma * previous)
            )),
        }
    }
    files.add("violations.csv", csv);
    let code = u8::from(!violations.is_empty());
    let result = ValidateResult { field: f.describe(), rank_max, n0, count: violations.len(), violations };
    emit(cfg, "validate-field", &result, files, fmt, Some("violations.csv"))?;
    Ok(code)
}
