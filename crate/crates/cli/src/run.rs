//! Dispatch from a validated configuration to the numerical modules.

use std::time::{Duration, Instant};

use serde::Serialize;

use greenlab::green::green_function;
use greenlab::maps::{check_admissibility, MapSequence};
use greenlab::measure::{check_invariance, default_base, sample_equilibrium, CloudParams};
use greenlab::observable::Observable;
use greenlab::stochastics::{
    asip_condition_check, birkhoff_sums, clt_test, ergodic_average_check, lil_check, martingale_decompose, mixing_check,
    slln_check, HBudget, SampleOptions, StatReport,
};
use greenlab::transfer::{decay_norms, decay_report, exactness_from, DecayOptions, TransferMode, MIN_FIT_POINTS};
use greenlab::ProjectivePoint;

use crate::config::{ExperimentConfig, Kind};
use crate::error::CliError;
use crate::output::{num, PlotSeries, Table};

pub mod defaults {
    pub const COUNT: usize = 10_000;
    pub const CLT_COUNT: usize = 10_000;
    pub const DEPTH: usize = 30;
    pub const TOL: f64 = 1e-6;
    pub const EPS: f64 = 0.25;
    pub const GAMMA: f64 = 0.8;
    pub const DELTA: f64 = 1.0;
    pub const P: f64 = 2.0;
    pub const Q: f64 = 1.0;
    pub const PATHS: usize = 1000;
    pub const GREEN_POINTS: [&str; 5] = ["1", "2", "0.5+0.5i", "-1.5i", "inf"];
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub count: usize,
    pub seed: u64,
    /// CSV artifact backing the verdict.
    pub csv: String,
}

impl Verdict {
    fn from_stat(name: impl Into<String>, s: &StatReport, table: &Table) -> Self {
        Verdict {
            name: name.into(),
            pass: s.pass,
            statistic: s.statistic,
            threshold: s.threshold,
            count: s.count,
            seed: s.seed,
            csv: table.file_name(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub kind: Kind,
    pub config: ExperimentConfig,
    pub workers: usize,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
    pub plots: Vec<PlotSeries>,
    /// Full module reports.
    pub detail: serde_json::Value,
    /// Rough count of sampled points or trajectory steps.
    pub samples: u64,
    pub elapsed: Duration,
}

impl RunReport {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

struct Parts {
    tables: Vec<Table>,
    verdicts: Vec<Verdict>,
    plots: Vec<PlotSeries>,
    detail: serde_json::Value,
    samples: u64,
}

impl Parts {
    fn new() -> Self {
        Parts { tables: Vec::new(), verdicts: Vec::new(), plots: Vec::new(), detail: serde_json::Value::Null, samples: 0 }
    }
}

fn numeric(module: &'static str) -> impl Fn(greenlab::Error) -> CliError {
    move |source| CliError::Numeric { module, source }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn affine_cells(p: &ProjectivePoint) -> (String, String) {
    match p.to_affine() {
        Some(z) => (num(z.re), num(z.im)),
        None => ("inf".into(), "inf".into()),
    }
}

fn sample_options(cfg: &ExperimentConfig) -> Result<SampleOptions, CliError> {
    let mut o = SampleOptions::new(cfg.seed);
    if let Some(d) = cfg.params.depth {
        o.depth = d;
    }
    if let Some(b) = cfg.base()? {
        o.base = b;
    }
    if let Some(c) = cfg.params.centering_count {
        o.centering_count = c;
    }
    Ok(o)
}

/// Runs the configured experiment in the current rayon pool.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let seq = cfg.sequence.build()?;
    let list = cfg.observable_list()?;
    let parts = match cfg.kind() {
        Kind::Green => green(cfg, &seq)?,
        Kind::Measure => measure(cfg, &seq, &list)?,
        Kind::Decay | Kind::Exactness => decay(cfg, &seq, &list)?,
        Kind::Mixing => mixing(cfg, &seq, &list)?,
        Kind::Ergodic => ergodic(cfg, &seq, &list)?,
        Kind::Slln => slln(cfg, &seq, &list)?,
        Kind::Clt => clt(cfg, &seq, &list)?,
        Kind::Lil => lil(cfg, &seq, &list)?,
        Kind::Asip => asip(cfg, &seq, &list)?,
        Kind::Admissibility => admissibility(cfg, &seq)?,
    };
    Ok(RunReport {
        kind: cfg.kind(),
        config: cfg.clone(),
        workers: rayon::current_num_threads(),
        tables: parts.tables,
        verdicts: parts.verdicts,
        plots: parts.plots,
        detail: parts.detail,
        samples: parts.samples,
        elapsed: start.elapsed(),
    })
}

fn green(cfg: &ExperimentConfig, seq: &MapSequence) -> Result<Parts, CliError> {
    let tol = cfg.params.tol.unwrap_or(defaults::TOL);
    let specs: Vec<String> =
        cfg.params.points.clone().unwrap_or_else(|| defaults::GREEN_POINTS.iter().map(|s| s.to_string()).collect());
    let mut table = Table::new("green", &["point", "g", "depth", "tail_bound"]);
    let mut values = Vec::new();
    let mut worst: f64 = 0.0;
    for s in &specs {
        let p: ProjectivePoint = s.parse().map_err(|e| CliError::Config(format!("point {s:?}: {e}")))?;
        let g = green_function(seq, &p, tol).map_err(numeric("green_potentials"))?;
        worst = worst.max(g.tail_bound);
        table.push(vec![s.clone(), num(g.value), g.depth.to_string(), num(g.tail_bound)]);
        values.push(g);
    }
    let verdict = Verdict {
        name: "truncation".into(),
        pass: worst <= tol,
        statistic: worst,
        threshold: tol,
        count: specs.len(),
        seed: cfg.seed,
        csv: table.file_name(),
    };
    let mut p = Parts::new();
    p.detail = serde_json::json!({ "tol": tol, "values": specs.iter().zip(&values).map(|(s, g)| serde_json::json!({
        "point": s, "value": g.value, "depth": g.depth, "tail_bound": g.tail_bound })).collect::<Vec<_>>() });
    p.samples = values.iter().map(|g| g.depth as u64).sum();
    p.verdicts.push(verdict);
    p.tables.push(table);
    Ok(p)
}

fn measure(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let tail = cfg.params.tail.unwrap_or(0);
    let depth = cfg.params.depth.unwrap_or(defaults::DEPTH);
    let count = cfg.params.count.unwrap_or(defaults::COUNT);
    let base = cfg.base()?.unwrap_or_else(default_base);
    let m = sample_equilibrium(seq, tail, depth, count, &base, cfg.seed).map_err(numeric("measures"))?;
    let mut cloud = Table::new("cloud", &["re", "im", "weight"]);
    for (x, w) in m.points.iter().zip(&m.weights) {
        let (re, im) = affine_cells(x);
        cloud.push(vec![re, im, num(*w)]);
    }
    let mut inv = Table::new("invariance", &["observable", "form", "j", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "z", "pass"]);
    let params = CloudParams { depth, count, base, seed: cfg.seed };
    let mut p = Parts::new();
    let mut reports = Vec::new();
    for (k, psi) in list.iter().enumerate() {
        let r = check_invariance(seq, tail + 1, psi, psi, &params).map_err(numeric("measures"))?;
        for (form, c) in [("push-forward", &r.pushforward), ("adjoint", &r.adjoint)] {
            inv.push(vec![
                cfg.observables[k].clone(),
                form.into(),
                r.j.to_string(),
                num(c.lhs.value),
                num(c.lhs.stderr),
                num(c.rhs.value),
                num(c.rhs.stderr),
                num(c.z_score),
                c.pass.to_string(),
            ]);
            p.verdicts.push(Verdict {
                name: format!("invariance {form} {}", cfg.observables[k]),
                pass: c.pass,
                statistic: c.z_score,
                threshold: 3.0,
                count,
                seed: cfg.seed,
                csv: inv.file_name(),
            });
        }
        reports.push(r);
    }
    p.detail = serde_json::json!({ "provenance": m.provenance, "invariance": reports });
    p.samples = (count * depth * (1 + 2 * list.len())) as u64;
    p.tables.push(cloud);
    p.tables.push(inv);
    Ok(p)
}

fn decay(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let prm = &cfg.params;
    let ns = prm.n_list.clone().unwrap_or_else(|| (1..=8).collect());
    let exact = cfg.kind() == Kind::Exactness;
    if !exact && ns.len() < MIN_FIT_POINTS {
        return Err(CliError::Config(format!("decay fits need n_list with at least {MIN_FIT_POINTS} values")));
    }
    let q = prm.q.unwrap_or(defaults::Q);
    let mut opts = DecayOptions::new(cfg.seed);
    opts.count = prm.count.unwrap_or(defaults::COUNT);
    opts.tail = prm.tail.unwrap_or(0);
    opts.depth = prm.depth.unwrap_or(defaults::DEPTH);
    if let Some(b) = cfg.base()? {
        opts.base = b;
    }
    if let Some(c) = prm.centering_count {
        opts.centering_count = c;
    }
    let paths = prm.paths.unwrap_or(defaults::PATHS);
    opts.mode = match prm.mode.as_deref().unwrap_or("auto") {
        "full" => TransferMode::Full,
        "sampled" => TransferMode::Sampled { paths, seed: cfg.seed },
        _ => match TransferMode::auto(cfg.seed) {
            TransferMode::Auto { full_max, seed, .. } => TransferMode::Auto { full_max, paths, seed },
            m => m,
        },
    };
    let mut p = Parts::new();
    let mut details = Vec::new();
    let stem = cfg.kind().name();
    for (k, psi) in list.iter().enumerate() {
        let name = if list.len() == 1 { stem.to_string() } else { format!("{stem}_{k}") };
        let mut table = Table::new(name.clone(), &["n", "L1", "L2", "stderr", "fitted_rate", "floor"]);
        let rep = if exact { decay_norms(seq, psi, &ns, 1.0, &opts) } else { decay_report(seq, psi, &ns, q, &opts) }
            .map_err(numeric("transfer_operator"))?;
        let rate = rep.fitted_rate.map(num).unwrap_or_default();
        let mut series = Vec::new();
        for r in &rep.rows {
            let floor = (3.0 * r.center_stderr).max(greenlab::transfer::ABSOLUTE_FLOOR);
            table.push(vec![r.n.to_string(), num(r.l1), num(r.l2), num(r.stderr), rate.clone(), num(floor)]);
            if !r.censored && r.l1 > 0.0 {
                series.push((r.n as f64, r.l1.ln()));
            }
        }
        p.plots.push(PlotSeries { name: format!("{name}_log_l1"), columns: ("n".into(), "log_L1".into()), points: series });
        if exact {
            let e = exactness_from(&rep);
            p.verdicts.push(Verdict {
                name: format!("exactness {}", cfg.observables[k]),
                pass: e.pass,
                statistic: e.ratio,
                threshold: 1.0,
                count: opts.count,
                seed: cfg.seed,
                csv: table.file_name(),
            });
            details.push(serde_json::json!({ "decay": rep, "exactness": e }));
        } else {
            p.verdicts.push(Verdict {
                name: format!("decay {}", cfg.observables[k]),
                pass: rep.pass,
                statistic: rep.fitted_rate.unwrap_or(f64::INFINITY),
                threshold: opts.rate_slack * rep.theoretical_rate,
                count: opts.count,
                seed: cfg.seed,
                csv: table.file_name(),
            });
            details.push(to_json(&rep));
        }
        p.tables.push(table);
        p.samples += (opts.count * (opts.depth + ns.iter().sum::<usize>())) as u64;
    }
    p.detail = serde_json::Value::Array(details);
    Ok(p)
}

fn mixing(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let ns = cfg.params.n_list.clone().unwrap_or_else(|| (1..=6).collect());
    let count = cfg.params.count.unwrap_or(defaults::COUNT);
    let p_exp = cfg.params.p.unwrap_or(defaults::P);
    let phi = &list[0];
    let psi = list.get(1).unwrap_or(phi);
    let r = mixing_check(seq, phi, psi, &ns, p_exp, count, &sample_options(cfg)?).map_err(numeric("stochastics"))?;
    let mut table = Table::new("mixing", &["n", "gap", "stderr", "phi_lp", "at_floor"]);
    let mut series = Vec::new();
    for row in &r.rows {
        table.push(vec![row.n.to_string(), num(row.gap), num(row.stderr), num(row.phi_lp), row.at_floor.to_string()]);
        if !row.at_floor {
            series.push((row.n as f64, row.gap.abs().ln()));
        }
    }
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("mixing", &r.stat, &table));
    p.plots.push(PlotSeries { name: "mixing_log_gap".into(), columns: ("n".into(), "log_abs_gap".into()), points: series });
    p.samples = (count * (ns.iter().max().copied().unwrap_or(0) + 30)) as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    Ok(p)
}

fn ergodic(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let n = cfg.params.n_max.unwrap_or(256);
    let count = cfg.params.count.unwrap_or(defaults::COUNT);
    let r = ergodic_average_check(seq, &list[0], n, count, cfg.params.threshold, &sample_options(cfg)?).map_err(numeric("stochastics"))?;
    let mut table = Table::new("ergodic", &["m", "l2", "stderr"]);
    table.push(vec![n.to_string(), num(r.l2_n), num(r.stderr_n)]);
    table.push(vec![(2 * n).to_string(), num(r.l2_2n), num(r.stderr_2n)]);
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("ergodic average", &r.stat, &table));
    p.samples = (count * (2 * n + 30)) as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    Ok(p)
}

fn slln(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let prm = &cfg.params;
    let n_max = prm.n_max.unwrap_or(4096);
    let count = prm.count.unwrap_or(1000);
    let r = slln_check(
        seq,
        &list[0],
        prm.r.unwrap_or(1),
        prm.delta.unwrap_or(defaults::DELTA),
        n_max,
        count,
        prm.threshold.unwrap_or(0.1),
        &sample_options(cfg)?,
    )
    .map_err(numeric("stochastics"))?;
    let mut table = Table::new("slln", &["n", "p95"]);
    for row in &r.rows {
        table.push(vec![row.n.to_string(), num(row.p95)]);
    }
    let mut cov = Table::new("slln_covariance", &["lag", "covariance", "stderr", "at_floor"]);
    for c in &r.covariances {
        cov.push(vec![c.lag.to_string(), num(c.covariance), num(c.stderr), c.at_floor.to_string()]);
    }
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("slln", &r.stat, &table));
    p.plots.push(PlotSeries {
        name: "slln_p95".into(),
        columns: ("n".into(), "p95".into()),
        points: r.rows.iter().map(|row| (row.n as f64, row.p95)).collect(),
    });
    p.samples = (count * (n_max + 30)) as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    p.tables.push(cov);
    Ok(p)
}

fn clt(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let ns = cfg.params.n_list.clone().unwrap_or_else(|| vec![2, 4, 8, 14]);
    let count = cfg.params.count.unwrap_or(defaults::CLT_COUNT);
    let n_max = ns.iter().copied().max().unwrap_or(1);
    let b = birkhoff_sums(seq, list, n_max, count, &sample_options(cfg)?).map_err(numeric("stochastics"))?;
    let r = clt_test(&b, &ns, cfg.params.threshold.unwrap_or(0.02)).map_err(numeric("stochastics"))?;
    let mut table = Table::new("clt", &["n", "sigma", "ks", "p_value"]);
    for row in &r.rows {
        table.push(vec![row.n.to_string(), num(row.sigma), num(row.ks), num(row.p_value)]);
    }
    let mut qq = Table::new("clt_quantiles", &["empirical", "normal"]);
    for (e, z) in &r.quantiles {
        qq.push(vec![num(*e), num(*z)]);
    }
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("clt", &r.stat, &table));
    p.plots.push(PlotSeries { name: "clt_qq".into(), columns: ("empirical".into(), "normal".into()), points: r.quantiles.clone() });
    p.samples = (count * (n_max + 30)) as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    p.tables.push(qq);
    Ok(p)
}

fn lil(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let n_max = cfg.params.n_max.unwrap_or(1 << 14);
    let count = cfg.params.count.unwrap_or(200);
    let b = birkhoff_sums(seq, list, n_max, count, &sample_options(cfg)?).map_err(numeric("stochastics"))?;
    let r = lil_check(&b).map_err(numeric("stochastics"))?;
    let mut table = Table::new("lil", &["n_max", "start", "median", "q1", "q3", "degenerate"]);
    table.push(vec![
        n_max.to_string(),
        r.start.map(|s| s.to_string()).unwrap_or_default(),
        num(r.median),
        num(r.quartiles.0),
        num(r.quartiles.1),
        r.degenerate.to_string(),
    ]);
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("lil", &r.stat, &table));
    p.samples = (count * (n_max + 30)) as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    Ok(p)
}

fn asip(cfg: &ExperimentConfig, seq: &MapSequence, list: &[Observable]) -> Result<Parts, CliError> {
    let prm = &cfg.params;
    let n_max = prm.n_max.unwrap_or(1001);
    let count = prm.count.unwrap_or(300);
    let mut budget = HBudget::default();
    if let Some(c) = prm.full_cap {
        budget.full_cap = c;
    }
    if let Some(m) = prm.max_depth {
        budget.max_depth = m;
    }
    if let Some(n) = prm.paths {
        budget.paths = n;
    }
    let md = martingale_decompose(seq, list, n_max, count, budget, prm.conditional.unwrap_or(false), &sample_options(cfg)?)
        .map_err(numeric("stochastics"))?;
    let gamma = prm.gamma.unwrap_or(defaults::GAMMA);
    let eps = prm.eps.unwrap_or(defaults::EPS);
    let tail_index = prm.tail_index.unwrap_or(1000.min(n_max - 1));
    let r = asip_condition_check(&md, gamma, eps, tail_index, prm.tail_tol.unwrap_or(1e-3)).map_err(numeric("stochastics"))?;
    let orth = md.orthogonality();
    let mut series = Table::new("asip_series", &["j", "term", "partial_sum"]);
    for (j, t, s) in &r.series {
        series.push(vec![j.to_string(), num(*t), num(*s)]);
    }
    let mut moments = Table::new("asip_moments", &["j", "fourth_moment", "nu2"]);
    for (j, m) in &r.fourth_moments {
        moments.push(vec![j.to_string(), num(*m), num(md.nu2[*j])]);
    }
    let mut p = Parts::new();
    p.verdicts.push(Verdict::from_stat("asip conditions", &r.stat, &series));
    p.verdicts.push(Verdict {
        name: "martingale orthogonality".into(),
        pass: orth.pass,
        statistic: orth.exceed as f64,
        threshold: orth.allowed as f64,
        count,
        seed: cfg.seed,
        csv: moments.file_name(),
    });
    p.plots.push(PlotSeries {
        name: "asip_terms".into(),
        columns: ("j".into(), "term".into()),
        points: r.series.iter().map(|(j, t, _)| (*j as f64, *t)).collect(),
    });
    p.samples = (count * n_max * (1 << budget.full_cap.min(budget.max_depth))) as u64;
    p.detail = serde_json::json!({ "asip": r, "orthogonality": orth });
    p.tables.push(series);
    p.tables.push(moments);
    Ok(p)
}

fn admissibility(cfg: &ExperimentConfig, seq: &MapSequence) -> Result<Parts, CliError> {
    let n_max = cfg.params.n_max.unwrap_or(200);
    let r = check_admissibility(seq, n_max).map_err(numeric("rational_maps"))?;
    let mut table = Table::new("admissibility", &["j", "dist", "cesaro_average", "per_index_rate"]);
    for j in 0..=n_max {
        let at = |v: &[f64]| if j >= 1 { num(v[j - 1]) } else { String::new() };
        table.push(vec![j.to_string(), num(r.dists[j]), at(&r.cesaro_averages), at(&r.per_index_rates)]);
    }
    let tol = greenlab::maps::FIT_TOL;
    let mut p = Parts::new();
    p.verdicts.push(Verdict {
        name: "condition A".into(),
        pass: r.verdict_a.pass,
        statistic: r.verdict_a.trend,
        threshold: -tol,
        count: n_max,
        seed: cfg.seed,
        csv: table.file_name(),
    });
    p.verdicts.push(Verdict {
        name: "condition B".into(),
        pass: r.verdict_b.pass,
        statistic: r.verdict_b.estimate.abs(),
        threshold: tol,
        count: n_max,
        seed: cfg.seed,
        csv: table.file_name(),
    });
    p.plots.push(PlotSeries {
        name: "admissibility_cesaro".into(),
        columns: ("n".into(), "cesaro_average".into()),
        points: r.cesaro_averages.iter().enumerate().map(|(i, c)| ((i + 1) as f64, *c)).collect(),
    });
    p.samples = n_max as u64;
    p.detail = to_json(&r);
    p.tables.push(table);
    Ok(p)
}
