//! Dispatch a parsed experiment to the right module and write its artifacts:
//! one CSV (plot-ready) plus a `key = value` run manifest with the config
//! echo, version, seed, episode totals, and headline results.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::config::{
    BackendChoice, ClcMethodConfig, CompareConfig, ExperimentConfig, LearnBetaMethodConfig,
    MethodConfig, SweepConfig,
};
use super::csv::{fmt_f64, write_manifest, CsvTable};
use crate::baselines::{run_pg, run_q, run_rs, LearningCurve, PgConfig, QLearnConfig, RsConfig};
use crate::beta_learn::{learn_beta, BetaLearnConfig, BetaTrace, StepSizeRule};
use crate::clc_dp::BetaVector;
use crate::coupling::{execute_clc, ClcOutcome, DpBackend, ExecuteOptions};
use crate::error::{Error, Result};
use crate::model::{CostSchedule, RealSystemOracle, SystemInstance};
use crate::riccati;

#[derive(Debug)]
pub struct RunReport {
    pub output: PathBuf,
    pub manifest: PathBuf,
    pub total_episodes: u64,
    pub summary: Vec<(String, String)>,
}

/// No reported cost may undercut the exact optimum (beyond rounding).
fn check_reference(jr: f64, reference: f64) -> Result<()> {
    if jr < reference - 1e-9 * reference.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "reported cost {jr} undercuts the exact optimum {reference}"
        )));
    }
    Ok(())
}

fn reference_optimal(instance: &SystemInstance, cost: &CostSchedule) -> Result<f64> {
    Ok(riccati::solve(instance.a_true, instance.b_true, cost, instance.x0)?.optimal_cost)
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (table, total_episodes, mut summary) = match &config.method_config {
        MethodConfig::Riccati => run_riccati(config)?,
        MethodConfig::Clc(c) => run_clc(config, c)?,
        MethodConfig::LearnBeta(c) => run_learn_beta(config, c)?,
        MethodConfig::Pg(c) => run_pg_method(config, c)?,
        MethodConfig::Rs(c) => run_rs_method(config, c)?,
        MethodConfig::Q(c) => run_q_method(config, c)?,
        MethodConfig::SweepBeta(c) => run_sweep(config, c)?,
        MethodConfig::Compare(c) => run_compare(config, c)?,
    };

    table.write(&config.output)?;
    let manifest_path = manifest_path(&config.output);
    let mut entries: Vec<(String, String)> = vec![
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ("timestamp_unix".into(), started.to_string()),
        ("method".into(), config.method.tag().into()),
        ("seed".into(), config.seed.to_string()),
        ("output".into(), config.output.display().to_string()),
        ("total_episodes".into(), total_episodes.to_string()),
    ];
    for (k, v) in &config.raw {
        entries.push((format!("config.{k}"), v.clone()));
    }
    entries.append(&mut summary);
    write_manifest(&manifest_path, &entries)?;

    Ok(RunReport {
        output: config.output.clone(),
        manifest: manifest_path,
        total_episodes,
        summary: entries,
    })
}

fn manifest_path(output: &std::path::Path) -> PathBuf {
    let mut os = output.as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

type MethodResult = (CsvTable, u64, Vec<(String, String)>);

fn run_riccati(config: &ExperimentConfig) -> Result<MethodResult> {
    let instance = &config.instance;
    let sol = riccati::solve(instance.a_true, instance.b_true, &config.cost, instance.x0)?;
    let traj =
        riccati::optimal_policy_controls(&sol, instance.a_true, instance.b_true, instance.x0)?;
    let mut table = CsvTable::new(vec!["stage", "gain", "value_coeff"]);
    for t in 0..=instance.horizon {
        table.push_row(vec![
            t.to_string(),
            if t < instance.horizon {
                fmt_f64(sol.gains[t])
            } else {
                String::new()
            },
            fmt_f64(sol.value_coeffs[t]),
        ]);
    }
    let summary = vec![
        ("result.optimal_cost".into(), fmt_f64(sol.optimal_cost)),
        (
            "result.gains".into(),
            sol.gains.iter().map(|g| fmt_f64(*g)).collect::<Vec<_>>().join(","),
        ),
        (
            "result.controls".into(),
            traj.controls.iter().map(|u| fmt_f64(*u)).collect::<Vec<_>>().join(","),
        ),
    ];
    Ok((table, 0, summary))
}

fn backend_for(choice: BackendChoice, config: &ExperimentConfig) -> DpBackend {
    match choice {
        BackendChoice::Grid => DpBackend::Grid(config.grids),
        BackendChoice::ClosedForm => DpBackend::ClosedForm,
    }
}

fn run_clc(config: &ExperimentConfig, method: &ClcMethodConfig) -> Result<MethodResult> {
    let instance = &config.instance;
    let oracle = RealSystemOracle::from_instance(instance);
    let beta = BetaVector::new(method.beta.clone())?;
    let backend = backend_for(method.backend, config);
    let options = ExecuteOptions {
        candidate_budget: method.candidate_budget,
        refine_sweeps: method.refine_sweeps,
        residual_threshold: method.residual_threshold,
        collect_trace: method.trace_path.is_some(),
        table_dump: method.table_path.clone(),
    };
    let outcome = execute_clc(
        &beta,
        instance.a_model,
        instance.b_model,
        &config.cost,
        instance.x0,
        &backend,
        &options,
        &oracle,
    )?;
    let reference = reference_optimal(instance, &config.cost)?;
    check_reference(outcome.jr, reference)?;
    debug_assert_eq!(outcome.episodes_used, oracle.episodes());

    if let Some(trace_path) = &method.trace_path {
        write_candidate_trace(trace_path, &outcome, instance.horizon)?;
    }

    let mut table = CsvTable::new(vec![
        "stage",
        "control",
        "model_state",
        "real_next_state",
        "candidate_point",
        "jr",
        "riccati_optimal",
        "episodes",
        "residual",
    ]);
    for t in 0..instance.horizon {
        table.push_row(vec![
            t.to_string(),
            fmt_f64(outcome.controls[t]),
            fmt_f64(outcome.model_states[t]),
            fmt_f64(outcome.real_states[t + 1]),
            fmt_f64(outcome.candidate[t]),
            fmt_f64(outcome.jr),
            fmt_f64(reference),
            outcome.episodes_used.to_string(),
            fmt_f64(outcome.residual),
        ]);
    }
    let summary = vec![
        ("result.jr".into(), fmt_f64(outcome.jr)),
        ("result.riccati_optimal".into(), fmt_f64(reference)),
        ("result.residual".into(), fmt_f64(outcome.residual)),
        (
            "result.controls".into(),
            outcome.controls.iter().map(|u| fmt_f64(*u)).collect::<Vec<_>>().join(","),
        ),
        ("result.episodes".into(), outcome.episodes_used.to_string()),
    ];
    Ok((table, outcome.episodes_used, summary))
}

fn write_candidate_trace(
    path: &std::path::Path,
    outcome: &ClcOutcome,
    horizon: usize,
) -> Result<()> {
    let mut header = vec!["candidate_index".to_string()];
    for t in 1..=horizon {
        header.push(format!("xhat_{t}"));
    }
    header.extend(["residual".to_string(), "jc".to_string(), "jr".to_string()]);
    let mut table = CsvTable::new(header);
    if let Some(trace) = &outcome.trace {
        for eval in trace {
            let mut row = vec![eval.index.to_string()];
            row.extend(eval.points.iter().map(|p| fmt_f64(*p)));
            row.push(fmt_f64(eval.residual));
            row.push(fmt_f64(eval.jc));
            row.push(fmt_f64(eval.jr));
            table.push_row(row);
        }
    }
    table.write(path)
}

fn step_rule_of(method: &LearnBetaMethodConfig) -> StepSizeRule {
    match method.alpha_kappa {
        Some(kappa) => StepSizeRule::Diminishing {
            alpha0: method.alpha,
            kappa,
        },
        None => StepSizeRule::Constant(method.alpha),
    }
}

fn learn_beta_trace(
    config: &ExperimentConfig,
    method: &LearnBetaMethodConfig,
    oracle: &RealSystemOracle,
) -> Result<BetaTrace> {
    let instance = &config.instance;
    let backend = backend_for(method.backend, config);
    let options = ExecuteOptions {
        candidate_budget: method.candidate_budget,
        residual_threshold: method.residual_threshold,
        ..ExecuteOptions::default()
    };
    let learn_config = BetaLearnConfig {
        beta_init: BetaVector::new(method.beta_init.clone())?,
        step_rule: step_rule_of(method),
        fd_delta: method.fd_delta,
        max_iters: method.max_iters,
        convergence_tol: method.tol,
        fix_terminal: method.fix_terminal,
        divergence_factor: method.divergence_factor,
    };
    learn_beta(&learn_config, |beta: &BetaVector| {
        let outcome = execute_clc(
            beta,
            instance.a_model,
            instance.b_model,
            &config.cost,
            instance.x0,
            &backend,
            &options,
            oracle,
        )?;
        Ok((outcome.jr, outcome.episodes_used))
    })
}

fn run_learn_beta(
    config: &ExperimentConfig,
    method: &LearnBetaMethodConfig,
) -> Result<MethodResult> {
    let oracle = RealSystemOracle::from_instance(&config.instance);
    let trace = learn_beta_trace(config, method, &oracle)?;
    let reference = reference_optimal(&config.instance, &config.cost)?;

    let mut header = vec!["iteration".to_string()];
    for t in 1..=config.instance.horizon {
        header.push(format!("beta_{t}"));
    }
    header.extend([
        "j_tilde".to_string(),
        "episodes_cumulative".to_string(),
        "riccati_optimal".to_string(),
    ]);
    let mut table = CsvTable::new(header);
    for it in &trace.iterates {
        check_reference(it.j_value, reference)?;
        let mut row = vec![it.iteration.to_string()];
        row.extend(it.beta.values().iter().map(|b| fmt_f64(*b)));
        row.push(fmt_f64(it.j_value));
        row.push(it.episodes_cumulative.to_string());
        row.push(fmt_f64(reference));
        table.push_row(row);
    }
    let best = trace.best();
    let total = oracle.episodes();
    debug_assert_eq!(
        total,
        trace.iterates.last().map_or(0, |it| it.episodes_cumulative)
    );
    let summary = vec![
        (
            "result.best_beta".into(),
            best.beta.values().iter().map(|b| fmt_f64(*b)).collect::<Vec<_>>().join(","),
        ),
        ("result.best_j".into(), fmt_f64(best.j_value)),
        ("result.best_iteration".into(), best.iteration.to_string()),
        ("result.riccati_optimal".into(), fmt_f64(reference)),
        ("result.diverged".into(), trace.diverged.to_string()),
        ("result.episodes".into(), total.to_string()),
    ];
    Ok((table, total, summary))
}

fn curve_table(
    method: &str,
    seed: u64,
    curve: &LearningCurve,
    reference: f64,
    table: &mut CsvTable,
) -> Result<()> {
    for point in &curve.points {
        check_reference(point.greedy_cost, reference)?;
        table.push_row(vec![
            method.to_string(),
            seed.to_string(),
            point.episodes.to_string(),
            fmt_f64(point.greedy_cost),
            fmt_f64(reference),
        ]);
    }
    Ok(())
}

fn baseline_header() -> Vec<&'static str> {
    vec!["method", "seed", "episodes", "greedy_jr", "riccati_optimal"]
}

fn run_pg_method(config: &ExperimentConfig, method: &PgConfig) -> Result<MethodResult> {
    let oracle = RealSystemOracle::from_instance(&config.instance);
    let curve = run_pg(method, &oracle, &config.cost, config.instance.x0)?;
    finish_baseline(config, "pg", method.seed, &oracle, curve)
}

fn run_rs_method(config: &ExperimentConfig, method: &RsConfig) -> Result<MethodResult> {
    let oracle = RealSystemOracle::from_instance(&config.instance);
    let curve = run_rs(method, &oracle, &config.cost, config.instance.x0)?;
    finish_baseline(config, "rs", method.seed, &oracle, curve)
}

fn run_q_method(config: &ExperimentConfig, method: &QLearnConfig) -> Result<MethodResult> {
    let oracle = RealSystemOracle::from_instance(&config.instance);
    let curve = run_q(
        method,
        &oracle,
        &config.cost,
        config.instance.x0,
        config.instance.horizon,
    )?;
    finish_baseline(config, "q", method.seed, &oracle, curve)
}

fn finish_baseline(
    config: &ExperimentConfig,
    tag: &str,
    seed: u64,
    oracle: &RealSystemOracle,
    curve: LearningCurve,
) -> Result<MethodResult> {
    let reference = reference_optimal(&config.instance, &config.cost)?;
    let mut table = CsvTable::new(baseline_header());
    curve_table(tag, seed, &curve, reference, &mut table)?;
    let total = oracle.episodes();
    let final_best = curve.best_so_far().points.last().map(|p| p.greedy_cost);
    let summary = vec![
        ("result.riccati_optimal".into(), fmt_f64(reference)),
        (
            "result.final_best_jr".into(),
            final_best.map(fmt_f64).unwrap_or_default(),
        ),
        ("result.episodes".into(), total.to_string()),
    ];
    Ok((table, total, summary))
}

fn run_sweep(config: &ExperimentConfig, sweep: &SweepConfig) -> Result<MethodResult> {
    let instance = &config.instance;
    let cost = &config.cost;
    let beta_terminal = -cost.terminal_q();
    let beta1_values: Vec<f64> = (0..sweep.beta1_count)
        .map(|i| {
            sweep.beta1_min
                + i as f64 * (sweep.beta1_max - sweep.beta1_min)
                    / (sweep.beta1_count - 1) as f64
        })
        .collect();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for &a in &sweep.a_true_values {
        for &b1 in &beta1_values {
            cells.push((a, b1));
        }
    }

    struct Cell {
        a_true: f64,
        beta1: f64,
        status: &'static str,
        jr: Option<f64>,
        reference: f64,
        episodes: u64,
    }

    let results: Vec<Cell> = cells
        .par_iter()
        .map(|&(a_true, beta1)| -> Result<Cell> {
            let true_instance = SystemInstance::new(
                a_true,
                instance.b_true,
                instance.a_model,
                instance.b_model,
                instance.x0,
                instance.horizon,
            )?;
            let reference = reference_optimal(&true_instance, cost)?;
            let oracle = RealSystemOracle::from_instance(&true_instance);
            let beta = BetaVector::new(vec![beta1, beta_terminal])?;
            let backend = backend_for(sweep.backend, config);
            let outcome = execute_clc(
                &beta,
                instance.a_model,
                instance.b_model,
                cost,
                instance.x0,
                &backend,
                &ExecuteOptions::default(),
                &oracle,
            );
            let (status, jr): (&'static str, Option<f64>) = match outcome {
                Ok(o) => {
                    check_reference(o.jr, reference)?;
                    ("ok", Some(o.jr))
                }
                Err(Error::NoFixedPoint { .. }) => ("no_fixed_point", None),
                Err(Error::IllPosed { .. }) => ("ill_posed", None),
                Err(e) => return Err(e),
            };
            Ok(Cell {
                a_true,
                beta1,
                status,
                jr,
                reference,
                episodes: oracle.episodes(),
            })
        })
        .collect::<Result<_>>()?;

    let mut results = results;
    results.sort_by(|l, r| {
        l.a_true
            .total_cmp(&r.a_true)
            .then(l.beta1.total_cmp(&r.beta1))
    });

    let mut table = CsvTable::new(vec!["a_true", "beta1", "status", "jr", "riccati_optimal"]);
    let mut total = 0u64;
    for cell in &results {
        total += cell.episodes;
        table.push_row(vec![
            fmt_f64(cell.a_true),
            fmt_f64(cell.beta1),
            cell.status.to_string(),
            cell.jr.map(fmt_f64).unwrap_or_default(),
            fmt_f64(cell.reference),
        ]);
    }

    // headline: per instance, the best beta_1 on the sweep grid
    let mut summary = Vec::new();
    for &a in &sweep.a_true_values {
        let best = results
            .iter()
            .filter(|c| c.a_true == a && c.jr.is_some())
            .min_by(|l, r| l.jr.unwrap().total_cmp(&r.jr.unwrap()));
        if let Some(cell) = best {
            summary.push((format!("result.argmin_beta1[{a}]"), fmt_f64(cell.beta1)));
            summary.push((format!("result.min_jr[{a}]"), fmt_f64(cell.jr.unwrap())));
            summary.push((
                format!("result.riccati_optimal[{a}]"),
                fmt_f64(cell.reference),
            ));
        }
    }
    Ok((table, total, summary))
}

fn run_compare(config: &ExperimentConfig, compare: &CompareConfig) -> Result<MethodResult> {
    let reference = reference_optimal(&config.instance, &config.cost)?;

    // The table-and-search pipeline is deterministic, so one run serves all
    // seeds; its curve is the best-so-far objective over learning iterations.
    let clc_oracle = RealSystemOracle::from_instance(&config.instance);
    let trace = learn_beta_trace(config, &compare.learn_beta, &clc_oracle)?;
    let mut best = f64::INFINITY;
    let clc_curve = LearningCurve {
        points: trace
            .iterates
            .iter()
            .map(|it| {
                best = best.min(it.j_value);
                crate::baselines::CurvePoint {
                    episodes: it.episodes_cumulative,
                    greedy_cost: best,
                }
            })
            .collect(),
    };
    let clc_episodes = clc_oracle.episodes();

    enum Kind {
        Pg,
        Rs,
        Q,
    }
    let mut jobs: Vec<(Kind, u64)> = Vec::new();
    for s in 0..compare.seeds {
        jobs.push((Kind::Pg, config.seed + s));
        jobs.push((Kind::Rs, config.seed + s));
        jobs.push((Kind::Q, config.seed + s));
    }
    let runs: Vec<(&'static str, u64, LearningCurve, u64)> = jobs
        .par_iter()
        .map(|(kind, seed)| -> Result<(&'static str, u64, LearningCurve, u64)> {
            let oracle = RealSystemOracle::from_instance(&config.instance);
            let (tag, curve) = match kind {
                Kind::Pg => {
                    let cfg = PgConfig {
                        seed: *seed,
                        ..compare.pg.clone()
                    };
                    ("pg", run_pg(&cfg, &oracle, &config.cost, config.instance.x0)?)
                }
                Kind::Rs => {
                    let cfg = RsConfig {
                        seed: *seed,
                        ..compare.rs.clone()
                    };
                    ("rs", run_rs(&cfg, &oracle, &config.cost, config.instance.x0)?)
                }
                Kind::Q => {
                    let cfg = QLearnConfig {
                        seed: *seed,
                        ..compare.q.clone()
                    };
                    (
                        "q",
                        run_q(
                            &cfg,
                            &oracle,
                            &config.cost,
                            config.instance.x0,
                            config.instance.horizon,
                        )?,
                    )
                }
            };
            Ok((tag, *seed, curve.best_so_far(), oracle.episodes()))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(&'static str, u64, LearningCurve)> = Vec::new();
    rows.push(("clc", config.seed, clc_curve));
    let mut per_method_episodes: Vec<(String, u64)> = vec![("clc".into(), clc_episodes)];
    for (tag, seed, curve, episodes) in runs {
        per_method_episodes.push((format!("{tag}[{seed}]"), episodes));
        rows.push((tag, seed, curve));
    }
    rows.sort_by(|l, r| l.0.cmp(r.0).then(l.1.cmp(&r.1)));

    let mut table = CsvTable::new(vec![
        "method",
        "seed",
        "episodes",
        "best_jr",
        "riccati_optimal",
    ]);
    for (tag, seed, curve) in &rows {
        curve_table(tag, *seed, curve, reference, &mut table)?;
    }

    let total: u64 = per_method_episodes.iter().map(|(_, e)| e).sum();
    let mut summary = vec![("result.riccati_optimal".into(), fmt_f64(reference))];
    for (name, episodes) in per_method_episodes {
        summary.push((format!("result.episodes.{name}"), episodes.to_string()));
    }
    Ok((table, total, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path(std::path::Path::new("out/run.csv")),
            PathBuf::from("out/run.csv.manifest")
        );
    }

    #[test]
    fn reference_check_rejects_undercut() {
        assert!(check_reference(0.75, 0.75).is_ok());
        assert!(check_reference(0.76, 0.75).is_ok());
        assert!(check_reference(0.74, 0.75).is_err());
    }

    #[test]
    fn riccati_method_reports_paper_values() {
        let text = "\
method = riccati
instance.a_true = 2
instance.b_true = 1
instance.a_model = 1
instance.b_model = 1
instance.x0 = 0.5
instance.horizon = 2
cost.q = 0,1,1
cost.r = 1,1
";
        let mut config = ExperimentConfig::parse(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        config.output = dir.path().join("riccati.csv");
        let report = run(&config).unwrap();
        let optimal = report
            .summary
            .iter()
            .find(|(k, _)| k == "result.optimal_cost")
            .unwrap();
        assert_eq!(optimal.1, fmt_f64(0.75));
        let gains = report
            .summary
            .iter()
            .find(|(k, _)| k == "result.gains")
            .unwrap();
        assert_eq!(gains.1, format!("{},{}", fmt_f64(-1.5), fmt_f64(-1.0)));
        assert_eq!(report.total_episodes, 0);
        assert!(report.output.exists());
        assert!(report.manifest.exists());
    }
}
