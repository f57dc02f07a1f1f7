use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use oneshot_auction::accountant::{single_step_delta, single_step_delta_linear_sigma};
use oneshot_auction::evaluator::{aggregate_row, evaluate_sample, sweep_sigma};
use oneshot_auction::io::{
    read_sample_csv, write_sample_csv, write_summary_csv, write_trace_csv, SampleRow,
};
use oneshot_auction::trainer::train_one_shot;
use oneshot_auction::{AccountantReport, Error, RunConfig, SampleReport, SweepRow};
use serde::Serialize;

use crate::chart::{line_chart, Series};
use crate::EvalOverrides;

/// Epsilon at which the manifest quotes the single-release delta bound.
const REFERENCE_EPSILON: f64 = 0.5;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Cap(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Cap(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Cap(m) | CliError::Diverged(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::MisreportCap { .. } => CliError::Cap(e.to_string()),
            Error::Diverged { .. } | Error::NonFinite { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct SingleStepDelta {
    epsilon: f64,
    delta: f64,
    delta_linear_sigma: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: RunConfig,
    seeds: Vec<u64>,
    started_at_unix: f64,
    finished_at_unix: f64,
    outputs: Vec<String>,
    accountant: Vec<AccountantEntry>,
}

#[derive(Serialize)]
struct AccountantEntry {
    /// Noise multiplier label (`no-dp` when disabled).
    sigma: String,
    report: Option<AccountantReport>,
    single_step: Option<SingleStepDelta>,
}

/// Seconds since the Unix epoch.
fn timestamp(t: SystemTime) -> f64 {
    t.duration_since(SystemTime::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn accountant_entry(cfg: &RunConfig, sigma: Option<f64>) -> Result<AccountantEntry, CliError> {
    let label = sigma.map_or_else(|| "no-dp".to_string(), |s| s.to_string());
    let Some(s) = sigma.filter(|s| *s > 0.0) else {
        return Ok(AccountantEntry {
            sigma: label,
            report: None,
            single_step: None,
        });
    };
    let mut ledger = oneshot_auction::PrivacyLedger::new(s, cfg.network.n as u64);
    ledger.steps = cfg.network.n as u64 * cfg.train.total_steps as u64;
    Ok(AccountantEntry {
        sigma: label,
        report: ledger.report(cfg.target_delta)?,
        single_step: Some(SingleStepDelta {
            epsilon: REFERENCE_EPSILON,
            delta: single_step_delta(s, REFERENCE_EPSILON)?,
            delta_linear_sigma: single_step_delta_linear_sigma(s, REFERENCE_EPSILON)?,
        }),
    })
}

fn config_sigma(cfg: &RunConfig) -> Option<f64> {
    cfg.train.dp.enabled.then_some(cfg.train.dp.sigma)
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    RunConfig::from_json_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut RunConfig, o: &EvalOverrides) -> Result<(), CliError> {
    if let Some(s) = o.samples {
        cfg.eval.samples = s;
    }
    if let Some(seeds) = &o.seeds {
        cfg.eval.seeds = seeds.clone();
    }
    if let Some(b) = o.benchmark {
        cfg.eval.benchmark = b;
    }
    cfg.validate()?;
    if let Some(jobs) = o.jobs {
        if jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

pub fn cmd_train(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let started = SystemTime::now();
    let cfg = load_config(config_path)?;
    create_dir(out)?;
    let profile = cfg.training_profile()?;

    let params_path = out.join("params.json");
    let trace_path = out.join("trace.csv");
    let manifest_path = out.join("manifest.json");

    let trained = match train_one_shot(&profile, &cfg.network, &cfg.train) {
        Ok(t) => t,
        Err(Error::Diverged {
            step,
            reason,
            trace,
        }) => {
            // Keep the partial trace for diagnosis.
            write_trace_csv(create(&trace_path)?, &trace)?;
            return Err(CliError::Diverged(format!(
                "training diverged at step {step}: {reason} (partial trace in {})",
                trace_path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    write_json(&params_path, &trained.params.snapshot(cfg.train.seed))?;
    write_trace_csv(create(&trace_path)?, &trained.trace)?;

    let report = if cfg.train.dp.enabled {
        trained.ledger.report(cfg.target_delta)?
    } else {
        None
    };
    let mut entry = accountant_entry(&cfg, config_sigma(&cfg))?;
    entry.report = report;

    let manifest = RunManifest {
        command: "train",
        seeds: vec![cfg.train.seed],
        config: cfg,
        started_at_unix: timestamp(started),
        finished_at_unix: timestamp(SystemTime::now()),
        outputs: display(&[params_path, trace_path, manifest_path.clone()]),
        accountant: vec![entry],
    };
    write_json(&manifest_path, &manifest)
}

pub fn cmd_evaluate(
    config_path: &Path,
    out: &Path,
    overrides: &EvalOverrides,
) -> Result<(), CliError> {
    let started = SystemTime::now();
    let mut cfg = load_config(config_path)?;
    apply_overrides(&mut cfg, overrides)?;
    create_dir(out)?;
    let sigma = config_sigma(&cfg);

    let (row, reports): (SweepRow, Vec<SampleReport>) = match &cfg.profile {
        Some(profile) => {
            let report = evaluate_sample(profile, 0, &cfg.network, &cfg.train, &cfg.eval)?;
            let reports = vec![report];
            let row = aggregate_row(sigma, std::slice::from_ref(&reports), cfg.eval.benchmark);
            (row, reports)
        }
        None => {
            let mut sweep = sweep_sigma(&cfg.network, &cfg.train, &cfg.eval, &[sigma])?;
            (sweep.rows.remove(0), sweep.reports.remove(0))
        }
    };

    let samples_path = out.join("samples.csv");
    let summary_path = out.join("summary.csv");
    let manifest_path = out.join("manifest.json");
    write_sample_csv(create(&samples_path)?, &reports)?;
    write_summary_csv(create(&summary_path)?, std::iter::once(&row))?;
    for r in reports.iter().filter(|r| r.is_failed()) {
        eprintln!(
            "warning: sample {} failed: {}",
            r.sample_id,
            r.failure.as_deref().unwrap_or("unknown")
        );
    }

    let seeds = if cfg.profile.is_some() {
        vec![cfg.train.seed]
    } else {
        cfg.eval.seeds.clone()
    };
    let manifest = RunManifest {
        command: "evaluate",
        seeds,
        accountant: vec![accountant_entry(&cfg, sigma)?],
        config: cfg,
        started_at_unix: timestamp(started),
        finished_at_unix: timestamp(SystemTime::now()),
        outputs: display(&[samples_path, summary_path, manifest_path.clone()]),
    };
    write_json(&manifest_path, &manifest)
}

/// Parses `"0.03,0.05"`; blank entries are rejected.
pub fn parse_sigmas(list: &str) -> Result<Vec<f64>, CliError> {
    if list.trim().is_empty() {
        return Err(CliError::Input(
            "--sigmas must list at least one noise multiplier".into(),
        ));
    }
    list.split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("--sigmas: cannot parse {s:?}")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CliError::Input(format!(
                    "--sigmas: {v} is not a finite value >= 0"
                )));
            }
            Ok(v)
        })
        .collect()
}

pub fn cmd_sweep(
    config_path: &Path,
    sigmas: &str,
    no_dp: bool,
    out: &Path,
    overrides: &EvalOverrides,
) -> Result<(), CliError> {
    let started = SystemTime::now();
    let sigma_values = parse_sigmas(sigmas)?;
    let mut cfg = load_config(config_path)?;
    apply_overrides(&mut cfg, overrides)?;
    create_dir(out)?;

    let mut levels: Vec<Option<f64>> = Vec::new();
    if no_dp {
        levels.push(None);
    }
    levels.extend(sigma_values.into_iter().map(Some));

    let sweep = sweep_sigma(&cfg.network, &cfg.train, &cfg.eval, &levels)?;

    let summary_path = out.join("summary.csv");
    let manifest_path = out.join("manifest.json");
    write_summary_csv(create(&summary_path)?, &sweep.rows)?;
    let mut outputs = vec![summary_path];
    for (row, reports) in sweep.rows.iter().zip(&sweep.reports) {
        let path = out.join(format!("samples_sigma_{}.csv", row.sigma_label()));
        write_sample_csv(create(&path)?, reports)?;
        outputs.push(path);
        if row.failed_samples > 0 {
            eprintln!(
                "warning: sigma {}: {} of {} samples failed",
                row.sigma_label(),
                row.failed_samples,
                row.samples
            );
        }
    }
    outputs.push(manifest_path.clone());

    let accountant = levels
        .iter()
        .map(|&s| accountant_entry(&cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        command: "sweep",
        seeds: cfg.eval.seeds.clone(),
        config: cfg,
        started_at_unix: timestamp(started),
        finished_at_unix: timestamp(SystemTime::now()),
        outputs: display(&outputs),
        accountant,
    };
    write_json(&manifest_path, &manifest)
}

/// One line per `(file, sample_id)`: the misreport regrets `u1_j - u1_0`
/// and the revenue of every auction, both against `j`.
pub fn chart_series(files: &[(String, Vec<SampleRow>)]) -> (Vec<Series>, Vec<Series>) {
    let mut regret = Vec::new();
    let mut revenue = Vec::new();
    for (name, rows) in files {
        let mut groups: BTreeMap<u64, Vec<&SampleRow>> = BTreeMap::new();
        for r in rows {
            groups.entry(r.sample_id).or_default().push(r);
        }
        for (id, mut group) in groups {
            group.sort_by_key(|r| r.j);
            let label = format!("{name} / sample {id}");
            let u0 = group.iter().find(|r| r.j == 0).and_then(|r| r.u1);
            let regret_points: Vec<(f64, f64)> = match u0 {
                Some(u0) => group
                    .iter()
                    .filter(|r| r.j > 0)
                    .filter_map(|r| r.u1.map(|u| (r.j as f64, u - u0)))
                    .collect(),
                None => Vec::new(),
            };
            let revenue_points: Vec<(f64, f64)> = group
                .iter()
                .filter_map(|r| r.revenue.map(|v| (r.j as f64, v)))
                .collect();
            regret.push(Series {
                label: label.clone(),
                points: regret_points,
            });
            revenue.push(Series {
                label,
                points: revenue_points,
            });
        }
    }
    (regret, revenue)
}

pub fn cmd_report(csv_paths: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut files = Vec::with_capacity(csv_paths.len());
    for path in csv_paths {
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        let rows = read_sample_csv(f).map_err(|e| io_err(path, e))?;
        let name = path.file_stem().map_or_else(
            || path.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        files.push((name, rows));
    }
    if files.iter().all(|(_, rows)| rows.is_empty()) {
        return Err(CliError::Input(
            "no data rows in the given CSV files".into(),
        ));
    }
    let (regret, revenue) = chart_series(&files);
    if regret.iter().chain(&revenue).all(|s| s.points.is_empty()) {
        return Err(CliError::Input(
            "every auction in the given CSV files failed".into(),
        ));
    }
    create_dir(out)?;
    let regret_svg = line_chart(
        "Misreport regret",
        "misreport j",
        "u1(j) - u1(truthful)",
        &regret,
    );
    let revenue_svg = line_chart("Revenue", "auction j", "revenue", &revenue);
    let write = |name: &str, body: String| {
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))
    };
    write("regret.svg", regret_svg)?;
    write("revenue.svg", revenue_svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_list_parsing() {
        assert_eq!(
            parse_sigmas("0.03,0.05, 0.09").unwrap(),
            vec![0.03, 0.05, 0.09]
        );
        assert_eq!(parse_sigmas("").unwrap_err().exit_code(), 2);
        assert!(parse_sigmas("0.1,,0.2").is_err());
        assert!(parse_sigmas("-1").is_err());
        assert!(parse_sigmas("nan").is_err());
    }

    #[test]
    fn error_exit_codes() {
        let cap: CliError = Error::MisreportCap {
            requested: 10,
            cap: 4,
        }
        .into();
        assert_eq!(cap.exit_code(), 3);
        let cfg: CliError = Error::InvalidValue("x".into()).into();
        assert_eq!(cfg.exit_code(), 2);
        let div: CliError = Error::NonFinite {
            alloc_norm: 1.0,
            pay_norm: f64::NAN,
        }
        .into();
        assert_eq!(div.exit_code(), 4);
    }

    #[test]
    fn series_group_per_sample() {
        let row = |sample_id, j, u1: Option<f64>| SampleRow {
            sample_id,
            j,
            misreport: vec![0.0],
            u1,
            revenue: u1,
        };
        let files = vec![
            (
                "a".to_string(),
                vec![
                    row(0, 0, Some(0.5)),
                    row(0, 1, Some(0.7)),
                    row(1, 0, Some(0.1)),
                ],
            ),
            ("b".to_string(), vec![row(0, 0, None), row(0, 1, Some(0.2))]),
        ];
        let (regret, revenue) = chart_series(&files);
        assert_eq!(regret.len(), 3);
        assert_eq!(revenue.len(), 3);
        assert!((regret[0].points[0].1 - 0.2).abs() < 1e-12);
        // No truthful utility, so no regret points for that sample.
        assert!(regret[2].points.is_empty());
        assert_eq!(revenue[2].points, vec![(1.0, 0.2)]);
    }
}
