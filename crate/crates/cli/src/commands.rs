use std::path::Path;

use abfdr::sigma::ensure_correlation;
use abfdr::sim::{calibrate_signal_size, estimate_fdr_power};
use abfdr::stats::{estimate_control_covariance, estimate_control_covariance_grouped};
use abfdr::{
    bh, build_mcc_correlation, by, compute_z_vector, dbh_with, CorrelationStructure, DMatrix,
    DbhOptions, Integration, Method, RejectionReport, Sidedness, SimulationConfig, StructureKind,
    TestStatistics,
};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::input::{
    read_covariance, read_json, read_summary, read_units, InputError, SummaryTable, Units,
};
use crate::output::{display, fmt_f64, manifest_path, write_csv, Manifest};
use crate::{CalibrateArgs, CovArgs, SimulateArgs, TestArgs};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InputError(format!("--alpha must lie in (0, 1), got {alpha}")).into());
    }
    Ok(())
}

fn check_methods(methods: &[Method]) -> Result<Vec<Method>> {
    let mut out = methods.to_vec();
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(InputError("--methods needs at least one of bh, by, dbh".into()).into());
    }
    Ok(out)
}

/// Control-group covariance of the metric means, estimated from unit rows.
fn units_covariance(
    units: &Units,
    path: &Path,
    buckets: Option<usize>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let cov = match buckets {
        None => estimate_control_covariance(&units.rows),
        Some(b) => estimate_control_covariance_grouped(&units.ids, &units.rows, b, seed),
    };
    cov.with_context(|| format!("estimating the control covariance from {}", path.display()))
}

/// Keeps the correlation structure of `estimate` but puts the summary's
/// control variance / n0 on the diagonal, so the two sources agree.
fn match_diagonal(estimate: &DMatrix<f64>, table: &SummaryTable) -> Result<DMatrix<f64>> {
    let m = estimate.nrows();
    let target: Vec<f64> = table.cells[0].iter().map(|c| c.mean_variance()).collect();
    for q in 0..m {
        if !(estimate[(q, q)] > 0.0) {
            return Err(InputError(format!(
                "metric `{}` has zero variance in the control units",
                table.metric_names[q]
            ))
            .into());
        }
    }
    Ok(DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            target[a]
        } else {
            let r = estimate[(a, b)] / (estimate[(a, a)] * estimate[(b, b)]).sqrt();
            r * (target[a] * target[b]).sqrt()
        }
    }))
}

pub fn test(args: &TestArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let methods = check_methods(&args.methods)?;
    let mut manifest = Manifest::new("test");
    manifest.inputs.push(display(&args.summary));

    let table = read_summary(&args.summary)?;
    let control_cov = match (&args.cov, &args.units) {
        (Some(path), _) => {
            manifest.inputs.push(display(path));
            read_covariance(path, &table.metric_names)?
        }
        (None, Some(path)) => {
            manifest.inputs.push(display(path));
            manifest.buckets = args.buckets;
            manifest.seed = args.buckets.map(|_| args.seed);
            let estimate = manifest.time("covariance", || {
                let units = read_units(path)?.select(&table.metric_names, path)?;
                units_covariance(&units, path, args.buckets, args.seed)
            })?;
            manifest
                .notes
                .push("control covariance estimated from units and rescaled to the summary's control variance / n".into());
            match_diagonal(&estimate, &table)?
        }
        (None, None) => {
            return Err(InputError("either --cov or --units is required".into()).into());
        }
    };
    let summary = table.with_covariance(control_cov);
    summary.validate()?;
    let index = summary.index();

    let z = compute_z_vector(&summary).context("computing z-statistics")?;
    let mcc = manifest
        .time("correlation", || build_mcc_correlation(&summary))
        .context("building the correlation matrix")?;
    let correlation = ensure_correlation(mcc).context("checking the correlation matrix")?;
    if correlation.projected {
        let note = "correlation matrix was not positive semidefinite; projected to the nearest correlation matrix";
        eprintln!("warning: {note}");
        manifest.notes.push(note.into());
    }
    let stats = TestStatistics::new(z, correlation.matrix, args.sided)
        .context("assembling test statistics")?;
    let p = stats.p_values();
    let gamma = args.gamma.unwrap_or_else(|| args.sided.default_gamma());

    let mut reports: Vec<RejectionReport> = Vec::new();
    for &method in &methods {
        let report = manifest.time(method.as_str(), || match method {
            Method::Bh => bh(&p, args.alpha),
            Method::By => by(&p, args.alpha),
            Method::Dbh => {
                let options = DbhOptions {
                    integration: Integration::Quadrature {
                        nodes: args.quadrature,
                    },
                    ..DbhOptions::default()
                };
                dbh_with(&stats, args.alpha, gamma, &options)
            }
        });
        reports.push(report.with_context(|| format!("running {method}"))?);
    }
    let q = abfdr::bh_q_values(&p);

    let mut header = vec!["group", "metric", "z", "p", "q"];
    header.extend(methods.iter().map(|m| m.as_str()));
    if methods.contains(&Method::Dbh) {
        header.push("dbh_g");
    }
    let rows: Vec<Vec<String>> = (0..stats.len())
        .map(|i| {
            let (g, metric) = index.unflatten(i);
            let mut row = vec![
                g.to_string(),
                summary.metric_names[metric].clone(),
                fmt_f64(stats.z[i]),
                fmt_f64(p[i]),
                fmt_f64(q[i]),
            ];
            for report in &reports {
                row.push(
                    if report.is_rejected(i) {
                        "reject"
                    } else {
                        "retain"
                    }
                    .into(),
                );
            }
            if let Some(g) = reports.iter().find_map(|r| r.g.as_ref()) {
                row.push(fmt_f64(g[i]));
            }
            row
        })
        .collect();
    write_csv(&args.out, &header, &rows)?;

    manifest.outputs.push(display(&args.out));
    manifest.quadrature_nodes = methods.contains(&Method::Dbh).then_some(args.quadrature);
    manifest.config = serde_json::json!({
        "alpha": args.alpha,
        "gamma": gamma,
        "sidedness": args.sided,
        "methods": methods,
        "groups": summary.num_treatment_groups(),
        "metrics": summary.metric_names,
        "correlation_projected": correlation.projected,
        "rejections": reports.iter().map(|r| (r.method.as_str(), r.rejected.len())).collect::<std::collections::BTreeMap<_, _>>(),
    });
    let path = manifest_path(&args.out);
    manifest.outputs.push(display(&path));
    manifest.write(&path)
}

fn default_dimension() -> usize {
    50
}
fn default_num_signals() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.2
}
fn default_structures() -> Vec<StructureKind> {
    vec![
        StructureKind::CompoundSymmetry,
        StructureKind::Toeplitz,
        StructureKind::Block,
    ]
}
fn default_rho() -> f64 {
    0.8
}
fn default_block_size() -> usize {
    5
}
fn default_sidedness() -> Vec<Sidedness> {
    vec![Sidedness::RightSided, Sidedness::TwoSided]
}
fn default_signal_sizes() -> Vec<f64> {
    vec![1.0, 1.5, 2.0, 2.5, 3.0]
}
fn default_replicates() -> usize {
    1000
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// A grid of simulation settings: every structure x sidedness x signal size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_num_signals")]
    pub num_signals: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_structures")]
    pub structures: Vec<StructureKind>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_sidedness")]
    pub sidedness: Vec<Sidedness>,
    #[serde(default = "default_signal_sizes")]
    pub signal_sizes: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
}

impl SweepConfig {
    fn settings(&self) -> Vec<SimulationConfig> {
        let mut out = Vec::new();
        for &kind in &self.structures {
            let structure = CorrelationStructure {
                kind,
                rho: self.rho,
                block_size: self.block_size,
                dimension: self.dimension,
            };
            for &side in &self.sidedness {
                for &size in &self.signal_sizes {
                    out.push(SimulationConfig {
                        num_signals: self.num_signals,
                        gamma: self.gamma,
                        replicates: self.replicates,
                        seed: self.seed,
                        quadrature_nodes: self.quadrature_nodes,
                        ..SimulationConfig::new(structure, size, side, self.alpha)
                    });
                }
            }
        }
        out
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config: SweepConfig = read_json(&args.config)?;
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if args.gamma.is_some() {
        config.gamma = args.gamma;
    }
    if let Some(sided) = &args.sided {
        config.sidedness = sided.clone();
    }
    if let Some(methods) = &args.methods {
        config.methods = methods.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(replicates) = args.replicates {
        config.replicates = replicates;
    }
    if args.quadrature.is_some() {
        config.quadrature_nodes = args.quadrature;
    }
    check_alpha(config.alpha)?;
    config.methods = check_methods(&config.methods)?;
    let settings = config.settings();
    if settings.is_empty() {
        return Err(InputError(format!(
            "{}: structures, sidedness and signal_sizes must all be non-empty",
            args.config.display()
        ))
        .into());
    }
    for setting in &settings {
        setting
            .validate()
            .map_err(|e| InputError(format!("{}: {e}", args.config.display())))?;
    }
    if config.replicates == 1 {
        eprintln!("warning: replicates = 1; standard errors are reported as 0");
    }

    let mut manifest = Manifest::new("simulate");
    manifest.inputs.push(display(&args.config));
    let mut rows = Vec::new();
    for setting in &settings {
        let label = format!(
            "{} {} mu*={}",
            setting.structure.kind, setting.sidedness, setting.signal_size
        );
        let result = manifest
            .time(&label, || estimate_fdr_power(setting, &config.methods))
            .with_context(|| format!("simulating {label}"))?;
        for e in &result.estimates {
            rows.push(vec![
                setting.structure.kind.to_string(),
                setting.sidedness.to_string(),
                fmt_f64(setting.alpha),
                fmt_f64(setting.signal_size),
                e.method.to_string(),
                fmt_f64(e.fdr),
                fmt_f64(e.fdr_se),
                fmt_f64(e.power),
                fmt_f64(e.power_se),
            ]);
        }
    }
    let header = [
        "structure",
        "sidedness",
        "alpha",
        "mu_star",
        "method",
        "fdr",
        "fdr_se",
        "power",
        "power_se",
    ];
    write_csv(&args.out, &header, &rows)?;

    manifest.outputs.push(display(&args.out));
    manifest.seed = Some(config.seed);
    manifest.quadrature_nodes = config.quadrature_nodes;
    if config.replicates == 1 {
        manifest
            .notes
            .push("replicates = 1; standard errors are reported as 0".into());
    }
    if config.quadrature_nodes.is_none() {
        manifest
            .notes
            .push("dBH integrated exactly over each constant piece".into());
    }
    manifest.config = serde_json::to_value(&config)?;
    let path = manifest_path(&args.out);
    manifest.outputs.push(display(&path));
    manifest.write(&path)
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let mut config: SimulationConfig = read_json(&args.config)?;
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if args.gamma.is_some() {
        config.gamma = args.gamma;
    }
    if let Some(side) = args.sided {
        config.sidedness = side;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.quadrature.is_some() {
        config.quadrature_nodes = args.quadrature;
    }
    let methods = check_methods(&args.methods)?;
    let [method] = methods[..] else {
        return Err(InputError("calibrate takes exactly one method".into()).into());
    };
    config
        .validate()
        .map_err(|e| InputError(format!("{}: {e}", args.config.display())))?;

    let mut manifest = Manifest::new("calibrate");
    manifest.inputs.push(display(&args.config));
    let calibration = manifest
        .time("calibrate", || {
            calibrate_signal_size(&config, args.target, method)
        })
        .with_context(|| format!("calibrating {method} to power {}", args.target))?;
    println!("{}", fmt_f64(calibration.signal_size));

    manifest.seed = Some(config.seed);
    manifest.quadrature_nodes = config.quadrature_nodes;
    manifest.config = serde_json::json!({
        "simulation": config,
        "method": method,
        "target_power": args.target,
        "result": calibration,
    });
    manifest.outputs.push(display(&args.out));
    manifest.write(&args.out)
}

pub fn cov(args: &CovArgs) -> Result<()> {
    let mut manifest = Manifest::new("cov");
    manifest.inputs.push(display(&args.units));
    let units = read_units(&args.units)?;
    let cov = manifest.time("covariance", || {
        units_covariance(&units, &args.units, args.buckets, args.seed)
    })?;

    let header: Vec<&str> = units.metric_names.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..cov.nrows())
        .map(|a| (0..cov.ncols()).map(|b| fmt_f64(cov[(a, b)])).collect())
        .collect();
    write_csv(&args.out, &header, &rows)?;

    manifest.outputs.push(display(&args.out));
    manifest.buckets = args.buckets;
    manifest.seed = args.buckets.map(|_| args.seed);
    manifest.config =
        serde_json::json!({ "units": units.rows.len(), "metrics": units.metric_names });
    let path = manifest_path(&args.out);
    manifest.outputs.push(display(&path));
    manifest.write(&path)
}
