use std::fs;
use std::path::{Path, PathBuf};

use ghsnet_core::bootstrap::{bootstrap_edge_check, BootstrapReport};
use ghsnet_core::harness::{self, derive_seed, BenchmarkSpec, Scenario, StudyConfig};
use ghsnet_core::io::{self, DenseMatrix, FitReport, TauSource};
use ghsnet_core::metrics::{edge_disagreement, precision_recall};
use ghsnet_core::simulate::sample_gaussian;
use ghsnet_core::tau::select_tau_with_fit;
use ghsnet_core::{
    fit_single, joint, Dataset, DatasetOptions, EcmConfig, EcmFit, GhsError, GlobalScale,
    JointConfig, JointProblem, MomentMode, PartialSign, TauGrid, TauMode, TrueModel,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BenchmarkArgs, EstimationArgs, FitArgs, FitJointArgs, SimulateArgs, TauModeArg};

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<GhsError> for CliError {
    fn from(e: GhsError) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::new("usage", message)
}

fn make_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))
}

fn read_truth(path: &Path, p: usize) -> CliResult<TrueModel> {
    let truth = TrueModel::from_json(&io::read_text(path)?)?;
    if truth.p() != p {
        return Err(usage(format!(
            "{}: truth has p = {}, data has p = {p}",
            path.display(),
            truth.p()
        )));
    }
    Ok(truth)
}

#[derive(Debug, Serialize)]
struct Score {
    precision: f64,
    recall: f64,
}

fn score(fit: &EcmFit, truth: &TrueModel, threshold: f64) -> CliResult<Score> {
    let graph = fit.graph(threshold)?;
    let (precision, recall) = precision_recall(&graph.adjacency, &truth.adjacency)?;
    Ok(Score { precision, recall })
}

fn ecm_config(est: &EstimationArgs) -> CliResult<EcmConfig> {
    let config = EcmConfig {
        tol: est.tol,
        max_iter: est.max_iter,
        ..EcmConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn grid(est: &EstimationArgs) -> CliResult<TauGrid> {
    Ok(TauGrid::default().with_epsilon(est.aic_epsilon)?)
}

/// Single fit under the estimation flags, with the source of `tau^2` and the
/// AIC trace when one was computed.
fn fit_one(
    data: &Dataset,
    est: &EstimationArgs,
) -> CliResult<(EcmFit, TauSource, Option<Vec<(f64, f64)>>)> {
    let base = ecm_config(est)?;
    match (est.tau_mode, est.tau_sq) {
        (TauModeArg::Fixed, Some(t)) => {
            let config = EcmConfig {
                tau_mode: TauMode::Fixed(GlobalScale::new(t)?),
                ..base
            };
            Ok((fit_single(data, &config)?, TauSource::Fixed, None))
        }
        (TauModeArg::Fixed, None) => {
            let (sel, fit) = select_tau_with_fit(data, &grid(est)?, &base, est.edge_threshold)?;
            if !sel.stabilized {
                log::warn!("AIC never stabilised; using the largest grid value");
            }
            Ok((fit, TauSource::Aic, Some(sel.aic_trace)))
        }
        (TauModeArg::Updated, start) => {
            let config = EcmConfig {
                tau_mode: TauMode::Updated(GlobalScale::new(start.unwrap_or(1.0))?),
                ..base
            };
            Ok((fit_single(data, &config)?, TauSource::Updated, None))
        }
    }
}

#[derive(Debug, Serialize)]
struct FitOutput {
    #[serde(flatten)]
    report: FitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<Score>,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let data = io::read_dataset_file(&args.input, DatasetOptions { scale: args.scale })?;
    let truth = args
        .truth
        .as_deref()
        .map(|t| read_truth(t, data.p()))
        .transpose()?;
    let (fit, source, aic_trace) = fit_one(&data, &args.estimation)?;
    let mut report = FitReport::new(&data, &fit, source, args.estimation.edge_threshold)?;
    report.aic_trace = aic_trace;
    let score = truth
        .map(|t| score(&fit, &t, args.estimation.edge_threshold))
        .transpose()?;
    make_dir(&args.out_dir)?;
    let path = args.out_dir.join("fit.json");
    println!(
        "p = {}, n = {}, tau^2 = {:.4e}, {} edges, {} iterations, converged = {}",
        report.p,
        report.n,
        report.tau_sq,
        report.edges.len(),
        report.iterations,
        report.converged
    );
    io::write_json(&path, &FitOutput { report, score })?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct JointOutput {
    moment_mode: MomentMode,
    iterations: usize,
    converged: bool,
    tau_sqs: Vec<f64>,
    shared_inv_nu: DenseMatrix,
    objective_trace: Vec<f64>,
    networks: Vec<FitOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<Vec<Option<BootstrapReport>>>,
}

pub fn fit_joint(args: &FitJointArgs) -> CliResult<()> {
    let est = &args.estimation;
    if est.tau_mode == TauModeArg::Updated {
        return Err(usage(
            "fit-joint needs a fixed or AIC-selected tau^2 per network",
        ));
    }
    if !args.truth.is_empty() && args.truth.len() != args.inputs.len() {
        return Err(usage(format!(
            "{} truth files for {} inputs",
            args.truth.len(),
            args.inputs.len()
        )));
    }
    let options = DatasetOptions { scale: args.scale };
    let datasets = args
        .inputs
        .iter()
        .map(|path| io::read_dataset_file(path, options))
        .collect::<Result<Vec<_>, _>>()?;
    for (path, d) in args.inputs.iter().zip(&datasets).skip(1) {
        if d.names() != datasets[0].names() {
            return Err(usage(format!(
                "header of {} differs from {}",
                path.display(),
                args.inputs[0].display()
            )));
        }
    }
    let truths = args
        .truth
        .iter()
        .map(|t| read_truth(t, datasets[0].p()))
        .collect::<CliResult<Vec<_>>>()?;

    let base = ecm_config(est)?;
    let (tau_sqs, source) = match est.tau_sq {
        Some(t) => (vec![t; datasets.len()], TauSource::Fixed),
        None => {
            let g = grid(est)?;
            let taus = datasets
                .par_iter()
                .enumerate()
                .map(|(k, d)| {
                    select_tau_with_fit(d, &g, &base, est.edge_threshold)
                        .map(|(sel, _)| sel.chosen_tau_sq)
                        .map_err(|e| CliError::new(e.kind(), format!("network {}: {e}", k + 1)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            (taus, TauSource::Aic)
        }
    };
    let scales = tau_sqs
        .iter()
        .map(|&t| GlobalScale::new(t))
        .collect::<Result<Vec<_>, _>>()?;
    let problem = JointProblem::new(datasets.clone(), scales)?;
    let config = JointConfig {
        ecm: base,
        moment_mode: args.moment_mode.into(),
        parallel: false,
    };
    let fit = joint::fit_joint(&problem, &config)?;

    make_dir(&args.out_dir)?;
    let mut networks = Vec::with_capacity(datasets.len());
    for (k, (d, f)) in datasets.iter().zip(&fit.fits).enumerate() {
        let report = FitReport::new(d, f, source, est.edge_threshold)?;
        let score = truths
            .get(k)
            .map(|t| score(f, t, est.edge_threshold))
            .transpose()?;
        println!(
            "network {}: tau^2 = {:.4e}, {} edges",
            k + 1,
            report.tau_sq,
            report.edges.len()
        );
        networks.push(FitOutput { report, score });
    }
    let bootstrap = if args.bootstrap_check {
        let mut reports = Vec::with_capacity(datasets.len());
        for (k, (d, f)) in datasets.iter().zip(&fit.fits).enumerate() {
            let edges = f.graph(est.edge_threshold)?.adjacency.edges();
            if edges.is_empty() {
                println!("network {}: no edges to check", k + 1);
                reports.push(None);
                continue;
            }
            let config = EcmConfig {
                tau_mode: TauMode::Fixed(GlobalScale::new(tau_sqs[k])?),
                ..base
            };
            let report = bootstrap_edge_check(
                d,
                &f.theta,
                &edges,
                args.bootstrap_samples,
                &config,
                derive_seed(args.seed, k),
            )
            .map_err(|e| CliError::new(e.kind(), format!("network {}: {e}", k + 1)))?;
            let table = report.to_table(Some(d.names()));
            io::write_text(
                &args.out_dir.join(format!("bootstrap_network{}.txt", k + 1)),
                &table,
            )?;
            println!(
                "network {}: {:.1}% of edges exceed the bootstrap percentile",
                k + 1,
                100.0 * report.exceed_fraction
            );
            reports.push(Some(report));
        }
        Some(reports)
    } else {
        None
    };
    let output = JointOutput {
        moment_mode: config.moment_mode,
        iterations: fit.iterations,
        converged: fit.converged,
        tau_sqs,
        shared_inv_nu: DenseMatrix::from(&fit.shared_inv_nu),
        objective_trace: fit.objective_trace,
        networks,
        bootstrap,
    };
    let path = args.out_dir.join("joint.json");
    io::write_json(&path, &output)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ManifestNetwork {
    data: PathBuf,
    truth: PathBuf,
    edges: usize,
}

#[derive(Debug, Serialize)]
struct ManifestReplicate {
    replicate: usize,
    seed: u64,
    networks: Vec<ManifestNetwork>,
    /// Disagreement of each network with network 1.
    disagreement_with_first: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    p: usize,
    n: usize,
    k: usize,
    disagreement: f64,
    seed: u64,
    partial_range: (f64, f64),
    mixed_signs: bool,
    replicates: Vec<ManifestReplicate>,
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.replicates == 0 || args.k == 0 {
        return Err(usage("--replicates and --k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&args.disagreement) {
        return Err(usage("--disagreement must lie in [0, 1]"));
    }
    let cfg = StudyConfig {
        partial_range: (args.partial_low, args.partial_high),
        sign: if args.mixed_signs {
            PartialSign::Mixed
        } else {
            PartialSign::Positive
        },
        ..StudyConfig::default()
    };
    make_dir(&args.out_dir)?;
    let mut replicates = Vec::with_capacity(args.replicates);
    for r in 0..args.replicates {
        let seed = args.seed.wrapping_add(r as u64);
        let family = harness::simulate_family(args.p, args.k, args.disagreement, &cfg, seed)?;
        let mut networks = Vec::with_capacity(args.k);
        for (k, model) in family.iter().enumerate() {
            let data = sample_gaussian(model, args.n, derive_seed(seed, k))?;
            let stem = format!("rep{:03}_net{}", r + 1, k + 1);
            let data_file = PathBuf::from(format!("{stem}.csv"));
            let truth_file = PathBuf::from(format!("{stem}_truth.json"));
            io::write_observations_file(
                &args.out_dir.join(&data_file),
                data.names(),
                data.observations(),
            )?;
            io::write_text(&args.out_dir.join(&truth_file), &model.to_json()?)?;
            networks.push(ManifestNetwork {
                data: data_file,
                truth: truth_file,
                edges: model.adjacency.edge_count(),
            });
        }
        let disagreement_with_first = family
            .iter()
            .map(|m| edge_disagreement(&family[0].adjacency, &m.adjacency))
            .collect::<Result<Vec<_>, _>>()?;
        replicates.push(ManifestReplicate {
            replicate: r + 1,
            seed,
            networks,
            disagreement_with_first,
        });
    }
    let manifest = Manifest {
        p: args.p,
        n: args.n,
        k: args.k,
        disagreement: args.disagreement,
        seed: args.seed,
        partial_range: cfg.partial_range,
        mixed_signs: args.mixed_signs,
        replicates,
    };
    let path = args.out_dir.join("manifest.json");
    io::write_json(&path, &manifest)?;
    println!(
        "wrote {} data sets to {}",
        args.replicates * args.k,
        args.out_dir.display()
    );
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let ecm = EcmConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        ..EcmConfig::default()
    };
    ecm.validate()?;
    let cfg = StudyConfig {
        replicates: args.replicates,
        seed: args.seed,
        ecm,
        grid: TauGrid::default().with_epsilon(args.aic_epsilon)?,
        threshold: args.edge_threshold,
        moment_mode: args.moment_mode.into(),
        partial_range: (args.partial_low, args.partial_high),
        ..StudyConfig::default()
    };
    let spec = BenchmarkSpec {
        p: args.p,
        n: args.n,
        k: args.k,
        disagreement: args.disagreement,
    };
    let rows = harness::run_benchmark(scenario, &spec, &cfg)?;
    make_dir(&args.out_dir)?;
    let path = args.out_dir.join(format!("benchmark_{scenario}.csv"));
    let file = fs::File::create(&path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    harness::write_report(file, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
