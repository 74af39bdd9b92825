//! Command-line surface: `simulate`, `design`, `replay`, `serve` and `bench`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
//! `ACTIVEST_THREADS` caps the rayon worker count.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Instant;

use activest::design::{optimal_proportion, DesignOptions};
use activest::io::{parse_criterion, read_pairwise_dataset, results_to_csv, MetricRow, MetricsTable};
use activest::models::CatalogFile;
use activest::selector::{select_gi0, select_gi1_among, Gi1Path, PolicyName, SelectionState, SelectorOptions};
use activest::simulate::{replay, replication_rng, uniform_spanning_tree, ComparisonGraph, ReplayOptions, Study, StudyConfig};
use activest::{Criterion, ExperimentId};
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "activest", version, about = "Active sequential estimation with greedy information criteria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write the results CSV.
    Simulate {
        study: PathBuf,
        /// Results CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the study's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Dump one trajectory of this policy as JSON instead of aggregating.
        #[arg(long)]
        trajectory: Option<PolicyName>,
        /// Replication index of the dumped trajectory.
        #[arg(long, default_value_t = 0)]
        rep: u64,
    },
    /// Optimal selection proportion of a catalog at θ.
    Design {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, default_value = "trace")]
        criterion: String,
        /// Solve for each Φ_q in this list and write a long-format CSV.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a pairwise dataset without replacement; writes a Kendall-τ curve.
    Replay {
        dataset: PathBuf,
        /// Comma-separated: gi0, gi1, uniform, uncertainty.
        #[arg(long, value_delimiter = ',', required = true)]
        policy: Vec<PolicyName>,
        #[arg(long, default_value = "trace")]
        criterion: String,
        /// Sample sizes at which τ is recorded (default: ten even steps).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Declared item count; records beyond it are rejected.
        #[arg(long)]
        items: Option<usize>,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Restore sessions from this file and write them back on shutdown.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Time one GI0 and one GI1 selection step on a random BTL catalog.
    Bench {
        /// Number of free parameters (objects minus one).
        #[arg(long)]
        p: usize,
        /// Number of compared pairs.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "trace")]
        criterion: String,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<activest::Error> for Failure {
    fn from(e: activest::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code. Output goes to the process's stdout and stderr.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_command_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// As [`run_command`] with explicit output streams.
pub fn run_command_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                1
            };
        }
    };
    let result = match cli.command {
        Command::Serve { port, host, snapshot } => serve(SocketAddr::new(host, port), snapshot, out),
        command => {
            // output is buffered so the command can run inside a sized pool
            let mut buf = Vec::new();
            let result = match thread_count() {
                Ok(Some(n)) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => pool.install(|| dispatch(command, &mut buf)),
                    Err(e) => Err(Failure::Runtime(e.to_string())),
                },
                Ok(None) => dispatch(command, &mut buf),
                Err(f) => Err(f),
            };
            result.and_then(|()| out.write_all(&buf).map_err(Failure::from))
        }
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
    }
}

fn thread_count() -> Result<Option<usize>, Failure> {
    match std::env::var("ACTIVEST_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("ACTIVEST_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn dispatch(command: Command, out: &mut Vec<u8>) -> Result<(), Failure> {
    match command {
        Command::Simulate { study, out: path, seed, replications, trajectory, rep } => {
            simulate(&study, path.as_deref(), seed, replications, trajectory, rep, out)
        }
        Command::Design { model, theta, criterion, sweep, out: path } => design(&model, theta, &criterion, sweep, path.as_deref(), out),
        Command::Replay { dataset, policy, criterion, checkpoints, items, radius, seed, out: path } => {
            replay_cmd(&dataset, &policy, &criterion, checkpoints, items, radius, seed, path.as_deref(), out)
        }
        Command::Serve { .. } => unreachable!("served outside the pool"),
        Command::Bench { p, k, criterion, reps, seed } => bench(p, k, &criterion, reps, seed, out),
    }
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(
    path: &Path,
    out_path: Option<&Path>,
    seed: Option<u64>,
    replications: Option<usize>,
    trajectory: Option<PolicyName>,
    rep: u64,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut config = StudyConfig::read(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(r) = replications {
        config.replications = r;
    }
    let study = Study::new(config, path.parent())?;
    if let Some(policy) = trajectory {
        let t = study.run_trajectory(policy, rep)?;
        let text = serde_json::to_string_pretty(&t).map_err(|e| Failure::Runtime(e.to_string()))? + "\n";
        return emit(&text, out_path, out);
    }
    emit(&results_to_csv(&study.monte_carlo()?)?, out_path, out)
}

fn design(
    model_path: &Path,
    theta: Vec<f64>,
    criterion: &str,
    sweep: Option<Vec<f64>>,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let model = CatalogFile::read(model_path)?.build()?;
    let theta = DVector::from_vec(theta);
    if theta.len() != model.dim() {
        return Err(Failure::Usage(format!("--theta has {} entries, the model needs {}", theta.len(), model.dim())));
    }
    let opts = DesignOptions::default();
    match sweep {
        None => {
            let crit = parse_criterion(criterion, model_path.parent())?;
            let sol = optimal_proportion(&model, &theta, &crit, &opts)?;
            let body = json!({
                "criterion": criterion,
                "pi": sol.pi.as_slice(),
                "value": sol.value,
                "iterations": sol.iterations,
                "projected_gradient_norm": sol.projected_gradient_norm,
            });
            emit(&format!("{}\n", serde_json::to_string_pretty(&body).expect("json")), out_path, out)
        }
        Some(qs) => {
            let mut text = String::from("q,experiment,pi,value\n");
            for q in qs {
                let sol = optimal_proportion(&model, &theta, &Criterion::phi(q)?, &opts)?;
                for (a, pi) in sol.pi.as_slice().iter().enumerate() {
                    text += &format!("{q},{a},{pi},{}\n", sol.value);
                }
            }
            emit(&text, out_path, out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn replay_cmd(
    dataset: &Path,
    policies: &[PolicyName],
    criterion: &str,
    checkpoints: Option<Vec<usize>>,
    items: Option<usize>,
    radius: f64,
    seed: u64,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let data = read_pairwise_dataset(dataset, items)?;
    let crit = parse_criterion(criterion, dataset.parent())?;
    let (model, ids) = data.catalog(radius)?;
    let reference = replay::full_data_estimate(&model, &data, &ids)?;
    let total = data.records.len();
    let checkpoints = checkpoints.unwrap_or_else(|| (1..=10).map(|i| (i * total).div_ceil(10)).collect());
    let mut rows = Vec::new();
    for &name in policies {
        let policy = name
            .with_proportion(None)
            .map_err(|e| Failure::Usage(format!("policy `{name}` is not available for replay: {e}")))?;
        let opts = ReplayOptions {
            policy,
            criterion: crit.clone(),
            checkpoints: checkpoints.clone(),
            seed,
            radius,
        };
        let curve = replay::run_replay(&data, &opts, Some(&reference))?;
        rows.extend(curve.points.into_iter().map(|(n, tau)| MetricRow {
            policy: name.to_string(),
            n,
            metric: "kendall_tau".into(),
            value: tau,
            stderr: 0.0,
        }));
    }
    let table = MetricsTable { rows };
    if table.is_empty() {
        return Err(Failure::Runtime("no checkpoint was reached; nothing to write".into()));
    }
    emit(&results_to_csv(&table)?, out_path, out)
}

fn serve(addr: SocketAddr, snapshot: Option<PathBuf>, out: &mut dyn Write) -> Result<(), Failure> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    writeln!(out, "listening on http://{addr}")?;
    out.flush()?;
    runtime
        .block_on(activest_service::serve(addr, snapshot))
        .map_err(|e| Failure::Runtime(e.to_string()))
}

/// Random connected comparison graph on `p + 1` objects with `k` edges: a
/// uniform spanning tree plus uniformly chosen extra pairs.
fn bench_graph<R: Rng>(p: usize, k: usize, rng: &mut R) -> Result<ComparisonGraph, Failure> {
    let complete = ComparisonGraph::complete(p + 1);
    let max = complete.edges.len();
    if p == 0 || k < p || k > max {
        return Err(Failure::Usage(format!("--k must lie in [{p}, {max}] for --p {p}")));
    }
    let tree = uniform_spanning_tree(&complete, rng);
    let in_tree: std::collections::HashSet<(usize, usize)> = tree.edges.iter().copied().collect();
    let rest: Vec<(usize, usize)> = complete.edges.iter().copied().filter(|e| !in_tree.contains(e)).collect();
    let mut edges = tree.edges;
    edges.extend(sample_indices(rng, rest.len(), k - p).into_iter().map(|i| rest[i]));
    edges.sort_unstable();
    Ok(ComparisonGraph { vertices: p + 1, edges })
}

fn bench(p: usize, k: usize, criterion: &str, reps: usize, seed: u64, out: &mut dyn Write) -> Result<(), Failure> {
    if reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let mut rng = replication_rng(seed, 0);
    let model = bench_graph(p, k, &mut rng)?.btl_model(3.0)?;
    let crit = parse_criterion(criterion, None)?;
    let theta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let ids: Vec<ExperimentId> = model.ids().collect();
    let state = SelectionState::new(&model, &ids, theta)?;
    let opts = SelectorOptions::default();
    let time = |f: &dyn Fn() -> activest::Result<ExperimentId>| -> Result<(f64, usize), Failure> {
        let start = Instant::now();
        let mut pick = ExperimentId(0);
        for _ in 0..reps {
            pick = f()?;
        }
        Ok((start.elapsed().as_secs_f64() / reps as f64, pick.0))
    };
    let (gi1, gi1_pick) = time(&|| select_gi1_among(&state, &model, &crit, &opts, &ids, Gi1Path::Accelerated))?;
    let (gi0, gi0_pick) = time(&|| select_gi0(&state, &model, &crit, &opts))?;
    let body = json!({
        "p": p,
        "k": k,
        "criterion": criterion,
        "gi0_seconds_per_step": gi0,
        "gi1_seconds_per_step": gi1,
        "speedup": gi0 / gi1,
        "gi0_choice": gi0_pick,
        "gi1_choice": gi1_pick,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&body).expect("json"))?;
    Ok(())
}
