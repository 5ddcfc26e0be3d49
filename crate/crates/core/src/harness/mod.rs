//! Command-line surface: configuration, datasets, metrics output.

pub mod config;
pub mod data;
pub mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

pub use config::{DatasetSource, ExperimentConfig, StragglerKind, Stragglers};
pub use data::{load_csv, parse_csv, synth_dataset, synth_dataset_with_noise, LABEL_NOISE};
pub use output::{metrics_rows, write_metrics_csv, MetricsRow, METRICS_HEADER, TIMING_COLUMNS};

use crate::analysis::{self, bandwidth_table, monte_carlo_extra_workers};
use crate::coding::Scheme;
use crate::error::{Error, Result};
use crate::runtime::cluster::{layouts, worker_data};
use crate::runtime::{self, launch_local_cluster, worker_run, ClusterConfig, ClusterOutcome, MasterSetup};
use crate::trainers::{accuracy, train, LabeledDataset};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "edgecode", version, about = "Coded distributed gradient descent on a local cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a full coded training job on an in-process or loopback cluster.
    Train(ConfigFlags),
    /// Run the master of a multi-process job.
    Master {
        /// Address to listen on, e.g. 127.0.0.1:7000 (port 0 picks one).
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Run one worker of a multi-process job.
    Worker {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        worker_id: usize,
        /// How long to keep retrying the initial connection.
        #[arg(long, default_value_t = 30_000)]
        connect_timeout_ms: u64,
        #[command(flatten)]
        config: ConfigFlags,
    },
    /// Print the encoding-bandwidth cost model as CSV.
    BandwidthTable {
        #[arg(long, default_value_t = analysis::SCALE_N)]
        n: usize,
        #[arg(long, default_value_t = analysis::SCALE_K)]
        k: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of extra workers needed for decodability.
    Overhead {
        #[arg(long, default_value = "rlnc")]
        scheme: String,
        #[arg(long, default_value_t = 22)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run only data loading and the encoding phase, reporting per-worker timing.
    EncodeBench(ConfigFlags),
}

/// `--config FILE` plus one optional override per configuration key.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// `key = value` configuration file; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    num_iter: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// A count, or a comma-separated list of worker ids.
    #[arg(long)]
    stragglers: Option<String>,
    /// slowdown, fixed-delay or disconnect.
    #[arg(long)]
    straggler_mode: Option<String>,
    /// Factor, delay in ms, or disconnect iteration, per mode.
    #[arg(long)]
    straggler_magnitude: Option<String>,
    /// `synthetic` or a csv path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    rows: Option<String>,
    #[arg(long)]
    cols: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    header: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    weight_seed: Option<String>,
    #[arg(long)]
    rlnc_seed: Option<String>,
    #[arg(long)]
    straggler_seed: Option<String>,
    /// in-process or loopback.
    #[arg(long)]
    transport: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<String>,
    #[arg(long)]
    deadline_ms: Option<String>,
    #[arg(long)]
    output: Option<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> [(&'static str, &Option<String>); 22] {
        [
            ("n", &self.n),
            ("k", &self.k),
            ("scheme", &self.scheme),
            ("model", &self.model),
            ("num-iter", &self.num_iter),
            ("eta", &self.eta),
            ("lambda", &self.lambda),
            ("stragglers", &self.stragglers),
            ("straggler-mode", &self.straggler_mode),
            ("straggler-magnitude", &self.straggler_magnitude),
            // Source before rows/cols/header, which refine it.
            ("dataset", &self.dataset),
            ("rows", &self.rows),
            ("cols", &self.cols),
            ("header", &self.header),
            ("data-seed", &self.data_seed),
            ("weight-seed", &self.weight_seed),
            ("rlnc-seed", &self.rlnc_seed),
            ("straggler-seed", &self.straggler_seed),
            ("transport", &self.transport),
            ("deterministic", &self.deterministic),
            ("deadline-ms", &self.deadline_ms),
            ("output", &self.output),
        ]
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic { rows, cols } => synth_dataset(*rows, *cols, cfg.data_seed, cfg.model),
        DatasetSource::Csv { path, header } => load_csv(path, cfg.model, *header),
    }
}

pub fn cluster_config(cfg: &ExperimentConfig) -> Result<ClusterConfig> {
    let mut cc = ClusterConfig::new(cfg.n, cfg.k, cfg.scheme, cfg.model);
    cc.rlnc_seed = cfg.rlnc_seed;
    cc.hyper = cfg.hyper();
    cc.init_seed = cfg.weight_seed;
    cc.policy = cfg.policy()?;
    cc.transport = cfg.transport;
    cc.deterministic = cfg.deterministic;
    cc.deadline = cfg.deadline();
    Ok(cc)
}

/// Runs the configured experiment on a local cluster.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(LabeledDataset, ClusterOutcome)> {
    let data = load_dataset(cfg)?;
    let outcome = launch_local_cluster(&cluster_config(cfg)?, &data)?;
    Ok((data, outcome))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn report(cfg: &ExperimentConfig, data: &LabeledDataset, outcome: &ClusterOutcome) -> Result<()> {
    let rows = metrics_rows(&outcome.metrics, &outcome.objectives);
    write_metrics_csv(open_output(cfg.output.as_deref())?, &rows)?;
    let acc = accuracy(cfg.model, &data.x, &data.y, &outcome.w)?;
    eprintln!(
        "{} {} n={} k={}: {} iterations, final objective {}, accuracy {:.4}, mean iteration {:.3} ms, downloads {}",
        cfg.model,
        cfg.scheme,
        cfg.n,
        cfg.k,
        outcome.metrics.iterations().len(),
        outcome.objectives.last().map_or(f64::NAN, |o| *o),
        acc,
        outcome.metrics.mean_iteration_nanos() / 1e6,
        outcome.metrics.total_downloads(),
    );
    Ok(())
}

fn run_master(listen: &str, cfg: &ExperimentConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let listener = runtime::transport::bind(listen)?;
    let addr = listener.local_addr()?;
    eprintln!("listening {addr}");
    let links = runtime::transport::accept(&listener, cfg.n)?;
    let (layout_x, layout_xt) = layouts(data.n_samples(), data.n_features(), cfg.k)?;
    let cc = cluster_config(cfg)?;
    let setup = MasterSetup { g: cc.generator()?, layout_x, layout_xt, schedule: cc.schedule(), deadline: cc.deadline };
    let (out, metrics) = runtime::master_run(links, setup, |engine| {
        train(cfg.model, engine, &data.y, data.n_samples(), cfg.hyper(), cfg.weight_seed)
    })?;
    report(cfg, &data, &ClusterOutcome { w: out.w, objectives: out.objectives, metrics })
}

fn run_worker(addr: &str, worker_id: usize, timeout: Duration, cfg: &ExperimentConfig) -> Result<()> {
    if worker_id >= cfg.n {
        return Err(Error::Configuration(format!("worker id {worker_id} out of range for n={}", cfg.n)));
    }
    let data = load_dataset(cfg)?;
    let started = Instant::now();
    let local = worker_data(&data.x, cfg.k, worker_id)?;
    drop(data);
    let link = loop {
        match runtime::transport::connect(addr) {
            Ok(link) => break link,
            Err(e) if started.elapsed() < timeout => {
                log::debug!("connect to {addr} failed ({e}), retrying");
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e),
        }
    };
    worker_run(link, worker_id, local, cfg.policy()?)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(flags) => {
            let cfg = flags.resolve()?;
            let (data, outcome) = run_experiment(&cfg)?;
            report(&cfg, &data, &outcome)
        }
        Command::EncodeBench(flags) => {
            let mut cfg = flags.resolve()?;
            cfg.num_iter = 0;
            let (_, outcome) = run_experiment(&cfg)?;
            let rows: Vec<MetricsRow> =
                metrics_rows(&outcome.metrics, &[]).into_iter().filter(|r| r.phase != "iteration").collect();
            write_metrics_csv(open_output(cfg.output.as_deref())?, &rows)?;
            eprintln!("encoding phase {:.3} ms", outcome.metrics.encode_phase_nanos as f64 / 1e6);
            Ok(())
        }
        Command::Master { listen, config } => run_master(&listen, &config.resolve()?),
        Command::Worker { connect, worker_id, connect_timeout_ms, config } => {
            run_worker(&connect, worker_id, Duration::from_millis(connect_timeout_ms), &config.resolve()?)
        }
        Command::BandwidthTable { n, k, output } => {
            let table = bandwidth_table(n, k).map_err(|e| Error::Configuration(e.to_string()))?;
            analysis::write_bandwidth_csv(open_output(output.as_deref())?, &table)
        }
        Command::Overhead { scheme, n, k, trials, seed, output } => {
            let scheme: Scheme = scheme.parse().map_err(|e: Error| Error::Configuration(e.to_string()))?;
            if k == 0 || n < k || trials == 0 {
                return Err(Error::Configuration(format!("need 1 <= k <= n and trials >= 1, got n={n} k={k} trials={trials}")));
            }
            let est = monte_carlo_extra_workers(scheme, n, k, trials, seed)?;
            analysis::write_overhead_csv(open_output(output.as_deref())?, &[est])
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Configuration(_) | Error::InvalidArgument(_) | Error::InvalidDimensions { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_keys_match_config_keys() {
        let keys: Vec<&str> = ConfigFlags::default().overrides().iter().map(|(k, _)| *k).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        let mut expected = config::KEYS.to_vec();
        expected.sort_unstable();
        assert_eq!(sorted, expected);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "n = 8\nk = 5\nmodel = svm\n").unwrap();
        let cli = Cli::try_parse_from(["edgecode", "train", "--config", path.to_str().unwrap(), "--k", "4", "--header=false"]).unwrap();
        let Command::Train(flags) = cli.command else { panic!() };
        let cfg = flags.resolve().unwrap();
        assert_eq!((cfg.n, cfg.k, cfg.model), (8, 4, crate::trainers::Model::Svm));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_main(["edgecode", "train", "--k", "6", "--n", "5"]), EXIT_USAGE);
        assert_eq!(cli_main(["edgecode", "train", "--n", "many"]), EXIT_USAGE);
        assert_eq!(cli_main(["edgecode", "frobnicate"]), EXIT_USAGE);
    }
}
