//! Desk-scale cluster: one master plus `n` worker threads on this host,
//! connected by in-process channels or loopback TCP.

use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use super::master::{master_run, ClusterEngine, MasterSetup, Schedule};
use super::metrics::ExperimentMetrics;
use super::straggler::StragglerPolicy;
use super::transport::{self, Link};
use super::worker::{worker_run, WorkerData};
use crate::coding::{GeneratorMatrix, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{partition_rows, BlockLayout, DenseMatrix};
use crate::trainers::{train, Hyper, LabeledDataset, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    LoopbackSockets,
}

impl FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in-process" | "inprocess" | "in_process" | "threads" => Ok(Transport::InProcess),
            "loopback" | "loopback-sockets" | "tcp" | "sockets" => Ok(Transport::LoopbackSockets),
            other => Err(Error::invalid(format!("unknown transport '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterConfig {
    pub n: usize,
    pub k: usize,
    pub scheme: Scheme,
    pub rlnc_seed: u64,
    pub model: Model,
    pub hyper: Hyper,
    pub init_seed: u64,
    pub policy: StragglerPolicy,
    pub transport: Transport,
    /// Consume responders in expected-speed order instead of arrival order.
    pub deterministic: bool,
    pub deadline: Option<Duration>,
}

impl ClusterConfig {
    pub fn new(n: usize, k: usize, scheme: Scheme, model: Model) -> Self {
        Self {
            n,
            k,
            scheme,
            rlnc_seed: 0,
            model,
            hyper: Hyper::default(),
            init_seed: 0,
            policy: StragglerPolicy::none(),
            transport: Transport::InProcess,
            deterministic: false,
            deadline: None,
        }
    }

    pub fn generator(&self) -> Result<GeneratorMatrix> {
        GeneratorMatrix::build(self.scheme, self.k, self.n, self.rlnc_seed)
    }

    pub fn schedule(&self) -> Schedule {
        if self.deterministic {
            Schedule::Ordered(self.policy.expected_order(self.n))
        } else {
            Schedule::Arrival
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub w: Vec<f64>,
    pub objectives: Vec<f64>,
    pub metrics: ExperimentMetrics,
}

/// Original `X` / `Xᵀ` blocks for worker `id`, or nothing for redundant ids.
pub fn worker_data(x: &DenseMatrix, k: usize, id: usize) -> Result<WorkerData> {
    if id >= k {
        return Ok(WorkerData::default());
    }
    let started = Instant::now();
    let mut px = partition_rows(x, k)?;
    let mut pxt = partition_rows(&x.transpose(), k)?;
    Ok(WorkerData {
        x_block: Some(px.blocks.swap_remove(id)),
        xt_block: Some(pxt.blocks.swap_remove(id)),
        load_nanos: started.elapsed().as_nanos() as u64,
    })
}

/// Block layouts of `X` and `Xᵀ` for a `rows × cols` training matrix.
pub fn layouts(rows: usize, cols: usize, k: usize) -> Result<(BlockLayout, BlockLayout)> {
    Ok((BlockLayout::for_matrix(rows, cols, k)?, BlockLayout::for_matrix(cols, rows, k)?))
}

pub fn launch_local_cluster(cfg: &ClusterConfig, data: &LabeledDataset) -> Result<ClusterOutcome> {
    let (model, hyper, init_seed) = (cfg.model, cfg.hyper, cfg.init_seed);
    let (outcome, metrics) =
        run_cluster(cfg, data, |engine| train(model, engine, &data.y, data.n_samples(), hyper, init_seed))?;
    Ok(ClusterOutcome { w: outcome.w, objectives: outcome.objectives, metrics })
}

/// Spawns the workers for `data` and hands the master's engine to `driver`.
pub fn run_cluster<T>(
    cfg: &ClusterConfig,
    data: &LabeledDataset,
    driver: impl FnOnce(&mut ClusterEngine<'_>) -> Result<T>,
) -> Result<(T, ExperimentMetrics)> {
    if cfg.k == 0 || cfg.n < cfg.k {
        return Err(Error::InvalidDimensions { k: cfg.k, n: cfg.n });
    }
    cfg.policy.validate(cfg.n)?;
    let g = cfg.generator()?;
    let (layout_x, layout_xt) = layouts(data.n_samples(), data.n_features(), cfg.k)?;

    // Split the data up front so each systematic worker only sees its own blocks.
    let px = partition_rows(&data.x, cfg.k)?;
    let pxt = partition_rows(&data.x.transpose(), cfg.k)?;
    let mut slots: Vec<WorkerData> = (0..cfg.n).map(|_| WorkerData::default()).collect();
    for (id, slot) in slots.iter_mut().enumerate().take(cfg.k) {
        let started = Instant::now();
        let (x_block, xt_block) = (px.blocks[id].clone(), pxt.blocks[id].clone());
        *slot = WorkerData { x_block: Some(x_block), xt_block: Some(xt_block), load_nanos: started.elapsed().as_nanos() as u64 };
    }

    let (master_links, worker_links): (Vec<Link>, Vec<Link>) = match cfg.transport {
        Transport::InProcess => (0..cfg.n).map(|_| transport::in_process_pair()).unzip(),
        Transport::LoopbackSockets => {
            let listener = transport::bind("127.0.0.1:0")?;
            let addr = listener.local_addr().map_err(|e| Error::Environment(e.to_string()))?;
            let n = cfg.n;
            let clients = thread::spawn(move || (0..n).map(|_| transport::connect(addr)).collect::<Result<Vec<_>>>());
            let accepted = transport::accept(&listener, cfg.n)?;
            let connected = clients.join().map_err(|_| Error::Environment("connect thread panicked".into()))??;
            (accepted, connected)
        }
    };

    let mut handles = Vec::with_capacity(cfg.n);
    for (id, (link, data)) in worker_links.into_iter().zip(slots).enumerate() {
        let policy = cfg.policy.clone();
        handles.push(
            thread::Builder::new()
                .name(format!("worker-{id}"))
                .spawn(move || worker_run(link, id, data, policy))
                .map_err(|e| Error::Environment(format!("cannot spawn worker thread: {e}")))?,
        );
    }

    let setup = MasterSetup { g, layout_x, layout_xt, schedule: cfg.schedule(), deadline: cfg.deadline };
    let run = master_run(master_links, setup, driver);
    for (id, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => log::warn!("worker {id} exited with error: {e}"),
            Err(_) => log::warn!("worker {id} panicked"),
        }
    }
    run
}
