//! Worker process: one communication task and one compute task.
//!
//! The communication task owns the inbound stream. It serves block requests
//! from its local data, forwards block responses to the compute task, queues
//! multiply jobs, and flips per-job cancellation flags when the master
//! cancels an iteration. The compute task encodes during setup and then
//! multiplies, polling its job's flag between row chunks.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::straggler::StragglerPolicy;
use super::transport::{FrameSink, Link};
use super::wire::{Operand, OperandSet, WireMessage};
use crate::coding::GeneratorMatrix;
use crate::error::{Error, Result};
use crate::linalg::{local_block, BlockEncoder, DenseMatrix};

/// Rows multiplied between two cancellation checks.
const CHUNK_ROWS: usize = 64;
const SLEEP_SLICE: Duration = Duration::from_micros(250);

/// Data a worker starts with: its original `X` and `Xᵀ` blocks if it is one
/// of the first `k` workers, nothing otherwise.
#[derive(Clone, Debug, Default)]
pub struct WorkerData {
    pub x_block: Option<DenseMatrix>,
    pub xt_block: Option<DenseMatrix>,
    /// Time spent loading the local blocks.
    pub load_nanos: u64,
}

impl WorkerData {
    pub fn block(&self, operand: Operand) -> Option<&DenseMatrix> {
        match operand {
            Operand::X => self.x_block.as_ref(),
            Operand::XT => self.xt_block.as_ref(),
        }
    }
}

type SharedSink = Arc<Mutex<Box<dyn FrameSink>>>;

fn send(sink: &SharedSink, msg: &WireMessage) -> Result<()> {
    sink.lock().expect("sink poisoned").send(msg)
}

enum Job {
    Encode { g: GeneratorMatrix, operands: OperandSet },
    Multiply { iter: u64, operand: Operand, vector: Vec<f64>, cancelled: Arc<AtomicBool> },
}

struct BlockArrival {
    operand: Operand,
    block_id: u32,
    matrix: DenseMatrix,
}

struct Compute {
    worker_id: usize,
    data: Arc<WorkerData>,
    policy: StragglerPolicy,
    sink: SharedSink,
    blocks_in: Receiver<BlockArrival>,
    encoded: [Option<DenseMatrix>; 2],
}

impl Compute {
    fn run(mut self, jobs: Receiver<Job>) -> Result<()> {
        for job in jobs {
            match job {
                Job::Encode { g, operands } => self.encode(&g, operands)?,
                Job::Multiply { iter, operand, vector, cancelled } => {
                    self.multiply(iter, operand, &vector, &cancelled)?
                }
            }
        }
        Ok(())
    }

    fn encode(&mut self, g: &GeneratorMatrix, operands: OperandSet) -> Result<()> {
        let started = Instant::now();
        let k = g.k();
        let mut downloads = [0u64; 2];
        for operand in operands.iter() {
            let column = g.column(self.worker_id);
            let block = if g.unit_index(self.worker_id) == Some(self.worker_id) {
                self.data
                    .block(operand)
                    .cloned()
                    .ok_or_else(|| Error::Configuration(format!("worker {} has no local {operand} block", self.worker_id)))?
            } else {
                let mut encoder = BlockEncoder::shape_from_first(self.worker_id, column);
                let own = local_block(self.worker_id, k);
                for block_id in encoder.pending().to_vec() {
                    if Some(block_id) == own {
                        let local = self.data.block(operand).ok_or_else(|| {
                            Error::Configuration(format!("worker {} has no local {operand} block", self.worker_id))
                        })?;
                        encoder.absorb(block_id, local)?;
                        continue;
                    }
                    send(&self.sink, &WireMessage::BlockRequest { operand, block_id: block_id as u32 })?;
                    let arrival = self
                        .blocks_in
                        .recv()
                        .map_err(|_| Error::protocol("connection closed while waiting for a block"))?;
                    if arrival.operand != operand || arrival.block_id as usize != block_id {
                        return Err(Error::protocol(format!(
                            "expected {operand} block {block_id}, got {} block {}",
                            arrival.operand, arrival.block_id
                        )));
                    }
                    // Absorbed and dropped, one block resident at a time.
                    encoder.absorb(block_id, &arrival.matrix)?;
                }
                let eb = encoder.finish()?;
                downloads[operand.index()] = eb.downloads as u64;
                eb.matrix
            };
            self.encoded[operand.index()] = Some(block);
        }
        send(
            &self.sink,
            &WireMessage::EncodeComplete {
                worker_id: self.worker_id as u32,
                downloads_x: downloads[0],
                downloads_xt: downloads[1],
                encode_nanos: started.elapsed().as_nanos() as u64,
                load_nanos: self.data.load_nanos,
            },
        )
    }

    fn multiply(&mut self, iter: u64, operand: Operand, vector: &[f64], cancelled: &AtomicBool) -> Result<()> {
        let live = || !cancelled.load(Ordering::Relaxed);
        let Some(block) = self.encoded[operand.index()].as_ref() else {
            return Err(Error::protocol(format!("iteration {iter} started before {operand} was encoded")));
        };
        let started = Instant::now();
        let fixed = self.policy.extra_delay(self.worker_id, Duration::ZERO);
        if !sleep_while(fixed, &live) {
            return Ok(());
        }
        let compute_started = Instant::now();
        let Some(product) = block.matvec_interruptible(vector, CHUNK_ROWS, live)? else {
            log::trace!("worker {} abandoned iteration {iter} {operand}", self.worker_id);
            return Ok(());
        };
        let scaled = self.policy.extra_delay(self.worker_id, compute_started.elapsed());
        if scaled > fixed && !sleep_while(scaled - fixed, &live) {
            return Ok(());
        }
        if !live() {
            return Ok(());
        }
        log::trace!("worker {} finished iteration {iter} {operand} in {:?}", self.worker_id, started.elapsed());
        send(&self.sink, &WireMessage::PartialProduct { worker_id: self.worker_id as u32, iter, operand, vector: product })
    }
}

/// Sleeps for `d` in short slices; returns `false` as soon as `live` does.
fn sleep_while(d: Duration, live: &impl Fn() -> bool) -> bool {
    let until = Instant::now() + d;
    loop {
        if !live() {
            return false;
        }
        let now = Instant::now();
        if now >= until {
            return true;
        }
        thread::sleep(SLEEP_SLICE.min(until - now));
    }
}

/// Runs the worker until `Shutdown` or until the master goes away.
pub fn worker_run(link: Link, worker_id: usize, data: WorkerData, policy: StragglerPolicy) -> Result<()> {
    let Link { sink, mut source } = link;
    let sink: SharedSink = Arc::new(Mutex::new(sink));
    let data = Arc::new(data);
    send(&sink, &WireMessage::Register { worker_id: worker_id as u32 })?;

    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let (block_tx, block_rx) = mpsc::channel::<BlockArrival>();
    let compute = Compute {
        worker_id,
        data: Arc::clone(&data),
        policy: policy.clone(),
        sink: Arc::clone(&sink),
        blocks_in: block_rx,
        encoded: [None, None],
    };
    let compute_handle = thread::spawn(move || compute.run(job_rx));

    let outcome = communicate(worker_id, &mut *source, &sink, &data, &policy, &job_tx, &block_tx);
    drop(job_tx);
    drop(block_tx);
    let compute_result = compute_handle.join().unwrap_or_else(|_| Err(Error::protocol("compute task panicked")));
    outcome?;
    match compute_result {
        // The master closing the connection mid-job is a normal shutdown.
        Err(Error::Io(_)) => Ok(()),
        other => other,
    }
}

fn communicate(
    worker_id: usize,
    source: &mut dyn super::transport::FrameSource,
    sink: &SharedSink,
    data: &WorkerData,
    policy: &StragglerPolicy,
    jobs: &Sender<Job>,
    blocks: &Sender<BlockArrival>,
) -> Result<()> {
    let mut outstanding: Vec<(u64, Arc<AtomicBool>)> = Vec::new();
    let abandon = |outstanding: &[(u64, Arc<AtomicBool>)]| {
        outstanding.iter().for_each(|(_, flag)| flag.store(true, Ordering::Relaxed));
    };
    loop {
        let msg = match source.recv() {
            Ok(Some(msg)) => msg,
            Ok(None) | Err(Error::Io(_)) => {
                log::debug!("worker {worker_id}: master went away");
                abandon(&outstanding);
                return Ok(());
            }
            Err(e) => {
                abandon(&outstanding);
                return Err(e);
            }
        };
        match msg {
            WireMessage::SetGenerator { generator, operands, .. } => {
                if worker_id >= generator.n() {
                    return Err(Error::Configuration(format!("worker id {worker_id} outside generator of n={}", generator.n())));
                }
                let _ = jobs.send(Job::Encode { g: generator, operands });
            }
            WireMessage::BlockRequest { operand, block_id } => {
                let matrix = match data.block(operand) {
                    Some(m) if block_id as usize == worker_id => m.clone(),
                    _ => return Err(Error::protocol(format!("worker {worker_id} does not hold {operand} block {block_id}"))),
                };
                send(sink, &WireMessage::BlockResponse { operand, block_id, matrix })?;
            }
            WireMessage::BlockResponse { operand, block_id, matrix } => {
                let _ = blocks.send(BlockArrival { operand, block_id, matrix });
            }
            WireMessage::IterationStart { iter, operand, vector } => {
                if policy.disconnects_at(worker_id, iter) {
                    log::info!("worker {worker_id}: injected disconnect at iteration {iter}");
                    abandon(&outstanding);
                    return Ok(());
                }
                outstanding.retain(|(i, flag)| *i + 1 >= iter && !flag.load(Ordering::Relaxed));
                let cancelled = Arc::new(AtomicBool::new(false));
                outstanding.push((iter, Arc::clone(&cancelled)));
                let _ = jobs.send(Job::Multiply { iter, operand, vector, cancelled });
            }
            WireMessage::Cancel { iter } => {
                for (i, flag) in &outstanding {
                    if *i <= iter {
                        flag.store(true, Ordering::Relaxed);
                    }
                }
                outstanding.retain(|(i, _)| *i > iter);
            }
            WireMessage::Shutdown => {
                abandon(&outstanding);
                return Ok(());
            }
            other => {
                log::warn!("worker {worker_id}: ignoring message type {}", other.type_byte());
            }
        }
    }
}
