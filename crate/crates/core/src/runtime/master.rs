//! The coordinating master: distributes the generator, relays block
//! transfers during encoding, then serves each matrix-vector product of the
//! trainer with one broadcast / collect / cancel / decode round.
//!
//! The master never encodes. It only decodes the `k` block products from
//! whichever responders first form a decodable set.

use std::collections::{HashMap, VecDeque};
use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::metrics::{ExperimentMetrics, RoundMetrics, WorkerMetrics};
use super::transport::{FrameSink, Link};
use super::wire::{Operand, OperandSet, Role, WireMessage};
use crate::coding::{decode, DecodableSet, GeneratorMatrix, RankTracker};
use crate::error::{Error, Result};
use crate::linalg::{reconstruct, BlockLayout};
use crate::trainers::MatvecEngine;

/// Event delivered to the master's single event loop.
#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    Message(usize, WireMessage),
    Disconnected(usize),
}

/// Addressed sends from the master to workers.
pub trait Outbound {
    fn send_to(&mut self, worker: usize, msg: &WireMessage) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Encoding,
    Iterating,
    Done,
}

/// How arrivals are consumed while collecting a round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// First come, first consumed.
    Arrival,
    /// Consume workers strictly in this order (skipping dead ones), buffering
    /// early arrivals. Makes the decodable set independent of thread timing.
    Ordered(Vec<usize>),
}

#[derive(Debug)]
pub struct MasterState {
    pub g: GeneratorMatrix,
    pub phase: Phase,
    pub current_iter: u64,
    pub current_operand: Operand,
    received: RankTracker,
    partials: HashMap<usize, Vec<f64>>,
    buffered: HashMap<usize, Vec<f64>>,
    cursor: usize,
    alive: Vec<bool>,
    schedule: Schedule,
    round_cancelled: usize,
    round_late: usize,
    pub metrics: ExperimentMetrics,
}

impl MasterState {
    pub fn new(g: GeneratorMatrix, schedule: Schedule) -> Self {
        let n = g.n();
        Self {
            received: RankTracker::new(&g),
            g,
            phase: Phase::Setup,
            current_iter: 0,
            current_operand: Operand::X,
            partials: HashMap::new(),
            buffered: HashMap::new(),
            cursor: 0,
            alive: vec![true; n],
            schedule,
            round_cancelled: 0,
            round_late: 0,
            metrics: ExperimentMetrics::default(),
        }
    }

    pub fn begin_round(&mut self, iter: u64, operand: Operand) {
        self.phase = Phase::Iterating;
        self.current_iter = iter;
        self.current_operand = operand;
        self.received = RankTracker::new(&self.g);
        self.partials.clear();
        self.buffered.clear();
        self.cursor = 0;
        self.round_cancelled = 0;
        self.round_late = 0;
    }

    pub fn received(&self) -> &RankTracker {
        &self.received
    }

    pub fn partials(&self) -> &HashMap<usize, Vec<f64>> {
        &self.partials
    }

    pub fn is_alive(&self, worker: usize) -> bool {
        self.alive[worker]
    }

    pub fn mark_dead(&mut self, worker: usize) {
        if std::mem::replace(&mut self.alive[worker], false) {
            log::warn!("worker {worker} lost; treating it as a permanent straggler");
        }
    }

    pub fn alive_workers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.g.n()).filter(|&w| self.alive[w])
    }

    fn accept(&mut self, worker: usize, vector: Vec<f64>) {
        self.partials.insert(worker, vector);
        self.received.push(worker);
    }

    fn drain_ordered(&mut self) {
        let Schedule::Ordered(order) = &self.schedule else { return };
        while !self.received.is_full() && self.cursor < order.len() {
            let next = order[self.cursor];
            if !self.alive[next] {
                self.cursor += 1;
            } else if let Some(v) = self.buffered.remove(&next) {
                self.cursor += 1;
                self.partials.insert(next, v);
                self.received.push(next);
            } else {
                break;
            }
        }
    }

    fn delivered(&self, worker: usize) -> bool {
        self.partials.contains_key(&worker) || self.buffered.contains_key(&worker)
    }

    /// `false` once the live, not-yet-heard-from workers can no longer
    /// complete a decodable set.
    fn still_possible(&self) -> Result<bool> {
        let candidates: Vec<usize> =
            (0..self.g.n()).filter(|&w| self.partials.contains_key(&w) || self.alive[w]).collect();
        Ok(self.g.decodable(&candidates)?.is_some())
    }
}

/// Consumes partial products for the current round until the consumed prefix
/// is decodable, then cancels every live worker that has not delivered.
pub fn collect_until_decodable(
    state: &mut MasterState,
    incoming: &mut impl Iterator<Item = Inbound>,
    out: &mut impl Outbound,
) -> Result<DecodableSet> {
    let iter = state.current_iter;
    let fail = |reason: String| Error::IterationFailed { iter, reason };
    while !state.received.is_full() {
        match incoming.next() {
            None => return Err(fail("no more arrivals before the set became decodable".into())),
            Some(Inbound::Disconnected(w)) => {
                state.mark_dead(w);
                state.drain_ordered();
                if !state.received.is_full() && !state.still_possible()? {
                    return Err(fail(format!("remaining workers cannot reach rank {}", state.g.k())));
                }
            }
            Some(Inbound::Message(from, WireMessage::PartialProduct { worker_id, iter: it, operand, vector })) => {
                let w = worker_id as usize;
                if w != from || w >= state.g.n() {
                    return Err(Error::protocol(format!("worker {from} sent a partial tagged {worker_id}")));
                }
                if it != iter || operand != state.current_operand {
                    state.round_late += 1;
                    continue;
                }
                if state.delivered(w) {
                    continue;
                }
                match state.schedule {
                    Schedule::Arrival => state.accept(w, vector),
                    Schedule::Ordered(_) => {
                        state.buffered.insert(w, vector);
                        state.drain_ordered();
                    }
                }
            }
            Some(Inbound::Message(from, other)) => {
                log::warn!("ignoring unexpected message type {} from worker {from}", other.type_byte());
            }
        }
    }
    for w in 0..state.g.n() {
        if state.alive[w] && !state.delivered(w) {
            if out.send_to(w, &WireMessage::Cancel { iter }).is_err() {
                state.mark_dead(w);
            }
            state.round_cancelled += 1;
        }
    }
    let arrived = state.received.arrived().to_vec();
    Ok(state.received.clone().into_decodable(arrived).expect("tracker is full"))
}

/// Per-worker senders owned by the master.
pub struct Sinks(Vec<Option<Box<dyn FrameSink>>>);

impl Outbound for Sinks {
    fn send_to(&mut self, worker: usize, msg: &WireMessage) -> Result<()> {
        match self.0.get_mut(worker).and_then(Option::as_mut) {
            Some(sink) => sink.send(msg).inspect_err(|_| self.0[worker] = None),
            None => Err(Error::protocol(format!("worker {worker} is not connected"))),
        }
    }
}

struct MasterLinks {
    sinks: Sinks,
    inbound: Receiver<Inbound>,
    readers: Vec<JoinHandle<()>>,
}

impl MasterLinks {
    /// Reads the `Register` from every link and starts one reader thread per
    /// worker feeding the shared event channel.
    fn register(links: Vec<Link>, n: usize) -> Result<Self> {
        if links.len() != n {
            return Err(Error::Configuration(format!("expected {n} worker links, got {}", links.len())));
        }
        let (tx, inbound) = mpsc::channel();
        let mut sinks: Vec<Option<Box<dyn FrameSink>>> = (0..n).map(|_| None).collect();
        let mut readers = Vec::with_capacity(n);
        for mut link in links {
            let id = match link.source.recv()? {
                Some(WireMessage::Register { worker_id }) => worker_id as usize,
                Some(other) => {
                    return Err(Error::Configuration(format!(
                        "expected Register, got message type {}",
                        other.type_byte()
                    )))
                }
                None => return Err(Error::Configuration("worker disconnected before registering".into())),
            };
            if id >= n || sinks[id].is_some() {
                return Err(Error::Configuration(format!("invalid or duplicate worker id {id}")));
            }
            sinks[id] = Some(link.sink);
            let tx = tx.clone();
            let mut source = link.source;
            readers.push(thread::spawn(move || loop {
                match source.recv() {
                    Ok(Some(msg)) => {
                        if tx.send(Inbound::Message(id, msg)).is_err() {
                            return;
                        }
                    }
                    Ok(None) | Err(_) => {
                        let _ = tx.send(Inbound::Disconnected(id));
                        return;
                    }
                }
            }));
        }
        Ok(Self { sinks: Sinks(sinks), inbound, readers })
    }
}

/// Blocking iterator over inbound events with an optional deadline.
struct Incoming<'a> {
    rx: &'a Receiver<Inbound>,
    deadline: Option<Instant>,
}

impl Iterator for Incoming<'_> {
    type Item = Inbound;

    fn next(&mut self) -> Option<Inbound> {
        match self.deadline {
            None => self.rx.recv().ok(),
            Some(at) => {
                let left = at.saturating_duration_since(Instant::now());
                self.rx.recv_timeout(left).ok()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MasterSetup {
    pub g: GeneratorMatrix,
    /// Row-block layout of `X` (samples split across blocks).
    pub layout_x: BlockLayout,
    /// Row-block layout of `Xᵀ` (features split across blocks).
    pub layout_xt: BlockLayout,
    pub schedule: Schedule,
    /// Per-round deadline; `None` waits indefinitely.
    pub deadline: Option<Duration>,
}

/// [`MatvecEngine`] backed by the worker cluster.
pub struct ClusterEngine<'a> {
    state: &'a mut MasterState,
    links: &'a mut MasterLinks,
    layout_x: BlockLayout,
    layout_xt: BlockLayout,
    deadline: Option<Duration>,
    iter: u64,
}

impl ClusterEngine<'_> {
    pub fn state(&self) -> &MasterState {
        self.state
    }

    fn round(&mut self, operand: Operand, v: &[f64]) -> Result<Vec<f64>> {
        let started = Instant::now();
        let (layout, expected_len) = match operand {
            Operand::X => (self.layout_x, self.layout_xt.original_rows()),
            Operand::XT => (self.layout_xt, self.layout_x.original_rows()),
        };
        if v.len() != expected_len {
            return Err(Error::invalid(format!("{operand} operand of length {}, expected {expected_len}", v.len())));
        }
        self.state.begin_round(self.iter, operand);
        let start = WireMessage::IterationStart { iter: self.iter, operand, vector: v.to_vec() };
        let live: Vec<usize> = self.state.alive_workers().collect();
        for w in live {
            if self.links.sinks.send_to(w, &start).is_err() {
                self.state.mark_dead(w);
            }
        }
        let mut incoming =
            Incoming { rx: &self.links.inbound, deadline: self.deadline.map(|d| started + d) };
        let ds = collect_until_decodable(self.state, &mut incoming, &mut self.links.sinks)?;
        if let Some((w, p)) = self.state.partials.iter().find(|(_, p)| p.len() != layout.block_rows) {
            return Err(Error::protocol(format!(
                "worker {w} returned {} rows, expected {}",
                p.len(),
                layout.block_rows
            )));
        }
        let decoded = decode(&self.state.g, &ds, &self.state.partials)?;
        let product = reconstruct(&decoded, layout.pad_rows)?;
        let k = self.state.g.k();
        let metrics = RoundMetrics {
            iter: self.iter,
            operand,
            wall_nanos: started.elapsed().as_nanos() as u64,
            responders_used: ds.worker_ids.len(),
            extra_workers: ds.extra_workers(k),
            cancelled: self.state.round_cancelled,
            late_discarded: self.state.round_late,
        };
        self.state.metrics.rounds.push(metrics);
        Ok(product)
    }
}

impl MatvecEngine for ClusterEngine<'_> {
    fn n_samples(&self) -> usize {
        self.layout_x.original_rows()
    }

    fn n_features(&self) -> usize {
        self.layout_xt.original_rows()
    }

    fn begin_iteration(&mut self, iter: u64) {
        self.iter = iter;
    }

    fn multiply_x(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.round(Operand::X, v)
    }

    fn multiply_xt(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.round(Operand::XT, v)
    }
}

fn role_of(g: &GeneratorMatrix, worker: usize) -> Role {
    if g.unit_index(worker) == Some(worker) {
        Role::Systematic
    } else {
        Role::Redundant
    }
}

fn encoding_phase(state: &mut MasterState, links: &mut MasterLinks) -> Result<()> {
    let (n, k) = (state.g.n(), state.g.k());
    let started = Instant::now();
    state.phase = Phase::Encoding;
    for w in 0..n {
        let msg = WireMessage::SetGenerator { generator: state.g.clone(), role: role_of(&state.g, w), operands: OperandSet::ALL };
        links.sinks.send_to(w, &msg).map_err(|e| Error::Configuration(format!("worker {w} unreachable during setup: {e}")))?;
    }
    let mut pending: Vec<VecDeque<usize>> = vec![VecDeque::new(); k];
    let mut done: Vec<Option<WorkerMetrics>> = vec![None; n];
    let mut remaining = n;
    while remaining > 0 {
        let event = links.inbound.recv().map_err(|_| Error::Configuration("all workers lost during encoding".into()))?;
        match event {
            Inbound::Disconnected(w) => {
                return Err(Error::Configuration(format!("worker {w} disconnected during encoding")));
            }
            Inbound::Message(w, WireMessage::BlockRequest { operand, block_id }) => {
                let holder = block_id as usize;
                if holder >= k {
                    return Err(Error::protocol(format!("worker {w} requested nonexistent block {block_id}")));
                }
                pending[holder].push_back(w);
                links.sinks.send_to(holder, &WireMessage::BlockRequest { operand, block_id }).map_err(|e| {
                    Error::Configuration(format!("data holder {holder} unreachable: {e}"))
                })?;
            }
            Inbound::Message(h, msg @ WireMessage::BlockResponse { .. }) => {
                let requester = pending
                    .get_mut(h)
                    .and_then(VecDeque::pop_front)
                    .ok_or_else(|| Error::protocol(format!("unsolicited block response from worker {h}")))?;
                state.metrics.block_responses_relayed += 1;
                links.sinks.send_to(requester, &msg).map_err(|e| {
                    Error::Configuration(format!("worker {requester} unreachable during encoding: {e}"))
                })?;
            }
            Inbound::Message(w, WireMessage::EncodeComplete { worker_id, downloads_x, downloads_xt, encode_nanos, load_nanos }) => {
                if worker_id as usize != w || done[w].is_some() {
                    return Err(Error::protocol(format!("bad EncodeComplete from worker {w}")));
                }
                done[w] = Some(WorkerMetrics {
                    worker_id: w,
                    role: role_of(&state.g, w),
                    downloads_x,
                    downloads_xt,
                    encode_nanos,
                    load_nanos,
                });
                remaining -= 1;
            }
            Inbound::Message(w, other) => {
                return Err(Error::protocol(format!(
                    "unexpected message type {} from worker {w} during encoding",
                    other.type_byte()
                )));
            }
        }
    }
    state.metrics.workers = done.into_iter().map(Option::unwrap).collect();
    state.metrics.encode_phase_nanos = started.elapsed().as_nanos() as u64;
    Ok(())
}

/// Runs setup and encoding, hands a [`ClusterEngine`] to `trainer`, then
/// shuts every worker down.
pub fn master_run<T>(
    links: Vec<Link>,
    setup: MasterSetup,
    trainer: impl FnOnce(&mut ClusterEngine<'_>) -> Result<T>,
) -> Result<(T, ExperimentMetrics)> {
    let n = setup.g.n();
    if setup.layout_x.k != setup.g.k() || setup.layout_xt.k != setup.g.k() {
        return Err(Error::Configuration("block layouts do not match the generator's k".into()));
    }
    let mut links = MasterLinks::register(links, n)?;
    let mut state = MasterState::new(setup.g, setup.schedule);
    let result = encoding_phase(&mut state, &mut links).and_then(|()| {
        let mut engine = ClusterEngine {
            state: &mut state,
            links: &mut links,
            layout_x: setup.layout_x,
            layout_xt: setup.layout_xt,
            deadline: setup.deadline,
            iter: 0,
        };
        trainer(&mut engine)
    });
    state.phase = Phase::Done;
    for w in 0..n {
        let _ = links.sinks.send_to(w, &WireMessage::Shutdown);
    }
    let MasterLinks { sinks, inbound, readers } = links;
    drop(sinks);
    drop(inbound);
    for r in readers {
        let _ = r.join();
    }
    result.map(|out| (out, state.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::Scheme;

    #[derive(Default)]
    struct Recorder(Vec<(usize, WireMessage)>);

    impl Outbound for Recorder {
        fn send_to(&mut self, worker: usize, msg: &WireMessage) -> Result<()> {
            self.0.push((worker, msg.clone()));
            Ok(())
        }
    }

    fn partial(w: usize, iter: u64, operand: Operand) -> Inbound {
        Inbound::Message(w, WireMessage::PartialProduct { worker_id: w as u32, iter, operand, vector: vec![w as f64] })
    }

    fn duplicate_rlnc() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0, 1.0]], Scheme::Rlnc, 0).unwrap()
    }

    #[test]
    fn mds_needs_exactly_k_arrivals() {
        let g = GeneratorMatrix::systematic_mds(3, 6).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(0, Operand::X);
        let mut arrivals = [5, 3, 4, 0, 1, 2].into_iter().map(|w| partial(w, 0, Operand::X));
        let mut out = Recorder::default();
        let ds = collect_until_decodable(&mut st, &mut arrivals, &mut out).unwrap();
        assert_eq!(ds.worker_ids, vec![5, 3, 4]);
        assert_eq!(ds.extra_workers(3), 0);
        let cancelled: Vec<usize> = out.0.iter().map(|(w, _)| *w).collect();
        assert_eq!(cancelled, vec![0, 1, 2]);
        assert!(out.0.iter().all(|(_, m)| *m == WireMessage::Cancel { iter: 0 }));
    }

    #[test]
    fn rlnc_duplicate_column_costs_one_extra() {
        let mut st = MasterState::new(duplicate_rlnc(), Schedule::Arrival);
        st.begin_round(4, Operand::XT);
        let mut arrivals = [2, 3, 0, 1].into_iter().map(|w| partial(w, 4, Operand::XT));
        let ds = collect_until_decodable(&mut st, &mut arrivals, &mut Recorder::default()).unwrap();
        assert_eq!(ds.worker_ids, vec![2, 3, 0]);
        assert_eq!(ds.extra_workers(2), 1);
        assert_eq!(ds.pivot_columns, vec![0, 2]);
        assert_eq!(arrivals.next(), Some(partial(1, 4, Operand::XT)));
    }

    #[test]
    fn systematic_prefix_stops_at_k() {
        let g = GeneratorMatrix::rlnc(2, 4, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(0, Operand::X);
        let mut arrivals = [0, 1, 2, 3].into_iter().map(|w| partial(w, 0, Operand::X));
        let ds = collect_until_decodable(&mut st, &mut arrivals, &mut Recorder::default()).unwrap();
        assert_eq!(ds.pivot_columns, vec![0, 1]);
    }

    #[test]
    fn stale_partials_are_discarded() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(3, Operand::XT);
        let events = vec![partial(2, 3, Operand::X), partial(1, 2, Operand::XT), partial(0, 3, Operand::XT), partial(2, 3, Operand::XT)];
        let ds = collect_until_decodable(&mut st, &mut events.into_iter(), &mut Recorder::default()).unwrap();
        assert_eq!(ds.worker_ids, vec![0, 2]);
        assert_eq!(st.round_late, 2);
        assert_eq!(st.partials()[&2], vec![2.0]);
    }

    #[test]
    fn stream_end_fails_iteration() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(1, Operand::X);
        let err = collect_until_decodable(&mut st, &mut vec![partial(0, 1, Operand::X)].into_iter(), &mut Recorder::default())
            .unwrap_err();
        assert!(matches!(err, Error::IterationFailed { iter: 1, .. }));
    }

    #[test]
    fn losing_too_many_workers_fails_early() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(0, Operand::X);
        let events = vec![Inbound::Disconnected(0), Inbound::Disconnected(2), partial(1, 0, Operand::X)];
        let err = collect_until_decodable(&mut st, &mut events.into_iter(), &mut Recorder::default()).unwrap_err();
        assert!(matches!(err, Error::IterationFailed { .. }));
    }

    #[test]
    fn one_loss_is_tolerated() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(0, Operand::X);
        let events = vec![Inbound::Disconnected(1), partial(2, 0, Operand::X), partial(0, 0, Operand::X)];
        let mut out = Recorder::default();
        let ds = collect_until_decodable(&mut st, &mut events.into_iter(), &mut out).unwrap();
        assert_eq!(ds.pivot_columns, vec![0, 2]);
        assert!(out.0.is_empty(), "dead worker must not be cancelled");
    }

    #[test]
    fn ordered_schedule_ignores_arrival_timing() {
        let g = GeneratorMatrix::systematic_mds(2, 4).unwrap();
        for arrival in [[3, 2, 1, 0], [0, 1, 2, 3], [2, 0, 3, 1]] {
            let mut st = MasterState::new(g.clone(), Schedule::Ordered(vec![1, 3, 0, 2]));
            st.begin_round(0, Operand::X);
            let mut events = arrival.into_iter().map(|w| partial(w, 0, Operand::X));
            let ds = collect_until_decodable(&mut st, &mut events, &mut Recorder::default()).unwrap();
            assert_eq!(ds.worker_ids, vec![1, 3]);
        }
    }

    #[test]
    fn ordered_schedule_skips_dead_workers() {
        let g = GeneratorMatrix::systematic_mds(2, 4).unwrap();
        let mut st = MasterState::new(g, Schedule::Ordered(vec![0, 1, 2, 3]));
        st.begin_round(0, Operand::X);
        let events = vec![partial(2, 0, Operand::X), Inbound::Disconnected(1), partial(0, 0, Operand::X)];
        let ds = collect_until_decodable(&mut st, &mut events.into_iter(), &mut Recorder::default()).unwrap();
        assert_eq!(ds.worker_ids, vec![0, 2]);
    }

    #[test]
    fn mislabelled_partial_is_protocol_error() {
        let g = GeneratorMatrix::systematic_mds(2, 3).unwrap();
        let mut st = MasterState::new(g, Schedule::Arrival);
        st.begin_round(0, Operand::X);
        let bad = Inbound::Message(0, WireMessage::PartialProduct { worker_id: 1, iter: 0, operand: Operand::X, vector: vec![] });
        let err = collect_until_decodable(&mut st, &mut vec![bad].into_iter(), &mut Recorder::default()).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }
}
