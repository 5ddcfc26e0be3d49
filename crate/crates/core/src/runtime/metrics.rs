use super::wire::{Operand, Role};

/// Encoding-phase counters for one worker.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerMetrics {
    pub worker_id: usize,
    pub role: Role,
    /// Sub-matrices fetched for the `X` operand.
    pub downloads_x: u64,
    /// Sub-matrices fetched for the `Xᵀ` operand.
    pub downloads_xt: u64,
    pub encode_nanos: u64,
    pub load_nanos: u64,
}

impl WorkerMetrics {
    pub fn downloads(&self) -> u64 {
        self.downloads_x + self.downloads_xt
    }
}

/// One broadcast/collect/decode round (one matrix-vector product).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub iter: u64,
    pub operand: Operand,
    pub wall_nanos: u64,
    /// Partials consumed before the set became decodable.
    pub responders_used: usize,
    pub extra_workers: usize,
    pub cancelled: usize,
    /// Stale partials from earlier rounds dropped while collecting this one.
    pub late_discarded: usize,
}

/// Both rounds of one gradient-descent iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iter: u64,
    pub wall_nanos: u64,
    pub responders: [usize; 2],
    pub extra_workers: [usize; 2],
    pub cancelled: usize,
    pub late_discarded: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentMetrics {
    pub workers: Vec<WorkerMetrics>,
    pub rounds: Vec<RoundMetrics>,
    pub encode_phase_nanos: u64,
    /// `BlockResponse` frames the master relayed during encoding.
    pub block_responses_relayed: u64,
}

impl ExperimentMetrics {
    pub fn total_downloads(&self) -> u64 {
        self.workers.iter().map(WorkerMetrics::downloads).sum()
    }

    pub fn redundant_workers(&self) -> impl Iterator<Item = &WorkerMetrics> {
        self.workers.iter().filter(|w| w.role == Role::Redundant)
    }

    pub fn iterations(&self) -> Vec<IterationMetrics> {
        let mut out: Vec<IterationMetrics> = Vec::new();
        for r in &self.rounds {
            if out.last().is_none_or(|it| it.iter != r.iter) {
                out.push(IterationMetrics {
                    iter: r.iter,
                    wall_nanos: 0,
                    responders: [0; 2],
                    extra_workers: [0; 2],
                    cancelled: 0,
                    late_discarded: 0,
                });
            }
            let it = out.last_mut().unwrap();
            it.wall_nanos += r.wall_nanos;
            it.responders[r.operand.index()] = r.responders_used;
            it.extra_workers[r.operand.index()] = r.extra_workers;
            it.cancelled += r.cancelled;
            it.late_discarded += r.late_discarded;
        }
        out
    }

    pub fn mean_iteration_nanos(&self) -> f64 {
        let its = self.iterations();
        if its.is_empty() {
            return 0.0;
        }
        its.iter().map(|i| i.wall_nanos as f64).sum::<f64>() / its.len() as f64
    }

    pub fn mean_extra_workers(&self) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        self.rounds.iter().map(|r| r.extra_workers as f64).sum::<f64>() / self.rounds.len() as f64
    }
}
