use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::node::Mode;

/// One periodic snapshot of the cumulative counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub delivered: u64,
    pub transmissions: u64,
    pub avg_queue: f64,
    pub loss: f64,
}

/// Counters of one run. Packet counts cover the cohort generated after
/// warmup; transmission counts cover frames started after warmup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLedger {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub nodes: usize,
    pub measured_time: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped_retry: u64,
    pub dropped_overflow: u64,
    pub residual: u64,
    /// Packets that left every queue undelivered with no recorded drop.
    pub unaccounted: u64,
    /// Data frames, native or coded.
    pub transmissions: u64,
    pub coded_transmissions: u64,
    pub report_transmissions: u64,
    pub retransmissions: u64,
    pub recovered: u64,
    pub undecodable: u64,
    pub duplicates: u64,
    pub decode_mismatches: u64,
    pub phantom_deliveries: u64,
    pub pu_interrupted_frames: u64,
    /// Contention slots a node with traffic sat out because of a PU, plus
    /// grants refused for the same reason.
    pub pu_deferrals: u64,
    pub holds: u64,
    pub id_collisions: u64,
    /// Samples where per-packet copy counts disagreed with the queues.
    pub conservation_violations: u64,
    /// Time integral of the summed queue lengths.
    pub queue_integral: f64,
    pub series: Vec<Sample>,
}

impl MetricsLedger {
    pub fn lost(&self) -> u64 {
        self.dropped_retry + self.dropped_overflow
    }

    pub fn loss_rate(&self) -> f64 {
        ratio(self.lost() as f64, self.generated as f64).unwrap_or(0.0)
    }

    /// Mean queue length per node over the measured interval.
    pub fn avg_queue(&self) -> f64 {
        ratio(self.queue_integral, self.measured_time * self.nodes as f64).unwrap_or(0.0)
    }

    pub fn tx_per_delivered(&self) -> Option<f64> {
        ratio(self.transmissions as f64, self.delivered as f64)
    }

    /// generated = delivered + dropped(retry) + dropped(overflow) + residual.
    pub fn conserved(&self) -> bool {
        self.unaccounted == 0
            && self.generated == self.delivered + self.dropped_retry + self.dropped_overflow + self.residual
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            seed: self.seed,
            generated: self.generated,
            delivered: self.delivered,
            transmissions: self.transmissions,
            lost: self.lost(),
            residual: self.residual,
            avg_queue: self.avg_queue(),
            loss_rate: self.loss_rate(),
            tx_per_delivered: self.tx_per_delivered(),
            coded_fraction: ratio(self.coded_transmissions as f64, self.transmissions as f64),
        }
    }

    /// One row per sample, tagged with seed and mode.
    pub fn write_series_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "mode", "t", "delivered", "transmissions", "avg_queue", "loss"])?;
        let mode = self.mode.map_or("", Mode::label);
        for s in &self.series {
            w.write_record([
                self.seed.to_string(),
                mode.to_string(),
                format!("{:.6}", s.t),
                s.delivered.to_string(),
                s.transmissions.to_string(),
                format!("{:.6}", s.avg_queue),
                format!("{:.6}", s.loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The headline numbers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub generated: u64,
    pub delivered: u64,
    pub transmissions: u64,
    pub lost: u64,
    pub residual: u64,
    pub avg_queue: f64,
    pub loss_rate: f64,
    pub tx_per_delivered: Option<f64>,
    pub coded_fraction: Option<f64>,
}

/// Gains of a run over its baseline. `None` when the baseline delivered
/// nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub throughput_gain: Option<f64>,
    pub coding_gain: Option<f64>,
    pub avg_queue: f64,
    pub loss_rate: f64,
}

pub fn compute_metrics(run: &MetricsLedger, baseline: &MetricsLedger) -> Gains {
    let throughput_gain = ratio(run.delivered as f64, baseline.delivered as f64);
    let coding_gain = match (baseline.tx_per_delivered(), run.tx_per_delivered()) {
        (Some(b), Some(r)) => ratio(b, r),
        _ => None,
    };
    Gains {
        throughput_gain,
        coding_gain,
        avg_queue: run.avg_queue(),
        loss_rate: run.loss_rate(),
    }
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b > 0.0).then(|| a / b)
}
