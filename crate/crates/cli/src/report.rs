//! Run reports: a self-describing JSON document with the per-machine
//! counters, imbalance ratios, and a breakdown into communication,
//! computation, and overhead, plus a digest of the produced values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tdorch_core::bsp::{load_imbalance, CostCounters, Metric};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Wall-clock seconds since the epoch; the only non-deterministic
    /// field, excluded from reproducibility comparisons.
    pub timestamp: u64,
    pub command: String,
    pub config: BTreeMap<String, serde_json::Value>,
    pub machines: usize,
    pub counters: CounterBlock,
    pub imbalance: ImbalanceBlock,
    pub breakdown: BreakdownBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orchestration: Option<OrchBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphBlock>,
    pub output_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CounterBlock {
    pub words_sent: Vec<u64>,
    pub words_received: Vec<u64>,
    pub words_local: Vec<u64>,
    pub comp_work: Vec<u64>,
    pub overhead: Vec<u64>,
    pub supersteps: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImbalanceBlock {
    pub sent: f64,
    pub received: f64,
    pub comp: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BreakdownBlock {
    pub communication_words: u64,
    pub computation_units: u64,
    pub overhead_words: u64,
    /// Communication words per orchestration phase, when available.
    pub per_phase: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OrchBlock {
    pub strategy: String,
    pub executed_tasks: u64,
    pub supersteps_used: u64,
    pub superstep_budget: u64,
    pub forest_height: u64,
    pub fanout: usize,
    pub max_meta_level: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphBlock {
    pub algo: String,
    pub n: usize,
    pub m_directed: u64,
    pub rounds: u64,
    pub sparse_rounds: u64,
    pub dense_rounds: u64,
    pub edge_visits: u64,
    pub f_applied: u64,
}

impl RunReport {
    pub fn from_counters(
        command: &str,
        config: BTreeMap<String, serde_json::Value>,
        delta: &CostCounters,
        per_phase: BTreeMap<String, u64>,
        output_digest: String,
    ) -> Self {
        let machines = delta.words_sent.len();
        Self {
            schema_version: SCHEMA_VERSION,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            command: command.to_string(),
            config,
            machines,
            counters: CounterBlock {
                words_sent: delta.words_sent.clone(),
                words_received: delta.words_received.clone(),
                words_local: delta.words_local.clone(),
                comp_work: delta.comp_work.clone(),
                overhead: delta.overhead.clone(),
                supersteps: delta.supersteps,
            },
            imbalance: ImbalanceBlock {
                sent: load_imbalance(delta, Metric::Sent),
                received: load_imbalance(delta, Metric::Received),
                comp: load_imbalance(delta, Metric::Comp),
            },
            breakdown: BreakdownBlock {
                communication_words: delta.total_sent(),
                computation_units: delta.comp_work.iter().sum(),
                overhead_words: delta.overhead.iter().sum(),
                per_phase,
            },
            orchestration: None,
            graph: None,
            output_digest,
        }
    }

    /// Internal consistency: conservation and sane vector lengths.
    pub fn validate(&self) -> Result<(), String> {
        let c = &self.counters;
        if c.words_sent.len() != self.machines
            || c.words_received.len() != self.machines
            || c.comp_work.len() != self.machines
        {
            return Err("counter vectors do not match machine count".into());
        }
        let sent: u64 = c.words_sent.iter().sum();
        let received: u64 = c.words_received.iter().sum();
        if sent != received {
            return Err(format!("conservation violated: {sent} sent vs {received} received"));
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err("unknown schema version".into());
        }
        Ok(())
    }
}

/// FNV-1a over arbitrary bytes; stable digest for outputs.
pub fn fnv64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Per-machine counter rows for plotting.
pub fn write_csv(out: &mut dyn std::io::Write, delta: &CostCounters) -> std::io::Result<()> {
    writeln!(out, "machine,words_sent,words_received,comp_work,overhead")?;
    for i in 0..delta.words_sent.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i, delta.words_sent[i], delta.words_received[i], delta.comp_work[i], delta.overhead[i]
        )?;
    }
    Ok(())
}
