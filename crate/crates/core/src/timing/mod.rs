//! Cycle costs, simulation entry point, and trace output.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::engine::{run_timed, EngineError, FinalState, Resource, Schedule};
use crate::isa::ValidatedProgram;
use crate::machine::{MachineConfig, MachineState};

mod cost;

pub use cost::{occupied_bytes, CodeletCost, CostError, CostModel, CostSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Execute,
    Stall,
    StreamChunk,
}

/// One resource-occupancy interval `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub resource: Resource,
    pub index: usize,
    pub seq: u64,
    pub name: String,
    pub start: u64,
    pub end: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub final_state: FinalState,
    pub makespan: u64,
    pub trace: Vec<TraceEvent>,
    pub schedule: Schedule,
}

pub fn simulate(program: &ValidatedProgram, state: MachineState, costs: &CostModel) -> Result<SimResult, EngineError> {
    let (final_state, mut schedule) = run_timed(program, state, costs)?;
    schedule.events.sort_by_key(|e| (e.start, e.resource, e.seq));
    Ok(SimResult { final_state, makespan: schedule.makespan, trace: schedule.events.clone(), schedule })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceUsage {
    pub resource: String,
    pub tid: usize,
    pub busy_cycles: u64,
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceSummary {
    pub makespan: u64,
    pub resources: Vec<ResourceUsage>,
}

/// Busy cycles per resource over every resource in `cfg`. Stalls do not
/// count as busy.
pub fn utilization(trace: &[TraceEvent], cfg: &MachineConfig, makespan: u64) -> TraceSummary {
    let mut all = vec![Resource::Su];
    all.extend((0..cfg.cu_count).map(Resource::Cu));
    all.extend((0..cfg.mcu_count).map(Resource::Mcu));
    let mut busy: BTreeMap<Resource, u64> = all.iter().map(|&r| (r, 0)).collect();
    for e in trace.iter().filter(|e| e.kind != EventKind::Stall) {
        *busy.entry(e.resource).or_default() += e.end - e.start;
    }
    let resources = all
        .into_iter()
        .map(|r| {
            let b = busy[&r];
            ResourceUsage {
                resource: r.to_string(),
                tid: r.ordinal(cfg),
                busy_cycles: b,
                utilization: if makespan == 0 { 0.0 } else { b as f64 / makespan as f64 },
            }
        })
        .collect();
    TraceSummary { makespan, resources }
}

#[derive(Serialize)]
struct ChromeEvent<'a> {
    name: &'a str,
    cat: EventKind,
    ph: &'static str,
    ts: u64,
    dur: u64,
    pid: u32,
    tid: usize,
    args: ChromeArgs,
}

#[derive(Serialize)]
struct ChromeArgs {
    index: usize,
    seq: u64,
}

/// Chrome trace-event JSON: one complete (`"X"`) event per trace entry, with
/// cycles in the microsecond fields.
pub fn chrome_trace_json(trace: &[TraceEvent], cfg: &MachineConfig) -> String {
    let events: Vec<ChromeEvent<'_>> = trace
        .iter()
        .map(|e| ChromeEvent {
            name: &e.name,
            cat: e.kind,
            ph: "X",
            ts: e.start,
            dur: e.end - e.start,
            pid: 0,
            tid: e.resource.ordinal(cfg),
            args: ChromeArgs { index: e.index, seq: e.seq },
        })
        .collect();
    serde_json::to_string_pretty(&events).expect("serializable")
}

/// Path of the utilization sidecar written next to `path`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    path.with_file_name(name)
}

/// Writes the Chrome trace to `path` and the makespan/utilization summary to
/// [`sidecar_path`].
pub fn emit_trace(trace: &[TraceEvent], cfg: &MachineConfig, makespan: u64, path: &Path) -> io::Result<()> {
    std::fs::write(path, chrome_trace_json(trace, cfg))?;
    let summary = utilization(trace, cfg, makespan);
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&summary).expect("serializable"))
}
