//! Acceptance criteria 1-8, one PASS/FAIL line each. Exits nonzero if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mcsim::engine::{run_pipelined, run_sequential, EngineError, Resource, Schedule};
use mcsim::isa::{disassemble, parse_program, validate, CodeletKind, Op, Reg, ValidatedProgram};
use mcsim::machine::{MachineConfig, MachineState, MemoryError};
use mcsim::registry::{CodeletDefinition, CodeletError, OperandSlot, Registry};
use mcsim::spgemm::{
    build_variant, dense_oracle, generate_random_program, max_abs_error, random_pair, random_program_config,
    GeneratorLimits, Variant, VariantKind,
};
use mcsim::timing::{simulate, CostModel, EventKind, SimResult};

/// Checks every simulated run for per-resource exclusivity, dependency
/// order and unit placement. Criterion 5 reports the tally.
#[derive(Default)]
struct TraceAudit {
    runs: usize,
    violations: Vec<String>,
}

impl TraceAudit {
    fn check(&mut self, label: &str, program: &ValidatedProgram, sim: &SimResult) {
        self.runs += 1;
        if let Err(e) = trace_valid(program, &sim.schedule) {
            self.violations.push(format!("{label}: {e}"));
        }
    }
}

fn trace_valid(program: &ValidatedProgram, s: &Schedule) -> Result<(), String> {
    let mut by_res: BTreeMap<Resource, Vec<(u64, u64, u64)>> = BTreeMap::new();
    for e in s.events.iter().filter(|e| e.kind != EventKind::Stall) {
        if e.start >= e.end {
            return Err(format!("empty interval for #{}", e.seq));
        }
        by_res.entry(e.resource).or_default().push((e.start, e.end, e.seq));
    }
    for (res, spans) in &mut by_res {
        spans.sort();
        if let Some(w) = spans.windows(2).find(|w| w[0].1 > w[1].0) {
            return Err(format!("#{} and #{} overlap on {res}", w[0].2, w[1].2));
        }
    }
    for e in &s.entries {
        for d in e.deps.iter().filter(|d| !d.stream) {
            let w = s.entry(d.seq).ok_or(format!("#{} depends on unknown #{}", e.seq, d.seq))?;
            if w.complete > e.issue {
                return Err(format!("#{} issued at {} before writer #{} ended at {}", e.seq, e.issue, w.seq, w.complete));
            }
        }
        let placed = match &program.program().instructions()[e.index].op {
            Op::Codelet { kind: CodeletKind::Compute, .. } => e.resource.is_cu(),
            Op::Codelet { kind: CodeletKind::Memory, .. } => e.resource.is_mcu(),
            Op::Control(_) => e.resource == Resource::Su,
        };
        if !placed {
            return Err(format!("#{} ({}) ran on {}", e.seq, e.name, e.resource));
        }
    }
    Ok(())
}

type Outcome = Result<String, String>;

fn report(n: u32, title: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let mut outcome = f();
    let took = t.elapsed();
    if let (Ok(_), Some(b)) = (&outcome, budget) {
        if took > b {
            outcome = Err(format!("took {took:.2?}, budget {b:?}"));
        }
    }
    let (verdict, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} [{verdict}] {title}: {detail} ({took:.2?})");
    outcome.is_ok()
}

fn oracle_equivalence() -> Outcome {
    let limits = GeneratorLimits::default();
    let mut runs = 0;
    for seed in 0..1000 {
        let rp = generate_random_program(seed, &limits);
        let seq_cfg = rp.config.clone();
        let p = validate(&rp.program, &rp.registry, &seq_cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let want = run_sequential(&p, MachineState::new(seq_cfg)).map_err(|e| format!("seed {seed}: {e}"))?;
        for cu_count in [1, 2, 4] {
            for renaming_enabled in [false, true] {
                let cfg = MachineConfig { cu_count, renaming_enabled, ..random_program_config() };
                let p = validate(&rp.program, &rp.registry, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
                let (got, _) = run_pipelined(&p, MachineState::new(cfg))
                    .map_err(|e| format!("seed {seed} cu {cu_count} renaming {renaming_enabled}: {e}"))?;
                if got != want {
                    return Err(format!("seed {seed} cu {cu_count} renaming {renaming_enabled}: final states differ"));
                }
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} pipelined runs byte-identical to sequential"))
}

fn run_variant(v: &Variant, costs: &CostModel, audit: &mut TraceAudit) -> Result<(Vec<u8>, SimResult), String> {
    let p = v.validated().map_err(|e| e.to_string())?;
    let seq = run_sequential(&p, v.initial_state()).map_err(|e| e.to_string())?;
    let sim = simulate(&p, v.initial_state(), costs).map_err(|e| e.to_string())?;
    if sim.final_state != seq {
        return Err("timed run differs from sequential".into());
    }
    audit.check(v.kind.name(), &p, &sim);
    Ok((v.result_bytes(&seq.memory).to_vec(), sim))
}

fn spgemm_correctness(audit: &mut TraceAudit) -> Outcome {
    let costs = CostModel::default();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for density in [0.1, 0.25, 0.5] {
        for seed in 0..100 {
            let (a, b) = random_pair(seed, 16, density);
            let want = dense_oracle(&a, &b).map_err(|e| e.to_string())?;
            let mut first: Option<Vec<u8>> = None;
            for kind in VariantKind::ALL {
                let label = format!("{kind} seed {seed} density {density}");
                let v = build_variant(kind, &a, &b).map_err(|e| format!("{label}: {e}"))?;
                let (bytes, _) = run_variant(&v, &costs, audit).map_err(|e| format!("{label}: {e}"))?;
                let got: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                let err = max_abs_error(&got, &want);
                worst = worst.max(err);
                if err > 1e-9 {
                    return Err(format!("{label}: max abs error {err:e}"));
                }
                match &first {
                    None => first = Some(bytes),
                    Some(f) if *f != bytes => return Err(format!("{label}: result bytes differ from T1")),
                    Some(_) => {}
                }
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs x 5 variants, max abs error {worst:e}, all variants byte-identical"))
}

fn makespan_ordering(audit: &mut TraceAudit) -> Outcome {
    let costs = CostModel::default();
    let (a, b) = random_pair(42, 16, 0.25);
    let mut spans = Vec::new();
    for kind in VariantKind::ALL {
        let v = build_variant(kind, &a, &b).map_err(|e| e.to_string())?;
        let (_, sim) = run_variant(&v, &costs, audit).map_err(|e| format!("{kind}: {e}"))?;
        spans.push((kind, sim.makespan));
    }
    let text = spans.iter().map(|(k, m)| format!("{k}={m}")).collect::<Vec<_>>().join(" < ");
    if spans.windows(2).all(|w| w[0].1 < w[1].1) {
        Ok(text)
    } else {
        Err(format!("not strictly increasing: {text}"))
    }
}

fn prefetch_overlap(audit: &mut TraceAudit) -> Outcome {
    let (a, b) = random_pair(42, 16, 0.25);
    let v = build_variant(VariantKind::T4, &a, &b).map_err(|e| e.to_string())?;
    let (_, sim) = run_variant(&v, &CostModel::default(), audit)?;
    let instrs = v.program.instructions();
    let find = |pred: &dyn Fn(&Op) -> bool| instrs.iter().position(|i| pred(&i.op)).ok_or("instruction not found".to_string());
    let prefetch = find(&|op| {
        matches!(op, Op::Codelet { kind: CodeletKind::Memory, operands, .. } if operands[0] == Reg::l(5))
    })?;
    let comp0 = find(&|op| matches!(op, Op::Codelet { name, .. } if name == "spOuterMatMult_2048L"))?;
    let interval = |index: usize| {
        sim.trace
            .iter()
            .find(|e| e.index == index && e.kind == EventKind::Execute)
            .map(|e| (e.start, e.end))
            .ok_or(format!("no execute event for instruction {index}"))
    };
    let (p, c) = (interval(prefetch)?, interval(comp0)?);
    if p.0 < c.1 && c.0 < p.1 {
        Ok(format!("prefetch [{}, {}) overlaps Comp0 [{}, {})", p.0, p.1, c.0, c.1))
    } else {
        Err(format!("prefetch [{}, {}) and Comp0 [{}, {}) are disjoint", p.0, p.1, c.0, c.1))
    }
}

fn sandbox() -> Outcome {
    let probe = CodeletDefinition::compute("Probe", vec![OperandSlot::write_l(), OperandSlot::read_b()], |ctx| {
        ctx.load(0, 8).map(drop)
    });
    let mut reg = Registry::new();
    reg.register(probe).unwrap();
    let cfg = MachineConfig { lines_per_l_register: 4, main_memory_bytes: 4096, ..MachineConfig::default() };
    let p = validate(&parse_program("COD Probe R2048L_0, R64B_0;").unwrap(), &reg, &cfg).unwrap();
    let sandboxed =
        |r: Result<_, EngineError>| matches!(r, Err(EngineError::Codelet { source: CodeletError::Memory(MemoryError::SandboxViolation), .. }));
    if !sandboxed(run_sequential(&p, MachineState::new(cfg.clone())).map(drop)) {
        return Err("sequential run did not report a sandbox violation".into());
    }
    if !sandboxed(run_pipelined(&p, MachineState::new(cfg)).map(drop)) {
        return Err("pipelined run did not report a sandbox violation".into());
    }
    let tmp = common::scratch();
    let dir = tmp.path();
    let src = dir.join("probe.mc");
    fs::write(&src, "LDIMM R64B_0, 0;\nCOD SandboxProbe R2048L_0, R64B_0;\nCOMMIT;\n").unwrap();
    let out = common::mcsim(&["run", src.to_str().unwrap()]);
    match out.status.code() {
        Some(3) => Ok("sandbox violation in both engines; CLI exit code 3".into()),
        code => Err(format!("CLI exit code {code:?}: {}", common::stderr(&out))),
    }
}

const PREFETCH_EXAMPLE: &str = "\
// Load data for Comp0, prefetch data for Comp1
MEMCOD LoadData0_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD LoadData1_2048L R2048L_3, R64B_7, R64B_23;
// Comp0 depends on Data0 (R_2)
// Comp1 depends on Comp0 (R_1) and Data1 (R_3)
COD Comp0_2048L R2048L_1, R2048L_2;
COD Comp1_2048L R2048L_3, R2048L_1, R2048L_3;
// Store computation result
MEMCOD StoreData_2048L R2048L_3, R64B_7, R64B_23;
";

const STREAM_EXAMPLE: &str = "\
// Stream chunks of matrix to spOuterMatMult
MEMCOD StreamCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD StreamCSRBlock_2048L R2048L_3, R64B_7, R64B_23;
// Perform outer product mult
// Stream partial result mats. out
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
// Stream in partial matrices and sum
COD PartialsSum_2048L R64B_8, R2048L_4
";

const RECODE_EXAMPLE: &str = "\
// Fetch block of B; recode block of C into CSR format;
// stream both to CU
MEMCOD FetchCSCBlock_2048L R2048L_2, R64B_6, R64B_22;
MEMCOD ConvertCSCBlock_2048L R2048L_3, R64B_7, R64B_23;
// Do sp outer product mult; stream partial mat. out
COD spOuterMatMult_2048L R2048L_4, R2048L_2, R2048L_3;
// Sum streamed-in matrices, store result
COD PartialsSum_2048L R64B_8, R64B2
";

/// As printed, the stream and recode examples lack their final `;`, and the
/// recode example writes `R64B2` for `R64B_2`.
fn transcribe(example: &str) -> String {
    let fixed = example.trim_end().replace("R64B2", "R64B_2");
    format!("{fixed};\n")
}

fn round_trips(text: &str) -> Result<usize, String> {
    let p = parse_program(text).map_err(|e| e.to_string())?;
    let dis = disassemble(&p);
    let back = parse_program(&dis).map_err(|e| format!("disassembly does not parse: {e}"))?;
    if back != p || disassemble(&back) != dis {
        return Err("parse(disassemble(p)) != p".into());
    }
    Ok(p.len())
}

fn parser_round_trip() -> Outcome {
    let limits = GeneratorLimits::default();
    for seed in 0..1000 {
        round_trips(&generate_random_program(seed, &limits).source).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    round_trips(PREFETCH_EXAMPLE).map_err(|e| format!("prefetch example: {e}"))?;
    let mut notes = Vec::new();
    for (name, example) in [("stream", STREAM_EXAMPLE), ("recode", RECODE_EXAMPLE)] {
        match parse_program(example) {
            Ok(_) => round_trips(example).map(drop).map_err(|e| format!("{name} example: {e}"))?,
            Err(e) => {
                notes.push(format!("{name} example as printed rejected at {}:{}", e.line, e.column));
                round_trips(&transcribe(example)).map_err(|e| format!("{name} example transcribed: {e}"))?;
            }
        }
    }
    let mut detail = "1000 generated programs and the prefetch, stream and recode examples round-trip".to_string();
    if !notes.is_empty() {
        detail.push_str(&format!("; {} then accepted with `;` and register-name fixes", notes.join(", ")));
    }
    Ok(detail)
}

fn loop_sum_closed_form() -> Outcome {
    let cfg = MachineConfig { lines_per_l_register: 4, main_memory_bytes: 4096, ..MachineConfig::default() };
    let reg = Registry::new();
    let mut seen = Vec::new();
    for n in [1u64, 10, 1000] {
        let p = validate(&parse_program(&common::loop_sum(n)).unwrap(), &reg, &cfg).map_err(|e| e.to_string())?;
        let seq = run_sequential(&p, MachineState::new(cfg.clone())).map_err(|e| e.to_string())?;
        let (pipe, _) = run_pipelined(&p, MachineState::new(cfg.clone())).map_err(|e| e.to_string())?;
        let want = n * (n + 1) / 2;
        for (mode, fin) in [("sequential", &seq), ("pipelined", &pipe)] {
            let got = fin.registers.read_u64(Reg::b(1)).unwrap();
            if got != want {
                return Err(format!("N={n} {mode}: got {got}, want {want}"));
            }
        }
        seen.push(format!("N={n}: {want}"));
    }
    Ok(seen.join(", "))
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut audit = TraceAudit::default();
    let results = [
        report(1, "oracle equivalence", Some(secs(60)), oracle_equivalence),
        report(2, "sparse GEMM correctness", Some(secs(30)), || spgemm_correctness(&mut audit)),
        report(3, "makespan ordering", Some(secs(5)), || makespan_ordering(&mut audit)),
        report(4, "prefetch overlap", None, || prefetch_overlap(&mut audit)),
        report(5, "trace validity", None, || match audit.violations.first() {
            None => Ok(format!("{} simulated runs valid", audit.runs)),
            Some(v) => Err(format!("{} of {} runs invalid, first: {v}", audit.violations.len(), audit.runs)),
        }),
        report(6, "sandbox", None, sandbox),
        report(7, "parser round-trip", Some(secs(5)), parser_round_trip),
        report(8, "loop-sum closed form", None, loop_sum_closed_form),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
