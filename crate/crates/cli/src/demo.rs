//! Codelets available to `run`/`sim`, and the sparse GEMM demo.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mcsim::engine::run_sequential;
use mcsim::isa::RegClass;
use mcsim::registry::{CodeletDefinition, Direction, OperandSlot, Registry};
use mcsim::spgemm::{
    build_variant, dense_oracle, max_abs_error, random_pair, random_registry, spgemm_registry, CostProfile, VariantKind,
};
use mcsim::timing::{emit_trace, simulate, utilization, CostModel, TraceSummary};

use crate::Failure;

const TOLERANCE: f64 = 1e-9;

/// Built-ins, the byte-wise test codelets, the sparse GEMM set,
/// `SandboxProbe`, a compute codelet that tries to read main memory, and
/// `CopyL`, which has no built-in cost.
pub fn registry() -> Registry {
    let mut reg = random_registry();
    let gemm = spgemm_registry(CostProfile::PreRecode, false);
    reg.extend(gemm.iter().map(|d| (**d).clone())).expect("distinct names");
    let slot = OperandSlot { class: RegClass::Lines2048, direction: Direction::Write, stream: false };
    let probe = CodeletDefinition::compute("SandboxProbe", vec![slot, OperandSlot::read_b()], |ctx| {
        let addr = ctx.input_u64(1)?;
        let data = ctx.load(addr, 8)?;
        ctx.output(0)?[..8].copy_from_slice(&data);
        Ok(())
    });
    reg.register(probe).expect("distinct names");
    let l = |direction| OperandSlot { class: RegClass::Lines2048, direction, stream: false };
    let copy = CodeletDefinition::compute("CopyL", vec![l(Direction::Write), l(Direction::Read)], |ctx| {
        let (dst, [src]) = ctx.split(0, [1])?;
        dst.copy_from_slice(src);
        Ok(())
    });
    reg.register(copy).expect("distinct names");
    reg
}

pub fn utilization_map(summary: &TraceSummary) -> Value {
    let m: BTreeMap<&str, f64> = summary.resources.iter().map(|r| (r.resource.as_str(), r.utilization)).collect();
    json!(m)
}

fn trace_path(prefix: &Path, kind: VariantKind) -> PathBuf {
    let stem = prefix.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
    prefix.with_file_name(format!("{stem}.{kind}.json"))
}

pub fn spgemm(
    seed: u64,
    size: usize,
    density: f64,
    variant: &str,
    costs: &CostModel,
    trace: Option<&Path>,
) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Failure::Validation(format!("density {density} is outside [0, 1]")));
    }
    let kinds = if variant.eq_ignore_ascii_case("all") {
        VariantKind::ALL.to_vec()
    } else {
        vec![variant.parse::<VariantKind>().map_err(|e| Failure::Validation(format!("--variant: {e}")))?]
    };
    let (a, b) = random_pair(seed, size, density);
    let want = dense_oracle(&a, &b).map_err(|e| Failure::Validation(e.to_string()))?;

    let mut makespans = BTreeMap::new();
    let mut failed = Vec::new();
    eprintln!("{:<4} {:>10} {:>12}  verdict", "var", "makespan", "max_err");
    for kind in kinds {
        let v = build_variant(kind, &a, &b).map_err(|e| Failure::Validation(format!("{kind}: {e}")))?;
        let program = v.validated().map_err(|e| Failure::Validation(format!("{kind}: {e}")))?;
        let seq = run_sequential(&program, v.initial_state())?;
        let sim = simulate(&program, v.initial_state(), costs)?;
        if let Some(prefix) = trace {
            let path = trace_path(prefix, kind);
            emit_trace(&sim.trace, &v.config, sim.makespan, &path)
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        }
        let got = v.result(&sim.final_state.memory);
        let err = max_abs_error(&got, &want);
        let pass = err <= TOLERANCE && seq == sim.final_state;
        let verdict = if pass { "PASS vs dense oracle" } else { "FAIL vs dense oracle" };
        if !pass {
            failed.push(kind);
        }
        let summary = utilization(&sim.trace, &v.config, sim.makespan);
        println!(
            "{}",
            json!({
                "variant": kind.name(),
                "description": kind.description(),
                "verdict": verdict,
                "max_abs_error": err,
                "matches_sequential": seq == sim.final_state,
                "termination": sim.final_state.termination,
                "committed": sim.final_state.committed,
                "makespan": sim.makespan,
                "utilization": utilization_map(&summary),
            })
        );
        eprintln!("{:<4} {:>10} {:>12.3e}  {verdict}", kind.name(), sim.makespan, err);
        makespans.insert(kind.name(), sim.makespan);
    }
    let spans: Vec<u64> = makespans.values().copied().collect();
    let ordered = spans.windows(2).all(|w| w[0] < w[1]);
    println!("{}", json!({"seed": seed, "size": size, "density": density, "makespans": makespans, "strictly_increasing": ordered}));
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("result check failed for {failed:?}")))
    }
}
