//! Out-of-order codelet core driven by a discrete-event loop.
//!
//! Fetch and decode are in order. Each codelet instruction records its
//! dependencies at fetch (true dependencies always; anti and output
//! dependencies only without renaming), issues to a CU or MCU once they
//! have completed, and writes back on completion. Control instructions run
//! on the SU and block fetch until done. A streamed operand whose writer has
//! not started yet is paired with its next reader through a FIFO channel,
//! and both advance chunk by chunk.
//!
//! Codelet bodies run once, when the instruction fires; the timing model
//! then decides when the results become architecturally visible. Memory
//! codelets fire in fetch order, which keeps main memory consistent with
//! the in-order interpreter.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet, VecDeque};
use std::sync::Arc;

use super::{
    control_value, BlockedInstruction, ChunkTransfer, Dependency, EngineError, FinalState, Resource, Schedule,
    ScheduleEntry, Termination,
};
use crate::isa::{CodeletKind, ControlOp, Op, Reg, RegClass, ValidatedProgram};
use crate::machine::{low_u64, FifoChannel, MachineConfig, MachineState, MainMemory, Pop, RegisterFile};
use crate::registry::CodeletDefinition;
use crate::timing::{occupied_bytes, CostModel, CostSource, EventKind, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct PReg {
    class: RegClass,
    index: u32,
}

#[derive(Clone, Debug, Default)]
struct PhysInfo {
    writer: Option<u64>,
    readers: Vec<u64>,
    mapped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Complete(u64),
    StepDone(u64),
    ControlDone,
    Wake,
}

struct Channel {
    fifo: FifoChannel,
    producer: u64,
    consumer: u64,
    class_bytes: usize,
    /// Producer output split into chunks, known once the producer fires.
    chunks: Option<Vec<Vec<u8>>>,
    push_end: Vec<u64>,
    pushed: usize,
    popped: usize,
    received: Vec<u8>,
}

impl Channel {
    fn value(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.chunks.as_ref().expect("producer fired").concat();
        v.resize(self.class_bytes, 0);
        v
    }

    fn len(&self) -> usize {
        self.chunks.as_ref().map_or(0, Vec::len)
    }
}

struct Dyn {
    index: usize,
    def: Arc<CodeletDefinition>,
    reads: Vec<Option<PReg>>,
    writes: Vec<Option<PReg>>,
    pending: usize,
    ready_floor: u64,
    dependents: Vec<u64>,
    deps: Vec<Dependency>,
    stream_in: Vec<(usize, usize)>,
    stream_out: Vec<(usize, usize)>,
    gang: Option<usize>,
    fetch: u64,
    started: Option<u64>,
    resource: Option<Resource>,
    outputs: Option<Vec<Vec<u8>>>,
    duration: u64,
    steps: usize,
    step: usize,
    step_busy: bool,
    steps_done: bool,
    step_reserved: Vec<usize>,
    stall_since: Option<u64>,
}

impl Dyn {
    fn streaming(&self) -> bool {
        !self.stream_in.is_empty() || !self.stream_out.is_empty()
    }

    fn kind(&self) -> CodeletKind {
        self.def.kind
    }
}

struct ControlSlot {
    seq: u64,
    index: usize,
    started: Option<u64>,
    renamed_dst: Option<PReg>,
}

struct Core<'a> {
    prog: &'a ValidatedProgram,
    cfg: MachineConfig,
    costs: &'a CostModel,
    regs: RegisterFile,
    memory: MainMemory,
    map: [Vec<PReg>; 2],
    free: [VecDeque<PReg>; 2],
    info: [Vec<PhysInfo>; 2],
    inflight: BTreeMap<u64, Dyn>,
    memq: VecDeque<u64>,
    control: Option<ControlSlot>,
    gangs: BTreeMap<usize, Vec<u64>>,
    next_gang: usize,
    channels: Vec<Channel>,
    pc: usize,
    next_seq: u64,
    fetched: u64,
    now: u64,
    last_end: u64,
    order: u64,
    events: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    wakes: HashSet<u64>,
    cu_holder: Vec<Option<u64>>,
    mcu_busy_until: Vec<u64>,
    warned: HashSet<String>,
    done: Option<Termination>,
    schedule: Schedule,
}

/// Runs the out-of-order core under `costs`, returning the final state and
/// the full schedule (entries, trace events, FIFO transfers, makespan).
pub fn run_timed(
    program: &ValidatedProgram,
    state: MachineState,
    costs: &CostModel,
) -> Result<(FinalState, Schedule), EngineError> {
    Core::new(program, state, costs).run()
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl<'a> Core<'a> {
    fn new(prog: &'a ValidatedProgram, state: MachineState, costs: &'a CostModel) -> Self {
        let cfg = state.config.clone();
        let arch = cfg.regs_per_class;
        let phys = if cfg.renaming_enabled { cfg.physical_regs_per_class.max(arch) } else { arch };
        let mut regs = RegisterFile::with_count(&cfg, phys);
        for class in RegClass::ALL {
            for i in 0..arch {
                let r = Reg { class, index: i as u32 };
                regs.write(r, state.registers.view(r).expect("arch register")).expect("same size");
            }
        }
        let map = RegClass::ALL.map(|class| (0..arch as u32).map(|index| PReg { class, index }).collect::<Vec<_>>());
        let free = RegClass::ALL.map(|class| (arch as u32..phys as u32).map(|index| PReg { class, index }).collect());
        let info = RegClass::ALL.map(|_| {
            (0..phys).map(|i| PhysInfo { mapped: i < arch, ..PhysInfo::default() }).collect::<Vec<_>>()
        });
        Core {
            prog,
            cu_holder: vec![None; cfg.cu_count],
            mcu_busy_until: vec![0; cfg.mcu_count],
            cfg,
            costs,
            regs,
            memory: state.memory,
            map,
            free,
            info,
            inflight: BTreeMap::new(),
            memq: VecDeque::new(),
            control: None,
            gangs: BTreeMap::new(),
            next_gang: 0,
            channels: Vec::new(),
            pc: 0,
            next_seq: 0,
            fetched: 0,
            now: 0,
            last_end: 0,
            order: 0,
            events: BinaryHeap::new(),
            wakes: HashSet::new(),
            warned: HashSet::new(),
            done: None,
            schedule: Schedule::default(),
        }
    }

    fn run(mut self) -> Result<(FinalState, Schedule), EngineError> {
        let termination = loop {
            self.progress()?;
            if let Some(t) = self.done {
                break t;
            }
            if self.pc >= self.prog.len() && self.control.is_none() && self.inflight.is_empty() {
                break Termination::FellOffEnd;
            }
            let Some(Reverse((t, _, ev))) = self.events.pop() else {
                return Err(self.deadlock());
            };
            self.now = t;
            self.handle(ev)?;
            while let Some(Reverse((t2, _, _))) = self.events.peek() {
                if *t2 != t {
                    break;
                }
                let Reverse((_, _, ev)) = self.events.pop().expect("peeked");
                self.handle(ev)?;
            }
        };

        let mut registers = RegisterFile::new(&self.cfg);
        for class in RegClass::ALL {
            for (i, p) in self.map[class.ordinal()].iter().enumerate() {
                let data = self.regs.view(Reg { class, index: p.index }).expect("physical register");
                registers.write(Reg { class, index: i as u32 }, data).expect("same size");
            }
        }
        self.schedule.makespan = self.last_end.max(self.now);
        let state = FinalState { registers, memory: self.memory, committed: self.fetched, termination };
        Ok((state, self.schedule))
    }

    fn push_event(&mut self, time: u64, ev: Ev) {
        self.order += 1;
        self.events.push(Reverse((time, self.order, ev)));
    }

    fn wake(&mut self, time: u64) {
        if time > self.now && self.wakes.insert(time) {
            self.push_event(time, Ev::Wake);
        }
    }

    fn info(&mut self, p: PReg) -> &mut PhysInfo {
        &mut self.info[p.class.ordinal()][p.index as usize]
    }

    fn mapped(&self, r: Reg) -> PReg {
        self.map[r.class.ordinal()][r.index as usize]
    }

    fn maybe_free(&mut self, p: PReg) {
        if !self.cfg.renaming_enabled {
            return;
        }
        let i = self.info(p);
        if !i.mapped && i.writer.is_none() && i.readers.is_empty() && !self.free[p.class.ordinal()].contains(&p) {
            self.free[p.class.ordinal()].push_back(p);
        }
    }

    /// Physical register for a new value of `arch`. Without a free register
    /// the current mapping is reused, which callers only allow when nothing
    /// is in flight.
    fn allocate(&mut self, arch: Reg) -> PReg {
        match self.free[arch.class.ordinal()].pop_front() {
            Some(p) => {
                *self.info(p) = PhysInfo::default();
                p
            }
            None => self.mapped(arch),
        }
    }

    fn remap(&mut self, arch: Reg, p: PReg) {
        let old = self.mapped(arch);
        self.map[arch.class.ordinal()][arch.index as usize] = p;
        self.info(p).mapped = true;
        if old != p {
            self.info(old).mapped = false;
            self.maybe_free(old);
        }
    }

    fn can_allocate(&self, def: &CodeletDefinition) -> bool {
        if !self.cfg.renaming_enabled || self.inflight.is_empty() {
            return true;
        }
        RegClass::ALL.iter().all(|&class| {
            let need = def.slots.iter().filter(|s| s.class == class && s.direction.writes()).count();
            self.free[class.ordinal()].len() >= need
        })
    }

    fn progress(&mut self) -> Result<(), EngineError> {
        loop {
            let mut changed = self.fetch()?;
            changed |= self.try_control()?;
            let seqs: Vec<u64> = self.inflight.keys().copied().collect();
            for &s in &seqs {
                if self.inflight.get(&s).is_some_and(|d| d.started.is_none()) {
                    changed |= self.try_start(s)?;
                }
            }
            for &s in &seqs {
                let steppable = self
                    .inflight
                    .get(&s)
                    .is_some_and(|d| d.started.is_some() && d.streaming() && !d.step_busy && !d.steps_done);
                if steppable {
                    changed |= self.try_step(s);
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn check_limit(&self) -> Result<(), EngineError> {
        if self.fetched >= self.cfg.max_dynamic_instructions {
            return Err(EngineError::DynamicLimit(self.cfg.max_dynamic_instructions));
        }
        Ok(())
    }

    fn fetch(&mut self) -> Result<bool, EngineError> {
        let mut progressed = false;
        while self.done.is_none() && self.control.is_none() && self.pc < self.prog.len() {
            match self.prog.op(self.pc) {
                Op::Control(_) => {
                    self.check_limit()?;
                    self.fetched += 1;
                    self.control = Some(ControlSlot { seq: self.next_seq, index: self.pc, started: None, renamed_dst: None });
                    self.next_seq += 1;
                    progressed = true;
                }
                Op::Codelet { .. } => {
                    let def = self.prog.definition(self.pc).expect("validated codelet");
                    if self.inflight.len() >= self.cfg.max_in_flight || !self.can_allocate(def) {
                        break;
                    }
                    self.check_limit()?;
                    self.fetch_codelet();
                    progressed = true;
                }
            }
        }
        Ok(progressed)
    }

    /// Writer slot of `w` that streams into `p`, if it is still free to pair.
    fn stream_slot_of(&self, w: u64, p: PReg) -> Option<usize> {
        let d = self.inflight.get(&w)?;
        if d.started.is_some() {
            return None;
        }
        (0..d.def.slots.len()).find(|&j| {
            d.writes[j] == Some(p) && d.def.slots[j].stream && !d.stream_out.iter().any(|&(s, _)| s == j)
        })
    }

    fn gang_members(&self, seq: u64) -> Vec<u64> {
        self.inflight[&seq].gang.map_or_else(|| vec![seq], |g| self.gangs[&g].clone())
    }

    /// A gang issues only after its unfired memory-stream producers fire,
    /// and those fire in fetch order, so every such producer must precede
    /// every gang member.
    fn gang_ordered(&self, members: &[u64], extra_producer: Option<u64>) -> bool {
        let first = members.iter().min().copied().unwrap_or(u64::MAX);
        let producers = members.iter().flat_map(|m| &self.inflight[m].stream_in).filter_map(|&(_, ch)| {
            let c = &self.channels[ch];
            let memory = self.inflight.get(&c.producer).is_some_and(|p| p.kind() == CodeletKind::Memory);
            (memory && c.chunks.is_none()).then_some(c.producer)
        });
        producers.chain(extra_producer).all(|p| p < first)
    }

    fn pair_allowed(&self, w: u64, x: u64) -> bool {
        match (self.inflight[&w].kind(), self.inflight[&x].kind()) {
            (CodeletKind::Memory, CodeletKind::Memory) => true,
            (CodeletKind::Memory, CodeletKind::Compute) => self.gang_ordered(&self.gang_members(x), Some(w)),
            (CodeletKind::Compute, CodeletKind::Memory) => false,
            (CodeletKind::Compute, CodeletKind::Compute) => {
                let mut members = self.gang_members(w);
                if !members.contains(&x) {
                    members.extend(self.gang_members(x));
                }
                members.len() <= self.cfg.cu_count && self.gang_ordered(&members, None)
            }
        }
    }

    fn join_gang(&mut self, w: u64, x: u64) {
        let gw = self.inflight[&w].gang;
        let gx = self.inflight[&x].gang;
        if gw.is_some() && gw == gx {
            return;
        }
        let id = gw.unwrap_or_else(|| {
            let id = self.next_gang;
            self.next_gang += 1;
            self.gangs.insert(id, vec![w]);
            self.inflight.get_mut(&w).expect("in flight").gang = Some(id);
            id
        });
        let moving = match gx {
            Some(old) => self.gangs.remove(&old).expect("gang"),
            None => vec![x],
        };
        for m in &moving {
            self.inflight.get_mut(m).expect("in flight").gang = Some(id);
        }
        let members = self.gangs.get_mut(&id).expect("gang");
        members.extend(moving);
        members.sort_unstable();
    }

    fn fetch_codelet(&mut self) {
        let index = self.pc;
        self.pc += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.fetched += 1;
        let def = Arc::clone(self.prog.definition(index).expect("validated codelet"));
        let Op::Codelet { operands, .. } = self.prog.op(index) else { unreachable!() };
        let n = def.slots.len();
        let renaming = self.cfg.renaming_enabled;

        let mut reads = vec![None; n];
        let mut writes = vec![None; n];
        let mut deps = BTreeSet::new();
        let mut candidates = Vec::new();
        for (i, slot) in def.slots.iter().enumerate() {
            if !slot.direction.reads() {
                continue;
            }
            let p = self.mapped(operands[i]);
            reads[i] = Some(p);
            let info = &self.info[p.class.ordinal()][p.index as usize];
            if let Some(w) = info.writer {
                let eligible = slot.stream && info.readers.is_empty();
                match eligible.then(|| self.stream_slot_of(w, p)).flatten() {
                    Some(j) => candidates.push((i, w, j)),
                    None => {
                        if slot.stream {
                            log::debug!("instruction {index}: streamed operand {i} not paired");
                            self.schedule.stream_fallbacks += 1;
                        }
                        deps.insert(w);
                    }
                }
            }
        }
        if !renaming {
            for (i, slot) in def.slots.iter().enumerate() {
                if slot.direction.writes() {
                    let p = self.mapped(operands[i]);
                    writes[i] = Some(p);
                    let info = &self.info[p.class.ordinal()][p.index as usize];
                    deps.extend(info.writer);
                    deps.extend(info.readers.iter().copied());
                }
            }
        }

        self.inflight.insert(
            seq,
            Dyn {
                index,
                def: Arc::clone(&def),
                reads: reads.clone(),
                writes: writes.clone(),
                pending: 0,
                ready_floor: 0,
                dependents: Vec::new(),
                deps: Vec::new(),
                stream_in: Vec::new(),
                stream_out: Vec::new(),
                gang: None,
                fetch: self.now,
                started: None,
                resource: None,
                outputs: None,
                duration: 0,
                steps: 1,
                step: 0,
                step_busy: false,
                steps_done: false,
                step_reserved: Vec::new(),
                stall_since: None,
            },
        );

        for &(i, w, j) in &candidates {
            let shared = candidates.iter().filter(|c| c.1 == w).count() > 1;
            if shared || deps.contains(&w) || !self.pair_allowed(w, seq) {
                log::debug!("instruction {index}: streamed operand {i} falls back to a register dependency");
                self.schedule.stream_fallbacks += 1;
                deps.insert(w);
                continue;
            }
            if self.inflight[&w].kind() == CodeletKind::Compute && def.kind == CodeletKind::Compute {
                self.join_gang(w, seq);
            }
            let ch = self.channels.len();
            self.channels.push(Channel {
                fifo: FifoChannel::new(self.cfg.fifo_chunk_bytes, self.cfg.fifo_depth_chunks),
                producer: w,
                consumer: seq,
                class_bytes: self.cfg.class_bytes(def.slots[i].class),
                chunks: None,
                push_end: Vec::new(),
                pushed: 0,
                popped: 0,
                received: Vec::new(),
            });
            self.inflight.get_mut(&w).expect("in flight").stream_out.push((j, ch));
            let x = self.inflight.get_mut(&seq).expect("in flight");
            x.stream_in.push((i, ch));
            x.deps.push(Dependency { seq: w, stream: true });
        }

        for p in reads.iter().flatten() {
            self.info(*p).readers.push(seq);
        }
        if renaming {
            for (i, slot) in def.slots.iter().enumerate() {
                if slot.direction.writes() {
                    let p = self.allocate(operands[i]);
                    let info = self.info(p);
                    info.writer = Some(seq);
                    info.readers.clear();
                    writes[i] = Some(p);
                    self.remap(operands[i], p);
                }
            }
            self.inflight.get_mut(&seq).expect("in flight").writes = writes;
        } else {
            for p in writes.iter().flatten() {
                let info = self.info(*p);
                info.writer = Some(seq);
                info.readers.clear();
            }
        }

        for &d in &deps {
            self.inflight.get_mut(&d).expect("dependency in flight").dependents.push(seq);
        }
        let x = self.inflight.get_mut(&seq).expect("in flight");
        x.pending = deps.len();
        x.deps.extend(deps.iter().map(|&s| Dependency { seq: s, stream: false }));
        if def.kind == CodeletKind::Memory {
            self.memq.push_back(seq);
        }
    }

    fn try_control(&mut self) -> Result<bool, EngineError> {
        let Some(ctl) = &self.control else { return Ok(false) };
        if ctl.started.is_some() {
            return Ok(false);
        }
        let Op::Control(op) = self.prog.op(ctl.index) else { unreachable!() };
        let ready = match op {
            ControlOp::Commit => self.inflight.is_empty(),
            _ => {
                let srcs_ready = op.sources().iter().all(|&s| {
                    let p = self.mapped(s);
                    self.info[p.class.ordinal()][p.index as usize].writer.is_none()
                });
                let dst_ready = op.destination().is_none_or(|d| {
                    if self.cfg.renaming_enabled {
                        !self.free[d.class.ordinal()].is_empty() || self.inflight.is_empty()
                    } else {
                        let p = self.mapped(d);
                        let i = &self.info[p.class.ordinal()][p.index as usize];
                        i.writer.is_none() && i.readers.is_empty()
                    }
                });
                srcs_ready && dst_ready
            }
        };
        if !ready {
            return Ok(false);
        }
        let renamed = match op.destination() {
            Some(d) if self.cfg.renaming_enabled => Some(self.allocate(d)),
            _ => None,
        };
        let ctl = self.control.as_mut().expect("checked");
        ctl.started = Some(self.now);
        ctl.renamed_dst = renamed;
        let end = self.now + self.costs.control_cycles();
        self.push_event(end, Ev::ControlDone);
        Ok(true)
    }

    fn finish_control(&mut self) -> Result<(), EngineError> {
        let ctl = self.control.take().expect("control in progress");
        let start = ctl.started.expect("started");
        let Op::Control(op) = self.prog.op(ctl.index) else { unreachable!() };
        let read = |r: Reg| {
            let p = self.mapped(r);
            low_u64(self.regs.view(Reg { class: p.class, index: p.index }).expect("physical register"))
        };
        match op {
            ControlOp::Commit => self.done = Some(Termination::Commit),
            ControlOp::Jump { .. } => self.pc = self.prog.target(ctl.index).expect("resolved"),
            ControlOp::Branch { cond, lhs, rhs, .. } => {
                self.pc = if cond.holds(read(*lhs), read(*rhs)) {
                    self.prog.target(ctl.index).expect("resolved")
                } else {
                    ctl.index + 1
                };
            }
            _ => {
                let value = control_value(op, read).expect("value-producing op");
                let dst = op.destination().expect("value-producing op");
                let p = ctl.renamed_dst.unwrap_or_else(|| self.mapped(dst));
                self.regs
                    .write_u64(Reg { class: p.class, index: p.index }, value)
                    .map_err(|source| EngineError::Register { index: ctl.index, source })?;
                if ctl.renamed_dst.is_some() {
                    self.remap(dst, p);
                }
                self.pc = ctl.index + 1;
            }
        }
        let name = self.prog.program().instructions()[ctl.index].to_string();
        let name = name.split_whitespace().next().unwrap_or("").trim_end_matches(';').to_string();
        self.schedule.events.push(TraceEvent {
            resource: Resource::Su,
            index: ctl.index,
            seq: ctl.seq,
            name: name.clone(),
            start,
            end: self.now,
            kind: EventKind::Execute,
        });
        self.schedule.entries.push(ScheduleEntry {
            seq: ctl.seq,
            index: ctl.index,
            name,
            resource: Resource::Su,
            fetch: start,
            issue: start,
            complete: self.now,
            deps: Vec::new(),
        });
        self.last_end = self.last_end.max(self.now);
        Ok(())
    }

    fn earliest_issue(&self, d: &Dyn) -> u64 {
        d.ready_floor.max(d.fetch) + self.costs.dispatch_cycles
    }

    /// Stream producers outside `gang` have fired.
    fn producers_fired(&self, d: &Dyn) -> bool {
        d.stream_in.iter().all(|&(_, ch)| {
            let c = &self.channels[ch];
            let same_gang = d.gang.is_some() && self.inflight.get(&c.producer).is_some_and(|p| p.gang == d.gang);
            same_gang || c.chunks.is_some()
        })
    }

    fn try_start(&mut self, seq: u64) -> Result<bool, EngineError> {
        let d = &self.inflight[&seq];
        match d.kind() {
            CodeletKind::Compute => {
                let members = match d.gang {
                    Some(g) => self.gangs[&g].clone(),
                    None => vec![seq],
                };
                if members[0] != seq {
                    return Ok(false);
                }
                let mut latest = 0;
                for m in &members {
                    let md = &self.inflight[m];
                    if md.pending > 0 || md.started.is_some() || !self.producers_fired(md) {
                        return Ok(false);
                    }
                    latest = latest.max(self.earliest_issue(md));
                }
                if latest > self.now {
                    self.wake(latest);
                    return Ok(false);
                }
                let free: Vec<usize> = (0..self.cu_holder.len()).filter(|&c| self.cu_holder[c].is_none()).collect();
                if free.len() < members.len() {
                    return Ok(false);
                }
                for (m, cu) in members.iter().zip(free) {
                    self.cu_holder[cu] = Some(*m);
                    let md = self.inflight.get_mut(m).expect("in flight");
                    md.started = Some(self.now);
                    md.resource = Some(Resource::Cu(cu));
                    self.fire(*m)?;
                    let md = &self.inflight[m];
                    if !md.streaming() {
                        let end = self.now + md.duration;
                        self.push_event(end, Ev::Complete(*m));
                    }
                }
                Ok(true)
            }
            CodeletKind::Memory => {
                if self.memq.front() != Some(&seq) || d.pending > 0 || !self.producers_fired(d) {
                    return Ok(false);
                }
                let t = self.earliest_issue(d);
                if t > self.now {
                    self.wake(t);
                    return Ok(false);
                }
                let streaming = d.streaming();
                let mcu = if streaming {
                    None
                } else {
                    match (0..self.mcu_busy_until.len()).find(|&j| self.mcu_busy_until[j] <= self.now) {
                        Some(j) => Some(j),
                        None => return Ok(false),
                    }
                };
                self.memq.pop_front();
                self.inflight.get_mut(&seq).expect("in flight").started = Some(self.now);
                self.fire(seq)?;
                if let Some(j) = mcu {
                    let d = self.inflight.get_mut(&seq).expect("in flight");
                    d.resource = Some(Resource::Mcu(j));
                    let end = self.now + d.duration;
                    self.mcu_busy_until[j] = end;
                    self.push_event(end, Ev::Complete(seq));
                }
                Ok(true)
            }
        }
    }

    /// Runs the codelet body and sizes its execution.
    fn fire(&mut self, seq: u64) -> Result<(), EngineError> {
        let d = &self.inflight[&seq];
        let def = Arc::clone(&d.def);
        let mut inputs = Vec::with_capacity(def.slots.len());
        for (i, slot) in def.slots.iter().enumerate() {
            let value = if let Some(&(_, ch)) = d.stream_in.iter().find(|&&(s, _)| s == i) {
                self.channels[ch].value()
            } else if let Some(p) = d.reads[i] {
                self.regs.read(Reg { class: p.class, index: p.index }).expect("physical register")
            } else {
                vec![0; self.cfg.class_bytes(slot.class)]
            };
            inputs.push(value);
        }
        let index = d.index;
        let memory = (def.kind == CodeletKind::Memory).then_some(&mut self.memory);
        let out = def
            .execute(inputs, memory)
            .map_err(|source| EngineError::Codelet { index, name: def.name.clone(), source })?;

        let operand_bytes: u64 = out.operands.iter().map(|b| occupied_bytes(b) as u64).sum();
        let duration = self.costs.codelet_cycles(&def, operand_bytes, out.memory_bytes);
        if self.costs.resolve(&def).1 == CostSource::Default && self.warned.insert(def.name.clone()) {
            log::warn!("no cost configured for codelet `{}`; using the default per-byte cost", def.name);
        }

        let chunk = self.cfg.fifo_chunk_bytes;
        let d = &self.inflight[&seq];
        let mut steps = 0;
        for &(slot, ch) in &d.stream_out {
            let buf = &out.operands[slot];
            let n = ceil_div(occupied_bytes(buf), chunk);
            let chunks: Vec<Vec<u8>> = (0..n).map(|k| buf[k * chunk..((k + 1) * chunk).min(buf.len())].to_vec()).collect();
            steps = steps.max(n);
            self.channels[ch].chunks = Some(chunks);
        }
        for &(_, ch) in &d.stream_in {
            steps = steps.max(self.channels[ch].len());
        }
        let d = self.inflight.get_mut(&seq).expect("in flight");
        d.steps = steps.max(1);
        d.duration = duration;
        d.outputs = Some(out.operands);
        Ok(())
    }

    fn step_cycles(d: &Dyn) -> u64 {
        let (c, s, j) = (d.duration as u128, d.steps as u128, d.step as u128);
        let span = (j + 1) * c / s - j * c / s;
        (span as u64).max(1)
    }

    fn try_step(&mut self, seq: u64) -> bool {
        let d = &self.inflight[&seq];
        let (j, s) = (d.step, d.steps);
        let need = |n: usize| ceil_div((j + 1) * n, s);
        for &(_, ch) in &d.stream_in {
            let c = &self.channels[ch];
            if c.fifo.len() < need(c.len()) - c.popped {
                return self.stall(seq);
            }
        }
        for &(_, ch) in &d.stream_out {
            let c = &self.channels[ch];
            let give = need(c.len()) - c.pushed;
            if c.fifo.capacity() - c.fifo.occupancy() < give {
                return self.stall(seq);
            }
        }
        let resource = match d.kind() {
            CodeletKind::Compute => d.resource.expect("CU held"),
            CodeletKind::Memory => match (0..self.mcu_busy_until.len()).find(|&m| self.mcu_busy_until[m] <= self.now) {
                Some(m) => Resource::Mcu(m),
                None => return false,
            },
        };
        let dur = Self::step_cycles(d);
        let end = self.now + dur;
        let ins = d.stream_in.clone();
        let outs = d.stream_out.clone();

        self.close_stall(seq);
        for (_, ch) in ins {
            let c = &mut self.channels[ch];
            while c.popped < need(c.len()) {
                let Pop::Chunk(bytes) = c.fifo.pop() else { unreachable!("availability checked") };
                self.schedule.transfers.push(ChunkTransfer {
                    channel: ch,
                    producer: c.producer,
                    consumer: c.consumer,
                    chunk: c.popped,
                    bytes: bytes.len(),
                    push_end: c.push_end[c.popped],
                    pop_start: self.now,
                });
                c.received.extend(bytes);
                c.popped += 1;
            }
        }
        let mut reserved = Vec::new();
        for (_, ch) in outs {
            let c = &mut self.channels[ch];
            for _ in c.pushed..need(c.len()) {
                assert!(c.fifo.try_reserve(), "room checked");
                reserved.push(ch);
            }
        }
        if let Resource::Mcu(m) = resource {
            self.mcu_busy_until[m] = end;
        }
        let d = self.inflight.get_mut(&seq).expect("in flight");
        d.resource.get_or_insert(resource);
        d.step_busy = true;
        d.step_reserved = reserved;
        let (index, name) = (d.index, d.def.name.clone());
        self.schedule.events.push(TraceEvent {
            resource,
            index,
            seq,
            name,
            start: self.now,
            end,
            kind: EventKind::StreamChunk,
        });
        self.push_event(end, Ev::StepDone(seq));
        true
    }

    fn stall(&mut self, seq: u64) -> bool {
        let d = self.inflight.get_mut(&seq).expect("in flight");
        if d.kind() == CodeletKind::Compute && d.stall_since.is_none() {
            d.stall_since = Some(self.now);
        }
        false
    }

    fn close_stall(&mut self, seq: u64) {
        let d = self.inflight.get_mut(&seq).expect("in flight");
        if let Some(since) = d.stall_since.take() {
            if since < self.now {
                self.schedule.events.push(TraceEvent {
                    resource: d.resource.expect("CU held"),
                    index: d.index,
                    seq,
                    name: d.def.name.clone(),
                    start: since,
                    end: self.now,
                    kind: EventKind::Stall,
                });
            }
        }
    }

    fn step_done(&mut self, seq: u64) {
        let d = self.inflight.get_mut(&seq).expect("in flight");
        let reserved = std::mem::take(&mut d.step_reserved);
        d.step += 1;
        d.step_busy = false;
        let finished = d.step == d.steps;
        let outs = d.stream_out.clone();
        for ch in reserved {
            let c = &mut self.channels[ch];
            let chunk = c.chunks.as_ref().expect("fired")[c.pushed].clone();
            c.fifo.push_reserved(chunk).expect("reserved slot");
            c.push_end.push(self.now);
            c.pushed += 1;
        }
        if finished {
            self.inflight.get_mut(&seq).expect("in flight").steps_done = true;
            for &(_, ch) in &outs {
                self.channels[ch].fifo.close();
            }
            self.try_complete(seq);
            for (_, ch) in outs {
                let consumer = self.channels[ch].consumer;
                if self.inflight.contains_key(&consumer) {
                    self.try_complete(consumer);
                }
            }
        }
    }

    fn try_complete(&mut self, seq: u64) {
        let d = &self.inflight[&seq];
        if !d.steps_done {
            return;
        }
        let ins = d.stream_in.clone();
        let drained = ins.iter().all(|&(_, ch)| self.channels[ch].fifo.pop() == Pop::EndOfStream);
        if drained {
            self.complete(seq);
        } else {
            self.stall(seq);
        }
    }

    fn complete(&mut self, seq: u64) {
        self.close_stall(seq);
        let d = self.inflight.remove(&seq).expect("in flight");
        let now = self.now;
        for &(_, ch) in &d.stream_in {
            let c = &self.channels[ch];
            let sent = c.chunks.as_ref().expect("fired").concat();
            assert_eq!(c.received, sent, "stream channel {ch} delivered different bytes than were pushed");
        }
        let outputs = d.outputs.as_ref().expect("fired");
        for (i, p) in d.writes.iter().enumerate() {
            if let Some(p) = p {
                self.regs.write(Reg { class: p.class, index: p.index }, &outputs[i]).expect("class-sized output");
            }
        }
        let resource = d.resource.expect("resource assigned");
        if let Resource::Cu(c) = resource {
            self.cu_holder[c] = None;
        }
        let start = d.started.expect("started");
        if !d.streaming() {
            self.schedule.events.push(TraceEvent {
                resource,
                index: d.index,
                seq,
                name: d.def.name.clone(),
                start,
                end: now,
                kind: EventKind::Execute,
            });
        }
        self.schedule.entries.push(ScheduleEntry {
            seq,
            index: d.index,
            name: d.def.name.clone(),
            resource,
            fetch: d.fetch,
            issue: start,
            complete: now,
            deps: d.deps.clone(),
        });
        let mut touched: Vec<PReg> = d.reads.iter().chain(&d.writes).flatten().copied().collect();
        touched.sort_unstable();
        touched.dedup();
        for p in touched {
            let info = self.info(p);
            info.readers.retain(|&r| r != seq);
            if info.writer == Some(seq) {
                info.writer = None;
            }
            self.maybe_free(p);
        }
        for dep in &d.dependents {
            if let Some(x) = self.inflight.get_mut(dep) {
                x.pending -= 1;
                x.ready_floor = x.ready_floor.max(now);
            }
        }
        if let Some(g) = d.gang {
            if let Some(members) = self.gangs.get_mut(&g) {
                members.retain(|&m| m != seq);
                if members.is_empty() {
                    self.gangs.remove(&g);
                }
            }
        }
        self.last_end = self.last_end.max(now);
    }

    fn handle(&mut self, ev: Ev) -> Result<(), EngineError> {
        match ev {
            Ev::Complete(seq) => self.complete(seq),
            Ev::StepDone(seq) => self.step_done(seq),
            Ev::ControlDone => self.finish_control()?,
            Ev::Wake => {
                self.wakes.remove(&self.now);
            }
        }
        Ok(())
    }

    fn deadlock(&self) -> EngineError {
        let mut waits: BTreeMap<u64, (String, Vec<u64>)> = BTreeMap::new();
        for (&seq, d) in &self.inflight {
            let (why, on): (String, Vec<u64>) = if d.started.is_none() {
                let unmet: Vec<u64> = d.deps.iter().filter(|x| !x.stream && self.inflight.contains_key(&x.seq)).map(|x| x.seq).collect();
                if !unmet.is_empty() {
                    ("completion of earlier instructions".into(), unmet)
                } else if d.kind() == CodeletKind::Memory && self.memq.front() != Some(&seq) {
                    ("an earlier memory codelet".into(), self.memq.front().copied().into_iter().collect())
                } else if !self.producers_fired(d) {
                    let p = d.stream_in.iter().map(|&(_, ch)| self.channels[ch].producer).collect();
                    ("stream producers to start".into(), p)
                } else {
                    ("a free compute unit".into(), self.cu_holder.iter().flatten().copied().collect())
                }
            } else {
                let mut on = Vec::new();
                for &(_, ch) in &d.stream_in {
                    on.push(self.channels[ch].producer);
                }
                for &(_, ch) in &d.stream_out {
                    on.push(self.channels[ch].consumer);
                }
                ("FIFO progress".into(), on)
            };
            waits.insert(seq, (why, on));
        }

        // Report a wait-for cycle when one exists.
        let mut cycle = None;
        for &start in waits.keys() {
            let mut path = vec![start];
            let mut seen = BTreeSet::from([start]);
            let mut cur = start;
            while let Some(&next) = waits.get(&cur).and_then(|(_, on)| on.iter().find(|n| waits.contains_key(n))) {
                if let Some(pos) = path.iter().position(|&p| p == next) {
                    cycle = Some(path[pos..].to_vec());
                    break;
                }
                if !seen.insert(next) {
                    break;
                }
                path.push(next);
                cur = next;
            }
            if cycle.is_some() {
                break;
            }
        }
        let members = cycle.unwrap_or_else(|| waits.keys().copied().collect());
        EngineError::Deadlock(
            members
                .into_iter()
                .map(|s| {
                    let d = &self.inflight[&s];
                    BlockedInstruction { seq: s, index: d.index, name: d.def.name.clone(), waiting_for: waits[&s].0.clone() }
                })
                .collect(),
        )
    }
}
