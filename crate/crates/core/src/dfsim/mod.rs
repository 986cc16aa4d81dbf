//! Phase-level dataflow simulator for tiled MatMul engines.
//!
//! A run is a dependency graph of loads, compute bursts and write-backs.
//! Compute bursts take a fixed number of cycles; transfers share one off-chip
//! channel, split max-min fairly with each port capped at its physical width.
//! Time is continuous between events and the total is rounded up to whole
//! cycles at the end.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwmodel::{self, EngineConfig, EngineMode, PlatformSpec, RateMode, TileConfig};
use crate::quant::QuantScheme;
use crate::tensor::LayerShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Overlap {
    /// Two slots per operand buffer; loads run ahead of compute.
    #[default]
    DoubleBuffered,
    /// Load, compute and write back one phase at a time.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Port {
    Lhs,
    W1,
    W2,
    Rhs,
    Out,
}

impl Port {
    fn label(self) -> &'static str {
        match self {
            Port::Lhs => "lhs",
            Port::W1 => "w1",
            Port::W2 => "w2",
            Port::Rhs => "rhs",
            Port::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Compute { unit: u8, cycles: u64 },
    Transfer { port: Port, words: u64, bits: u32, width: u64 },
}

#[derive(Debug, Clone)]
struct Node {
    kind: Kind,
    phase: usize,
    pending: u32,
    dependents: Vec<u32>,
}

#[derive(Default)]
struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    fn add(&mut self, kind: Kind, phase: usize, deps: &[Option<usize>]) -> usize {
        let id = self.nodes.len();
        let mut pending = 0;
        for d in deps.iter().flatten() {
            debug_assert!(*d < id);
            self.nodes[*d].dependents.push(id as u32);
            pending += 1;
        }
        self.nodes.push(Node {
            kind,
            phase,
            pending,
            dependents: Vec::new(),
        });
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: usize,
    pub start_cycle: f64,
    pub end_cycle: f64,
    /// Port name, or `compute1`/`compute2` for compute bursts.
    pub port: String,
    pub words: u64,
    /// Transfers: cycles lost to channel sharing. Compute: idle cycles before
    /// the burst on its unit.
    pub stalls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub cycles: u64,
    /// Busy cycles summed over compute units.
    pub compute_cycles: u64,
    pub port_words: BTreeMap<String, u64>,
    pub channel_bits: u64,
    /// Cycles during which the channel was saturated and held some port
    /// below its width.
    pub channel_stall_cycles: u64,
    /// Useful MACs over the MACs issued by padded tiles.
    pub occupancy: f64,
    /// Useful MACs over `cycles × (multipliers across all units)`.
    pub utilization: f64,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
}

impl SimResult {
    pub fn channel_bits_per_cycle(&self) -> f64 {
        self.channel_bits as f64 / self.cycles as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    pub overlap: Overlap,
    pub trace: bool,
}

struct Layout {
    rows: usize,
    cols: usize,
    beats: u64,
    tile: TileConfig,
    k: usize,
}

impl Layout {
    fn new(tile: TileConfig, shape: &LayerShape) -> Self {
        Self {
            rows: shape.m.div_ceil(tile.m_t),
            cols: shape.n.div_ceil(tile.n_t),
            beats: shape.k.div_ceil(tile.k_f) as u64,
            tile,
            k: shape.k,
        }
    }
}

/// Per-stage bookkeeping while emitting nodes.
struct StageState {
    unit: u8,
    rhs_port: Port,
    lhs: Option<Port>,
    out: bool,
    act_bits: u32,
    w_bits: u32,
    computes: Vec<usize>,
    outs: Vec<usize>,
    row_last_compute: Vec<usize>,
    rhs_loads: usize,
}

struct Emitter {
    g: Graph,
    overlap: Overlap,
    last_on_port: BTreeMap<u8, usize>,
    last_compute: BTreeMap<u8, usize>,
    phase: usize,
}

impl Emitter {
    fn new(overlap: Overlap) -> Self {
        Self {
            g: Graph::default(),
            overlap,
            last_on_port: BTreeMap::new(),
            last_compute: BTreeMap::new(),
            phase: 0,
        }
    }

    // W1 and W2 share the RHS port on a single engine; `phys` tells apart
    // physical ports.
    fn transfer(&mut self, phys: u8, port: Port, words: u64, bits: u32, width: u64, deps: &[Option<usize>]) -> usize {
        let mut all = deps.to_vec();
        all.push(self.last_on_port.get(&phys).copied());
        let id = self.g.add(
            Kind::Transfer {
                port,
                words,
                bits,
                width,
            },
            self.phase,
            &all,
        );
        self.last_on_port.insert(phys, id);
        id
    }

    fn compute(&mut self, unit: u8, cycles: u64, deps: &[Option<usize>]) -> usize {
        let mut all = deps.to_vec();
        all.push(self.last_compute.get(&unit).copied());
        let id = self.g.add(Kind::Compute { unit, cycles }, self.phase, &all);
        self.last_compute.insert(unit, id);
        id
    }

    /// Emit one row of phases (all N-tiles for LHS row `i`).
    ///
    /// `row_ready` gates the first compute of the row on an on-chip producer
    /// and `out_free` on its on-chip consumer releasing a buffer slot.
    fn row(
        &mut self,
        st: &mut StageState,
        lay: &Layout,
        rhs_phys: u8,
        i: usize,
        row_ready: Option<usize>,
        out_free: Option<usize>,
    ) {
        let t = lay.tile;
        let double = self.overlap == Overlap::DoubleBuffered;
        let prev_out = |st: &StageState, back: usize| -> Option<usize> { st.outs.len().checked_sub(back).map(|j| st.outs[j]) };
        let lhs = st.lhs.map(|port| {
            let slot = if double {
                i.checked_sub(2).map(|r| st.row_last_compute[r])
            } else {
                prev_out(st, 1).or_else(|| st.computes.last().copied())
            };
            self.transfer(
                10 + st.unit,
                port,
                (t.m_t * lay.k) as u64,
                st.act_bits,
                (t.m_t * t.k_f) as u64,
                &[slot],
            )
        });
        for j in 0..lay.cols {
            let q = st.rhs_loads;
            let slot = if double {
                q.checked_sub(2).map(|x| st.computes[x])
            } else {
                prev_out(st, 1).or_else(|| st.computes.last().copied())
            };
            let rhs = self.transfer(
                rhs_phys,
                st.rhs_port,
                (t.n_t * lay.k) as u64,
                st.w_bits,
                (t.n_t * t.k_f) as u64,
                &[slot],
            );
            st.rhs_loads += 1;
            let out_slot = if double { prev_out(st, 2) } else { prev_out(st, 1) };
            let (ready, free) = if j == 0 { (row_ready, out_free) } else { (None, None) };
            let c = self.compute(st.unit, lay.beats, &[lhs, Some(rhs), out_slot, ready, free]);
            st.computes.push(c);
            if st.out {
                let o = self.transfer(
                    20 + st.unit,
                    Port::Out,
                    (t.m_t * t.n_t) as u64,
                    st.act_bits,
                    (t.m_t * t.n_t) as u64,
                    &[Some(c)],
                );
                st.outs.push(o);
            }
            self.phase += 1;
        }
        st.row_last_compute
            .push(*st.computes.last().expect("row has at least one phase"));
    }
}

fn stage(unit: u8, rhs_port: Port, lhs: Option<Port>, out: bool, scheme: QuantScheme) -> StageState {
    StageState {
        unit,
        rhs_port,
        lhs,
        out,
        act_bits: scheme.act_wl as u32,
        w_bits: scheme.weight_wl as u32,
        computes: Vec::new(),
        outs: Vec::new(),
        row_last_compute: Vec::new(),
        rhs_loads: 0,
    }
}

fn build(engine: &EngineConfig, shape: &LayerShape, scheme: QuantScheme, overlap: Overlap) -> Result<Graph> {
    let mut em = Emitter::new(overlap);
    match engine.mode {
        EngineMode::Dense => {
            let lay = Layout::new(engine.stage1, shape);
            let mut st = stage(1, Port::Rhs, Some(Port::Lhs), true, scheme);
            for i in 0..lay.rows {
                em.row(&mut st, &lay, 1, i, None, None);
            }
        }
        EngineMode::SingleSvd => {
            let s1 = LayerShape {
                m: shape.m,
                k: shape.k,
                n: engine.rank,
            };
            let s2 = LayerShape {
                m: shape.m,
                k: engine.rank,
                n: shape.n,
            };
            let l1 = Layout::new(engine.stage1, &s1);
            let l2 = Layout::new(engine.stage2, &s2);
            let mut a = stage(1, Port::W1, Some(Port::Lhs), false, scheme);
            for i in 0..l1.rows {
                em.row(&mut a, &l1, 1, i, None, None);
            }
            let mut b = stage(1, Port::W2, None, true, scheme);
            // the RHS slot rule carries over from stage 1 on the shared port
            b.computes = a.computes.clone();
            b.rhs_loads = a.rhs_loads;
            for i in 0..l2.rows {
                em.row(&mut b, &l2, 1, i, None, None);
            }
        }
        EngineMode::CascadeSvd => {
            let s1 = LayerShape {
                m: shape.m,
                k: shape.k,
                n: engine.rank,
            };
            let s2 = LayerShape {
                m: shape.m,
                k: engine.rank,
                n: shape.n,
            };
            let l1 = Layout::new(engine.stage1, &s1);
            let l2 = Layout::new(engine.stage2, &s2);
            let mut a = stage(1, Port::W1, Some(Port::Lhs), false, scheme);
            let mut b = stage(2, Port::W2, None, true, scheme);
            let depth = if overlap == Overlap::DoubleBuffered { 2 } else { 1 };
            for i in 0..l1.rows {
                // ping-pong: stage 1 may not overwrite a slot stage 2 still reads
                let free = i.checked_sub(depth).map(|r| b.row_last_compute[r]);
                em.row(&mut a, &l1, 1, i, None, free);
                let ready = Some(a.row_last_compute[i]);
                em.row(&mut b, &l2, 2, i, ready, None);
            }
        }
    }
    Ok(em.g)
}

#[derive(Clone, Copy, PartialEq)]
struct Due(f64, u32);

impl Eq for Due {}

impl PartialOrd for Due {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Due {
    // min-heap on time, then node id
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

struct Active {
    id: u32,
    remaining: f64,
    cap: f64,
    rate: f64,
}

/// Max-min fair split of `capacity` among transfers capped at their port
/// widths.
fn water_fill(active: &mut [Active], capacity: f64) {
    if capacity.is_infinite() {
        for a in active.iter_mut() {
            a.rate = a.cap;
        }
        return;
    }
    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by(|a, b| active[*a].cap.total_cmp(&active[*b].cap).then(a.cmp(b)));
    let mut left = capacity;
    let mut n = order.len();
    for idx in order {
        let share = left / n as f64;
        let r = active[idx].cap.min(share);
        active[idx].rate = r;
        left -= r;
        n -= 1;
    }
}

struct Timeline {
    start: Vec<f64>,
    end: Vec<f64>,
    end_time: f64,
    saturated: f64,
}

fn run(g: &mut Graph, bandwidth: f64) -> Result<Timeline> {
    let n = g.nodes.len();
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut heap = BinaryHeap::new();
    let mut active: Vec<Active> = Vec::new();
    let mut now = 0.0f64;
    let mut saturated = 0.0;
    let mut done = 0usize;
    let mut finished: Vec<u32> = Vec::new();

    fn launch(
        kind: Kind,
        id: u32,
        now: f64,
        heap: &mut BinaryHeap<Due>,
        active: &mut Vec<Active>,
        finished: &mut Vec<u32>,
        start: &mut [f64],
    ) {
        start[id as usize] = now;
        match kind {
            Kind::Compute { cycles, .. } => heap.push(Due(now + cycles as f64, id)),
            Kind::Transfer { words, bits, width, .. } => {
                let total = (words * bits as u64) as f64;
                if total == 0.0 {
                    finished.push(id);
                } else {
                    active.push(Active {
                        id,
                        remaining: total,
                        cap: (width * bits as u64) as f64,
                        rate: 0.0,
                    });
                }
            }
        }
    }

    let roots: Vec<u32> = (0..n as u32).filter(|i| g.nodes[*i as usize].pending == 0).collect();
    for id in roots {
        launch(
            g.nodes[id as usize].kind,
            id,
            now,
            &mut heap,
            &mut active,
            &mut finished,
            &mut start,
        );
    }

    loop {
        while let Some(id) = finished.pop() {
            end[id as usize] = now;
            done += 1;
            let deps = std::mem::take(&mut g.nodes[id as usize].dependents);
            for d in &deps {
                let node = &mut g.nodes[*d as usize];
                node.pending -= 1;
                if node.pending == 0 {
                    let kind = node.kind;
                    launch(kind, *d, now, &mut heap, &mut active, &mut finished, &mut start);
                }
            }
            g.nodes[id as usize].dependents = deps;
        }
        if active.is_empty() && heap.is_empty() {
            break;
        }
        water_fill(&mut active, bandwidth);
        let mut next = f64::INFINITY;
        let mut first = None;
        for (k, a) in active.iter().enumerate() {
            let t = now + a.remaining / a.rate;
            if t < next {
                next = t;
                first = Some(k);
            }
        }
        let compute_next = heap.peek().map(|d| d.0).unwrap_or(f64::INFINITY);
        let t = next.min(compute_next);
        let dt = t - now;
        if bandwidth.is_finite() && !active.is_empty() {
            let used: f64 = active.iter().map(|a| a.rate).sum();
            let throttled = active.iter().any(|a| a.rate < a.cap * (1.0 - 1e-12));
            if throttled && used >= bandwidth * (1.0 - 1e-12) {
                saturated += dt;
            }
        }
        for a in active.iter_mut() {
            a.remaining -= a.rate * dt;
        }
        if next <= compute_next {
            if let Some(k) = first {
                active[k].remaining = 0.0;
            }
        }
        now = t;
        active.retain(|a| {
            if a.remaining <= 1e-9 * a.cap.max(1.0) {
                finished.push(a.id);
                false
            } else {
                true
            }
        });
        while heap.peek().is_some_and(|d| d.0 <= now) {
            finished.push(heap.pop().expect("peeked").1);
        }
        // completion order inside one instant must not depend on float noise
        finished.sort_unstable_by(|a, b| b.cmp(a));
    }
    if done != n {
        return Err(Error::InvalidArgument(format!(
            "simulation deadlocked with {} of {n} steps unfinished",
            n - done
        )));
    }
    Ok(Timeline {
        start,
        end,
        end_time: now,
        saturated,
    })
}

/// Simulate one layer on `engine`. The engine must fit `platform`'s DSP and
/// BRAM budgets; `platform.bandwidth_bits_per_cycle` may be infinite.
pub fn simulate(
    engine: &EngineConfig,
    shape: &LayerShape,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    opts: SimOptions,
) -> Result<SimResult> {
    engine.validate()?;
    let est = hwmodel::estimate(engine, shape, scheme, platform, RateMode::Corrected)?;
    est.resources.check(platform)?;
    if !(platform.bandwidth_bits_per_cycle > 0.0) {
        return Err(Error::InvalidArgument("channel bandwidth must be positive".into()));
    }
    let mut g = build(engine, shape, scheme, opts.overlap)?;
    let tl = run(&mut g, platform.bandwidth_bits_per_cycle)?;

    let mut port_words = BTreeMap::new();
    let mut channel_bits = 0u64;
    let mut compute_cycles = 0u64;
    let mut trace = opts.trace.then(Vec::new);
    let mut unit_free: BTreeMap<u8, f64> = BTreeMap::new();
    for (id, node) in g.nodes.iter().enumerate() {
        let (s, e) = (tl.start[id], tl.end[id]);
        let (label, words, stalls) = match node.kind {
            Kind::Compute { unit, cycles } => {
                compute_cycles += cycles;
                let idle = s - unit_free.get(&unit).copied().unwrap_or(0.0);
                unit_free.insert(unit, e);
                (format!("compute{unit}"), 0, idle)
            }
            Kind::Transfer {
                port,
                words,
                bits,
                width,
            } => {
                *port_words.entry(port.label().to_string()).or_insert(0) += words;
                channel_bits += words * bits as u64;
                let ideal = words as f64 / width as f64;
                (port.label().to_string(), words, (e - s - ideal).max(0.0))
            }
        };
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                phase: node.phase,
                start_cycle: s,
                end_cycle: e,
                port: label,
                words,
                stalls,
            });
        }
    }
    let cycles = (tl.end_time - 1e-6).ceil().max(0.0) as u64;
    let multipliers: usize = match engine.mode {
        EngineMode::CascadeSvd => [engine.stage1, engine.stage2].iter().map(|t| t.m_t * t.n_t * t.k_f).sum(),
        _ => engine.stage1.m_t * engine.stage1.n_t * engine.stage1.k_f,
    };
    let useful = match engine.mode {
        EngineMode::Dense => shape.macs(),
        _ => hwmodel::svd_macs(shape, engine.rank),
    };
    Ok(SimResult {
        cycles,
        compute_cycles,
        port_words,
        channel_bits,
        channel_stall_cycles: tl.saturated.round() as u64,
        occupancy: est.occupancy,
        utilization: useful as f64 / (cycles as f64 * multipliers as f64),
        trace,
    })
}

/// `phase,start_cycle,end_cycle,port,words,stalls`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Slack allowed between simulated and analytical cycles: filling the
/// pipeline with one tile phase plus draining the last output.
pub fn fill_tolerance(engine: &EngineConfig, shape: &LayerShape) -> u64 {
    let beats = |t: &TileConfig, k: usize| k.div_ceil(t.k_f) as u64;
    match engine.mode {
        EngineMode::Dense => beats(&engine.stage1, shape.k) + 1,
        _ => beats(&engine.stage1, shape.k) + beats(&engine.stage2, engine.rank) + 1,
    }
}
