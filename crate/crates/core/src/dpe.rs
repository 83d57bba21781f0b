//! Cycle-level model of one FaR-aware dot-product engine.
//!
//! The engine holds one output row (a weight row plus its latched select
//! vector) and streams the 32 activation columns of the tile through a
//! 32-lane multiplier array and a 5-level binary16 adder tree, retiring one
//! dot per cycle once the pipeline has filled. With FaR enabled, the
//! controller spends one cycle per row expanding the row's FaRMap slice
//! into a select vector; with `overlap_select` that cycle hides behind the
//! previous row's stream, except for the first row of a tile.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::compiler::{FarAction, FarMap, FarMapEntry, HardenedLayer, ShadowStore};
use crate::error::{BlobError, SimError};
use crate::half::Fp16;
use crate::reference::{EffectiveOperands, LaneOperand, WeightSource};
use crate::TILE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpeConfig {
    pub lanes: usize,
    pub pipeline_fill_cycles: u64,
    pub adder_tree_levels: u32,
    pub overlap_select: bool,
    /// Baseline weight buffer and shadow store on independent read ports.
    pub dual_port_weights: bool,
    /// Charge the pipeline fill once per layer instead of once per tile.
    pub amortize_fill: bool,
}

impl Default for DpeConfig {
    fn default() -> Self {
        Self {
            lanes: TILE,
            pipeline_fill_cycles: 12,
            adder_tree_levels: 5,
            overlap_select: true,
            dual_port_weights: true,
            amortize_fill: false,
        }
    }
}

/// Multiplier stage plus one output register on top of the adder tree.
const NON_TREE_STAGES: u64 = 2;

impl DpeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.lanes != TILE {
            return Err(SimError::Config(format!("only {TILE}-lane engines are modeled, got {}", self.lanes)));
        }
        let levels = self.lanes.next_power_of_two().trailing_zeros();
        if self.adder_tree_levels != levels {
            return Err(SimError::Config(format!(
                "{} lanes need a {levels}-level adder tree, got {}",
                self.lanes, self.adder_tree_levels
            )));
        }
        if self.pipeline_fill_cycles < self.adder_tree_levels as u64 + NON_TREE_STAGES {
            return Err(SimError::Config(format!(
                "pipeline fill {} is shorter than the datapath depth {}",
                self.pipeline_fill_cycles,
                self.adder_tree_levels as u64 + NON_TREE_STAGES
            )));
        }
        Ok(())
    }
}

/// A 32x32 tile of binary16 words with its valid extent; cells outside
/// `rows x cols` are zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileF16 {
    data: Vec<Fp16>,
    pub rows: usize,
    pub cols: usize,
}

impl TileF16 {
    pub fn zeros() -> Self {
        Self { data: vec![Fp16::ZERO; TILE * TILE], rows: TILE, cols: TILE }
    }

    /// Tile whose valid region is `rows x cols`, filled from `f(r, c)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Fp16) -> Self {
        let mut t = Self { data: vec![Fp16::ZERO; TILE * TILE], rows: rows.min(TILE), cols: cols.min(TILE) };
        for r in 0..t.rows {
            for c in 0..t.cols {
                t.data[r * TILE + c] = f(r, c);
            }
        }
        t
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Fp16 {
        self.data[r * TILE + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Fp16) {
        self.data[r * TILE + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Fp16; TILE] {
        self.data[r * TILE..(r + 1) * TILE].try_into().expect("row of TILE words")
    }
}

/// Per-lane operand sources for one output row, latched for the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectVector {
    pub lanes: [LaneOperand; TILE],
}

impl SelectVector {
    pub fn baseline(valid_lanes: usize) -> Self {
        let mut lanes = [LaneOperand { weight: WeightSource::Base, activation: 0 }; TILE];
        for (i, l) in lanes.iter_mut().enumerate() {
            l.activation = i;
            if i >= valid_lanes {
                l.weight = WeightSource::Zero;
            }
        }
        Self { lanes }
    }

    pub fn mixes_base_and_shadow(&self) -> bool {
        let base = self.lanes.iter().any(|l| l.weight == WeightSource::Base);
        base && self.shadow_reads() > 0
    }

    /// Distinct shadow addresses read by this row.
    pub fn shadow_reads(&self) -> usize {
        let mut addrs: Vec<usize> = self
            .lanes
            .iter()
            .filter_map(|l| match l.weight {
                WeightSource::Shadow(a) => Some(a),
                _ => None,
            })
            .collect();
        addrs.sort_unstable();
        addrs.dedup();
        addrs.len()
    }
}

/// Expands the tile-local FaRMap entries of `row` into a dense select
/// vector. Entries of other rows are ignored.
pub fn synth_select_vector(row: usize, slice: &[FarMapEntry], valid_lanes: usize) -> Result<SelectVector, SimError> {
    let mut sel = SelectVector::baseline(valid_lanes);
    let mut seen = [false; TILE];
    for e in slice.iter().filter(|e| e.row == row) {
        if e.lane >= valid_lanes.min(TILE) {
            return Err(BlobError::Index(format!("tile lane {} outside {valid_lanes} valid lanes", e.lane)).into());
        }
        if seen[e.lane] {
            return Err(BlobError::Duplicate { row, lane: e.lane }.into());
        }
        seen[e.lane] = true;
        sel.lanes[e.lane] = match e.action {
            FarAction::Skip => LaneOperand { weight: WeightSource::Zero, activation: e.lane },
            FarAction::Rewire { donor, shadow_addr, .. } => {
                if donor >= valid_lanes.min(TILE) {
                    return Err(BlobError::Index(format!("tile donor {donor} outside the tile")).into());
                }
                LaneOperand { weight: WeightSource::Shadow(shadow_addr), activation: donor }
            }
        };
    }
    Ok(sel)
}

/// The per-lane three-way operand selector. Pure selection: every output
/// word is a copy of a baseline weight, a shadow word, constant zero, or an
/// activation word.
pub fn apply_select(
    sel: &SelectVector,
    weight_row: &[Fp16; TILE],
    shadow: &[Fp16],
    act_col: &[Fp16; TILE],
) -> Result<([Fp16; TILE], [Fp16; TILE]), SimError> {
    let mut w = [Fp16::ZERO; TILE];
    let mut a = [Fp16::ZERO; TILE];
    for (k, lane) in sel.lanes.iter().enumerate() {
        w[k] = match lane.weight {
            WeightSource::Base => weight_row[k],
            WeightSource::Shadow(addr) => *shadow
                .get(addr)
                .ok_or_else(|| BlobError::Index(format!("shadow address {addr} >= {}", shadow.len())))?,
            WeightSource::Zero => Fp16::ZERO,
        };
        a[k] = act_col[lane.activation];
    }
    Ok((w, a))
}

/// Multiplier array followed by the adjacent-pair adder tree.
fn datapath_dot(w: &[Fp16; TILE], a: &[Fp16; TILE]) -> Fp16 {
    let mut level = [Fp16::ZERO; TILE];
    for k in 0..TILE {
        level[k] = w[k].mul(a[k]);
    }
    let mut width = TILE;
    while width > 1 {
        for i in 0..width / 2 {
            level[i] = level[2 * i].add(level[2 * i + 1]);
        }
        width /= 2;
    }
    level[0]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub tiles: u64,
    pub total_cycles: u64,
    pub dots_retired: u64,
    /// Select vectors synthesized (one per row when FaR is enabled).
    pub select_synthesis_cycles: u64,
    /// Of those, the ones hidden behind the previous row.
    pub overlapped_select_cycles: u64,
    pub fill_cycles: u64,
    pub stall_cycles: u64,
    pub steady_state_issue_rate: f64,
}

impl CycleReport {
    pub fn visible_select_cycles(&self) -> u64 {
        self.select_synthesis_cycles - self.overlapped_select_cycles
    }

    fn finish(&mut self) {
        let slots = self.dots_retired + self.stall_cycles;
        self.steady_state_issue_rate = if slots == 0 { 1.0 } else { self.dots_retired as f64 / slots as f64 };
    }

    pub fn merge(&mut self, other: &CycleReport) {
        self.tiles += other.tiles;
        self.total_cycles += other.total_cycles;
        self.dots_retired += other.dots_retired;
        self.select_synthesis_cycles += other.select_synthesis_cycles;
        self.overlapped_select_cycles += other.overlapped_select_cycles;
        self.fill_cycles += other.fill_cycles;
        self.stall_cycles += other.stall_cycles;
        self.finish();
    }
}

/// Closed-form per-tile cycle count: 1024 issue slots, the pipeline fill,
/// visible select cycles and port stalls.
pub fn tile_cycles(cfg: &DpeConfig, far_enabled: bool, stall_cycles: u64) -> u64 {
    let select = match (far_enabled, cfg.overlap_select) {
        (false, _) => 0,
        (true, true) => 1,
        (true, false) => TILE as u64,
    };
    (TILE * TILE) as u64 + cfg.pipeline_fill_cycles + select + stall_cycles
}

/// Stall cycles a single-ported weight buffer adds for this row: one extra
/// port access per distinct shadow word when the row also reads baseline
/// weights.
fn row_port_stalls(cfg: &DpeConfig, sel: &SelectVector) -> u64 {
    if cfg.dual_port_weights || !sel.mixes_base_and_shadow() {
        0
    } else {
        sel.shadow_reads() as u64
    }
}

struct InFlight {
    m: usize,
    n: usize,
    value: Fp16,
    store: bool,
}

/// Simulates one tile. `act` is `[m][k]` (activation columns by lane),
/// `wt` is `[n][k]` (output rows by lane); the result is `[m][n]`.
/// `far` holds the tile-local FaRMap slice when FaR is enabled.
pub fn run_tile(
    act: &TileF16,
    wt: &TileF16,
    far: Option<&[FarMapEntry]>,
    shadow: &ShadowStore,
    cfg: &DpeConfig,
) -> Result<(TileF16, CycleReport), SimError> {
    cfg.validate()?;
    if let Some(slice) = far {
        if let Some(e) = slice.iter().find(|e| {
            matches!(e.action, FarAction::Rewire { shadow_addr, .. } if shadow_addr >= shadow.len())
        }) {
            return Err(BlobError::Index(format!("row {} lane {}: shadow address out of range", e.row, e.lane)).into());
        }
    }
    let valid_lanes = act.cols.min(wt.cols);
    let mut out = TileF16::from_fn(act.rows, wt.rows, |_, _| Fp16::ZERO);
    let mut report = CycleReport { tiles: 1, fill_cycles: cfg.pipeline_fill_cycles, ..Default::default() };

    let depth = cfg.pipeline_fill_cycles as usize;
    let mut pipe: VecDeque<Option<InFlight>> = (0..depth).map(|_| None).collect();
    let mut in_flight = 0usize;
    let mut cycle: u64 = 0;
    let mut tick = |input: Option<InFlight>, out: &mut TileF16, report: &mut CycleReport, in_flight: &mut usize| {
        cycle += 1;
        if input.is_some() {
            *in_flight += 1;
        }
        pipe.push_back(input);
        if let Some(Some(done)) = pipe.pop_front() {
            if done.store {
                out.set(done.m, done.n, done.value);
            }
            report.dots_retired += 1;
            *in_flight -= 1;
        }
    };

    for n in 0..TILE {
        let sel = match far {
            Some(slice) => {
                report.select_synthesis_cycles += 1;
                if cfg.overlap_select && n > 0 {
                    report.overlapped_select_cycles += 1;
                } else {
                    tick(None, &mut out, &mut report, &mut in_flight);
                }
                synth_select_vector(n, slice, valid_lanes)?
            }
            None => SelectVector::baseline(valid_lanes),
        };
        for _ in 0..row_port_stalls(cfg, &sel) {
            report.stall_cycles += 1;
            tick(None, &mut out, &mut report, &mut in_flight);
        }
        let weight_row = wt.row(n);
        for m in 0..TILE {
            let (w, a) = apply_select(&sel, weight_row, &shadow.values, act.row(m))?;
            let value = datapath_dot(&w, &a);
            // padding rows and columns occupy an issue slot but are not stored
            let store = m < out.rows && n < out.cols;
            tick(Some(InFlight { m, n, value, store }), &mut out, &mut report, &mut in_flight);
        }
    }
    while in_flight > 0 {
        tick(None, &mut out, &mut report, &mut in_flight);
    }
    drop(tick);
    report.total_cycles = cycle;
    report.finish();
    Ok((out, report))
}

/// Entries of `map` that fall in the tile at output rows `n0..n0+32` and
/// lanes `k0..k0+32`, rebased to tile-local indices.
pub fn tile_slice(map: &FarMap, n0: usize, k0: usize) -> Vec<FarMapEntry> {
    let mut out = Vec::new();
    for row in n0..(n0 + TILE).min(map.fan_out) {
        for e in map.row(row) {
            if e.lane < k0 || e.lane >= k0 + TILE {
                continue;
            }
            let action = match e.action {
                FarAction::Skip => FarAction::Skip,
                FarAction::Rewire { donor, div, shadow_addr } => FarAction::Rewire { donor: donor - k0, div, shadow_addr },
            };
            out.push(FarMapEntry { row: row - n0, lane: e.lane - k0, action });
        }
    }
    out
}

/// Full layer GEMM `[m][fan_in] x W'^T` over 32x32 tiles. Tiles are visited
/// output-tile by output-tile, K-tiles in ascending order; K partials are
/// summed in binary16 and the bias is added last.
pub fn run_layer(
    act: &[Fp16],
    m: usize,
    layer: &HardenedLayer,
    cfg: &DpeConfig,
) -> Result<(Vec<Fp16>, CycleReport), SimError> {
    cfg.validate()?;
    let (k, n) = (layer.dram.fan_in(), layer.dram.fan_out());
    if act.len() != m * k {
        return Err(SimError::Shape(format!("{} activations for {m}x{k}", act.len())));
    }
    if layer.enabled {
        EffectiveOperands::from_map(&layer.farmap, layer.shadow.len())?;
    }
    let mut report = CycleReport::default();
    report.finish();
    if m == 0 || n == 0 {
        return Ok((Vec::new(), report));
    }
    let mut out: Vec<Option<Fp16>> = vec![None; m * n];
    for n0 in (0..n).step_by(TILE) {
        let rows = (n - n0).min(TILE);
        for m0 in (0..m).step_by(TILE) {
            let cols = (m - m0).min(TILE);
            for k0 in (0..k).step_by(TILE) {
                let width = (k - k0).min(TILE);
                let at = TileF16::from_fn(cols, width, |i, j| act[(m0 + i) * k + k0 + j]);
                let wt = TileF16::from_fn(rows, width, |i, j| layer.dram.weight(n0 + i, k0 + j));
                let slice = layer.enabled.then(|| tile_slice(&layer.farmap, n0, k0));
                let (partial, tile_report) = run_tile(&at, &wt, slice.as_deref(), &layer.shadow, cfg)?;
                for i in 0..cols {
                    for j in 0..rows {
                        let cell = &mut out[(m0 + i) * n + n0 + j];
                        let p = partial.get(i, j);
                        *cell = Some(match *cell {
                            None => p,
                            Some(s) => s.add(p),
                        });
                    }
                }
                report.merge(&tile_report);
            }
        }
    }
    if cfg.amortize_fill && report.tiles > 1 {
        let saved = (report.tiles - 1) * cfg.pipeline_fill_cycles;
        report.total_cycles -= saved;
        report.fill_cycles -= saved;
    }
    let bias = layer.dram.bias();
    let result = out
        .iter()
        .enumerate()
        .map(|(idx, v)| v.unwrap_or(Fp16::ZERO).add(bias[idx % n]))
        .collect();
    Ok((result, report))
}
