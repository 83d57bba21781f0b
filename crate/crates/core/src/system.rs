//! Multi-PE timing model with double-buffered DMA, the per-model FaR
//! overhead report, and the controller's enable check for layer blobs.

use serde::{Deserialize, Serialize};

use crate::compiler::{load_blobs_with, row_budget, FarAction, HardenedLayer, ValidationLimits};
use crate::dpe::{synth_select_vector, tile_cycles, tile_slice, DpeConfig};
use crate::error::SimError;
use crate::formats::{FMAP_ENTRY_BYTES, FMAP_FIXED_BYTES, FSHD_FIXED_BYTES};
use crate::model::LinearLayer;
use crate::TILE;

const WORD_BYTES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub pe_count: usize,
    pub dma_bytes_per_cycle: u64,
    /// Tile buffers per PE; 2 or more lets the next transfer overlap compute.
    pub tile_buffer_depth: usize,
    pub dpe: DpeConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { pe_count: 4, dma_bytes_per_cycle: 64, tile_buffer_depth: 2, dpe: DpeConfig::default() }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.pe_count == 0 {
            return Err(SimError::Config("pe_count must be at least 1".into()));
        }
        if self.dma_bytes_per_cycle == 0 {
            return Err(SimError::Config("dma_bytes_per_cycle must be positive".into()));
        }
        if self.tile_buffer_depth == 0 {
            return Err(SimError::Config("tile_buffer_depth must be at least 1".into()));
        }
        self.dpe.validate()
    }
}

/// One linear layer as a GEMM: `m` activation rows (tokens), `k` inputs,
/// `n` outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub name: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl GemmShape {
    pub fn new(name: impl Into<String>, m: usize, k: usize, n: usize) -> Self {
        Self { name: name.into(), m, k, n }
    }

    pub fn weight_bytes(&self) -> u64 {
        (self.k * self.n) as u64 * WORD_BYTES
    }
}

/// FaR metadata and port-stall figures for one (N-tile, K-tile) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileFarLoad {
    pub entries: u64,
    pub shadow_words: u64,
    /// Stalls this tile would take with a single-ported weight buffer.
    pub single_port_stalls: u64,
}

impl TileFarLoad {
    pub fn metadata_bytes(&self) -> u64 {
        self.entries * FMAP_ENTRY_BYTES as u64 + self.shadow_words * WORD_BYTES
    }
}

/// A layer shape plus its FaR load, indexed `[n_tile * k_tiles + k_tile]`.
/// `far == None` is the baseline path.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWorkload {
    pub shape: GemmShape,
    pub far: Option<Vec<TileFarLoad>>,
}

impl LayerWorkload {
    pub fn baseline(shape: GemmShape) -> Self {
        Self { shape, far: None }
    }

    /// Shape-only FaR load: every row uses its full entry budget, packed
    /// into groups of `div` entries that share one shadow word. A row's
    /// entries are spread over its K-tiles in proportion to tile width.
    pub fn budget_saturated(shape: GemmShape, fraction: f64, div: u8) -> Self {
        let div = div.max(2) as usize;
        let cap = row_budget(fraction, shape.k);
        let per_row = cap - cap % div;
        if per_row == 0 {
            return Self::baseline(shape);
        }
        let groups = per_row / div;
        let k_tiles = shape.k.div_ceil(TILE);
        // split groups over K-tiles by width, largest remainders first
        let mut tile_groups: Vec<usize> = (0..k_tiles)
            .map(|t| groups * (shape.k - t * TILE).min(TILE) / shape.k)
            .collect();
        let mut left = groups - tile_groups.iter().sum::<usize>();
        for g in tile_groups.iter_mut() {
            if left == 0 {
                break;
            }
            *g += 1;
            left -= 1;
        }
        let mut loads = Vec::with_capacity(shape.n.div_ceil(TILE) * k_tiles);
        for nt in 0..shape.n.div_ceil(TILE) {
            let rows = (shape.n - nt * TILE).min(TILE) as u64;
            for &g in &tile_groups {
                let g = g as u64;
                let mixes = (g as usize * div) < TILE;
                loads.push(TileFarLoad {
                    entries: rows * g * div as u64,
                    shadow_words: rows * g,
                    single_port_stalls: if g > 0 && mixes { rows * g } else { 0 },
                });
            }
        }
        Self { shape, far: Some(loads) }
    }

    /// Load taken from an actual hardened layer.
    pub fn from_layer(name: impl Into<String>, m: usize, layer: &HardenedLayer) -> Result<Self, SimError> {
        let (k, n) = (layer.dram.fan_in(), layer.dram.fan_out());
        let shape = GemmShape::new(name, m, k, n);
        if !layer.enabled {
            return Ok(Self::baseline(shape));
        }
        let mut loads = Vec::new();
        for n0 in (0..n).step_by(TILE) {
            for k0 in (0..k).step_by(TILE) {
                let slice = tile_slice(&layer.farmap, n0, k0);
                let width = (k - k0).min(TILE);
                let mut load = TileFarLoad { entries: slice.len() as u64, ..Default::default() };
                let mut addrs: Vec<usize> = slice
                    .iter()
                    .filter_map(|e| match e.action {
                        FarAction::Rewire { shadow_addr, .. } => Some(shadow_addr),
                        FarAction::Skip => None,
                    })
                    .collect();
                addrs.sort_unstable();
                addrs.dedup();
                load.shadow_words = addrs.len() as u64;
                for row in 0..(n - n0).min(TILE) {
                    let sel = synth_select_vector(row, &slice, width)?;
                    if sel.mixes_base_and_shadow() {
                        load.single_port_stalls += sel.shadow_reads() as u64;
                    }
                }
                loads.push(load);
            }
        }
        Ok(Self { shape, far: Some(loads) })
    }

    pub fn far_enabled(&self) -> bool {
        self.far.is_some()
    }

    /// FMAP plus FSHD bytes this layer would serialize to.
    pub fn metadata_bytes(&self) -> u64 {
        match &self.far {
            None => 0,
            Some(loads) => {
                let entries: u64 = loads.iter().map(|l| l.entries).sum();
                let words: u64 = loads.iter().map(|l| l.shadow_words).sum();
                FMAP_FIXED_BYTES as u64
                    + entries * FMAP_ENTRY_BYTES as u64
                    + FSHD_FIXED_BYTES as u64
                    + words * WORD_BYTES
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTile {
    pub m_tile: usize,
    pub k_tile: usize,
    pub n_tile: usize,
    pub pe: usize,
    pub compute_cycles: u64,
    pub dma_bytes: u64,
    pub far_bytes: u64,
    pub dma_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub shape: GemmShape,
    pub far_enabled: bool,
    pub tiles: Vec<ScheduledTile>,
    pub compute_cycles: u64,
    pub dma_cycles: u64,
    pub far_metadata_bytes: u64,
    pub weight_bytes: u64,
    pub per_pe_makespan: Vec<u64>,
    pub makespan: u64,
}

/// Completion time of one PE's tile stream. With two or more buffers the
/// transfer of tile i+1 overlaps the compute of tile i.
fn pe_makespan(tiles: &[(u64, u64)], depth: usize) -> u64 {
    let Some(&(_, first_dma)) = tiles.first() else { return 0 };
    if depth < 2 {
        return tiles.iter().map(|(c, d)| c + d).sum();
    }
    let mut t = first_dma;
    for (i, &(compute, _)) in tiles.iter().enumerate() {
        let next_dma = tiles.get(i + 1).map_or(0, |&(_, d)| d);
        t += compute.max(next_dma);
    }
    t
}

/// Round-robin output tiles over PEs; each PE walks all K-tiles of an
/// output tile before the next. The transfers of one round-robin round at
/// one K step share the link and finish together.
pub fn schedule_layer(work: &LayerWorkload, cfg: &SystemConfig) -> Result<LayerSchedule, SimError> {
    cfg.validate()?;
    let s = &work.shape;
    let (mt, kt, nt) = (s.m.div_ceil(TILE), s.k.div_ceil(TILE), s.n.div_ceil(TILE));
    let outputs = mt * nt;
    let far_on = work.far_enabled();
    let mut tiles = Vec::with_capacity(outputs * kt);
    for (idx, (n_tile, m_tile)) in (0..nt).flat_map(|n| (0..mt).map(move |m| (n, m))).enumerate() {
        let pe = idx % cfg.pe_count;
        let rows = (s.m - m_tile * TILE).min(TILE) as u64;
        let cols = (s.n - n_tile * TILE).min(TILE) as u64;
        for k_tile in 0..kt {
            let width = (s.k - k_tile * TILE).min(TILE) as u64;
            let load = work.far.as_ref().map(|l| l[n_tile * kt + k_tile]).unwrap_or_default();
            let stalls = if cfg.dpe.dual_port_weights { 0 } else { load.single_port_stalls };
            let mut compute = tile_cycles(&cfg.dpe, far_on, stalls);
            if cfg.dpe.amortize_fill && k_tile > 0 {
                compute -= cfg.dpe.pipeline_fill_cycles;
            }
            let mut bytes = (rows + cols) * width * WORD_BYTES;
            if k_tile + 1 == kt {
                bytes += rows * cols * WORD_BYTES;
            }
            let far_bytes = load.metadata_bytes();
            bytes += far_bytes;
            tiles.push(ScheduledTile { m_tile, k_tile, n_tile, pe, compute_cycles: compute, dma_bytes: bytes, far_bytes, dma_cycles: 0 });
        }
    }
    // tiles are laid out output-major, so one round at one K step is a stride
    let round = cfg.pe_count * kt;
    for start in (0..tiles.len()).step_by(round.max(1)) {
        let end = (start + round).min(tiles.len());
        for k_tile in 0..kt {
            let group = (start + k_tile..end).step_by(kt);
            let bytes: u64 = group.clone().map(|i| tiles[i].dma_bytes).sum();
            let cycles = bytes.div_ceil(cfg.dma_bytes_per_cycle);
            for i in group {
                tiles[i].dma_cycles = cycles;
            }
        }
    }
    let per_pe_makespan: Vec<u64> = (0..cfg.pe_count)
        .map(|pe| {
            let mine: Vec<(u64, u64)> =
                tiles.iter().filter(|t| t.pe == pe).map(|t| (t.compute_cycles, t.dma_cycles)).collect();
            pe_makespan(&mine, cfg.tile_buffer_depth)
        })
        .collect();
    Ok(LayerSchedule {
        shape: s.clone(),
        far_enabled: far_on,
        compute_cycles: tiles.iter().map(|t| t.compute_cycles).sum(),
        dma_cycles: tiles.iter().map(|t| t.dma_cycles).sum(),
        far_metadata_bytes: work.metadata_bytes(),
        weight_bytes: s.weight_bytes(),
        makespan: per_pe_makespan.iter().copied().max().unwrap_or(0),
        per_pe_makespan,
        tiles,
    })
}

/// Ordered linear layers of a small vision transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub name: String,
    pub tokens: usize,
    pub layers: Vec<GemmShape>,
}

impl ModelShape {
    pub fn vit(name: &str, image: usize, channels: usize, patch: usize, embed: usize, hidden: usize, depth: usize, classes: usize) -> Self {
        let tokens = (image / patch) * (image / patch) + 1;
        let patch_dim = channels * patch * patch;
        let mut layers = vec![GemmShape::new("patch_embed", tokens - 1, patch_dim, embed)];
        for b in 0..depth {
            for proj in ["q", "k", "v", "o"] {
                layers.push(GemmShape::new(format!("block{b}.attn.{proj}"), tokens, embed, embed));
            }
            layers.push(GemmShape::new(format!("block{b}.mlp.fc1"), tokens, embed, hidden));
            layers.push(GemmShape::new(format!("block{b}.mlp.fc2"), tokens, hidden, embed));
        }
        layers.push(GemmShape::new("head", 1, embed, classes));
        Self { name: name.into(), tokens, layers }
    }

    pub fn vit_mnist() -> Self {
        Self::vit("vit-mnist", 28, 1, 7, 512, 256, 1, 10)
    }

    pub fn vit_cifar10() -> Self {
        Self::vit("vit-cifar10", 32, 3, 8, 512, 256, 3, 10)
    }

    pub fn vit_cifar100() -> Self {
        Self::vit("vit-cifar100", 32, 3, 8, 512, 256, 6, 100)
    }

    pub fn table_models() -> Vec<Self> {
        vec![Self::vit_mnist(), Self::vit_cifar10(), Self::vit_cifar100()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub far_fraction: f64,
    pub div: u8,
    pub overlap_select: bool,
    pub system: SystemConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub shape: GemmShape,
    pub tiles: usize,
    pub compute_cycles: u64,
    pub dma_cycles: u64,
    pub makespan: u64,
    pub baseline_makespan: u64,
    pub far_overhead_ratio: f64,
    pub far_metadata_bytes: u64,
    pub weight_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub makespan: u64,
    pub baseline_makespan: u64,
    /// Pure DPE compute cycles, hardened over baseline.
    pub matmul_overhead_ratio: f64,
    /// Linear-layer makespans including DMA, hardened over baseline.
    pub end_to_end_ratio: f64,
    pub far_metadata_bytes: u64,
    pub weight_bytes: u64,
    pub metadata_share_of_weights: f64,
    pub metadata_share_of_traffic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub config: ReportConfig,
    pub per_layer: Vec<LayerReport>,
    pub totals: ReportTotals,
}

fn ratio(a: u64, b: u64) -> f64 {
    if a == b {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Latency of every linear layer with and without budget-saturated FaR.
/// A fraction of zero disables FaR and yields ratios of exactly 1.
pub fn model_latency_report(model: &ModelShape, cfg: &ReportConfig) -> Result<ModelReport, SimError> {
    let mut sys = cfg.system;
    sys.dpe.overlap_select = cfg.overlap_select;
    let mut per_layer = Vec::new();
    let (mut far_compute, mut base_compute) = (0u64, 0u64);
    let (mut far_span, mut base_span) = (0u64, 0u64);
    let (mut meta, mut weights, mut traffic) = (0u64, 0u64, 0u64);
    for shape in &model.layers {
        let base = schedule_layer(&LayerWorkload::baseline(shape.clone()), &sys)?;
        let hard = if cfg.far_fraction > 0.0 {
            schedule_layer(&LayerWorkload::budget_saturated(shape.clone(), cfg.far_fraction, cfg.div), &sys)?
        } else {
            base.clone()
        };
        far_compute += hard.compute_cycles;
        base_compute += base.compute_cycles;
        far_span += hard.makespan;
        base_span += base.makespan;
        meta += hard.far_metadata_bytes;
        weights += hard.weight_bytes;
        traffic += hard.tiles.iter().map(|t| t.dma_bytes).sum::<u64>();
        per_layer.push(LayerReport {
            shape: shape.clone(),
            tiles: hard.tiles.len(),
            compute_cycles: hard.compute_cycles,
            dma_cycles: hard.dma_cycles,
            makespan: hard.makespan,
            baseline_makespan: base.makespan,
            far_overhead_ratio: ratio(hard.makespan, base.makespan),
            far_metadata_bytes: hard.far_metadata_bytes,
            weight_bytes: hard.weight_bytes,
        });
    }
    let share = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ModelReport {
        model: model.name.clone(),
        config: cfg.clone(),
        per_layer,
        totals: ReportTotals {
            makespan: far_span,
            baseline_makespan: base_span,
            matmul_overhead_ratio: ratio(far_compute, base_compute),
            end_to_end_ratio: ratio(far_span, base_span),
            far_metadata_bytes: meta,
            weight_bytes: weights,
            metadata_share_of_weights: share(meta, weights),
            metadata_share_of_traffic: share(meta, traffic),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EnableDecision {
    Enabled,
    Disabled { reason: String, detail: String },
}

/// Decodes and validates a layer's FMAP and FSHD blobs against the DRAM
/// layer. Any failure disables FaR for the whole layer and returns the
/// baseline layer; nothing is partially enabled.
pub fn validate_and_enable(
    dram: &LinearLayer,
    layer_id: u16,
    fmap: &[u8],
    fshd: &[u8],
    limits: ValidationLimits,
) -> (HardenedLayer, EnableDecision) {
    let attempt = load_blobs_with(fmap, fshd, limits)
        .and_then(|(map, shadow)| HardenedLayer::from_parts(dram.clone(), map, shadow));
    match attempt {
        Ok(h) => (h, EnableDecision::Enabled),
        Err(e) => (
            HardenedLayer::baseline(dram, layer_id),
            EnableDecision::Disabled { reason: e.reason().to_string(), detail: e.to_string() },
        ),
    }
}
