//! Offline FaR compilation: sensitivity ranking, victim selection, and the
//! FaRMap / shadow-store artifacts a layer is deployed with.
//!
//! For a critical lane `c` of row `r` and `div - 1` dead victim lanes, the
//! compiler emits one REWIRE group of `div` entries (the critical lane plus
//! the victims), all reading the shadow value `fp16(W[r][c] / div)` and the
//! activation `x[c]`. The DRAM copy of the layer gets `W[r][c]` written into
//! every victim slot, so the attacker-visible layout looks like a plain
//! dense layer.

use serde::{Deserialize, Serialize};

use crate::error::{BlobError, CompileError, ModelError};
use crate::formats;
use crate::half::Fp16;
use crate::model::{Batch, LaneOverride, LaneWeight, LinearKernel, LinearLayer, LinearOperands, ToyNetwork};
use crate::TILE;

/// Rewiring budget cap, as a fraction of a row's inputs.
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.15;
/// Lanes whose mean |activation| is at most this fraction of the layer-wide
/// mean are dead.
pub const DEFAULT_DEADNESS_RATIO: f64 = 0.01;

/// Per-row entry cap `floor(fraction * fan_in)`.
pub fn row_budget(fraction: f64, fan_in: usize) -> usize {
    // 0.15 is not exact in binary; nudge so 0.15 * 20 == 3 and not 2.999..
    (fraction * fan_in as f64 + 1e-9).floor().max(0.0) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FarAction {
    Skip,
    Rewire { donor: usize, div: u8, shadow_addr: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarMapEntry {
    pub row: usize,
    pub lane: usize,
    pub action: FarAction,
}

/// Sparse rewiring directives for one layer, sorted by `(row, lane)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FarMap {
    pub layer_id: u16,
    pub fan_in: usize,
    pub fan_out: usize,
    pub entries: Vec<FarMapEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationLimits {
    pub budget_fraction: f64,
}

impl Default for ValidationLimits {
    fn default() -> Self {
        Self { budget_fraction: DEFAULT_BUDGET_FRACTION }
    }
}

impl FarMap {
    pub fn empty(layer_id: u16, fan_in: usize, fan_out: usize) -> Self {
        Self { layer_id, fan_in, fan_out, entries: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one output row.
    pub fn row(&self, row: usize) -> &[FarMapEntry] {
        let lo = self.entries.partition_point(|e| e.row < row);
        let hi = self.entries.partition_point(|e| e.row <= row);
        &self.entries[lo..hi]
    }

    pub fn rewire_groups(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.action, FarAction::Rewire { donor, .. } if donor == e.lane))
            .count()
    }

    /// Structural validation against a shadow store of `shadow_len` values.
    pub fn validate(&self, shadow_len: usize, limits: ValidationLimits) -> Result<(), BlobError> {
        if self.fan_in > u16::MAX as usize || self.fan_out > u16::MAX as usize {
            return Err(BlobError::Field("layer dimensions exceed 16 bits".into()));
        }
        let cap = row_budget(limits.budget_fraction, self.fan_in);
        let mut referenced = vec![false; shadow_len];
        let mut addr_owner: Vec<Option<(usize, usize)>> = vec![None; shadow_len];
        let mut prev: Option<(usize, usize)> = None;
        for e in &self.entries {
            if e.row >= self.fan_out {
                return Err(BlobError::Index(format!("row {} >= fan_out {}", e.row, self.fan_out)));
            }
            if e.lane >= self.fan_in {
                return Err(BlobError::Index(format!("lane {} >= fan_in {}", e.lane, self.fan_in)));
            }
            if let Some(p) = prev {
                if p == (e.row, e.lane) {
                    return Err(BlobError::Duplicate { row: e.row, lane: e.lane });
                }
                if p > (e.row, e.lane) {
                    return Err(BlobError::Order { row: e.row, lane: e.lane });
                }
            }
            prev = Some((e.row, e.lane));
            if let FarAction::Rewire { donor, div, shadow_addr } = e.action {
                if donor >= self.fan_in {
                    return Err(BlobError::Index(format!("donor {donor} >= fan_in {}", self.fan_in)));
                }
                if shadow_addr >= shadow_len {
                    return Err(BlobError::Index(format!(
                        "shadow address {shadow_addr} >= store size {shadow_len}"
                    )));
                }
                if !(div == 2 || div == 3) {
                    return Err(BlobError::Field(format!("division factor {div}")));
                }
                if donor / TILE != e.lane / TILE {
                    return Err(BlobError::Index(format!(
                        "lane {} and donor {donor} are in different {TILE}-lane tiles",
                        e.lane
                    )));
                }
                match addr_owner[shadow_addr] {
                    None => addr_owner[shadow_addr] = Some((e.row, donor)),
                    Some(owner) if owner == (e.row, donor) => {}
                    Some(_) => {
                        return Err(BlobError::Group(format!(
                            "shadow address {shadow_addr} shared by two groups"
                        )))
                    }
                }
                referenced[shadow_addr] = true;
            }
        }
        for row in 0..self.fan_out {
            let entries = self.row(row);
            if entries.len() > cap {
                return Err(BlobError::Budget { row, count: entries.len(), cap });
            }
            for head in entries {
                let FarAction::Rewire { donor, div, shadow_addr } = head.action else { continue };
                let members: Vec<&FarMapEntry> = entries
                    .iter()
                    .filter(|e| matches!(e.action, FarAction::Rewire { donor: d, .. } if d == donor))
                    .collect();
                if members.len() != div as usize {
                    return Err(BlobError::Group(format!(
                        "row {row} donor {donor}: {} entries for division factor {div}",
                        members.len()
                    )));
                }
                if !members.iter().any(|e| e.lane == donor) {
                    return Err(BlobError::Group(format!(
                        "row {row} donor {donor}: critical lane missing from its group"
                    )));
                }
                let consistent = members.iter().all(|e| {
                    matches!(e.action, FarAction::Rewire { div: d, shadow_addr: a, .. } if d == div && a == shadow_addr)
                });
                if !consistent {
                    return Err(BlobError::Group(format!(
                        "row {row} donor {donor}: members disagree on division or shadow address"
                    )));
                }
            }
        }
        if let Some(addr) = referenced.iter().position(|r| !r) {
            return Err(BlobError::Group(format!("shadow value {addr} is never referenced")));
        }
        Ok(())
    }
}

/// Pre-scaled donor weights, kept on chip and never attackable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowStore {
    pub values: Vec<Fp16>,
}

impl ShadowStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, addr: usize) -> Option<Fp16> {
        self.values.get(addr).copied()
    }
}

/// A layer as deployed: the (obfuscated) DRAM weights plus its FaR
/// configuration. With `enabled == false` the map is ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardenedLayer {
    pub dram: LinearLayer,
    pub farmap: FarMap,
    pub shadow: ShadowStore,
    pub enabled: bool,
}

impl HardenedLayer {
    /// An unhardened layer: empty map, FaR disabled.
    pub fn baseline(layer: &LinearLayer, layer_id: u16) -> Self {
        Self {
            dram: layer.clone(),
            farmap: FarMap::empty(layer_id, layer.fan_in(), layer.fan_out()),
            shadow: ShadowStore::default(),
            enabled: false,
        }
    }

    /// Binds validated blobs to a DRAM layer.
    pub fn from_parts(dram: LinearLayer, farmap: FarMap, shadow: ShadowStore) -> Result<Self, BlobError> {
        if farmap.fan_in != dram.fan_in() || farmap.fan_out != dram.fan_out() {
            return Err(BlobError::Index(format!(
                "map is {}x{}, layer is {}x{}",
                farmap.fan_out,
                farmap.fan_in,
                dram.fan_out(),
                dram.fan_in()
            )));
        }
        farmap.validate(shadow.len(), ValidationLimits::default())?;
        let enabled = !farmap.is_empty();
        Ok(Self { dram, farmap, shadow, enabled })
    }

    /// True when the FaR datapath is engaged for this layer.
    pub fn far_active(&self) -> bool {
        self.enabled
    }

    /// Deployed semantics in wide precision: rewired lanes read the shadow
    /// value and the donor activation, skipped lanes contribute zero.
    pub fn deployed_operands(&self) -> LinearOperands {
        let mut ops = self.dram.operands();
        if !self.enabled {
            return ops;
        }
        ops.overrides = self
            .farmap
            .entries
            .iter()
            .map(|e| match e.action {
                FarAction::Skip => LaneOverride {
                    row: e.row,
                    lane: e.lane,
                    source: e.lane,
                    scale: 1.0,
                    weight: LaneWeight::Fixed(0.0),
                },
                FarAction::Rewire { donor, shadow_addr, .. } => LaneOverride {
                    row: e.row,
                    lane: e.lane,
                    source: donor,
                    scale: 1.0,
                    weight: LaneWeight::Fixed(self.shadow.values[shadow_addr].to_f64()),
                },
            })
            .collect();
        ops
    }

    /// The software-FaR graph over DRAM weights: rewired lanes multiply their
    /// own DRAM weight by `x[donor] / div`. This is what an attacker who
    /// back-propagates through the rewired graph sees.
    pub fn split_activation_operands(&self) -> LinearOperands {
        let mut ops = self.dram.operands();
        if !self.enabled {
            return ops;
        }
        ops.overrides = self
            .farmap
            .entries
            .iter()
            .map(|e| match e.action {
                FarAction::Skip => LaneOverride {
                    row: e.row,
                    lane: e.lane,
                    source: e.lane,
                    scale: 1.0,
                    weight: LaneWeight::Fixed(0.0),
                },
                FarAction::Rewire { donor, div, .. } => LaneOverride {
                    row: e.row,
                    lane: e.lane,
                    source: donor,
                    scale: 1.0 / div as f64,
                    weight: LaneWeight::Dram,
                },
            })
            .collect();
        ops
    }
}

impl LinearKernel for HardenedLayer {
    fn fan_in(&self) -> usize {
        self.dram.fan_in()
    }
    fn fan_out(&self) -> usize {
        self.dram.fan_out()
    }
    fn activation(&self) -> crate::model::Activation {
        self.dram.activation()
    }
    fn operands(&self) -> LinearOperands {
        self.deployed_operands()
    }
    fn apply_fp16(&self, x: &[Fp16]) -> Vec<Fp16> {
        crate::reference::far_linear_fp16(x, self).expect("hardened layers are validated at construction")
    }
}

/// Per-row lane ordering by gradient saliency plus per-lane deadness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRanking {
    pub fan_in: usize,
    pub fan_out: usize,
    /// `|dL/dw|`, row-major.
    pub saliency: Vec<f64>,
    /// Per row, lanes in descending saliency, ties by ascending lane.
    pub order: Vec<Vec<usize>>,
    /// Mean |activation| of each input lane.
    pub deadness: Vec<f64>,
}

impl SensitivityRanking {
    /// Absolute deadness threshold for `ratio` times the layer-wide mean.
    pub fn dead_threshold(&self, ratio: f64) -> f64 {
        if self.deadness.is_empty() {
            return 0.0;
        }
        ratio * self.deadness.iter().sum::<f64>() / self.deadness.len() as f64
    }

    pub fn dead_lanes(&self, ratio: f64) -> Vec<usize> {
        let t = self.dead_threshold(ratio);
        (0..self.fan_in).filter(|&l| self.deadness[l] <= t).collect()
    }
}

pub fn rank_sensitivity(
    weight_grad: &[f64],
    mean_abs_activation: &[f64],
    fan_in: usize,
    fan_out: usize,
) -> Result<SensitivityRanking, CompileError> {
    if weight_grad.len() != fan_in * fan_out || mean_abs_activation.len() != fan_in {
        return Err(CompileError::Shape(format!(
            "{} gradients and {} activations for a {fan_out}x{fan_in} layer",
            weight_grad.len(),
            mean_abs_activation.len()
        )));
    }
    let saliency: Vec<f64> = weight_grad.iter().map(|g| g.abs()).collect();
    let order = (0..fan_out)
        .map(|r| {
            let s = &saliency[r * fan_in..(r + 1) * fan_in];
            let mut lanes: Vec<usize> = (0..fan_in).collect();
            lanes.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            lanes
        })
        .collect();
    Ok(SensitivityRanking { fan_in, fan_out, saliency, order, deadness: mean_abs_activation.to_vec() })
}

/// Rankings for every layer of `net` from one analysis batch.
pub fn rank_network(net: &ToyNetwork, batch: &Batch) -> Result<Vec<SensitivityRanking>, ModelError> {
    let g = net.loss_and_gradients(batch)?;
    Ok(net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            rank_sensitivity(&g.weights[i], &g.mean_abs_activation[i], l.fan_in(), l.fan_out())
                .expect("shapes come from the same network")
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarConfig {
    pub budget_fraction: f64,
    pub div: u8,
    pub deadness_ratio: f64,
    /// Fill leftover budget with SKIP entries on unused dead lanes.
    pub emit_skips: bool,
    pub layer_id: u16,
}

impl Default for FarConfig {
    fn default() -> Self {
        Self {
            budget_fraction: DEFAULT_BUDGET_FRACTION,
            div: 2,
            deadness_ratio: DEFAULT_DEADNESS_RATIO,
            emit_skips: false,
            layer_id: 0,
        }
    }
}

impl FarConfig {
    pub fn check(&self) -> Result<(), CompileError> {
        if !(self.div == 2 || self.div == 3) {
            return Err(CompileError::Div(self.div));
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(CompileError::Budget(self.budget_fraction));
        }
        if !self.deadness_ratio.is_finite() || self.deadness_ratio < 0.0 {
            return Err(CompileError::Threshold(self.deadness_ratio));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    Hardened { groups: usize, skips: usize },
    NoDeadLanes,
    BudgetBelowDiv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub layer_id: u16,
    pub row_budget: usize,
    pub dead_lanes: Vec<usize>,
    pub rows: Vec<RowOutcome>,
    pub entries: usize,
    pub groups: usize,
}

impl CompileReport {
    pub fn hardened_rows(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r, RowOutcome::Hardened { groups, .. } if *groups > 0)).count()
    }
}

/// Greedy per-row compilation; see the module docs for the transform.
pub fn compile_far(
    layer: &LinearLayer,
    ranking: &SensitivityRanking,
    cfg: &FarConfig,
) -> Result<(HardenedLayer, CompileReport), CompileError> {
    cfg.check()?;
    let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
    if ranking.fan_in != fan_in || ranking.fan_out != fan_out {
        return Err(CompileError::Shape(format!(
            "ranking is {}x{}, layer is {fan_out}x{fan_in}",
            ranking.fan_out, ranking.fan_in
        )));
    }
    let div = cfg.div as usize;
    let cap = row_budget(cfg.budget_fraction, fan_in);
    let threshold = ranking.dead_threshold(cfg.deadness_ratio);
    let mut dead: Vec<usize> = (0..fan_in).filter(|&l| ranking.deadness[l] <= threshold).collect();
    dead.sort_by(|&a, &b| ranking.deadness[a].total_cmp(&ranking.deadness[b]).then(a.cmp(&b)));
    let is_dead = {
        let mut m = vec![false; fan_in];
        for &l in &dead {
            m[l] = true;
        }
        m
    };

    let mut dram = layer.clone();
    let mut entries = Vec::new();
    let mut shadow = Vec::new();
    let mut rows = Vec::with_capacity(fan_out);
    let mut groups_total = 0;

    for r in 0..fan_out {
        if cap == 0 || cap < div {
            rows.push(RowOutcome::BudgetBelowDiv);
            continue;
        }
        if dead.is_empty() {
            rows.push(RowOutcome::NoDeadLanes);
            continue;
        }
        let mut used = vec![false; fan_in];
        let mut row_entries: Vec<FarMapEntry> = Vec::new();
        let mut groups = 0;
        for &c in &ranking.order[r] {
            if row_entries.len() + div > cap {
                break;
            }
            if is_dead[c] || used[c] {
                continue;
            }
            let victims: Vec<usize> = dead
                .iter()
                .copied()
                .filter(|&v| !used[v] && v / TILE == c / TILE)
                .take(div - 1)
                .collect();
            if victims.len() < div - 1 {
                continue;
            }
            let donor_w = layer.weight(r, c);
            let shadow_addr = shadow.len();
            shadow.push(Fp16::from_f64(donor_w.to_f64() / div as f64));
            let action = FarAction::Rewire { donor: c, div: cfg.div, shadow_addr };
            used[c] = true;
            row_entries.push(FarMapEntry { row: r, lane: c, action });
            for v in victims {
                used[v] = true;
                dram.set_weight(r, v, donor_w);
                row_entries.push(FarMapEntry { row: r, lane: v, action });
            }
            groups += 1;
        }
        let mut skips = 0;
        if cfg.emit_skips {
            for &v in &dead {
                if row_entries.len() >= cap {
                    break;
                }
                if !used[v] {
                    used[v] = true;
                    row_entries.push(FarMapEntry { row: r, lane: v, action: FarAction::Skip });
                    skips += 1;
                }
            }
        }
        row_entries.sort_by_key(|e| e.lane);
        entries.extend(row_entries);
        groups_total += groups;
        rows.push(if groups == 0 && skips == 0 {
            RowOutcome::NoDeadLanes
        } else {
            RowOutcome::Hardened { groups, skips }
        });
    }

    let farmap = FarMap { layer_id: cfg.layer_id, fan_in, fan_out, entries };
    let report = CompileReport {
        layer_id: cfg.layer_id,
        row_budget: cap,
        dead_lanes: {
            let mut d = dead.clone();
            d.sort_unstable();
            d
        },
        rows,
        entries: farmap.entries.len(),
        groups: groups_total,
    };
    let enabled = !farmap.is_empty();
    Ok((HardenedLayer { dram, farmap, shadow: ShadowStore { values: shadow }, enabled }, report))
}

/// Ranks on `batch` and compiles every layer with `cfg` (layer ids assigned
/// by position).
pub fn harden_network(
    net: &ToyNetwork,
    batch: &Batch,
    cfg: &FarConfig,
) -> Result<(HardenedNetwork, Vec<CompileReport>), ModelError> {
    cfg.check().map_err(|e| ModelError::Shape(e.to_string()))?;
    let rankings = rank_network(net, batch)?;
    let mut layers = Vec::new();
    let mut reports = Vec::new();
    for (i, (layer, ranking)) in net.layers().iter().zip(&rankings).enumerate() {
        let layer_cfg = FarConfig { layer_id: i as u16, ..*cfg };
        let (h, rep) = compile_far(layer, ranking, &layer_cfg).expect("config checked above");
        layers.push(h);
        reports.push(rep);
    }
    Ok((HardenedNetwork { layers }, reports))
}

/// Every layer of a network in deployed form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardenedNetwork {
    pub layers: Vec<HardenedLayer>,
}

impl HardenedNetwork {
    pub fn baseline(net: &ToyNetwork) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .enumerate()
                .map(|(i, l)| HardenedLayer::baseline(l, i as u16))
                .collect(),
        }
    }

    /// The attacker-visible DRAM image.
    pub fn dram_network(&self) -> ToyNetwork {
        ToyNetwork::new(self.layers.iter().map(|h| h.dram.clone()).collect())
            .expect("hardened layers keep the original shapes")
    }

    pub fn deployed_operands(&self) -> Vec<LinearOperands> {
        self.layers.iter().map(HardenedLayer::deployed_operands).collect()
    }

    pub fn forward(
        &self,
        batch: &Batch,
        precision: crate::model::Precision,
    ) -> Result<crate::model::ForwardPass, ModelError> {
        let kernels: Vec<&dyn LinearKernel> = self.layers.iter().map(|l| l as &dyn LinearKernel).collect();
        crate::model::forward(&kernels, batch, precision)
    }

    pub fn accuracy(&self, batch: &Batch, precision: crate::model::Precision) -> Result<f64, ModelError> {
        Ok(self.forward(batch, precision)?.accuracy(&batch.labels))
    }
}

pub fn emit_blobs(h: &HardenedLayer) -> (Vec<u8>, Vec<u8>) {
    (formats::encode_fmap(&h.farmap), formats::encode_fshd(&h.shadow))
}

/// Decodes and validates both blobs. Any error means the layer must stay
/// on the baseline path.
pub fn load_blobs(fmap: &[u8], fshd: &[u8]) -> Result<(FarMap, ShadowStore), BlobError> {
    load_blobs_with(fmap, fshd, ValidationLimits::default())
}

pub fn load_blobs_with(
    fmap: &[u8],
    fshd: &[u8],
    limits: ValidationLimits,
) -> Result<(FarMap, ShadowStore), BlobError> {
    let map = formats::decode_fmap(fmap)?;
    let shadow = formats::decode_fshd(fshd)?;
    map.validate(shadow.len(), limits)?;
    Ok((map, shadow))
}
