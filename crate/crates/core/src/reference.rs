//! Untimed functional model of the FaR-aware linear operator. The binary16
//! variant fixes the exact operation order the datapath uses and is the
//! bit-exact target for [`crate::dpe`].

use serde::{Deserialize, Serialize};

use crate::compiler::{FarAction, FarMap, HardenedLayer};
use crate::error::BlobError;
use crate::half::Fp16;
use crate::model::LinearLayer;
use crate::TILE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    Base,
    Shadow(usize),
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneOperand {
    pub weight: WeightSource,
    /// Input lane whose activation feeds this multiplier.
    pub activation: usize,
}

/// Dense `(row, lane)` operand sources derived from a validated map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EffectiveOperands {
    pub fan_in: usize,
    pub fan_out: usize,
    lanes: Vec<LaneOperand>,
}

impl EffectiveOperands {
    pub fn from_map(map: &FarMap, shadow_len: usize) -> Result<Self, BlobError> {
        map.validate(shadow_len, crate::compiler::ValidationLimits { budget_fraction: 1.0 })?;
        Ok(Self::from_validated(map))
    }

    fn from_validated(map: &FarMap) -> Self {
        let mut lanes: Vec<LaneOperand> = (0..map.fan_out * map.fan_in)
            .map(|i| LaneOperand { weight: WeightSource::Base, activation: i % map.fan_in.max(1) })
            .collect();
        for e in &map.entries {
            lanes[e.row * map.fan_in + e.lane] = match e.action {
                FarAction::Skip => LaneOperand { weight: WeightSource::Zero, activation: e.lane },
                FarAction::Rewire { donor, shadow_addr, .. } => {
                    LaneOperand { weight: WeightSource::Shadow(shadow_addr), activation: donor }
                }
            };
        }
        Self { fan_in: map.fan_in, fan_out: map.fan_out, lanes }
    }

    /// Every lane `(BASE, self)`.
    pub fn identity(fan_in: usize, fan_out: usize) -> Self {
        Self::from_validated(&FarMap::empty(0, fan_in, fan_out))
    }

    pub fn get(&self, row: usize, lane: usize) -> LaneOperand {
        self.lanes[row * self.fan_in + lane]
    }

    pub fn row(&self, row: usize) -> &[LaneOperand] {
        &self.lanes[row * self.fan_in..(row + 1) * self.fan_in]
    }

    pub fn for_layer(layer: &HardenedLayer) -> Result<Self, BlobError> {
        if layer.enabled {
            Self::from_map(&layer.farmap, layer.shadow.len())
        } else {
            Ok(Self::identity(layer.dram.fan_in(), layer.dram.fan_out()))
        }
    }
}

fn check_input(len: usize, fan_in: usize) -> Result<(), BlobError> {
    if len != fan_in {
        return Err(BlobError::Field(format!("input has {len} elements, layer expects {fan_in}")));
    }
    Ok(())
}

/// Wide-precision FaR linear output. Each of a REWIRE group's `div` lanes
/// carries `x[donor] * W'[r][donor] / div`; the group's exact total is
/// added once, at the donor lane, so a group reproduces the donor's full
/// contribution without rounding.
pub fn far_linear_exact(x: &[f64], layer: &HardenedLayer) -> Result<Vec<f64>, BlobError> {
    let dram = &layer.dram;
    check_input(x.len(), dram.fan_in())?;
    let ops = EffectiveOperands::for_layer(layer)?;
    Ok((0..dram.fan_out())
        .map(|r| {
            let mut acc = dram.bias()[r].to_f64();
            for (lane, op) in ops.row(r).iter().enumerate() {
                acc += match op.weight {
                    WeightSource::Base => x[lane] * dram.weight(r, lane).to_f64(),
                    WeightSource::Zero => 0.0,
                    WeightSource::Shadow(_) if op.activation == lane => {
                        x[lane] * dram.weight(r, lane).to_f64()
                    }
                    WeightSource::Shadow(_) => 0.0,
                };
            }
            acc
        })
        .collect())
}

/// Balanced adder tree with adjacent pairing at every level.
pub fn pairwise_tree_sum(values: &[Fp16]) -> Fp16 {
    match values.len() {
        0 => Fp16::ZERO,
        1 => values[0],
        n => {
            assert!(n.is_power_of_two(), "tree width must be a power of two");
            let mut level: Vec<Fp16> = values.to_vec();
            while level.len() > 1 {
                level = level.chunks(2).map(|p| p[0].add(p[1])).collect();
            }
            level[0]
        }
    }
}

/// Operand words for one K-tile of one row: weight and activation per
/// lane, with lanes past `fan_in` padded as ZERO.
fn tile_operands(
    x: &[Fp16],
    dram: &LinearLayer,
    shadow: &[Fp16],
    ops: &EffectiveOperands,
    row: usize,
    k0: usize,
) -> ([Fp16; TILE], [Fp16; TILE]) {
    let mut w = [Fp16::ZERO; TILE];
    let mut a = [Fp16::ZERO; TILE];
    for t in 0..TILE {
        let lane = k0 + t;
        if lane >= dram.fan_in() {
            continue;
        }
        let op = ops.get(row, lane);
        w[t] = match op.weight {
            WeightSource::Base => dram.weight(row, lane),
            WeightSource::Shadow(addr) => shadow[addr],
            WeightSource::Zero => Fp16::ZERO,
        };
        a[t] = x[op.activation];
    }
    (w, a)
}

/// Binary16 FaR linear output in datapath order: per 32-lane K-tile,
/// 32 products reduced by the adjacent-pair tree; tile partials summed in
/// ascending K order; bias added last.
pub fn far_linear_fp16(x: &[Fp16], layer: &HardenedLayer) -> Result<Vec<Fp16>, BlobError> {
    check_input(x.len(), layer.dram.fan_in())?;
    let ops = EffectiveOperands::for_layer(layer)?;
    Ok(linear_fp16_with(x, &layer.dram, &layer.shadow.values, &ops))
}

/// [`far_linear_fp16`] with every lane on its baseline weight.
pub fn linear_fp16_plain(x: &[Fp16], layer: &LinearLayer) -> Vec<Fp16> {
    let ops = EffectiveOperands::identity(layer.fan_in(), layer.fan_out());
    linear_fp16_with(x, layer, &[], &ops)
}

fn linear_fp16_with(x: &[Fp16], dram: &LinearLayer, shadow: &[Fp16], ops: &EffectiveOperands) -> Vec<Fp16> {
    let k_tiles = dram.fan_in().div_ceil(TILE);
    (0..dram.fan_out())
        .map(|r| {
            let mut acc: Option<Fp16> = None;
            for kt in 0..k_tiles {
                let (w, a) = tile_operands(x, dram, shadow, ops, r, kt * TILE);
                let products: Vec<Fp16> = w.iter().zip(&a).map(|(w, a)| w.mul(*a)).collect();
                let partial = pairwise_tree_sum(&products);
                acc = Some(match acc {
                    None => partial,
                    Some(s) => s.add(partial),
                });
            }
            acc.unwrap_or(Fp16::ZERO).add(dram.bias()[r])
        })
        .collect()
}
