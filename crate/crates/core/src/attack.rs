//! Progressive bit search over the DRAM-resident binary16 weights, a
//! uniform random-flip baseline, and the robustness comparison between a
//! plain and a FaR-hardened network.
//!
//! Ranking and virtual flips use the attacker's view of the network; the
//! effect of each committed flip and the objective are measured on the
//! deployed network. FaRMaps and shadow stores are on-chip and never
//! attacked.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compiler::HardenedNetwork;
use crate::error::{AttackError, ModelError};
use crate::half::Fp16;
use crate::model::{cross_entropy, loss_and_gradients, Batch, LinearOperands};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerView {
    /// Plain linear semantics over the DRAM image; rewiring is invisible.
    VanillaOverDram,
    /// Knows the FaRMap: rewired and skipped lanes get no gradient.
    FarAware,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Objective {
    AccuracyAtMost(f64),
    LossAtLeast(f64),
}

impl Objective {
    pub fn met(&self, loss: f64, accuracy: f64) -> bool {
        match *self {
            Objective::AccuracyAtMost(a) => accuracy <= a,
            Objective::LossAtLeast(l) => loss >= l,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Candidates kept per layer per iteration.
    pub top_n: usize,
    pub flip_budget: usize,
    pub objective: Objective,
    pub attacker_view: AttackerView,
    pub seed: u64,
    /// Bit positions the attacker may flip.
    pub bit_mask: u16,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            top_n: 10,
            flip_budget: 20,
            objective: Objective::AccuracyAtMost(0.35),
            attacker_view: AttackerView::VanillaOverDram,
            seed: 0,
            bit_mask: 0xFFFF,
        }
    }
}

impl AttackConfig {
    pub fn check(&self) -> Result<(), AttackError> {
        if self.top_n == 0 {
            return Err(AttackError::Config("top_n must be at least 1".into()));
        }
        if self.bit_mask == 0 {
            return Err(AttackError::Config("bit_mask allows no bits".into()));
        }
        match self.objective {
            Objective::AccuracyAtMost(a) if !(0.0..=1.0).contains(&a) => {
                Err(AttackError::Config(format!("accuracy threshold {a} outside [0, 1]")))
            }
            Objective::LossAtLeast(l) if !l.is_finite() => Err(AttackError::Config("loss target must be finite".into())),
            _ => Ok(()),
        }
    }
}

/// One DRAM bit, ordered by (layer, row, lane, bit) for deterministic scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BitAddress {
    pub layer: usize,
    pub row: usize,
    pub lane: usize,
    pub bit: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub addr: BitAddress,
    /// Gradient times value change, under the attacker's view.
    pub estimate: f64,
    /// Loss with this bit flipped, under the attacker's view.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IterationOutcome {
    Flip { best: Candidate, losses: Vec<Candidate> },
    Saturated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommittedFlip {
    pub layer: usize,
    pub row: usize,
    pub lane: usize,
    pub bit: u32,
    pub pre: u16,
    pub post: u16,
    /// Loss the attacker measured for this flip in its own view.
    pub attacker_loss: f64,
    /// Deployed loss and accuracy after the commit.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Objective,
    Budget,
    Saturated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Pbs,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub mode: AttackMode,
    pub config: AttackConfig,
    pub seed: u64,
    pub batch_size: usize,
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub iterations: usize,
    pub success: bool,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackTrace {
    pub header: TraceHeader,
    pub flips: Vec<CommittedFlip>,
}

impl AttackTrace {
    /// Flips needed to meet the objective; `flip_budget + 1` when it was
    /// never met.
    pub fn flips_to_objective(&self) -> usize {
        if self.header.success {
            self.flips.len()
        } else {
            self.header.config.flip_budget + 1
        }
    }

    pub fn final_state(&self) -> (f64, f64) {
        self.flips
            .last()
            .map(|f| (f.loss, f.accuracy))
            .unwrap_or((self.header.initial_loss, self.header.initial_accuracy))
    }

    /// Header line followed by one line per committed flip.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        writeln!(w)?;
        for f in &self.flips {
            serde_json::to_writer(&mut w, f)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, AttackError> {
        let mut lines = r.lines();
        let bad = |e: &dyn std::fmt::Display| AttackError::Replay(e.to_string());
        let first = lines.next().ok_or_else(|| AttackError::Replay("empty trace".into()))?.map_err(|e| bad(&e))?;
        let header: TraceHeader = serde_json::from_str(&first).map_err(|e| bad(&e))?;
        let mut flips = Vec::new();
        for line in lines {
            let line = line.map_err(|e| bad(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            flips.push(serde_json::from_str(&line).map_err(|e| bad(&e))?);
        }
        Ok(Self { header, flips })
    }
}

/// Mean cross-entropy and accuracy of a wide-precision operand stack.
pub fn evaluate(ops: &[LinearOperands], batch: &Batch) -> Result<(f64, f64), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = batch.len();
    let mut x = batch.inputs.clone();
    for l in ops {
        if x.len() != n * l.fan_in {
            return Err(ModelError::Shape(format!("layer expects {} inputs", l.fan_in)));
        }
        x = l.linear(&x, n).into_iter().map(|v| l.activation.apply(v)).collect();
    }
    let classes = ops.last().map(|l| l.fan_out).unwrap_or(0);
    let (loss, _) = cross_entropy(&x, &batch.labels, classes);
    let hits = x
        .chunks(classes)
        .zip(&batch.labels)
        .filter(|(z, &y)| {
            // same tie and NaN handling as ForwardPass::predictions
            let mut best = 0;
            for (i, &v) in z.iter().enumerate() {
                if v > z[best] || z[best].is_nan() && !v.is_nan() {
                    best = i;
                }
            }
            best == y
        })
        .count();
    // a NaN loss is treated as maximal so it is never preferred less than a finite one
    let loss = if loss.is_nan() { f64::INFINITY } else { loss };
    Ok((loss, hits as f64 / n as f64))
}

fn attacker_operands(net: &HardenedNetwork, view: AttackerView) -> Vec<LinearOperands> {
    match view {
        AttackerView::VanillaOverDram => net.layers.iter().map(|h| h.dram.operands()).collect(),
        AttackerView::FarAware => net.deployed_operands(),
    }
}

/// The `top_n` attackable bits per layer with the largest estimated loss
/// increase, in scan order. Bits whose estimate is not positive rank
/// behind every loss-increasing one, so they are only evaluated when
/// `top_n` exceeds the number of loss-increasing bits.
fn rank_candidates(net: &HardenedNetwork, batch: &Batch, cfg: &AttackConfig) -> Result<Vec<(BitAddress, f64)>, ModelError> {
    let grads = loss_and_gradients(&attacker_operands(net, cfg.attacker_view), batch)?;
    let mut picked = Vec::new();
    for (li, h) in net.layers.iter().enumerate() {
        let fi = h.dram.fan_in();
        let mut layer: Vec<(BitAddress, f64)> = Vec::new();
        for (idx, (&w, &g)) in h.dram.weights().iter().zip(&grads.weights[li]).enumerate() {
            for bit in 0..16u32 {
                if cfg.bit_mask & (1 << bit) == 0 {
                    continue;
                }
                let flipped = w.flip_bit(bit).expect("bit < 16");
                if !flipped.is_finite() {
                    continue;
                }
                let Some(delta) = w.value_delta(bit).expect("bit < 16") else { continue };
                let estimate = g * delta;
                if !estimate.is_nan() {
                    layer.push((BitAddress { layer: li, row: idx / fi, lane: idx % fi, bit }, estimate));
                }
            }
        }
        // stable sort keeps scan order among equal estimates
        layer.sort_by(|a, b| b.1.total_cmp(&a.1));
        layer.truncate(cfg.top_n);
        picked.extend(layer);
    }
    picked.sort_by_key(|c| c.0);
    Ok(picked)
}

fn flipped_word(net: &HardenedNetwork, a: BitAddress) -> (Fp16, Fp16) {
    let w = net.layers[a.layer].dram.weight(a.row, a.lane);
    (w, w.flip_bit(a.bit).expect("bit < 16"))
}

/// One search step: rank, virtually flip each candidate in the attacker's
/// view, measure, restore. The network is not modified.
pub fn pbs_iteration(net: &HardenedNetwork, batch: &Batch, cfg: &AttackConfig) -> Result<IterationOutcome, AttackError> {
    cfg.check()?;
    let ranked = rank_candidates(net, batch, cfg)?;
    if ranked.is_empty() {
        return Ok(IterationOutcome::Saturated);
    }
    let mut ops = attacker_operands(net, cfg.attacker_view);
    let (current, _) = evaluate(&ops, batch)?;
    let mut losses = Vec::with_capacity(ranked.len());
    for (addr, estimate) in ranked {
        let fi = ops[addr.layer].fan_in;
        let slot = addr.row * fi + addr.lane;
        let saved = ops[addr.layer].weights[slot];
        ops[addr.layer].weights[slot] = flipped_word(net, addr).1.to_f64();
        let (loss, _) = evaluate(&ops, batch)?;
        ops[addr.layer].weights[slot] = saved;
        losses.push(Candidate { addr, estimate, loss });
    }
    let mut best = losses[0];
    for c in &losses[1..] {
        if c.loss > best.loss {
            best = *c;
        }
    }
    if best.loss <= current {
        return Ok(IterationOutcome::Saturated);
    }
    Ok(IterationOutcome::Flip { best, losses })
}

fn commit(net: &mut HardenedNetwork, a: BitAddress) -> (u16, u16) {
    let (pre, post) = flipped_word(net, a);
    net.layers[a.layer].dram.set_weight(a.row, a.lane, post);
    (pre.0, post.0)
}

fn header(mode: AttackMode, cfg: &AttackConfig, batch: &Batch, init: (f64, f64)) -> TraceHeader {
    TraceHeader {
        mode,
        config: *cfg,
        seed: cfg.seed,
        batch_size: batch.len(),
        initial_loss: init.0,
        initial_accuracy: init.1,
        iterations: 0,
        success: false,
        stop: StopReason::Budget,
    }
}

/// Repeats [`pbs_iteration`], committing one flip per iteration into the
/// DRAM weights, until the objective is met, the budget is spent, or no
/// candidate raises the loss.
pub fn run_attack(net: &mut HardenedNetwork, batch: &Batch, cfg: &AttackConfig) -> Result<AttackTrace, AttackError> {
    cfg.check()?;
    let init = evaluate(&net.deployed_operands(), batch)?;
    let mut trace = AttackTrace { header: header(AttackMode::Pbs, cfg, batch, init), flips: Vec::new() };
    if cfg.objective.met(init.0, init.1) {
        trace.header.success = true;
        trace.header.stop = StopReason::Objective;
        return Ok(trace);
    }
    while trace.flips.len() < cfg.flip_budget {
        trace.header.iterations += 1;
        let best = match pbs_iteration(net, batch, cfg)? {
            IterationOutcome::Saturated => {
                trace.header.stop = StopReason::Saturated;
                return Ok(trace);
            }
            IterationOutcome::Flip { best, .. } => best,
        };
        let (pre, post) = commit(net, best.addr);
        let (loss, accuracy) = evaluate(&net.deployed_operands(), batch)?;
        let a = best.addr;
        trace.flips.push(CommittedFlip {
            layer: a.layer,
            row: a.row,
            lane: a.lane,
            bit: a.bit,
            pre,
            post,
            attacker_loss: best.loss,
            loss,
            accuracy,
        });
        if cfg.objective.met(loss, accuracy) {
            trace.header.success = true;
            trace.header.stop = StopReason::Objective;
            return Ok(trace);
        }
    }
    trace.header.stop = StopReason::Budget;
    Ok(trace)
}

/// Flips uniformly random attackable bits (never to a non-finite word)
/// until the objective is met or the budget is spent.
pub fn run_random_attack(net: &mut HardenedNetwork, batch: &Batch, cfg: &AttackConfig) -> Result<AttackTrace, AttackError> {
    cfg.check()?;
    let init = evaluate(&net.deployed_operands(), batch)?;
    let mut trace = AttackTrace { header: header(AttackMode::Random, cfg, batch, init), flips: Vec::new() };
    if cfg.objective.met(init.0, init.1) {
        trace.header.success = true;
        trace.header.stop = StopReason::Objective;
        return Ok(trace);
    }
    let bits: Vec<u32> = (0..16).filter(|b| cfg.bit_mask & (1 << b) != 0).collect();
    let sizes: Vec<usize> = net.layers.iter().map(|h| h.dram.weights().len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        trace.header.stop = StopReason::Saturated;
        return Ok(trace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while trace.flips.len() < cfg.flip_budget {
        trace.header.iterations += 1;
        let mut idx = rng.random_range(0..total);
        let bit = bits[rng.random_range(0..bits.len())];
        let mut layer = 0;
        while idx >= sizes[layer] {
            idx -= sizes[layer];
            layer += 1;
        }
        let fi = net.layers[layer].dram.fan_in();
        let a = BitAddress { layer, row: idx / fi, lane: idx % fi, bit };
        if !flipped_word(net, a).1.is_finite() {
            continue;
        }
        let (pre, post) = commit(net, a);
        let (loss, accuracy) = evaluate(&net.deployed_operands(), batch)?;
        trace.flips.push(CommittedFlip { layer, row: a.row, lane: a.lane, bit, pre, post, attacker_loss: loss, loss, accuracy });
        if cfg.objective.met(loss, accuracy) {
            trace.header.success = true;
            trace.header.stop = StopReason::Objective;
            return Ok(trace);
        }
    }
    trace.header.stop = StopReason::Budget;
    Ok(trace)
}

/// Re-applies a trace to a fresh copy of the attacked network and returns
/// the final deployed loss and accuracy on `batch`.
pub fn replay(net: &mut HardenedNetwork, trace: &AttackTrace, batch: &Batch) -> Result<(f64, f64), AttackError> {
    for (i, f) in trace.flips.iter().enumerate() {
        let layer = net
            .layers
            .get(f.layer)
            .ok_or_else(|| AttackError::Replay(format!("flip {i}: layer {} does not exist", f.layer)))?;
        if f.row >= layer.dram.fan_out() || f.lane >= layer.dram.fan_in() || f.bit >= 16 {
            return Err(AttackError::Replay(format!("flip {i}: address out of range")));
        }
        let a = BitAddress { layer: f.layer, row: f.row, lane: f.lane, bit: f.bit };
        let (pre, post) = flipped_word(net, a);
        if pre.0 != f.pre || post.0 != f.post {
            return Err(AttackError::Replay(format!("flip {i}: word is {:#06x}, trace expects {:#06x}", pre.0, f.pre)));
        }
        commit(net, a);
    }
    Ok(evaluate(&net.deployed_operands(), batch)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub baseline_flips: Vec<usize>,
    pub hardened_flips: Vec<usize>,
    pub baseline_median: f64,
    pub hardened_median: f64,
    /// hardened median over baseline median
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: AttackConfig,
    pub seeds: Vec<u64>,
    pub attack_batch: usize,
    pub pbs: ModeComparison,
    pub random: ModeComparison,
}

pub fn median(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        (v[m - 1] + v[m]) as f64 / 2.0
    }
}

fn compare(baseline_flips: Vec<usize>, hardened_flips: Vec<usize>) -> ModeComparison {
    let (b, h) = (median(&baseline_flips), median(&hardened_flips));
    let ratio = if b == h { 1.0 } else { h / b };
    ModeComparison { baseline_flips, hardened_flips, baseline_median: b, hardened_median: h, ratio }
}

/// Attack batch for one trial: `size` samples drawn without replacement
/// from `pool` with the trial seed.
pub fn attack_batch(pool: &Batch, size: usize, seed: u64) -> Batch {
    if size >= pool.len() {
        return pool.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), size).into_vec();
    idx.sort_unstable();
    pool.select(&idx)
}

/// Flips-to-objective medians over `trials` seeds (`cfg.seed`,
/// `cfg.seed + 1`, ...) for both networks, under PBS and random flipping.
pub fn compare_robustness(
    baseline: &HardenedNetwork,
    hardened: &HardenedNetwork,
    pool: &Batch,
    batch_size: usize,
    cfg: &AttackConfig,
    trials: usize,
) -> Result<RobustnessReport, AttackError> {
    cfg.check()?;
    if trials == 0 {
        return Err(AttackError::Config("trials must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut flips = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for &seed in &seeds {
        let batch = attack_batch(pool, batch_size, seed);
        let c = AttackConfig { seed, ..*cfg };
        for (slot, net) in [baseline, hardened].into_iter().enumerate() {
            flips[slot].push(run_attack(&mut net.clone(), &batch, &c)?.flips_to_objective());
            flips[2 + slot].push(run_random_attack(&mut net.clone(), &batch, &c)?.flips_to_objective());
        }
    }
    let [pb, ph, rb, rh] = flips;
    Ok(RobustnessReport {
        config: *cfg,
        seeds,
        attack_batch: batch_size,
        pbs: compare(pb, ph),
        random: compare(rb, rh),
    })
}
