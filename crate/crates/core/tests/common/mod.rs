#![allow(dead_code)]

use faraccel::compiler::{compile_far, rank_sensitivity, FarConfig, HardenedLayer};
use faraccel::model::{Activation, LinearLayer};
use faraccel::Fp16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Moderate values most of the time, arbitrary finite bit patterns otherwise.
pub fn random_word(rng: &mut ChaCha8Rng, wild: bool) -> Fp16 {
    if wild {
        loop {
            let w = Fp16(rng.random());
            if w.is_finite() {
                return w;
            }
        }
    } else {
        Fp16::from_f64(rng.random_range(-2.0..2.0))
    }
}

pub fn random_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, wild: bool) -> LinearLayer {
    let w = (0..fan_in * fan_out).map(|_| random_word(rng, wild)).collect();
    let b = (0..fan_out).map(|_| random_word(rng, wild)).collect();
    LinearLayer::new(fan_in, fan_out, w, b, Activation::Identity).unwrap()
}

/// Random saliency with a random set of dead input lanes, compiled at the
/// default budget.
pub fn random_hardened(rng: &mut ChaCha8Rng, layer: &LinearLayer, div: u8, emit_skips: bool) -> (HardenedLayer, Vec<bool>) {
    let (fi, fo) = (layer.fan_in(), layer.fan_out());
    let dead_count = rng.random_range(0..=fi / 2);
    let mut dead = vec![false; fi];
    for _ in 0..dead_count {
        dead[rng.random_range(0..fi)] = true;
    }
    let act: Vec<f64> = dead.iter().map(|&d| if d { 0.0 } else { rng.random_range(0.5..2.0) }).collect();
    let grad: Vec<f64> = (0..fi * fo).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ranking = rank_sensitivity(&grad, &act, fi, fo).unwrap();
    let cfg = FarConfig { div, emit_skips, ..Default::default() };
    let (h, _) = compile_far(layer, &ranking, &cfg).unwrap();
    (h, dead)
}
