//! binary16 arithmetic against an integer-only oracle.
//!
//! The oracle never touches floating point: every finite half is an integer
//! multiple of 2^-24, products are multiples of 2^-48, and rounding picks the
//! nearest entry of the sorted table of finite patterns.

mod common;

use faraccel::half::{fp16_add, fp16_from_real, fp16_mul, fp16_value_delta, flip_bit, Subnormals};
use faraccel::Fp16;
use proptest::prelude::*;
use rand::Rng;

const SCALE: u32 = 48;

fn is_nan(w: u16) -> bool {
    w & 0x7C00 == 0x7C00 && w & 0x03FF != 0
}

fn is_inf(w: u16) -> bool {
    w & 0x7FFF == 0x7C00
}

/// Magnitude of a finite pattern in units of 2^-48.
fn magnitude(w: u16) -> i128 {
    let e = ((w >> 10) & 0x1F) as u32;
    let m = (w & 0x3FF) as i128;
    if e == 0 {
        m << (SCALE - 24)
    } else {
        (m | 0x400) << (e - 1 + SCALE - 24)
    }
}

fn signed(w: u16) -> i128 {
    if w & 0x8000 != 0 {
        -magnitude(w)
    } else {
        magnitude(w)
    }
}

struct Oracle {
    /// magnitudes of 0x0000..=0x7BFF followed by 2^16, the first value that
    /// would need the next (infinite) pattern
    table: Vec<i128>,
}

impl Oracle {
    fn new() -> Self {
        let mut table: Vec<i128> = (0..=0x7BFFu16).map(magnitude).collect();
        table.push(1i128 << (16 + SCALE));
        Oracle { table }
    }

    /// Round an exact value (units of 2^-48) to the nearest pattern, ties to
    /// the even pattern. `neg` supplies the sign for values that round to zero.
    fn round(&self, v: i128, neg: bool) -> u16 {
        let sign = if v < 0 || (v == 0 && neg) { 0x8000 } else { 0 };
        let a = v.abs();
        let i = self.table.partition_point(|&t| t <= a);
        // table[i - 1] <= a < table[i]
        let lo = i - 1;
        let pick = if lo + 1 == self.table.len() {
            lo
        } else {
            let (dl, dh) = (a - self.table[lo], self.table[lo + 1] - a);
            if dl < dh || (dl == dh && lo % 2 == 0) {
                lo
            } else {
                lo + 1
            }
        };
        let bits = if pick >= 0x7C00 { 0x7C00 } else { pick as u16 };
        sign | bits
    }

    fn mul(&self, a: u16, b: u16) -> u16 {
        if is_nan(a) || is_nan(b) {
            return 0x7E00;
        }
        let sign = (a ^ b) & 0x8000;
        if is_inf(a) || is_inf(b) {
            let other = if is_inf(a) { b } else { a };
            if other & 0x7FFF == 0 {
                return 0x7E00;
            }
            return sign | 0x7C00;
        }
        // both finite: exact product in units of 2^-48
        let p = (magnitude(a) >> (SCALE - 24)) * (magnitude(b) >> (SCALE - 24));
        self.round(if sign != 0 { -p } else { p }, sign != 0)
    }

    fn add(&self, a: u16, b: u16) -> u16 {
        if is_nan(a) || is_nan(b) {
            return 0x7E00;
        }
        match (is_inf(a), is_inf(b)) {
            (true, true) if a != b => return 0x7E00,
            (true, _) => return a,
            (_, true) => return b,
            _ => {}
        }
        let s = signed(a) + signed(b);
        // exact zero sum: -0 only when both operands are -0
        let neg = s == 0 && a == 0x8000 && b == 0x8000;
        self.round(s, neg)
    }
}

#[test]
fn oracle_table_matches_pattern_order() {
    let o = Oracle::new();
    assert!(o.table.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(o.table[0x3C00], 1i128 << SCALE);
    assert_eq!(o.table[0x7BFF], 65504i128 << SCALE);
}

#[test]
fn ten_million_random_products_and_sums() {
    let o = Oracle::new();
    let mut rng = common::rng(0x16);
    for i in 0..10_000_000u32 {
        let a: u16 = rng.random();
        // every fourth pair uses nearby exponents so sums actually round
        let b: u16 = if i % 4 == 0 { (a & 0xFC00) ^ rng.random_range(0..0x0C00u16) ^ (rng.random::<u16>() & 0x83FF) } else { rng.random() };
        let (fa, fb) = (Fp16(a), Fp16(b));
        assert_eq!(fp16_mul(fa, fb).0, o.mul(a, b), "mul {a:#06x} {b:#06x}");
        assert_eq!(fp16_add(fa, fb).0, o.add(a, b), "add {a:#06x} {b:#06x}");
    }
}

#[test]
fn exhaustive_products_with_fixed_operands() {
    let o = Oracle::new();
    let fixed = [0x0000u16, 0x8000, 0x0001, 0x03FF, 0x0400, 0x3555, 0x3C00, 0x3C01, 0x4000, 0x7BFF, 0x7C00, 0xFC00, 0x7E00, 0xBFFF];
    for &b in &fixed {
        for a in 0..=u16::MAX {
            assert_eq!(fp16_mul(Fp16(a), Fp16(b)).0, o.mul(a, b), "mul {a:#06x} {b:#06x}");
            assert_eq!(fp16_add(Fp16(a), Fp16(b)).0, o.add(a, b), "add {a:#06x} {b:#06x}");
        }
    }
}

#[test]
fn rounding_boundary_sums() {
    let o = Oracle::new();
    // 1 + 2^-11 sits exactly between 1 and its successor; ties go to even
    assert_eq!(fp16_add(Fp16::ONE, Fp16(0x1000)).0, 0x3C00);
    assert_eq!(fp16_add(Fp16(0x3C01), Fp16(0x1000)).0, 0x3C02);
    // MAX plus half an ulp overflows
    assert_eq!(fp16_add(Fp16::MAX, Fp16(0x4C00)).0, 0x7C00);
    assert_eq!(fp16_add(Fp16::MAX, Fp16(0x4BFF)).0, 0x7BFF);
    let mut rng = common::rng(3);
    for _ in 0..200_000 {
        let a: u16 = rng.random::<u16>() & 0x7BFF;
        let ea = (a >> 10) as i32;
        // b about 11-12 binades below a lands on the rounding boundary
        let eb = (ea - rng.random_range(10..13)).max(0) as u16;
        let b = (eb << 10) | (rng.random::<u16>() & 0x83FF);
        assert_eq!(fp16_add(Fp16(a), Fp16(b)).0, o.add(a, b), "add {a:#06x} {b:#06x}");
    }
}

#[test]
fn spot_values() {
    assert_eq!(fp16_mul(Fp16(0x3C00), Fp16(0x4000)).0, 0x4000);
    assert_eq!(fp16_add(Fp16(0x3C00), Fp16(0xBC00)).0, 0x0000);
    assert_eq!(fp16_mul(Fp16::INFINITY, Fp16::ZERO).0, 0x7E00);
    assert_eq!(fp16_add(Fp16::INFINITY, Fp16::NEG_INFINITY).0, 0x7E00);
    // smallest subnormal squared underflows to a signed zero
    assert_eq!(fp16_mul(Fp16(0x8001), Fp16(0x0001)).0, 0x8000);
}

#[test]
fn flush_to_zero_mode() {
    let sub = Fp16(0x0200);
    assert_eq!(sub.mul_with(Fp16::ONE, Subnormals::FlushToZero).0, 0x0000);
    assert_eq!(Fp16(0x8200).add_with(Fp16::ZERO, Subnormals::FlushToZero).0, 0x0000);
    // normal inputs whose product is subnormal flush as well
    assert_eq!(Fp16(0x0400).mul_with(Fp16(0x3800), Subnormals::FlushToZero).0, 0x0000);
    assert_eq!(Fp16(0x0400).mul_with(Fp16(0x3800), Subnormals::Preserve).0, 0x0200);
}

/// Exact value of a decimal string in units of 2^-48, rounded to nearest
/// with ties flagged, computed with integer arithmetic only.
fn decimal_to_fp16(s: &str, o: &Oracle) -> u16 {
    let neg = s.starts_with('-');
    let body = s.trim_start_matches('-');
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits: u128 = format!("{int}{frac}").parse().unwrap();
    let den = 10u128.pow(frac.len() as u32);
    // candidates: v / den compared against table entries by cross-multiplying
    let a = o.table.partition_point(|&t| (t as u128) * den <= digits << SCALE);
    let lo = a - 1;
    let bits = if lo + 1 == o.table.len() {
        0x7C00
    } else {
        let dl = (digits << SCALE) - o.table[lo] as u128 * den;
        let dh = o.table[lo + 1] as u128 * den - (digits << SCALE);
        let pick = if dl < dh || (dl == dh && lo % 2 == 0) { lo } else { lo + 1 };
        if pick >= 0x7C00 {
            0x7C00
        } else {
            pick as u16
        }
    };
    if neg {
        bits | 0x8000
    } else {
        bits
    }
}

#[test]
fn decimal_corpus() {
    let o = Oracle::new();
    assert_eq!(decimal_to_fp16("0.1", &o), 0x2E66);
    let corpus = [
        "0", "1", "0.1", "0.2", "0.3", "0.333", "0.5", "0.7", "1.1", "2.5", "3.14159", "-0.1", "-7.75", "9.99", "65504", "65519.99",
        "65520", "100000", "0.00006103515625", "0.0000001", "1234.5678",
        "0.0009765625", "-2047.5", "2049", "4097", "0.0000000298023224", "0.0000000298023223", "0.0000000596046448",
    ];
    for s in corpus {
        let x: f64 = s.parse().unwrap();
        assert_eq!(fp16_from_real(x).0, decimal_to_fp16(s, &o), "{s}");
    }
    let mut rng = common::rng(10);
    for _ in 0..20_000 {
        let int = rng.random_range(0..70_000u32);
        let frac = rng.random_range(0..1_000_000u32);
        let s = format!("{int}.{frac:06}");
        assert_eq!(fp16_from_real(s.parse().unwrap()).0, decimal_to_fp16(&s, &o), "{s}");
        let s = format!("0.000{frac:06}");
        assert_eq!(fp16_from_real(s.parse().unwrap()).0, decimal_to_fp16(&s, &o), "{s}");
    }
}

#[test]
fn midpoints_round_to_even_and_neighbours_round_away() {
    for w in 0..0x7BFFu16 {
        let lo = Fp16(w).to_f64();
        let hi = Fp16(w + 1).to_f64();
        let mid = (lo + hi) / 2.0;
        let even = if w % 2 == 0 { w } else { w + 1 };
        assert_eq!(fp16_from_real(mid).0, even, "midpoint after {w:#06x}");
        assert_eq!(fp16_from_real(mid.next_down()).0, w);
        assert_eq!(fp16_from_real(mid.next_up()).0, w + 1);
        assert_eq!(fp16_from_real(-mid).0, even | 0x8000);
    }
    // between MAX and 2^16: the midpoint 65520 overflows
    assert_eq!(fp16_from_real(65520.0).0, 0x7C00);
    assert_eq!(fp16_from_real(65520f64.next_down()).0, 0x7BFF);
    // half the smallest subnormal ties to zero, just above it rounds up
    assert_eq!(fp16_from_real(2f64.powi(-25)).0, 0x0000);
    assert_eq!(fp16_from_real(2f64.powi(-25).next_up()).0, 0x0001);
}

/// The `half` crate narrows `f64` through `f32`, which double-rounds, so it
/// is only used as a reference on values that are exact in `f32`.
#[test]
fn conversion_agrees_with_half_crate() {
    let mut rng = common::rng(11);
    for _ in 0..1_000_000 {
        let x = f32::from_bits(rng.random::<u32>());
        let x = if x.is_nan() { rng.random_range(-1e5..1e5) } else { x };
        let scaled = x * 2f32.powi(rng.random_range(-40..40));
        for v in [x, scaled, rng.random_range(-70000.0..70000.0)] {
            assert_eq!(fp16_from_real(v as f64).0, half::f16::from_f32(v).to_bits(), "{v:e}");
        }
    }
    for w in 0..=u16::MAX {
        let ours = Fp16(w).to_f64();
        let theirs = half::f16::from_bits(w).to_f64();
        assert!(ours == theirs || (ours.is_nan() && theirs.is_nan()), "{w:#06x}");
    }
}

#[test]
fn no_double_rounding_through_f32() {
    // just below the midpoint 44144, but rounds up to it in f32
    let x = -44143.99945761972;
    assert_eq!(fp16_from_real(x).0, decimal_to_fp16("-44143.99945761972", &Oracle::new()));
    assert_eq!(fp16_from_real(x).0, 0xF963);
}

#[test]
fn value_delta_matches_decode_brute_force() {
    assert_eq!(fp16_value_delta(Fp16::ONE, 15).unwrap(), Some(-2.0));
    assert_eq!(fp16_value_delta(Fp16::ONE, 0).unwrap(), Some(2f64.powi(-10)));
    assert!(fp16_value_delta(Fp16::ONE, 16).is_err());
    for w in 0..=u16::MAX {
        for pos in 0..16 {
            let f = w ^ (1 << pos);
            let got = fp16_value_delta(Fp16(w), pos).unwrap();
            if is_nan(w) || is_nan(f) || (is_inf(w) && is_inf(f)) {
                assert_eq!(got, None, "{w:#06x} bit {pos}");
            } else if is_inf(w) || is_inf(f) {
                assert!(got.unwrap().is_infinite());
            } else {
                // exact in units of 2^-24, then scaled
                let d = (signed(f) - signed(w)) >> (SCALE - 24);
                assert_eq!(got, Some(d as f64 / 16_777_216.0), "{w:#06x} bit {pos}");
            }
        }
    }
}

#[test]
fn flip_bit_examples() {
    assert_eq!(flip_bit(Fp16(0x3C00), 15).unwrap().0, 0xBC00);
    assert_eq!(flip_bit(Fp16(0x0000), 10).unwrap().0, 0x0400);
    assert!(flip_bit(Fp16::ONE, 16).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn flip_bit_is_an_involution_touching_one_bit(w in any::<u16>(), pos in 0u32..16) {
        let f = flip_bit(Fp16(w), pos).unwrap();
        prop_assert_eq!((f.0 ^ w).count_ones(), 1);
        prop_assert_eq!(flip_bit(f, pos).unwrap().0, w);
    }

    #[test]
    fn arithmetic_commutes(a in any::<u16>(), b in any::<u16>()) {
        // NaN patterns become infinities
        let (a, b) = (if is_nan(a) { a & 0xFC00 } else { a }, if is_nan(b) { b & 0xFC00 } else { b });
        prop_assert_eq!(fp16_add(Fp16(a), Fp16(b)).0, fp16_add(Fp16(b), Fp16(a)).0);
        prop_assert_eq!(fp16_mul(Fp16(a), Fp16(b)).0, fp16_mul(Fp16(b), Fp16(a)).0);
    }

    #[test]
    fn rounding_is_monotone(x in -70000.0f64..70000.0, y in -70000.0f64..70000.0) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(fp16_from_real(lo).to_f64() <= fp16_from_real(hi).to_f64());
    }

    #[test]
    fn decode_encode_roundtrip(w in any::<u16>()) {
        let w = if is_nan(w) { w & 0xFC00 } else { w };
        let v = Fp16(w).to_f64();
        prop_assert_eq!(fp16_from_real(v).to_f64(), v);
        prop_assert_eq!(fp16_from_real(v).0, w);
    }

    #[test]
    fn additive_identity(w in any::<u16>()) {
        let w = if is_nan(w) { w & 0xFC00 } else { w };
        // -0 + +0 is +0, every other value is unchanged
        let expect = if w == 0x8000 { 0x0000 } else { w };
        prop_assert_eq!(fp16_add(Fp16(w), Fp16::ZERO).0, expect);
    }

    #[test]
    fn nan_inputs_give_canonical_nan(m in 1u16..0x400, s in any::<bool>(), b in any::<u16>()) {
        let nan = 0x7C00 | m | if s { 0x8000 } else { 0 };
        prop_assert_eq!(fp16_add(Fp16(nan), Fp16(b)).0, 0x7E00);
        prop_assert_eq!(fp16_mul(Fp16(b), Fp16(nan)).0, 0x7E00);
    }
}
