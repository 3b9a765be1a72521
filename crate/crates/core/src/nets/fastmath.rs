//! Branch-free `tanh` over slices.
//!
//! libm's `tanh` is a scalar call and dominates the cost of wide tanh layers.
//! This version is written so the optimiser can vectorise it and stays within
//! a few ulp of libm.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// 1.5·2^52: adding it rounds to an integer held in the low mantissa bits
const ROUND: f64 = 6_755_399_441_055_744.0;
// tanh(20) rounds to 1
const SATURATE: f64 = 20.0;
const SMALL: f64 = 0.7;

/// `e^r` for `|r| ≤ ln2/2` (Taylor, degree 13).
#[inline(always)]
fn exp_reduced(r: f64) -> f64 {
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p
}

/// `e^y − 1` for `0 ≤ y ≤ SMALL` (Taylor, degree 17).
#[inline(always)]
fn expm1_small(y: f64) -> f64 {
    let mut fact = [1.0; 18];
    let mut k = 1;
    while k < 18 {
        fact[k] = fact[k - 1] * k as f64;
        k += 1;
    }
    let mut p = 1.0 / fact[17];
    for n in (1..17).rev() {
        p = p * y + 1.0 / fact[n];
    }
    p * y
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs().min(SATURATE);
    let y = 2.0 * a;

    let t = y * LOG2_E + ROUND;
    let k = t - ROUND;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    let large = 1.0 - 2.0 / (exp_reduced(r) * scale + 1.0);

    let em = expm1_small(y.min(SMALL));
    let small = em / (em + 2.0);

    let v = if y < SMALL { small } else { large };
    let v = v.copysign(x);
    if x.is_nan() {
        x
    } else {
        v
    }
}

#[inline(always)]
fn tanh_generic(xs: &mut [f64]) {
    for x in xs {
        *x = tanh(*x);
    }
}

// Same arithmetic as the generic loop (no contraction into FMA), only wider
// registers, so results are bit-identical across code paths.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq")]
unsafe fn tanh_avx512(xs: &mut [f64]) {
    tanh_generic(xs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_avx2(xs: &mut [f64]) {
    tanh_generic(xs)
}

pub fn tanh_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512dq") {
            // SAFETY: the required features were detected at runtime
            return unsafe { tanh_avx512(xs) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: as above
            return unsafe { tanh_avx2(xs) };
        }
    }
    tanh_generic(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulps(a: f64, b: f64) -> f64 {
        (a - b).abs() / (f64::EPSILON * b.abs().max(f64::MIN_POSITIVE))
    }

    #[test]
    fn agrees_with_libm() {
        let mut worst: f64 = 0.0;
        for k in 0..400_001 {
            let x = -25.0 + k as f64 * 1.25e-4;
            worst = worst.max(ulps(tanh(x), x.tanh()));
        }
        for e in -300..1 {
            let x = 10f64.powi(e);
            worst = worst.max(ulps(tanh(x), x.tanh()));
            worst = worst.max(ulps(tanh(-x), (-x).tanh()));
        }
        assert!(worst < 4.0, "worst error {worst} ulp");
    }

    #[test]
    fn special_values() {
        assert_eq!(tanh(0.0), 0.0);
        assert!(tanh(-0.0).is_sign_negative());
        assert_eq!(tanh(f64::INFINITY), 1.0);
        assert_eq!(tanh(f64::NEG_INFINITY), -1.0);
        assert_eq!(tanh(1e300), 1.0);
        assert!(tanh(f64::NAN).is_nan());
        let mut v = [0.3, -2.0, 40.0, f64::NAN];
        tanh_in_place(&mut v);
        assert_eq!(v[..3], [tanh(0.3), tanh(-2.0), 1.0]);
        assert!(v[3].is_nan());
    }

    #[test]
    fn dispatched_path_matches_scalar_bitwise() {
        let xs: Vec<f64> = (0..4099).map(|k| (k as f64 * 0.37).sin() * 8.0).collect();
        let mut v = xs.clone();
        tanh_in_place(&mut v);
        for (x, y) in xs.iter().zip(&v) {
            assert_eq!(tanh(*x).to_bits(), y.to_bits());
        }
    }
}
