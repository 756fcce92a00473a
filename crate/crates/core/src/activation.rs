//! Branch-free `tanh` for the surrogate's hidden layers.
//!
//! The libm `tanh` costs about 20 ns per call, which is several times the
//! cost of the matrix products it sits between. This version evaluates
//! `tanh(x) = -expm1(-2|x|) / (2 + expm1(-2|x|))` with a Cody-Waite reduced
//! polynomial `expm1`, and auto-vectorizes when applied over a slice. It is
//! accurate to a few ulp over the whole line.

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const INV_LN2: f64 = std::f64::consts::LOG2_E;
/// 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;
const SIGN: u64 = 1 << 63;

/// Past this magnitude tanh rounds to +-1.
const SATURATION: f64 = 20.0;

/// `expm1(x)` for `x` in `[-2 * SATURATION, 0]`.
#[inline(always)]
fn expm1_neg(x: f64) -> f64 {
    let shifted = x * INV_LN2 + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series of expm1 on |r| <= ln2/2; the r^14 term is below 1e-17.
    let mut q = 1.0 / 6_227_020_800.0;
    q = q * r + 1.0 / 479_001_600.0;
    q = q * r + 1.0 / 39_916_800.0;
    q = q * r + 1.0 / 3_628_800.0;
    q = q * r + 1.0 / 362_880.0;
    q = q * r + 1.0 / 40_320.0;
    q = q * r + 1.0 / 5_040.0;
    q = q * r + 1.0 / 720.0;
    q = q * r + 1.0 / 120.0;
    q = q * r + 1.0 / 24.0;
    q = q * r + 1.0 / 6.0;
    q = q * r + 0.5;
    let em1_r = r + r * r * q;
    // 2^k for k in [-58, 0]: the shifter's own high bits fall off the shift.
    let two_k = f64::from_bits(shifted.to_bits().wrapping_add(1023) << 52);
    two_k * em1_r + (two_k - 1.0)
}

#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    let a = if a < SATURATION { a } else { SATURATION };
    let e = expm1_neg(-2.0 * a);
    let t = -e / (2.0 + e);
    f64::from_bits(t.to_bits() | (x.to_bits() & SIGN))
}

/// Applies [`tanh`] to every element in place. Uses wider vector units when
/// the CPU has them; the arithmetic is the same, so results are identical.
pub fn tanh_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required feature was detected at runtime.
            unsafe { tanh_slice_avx512(v) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required feature was detected at runtime.
            unsafe { tanh_slice_avx2(v) };
            return;
        }
    }
    tanh_slice(v);
}

#[inline(always)]
fn tanh_slice(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = tanh(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tanh_slice_avx512(v: &mut [f64]) {
    tanh_slice(v)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_slice_avx2(v: &mut [f64]) {
    tanh_slice(v)
}
