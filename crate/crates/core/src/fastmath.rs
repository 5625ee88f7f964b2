//! A polynomial exp kernel for the hot backward loops.
//!
//! The pseudogradient of the max reduction needs e^(z_i - y) for every input
//! of every unit, which is the single most expensive computation in training.
//! Calls into libm cannot be vectorized by the compiler; this version can.

/// exp(x) via Cody-Waite range reduction and a degree-11 polynomial.
/// Max relative error measured against std is below 1e-14 on [-60, 1].
#[inline]
pub fn fast_exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    // ln(2) split so that k * LN2_HI is exact for |k| < 2^26.
    const LN2_HI: f64 = 0.693_147_180_369_123_8;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let k = (x * LOG2E).round_ties_even();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // Scale by 2^k through the exponent bits. Adding 2^52 parks the integer
    // 1023+k in the low mantissa bits, so the shift builds the exponent
    // without a float-to-int cast (which has no AVX2 vector form). For every
    // k the guard below lets through this matches the plain cast bit for bit.
    let bits = (k + (1023.0 + 4_503_599_627_370_496.0)).to_bits() << 52;
    let scaled = p * f64::from_bits(bits);
    // The underflow guard is a select rather than an early return so
    // callers' loops can vectorize.
    if x < -708.0 {
        0.0
    } else {
        scaled
    }
}
