//! Fixed-point codec between reals and the Paillier plaintext ring.
//!
//! Reals are scaled by `2^frac_bits` and rounded half away from zero; both
//! parties use the same rule so cross-party encodings agree bit for bit.
//! Negative values occupy the upper half of the ring (`x < 0` encodes as
//! `n - |round(x * 2^f)|`), which composes with homomorphic addition without
//! rebiasing. Every plaintext-plaintext product accumulates one more `2^f`
//! factor; the `scale` argument tracks how many factors a value carries so
//! the decoder divides exactly once.

use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};

/// Scale/width contract mapping reals into the plaintext ring.
#[derive(Debug, Clone)]
pub struct FixedPointParams {
    frac_bits: u32,
    int_bits: u32,
    modulus: BigUint,
    half_modulus: BigUint,
    /// `2^int_bits`, the total raw-magnitude budget.
    magnitude_cap: BigUint,
    /// `2^(int_bits - 1)`, the per-encoding bound (headroom for sums).
    encode_cap: BigUint,
}

pub const DEFAULT_FRAC_BITS: u32 = 40;
pub const DEFAULT_INT_BITS: u32 = 128;

impl FixedPointParams {
    pub fn new(frac_bits: u32, int_bits: u32, modulus: &BigUint) -> Result<Self> {
        if int_bits < frac_bits + 2 {
            return Err(Error::Config(format!(
                "int_bits ({int_bits}) must exceed frac_bits ({frac_bits}) by at least 2"
            )));
        }
        let magnitude_cap = BigUint::one() << int_bits;
        if &magnitude_cap * 2u32 >= *modulus {
            return Err(Error::Config(format!(
                "2^{int_bits} must stay below n/2 (n has {} bits)",
                modulus.bits()
            )));
        }
        Ok(FixedPointParams {
            frac_bits,
            int_bits,
            half_modulus: modulus >> 1,
            modulus: modulus.clone(),
            encode_cap: BigUint::one() << (int_bits - 1),
            magnitude_cap,
        })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Encodes a real at scale 1 (one `2^f` factor).
    pub fn encode(&self, x: f64) -> Result<BigUint> {
        self.encode_at_scale(x, 1)
    }

    /// Encodes a real carrying `scale` fixed-point factors, i.e.
    /// `round(x * 2^(f*scale))` mapped into the ring.
    pub fn encode_at_scale(&self, x: f64, scale: u32) -> Result<BigUint> {
        let shift = self
            .frac_bits
            .checked_mul(scale)
            .ok_or_else(|| Error::Overflow("scale exponent overflow".into()))?;
        let raw = scaled_round(x, shift)
            .ok_or_else(|| Error::OutOfRange(format!("cannot encode non-finite value {x}")))?;
        let (sign, mag) = raw.into_parts();
        if mag >= self.encode_cap {
            return Err(Error::Overflow(format!(
                "|{x}| * 2^{shift} needs {} bits, budget is {}",
                mag.bits(),
                self.int_bits - 1
            )));
        }
        Ok(self.signed_to_ring(sign, mag))
    }

    fn signed_to_ring(&self, sign: Sign, mag: BigUint) -> BigUint {
        match sign {
            Sign::Minus => &self.modulus - mag,
            _ => mag,
        }
    }

    /// Decodes a ring element carrying `scale` fixed-point factors. Values at
    /// or above `n/2` are read as negative; raw magnitudes beyond the
    /// `2^int_bits` budget signal a blown precision budget and error out.
    pub fn decode(&self, m: &BigUint, scale: u32) -> Result<f64> {
        if m >= &self.modulus {
            return Err(Error::OutOfRange("ring element not reduced mod n".into()));
        }
        let (negative, mag) = if m > &self.half_modulus {
            (true, &self.modulus - m)
        } else {
            (false, m.clone())
        };
        if mag > self.magnitude_cap {
            return Err(Error::Overflow(format!(
                "decoded magnitude has {} bits, budget is {}; fixed-point budget misconfigured",
                mag.bits(),
                self.int_bits
            )));
        }
        let shift = self.frac_bits * scale;
        let v = mag.to_f64().ok_or_else(|| Error::Overflow("magnitude exceeds f64".into()))?;
        let x = v * 2f64.powi(-(shift as i32));
        Ok(if negative { -x } else { x })
    }

    /// Additive inverse in the ring, for subtracting plaintext terms.
    pub fn ring_neg(&self, m: &BigUint) -> BigUint {
        if m.is_zero() {
            BigUint::zero()
        } else {
            &self.modulus - m
        }
    }

    /// `(a + b) mod n` on encoded values.
    pub fn ring_add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + b) % &self.modulus
    }

    /// `(a * b) mod n` on encoded values; the product carries the sum of the
    /// operands' scales.
    pub fn ring_mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.modulus
    }
}

/// Exact `round(x * 2^shift)` with ties away from zero, via the binary
/// representation of the f64 (no double rounding).
fn scaled_round(x: f64, shift: u32) -> Option<BigInt> {
    if !x.is_finite() {
        return None;
    }
    if x == 0.0 {
        return Some(BigInt::zero());
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp_raw = ((bits >> 52) & 0x7ff) as i64;
    let mant_raw = bits & ((1u64 << 52) - 1);
    let (mant, exp) = if exp_raw == 0 {
        (mant_raw, -1074i64)
    } else {
        (mant_raw | (1 << 52), exp_raw - 1075)
    };
    let e = exp + shift as i64;
    let mag = BigUint::from(mant);
    let rounded = if e >= 0 {
        mag << (e as u64)
    } else {
        let k = (-e) as u64;
        let q = &mag >> k;
        let r = mag - (&q << k);
        if (r << 1u32) >= (BigUint::one() << k) {
            q + 1u32
        } else {
            q
        }
    };
    Some(if negative {
        BigInt::from_biguint(Sign::Minus, rounded)
    } else {
        BigInt::from_biguint(Sign::Plus, rounded)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::keygen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn params_f8() -> FixedPointParams {
        // big modulus, f=8 for hand-checkable values
        let n = BigUint::one() << 300;
        FixedPointParams::new(8, 64, &n).unwrap()
    }

    #[test]
    fn pinned_encodings() {
        let p = params_f8();
        assert_eq!(p.encode(0.0).unwrap(), BigUint::zero());
        // 1.5 * 2^8 = 384
        assert_eq!(p.encode(1.5).unwrap(), BigUint::from(384u32));
        assert_eq!(p.decode(&BigUint::from(384u32), 1).unwrap(), 1.5);
        // -0.25 encodes as n - 64
        let n = p.modulus().clone();
        assert_eq!(p.encode(-0.25).unwrap(), &n - BigUint::from(64u32));
        assert_eq!(p.decode(&(&n - BigUint::from(64u32)), 1).unwrap(), -0.25);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let p = params_f8();
        // 0.001953125 = 0.5 * 2^-8: ties round away from zero
        assert_eq!(p.encode(0.001953125).unwrap(), BigUint::one());
        let n = p.modulus().clone();
        assert_eq!(p.encode(-0.001953125).unwrap(), &n - BigUint::one());
    }

    #[test]
    fn roundtrip_error_within_one_ulp() {
        let kp = keygen(512, 40).unwrap();
        let p = FixedPointParams::new(40, 128, kp.public.modulus()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let eps = 2f64.powi(-40);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let m = p.encode(x).unwrap();
            let back = p.decode(&m, 1).unwrap();
            assert!((back - x).abs() <= eps, "x={x} back={back}");
        }
    }

    #[test]
    fn depth_one_product_decodes_at_scale_two() {
        let kp = keygen(512, 42).unwrap();
        let p = FixedPointParams::new(40, 128, kp.public.modulus()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let tol = 2f64.powi(-38); // 2^{-f+2}
        for _ in 0..500 {
            let a: f64 = rng.random_range(-4.0..4.0);
            let b: f64 = rng.random_range(-4.0..4.0);
            let prod = p.ring_mul(&p.encode(a).unwrap(), &p.encode(b).unwrap());
            let back = p.decode(&prod, 2).unwrap();
            assert!((back - a * b).abs() <= tol, "a={a} b={b} back={back}");
        }
    }

    #[test]
    fn encode_overflow_is_an_error_not_a_wrap() {
        let p = params_f8(); // int_bits 64, f 8 -> |x| < 2^55
        assert!(p.encode(2f64.powi(56)).is_err());
        assert!(p.encode(f64::NAN).is_err());
        assert!(p.encode(f64::INFINITY).is_err());
    }

    #[test]
    fn decode_rejects_blown_budget() {
        let n = BigUint::one() << 300;
        let p = FixedPointParams::new(8, 20, &n).unwrap();
        let big = BigUint::one() << 32;
        assert!(matches!(p.decode(&big, 1), Err(Error::Overflow(_))));
    }

    #[test]
    fn params_reject_tiny_modulus() {
        let n = BigUint::from(1000u32);
        assert!(FixedPointParams::new(4, 16, &n).is_err());
    }

    #[test]
    fn ring_ops_respect_signs() {
        let p = params_f8();
        let a = p.encode(2.5).unwrap();
        let b = p.encode(-1.25).unwrap();
        let sum = p.ring_add(&a, &b);
        assert_eq!(p.decode(&sum, 1).unwrap(), 1.25);
        let neg = p.ring_neg(&a);
        assert_eq!(p.decode(&neg, 1).unwrap(), -2.5);
        let prod = p.ring_mul(&a, &b);
        assert_eq!(p.decode(&prod, 2).unwrap(), -3.125);
    }
}
