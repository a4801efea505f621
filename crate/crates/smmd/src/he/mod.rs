//! Additively homomorphic encryption (Paillier, `g = n + 1`) over big integers.
//!
//! The scheme supports exactly the two public operations the rest of the crate
//! needs: ciphertext addition (`Dec(add(Enc(a), Enc(b))) = a + b mod n`) and
//! plaintext scalar multiplication (`Dec(mul_plain(Enc(a), s)) = s * a mod n`).
//! Reals enter the plaintext ring through the fixed-point codec in [`fixed`].
//!
//! Key material and ciphertexts are immutable after creation and safe to share
//! across threads. Encryption takes an explicit RNG handle so full-protocol
//! runs are replayable from a crypto seed.

pub mod fixed;

use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Paillier public key with the fixed generator `g = n + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
    key_id: u64,
}

/// Paillier secret key. `lambda` is the Carmichael function of `n` and `mu`
/// its inverse mod `n` (valid because `g = n + 1`).
#[derive(Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    n: BigUint,
    n_squared: BigUint,
    key_id: u64,
    decrypt_calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey")
            .field("key_id", &format_args!("{:016x}", self.key_id))
            .field("lambda", &"[redacted]")
            .field("mu", &"[redacted]")
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// An encrypted ring element, bound to the public key that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: u64,
}

impl Ciphertext {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// Lowercase big-endian hex, the wire representation.
    pub fn to_hex(&self) -> String {
        self.value.to_str_radix(16)
    }

    /// Parses a hex ciphertext and binds it to `pk`, rejecting values outside
    /// `[0, n^2)`.
    pub fn from_hex(hex: &str, pk: &PublicKey) -> Result<Self> {
        let value = parse_hex(hex)?;
        if value >= pk.n_squared {
            return Err(Error::MalformedCiphertext(format!(
                "value has {} bits, exceeds n^2",
                value.bits()
            )));
        }
        Ok(Ciphertext { value, key_id: pk.key_id })
    }
}

pub(crate) fn parse_hex(hex: &str) -> Result<BigUint> {
    if hex.is_empty() {
        return Err(Error::Wire("empty hex integer".into()));
    }
    BigUint::parse_bytes(hex.as_bytes(), 16)
        .ok_or_else(|| Error::Wire(format!("non-hex payload at {:?}", truncate_for_msg(hex))))
}

fn truncate_for_msg(s: &str) -> String {
    if s.len() > 24 {
        format!("{}...", &s[..24])
    } else {
        s.to_string()
    }
}

fn fingerprint(n: &BigUint) -> u64 {
    // FNV-style fold over the limbs; only used to catch key mix-ups.
    let mut h = 0xcbf29ce484222325u64;
    for d in n.iter_u64_digits() {
        h ^= d;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl PublicKey {
    fn from_modulus(n: BigUint) -> Self {
        let g = &n + 1u32;
        let n_squared = &n * &n;
        let key_id = fingerprint(&n);
        PublicKey { n, g, n_squared, key_id }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// `(n, g)` as lowercase hex, the wire representation of a public key.
    pub fn to_hex_parts(&self) -> (String, String) {
        (self.n.to_str_radix(16), self.g.to_str_radix(16))
    }

    pub fn from_hex_parts(n_hex: &str, g_hex: &str) -> Result<Self> {
        let n = parse_hex(n_hex)?;
        let g = parse_hex(g_hex)?;
        if g != &n + 1u32 {
            return Err(Error::Wire("public key generator must equal n + 1".into()));
        }
        Ok(PublicKey::from_modulus(n))
    }

    fn check_key(&self, c: &Ciphertext) -> Result<()> {
        if c.key_id != self.key_id {
            return Err(Error::KeyMismatch { expected: self.key_id, found: c.key_id });
        }
        Ok(())
    }

    /// Encrypts a ring element `m in [0, n)` with fresh randomness from `rng`.
    pub fn encrypt(&self, m: &BigUint, rng: &mut dyn RngCore) -> Result<Ciphertext> {
        let r = self.sample_unit(rng);
        self.encrypt_with_randomness(m, &r)
    }

    /// Deterministic encryption with caller-chosen randomness `r`. Only for
    /// tests and replay debugging; fresh `r` is what makes the scheme
    /// semantically secure.
    pub fn encrypt_with_randomness(&self, m: &BigUint, r: &BigUint) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(Error::OutOfRange(format!(
                "plaintext has {} bits, modulus {}",
                m.bits(),
                self.n.bits()
            )));
        }
        if r.is_zero() || r >= &self.n {
            return Err(Error::OutOfRange("encryption randomness must lie in [1, n)".into()));
        }
        // g^m = (1 + n)^m = 1 + m*n (mod n^2), no exponentiation needed.
        let g_m = (BigUint::one() + m * &self.n) % &self.n_squared;
        let r_n = r.modpow(&self.n, &self.n_squared);
        let value = (g_m * r_n) % &self.n_squared;
        Ok(Ciphertext { value, key_id: self.key_id })
    }

    /// Homomorphic addition: decrypts to `(m1 + m2) mod n`.
    pub fn add_cipher(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
        self.check_key(c1)?;
        self.check_key(c2)?;
        if c1.key_id != c2.key_id {
            return Err(Error::KeyMismatch { expected: c1.key_id, found: c2.key_id });
        }
        let value = (&c1.value * &c2.value) % &self.n_squared;
        Ok(Ciphertext { value, key_id: self.key_id })
    }

    /// Plaintext scalar multiplication: decrypts to `(s * m) mod n`.
    pub fn mul_plain(&self, c: &Ciphertext, s: &BigUint) -> Result<Ciphertext> {
        self.check_key(c)?;
        if s >= &self.n {
            return Err(Error::OutOfRange("scalar must lie in [0, n)".into()));
        }
        let value = c.value.modpow(s, &self.n_squared);
        Ok(Ciphertext { value, key_id: self.key_id })
    }

    /// Uniform ring element in `[0, n)`, used for gradient masks.
    pub fn sample_ring(&self, rng: &mut dyn RngCore) -> BigUint {
        sample_below(rng, &self.n)
    }

    /// Uniform element of `[1, n)` coprime to `n`. Non-coprime draws only
    /// matter for the tiny test keys, where we resample.
    fn sample_unit(&self, rng: &mut dyn RngCore) -> BigUint {
        loop {
            let r = sample_below(rng, &self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }
}

impl SecretKey {
    /// Decrypts a ciphertext bound to this key, returning the unique
    /// plaintext in `[0, n)`.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        self.decrypt_calls.fetch_add(1, Ordering::Relaxed);
        if c.key_id != self.key_id {
            return Err(Error::KeyMismatch { expected: self.key_id, found: c.key_id });
        }
        if c.value >= self.n_squared {
            return Err(Error::MalformedCiphertext("value not in [0, n^2)".into()));
        }
        let u = c.value.modpow(&self.lambda, &self.n_squared);
        // L(u) = (u - 1) / n, exact by construction.
        let l = (u - BigUint::one()) / &self.n;
        Ok((l * &self.mu) % &self.n)
    }

    /// How many times `decrypt` ran on this key. The secure aggregation
    /// paths never decrypt; tests pin that with this counter.
    pub fn decrypt_invocations(&self) -> u64 {
        self.decrypt_calls.load(Ordering::Relaxed)
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }
}

impl KeyPair {
    /// Deterministic key generation: identical `(bits, seed)` yield identical
    /// keys. `bits` is the exact bit length of `n`; 2048 is the sensible
    /// floor for anything beyond testing.
    pub fn generate(bits: u64, seed: u64) -> Result<KeyPair> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        KeyPair::generate_with_rng(bits, &mut rng)
    }

    pub fn generate_with_rng(bits: u64, rng: &mut dyn RngCore) -> Result<KeyPair> {
        if bits < 6 || bits % 2 != 0 {
            return Err(Error::KeyGen(format!("key size must be even and >= 6, got {bits}")));
        }
        let half = bits / 2;
        let p = gen_prime(half, rng)?;
        let q = loop {
            let q = gen_prime(half, rng)?;
            if q != p {
                break q;
            }
        };
        KeyPair::from_parts(p, q, bits)
    }

    /// Builds a keypair from explicit primes; the route the small-ring test
    /// oracles use (e.g. p=3, q=5 for the exhaustive n=15 checks).
    pub fn from_primes(p: u64, q: u64) -> Result<KeyPair> {
        if p == q || p < 2 || q < 2 {
            return Err(Error::KeyGen("primes must be distinct and >= 2".into()));
        }
        for v in [p, q] {
            if !is_small_prime(v) {
                return Err(Error::KeyGen(format!("{v} is not prime")));
            }
        }
        let n_bits = BigUint::from(p * q).bits();
        KeyPair::from_parts(BigUint::from(p), BigUint::from(q), n_bits)
    }

    fn from_parts(p: BigUint, q: BigUint, expect_bits: u64) -> Result<KeyPair> {
        let n = &p * &q;
        if n.bits() != expect_bits {
            return Err(Error::KeyGen(format!(
                "modulus has {} bits, expected {expect_bits}",
                n.bits()
            )));
        }
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        let mu = mod_inverse(&lambda, &n)
            .ok_or_else(|| Error::KeyGen("lambda not invertible mod n".into()))?;
        let public = PublicKey::from_modulus(n.clone());
        let secret = SecretKey {
            lambda,
            mu,
            n,
            n_squared: public.n_squared.clone(),
            key_id: public.key_id,
            decrypt_calls: Arc::new(AtomicU64::new(0)),
        };
        Ok(KeyPair { public, secret })
    }
}

/// Spec-named free function, equivalent to [`KeyPair::generate`].
pub fn keygen(bits: u64, seed: u64) -> Result<KeyPair> {
    KeyPair::generate(bits, seed)
}

/// Uniform sample from `[0, bound)` by rejection on masked byte strings.
pub(crate) fn sample_below(rng: &mut dyn RngCore, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "sample_below bound must be positive");
    let bits = bound.bits();
    let bytes = ((bits + 7) / 8) as usize;
    let excess = (bytes as u64) * 8 - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xffu8 >> excess;
        let candidate = BigUint::from_bytes_be(&buf);
        if &candidate < bound {
            return candidate;
        }
    }
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from(a.clone());
    let m = BigInt::from(m.clone());
    let ext = a.extended_gcd(&m);
    if !ext.gcd.is_one() {
        return None;
    }
    let mut x = ext.x % &m;
    if x < BigInt::zero() {
        x += &m;
    }
    x.to_biguint()
}

const SMALL_PRIMES: [u64; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

fn is_small_prime(v: u64) -> bool {
    if v < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= v {
        if v % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Random prime with exactly `bits` bits and the top two bits set, so that a
/// product of two such primes always reaches the full target length.
fn gen_prime(bits: u64, rng: &mut dyn RngCore) -> Result<BigUint> {
    const MAX_TRIES: usize = 100_000;
    if bits < 3 {
        return Err(Error::KeyGen("prime size too small".into()));
    }
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    for _ in 0..MAX_TRIES {
        let mut candidate = sample_below(rng, &(BigUint::one() << bits));
        candidate |= &top;
        candidate |= BigUint::one();
        if is_probable_prime(&candidate, rng) {
            return Ok(candidate);
        }
    }
    Err(Error::KeyGen(format!("no {bits}-bit prime found after {MAX_TRIES} draws")))
}

/// Miller-Rabin with 40 rounds; witnesses come from the caller's RNG so key
/// generation stays deterministic under a fixed seed.
fn is_probable_prime(n: &BigUint, rng: &mut dyn RngCore) -> bool {
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let two = &one + &one;
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..40 {
        let a = loop {
            let a = sample_below(rng, &n_minus_1);
            if a >= two {
                break a;
            }
        };
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Schoolbook Paillier on u128, independent of the implementation above.
    /// Everything on the tiny n=15 ring is checked against this.
    mod oracle {
        pub const P: u128 = 3;
        pub const Q: u128 = 5;
        pub const N: u128 = P * Q;
        pub const N2: u128 = N * N;

        fn pow_mod(mut b: u128, mut e: u128, m: u128) -> u128 {
            let mut acc = 1u128;
            b %= m;
            while e > 0 {
                if e & 1 == 1 {
                    acc = acc * b % m;
                }
                b = b * b % m;
                e >>= 1;
            }
            acc
        }

        pub fn enc(m: u128, r: u128) -> u128 {
            pow_mod(N + 1, m, N2) * pow_mod(r, N, N2) % N2
        }

        pub fn dec(c: u128) -> u128 {
            // lambda = lcm(2, 4) = 4, mu = 4^-1 mod 15 = 4
            let lambda = 4u128;
            let mu = 4u128;
            let l = (pow_mod(c, lambda, N2) - 1) / N;
            l * mu % N
        }
    }

    fn tiny() -> KeyPair {
        KeyPair::from_primes(3, 5).unwrap()
    }

    #[test]
    fn tiny_ring_matches_schoolbook_oracle_exhaustively() {
        let kp = tiny();
        assert_eq!(kp.public.modulus(), &BigUint::from(15u32));
        assert_eq!(kp.public.generator(), &BigUint::from(16u32));
        let r = BigUint::from(2u32);
        for m in 0u32..15 {
            let c = kp.public.encrypt_with_randomness(&BigUint::from(m), &r).unwrap();
            let expect = oracle::enc(m as u128, 2);
            assert_eq!(c.to_hex(), BigUint::from(expect).to_str_radix(16));
            assert_eq!(oracle::dec(expect), m as u128);
            assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(m));
        }
    }

    #[test]
    fn tiny_ring_addition_matches_oracle_for_all_pairs() {
        let kp = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for a in 0u32..15 {
            for b in 0u32..15 {
                let ca = kp.public.encrypt(&BigUint::from(a), &mut rng).unwrap();
                let cb = kp.public.encrypt(&BigUint::from(b), &mut rng).unwrap();
                let sum = kp.public.add_cipher(&ca, &cb).unwrap();
                assert_eq!(kp.secret.decrypt(&sum).unwrap(), BigUint::from((a + b) % 15));
            }
        }
    }

    #[test]
    fn tiny_ring_pinned_values() {
        let kp = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let enc = |m: u32, rng: &mut ChaCha20Rng| kp.public.encrypt(&BigUint::from(m), rng).unwrap();

        // 4 + 7 = 11
        let c = kp.public.add_cipher(&enc(4, &mut rng), &enc(7, &mut rng)).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(11u32));
        // wraparound: 9 + 9 = 3 (mod 15)
        let c = kp.public.add_cipher(&enc(9, &mut rng), &enc(9, &mut rng)).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(3u32));
        // 4 * 7 = 13 (mod 15)
        let c = kp.public.mul_plain(&enc(4, &mut rng), &BigUint::from(7u32)).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(13u32));
        // identities
        let c = kp.public.mul_plain(&enc(9, &mut rng), &BigUint::from(1u32)).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(9u32));
        let c = kp.public.mul_plain(&enc(9, &mut rng), &BigUint::zero()).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::zero());
        let c = kp.public.add_cipher(&enc(9, &mut rng), &enc(0, &mut rng)).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(9u32));
    }

    #[test]
    fn small_keygen_roundtrips() {
        let kp = keygen(16, 1).unwrap();
        assert_eq!(kp.public.modulus().bits(), 16);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let c = kp.public.encrypt(&BigUint::from(5u32), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn keygen_is_deterministic_under_seed() {
        let a = keygen(512, 7).unwrap();
        let b = keygen(512, 7).unwrap();
        assert_eq!(a.public.modulus(), b.public.modulus());
        assert_eq!(a.public.modulus().bits(), 512);
        let c = keygen(512, 8).unwrap();
        assert_ne!(a.public.modulus(), c.public.modulus());
    }

    #[test]
    fn fresh_randomness_gives_distinct_ciphertexts() {
        let kp = keygen(256, 3).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let m = BigUint::from(5u32);
        let c1 = kp.public.encrypt(&m, &mut rng).unwrap();
        let c2 = kp.public.encrypt(&m, &mut rng).unwrap();
        assert_ne!(c1, c2);
        assert_eq!(kp.secret.decrypt(&c1).unwrap(), m);
        assert_eq!(kp.secret.decrypt(&c2).unwrap(), m);
    }

    #[test]
    fn wrong_key_is_rejected() {
        let kp1 = keygen(256, 1).unwrap();
        let kp2 = keygen(256, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let c = kp1.public.encrypt(&BigUint::from(9u32), &mut rng).unwrap();
        assert!(matches!(kp2.secret.decrypt(&c), Err(Error::KeyMismatch { .. })));
        let c2 = kp2.public.encrypt(&BigUint::from(9u32), &mut rng).unwrap();
        assert!(matches!(kp1.public.add_cipher(&c, &c2), Err(Error::KeyMismatch { .. })));
        assert!(matches!(kp2.public.mul_plain(&c, &BigUint::one()), Err(Error::KeyMismatch { .. })));
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        let kp = tiny();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        assert!(kp.public.encrypt(&BigUint::from(15u32), &mut rng).is_err());
        let c = kp.public.encrypt(&BigUint::from(3u32), &mut rng).unwrap();
        assert!(kp.public.mul_plain(&c, &BigUint::from(15u32)).is_err());
        assert!(Ciphertext::from_hex("ff00ff00", &kp.public).is_err());
        assert!(Ciphertext::from_hex("zz", &kp.public).is_err());
    }

    #[test]
    fn hex_roundtrip_binds_to_key() {
        let kp = keygen(256, 11).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let c = kp.public.encrypt(&BigUint::from(42u32), &mut rng).unwrap();
        let back = Ciphertext::from_hex(&c.to_hex(), &kp.public).unwrap();
        assert_eq!(back, c);
        let (n_hex, g_hex) = kp.public.to_hex_parts();
        let pk = PublicKey::from_hex_parts(&n_hex, &g_hex).unwrap();
        assert_eq!(pk, kp.public);
        assert!(PublicKey::from_hex_parts(&n_hex, &n_hex).is_err());
    }

    #[test]
    fn decrypt_counter_tracks_calls() {
        let kp = keygen(256, 13).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let c = kp.public.encrypt(&BigUint::from(1u32), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt_invocations(), 0);
        kp.secret.decrypt(&c).unwrap();
        kp.secret.decrypt(&c).unwrap();
        assert_eq!(kp.secret.decrypt_invocations(), 2);
    }

    #[test]
    fn random_roundtrip_at_512_bits() {
        let kp = keygen(512, 21).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        for _ in 0..50 {
            let m = sample_below(&mut rng, kp.public.modulus());
            let c = kp.public.encrypt(&m, &mut rng).unwrap();
            assert_eq!(kp.secret.decrypt(&c).unwrap(), m);
        }
    }
}
