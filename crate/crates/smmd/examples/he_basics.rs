//! Additively homomorphic encryption and the fixed-point codec.
//!
//! Run with: cargo run --example he_basics

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use smmd::he::fixed::FixedPointParams;
use smmd::he::keygen;

fn main() -> smmd::Result<()> {
    // deterministic keygen: same (bits, seed) always yields the same key
    let kp = keygen(512, 42)?;
    println!("generated a 512-bit keypair, key id {:016x}", kp.public.key_id());

    let mut rng = ChaCha20Rng::seed_from_u64(7);

    // ciphertext addition: Dec(Enc(a) + Enc(b)) = a + b
    let a = BigUint::from(41u32);
    let b = BigUint::from(1u32);
    let ca = kp.public.encrypt(&a, &mut rng)?;
    let cb = kp.public.encrypt(&b, &mut rng)?;
    let sum = kp.public.add_cipher(&ca, &cb)?;
    println!("Dec(Enc(41) + Enc(1)) = {}", kp.secret.decrypt(&sum)?);

    // plaintext scalar multiplication: Dec(s * Enc(a)) = s * a
    let tripled = kp.public.mul_plain(&ca, &BigUint::from(3u32))?;
    println!("Dec(3 * Enc(41))      = {}", kp.secret.decrypt(&tripled)?);

    // two encryptions of the same value differ (fresh randomness)
    let ca2 = kp.public.encrypt(&a, &mut rng)?;
    println!("Enc(41) twice gives distinct ciphertexts: {}", ca != ca2);

    // reals enter the ring through the fixed-point codec: f fractional bits,
    // negatives in the upper half of the ring
    let fx = FixedPointParams::new(40, 128, kp.public.modulus())?;
    let x = -2.75;
    let y = 1.5;
    let cx = kp.public.encrypt(&fx.encode(x)?, &mut rng)?;
    let cy = kp.public.encrypt(&fx.encode(y)?, &mut rng)?;
    let csum = kp.public.add_cipher(&cx, &cy)?;
    let decoded = fx.decode(&kp.secret.decrypt(&csum)?, 1)?;
    println!("{x} + {y} under encryption = {decoded}");

    // one plaintext multiplication accumulates a second 2^f factor: the
    // result decodes at scale 2
    let cprod = kp.public.mul_plain(&cy, &fx.encode(x)?)?;
    let decoded = fx.decode(&kp.secret.decrypt(&cprod)?, 2)?;
    println!("{x} * {y} under encryption = {decoded:.12}");

    // ciphertexts travel as lowercase hex
    let hex = csum.to_hex();
    println!("wire form of a ciphertext: {}...{}", &hex[..16], &hex[hex.len() - 16..]);
    Ok(())
}
