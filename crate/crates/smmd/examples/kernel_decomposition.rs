//! Kernels, the second-order Taylor Gaussian, and the monomial decomposition
//! that makes cross-party kernel terms computable under additive HE.
//!
//! Run with: cargo run --example kernel_decomposition

use smmd::he::fixed::FixedPointParams;
use smmd::he::keygen;
use smmd::kernels::{KernelSpec, MonomialLayout, bilinear_check, eval_kernel, kernel_grad_x};

fn main() -> smmd::Result<()> {
    let x = vec![0.8, -0.3, 0.5];
    let y = vec![-0.2, 0.9, 0.4];

    for spec in [
        KernelSpec::linear(),
        KernelSpec::polynomial(0.0, 2),
        KernelSpec::polynomial(0.0, 3),
        KernelSpec::gaussian(1.0),
        KernelSpec::gaussian_taylor2(1.0),
    ] {
        println!(
            "{:<26} k(x,y) = {:>9.6}   dk/dx1 = {:>9.6}",
            spec.label(),
            eval_kernel(&spec, &x, &y)?,
            kernel_grad_x(&spec, &x, &y)?[0]
        );
    }

    // Taylor error is bounded by t^3/6 for t = ||x-y||^2 / (2 sigma^2) <= 1
    println!("\nTaylor truncation of exp(-t) at second order:");
    let exact = KernelSpec::gaussian(1.0);
    let taylor = KernelSpec::gaussian_taylor2(1.0);
    for t in [0.1, 0.5, 1.0] {
        let d = (2.0f64 * t).sqrt();
        let (a, b) = (vec![0.0], vec![d]);
        let gap = (eval_kernel(&exact, &a, &b)? - eval_kernel(&taylor, &a, &b)?).abs();
        println!("  t = {t:3}: |exact - taylor2| = {gap:.6} <= t^3/6 = {:.6}", t * t * t / 6.0);
    }

    // the decomposition: k(x, y) = <a(x), monomials(y)> for every secure
    // spec, so a party holding x can evaluate over the peer's encrypted
    // monomials of y with plaintext multiplications only
    let kp = keygen(512, 3)?;
    let fx = FixedPointParams::new(40, 128, kp.public.modulus())?;
    println!("\nbilinear pairing (in the fixed-point ring) vs direct evaluation:");
    for spec in [
        KernelSpec::linear(),
        KernelSpec::polynomial(0.0, 2),
        KernelSpec::polynomial(0.0, 3),
        KernelSpec::gaussian_taylor2(1.0),
    ] {
        let layout = MonomialLayout::for_kernel(&spec, x.len())?;
        let direct = eval_kernel(&spec, &x, &y)?;
        let paired = bilinear_check(&spec, &x, &y, &fx)?;
        println!(
            "  {:<26} {} monomials ({}), |direct - paired| = {:.2e}",
            spec.label(),
            layout.len(),
            layout.describe(),
            (direct - paired).abs()
        );
    }
    Ok(())
}
