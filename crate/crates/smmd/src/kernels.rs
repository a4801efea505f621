//! Kernel functions, their gradients, and the bilinear monomial decomposition
//! that lets one party evaluate cross-party kernel terms over the other
//! party's ciphertexts using only ciphertext addition and plaintext scalar
//! multiplication.
//!
//! For every secure-evaluable spec there are coefficient functions `a(x)`
//! with `k(x, y) = sum_t a_t(x) * monomial_t(y)` (exactly for linear and
//! polynomial kernels, to Taylor order for the Gaussian). The monomial order
//! is canonical — both parties derive it from the dimension alone, so no
//! negotiation message is needed.

use crate::error::{Error, Result};
use crate::he::fixed::FixedPointParams;
use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Linear,
    Polynomial,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Exact,
    /// Second-order Taylor expansion of `exp(-t)` around `t = 0`; only
    /// meaningful for the Gaussian family.
    Taylor2,
}

/// Kernel family plus hyperparameters and evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Polynomial offset; secure evaluation requires `c = 0`.
    #[serde(default)]
    pub c: f64,
    /// Polynomial degree.
    #[serde(default = "default_degree")]
    pub degree: u32,
    /// Gaussian bandwidth.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub mode: KernelMode,
}

fn default_degree() -> u32 {
    2
}

fn default_sigma() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            c: 0.0,
            degree: 1,
            sigma: default_sigma(),
            mode: KernelMode::Exact,
        }
    }

    pub fn polynomial(c: f64, degree: u32) -> Self {
        KernelSpec {
            family: KernelFamily::Polynomial,
            c,
            degree,
            sigma: default_sigma(),
            mode: KernelMode::Exact,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            c: 0.0,
            degree: 1,
            sigma,
            mode: KernelMode::Exact,
        }
    }

    pub fn gaussian_taylor2(sigma: f64) -> Self {
        KernelSpec { mode: KernelMode::Taylor2, ..KernelSpec::gaussian(sigma) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Linear => {}
            KernelFamily::Polynomial => {
                if !(1..=3).contains(&self.degree) {
                    return Err(Error::InvalidSpec(format!(
                        "polynomial degree must be 1, 2 or 3, got {}",
                        self.degree
                    )));
                }
                if !self.c.is_finite() {
                    return Err(Error::InvalidSpec("polynomial offset must be finite".into()));
                }
            }
            KernelFamily::Gaussian => {
                if !(self.sigma > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "gaussian bandwidth must be positive, got {}",
                        self.sigma
                    )));
                }
            }
        }
        if self.mode == KernelMode::Taylor2 && self.family != KernelFamily::Gaussian {
            return Err(Error::InvalidSpec("taylor2 mode is only defined for gaussian".into()));
        }
        Ok(())
    }

    /// Whether the cross-party decomposition exists for this spec: linear,
    /// polynomial with `c = 0` and `d in {2, 3}`, or gaussian in taylor2.
    pub fn is_secure_evaluable(&self) -> bool {
        match self.family {
            KernelFamily::Linear => true,
            KernelFamily::Polynomial => self.c == 0.0 && (self.degree == 2 || self.degree == 3),
            KernelFamily::Gaussian => self.mode == KernelMode::Taylor2,
        }
    }

    pub fn label(&self) -> String {
        match self.family {
            KernelFamily::Linear => "linear".to_string(),
            KernelFamily::Polynomial => format!("poly(c={},d={})", self.c, self.degree),
            KernelFamily::Gaussian => match self.mode {
                KernelMode::Exact => format!("gaussian(sigma={})", self.sigma),
                KernelMode::Taylor2 => format!("gaussian-taylor2(sigma={})", self.sigma),
            },
        }
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimMismatch(format!(
            "kernel arguments have dims {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Kernel value; in taylor2 mode this is `1 - t + t^2/2` with
/// `t = ||x - y||^2 / (2 sigma^2)`.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_dims(x, y)?;
    Ok(match spec.family {
        KernelFamily::Linear => dot(x, y),
        KernelFamily::Polynomial => (dot(x, y) + spec.c).powi(spec.degree as i32),
        KernelFamily::Gaussian => {
            let t = sq_dist(x, y) / (2.0 * spec.sigma * spec.sigma);
            match spec.mode {
                KernelMode::Exact => (-t).exp(),
                KernelMode::Taylor2 => 1.0 - t + t * t / 2.0,
            }
        }
    })
}

/// Analytic gradient of the kernel with respect to its first argument.
pub fn kernel_grad_x(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dims(x, y)?;
    Ok(match spec.family {
        KernelFamily::Linear => y.to_vec(),
        KernelFamily::Polynomial => {
            let s = (dot(x, y) + spec.c).powi(spec.degree as i32 - 1) * spec.degree as f64;
            y.iter().map(|v| s * v).collect()
        }
        KernelFamily::Gaussian => {
            let s2 = spec.sigma * spec.sigma;
            let t = sq_dist(x, y) / (2.0 * s2);
            let factor = match spec.mode {
                KernelMode::Exact => -(-t).exp() / s2,
                KernelMode::Taylor2 => (t - 1.0) / s2,
            };
            x.iter().zip(y).map(|(a, b)| factor * (a - b)).collect()
        }
    })
}

// ---------------------------------------------------------------------------
// Monomial layouts
// ---------------------------------------------------------------------------

/// Monomial blocks in canonical order. Degree blocks are ordered
/// lexicographically on index tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonomialBlock {
    /// The constant 1.
    Constant,
    /// Coordinates `v_k`.
    Degree1,
    /// Products `v_k * v_l` with `k <= l`.
    Degree2,
    /// Products `v_k * v_l * v_m` with `k <= l <= m`.
    Degree3,
    /// The scalar `||v||^2`.
    NormSq,
    /// The scalar `||v||^4`.
    NormFourth,
    /// Coordinates weighted by the squared norm, `v_k * ||v||^2`.
    CoordNormSq,
}

const BLOCK_ORDER: [MonomialBlock; 7] = [
    MonomialBlock::Constant,
    MonomialBlock::Degree1,
    MonomialBlock::Degree2,
    MonomialBlock::Degree3,
    MonomialBlock::NormSq,
    MonomialBlock::NormFourth,
    MonomialBlock::CoordNormSq,
];

/// Lexicographic rank of the pair `(k, l)`, `k <= l`, among all such pairs
/// over `dim` indices.
fn pair_rank(dim: usize, k: usize, l: usize) -> usize {
    k * (2 * dim - k + 1) / 2 + (l - k)
}

fn block_len(block: MonomialBlock, dim: usize) -> usize {
    match block {
        MonomialBlock::Constant | MonomialBlock::NormSq | MonomialBlock::NormFourth => 1,
        MonomialBlock::Degree1 | MonomialBlock::CoordNormSq => dim,
        MonomialBlock::Degree2 => dim * (dim + 1) / 2,
        MonomialBlock::Degree3 => dim * (dim + 1) * (dim + 2) / 6,
    }
}

/// Canonical ordering of the monomials both parties exchange for a given
/// `(spec, dim)`; identical on both sides by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialLayout {
    dim: usize,
    blocks: Vec<MonomialBlock>,
    offsets: Vec<usize>,
    len: usize,
}

impl MonomialLayout {
    fn from_blocks(dim: usize, wanted: &[MonomialBlock]) -> Self {
        let mut blocks = Vec::new();
        let mut offsets = Vec::new();
        let mut len = 0;
        for b in BLOCK_ORDER {
            if wanted.contains(&b) {
                blocks.push(b);
                offsets.push(len);
                len += block_len(b, dim);
            }
        }
        MonomialLayout { dim, blocks, offsets, len }
    }

    /// Blocks needed to reproduce the kernel value and the peer-side MMD
    /// gradient rows for `spec`.
    pub fn for_kernel(spec: &KernelSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        if !spec.is_secure_evaluable() {
            return Err(Error::InvalidSpec(format!(
                "{} has no secure decomposition",
                spec.label()
            )));
        }
        if dim == 0 {
            return Err(Error::DimMismatch("zero-dimensional layout".into()));
        }
        let blocks: &[MonomialBlock] = match spec.family {
            KernelFamily::Linear => &[MonomialBlock::Constant, MonomialBlock::Degree1],
            KernelFamily::Polynomial => match spec.degree {
                2 => &[MonomialBlock::Constant, MonomialBlock::Degree2],
                _ => &[MonomialBlock::Constant, MonomialBlock::Degree3],
            },
            KernelFamily::Gaussian => &[
                MonomialBlock::Constant,
                MonomialBlock::Degree1,
                MonomialBlock::Degree2,
                MonomialBlock::NormSq,
                MonomialBlock::NormFourth,
                MonomialBlock::CoordNormSq,
            ],
        };
        Ok(MonomialLayout::from_blocks(dim, blocks))
    }

    /// Kernel blocks plus the degree-1/degree-2 blocks the classification
    /// cross terms pair against (translator scores are linear, their squares
    /// quadratic, in the peer's hidden units).
    pub fn for_kernel_with_classification(spec: &KernelSpec, dim: usize) -> Result<Self> {
        let base = MonomialLayout::for_kernel(spec, dim)?;
        let mut wanted = base.blocks.clone();
        for b in [MonomialBlock::Degree1, MonomialBlock::Degree2] {
            if !wanted.contains(&b) {
                wanted.push(b);
            }
        }
        Ok(MonomialLayout::from_blocks(dim, &wanted))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[MonomialBlock] {
        &self.blocks
    }

    pub fn has_block(&self, block: MonomialBlock) -> bool {
        self.blocks.contains(&block)
    }

    fn offset(&self, block: MonomialBlock) -> Option<usize> {
        self.blocks.iter().position(|b| *b == block).map(|i| self.offsets[i])
    }

    fn offset_or_err(&self, block: MonomialBlock) -> Result<usize> {
        self.offset(block).ok_or_else(|| {
            Error::InvalidSpec(format!("layout {} lacks block {block:?}", self.describe()))
        })
    }

    pub fn idx_constant(&self) -> Result<usize> {
        self.offset_or_err(MonomialBlock::Constant)
    }

    pub fn idx_degree1(&self, k: usize) -> Result<usize> {
        Ok(self.offset_or_err(MonomialBlock::Degree1)? + k)
    }

    pub fn idx_degree2(&self, a: usize, b: usize) -> Result<usize> {
        let (k, l) = if a <= b { (a, b) } else { (b, a) };
        let base = self.offset_or_err(MonomialBlock::Degree2)?;
        Ok(base + pair_rank(self.dim, k, l))
    }

    pub fn idx_degree3(&self, a: usize, b: usize, c: usize) -> Result<usize> {
        let mut t = [a, b, c];
        t.sort_unstable();
        let [k, l, m] = t;
        let base = self.offset_or_err(MonomialBlock::Degree3)?;
        let mut rank = 0;
        for first in 0..k {
            let d = self.dim - first;
            rank += d * (d + 1) / 2;
        }
        rank += pair_rank(self.dim - k, l - k, m - k);
        Ok(base + rank)
    }

    pub fn idx_norm_sq(&self) -> Result<usize> {
        self.offset_or_err(MonomialBlock::NormSq)
    }

    pub fn idx_norm_fourth(&self) -> Result<usize> {
        self.offset_or_err(MonomialBlock::NormFourth)
    }

    pub fn idx_coord_norm_sq(&self, k: usize) -> Result<usize> {
        Ok(self.offset_or_err(MonomialBlock::CoordNormSq)? + k)
    }

    /// Raw monomial values of `v` in canonical order.
    pub fn monomials(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "vector has dim {}, layout expects {}",
                v.len(),
                self.dim
            )));
        }
        let mut out = vec![0.0; self.len];
        let norm_sq = dot(v, v);
        for (&block, &off) in self.blocks.iter().zip(&self.offsets) {
            match block {
                MonomialBlock::Constant => out[off] = 1.0,
                MonomialBlock::Degree1 => out[off..off + self.dim].copy_from_slice(v),
                MonomialBlock::Degree2 => {
                    let mut i = off;
                    for k in 0..self.dim {
                        for l in k..self.dim {
                            out[i] = v[k] * v[l];
                            i += 1;
                        }
                    }
                }
                MonomialBlock::Degree3 => {
                    let mut i = off;
                    for k in 0..self.dim {
                        for l in k..self.dim {
                            for m in l..self.dim {
                                out[i] = v[k] * v[l] * v[m];
                                i += 1;
                            }
                        }
                    }
                }
                MonomialBlock::NormSq => out[off] = norm_sq,
                MonomialBlock::NormFourth => out[off] = norm_sq * norm_sq,
                MonomialBlock::CoordNormSq => {
                    for k in 0..self.dim {
                        out[off + k] = v[k] * norm_sq;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Compact description used for cross-party layout validation.
    pub fn describe(&self) -> String {
        let tags: Vec<&str> = self
            .blocks
            .iter()
            .map(|b| match b {
                MonomialBlock::Constant => "c",
                MonomialBlock::Degree1 => "d1",
                MonomialBlock::Degree2 => "d2",
                MonomialBlock::Degree3 => "d3",
                MonomialBlock::NormSq => "n2",
                MonomialBlock::NormFourth => "n4",
                MonomialBlock::CoordNormSq => "wn2",
            })
            .collect();
        format!("{}@{}", tags.join("+"), self.dim)
    }
}

// ---------------------------------------------------------------------------
// Coefficient functions
// ---------------------------------------------------------------------------

/// Coefficients `a(x)` with `sum_t a_t(x) * monomial_t(y) = k(x, y)` over the
/// given layout (exact for linear/polynomial, Taylor order for gaussian).
pub fn value_coefficients(spec: &KernelSpec, layout: &MonomialLayout, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layout.dim() {
        return Err(Error::DimMismatch(format!(
            "x has dim {}, layout expects {}",
            x.len(),
            layout.dim()
        )));
    }
    let dim = layout.dim();
    let mut coef = vec![0.0; layout.len()];
    match spec.family {
        KernelFamily::Linear => {
            for k in 0..dim {
                coef[layout.idx_degree1(k)?] = x[k];
            }
        }
        KernelFamily::Polynomial if spec.degree == 2 => {
            for k in 0..dim {
                for l in k..dim {
                    let mult = if k == l { 1.0 } else { 2.0 };
                    coef[layout.idx_degree2(k, l)?] = mult * x[k] * x[l];
                }
            }
        }
        KernelFamily::Polynomial => {
            // degree 3: multinomial multiplicity 3!/prod(counts!)
            for k in 0..dim {
                for l in k..dim {
                    for m in l..dim {
                        let mult = if k == l && l == m {
                            1.0
                        } else if k == l || l == m {
                            3.0
                        } else {
                            6.0
                        };
                        coef[layout.idx_degree3(k, l, m)?] = mult * x[k] * x[l] * x[m];
                    }
                }
            }
        }
        KernelFamily::Gaussian => {
            let s2 = spec.sigma * spec.sigma;
            let s4 = s2 * s2;
            let a = dot(x, x);
            coef[layout.idx_constant()?] = 1.0 - a / (2.0 * s2) + a * a / (8.0 * s4);
            for k in 0..dim {
                coef[layout.idx_degree1(k)?] = x[k] * (1.0 / s2 - a / (2.0 * s4));
                coef[layout.idx_coord_norm_sq(k)?] = -x[k] / (2.0 * s4);
                for l in k..dim {
                    let mult = if k == l { 1.0 } else { 2.0 };
                    coef[layout.idx_degree2(k, l)?] = mult * x[k] * x[l] / (2.0 * s4);
                }
            }
            coef[layout.idx_norm_sq()?] = -1.0 / (2.0 * s2) + a / (4.0 * s4);
            coef[layout.idx_norm_fourth()?] = 1.0 / (8.0 * s4);
        }
    }
    Ok(coef)
}

/// Per-component coefficient rows `g(x)` with
/// `sum_t g_c,t(x) * monomial_t(y) = d k(x, y) / d x_c`, the peer-monomial
/// form of the kernel gradient used by the encrypted MMD cross terms.
pub fn grad_coefficients(
    spec: &KernelSpec,
    layout: &MonomialLayout,
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if x.len() != layout.dim() {
        return Err(Error::DimMismatch(format!(
            "x has dim {}, layout expects {}",
            x.len(),
            layout.dim()
        )));
    }
    let dim = layout.dim();
    let mut rows = vec![vec![0.0; layout.len()]; dim];
    match spec.family {
        KernelFamily::Linear => {
            for (c, row) in rows.iter_mut().enumerate() {
                row[layout.idx_degree1(c)?] = 1.0;
            }
        }
        KernelFamily::Polynomial if spec.degree == 2 => {
            // d(x.y)^2/dx_c = 2 sum_k x_k (y_k y_c)
            for (c, row) in rows.iter_mut().enumerate() {
                for k in 0..dim {
                    row[layout.idx_degree2(k, c)?] += 2.0 * x[k];
                }
            }
        }
        KernelFamily::Polynomial => {
            // d(x.y)^3/dx_c = 3 sum_{k,l} x_k x_l (y_k y_l y_c)
            for (c, row) in rows.iter_mut().enumerate() {
                for k in 0..dim {
                    for l in 0..dim {
                        row[layout.idx_degree3(k, l, c)?] += 3.0 * x[k] * x[l];
                    }
                }
            }
        }
        KernelFamily::Gaussian => {
            // d/dx_c [1 - t + t^2/2] = (t - 1)(x_c - y_c)/s^2 with
            // t = (||x||^2 - 2 x.y + ||y||^2) / (2 s^2)
            let s2 = spec.sigma * spec.sigma;
            let s4 = s2 * s2;
            let a = dot(x, x);
            for (c, row) in rows.iter_mut().enumerate() {
                row[layout.idx_constant()?] += x[c] * (a / (2.0 * s2) - 1.0) / s2;
                row[layout.idx_norm_sq()?] += x[c] / (2.0 * s4);
                row[layout.idx_coord_norm_sq(c)?] += -1.0 / (2.0 * s4);
                row[layout.idx_degree1(c)?] += (1.0 - a / (2.0 * s2)) / s2;
                for k in 0..dim {
                    row[layout.idx_degree1(k)?] += -x[c] * x[k] / s4;
                    row[layout.idx_degree2(k, c)?] += x[k] / s4;
                }
            }
        }
    }
    Ok(rows)
}

/// Fixed-point encoded monomials of `v` in canonical order, ready for
/// element-wise encryption. Entries carry one `2^f` factor (scale 1).
pub fn monomial_features(
    spec: &KernelSpec,
    v: &[f64],
    params: &FixedPointParams,
) -> Result<Vec<BigUint>> {
    let layout = MonomialLayout::for_kernel(spec, v.len())?;
    encode_monomials(&layout, v, params)
}

pub fn encode_monomials(
    layout: &MonomialLayout,
    v: &[f64],
    params: &FixedPointParams,
) -> Result<Vec<BigUint>> {
    layout.monomials(v)?.iter().map(|&m| params.encode(m)).collect()
}

/// Fixed-point encoded `a(x)` for the kernel-value pairing (scale 1).
pub fn kernel_coefficients(
    spec: &KernelSpec,
    x: &[f64],
    params: &FixedPointParams,
) -> Result<Vec<BigUint>> {
    let layout = MonomialLayout::for_kernel(spec, x.len())?;
    value_coefficients(spec, &layout, x)?.iter().map(|&a| params.encode(a)).collect()
}

/// Test oracle for the decomposition: evaluates the encoded pairing
/// `<a(x), monomials(y)>` in the ring (no encryption) and decodes it at
/// scale 2. Must match [`eval_kernel`] within `2^(4 - frac_bits)`.
pub fn bilinear_check(
    spec: &KernelSpec,
    x: &[f64],
    y: &[f64],
    params: &FixedPointParams,
) -> Result<f64> {
    check_dims(x, y)?;
    let coef = kernel_coefficients(spec, x, params)?;
    let mono = monomial_features(spec, y, params)?;
    let mut acc = BigUint::zero();
    for (a, m) in coef.iter().zip(&mono) {
        acc = params.ring_add(&acc, &params.ring_mul(a, m));
    }
    params.decode(&acc, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::keygen;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn fx() -> FixedPointParams {
        let kp = keygen(512, 99).unwrap();
        FixedPointParams::new(40, 128, kp.public.modulus()).unwrap()
    }

    #[test]
    fn pinned_kernel_values() {
        let lin = KernelSpec::linear();
        assert_eq!(eval_kernel(&lin, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);

        let g = KernelSpec::gaussian(1.0);
        assert_eq!(eval_kernel(&g, &[0.3, -0.7], &[0.3, -0.7]).unwrap(), 1.0);

        // taylor2 at t = 0.5: 1 - 0.5 + 0.125 = 0.625 vs exact exp(-0.5)
        let gt = KernelSpec::gaussian_taylor2(1.0);
        let x = [0.0];
        let y = [1.0];
        let taylor = eval_kernel(&gt, &x, &y).unwrap();
        assert_abs_diff_eq!(taylor, 0.625, epsilon = 1e-12);
        let exact = eval_kernel(&KernelSpec::gaussian(1.0), &x, &y).unwrap();
        assert_abs_diff_eq!(exact, 0.60653, epsilon = 1e-5);
        let t = 0.5f64;
        assert!((exact - taylor).abs() <= t.powi(3) / 6.0);
    }

    #[test]
    fn pinned_gradients() {
        let lin = KernelSpec::linear();
        assert_eq!(kernel_grad_x(&lin, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);

        let p2 = KernelSpec::polynomial(0.0, 2);
        assert_eq!(kernel_grad_x(&p2, &[1.0, 0.0], &[2.0, 0.0]).unwrap(), vec![8.0, 0.0]);

        let gt = KernelSpec::gaussian_taylor2(1.3);
        let g = kernel_grad_x(&gt, &[0.4, -0.2], &[0.4, -0.2]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    fn finite_diff_grad(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|c| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[c] += h;
                xm[c] -= h;
                (eval_kernel(spec, &xp, y).unwrap() - eval_kernel(spec, &xm, y).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let specs = [
            KernelSpec::linear(),
            KernelSpec::polynomial(0.0, 2),
            KernelSpec::polynomial(0.0, 3),
            KernelSpec::polynomial(0.5, 2),
            KernelSpec::gaussian(1.0),
            KernelSpec::gaussian(2.0),
            KernelSpec::gaussian_taylor2(1.0),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for spec in &specs {
            for _ in 0..20 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let analytic = kernel_grad_x(spec, &x, &y).unwrap();
                let numeric = finite_diff_grad(spec, &x, &y);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let scale = n.abs().max(1e-3);
                    assert!(
                        (a - n).abs() / scale < 1e-5,
                        "{}: analytic {a} vs numeric {n}",
                        spec.label()
                    );
                }
            }
        }
    }

    #[test]
    fn symmetry_holds_for_all_specs() {
        let specs = [
            KernelSpec::linear(),
            KernelSpec::polynomial(0.0, 2),
            KernelSpec::polynomial(1.0, 3),
            KernelSpec::gaussian(1.5),
            KernelSpec::gaussian_taylor2(0.8),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for spec in &specs {
            for _ in 0..50 {
                let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert_abs_diff_eq!(
                    eval_kernel(spec, &x, &y).unwrap(),
                    eval_kernel(spec, &y, &x).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn layout_indexing_is_consistent() {
        let spec = KernelSpec::gaussian_taylor2(1.0);
        let layout = MonomialLayout::for_kernel(&spec, 3).unwrap();
        // blocks: const(1) + d1(3) + d2(6) + n2(1) + n4(1) + wn2(3) = 15
        assert_eq!(layout.len(), 15);
        let v = [2.0, -1.0, 0.5];
        let m = layout.monomials(&v).unwrap();
        assert_eq!(m[layout.idx_constant().unwrap()], 1.0);
        assert_eq!(m[layout.idx_degree1(1).unwrap()], -1.0);
        assert_eq!(m[layout.idx_degree2(0, 2).unwrap()], 1.0);
        assert_eq!(m[layout.idx_degree2(2, 0).unwrap()], 1.0);
        let n2 = 4.0 + 1.0 + 0.25;
        assert_eq!(m[layout.idx_norm_sq().unwrap()], n2);
        assert_eq!(m[layout.idx_norm_fourth().unwrap()], n2 * n2);
        assert_eq!(m[layout.idx_coord_norm_sq(2).unwrap()], 0.5 * n2);
    }

    #[test]
    fn degree3_indexing_covers_all_triples() {
        let spec = KernelSpec::polynomial(0.0, 3);
        let layout = MonomialLayout::for_kernel(&spec, 4).unwrap();
        let mut seen = std::collections::HashSet::new();
        for k in 0..4 {
            for l in k..4 {
                for m in l..4 {
                    let idx = layout.idx_degree3(k, l, m).unwrap();
                    assert!(seen.insert(idx), "duplicate index {idx} for ({k},{l},{m})");
                }
            }
        }
        assert_eq!(seen.len(), 20);
        let lo = layout.idx_degree3(0, 0, 0).unwrap();
        let hi = layout.idx_degree3(3, 3, 3).unwrap();
        assert_eq!(hi - lo + 1, 20);
    }

    #[test]
    fn pinned_monomials_match_spec_examples() {
        // linear, v = (3, 4): degree-1 entries plus constant 1
        let lin = KernelSpec::linear();
        let layout = MonomialLayout::for_kernel(&lin, 2).unwrap();
        assert_eq!(layout.monomials(&[3.0, 4.0]).unwrap(), vec![1.0, 3.0, 4.0]);

        // poly d=2, v = (1, 2): (v1^2, v1 v2, v2^2) = (1, 2, 4)
        let p2 = KernelSpec::polynomial(0.0, 2);
        let layout = MonomialLayout::for_kernel(&p2, 2).unwrap();
        assert_eq!(layout.monomials(&[1.0, 2.0]).unwrap(), vec![1.0, 1.0, 2.0, 4.0]);

        // gaussian taylor2, v = 0: only the constant survives
        let gt = KernelSpec::gaussian_taylor2(1.0);
        let layout = MonomialLayout::for_kernel(&gt, 2).unwrap();
        let m = layout.monomials(&[0.0, 0.0]).unwrap();
        assert_eq!(m[0], 1.0);
        assert!(m[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bilinear_check_matches_eval_kernel_linear_wide_range() {
        let params = fx();
        let tol = 2f64.powi(4 - 40);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let spec = KernelSpec::linear();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let direct = eval_kernel(&spec, &x, &y).unwrap();
            let paired = bilinear_check(&spec, &x, &y, &params).unwrap();
            worst = worst.max((direct - paired).abs());
        }
        assert!(worst <= tol, "worst diff {worst:.3e} > {tol:.3e}");
    }

    #[test]
    fn bilinear_check_matches_eval_kernel_at_activation_scale() {
        // Higher-degree monomials amplify the per-encode quantization noise
        // by their operand magnitudes, so the 2^{-f+4} contract is asserted
        // on the operand range the protocol actually feeds this machinery
        // (hidden activations of O(1) size).
        let params = fx();
        let tol = 2f64.powi(4 - 40);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let specs = [
            (KernelSpec::polynomial(0.0, 2), 4),
            (KernelSpec::polynomial(0.0, 3), 3),
            (KernelSpec::gaussian_taylor2(1.0), 4),
            (KernelSpec::gaussian_taylor2(2.0), 4),
        ];
        for (spec, dim) in &specs {
            let mut worst: f64 = 0.0;
            for _ in 0..500 {
                let x: Vec<f64> = (0..*dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y: Vec<f64> = (0..*dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                let direct = eval_kernel(spec, &x, &y).unwrap();
                let paired = bilinear_check(spec, &x, &y, &params).unwrap();
                worst = worst.max((direct - paired).abs());
            }
            assert!(worst <= tol, "{}: worst diff {worst:.3e} > {tol:.3e}", spec.label());
        }
    }

    #[test]
    fn bilinear_check_pinned_cases() {
        let params = fx();
        // poly c=0 d=3, x = y = (1, 1): (x.y)^3 = 8
        let p3 = KernelSpec::polynomial(0.0, 3);
        let v = bilinear_check(&p3, &[1.0, 1.0], &[1.0, 1.0], &params).unwrap();
        assert_abs_diff_eq!(v, 8.0, epsilon = 2f64.powi(-36));

        // gaussian taylor2 at x = y: t = 0, both sides 1
        let gt = KernelSpec::gaussian_taylor2(1.0);
        let v = bilinear_check(&gt, &[0.5], &[0.5], &params).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 2f64.powi(-36));

        // x = 0 pairing reduces to 1 - ||y||^2/(2 s^2) + ||y||^4/(8 s^4)
        let y = [0.7, -0.3];
        let b = 0.49 + 0.09;
        let expect = 1.0 - b / 2.0 + b * b / 8.0;
        let v = bilinear_check(&gt, &[0.0, 0.0], &y, &params).unwrap();
        assert_abs_diff_eq!(v, expect, epsilon = 2f64.powi(-36));
    }

    #[test]
    fn grad_coefficients_reproduce_kernel_grad() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let specs = [
            KernelSpec::linear(),
            KernelSpec::polynomial(0.0, 2),
            KernelSpec::polynomial(0.0, 3),
            KernelSpec::gaussian_taylor2(1.0),
        ];
        for spec in &specs {
            let dim = 4;
            let layout = MonomialLayout::for_kernel(spec, dim).unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let rows = grad_coefficients(spec, &layout, &x).unwrap();
                let mono = layout.monomials(&y).unwrap();
                let direct = kernel_grad_x(spec, &x, &y).unwrap();
                for c in 0..dim {
                    let paired: f64 = rows[c].iter().zip(&mono).map(|(a, m)| a * m).sum();
                    assert_abs_diff_eq!(paired, direct[c], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn classification_layout_adds_low_degree_blocks() {
        let p3 = KernelSpec::polynomial(0.0, 3);
        let layout = MonomialLayout::for_kernel_with_classification(&p3, 3).unwrap();
        assert!(layout.has_block(MonomialBlock::Degree1));
        assert!(layout.has_block(MonomialBlock::Degree2));
        assert!(layout.has_block(MonomialBlock::Degree3));
        // canonical block order is preserved regardless of insertion order
        assert_eq!(layout.describe(), "c+d1+d2+d3@3");

        let gt = KernelSpec::gaussian_taylor2(1.0);
        let a = MonomialLayout::for_kernel(&gt, 3).unwrap();
        let b = MonomialLayout::for_kernel_with_classification(&gt, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut bad = KernelSpec::gaussian(0.0);
        assert!(bad.validate().is_err());
        bad = KernelSpec::polynomial(0.0, 4);
        assert!(bad.validate().is_err());
        bad = KernelSpec::linear();
        bad.mode = KernelMode::Taylor2;
        assert!(bad.validate().is_err());

        let exact_gauss = KernelSpec::gaussian(1.0);
        assert!(!exact_gauss.is_secure_evaluable());
        assert!(MonomialLayout::for_kernel(&exact_gauss, 3).is_err());
        let poly_offset = KernelSpec::polynomial(1.0, 2);
        assert!(!poly_offset.is_secure_evaluable());

        assert!(eval_kernel(&KernelSpec::linear(), &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn taylor_error_bound_holds_on_unit_interval() {
        let sigma = 1.3f64;
        let exact = KernelSpec::gaussian(sigma);
        let taylor = KernelSpec::gaussian_taylor2(sigma);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..500 {
            let t: f64 = rng.random_range(0.0..=1.0);
            // construct a pair at squared distance 2 sigma^2 t
            let d = (2.0 * sigma * sigma * t).sqrt();
            let x = [0.0, 0.0];
            let y = [d, 0.0];
            let ke = eval_kernel(&exact, &x, &y).unwrap();
            let kt = eval_kernel(&taylor, &x, &y).unwrap();
            assert!(
                (ke - kt).abs() <= t.powi(3) / 6.0 + 1e-15,
                "t={t}: gap {} > bound {}",
                (ke - kt).abs(),
                t.powi(3) / 6.0
            );
        }
    }

    #[test]
    fn gram_matrices_are_psd_for_exact_kernels() {
        // Jacobi eigenvalue sweep, test-only oracle for small symmetric matrices.
        fn min_eigenvalue(a: &mut Vec<Vec<f64>>) -> f64 {
            let n = a.len();
            for _ in 0..100 {
                let (mut p, mut q, mut off) = (0, 1, 0.0f64);
                for i in 0..n {
                    for j in i + 1..n {
                        if a[i][j].abs() > off {
                            off = a[i][j].abs();
                            p = i;
                            q = j;
                        }
                    }
                }
                if off < 1e-14 {
                    break;
                }
                let theta = 0.5 * (2.0 * a[p][q]).atan2(a[p][p] - a[q][q]);
                let (c, s) = (theta.cos(), theta.sin());
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp + s * akq;
                    a[k][q] = -s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk + s * aqk;
                    a[q][k] = -s * apk + c * aqk;
                }
            }
            (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
        }

        let specs = [
            KernelSpec::linear(),
            KernelSpec::polynomial(0.0, 2),
            KernelSpec::gaussian(1.0),
        ];
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for spec in &specs {
            let pts: Vec<Vec<f64>> =
                (0..8).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let mut gram = vec![vec![0.0; 8]; 8];
            for i in 0..8 {
                for j in 0..8 {
                    gram[i][j] = eval_kernel(spec, &pts[i], &pts[j]).unwrap();
                }
            }
            let min = min_eigenvalue(&mut gram);
            assert!(min >= -1e-9, "{}: min eigenvalue {min}", spec.label());
        }
    }
}
