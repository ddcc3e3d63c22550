//! Seed derivation, stable numeric helpers, and little-endian blob I/O.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// SplitMix64 step, used to derive independent sub-seeds from a root seed
/// plus arbitrary tags. Identical inputs always give identical outputs.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

/// log(sum(exp(x))) with max subtraction.
pub fn log_sum_exp(x: ArrayView1<f64>) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = x.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// log-softmax of a logit vector.
pub fn log_softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(x);
    x.mapv(|v| v - lse)
}

pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    log_softmax(x).mapv(f64::exp)
}

/// Draw an index from unnormalized non-negative weights via inverse CDF.
/// Panics if all weights are zero or any is negative.
pub fn sample_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0 && total.is_finite(), "invalid weight vector");
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        debug_assert!(w >= 0.0);
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Floating-point slack: fall back to the last nonzero weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("invalid weight vector")
}

pub fn write_f32_blob(path: &Path, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_f32_blob(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected_len * 4 {
        return Err(crate::error::Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "expected {} f32 values ({} bytes), found {} bytes",
                expected_len,
                expected_len * 4,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_u32_blob(path: &Path, data: &[u32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_u32_blob(path: &Path, expected_len: usize) -> Result<Vec<u32>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected_len * 4 {
        return Err(crate::error::Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!(
                "expected {} u32 values ({} bytes), found {} bytes",
                expected_len,
                expected_len * 4,
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
