//! Relation similarity from fact distributions: directed KL divergences
//! (Monte-Carlo and exact enumeration), S(r1,r2) = exp(-max of both
//! directions), full matrices, and embedding-based baseline similarities.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factdist::{sample_pairs, FactDistParams, LogProbCache};
use crate::kb::RelationId;
use crate::util::{self, mix_seed};

pub const SIM_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MC_SAMPLES: usize = 1024;
pub const DEFAULT_EXACT_CAP: usize = 500;

/// Monte-Carlo KL(r1 || r2): mean log-ratio over pairs sampled from r1's
/// distribution. May be negative for small n; never NaN. Exactly zero when
/// r1 == r2.
pub fn kl_mc(
    params: &FactDistParams,
    r1: RelationId,
    r2: RelationId,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("kl_mc requires n >= 1".into()));
    }
    if r1 == r2 {
        // every sample's log-ratio is identically zero
        return Ok(0.0);
    }
    let samples = sample_pairs(params, r1, n, seed)?;
    let mut cache = LogProbCache::new(params);
    let mut total = 0.0;
    for (h, t) in samples {
        let lp1 = cache.log_prob(h, t, r1)?;
        let lp2 = cache.log_prob(h, t, r2)?;
        total += lp1 - lp2;
    }
    Ok(total / n as f64)
}

/// Exact KL by enumeration over all |E|^2 pairs. Intended as a test oracle;
/// refuses vocabularies above `cap`.
pub fn kl_exact(
    params: &FactDistParams,
    r1: RelationId,
    r2: RelationId,
    cap: usize,
) -> Result<f64> {
    let ne = params.num_entities();
    if ne > cap {
        return Err(Error::Config(format!(
            "kl_exact refused: |E| = {ne} exceeds cap {cap}"
        )));
    }
    let mut cache = LogProbCache::new(params);
    let mut kl = 0.0;
    for h in 0..ne as u32 {
        for t in 0..ne as u32 {
            let lp1 = cache.log_prob(h, t, r1)?;
            let lp2 = cache.log_prob(h, t, r2)?;
            kl += lp1.exp() * (lp1 - lp2);
        }
    }
    Ok(kl)
}

/// S(r1, r2) = exp(-max(KL(r1||r2), KL(r2||r1))) with both directions
/// Monte-Carlo estimated. Negative estimates are clamped to zero so S stays
/// in (0, 1]. The sample seed for each direction is derived from
/// (seed, source, target), and the pair is canonicalized first, so
/// similarity(r1, r2) == similarity(r2, r1) bitwise.
pub fn similarity(
    params: &FactDistParams,
    r1: RelationId,
    r2: RelationId,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let (a, b) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if a == b {
        return Ok(1.0);
    }
    let kl_ab = kl_mc(params, a, b, n, mix_seed(&[seed, a as u64, b as u64]))?.max(0.0);
    let kl_ba = kl_mc(params, b, a, n, mix_seed(&[seed, b as u64, a as u64]))?.max(0.0);
    // keep the score strictly positive even when exp underflows
    Ok((-kl_ab.max(kl_ba)).exp().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub relation_names: Vec<String>,
    pub sample_count: usize,
    pub seed: u64,
    /// Identifier of the checkpoint (or baseline) the matrix came from.
    pub source: String,
}

impl SimilarityMatrix {
    pub fn num_relations(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, r1: RelationId, r2: RelationId) -> f64 {
        self.values[[r1 as usize, r2 as usize]]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_names.iter().position(|n| n == name).map(|i| i as RelationId)
    }

    /// Build from a symmetric unit-diagonal matrix in (0,1], validating the
    /// invariants.
    pub fn from_values(
        values: Array2<f64>,
        relation_names: Vec<String>,
        sample_count: usize,
        seed: u64,
        source: String,
    ) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || relation_names.len() != n {
            return Err(Error::Contract("similarity matrix must be square over the vocabulary".into()));
        }
        for i in 0..n {
            if values[[i, i]] != 1.0 {
                return Err(Error::Contract(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Contract(format!("entry ({i},{j}) = {v} outside (0,1]")));
                }
                if values[[i, j]] != values[[j, i]] {
                    return Err(Error::Contract(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { values, relation_names, sample_count, seed, source })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = SimManifest {
            format_version: SIM_FORMAT_VERSION,
            num_relations: self.num_relations(),
            relation_names: self.relation_names.clone(),
            sample_count: self.sample_count,
            seed: self.seed,
            source: self.source.clone(),
        };
        serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
        util::write_f32_blob(&dir.join("values.bin"), self.values.as_slice().unwrap())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SimManifest =
            serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
        if manifest.format_version != SIM_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: manifest.format_version,
                expected: SIM_FORMAT_VERSION,
            });
        }
        let n = manifest.num_relations;
        let data = util::read_f32_blob(&dir.join("values.bin"), n * n)?;
        Ok(Self {
            values: Array2::from_shape_vec((n, n), data).unwrap(),
            relation_names: manifest.relation_names,
            sample_count: manifest.sample_count,
            seed: manifest.seed,
            source: manifest.source,
        })
    }

    /// CSV rows `r1_name,r2_name,score` over the upper triangle including the
    /// diagonal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r1_name,r2_name,score\n");
        for i in 0..self.num_relations() {
            for j in i..self.num_relations() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    self.relation_names[i],
                    self.relation_names[j],
                    self.values[[i, j]]
                ));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct SimManifest {
    format_version: u32,
    num_relations: usize,
    relation_names: Vec<String>,
    sample_count: usize,
    seed: u64,
    source: String,
}

/// Fill the full |R| x |R| matrix; each unordered pair is computed once with
/// a per-pair seed, the diagonal is exactly 1.
pub fn similarity_matrix(
    params: &FactDistParams,
    relation_names: &[String],
    n: usize,
    seed: u64,
    source: &str,
) -> Result<SimilarityMatrix> {
    let nr = params.num_relations();
    if relation_names.len() != nr {
        return Err(Error::Contract("relation name list does not match parameter table".into()));
    }
    let mut values = Array2::ones((nr, nr));
    for a in 0..nr as u32 {
        for b in (a + 1)..nr as u32 {
            let s = similarity(params, a, b, n, seed)?;
            values[[a as usize, b as usize]] = s;
            values[[b as usize, a as usize]] = s;
        }
    }
    SimilarityMatrix::from_values(values, relation_names.to_vec(), n, seed, source.to_string())
}

/// Per-relation payloads for the embedding-model baseline similarities.
#[derive(Debug, Clone)]
pub enum BaselineEmbeddings {
    /// relation vectors, one row each
    TransE(Array2<f64>),
    DistMult(Array2<f64>),
    /// one square matrix per relation
    Rescal(Vec<Array2<f64>>),
    /// phase vectors in [0, 2*pi)
    Rotate(Array2<f64>),
}

impl BaselineEmbeddings {
    pub fn num_relations(&self) -> usize {
        match self {
            BaselineEmbeddings::TransE(m) | BaselineEmbeddings::DistMult(m) => m.nrows(),
            BaselineEmbeddings::Rescal(ms) => ms.len(),
            BaselineEmbeddings::Rotate(m) => m.nrows(),
        }
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> Result<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm vector in cosine similarity".into()));
    }
    Ok(a.dot(&b) / (na * nb))
}

/// Baseline similarity per representation kind: exp(cosine) for vectors,
/// exp(-Frobenius distance) for matrices, exp(-wrapped L1 phase distance)
/// for angles.
pub fn baseline_similarity(
    emb: &BaselineEmbeddings,
    r1: RelationId,
    r2: RelationId,
) -> Result<f64> {
    let nr = emb.num_relations();
    if r1 as usize >= nr || r2 as usize >= nr {
        return Err(Error::Index(format!("relation id out of range (|R| = {nr})")));
    }
    match emb {
        BaselineEmbeddings::TransE(m) | BaselineEmbeddings::DistMult(m) => {
            Ok(cosine(m.row(r1 as usize), m.row(r2 as usize))?.exp())
        }
        BaselineEmbeddings::Rescal(ms) => {
            let diff = &ms[r1 as usize] - &ms[r2 as usize];
            let frob = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((-frob).exp())
        }
        BaselineEmbeddings::Rotate(m) => {
            let two_pi = std::f64::consts::TAU;
            let dist: f64 = m
                .row(r1 as usize)
                .iter()
                .zip(m.row(r2 as usize).iter())
                .map(|(&a, &b)| {
                    let d = (a - b).abs();
                    d.min(two_pi - d)
                })
                .sum();
            Ok((-dist).exp())
        }
    }
}

/// Symmetric unit-diagonal-free matrix of baseline similarities, rescaled to
/// (0,1] by dividing by the maximal attainable value so it can be used where
/// a [`SimilarityMatrix`] is expected. The rescale is monotone, so threshold
/// sweeps are unaffected.
pub fn baseline_similarity_matrix(
    emb: &BaselineEmbeddings,
    relation_names: &[String],
    source: &str,
) -> Result<SimilarityMatrix> {
    let nr = emb.num_relations();
    if relation_names.len() != nr {
        return Err(Error::Contract("relation name list does not match embedding table".into()));
    }
    let scale = match emb {
        // exp(cos) peaks at e
        BaselineEmbeddings::TransE(_) | BaselineEmbeddings::DistMult(_) => std::f64::consts::E,
        // exp(-dist) peaks at 1
        BaselineEmbeddings::Rescal(_) | BaselineEmbeddings::Rotate(_) => 1.0,
    };
    let mut values = Array2::ones((nr, nr));
    for a in 0..nr as u32 {
        for b in (a + 1)..nr as u32 {
            let s = (baseline_similarity(emb, a, b)? / scale).clamp(f64::MIN_POSITIVE, 1.0);
            values[[a as usize, b as usize]] = s;
            values[[b as usize, a as usize]] = s;
        }
    }
    SimilarityMatrix::from_values(values, relation_names.to_vec(), 0, 0, source.to_string())
}

/// The similarity combiner g(x, y) = exp(-max(x, y)).
pub fn g_exp_max(x: f64, y: f64) -> f64 {
    (-x.max(y)).exp()
}
