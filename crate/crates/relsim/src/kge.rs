//! Baseline knowledge-graph embedding models (TransE, DistMult) with
//! margin-based training, pluggable negative samplers (uniform, similarity
//! curriculum, typed constraints), and filtered relation-prediction ranking.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, RelationId, Triple, TripleStore};
use crate::similarity::SimilarityMatrix;
use crate::util::{self, rng_from, sample_weighted};

pub const KGE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeKind {
    TransE,
    DistMult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    Uniform,
    Similarity,
    TypedMixture,
    TypedWeight,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub kind: KgeKind,
    pub dim: usize,
    /// Hinge margin gamma.
    pub margin: f64,
    pub distance: Distance,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub negative_mode: NegativeMode,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self {
            kind: KgeKind::TransE,
            dim: 50,
            margin: 1.0,
            distance: Distance::L1,
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 256,
            seed: 0,
            negative_mode: NegativeMode::Uniform,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("dim and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct KgeModel {
    pub kind: KgeKind,
    pub entity_emb: Array2<f64>,
    pub relation_emb: Array2<f64>,
    pub config: KgeConfig,
}

impl KgeModel {
    pub fn num_entities(&self) -> usize {
        self.entity_emb.nrows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_emb.nrows()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = KgeManifest {
            format_version: KGE_FORMAT_VERSION,
            num_entities: self.num_entities(),
            num_relations: self.num_relations(),
            embedding_dim: self.config.dim,
            config: self.config.clone(),
        };
        serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
        util::write_f32_blob(&dir.join("entity_emb.bin"), self.entity_emb.as_slice().unwrap())?;
        util::write_f32_blob(&dir.join("relation_emb.bin"), self.relation_emb.as_slice().unwrap())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: KgeManifest =
            serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
        if manifest.format_version != KGE_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: manifest.format_version,
                expected: KGE_FORMAT_VERSION,
            });
        }
        let ent = util::read_f32_blob(
            &dir.join("entity_emb.bin"),
            manifest.num_entities * manifest.embedding_dim,
        )?;
        let rel = util::read_f32_blob(
            &dir.join("relation_emb.bin"),
            manifest.num_relations * manifest.embedding_dim,
        )?;
        Ok(Self {
            kind: manifest.config.kind,
            entity_emb: Array2::from_shape_vec((manifest.num_entities, manifest.embedding_dim), ent)
                .unwrap(),
            relation_emb: Array2::from_shape_vec(
                (manifest.num_relations, manifest.embedding_dim),
                rel,
            )
            .unwrap(),
            config: manifest.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct KgeManifest {
    format_version: u32,
    num_entities: usize,
    num_relations: usize,
    embedding_dim: usize,
    config: KgeConfig,
}

/// Plausibility score: higher is better. TransE scores -d(h + r, t); DistMult
/// scores the trilinear product.
pub fn kge_score(model: &KgeModel, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    if h as usize >= model.num_entities()
        || t as usize >= model.num_entities()
        || r as usize >= model.num_relations()
    {
        return Err(Error::Index(format!("id out of range in ({h}, {r}, {t})")));
    }
    Ok(score_unchecked(model, h, r, t))
}

fn score_unchecked(model: &KgeModel, h: EntityId, r: RelationId, t: EntityId) -> f64 {
    let hv = model.entity_emb.row(h as usize);
    let rv = model.relation_emb.row(r as usize);
    let tv = model.entity_emb.row(t as usize);
    match model.kind {
        KgeKind::TransE => {
            let d: f64 = match model.config.distance {
                Distance::L1 => hv
                    .iter()
                    .zip(rv.iter())
                    .zip(tv.iter())
                    .map(|((&a, &b), &c)| (a + b - c).abs())
                    .sum(),
                Distance::L2 => hv
                    .iter()
                    .zip(rv.iter())
                    .zip(tv.iter())
                    .map(|((&a, &b), &c)| (a + b - c).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            };
            -d
        }
        KgeKind::DistMult => hv
            .iter()
            .zip(rv.iter())
            .zip(tv.iter())
            .map(|((&a, &b), &c)| a * b * c)
            .sum(),
    }
}

// ---------------------------------------------------------------------------
// Negative samplers
// ---------------------------------------------------------------------------

/// Corrupt exactly one of {head, relation, tail}, position chosen uniformly,
/// replacement uniform over the vocabulary excluding the original value.
/// Degenerate positions (vocabulary of one) are redrawn.
pub fn uniform_negative<R: Rng>(triple: &Triple, store: &TripleStore, rng: &mut R) -> Triple {
    let ne = store.num_entities() as u32;
    let nr = store.num_relations() as u32;
    assert!(ne >= 2 || nr >= 2, "store too degenerate to corrupt");
    loop {
        let pos = rng.random_range(0..3u8);
        match pos {
            0 if ne >= 2 => {
                let h = resample_excluding(ne, triple.head, rng);
                return Triple::new(h, triple.relation, triple.tail);
            }
            1 if nr >= 2 => {
                let r = resample_excluding(nr, triple.relation, rng);
                return Triple::new(triple.head, r, triple.tail);
            }
            2 if ne >= 2 => {
                let t = resample_excluding(ne, triple.tail, rng);
                return Triple::new(triple.head, triple.relation, t);
            }
            _ => continue,
        }
    }
}

fn resample_excluding<R: Rng>(n: u32, exclude: u32, rng: &mut R) -> u32 {
    let v = rng.random_range(0..n - 1);
    if v >= exclude {
        v + 1
    } else {
        v
    }
}

/// Probability over replacement relations r' != r, proportional to
/// S(r, r')^(1/temperature). Falls back to uniform if all weights vanish.
pub fn similarity_negative_distribution(
    r: RelationId,
    sim: &SimilarityMatrix,
    temperature: f64,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let nr = sim.num_relations();
    if r as usize >= nr {
        return Err(Error::Index(format!("relation {r} out of range (|R| = {nr})")));
    }
    let inv_t = 1.0 / temperature;
    let mut weights: Vec<f64> = (0..nr)
        .map(|o| {
            if o as u32 == r {
                0.0
            } else {
                sim.values[[r as usize, o]].powf(inv_t)
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // cannot happen for S in (0,1], but guard anyway
        let u = 1.0 / (nr - 1) as f64;
        for (o, w) in weights.iter_mut().enumerate() {
            *w = if o as u32 == r { 0.0 } else { u };
        }
    } else {
        for w in &mut weights {
            *w /= total;
        }
    }
    Ok(weights)
}

/// Replace the relation with r' drawn from the similarity-temperature
/// distribution.
pub fn similarity_negative<R: Rng>(
    triple: &Triple,
    sim: &SimilarityMatrix,
    temperature: f64,
    rng: &mut R,
) -> Result<Triple> {
    let weights = similarity_negative_distribution(triple.relation, sim, temperature)?;
    let r = sample_weighted(&weights, rng) as RelationId;
    Ok(Triple::new(triple.head, r, triple.tail))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NegSamplerConfig {
    pub temperature_init: f64,
    /// Epoch interval between halvings.
    pub halve_every: usize,
    pub temperature_floor: f64,
}

impl Default for NegSamplerConfig {
    fn default() -> Self {
        Self { temperature_init: 8192.0, halve_every: 200, temperature_floor: 16.0 }
    }
}

impl NegSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_init > 0.0) || !(self.temperature_floor > 0.0) {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        if self.temperature_floor > self.temperature_init {
            return Err(Error::Config("temperature_floor must not exceed temperature_init".into()));
        }
        if self.halve_every == 0 {
            return Err(Error::Config("halve_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// max(floor, init * 0.5^(epoch / halve_every)), non-increasing in epoch.
pub fn temperature_schedule(epoch: usize, cfg: &NegSamplerConfig) -> f64 {
    let halvings = (epoch / cfg.halve_every) as i32;
    (cfg.temperature_init * 0.5f64.powi(halvings)).max(cfg.temperature_floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypedVariant {
    Mixture,
    Weight,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypedSamplerConfig {
    /// relation id -> type id, total over the vocabulary
    pub type_of: Vec<u32>,
    /// mixture variant: initial blend toward the all-relations uniform
    pub mix_alpha_init: f64,
    /// multiplicative decay applied every `every_k_epochs`
    pub mix_alpha_decay: f64,
    /// weight variant: initial same-type up-weight epsilon
    pub weight_eps_init: f64,
    /// additive increment applied every `every_k_epochs`
    pub weight_eps_increment: f64,
    pub every_k_epochs: usize,
}

impl TypedSamplerConfig {
    pub fn new(type_of: Vec<u32>) -> Self {
        Self {
            type_of,
            mix_alpha_init: 1.0,
            mix_alpha_decay: 0.95,
            weight_eps_init: 0.0,
            weight_eps_increment: 0.5,
            every_k_epochs: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.every_k_epochs == 0 {
            return Err(Error::Config("every_k_epochs must be >= 1".into()));
        }
        if !(self.mix_alpha_decay > 0.0) || self.weight_eps_increment < 0.0 {
            return Err(Error::Config("typed sampler schedule values must be positive".into()));
        }
        Ok(())
    }

    pub fn mix_alpha(&self, epoch: usize) -> f64 {
        self.mix_alpha_init * self.mix_alpha_decay.powi((epoch / self.every_k_epochs) as i32)
    }

    pub fn weight_eps(&self, epoch: usize) -> f64 {
        self.weight_eps_init + self.weight_eps_increment * (epoch / self.every_k_epochs) as f64
    }
}

/// Derive relation types from the first '/'-delimited component of
/// Freebase-style names ("/film/actor/..." -> "film"). Names without a
/// slash become their own type.
pub fn types_from_relation_names(names: &[String]) -> Vec<u32> {
    let mut ids: HashMap<String, u32> = HashMap::new();
    names
        .iter()
        .map(|n| {
            let key = n.trim_start_matches('/').split('/').next().unwrap_or(n).to_string();
            let next = ids.len() as u32;
            *ids.entry(key).or_insert(next)
        })
        .collect()
}

/// Replacement-relation distribution for the typed samplers. The support
/// excludes r itself and any relation already co-occurring with (h, t) in
/// the store.
pub fn typed_negative_distribution(
    triple: &Triple,
    store: &TripleStore,
    cfg: &TypedSamplerConfig,
    variant: TypedVariant,
    epoch: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let nr = store.num_relations();
    if cfg.type_of.len() != nr {
        return Err(Error::Config("type mapping does not cover the relation vocabulary".into()));
    }
    let known = store.relations_of_pair(triple.head, triple.tail);
    let allowed: Vec<usize> = (0..nr)
        .filter(|&o| {
            o as u32 != triple.relation
                && !known.is_some_and(|rels| rels.contains(&(o as u32)))
        })
        .collect();
    if allowed.is_empty() {
        return Err(Error::Degenerate(
            "no replacement relation available after co-occurrence filtering".into(),
        ));
    }
    let my_type = cfg.type_of[triple.relation as usize];
    let same_type: Vec<usize> = allowed
        .iter()
        .copied()
        .filter(|&o| cfg.type_of[o] == my_type)
        .collect();

    let mut probs = vec![0.0; nr];
    match variant {
        TypedVariant::Mixture => {
            let alpha = cfg.mix_alpha(epoch).clamp(0.0, 1.0);
            let u_all = 1.0 / allowed.len() as f64;
            for &o in &allowed {
                probs[o] += alpha * u_all;
            }
            if same_type.is_empty() {
                // fall back to the all-relations uniform for the typed part
                for &o in &allowed {
                    probs[o] += (1.0 - alpha) * u_all;
                }
            } else {
                let u_type = 1.0 / same_type.len() as f64;
                for &o in &same_type {
                    probs[o] += (1.0 - alpha) * u_type;
                }
            }
        }
        TypedVariant::Weight => {
            let eps = cfg.weight_eps(epoch);
            let mut total = 0.0;
            for &o in &allowed {
                let w = if cfg.type_of[o] == my_type { 1.0 + eps } else { 1.0 };
                probs[o] = w;
                total += w;
            }
            for p in &mut probs {
                *p /= total;
            }
        }
    }
    Ok(probs)
}

pub fn typed_negative<R: Rng>(
    triple: &Triple,
    store: &TripleStore,
    cfg: &TypedSamplerConfig,
    variant: TypedVariant,
    epoch: usize,
    rng: &mut R,
) -> Result<Triple> {
    let probs = typed_negative_distribution(triple, store, cfg, variant, epoch)?;
    let r = sample_weighted(&probs, rng) as RelationId;
    Ok(Triple::new(triple.head, r, triple.tail))
}

/// Sampler handle passed to training.
pub enum NegSampler<'a> {
    Uniform,
    /// Uniform position choice, but relation replacements follow the
    /// temperature-annealed similarity distribution.
    Similarity { sim: &'a SimilarityMatrix, cfg: NegSamplerConfig },
    Typed { cfg: TypedSamplerConfig, variant: TypedVariant },
}

impl NegSampler<'_> {
    fn draw<R: Rng>(
        &self,
        triple: &Triple,
        store: &TripleStore,
        epoch: usize,
        rng: &mut R,
    ) -> Result<Triple> {
        match self {
            NegSampler::Uniform => Ok(uniform_negative(triple, store, rng)),
            NegSampler::Similarity { sim, cfg } => {
                let pos = rng.random_range(0..3u8);
                if pos == 1 && store.num_relations() >= 2 {
                    let temp = temperature_schedule(epoch, cfg);
                    similarity_negative(triple, sim, temp, rng)
                } else {
                    let ne = store.num_entities() as u32;
                    if ne < 2 {
                        let temp = temperature_schedule(epoch, cfg);
                        return similarity_negative(triple, sim, temp, rng);
                    }
                    if pos == 0 || pos == 1 {
                        let h = resample_excluding(ne, triple.head, rng);
                        Ok(Triple::new(h, triple.relation, triple.tail))
                    } else {
                        let t = resample_excluding(ne, triple.tail, rng);
                        Ok(Triple::new(triple.head, triple.relation, t))
                    }
                }
            }
            NegSampler::Typed { cfg, variant } => typed_negative(triple, store, cfg, *variant, epoch, rng),
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Margin-based training: minimize [gamma - score(pos) + score(neg)]+ by SGD
/// with negatives from the given sampler. Relation corruption is enabled
/// (relation-prediction protocol). TransE entity rows are renormalized to
/// unit L2 after every epoch.
pub fn train_kge(
    store: &TripleStore,
    config: &KgeConfig,
    neg: &NegSampler,
) -> Result<KgeModel> {
    config.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot train on an empty store".into()));
    }
    let (ne, nr, d) = (store.num_entities(), store.num_relations(), config.dim);
    let mut rng_init = rng_from(&[config.seed, 0x4e6e]);
    let bound = 6.0 / (d as f64).sqrt();
    let mut entity_emb = Array2::zeros((ne, d));
    let mut relation_emb = Array2::zeros((nr, d));
    for v in entity_emb.iter_mut() {
        *v = rng_init.random_range(-bound..bound);
    }
    for v in relation_emb.iter_mut() {
        *v = rng_init.random_range(-bound..bound);
    }
    let mut model = KgeModel {
        kind: config.kind,
        entity_emb,
        relation_emb,
        config: config.clone(),
    };
    if config.kind == KgeKind::TransE {
        normalize_entity_rows(&mut model.entity_emb);
    }

    let mut order: Vec<usize> = (0..store.len()).collect();
    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        let mut rng = rng_from(&[config.seed, 0x3b47, epoch as u64]);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let pos = store.triples()[i];
            let negt = neg.draw(&pos, store, epoch, &mut rng)?;
            epoch_loss += sgd_pair_update(&mut model, &pos, &negt, config);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Training { epoch, msg: format!("non-finite loss {epoch_loss}") });
        }
        if config.kind == KgeKind::TransE {
            normalize_entity_rows(&mut model.entity_emb);
        }
    }
    Ok(model)
}

fn normalize_entity_rows(emb: &mut Array2<f64>) {
    for mut row in emb.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
}

/// One hinge update on a positive/negative pair. Returns the pair loss.
fn sgd_pair_update(model: &mut KgeModel, pos: &Triple, neg: &Triple, config: &KgeConfig) -> f64 {
    let s_pos = score_unchecked(model, pos.head, pos.relation, pos.tail);
    let s_neg = score_unchecked(model, neg.head, neg.relation, neg.tail);
    let loss = config.margin - s_pos + s_neg;
    if loss <= 0.0 {
        return 0.0;
    }
    let lr = config.learning_rate;
    // d(loss)/d(params) = -d(s_pos) + d(s_neg)
    accumulate_score_grad(model, pos, -lr * -1.0);
    accumulate_score_grad(model, neg, -lr * 1.0);
    loss
}

/// Adds `scale * d(score)/d(params)` into the embeddings.
fn accumulate_score_grad(model: &mut KgeModel, t: &Triple, scale: f64) {
    let d = model.config.dim;
    let (hi, ri, ti) = (t.head as usize, t.relation as usize, t.tail as usize);
    match model.kind {
        KgeKind::TransE => {
            // score = -||h + r - t||
            let mut diff = Array1::zeros(d);
            for k in 0..d {
                diff[k] = model.entity_emb[[hi, k]] + model.relation_emb[[ri, k]]
                    - model.entity_emb[[ti, k]];
            }
            let grad: Array1<f64> = match model.config.distance {
                Distance::L1 => diff.mapv(|v| -v.signum()),
                Distance::L2 => {
                    let norm = diff.dot(&diff).sqrt().max(1e-12);
                    diff.mapv(|v| -v / norm)
                }
            };
            for k in 0..d {
                model.entity_emb[[hi, k]] += scale * grad[k];
                model.relation_emb[[ri, k]] += scale * grad[k];
                model.entity_emb[[ti, k]] -= scale * grad[k];
            }
        }
        KgeKind::DistMult => {
            for k in 0..d {
                let (h, r, tt) = (
                    model.entity_emb[[hi, k]],
                    model.relation_emb[[ri, k]],
                    model.entity_emb[[ti, k]],
                );
                model.entity_emb[[hi, k]] += scale * r * tt;
                model.relation_emb[[ri, k]] += scale * h * tt;
                model.entity_emb[[ti, k]] += scale * h * r;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Filtered relation-prediction ranking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingReport {
    pub test_triples: Vec<Triple>,
    /// Pessimistic gold rank per test triple, 1-based.
    pub ranks: Vec<u32>,
    /// Surviving relations scored strictly above gold, best first.
    pub distracting: Vec<Vec<RelationId>>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
}

impl RankingReport {
    pub fn from_ranks(
        test_triples: Vec<Triple>,
        ranks: Vec<u32>,
        distracting: Vec<Vec<RelationId>>,
    ) -> Self {
        let n = ranks.len().max(1) as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits1 = ranks.iter().filter(|&&r| r <= 1).count() as f64 / n;
        let hits3 = ranks.iter().filter(|&&r| r <= 3).count() as f64 / n;
        Self { test_triples, ranks, distracting, mrr, hits1, hits3 }
    }

    pub fn to_rank_csv(&self) -> String {
        let mut out = String::from("h,r,t,rank\n");
        for (t, rank) in self.test_triples.iter().zip(self.ranks.iter()) {
            out.push_str(&format!("{},{},{},{}\n", t.head, t.relation, t.tail, rank));
        }
        out
    }
}

/// Rank the gold relation among all candidates for each test triple under
/// the filtered protocol: candidates r' != r with (h, r', t) known anywhere
/// in `all_known` are removed before ranking. Ties are scored pessimistically.
pub fn filtered_relation_ranking(
    model: &KgeModel,
    all_known: &TripleStore,
    test: &TripleStore,
) -> Result<RankingReport> {
    let nr = model.num_relations();
    let mut ranks = Vec::with_capacity(test.len());
    let mut distracting = Vec::with_capacity(test.len());
    for t in test.triples() {
        if t.relation as usize >= nr
            || t.head as usize >= model.num_entities()
            || t.tail as usize >= model.num_entities()
        {
            return Err(Error::Index(format!("test triple {t:?} outside model vocabulary")));
        }
        let known = all_known.relations_of_pair(t.head, t.tail);
        let gold_score = score_unchecked(model, t.head, t.relation, t.tail);
        let mut better: Vec<(f64, RelationId)> = Vec::new();
        let mut rank = 1u32;
        for r in 0..nr as u32 {
            if r == t.relation {
                continue;
            }
            if known.is_some_and(|rels| rels.contains(&r)) {
                continue; // filtered: a true fact, not a distractor
            }
            let s = score_unchecked(model, t.head, r, t.tail);
            if s >= gold_score {
                rank += 1; // pessimistic: ties count against gold
                if s > gold_score {
                    better.push((s, r));
                }
            }
        }
        better.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        ranks.push(rank);
        distracting.push(better.into_iter().map(|(_, r)| r).collect());
    }
    Ok(RankingReport::from_ranks(test.triples().to_vec(), ranks, distracting))
}
