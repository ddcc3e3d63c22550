//! Triple storage: loading, indexing, persistence, validation splits, and
//! CRP-based sub-relation synthesis.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{self, mix_seed, rng_from, sample_weighted};

pub type EntityId = u32;
pub type RelationId = u32;

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

/// Indexed, deduplicated set of facts with dense entity/relation vocabularies.
#[derive(Debug, Clone)]
pub struct TripleStore {
    triples: Vec<Triple>,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    by_relation: Vec<Vec<usize>>,
    by_pair: HashMap<(EntityId, EntityId), BTreeSet<RelationId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    Tsv,
    ReverbTsv,
}

impl std::str::FromStr for TripleFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(TripleFormat::Tsv),
            "reverb-tsv" => Ok(TripleFormat::ReverbTsv),
            other => Err(Error::Config(format!("unknown triple format '{other}'"))),
        }
    }
}

impl TripleStore {
    /// Build a store from named string triples. Vocabulary ids follow first
    /// appearance order; exact duplicate triples are dropped.
    pub fn from_named_triples<S: AsRef<str>>(rows: &[(S, S, S)]) -> Result<Self> {
        let mut entity_ids: HashMap<String, EntityId> = HashMap::new();
        let mut relation_ids: HashMap<String, RelationId> = HashMap::new();
        let mut entity_names = Vec::new();
        let mut relation_names = Vec::new();
        let mut triples = Vec::new();
        let mut seen: HashSet<Triple> = HashSet::new();

        for (h, r, t) in rows {
            let head = *entity_ids.entry(h.as_ref().to_string()).or_insert_with(|| {
                entity_names.push(h.as_ref().to_string());
                (entity_names.len() - 1) as EntityId
            });
            let relation = *relation_ids.entry(r.as_ref().to_string()).or_insert_with(|| {
                relation_names.push(r.as_ref().to_string());
                (relation_names.len() - 1) as RelationId
            });
            let tail = *entity_ids.entry(t.as_ref().to_string()).or_insert_with(|| {
                entity_names.push(t.as_ref().to_string());
                (entity_names.len() - 1) as EntityId
            });
            let triple = Triple::new(head, relation, tail);
            if seen.insert(triple) {
                triples.push(triple);
            }
        }

        Self::from_parts(triples, entity_names, relation_names)
    }

    /// Assemble a store from pre-assigned ids, validating invariants and
    /// building indexes.
    pub fn from_parts(
        triples: Vec<Triple>,
        entity_names: Vec<String>,
        relation_names: Vec<String>,
    ) -> Result<Self> {
        let ne = entity_names.len() as u32;
        let nr = relation_names.len() as u32;
        let mut seen = HashSet::with_capacity(triples.len());
        for t in &triples {
            if t.head >= ne || t.tail >= ne {
                return Err(Error::Index(format!(
                    "entity id out of range in triple {t:?} (|E| = {ne})"
                )));
            }
            if t.relation >= nr {
                return Err(Error::Index(format!(
                    "relation id out of range in triple {t:?} (|R| = {nr})"
                )));
            }
            if !seen.insert(*t) {
                return Err(Error::Contract(format!("duplicate triple {t:?}")));
            }
        }

        let mut by_relation = vec![Vec::new(); relation_names.len()];
        let mut by_pair: HashMap<(EntityId, EntityId), BTreeSet<RelationId>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            by_relation[t.relation as usize].push(i);
            by_pair.entry((t.head, t.tail)).or_default().insert(t.relation);
        }

        Ok(Self { triples, entity_names, relation_names, by_relation, by_pair })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_names.iter().position(|n| n == name).map(|i| i as EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_names.iter().position(|n| n == name).map(|i| i as RelationId)
    }

    /// Indices into `triples()` for one relation.
    pub fn triples_of_relation(&self, r: RelationId) -> &[usize] {
        &self.by_relation[r as usize]
    }

    /// All relations observed between a head/tail pair.
    pub fn relations_of_pair(&self, head: EntityId, tail: EntityId) -> Option<&BTreeSet<RelationId>> {
        self.by_pair.get(&(head, tail))
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.by_pair
            .get(&(t.head, t.tail))
            .is_some_and(|rels| rels.contains(&t.relation))
    }

    /// Sibling store with the same vocabularies but a triple subset.
    fn with_triples(&self, triples: Vec<Triple>) -> Self {
        Self::from_parts(triples, self.entity_names.clone(), self.relation_names.clone())
            .expect("subset of a valid store is valid")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = StoreManifest {
            format_version: STORE_FORMAT_VERSION,
            num_triples: self.triples.len(),
            entity_names: self.entity_names.clone(),
            relation_names: self.relation_names.clone(),
        };
        let f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(f, &manifest)?;

        let mut flat = Vec::with_capacity(self.triples.len() * 3);
        for t in &self.triples {
            flat.push(t.head);
            flat.push(t.relation);
            flat.push(t.tail);
        }
        util::write_u32_blob(&dir.join("triples.bin"), &flat)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: StoreManifest = serde_json::from_reader(File::open(&manifest_path)?)?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: manifest.format_version,
                expected: STORE_FORMAT_VERSION,
            });
        }
        let flat = util::read_u32_blob(&dir.join("triples.bin"), manifest.num_triples * 3)?;
        let triples = flat
            .chunks_exact(3)
            .map(|c| Triple::new(c[0], c[1], c[2]))
            .collect();
        Self::from_parts(triples, manifest.entity_names, manifest.relation_names)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    num_triples: usize,
    entity_names: Vec<String>,
    relation_names: Vec<String>,
}

/// Minimum occurrences a ReVerb pattern needs to be kept.
const REVERB_MIN_PATTERN_COUNT: usize = 10;

/// Load a triple file. Plain TSV rows are `head\trelation\ttail`; the ReVerb
/// variant has `arg1\tpattern\targ2\tconfidence` and drops patterns occurring
/// fewer than 10 times.
pub fn load_triples(path: &Path, format: TripleFormat) -> Result<TripleStore> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let min_fields = match format {
        TripleFormat::Tsv => 3,
        TripleFormat::ReverbTsv => 4,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < min_fields {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!(
                    "expected at least {min_fields} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        rows.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyStore(format!("{} contains no triples", path.display())));
    }

    if format == TripleFormat::ReverbTsv {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for (_, r, _) in &rows {
            *counts.entry(r.as_str()).or_default() += 1;
        }
        let keep: HashSet<String> = counts
            .iter()
            .filter(|(_, &c)| c > REVERB_MIN_PATTERN_COUNT)
            .map(|(&r, _)| r.to_string())
            .collect();
        rows.retain(|(_, r, _)| keep.contains(r));
        if rows.is_empty() {
            return Err(Error::EmptyStore(format!(
                "{}: no pattern passes the {REVERB_MIN_PATTERN_COUNT}-occurrence filter",
                path.display()
            )));
        }
    }

    TripleStore::from_named_triples(&rows)
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: TripleStore,
    pub valid: TripleStore,
    /// Set when the coverage repair left validation smaller than requested.
    pub undersized: bool,
}

/// Split off a validation set such that every entity and relation occurring in
/// validation also occurs in training. Violating triples are moved back to
/// training until the constraint holds.
pub fn split_validation(store: &TripleStore, valid_fraction: f64, seed: u64) -> Result<SplitResult> {
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot split an empty store".into()));
    }
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::Config(format!(
            "valid_fraction must be in (0,1), got {valid_fraction}"
        )));
    }

    let n = store.len();
    let target = ((n as f64) * valid_fraction).round().max(1.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(&[seed, 0x5117]));

    let mut in_valid = vec![false; n];
    for &i in order.iter().take(target.min(n.saturating_sub(1))) {
        in_valid[i] = true;
    }

    // Occurrence counts inside the current training portion.
    let mut ent_count = vec![0usize; store.num_entities()];
    let mut rel_count = vec![0usize; store.num_relations()];
    for (i, t) in store.triples().iter().enumerate() {
        if !in_valid[i] {
            ent_count[t.head as usize] += 1;
            ent_count[t.tail as usize] += 1;
            rel_count[t.relation as usize] += 1;
        }
    }

    // Repair loop: move any validation triple whose entity or relation is
    // absent from training back into training, until stable.
    loop {
        let mut moved = false;
        for (i, t) in store.triples().iter().enumerate() {
            if !in_valid[i] {
                continue;
            }
            let violates = ent_count[t.head as usize] == 0
                || ent_count[t.tail as usize] == 0
                || rel_count[t.relation as usize] == 0;
            if violates {
                in_valid[i] = false;
                ent_count[t.head as usize] += 1;
                ent_count[t.tail as usize] += 1;
                rel_count[t.relation as usize] += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let mut train_triples = Vec::new();
    let mut valid_triples = Vec::new();
    for (i, t) in store.triples().iter().enumerate() {
        if in_valid[i] {
            valid_triples.push(*t);
        } else {
            train_triples.push(*t);
        }
    }
    let undersized = valid_triples.len() < target;
    Ok(SplitResult {
        train: store.with_triples(train_triples),
        valid: store.with_triples(valid_triples),
        undersized,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrpConfig {
    /// Concentration: relative weight of opening a new sub-relation.
    pub alpha: f64,
    /// Sub-relations with fewer triples than this are dropped.
    pub min_count: usize,
    pub seed: u64,
}

impl CrpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Maps each surviving sub-relation id back to its source relation id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitGroundTruth {
    pub mapping: Vec<RelationId>,
}

impl SplitGroundTruth {
    pub fn source_of(&self, sub: RelationId) -> RelationId {
        self.mapping[sub as usize]
    }

    pub fn same_source(&self, a: RelationId, b: RelationId) -> bool {
        self.mapping[a as usize] == self.mapping[b as usize]
    }
}

/// Split every relation into sub-relations by sequential CRP seating: a new
/// table carries weight alpha, existing table k carries weight n_k, weights
/// renormalized over the choice set. Tables below `min_count` are dropped with
/// their triples.
pub fn crp_split(store: &TripleStore, config: &CrpConfig) -> Result<(TripleStore, SplitGroundTruth)> {
    config.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyStore("cannot CRP-split an empty store".into()));
    }

    // table assignment per triple index, plus per-relation table sizes
    let mut assignment: Vec<(RelationId, usize)> = vec![(0, 0); store.len()];
    let mut table_sizes: Vec<Vec<usize>> = vec![Vec::new(); store.num_relations()];

    for r in 0..store.num_relations() as RelationId {
        let mut rng = rng_from(&[config.seed, 0xc49, r as u64]);
        let sizes = &mut table_sizes[r as usize];
        for &ti in store.triples_of_relation(r) {
            let mut weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            weights.push(config.alpha);
            let k = sample_weighted(&weights, &mut rng);
            if k == sizes.len() {
                sizes.push(1);
            } else {
                sizes[k] += 1;
            }
            assignment[ti] = (r, k);
        }
    }

    // Survivors get fresh dense ids, grouped by source relation.
    let mut sub_id: HashMap<(RelationId, usize), RelationId> = HashMap::new();
    let mut sub_names = Vec::new();
    let mut mapping = Vec::new();
    for r in 0..store.num_relations() as RelationId {
        let mut surviving = 0;
        for (k, &size) in table_sizes[r as usize].iter().enumerate() {
            if size >= config.min_count {
                sub_id.insert((r, k), sub_names.len() as RelationId);
                sub_names.push(format!("{}#{surviving}", store.relation_names()[r as usize]));
                mapping.push(r);
                surviving += 1;
            }
        }
    }

    let mut triples = Vec::new();
    for (i, t) in store.triples().iter().enumerate() {
        if let Some(&sub) = sub_id.get(&assignment[i]) {
            triples.push(Triple::new(t.head, sub, t.tail));
        }
    }

    let split_store = TripleStore::from_parts(triples, store.entity_names().to_vec(), sub_names)?;
    Ok((split_store, SplitGroundTruth { mapping }))
}

/// Deterministic per-relation CRP seed, exposed so simulations can reproduce
/// the exact draw streams.
pub fn crp_relation_seed(seed: u64, r: RelationId) -> u64 {
    mix_seed(&[seed, 0xc49, r as u64])
}
