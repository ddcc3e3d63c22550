//! Redundancy detection: threshold merging of similar relations, scoring
//! against synthetic-split ground truth, and sampling estimators of merge
//! precision/recall on partially annotated corpora.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{RelationId, SplitGroundTruth};
use crate::similarity::SimilarityMatrix;
use crate::util::{rng_from, sample_weighted};

/// Annotator panel defaults: a pair counts as valid when at least
/// `min_valid` of `panel_size` annotators mark it valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelConfig {
    pub panel_size: usize,
    pub min_valid: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self { panel_size: 15, min_valid: 8 }
    }
}

/// Aggregate a panel's binary votes into a single label.
pub fn aggregate_panel(votes: &[bool], cfg: &PanelConfig) -> Result<bool> {
    if votes.len() != cfg.panel_size {
        return Err(Error::Contract(format!(
            "expected {} votes, got {}",
            cfg.panel_size,
            votes.len()
        )));
    }
    Ok(votes.iter().filter(|&&v| v).count() >= cfg.min_valid)
}

/// Canonical unordered pair key, smaller id first.
pub fn canonical_pair(a: RelationId, b: RelationId) -> (RelationId, RelationId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone)]
pub struct MergeResult {
    pub threshold: f64,
    /// Unordered pairs (a < b) with S >= threshold.
    pub pairs: Vec<(RelationId, RelationId)>,
    /// Connected components over the pair graph, each sorted, singletons
    /// included.
    pub clusters: Vec<Vec<RelationId>>,
}

/// All unordered pairs with S(r1, r2) >= lambda, plus their transitive
/// clusters.
pub fn merge_relations(sim: &SimilarityMatrix, lambda: f64) -> Result<MergeResult> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!("lambda must be in (0,1], got {lambda}")));
    }
    let n = sim.num_relations();
    let mut pairs = Vec::new();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if sim.values[[a, b]] >= lambda {
                pairs.push((a as RelationId, b as RelationId));
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<RelationId>> = HashMap::new();
    for x in 0..n {
        let root = find(&mut parent, x);
        groups.entry(root).or_default().push(x as RelationId);
    }
    let mut clusters: Vec<Vec<RelationId>> = groups.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort();
    Ok(MergeResult { threshold: lambda, pairs, clusters })
}

/// Precision/recall/F1 of predicted merge pairs against the pairs of
/// sub-relations that share a source relation. Empty predictions give
/// (0, 0, 0); an empty gold set is a degenerate input.
pub fn toy_prf(result: &MergeResult, truth: &SplitGroundTruth) -> Result<(f64, f64, f64)> {
    let n = truth.mapping.len();
    let mut gold = 0usize;
    for a in 0..n as RelationId {
        for b in (a + 1)..n as RelationId {
            if truth.same_source(a, b) {
                gold += 1;
            }
        }
    }
    if gold == 0 {
        return Err(Error::Degenerate("ground truth contains no redundant pair".into()));
    }
    let hits = result
        .pairs
        .iter()
        .filter(|&&(a, b)| {
            (a as usize) < n && (b as usize) < n && truth.same_source(a, b)
        })
        .count();
    let predicted = result.pairs.len();
    if predicted == 0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let p = hits as f64 / predicted as f64;
    let r = hits as f64 / gold as f64;
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

/// One annotated pair drawn from the proposal distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSample {
    pub pair: (RelationId, RelationId),
    /// Human/gold verdict: the two relations mean the same thing.
    pub label: bool,
    /// Unnormalized proposal weight the pair was drawn with.
    pub proposal_weight: f64,
}

/// Self-normalized importance-sampling recall estimate: with
/// w_i = [label_i] / q_i and w-hat the normalized weights, returns
/// sum of w-hat over samples the predictor also flags. Requires at least one
/// positive label.
pub fn estimate_recall<F>(samples: &[EstimatorSample], predicted: F) -> Result<f64>
where
    F: Fn(RelationId, RelationId) -> bool,
{
    let mut weights = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for s in samples {
        if !(s.proposal_weight > 0.0) {
            return Err(Error::Contract(format!(
                "non-positive proposal weight {} for pair {:?}",
                s.proposal_weight, s.pair
            )));
        }
        let w = if s.label { 1.0 / s.proposal_weight } else { 0.0 };
        weights.push(w);
        total += w;
    }
    if total == 0.0 {
        return Err(Error::UndefinedEstimate(
            "recall estimate needs at least one positively labeled sample".into(),
        ));
    }
    let mut recall = 0.0;
    for (s, w) in samples.iter().zip(&weights) {
        if *w > 0.0 && predicted(s.pair.0, s.pair.1) {
            recall += w / total;
        }
    }
    // guard against accumulation slack just above 1
    Ok(recall.clamp(0.0, 1.0))
}

/// Monte-Carlo precision: the labeled pairs were drawn uniformly from the
/// predicted-positive set, so precision is just the positive fraction.
pub fn estimate_precision(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::UndefinedEstimate("precision estimate needs at least one sample".into()));
    }
    Ok(labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64)
}

/// Pair labels keyed by canonical (a < b) pair.
pub type PairLabels = HashMap<(RelationId, RelationId), bool>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrPoint {
    pub lambda: f64,
    /// None when no pair reaches the threshold (precision undefined).
    pub precision: Option<f64>,
    pub precision_ci: Option<(f64, f64)>,
    pub recall: f64,
    pub recall_ci: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub bootstrap_n: usize,
}

impl PrCurve {
    /// CSV rows `lambda,precision,p_lo,p_hi,recall,r_lo,r_hi`; missing
    /// precision renders as empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,precision,p_lo,p_hi,recall,r_lo,r_hi\n");
        for p in &self.points {
            let (prec, plo, phi) = match (p.precision, p.precision_ci) {
                (Some(v), Some((lo, hi))) => (v.to_string(), lo.to_string(), hi.to_string()),
                _ => (String::new(), String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.lambda, prec, plo, phi, p.recall, p.recall_ci.0, p.recall_ci.1
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrConfig {
    /// Pairs drawn from the proposal for the recall estimator.
    pub recall_samples: usize,
    /// Pairs drawn uniformly above each threshold for precision.
    pub precision_samples: usize,
    pub bootstrap_n: usize,
    pub seed: u64,
}

impl Default for PrConfig {
    fn default() -> Self {
        Self { recall_samples: 500, precision_samples: 100, bootstrap_n: 1000, seed: 0 }
    }
}

fn all_pairs(n: usize) -> Vec<(RelationId, RelationId)> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n as RelationId {
        for b in (a + 1)..n as RelationId {
            out.push((a, b));
        }
    }
    out
}

fn lookup_label(labels: &PairLabels, pair: (RelationId, RelationId)) -> Result<bool> {
    labels
        .get(&pair)
        .copied()
        .ok_or_else(|| Error::MissingArtifact(format!("no label for pair {pair:?}")))
}

/// Draw `n` pairs with probability proportional to their similarity score
/// (the proposal q used by the recall estimator), recording the raw score as
/// the unnormalized weight.
pub fn draw_proposal_pairs(
    sim: &SimilarityMatrix,
    n: usize,
    seed: u64,
) -> Result<Vec<((RelationId, RelationId), f64)>> {
    let pairs = all_pairs(sim.num_relations());
    if pairs.is_empty() {
        return Err(Error::Degenerate("need at least two relations to sample pairs".into()));
    }
    let weights: Vec<f64> = pairs.iter().map(|&(a, b)| sim.get(a, b)).collect();
    let mut rng = rng_from(&[seed, 0x9d0b]);
    Ok((0..n)
        .map(|_| {
            let i = sample_weighted(&weights, &mut rng);
            (pairs[i], weights[i])
        })
        .collect())
}

fn percentile_ci(mut replicates: Vec<f64>) -> (f64, f64) {
    replicates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = replicates.len();
    let idx = |q: f64| ((q * (n - 1) as f64).round() as usize).min(n - 1);
    (replicates[idx(0.025)], replicates[idx(0.975)])
}

/// Precision-recall curve over increasing thresholds with 95% percentile
/// bootstrap confidence intervals. Recall uses one proposal-drawn annotation
/// batch shared across thresholds; precision draws a fresh uniform batch
/// above each threshold. All drawn pairs must be labeled.
pub fn pr_curve(
    sim: &SimilarityMatrix,
    labels: &PairLabels,
    thresholds: &[f64],
    cfg: &PrConfig,
) -> Result<PrCurve> {
    if thresholds.is_empty() {
        return Err(Error::Config("pr_curve needs at least one threshold".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("thresholds must be strictly increasing".into()));
    }
    if cfg.recall_samples == 0 || cfg.bootstrap_n == 0 {
        return Err(Error::Config("recall_samples and bootstrap_n must be positive".into()));
    }

    let drawn = draw_proposal_pairs(sim, cfg.recall_samples, cfg.seed)?;
    let mut recall_batch = Vec::with_capacity(drawn.len());
    for (pair, q) in drawn {
        recall_batch.push(EstimatorSample {
            pair,
            label: lookup_label(labels, pair)?,
            proposal_weight: q,
        });
    }

    let pairs = all_pairs(sim.num_relations());
    let mut points = Vec::with_capacity(thresholds.len());
    for (ti, &lambda) in thresholds.iter().enumerate() {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config(format!("threshold {lambda} outside (0,1]")));
        }
        let predicted = |a: RelationId, b: RelationId| sim.get(a, b) >= lambda;

        let recall = estimate_recall(&recall_batch, predicted)?;
        let mut rng = rng_from(&[cfg.seed, 0xb007, ti as u64]);
        let mut recall_reps = Vec::with_capacity(cfg.bootstrap_n);
        for _ in 0..cfg.bootstrap_n {
            let resample: Vec<EstimatorSample> = (0..recall_batch.len())
                .map(|_| recall_batch[rng.random_range(0..recall_batch.len())].clone())
                .collect();
            // all-negative resamples carry a zero recall estimate
            recall_reps.push(estimate_recall(&resample, predicted).unwrap_or(0.0));
        }
        let recall_ci = percentile_ci(recall_reps);

        let above: Vec<(RelationId, RelationId)> =
            pairs.iter().copied().filter(|&(a, b)| predicted(a, b)).collect();
        let (precision, precision_ci) = if above.is_empty() || cfg.precision_samples == 0 {
            (None, None)
        } else {
            let mut prng = rng_from(&[cfg.seed, 0x93ec, ti as u64]);
            let mut batch = Vec::with_capacity(cfg.precision_samples);
            for _ in 0..cfg.precision_samples {
                let pair = above[prng.random_range(0..above.len())];
                batch.push(lookup_label(labels, pair)?);
            }
            let prec = estimate_precision(&batch)?;
            let mut reps = Vec::with_capacity(cfg.bootstrap_n);
            for _ in 0..cfg.bootstrap_n {
                let resample: Vec<bool> =
                    (0..batch.len()).map(|_| batch[prng.random_range(0..batch.len())]).collect();
                reps.push(estimate_precision(&resample)?);
            }
            (Some(prec), Some(percentile_ci(reps)))
        };

        points.push(PrPoint { lambda, precision, precision_ci, recall, recall_ci });
    }
    Ok(PrCurve { points, bootstrap_n: cfg.bootstrap_n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Pairs drawn with probability proportional to similarity.
    Proposal,
    /// Uniform draws above each threshold.
    PerThreshold,
}

/// Emit an annotator-ready CSV task file. Proposal mode draws `count` pairs
/// from the similarity-proportional distribution; per-threshold mode draws
/// `count` pairs uniformly above each threshold (duplicates allowed, as in
/// annotation batches). The `label` column ships as -1 (pending).
pub fn sample_annotation_batch(
    sim: &SimilarityMatrix,
    mode: SampleMode,
    count: usize,
    thresholds: &[f64],
    seed: u64,
) -> Result<String> {
    let mut out = String::from("pair_id,r1_name,r2_name,similarity,proposal_weight,label\n");
    let mut push_row = |id: usize, pair: (RelationId, RelationId), q: f64| {
        out.push_str(&format!(
            "{},{},{},{},{},-1\n",
            id,
            sim.relation_names[pair.0 as usize],
            sim.relation_names[pair.1 as usize],
            sim.get(pair.0, pair.1),
            q
        ));
    };
    match mode {
        SampleMode::Proposal => {
            for (id, (pair, q)) in draw_proposal_pairs(sim, count, seed)?.into_iter().enumerate() {
                push_row(id, pair, q);
            }
        }
        SampleMode::PerThreshold => {
            if thresholds.is_empty() {
                return Err(Error::Config("per-threshold sampling needs thresholds".into()));
            }
            let pairs = all_pairs(sim.num_relations());
            let mut id = 0;
            for (ti, &lambda) in thresholds.iter().enumerate() {
                let above: Vec<_> =
                    pairs.iter().copied().filter(|&(a, b)| sim.get(a, b) >= lambda).collect();
                if above.is_empty() {
                    continue;
                }
                let mut rng = rng_from(&[seed, 0xa2fa, ti as u64]);
                for _ in 0..count {
                    let pair = above[rng.random_range(0..above.len())];
                    push_row(id, pair, sim.get(pair.0, pair.1));
                    id += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Parse a filled-in annotation CSV back into estimator samples, resolving
/// relation names against the matrix. Pending rows (label -1) are skipped.
pub fn parse_annotation_csv(text: &str, sim: &SimilarityMatrix) -> Result<Vec<EstimatorSample>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 6 comma-separated fields, found {}", fields.len()),
            });
        }
        let label: i32 = fields[5].trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad label '{}'", fields[5]),
        })?;
        if label == -1 {
            continue;
        }
        if label != 0 && label != 1 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("label must be -1, 0, or 1, got {label}"),
            });
        }
        let resolve = |name: &str| {
            sim.relation_id(name).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("unknown relation '{name}'"),
            })
        };
        let a = resolve(fields[1])?;
        let b = resolve(fields[2])?;
        let q: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad proposal weight '{}'", fields[4]),
        })?;
        samples.push(EstimatorSample {
            pair: canonical_pair(a, b),
            label: label == 1,
            proposal_weight: q,
        });
    }
    Ok(samples)
}

/// Exact recall/precision of threshold merging on a fully labeled universe,
/// by enumeration. Used as the oracle for the sampling estimators.
pub fn exact_pr(
    sim: &SimilarityMatrix,
    labels: &PairLabels,
    lambda: f64,
) -> Result<(Option<f64>, f64)> {
    let pairs = all_pairs(sim.num_relations());
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold = 0usize;
    for pair in pairs {
        let f = lookup_label(labels, pair)?;
        let p = sim.get(pair.0, pair.1) >= lambda;
        if f {
            gold += 1;
        }
        if p {
            predicted += 1;
        }
        if f && p {
            tp += 1;
        }
    }
    if gold == 0 {
        return Err(Error::Degenerate("no positive pair in the labeled universe".into()));
    }
    let precision = if predicted == 0 { None } else { Some(tp as f64 / predicted as f64) };
    Ok((precision, tp as f64 / gold as f64))
}
