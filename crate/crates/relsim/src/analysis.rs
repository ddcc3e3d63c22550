//! Correlation with human similarity judgments and error analysis of
//! relation-prediction rankings.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kge::RankingReport;
use crate::similarity::SimilarityMatrix;
use crate::util::rng_from;

/// Average ranks (1-based) with ties assigned the mean rank of their group.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j share the value; mean rank of the block
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined for a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks, ties
/// receiving their group's mean rank.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Config(format!("spearman needs at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite value in correlation input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided permutation p-value for a Spearman correlation: the fraction of
/// `shuffles` random permutations of `y` whose |rho| reaches the observed
/// |rho|, with add-one smoothing.
pub fn permutation_pvalue(x: &[f64], y: &[f64], shuffles: usize, seed: u64) -> Result<f64> {
    if shuffles == 0 {
        return Err(Error::Config("permutation test needs at least one shuffle".into()));
    }
    let observed = spearman(x, y)?.abs();
    let mut rng = rng_from(&[seed, 0x9e4b]);
    let mut perm: Vec<f64> = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..shuffles {
        perm.shuffle(&mut rng);
        // a permutation can make y constant only if it already was, which
        // spearman above has excluded
        if spearman(x, &perm)?.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (shuffles + 1) as f64)
}

pub const DEFAULT_PERMUTATION_SHUFFLES: usize = 10_000;

/// Human similarity judgments: integer scores 0..=4, pairs x subjects.
#[derive(Debug, Clone)]
pub struct AnnotationTable {
    pub pair_names: Vec<(String, String)>,
    /// pairs x subjects
    pub scores: Array2<f64>,
}

impl AnnotationTable {
    pub fn new(pair_names: Vec<(String, String)>, scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() != pair_names.len() {
            return Err(Error::Contract("one score row per pair required".into()));
        }
        if scores.ncols() < 2 {
            return Err(Error::Config("annotation table needs at least 2 subjects".into()));
        }
        for &v in scores.iter() {
            if !(0.0..=4.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::Contract(format!("score {v} outside the 0-4 integer scale")));
            }
        }
        Ok(Self { pair_names, scores })
    }

    pub fn num_subjects(&self) -> usize {
        self.scores.ncols()
    }

    pub fn num_pairs(&self) -> usize {
        self.scores.nrows()
    }

    /// Mean score over subjects, one value per pair.
    pub fn mean_scores(&self) -> Vec<f64> {
        (0..self.num_pairs())
            .map(|i| self.scores.row(i).sum() / self.num_subjects() as f64)
            .collect()
    }

    /// Parse CSV rows `r1_name,r2_name,s1,...,sK`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut pair_names = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: "expected r1_name,r2_name and at least 2 subject scores".into(),
                });
            }
            pair_names.push((fields[0].to_string(), fields[1].to_string()));
            let scores: std::result::Result<Vec<f64>, _> =
                fields[2..].iter().map(|f| f.trim().parse::<f64>()).collect();
            rows.push(scores.map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: "malformed score".into(),
            })?);
        }
        if rows.is_empty() {
            return Err(Error::EmptyStore("annotation table has no rows".into()));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Contract("ragged annotation table".into()));
        }
        let n = pair_names.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(pair_names, Array2::from_shape_vec((n, k), flat).unwrap())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooAgreement {
    pub mean_r: f64,
    pub std: f64,
    /// Subject columns skipped because they were constant.
    pub skipped_subjects: Vec<usize>,
}

/// Leave-one-out inter-subject agreement: each subject's Spearman correlation
/// against the mean of the remaining subjects; mean and (population) standard
/// deviation over subjects. Constant subject columns are skipped.
pub fn loo_agreement(table: &AnnotationTable) -> Result<LooAgreement> {
    let k = table.num_subjects();
    if k < 3 {
        return Err(Error::Config(format!("leave-one-out needs at least 3 subjects, got {k}")));
    }
    let mut rs = Vec::new();
    let mut skipped = Vec::new();
    for s in 0..k {
        let own: Vec<f64> = table.scores.column(s).to_vec();
        let others: Vec<f64> = (0..table.num_pairs())
            .map(|i| {
                let row = table.scores.row(i);
                (row.sum() - row[s]) / (k - 1) as f64
            })
            .collect();
        match spearman(&own, &others) {
            Ok(r) => rs.push(r),
            Err(Error::Degenerate(_)) => skipped.push(s),
            Err(e) => return Err(e),
        }
    }
    if rs.is_empty() {
        return Err(Error::Degenerate("every subject column is constant".into()));
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rs.len() as f64;
    Ok(LooAgreement { mean_r: mean, std: var.sqrt(), skipped_subjects: skipped })
}

/// Spearman correlation between mean human scores and the model's similarity
/// for the same pairs. Every annotated pair must resolve in the matrix.
pub fn model_human_correlation(table: &AnnotationTable, sim: &SimilarityMatrix) -> Result<f64> {
    let mut model = Vec::with_capacity(table.num_pairs());
    for (a, b) in &table.pair_names {
        let ra = sim.relation_id(a).ok_or_else(|| {
            Error::MissingArtifact(format!("no model score: unknown relation '{a}'"))
        })?;
        let rb = sim.relation_id(b).ok_or_else(|| {
            Error::MissingArtifact(format!("no model score: unknown relation '{b}'"))
        })?;
        model.push(sim.get(ra, rb));
    }
    spearman(&table.mean_scores(), &model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankHistogram {
    /// similarity rank -> count of distracting relations
    pub counts: BTreeMap<u32, usize>,
    pub total_test_triples: usize,
}

impl RankHistogram {
    pub fn total_distractors(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,count\n");
        for (rank, count) in &self.counts {
            out.push_str(&format!("{rank},{count}\n"));
        }
        out
    }

    /// Sum of counts over an inclusive rank window.
    pub fn window_mass(&self, lo: u32, hi: u32) -> usize {
        self.counts.range(lo..=hi).map(|(_, c)| c).sum()
    }
}

/// Similarity rank of `other` with respect to `gold`: 1 + the number of
/// relations (excluding gold itself) strictly more similar to gold, plus
/// tied relations other than `other` itself counted pessimistically.
pub fn similarity_rank(sim: &SimilarityMatrix, gold: u32, other: u32) -> u32 {
    let s = sim.get(gold, other);
    let mut rank = 0;
    for r in 0..sim.num_relations() as u32 {
        if r != gold && sim.get(gold, r) >= s {
            rank += 1;
        }
    }
    rank
}

/// For every distracting relation in the report, the similarity rank of that
/// relation among all candidates sorted by similarity to the gold relation,
/// tallied into a histogram.
pub fn distracting_rank_histogram(
    report: &RankingReport,
    sim: &SimilarityMatrix,
) -> Result<RankHistogram> {
    let nr = sim.num_relations() as u32;
    let mut counts = BTreeMap::new();
    for (t, distractors) in report.test_triples.iter().zip(report.distracting.iter()) {
        if t.relation >= nr {
            return Err(Error::Index(format!(
                "report relation {} outside similarity vocabulary (|R| = {nr})",
                t.relation
            )));
        }
        for &d in distractors {
            if d >= nr {
                return Err(Error::Index(format!("distractor {d} outside vocabulary")));
            }
            *counts.entry(similarity_rank(sim, t.relation, d)).or_insert(0) += 1;
        }
    }
    Ok(RankHistogram { counts, total_test_triples: report.test_triples.len() })
}
