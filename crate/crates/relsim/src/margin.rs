//! Softmax-margin loss with a similarity-derived cost, exercised on a
//! linear relation classifier over frozen pair embeddings.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{RelationId, TripleStore};
use crate::similarity::SimilarityMatrix;
use crate::util::{log_sum_exp, rng_from, softmax};

/// Per-class additive costs: values[i][j] = alpha * S(i, j) off the
/// diagonal, diagonal forced to zero so the gold class carries no self-cost.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub alpha: f64,
}

impl CostMatrix {
    pub fn row(&self, gold: RelationId) -> ArrayView1<'_, f64> {
        self.values.row(gold as usize)
    }
}

pub fn cost_matrix(sim: &SimilarityMatrix, alpha: f64) -> Result<CostMatrix> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = sim.num_relations();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[[i, j]] = alpha * sim.values[[i, j]];
            }
        }
    }
    Ok(CostMatrix { values, alpha })
}

/// Like [`cost_matrix`] but with the similarity sharpened to S^(1/T) first.
pub fn sharpened_cost_matrix(
    sim: &SimilarityMatrix,
    alpha: f64,
    temperature: f64,
) -> Result<CostMatrix> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let base = cost_matrix(sim, alpha)?;
    let inv_t = 1.0 / temperature;
    let n = sim.num_relations();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[[i, j]] = alpha * sim.values[[i, j]].powf(inv_t);
            }
        }
    }
    Ok(CostMatrix { values, alpha: base.alpha })
}

/// loss = -logits[gold] + log-sum-exp(logits + cost_row);
/// grad = softmax(logits + cost_row) - onehot(gold).
/// The gold entry of the cost row must be zero.
pub fn softmax_margin_loss(
    logits: ArrayView1<f64>,
    gold: RelationId,
    cost_row: ArrayView1<f64>,
) -> Result<(f64, Array1<f64>)> {
    let n = logits.len();
    if cost_row.len() != n {
        return Err(Error::Contract(format!(
            "cost row length {} does not match {n} logits",
            cost_row.len()
        )));
    }
    if gold as usize >= n {
        return Err(Error::Index(format!("gold class {gold} out of range (n = {n})")));
    }
    if cost_row[gold as usize] != 0.0 {
        return Err(Error::Contract(format!(
            "cost of the gold class must be 0, got {}",
            cost_row[gold as usize]
        )));
    }
    let augmented = &logits + &cost_row;
    let loss = -logits[gold as usize] + log_sum_exp(augmented.view());
    let mut grad = softmax(augmented.view());
    grad[gold as usize] -= 1.0;
    Ok((loss, grad))
}

/// Plain cross-entropy, kept as an independent reference implementation.
pub fn cross_entropy_loss(
    logits: ArrayView1<f64>,
    gold: RelationId,
) -> Result<(f64, Array1<f64>)> {
    let n = logits.len();
    if gold as usize >= n {
        return Err(Error::Index(format!("gold class {gold} out of range (n = {n})")));
    }
    let loss = -logits[gold as usize] + log_sum_exp(logits);
    let mut grad = softmax(logits);
    grad[gold as usize] -= 1.0;
    Ok((loss, grad))
}

/// Cost-sharpening temperature schedule: starts at 64, drops 20% per epoch,
/// floored at 16.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginSchedule {
    pub temperature_init: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for MarginSchedule {
    fn default() -> Self {
        Self { temperature_init: 64.0, decay: 0.8, floor: 16.0 }
    }
}

impl MarginSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature_init > 0.0) || !(self.floor > 0.0) {
            return Err(Error::Config("schedule temperatures must be > 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0,1], got {}", self.decay)));
        }
        Ok(())
    }

    pub fn temperature(&self, epoch: usize) -> f64 {
        (self.temperature_init * self.decay.powi(epoch as i32)).max(self.floor)
    }
}

/// Linear classifier over frozen pair features [h_emb; t_emb].
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    /// |R| x feature_dim
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ToyClassifier {
    pub fn zeros(num_relations: usize, feature_dim: usize) -> Self {
        Self { weight: Array2::zeros((num_relations, feature_dim)), bias: Array1::zeros(num_relations) }
    }

    pub fn logits(&self, features: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&features) + &self.bias
    }

    pub fn predict(&self, features: ArrayView1<f64>) -> RelationId {
        let logits = self.logits(features);
        let mut best = 0usize;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        best as RelationId
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Cost scale alpha; 0 reduces to plain cross-entropy.
    pub alpha: f64,
    pub schedule: MarginSchedule,
}

impl Default for MarginTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            seed: 0,
            alpha: 9.0,
            schedule: MarginSchedule::default(),
        }
    }
}

impl MarginTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginReport {
    pub accuracy: f64,
    /// gold relation x predicted relation counts on the validation set
    pub confusion: Vec<Vec<usize>>,
    pub epoch_losses: Vec<f64>,
}

impl MarginReport {
    pub fn confusion_csv(&self, relation_names: &[String]) -> String {
        let mut out = String::from("gold");
        for n in relation_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&relation_names[i]);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Feature vector for a triple: concatenated head and tail embeddings.
pub fn pair_features(entity_emb: &Array2<f64>, head: u32, tail: u32) -> Array1<f64> {
    let d = entity_emb.ncols();
    let mut f = Array1::zeros(2 * d);
    f.slice_mut(ndarray::s![..d]).assign(&entity_emb.row(head as usize));
    f.slice_mut(ndarray::s![d..]).assign(&entity_emb.row(tail as usize));
    f
}

/// Train the linear classifier with softmax-margin loss whose cost uses
/// temperature-sharpened similarity, then evaluate on the validation split.
/// With alpha = 0 the run is identical to cross-entropy training.
pub fn train_toy_classifier(
    train: &TripleStore,
    valid: &TripleStore,
    entity_emb: &Array2<f64>,
    sim: &SimilarityMatrix,
    config: &MarginTrainConfig,
) -> Result<(ToyClassifier, MarginReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyStore("cannot train a classifier on an empty store".into()));
    }
    if entity_emb.nrows() < train.num_entities() {
        return Err(Error::Config(format!(
            "embedding table covers {} entities, store has {}",
            entity_emb.nrows(),
            train.num_entities()
        )));
    }
    let nr = train.num_relations();
    if sim.num_relations() != nr {
        return Err(Error::Config(
            "similarity matrix does not cover the relation vocabulary".into(),
        ));
    }

    let mut model = ToyClassifier::zeros(nr, 2 * entity_emb.ncols());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let costs =
            sharpened_cost_matrix(sim, config.alpha, config.schedule.temperature(epoch))?;
        let mut rng = rng_from(&[config.seed, 0x33a6, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let t = train.triples()[i];
            let f = pair_features(entity_emb, t.head, t.tail);
            let logits = model.logits(f.view());
            let (loss, grad) =
                softmax_margin_loss(logits.view(), t.relation, costs.row(t.relation))?;
            total += loss;
            for r in 0..nr {
                let g = grad[r];
                if g == 0.0 {
                    continue;
                }
                let step = config.learning_rate * g;
                model.bias[r] -= step;
                for (w, &x) in model.weight.row_mut(r).iter_mut().zip(f.iter()) {
                    *w -= step * x;
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::Training { epoch, msg: format!("non-finite loss {total}") });
        }
        epoch_losses.push(total / train.len() as f64);
    }

    let mut confusion = vec![vec![0usize; nr]; nr];
    let mut correct = 0usize;
    for t in valid.triples() {
        let f = pair_features(entity_emb, t.head, t.tail);
        let pred = model.predict(f.view());
        confusion[t.relation as usize][pred as usize] += 1;
        if pred == t.relation {
            correct += 1;
        }
    }
    let accuracy =
        if valid.is_empty() { 0.0 } else { correct as f64 / valid.len() as f64 };
    Ok((model, MarginReport { accuracy, confusion, epoch_losses }))
}
