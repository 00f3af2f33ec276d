//! Click models: two count-based baselines (DCTR, RDCTR) and three
//! gradient-trained probabilistic models (PBM, UBM, DBN).
//!
//! Models are id-parameterized: they see document ids, never features. Each
//! exposes per-slot click probabilities (teacher-forced for the sequential
//! kinds) and a per-(query, doc) relevance score. The closed set of kinds
//! here is the extension point for richer (e.g. recurrent) models later;
//! anything that can produce predictions and relevance scores can be added
//! as a new variant.

mod ctr;
mod dbn;
mod pbm;
mod sgd;
mod ubm;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::sub_seed;
use crate::usersim::ClickLog;

pub use ctr::{moment_matched_beta, Counts, DctrModel, RdctrModel};
pub use dbn::DbnModel;
pub use pbm::PbmModel;
pub use sgd::{mean_nll, nll_and_grad, IndexedLog, LoglikModel, PairIndex, UNSEEN};
pub use ubm::UbmModel;

/// The implemented model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dctr,
    Rdctr,
    Pbm,
    Ubm,
    Dbn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Dctr,
        ModelKind::Rdctr,
        ModelKind::Pbm,
        ModelKind::Ubm,
        ModelKind::Dbn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Dctr => "dctr",
            ModelKind::Rdctr => "rdctr",
            ModelKind::Pbm => "pbm",
            ModelKind::Ubm => "ubm",
            ModelKind::Dbn => "dbn",
        }
    }

    /// Whether per-slot predictions condition on the observed click prefix.
    pub fn is_sequential(&self) -> bool {
        matches!(self, ModelKind::Ubm | ModelKind::Dbn)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dctr" => Ok(ModelKind::Dctr),
            "rdctr" => Ok(ModelKind::Rdctr),
            "pbm" => Ok(ModelKind::Pbm),
            "ubm" => Ok(ModelKind::Ubm),
            "dbn" => Ok(ModelKind::Dbn),
            other => Err(Error::Argument(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Optimizer and smoothing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Early-stopping patience, in epochs without validation improvement.
    pub patience: usize,
    /// DBN continuation probability; fixed, not learned.
    pub gamma: f64,
    /// Explicit Beta prior for the CTR models; `None` = moment-matched.
    pub prior: Option<(f64, f64)>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 1024,
            patience: 3,
            gamma: 1.0,
            prior: None,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// What to train: a model family plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper: Hyperparams,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            hyper: Hyperparams::default(),
        }
    }
}

/// Per-(query, doc) relevance estimates of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceScores {
    pub map: BTreeMap<(u64, u32), f64>,
}

impl RelevanceScores {
    pub fn get(&self, query_id: u64, doc_id: u32) -> Option<f64> {
        self.map.get(&(query_id, doc_id)).copied()
    }

    /// Scores equal to the annotation grades: the oracle upper bound.
    pub fn oracle_from_grades(corpus: &Corpus) -> Self {
        let map = corpus
            .queries
            .iter()
            .flat_map(|q| {
                q.docs
                    .iter()
                    .map(move |d| ((q.query_id, d.doc_id), d.grade as f64))
            })
            .collect();
        RelevanceScores { map }
    }
}

/// A fitted click model.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Dctr(DctrModel),
    Rdctr(RdctrModel),
    Pbm(PbmModel),
    Ubm(UbmModel),
    Dbn(DbnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Dctr(_) => ModelKind::Dctr,
            TrainedModel::Rdctr(_) => ModelKind::Rdctr,
            TrainedModel::Pbm(_) => ModelKind::Pbm,
            TrainedModel::Ubm(_) => ModelKind::Ubm,
            TrainedModel::Dbn(_) => ModelKind::Dbn,
        }
    }

    /// Per-slot click probabilities for a displayed ranking.
    ///
    /// The sequential kinds (UBM, DBN) require the observed click prefix:
    /// the probability at position k conditions on the observed clicks
    /// before k (teacher forcing). The other kinds ignore `observed`.
    pub fn predict_clicks(
        &self,
        query_id: u64,
        slots: &[u32],
        observed: Option<&[u8]>,
    ) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Dctr(m) => Ok(m.predict(query_id, slots)),
            TrainedModel::Rdctr(m) => Ok(m.predict(query_id, slots)),
            TrainedModel::Pbm(m) => m.predict(query_id, slots),
            TrainedModel::Ubm(m) => {
                let observed = observed.ok_or_else(|| {
                    Error::Contract("UBM prediction requires the observed click prefix".into())
                })?;
                m.predict(query_id, slots, observed)
            }
            TrainedModel::Dbn(m) => {
                let observed = observed.ok_or_else(|| {
                    Error::Contract("DBN prediction requires the observed click prefix".into())
                })?;
                m.predict(query_id, slots, observed)
            }
        }
    }

    /// Relevance scores over every (query, doc) of `corpus`; pairs unseen in
    /// training fall back to the prior mean (CTR kinds) or a logit of 0.
    pub fn relevance_scores(&self, corpus: &Corpus) -> RelevanceScores {
        let mut map = BTreeMap::new();
        for q in &corpus.queries {
            for d in &q.docs {
                let score = match self {
                    TrainedModel::Dctr(m) => m.prediction(q.query_id, d.doc_id),
                    TrainedModel::Rdctr(m) => m.relevance(q.query_id, d.doc_id),
                    TrainedModel::Pbm(m) => m.relevance(q.query_id, d.doc_id),
                    TrainedModel::Ubm(m) => m.relevance(q.query_id, d.doc_id),
                    TrainedModel::Dbn(m) => m.relevance(q.query_id, d.doc_id),
                };
                map.insert((q.query_id, d.doc_id), score);
            }
        }
        RelevanceScores { map }
    }
}

/// Fit one model on a training log, early-stopping on `val` for the
/// gradient-trained kinds. Deterministic given `(spec, logs, seed)`.
pub fn fit(
    spec: &ModelSpec,
    train: &ClickLog,
    val: Option<&ClickLog>,
    seed: u64,
) -> Result<TrainedModel> {
    spec.hyper.validate()?;
    if train.records.is_empty() {
        return Err(Error::Training("training log is empty".into()));
    }
    if let Some(val) = val {
        if val.meta.k != train.meta.k {
            return Err(Error::Training(format!(
                "validation log has k = {}, training log has k = {}",
                val.meta.k, train.meta.k
            )));
        }
    }

    match spec.kind {
        ModelKind::Dctr => Ok(TrainedModel::Dctr(DctrModel::fit(train, spec.hyper.prior)?)),
        ModelKind::Rdctr => Ok(TrainedModel::Rdctr(RdctrModel::fit(
            train,
            spec.hyper.prior,
        )?)),
        ModelKind::Pbm | ModelKind::Ubm | ModelKind::Dbn => {
            let pairs = PairIndex::from_log(train);
            let train_idx = IndexedLog::build(train, &pairs)?;
            let val_idx = val.map(|v| IndexedLog::build(v, &pairs)).transpose()?;
            let fit_seed = sub_seed(seed, spec.kind as u64 + 101);
            match spec.kind {
                ModelKind::Pbm => {
                    let mut m = PbmModel::new(train.meta.k, pairs);
                    sgd::train_sgd(&mut m, &train_idx, val_idx.as_ref(), &spec.hyper, fit_seed)?;
                    Ok(TrainedModel::Pbm(m))
                }
                ModelKind::Ubm => {
                    let mut m = UbmModel::new(train.meta.k, pairs);
                    sgd::train_sgd(&mut m, &train_idx, val_idx.as_ref(), &spec.hyper, fit_seed)?;
                    Ok(TrainedModel::Ubm(m))
                }
                ModelKind::Dbn => {
                    let mut m = DbnModel::new(train.meta.k, pairs, spec.hyper.gamma);
                    sgd::train_sgd(&mut m, &train_idx, val_idx.as_ref(), &spec.hyper, fit_seed)?;
                    Ok(TrainedModel::Dbn(m))
                }
                _ => unreachable!(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SnapshotParams {
    Dctr(ctr::DctrParams),
    Rdctr(ctr::RdctrParams),
    Pbm(pbm::PbmParams),
    Ubm(ubm::UbmParams),
    Dbn(dbn::DbnParams),
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    params: SnapshotParams,
}

/// Serialize a trained model to versioned JSON.
pub fn save_model<W: Write>(model: &TrainedModel, writer: W) -> Result<()> {
    let params = match model {
        TrainedModel::Dctr(m) => SnapshotParams::Dctr(m.to_params()),
        TrainedModel::Rdctr(m) => SnapshotParams::Rdctr(m.to_params()),
        TrainedModel::Pbm(m) => SnapshotParams::Pbm(m.to_params()),
        TrainedModel::Ubm(m) => SnapshotParams::Ubm(m.to_params()),
        TrainedModel::Dbn(m) => SnapshotParams::Dbn(m.to_params()),
    };
    serde_json::to_writer(
        writer,
        &Snapshot {
            version: SNAPSHOT_VERSION,
            params,
        },
    )?;
    Ok(())
}

/// Load a model snapshot, rejecting unknown versions.
pub fn load_model<R: Read>(reader: R) -> Result<TrainedModel> {
    let snap: Snapshot = serde_json::from_reader(reader)?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported model snapshot version {} (expected {SNAPSHOT_VERSION})",
            snap.version
        )));
    }
    Ok(match snap.params {
        SnapshotParams::Dctr(p) => TrainedModel::Dctr(DctrModel::from_params(p)),
        SnapshotParams::Rdctr(p) => TrainedModel::Rdctr(RdctrModel::from_params(p)),
        SnapshotParams::Pbm(p) => TrainedModel::Pbm(PbmModel::from_params(p)),
        SnapshotParams::Ubm(p) => TrainedModel::Ubm(UbmModel::from_params(p)),
        SnapshotParams::Dbn(p) => TrainedModel::Dbn(DbnModel::from_params(p)),
    })
}
