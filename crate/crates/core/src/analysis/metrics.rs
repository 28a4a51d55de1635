use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::{features_matrix, Sample};
use crate::error::{Error, Result};
use crate::numeric::Model;
use crate::ClientId;

/// Fraction of samples whose arg-max logit equals the label. Ties go to the
/// lowest class index.
pub fn evaluate(model: &Model, test: &[Sample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Evaluation("test set is empty".into()));
    }
    let logits = model.forward_logits(&model.forward_features(&features_matrix(test, model.input_dim()))?)?;
    let correct = logits
        .iter_rows()
        .zip(test)
        .filter(|(row, s)| argmax(row) == s.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Everything recorded for one client in one round. Round 0 is the initial
/// evaluation and carries no training fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundRecord {
    pub round: usize,
    pub client: ClientId,
    pub accuracy: f64,
    pub loss_s: Option<f64>,
    pub loss_r: Option<f64>,
    pub loss_total: Option<f64>,
    pub upload_params: usize,
    pub download_params: usize,
    pub samples_seen: usize,
    /// Full-train-set objective and gradient norm at the start of the round.
    pub start_loss: Option<f64>,
    pub start_grad_norm: Option<f64>,
    /// Gradient norm of every local step.
    #[serde(default)]
    pub batch_grad_norms: Vec<f64>,
    /// Gradient-change over parameter-change across the round.
    pub grad_lipschitz: Option<f64>,
    /// Embedding-change over feature-parameter-change versus the previous round.
    pub embedding_lipschitz: Option<f64>,
}

impl ClientRoundRecord {
    pub fn evaluation_only(round: usize, client: ClientId, accuracy: f64) -> Self {
        ClientRoundRecord {
            round,
            client,
            accuracy,
            loss_s: None,
            loss_r: None,
            loss_total: None,
            upload_params: 0,
            download_params: 0,
            samples_seen: 0,
            start_loss: None,
            start_grad_norm: None,
            batch_grad_norms: Vec::new(),
            grad_lipschitz: None,
            embedding_lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundRecord>,
    pub macro_accuracy: f64,
}

impl RoundReport {
    pub fn new(round: usize, clients: Vec<ClientRoundRecord>) -> Self {
        let macro_accuracy = if clients.is_empty() {
            0.0
        } else {
            clients.iter().map(|c| c.accuracy).sum::<f64>() / clients.len() as f64
        };
        RoundReport {
            round,
            clients,
            macro_accuracy,
        }
    }

    fn mean_of(&self, f: impl Fn(&ClientRoundRecord) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.clients.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_loss_s(&self) -> Option<f64> {
        self.mean_of(|c| c.loss_s)
    }

    pub fn mean_loss_r(&self) -> Option<f64> {
        self.mean_of(|c| c.loss_r)
    }

    pub fn mean_loss_total(&self) -> Option<f64> {
        self.mean_of(|c| c.loss_total)
    }

    pub fn upload_params(&self) -> usize {
        self.clients.iter().map(|c| c.upload_params).sum()
    }

    pub fn download_params(&self) -> usize {
        self.clients.iter().map(|c| c.download_params).sum()
    }
}

pub const METRICS_HEADER: &str =
    "round,client_id,acc,loss_s,loss_r,loss_total,upload_params,download_params";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `metrics.csv`: one row per (round, client).
pub fn write_metrics_csv<W: Write>(mut out: W, rounds: &[RoundReport]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rounds {
        for c in &r.clients {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.round,
                c.client,
                c.accuracy,
                opt(c.loss_s),
                opt(c.loss_r),
                opt(c.loss_total),
                c.upload_params,
                c.download_params
            )?;
        }
    }
    Ok(())
}

/// Parse a `reports.jsonl` stream back into records.
pub fn read_reports_jsonl<R: BufRead>(input: R) -> Result<Vec<ClientRoundRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
