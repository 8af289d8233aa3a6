//! Caption generation over a set of inputs, corpus metrics and semantic-head
//! accuracy.

use crate::model::{CaptionModel, Losses, ModelInput};
use crate::ModelError;
use serde::{Deserialize, Serialize};
use shotcap_core::metrics::{evaluate_corpus, EvalPair, MetricReport};
use shotcap_core::pipeline::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub reference: String,
    pub generated: String,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: MetricReport,
    pub losses: Losses,
    /// Micro F1 of teacher-forced attribute predictions thresholded at 0.5.
    pub semantic_f1: Option<f64>,
    pub exact_matches: usize,
    pub samples: usize,
    pub captions: Vec<GeneratedCaption>,
}

/// Micro-averaged F1 over all (sample, attribute) bits; 1 when nothing is
/// predicted or expected.
pub fn micro_f1(predicted: &[Vec<bool>], expected: &[Vec<bool>]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, e) in predicted.iter().zip(expected) {
        for (&a, &b) in p.iter().zip(e) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

pub fn semantic_f1(model: &CaptionModel, inputs: &[ModelInput]) -> Result<Option<f64>, ModelError> {
    let mut pred = Vec::with_capacity(inputs.len());
    let mut gold = Vec::with_capacity(inputs.len());
    for x in inputs {
        match model.semantic_probs(x)? {
            Some(p) => pred.push(p.iter().map(|&v| v >= 0.5).collect()),
            None => return Ok(None),
        }
        gold.push(x.semantic_target.iter().map(|&v| v >= 0.5).collect());
    }
    Ok(Some(micro_f1(&pred, &gold)))
}

/// Greedy captions for every input scored against the input's own caption.
pub fn evaluate(
    model: &CaptionModel,
    inputs: &[ModelInput],
    vocab: &Vocabulary,
) -> Result<Evaluation, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let ids = |v: &[usize]| v.iter().map(|&t| t as u32).collect::<Vec<u32>>();
    let mut captions = Vec::with_capacity(inputs.len());
    let mut pairs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let out = model.generate(x)?;
        let reference = vocab.detokenize(&ids(&x.tokens));
        let generated = vocab.detokenize(&ids(&out));
        pairs.push(EvalPair::from_text(&generated, &[&reference]));
        captions.push(GeneratedCaption {
            exact: out == x.tokens,
            reference,
            generated,
        });
    }
    let refs: Vec<&ModelInput> = inputs.iter().collect();
    Ok(Evaluation {
        metrics: evaluate_corpus(&pairs)?,
        losses: model.losses(&refs)?,
        semantic_f1: semantic_f1(model, inputs)?,
        exact_matches: captions.iter().filter(|c| c.exact).count(),
        samples: inputs.len(),
        captions,
    })
}
