//! Shared inputs for the criterion benches.

use umae::augment::{build_examples, BuildOptions, PromptRegistry, TrainingExample};
use umae::metrics::EvalItem;
use umae::scorer::{train_ngram, NgramScorer, TokenId, TokenScorer};
use umae::synth::{generate, SynthSpec};

pub fn examples() -> Vec<TrainingExample> {
    let corpus = generate(&SynthSpec::default());
    let registry = PromptRegistry::default();
    corpus
        .all()
        .flat_map(|i| build_examples(i, &registry, &BuildOptions::default()).unwrap())
        .collect()
}

pub fn scorer() -> NgramScorer {
    train_ngram(&examples(), 3, 0.1).unwrap()
}

/// Each explanation scored against the other explanations of its instance.
pub fn eval_items() -> Vec<EvalItem> {
    let corpus = generate(&SynthSpec::default());
    corpus
        .all()
        .filter(|i| i.explanations.len() > 1)
        .map(|i| EvalItem {
            id: i.id.clone(),
            candidate: i.explanations[0].clone(),
            references: i.explanations[1..].to_vec(),
        })
        .collect()
}

/// Query contexts for decoding, one per instance.
pub fn contexts(scorer: &NgramScorer, n: usize) -> Vec<Vec<TokenId>> {
    examples()
        .iter()
        .take(n)
        .map(|e| scorer.vocab().context_for(&e.input_text).unwrap())
        .collect()
}
