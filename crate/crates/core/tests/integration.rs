mod common;

use std::net::TcpListener;

use common::fixtures_dir;
use umae::augment::{build_examples, BuildOptions, PromptRegistry};
use umae::corpus::{load_dataset, Dataset};
use umae::decode::{generate, DecodeConfig};
use umae::pipeline::PipelineConfig;
use umae::scorer::{serve_tcp, train_ngram, ExternalScorer, TokenScorer};
use umae::synth::{fixture_files, SynthSpec};

#[test]
fn committed_fixtures_match_generator() {
    for (name, body) in fixture_files(&SynthSpec::default()) {
        let on_disk = std::fs::read_to_string(fixtures_dir().join(name)).unwrap();
        assert_eq!(
            on_disk, body,
            "{name} is stale; regenerate with `umae synth --out fixtures`"
        );
    }
}

#[test]
fn fixture_config_validates() {
    let cfg = PipelineConfig::load(&fixtures_dir().join("pipeline.toml")).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.datasets.len(), 3);
}

#[test]
fn external_scorer_over_tcp_matches_in_process() {
    let insts = load_dataset(&fixtures_dir().join("aokvqa.jsonl"), Dataset::AOkVqa).unwrap();
    let registry = PromptRegistry::default();
    let examples: Vec<_> = insts
        .iter()
        .take(20)
        .flat_map(|i| build_examples(i, &registry, &BuildOptions::default()).unwrap())
        .collect();
    let local = train_ngram(&examples, 3, 0.1).unwrap();
    let served = local.clone();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve_tcp(&served, listener));

    let remote = ExternalScorer::connect_tcp(addr).unwrap();
    assert_eq!(remote.vocab(), local.vocab());
    for ex in examples.iter().take(10) {
        let ctx = local.vocab().context_for(&ex.input_text).unwrap();
        let a = local.logprobs(&ctx).unwrap();
        let b = remote.logprobs(&ctx).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
        }
        let cfg = DecodeConfig::beam(3, 8);
        assert_eq!(
            generate(&local, &ctx, &cfg).unwrap().ids,
            generate(&remote, &ctx, &cfg).unwrap().ids
        );
    }
}
