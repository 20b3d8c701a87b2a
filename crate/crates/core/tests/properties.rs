mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::collection::vec;
use proptest::prelude::*;

use common::{words, HashedScorer};
use umae::augment::{
    build_examples, parse_joint, upsample_factor, upsample_mix, BuildOptions, PromptRegistry,
    TaskShape, TrainingExample, UpsamplePolicy, DEFAULT_SEPARATOR,
};
use umae::corpus::{
    load_dataset, split, write_dataset, Dataset, EntityRegion, SplitSpec, VqaInstance,
};
use umae::decode::{beam_search, generate_keyed, truncate, DecodeConfig};
use umae::evalhub::{common_subset, compose, human_bounds, BoundMode, EvilConfig, RemovalPolicy};
use umae::image::{render_highlights, RgbImage};
use umae::metrics::{
    bleu, cider, harmonic_mean, meteor_corpus, rouge_l_corpus, vqa_accuracy, EvalItem, IdfMode,
};
use umae::scorer::{
    log_sum_exp, sequence_logprob, train_ngram, TokenId, TokenScorer, UniformScorer, Vocab,
};
use umae::select::{perplexity, select_mc_embedding, select_mc_ppl, EmbeddingTable};
use umae::text::MetricTokenizer;

const WORDS: &[&str] = &["cat", "dog", "runs", "running", "red", "sky", "is", "big"];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    vec(prop::sample::select(WORDS), 1..=max).prop_map(|w| w.join(" "))
}

fn example(input: String, target: String) -> TrainingExample {
    TrainingExample {
        prompt_token: "<#OKA#>".into(),
        input_text: format!("<#OKA#> {input}"),
        target_text: target,
        image_ref: String::new(),
        source_id: "p".into(),
        task: TaskShape::QToA,
    }
}

fn instance(i: usize, answers: Vec<String>) -> VqaInstance {
    let mut inst = VqaInstance::new(format!("q{i}"), Dataset::OkVqa, "what is it ?");
    inst.direct_answers = answers;
    inst
}

fn items_strategy() -> impl Strategy<Value = Vec<EvalItem>> {
    vec((sentence(6), vec(sentence(6), 1..3)), 1..5).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, r))| EvalItem {
                id: format!("i{i}"),
                candidate: c,
                references: r,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---- corpus

    #[test]
    fn dataset_round_trip(answers in vec(vec(prop::sample::select(WORDS), 10), 1..6)) {
        let insts: Vec<VqaInstance> = answers
            .into_iter()
            .enumerate()
            .map(|(i, a)| instance(i, a.into_iter().map(str::to_string).collect()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &insts).unwrap();
        prop_assert_eq!(load_dataset(&path, Dataset::OkVqa).unwrap(), insts);
    }

    #[test]
    fn split_partitions_and_is_deterministic(n in 1usize..80, frac in 0.05f64..0.95, seed: u64) {
        let insts: Vec<VqaInstance> = (0..n).map(|i| instance(i, vec!["a".into()])).collect();
        let spec = SplitSpec::new(frac, seed).unwrap();
        let (train, test) = split(&insts, &spec);
        let mut ids: Vec<&str> = train.iter().chain(&test).map(|i| i.id.as_str()).collect();
        ids.sort();
        let mut want: Vec<&str> = insts.iter().map(|i| i.id.as_str()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        prop_assert_eq!(split(&insts, &spec), (train, test));
    }

    // ---- augment

    #[test]
    fn joint_target_round_trips(a in "[a-z0-9 ?#<>]{0,12}[a-z]", e in "[a-z][a-z0-9 ,.#<>]{0,20}") {
        prop_assume!(!a.contains(DEFAULT_SEPARATOR) && !e.contains(DEFAULT_SEPARATOR));
        let (a, e) = (a.trim().to_string(), e.trim().to_string());
        let mut inst = VqaInstance::new("x", Dataset::Vcr, "why ?");
        inst.mc_options = vec![a.clone(), "something else".into()];
        inst.mc_correct_index = Some(0);
        inst.explanations = vec![e.clone()];
        let opts = BuildOptions { tasks: vec![TaskShape::QToAe], ..BuildOptions::default() };
        let ex = build_examples(&inst, &PromptRegistry::default(), &opts).unwrap();
        prop_assert_eq!(parse_joint(&ex[0].target_text, DEFAULT_SEPARATOR).unwrap(), (a, e));
    }

    #[test]
    fn registry_stays_injective(tokens in vec("[A-Z]{1,4}", 1..12)) {
        let mut r = PromptRegistry::default();
        let keys: Vec<(Dataset, TaskShape)> = [Dataset::OkVqa, Dataset::VqaX, Dataset::Synth]
            .iter()
            .flat_map(|d| TaskShape::ALL.iter().map(move |t| (*d, *t)))
            .collect();
        for (i, t) in tokens.iter().enumerate() {
            let (d, task) = keys[i % keys.len()];
            let _ = r.insert(d, task, format!("<#{t}#>"));
        }
        let all: Vec<(Dataset, TaskShape, &str)> = r.entries().collect();
        let own: BTreeMap<(Dataset, TaskShape), &str> = all.iter().map(|(d, t, s)| ((*d, *t), *s)).collect();
        let distinct: BTreeSet<&str> = own.values().copied().collect();
        prop_assert_eq!(distinct.len(), own.len());
    }

    #[test]
    fn upsample_is_repetition_then_shuffle(sizes in vec(0usize..9, 1..4), seed: u64) {
        let groups: Vec<(String, Vec<TrainingExample>)> = sizes
            .iter()
            .enumerate()
            .map(|(d, &n)| (format!("d{d}"), (0..n).map(|i| example(format!("d{d} x{i}"), "t".into())).collect()))
            .collect();
        let n_max = *sizes.iter().max().unwrap();
        let mixed = upsample_mix(&groups, UpsamplePolicy::RepeatToMax, seed);
        let mut got: BTreeMap<String, usize> = BTreeMap::new();
        for e in &mixed {
            *got.entry(e.input_text.clone()).or_default() += 1;
        }
        let mut want: BTreeMap<String, usize> = BTreeMap::new();
        for (_, ex) in &groups {
            let f = upsample_factor(ex.len(), n_max, UpsamplePolicy::RepeatToMax);
            for e in ex {
                *want.entry(e.input_text.clone()).or_default() += f;
            }
            // balanced to within one factor step
            if !ex.is_empty() {
                prop_assert!(ex.len() * f >= n_max && ex.len() * f < n_max + ex.len());
            }
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn highlights_are_idempotent(
        boxes in vec((0u32..30, 0u32..20, 2u32..20, 2u32..20, 0u32..6), 0..5),
        thickness in 1u32..4,
    ) {
        let regions: Vec<EntityRegion> = boxes
            .into_iter()
            .enumerate()
            .map(|(i, (x, y, w, h, c))| EntityRegion {
                entity_id: format!("e{i}"),
                bbox: [x, y, (x + w).min(48), (y + h).min(40)],
                color_index: c,
            })
            .collect();
        let base = RgbImage::new(48, 40);
        let once = render_highlights(&base, &regions, thickness).unwrap();
        let twice = render_highlights(&once, &regions, thickness).unwrap();
        prop_assert_eq!(once, twice);
    }

    // ---- scorer

    #[test]
    fn ngram_rows_normalize_and_stay_positive(
        corpus in vec((sentence(5), sentence(3)), 1..6),
        order in 1usize..4,
        k in 0.001f64..3.0,
        probe in vec(prop::sample::select(WORDS), 0..4),
    ) {
        let ex: Vec<TrainingExample> = corpus.into_iter().map(|(i, t)| example(i, t)).collect();
        let m = train_ngram(&ex, order, k).unwrap();
        let v = m.vocab();
        let mut ctx = vec![v.bos()];
        ctx.extend(probe.iter().filter_map(|w| v.id(w)));
        let lp = m.logprobs(&ctx).unwrap();
        prop_assert!(lp.iter().all(|x| x.is_finite()));
        prop_assert!(log_sum_exp(&lp).abs() < 1e-9);
        let seq: Vec<TokenId> = v.ids().take(4).collect();
        prop_assert!(sequence_logprob(&m, &ctx, &seq).unwrap().total.is_finite());
    }

    #[test]
    fn ngram_training_ignores_example_order(
        corpus in vec((sentence(5), sentence(3)), 1..6).prop_shuffle(),
        order in 1usize..4,
    ) {
        let ex: Vec<TrainingExample> = corpus.into_iter().map(|(i, t)| example(i, t)).collect();
        let mut rev = ex.clone();
        rev.reverse();
        prop_assert_eq!(train_ngram(&ex, order, 0.1).unwrap().to_json(), train_ngram(&rev, order, 0.1).unwrap().to_json());
    }

    // ---- decode

    #[test]
    fn samplers_stay_in_support_and_rescore(
        seed: u64,
        strategy in 0usize..3,
        knob in 0.05f64..1.0,
        key in "[a-z]{1,6}",
    ) {
        let scorer = HashedScorer { vocab: Vocab::build([], ["a", "b", "c", "d"]), seed };
        let cfg = match strategy {
            0 => DecodeConfig::top_k(1 + (knob * 4.0) as usize, 6, seed),
            1 => DecodeConfig::nucleus(knob, 6, seed),
            _ => DecodeConfig::typical(knob, 6, seed),
        };
        let ctx = vec![scorer.vocab.bos()];
        let g = generate_keyed(&scorer, &ctx, &cfg, &key).unwrap();
        let mut prefix = ctx.clone();
        for &t in &g.ids {
            prop_assert!(truncate(&scorer.probs(&prefix), &cfg).contains(t.index()));
            prefix.push(t);
        }
        let re = sequence_logprob(&scorer, &ctx, &g.ids).unwrap();
        prop_assert_eq!(&re.per_token, &g.per_token_logprob);
        prop_assert_eq!(g.tokens.len(), g.per_token_logprob.len());
        prop_assert_eq!(generate_keyed(&scorer, &ctx, &cfg, &key).unwrap(), g);
    }

    #[test]
    fn beam_total_is_sum_of_steps(seed: u64, width in 1usize..6, max_len in 1usize..6) {
        let scorer = HashedScorer { vocab: Vocab::build([], ["a", "b", "c"]), seed };
        let ctx = vec![scorer.vocab.bos()];
        let g = beam_search(&scorer, &ctx, &DecodeConfig::beam(width, max_len)).unwrap();
        prop_assert_eq!(g.total_logprob, g.per_token_logprob.iter().sum::<f64>());
        prop_assert_eq!(sequence_logprob(&scorer, &ctx, &g.ids).unwrap().per_token, g.per_token_logprob);
    }

    // ---- select

    #[test]
    fn ppl_argmin_is_normalized_logprob_argmax(
        seed: u64,
        options in vec(vec(0u32..6, 1..5), 1..6),
    ) {
        let scorer = HashedScorer { vocab: Vocab::build([], ["a", "b", "c", "d"]), seed };
        let opts: Vec<Vec<TokenId>> = options.into_iter().map(|o| o.into_iter().map(TokenId).collect()).collect();
        let ctx = vec![scorer.vocab.bos()];
        let r = select_mc_ppl(&scorer, &ctx, &opts).unwrap();
        let norm: Vec<f64> = opts
            .iter()
            .map(|o| sequence_logprob(&scorer, &ctx, o).unwrap().total / o.len() as f64)
            .collect();
        let best = norm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(norm[r.chosen_index] >= best - 1e-12 * best.abs());
        prop_assert!(r.per_option.iter().all(|o| o.perplexity >= 1.0));
    }

    #[test]
    fn uniform_scorer_perplexity_is_vocab_size(len in 1usize..6, extra in 0usize..8) {
        let names: Vec<String> = (0..extra).map(|i| format!("w{i}")).collect();
        let v = Vocab::build([], names.iter().map(String::as_str));
        let n = v.len() as f64;
        let s = UniformScorer::new(v.clone());
        let opt: Vec<TokenId> = (0..len).map(|i| TokenId((i % v.len()) as u32)).collect();
        let total = sequence_logprob(&s, &[v.bos()], &opt).unwrap().total;
        prop_assert!((perplexity(total, len) - n).abs() < 1e-9 * n);
    }

    #[test]
    fn embedding_choice_is_scale_invariant(
        vectors in vec(vec(-1.0f64..1.0, 3), 4),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(vectors.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let names = ["cat", "dog", "sky", "red"];
        let mut a = EmbeddingTable::new(3);
        let mut b = EmbeddingTable::new(3);
        for (w, v) in names.iter().zip(&vectors) {
            a.insert(w, v.clone()).unwrap();
            b.insert(w, v.iter().map(|x| x * scale).collect()).unwrap();
        }
        let options: Vec<String> = names[1..].iter().map(|s| s.to_string()).collect();
        prop_assert_eq!(
            select_mc_embedding("cat", &options, &a).unwrap().chosen_index,
            select_mc_embedding("cat", &options, &b).unwrap().chosen_index
        );
    }

    // ---- metrics

    #[test]
    fn metrics_stay_in_range(items in items_strategy()) {
        let tok = MetricTokenizer::new(false);
        for m in bleu(&items, &tok).into_iter().chain([rouge_l_corpus(&items, &tok), meteor_corpus(&items, &tok)]) {
            prop_assert!((0.0..=1.0).contains(&m.corpus_value));
            prop_assert!(m.per_instance.iter().all(|(_, v)| (0.0..=1.0).contains(v)));
        }
        for idf in [IdfMode::Smoothed, IdfMode::Raw] {
            let c = cider(&items, &tok, idf);
            prop_assert!(c.per_instance.iter().all(|(_, v)| (-1e-12..=10.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn identity_tops_singleton_corpus(reference in sentence(6), rival in sentence(6)) {
        let tok = MetricTokenizer::new(false);
        let item = |c: &str| vec![EvalItem { id: "x".into(), candidate: c.into(), references: vec![reference.clone()] }];
        let score = |it: &[EvalItem]| -> Vec<f64> {
            let mut v: Vec<f64> = bleu(it, &tok).iter().map(|m| m.corpus_value).collect();
            v.push(rouge_l_corpus(it, &tok).corpus_value);
            v.push(meteor_corpus(it, &tok).corpus_value);
            v.push(cider(it, &tok, IdfMode::Smoothed).corpus_value);
            v
        };
        let (id, rv) = (score(&item(&reference)), score(&item(&rival)));
        for (a, b) in id.iter().zip(&rv) {
            prop_assert!(a + 1e-12 >= *b);
        }
        prop_assert_eq!(id[4], 1.0);
        prop_assert_eq!(words(&reference).len(), tok.tokenize(&reference).len());
    }

    #[test]
    fn harmonic_mean_is_between_min_and_max(values in vec(0.001f64..100.0, 1..6)) {
        let h = harmonic_mean(&values);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(0.0, f64::max);
        prop_assert!(h >= lo * (1.0 - 1e-12) && h <= hi * (1.0 + 1e-12));
        if values.iter().all(|v| *v == values[0]) {
            prop_assert!((h - values[0]).abs() <= 1e-12 * values[0]);
        } else {
            prop_assert!(h < hi);
        }
    }

    #[test]
    fn vqa_accuracy_grows_with_matches(m in 0usize..10) {
        let gold = |m: usize| -> Vec<String> {
            (0..10).map(|i| if i < m { "cat".into() } else { format!("x{i}") }).collect()
        };
        let a = vqa_accuracy("cat", &gold(m)).unwrap();
        let b = vqa_accuracy("cat", &gold(m + 1)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && a <= b);
    }

    // ---- evalhub

    #[test]
    fn overall_score_is_bounded_and_monotone(
        s_t in 0.0f64..100.0,
        members in vec(0.1f64..100.0, 4),
        bump_at in 0usize..4,
        bump in 0.0f64..50.0,
        bert in prop::option::of(1.0f64..100.0),
    ) {
        let cfg = EvilConfig::default();
        let names = ["ROUGE-L", "METEOR", "CIDEr", "SPICE"];
        let map = |v: &[f64]| -> BTreeMap<String, f64> { names.iter().map(|n| n.to_string()).zip(v.iter().copied()).collect() };
        let base = compose(s_t, &map(&members), bert, 5, &cfg);
        let mut up = members.clone();
        up[bump_at] += bump;
        let raised = compose(s_t, &map(&up), bert, 5, &cfg);
        let s_e = base.s_e.unwrap();
        prop_assert!(base.s_o <= s_t.min(s_e) + 1e-9 || s_e > 100.0);
        prop_assert!(raised.s_e.unwrap() + 1e-12 >= s_e);
        prop_assert!(raised.s_o + 1e-12 >= base.s_o);
    }

    #[test]
    fn common_subset_ignores_order(sets in vec(vec(0u8..12, 0..10), 1..5).prop_shuffle()) {
        let sets: Vec<BTreeSet<String>> = sets.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect();
        let mut rev = sets.clone();
        rev.reverse();
        let c = common_subset(&sets);
        prop_assert_eq!(&c, &common_subset(&rev));
        prop_assert!(sets.iter().all(|s| c.is_subset(s)));
    }

    #[test]
    fn human_bounds_order_per_instance(
        answers in vec(vec(prop::sample::select(&["cat", "dog", "cow", "pig"][..]), 10), 1..8),
        seed: u64,
    ) {
        let insts: Vec<VqaInstance> = answers
            .into_iter()
            .enumerate()
            .map(|(i, a)| instance(i, a.into_iter().map(str::to_string).collect()))
            .collect();
        let get = |m| human_bounds(&insts, m, RemovalPolicy::SingleOccurrence, seed).unwrap().value;
        let (b, a, w) = (get(BoundMode::Best), get(BoundMode::Average), get(BoundMode::Worst));
        prop_assert!(b + 1e-9 >= a && a + 1e-9 >= w);
    }
}
