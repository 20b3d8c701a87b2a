use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use umae::augment::{
    build_examples, query_text, upsample_mix, BuildOptions, PromptRegistry, TaskShape,
};
use umae::corpus::{load_dataset, split, write_dataset, Dataset, SplitSpec};
use umae::decode::DecodeConfig;
use umae::evalhub::{
    compare, error_report, evil_score, human_bounds, human_bounds_mean, load_annotations,
    BoundMode, EvilConfig, ModelOutputs,
};
use umae::image::{render_highlights, RgbImage};
use umae::jsonl;
use umae::metrics::{load_external_scores, EvalItem, ExternalScores};
use umae::pipeline::{
    self, choose, generate_one, render_table, report_checks, stage_evaluate, ChoiceRecord,
    GenerationRecord, PipelineConfig, Query, Report, SelectMethod,
};
use umae::scorer::{serve, serve_tcp, NgramScorer, NgramTrainer};
use umae::select::EmbeddingTable;
use umae::synth::{write_fixtures, SynthSpec};
use umae::text::{model_tokens, MetricTokenizer};

use crate::inputs::{
    external_args, ids_of, open_model, read_candidates, read_instances, read_queries,
    read_references,
};
use crate::{Cli, Command, DecodeArgs, MethodArg};

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    jsonl::write(path, records).with_context(|| format!("writing {}", path.display()))
}

fn decode_config(d: &DecodeArgs, seed: u64) -> Result<DecodeConfig> {
    let cfg = DecodeConfig {
        strategy: d.strategy,
        beam_size: d.beam_size,
        k: d.k,
        p: d.p,
        tau: d.tau,
        max_len: d.max_len,
        seed,
        length_normalize: d.length_normalize,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_externals(
    args: &[String],
    ids: &std::collections::BTreeSet<String>,
) -> Result<BTreeMap<String, ExternalScores>> {
    let mut out = BTreeMap::new();
    for (name, path) in external_args(args)? {
        let scores = load_external_scores(&path, &name, ids)
            .with_context(|| format!("loading {}", path.display()))?;
        out.insert(name, scores);
    }
    Ok(out)
}

/// Entries of `--external` that apply to `ds`, with any `DATASET:` prefix removed.
fn externals_for(args: &[String], ds: Dataset) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for a in args {
        let head = a.split_once('=').map_or(a.as_str(), |(h, _)| h);
        match head.split_once(':') {
            Some((scope, _)) => {
                let scope: Dataset = scope.parse().map_err(|e: String| anyhow!(e))?;
                if scope == ds {
                    out.push(a[head.find(':').unwrap() + 1..].to_string());
                }
            }
            None => out.push(a.clone()),
        }
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    let jobs = cli.jobs.unwrap_or(0);
    let need_seed = |what: &str| seed.ok_or_else(|| anyhow!("{what} needs an explicit --seed"));
    match cli.command {
        Command::Ingest {
            dataset,
            input,
            out,
        } => {
            let inst = load_dataset(&input, dataset)?;
            write_dataset(&out, &inst)?;
            println!("{} {} records -> {}", inst.len(), dataset, out.display());
        }
        Command::Split {
            input,
            fraction,
            train_out,
            test_out,
        } => {
            let spec = SplitSpec::new(fraction, need_seed("split")?).map_err(|e| anyhow!(e))?;
            let inst = read_instances(&[input])?;
            let (train, test) = split(&inst, &spec);
            write_dataset(&train_out, &train)?;
            write_dataset(&test_out, &test)?;
            println!("{} train, {} held out", train.len(), test.len());
        }
        Command::Prepare {
            input,
            tasks,
            separator,
            objects,
            upsample,
            out,
            queries_out,
        } => {
            let tasks: Vec<TaskShape> = tasks
                .iter()
                .map(|t| t.parse().map_err(|e: String| anyhow!(e)))
                .collect::<Result<_>>()?;
            let options = BuildOptions {
                separator,
                tasks: tasks.clone(),
                objects: objects.into(),
            };
            let registry = PromptRegistry::default();
            let instances = read_instances(&input)?;
            let mut groups: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for inst in &instances {
                groups
                    .entry(inst.dataset.to_string())
                    .or_default()
                    .extend(build_examples(inst, &registry, &options)?);
            }
            let groups: Vec<_> = groups.into_iter().collect();
            let examples = upsample_mix(&groups, upsample.into(), need_seed("prepare")?);
            write_jsonl(&out, &examples)?;
            println!("{} examples -> {}", examples.len(), out.display());
            if let Some(q) = queries_out {
                let cfg = PipelineConfig {
                    prepare: umae::pipeline::PrepareConfig {
                        tasks,
                        separator: options.separator.clone(),
                        objects: options.objects,
                        upsample: upsample.into(),
                    },
                    ..minimal_config(seed.unwrap_or(0))
                };
                let queries = pipeline::build_queries(&instances, &registry, &cfg)?;
                write_jsonl(&q, &queries)?;
                println!("{} queries -> {}", queries.len(), q.display());
            }
        }
        Command::TrainRef {
            input,
            order,
            k,
            vocab_from,
            out,
        } => {
            let examples =
                jsonl::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut extra = Vec::new();
            for p in &vocab_from {
                for (_, v) in read_any(p)? {
                    for key in ["input_text", "question"] {
                        if let Some(s) = v.get(key).and_then(|x| x.as_str()) {
                            extra.extend(model_tokens(s));
                        }
                    }
                    for key in ["mc_options", "direct_answers", "explanations"] {
                        if let Some(arr) = v.get(key).and_then(|x| x.as_array()) {
                            extra.extend(
                                arr.iter().filter_map(|x| x.as_str()).flat_map(model_tokens),
                            );
                        }
                    }
                }
            }
            let registry = PromptRegistry::default();
            let model = NgramTrainer::new(order, k)
                .reserve(registry.tokens().map(str::to_string))
                .reserve([umae::augment::DEFAULT_SEPARATOR])
                .extra_vocab(extra)
                .train(&examples)?;
            model.save(&out)?;
            println!(
                "order {order}, k {k}, |V| = {} -> {}",
                model_vocab_len(&model),
                out.display()
            );
        }
        Command::ServeRef { model, tcp } => {
            let model = NgramScorer::load(&model)?;
            match tcp {
                Some(addr) => {
                    let listener =
                        TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
                    eprintln!("serving on {}", listener.local_addr()?);
                    serve_tcp(&model, listener)?;
                }
                None => {
                    let stdin = std::io::stdin();
                    serve(
                        &model,
                        stdin.lock(),
                        BufWriter::new(std::io::stdout().lock()),
                    )?;
                }
            }
        }
        Command::Generate {
            model,
            input,
            decode,
            out,
        } => {
            let cfg = decode_config(&decode, seed.unwrap_or(0))?;
            if cfg.strategy != umae::decode::Strategy::Beam && seed.is_none() {
                bail!("sampling needs an explicit --seed");
            }
            let scorer = open_model(&model.model)?;
            let queries = read_queries(&input)?;
            let records = generate_all(scorer.as_ref(), &queries, &cfg, jobs)?;
            write_jsonl(&out, &records)?;
            println!("{} generations -> {}", records.len(), out.display());
        }
        Command::Select {
            method,
            model,
            instances,
            generations,
            embeddings,
            objects,
            out,
        } => {
            let methods: Vec<SelectMethod> = match method {
                MethodArg::Ppl => vec![SelectMethod::Ppl],
                MethodArg::Embedding => vec![SelectMethod::Embedding],
                MethodArg::Both => vec![SelectMethod::Ppl, SelectMethod::Embedding],
            };
            let table = match (&embeddings, methods.contains(&SelectMethod::Embedding)) {
                (Some(p), true) => Some(EmbeddingTable::load(p)?),
                (None, true) => bail!("embedding selection needs --embeddings"),
                _ => None,
            };
            let scorer = open_model(&model.model)?;
            let inst = read_instances(&[instances])?;
            let gens: BTreeMap<String, String> = match &generations {
                Some(p) => read_candidates(p, TaskShape::QToA)?.into_iter().collect(),
                None => BTreeMap::new(),
            };
            if methods.contains(&SelectMethod::Embedding) && generations.is_none() {
                bail!("embedding selection needs --in <generations>");
            }
            let registry = PromptRegistry::default();
            let mut records = Vec::new();
            for i in inst.iter().filter(|i| !i.mc_options.is_empty()) {
                let q = Query {
                    source_id: i.id.clone(),
                    dataset: i.dataset,
                    task: TaskShape::QToA,
                    input_text: query_text(i, TaskShape::QToA, &registry, objects.into(), None)?,
                };
                records.push(choose(
                    i,
                    scorer.as_ref(),
                    Some(&q),
                    gens.get(&i.id).map(String::as_str),
                    &methods,
                    table.as_ref(),
                )?);
            }
            write_jsonl(&out, &records)?;
            summarize_choices(&records);
        }
        Command::Metrics {
            candidates,
            references,
            external,
            task,
            s_t,
            strip_articles,
            idf,
            cider_divisor,
            out,
        } => {
            let task: TaskShape = task.parse().map_err(|e: String| anyhow!(e))?;
            external_args(&external)?;
            let cands = read_candidates(&candidates, task)?;
            let refs = read_references(&references)?;
            let items: Vec<EvalItem> = cands
                .into_iter()
                .map(|(id, candidate)| {
                    let references = refs
                        .get(&id)
                        .cloned()
                        .ok_or_else(|| anyhow!("no references for {id}"))?;
                    Ok(EvalItem {
                        id,
                        candidate,
                        references,
                    })
                })
                .collect::<Result<_>>()?;
            let ids = ids_of(items.iter().map(|i| i.id.as_str()));
            let ext = load_externals(&external, &ids)?;
            let cfg = EvilConfig {
                cider_divisor,
                idf: idf.into(),
                tokenizer: MetricTokenizer::new(strip_articles),
                ..EvilConfig::default()
            };
            let (score, values) = evil_score(
                s_t.unwrap_or(100.0),
                &items,
                ext.get("SPICE"),
                ext.get("BERTScore"),
                &cfg,
            )?;
            for m in &values {
                eprintln!("{:<8} {:>8.2}", m.name, m.reported());
            }
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
            eprintln!("NGRAM    {:>8}", fmt(score.ngram_score));
            eprintln!("S_E      {:>8}", fmt(score.s_e));
            if s_t.is_some() {
                eprintln!("S_O      {:>8.2}", score.s_o);
            }
            let body = json!({
                "tool": pipeline::TOOL_NAME,
                "version": pipeline::TOOL_VERSION,
                "count": items.len(),
                "metrics": values,
                "external": ext,
                "ngram_score": score.ngram_score,
                "members": score.members,
                "s_e": score.s_e,
                "s_t": s_t,
                "s_o": s_t.map(|_| score.s_o),
            });
            write_json(out.as_deref(), &body)?;
        }
        Command::Evaluate {
            config,
            instances,
            generations,
            choices,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let test = read_instances(&[instances.unwrap_or_else(|| cfg.out("test.jsonl"))])?;
            let gens: Vec<GenerationRecord> =
                jsonl::read(&generations.unwrap_or_else(|| cfg.out("generations.jsonl")))?;
            let ch: Vec<ChoiceRecord> =
                jsonl::read(&choices.unwrap_or_else(|| cfg.out("choices.jsonl")))?;
            let mut datasets = stage_evaluate(&cfg, &test, &gens, &ch)?;
            let train_path = cfg.out("train.jsonl");
            if train_path.exists() {
                let train = read_instances(&[train_path])?;
                for d in &mut datasets {
                    d.n_train = train.iter().filter(|i| i.dataset == d.dataset).count();
                }
            }
            let checks = report_checks(&datasets);
            let all_checks_passed = checks.iter().all(|c| c.passed);
            let report = Report {
                tool: pipeline::TOOL_NAME.into(),
                version: pipeline::TOOL_VERSION.into(),
                config: cfg.clone(),
                datasets,
                checks,
                all_checks_passed,
            };
            let path = out.unwrap_or_else(|| cfg.out("report.json"));
            write_json(Some(&path), &report)?;
            print!("{}", render_table(&report));
            if !all_checks_passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Compare {
            models,
            external,
            out,
        } => {
            let reports: Vec<Report> = models
                .iter()
                .map(|p| -> Result<Report> {
                    let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    Ok(serde_json::from_reader(BufReader::new(f))?)
                })
                .collect::<Result<_>>()?;
            let mut results = Vec::new();
            let datasets: Vec<_> = reports[0].datasets.iter().map(|d| d.dataset).collect();
            for ds in datasets {
                let mut outs = Vec::new();
                for (path, r) in models.iter().zip(&reports) {
                    let Some(d) = r.datasets.iter().find(|d| d.dataset == ds) else {
                        continue;
                    };
                    if d.evil.is_none() {
                        continue;
                    }
                    outs.push(ModelOutputs {
                        name: path.display().to_string(),
                        s_t: d.s_t,
                        explanations: d
                            .instances
                            .iter()
                            .filter(|i| d.gated_ids.contains(&i.id))
                            .filter_map(|i| {
                                Some(EvalItem {
                                    id: i.id.clone(),
                                    candidate: i.explanation.clone()?,
                                    references: i.references.clone(),
                                })
                            })
                            .collect(),
                    });
                }
                if outs.len() != reports.len() {
                    continue;
                }
                let all_ids = ids_of(
                    outs.iter()
                        .flat_map(|o| o.explanations.iter().map(|e| e.id.as_str())),
                );
                let ext = load_externals(&externals_for(&external, ds)?, &all_ids)?;
                let cmp = compare(
                    &outs,
                    ext.get("SPICE"),
                    ext.get("BERTScore"),
                    &reports[0].config.evaluate.evil,
                )?;
                println!("{ds}: {} common ids", cmp.common_ids.len());
                for (name, s) in &cmp.scores {
                    println!(
                        "  {name}: S_O {:.2}  S_T {:.2}  S_E {}",
                        s.s_o,
                        s.s_t,
                        s.s_e.map_or("-".into(), |v| format!("{v:.2}"))
                    );
                }
                results.push(json!({ "dataset": ds, "comparison": cmp }));
            }
            if let Some(p) = out {
                write_json(Some(&p), &results)?;
            }
        }
        Command::HumanBounds {
            input,
            mode,
            removal,
            seeds,
            out,
        } => {
            let inst = read_instances(&input)?;
            let mode: BoundMode = mode.into();
            let base = match (mode, seed) {
                (BoundMode::Average, None) => bail!("--mode average needs an explicit --seed"),
                (_, s) => s.unwrap_or(0),
            };
            match seeds {
                Some(n) => {
                    let v = human_bounds_mean(&inst, mode, removal.into(), base..base + n)?;
                    println!("{mode:?}: {v:.2} (mean over {n} seeds)");
                    if let Some(p) = out {
                        write_json(
                            Some(&p),
                            &json!({ "mode": mode, "seeds": n, "first_seed": base, "value": v }),
                        )?;
                    }
                }
                None => {
                    let b = human_bounds(&inst, mode, removal.into(), base)?;
                    println!(
                        "{mode:?}: {:.2} over {} instances ({} degenerate)",
                        b.value,
                        b.per_instance.len(),
                        b.degenerate_count
                    );
                    if let Some(p) = out {
                        write_json(Some(&p), &b)?;
                    }
                }
            }
        }
        Command::Errors { annotations, out } => {
            let anns = load_annotations(&annotations)?;
            let r = error_report(&anns)?;
            for b in &r.bins {
                println!(
                    "{:<24} {:>4} {:>6.1}%",
                    format!("{:?}", b.category),
                    b.count,
                    b.percent
                );
            }
            if let Some(p) = out {
                write_json(Some(&p), &r)?;
            }
        }
        Command::Highlight {
            instances,
            id,
            image,
            width,
            height,
            thickness,
            out,
        } => {
            let inst = read_instances(&[instances])?;
            let i = inst
                .iter()
                .find(|i| i.id == id)
                .ok_or_else(|| anyhow!("no instance {id}"))?;
            let base = match image {
                Some(p) => RgbImage::read_ppm(BufReader::new(File::open(&p)?))?,
                None => RgbImage::new(width, height),
            };
            let drawn = render_highlights(&base, &i.regions, thickness)?;
            drawn.write_ppm(BufWriter::new(File::create(&out)?))?;
            println!("{} regions -> {}", i.regions.len(), out.display());
        }
        Command::Run { config, output_dir } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(j) = cli.jobs {
                cfg.jobs = j;
            }
            if let Some(o) = output_dir {
                cfg.output_dir = std::env::current_dir()?.join(o);
            }
            let outputs = pipeline::run_pipeline(&cfg)?;
            print!("{}", std::fs::read_to_string(&outputs.report_txt)?);
            println!("report: {}", outputs.report_json.display());
            if !outputs.all_checks_passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Synth { out } => {
            let spec = SynthSpec {
                seed: seed.unwrap_or(SynthSpec::default().seed),
                ..SynthSpec::default()
            };
            for p in write_fixtures(&out, &spec)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn generate_all(
    scorer: &dyn umae::TokenScorer,
    queries: &[Query],
    cfg: &DecodeConfig,
    jobs: usize,
) -> Result<Vec<GenerationRecord>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| {
        queries
            .par_iter()
            .map(|q| generate_one(scorer, q, cfg).map_err(anyhow::Error::from))
            .collect()
    })
}

fn summarize_choices(records: &[ChoiceRecord]) {
    for method in [SelectMethod::Ppl, SelectMethod::Embedding] {
        let chosen: Vec<_> = records
            .iter()
            .filter_map(|r| Some((r.chosen(method)?, r.correct_index)))
            .collect();
        if chosen.is_empty() {
            continue;
        }
        let right = chosen.iter().filter(|(c, g)| Some(*c) == *g).count();
        println!("{method:?}: {right}/{} correct", records.len());
    }
}

fn read_any(path: &PathBuf) -> Result<Vec<(usize, serde_json::Value)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Ok((
                i + 1,
                serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?,
            ))
        })
        .collect()
}

fn model_vocab_len(model: &NgramScorer) -> usize {
    use umae::TokenScorer;
    model.vocab().len()
}

fn minimal_config(seed: u64) -> PipelineConfig {
    let toml = format!("seed = {seed}\ndatasets = []\n");
    PipelineConfig::from_toml(&toml, Path::new(".")).expect("static config parses")
}
