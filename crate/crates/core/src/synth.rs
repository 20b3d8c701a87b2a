//! Synthetic corpus in the three dataset shapes, small enough for the whole
//! pipeline to run in seconds. Everything is a pure function of the seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Dataset, EntityRegion, ObjectAnnotation, VqaInstance};
use crate::jsonl;
use crate::rng::{seeded, StreamRng};

struct Animal {
    noun: &'static str,
    feature: &'static str,
    activity: &'static str,
    reason: &'static str,
}

const ANIMALS: [Animal; 8] = [
    Animal {
        noun: "rooster",
        feature: "red comb",
        activity: "feeding",
        reason: "holds grain in the hand",
    },
    Animal {
        noun: "dog",
        feature: "floppy ears",
        activity: "walking",
        reason: "holds a leash",
    },
    Animal {
        noun: "cat",
        feature: "long whiskers",
        activity: "petting",
        reason: "strokes the fur",
    },
    Animal {
        noun: "horse",
        feature: "long mane",
        activity: "riding",
        reason: "sits in the saddle",
    },
    Animal {
        noun: "cow",
        feature: "black spots",
        activity: "milking",
        reason: "holds a bucket",
    },
    Animal {
        noun: "duck",
        feature: "webbed feet",
        activity: "watching",
        reason: "looks at the pond",
    },
    Animal {
        noun: "sheep",
        feature: "white wool",
        activity: "shearing",
        reason: "holds clippers",
    },
    Animal {
        noun: "pig",
        feature: "curly tail",
        activity: "washing",
        reason: "holds a hose",
    },
];

const SCENES: [&str; 4] = ["field", "yard", "barn", "park"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub okvqa: usize,
    pub aokvqa: usize,
    pub vcr: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            okvqa: 60,
            aokvqa: 80,
            vcr: 60,
            seed: 2023,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub okvqa: Vec<VqaInstance>,
    pub aokvqa: Vec<VqaInstance>,
    pub vcr: Vec<VqaInstance>,
}

impl SynthCorpus {
    pub fn all(&self) -> impl Iterator<Item = &VqaInstance> {
        self.okvqa.iter().chain(&self.aokvqa).chain(&self.vcr)
    }
}

/// Ten annotator answers: the true noun a varying number of times, the rest
/// spread over surface variants and confusable animals.
fn gold_answers(rng: &mut StreamRng, idx: usize) -> Vec<String> {
    let a = &ANIMALS[idx];
    let majority = rng.gen_range(3..=10);
    let mut out: Vec<String> = vec![a.noun.to_string(); majority];
    while out.len() < 10 {
        let r: f64 = rng.gen();
        if r < 0.3 {
            out.push(format!("a {}", a.noun));
        } else {
            let other = (idx + rng.gen_range(1..ANIMALS.len())) % ANIMALS.len();
            out.push(ANIMALS[other].noun.to_string());
        }
    }
    out.shuffle(rng);
    out
}

fn objects(idx: usize, scene: &str) -> Vec<ObjectAnnotation> {
    let a = &ANIMALS[idx];
    vec![
        ObjectAnnotation {
            label: a.noun.to_string(),
            attributes: a.feature.split(' ').map(str::to_string).collect(),
        },
        ObjectAnnotation {
            label: scene.to_string(),
            attributes: vec![],
        },
    ]
}

fn options<F: Fn(usize) -> String>(
    rng: &mut StreamRng,
    idx: usize,
    render: F,
) -> (Vec<String>, usize) {
    let mut picks = vec![idx];
    while picks.len() < 4 {
        let o = rng.gen_range(0..ANIMALS.len());
        if !picks.contains(&o) {
            picks.push(o);
        }
    }
    picks.shuffle(rng);
    let correct = picks
        .iter()
        .position(|&p| p == idx)
        .expect("correct option present");
    (picks.into_iter().map(render).collect(), correct)
}

fn okvqa(rng: &mut StreamRng, i: usize) -> VqaInstance {
    let idx = rng.gen_range(0..ANIMALS.len());
    let scene = SCENES[rng.gen_range(0..SCENES.len())];
    let mut inst = VqaInstance::new(
        format!("okvqa-{i:03}"),
        Dataset::OkVqa,
        format!("what animal is in the {scene} ?"),
    );
    inst.image_ref = format!("images/okvqa-{i:03}.ppm");
    inst.direct_answers = gold_answers(rng, idx);
    inst.objects = objects(idx, scene);
    inst
}

fn aokvqa(rng: &mut StreamRng, i: usize) -> VqaInstance {
    let idx = rng.gen_range(0..ANIMALS.len());
    let a = &ANIMALS[idx];
    let scene = SCENES[rng.gen_range(0..SCENES.len())];
    let mut inst = VqaInstance::new(
        format!("aokvqa-{i:03}"),
        Dataset::AOkVqa,
        format!("which animal has {} ?", a.feature),
    );
    inst.image_ref = format!("images/aokvqa-{i:03}.ppm");
    inst.direct_answers = gold_answers(rng, idx);
    let (opts, correct) = options(rng, idx, |o| ANIMALS[o].noun.to_string());
    inst.mc_options = opts;
    inst.mc_correct_index = Some(correct);
    inst.explanations = vec![
        format!("the {} has {}", a.noun, a.feature),
        format!("a {} is known for its {}", a.noun, a.feature),
        format!("{} are typical of a {} in the {scene}", a.feature, a.noun),
    ];
    inst.objects = objects(idx, scene);
    inst
}

fn vcr(rng: &mut StreamRng, i: usize) -> VqaInstance {
    let idx = rng.gen_range(0..ANIMALS.len());
    let a = &ANIMALS[idx];
    let mut inst = VqaInstance::new(
        format!("vcr-{i:03}"),
        Dataset::Vcr,
        format!("what is person1 doing with the {} ?", a.noun),
    );
    inst.image_ref = format!("images/vcr-{i:03}.ppm");
    let (opts, correct) = options(rng, idx, |o| {
        format!("person1 is {} the {}", ANIMALS[o].activity, a.noun)
    });
    inst.mc_options = opts;
    inst.mc_correct_index = Some(correct);
    inst.explanations = vec![format!("person1 {} near the {}", a.reason, a.noun)];
    inst.objects = vec![
        ObjectAnnotation {
            label: "person1".into(),
            attributes: vec![],
        },
        ObjectAnnotation {
            label: a.noun.to_string(),
            attributes: a.feature.split(' ').map(str::to_string).collect(),
        },
    ];
    let x0 = rng.gen_range(0..16u32);
    let y0 = rng.gen_range(0..16u32);
    inst.regions = vec![
        EntityRegion {
            entity_id: "person1".into(),
            bbox: [x0, y0, x0 + 12, y0 + 20],
            color_index: 0,
        },
        EntityRegion {
            entity_id: format!("{}1", a.noun),
            bbox: [x0 + 14, y0 + 8, x0 + 30, y0 + 20],
            color_index: 1,
        },
    ];
    inst
}

pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let mut rng = seeded(spec.seed);
    SynthCorpus {
        okvqa: (0..spec.okvqa).map(|i| okvqa(&mut rng, i)).collect(),
        aokvqa: (0..spec.aokvqa).map(|i| aokvqa(&mut rng, i)).collect(),
        vcr: (0..spec.vcr).map(|i| vcr(&mut rng, i)).collect(),
    }
}

/// Word vectors where each animal's noun, feature words and activity share
/// a direction, so embedding-based option mapping has signal.
pub fn embeddings_text(seed: u64) -> String {
    const DIM: usize = ANIMALS.len() + 2;
    let mut rng = seeded(seed ^ 0x656d_6265_6464);
    let mut words: Vec<(String, Option<usize>)> = Vec::new();
    for (i, a) in ANIMALS.iter().enumerate() {
        for w in a
            .noun
            .split(' ')
            .chain(a.feature.split(' '))
            .chain(std::iter::once(a.activity))
        {
            if !words.iter().any(|(x, _)| x == w) {
                words.push((w.to_string(), Some(i)));
            }
        }
    }
    for w in ["the", "a", "is", "person1", "in", "of", "has", "it", "its"] {
        if !words.iter().any(|(x, _)| x == w) {
            words.push((w.to_string(), None));
        }
    }
    let mut out = String::new();
    for (w, dir) in words {
        let v: Vec<f64> = (0..DIM)
            .map(|d| {
                let noise = rng.gen_range(-0.1..0.1);
                if Some(d) == dir {
                    1.0 + noise
                } else {
                    noise
                }
            })
            .collect();
        out.push_str(&w);
        for x in v {
            let _ = write!(out, " {x:.4}");
        }
        out.push('\n');
    }
    out
}

/// Stand-in external scores (`id,value` CSV) for every instance given.
pub fn external_scores_csv<'a>(
    instances: impl IntoIterator<Item = &'a VqaInstance>,
    lo: f64,
    hi: f64,
    seed: u64,
) -> String {
    let mut rng = seeded(seed);
    let mut out = String::from("id,value\n");
    for inst in instances {
        let v: f64 = rng.gen_range(lo..hi);
        let _ = writeln!(out, "{},{v:.4}", inst.id);
    }
    out
}

/// A small hand-style error annotation sheet over the given ids.
pub fn annotations_csv<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64) -> String {
    const CATEGORIES: [&str; 5] = [
        "Knowledge",
        "Visual",
        "SemanticDisassociation",
        "Metric",
        "Dataset",
    ];
    let mut rng = seeded(seed);
    let mut out = String::from("id,category,note\n");
    for id in ids {
        let c = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let _ = writeln!(out, "{id},{c},synthetic");
    }
    out
}

/// Every fixture file as `(name, contents)`.
pub fn fixture_files(spec: &SynthSpec) -> Vec<(&'static str, String)> {
    let c = generate(spec);
    let seed = spec.seed;
    let annotated: Vec<&str> = c
        .aokvqa
        .iter()
        .chain(&c.vcr)
        .take(100)
        .map(|i| i.id.as_str())
        .collect();
    vec![
        ("okvqa.jsonl", jsonl::to_string(&c.okvqa)),
        ("aokvqa.jsonl", jsonl::to_string(&c.aokvqa)),
        ("vcr.jsonl", jsonl::to_string(&c.vcr)),
        ("embeddings.txt", embeddings_text(seed)),
        (
            "aokvqa_spice.csv",
            external_scores_csv(&c.aokvqa, 0.15, 0.35, seed ^ 1),
        ),
        (
            "aokvqa_bertscore.csv",
            external_scores_csv(&c.aokvqa, 0.80, 0.92, seed ^ 2),
        ),
        (
            "vcr_spice.csv",
            external_scores_csv(&c.vcr, 0.15, 0.35, seed ^ 3),
        ),
        (
            "vcr_bertscore.csv",
            external_scores_csv(&c.vcr, 0.75, 0.88, seed ^ 4),
        ),
        ("annotations.csv", annotations_csv(annotated, seed ^ 5)),
    ]
}

pub fn write_fixtures(dir: &Path, spec: &SynthSpec) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (name, body) in fixture_files(spec) {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}
