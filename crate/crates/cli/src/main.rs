mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use umae::augment::{ObjectPlacement, UpsamplePolicy, DEFAULT_SEPARATOR};
use umae::decode::Strategy;
use umae::evalhub::{BoundMode, RemovalPolicy};
use umae::metrics::IdfMode;
use umae::Dataset;

#[derive(Parser, Debug)]
#[command(
    name = "umae",
    version,
    about = "Multitask answer and explanation toolkit"
)]
pub struct Cli {
    /// Seed for every seeded step of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a dataset file (canonical or upstream layout) to canonical JSONL.
    Ingest {
        #[arg(long)]
        dataset: Dataset,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded train/held-out split of canonical JSONL.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Build prompt-token training examples from canonical JSONL.
    Prepare {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "q2a,qa2e,q2ae")]
        tasks: Vec<String>,
        #[arg(long, default_value = DEFAULT_SEPARATOR)]
        separator: String,
        #[arg(long, value_enum, default_value = "before")]
        objects: Placement,
        #[arg(long, value_enum, default_value = "repeat-to-max")]
        upsample: Upsample,
        #[arg(long)]
        out: PathBuf,
        /// Also write inference queries (no targets) for these instances.
        #[arg(long)]
        queries_out: Option<PathBuf>,
    },
    /// Train the add-k n-gram reference scorer.
    TrainRef {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        k: f64,
        /// Instance or query files whose tokens must be scoreable.
        #[arg(long)]
        vocab_from: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a model file over the scorer protocol (stdio unless --tcp).
    ServeRef {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tcp: Option<String>,
    },
    /// Decode model inputs (queries or training examples).
    Generate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map answers onto multiple-choice options.
    Select {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
        #[command(flatten)]
        model: ModelArg,
        /// Canonical instances with options.
        #[arg(long)]
        instances: PathBuf,
        /// Generations supplying the free-form answers (Q_TO_A records).
        #[arg(long = "in")]
        generations: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "before")]
        objects: Placement,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explanation metrics for candidates against references.
    Metrics {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// `spice=<path>` or `bertscore=<path>`.
        #[arg(long = "external")]
        external: Vec<String>,
        /// Only candidate records of this task (generation files).
        #[arg(long, default_value = "qa2e")]
        task: String,
        /// Task score used to compose S_O.
        #[arg(long)]
        s_t: Option<f64>,
        #[arg(long)]
        strip_articles: bool,
        #[arg(long, value_enum, default_value = "smoothed")]
        idf: Idf,
        #[arg(long, default_value_t = 1.0)]
        cider_divisor: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate stage outputs of a pipeline config (defaults to its output dir).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        generations: Option<PathBuf>,
        #[arg(long)]
        choices: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reports on the ids every model answered correctly.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        models: Vec<PathBuf>,
        /// `metric=path`, or `DATASET:metric=path` to apply to one dataset only.
        #[arg(long = "external")]
        external: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Human accuracy bounds from the gold answer sets.
    HumanBounds {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "single")]
        removal: Removal,
        /// Average over this many seeds (starting at --seed) instead of one draw.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error-category histogram from an annotation sheet.
    Errors {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw entity highlights for one instance onto a PPM image.
    Highlight {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        id: String,
        /// Source image; a blank canvas of --width x --height otherwise.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 48)]
        height: u32,
        #[arg(long, default_value_t = 2)]
        thickness: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from a pipeline config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write the synthetic fixture corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

/// `--model <path>` for an n-gram file, `extern:<command>` for a child
/// process, `tcp:<host:port>` for a running server.
#[derive(Args, Debug)]
pub struct ModelArg {
    #[arg(long)]
    pub model: String,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long, default_value = "beam")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 5)]
    pub beam_size: usize,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub p: f64,
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long)]
    pub length_normalize: bool,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Placement {
    Before,
    After,
}

impl From<Placement> for ObjectPlacement {
    fn from(p: Placement) -> Self {
        match p {
            Placement::Before => ObjectPlacement::BeforeQuestion,
            Placement::After => ObjectPlacement::AfterQuestion,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Upsample {
    RepeatToMax,
    None,
}

impl From<Upsample> for UpsamplePolicy {
    fn from(u: Upsample) -> Self {
        match u {
            Upsample::RepeatToMax => UpsamplePolicy::RepeatToMax,
            Upsample::None => UpsamplePolicy::None,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Ppl,
    Embedding,
    Both,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Idf {
    Smoothed,
    Raw,
}

impl From<Idf> for IdfMode {
    fn from(i: Idf) -> Self {
        match i {
            Idf::Smoothed => IdfMode::Smoothed,
            Idf::Raw => IdfMode::Raw,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Mode {
    Best,
    Average,
    Worst,
}

impl From<Mode> for BoundMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Best => BoundMode::Best,
            Mode::Average => BoundMode::Average,
            Mode::Worst => BoundMode::Worst,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Removal {
    Single,
    All,
}

impl From<Removal> for RemovalPolicy {
    fn from(r: Removal) -> Self {
        match r {
            Removal::Single => RemovalPolicy::SingleOccurrence,
            Removal::All => RemovalPolicy::AllOccurrences,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
