mod commands;
mod failure;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser)]
#[command(name = "groove", version, about = "Ingest drum MIDI, train groove models, and humanize, infill or tap2drum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a directory of MIDI files into a windowed corpus and manifest.
    Ingest(IngestArgs),
    /// Offset statistics by position within the beat.
    Stats(StatsArgs),
    /// Fit a model on a corpus split and write a checkpoint.
    Train(TrainArgs),
    /// Perform a drum score: keep its hits, predict velocities and timing.
    Humanize(RenderArgs),
    /// Regenerate a voice of a drum performance.
    Infill(InfillArgs),
    /// Turn a tapped rhythm into a full drum performance.
    Tap2drum(TapArgs),
    /// Score a checkpoint (and the baselines) on a corpus split.
    Eval(EvalArgs),
    /// Compare analytic and numerical gradients of the neural models.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum ReportFormat {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<groove::Split> {
        match self {
            SplitArg::Train => Some(groove::Split::Train),
            SplitArg::Validation => Some(groove::Split::Validation),
            SplitArg::Test => Some(groove::Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Directory searched recursively for .mid/.midi files.
    dir: PathBuf,
    /// Corpus file to write; the manifest goes next to it as .csv.
    #[arg(long)]
    out: PathBuf,
    /// Metadata sheet with a midi_filename column. Defaults to DIR/info.csv when present.
    #[arg(long)]
    info: Option<PathBuf>,
    /// Window length in bars.
    #[arg(long, default_value_t = 2)]
    bars: usize,
    /// Hop between windows in bars.
    #[arg(long, default_value_t = 1)]
    hop: usize,
    #[arg(long, value_enum, default_value_t)]
    report: ReportFormat,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t)]
    report: ReportFormat,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint to write; the run record goes next to it as .json.
    #[arg(long)]
    checkpoint: PathBuf,
    /// quantized, linear, knn, mlp, seq2seq, seq2seq-vib or transfer.
    #[arg(long, default_value = "seq2seq")]
    model: groove::Family,
    /// humanize, infill or tap2drum.
    #[arg(long, default_value = "humanize")]
    task: groove::Task,
    /// Neighbors averaged by the knn model.
    #[arg(long, default_value_t = groove::baseline::DEFAULT_K)]
    k: usize,
    /// Weight of the KL term for seq2seq-vib.
    #[arg(long, default_value_t = 0.2)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Encoder,latent,decoder sizes; a single number for all three; or "full".
    #[arg(long, default_value = "64,32,64")]
    dims: String,
    /// Hidden width of the mlp model.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    /// Ridge penalty of the linear model.
    #[arg(long, default_value_t = groove::baseline::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Linear KL warm-up in steps.
    #[arg(long, default_value_t = 0)]
    kl_anneal: usize,
    /// Global gradient-norm clip.
    #[arg(long)]
    clip: Option<f64>,
    /// Voice removed for infilling: "hihat" (closed and open) or a category name.
    #[arg(long, default_value = "hihat")]
    category: String,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Repeat the run described by an earlier run record; other training flags are ignored.
    #[arg(long)]
    from_record: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    report: ReportFormat,
}

#[derive(Args)]
struct RenderArgs {
    /// Input MIDI file.
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output MIDI file.
    #[arg(long)]
    out: PathBuf,
    /// Tempo of the written file; defaults to the input's.
    #[arg(long)]
    tempo: Option<f64>,
    /// Sample the latent with this temperature instead of using its mean.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InfillArgs {
    #[command(flatten)]
    render: RenderArgs,
    /// Voice to regenerate; must be the one the checkpoint was trained for.
    #[arg(long)]
    category: Option<String>,
}

#[derive(Args)]
struct TapArgs {
    #[command(flatten)]
    render: RenderArgs,
    /// Treat the input as a drum performance and flatten it to taps,
    /// instead of reading every note of any pitch as a tap.
    #[arg(long)]
    flatten: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Neighbors for the knn baseline.
    #[arg(long, default_value_t = groove::baseline::DEFAULT_K)]
    k: usize,
    /// Skip the baseline comparison.
    #[arg(long)]
    no_baselines: bool,
    #[arg(long, default_value_t = groove::metrics::BOOTSTRAP_RESAMPLES)]
    resamples: usize,
    /// Seeds the bootstrap.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// KL direction: predicted-truth or truth-predicted.
    #[arg(long, default_value = "predicted-truth")]
    direction: String,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    report: ReportFormat,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One of mlp, seq2seq, seq2seq-vib, transfer, infill, tap2drum; all when omitted.
    #[arg(long)]
    model: Option<String>,
    /// Encoder, latent and decoder size (hidden width for the mlp).
    #[arg(long, default_value_t = 4)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, value_enum, default_value_t)]
    report: ReportFormat,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Stats(a) => commands::stats(a),
        Command::Train(a) => commands::train(a),
        Command::Humanize(a) => commands::humanize(a),
        Command::Infill(a) => commands::infill(a),
        Command::Tap2drum(a) => commands::tap2drum(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
