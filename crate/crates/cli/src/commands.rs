use std::collections::BTreeMap;
use std::path::Path;

use groove::baseline::{linear_fit, TrainStats};
use groove::checkpoint::{self, RunRecord};
use groove::corpus::read_source_info;
use groove::ingest::{ingest as ingest_files, read_midi_dir, IngestOptions};
use groove::metrics::{onbeat_offbeat_stats, EvalConfig, KlDirection, MetricsReport};
use groove::neural::gradcheck::{check_architecture, Architecture, DEFAULT_STEP};
use groove::neural::{mlp_train, train_seq2seq, LatentMode};
use groove::representation::{DEFAULT_STEPS, STEPS_PER_BAR};
use groove::transforms::{flatten_to_taps, remove_voice, HI_HATS};
use groove::{Corpus, DrumCategory, Family, GrooveTensor, Model, Seq2Seq, Seq2SeqDims, Task, TrainConfig};
use serde::Serialize;

use crate::failure::{at_path, Failure};
use crate::render::{self, Performance};
use crate::{EvalArgs, GradcheckArgs, InfillArgs, IngestArgs, RenderArgs, ReportFormat, SplitArg, StatsArgs, TapArgs, TrainArgs};

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    at_path(Corpus::load(path), path)
}

fn select(corpus: &Corpus, split: SplitArg) -> Vec<GrooveTensor> {
    match split.split() {
        Some(s) => corpus.split(s),
        None => corpus.windows.clone(),
    }
}

fn nonempty(windows: Vec<GrooveTensor>, what: &str) -> Result<Vec<GrooveTensor>, Failure> {
    if windows.is_empty() {
        return Err(Failure::Data(format!("the {what} split has no windows")));
    }
    Ok(windows)
}

fn split_name(split: Option<groove::Split>) -> &'static str {
    split.map_or("all", |s| s.as_str())
}

fn split_arg(split: Option<groove::Split>) -> SplitArg {
    match split {
        Some(groove::Split::Train) => SplitArg::Train,
        Some(groove::Split::Validation) => SplitArg::Validation,
        Some(groove::Split::Test) => SplitArg::Test,
        None => SplitArg::All,
    }
}

pub fn parse_dims(s: &str) -> Result<Seq2SeqDims, Failure> {
    let bad = || Failure::Usage(format!("--dims expects N, E,Z,D or full, got `{s}`"));
    if s == "full" {
        return Ok(Seq2SeqDims::full());
    }
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    match parts[..] {
        [n] if n > 0 => Ok(Seq2SeqDims::uniform(n)),
        [encoder, latent, decoder] if encoder > 0 && latent > 0 && decoder > 0 => Ok(Seq2SeqDims { encoder, latent, decoder }),
        _ => Err(bad()),
    }
}

pub fn parse_categories(s: &str) -> Result<Vec<DrumCategory>, Failure> {
    if matches!(s, "hihat" | "hi-hat" | "hihats") {
        return Ok(HI_HATS.to_vec());
    }
    DrumCategory::from_name(s).map(|c| vec![c]).ok_or_else(|| {
        let names: Vec<&str> = DrumCategory::ALL.iter().map(|c| c.name()).collect();
        Failure::Usage(format!("unknown category `{s}`; expected hihat or one of {}", names.join(", ")))
    })
}

pub fn ingest(a: IngestArgs) -> Result<(), Failure> {
    if a.bars == 0 || a.hop == 0 {
        return Err(Failure::Usage("--bars and --hop must be positive".into()));
    }
    let files = at_path(read_midi_dir(&a.dir), &a.dir)?;
    if files.is_empty() {
        return Err(Failure::Data(format!("no MIDI files under {}", a.dir.display())));
    }
    let info_path = a.info.clone().or_else(|| Some(a.dir.join("info.csv")).filter(|p| p.exists()));
    let info = match &info_path {
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            Some(at_path(read_source_info(file), p)?)
        }
        None => None,
    };
    let opts = IngestOptions { bars: a.bars, hop_bars: a.hop, ..IngestOptions::default() };
    let (corpus, report) = ingest_files(&files, info.as_ref(), &opts);
    for (name, err) in &report.parse_errors {
        eprintln!("skipped {name}: {err}");
    }
    if corpus.is_empty() {
        return Err(Failure::Data("no windows were produced".into()));
    }
    at_path(corpus.save(&a.out), &a.out)?;
    let mut splits = BTreeMap::new();
    for m in &corpus.meta {
        *splits.entry(m.split.as_str()).or_insert(0usize) += 1;
    }
    match a.report {
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                corpus: String,
                fingerprint: String,
                splits: BTreeMap<&'a str, usize>,
                #[serde(flatten)]
                report: &'a groove::ingest::IngestReport,
            }
            print_json(&Out { corpus: a.out.display().to_string(), fingerprint: corpus.fingerprint(), splits, report: &report });
        }
        ReportFormat::Text => {
            println!("files            {} ({} ingested)", report.files, report.ingested_files);
            println!("parse errors     {}", report.parse_errors.len());
            println!("parse warnings   {}", report.parse_warnings);
            println!("not 4/4          {}", report.not_four_four);
            println!("tempo changes    {}", report.tempo_changes);
            println!("unmapped notes   {}", report.unmapped_notes);
            println!("outside windows  {}", report.out_of_window_notes);
            println!("collisions       {}", report.collisions);
            println!("empty windows    {}", report.empty_windows);
            println!("windows          {}", report.windows);
            for (split, n) in &splits {
                println!("  {split:<14} {n}");
            }
            println!("wrote {} (fingerprint {})", a.out.display(), corpus.fingerprint());
        }
    }
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let windows = nonempty(select(&corpus, a.split), split_name(a.split.split()))?;
    let stats = onbeat_offbeat_stats(&windows)?;
    match a.report {
        ReportFormat::Json => print_json(&stats),
        ReportFormat::Text => {
            println!("windows   {}", windows.len());
            println!("on-beat   mean offset {:+.4} over {} notes", stats.on_beat_mean, stats.on_beat_count);
            println!("off-beat  mean offset {:+.4} over {} notes", stats.off_beat_mean, stats.off_beat_count);
            for (g, s) in stats.groups.iter().enumerate() {
                match s {
                    Some(s) => println!("16th {g}    mean {:+.4}  std {:.4}  n={}", s.mean, s.std, s.count),
                    None => println!("16th {g}    too few notes"),
                }
            }
            let peak = stats.on_beat_histogram.iter().chain(&stats.off_beat_histogram).copied().max().unwrap_or(0).max(1);
            println!("offset histogram (on-beat | off-beat)");
            let bins = stats.on_beat_histogram.len();
            for (i, (on, off)) in stats.on_beat_histogram.iter().zip(&stats.off_beat_histogram).enumerate() {
                let lo = -0.5 + i as f64 / bins as f64;
                let bar = |n: usize| "#".repeat(n * 30 / peak);
                println!("{lo:+.2} {:>30} | {}", bar(*on), bar(*off));
            }
        }
    }
    Ok(())
}

struct TrainPlan {
    family: Family,
    task: Task,
    split: Option<groove::Split>,
    config: TrainConfig,
    ridge: f64,
    k: usize,
}

fn plan_from_args(a: &TrainArgs) -> Result<TrainPlan, Failure> {
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        max_steps: a.steps,
        beta_vib: a.beta,
        vib: a.model == Family::Seq2SeqVib,
        kl_anneal_steps: a.kl_anneal,
        seed: a.seed,
        task: a.task,
        transfer_conditioning: a.model == Family::Transfer,
        clip_norm: a.clip,
        dims: parse_dims(&a.dims)?,
        mlp_hidden: a.hidden,
        infill_categories: parse_categories(&a.category)?,
        ..TrainConfig::default()
    };
    Ok(TrainPlan { family: a.model, task: a.task, split: a.split.split(), config, ridge: a.ridge, k: a.k })
}

fn plan_from_record(path: &Path) -> Result<(TrainPlan, String), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let r: RunRecord = serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let config = r.config.clone().unwrap_or_else(|| TrainConfig { seed: r.seed, task: r.task, ..TrainConfig::default() });
    let plan = TrainPlan {
        family: r.family,
        task: r.task,
        split: r.split,
        config,
        ridge: r.ridge.unwrap_or(groove::baseline::DEFAULT_RIDGE),
        k: r.k.unwrap_or(groove::baseline::DEFAULT_K),
    };
    Ok((plan, r.corpus_fingerprint))
}

fn fit(plan: &TrainPlan, train: &[GrooveTensor]) -> Result<(Model, Option<groove::neural::TrainReport>), Failure> {
    if plan.task != Task::Humanize && !matches!(plan.family, Family::Seq2Seq | Family::Seq2SeqVib) {
        return Err(Failure::Usage(format!("the {} model only supports humanize", plan.family)));
    }
    Ok(match plan.family {
        Family::Quantized => (Model::Quantized(TrainStats::from_corpus(train)?), None),
        Family::Linear => (Model::Linear(linear_fit(train, plan.ridge)?), None),
        Family::Knn => {
            if plan.k == 0 || plan.k > train.len() {
                return Err(Failure::Usage(format!("--k must be between 1 and the {} training windows", train.len())));
            }
            (Model::Knn { k: plan.k, train: train.to_vec() }, None)
        }
        Family::Mlp => {
            let (m, r) = mlp_train(train, &plan.config)?;
            (Model::Mlp(m), Some(r))
        }
        Family::Seq2Seq | Family::Seq2SeqVib => {
            let (m, r) = train_seq2seq(train, &plan.config)?;
            (Model::Seq2Seq(m), Some(r))
        }
        Family::Transfer => {
            let (m, r) = train_seq2seq(train, &plan.config)?;
            (Model::Transfer { model: m, train: train.to_vec() }, Some(r))
        }
    })
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus)?;
    let fingerprint = corpus.fingerprint();
    let plan = match &a.from_record {
        Some(path) => {
            let (plan, recorded) = plan_from_record(path)?;
            if recorded != fingerprint {
                return Err(Failure::Data(format!("corpus fingerprint {fingerprint} differs from the recorded {recorded}")));
            }
            plan
        }
        None => plan_from_args(&a)?,
    };
    let train = nonempty(select(&corpus, split_arg(plan.split)), split_name(plan.split))?;
    let (model, report) = fit(&plan, &train)?;
    let neural = plan.family.is_neural();
    let record = RunRecord {
        family: plan.family,
        task: plan.task,
        seed: plan.config.seed,
        corpus_fingerprint: fingerprint,
        split: plan.split,
        train_windows: train.len(),
        config: neural.then(|| plan.config.clone()),
        ridge: (plan.family == Family::Linear).then_some(plan.ridge),
        k: (plan.family == Family::Knn).then_some(plan.k),
        final_loss: report.as_ref().and_then(|r| r.final_loss()),
        steps: report.as_ref().map(|r| r.steps),
    };
    at_path(checkpoint::save(&a.checkpoint, &model, &record), &a.checkpoint)?;
    match a.report {
        ReportFormat::Json => print_json(&record),
        ReportFormat::Text => {
            println!("trained {} for {} on {} windows", plan.family, plan.task, train.len());
            if let (Some(loss), Some(steps)) = (record.final_loss, record.steps) {
                println!("final loss {loss:.6} after {steps} steps");
            }
            println!("wrote {} and {}", a.checkpoint.display(), checkpoint::sidecar_path(&a.checkpoint).display());
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    at_path(checkpoint::load(path), path)
}

fn window_steps(model: &Model) -> Result<usize, Failure> {
    let steps = model.steps().unwrap_or(DEFAULT_STEPS);
    if steps % STEPS_PER_BAR != 0 {
        return Err(Failure::Usage(format!("checkpoint windows of {steps} steps are not whole bars")));
    }
    Ok(steps)
}

fn sequence_model(model: &Model, task: Task) -> Result<&Seq2Seq, Failure> {
    match model {
        Model::Seq2Seq(m) if m.task == task => Ok(m),
        _ => Err(Failure::Usage(format!("a {} checkpoint for {} cannot {task}", model.family(), model.task()))),
    }
}

fn latent(r: &RenderArgs, window: usize) -> LatentMode {
    match r.temperature {
        Some(temperature) => LatentMode::Sample { temperature, seed: r.seed.wrapping_add(window as u64) },
        None => LatentMode::Mean,
    }
}

fn finish(r: &RenderArgs, perf: &Performance, outputs: Vec<GrooveTensor>) -> Result<(), Failure> {
    let tempo = r.tempo.unwrap_or(perf.tempo_bpm);
    if !(tempo > 0.0 && tempo.is_finite()) {
        return Err(Failure::Usage("--tempo must be positive".into()));
    }
    let notes = render::write_performance(&r.out, &outputs, tempo)?;
    eprintln!("wrote {} notes in {} windows to {}", notes, outputs.len(), r.out.display());
    if perf.unmapped > 0 {
        eprintln!("ignored {} notes with unmapped pitches", perf.unmapped);
    }
    Ok(())
}

pub fn humanize(r: RenderArgs) -> Result<(), Failure> {
    let model = load_model(&r.checkpoint)?;
    let perf = render::drum_performance(&render::read_midi(&r.input)?);
    let windows = render::drum_windows(&perf, window_steps(&model)?);
    let outputs = windows
        .iter()
        .enumerate()
        .map(|(i, w)| match (&model, r.temperature) {
            (Model::Seq2Seq(m), Some(_)) => m.humanize(w, latent(&r, i)),
            _ => model.humanize(w),
        })
        .collect::<groove::Result<Vec<_>>>()?;
    finish(&r, &perf, outputs)
}

pub fn infill(a: InfillArgs) -> Result<(), Failure> {
    let r = &a.render;
    let model = load_model(&r.checkpoint)?;
    let m = sequence_model(&model, Task::Infill)?;
    if let Some(c) = &a.category {
        let mut requested = parse_categories(c)?;
        let mut trained = m.infill_categories.clone();
        requested.sort();
        trained.sort();
        if requested != trained {
            let names: Vec<&str> = trained.iter().map(|c| c.name()).collect();
            return Err(Failure::Usage(format!("checkpoint regenerates {}, not `{c}`", names.join(" and "))));
        }
    }
    let perf = render::drum_performance(&render::read_midi(&r.input)?);
    let windows = render::drum_windows(&perf, m.steps);
    let mut outputs = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let (partial, _) = remove_voice(w, &m.infill_categories);
        outputs.push(m.infill(&partial, latent(r, i))?);
    }
    let changed = windows.iter().zip(&outputs).fold([0usize; groove::NUM_INSTRUMENTS], |mut acc, (w, o)| {
        acc.iter_mut().zip(render::cells_changed(w, o)).for_each(|(a, c)| *a += c);
        acc
    });
    for (c, n) in DrumCategory::ALL.iter().zip(changed).filter(|(_, n)| *n > 0) {
        eprintln!("{c}: {n} steps changed");
    }
    finish(r, &perf, outputs)
}

pub fn tap2drum(a: TapArgs) -> Result<(), Failure> {
    let r = &a.render;
    let model = load_model(&r.checkpoint)?;
    let m = sequence_model(&model, Task::Tap2Drum)?;
    let seq = render::read_midi(&r.input)?;
    let (perf, taps) = if a.flatten {
        let perf = render::drum_performance(&seq);
        let taps = render::drum_windows(&perf, m.steps).iter().map(flatten_to_taps).collect::<Vec<_>>();
        (perf, taps)
    } else {
        let perf = render::tap_performance(&seq);
        let taps = render::tap_windows(&perf, m.steps);
        (perf, taps)
    };
    let outputs = taps.iter().enumerate().map(|(i, t)| m.tap2drum(t, latent(r, i))).collect::<groove::Result<Vec<_>>>()?;
    finish(r, &perf, outputs)
}

#[derive(Serialize)]
struct EvalOutput {
    task: Task,
    split: &'static str,
    windows: usize,
    corpus_fingerprint: String,
    checkpoint: String,
    seed: u64,
    resamples: usize,
    direction: &'static str,
    models: BTreeMap<String, MetricsReport>,
}

fn predict(model: &Model, truth: &[GrooveTensor]) -> groove::Result<Vec<GrooveTensor>> {
    truth
        .iter()
        .map(|g| match model.task() {
            Task::Humanize => model.humanize(&groove::transforms::to_score(g)),
            Task::Infill => model.infill(g),
            Task::Tap2Drum => model.tap2drum(&flatten_to_taps(g)),
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let direction = match a.direction.as_str() {
        "predicted-truth" => KlDirection::PredictedToTruth,
        "truth-predicted" => KlDirection::TruthToPredicted,
        other => return Err(Failure::Usage(format!("unknown --direction `{other}`"))),
    };
    let corpus = load_corpus(&a.corpus)?;
    let model = load_model(&a.checkpoint)?;
    let truth = nonempty(select(&corpus, a.split), split_name(a.split.split()))?;
    let cfg = EvalConfig { resamples: a.resamples, seed: a.seed, direction };
    let mut models = BTreeMap::new();
    models.insert(model.family().to_string(), MetricsReport::evaluate(&predict(&model, &truth)?, &truth, &cfg)?);
    if model.task() == Task::Humanize && !a.no_baselines {
        let train = nonempty(corpus.split(groove::Split::Train), "train")?;
        let mut baselines = vec![Model::Quantized(TrainStats::from_corpus(&train)?), Model::Linear(linear_fit(&train, groove::baseline::DEFAULT_RIDGE)?)];
        if a.k >= 1 && a.k <= train.len() {
            baselines.push(Model::Knn { k: a.k, train });
        } else {
            eprintln!("skipping the knn baseline: --k {} exceeds the {} training windows", a.k, train.len());
        }
        for b in baselines {
            let name = match &b {
                Model::Knn { k, .. } => format!("knn-{k}"),
                other => other.family().to_string(),
            };
            models.entry(name).or_insert(MetricsReport::evaluate(&predict(&b, &truth)?, &truth, &cfg)?);
        }
    }
    let out = EvalOutput {
        task: model.task(),
        split: split_name(a.split.split()),
        windows: truth.len(),
        corpus_fingerprint: corpus.fingerprint(),
        checkpoint: a.checkpoint.display().to_string(),
        seed: a.seed,
        resamples: a.resamples,
        direction: direction.label(),
        models,
    };
    let json = serde_json::to_string_pretty(&out).expect("serializable");
    if let Some(path) = &a.out {
        std::fs::write(path, json.clone() + "\n").map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    match a.report {
        ReportFormat::Json => println!("{json}"),
        ReportFormat::Text => {
            println!("{} on {} windows of the {} split, {}", out.task, out.windows, out.split, out.direction);
            for (name, report) in &out.models {
                println!("\n{name}");
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let archs: Vec<Architecture> = match &a.model {
        None => Architecture::ALL.to_vec(),
        Some(name) => vec![Architecture::ALL.into_iter().find(|x| x.name() == name).ok_or_else(|| {
            let names: Vec<&str> = Architecture::ALL.iter().map(|x| x.name()).collect();
            Failure::Usage(format!("unknown architecture `{name}`; expected one of {}", names.join(", ")))
        })?],
    };
    if a.dims == 0 {
        return Err(Failure::Usage("--dims must be positive".into()));
    }
    #[derive(Serialize)]
    struct Row {
        model: &'static str,
        max_relative_error: f64,
        checked: usize,
        skipped: usize,
        pass: bool,
    }
    let rows: Vec<Row> = archs
        .into_iter()
        .map(|arch| {
            let r = check_architecture(arch, a.dims, DEFAULT_STEP, a.seed);
            Row { model: arch.name(), max_relative_error: r.max_relative_error, checked: r.checked, skipped: r.skipped, pass: r.max_relative_error < a.tolerance }
        })
        .collect();
    match a.report {
        ReportFormat::Json => print_json(&rows),
        ReportFormat::Text => {
            for r in &rows {
                let verdict = if r.pass { "ok" } else { "FAIL" };
                println!("{:<12} {:.2e}  {} checked, {} skipped  {verdict}", r.model, r.max_relative_error, r.checked, r.skipped);
            }
        }
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.model).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check above {:e} for {}", a.tolerance, failed.join(", "))))
    }
}
