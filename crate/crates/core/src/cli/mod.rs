//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 validation failure (malformed data, checksum or regeneration mismatch).

mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use output::{hex, outln, timing, Format, Record};
use rtd_forge::config::{Overrides, RunConfig};
use rtd_forge::corpus::{build_freq_table, corpus_vocab_size, load_corpus, Vocab};
use rtd_forge::costmodel::{compare, overall_ratios, ArchitectureRow, AuxMode, CostConfig, ModelCost};
use rtd_forge::curriculum::{CurriculumConfig, Level};
use rtd_forge::datapack::{read_epoch, read_epoch_checked, PackedExample};
use rtd_forge::pipeline::{dump_all, Session};
use rtd_forge::rtd::{rtd_loss, rtd_positions, RtdTargets};
use rtd_forge::{Error, ErrorClass, Result};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Parser)]
#[command(name = "rtd-forge", version, about = "Replaced-token-detection data generation and cost accounting")]
struct Cli {
    /// Output style; `machine` prints one JSON object per line.
    #[arg(long, value_enum, global = true, default_value = "human")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and write every epoch of a run.
    Dump(RunArgs),
    /// Regenerate dumped epochs and compare checksums.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Epoch files to check; defaults to every dump in the output directory.
        files: Vec<PathBuf>,
    },
    /// FLOPs and memory for a main/auxiliary model pair.
    Cost(CostArgs),
    /// Sample a curriculum schedule on an even grid of progress values.
    SchedulePreview(PreviewArgs),
    /// Token counts, rank-frequency table and entropy of a corpus.
    Stats(StatsArgs),
    /// RTD loss of replace-probability predictions against a dumped epoch.
    Losses(LossArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    seq_len: Option<u32>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// Inline provider spec, e.g. `smoothed_one_hot:alpha=0.35`.
    #[arg(long)]
    provider: Option<String>,
    /// Inline curriculum spec, e.g. `exp_decay_t:T0=2,tau=0.1`.
    #[arg(long)]
    curriculum: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let o = Overrides {
            corpus: self.corpus.clone(),
            seed: self.seed,
            epochs: self.epochs,
            seq_len: self.seq_len,
            mask_ratio: self.mask_ratio,
            provider: self.provider.clone(),
            curriculum: self.curriculum.clone(),
            out: self.out.clone(),
        };
        RunConfig::load(self.config.as_deref(), &o)
    }
}

#[derive(Args)]
struct CostArgs {
    /// Architecture preset: base or large.
    #[arg(long, default_value = "base", conflicts_with = "config")]
    preset: String,
    /// TOML file with an architecture row and optional `[setup]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode compared against a jointly trained auxiliary model.
    #[arg(long, value_parser = parse_aux_mode)]
    aux_mode: Option<AuxMode>,
    #[arg(long)]
    batch_size: Option<u64>,
    #[arg(long)]
    seq_len: Option<u64>,
}

fn parse_aux_mode(s: &str) -> std::result::Result<AuxMode, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "trained_shared_embed" | "trained" => Ok(AuxMode::TrainedSharedEmbed),
        "inference_only" | "inference" => Ok(AuxMode::InferenceOnly),
        "offline" => Ok(AuxMode::Offline),
        _ => Err(format!("unknown aux mode `{s}`")),
    }
}

#[derive(Args)]
struct PreviewArgs {
    /// Inline curriculum spec; defaults to the run config's, then to `exp_decay_t`.
    #[arg(long)]
    curriculum: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    points: usize,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Defaults to the size recorded in the corpus header.
    #[arg(long)]
    vocab_size: Option<u32>,
    /// Count special tokens too.
    #[arg(long)]
    include_special: bool,
    /// Rows of the rank-frequency table to print.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Args)]
struct LossArgs {
    epoch_file: PathBuf,
    /// Text file, one line per example: replace probabilities for its non-PAD positions.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = 0)]
    pad_id: u32,
    /// Require the dump to use this vocabulary size.
    #[arg(long)]
    vocab_size: Option<u32>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Io => EXIT_IO,
        ErrorClass::Validation => EXIT_VALIDATION,
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Dump(a) => cmd_dump(a, cli.format),
        Command::Verify { run, files } => cmd_verify(run, files, cli.format),
        Command::Cost(a) => cmd_cost(a, cli.format),
        Command::SchedulePreview(a) => cmd_schedule_preview(a, cli.format),
        Command::Stats(a) => cmd_stats(a, cli.format),
        Command::Losses(a) => cmd_losses(a, cli.format),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn level_parts(level: Level<f64>) -> (&'static str, &'static str, f64) {
    match level {
        Level::Temperature(t) => ("temperature", "T", t),
        Level::Gamma(g) => ("gamma", "gamma", g),
    }
}

fn cmd_dump(a: &RunArgs, format: Format) -> Result<i32> {
    let cfg = a.load()?;
    let session = Session::open(cfg)?;
    let mut total = (0u64, 0u64, 0u64);
    dump_all(&session, |s, m, elapsed| {
        let (kind, short, value) = level_parts(s.level);
        total.0 += s.examples;
        total.1 += s.masked;
        total.2 += s.replaced;
        let file = s.path.as_deref().map(|p| p.display().to_string()).unwrap_or_default();
        match format {
            Format::Human => outln!(
                "epoch {:>4}  u={:.4}  {short}={value:.6}  examples={}  masked={}  replaced={}  masked_replace={:.4}  replace_rate={:.4}  checksum={}  {file}",
                s.epoch,
                s.u,
                s.examples,
                s.masked,
                s.replaced,
                s.masked_replace_fraction(),
                s.replace_rate(),
                hex(m.checksum)
            ),
            Format::Machine => outln!(
                "{}",
                Record::new()
                    .field("epoch", s.epoch)
                    .field("u", s.u)
                    .field("level_kind", kind)
                    .field("level", value)
                    .field("examples", s.examples)
                    .field("masked", s.masked)
                    .field("replaced", s.replaced)
                    .field("masked_replace_fraction", s.masked_replace_fraction())
                    .field("replace_rate", s.replace_rate())
                    .field("checksum", hex(m.checksum))
                    .field("file", file)
                    .to_line()
            ),
        }
        let secs = elapsed.as_secs_f64();
        timing(&format!(
            "epoch {} took {secs:.3} s ({:.0} examples/s)",
            s.epoch,
            s.examples as f64 / secs.max(1e-9)
        ));
    })?;
    if format == Format::Human {
        outln!(
            "total  examples={}  masked={}  replaced={}  masked_replace={:.4}",
            total.0,
            total.1,
            total.2,
            total.2 as f64 / total.1.max(1) as f64
        );
    }
    Ok(0)
}

fn epoch_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rtde"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_verify(a: &RunArgs, files: &[PathBuf], format: Format) -> Result<i32> {
    let cfg = a.load()?;
    let files = if files.is_empty() { epoch_files(&cfg.out)? } else { files.to_vec() };
    if files.is_empty() {
        return Err(Error::InvalidParam(format!("no epoch files in {}", cfg.out.display())));
    }
    let session = Session::open(cfg)?;
    let mut differing = 0;
    for f in &files {
        let (manifest, _) = read_epoch_checked(f, session.vocab().size())?;
        let same = session.verify_regeneration(&manifest)?;
        differing += usize::from(!same);
        match format {
            Format::Human => outln!(
                "epoch {:>4}  {}  {}",
                manifest.epoch,
                if same { "identical" } else { "DIFFERS" },
                f.display()
            ),
            Format::Machine => outln!(
                "{}",
                Record::new()
                    .field("epoch", manifest.epoch)
                    .field("identical", same)
                    .field("checksum", hex(manifest.checksum))
                    .field("file", f.display().to_string())
                    .to_line()
            ),
        }
    }
    if format == Format::Human {
        outln!("{} of {} epochs identical", files.len() - differing, files.len());
    }
    Ok(if differing == 0 { 0 } else { EXIT_VALIDATION })
}

fn cmd_cost(a: &CostArgs, format: Format) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            CostConfig::from_toml_str(&text)?
        }
        None => CostConfig {
            arch: ArchitectureRow::preset(&a.preset)?,
            setup: Default::default(),
        },
    };
    if let Some(m) = a.aux_mode {
        cfg.setup.aux_mode = m;
    }
    if let Some(b) = a.batch_size {
        cfg.setup.batch_size = b;
    }
    if let Some(s) = a.seq_len {
        cfg.arch.seq_len = s;
    }
    let (main, aux) = cfg.arch.models();
    let c = compare(&main, &aux, &cfg.setup)?;
    let r = overall_ratios(&c);
    let gflops = |m: &ModelCost| m.training_flops as f64 / 1e9;
    let gb = |m: &ModelCost| m.total_bytes as f64 / 1e9;
    let fast_name = cfg.setup.aux_mode.name();
    match format {
        Format::Human => {
            outln!("Computation (GFLOPs per sequence, training)");
            outln!("{:<34}{:>12}{:>12}{:>12}", "", "Main", "Aux", "Total");
            for (name, rep) in [("original (aux trained_shared_embed)".to_string(), &c.original), (format!("fast (aux {fast_name})"), &c.fast)] {
                outln!("{name:<34}{:>12.1}{:>12.1}{:>12.1}", gflops(&rep.main), gflops(&rep.aux), gflops(&rep.total));
            }
            outln!("{:<34}{:>12.2}{:>12.2}{:>12.2}", "ratio", 1.0, r.aux_compute_ratio, r.compute_ratio);
            outln!("");
            outln!("Memory (GB, batch {})", cfg.setup.batch_size);
            outln!("{:<34}{:>12}{:>12}{:>12}", "", "Main", "Aux", "Total");
            for (name, rep) in [("original (aux trained_shared_embed)".to_string(), &c.original), (format!("fast (aux {fast_name})"), &c.fast)] {
                outln!("{name:<34}{:>12.2}{:>12.2}{:>12.2}", gb(&rep.main), gb(&rep.aux), gb(&rep.total));
            }
            outln!("{:<34}{:>12.2}{:>12.2}{:>12.2}", "ratio", 1.0, r.aux_memory_ratio, r.memory_ratio);
            outln!("");
            outln!(
                "params  main={}  aux={}  embed={}",
                c.original.main.param_count,
                rtd_forge::costmodel::param_count(&aux, true),
                main.embedding_params()
            );
        }
        Format::Machine => {
            for (row, rep) in [("original", &c.original), ("fast", &c.fast)] {
                for (model, m) in [("main", &rep.main), ("aux", &rep.aux), ("total", &rep.total)] {
                    outln!(
                        "{}",
                        Record::new()
                            .field("row", row)
                            .field("aux_mode", rep.aux_mode.name())
                            .field("model", model)
                            .field("forward_flops", m.forward_flops)
                            .field("backward_flops", m.backward_flops)
                            .field("training_flops", m.training_flops)
                            .field("param_count", m.param_count)
                            .field("param_bytes", m.param_bytes)
                            .field("activation_bytes", m.activation_bytes)
                            .field("total_bytes", m.total_bytes)
                            .to_line()
                    );
                }
            }
            outln!(
                "{}",
                Record::new()
                    .field("row", "ratio")
                    .field("compute_ratio", r.compute_ratio)
                    .field("memory_ratio", r.memory_ratio)
                    .field("aux_compute_ratio", r.aux_compute_ratio)
                    .field("aux_memory_ratio", r.aux_memory_ratio)
                    .to_line()
            );
        }
    }
    Ok(0)
}

fn cmd_schedule_preview(a: &PreviewArgs, format: Format) -> Result<i32> {
    if a.points < 2 {
        return Err(Error::Config(format!("--points must be at least 2, got {}", a.points)));
    }
    let cur = match (&a.curriculum, &a.config) {
        (Some(s), _) => CurriculumConfig::parse_inline(s)?,
        (None, Some(p)) => RunConfig::load(Some(p), &Overrides::default())?.curriculum,
        (None, None) => CurriculumConfig::default(),
    };
    let schedule = cur.schedule::<f64>()?;
    let (kind, short, _) = level_parts(schedule.level(0.0)?);
    if format == Format::Human {
        outln!("# {}", cur.kind.name());
        outln!("{:>10}  {:>14}", "u", short);
    }
    for i in 0..a.points {
        let u = i as f64 / (a.points - 1) as f64;
        let v = schedule.level(u)?.value();
        match format {
            Format::Human => outln!("{u:>10.4}  {v:>14.10}"),
            Format::Machine => outln!(
                "{}",
                Record::new()
                    .field("schedule", cur.kind.name())
                    .field("u", u)
                    .field(if kind == "temperature" { "temperature" } else { "gamma" }, v)
                    .to_line()
            ),
        }
    }
    Ok(0)
}

fn cmd_stats(a: &StatsArgs, format: Format) -> Result<i32> {
    let size = match a.vocab_size {
        Some(s) => s,
        None => corpus_vocab_size(&a.corpus)?,
    };
    let corpus = load_corpus(&a.corpus, Vocab::with_size(size)?)?;
    let freq = build_freq_table(&corpus, !a.include_special)?;
    let ranked = freq.ranked();
    let types = ranked.iter().filter(|(_, c)| *c > 0).count();
    match format {
        Format::Human => {
            outln!("documents       {}", corpus.documents().len());
            outln!("empty skipped   {}", corpus.skipped_empty());
            outln!("tokens          {}", corpus.token_count());
            outln!("counted tokens  {}", freq.total());
            outln!("distinct types  {types}");
            outln!("entropy (nats)  {:.6}", freq.entropy());
            outln!("");
            outln!("{:>6}  {:>8}  {:>12}  {:>10}", "rank", "id", "count", "freq");
        }
        Format::Machine => outln!(
            "{}",
            Record::new()
                .field("documents", corpus.documents().len())
                .field("skipped_empty", corpus.skipped_empty())
                .field("tokens", corpus.token_count())
                .field("counted_tokens", freq.total())
                .field("types", types)
                .field("entropy", freq.entropy())
                .to_line()
        ),
    }
    for (rank, (id, count)) in ranked.iter().take_while(|(_, c)| *c > 0).take(a.top).enumerate() {
        let f = *count as f64 / freq.total() as f64;
        match format {
            Format::Human => outln!("{:>6}  {id:>8}  {count:>12}  {f:>10.6}", rank + 1),
            Format::Machine => outln!(
                "{}",
                Record::new()
                    .field("rank", rank + 1)
                    .field("id", *id)
                    .field("count", *count)
                    .field("freq", f)
                    .to_line()
            ),
        }
    }
    Ok(0)
}

/// Expands one prediction line to a full-length vector; padding slots get 0.5 and are ignored.
fn expand_predictions(line: &str, ex: &PackedExample, pad: u32, index: usize) -> Result<Vec<f64>> {
    let values = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|p| (0.0..=1.0).contains(p))
                .ok_or_else(|| Error::InvalidParam(format!("example {index}: `{t}` is not a probability in [0, 1]")))
        })
        .collect::<Result<Vec<_>>>()?;
    let need = rtd_positions(ex, pad);
    if values.len() != need {
        return Err(Error::InvalidParam(format!(
            "example {index}: {} predictions for {need} non-PAD positions",
            values.len()
        )));
    }
    let mut it = values.into_iter();
    Ok((0..ex.target_len())
        .map(|i| if ex.is_padding(i, pad) { 0.5 } else { it.next().unwrap() })
        .collect())
}

fn cmd_losses(a: &LossArgs, format: Format) -> Result<i32> {
    let (manifest, examples) = match a.vocab_size {
        Some(v) => read_epoch_checked(&a.epoch_file, v)?,
        None => read_epoch(&a.epoch_file)?,
    };
    let text = std::fs::read_to_string(&a.predictions).map_err(|e| Error::Io { path: a.predictions.clone(), source: e })?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() as u64 != manifest.example_count {
        return Err(Error::InvalidParam(format!(
            "{} prediction lines for {} examples",
            lines.len(),
            manifest.example_count
        )));
    }
    let mut sum = 0.0f64;
    let mut positions = 0u64;
    for (i, (ex, line)) in examples.zip(&lines).enumerate() {
        let pred = expand_predictions(line, &ex, a.pad_id, i)?;
        sum += rtd_loss(&pred, &ex, a.pad_id)?;
        positions += rtd_positions(&ex, a.pad_id) as u64;
    }
    let mean = if positions == 0 { 0.0 } else { sum / positions as f64 };
    match format {
        Format::Human => {
            outln!("examples        {}", manifest.example_count);
            outln!("positions       {positions}");
            outln!("rtd_loss sum    {sum:.9}");
            outln!("per-token mean  {mean:.9}");
        }
        Format::Machine => outln!(
            "{}",
            Record::new()
                .field("examples", manifest.example_count)
                .field("positions", positions)
                .field("rtd_loss_sum", sum)
                .field("per_token_mean", mean)
                .to_line()
        ),
    }
    Ok(0)
}
