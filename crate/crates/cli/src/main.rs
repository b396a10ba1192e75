use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use s2sfe::bpe::{self, BpeCodec, BpeConfig};
use s2sfe::corpus::{self, load_parallel, read_sentences, write_lines, Sentence, SplitSpec, Stage, TeacherCommand};
use s2sfe::metrics::{self, BleuConfig, ChrfConfig, ScriptSet};
use s2sfe::model::checkpoint;
use s2sfe::model::{TrainSpec, TransformerConfig, ValidationPlan};
use s2sfe::pipeline::{self, DecodeStrategy, Mode, ModelFiles, Pipeline, PipelineConfig, SpliceMode, TrainJob};
use s2sfe::splice::{self, ChunkPlan, SpliceConfig};
use s2sfe::synth::{self, SentenceShape};

#[derive(Parser)]
#[command(name = "s2sfe", version, about = "Sequence-to-sequence TTS frontend tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and split parallel corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Learn, apply and undo byte pair encoding.
    #[command(subcommand)]
    Bpe(BpeCmd),
    /// Train a model for one stage.
    Train(TrainArgs),
    /// Translate a file of sentences.
    Translate(TranslateArgs),
    /// Translate a test corpus and score it.
    Eval(EvalArgs),
    /// Chunk long sentences or splice translated chunks.
    #[command(subcommand)]
    Splice(SpliceCmd),
    /// Corpus BLEU or chrF3 of a hypothesis file.
    #[command(subcommand)]
    Score(ScoreCmd),
    /// Reports over system outputs.
    #[command(subcommand)]
    Report(ReportCmd),
    /// The built-in toy locale.
    #[command(subcommand)]
    Toy(ToyCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Deduplicate and cut a parallel corpus into train, valid and test files.
    Split {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long, default_value = "combined")]
        stage: Stage,
        #[arg(long, default_value_t = 500)]
        valid: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Writes train/valid/test .src and .tgt files here.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a teacher command over raw sentences to get targets.
    Teacher {
        #[arg(long)]
        input: PathBuf,
        /// Command line; `{stage}` is replaced by the stage name.
        #[arg(long)]
        command: String,
        #[arg(long, default_value = "combined")]
        stage: Stage,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
    },
}

#[derive(Subcommand)]
enum BpeCmd {
    /// Learn a joint merge table from one or more text files.
    Learn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 32000)]
        merges: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment text into subword tokens.
    Apply {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Join subword tokens back into words.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Desk,
    Paper,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    valid_src: PathBuf,
    #[arg(long)]
    valid_tgt: PathBuf,
    #[arg(long, default_value = "combined")]
    stage: Stage,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long, default_value_t = 0.3)]
    lr: f32,
    #[arg(long, default_value_t = 0)]
    warmup: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 20000)]
    max_steps: usize,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, default_value_t = 4)]
    patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    min_delta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// Key = value pipeline file; other model flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    combined_model: Option<PathBuf>,
    #[arg(long)]
    combined_codec: Option<PathBuf>,
    #[arg(long)]
    normalization_model: Option<PathBuf>,
    #[arg(long)]
    normalization_codec: Option<PathBuf>,
    #[arg(long)]
    pronunciation_model: Option<PathBuf>,
    #[arg(long)]
    pronunciation_codec: Option<PathBuf>,
    /// `greedy` or `beam:K`.
    #[arg(long, value_parser = parse_decode)]
    decode: Option<DecodeStrategy>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    /// `on`, `off` or `both` (eval only scores both variants).
    #[arg(long)]
    splice: Option<String>,
    #[arg(long)]
    locale: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: s2sfe::Error| e.to_string())
}

fn parse_decode(s: &str) -> std::result::Result<DecodeStrategy, String> {
    s.parse().map_err(|e: s2sfe::Error| e.to_string())
}

impl ModelArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::new(Mode::Single),
        };
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        let pair = |m: &Option<PathBuf>, c: &Option<PathBuf>, slot: &mut Option<ModelFiles>| -> Result<()> {
            match (m, c) {
                (Some(model), Some(codec)) => {
                    *slot = Some(ModelFiles {
                        model: model.clone(),
                        codec: codec.clone(),
                    })
                }
                (None, None) => {}
                _ => bail!("model and codec flags must be given together"),
            }
            Ok(())
        };
        pair(&self.combined_model, &self.combined_codec, &mut cfg.combined)?;
        pair(&self.normalization_model, &self.normalization_codec, &mut cfg.normalization)?;
        pair(&self.pronunciation_model, &self.pronunciation_codec, &mut cfg.pronunciation)?;
        if self.mode.is_none() && self.config.is_none() && cfg.normalization.is_some() && cfg.combined.is_none() {
            cfg.mode = Mode::Dual;
        }
        if let Some(d) = self.decode {
            cfg.decode = d;
        }
        if let Some(l) = &self.locale {
            cfg.locale = l.clone();
        }
        if self.max_len.is_some() {
            cfg.max_len = self.max_len;
        }
        let base = match cfg.splice {
            SpliceMode::On(c) | SpliceMode::Both(c) => c,
            SpliceMode::Off => SpliceConfig::default(),
        };
        let window = self.window.unwrap_or(base.window);
        let overlap = self.overlap.unwrap_or(base.overlap);
        let splice_cfg = SpliceConfig::new(window, overlap)?;
        let mode = match (self.splice.as_deref(), cfg.splice) {
            (Some("on"), _) => SpliceMode::On(splice_cfg),
            (Some("off"), _) => SpliceMode::Off,
            (Some("both"), _) => SpliceMode::Both(splice_cfg),
            (Some(other), _) => bail!("--splice must be on, off or both, got {other:?}"),
            (None, SpliceMode::Off) => SpliceMode::Off,
            (None, SpliceMode::On(_)) => SpliceMode::On(splice_cfg),
            (None, SpliceMode::Both(_)) => SpliceMode::Both(splice_cfg),
        };
        cfg.splice = mode;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TranslateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Stage of the test corpus; defaults to combined.
    #[arg(long, default_value = "combined")]
    stage: Stage,
    /// Human labels (`index better|equal|worse` lines) for the diff report.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the per-sentence diff records as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SpliceCmd {
    /// Write `sentence<TAB>start-end<TAB>text` lines, one per window.
    Chunk {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 25)]
        window: usize,
        #[arg(long, default_value_t = 10)]
        overlap: usize,
    },
    /// Splice translated chunk lines (same layout as `chunk`) back into sentences.
    Join {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScoreCmd {
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
    },
    Chrf {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 6)]
        max_n: usize,
        #[arg(long, default_value_t = 3.0)]
        beta: f64,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Categorize sentence-level differences between hypothesis and reference.
    Diff {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "en-US")]
        locale: String,
        /// Comma-separated Unicode script names, overriding the locale default.
        #[arg(long, value_delimiter = ',')]
        scripts: Vec<String>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        tsv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ToyCmd {
    /// Generate distinct raw sentences.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rule-based teacher: reads lines on stdin, writes the stage output on stdout.
    Teacher {
        #[arg(long, default_value = "combined")]
        stage: Stage,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Corpus(cmd) => corpus_cmd(cmd)?,
        Command::Bpe(cmd) => bpe_cmd(cmd)?,
        Command::Train(args) => train_cmd(&args)?,
        Command::Translate(args) => return translate_cmd(&args),
        Command::Eval(args) => return eval_cmd(&args),
        Command::Splice(cmd) => splice_cmd(cmd)?,
        Command::Score(cmd) => score_cmd(cmd)?,
        Command::Report(cmd) => report_cmd(cmd)?,
        Command::Toy(cmd) => toy_cmd(cmd)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Split {
            src,
            tgt,
            stage,
            valid,
            test,
            seed,
            out_dir,
        } => {
            let corpus = load_parallel(&src, &tgt, stage)?;
            let splits = corpus::split(
                &corpus,
                SplitSpec {
                    n_valid: valid,
                    n_test: test,
                    seed,
                },
            )?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for (name, part) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
                part.write(&out_dir.join(format!("{name}.src")), &out_dir.join(format!("{name}.tgt")))?;
            }
            eprintln!(
                "train {} valid {} test {}",
                splits.train.len(),
                splits.valid.len(),
                splits.test.len()
            );
        }
        CorpusCmd::Teacher {
            input,
            command,
            stage,
            out_src,
            out_tgt,
        } => {
            let teacher = TeacherCommand::parse(&command)?;
            let corpus = corpus::build_from_teacher(&input, &teacher, stage)?;
            corpus.write(&out_src, &out_tgt)?;
            eprintln!("{} pairs", corpus.len());
        }
    }
    Ok(())
}

fn bpe_cmd(cmd: BpeCmd) -> Result<()> {
    match cmd {
        BpeCmd::Learn { input, merges, output } => {
            let mut lines = Vec::new();
            for path in &input {
                lines.extend(read_sentences(path)?);
            }
            let codec = BpeCodec::learn(lines.iter().map(|s| s.text()), &BpeConfig::with_merges(merges))?;
            codec.save(&output)?;
            eprintln!("{} merges, vocabulary {}", codec.merges().len(), codec.vocab().len());
        }
        BpeCmd::Apply { codec, input, output } => {
            let codec = BpeCodec::load(&codec)?;
            let out: Vec<Sentence> = read_sentences(&input)?
                .iter()
                .map(|s| Sentence::from_words(&codec.encode(s.text())))
                .collect();
            write_lines(&output, &out)?;
        }
        BpeCmd::Decode { input, output } => {
            let out = read_sentences(&input)?
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    bpe::decode(&s.words())
                        .map(|t| Sentence::new(t).expect("decoded text is one line"))
                        .with_context(|| format!("line {}", i + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            write_lines(&output, &out)?;
        }
    }
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let codec = BpeCodec::load(&args.codec)?;
    let vocab_size = codec.vocab().len();
    let mut model = match args.scale {
        Scale::Desk => TransformerConfig::desk_scale(vocab_size),
        Scale::Paper => TransformerConfig::paper_scale(vocab_size),
    };
    model.num_layers = args.layers.unwrap_or(model.num_layers);
    model.num_heads = args.heads.unwrap_or(model.num_heads);
    model.embed_dim = args.dim.unwrap_or(model.embed_dim);
    model.ffn_dim = args.ffn.unwrap_or(model.ffn_dim);
    model.max_positions = args.max_positions.unwrap_or(model.max_positions);
    model.dropout = args.dropout.unwrap_or(model.dropout);
    model.validate()?;

    let train = load_parallel(&args.train_src, &args.train_tgt, args.stage)?;
    let valid = load_parallel(&args.valid_src, &args.valid_tgt, args.stage)?;
    let mut spec = TrainSpec::new(args.lr, args.batch, args.max_steps, args.seed);
    spec.warmup_steps = args.warmup;
    let job = TrainJob {
        model,
        spec,
        plan: ValidationPlan {
            every: args.eval_every,
            patience: args.patience,
            min_delta: args.min_delta,
        },
        init_seed: args.seed,
    };
    let outcome = pipeline::train_model(&codec, &train, &valid, &job, |step, train_loss, valid_loss| {
        eprintln!("step {step} train {train_loss:.4} valid {valid_loss:.4}");
    })?;
    let mut meta = pipeline::stage_metadata(args.stage);
    meta.insert("best_step".into(), outcome.best_step.to_string());
    checkpoint::save(&args.output, &outcome.params, &meta)?;
    eprintln!(
        "best step {} of {}, saved {}",
        outcome.best_step,
        outcome.losses.len(),
        args.output.display()
    );
    Ok(())
}

fn translate_cmd(args: &TranslateArgs) -> Result<ExitCode> {
    let cfg = args.model.resolve()?;
    let summary = pipeline::run_translate(&cfg, &args.input, &args.output)?;
    for f in &summary.failures {
        eprintln!("sentence {}: {}", f.index + 1, f.message);
    }
    eprintln!(
        "{} sentences, {} failed, {:.1}s",
        summary.sentences,
        summary.failures.len(),
        summary.elapsed.as_secs_f64()
    );
    Ok(if summary.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn eval_cmd(args: &EvalArgs) -> Result<ExitCode> {
    let cfg = args.model.resolve()?;
    let test = load_parallel(&args.src, &args.tgt, args.stage)?;
    let labels = args.labels.as_deref().map(metrics::load_labels).transpose()?;
    let pipeline = Pipeline::load(&cfg)?;
    let report = pipeline::evaluate(&pipeline, &cfg, &test, labels.as_ref())?;
    write_or_print(args.report.as_deref(), &report.render())?;
    if let Some(tsv) = &args.tsv {
        fs::write(tsv, report.diff.to_tsv()).with_context(|| format!("writing {}", tsv.display()))?;
    }
    for (row, t) in report.scores.iter().zip(&report.timings) {
        eprintln!(
            "{} spliced={} {:.1}s",
            row.stage,
            row.spliced,
            t.as_secs_f64()
        );
    }
    let failed = report.scores.iter().any(|r| r.failures > 0);
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn splice_cmd(cmd: SpliceCmd) -> Result<()> {
    match cmd {
        SpliceCmd::Chunk {
            input,
            output,
            window,
            overlap,
        } => {
            let cfg = SpliceConfig::new(window, overlap)?;
            let mut out = String::new();
            for (i, s) in read_sentences(&input)?.iter().enumerate() {
                let words = s.words();
                for &(a, b) in &splice::chunk(words.len(), &cfg).spans {
                    out.push_str(&format!("{i}\t{a}-{b}\t{}\n", words[a..b].join(" ")));
                }
            }
            fs::write(&output, out).with_context(|| format!("writing {}", output.display()))?;
        }
        SpliceCmd::Join { input, output } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut groups: BTreeMap<usize, (Vec<String>, Vec<Vec<String>>)> = BTreeMap::new();
            for (n, line) in text.lines().enumerate() {
                let mut fields = line.splitn(3, '\t');
                let (Some(idx), Some(span), Some(words)) = (fields.next(), fields.next(), fields.next()) else {
                    bail!("line {}: expected sentence<TAB>start-end<TAB>text", n + 1);
                };
                let idx: usize = idx.parse().with_context(|| format!("line {}: bad sentence index", n + 1))?;
                let entry = groups.entry(idx).or_default();
                entry.0.push(span.to_string());
                entry.1.push(words.split_whitespace().map(str::to_string).collect());
            }
            let expected = groups.keys().next_back().map_or(0, |k| k + 1);
            let mut sentences = Vec::with_capacity(expected);
            for i in 0..expected {
                let Some((spans, outputs)) = groups.get(&i) else {
                    bail!("no chunks for sentence {i}");
                };
                let plan = ChunkPlan::parse(&spans.join(","))?;
                sentences.push(Sentence::from_words(&splice::splice(outputs, &plan)?));
            }
            write_lines(&output, &sentences)?;
        }
    }
    Ok(())
}

fn load_pair(hyp: &Path, reference: &Path) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
    Ok((read_sentences(hyp)?, read_sentences(reference)?))
}

fn score_cmd(cmd: ScoreCmd) -> Result<()> {
    match cmd {
        ScoreCmd::Bleu { hyp, reference, max_n } => {
            let (h, r) = load_pair(&hyp, &reference)?;
            println!("{}", metrics::format_bleu(metrics::bleu(&h, &r, &BleuConfig { max_n })?));
        }
        ScoreCmd::Chrf {
            hyp,
            reference,
            max_n,
            beta,
        } => {
            let (h, r) = load_pair(&hyp, &reference)?;
            println!("{}", metrics::format_chrf(metrics::chrf(&h, &r, &ChrfConfig { max_n, beta })?));
        }
    }
    Ok(())
}

fn report_cmd(cmd: ReportCmd) -> Result<()> {
    let ReportCmd::Diff {
        hyp,
        reference,
        locale,
        scripts,
        labels,
        tsv,
    } = cmd;
    let (h, r) = load_pair(&hyp, &reference)?;
    let scripts = if scripts.is_empty() {
        ScriptSet::for_locale(&locale)
    } else {
        ScriptSet::new(&scripts)?
    };
    let labels = labels.as_deref().map(metrics::load_labels).transpose()?;
    let report = metrics::diff_report(&h, &r, scripts, labels.as_ref())?;
    print!("{}", report.to_text());
    if let Some(tsv) = tsv {
        fs::write(&tsv, report.to_tsv()).with_context(|| format!("writing {}", tsv.display()))?;
    }
    Ok(())
}

fn toy_cmd(cmd: ToyCmd) -> Result<()> {
    match cmd {
        ToyCmd::Generate { count, seed, output } => {
            let raw = synth::generate_raw(count, seed, &SentenceShape::default());
            write_lines(&output, &raw)?;
        }
        ToyCmd::Teacher { stage } => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for (i, line) in io::stdin().lock().lines().enumerate() {
                let line = line?;
                let processed = synth::teacher(stage, &line).with_context(|| format!("input line {}", i + 1))?;
                writeln!(out, "{processed}")?;
            }
        }
    }
    Ok(())
}
