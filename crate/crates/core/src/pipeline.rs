//! End-to-end runs: dual (normalize, then pronounce) or single combined model,
//! with optional chunk-and-splice for long sentences.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::bpe::{self, BpeCodec, Vocab};
use crate::corpus::{read_sentences, write_lines, ParallelCorpus, Sentence, Stage};
use crate::error::{Error, Result};
use crate::metrics::{self, BleuConfig, ChrfConfig, DiffReport, HumanLabel, ScriptSet};
use crate::model::checkpoint::{self, Metadata};
use crate::model::{self, EncodedPair, FitOutcome, ParameterSet, SpecialIds, TrainSpec, TransformerConfig, ValidationPlan};
use crate::splice::{self, SpliceConfig};

/// Written in place of a sentence whose translation failed.
pub const FAILED: &str = "⟨failed⟩";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dual,
    Single,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(Mode::Dual),
            "single" => Ok(Mode::Single),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected dual or single"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Dual => "dual",
            Mode::Single => "single",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    Beam(usize),
}

impl FromStr for DecodeStrategy {
    type Err = Error;

    /// `greedy` or `beam:K`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(DecodeStrategy::Greedy);
        }
        let k = s
            .strip_prefix("beam:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown decode strategy {s:?}, expected greedy or beam:K")))?;
        if k == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(DecodeStrategy::Beam(k))
    }
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeStrategy::Greedy => f.write_str("greedy"),
            DecodeStrategy::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

/// When to chunk and splice long sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpliceMode {
    Off,
    On(SpliceConfig),
    /// Score both variants; the spliced one drives the diff report.
    Both(SpliceConfig),
}

impl SpliceMode {
    fn variants(self) -> Vec<Option<SpliceConfig>> {
        match self {
            SpliceMode::Off => vec![None],
            SpliceMode::On(cfg) => vec![Some(cfg)],
            SpliceMode::Both(cfg) => vec![Some(cfg), None],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelFiles {
    pub model: PathBuf,
    pub codec: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub normalization: Option<ModelFiles>,
    pub pronunciation: Option<ModelFiles>,
    pub combined: Option<ModelFiles>,
    pub splice: SpliceMode,
    pub decode: DecodeStrategy,
    pub locale: String,
    /// Output token limit; `None` uses the model's position limit.
    pub max_len: Option<usize>,
}

impl PipelineConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            normalization: None,
            pronunciation: None,
            combined: None,
            splice: SpliceMode::On(SpliceConfig::default()),
            decode: DecodeStrategy::Greedy,
            locale: "en-US".into(),
            max_len: None,
        }
    }

    pub fn single(combined: ModelFiles) -> Self {
        Self {
            combined: Some(combined),
            ..Self::new(Mode::Single)
        }
    }

    pub fn dual(normalization: ModelFiles, pronunciation: ModelFiles) -> Self {
        Self {
            normalization: Some(normalization),
            pronunciation: Some(pronunciation),
            ..Self::new(Mode::Dual)
        }
    }

    /// Models the mode needs, in execution order.
    pub fn stage_files(&self) -> Result<Vec<(Stage, &ModelFiles)>> {
        let mode = self.mode;
        fn need(files: &Option<ModelFiles>, stage: Stage, mode: Mode) -> Result<(Stage, &ModelFiles)> {
            files
                .as_ref()
                .map(|f| (stage, f))
                .ok_or_else(|| Error::Config(format!("{mode} mode needs a {stage} model and codec")))
        }
        match self.mode {
            Mode::Dual => Ok(vec![
                need(&self.normalization, Stage::Normalization, mode)?,
                need(&self.pronunciation, Stage::Pronunciation, mode)?,
            ]),
            Mode::Single => Ok(vec![need(&self.combined, Stage::Combined, mode)?]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage_files()?;
        if let SpliceMode::On(cfg) | SpliceMode::Both(cfg) = &self.splice {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// taken as given.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new(Mode::Single);
        let mut window = SpliceConfig::default().window;
        let mut overlap = SpliceConfig::default().overlap;
        let mut splice = "on".to_string();
        let mut paths: [[Option<PathBuf>; 2]; 3] = Default::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let number = |v: &str| v.parse::<usize>().map_err(|_| err(format!("{key} must be a number, got {v:?}")));
            let reword = |e: Error| err(e.to_string());
            match key {
                "mode" => cfg.mode = value.parse().map_err(reword)?,
                "decode" => cfg.decode = value.parse().map_err(reword)?,
                "locale" => cfg.locale = value.to_string(),
                "max_len" => cfg.max_len = Some(number(value)?),
                "window" => window = number(value)?,
                "overlap" => overlap = number(value)?,
                "splice" => splice = value.to_string(),
                _ => {
                    let slot = [
                        ("normalization_", 0),
                        ("pronunciation_", 1),
                        ("combined_", 2),
                    ]
                    .iter()
                    .find_map(|(prefix, i)| {
                        let rest = key.strip_prefix(prefix)?;
                        match rest {
                            "model" => Some((*i, 0)),
                            "codec" => Some((*i, 1)),
                            _ => None,
                        }
                    })
                    .ok_or_else(|| err(format!("unknown key {key:?}")))?;
                    paths[slot.0][slot.1] = Some(PathBuf::from(value));
                }
            }
        }
        let splice_cfg = SpliceConfig::new(window, overlap)?;
        cfg.splice = match splice.as_str() {
            "on" => SpliceMode::On(splice_cfg),
            "off" => SpliceMode::Off,
            "both" => SpliceMode::Both(splice_cfg),
            other => return Err(Error::Config(format!("splice must be on, off or both, got {other:?}"))),
        };
        let files = |[model, codec]: [Option<PathBuf>; 2]| match (model, codec) {
            (Some(model), Some(codec)) => Ok(Some(ModelFiles { model, codec })),
            (None, None) => Ok(None),
            _ => Err(Error::Config("model and codec paths must be given together".into())),
        };
        let [n, p, c] = paths;
        cfg.normalization = files(n)?;
        cfg.pronunciation = files(p)?;
        cfg.combined = files(c)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Anything that maps one sentence to another.
pub trait SentenceTranslator {
    fn translate(&self, sentence: &Sentence) -> Result<Sentence>;
}

impl<F: Fn(&Sentence) -> Result<Sentence>> SentenceTranslator for F {
    fn translate(&self, sentence: &Sentence) -> Result<Sentence> {
        self(sentence)
    }
}

/// A trained model together with the codec its vocabulary came from.
#[derive(Debug, Clone)]
pub struct Translator {
    codec: BpeCodec,
    vocab: Vocab,
    params: ParameterSet,
    decode: DecodeStrategy,
    max_len: usize,
}

impl Translator {
    pub fn new(codec: BpeCodec, params: ParameterSet, decode: DecodeStrategy) -> Result<Self> {
        let vocab = codec.vocab();
        if params.config().vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "model vocabulary has {} entries but the codec yields {}",
                params.config().vocab_size,
                vocab.len()
            )));
        }
        let max_len = params.config().max_positions - 1;
        Ok(Self {
            codec,
            vocab,
            params,
            decode,
            max_len,
        })
    }

    pub fn load(files: &ModelFiles, decode: DecodeStrategy) -> Result<Self> {
        let codec = BpeCodec::load(&files.codec)?;
        let (params, _) = checkpoint::load(&files.model)?;
        Self::new(codec, params, decode)
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn codec(&self) -> &BpeCodec {
        &self.codec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }
}

impl SentenceTranslator for Translator {
    fn translate(&self, sentence: &Sentence) -> Result<Sentence> {
        let src = self.vocab.ids(&self.codec.encode(sentence.text()));
        let special = SpecialIds::default();
        let ids = match self.decode {
            DecodeStrategy::Greedy => model::greedy_decode(&self.params, &src, self.max_len, special)?,
            DecodeStrategy::Beam(k) => model::beam_decode(&self.params, &src, k, self.max_len, special)?,
        };
        Sentence::new(bpe::decode(&self.vocab.tokens(&ids))?)
    }
}

/// A sentence that could not be translated.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub index: usize,
    pub message: String,
}

/// A chain of translators, each optionally wrapped in chunk-and-splice.
pub struct Pipeline {
    stages: Vec<(Stage, Box<dyn SentenceTranslator>)>,
}

impl Pipeline {
    pub fn new(stages: Vec<(Stage, Box<dyn SentenceTranslator>)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Config("a pipeline needs at least one stage".into()));
        }
        Ok(Self { stages })
    }

    /// Loads exactly the models the configured mode needs.
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let mut stages: Vec<(Stage, Box<dyn SentenceTranslator>)> = Vec::new();
        for (stage, files) in config.stage_files()? {
            let mut t = Translator::load(files, config.decode)?;
            if let Some(n) = config.max_len {
                t = t.with_max_len(n);
            }
            stages.push((stage, Box::new(t)));
        }
        Self::new(stages)
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.stages.iter().map(|(s, _)| *s).collect()
    }

    /// Stage indices that map the sources of a `stage` corpus to its targets.
    fn route(&self, stage: Stage) -> Result<std::ops::Range<usize>> {
        let kinds = self.stages();
        if let Some(i) = kinds.iter().position(|&s| s == stage) {
            return Ok(i..i + 1);
        }
        if stage == Stage::Combined && kinds == [Stage::Normalization, Stage::Pronunciation] {
            return Ok(0..2);
        }
        Err(Error::Config(format!(
            "a {stage} test corpus cannot be evaluated with stages {kinds:?}"
        )))
    }

    fn run_range(&self, range: std::ops::Range<usize>, sentence: &Sentence, splice: Option<&SpliceConfig>) -> Result<Sentence> {
        let mut current = sentence.clone();
        for (_, t) in &self.stages[range] {
            current = match splice {
                Some(cfg) => splice::translate_long(&current, cfg, |s| t.translate(s))?,
                None => t.translate(&current)?,
            };
        }
        Ok(current)
    }

    /// Runs every stage in order.
    pub fn translate(&self, sentence: &Sentence, splice: Option<&SpliceConfig>) -> Result<Sentence> {
        self.run_range(0..self.stages.len(), sentence, splice)
    }

    fn translate_batch(
        &self,
        range: std::ops::Range<usize>,
        sentences: &[Sentence],
        splice: Option<&SpliceConfig>,
    ) -> (Vec<Sentence>, Vec<Failure>) {
        let mut outputs = Vec::with_capacity(sentences.len());
        let mut failures = Vec::new();
        for (index, s) in sentences.iter().enumerate() {
            match self.run_range(range.clone(), s, splice) {
                Ok(out) => outputs.push(out),
                Err(e) => {
                    failures.push(Failure {
                        index,
                        message: e.to_string(),
                    });
                    outputs.push(Sentence::new(FAILED).expect("placeholder is one line"));
                }
            }
        }
        (outputs, failures)
    }

    /// Translates every sentence; failures become [`FAILED`] lines.
    pub fn translate_all(&self, sentences: &[Sentence], splice: Option<&SpliceConfig>) -> (Vec<Sentence>, Vec<Failure>) {
        self.translate_batch(0..self.stages.len(), sentences, splice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub sentences: usize,
    pub failures: Vec<Failure>,
    pub elapsed: Duration,
}

impl RunSummary {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_translate(config: &PipelineConfig, input: &Path, output: &Path) -> Result<RunSummary> {
    config.validate()?;
    let pipeline = Pipeline::load(config)?;
    let start = Instant::now();
    let sentences = read_sentences(input)?;
    let splice = match &config.splice {
        SpliceMode::Off => None,
        SpliceMode::On(cfg) | SpliceMode::Both(cfg) => Some(cfg),
    };
    let (outputs, failures) = pipeline.translate_all(&sentences, splice);
    write_lines(output, &outputs)?;
    Ok(RunSummary {
        sentences: sentences.len(),
        failures,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub stage: Stage,
    pub spliced: bool,
    pub bleu: f64,
    pub chrf: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub locale: String,
    pub mode: Mode,
    pub scores: Vec<ScoreRow>,
    /// Diff of the first scored variant against the references.
    pub diff: DiffReport,
    /// Wall time per scored variant, same order as `scores`.
    pub timings: Vec<Duration>,
}

impl EvalReport {
    /// The report without timings, so equal runs render identical bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "locale {}", self.locale);
        let _ = writeln!(out, "mode {}", self.mode);
        let _ = writeln!(out, "stage\tspliced\tbleu\tchrf3\tfailed");
        for row in &self.scores {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                row.stage,
                if row.spliced { "yes" } else { "no" },
                metrics::format_bleu(row.bleu),
                metrics::format_chrf(row.chrf),
                row.failures
            );
        }
        out.push_str(&self.diff.to_text());
        out
    }
}

/// Mode-and-corpus combinations: a single model scores a corpus of its own
/// stage, a dual pipeline scores either stage alone or the full chain on a
/// combined corpus.
pub fn evaluate(
    pipeline: &Pipeline,
    config: &PipelineConfig,
    test: &ParallelCorpus,
    labels: Option<&std::collections::BTreeMap<usize, HumanLabel>>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test corpus has no pairs".into()));
    }
    let range = pipeline.route(test.stage)?;
    let sources: Vec<Sentence> = test.sources().cloned().collect();
    let references: Vec<Sentence> = test.targets().cloned().collect();
    let mut scores = Vec::new();
    let mut timings = Vec::new();
    let mut diff = None;
    for variant in config.splice.variants() {
        let start = Instant::now();
        let (outputs, failures) = pipeline.translate_batch(range.clone(), &sources, variant.as_ref());
        timings.push(start.elapsed());
        scores.push(ScoreRow {
            stage: test.stage,
            spliced: variant.is_some(),
            bleu: metrics::bleu(&outputs, &references, &BleuConfig::default())?,
            chrf: metrics::chrf(&outputs, &references, &ChrfConfig::default())?,
            failures: failures.len(),
        });
        if diff.is_none() {
            diff = Some(metrics::diff_report(
                &outputs,
                &references,
                ScriptSet::for_locale(&config.locale),
                labels,
            )?);
        }
    }
    Ok(EvalReport {
        locale: config.locale.clone(),
        mode: config.mode,
        scores,
        diff: diff.expect("at least one variant"),
        timings,
    })
}

pub fn run_eval(config: &PipelineConfig, test: &ParallelCorpus) -> Result<EvalReport> {
    config.validate()?;
    let pipeline = Pipeline::load(config)?;
    evaluate(&pipeline, config, test, None)
}

/// Codec-encoded pairs plus how many were dropped for exceeding the position limit.
pub fn encode_corpus(codec: &BpeCodec, corpus: &ParallelCorpus, max_positions: usize) -> (Vec<EncodedPair>, usize) {
    let vocab = codec.vocab();
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut dropped = 0;
    for p in &corpus.pairs {
        let src = vocab.ids(&codec.encode(p.source.text()));
        let tgt = vocab.ids(&codec.encode(p.target.text()));
        if src.len() > max_positions || tgt.len() + 1 > max_positions {
            dropped += 1;
        } else {
            pairs.push(EncodedPair { src, tgt });
        }
    }
    (pairs, dropped)
}

/// Everything needed to train one stage model.
#[derive(Debug, Clone)]
pub struct TrainJob {
    pub model: TransformerConfig,
    pub spec: TrainSpec,
    pub plan: ValidationPlan,
    pub init_seed: u64,
}

/// Trains a model for `codec` on `train`, stopping on a validation plateau.
///
/// The model's vocabulary size is taken from the codec.
pub fn train_model(
    codec: &BpeCodec,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    job: &TrainJob,
    on_eval: impl FnMut(usize, f32, f64),
) -> Result<FitOutcome> {
    let mut cfg = job.model;
    cfg.vocab_size = codec.vocab().len();
    let (train_pairs, _) = encode_corpus(codec, train, cfg.max_positions);
    let (valid_pairs, _) = encode_corpus(codec, valid, cfg.max_positions);
    if valid_pairs.is_empty() {
        return Err(Error::EmptyInput("no usable validation pairs".into()));
    }
    let params = ParameterSet::init(cfg, job.init_seed)?;
    model::fit(params, &train_pairs, &valid_pairs, &job.spec, &job.plan, on_eval)
}

/// Checkpoint metadata recording which stage a model serves.
pub fn stage_metadata(stage: Stage) -> Metadata {
    let mut meta = Metadata::new();
    meta.insert("stage".into(), stage.to_string());
    meta
}
