//! Parallel corpora: loading, teacher extraction and train/valid/test splits.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// One line of text. Never contains a line break.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Sentence {
    text: String,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.contains(['\n', '\r']) {
            return Err(Error::Argument(format!(
                "sentence contains a line break: {text:?}"
            )));
        }
        Ok(Self { text })
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let text = words
            .iter()
            .map(|w| w.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        Self { text }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Tokens separated by runs of ASCII whitespace.
    pub fn words(&self) -> Vec<&str> {
        self.text.split_ascii_whitespace().collect()
    }

    pub fn word_count(&self) -> usize {
        self.text.split_ascii_whitespace().count()
    }

    /// The text with every whitespace run collapsed to one space and the ends trimmed.
    pub fn normalized(&self) -> Sentence {
        Sentence::from_words(&self.words())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Which model a corpus trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// unnormalized text to normalized text
    Normalization,
    /// normalized text to phone sequence
    Pronunciation,
    /// unnormalized text to phone sequence
    Combined,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Normalization, Stage::Pronunciation, Stage::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Normalization => "normalization",
            Stage::Pronunciation => "pronunciation",
            Stage::Combined => "combined",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normalization" | "norm" => Ok(Stage::Normalization),
            "pronunciation" | "pron" => Ok(Stage::Pronunciation),
            "combined" => Ok(Stage::Combined),
            other => Err(Error::Argument(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub stage: Stage,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            pairs: Vec::new(),
        }
    }

    /// Pairs two equally long sentence lists positionally.
    pub fn from_sides(stage: Stage, sources: Vec<Sentence>, targets: Vec<Sentence>) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::Alignment {
                source_len: sources.len(),
                target_len: targets.len(),
            });
        }
        let pairs = sources
            .into_iter()
            .zip(targets)
            .map(|(source, target)| SentencePair { source, target })
            .collect();
        Ok(Self { stage, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Drops repeated (source, target) pairs, keeping first occurrences in order.
    pub fn dedup(&self) -> ParallelCorpus {
        let mut seen = HashSet::new();
        let pairs = self
            .pairs
            .iter()
            .filter(|p| seen.insert((p.source.text(), p.target.text())))
            .cloned()
            .collect();
        ParallelCorpus {
            stage: self.stage,
            pairs,
        }
    }

    /// Writes the source and target sides, one sentence per line.
    pub fn write(&self, src_path: &Path, tgt_path: &Path) -> Result<()> {
        write_lines(src_path, self.sources())?;
        write_lines(tgt_path, self.targets())
    }
}

/// Reads a UTF-8 file as one sentence per line with trailing whitespace stripped.
pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&bytes).map_err(|line| Error::Decode {
        path: path.to_path_buf(),
        line,
    })
}

fn parse_lines(bytes: &[u8]) -> std::result::Result<Vec<Sentence>, usize> {
    let mut body = bytes;
    if let Some(stripped) = body.strip_suffix(b"\n") {
        body = stripped;
    }
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let line = std::str::from_utf8(raw).map_err(|_| i + 1)?;
            Ok(Sentence {
                text: line.trim_end_matches(|c: char| c.is_ascii_whitespace()).to_string(),
            })
        })
        .collect()
}

pub fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a Sentence>) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(line.text());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_parallel(src_path: &Path, tgt_path: &Path, stage: Stage) -> Result<ParallelCorpus> {
    let sources = read_sentences(src_path)?;
    let targets = read_sentences(tgt_path)?;
    ParallelCorpus::from_sides(stage, sources, targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Deduplicates, shuffles with the seeded generator and cuts off the
/// validation and test portions. Every split keeps the shuffled order.
pub fn split(corpus: &ParallelCorpus, spec: SplitSpec) -> Result<Splits> {
    let unique = corpus.dedup();
    let requested = spec.n_valid + spec.n_test;
    if requested >= unique.len() {
        return Err(Error::CorpusSize {
            available: unique.len(),
            requested,
        });
    }
    let mut order: Vec<usize> = (0..unique.len()).collect();
    SeededRng::new(spec.seed).shuffle(&mut order);

    let take = |idx: &[usize]| ParallelCorpus {
        stage: corpus.stage,
        pairs: idx.iter().map(|&i| unique.pairs[i].clone()).collect(),
    };
    let (valid, rest) = order.split_at(spec.n_valid);
    let (test, train) = rest.split_at(spec.n_test);
    Ok(Splits {
        train: take(train),
        valid: take(valid),
        test: take(test),
    })
}

/// An external program that turns raw sentences into a processed form.
///
/// The template is split like a shell command line; `{stage}` in any
/// argument is replaced by the stage name before spawning.
#[derive(Debug, Clone)]
pub struct TeacherCommand {
    template: Vec<String>,
}

impl TeacherCommand {
    pub fn parse(template: &str) -> Result<Self> {
        let template = shell_words::split(template)
            .map_err(|e| Error::Argument(format!("bad teacher command: {e}")))?;
        if template.is_empty() {
            return Err(Error::Argument("empty teacher command".into()));
        }
        Ok(Self { template })
    }

    fn command(&self, stage: Stage) -> Command {
        let args: Vec<String> = self
            .template
            .iter()
            .map(|a| a.replace("{stage}", stage.as_str()))
            .collect();
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..]);
        cmd
    }

    /// Feeds `lines` to the teacher and returns its output lines.
    pub fn run(&self, lines: &[Sentence], stage: Stage) -> Result<Vec<Sentence>> {
        let mut child = self
            .command(stage)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Subprocess {
                status: "spawn failed".into(),
                stderr: e.to_string(),
            })?;

        let mut input = String::new();
        for line in lines {
            input.push_str(line.text());
            input.push('\n');
        }
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = std::thread::spawn(move || {
            // A teacher that exits early closes the pipe; its exit status reports that.
            let _ = stdin.write_all(input.as_bytes());
        });

        let mut stdout = Vec::new();
        child
            .stdout
            .take()
            .expect("stdout is piped")
            .read_to_end(&mut stdout)
            .map_err(|e| Error::io("<teacher stdout>", e))?;
        let output = child
            .wait_with_output()
            .map_err(|e| Error::io("<teacher>", e))?;
        let _ = writer.join();

        if !output.status.success() {
            return Err(Error::Subprocess {
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        parse_lines(&stdout).map_err(|line| Error::Decode {
            path: "<teacher stdout>".into(),
            line,
        })
    }
}

/// Pairs each raw line with the teacher's processed form of it.
pub fn build_from_teacher(
    raw_path: &Path,
    teacher: &TeacherCommand,
    stage: Stage,
) -> Result<ParallelCorpus> {
    let raw = read_sentences(raw_path)?;
    let processed = teacher.run(&raw, stage)?;
    ParallelCorpus::from_sides(stage, raw, processed)
}
