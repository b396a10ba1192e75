//! Chunked translation of long sentences.
//!
//! A long word sequence is cut into fixed-size windows that overlap, each
//! window is translated on its own, and neighbouring outputs are joined where
//! their overlapping words agree best.

use std::fmt::Display;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpliceConfig {
    pub window: usize,
    pub overlap: usize,
}

impl Default for SpliceConfig {
    fn default() -> Self {
        Self {
            window: 25,
            overlap: 10,
        }
    }
}

impl SpliceConfig {
    pub fn new(window: usize, overlap: usize) -> Result<Self> {
        let cfg = Self { window, overlap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.overlap == 0 || self.overlap >= self.window {
            return Err(Error::Config(format!(
                "splice needs 0 < overlap < window, got overlap {} and window {}",
                self.overlap, self.window
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.window - self.overlap
    }
}

/// Half-open word-index intervals covering the input, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub spans: Vec<(usize, usize)>,
}

impl ChunkPlan {
    /// Words shared by spans `i - 1` and `i`.
    pub fn overlap_before(&self, i: usize) -> usize {
        self.spans[i - 1].1.saturating_sub(self.spans[i].0)
    }

    /// Parses `0-25,15-40`.
    pub fn parse(text: &str) -> Result<Self> {
        let spans = text
            .split(',')
            .map(|item| {
                let (a, b) = item
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| Error::Argument(format!("bad span {item:?}")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Argument(format!("bad span {item:?}")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(Error::Argument(format!("span {item:?} runs backwards")));
                }
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spans })
    }
}

impl std::fmt::Display for ChunkPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.spans.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Windows start every `window - overlap` words; the last window is
/// right-anchored at the end of the input, so its overlap can be larger.
pub fn chunk(n_words: usize, cfg: &SpliceConfig) -> ChunkPlan {
    if n_words <= cfg.window {
        return ChunkPlan {
            spans: vec![(0, n_words)],
        };
    }
    let mut spans = Vec::new();
    let mut start = 0;
    while start + cfg.window < n_words {
        spans.push((start, start + cfg.window));
        start += cfg.stride();
    }
    spans.push((n_words - cfg.window, n_words));
    ChunkPlan { spans }
}

/// Where two overlapping outputs are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpliceJoin {
    /// Shift from the nominal alignment, within `±expected_overlap_words`.
    pub offset: isize,
    /// Number of aligned positions holding equal words.
    pub score: usize,
    /// Left output is kept up to (excluding) this index.
    pub cut: usize,
    /// Right output is kept from this index on.
    pub right_from: usize,
}

/// Index in `left` that `right[0]` lines up with for a given offset.
fn aligned_start(left_len: usize, expected: usize, offset: isize) -> isize {
    left_len as isize - expected as isize + offset
}

/// Equal words between the first `window` words of `right` and `left`
/// positioned so that `right[0]` sits at `left[start]`.
fn agreement<S: AsRef<str>>(left: &[S], right: &[S], start: isize, window: usize) -> usize {
    right[..window.min(right.len())]
        .iter()
        .enumerate()
        .filter(|(j, w)| {
            let i = start + *j as isize;
            i >= 0 && (i as usize) < left.len() && left[i as usize].as_ref() == w.as_ref()
        })
        .count()
}

fn join_at(left_len: usize, right_len: usize, start: isize, offset: isize, score: usize) -> SpliceJoin {
    let clamp = |v: isize, lo: usize, hi: usize| v.clamp(lo as isize, hi as isize) as usize;
    let region_start = clamp(start, 0, left_len);
    let region_end = clamp(start + right_len as isize, region_start, left_len);
    let cut = (region_start + region_end) / 2;
    let right_from = clamp(cut as isize - start, 0, right_len);
    SpliceJoin {
        offset,
        score,
        cut,
        right_from,
    }
}

/// Best alignment of `right` against the tail of `left`.
///
/// Offsets in `-expected..=expected` around the nominal alignment are tried.
/// Only the first `expected` words of `right` are scored, so a shift cannot
/// win merely by lining up a longer stretch. The highest agreement wins, ties go to the offset nearest zero and then to
/// the smaller offset. The cut sits at the midpoint of the aligned region.
pub fn align_pair<S: AsRef<str>>(left: &[S], right: &[S], expected_overlap_words: usize) -> Result<SpliceJoin> {
    if left.is_empty() {
        return Err(Error::EmptyOutput("left"));
    }
    if right.is_empty() {
        return Err(Error::EmptyOutput("right"));
    }
    let band = expected_overlap_words as isize;
    let mut best: Option<(usize, isize)> = None;
    for offset in -band..=band {
        let start = aligned_start(left.len(), expected_overlap_words, offset);
        let score = agreement(left, right, start, expected_overlap_words);
        let better = match best {
            None => true,
            Some((s, o)) => score > s || (score == s && (offset.abs(), offset) < (o.abs(), o)),
        };
        if better {
            best = Some((score, offset));
        }
    }
    let (score, offset) = best.expect("band contains the nominal offset");
    let start = aligned_start(left.len(), expected_overlap_words, offset);
    Ok(join_at(left.len(), right.len(), start, offset, score))
}

/// Expected overlap in output words: the input overlap scaled by how much
/// the left chunk grew or shrank in translation.
fn expected_output_overlap(input_overlap: usize, span_len: usize, output_len: usize) -> usize {
    if span_len == 0 {
        return input_overlap;
    }
    ((input_overlap * output_len) as f64 / span_len as f64).round() as usize
}

/// Joins chunk outputs left to right at their best-agreement cuts.
pub fn splice<S: AsRef<str>>(outputs: &[Vec<S>], plan: &ChunkPlan) -> Result<Vec<String>> {
    if outputs.len() != plan.spans.len() {
        return Err(Error::Plan {
            spans: plan.spans.len(),
            outputs: outputs.len(),
        });
    }
    let owned = |ws: &[S]| ws.iter().map(|w| w.as_ref().to_string()).collect::<Vec<_>>();
    if outputs.len() == 1 {
        return Ok(owned(&outputs[0]));
    }
    let mut joins = Vec::with_capacity(outputs.len() - 1);
    for i in 1..outputs.len() {
        let (a, b) = plan.spans[i - 1];
        let expected = expected_output_overlap(plan.overlap_before(i), b - a, outputs[i - 1].len());
        joins.push(align_pair(&outputs[i - 1], &outputs[i], expected)?);
    }
    let mut result = Vec::new();
    for (i, out) in outputs.iter().enumerate() {
        let from = if i == 0 { 0 } else { joins[i - 1].right_from };
        let to = if i + 1 < outputs.len() { joins[i].cut } else { out.len() };
        if from < to {
            result.extend(owned(&out[from..to]));
        }
    }
    Ok(result)
}

/// Translates a sentence window by window and splices the results.
///
/// Sentences that fit in one window go to the translator unchanged.
pub fn translate_long<F, E>(sentence: &Sentence, cfg: &SpliceConfig, mut translate: F) -> Result<Sentence>
where
    F: FnMut(&Sentence) -> std::result::Result<Sentence, E>,
    E: Display,
{
    let words = sentence.words();
    let plan = chunk(words.len(), cfg);
    let fail = |(start, end): (usize, usize), e: E| Error::Translate {
        start,
        end,
        message: e.to_string(),
    };
    if plan.spans.len() == 1 {
        return translate(sentence).map_err(|e| fail(plan.spans[0], e));
    }
    let mut outputs = Vec::with_capacity(plan.spans.len());
    for &(start, end) in &plan.spans {
        let piece = Sentence::from_words(&words[start..end]);
        let out = translate(&piece).map_err(|e| fail((start, end), e))?;
        outputs.push(out.words().into_iter().map(str::to_string).collect::<Vec<_>>());
    }
    Ok(Sentence::from_words(&splice(&outputs, &plan)?))
}
