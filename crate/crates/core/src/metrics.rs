//! Corpus BLEU, chrF and categorized sentence diffs.
//!
//! Both scores accumulate counts over the whole corpus before dividing.
//! Sentences are compared as whitespace tokens, so phone sequences and
//! normalized text go through the same code.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BleuConfig {
    pub max_n: usize,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_n: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChrfConfig {
    pub max_n: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self { max_n: 6, beta: 3.0 }
    }
}

fn check_lengths(candidates: usize, references: usize) -> Result<()> {
    if candidates != references {
        return Err(Error::Alignment {
            source_len: candidates,
            target_len: references,
        });
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash>(items: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    if n > 0 && items.len() >= n {
        for gram in items.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches, candidate total and reference total for one order.
fn clipped<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (u64, u64, u64) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matches = c
        .iter()
        .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    (matches, c.values().sum(), r.values().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    /// 0 to 100.
    pub score: f64,
    /// Per-order modified precisions; `None` for orders neither side has.
    pub precisions: Vec<Option<f64>>,
    pub brevity_penalty: f64,
    pub candidate_len: u64,
    pub reference_len: u64,
}

/// Corpus BLEU without smoothing.
///
/// Any order whose clipped matches are zero makes the score zero. Orders for
/// which neither side has a single n-gram carry no evidence and are left out
/// of the geometric mean.
pub fn bleu_detailed(candidates: &[Sentence], references: &[Sentence], cfg: &BleuConfig) -> Result<BleuScore> {
    check_lengths(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Err(Error::EmptyInput("BLEU needs at least one sentence pair".into()));
    }
    if cfg.max_n == 0 {
        return Err(Error::Config("BLEU max_n must be at least 1".into()));
    }
    let mut matches = vec![0u64; cfg.max_n];
    let mut cand_totals = vec![0u64; cfg.max_n];
    let mut ref_totals = vec![0u64; cfg.max_n];
    let (mut cand_len, mut ref_len) = (0u64, 0u64);
    for (c, r) in candidates.iter().zip(references) {
        let (cw, rw) = (c.words(), r.words());
        cand_len += cw.len() as u64;
        ref_len += rw.len() as u64;
        for n in 1..=cfg.max_n {
            let (m, ct, rt) = clipped(&cw, &rw, n);
            matches[n - 1] += m;
            cand_totals[n - 1] += ct;
            ref_totals[n - 1] += rt;
        }
    }
    let precisions: Vec<Option<f64>> = (0..cfg.max_n)
        .map(|i| {
            if cand_totals[i] == 0 && ref_totals[i] == 0 {
                None
            } else if cand_totals[i] == 0 {
                Some(0.0)
            } else {
                Some(matches[i] as f64 / cand_totals[i] as f64)
            }
        })
        .collect();
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp()
    };
    let used: Vec<f64> = precisions.iter().flatten().copied().collect();
    let score = if used.is_empty() || used.iter().any(|&p| p == 0.0) || cand_len == 0 {
        0.0
    } else {
        let log_mean = used.iter().map(|p| p.ln()).sum::<f64>() / used.len() as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        candidate_len: cand_len,
        reference_len: ref_len,
    })
}

pub fn bleu(candidates: &[Sentence], references: &[Sentence], cfg: &BleuConfig) -> Result<f64> {
    bleu_detailed(candidates, references, cfg).map(|b| b.score)
}

fn chars_without_whitespace(s: &Sentence) -> Vec<char> {
    s.text().chars().filter(|c| !c.is_whitespace()).collect()
}

/// Corpus chrF on a 0 to 1 scale.
///
/// Per order, precision and recall come from corpus-accumulated clipped
/// counts; the final score is the mean F-beta over orders that have at
/// least one reference n-gram.
pub fn chrf(candidates: &[Sentence], references: &[Sentence], cfg: &ChrfConfig) -> Result<f64> {
    check_lengths(candidates.len(), references.len())?;
    if cfg.beta <= 0.0 {
        return Err(Error::Config("chrF beta must be positive".into()));
    }
    let mut matches = vec![0u64; cfg.max_n];
    let mut cand_totals = vec![0u64; cfg.max_n];
    let mut ref_totals = vec![0u64; cfg.max_n];
    for (c, r) in candidates.iter().zip(references) {
        let (cc, rc) = (chars_without_whitespace(c), chars_without_whitespace(r));
        for n in 1..=cfg.max_n {
            let (m, ct, rt) = clipped(&cc, &rc, n);
            matches[n - 1] += m;
            cand_totals[n - 1] += ct;
            ref_totals[n - 1] += rt;
        }
    }
    let beta2 = cfg.beta * cfg.beta;
    let scores: Vec<f64> = (0..cfg.max_n)
        .filter(|&i| ref_totals[i] > 0)
        .map(|i| {
            let p = if cand_totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / cand_totals[i] as f64
            };
            let r = matches[i] as f64 / ref_totals[i] as f64;
            if p + r == 0.0 {
                0.0
            } else {
                (1.0 + beta2) * p * r / (beta2 * p + r)
            }
        })
        .collect();
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn format_bleu(score: f64) -> String {
    format!("{score:.2}")
}

pub fn format_chrf(score: f64) -> String {
    format!("{score:.4}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DiffCategory {
    Identical,
    PunctuationOnly,
    SecondLanguage,
    Other,
}

impl DiffCategory {
    pub const ALL: [DiffCategory; 4] = [
        DiffCategory::Identical,
        DiffCategory::PunctuationOnly,
        DiffCategory::SecondLanguage,
        DiffCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiffCategory::Identical => "identical",
            DiffCategory::PunctuationOnly => "punctuation_only",
            DiffCategory::SecondLanguage => "second_language",
            DiffCategory::Other => "other",
        }
    }
}

impl fmt::Display for DiffCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Human judgement of a differing output against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HumanLabel {
    Better,
    Equal,
    Worse,
}

impl FromStr for HumanLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "better" => Ok(HumanLabel::Better),
            "equal" => Ok(HumanLabel::Equal),
            "worse" => Ok(HumanLabel::Worse),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl fmt::Display for HumanLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HumanLabel::Better => "better",
            HumanLabel::Equal => "equal",
            HumanLabel::Worse => "worse",
        })
    }
}

/// `index label` lines; blank lines and `#` comments are skipped.
pub fn parse_labels(text: &str) -> Result<BTreeMap<usize, HumanLabel>> {
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let mut fields = line.split_whitespace();
        let (Some(index), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!("expected `index label`, got {line:?}")));
        };
        let index: usize = index.parse().map_err(|_| err(format!("bad index {index:?}")))?;
        let label: HumanLabel = label.parse().map_err(err)?;
        labels.insert(index, label);
    }
    Ok(labels)
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<usize, HumanLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Scripts a locale's text is expected to use.
#[derive(Debug, Clone)]
pub struct ScriptSet {
    scripts: Vec<String>,
    foreign: Regex,
    alphabetic: Regex,
}

impl ScriptSet {
    /// Unicode script names such as `Latin` or `Cyrillic`.
    pub fn new<S: AsRef<str>>(scripts: &[S]) -> Result<Self> {
        if scripts.is_empty() {
            return Err(Error::Config("a locale needs at least one script".into()));
        }
        let scripts: Vec<String> = scripts.iter().map(|s| s.as_ref().to_string()).collect();
        let allowed: String = scripts.iter().map(|s| format!("\\p{{sc={s}}}")).collect();
        let foreign = Regex::new(&format!("[\\p{{Alphabetic}}&&[^{allowed}]]"))
            .map_err(|e| Error::Config(format!("bad script list {scripts:?}: {e}")))?;
        let alphabetic = Regex::new(r"\p{Alphabetic}").expect("static pattern");
        Ok(Self {
            scripts,
            foreign,
            alphabetic,
        })
    }

    /// Default scripts for a locale tag such as `en-US` or `ru-RU`.
    pub fn for_locale(locale: &str) -> Self {
        let lang = locale.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
        let scripts: &[&str] = match lang.as_str() {
            "ru" | "uk" | "bg" | "be" | "mk" | "sr" | "kk" => &["Cyrillic"],
            "el" => &["Greek"],
            "ar" | "fa" | "ur" => &["Arabic"],
            "he" | "yi" => &["Hebrew"],
            "hi" | "mr" | "ne" => &["Devanagari"],
            "th" => &["Thai"],
            "ko" => &["Hangul", "Han"],
            "ja" => &["Han", "Hiragana", "Katakana"],
            "zh" | "yue" => &["Han"],
            _ => &["Latin"],
        };
        Self::new(scripts).expect("built-in script names are valid")
    }

    pub fn scripts(&self) -> &[String] {
        &self.scripts
    }

    /// Share of alphabetic characters outside the set; zero for text without letters.
    pub fn foreign_fraction(&self, text: &str) -> f64 {
        let letters = self.alphabetic.find_iter(text).count();
        if letters == 0 {
            return 0.0;
        }
        self.foreign.find_iter(text).count() as f64 / letters as f64
    }
}

/// Share of foreign-script letters above which a pair counts as second-language.
pub const SECOND_LANGUAGE_THRESHOLD: f64 = 0.30;

pub struct DiffClassifier {
    scripts: ScriptSet,
    punctuation: Regex,
}

impl DiffClassifier {
    pub fn new(scripts: ScriptSet) -> Self {
        Self {
            scripts,
            punctuation: Regex::new(r"\p{P}").expect("static pattern"),
        }
    }

    fn strip_punctuation(&self, text: &str, replacement: &str) -> String {
        let replaced = self.punctuation.replace_all(text, replacement);
        replaced.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    /// Identical, then punctuation-only (punctuation deleted, or replaced by
    /// spaces, with whitespace collapsed), then second-language (either side
    /// over the foreign-script threshold), then other.
    pub fn classify(&self, candidate: &str, reference: &str) -> DiffCategory {
        if candidate == reference {
            return DiffCategory::Identical;
        }
        let same_without = |rep: &str| self.strip_punctuation(candidate, rep) == self.strip_punctuation(reference, rep);
        if same_without("") || same_without(" ") {
            return DiffCategory::PunctuationOnly;
        }
        let foreign = self
            .scripts
            .foreign_fraction(candidate)
            .max(self.scripts.foreign_fraction(reference));
        if foreign > SECOND_LANGUAGE_THRESHOLD {
            return DiffCategory::SecondLanguage;
        }
        DiffCategory::Other
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRecord {
    pub index: usize,
    pub category: DiffCategory,
    pub candidate: String,
    pub reference: String,
    pub human: Option<HumanLabel>,
}

/// Per-category counts plus a record for every differing sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffReport {
    pub total: usize,
    pub differing: usize,
    pub categories: BTreeMap<DiffCategory, usize>,
    pub records: Vec<DiffRecord>,
    /// Human labels whose index does not point at a differing sentence.
    pub unmatched_labels: usize,
}

pub fn diff_report(
    candidates: &[Sentence],
    references: &[Sentence],
    scripts: ScriptSet,
    labels: Option<&BTreeMap<usize, HumanLabel>>,
) -> Result<DiffReport> {
    check_lengths(candidates.len(), references.len())?;
    let classifier = DiffClassifier::new(scripts);
    let mut categories: BTreeMap<DiffCategory, usize> = DiffCategory::ALL.iter().map(|&c| (c, 0)).collect();
    let mut records = Vec::new();
    for (index, (c, r)) in candidates.iter().zip(references).enumerate() {
        let category = classifier.classify(c.text(), r.text());
        *categories.get_mut(&category).expect("all categories present") += 1;
        if category != DiffCategory::Identical {
            records.push(DiffRecord {
                index,
                category,
                candidate: c.text().to_string(),
                reference: r.text().to_string(),
                human: labels.and_then(|l| l.get(&index).copied()),
            });
        }
    }
    let unmatched_labels = labels.map_or(0, |l| {
        l.keys()
            .filter(|i| records.binary_search_by_key(*i, |r| r.index).is_err())
            .count()
    });
    Ok(DiffReport {
        total: candidates.len(),
        differing: records.len(),
        categories,
        records,
        unmatched_labels,
    })
}

fn escape_field(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\t', "\\t")
}

impl DiffReport {
    pub fn count(&self, category: DiffCategory) -> usize {
        self.categories.get(&category).copied().unwrap_or(0)
    }

    /// Human-readable summary followed by each differing sentence.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total {}", self.total);
        let _ = writeln!(out, "differing {}", self.differing);
        for (category, count) in &self.categories {
            let pct = if self.total == 0 {
                0.0
            } else {
                100.0 * *count as f64 / self.total as f64
            };
            let _ = writeln!(out, "{category} {count} ({pct:.2}%)");
        }
        for r in &self.records {
            let label = r.human.map(|h| format!(" [{h}]")).unwrap_or_default();
            let _ = writeln!(out, "#{} {}{}", r.index, r.category, label);
            let _ = writeln!(out, "  candidate: {}", r.candidate);
            let _ = writeln!(out, "  reference: {}", r.reference);
        }
        out
    }

    /// `index<TAB>category<TAB>candidate<TAB>reference`, one differing sentence per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.index,
                r.category,
                escape_field(&r.candidate),
                escape_field(&r.reference)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(lines: &[&str]) -> Vec<Sentence> {
        lines.iter().map(|l| Sentence::new(*l).unwrap()).collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let refs = sents(&["the cat sat on the mat", "a b c d e"]);
        assert_eq!(bleu(&refs, &refs, &BleuConfig::default()).unwrap(), 100.0);
        let cands = sents(&["x y z w v u", "p q r s t"]);
        assert_eq!(bleu(&cands, &refs, &BleuConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn bleu_short_sentences_identity() {
        let refs = sents(&["a", "b c"]);
        assert_eq!(bleu(&refs, &refs, &BleuConfig::default()).unwrap(), 100.0);
    }

    #[test]
    fn bleu_length_mismatch() {
        let err = bleu(&sents(&["a"]), &sents(&["a", "b"]), &BleuConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Alignment { source_len: 1, target_len: 2 }));
    }

    #[test]
    fn bleu_hand_computed_prefix() {
        // 3/3, 2/2, 1/1 and no 4-grams on the candidate side: p4 = 0.
        let c = sents(&["the cat sat"]);
        let r = sents(&["the cat sat down"]);
        assert_eq!(bleu(&c, &r, &BleuConfig::default()).unwrap(), 0.0);
        let trigram = bleu(&c, &r, &BleuConfig { max_n: 3 }).unwrap();
        let expect = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((trigram - expect).abs() < 1e-9);
    }

    #[test]
    fn chrf_identity_disjoint_and_hand_value() {
        let cfg = ChrfConfig::default();
        let r = sents(&["hello world"]);
        assert_eq!(chrf(&r, &r, &cfg).unwrap(), 1.0);
        assert_eq!(chrf(&sents(&["xyz"]), &sents(&["abc"]), &cfg).unwrap(), 0.0);
        let got = chrf(&sents(&["abc"]), &sents(&["abcd"]), &cfg).unwrap();
        let expect = (10.0 / 13.0 + 20.0 / 29.0 + 10.0 / 19.0 + 0.0) / 4.0;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn chrf_ignores_whitespace() {
        let cfg = ChrfConfig::default();
        assert_eq!(chrf(&sents(&["ab cd"]), &sents(&["abcd"]), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn classify_categories() {
        let c = DiffClassifier::new(ScriptSet::for_locale("en-US"));
        assert_eq!(c.classify("a b", "a b"), DiffCategory::Identical);
        assert_eq!(c.classify("twenty-one", "twenty one"), DiffCategory::PunctuationOnly);
        assert_eq!(c.classify("well-known", "wellknown"), DiffCategory::PunctuationOnly);
        assert_eq!(c.classify("he said, hello.", "he said hello"), DiffCategory::PunctuationOnly);
        assert_eq!(
            c.classify("A yuuuge amount of articles.", "A yuuuuge amount of articles."),
            DiffCategory::Other
        );
        assert_eq!(c.classify("привет мир hello", "hello"), DiffCategory::SecondLanguage);
    }

    #[test]
    fn foreign_fraction_counts_letters_only() {
        let s = ScriptSet::for_locale("en-US");
        assert_eq!(s.foreign_fraction("123 !!"), 0.0);
        assert!((s.foreign_fraction("ab вг") - 0.5).abs() < 1e-12);
        let ru = ScriptSet::for_locale("ru-RU");
        assert_eq!(ru.foreign_fraction("привет"), 0.0);
    }

    #[test]
    fn report_partitions_and_records() {
        let cands = sents(&["a b", "a-b", "x", "Ωμέγα λέξη"]);
        let refs = sents(&["a b", "a b", "y", "word"]);
        let mut labels = BTreeMap::new();
        labels.insert(2, HumanLabel::Worse);
        labels.insert(0, HumanLabel::Equal);
        let report = diff_report(&cands, &refs, ScriptSet::for_locale("en-US"), Some(&labels)).unwrap();
        assert_eq!(report.total, 4);
        assert_eq!(report.differing, 3);
        assert_eq!(report.categories.values().sum::<usize>(), 4);
        assert_eq!(report.count(DiffCategory::PunctuationOnly), 1);
        assert_eq!(report.count(DiffCategory::SecondLanguage), 1);
        assert_eq!(report.count(DiffCategory::Other), 1);
        assert_eq!(report.records[1].human, Some(HumanLabel::Worse));
        assert_eq!(report.unmatched_labels, 1);
        assert!(report.to_tsv().starts_with("1\tpunctuation_only\ta-b\ta b\n"));
    }

    #[test]
    fn label_parse_errors_name_the_line() {
        assert!(parse_labels("# header\n3 better\n\n7 worse\n").is_ok());
        let err = parse_labels("1 better\n2 great\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(parse_labels("x better").unwrap_err(), Error::Parse { line: 1, .. }));
    }
}
