//! A toy locale with a rule-based teacher.
//!
//! Raw sentences mix lexicon words with numbers 0 to 9999, optionally
//! followed by a unit abbreviation. The teacher spells numbers and units out
//! as words and maps every word to a phone token with a fixed
//! letter-to-phone table, one phone token per word.

use crate::corpus::{ParallelCorpus, Sentence, SentencePair, Stage};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

/// Abbreviation, singular, plural.
pub const UNITS: [(&str, &str, &str); 7] = [
    ("km", "kilometer", "kilometers"),
    ("kg", "kilogram", "kilograms"),
    ("cm", "centimeter", "centimeters"),
    ("ml", "milliliter", "milliliters"),
    ("h", "hour", "hours"),
    ("min", "minute", "minutes"),
    ("%", "percent", "percent"),
];

pub const LEXICON: [&str; 32] = [
    "the", "a", "train", "left", "at", "we", "walked", "about", "it", "weighs", "costs", "only", "nearly", "over",
    "and", "then", "bottle", "holds", "river", "is", "long", "took", "us", "she", "said", "road", "rose", "by",
    "after", "box", "cat", "slept",
];

const PHONE_DIGRAPHS: [(&str, &str); 8] = [
    ("th", "th"),
    ("sh", "sh"),
    ("ch", "ch"),
    ("ng", "ng"),
    ("ee", "iy"),
    ("oo", "uw"),
    ("ou", "aw"),
    ("ea", "iy"),
];

fn letter_phone(c: char) -> Option<&'static str> {
    Some(match c {
        'a' => "ae",
        'b' => "b",
        'c' => "k",
        'd' => "d",
        'e' => "eh",
        'f' => "f",
        'g' => "g",
        'h' => "hh",
        'i' => "ih",
        'j' => "jh",
        'k' => "k",
        'l' => "l",
        'm' => "m",
        'n' => "n",
        'o' => "ao",
        'p' => "p",
        'q' => "k",
        'r' => "r",
        's' => "s",
        't' => "t",
        'u' => "ah",
        'v' => "v",
        'w' => "w",
        'x' => "ks",
        'y' => "y",
        'z' => "z",
        _ => return None,
    })
}

/// Spells `n` (at most 9999) as words, without "and".
pub fn spell_number(n: u32) -> Result<String> {
    if n > 9999 {
        return Err(Error::Argument(format!("{n} is outside 0..=9999")));
    }
    fn below_hundred(n: u32, out: &mut Vec<&'static str>) {
        if n < 20 {
            out.push(ONES[n as usize]);
        } else {
            out.push(TENS[(n / 10) as usize]);
            if n % 10 != 0 {
                out.push(ONES[(n % 10) as usize]);
            }
        }
    }
    if n == 0 {
        return Ok("zero".into());
    }
    let mut words = Vec::new();
    if n >= 1000 {
        words.push(ONES[(n / 1000) as usize]);
        words.push("thousand");
    }
    let rest = n % 1000;
    if rest >= 100 {
        words.push(ONES[(rest / 100) as usize]);
        words.push("hundred");
    }
    if rest % 100 != 0 {
        below_hundred(rest % 100, &mut words);
    }
    Ok(words.join(" "))
}

/// Phone token for one lowercase word, e.g. `three` -> `th_r_iy`.
pub fn pronounce_word(word: &str) -> Result<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut phones = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len() {
            let pair: String = chars[i..i + 2].iter().collect();
            if let Some((_, p)) = PHONE_DIGRAPHS.iter().find(|(g, _)| *g == pair) {
                phones.push(*p);
                i += 2;
                continue;
            }
        }
        let p = letter_phone(chars[i]).ok_or_else(|| Error::Argument(format!("no phone for {:?} in {word:?}", chars[i])))?;
        phones.push(p);
        i += 1;
    }
    if phones.is_empty() {
        return Err(Error::Argument("cannot pronounce an empty word".into()));
    }
    Ok(phones.join("_"))
}

/// Teacher normalization: digits and unit abbreviations spelled out.
pub fn normalize(raw: &str) -> Result<String> {
    let tokens: Vec<&str> = raw.split_whitespace().collect();
    let mut out = Vec::new();
    let mut last_number = None;
    for tok in tokens {
        if let Some(&(_, one, many)) = UNITS.iter().find(|(abbr, _, _)| *abbr == tok) {
            let n = last_number.ok_or_else(|| Error::Argument(format!("unit {tok:?} without a number")))?;
            out.push(if n == 1 { one.to_string() } else { many.to_string() });
            last_number = None;
        } else if !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit()) {
            let n: u32 = tok.parse().map_err(|_| Error::Argument(format!("bad number {tok:?}")))?;
            out.push(spell_number(n)?);
            last_number = Some(n);
        } else {
            out.push(tok.to_lowercase());
            last_number = None;
        }
    }
    Ok(out.join(" "))
}

/// Teacher pronunciation: one phone token per normalized word.
pub fn pronounce(normalized: &str) -> Result<String> {
    let phones: Vec<String> = normalized.split_whitespace().map(pronounce_word).collect::<Result<_>>()?;
    Ok(phones.join(" "))
}

/// The teacher's output for one raw sentence at the given stage.
///
/// The pronunciation stage takes already normalized text as input.
pub fn teacher(stage: Stage, input: &str) -> Result<String> {
    match stage {
        Stage::Normalization => normalize(input),
        Stage::Pronunciation => pronounce(input),
        Stage::Combined => pronounce(&normalize(input)?),
    }
}

/// Number of fragments per sentence, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceShape {
    pub min_fragments: usize,
    pub max_fragments: usize,
    /// Percentage of fragments that are numbers.
    pub number_percent: u32,
}

impl Default for SentenceShape {
    fn default() -> Self {
        Self {
            min_fragments: 3,
            max_fragments: 7,
            number_percent: 30,
        }
    }
}

fn sample_number(rng: &mut SeededRng) -> u32 {
    // Equal weight per digit count keeps short numbers common enough to learn.
    let digits = 1 + rng.below(4) as u32;
    let lo = if digits == 1 { 0 } else { 10u32.pow(digits - 1) };
    let hi = 10u32.pow(digits);
    lo + rng.below((hi - lo) as usize) as u32
}

pub fn sample_raw(rng: &mut SeededRng, shape: &SentenceShape) -> String {
    let span = shape.max_fragments - shape.min_fragments + 1;
    let n = shape.min_fragments + rng.below(span);
    let mut tokens = Vec::new();
    for _ in 0..n {
        if rng.below(100) < shape.number_percent as usize {
            tokens.push(sample_number(rng).to_string());
            if rng.bernoulli(0.5) {
                tokens.push(rng.choose(&UNITS).0.to_string());
            }
        } else {
            tokens.push(rng.choose(&LEXICON).to_string());
        }
    }
    tokens.join(" ")
}

/// `n` distinct raw sentences.
pub fn generate_raw(n: usize, seed: u64, shape: &SentenceShape) -> Vec<Sentence> {
    let mut rng = SeededRng::new(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = sample_raw(&mut rng, shape);
        if seen.insert(s.clone()) {
            out.push(Sentence::new(s).expect("generated text has no newlines"));
        }
    }
    out
}

/// Teacher-labelled corpus for `stage` built from raw sentences.
///
/// For the pronunciation stage the sources are the normalized sentences.
pub fn build_corpus(raw: &[Sentence], stage: Stage) -> Result<ParallelCorpus> {
    let mut pairs = Vec::with_capacity(raw.len());
    for r in raw {
        let normalized = normalize(r.text())?;
        let (src, tgt) = match stage {
            Stage::Normalization => (r.text().to_string(), normalized),
            Stage::Pronunciation => {
                let phones = pronounce(&normalized)?;
                (normalized, phones)
            }
            Stage::Combined => (r.text().to_string(), pronounce(&normalized)?),
        };
        pairs.push(SentencePair {
            source: Sentence::new(src)?,
            target: Sentence::new(tgt)?,
        });
    }
    Ok(ParallelCorpus { stage, pairs })
}
