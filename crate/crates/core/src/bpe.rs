//! Byte pair encoding with `@@` continuation markers.
//!
//! A merge table is learned over whitespace-delimited word types weighted by
//! frequency. Merges never cross a word boundary. At encode time every word
//! starts as its characters and the lowest-ranked adjacent pair is merged
//! until no learned pair remains; all pieces but the last get an `@@` suffix.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTINUATION: &str = "@@";
pub const UNK: &str = "⟨unk⟩";
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Private-use character standing in for a literal `@@` inside an input word.
pub const ESCAPED_MARKER: char = '\u{E000}';

const HEADER: &str = "#s2sfe-bpe v1";
const CHARS_MARKER: &str = "#chars";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeConfig {
    pub num_merges: usize,
    pub unk_token: String,
}

impl Default for BpeConfig {
    fn default() -> Self {
        Self {
            num_merges: 32_000,
            unk_token: UNK.to_string(),
        }
    }
}

impl BpeConfig {
    pub fn with_merges(num_merges: usize) -> Self {
        Self {
            num_merges,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeCodec {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    char_vocab: BTreeSet<char>,
    unk_token: String,
}

fn escape_word(word: &str) -> String {
    word.replace(CONTINUATION, &ESCAPED_MARKER.to_string())
}

fn unescape(text: &str) -> String {
    text.replace(ESCAPED_MARKER, CONTINUATION)
}

// Max-heap entry: highest count first, then the lexicographically smallest pair.
#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: String,
    right: String,
    ids: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pairs_of(symbols: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    symbols.windows(2).map(|w| (w[0], w[1]))
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
fn merge_symbols(symbols: &[u32], pair: (u32, u32), merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

impl BpeCodec {
    /// Learns a joint merge table from every line of every corpus.
    pub fn learn<I, S>(lines: I, config: &BpeConfig) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        for line in lines {
            for word in line.as_ref().split_ascii_whitespace() {
                *word_counts.entry(escape_word(word)).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::EmptyInput("no words to learn merges from".into()));
        }

        let mut types: Vec<(String, u64)> = word_counts.into_iter().collect();
        types.sort_unstable();

        let char_vocab: BTreeSet<char> = types.iter().flat_map(|(w, _)| w.chars()).collect();
        let mut symbols: Vec<String> = char_vocab.iter().map(|c| c.to_string()).collect();
        let mut symbol_ids: HashMap<String, u32> = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();

        let mut words: Vec<Vec<u32>> = types
            .iter()
            .map(|(w, _)| w.chars().map(|c| symbol_ids[&c.to_string()]).collect())
            .collect();
        let counts: Vec<u64> = types.iter().map(|(_, c)| *c).collect();

        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        let mut occurs_in: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
        for (idx, word) in words.iter().enumerate() {
            for pair in pairs_of(word) {
                *pair_counts.entry(pair).or_default() += counts[idx];
                occurs_in.entry(pair).or_default().insert(idx);
            }
        }

        let candidate = |pair: (u32, u32), count: u64, symbols: &[String]| Candidate {
            count,
            left: symbols[pair.0 as usize].clone(),
            right: symbols[pair.1 as usize].clone(),
            ids: pair,
        };
        let mut heap: BinaryHeap<Candidate> = pair_counts
            .iter()
            .map(|(&pair, &count)| candidate(pair, count, &symbols))
            .collect();

        let mut merges = Vec::new();
        while merges.len() < config.num_merges {
            let Some(best) = heap.pop() else { break };
            let current = pair_counts.get(&best.ids).copied().unwrap_or(0);
            if current != best.count {
                continue;
            }
            if best.count < 2 {
                break;
            }

            let merged_text = format!("{}{}", best.left, best.right);
            let merged = *symbol_ids.entry(merged_text.clone()).or_insert_with(|| {
                symbols.push(merged_text);
                (symbols.len() - 1) as u32
            });
            merges.push((best.left, best.right));

            let mut affected: Vec<usize> = occurs_in
                .remove(&best.ids)
                .unwrap_or_default()
                .into_iter()
                .collect();
            affected.sort_unstable();
            let mut touched: HashSet<(u32, u32)> = HashSet::new();
            for idx in affected {
                let count = counts[idx];
                for pair in pairs_of(&words[idx]) {
                    if let Some(c) = pair_counts.get_mut(&pair) {
                        *c -= count;
                    }
                    touched.insert(pair);
                }
                for pair in pairs_of(&words[idx]) {
                    if let Some(set) = occurs_in.get_mut(&pair) {
                        set.remove(&idx);
                    }
                }
                let new_word = merge_symbols(&words[idx], best.ids, merged);
                for pair in pairs_of(&new_word) {
                    *pair_counts.entry(pair).or_default() += count;
                    occurs_in.entry(pair).or_default().insert(idx);
                    touched.insert(pair);
                }
                words[idx] = new_word;
            }
            for pair in touched {
                let count = pair_counts[&pair];
                if count == 0 {
                    pair_counts.remove(&pair);
                } else {
                    heap.push(candidate(pair, count, &symbols));
                }
            }
        }

        Ok(Self::from_parts(merges, char_vocab, config.unk_token.clone()))
    }

    pub fn from_parts(
        merges: Vec<(String, String)>,
        char_vocab: BTreeSet<char>,
        unk_token: String,
    ) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            ranks.entry(pair.clone()).or_insert(rank);
        }
        Self {
            merges,
            ranks,
            char_vocab,
            unk_token,
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn char_vocab(&self) -> &BTreeSet<char> {
        &self.char_vocab
    }

    pub fn unk_token(&self) -> &str {
        &self.unk_token
    }

    /// Splits one word into subword pieces, `@@` on all but the last.
    pub fn encode_word(&self, word: &str) -> Vec<String> {
        let escaped = escape_word(word);
        if escaped.chars().any(|c| !self.char_vocab.contains(&c)) {
            return vec![self.unk_token.clone()];
        }
        let mut pieces: Vec<String> = escaped.chars().map(String::from).collect();
        loop {
            let best = pieces
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && &pieces[i] == left && &pieces[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            pieces = merged;
        }
        let last = pieces.len() - 1;
        for piece in &mut pieces[..last] {
            piece.push_str(CONTINUATION);
        }
        pieces
    }

    pub fn encode(&self, text: &str) -> Vec<String> {
        text.split_ascii_whitespace()
            .flat_map(|word| self.encode_word(word))
            .collect()
    }

    /// Token strings the codec can emit, in a fixed order.
    pub fn vocab(&self) -> Vocab {
        let mut symbols: Vec<String> = self.char_vocab.iter().map(|c| c.to_string()).collect();
        symbols.extend(self.merges.iter().map(|(l, r)| format!("{l}{r}")));
        let mut vocab = Vocab::with_specials(&self.unk_token);
        for symbol in symbols {
            vocab.insert(format!("{symbol}{CONTINUATION}"));
            vocab.insert(symbol);
        }
        vocab
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out.push_str(CHARS_MARKER);
        out.push('\n');
        for c in &self.char_vocab {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {HEADER:?}"),
                })
            }
        }
        let mut merges = Vec::new();
        let mut char_vocab = BTreeSet::new();
        let mut in_chars = false;
        for (i, line) in lines {
            let parse_err = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            if in_chars {
                let mut chars = line.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => {
                        char_vocab.insert(c);
                    }
                    _ => return Err(parse_err(format!("expected one character, got {line:?}"))),
                }
            } else if line == CHARS_MARKER {
                in_chars = true;
            } else {
                match line.split_once(' ') {
                    Some((l, r)) if !l.is_empty() && !r.is_empty() && !r.contains(' ') => {
                        merges.push((l.to_string(), r.to_string()))
                    }
                    _ => return Err(parse_err(format!("malformed merge line {line:?}"))),
                }
            }
        }
        if !in_chars {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("missing {CHARS_MARKER} section"),
            });
        }
        Ok(Self::from_parts(merges, char_vocab, UNK.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Joins `@@`-marked pieces back into words.
pub fn decode<S: AsRef<str>>(tokens: &[S]) -> Result<String> {
    let mut words: Vec<String> = Vec::new();
    let mut pending = String::new();
    let mut dangling = None;
    for token in tokens {
        let token = token.as_ref();
        if let Some(stem) = token.strip_suffix(CONTINUATION) {
            pending.push_str(stem);
            dangling = Some(token);
        } else {
            pending.push_str(token);
            words.push(std::mem::take(&mut pending));
            dangling = None;
        }
    }
    if let Some(token) = dangling {
        return Err(Error::DanglingContinuation(token.to_string()));
    }
    Ok(unescape(&words.join(" ")))
}

/// Token string to id mapping shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    fn with_specials(unk: &str) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for special in [PAD, BOS, EOS, unk] {
            vocab.insert(special.to_string());
        }
        vocab
    }

    fn insert(&mut self, token: String) {
        if !self.ids.contains_key(&token) {
            self.ids.insert(token.clone(), self.tokens.len() as u32);
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Token strings for ids, dropping padding and sentence markers.
    pub fn tokens(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != Self::PAD_ID && id != Self::BOS_ID && id != Self::EOS_ID)
            .map(|&id| self.token(id).unwrap_or(UNK).to_string())
            .collect()
    }
}
