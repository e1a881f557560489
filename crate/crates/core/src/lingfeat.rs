//! Linguistic features of generated text.
//!
//! Sixteen features in a fixed order: three spelling-rule violations measured
//! per word, five character/word-shape patterns, and eight part-of-speech
//! frequencies from a lexicon tagger. The order is part of the model-file
//! contract ([`FEATURE_NAMES`]).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_FEATURES: usize = 16;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "uppercase_middle",
    "four_or_more_consonants",
    "three_or_more_eq_chars",
    "punctuation_mark",
    "digit",
    "blank",
    "vowel",
    "words_density",
    "ADP",
    "NUM",
    "VERB",
    "DET",
    "PRON",
    "NOUN",
    "PRT",
    "ADV",
];

const BUNDLED_LEXICON: &str = include_str!("../assets/lexicon.tsv");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
}

/// Closed tag set. Adjectives, conjunctions and punctuation fold into `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Adp,
    Num,
    Verb,
    Det,
    Pron,
    Noun,
    Prt,
    Adv,
    Other,
}

impl PosTag {
    /// The eight tags that have a feature slot, in feature order.
    pub const COUNTED: [PosTag; 8] = [
        PosTag::Adp,
        PosTag::Num,
        PosTag::Verb,
        PosTag::Det,
        PosTag::Pron,
        PosTag::Noun,
        PosTag::Prt,
        PosTag::Adv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adp => "ADP",
            PosTag::Num => "NUM",
            PosTag::Verb => "VERB",
            PosTag::Det => "DET",
            PosTag::Pron => "PRON",
            PosTag::Noun => "NOUN",
            PosTag::Prt => "PRT",
            PosTag::Adv => "ADV",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ADP" => PosTag::Adp,
            "NUM" => PosTag::Num,
            "VERB" => PosTag::Verb,
            "DET" => PosTag::Det,
            "PRON" => PosTag::Pron,
            "NOUN" => PosTag::Noun,
            "PRT" => PosTag::Prt,
            "ADV" => PosTag::Adv,
            "OTHER" | "ADJ" | "CONJ" | "X" | "." => PosTag::Other,
            other => return Err(format!("unknown tag `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub surface: String,
    pub tag: PosTag,
}

/// Most-frequent-tag lexicon keyed by lowercase word.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, PosTag>,
}

impl Lexicon {
    /// Parses `word<TAB>TAG` lines. Blank lines and `#` comments are skipped;
    /// a later entry for the same word replaces an earlier one.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| LexiconError::Parse {
                line: i + 1,
                msg: "expected word<TAB>TAG".into(),
            })?;
            let tag = tag
                .trim()
                .parse::<PosTag>()
                .map_err(|msg| LexiconError::Parse { line: i + 1, msg })?;
            entries.insert(word.trim().to_lowercase(), tag);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The lexicon compiled into the crate.
    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::parse(BUNDLED_LEXICON).expect("bundled lexicon parses"))
    }

    pub fn get(&self, word: &str) -> Option<PosTag> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Maximal runs of non-whitespace.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn normalize(word: &str) -> String {
    word.trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

fn is_numeral(w: &str) -> bool {
    w.chars().any(|c| c.is_ascii_digit())
        && w.chars().all(|c| c.is_ascii_digit() || matches!(c, ',' | '.' | '-' | '/' | ':'))
}

fn suffix_tag(w: &str) -> PosTag {
    let len = w.chars().count();
    if is_numeral(w) {
        return PosTag::Num;
    }
    if !w.chars().any(|c| c.is_alphanumeric()) {
        return PosTag::Other;
    }
    if len > 3 && w.ends_with("ly") {
        return PosTag::Adv;
    }
    if (len > 4 && w.ends_with("ing")) || (len > 3 && w.ends_with("ed")) {
        return PosTag::Verb;
    }
    if len > 4 && ["ize", "ise", "ify"].iter().any(|s| w.ends_with(s)) {
        return PosTag::Verb;
    }
    if len > 5
        && ["ous", "ful", "ive", "able", "ible", "ical", "less"]
            .iter()
            .any(|s| w.ends_with(s))
    {
        return PosTag::Other;
    }
    PosTag::Noun
}

/// Lexicon lookup on the case-folded word with edge punctuation stripped,
/// then suffix rules for unknown words, defaulting to `Noun`.
pub fn tag_word(lexicon: &Lexicon, word: &str) -> PosTag {
    let w = normalize(word);
    if w.is_empty() {
        return PosTag::Other;
    }
    if let Some(tag) = lexicon.get(&w) {
        return tag;
    }
    // possessive / contraction clitics: "court's" -> "court"
    if let Some(stem) = w.strip_suffix("'s").or_else(|| w.strip_suffix("’s")) {
        if let Some(tag) = lexicon.get(stem) {
            return tag;
        }
    }
    suffix_tag(&w)
}

pub fn pos_tag(lexicon: &Lexicon, words: &[&str]) -> Vec<TaggedToken> {
    words
        .iter()
        .map(|w| TaggedToken {
            surface: (*w).to_string(),
            tag: tag_word(lexicon, w),
        })
        .collect()
}

/// The sixteen feature values in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; NUM_FEATURES])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.0[i])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        <[f64; NUM_FEATURES]>::try_from(values).ok().map(Self)
    }

    pub fn uppercase_middle(&self) -> f64 {
        self.0[0]
    }
    pub fn four_or_more_consonants(&self) -> f64 {
        self.0[1]
    }
    pub fn three_or_more_eq_chars(&self) -> f64 {
        self.0[2]
    }
    pub fn punctuation_mark(&self) -> f64 {
        self.0[3]
    }
    pub fn digit(&self) -> f64 {
        self.0[4]
    }
    pub fn blank(&self) -> f64 {
        self.0[5]
    }
    pub fn vowel(&self) -> f64 {
        self.0[6]
    }
    pub fn words_density(&self) -> f64 {
        self.0[7]
    }
    pub fn pos(&self, tag: PosTag) -> f64 {
        PosTag::COUNTED
            .iter()
            .position(|t| *t == tag)
            .map_or(0.0, |i| self.0[8 + i])
    }
}

fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u')
}

fn is_consonant(c: char) -> bool {
    c.is_ascii_alphabetic() && !is_vowel(c)
}

fn has_uppercase_middle(word: &str) -> bool {
    let mut chars = word.chars();
    if word.chars().nth(1).is_none() {
        return false;
    }
    chars.next();
    chars.any(|c| c.is_uppercase())
}

fn has_consonant_run(word: &str, run: usize) -> bool {
    let mut len = 0;
    for c in word.chars() {
        if is_consonant(c) {
            len += 1;
            if len >= run {
                return true;
            }
        } else {
            len = 0;
        }
    }
    false
}

fn has_equal_run(word: &str, run: usize) -> bool {
    let mut prev: Option<char> = None;
    let mut len = 0;
    for c in word.chars().flat_map(char::to_lowercase) {
        if Some(c) == prev {
            len += 1;
        } else {
            prev = Some(c);
            len = 1;
        }
        if len >= run {
            return true;
        }
    }
    false
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Feature extraction bound to a lexicon.
#[derive(Debug, Clone, Copy)]
pub struct FeatureExtractor<'a> {
    lexicon: &'a Lexicon,
}

impl Default for FeatureExtractor<'static> {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::bundled(),
        }
    }
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(lexicon: &'a Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn extract(&self, text: &str) -> FeatureVector {
        let words = tokenize(text);
        let mut v = [0.0; NUM_FEATURES];

        let n_words = words.len();
        v[0] = ratio(words.iter().filter(|w| has_uppercase_middle(w)).count(), n_words);
        v[1] = ratio(words.iter().filter(|w| has_consonant_run(w, 4)).count(), n_words);
        v[2] = ratio(words.iter().filter(|w| has_equal_run(w, 3)).count(), n_words);

        let (mut chars, mut punct, mut digits, mut blanks, mut vowels) = (0, 0, 0, 0, 0);
        for c in text.chars() {
            chars += 1;
            if c.is_ascii_punctuation() {
                punct += 1;
            } else if c.is_ascii_digit() {
                digits += 1;
            } else if matches!(c, ' ' | '\t' | '\n') {
                blanks += 1;
            } else if is_vowel(c) {
                vowels += 1;
            }
        }
        v[3] = ratio(punct, chars);
        v[4] = ratio(digits, chars);
        v[5] = ratio(blanks, chars);
        v[6] = ratio(vowels, chars);

        // Only words carrying letters enter the density, which keeps it in (0, 1].
        let (alpha_words, alpha_chars) = words.iter().fold((0, 0), |(w, c), word| {
            let letters = word.chars().filter(|c| c.is_alphabetic()).count();
            if letters > 0 {
                (w + 1, c + letters)
            } else {
                (w, c)
            }
        });
        v[7] = ratio(alpha_words, alpha_chars);

        let mut tag_counts = [0usize; 8];
        for w in &words {
            let tag = tag_word(self.lexicon, w);
            if let Some(i) = PosTag::COUNTED.iter().position(|t| *t == tag) {
                tag_counts[i] += 1;
            }
        }
        for (i, c) in tag_counts.iter().enumerate() {
            v[8 + i] = ratio(*c, n_words);
        }
        FeatureVector(v)
    }
}

/// Features with the bundled lexicon.
pub fn extract_features(text: &str) -> FeatureVector {
    FeatureExtractor::default().extract(text)
}

/// CSV header line for feature files, optionally with a trailing label column.
pub fn csv_header(with_label: bool) -> String {
    let mut h = FEATURE_NAMES.join(",");
    if with_label {
        h.push_str(",label");
    }
    h
}
