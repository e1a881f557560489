//! Labeled text samples: JSONL I/O, stratified splits, a bundled clean corpus
//! and the synthetic corruptor used for offline training.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::label::Label;
use crate::seed;

/// Environment variable overriding the bundled clean corpus (one sentence per line).
pub const CORPUS_ENV: &str = "CLED_CORPUS";

const BUNDLED_CORPUS: &str = include_str!("../assets/clean_corpus.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Ingested,
    ToyInjection,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub text: String,
    pub label: Label,
    pub source: Source,
    /// Injection metadata or any unrecognized fields of an ingested record.
    pub provenance: Option<Map<String, Value>>,
}

impl LabeledSample {
    pub fn new(text: impl Into<String>, label: Label, source: Source) -> Self {
        Self {
            text: text.into(),
            label,
            source,
            provenance: None,
        }
    }

    pub fn with_provenance(mut self, provenance: Map<String, Value>) -> Self {
        self.provenance = Some(provenance);
        self
    }

    /// The JSONL object: label is written as `0`/`1`.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("text".into(), Value::String(self.text.clone()));
        obj.insert("label".into(), Value::from(self.label.as_u8()));
        obj.insert(
            "source".into(),
            serde_json::to_value(self.source).expect("source serializes"),
        );
        if let Some(p) = &self.provenance {
            obj.insert("provenance".into(), Value::Object(p.clone()));
        }
        Value::Object(obj)
    }

    pub fn from_json(value: Value) -> std::result::Result<Self, String> {
        let Value::Object(mut obj) = value else {
            return Err("expected a JSON object".into());
        };
        let text = match obj.remove("text") {
            Some(Value::String(s)) => s,
            Some(_) => return Err("field `text` must be a string".into()),
            None => return Err("missing required field `text`".into()),
        };
        let label = match obj.remove("label") {
            Some(v) => parse_label(&v)?,
            None => return Err("missing required field `label`".into()),
        };
        let source = match obj.remove("source") {
            None | Some(Value::Null) => Source::Ingested,
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|_| format!("unknown source {v}"))?,
        };
        let mut provenance = match obj.remove("provenance") {
            None | Some(Value::Null) => None,
            Some(Value::Object(p)) => Some(p),
            Some(other) => {
                let mut m = Map::new();
                m.insert("provenance".into(), other);
                Some(m)
            }
        };
        if !obj.is_empty() {
            provenance.get_or_insert_with(Map::new).extend(obj);
        }
        Ok(Self {
            text,
            label,
            source,
            provenance,
        })
    }
}

fn parse_label(v: &Value) -> std::result::Result<Label, String> {
    match v {
        Value::Number(n) => match n.as_u64() {
            Some(0) => Ok(Label::Clean),
            Some(1) => Ok(Label::Erroneous),
            _ => Err(format!("label {n} is not one of 0, 1, \"clean\", \"erroneous\"")),
        },
        Value::Bool(b) => Ok(Label::from_bit(*b)),
        Value::String(s) => s.parse().map_err(|_| {
            format!("label {s:?} is not one of 0, 1, \"clean\", \"erroneous\"")
        }),
        other => Err(format!("label {other} is not one of 0, 1, \"clean\", \"erroneous\"")),
    }
}

/// Parses one JSON object per non-blank line.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: format!("malformed JSON: {e}"),
        })?;
        let sample = LabeledSample::from_json(value).map_err(|message| CorpusError::Line {
            line: i + 1,
            message,
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<LabeledSample>> {
    read_jsonl(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_jsonl(mut w: impl Write, samples: &[LabeledSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &s.to_json()).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub warnings: Vec<String>,
}

/// Seeded stratified split: each class contributes `round(fraction * n_class)`
/// samples to the training side.
pub fn split(samples: &[LabeledSample], train_fraction: f64, seed: u64) -> Result<Split> {
    if samples.is_empty() {
        return Err(CorpusError::Invalid("cannot split an empty sample set".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(CorpusError::Invalid(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [Label::Clean, Label::Erroneous] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let k = (train_fraction * idx.len() as f64).round() as usize;
        train_idx.extend_from_slice(&idx[..k]);
        test_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    let mut warnings = Vec::new();
    if test_idx.is_empty() {
        warnings.push("test split is empty".to_string());
    }
    if train_idx.is_empty() {
        warnings.push("train split is empty".to_string());
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(Split {
        train: take(&train_idx),
        test: take(&test_idx),
        warnings,
    })
}

// ---- clean corpus --------------------------------------------------------

fn sentences_of(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Sentences of the bundled corpus, or of the file named by `CLED_CORPUS`.
pub fn clean_sentences() -> Result<Vec<String>> {
    let sentences = match std::env::var_os(CORPUS_ENV) {
        Some(path) => sentences_of(&std::fs::read_to_string(path)?),
        None => sentences_of(BUNDLED_CORPUS),
    };
    if sentences.is_empty() {
        return Err(CorpusError::Invalid("clean corpus has no sentences".into()));
    }
    Ok(sentences)
}

/// `count` summary-length passages of 2 to 4 distinct sentences each.
pub fn passages(sentences: &[String], count: usize, seed: u64) -> Vec<String> {
    let mut rng = seed::rng(seed);
    (0..count)
        .map(|_| {
            let k = rng.random_range(2..=4).min(sentences.len());
            sentences
                .choose_multiple(&mut rng, k)
                .cloned()
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

// ---- synthetic corruption ---------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    FixedString,
    RandomSimilarStrings,
    GrammarRepetition,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 3] = [
        CorruptionMode::FixedString,
        CorruptionMode::RandomSimilarStrings,
        CorruptionMode::GrammarRepetition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionMode::FixedString => "fixed_string",
            CorruptionMode::RandomSimilarStrings => "random_similar_strings",
            CorruptionMode::GrammarRepetition => "grammar_repetition",
        }
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown corruption mode {s:?}"))
    }
}

/// Word count of every fixed-string output; typical passages have 30 to 80 words.
pub const FIXED_STRING_WORDS: usize = 48;

const FIXED_FRAGMENTS: [&str; 12] = [
    "the", "thea", "of", "a", "and", "ing", "the-", "s", "to", "thethe", "aa", "in",
];

const CLUSTERS: [&str; 16] = [
    "sdb", "rst", "str", "ssw", "brr", "ng", "ck", "tt", "sch", "kk", "rbl", "ww", "zz", "nnh",
    "gr", "dd",
];
const SYLLABLES: [&str; 14] = [
    "ber", "sa", "aa", "edt", "ol", "ree", "ka", "er", "us", "ii", "on", "ta", "lee", "oo",
];

fn fixed_string(seed: u64) -> String {
    let mut rng = seed::rng(seed);
    let n = rng.random_range(1..=3);
    let pattern: Vec<&str> = (0..n)
        .map(|_| *FIXED_FRAGMENTS.choose(&mut rng).expect("non-empty"))
        .collect();
    (0..FIXED_STRING_WORDS)
        .map(|i| pattern[i % pattern.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

fn pseudo_word(rng: &mut seed::Rng) -> String {
    let mut w = String::new();
    let parts = rng.random_range(2..=4);
    for _ in 0..parts {
        if rng.random_bool(0.55) {
            w.push_str(CLUSTERS.choose(rng).expect("non-empty"));
        }
        w.push_str(SYLLABLES.choose(rng).expect("non-empty"));
    }
    if rng.random_bool(0.3) {
        // repeated cluster, as in "berber"
        let tail: String = w.chars().rev().take(3).collect::<Vec<_>>().into_iter().rev().collect();
        w.push_str(&tail);
    }
    w
}

fn random_similar_strings(clean: &str, seed: u64) -> String {
    let mut rng = seed::rng(seed);
    let n = clean.split_whitespace().count().max(1);
    let mut words = Vec::with_capacity(n);
    let mut prev: Option<String> = None;
    for _ in 0..n {
        let r: f64 = rng.random();
        let w = if r < 0.08 {
            "-".to_string()
        } else if r < 0.3 && prev.is_some() {
            // a near-copy of the previous pseudo-word
            let p = prev.clone().expect("checked");
            let mut chars: Vec<char> = p.chars().collect();
            let i = rng.random_range(0..chars.len());
            chars.insert(i, chars[i]);
            chars.into_iter().collect()
        } else {
            pseudo_word(&mut rng)
        };
        if w != "-" {
            prev = Some(w.clone());
        }
        words.push(w);
    }
    words.join(" ")
}

/// Indices duplicated by `grammar_repetition` for a text of `n` words.
fn repetition_indices(n: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let frac = rng.random_range(0.10..=0.30);
    let k = ((n as f64 * frac).floor() as usize).clamp(1, n);
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn grammar_repetition(clean: &str, seed: u64) -> String {
    let mut rng = seed::rng(seed);
    let words: Vec<&str> = clean.split_whitespace().collect();
    if words.is_empty() {
        return String::new();
    }
    let dup = repetition_indices(words.len(), &mut rng);
    let mut out = Vec::with_capacity(words.len() + dup.len());
    let mut d = dup.iter().peekable();
    for (i, w) in words.iter().enumerate() {
        out.push(*w);
        if d.peek() == Some(&&i) {
            out.push(*w);
            d.next();
        }
    }
    out.join(" ")
}

/// Corrupts a clean text in the style of one erroneous-output class.
pub fn synthesize_corruption(clean: &str, mode: CorruptionMode, seed: u64) -> Result<String> {
    if clean.trim().is_empty() {
        return Err(CorpusError::Invalid("clean text is empty".into()));
    }
    Ok(match mode {
        CorruptionMode::FixedString => fixed_string(seed),
        CorruptionMode::RandomSimilarStrings => random_similar_strings(clean, seed),
        CorruptionMode::GrammarRepetition => grammar_repetition(clean, seed),
    })
}

/// Relative frequencies of the corruption modes in a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMix {
    pub fixed_string: f64,
    pub random_similar_strings: f64,
    pub grammar_repetition: f64,
}

/// Fixed outputs dominate because exponent-MSB flips are both the most
/// frequently relevant and catastrophic; grammar-only damage needs a flip of
/// a rarely-zero lower exponent bit.
impl Default for CorruptionMix {
    fn default() -> Self {
        Self {
            fixed_string: 0.45,
            random_similar_strings: 0.50,
            grammar_repetition: 0.05,
        }
    }
}

impl CorruptionMix {
    fn pick(&self, u: f64) -> CorruptionMode {
        let total = self.fixed_string + self.random_similar_strings + self.grammar_repetition;
        let u = u * total;
        if u < self.fixed_string {
            CorruptionMode::FixedString
        } else if u < self.fixed_string + self.random_similar_strings {
            CorruptionMode::RandomSimilarStrings
        } else {
            CorruptionMode::GrammarRepetition
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.fixed_string, self.random_similar_strings, self.grammar_repetition];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || parts.iter().sum::<f64>() <= 0.0 {
            return Err(CorpusError::Invalid(
                "corruption mix weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }
}

/// `n_clean` clean passages and `n_corrupt` corrupted ones built from
/// separately drawn passages. Each corrupted sample records its mode and seed.
pub fn synthetic_dataset(
    sentences: &[String],
    n_clean: usize,
    n_corrupt: usize,
    mix: CorruptionMix,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    mix.validate()?;
    if sentences.is_empty() {
        return Err(CorpusError::Invalid("clean corpus has no sentences".into()));
    }
    let clean = passages(sentences, n_clean, seed::derive(seed, 0));
    let sources = passages(sentences, n_corrupt, seed::derive(seed, 1));
    let mut rng = seed::rng(seed::derive(seed, 2));
    let mut out: Vec<LabeledSample> = clean
        .into_iter()
        .map(|t| LabeledSample::new(t, Label::Clean, Source::Synthetic))
        .collect();
    for (i, text) in sources.iter().enumerate() {
        let mode = mix.pick(rng.random());
        let s = seed::derive_path(seed, &[3, i as u64]);
        let corrupted = synthesize_corruption(text, mode, s)?;
        let mut prov = Map::new();
        prov.insert("mode".into(), Value::from(mode.as_str()));
        prov.insert("seed".into(), Value::from(s));
        out.push(
            LabeledSample::new(corrupted, Label::Erroneous, Source::Synthetic).with_provenance(prov),
        );
    }
    Ok(out)
}

// ---- published-dataset adapter ------------------------------------------------

/// Field names tried, in order, when adapting records of an external dataset
/// whose schema is not fixed.
pub const TEXT_FIELDS: [&str; 7] = [
    "text", "summary", "output", "generated", "prediction", "translation", "sentence",
];
pub const LABEL_FIELDS: [&str; 7] = [
    "label", "erroneous", "is_error", "error", "faulty", "class", "y",
];

fn adapt_object(mut obj: Map<String, Value>) -> std::result::Result<LabeledSample, String> {
    let key_of = |obj: &Map<String, Value>, names: &[&str]| {
        names.iter().find_map(|n| {
            obj.keys()
                .find(|k| k.eq_ignore_ascii_case(n))
                .cloned()
        })
    };
    let text_key = key_of(&obj, &TEXT_FIELDS).ok_or("no text field found")?;
    let label_key = key_of(&obj, &LABEL_FIELDS).ok_or("no label field found")?;
    let text = match obj.remove(&text_key) {
        Some(Value::String(s)) => s,
        Some(other) => other.to_string(),
        None => unreachable!(),
    };
    let raw = obj.remove(&label_key).expect("key exists");
    let label = match &raw {
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "0" | "clean" | "false" | "correct" | "error-free" => Label::Clean,
            "1" | "erroneous" | "true" | "error" | "faulty" => Label::Erroneous,
            other => return Err(format!("unrecognized label {other:?}")),
        },
        Value::Number(n) if n.as_f64() == Some(0.0) => Label::Clean,
        Value::Number(n) if n.as_f64() == Some(1.0) => Label::Erroneous,
        other => parse_label(other)?,
    };
    let mut prov = obj;
    prov.insert("original_text_field".into(), Value::from(text_key));
    prov.insert("original_label_field".into(), Value::from(label_key));
    Ok(LabeledSample::new(text, label, Source::Ingested).with_provenance(prov))
}

/// Loads an external dataset file: JSON Lines, a JSON array, or CSV with a
/// header row (chosen by extension, `.csv` for CSV).
pub fn load_external(path: &Path) -> Result<Vec<LabeledSample>> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut records: Vec<Map<String, Value>> = Vec::new();
    if is_csv {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        for row in rdr.records() {
            let row = row?;
            records.push(
                headers
                    .iter()
                    .zip(row.iter())
                    .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                    .collect(),
            );
        }
    } else {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('[') {
            let values: Vec<Value> = serde_json::from_str(&text)
                .map_err(|e| CorpusError::Invalid(format!("malformed JSON array: {e}")))?;
            for (i, v) in values.into_iter().enumerate() {
                match v {
                    Value::Object(o) => records.push(o),
                    _ => {
                        return Err(CorpusError::Record {
                            index: i,
                            message: "expected a JSON object".into(),
                        })
                    }
                }
            }
        } else {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(line) {
                    Ok(Value::Object(o)) => records.push(o),
                    Ok(_) => {
                        return Err(CorpusError::Line {
                            line: i + 1,
                            message: "expected a JSON object".into(),
                        })
                    }
                    Err(e) => {
                        return Err(CorpusError::Line {
                            line: i + 1,
                            message: format!("malformed JSON: {e}"),
                        })
                    }
                }
            }
        }
    }
    records
        .into_iter()
        .enumerate()
        .map(|(index, r)| adapt_object(r).map_err(|message| CorpusError::Record { index, message }))
        .collect()
}

/// Per-class counts, for reports.
pub fn label_counts(samples: &[LabeledSample]) -> BTreeMap<Label, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.label).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacent_duplicates(text: &str) -> usize {
        let w: Vec<&str> = text.split_whitespace().collect();
        w.windows(2).filter(|p| p[0] == p[1]).count()
    }

    #[test]
    fn jsonl_two_lines_and_labels() {
        let data = "{\"text\":\"a b\",\"label\":0}\n\n{\"text\":\"c\",\"label\":\"erroneous\",\"extra\":5}\n";
        let s = read_jsonl(data.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, Label::Clean);
        assert_eq!(s[0].source, Source::Ingested);
        assert_eq!(s[1].label, Label::Erroneous);
        assert_eq!(s[1].provenance.as_ref().unwrap()["extra"], 5);
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let bad_label = "{\"text\":\"a\",\"label\":0}\n{\"text\":\"b\",\"label\":2}\n";
        match read_jsonl(bad_label.as_bytes()) {
            Err(CorpusError::Line { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let missing = "{\"label\":1}\n";
        match read_jsonl(missing.as_bytes()) {
            Err(CorpusError::Line { line: 1, message }) => assert!(message.contains("text")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_jsonl("{oops".as_bytes()), Err(CorpusError::Line { line: 1, .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut prov = Map::new();
        prov.insert("flat_index".into(), Value::from(12));
        let samples = vec![
            LabeledSample::new("Ünïcode \"quoted\"\ttab", Label::Clean, Source::Synthetic),
            LabeledSample::new("x  y", Label::Erroneous, Source::ToyInjection).with_provenance(prov),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &samples).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), samples);
    }

    fn balanced(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                LabeledSample::new(format!("t{i}"), Label::from_bit(i % 2 == 1), Source::Synthetic)
            })
            .collect()
    }

    #[test]
    fn split_is_stratified_exact_and_seeded() {
        let s = balanced(100);
        let a = split(&s, 0.8, 7).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (80, 20));
        assert_eq!(label_counts(&a.train)[&Label::Clean], 40);
        assert_eq!(label_counts(&a.test)[&Label::Erroneous], 10);
        let mut all: Vec<String> = a.train.iter().chain(&a.test).map(|x| x.text.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(split(&s, 0.8, 7).unwrap(), a);
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn split_full_fraction_warns() {
        let out = split(&balanced(10), 1.0, 1).unwrap();
        assert!(out.test.is_empty());
        assert_eq!(out.warnings, vec!["test split is empty".to_string()]);
        assert!(split(&[], 0.8, 1).is_err());
    }

    #[test]
    fn fixed_string_ignores_input() {
        let a = synthesize_corruption("the court signed the treaty", CorruptionMode::FixedString, 3).unwrap();
        let b = synthesize_corruption("a completely different text", CorruptionMode::FixedString, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.split_whitespace().count(), FIXED_STRING_WORDS);
    }

    #[test]
    fn repetition_on_short_sentence_duplicates_one_word() {
        let clean = "the court signed the treaty";
        for seed in 0..20 {
            let out = synthesize_corruption(clean, CorruptionMode::GrammarRepetition, seed).unwrap();
            assert_eq!(out.split_whitespace().count(), 6);
            assert_eq!(adjacent_duplicates(&out), 1, "{out}");
        }
    }

    #[test]
    fn corruption_is_deterministic_and_rejects_empty() {
        for mode in CorruptionMode::ALL {
            let a = synthesize_corruption("one two three four", mode, 9).unwrap();
            assert_eq!(a, synthesize_corruption("one two three four", mode, 9).unwrap());
            assert!(synthesize_corruption("  ", mode, 9).is_err());
        }
    }

    #[test]
    fn bundled_corpus_yields_passages() {
        let s = sentences_of(BUNDLED_CORPUS);
        assert!(s.len() >= 300);
        let p = passages(&s, 5, 1);
        assert_eq!(p.len(), 5);
        assert_eq!(p, passages(&s, 5, 1));
        assert!(p.iter().all(|t| t.split_whitespace().count() >= 10));
    }

    #[test]
    fn external_adapter_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "id,Summary,is_error\n1,hello world,false\n2,\"x, y\",1\n").unwrap();
        let s = load_external(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, Label::Clean);
        assert_eq!(s[1].text, "x, y");
        assert_eq!(s[1].label, Label::Erroneous);
        assert_eq!(s[1].provenance.as_ref().unwrap()["id"], "2");
        let jpath = dir.path().join("d.json");
        std::fs::write(&jpath, "[{\"output\":\"a\",\"label\":\"clean\"}]").unwrap();
        assert_eq!(load_external(&jpath).unwrap()[0].label, Label::Clean);
    }
}
