//! Single-bit fault-injection campaigns against a [`MiniTransformer`].
//!
//! Trial `t` at bit position `p` draws its parameter index from
//! `seed::rng(seed::derive_path(seed, &[p, t]))`, so every trial is
//! reproducible on its own and results do not depend on `jobs`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{LabeledSample, Source};
use crate::floatbits::{encode, flip_bit, BitPosition, BitWord32};
use crate::label::Label;
use crate::metrics;
use crate::minixformer::{Matrix, MiniTransformer, ModelError, Vocab};
use crate::seed;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Precondition(String),
    #[error("missing sweep results for positions {0:?}")]
    MissingPositions(Vec<u8>),
    #[error("only {found} of {wanted} relevant errors found within {attempts} attempts")]
    AttemptsExhausted {
        found: usize,
        wanted: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CampaignError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    #[default]
    Rouge1,
    Bleu,
    ExactMatchRate,
}

impl ScoreMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMetric::Rouge1 => "rouge1",
            ScoreMetric::Bleu => "bleu",
            ScoreMetric::ExactMatchRate => "exact_match_rate",
        }
    }
}

impl std::str::FromStr for ScoreMetric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rouge1" => Ok(ScoreMetric::Rouge1),
            "bleu" => Ok(ScoreMetric::Bleu),
            "exact_match_rate" | "exact" => Ok(ScoreMetric::ExactMatchRate),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

/// `n` seeded token sequences with lengths in `min_len..=max_len`, drawn
/// uniformly from the non-special ids `4..vocab_size`.
pub fn random_inputs(
    n: usize,
    min_len: usize,
    max_len: usize,
    vocab_size: usize,
    seed: u64,
) -> Vec<Vec<u32>> {
    let mut rng = seed::rng(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len.max(min_len));
            (0..len)
                .map(|_| rng.random_range(4..vocab_size.max(5) as u32))
                .collect()
        })
        .collect()
}

/// Error-free outputs for a fixed input set, with cached encoder outputs.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub inputs: Vec<Vec<u32>>,
    pub outputs: Vec<Vec<u32>>,
    pub max_len: usize,
    memories: Vec<Matrix>,
}

impl Baseline {
    pub fn compute(model: &MiniTransformer, inputs: &[Vec<u32>], max_len: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(CampaignError::Precondition("inputs must be non-empty".into()));
        }
        let mut memories = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let out = model.generate(inp, max_len)?;
            memories.push(model.encode(inp)?);
            outputs.push(out);
        }
        if outputs.iter().all(Vec::is_empty) {
            return Err(CampaignError::Precondition(
                "every error-free output is empty; no reference to score against".into(),
            ));
        }
        Ok(Self {
            inputs: inputs.to_vec(),
            outputs,
            max_len,
            memories,
        })
    }

    /// Outputs of `model`, reusing the cached encoder outputs when the
    /// encoder is known to be unchanged.
    fn run(&self, model: &MiniTransformer, encoder_unchanged: bool) -> Result<Vec<Vec<u32>>> {
        if encoder_unchanged {
            Ok(self
                .memories
                .iter()
                .map(|m| model.generate_from_memory(m, self.max_len))
                .collect())
        } else {
            self.inputs
                .iter()
                .map(|i| model.generate(i, self.max_len).map_err(Into::into))
                .collect()
        }
    }

    /// Similarity of `outputs` to the baseline, averaged over inputs.
    /// Inputs whose baseline output is empty are skipped by rouge1 and bleu.
    pub fn score(&self, outputs: &[Vec<u32>], metric: ScoreMetric) -> f64 {
        let pairs = outputs.iter().zip(&self.outputs);
        match metric {
            ScoreMetric::ExactMatchRate => {
                pairs.filter(|(o, b)| o == b).count() as f64 / self.outputs.len() as f64
            }
            ScoreMetric::Rouge1 | ScoreMetric::Bleu => {
                let scores: Vec<f64> = pairs
                    .filter(|(_, b)| !b.is_empty())
                    .map(|(o, b)| {
                        let s = if metric == ScoreMetric::Rouge1 {
                            metrics::rouge1(o, b)
                        } else {
                            metrics::bleu4(o, b)
                        };
                        s.expect("reference is non-empty")
                    })
                    .collect();
                scores.iter().sum::<f64>() / scores.len() as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub trial: usize,
    pub flat_index: usize,
    pub tensor: String,
    pub position: BitPosition,
    pub pre_bits: BitWord32,
    pub post_bits: BitWord32,
    /// The flip set the bit (0 to 1).
    pub rising: bool,
    pub relevant: bool,
    pub score: f64,
    pub outputs: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub position: BitPosition,
    pub trials: usize,
    pub relevant_trials: usize,
    /// Average over relevant trials; `None` when there were none.
    pub mean_score: Option<f64>,
    pub score_metric: ScoreMetric,
    pub rising_trials: usize,
    pub relevant_rising: usize,
    pub mean_score_rising: Option<f64>,
}

impl SweepResult {
    fn from_records(position: BitPosition, metric: ScoreMetric, records: &[InjectionRecord]) -> Self {
        let mean = |it: &mut dyn Iterator<Item = f64>| {
            let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            (n > 0).then(|| s / n as f64)
        };
        let relevant = || records.iter().filter(|r| r.relevant);
        Self {
            position,
            trials: records.len(),
            relevant_trials: relevant().count(),
            mean_score: mean(&mut relevant().map(|r| r.score)),
            score_metric: metric,
            rising_trials: records.iter().filter(|r| r.rising).count(),
            relevant_rising: relevant().filter(|r| r.rising).count(),
            mean_score_rising: mean(&mut relevant().filter(|r| r.rising).map(|r| r.score)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    pub metric: ScoreMetric,
    /// Keep adding trials past `trials` until this many are relevant.
    pub min_relevant: Option<usize>,
    /// Hard cap on trials when `min_relevant` is set.
    pub max_trials: usize,
    pub jobs: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            metric: ScoreMetric::Rouge1,
            min_relevant: None,
            max_trials: 50,
            jobs: 1,
        }
    }
}

fn encoder_unchanged(model: &MiniTransformer, index: usize) -> bool {
    model
        .layout
        .locate(index)
        .is_some_and(|t| t.name.starts_with("decoder.") || t.name == "prediction")
}

/// Flips one bit, runs every input, restores the bit.
pub fn inject(
    model: &mut MiniTransformer,
    baseline: &Baseline,
    flat_index: usize,
    position: BitPosition,
    metric: ScoreMetric,
) -> Result<InjectionRecord> {
    let original = model.get_param(flat_index)?;
    let pre_bits = encode(original);
    let post_bits = flip_bit(pre_bits, position);
    model.set_param(flat_index, f32::from_bits(post_bits.raw()))?;
    let outputs = baseline.run(model, encoder_unchanged(model, flat_index));
    model.set_param(flat_index, original)?;
    let outputs = outputs?;
    let relevant = outputs != baseline.outputs;
    let score = baseline.score(&outputs, metric);
    let tensor = model
        .layout
        .locate(flat_index)
        .map(|t| t.name.clone())
        .unwrap_or_default();
    Ok(InjectionRecord {
        trial: 0,
        flat_index,
        tensor,
        position,
        pre_bits,
        post_bits,
        rising: !pre_bits.bit(position),
        relevant,
        score,
        outputs,
    })
}

/// The parameter index hit by trial `trial` at `position`.
pub fn trial_index(seed: u64, position: BitPosition, trial: usize, param_count: usize) -> usize {
    let mut rng = seed::rng(seed::derive_path(seed, &[position.index() as u64, trial as u64]));
    rng.random_range(0..param_count)
}

fn run_trials(
    model: &MiniTransformer,
    baseline: &Baseline,
    position: BitPosition,
    trials: std::ops::Range<usize>,
    opts: &SweepOptions,
) -> Result<Vec<InjectionRecord>> {
    let run_chunk = |model: &mut MiniTransformer, range: std::ops::Range<usize>| {
        range
            .map(|t| {
                let idx = trial_index(opts.seed, position, t, model.param_count());
                inject(model, baseline, idx, position, opts.metric).map(|mut r| {
                    r.trial = t;
                    r
                })
            })
            .collect::<Result<Vec<_>>>()
    };
    let jobs = opts.jobs.max(1).min(trials.len().max(1));
    if jobs == 1 {
        return run_chunk(&mut model.clone(), trials);
    }
    let per = trials.len().div_ceil(jobs);
    let chunks: Vec<std::ops::Range<usize>> = (0..jobs)
        .map(|j| {
            let s = trials.start + j * per;
            s.min(trials.end)..(s + per).min(trials.end)
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|c| {
                let mut local = model.clone();
                scope.spawn(move || run_chunk(&mut local, c))
            })
            .collect();
        let mut out = Vec::with_capacity(trials.len());
        for h in handles {
            out.extend(h.join().expect("trial worker panicked")?);
        }
        Ok(out)
    })
}

/// Runs `opts.trials` random single-bit flips at `position` (more when
/// `min_relevant` asks for it) and summarizes them.
///
/// The model is restored after every trial; the caller's instance is only
/// read, trials run on private copies.
pub fn sweep(
    model: &MiniTransformer,
    baseline: &Baseline,
    position: BitPosition,
    opts: &SweepOptions,
) -> Result<(SweepResult, Vec<InjectionRecord>)> {
    if opts.trials == 0 {
        return Err(CampaignError::Precondition("trials must be at least 1".into()));
    }
    let mut records = run_trials(model, baseline, position, 0..opts.trials, opts)?;
    if let Some(want) = opts.min_relevant {
        let batch = 64 * opts.jobs.max(1);
        while records.iter().filter(|r| r.relevant).count() < want && records.len() < opts.max_trials
        {
            let start = records.len();
            let end = (start + batch).min(opts.max_trials);
            for r in run_trials(model, baseline, position, start..end, opts)? {
                records.push(r);
                if records.iter().filter(|r| r.relevant).count() >= want {
                    break;
                }
            }
        }
    }
    Ok((SweepResult::from_records(position, opts.metric, &records), records))
}

/// Positions whose mean score over relevant trials falls below
/// `baseline * (1 - degradation_threshold)`. Requires all 32 positions.
pub fn identify_critical_bits(
    results: &[SweepResult],
    baseline: f64,
    degradation_threshold: f64,
) -> Result<BTreeSet<BitPosition>> {
    let present: BTreeSet<u8> = results.iter().map(|r| r.position.index()).collect();
    let missing: Vec<u8> = (0..32).filter(|p| !present.contains(p)).collect();
    if !missing.is_empty() {
        return Err(CampaignError::MissingPositions(missing));
    }
    Ok(critical_among(results, baseline, degradation_threshold))
}

/// As [`identify_critical_bits`], over whichever positions were swept.
pub fn critical_among(
    results: &[SweepResult],
    baseline: f64,
    degradation_threshold: f64,
) -> BTreeSet<BitPosition> {
    let cut = baseline * (1.0 - degradation_threshold);
    results
        .iter()
        .filter(|r| r.mean_score.is_some_and(|s| s < cut))
        .map(|r| r.position)
        .collect()
}

pub fn sweep_csv(results: &[SweepResult]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut s = String::from(
        "position,trials,relevant_trials,mean_score,score_metric,rising_trials,relevant_rising,mean_score_rising\n",
    );
    for r in results {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.position.index(),
            r.trials,
            r.relevant_trials,
            opt(r.mean_score),
            r.score_metric.as_str(),
            r.rising_trials,
            r.relevant_rising,
            opt(r.mean_score_rising)
        )
        .expect("writing to a String");
    }
    s
}

pub fn write_records_jsonl(mut w: impl Write, records: &[InjectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub num_relevant_errors: usize,
    pub max_attempts: usize,
    pub seed: u64,
}

/// Random single-bit errors (uniform parameter, uniform bit) are injected until
/// `num_relevant_errors` change at least one output. Changed outputs from
/// those errors are taken round-robin across errors, up to one per input,
/// and paired with the same number of error-free outputs.
pub fn generate_error_dataset(
    model: &MiniTransformer,
    baseline: &Baseline,
    vocab: &Vocab,
    opts: &DatasetOptions,
) -> Result<Vec<LabeledSample>> {
    if opts.num_relevant_errors == 0 {
        return Err(CampaignError::Precondition(
            "num_relevant_errors must be at least 1".into(),
        ));
    }
    let mut work = model.clone();
    let mut errors: Vec<InjectionRecord> = Vec::new();
    let mut attempts = 0;
    while errors.len() < opts.num_relevant_errors {
        if attempts == opts.max_attempts {
            return Err(CampaignError::AttemptsExhausted {
                found: errors.len(),
                wanted: opts.num_relevant_errors,
                attempts,
            });
        }
        let mut rng = seed::rng(seed::derive(opts.seed, attempts as u64));
        let index = rng.random_range(0..work.param_count());
        let position = BitPosition::new(rng.random_range(0..32)).expect("in range");
        let mut rec = inject(&mut work, baseline, index, position, ScoreMetric::ExactMatchRate)?;
        rec.trial = attempts;
        attempts += 1;
        if rec.relevant {
            errors.push(rec);
        }
    }

    let n = baseline.inputs.len();
    let changed: Vec<Vec<usize>> = errors
        .iter()
        .map(|e| (0..n).filter(|&i| e.outputs[i] != baseline.outputs[i]).collect())
        .collect();
    let mut erroneous = Vec::new();
    let mut cursor = vec![0usize; errors.len()];
    'fill: loop {
        let mut progressed = false;
        for (e, idx) in changed.iter().enumerate() {
            if erroneous.len() == n {
                break 'fill;
            }
            if let Some(&i) = idx.get(cursor[e]) {
                cursor[e] += 1;
                erroneous.push((e, i));
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut clean_inputs: Vec<usize> = (0..n).collect();
    if erroneous.len() < n {
        let mut rng = seed::rng(seed::derive(opts.seed, u64::MAX));
        clean_inputs = rand::seq::index::sample(&mut rng, n, erroneous.len()).into_vec();
        clean_inputs.sort_unstable();
    }

    let mut out = Vec::with_capacity(2 * erroneous.len());
    for i in clean_inputs {
        let mut prov = Map::new();
        prov.insert("input".into(), Value::from(i));
        out.push(
            LabeledSample::new(vocab.decode(&baseline.outputs[i]), Label::Clean, Source::ToyInjection)
                .with_provenance(prov),
        );
    }
    for (e, i) in erroneous {
        let rec = &errors[e];
        let mut prov = Map::new();
        prov.insert("input".into(), Value::from(i));
        prov.insert("flat_index".into(), Value::from(rec.flat_index));
        prov.insert("position".into(), Value::from(rec.position.index()));
        prov.insert("tensor".into(), Value::from(rec.tensor.clone()));
        prov.insert("attempt".into(), Value::from(rec.trial));
        out.push(
            LabeledSample::new(vocab.decode(&rec.outputs[i]), Label::Erroneous, Source::ToyInjection)
                .with_provenance(prov),
        );
    }
    Ok(out)
}
