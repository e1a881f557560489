use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use cled::campaign::{self, Baseline, DatasetOptions, ScoreMetric, SweepOptions, SweepResult};
use cled::corpus::{self, CorruptionMix, LabeledSample};
use cled::floatbits::{decode, BitPosition};
use cled::forest::{self, Confusion, Dataset, Forest, Hyperparams, MaxFeatures, RocPoint};
use cled::lingfeat::{extract_features, FeatureVector};
use cled::minixformer::{MiniTransformer, ModelConfig, Variant, Vocab};
use cled::Label;
use serde::Serialize;
use serde_json::{json, Value};

use crate::table::{read_features, write_features, FeatureTable};
use crate::*;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::InitModel(a) => init_model(&a),
        Command::Sweep(a) => sweep(&a).map(|_| ()),
        Command::Inject(a) => inject(&a),
        Command::ErrorDataset(a) => error_dataset(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Ingest(a) => ingest(&a),
        Command::Split(a) => split(&a),
        Command::Features(a) => features(&a),
        Command::Train(a) => train(&a).map(|_| ()),
        Command::Predict(a) => predict(&a),
        Command::Roc(a) => roc(&a).map(|_| ()),
        Command::E2e(a) => e2e(&a).map(|_| ()),
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `<output>.run.json` next to a primary output file.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn write_run_config(path: &Path, command: &str, args: &impl Serialize) -> Result<()> {
    let cfg = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    });
    let mut text = serde_json::to_string_pretty(&cfg)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn parse_variant(s: &str) -> Result<Variant> {
    match s.to_ascii_lowercase().as_str() {
        "t5" => Ok(Variant::T5),
        "opus" => Ok(Variant::Opus),
        other => Err(usage(format!("unknown variant {other:?} (expected t5 or opus)"))),
    }
}

pub fn build_model(args: &ModelArgs) -> Result<MiniTransformer> {
    match &args.model {
        Some(path) => MiniTransformer::load(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => Ok(MiniTransformer::init(ModelConfig::toy(
            parse_variant(&args.variant)?,
            args.model_seed,
        ))?),
    }
}

pub fn build_inputs(model: &MiniTransformer, args: &InputArgs) -> Result<Vec<Vec<u32>>> {
    if args.inputs == 0 {
        return Err(usage("--inputs must be at least 1"));
    }
    let max = model.config.max_seq_len.min(16);
    Ok(campaign::random_inputs(
        args.inputs,
        max.min(6),
        max,
        model.config.vocab_size,
        args.input_seed,
    ))
}

fn init_model(a: &InitModelArgs) -> Result<()> {
    let m = build_model(&a.model)?;
    m.save(&a.output)?;
    println!("wrote {} parameters to {}", m.param_count(), a.output.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub results: Vec<SweepResult>,
    pub critical: Vec<u8>,
    pub complete: bool,
    pub csv: String,
}

pub fn sweep(a: &SweepArgs) -> Result<SweepReport> {
    let metric: ScoreMetric = a.metric.parse().map_err(usage)?;
    let positions: Vec<BitPosition> = match &a.positions {
        Some(ps) => ps
            .iter()
            .map(|&p| BitPosition::new(p).map_err(|e| usage(e.to_string())))
            .collect::<Result<_>>()?,
        None => BitPosition::all().collect(),
    };
    if positions.is_empty() {
        return Err(usage("--positions is empty"));
    }
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.degradation) {
        return Err(usage("--degradation must be within [0, 1]"));
    }
    let model = build_model(&a.model)?;
    let inputs = build_inputs(&model, &a.input)?;
    let baseline = Baseline::compute(&model, &inputs, a.input.max_len)?;
    let opts = SweepOptions {
        trials: a.trials,
        seed: a.seed,
        metric,
        min_relevant: a.min_relevant,
        max_trials: a.max_trials.max(a.trials),
        jobs: a.jobs.max(1),
    };
    let mut results = Vec::with_capacity(positions.len());
    let mut records = Vec::new();
    for p in positions {
        let (r, recs) = campaign::sweep(&model, &baseline, p, &opts)?;
        results.push(r);
        records.extend(recs);
    }
    let complete = results.len() == 32
        && results
            .iter()
            .map(|r| r.position.index())
            .collect::<std::collections::BTreeSet<_>>()
            .len()
            == 32;
    // the error-free output is its own reference, so the baseline score is 1
    let critical = if complete {
        campaign::identify_critical_bits(&results, 1.0, a.degradation)?
    } else {
        campaign::critical_among(&results, 1.0, a.degradation)
    };
    let critical: Vec<u8> = critical.into_iter().map(|p| p.index()).collect();
    let csv = campaign::sweep_csv(&results);
    let report = json!({
        "baseline_score": 1.0,
        "degradation_threshold": a.degradation,
        "score_metric": metric.as_str(),
        "all_positions_swept": complete,
        "critical_positions": critical,
    });
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_file(&dir.join("sweep.csv"), csv.as_bytes())?;
            let mut buf = Vec::new();
            campaign::write_records_jsonl(&mut buf, &records)?;
            write_file(&dir.join("injections.jsonl"), &buf)?;
            write_file(
                &dir.join("critical.json"),
                (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
            )?;
            write_run_config(&dir.join("run_config.json"), "sweep", a)?;
            eprintln!("critical positions: {critical:?}");
        }
        None => {
            print!("{csv}");
            eprintln!("critical positions: {critical:?}");
        }
    }
    Ok(SweepReport {
        results,
        critical,
        complete,
        csv,
    })
}

fn inject(a: &InjectArgs) -> Result<()> {
    let position = BitPosition::new(a.position).map_err(|e| usage(e.to_string()))?;
    let mut model = build_model(&a.model)?;
    if a.index >= model.param_count() {
        return Err(usage(format!(
            "--index {} out of range ({} parameters)",
            a.index,
            model.param_count()
        )));
    }
    let inputs = build_inputs(&model, &a.input)?;
    let baseline = Baseline::compute(&model, &inputs, a.input.max_len)?;
    let rec = campaign::inject(&mut model, &baseline, a.index, position, ScoreMetric::Rouge1)?;
    let vocab = Vocab::toy(model.config.vocab_size);
    let changed = (0..inputs.len())
        .filter(|&i| rec.outputs[i] != baseline.outputs[i])
        .count();
    println!("parameter {} ({}) bit {}", rec.flat_index, rec.tensor, position.index());
    println!("pre  {}  {:e}", rec.pre_bits, decode(rec.pre_bits));
    println!("post {}  {:e}", rec.post_bits, decode(rec.post_bits));
    println!(
        "{}: {changed} of {} outputs changed, rouge1 {:.4}",
        if rec.relevant { "relevant" } else { "irrelevant" },
        inputs.len(),
        rec.score
    );
    for i in 0..inputs.len() {
        let mark = if rec.outputs[i] != baseline.outputs[i] { "*" } else { " " };
        println!("{mark} [{i}] {}", vocab.decode(&rec.outputs[i]));
        if rec.outputs[i] != baseline.outputs[i] {
            println!("    was {}", vocab.decode(&baseline.outputs[i]));
        }
    }
    Ok(())
}

fn toy_error_samples(
    model_args: &ModelArgs,
    input_args: &InputArgs,
    relevant_errors: usize,
    max_attempts: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if relevant_errors == 0 {
        return Err(usage("--relevant-errors must be at least 1"));
    }
    let model = build_model(model_args)?;
    let inputs = build_inputs(&model, input_args)?;
    let baseline = Baseline::compute(&model, &inputs, input_args.max_len)?;
    let opts = DatasetOptions {
        num_relevant_errors: relevant_errors,
        max_attempts,
        seed,
    };
    Ok(campaign::generate_error_dataset(
        &model,
        &baseline,
        &Vocab::toy(model.config.vocab_size),
        &opts,
    )?)
}

fn error_dataset(a: &ErrorDatasetArgs) -> Result<()> {
    let samples = toy_error_samples(&a.model, &a.input, a.relevant_errors, a.max_attempts, a.seed)?;
    corpus::save_jsonl(&a.output, &samples)?;
    write_run_config(&sidecar(&a.output), "error-dataset", a)?;
    report_counts(&samples);
    Ok(())
}

fn report_counts(samples: &[LabeledSample]) {
    let c = corpus::label_counts(samples);
    eprintln!(
        "{} samples: {} clean, {} erroneous",
        samples.len(),
        c.get(&Label::Clean).unwrap_or(&0),
        c.get(&Label::Erroneous).unwrap_or(&0)
    );
}

fn mix_of(m: &Option<Vec<f64>>) -> Result<CorruptionMix> {
    let mix = match m.as_deref() {
        None => CorruptionMix::default(),
        Some([f, r, g]) => CorruptionMix {
            fixed_string: *f,
            random_similar_strings: *r,
            grammar_repetition: *g,
        },
        Some(_) => return Err(usage("--mix takes three weights")),
    };
    mix.validate().map_err(|e| usage(e.to_string()))?;
    Ok(mix)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mix = mix_of(&a.mix)?;
    let sentences = corpus::clean_sentences()?;
    let samples = corpus::synthetic_dataset(&sentences, a.clean, a.corrupt, mix, a.seed)?;
    corpus::save_jsonl(&a.output, &samples)?;
    write_run_config(&sidecar(&a.output), "simulate", a)?;
    report_counts(&samples);
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let source = match (&a.input, &a.url) {
        (Some(p), None) => p.clone(),
        (None, Some(url)) => {
            if !a.allow_network {
                return Err(usage("--url needs --allow-network"));
            }
            let name = url.rsplit('/').next().filter(|s| !s.is_empty()).unwrap_or("download");
            let dest = a
                .output
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(format!("{name}.download"));
            let status = std::process::Command::new("curl")
                .args(["-fsSL", "-o"])
                .arg(&dest)
                .arg(url)
                .status()
                .map_err(|e| CliError::Data(format!("cannot run curl: {e}")))?;
            if !status.success() {
                return Err(CliError::Data(format!("download of {url} failed ({status})")));
            }
            dest
        }
        _ => return Err(usage("give exactly one of --input or --url")),
    };
    let samples = corpus::load_external(&source)?;
    corpus::save_jsonl(&a.output, &samples)?;
    write_run_config(&sidecar(&a.output), "ingest", a)?;
    report_counts(&samples);
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.fraction) {
        return Err(usage("--fraction must be within [0, 1]"));
    }
    let samples = corpus::load_jsonl(&a.input)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let s = corpus::split(&samples, a.fraction, a.seed)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    corpus::save_jsonl(&a.train_out, &s.train)?;
    corpus::save_jsonl(&a.test_out, &s.test)?;
    write_run_config(&sidecar(&a.train_out), "split", a)?;
    eprintln!("train {} / test {}", s.train.len(), s.test.len());
    Ok(())
}

fn featurize(samples: &[LabeledSample]) -> Vec<(FeatureVector, Option<Label>)> {
    samples
        .iter()
        .map(|s| (extract_features(&s.text), Some(s.label)))
        .collect()
}

fn features(a: &FeaturesArgs) -> Result<()> {
    let (rows, with_label) = if a.text_lines {
        let f = fs::File::open(&a.input)
            .map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
        let mut rows = Vec::new();
        for line in BufReader::new(f).lines() {
            rows.push((extract_features(&line?), None));
        }
        (rows, false)
    } else {
        let samples = corpus::load_jsonl(&a.input)
            .map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
        (featurize(&samples), true)
    };
    let mut buf = Vec::new();
    write_features(&mut buf, &rows, with_label)?;
    emit(a.output.as_deref(), &String::from_utf8(buf).expect("utf-8 CSV"))?;
    if let Some(out) = &a.output {
        write_run_config(&sidecar(out), "features", a)?;
    }
    Ok(())
}

pub fn hyperparams(f: &ForestArgs) -> Result<Hyperparams> {
    let mut hp = Hyperparams::default();
    if let Some(v) = f.trees {
        hp.num_trees = v;
    }
    if let Some(v) = f.max_depth {
        hp.max_depth = v;
    }
    if let Some(v) = &f.max_features {
        hp.max_features = match v.as_str() {
            "sqrt" => MaxFeatures::Sqrt,
            "all" => MaxFeatures::All,
            n => MaxFeatures::Count(
                n.parse()
                    .map_err(|_| usage(format!("bad --max-features {n:?}")))?,
            ),
        };
    }
    if let Some(v) = f.min_samples_leaf {
        hp.min_samples_leaf = v;
    }
    if let Some(v) = f.min_samples_split {
        hp.min_samples_split = v;
    }
    if f.max_leaf_nodes.is_some() {
        hp.max_leaf_nodes = f.max_leaf_nodes;
    }
    if f.no_bootstrap {
        hp.bootstrap = false;
    }
    hp.validate().map_err(|e| usage(e.to_string()))?;
    Ok(hp)
}

fn grid(f: &ForestArgs, base: &Hyperparams) -> Option<Vec<Hyperparams>> {
    if f.grid_trees.is_none() && f.grid_depth.is_none() {
        return None;
    }
    let trees = f.grid_trees.clone().unwrap_or_else(|| vec![base.num_trees]);
    let depths = f.grid_depth.clone().unwrap_or_else(|| vec![base.max_depth]);
    Some(
        trees
            .iter()
            .flat_map(|&t| {
                depths.iter().map(move |&d| Hyperparams {
                    num_trees: t,
                    max_depth: d,
                    ..base.clone()
                })
            })
            .collect(),
    )
}

fn confusion_json(c: &Confusion) -> Value {
    json!({
        "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn_,
        "accuracy": c.accuracy(),
        "recall": c.recall(),
        "precision": c.precision(),
        "false_positive_rate": c.false_positive_rate(),
        "false_negative_rate": c.false_negative_rate(),
    })
}

fn fit_forest(data: &Dataset, f: &ForestArgs, threshold: f64, seed: u64) -> Result<Forest> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage("--threshold must be within [0, 1]"));
    }
    let base = hyperparams(f)?;
    let hp = match grid(f, &base) {
        Some(g) => {
            let cv = forest::cross_validate(data, &g, f.folds, seed)?;
            for (h, r) in g.iter().zip(&cv.mean_recall) {
                eprintln!("cv trees={} depth={} mean recall {r:.4}", h.num_trees, h.max_depth);
            }
            cv.best
        }
        None => base,
    };
    Ok(Forest::fit(data, &hp, seed)?.with_threshold(threshold)?)
}

pub fn train(a: &TrainArgs) -> Result<Forest> {
    let table = read_features(&a.features)?;
    let data = table.dataset()?;
    let forest = fit_forest(&data, &a.forest, a.threshold, a.seed)?;
    forest.save(&a.model_out)?;
    write_run_config(&sidecar(&a.model_out), "train", a)?;
    let c = forest.evaluate(&data, None)?;
    println!(
        "trained {} trees on {} samples; training accuracy {:.4}, recall {:.4}",
        forest.trees.len(),
        data.len(),
        c.accuracy(),
        c.recall()
    );
    Ok(forest)
}

fn load_forest(path: &Path) -> Result<Forest> {
    Forest::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn predict(a: &PredictArgs) -> Result<()> {
    let forest = load_forest(&a.model)?;
    let threshold = a.threshold.unwrap_or(forest.decision_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage("--threshold must be within [0, 1]"));
    }
    let table: FeatureTable = read_features(&a.features)?;
    let mut out = String::from(if table.labels.is_some() {
        "index,proba,verdict,label\n"
    } else {
        "index,proba,verdict\n"
    });
    let mut verdicts = Vec::with_capacity(table.rows.len());
    for (i, fv) in table.rows.iter().enumerate() {
        let p = forest.predict_proba(fv);
        let v = forest.classify(fv, Some(threshold))?;
        verdicts.push(v);
        out.push_str(&format!("{i},{p},{v}"));
        if let Some(l) = &table.labels {
            out.push_str(&format!(",{}", l[i]));
        }
        out.push('\n');
    }
    emit(a.output.as_deref(), &out)?;
    if let Some(labels) = &table.labels {
        let c = Confusion::from_predictions(&verdicts, labels);
        let majority = labels.iter().filter(|l| l.is_erroneous()).count();
        let nir = majority.max(labels.len() - majority) as f64 / labels.len().max(1) as f64;
        eprintln!(
            "accuracy {:.4} recall {:.4} fpr {:.4} (no-information rate {nir:.4}, threshold {threshold})",
            c.accuracy(),
            c.recall(),
            c.false_positive_rate()
        );
    }
    Ok(())
}

fn roc_files(points: &[RocPoint], csv_out: Option<&Path>, plot: Option<&Path>) -> Result<()> {
    emit(csv_out, &forest::roc_csv(points))?;
    if let Some(p) = plot {
        let v = json!({
            "thresholds": points.iter().map(|p| p.threshold).collect::<Vec<_>>(),
            "fpr": points.iter().map(|p| p.fpr).collect::<Vec<_>>(),
            "tpr": points.iter().map(|p| p.tpr).collect::<Vec<_>>(),
            "auc": forest::auc(points),
        });
        write_file(p, (serde_json::to_string_pretty(&v)? + "\n").as_bytes())?;
    }
    Ok(())
}

pub fn roc(a: &RocArgs) -> Result<Vec<RocPoint>> {
    if a.thresholds < 2 {
        return Err(usage("--thresholds must be at least 2"));
    }
    let forest = load_forest(&a.model)?;
    let data = read_features(&a.features)?.dataset()?;
    let points = forest.roc(&data, a.thresholds)?;
    roc_files(&points, a.output.as_deref(), a.plot.as_deref())?;
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct E2eReport {
    pub samples: usize,
    pub train: usize,
    pub test: Vec<LabeledSample>,
    pub forest: Forest,
    pub test_confusion: Confusion,
    pub roc: Vec<RocPoint>,
    pub test_scores: Vec<f64>,
}

pub fn e2e(a: &E2eArgs) -> Result<E2eReport> {
    let samples = match a.source.as_str() {
        "synthetic" => corpus::synthetic_dataset(
            &corpus::clean_sentences()?,
            a.clean,
            a.corrupt,
            CorruptionMix::default(),
            a.seed,
        )?,
        "toy-injection" => toy_error_samples(&a.model, &a.input, a.relevant_errors, 100_000, a.seed)?,
        other => return Err(usage(format!("unknown --source {other:?}"))),
    };
    if a.thresholds < 2 {
        return Err(usage("--thresholds must be at least 2"));
    }
    let out = &a.out;
    fs::create_dir_all(out)?;
    corpus::save_jsonl(&out.join("samples.jsonl"), &samples)?;
    let s = corpus::split(&samples, a.fraction, a.seed)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    corpus::save_jsonl(&out.join("train.jsonl"), &s.train)?;
    corpus::save_jsonl(&out.join("test.jsonl"), &s.test)?;
    let train_rows = featurize(&s.train);
    let test_rows = featurize(&s.test);
    for (name, rows) in [("train.csv", &train_rows), ("test.csv", &test_rows)] {
        let mut buf = Vec::new();
        write_features(&mut buf, rows, true)?;
        write_file(&out.join(name), &buf)?;
    }
    let pairs = |rows: &[(FeatureVector, Option<Label>)]| -> Vec<(FeatureVector, Label)> {
        rows.iter()
            .map(|(f, l)| (f.clone(), l.expect("labeled")))
            .collect()
    };
    let train_data = Dataset::from_features(&pairs(&train_rows));
    let test_data = Dataset::from_features(&pairs(&test_rows));
    let forest = Forest::fit(&train_data, &Hyperparams::default(), a.seed)?.with_threshold(a.threshold)?;
    forest.save(&out.join("forest.json"))?;
    let test_confusion = forest.evaluate(&test_data, None)?;
    let roc = forest.roc(&test_data, a.thresholds)?;
    roc_files(&roc, Some(&out.join("roc.csv")), Some(&out.join("roc.json")))?;
    let metrics = json!({
        "samples": samples.len(),
        "train": s.train.len(),
        "test": s.test.len(),
        "threshold": a.threshold,
        "test_metrics": confusion_json(&test_confusion),
        "auc": forest::auc(&roc),
    });
    write_file(
        &out.join("metrics.json"),
        (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes(),
    )?;
    write_run_config(&out.join("run_config.json"), "e2e", a)?;
    println!(
        "test accuracy {:.4} recall {:.4} fpr {:.4} auc {:.4}",
        test_confusion.accuracy(),
        test_confusion.recall(),
        test_confusion.false_positive_rate(),
        forest::auc(&roc)
    );
    let test_scores = test_data
        .rows
        .iter()
        .map(|r| forest.predict_proba_row(r))
        .collect();
    Ok(E2eReport {
        samples: samples.len(),
        train: s.train.len(),
        test: s.test,
        forest,
        test_confusion,
        roc,
        test_scores,
    })
}
