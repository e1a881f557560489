mod common;

use cled::campaign::*;
use cled::floatbits::{flip_bit, BitPosition};
use cled::minixformer::{MiniTransformer, ModelConfig, Variant, Vocab};
use proptest::prelude::*;

fn setup(n_inputs: usize) -> (MiniTransformer, Baseline) {
    let m = MiniTransformer::init(ModelConfig::toy(Variant::T5, 7)).unwrap();
    let b = Baseline::compute(&m, &common::toy_inputs(n_inputs, 1), 20).unwrap();
    (m, b)
}

fn opts(trials: usize, seed: u64) -> SweepOptions {
    SweepOptions {
        trials,
        seed,
        ..Default::default()
    }
}

#[test]
fn exponent_msb_flips_degrade_output() {
    let (m, b) = setup(20);
    let (r, recs) = sweep(&m, &b, BitPosition::exponent(1).unwrap(), &opts(50, 3)).unwrap();
    assert_eq!(r.trials, 50);
    assert!(r.relevant_trials >= 40, "{r:?}");
    assert!(r.mean_score.unwrap() <= 0.5, "{r:?}");
    for rec in &recs {
        assert_eq!(rec.post_bits, flip_bit(rec.pre_bits, rec.position));
    }
}

#[test]
fn fraction_lsb_flips_are_mostly_irrelevant() {
    let (m, b) = setup(20);
    let (r, _) = sweep(&m, &b, BitPosition::FRACTION_LSB, &opts(50, 3)).unwrap();
    assert!(r.relevant_trials <= 2, "{r:?}");
    if let Some(s) = r.mean_score {
        assert!(s >= 0.99);
    }
}

#[test]
fn sweeps_are_seed_deterministic() {
    let (m, b) = setup(8);
    let p = BitPosition::new(5).unwrap();
    let a = sweep(&m, &b, p, &opts(20, 11)).unwrap();
    assert_eq!(a, sweep(&m, &b, p, &opts(20, 11)).unwrap());
    let other = sweep(&m, &b, p, &opts(20, 12)).unwrap();
    let idx = |x: &(SweepResult, Vec<InjectionRecord>)| x.1.iter().map(|r| r.flat_index).collect::<Vec<_>>();
    assert_ne!(idx(&a), idx(&other));
}

#[test]
fn min_relevant_extends_the_sweep() {
    let (m, b) = setup(8);
    let o = SweepOptions {
        trials: 5,
        seed: 2,
        min_relevant: Some(12),
        max_trials: 400,
        ..Default::default()
    };
    let (r, recs) = sweep(&m, &b, BitPosition::exponent(1).unwrap(), &o).unwrap();
    assert!(r.relevant_trials >= 12);
    assert_eq!(recs.len(), r.trials);
    // the first five trials are the plain sweep
    let (plain, _) = sweep(&m, &b, BitPosition::exponent(1).unwrap(), &opts(5, 2)).unwrap();
    assert_eq!(recs[..5].iter().filter(|x| x.relevant).count(), plain.relevant_trials);
}

#[test]
fn full_sweep_flags_exponent_msb_as_critical() {
    let (m, b) = setup(10);
    let results: Vec<SweepResult> = BitPosition::all()
        .map(|p| sweep(&m, &b, p, &opts(20, 4)).unwrap().0)
        .collect();
    let critical = identify_critical_bits(&results, 1.0, 0.2).unwrap();
    assert!(critical.contains(&BitPosition::exponent(1).unwrap()), "{critical:?}");
    let csv = sweep_csv(&results);
    assert_eq!(csv.lines().count(), 33);
}

#[test]
fn error_dataset_is_balanced_with_provenance() {
    let m = MiniTransformer::init(ModelConfig::toy(Variant::T5, 7)).unwrap();
    let b = Baseline::compute(&m, &common::toy_inputs(100, 5), 20).unwrap();
    let o = DatasetOptions {
        num_relevant_errors: 10,
        max_attempts: 5000,
        seed: 8,
    };
    let data = generate_error_dataset(&m, &b, &Vocab::toy(32), &o).unwrap();
    assert_eq!(data.len(), 200);
    let bad: Vec<_> = data.iter().filter(|s| s.label.is_erroneous()).collect();
    assert_eq!(bad.len(), 100);
    for s in bad {
        let p = s.provenance.as_ref().unwrap();
        assert!(p.contains_key("flat_index") && p.contains_key("position"));
    }
}

#[test]
fn records_serialize_as_jsonl() {
    let (m, b) = setup(3);
    let (_, recs) = sweep(&m, &b, BitPosition::SIGN, &opts(4, 1)).unwrap();
    let mut buf = Vec::new();
    write_records_jsonl(&mut buf, &recs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    let back: InjectionRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(back, recs[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn sweeps_restore_every_bit(position in 0u32..32, seed in any::<u64>()) {
        let (m, b) = setup(3);
        let before = m.param_bytes();
        let mut work = m.clone();
        for t in 0..3 {
            let idx = trial_index(seed, BitPosition::new(position).unwrap(), t, work.param_count());
            inject(&mut work, &b, idx, BitPosition::new(position).unwrap(), ScoreMetric::Rouge1).unwrap();
        }
        prop_assert_eq!(work.param_bytes(), before);
    }
}
