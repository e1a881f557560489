use cled::corpus::{self, CorruptionMix, CorruptionMode};
use cled::lingfeat::{extract_features, pos_tag, tokenize, FeatureVector, Lexicon, PosTag, FEATURE_NAMES};
use proptest::prelude::*;

const RULE_PROBES: [&str; 3] = ["three_or_more_eq_chars", "four_or_more_consonants", "words_density"];

fn stats(fs: &[FeatureVector], name: &str) -> (f64, f64) {
    let v: Vec<f64> = fs.iter().map(|f| f.get(name).unwrap()).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn outlier_fraction(clean: &[FeatureVector], corrupted: &[FeatureVector]) -> f64 {
    let st: Vec<(f64, f64)> = RULE_PROBES.iter().map(|n| stats(clean, n)).collect();
    let hits = corrupted
        .iter()
        .filter(|f| {
            RULE_PROBES
                .iter()
                .zip(&st)
                .any(|(n, (m, sd))| (f.get(n).unwrap() - m).abs() > 2.0 * sd)
        })
        .count();
    hits as f64 / corrupted.len() as f64
}

#[test]
fn corrupted_text_stands_out_on_rule_features() {
    let sentences = corpus::clean_sentences().unwrap();
    let clean: Vec<_> = corpus::passages(&sentences, 400, 1).iter().map(|t| extract_features(t)).collect();
    let sources = corpus::passages(&sentences, 200, 2);
    let corrupt = |mode| -> Vec<FeatureVector> {
        sources
            .iter()
            .enumerate()
            .map(|(k, t)| extract_features(&corpus::synthesize_corruption(t, mode, k as u64).unwrap()))
            .collect()
    };
    for mode in [CorruptionMode::FixedString, CorruptionMode::RandomSimilarStrings] {
        let frac = outlier_fraction(&clean, &corrupt(mode));
        assert!(frac >= 0.8, "{}: {frac}", mode.as_str());
    }
    // word duplication keeps real words, so these probes rarely move for it
    let grammar = outlier_fraction(&clean, &corrupt(CorruptionMode::GrammarRepetition));
    assert!(grammar < 0.8);

    let mixed = corpus::synthetic_dataset(&sentences, 0, 300, CorruptionMix::default(), 5).unwrap();
    let mixed: Vec<_> = mixed.iter().map(|s| extract_features(&s.text)).collect();
    assert!(outlier_fraction(&clean, &mixed) >= 0.8);
}

#[test]
fn worked_examples() {
    let f = extract_features("AAA bbb");
    assert_eq!(f.three_or_more_eq_chars(), 1.0);
    assert_eq!(f.uppercase_middle(), 0.5);
    let f = extract_features("aeiou");
    assert_eq!((f.vowel(), f.blank(), f.words_density()), (1.0, 0.0, 0.2));
    assert!(extract_features("").as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(tokenize("don't stop."), vec!["don't", "stop."]);
    let lex = Lexicon::bundled();
    let tags: Vec<PosTag> = pos_tag(lex, &["the", "quickly", "1234"]).into_iter().map(|t| t.tag).collect();
    assert_eq!(tags, vec![PosTag::Det, PosTag::Adv, PosTag::Num]);
}

#[test]
fn feature_order_is_fixed() {
    assert_eq!(
        FEATURE_NAMES.join(","),
        "uppercase_middle,four_or_more_consonants,three_or_more_eq_chars,punctuation_mark,digit,blank,\
         vowel,words_density,ADP,NUM,VERB,DET,PRON,NOUN,PRT,ADV"
    );
}

proptest! {
    #[test]
    fn bounded_and_deterministic(text in "\\PC{0,60}") {
        let f = extract_features(&text);
        prop_assert_eq!(f.clone(), extract_features(&text));
        for (name, v) in FEATURE_NAMES.iter().zip(f.as_slice()) {
            prop_assert!(v.is_finite() && (0.0..=1.0).contains(v), "{} = {}", name, v);
        }
        let pos: f64 = f.as_slice()[8..].iter().sum();
        prop_assert!(pos <= 1.0 + 1e-12);
    }
}
