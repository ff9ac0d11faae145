//! Randomized checks against independent oracles.

use std::collections::HashMap;
use std::sync::LazyLock;

use ivr_route::eval;
use ivr_route::router::INVALID_LABEL;
use ivr_route::path::DtmfPath;
use ivr_route::router::{self, Prediction, RoutingResult};
use ivr_route::RoutingCondition;
use proptest::prelude::*;
use regex::Regex;

const ALPHABET: &[char] = &[
    '0', '1', '2', '3', '5', '9', '-', '-', '-', ' ', '\n', '\t', '.', '"', '\'', '`', '\u{2013}', '\u{2014}', '\u{2212}',
    '\u{201C}', '\u{201D}', 'a', 'P', '#', '*', '\u{0663}',
];

// Reference normalization written from the rule list, not from the parser.
fn oracle_normalize(raw: &str) -> String {
    let mut s: String = raw.trim().to_string();
    let pairs = [('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201C}', '\u{201D}'), ('\u{2018}', '\u{2019}')];
    let chars: Vec<char> = s.chars().collect();
    if chars.len() >= 2 && pairs.contains(&(chars[0], chars[chars.len() - 1])) {
        s = chars[1..chars.len() - 1].iter().collect();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s.chars()
        .map(|c| match c {
            '\u{2010}'..='\u{2015}' | '\u{2212}' | '\u{FE58}' | '\u{FE63}' | '\u{FF0D}' => '-',
            c => c,
        })
        .collect()
}

static GRAMMAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[0-9](-[0-9])*$").unwrap());

fn arbitrary_reply() -> impl Strategy<Value = String> {
    let noise = prop::collection::vec(prop::sample::select(ALPHABET), 0..12).prop_map(|v| v.into_iter().collect());
    let pathish = (
        prop::sample::select(&["", " ", "\"", "'", "`", "\u{201C}"][..]),
        prop::collection::vec(0u8..10, 1..6),
        prop::sample::select(&["-", "\u{2013}", "-"][..]),
        prop::sample::select(&["", ".", " ", "\"", "'.", "\u{201D}", "x"][..]),
    )
        .prop_map(|(open, digits, dash, close)| {
            let body: Vec<String> = digits.iter().map(ToString::to_string).collect();
            format!("{open}{}{close}", body.join(dash))
        });
    prop_oneof![noise, pathish]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn parser_accepts_exactly_the_grammar(raw in arbitrary_reply()) {
        let grammar = &*GRAMMAR;
        let normalized = oracle_normalize(&raw);
        let parsed = router::parse_dtmf_response(&raw);
        match &parsed.outcome {
            Prediction::Path(p) => {
                prop_assert!(grammar.is_match(&normalized), "accepted {raw:?}");
                prop_assert_eq!(p.to_string(), normalized.clone());
                prop_assert_eq!(p.to_string().parse::<DtmfPath>().unwrap(), p.clone());
            }
            Prediction::Invalid => prop_assert!(!grammar.is_match(&normalized), "rejected {raw:?}"),
        }
        prop_assert_eq!(parsed.raw_text, raw);
    }
}

fn classes() -> Vec<DtmfPath> {
    ["1-1", "1-2", "2-1-1", "2-1-2", "3"].iter().map(|s| s.parse().unwrap()).collect()
}

fn result_list() -> impl Strategy<Value = Vec<(usize, usize)>> {
    // prediction index: 0..5 a class, 5 invalid, 6 an unknown path
    prop::collection::vec((0usize..5, 0usize..7), 1..=50)
}

fn to_results(pairs: &[(usize, usize)]) -> Vec<RoutingResult> {
    let classes = classes();
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(t, p))| {
            let predicted = match p {
                0..=4 => Prediction::Path(classes[p].clone()),
                5 => Prediction::Invalid,
                _ => Prediction::Path("9-9".parse().unwrap()),
            };
            RoutingResult {
                intent_id: format!("r{i}"),
                condition: RoutingCondition::FlattenedPaths,
                raw_response: predicted.to_string(),
                correct: predicted.path() == Some(&classes[t]),
                known_path: p <= 4,
                predicted,
                normalization_applied: vec![],
                ground_truth: classes[t].clone(),
                latency_ms: 0,
                model_name: "m".into(),
                attempt_count: 1,
                error: None,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2_000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn metrics_match_brute_force(pairs in result_list()) {
        let results = to_results(&pairs);
        let classes = classes();
        let n = results.len();

        let hits = results.iter().filter(|r| r.predicted.to_string() == r.ground_truth.to_string()).count();
        prop_assert_eq!(eval::accuracy(&results).unwrap(), hits as f64 / n as f64);

        let matrix = eval::confusion_matrix(&results, &classes).unwrap();
        let mut cells: HashMap<(String, String), u64> = HashMap::new();
        for r in &results {
            let col = match &r.predicted {
                Prediction::Invalid => INVALID_LABEL.to_string(),
                Prediction::Path(p) if classes.contains(p) => p.to_string(),
                Prediction::Path(_) => eval::UNKNOWN_PATH_LABEL.to_string(),
            };
            *cells.entry((r.ground_truth.to_string(), col)).or_default() += 1;
        }
        for t in &classes {
            for p in &matrix.predicted_labels {
                let expected = cells.get(&(t.to_string(), p.clone())).copied().unwrap_or(0);
                prop_assert_eq!(matrix.get(t, p), expected);
            }
        }
        prop_assert_eq!(matrix.total(), n as u64);
        prop_assert_eq!(matrix.trace() as f64 / n as f64, eval::accuracy(&results).unwrap());

        for m in eval::per_class_metrics(&matrix) {
            let mut tp = 0u64;
            let mut support = 0u64;
            let mut predicted = 0u64;
            for r in &results {
                let truth = r.ground_truth == m.class;
                let guess = r.predicted.path() == Some(&m.class);
                tp += u64::from(truth && guess);
                support += u64::from(truth);
                predicted += u64::from(guess);
            }
            prop_assert_eq!(m.support, support);
            prop_assert_eq!(m.recall_undefined, support == 0);
            prop_assert_eq!(m.precision_undefined, predicted == 0);
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (support + predicted) as f64 };
            prop_assert!((m.recall - recall).abs() < 1e-12);
            prop_assert!((m.precision - precision).abs() < 1e-12);
            prop_assert!((m.f1 - f1).abs() < 1e-12, "f1 {} vs {}", m.f1, f1);
        }
    }
}
