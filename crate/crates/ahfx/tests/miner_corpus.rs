//! The snippet corpus against frozen output of a Python `re` reference
//! evaluator (tests/data/reference_oracle.py).

use std::path::Path;

use ahfx::miner::{extract_findings, mine_corpus, resolve_study_label, Report, RuleSet};
use ahfx_core::exec::Sequential;
use serde_json::{json, Value};

fn data(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn findings_match_reference() {
    let rules = RuleSet::default_rules();
    let snippets = data("snippets.json");
    let expected = data("snippets_expected.json");
    let (snippets, expected) = (snippets.as_array().unwrap(), expected.as_array().unwrap());
    assert!(snippets.len() >= 12);
    for (s, want) in snippets.iter().zip(expected) {
        assert_eq!(s["id"], want["id"]);
        let text = s["text"].as_str().unwrap();
        let found = extract_findings(text, &rules);
        let got: Vec<Value> = found
            .iter()
            .map(|f| {
                assert_eq!(&text[f.start..f.end], f.text);
                json!({
                    "category": f.category.name(),
                    "polarity": f.polarity.name(),
                    "start": f.start,
                    "end": f.end,
                    "text": f.text,
                })
            })
            .collect();
        assert_eq!(&Value::Array(got), &want["findings"], "{}", s["id"]);
        assert_eq!(
            Value::Bool(resolve_study_label(&found)),
            want["positive"],
            "{}",
            s["id"]
        );
    }
}

#[test]
fn corpus_labels_and_overrides() {
    let rules = RuleSet::default_rules();
    let reports: Vec<Report> = data("snippets.json")
        .as_array()
        .unwrap()
        .iter()
        .map(|s| Report {
            study_id: s["id"].as_str().unwrap().into(),
            subject_id: String::new(),
            text: s["text"].as_str().unwrap().into(),
        })
        .collect();
    let expected = data("snippets_expected.json");
    let n_pos = expected
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["positive"] == true)
        .count();
    let mined = mine_corpus(&Sequential, &reports, &rules, None).unwrap();
    assert_eq!(mined.n_positive(), n_pos);
    let overrides = [("s01".to_string(), false)].into_iter().collect();
    let mined = mine_corpus(&Sequential, &reports, &rules, Some(&overrides)).unwrap();
    assert_eq!(mined.n_positive(), n_pos - 1);
    assert!(mined.labels[0].overridden && !mined.labels[0].positive);
}

#[test]
fn custom_rules_file() {
    let rules = RuleSet::parse_csv(
        "category,polarity,pattern,flags\nedema,positive,\\bødem,i\nedema,negative,ingen ødem,i\n",
        "custom.csv",
    )
    .unwrap();
    assert!(resolve_study_label(&extract_findings(
        "Lettere Ødem.",
        &rules
    )));
    assert!(!resolve_study_label(&extract_findings(
        "Ingen ødem.",
        &rules
    )));
}
