mod common;

use serde_json::json;

use common::fixture;
use featsearch::agents::prompts::{EXTRACTOR_MARKER, REFLECTIVE_MARKER};
use featsearch::agents::{
    build_data_summary, extract_all, performance_feedback, propose_features, reflect_instructions,
    score_interpretability, AgentError, AgentSettings, ProposerMode, ReflectionInput, DEFAULT_SEED_INSTRUCTION,
};
use featsearch::ingest::split_examples;
use featsearch::lm::scripted::{Rule, ScriptedFailure, ScriptedLm, Transcript};
use featsearch::lm::{Gateway, ModuleRole, RetryPolicy, Role};
use featsearch::metrics::{compute_metrics, MetricsConfig};
use featsearch::model::{
    sample_example_sets, DatasetSplits, FeatureDefinition, FeatureSet, FeatureValue, FeatureValueType,
};

fn gateway(t: Transcript) -> Gateway {
    Gateway::new(ScriptedLm::new(t).unwrap(), RetryPolicy::immediate(0), 8)
}

fn splits() -> (fixture::Corpus, DatasetSplits) {
    let corpus = fixture::generate(240, 3);
    let s = split_examples(corpus.examples(), 16, 96, 1).unwrap();
    (corpus, s)
}

fn reflect_rule(instructions: &[&str]) -> Rule {
    Rule::new("reflect")
        .when(Some(Role::System), REFLECTIVE_MARKER)
        .reply(json!({"reasoning": "r", "instructions": instructions}).to_string())
}

#[test]
fn scalar_mode_hides_feedback_from_the_reflective_proposer() {
    let (_, s) = splits();
    let summary = build_data_summary(s.train(), 0).unwrap();
    let guard = Rule::new("guard")
        .when(Some(Role::User), "interpretability-feedback-text")
        .fail(ScriptedFailure::Rejected);
    let t = Transcript {
        model_id: "m".into(),
        rules: vec![guard, reflect_rule(&fixture::REFLECTED)],
    };
    let input = ReflectionInput {
        summary: &summary,
        current_instruction: DEFAULT_SEED_INSTRUCTION,
        interp_feedback: "interpretability-feedback-text",
        perf_feedback: "performance-feedback-text",
        combined_score: 0.5,
        round: 1,
    };
    let settings = AgentSettings::default();

    let scalar = reflect_instructions(&gateway(t.clone()), &input, 4, ProposerMode::ScalarOnly, &settings);
    assert_eq!(scalar, fixture::REFLECTED.map(String::from).to_vec());

    let reflective = reflect_instructions(&gateway(t), &input, 4, ProposerMode::Reflective, &settings);
    assert_eq!(reflective, vec![DEFAULT_SEED_INSTRUCTION.to_string()]);
}

#[test]
fn reflection_returns_k_distinct_instructions() {
    let (_, s) = splits();
    let summary = build_data_summary(s.train(), 0).unwrap();
    let t = Transcript {
        model_id: "m".into(),
        rules: vec![reflect_rule(&["Look at refunds", "look at  refunds", DEFAULT_SEED_INSTRUCTION])],
    };
    let input = ReflectionInput {
        summary: &summary,
        current_instruction: DEFAULT_SEED_INSTRUCTION,
        interp_feedback: "i",
        perf_feedback: "p",
        combined_score: 0.5,
        round: 2,
    };
    let gw = gateway(t);
    let out = reflect_instructions(&gw, &input, 4, ProposerMode::Reflective, &AgentSettings::default());
    assert_eq!(out.len(), 4);
    assert_eq!(out[0], "Look at refunds");
    let distinct: std::collections::BTreeSet<String> = out.iter().map(|s| s.to_lowercase()).collect();
    assert_eq!(distinct.len(), 4);
    assert!(!out.iter().any(|o| o == DEFAULT_SEED_INSTRUCTION));
    // one re-ask after duplicates
    assert_eq!(gw.usage_ledger().role_total(ModuleRole::ReflectiveProposer).calls, 2);
}

#[test]
fn proposer_returns_validated_schema() {
    let (corpus, s) = splits();
    let gw = gateway(fixture::transcript(&corpus, &fixture::search_schemas()));
    let set = &sample_example_sets(s.train(), 1, 16, 0).unwrap()[0];
    let fs = propose_features(&gw, Some(0), DEFAULT_SEED_INSTRUCTION, set, s.class_names(), &AgentSettings::default())
        .unwrap();
    assert_eq!(fs.names().collect::<Vec<_>>(), fixture::PLANTED.to_vec());

    let err = propose_features(&gw, Some(0), "  ", set, s.class_names(), &AgentSettings::default()).unwrap_err();
    assert!(matches!(err, AgentError::Precondition(_)));
}

#[test]
fn proposer_rejects_invalid_schema_after_retries() {
    let (_, s) = splits();
    let bad = json!({"reasoning": "r", "features": [fixture::feature("tone"), fixture::feature("tone")]}).to_string();
    let t = Transcript {
        model_id: "m".into(),
        rules: vec![Rule::new("propose").when(None, "").reply(bad)],
    };
    let set = &sample_example_sets(s.train(), 1, 16, 0).unwrap()[0];
    let err = propose_features(&gateway(t), None, "x", set, s.class_names(), &AgentSettings::default()).unwrap_err();
    assert!(matches!(err, AgentError::ValidationFailed(_)), "{err:?}");
}

#[test]
fn extraction_keeps_input_order_under_concurrency() {
    let (corpus, _) = splits();
    let gw = gateway(fixture::transcript(&corpus, &[]));
    let fs = fixture::feature_set(&fixture::PLANTED);
    let examples = corpus.examples();
    let m = extract_all(&gw, Some(3), &examples, &fs, &AgentSettings::default()).unwrap();
    assert_eq!(m.n_rows(), examples.len());
    for ((row, ex), (_, hidden)) in m.rows().iter().zip(&examples).zip(&corpus.rows) {
        assert_eq!(row.id, ex.id);
        assert_eq!(row.values[0], FeatureValue::Boolean(hidden.mentions_refund));
        assert_eq!(row.values[2], FeatureValue::Integer(hidden.word_count));
        assert_eq!(row.values[4], FeatureValue::Categorical(hidden.tone.to_string()));
    }
    assert_eq!(
        gw.usage_ledger().candidate_total(ModuleRole::Extractor, Some(3)).calls,
        examples.len() as u64
    );
}

#[test]
fn unanswerable_texts_become_missing_values() {
    let (corpus, _) = splits();
    let t = Transcript {
        model_id: "m".into(),
        rules: vec![Rule::new("broken").when(Some(Role::System), EXTRACTOR_MARKER).reply("no json here")],
    };
    let fs = FeatureSet::new(vec![FeatureDefinition {
        name: "has_greeting".into(),
        value_type: FeatureValueType::Boolean,
        description: "d".into(),
        extraction_prompt: "p".into(),
    }])
    .unwrap();
    let m = extract_all(&gateway(t), None, &corpus.examples()[..5], &fs, &AgentSettings::default()).unwrap();
    assert!(m.rows().iter().all(|r| r.values[0].is_missing()));
}

#[test]
fn feedback_names_features_never_extracted() {
    let (corpus, s) = splits();
    let gw = gateway(fixture::transcript(&corpus, &[]));
    let fs = FeatureSet::new(vec![
        FeatureDefinition {
            name: "asks_question".into(),
            value_type: FeatureValueType::Boolean,
            description: "d".into(),
            extraction_prompt: "p".into(),
        },
        FeatureDefinition {
            name: "mentions_weather".into(),
            value_type: FeatureValueType::Boolean,
            description: "d".into(),
            extraction_prompt: "p".into(),
        },
    ])
    .unwrap();
    let m = extract_all(&gw, Some(1), s.annotation(), &fs, &AgentSettings::default()).unwrap();
    let metrics = compute_metrics(&m, s.class_names(), &MetricsConfig::default());
    assert_eq!(metrics.feature("mentions_weather").unwrap().coverage, 0.0);
    let text = performance_feedback(&gw, Some(1), &metrics, &AgentSettings::default()).unwrap();
    assert!(text.contains("mentions_weather"), "{text}");
}

#[test]
fn scorer_forces_hinted_leakage() {
    let (corpus, s) = splits();
    let gw = gateway(fixture::transcript(&corpus, &[]));
    let fs = FeatureSet::new(
        ["asks_question", "tone"]
            .iter()
            .map(|n| FeatureDefinition {
                name: n.to_string(),
                value_type: FeatureValueType::Boolean,
                description: "d".into(),
                extraction_prompt: "p".into(),
            })
            .collect(),
    )
    .unwrap();
    let report = score_interpretability(&gw, Some(0), &fs, s.class_names(), &["tone".into()], &AgentSettings::default())
        .unwrap();
    let tone = report.per_feature.iter().find(|f| f.name == "tone").unwrap();
    let ask = report.per_feature.iter().find(|f| f.name == "asks_question").unwrap();
    assert!(tone.leakage_flag);
    assert_eq!(tone.contribution(), 0.0);
    assert!((ask.contribution() - 0.9).abs() < 1e-12);
    assert!((report.set_score - 0.45).abs() < 1e-12);
}
