//! Synthetic support-ticket corpus with hidden attributes, and a scripted LM
//! whose extractor answers from those attributes.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use featsearch::agents::prompts::{EXTRACTOR_MARKER, FEEDBACK_MARKER, PROPOSER_MARKER, REFLECTIVE_MARKER, SCORER_MARKER};
use featsearch::agents::DEFAULT_SEED_INSTRUCTION;
use featsearch::lm::scripted::{Rule, Transcript};
use featsearch::lm::Role;
use featsearch::model::{parse_feature_schema, FeatureSet, LabeledExample};

pub const CLASSES: [&str; 4] = ["dispute", "claim", "inquiry", "chatter"];
pub const TONES: [&str; 3] = ["calm", "urgent", "neutral"];

/// Labels depend on the first two attributes only.
pub fn label_of(refund: bool, question: bool) -> &'static str {
    match (refund, question) {
        (true, true) => "dispute",
        (true, false) => "claim",
        (false, true) => "inquiry",
        (false, false) => "chatter",
    }
}

#[derive(Debug, Clone)]
pub struct Hidden {
    pub mentions_refund: bool,
    pub asks_question: bool,
    pub word_count: i64,
    pub has_greeting: bool,
    pub tone: &'static str,
    pub exclamation_count: i64,
    /// `mentions_refund` with 5% of values flipped.
    pub refund_hint: bool,
}

impl Hidden {
    pub fn answer(&self, label: &str) -> Value {
        json!({
            "mentions_refund": self.mentions_refund,
            "asks_question": self.asks_question,
            "word_count": self.word_count,
            "has_greeting": self.has_greeting,
            "tone": self.tone,
            "exclamation_count": self.exclamation_count,
            "refund_hint": self.refund_hint,
            "label_echo": label,
        })
    }
}

pub struct Corpus {
    pub rows: Vec<(LabeledExample, Hidden)>,
}

/// `n` tickets with independent uniform attributes.
pub fn generate(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let h = Hidden {
                mentions_refund: rng.random(),
                asks_question: rng.random(),
                word_count: rng.random_range(5..60),
                has_greeting: rng.random(),
                tone: TONES[rng.random_range(0..TONES.len())],
                exclamation_count: rng.random_range(0..4),
                refund_hint: false,
            };
            let refund_hint = if rng.random_bool(0.05) { !h.mentions_refund } else { h.mentions_refund };
            let h = Hidden { refund_hint, ..h };
            let mut text = format!("[#{i:05}] ");
            if h.has_greeting {
                text.push_str("Hello team. ");
            }
            text.push_str(if h.mentions_refund {
                "I want my money back for the last order"
            } else {
                "Writing about the last order"
            });
            text.push_str(&"!".repeat(h.exclamation_count as usize));
            if h.asks_question {
                text.push_str(" Could you tell me what happens next?");
            }
            text.push_str(&format!(" ({} words, {} mood)", h.word_count, h.tone));
            let ex = LabeledExample::new(format!("t{i:05}"), text, label_of(h.mentions_refund, h.asks_question));
            (ex, h)
        })
        .collect();
    Corpus { rows }
}

impl Corpus {
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        for (ex, _) in &self.rows {
            out.push_str(&json!({"id": ex.id, "text": ex.text, "label": ex.label}).to_string());
            out.push('\n');
        }
        out
    }

    pub fn examples(&self) -> Vec<LabeledExample> {
        self.rows.iter().map(|(e, _)| e.clone()).collect()
    }

    /// One extractor rule per text, keyed by its unique `[#nnnnn]` prefix.
    pub fn extractor_rules(&self) -> Vec<Rule> {
        self.rows
            .iter()
            .map(|(ex, h)| {
                let key = &ex.text[..8];
                Rule::new(format!("extract {}", ex.id))
                    .when(Some(Role::System), EXTRACTOR_MARKER)
                    .when(Some(Role::User), key)
                    .reply(h.answer(&ex.label).to_string())
            })
            .collect()
    }
}

pub fn feature(name: &str) -> Value {
    let (ty, description, cats): (&str, &str, Option<Vec<&str>>) = match name {
        "mentions_refund" => ("boolean", "The writer asks for money back.", None),
        "asks_question" => ("boolean", "The text contains a direct question.", None),
        "word_count" => ("integer", "Approximate number of words stated in the text.", None),
        "has_greeting" => ("boolean", "The text opens with a greeting.", None),
        "tone" => ("categorical", "Overall mood of the writer.", Some(TONES.to_vec())),
        "exclamation_count" => ("integer", "Number of exclamation marks.", None),
        "refund_hint" => ("boolean", "Some wording hints at wanting money back.", None),
        "label_echo" => ("categorical", "Which ticket category this is.", Some(CLASSES.to_vec())),
        other => panic!("unknown fixture feature {other}"),
    };
    let mut v = json!({
        "name": name,
        "type": ty,
        "description": description,
        "extraction_prompt": format!("Determine: {description}"),
    });
    if let Some(c) = cats {
        v["categories"] = json!(c);
    }
    v
}

pub fn feature_set(names: &[&str]) -> FeatureSet {
    let doc = json!({"features": names.iter().map(|n| feature(n)).collect::<Vec<_>>()});
    parse_feature_schema(&doc.to_string()).unwrap()
}

pub fn proposal(names: &[&str]) -> String {
    json!({
        "reasoning": "grounded in the examples",
        "features": names.iter().map(|n| feature(n)).collect::<Vec<_>>(),
    })
    .to_string()
}

pub const PLANTED: [&str; 6] = [
    "mentions_refund",
    "asks_question",
    "word_count",
    "has_greeting",
    "tone",
    "exclamation_count",
];
pub const CLEAN: [&str; 5] = ["refund_hint", "asks_question", "word_count", "has_greeting", "tone"];
pub const LEAKY: [&str; 5] = ["refund_hint", "asks_question", "word_count", "has_greeting", "label_echo"];

/// Instructions returned by the reflective proposer; the first is evaluated in
/// the refresh round.
pub const REFLECTED: [&str; 4] = [
    "Focus on what the writer wants done about the order and whether they ask anything",
    "Describe surface form such as length and punctuation",
    "Describe the mood and politeness of the writer",
    "Describe formatting habits of the writer",
];

pub fn scorer_reply() -> String {
    let names = [
        "mentions_refund",
        "asks_question",
        "word_count",
        "has_greeting",
        "tone",
        "exclamation_count",
        "refund_hint",
        "label_echo",
    ];
    let features: Vec<Value> = names
        .iter()
        .map(|n| {
            let leak = *n == "label_echo";
            json!({
                "name": n, "readable": 9, "human_worded": 9, "understandable": 9,
                "meaningful": if leak { 2 } else { 9 }, "trackable": 9,
                "leakage": leak, "rationale": "plain property of the text",
            })
        })
        .collect();
    json!({"reasoning": "checked each", "features": features, "feedback": "Features are readable; avoid restating the category."}).to_string()
}

/// Proposer, scorer, feedback and reflective rules plus per-text extractor
/// rules. `schemas` maps instruction text to the feature names it yields.
pub fn transcript(corpus: &Corpus, schemas: &[(&str, &[&str])]) -> Transcript {
    let mut rules: Vec<Rule> = schemas
        .iter()
        .map(|(instr, names)| {
            Rule::new(format!("propose {}", &instr[..instr.len().min(24)]))
                .when(Some(Role::System), PROPOSER_MARKER)
                .when(Some(Role::User), *instr)
                .reply(proposal(names))
        })
        .collect();
    rules.push(Rule::new("score").when(Some(Role::System), SCORER_MARKER).reply(scorer_reply()));
    rules.push(
        Rule::new("feedback")
            .when(Some(Role::System), FEEDBACK_MARKER)
            .reply(json!({"reasoning": "looked at the table", "feedback": "Refund wording and questions carry the signal; surface features add little."}).to_string()),
    );
    rules.push(
        Rule::new("reflect")
            .when(Some(Role::System), REFLECTIVE_MARKER)
            .reply(json!({"reasoning": "use the feedback", "instructions": REFLECTED}).to_string()),
    );
    rules.extend(corpus.extractor_rules());
    Transcript {
        model_id: "scripted-fixture".into(),
        rules,
    }
}

/// Schema per instruction for the end-to-end search: the seed and the first
/// reflected instruction find the planted pair, the others miss it.
pub fn search_schemas() -> Vec<(&'static str, &'static [&'static str])> {
    vec![
        (DEFAULT_SEED_INSTRUCTION, &PLANTED[..]),
        (REFLECTED[0], &PLANTED[..]),
        (REFLECTED[1], &["word_count", "exclamation_count", "has_greeting", "tone", "asks_question"][..]),
        (REFLECTED[2], &["tone", "has_greeting", "word_count", "exclamation_count", "refund_hint"][..]),
        (REFLECTED[3], &["word_count", "exclamation_count", "has_greeting", "tone"][..]),
    ]
}

pub fn config_toml(dataset: &str, n_d: usize, seed: u64) -> String {
    format!(
        r#"dataset_path = "{dataset}"
dataset_format = "jsonl"
train_per_class = 16
annotation_size = 512
seed = {seed}
n_d = {n_d}
l = 16
n_fb = 1
k_reflect = 4
lambda = 0.75
mode = "reflective"
k_folds = 5
l2 = 1.0
gamma = 0.25
prior_weight = 1.0
n_startup = 10
endpoint_base_url = "http://127.0.0.1:9/v1"
model_id = "scripted-fixture"
request_timeout_secs = 5
max_retries = 1
max_in_flight = 8
proposer_temperature = 0.75
proposer_top_p = 0.95
proposer_max_tokens = 4096
extractor_max_tokens = 1024
scorer_max_tokens = 4096
feedback_max_tokens = 2048
reflective_max_tokens = 4096
parse_retries = 2
context_char_budget = 48000
min_features = 5
max_features = 10
"#
    )
}

pub struct RunInputs {
    pub config: PathBuf,
    pub transcript: PathBuf,
    pub corpus: Corpus,
}

/// Writes dataset, transcript and config for an end-to-end run into `dir`.
pub fn write_run_inputs(dir: &Path, n_rows: usize, n_d: usize, seed: u64) -> RunInputs {
    let corpus = generate(n_rows, 11);
    std::fs::write(dir.join("tickets.jsonl"), corpus.jsonl()).unwrap();
    let t = transcript(&corpus, &search_schemas());
    let transcript_path = dir.join("transcript.json");
    std::fs::write(&transcript_path, serde_json::to_string(&t).unwrap()).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(&config, config_toml("tickets.jsonl", n_d, seed)).unwrap();
    RunInputs {
        config,
        transcript: transcript_path,
        corpus,
    }
}
