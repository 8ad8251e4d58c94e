use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::Value;
use tracing::warn;

use crate::lm::{CallTag, Gateway, Message, ModuleRole, Shape};
use crate::model::{
    serialize_feature_schema, FeatureMatrix, FeatureRow, FeatureSet, FeatureValue, FeatureValueType, LabeledExample,
    MissingReason,
};

use super::prompts::EXTRACTOR;
use super::{fit_texts, AgentError, AgentSettings};

/// Coerces one extracted JSON value to the declared type.
pub fn coerce_value(value: Option<&Value>, ty: &FeatureValueType) -> FeatureValue {
    let parse_failed = FeatureValue::Missing(MissingReason::ParseFailed);
    let Some(value) = value else {
        return parse_failed;
    };
    match ty {
        FeatureValueType::Boolean => match value {
            Value::Bool(b) => FeatureValue::Boolean(*b),
            Value::Number(n) if n.as_f64() == Some(1.0) => FeatureValue::Boolean(true),
            Value::Number(n) if n.as_f64() == Some(0.0) => FeatureValue::Boolean(false),
            Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => FeatureValue::Boolean(true),
                "false" | "no" | "0" => FeatureValue::Boolean(false),
                _ => parse_failed,
            },
            _ => parse_failed,
        },
        FeatureValueType::Integer => {
            let x = match value {
                Value::Number(n) => n.as_i64().or_else(|| n.as_f64().and_then(integral)),
                Value::String(s) => {
                    let s = s.trim();
                    s.parse::<i64>().ok().or_else(|| s.parse::<f64>().ok().and_then(integral))
                }
                Value::Bool(b) => Some(i64::from(*b)),
                _ => None,
            };
            x.map(FeatureValue::Integer).unwrap_or(parse_failed)
        }
        FeatureValueType::Real => {
            let x = match value {
                Value::Number(n) => n.as_f64(),
                Value::String(s) => s.trim().parse::<f64>().ok(),
                _ => None,
            };
            match x {
                Some(v) if v.is_finite() => FeatureValue::Real(v),
                _ => parse_failed,
            }
        }
        FeatureValueType::Categorical(cats) => match value {
            Value::String(s) => {
                let s = s.trim();
                cats.iter()
                    .find(|c| c.as_str() == s)
                    .or_else(|| cats.iter().find(|c| c.eq_ignore_ascii_case(s)))
                    .map(|c| FeatureValue::Categorical(c.clone()))
                    .unwrap_or(FeatureValue::Missing(MissingReason::OutOfVocabulary))
            }
            Value::Null => parse_failed,
            Value::Number(_) | Value::Bool(_) => {
                let s = value.to_string();
                cats.iter()
                    .find(|c| **c == s)
                    .map(|c| FeatureValue::Categorical(c.clone()))
                    .unwrap_or(FeatureValue::Missing(MissingReason::OutOfVocabulary))
            }
            _ => parse_failed,
        },
    }
}

fn integral(x: f64) -> Option<i64> {
    (x.is_finite() && x.fract() == 0.0 && x.abs() < 9.0e15).then_some(x as i64)
}

fn extraction_messages(text: &str, schema_doc: &str, system: &str, budget: usize) -> Vec<Message> {
    let head = format!("Feature schema:\n{schema_doc}\n\nText:\n");
    let fitted = fit_texts(&[text], system.len() + head.len(), budget);
    vec![
        Message::system(system),
        Message::user(format!("{head}{}", fitted[0])),
    ]
}

fn extract_with(
    gateway: &Gateway,
    tag: CallTag,
    text: &str,
    fs: &FeatureSet,
    schema_doc: &str,
    system: &str,
    settings: &AgentSettings,
) -> Vec<FeatureValue> {
    let messages = extraction_messages(text, schema_doc, system, settings.context_char_budget);
    let shape = Shape::Map(Box::new(Shape::Any));
    match gateway.complete_structured(tag, &messages, &settings.extractor, &shape, settings.parse_retries) {
        Ok((Value::Object(map), _)) => fs
            .features()
            .iter()
            .map(|f| coerce_value(map.get(&f.name), &f.value_type))
            .collect(),
        Ok(_) => vec![FeatureValue::Missing(MissingReason::ParseFailed); fs.len()],
        Err(e) => {
            warn!(item = tag.item, error = %e, "extraction failed; row marked missing");
            vec![FeatureValue::Missing(MissingReason::ExtractionRefused); fs.len()]
        }
    }
}

/// Extracts all features of `fs` from one text in a single greedy call.
/// Failures degrade to missing values rather than errors.
pub fn extract(
    gateway: &Gateway,
    tag: CallTag,
    text: &str,
    fs: &FeatureSet,
    settings: &AgentSettings,
) -> Vec<FeatureValue> {
    let schema_doc = serialize_feature_schema(fs);
    let system = EXTRACTOR.render(&[]);
    extract_with(gateway, tag, text, fs, &schema_doc, &system, settings)
}

/// Extracts features for every example with at most `max_in_flight` calls
/// outstanding. Rows keep the input order.
pub fn extract_all(
    gateway: &Gateway,
    candidate: Option<u64>,
    examples: &[LabeledExample],
    fs: &FeatureSet,
    settings: &AgentSettings,
) -> Result<FeatureMatrix, AgentError> {
    if examples.is_empty() {
        return Err(AgentError::Precondition("no examples to extract from".into()));
    }
    let schema_doc = serialize_feature_schema(fs);
    let system = EXTRACTOR.render(&[]);
    let slots: Mutex<Vec<Option<Vec<FeatureValue>>>> = Mutex::new(vec![None; examples.len()]);
    let next = AtomicUsize::new(0);
    let workers = gateway.max_in_flight().min(examples.len()).max(1);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= examples.len() {
                    break;
                }
                let tag = CallTag::new(ModuleRole::Extractor, candidate).item(i as u64);
                let values = extract_with(gateway, tag, &examples[i].text, fs, &schema_doc, &system, settings);
                slots.lock().expect("slots poisoned")[i] = Some(values);
            });
        }
    });

    let rows = slots
        .into_inner()
        .expect("slots poisoned")
        .into_iter()
        .zip(examples)
        .map(|(values, ex)| FeatureRow {
            id: ex.id.clone(),
            label: ex.label.clone(),
            values: values.expect("every row extracted"),
        })
        .collect();
    FeatureMatrix::new(fs.clone(), rows).map_err(|e| AgentError::Precondition(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn coercion_rules() {
        let b = FeatureValueType::Boolean;
        assert_eq!(coerce_value(Some(&json!(true)), &b), FeatureValue::Boolean(true));
        assert_eq!(coerce_value(Some(&json!("No")), &b), FeatureValue::Boolean(false));
        assert_eq!(coerce_value(Some(&json!(1)), &b), FeatureValue::Boolean(true));
        assert_eq!(coerce_value(Some(&json!("maybe")), &b), FeatureValue::Missing(MissingReason::ParseFailed));
        assert_eq!(coerce_value(None, &b), FeatureValue::Missing(MissingReason::ParseFailed));

        let i = FeatureValueType::Integer;
        assert_eq!(coerce_value(Some(&json!(3.0)), &i), FeatureValue::Integer(3));
        assert_eq!(coerce_value(Some(&json!(" 7 ")), &i), FeatureValue::Integer(7));
        assert_eq!(coerce_value(Some(&json!(2.5)), &i), FeatureValue::Missing(MissingReason::ParseFailed));

        let r = FeatureValueType::Real;
        assert_eq!(coerce_value(Some(&json!("0.25")), &r), FeatureValue::Real(0.25));
        assert_eq!(coerce_value(Some(&json!(null)), &r), FeatureValue::Missing(MissingReason::ParseFailed));

        let c = FeatureValueType::Categorical(vec!["merger".into(), "earnings".into()]);
        assert_eq!(coerce_value(Some(&json!("Merger")), &c), FeatureValue::Categorical("merger".into()));
        assert_eq!(
            coerce_value(Some(&json!("layoffs")), &c),
            FeatureValue::Missing(MissingReason::OutOfVocabulary)
        );
    }
}
