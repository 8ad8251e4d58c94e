//! Structured output over a plain chat endpoint: extract the first JSON
//! object from a completion, validate it against a document shape, and
//! reprompt with the validation errors when it does not fit.

use serde_json::Value;

use super::{CallTag, Gateway, GenerationParams, LmError, Message, TokenUsage};

/// Expected shape of a JSON document.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Any,
    String,
    Integer,
    Number,
    Boolean,
    Enum(Vec<String>),
    Array(Box<Shape>),
    Object(Vec<Field>),
    /// Object with arbitrary keys, all values of the given shape.
    Map(Box<Shape>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub shape: Shape,
    pub required: bool,
    pub hint: String,
}

impl Field {
    pub fn required(name: &str, shape: Shape, hint: &str) -> Self {
        Self {
            name: name.into(),
            shape,
            required: true,
            hint: hint.into(),
        }
    }

    pub fn optional(name: &str, shape: Shape, hint: &str) -> Self {
        Self {
            name: name.into(),
            shape,
            required: false,
            hint: hint.into(),
        }
    }
}

impl Shape {
    /// Validation errors of `value` against this shape; empty when it fits.
    pub fn validate(&self, value: &Value) -> Vec<String> {
        let mut errors = Vec::new();
        self.check(value, "$", &mut errors);
        errors
    }

    fn check(&self, value: &Value, path: &str, errors: &mut Vec<String>) {
        match (self, value) {
            (Shape::Any, _) => {}
            (Shape::String, Value::String(_)) => {}
            (Shape::Integer, Value::Number(n)) if n.is_i64() || n.is_u64() => {}
            (Shape::Number, Value::Number(_)) => {}
            (Shape::Boolean, Value::Bool(_)) => {}
            (Shape::Enum(options), Value::String(s)) => {
                if !options.contains(s) {
                    errors.push(format!("{path}: `{s}` is not one of {}", options.join(", ")));
                }
            }
            (Shape::Array(item), Value::Array(items)) => {
                for (i, v) in items.iter().enumerate() {
                    item.check(v, &format!("{path}[{i}]"), errors);
                }
            }
            (Shape::Object(fields), Value::Object(map)) => {
                for f in fields {
                    match map.get(&f.name) {
                        Some(v) => f.shape.check(v, &format!("{path}.{}", f.name), errors),
                        None if f.required => errors.push(format!("{path}: missing required field `{}`", f.name)),
                        None => {}
                    }
                }
            }
            (Shape::Map(item), Value::Object(map)) => {
                for (k, v) in map {
                    item.check(v, &format!("{path}.{k}"), errors);
                }
            }
            (shape, v) => errors.push(format!("{path}: expected {}, found {}", shape.type_name(), json_type(v))),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Shape::Any => "any value",
            Shape::String | Shape::Enum(_) => "a string",
            Shape::Integer => "an integer",
            Shape::Number => "a number",
            Shape::Boolean => "a boolean",
            Shape::Array(_) => "an array",
            Shape::Object(_) | Shape::Map(_) => "an object",
        }
    }

    /// Human-readable skeleton used in prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        self.describe_into(&mut out, 0);
        out
    }

    fn describe_into(&self, out: &mut String, indent: usize) {
        let pad = "  ".repeat(indent);
        match self {
            Shape::Any => out.push_str("<any>"),
            Shape::String => out.push_str("<string>"),
            Shape::Integer => out.push_str("<integer>"),
            Shape::Number => out.push_str("<number>"),
            Shape::Boolean => out.push_str("<boolean>"),
            Shape::Enum(o) => out.push_str(&format!("<one of: {}>", o.join(" | "))),
            Shape::Array(item) => {
                out.push('[');
                item.describe_into(out, indent);
                out.push_str(", ...]");
            }
            Shape::Map(item) => {
                out.push_str("{\"<key>\": ");
                item.describe_into(out, indent);
                out.push_str(", ...}");
            }
            Shape::Object(fields) => {
                out.push_str("{\n");
                for (i, f) in fields.iter().enumerate() {
                    out.push_str(&format!("{pad}  \"{}\": ", f.name));
                    f.shape.describe_into(out, indent + 1);
                    if i + 1 < fields.len() {
                        out.push(',');
                    }
                    let mut notes = Vec::new();
                    if !f.required {
                        notes.push("optional".to_string());
                    }
                    if !f.hint.is_empty() {
                        notes.push(f.hint.clone());
                    }
                    if !notes.is_empty() {
                        out.push_str(&format!("  // {}", notes.join("; ")));
                    }
                    out.push('\n');
                }
                out.push_str(&format!("{pad}}}"));
            }
        }
    }
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// The first syntactically valid JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Option<Value> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

impl Gateway {
    /// Completes and parses a JSON object fitting `schema`, reprompting with
    /// the validation errors up to `parse_retries` times. Usage is summed over
    /// all rounds.
    pub fn complete_structured(
        &self,
        tag: CallTag,
        messages: &[Message],
        params: &GenerationParams,
        schema: &Shape,
        parse_retries: u32,
    ) -> Result<(Value, TokenUsage), LmError> {
        let mut conversation = messages.to_vec();
        let mut usage = TokenUsage {
            model_id: self.model_id().to_string(),
            ..TokenUsage::default()
        };
        let mut last_errors = Vec::new();
        for round in 0..=parse_retries {
            let (text, u) = self.complete(CallTag { round, ..tag }, &conversation, params)?;
            usage.prompt_tokens += u.prompt_tokens;
            usage.completion_tokens += u.completion_tokens;
            last_errors = match extract_json_object(&text) {
                None => vec!["no JSON object found in the answer".to_string()],
                Some(v) => {
                    let errs = schema.validate(&v);
                    if errs.is_empty() {
                        return Ok((v, usage));
                    }
                    errs
                }
            };
            conversation.push(Message::assistant(text));
            conversation.push(Message::user(format!(
                "Your answer did not match the required format:\n- {}\n\nReply again with a single JSON object of this shape:\n{}",
                last_errors.join("\n- "),
                schema.describe()
            )));
        }
        Err(LmError::SchemaViolation { errors: last_errors })
    }
}
