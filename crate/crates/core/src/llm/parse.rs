use serde_json::Value;

use crate::corpus::Label;

/// Label and targets read from a model reply. `label` is `None` when the
/// reply holds no usable `hate_speech` field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedResponse {
    pub label: Option<Label>,
    pub targets: Vec<String>,
}

/// First balanced `{...}` in `raw` that parses as a JSON object.
fn first_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(off) = raw[start..].find('{') {
        let open = start + off;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(m)) = serde_json::from_str(&raw[open..=i]) {
                            return Some(m);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

/// Never fails; unusable replies come back with `label: None`.
pub fn parse_response(raw: &str) -> ParsedResponse {
    let Some(obj) = first_object(raw) else {
        return ParsedResponse {
            label: None,
            targets: Vec::new(),
        };
    };
    let label = obj
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("hate_speech"))
        .and_then(|(_, v)| v.as_str())
        .and_then(|s| match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Some(Label::Hate),
            "no" => Some(Label::NonHate),
            "maybe" => Some(Label::Maybe),
            _ => None,
        });
    let targets = match obj.get("targets") {
        Some(Value::Array(a)) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
        Some(Value::String(s)) if !s.is_empty() => vec![s.clone()],
        _ => Vec::new(),
    };
    ParsedResponse { label, targets }
}
