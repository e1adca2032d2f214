//! Locating JSON objects inside free-form model output.

use serde_json::{Map, Value};

/// First JSON object in `text` (scanning left to right) for which `accept`
/// returns true. Nested objects are considered too, outermost first.
pub(crate) fn first_object_where(text: &str, accept: impl Fn(&Map<String, Value>) -> bool) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if accept(&map) {
                return Some(map);
            }
        }
    }
    None
}
