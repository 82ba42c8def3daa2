//! Checks JSON values against the subset of JSON Schema the API schema
//! uses: `$ref`, `oneOf`, `type`, `const`, `enum`, `required`, `properties`,
//! `additionalProperties: false`, `items`, `minimum`, `minLength`, `pattern`.

use serde_json::Value;

pub struct Schema {
    root: Value,
}

impl Schema {
    pub fn api() -> Self {
        Self { root: serde_json::from_str(octaloop_engine::service::SCHEMA).expect("schema is JSON") }
    }

    pub fn check(&self, def: &str, v: &Value) -> Result<(), String> {
        let s = self.root["$defs"].get(def).ok_or_else(|| format!("no definition {def}"))?;
        self.node(s, v, def)
    }

    fn node(&self, s: &Value, v: &Value, at: &str) -> Result<(), String> {
        let obj = s.as_object().ok_or_else(|| format!("{at}: schema node is not an object"))?;
        for key in obj.keys() {
            let known = [
                "$ref", "oneOf", "type", "const", "enum", "required", "properties", "additionalProperties", "items",
                "minimum", "minLength", "pattern", "description",
            ];
            if !known.contains(&key.as_str()) {
                return Err(format!("{at}: unsupported keyword {key}"));
            }
        }
        if let Some(r) = s.get("$ref").and_then(Value::as_str) {
            let name = r.strip_prefix("#/$defs/").ok_or_else(|| format!("{at}: bad ref {r}"))?;
            return self.check(name, v).map_err(|e| format!("{at}: {e}"));
        }
        if let Some(alts) = s.get("oneOf").and_then(Value::as_array) {
            let hits = alts.iter().filter(|a| self.node(a, v, at).is_ok()).count();
            if hits != 1 {
                return Err(format!("{at}: {hits} oneOf branches match {v}"));
            }
        }
        if let Some(t) = s.get("type") {
            let types: Vec<&str> = match t {
                Value::String(one) => vec![one.as_str()],
                Value::Array(many) => many.iter().filter_map(Value::as_str).collect(),
                _ => return Err(format!("{at}: bad type")),
            };
            if !types.iter().any(|t| has_type(t, v)) {
                return Err(format!("{at}: {v} is not {types:?}"));
            }
        }
        if let Some(c) = s.get("const") {
            if !same(c, v) {
                return Err(format!("{at}: {v} is not {c}"));
            }
        }
        if let Some(e) = s.get("enum").and_then(Value::as_array) {
            if !e.iter().any(|c| same(c, v)) {
                return Err(format!("{at}: {v} not in {e:?}"));
            }
        }
        if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
            if x < min {
                return Err(format!("{at}: {x} below {min}"));
            }
        }
        if let (Some(min), Some(x)) = (s.get("minLength").and_then(Value::as_u64), v.as_str()) {
            if (x.chars().count() as u64) < min {
                return Err(format!("{at}: string shorter than {min}"));
            }
        }
        if let (Some(p), Some(x)) = (s.get("pattern").and_then(Value::as_str), v.as_str()) {
            // the only pattern in the schema
            assert_eq!(p, "^[0-9a-f]{16}$", "unsupported pattern");
            if x.len() != 16 || !x.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                return Err(format!("{at}: {x} does not match {p}"));
            }
        }
        if let Some(fields) = v.as_object() {
            if let Some(req) = s.get("required").and_then(Value::as_array) {
                for r in req.iter().filter_map(Value::as_str) {
                    if !fields.contains_key(r) {
                        return Err(format!("{at}: missing {r}"));
                    }
                }
            }
            let props = s.get("properties").and_then(Value::as_object);
            for (k, fv) in fields {
                match props.and_then(|p| p.get(k)) {
                    Some(ps) => self.node(ps, fv, &format!("{at}.{k}"))?,
                    None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        return Err(format!("{at}: unexpected field {k}"));
                    }
                    None => {}
                }
            }
        }
        if let (Some(items), Some(xs)) = (s.get("items"), v.as_array()) {
            for (i, x) in xs.iter().enumerate() {
                self.node(items, x, &format!("{at}[{i}]"))?;
            }
        }
        Ok(())
    }
}

fn has_type(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        _ => false,
    }
}

fn same(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}
