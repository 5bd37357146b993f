//! Single-pass `{placeholder}` substitution for prompt templates.
//!
//! Substituted values are never re-scanned, so captions or model output
//! containing braces pass through untouched.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has no value for placeholder `{{{name}}}`")]
    Missing { template: String, name: String },
    #[error("value supplied for `{{{name}}}`, which template `{template}` does not use")]
    Unused { template: String, name: String },
}

/// A named template. Placeholders are `{identifier}` with ASCII
/// alphanumerics and underscores; any other brace is literal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Template {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.pieces()
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(name) => Some(name),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    fn pieces(&self) -> Vec<Piece<'_>> {
        let text = self.text.as_str();
        let mut pieces = Vec::new();
        let mut literal_start = 0;
        let mut i = 0;
        let bytes = text.as_bytes();
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let rest = &text[i + 1..];
                let len = rest
                    .bytes()
                    .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                    .count();
                if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
                    if literal_start < i {
                        pieces.push(Piece::Literal(&text[literal_start..i]));
                    }
                    pieces.push(Piece::Slot(&rest[..len]));
                    i += len + 2;
                    literal_start = i;
                    continue;
                }
            }
            i += 1;
        }
        if literal_start < text.len() {
            pieces.push(Piece::Literal(&text[literal_start..]));
        }
        pieces
    }

    /// Every placeholder must have a value and every value must be used.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let used = self.placeholders();
        if let Some((name, _)) = values.iter().find(|(n, _)| !used.contains(n)) {
            return Err(TemplateError::Unused {
                template: self.name.clone(),
                name: name.to_string(),
            });
        }
        let mut out = String::with_capacity(self.text.len());
        for piece in self.pieces() {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(name) => {
                    let value = values
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::Missing {
                            template: self.name.clone(),
                            name: name.to_string(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_every_occurrence() {
        let t = Template::new("t", "{a} and {a} then {b}.");
        assert_eq!(t.render(&[("a", "x"), ("b", "y")]).unwrap(), "x and x then y.");
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::new("t", "caption: {c}");
        assert_eq!(t.render(&[("c", "{c} {weird")]).unwrap(), "caption: {c} {weird");
    }

    #[test]
    fn non_identifier_braces_are_literal() {
        let t = Template::new("t", "json {\"k\": 1} {x} { } {}");
        assert_eq!(t.placeholders().into_iter().collect::<Vec<_>>(), vec!["x"]);
        assert_eq!(t.render(&[("x", "1")]).unwrap(), "json {\"k\": 1} 1 { } {}");
    }

    #[test]
    fn missing_and_unused_values_are_errors() {
        let t = Template::new("t", "{a}");
        assert!(matches!(t.render(&[]), Err(TemplateError::Missing { .. })));
        assert!(matches!(
            t.render(&[("a", "1"), ("b", "2")]),
            Err(TemplateError::Unused { .. })
        ));
    }
}
