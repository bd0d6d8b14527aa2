//! Parser for `.lbl` labeling schemas.
//!
//! ```text
//! values   { low, high, personal }
//! types    { Application, Customer, Public }
//! keywords { CV, order }
//!
//! when CV    -> value personal type Application
//! when order -> value high     type Customer
//! ```
//!
//! Commas inside lists are optional. `#` and `//` start line comments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: undeclared {kind} {name:?}")]
    Undeclared {
        line: usize,
        column: usize,
        kind: &'static str,
        name: String,
    },
    #[error("line {line}, column {column}: {kind} {name:?} declared twice")]
    DuplicateDeclaration {
        line: usize,
        column: usize,
        kind: &'static str,
        name: String,
    },
    #[error("line {line}, column {column}: second rule for keyword {keyword:?}")]
    DuplicateRule {
        line: usize,
        column: usize,
        keyword: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keyword: String,
    pub value_if_keyword: Label,
    pub type_if_keyword: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSchema {
    pub asset_values: Vec<Label>,
    pub asset_types: Vec<Label>,
    pub keywords: Vec<String>,
    pub rules: Vec<KeywordRule>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LBrace,
    RBrace,
    Comma,
    Arrow,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("{s:?}"),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::Comma => "','".into(),
            Tok::Arrow => "'->'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn lex(text: &str) -> Result<Vec<Spanned>, SchemaError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let at = |tok| Spanned { tok, line: lineno + 1, column };
            match c {
                _ if c.is_whitespace() => i += 1,
                '#' => break,
                '/' if chars.get(i + 1) == Some(&'/') => break,
                '{' => {
                    out.push(at(Tok::LBrace));
                    i += 1;
                }
                '}' => {
                    out.push(at(Tok::RBrace));
                    i += 1;
                }
                ',' => {
                    out.push(at(Tok::Comma));
                    i += 1;
                }
                '-' if chars.get(i + 1) == Some(&'>') => {
                    out.push(at(Tok::Arrow));
                    i += 2;
                }
                _ if is_ident_char(c) => {
                    let start = i;
                    while i < chars.len()
                        && is_ident_char(chars[i])
                        && !(chars[i] == '-' && chars.get(i + 1) == Some(&'>'))
                    {
                        i += 1;
                    }
                    out.push(at(Tok::Ident(chars[start..i].iter().collect())));
                }
                other => {
                    return Err(SchemaError::Syntax {
                        line: lineno + 1,
                        column,
                        message: format!("unexpected character {other:?}"),
                    })
                }
            }
        }
    }
    let line = text.lines().count().max(1);
    let column = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    out.push(Spanned { tok: Tok::Eof, line, column });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, at: &Spanned, message: impl Into<String>) -> SchemaError {
        SchemaError::Syntax { line: at.line, column: at.column, message: message.into() }
    }

    fn expect(&mut self, want: Tok) -> Result<Spanned, SchemaError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.syntax(&t, format!("expected {}, found {}", want.describe(), t.tok.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Spanned), SchemaError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(self.syntax(&t, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), SchemaError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            other => Err(self.syntax(&t, format!("expected '{kw}', found {}", other.describe()))),
        }
    }

    /// `kw "{" (ident ","?)* "}"`
    fn section(&mut self, kw: &str, kind: &'static str) -> Result<Vec<(String, Spanned)>, SchemaError> {
        self.keyword(kw)?;
        self.expect(Tok::LBrace)?;
        let mut items: Vec<(String, Spanned)> = Vec::new();
        loop {
            match self.peek().tok {
                Tok::RBrace => {
                    self.next();
                    return Ok(items);
                }
                Tok::Comma if !items.is_empty() => {
                    self.next();
                }
                _ => {
                    let (name, at) = self.ident(kind)?;
                    if items.iter().any(|(n, _)| *n == name) {
                        return Err(SchemaError::DuplicateDeclaration {
                            line: at.line,
                            column: at.column,
                            kind,
                            name,
                        });
                    }
                    items.push((name, at));
                }
            }
        }
    }
}

fn as_labels(items: Vec<(String, Spanned)>) -> Result<Vec<Label>, SchemaError> {
    items
        .into_iter()
        .map(|(name, at)| {
            Label::new(&name).map_err(|e| SchemaError::Syntax {
                line: at.line,
                column: at.column,
                message: e.to_string(),
            })
        })
        .collect()
}

fn resolve(declared: &[Label], name: &str, at: &Spanned, kind: &'static str) -> Result<Label, SchemaError> {
    declared
        .iter()
        .find(|l| l.as_str() == name)
        .cloned()
        .ok_or_else(|| SchemaError::Undeclared { line: at.line, column: at.column, kind, name: name.to_string() })
}

/// Parses a labeling schema and checks every rule against the declarations.
pub fn parse_schema(text: &str) -> Result<LabelSchema, SchemaError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    if p.peek().tok == Tok::Eof {
        return Ok(LabelSchema::default());
    }
    let asset_values = as_labels(p.section("values", "value")?)?;
    let asset_types = as_labels(p.section("types", "type")?)?;
    let keywords: Vec<String> = p.section("keywords", "keyword")?.into_iter().map(|(n, _)| n).collect();

    let mut rules: Vec<KeywordRule> = Vec::new();
    while p.peek().tok != Tok::Eof {
        p.keyword("when")?;
        let (keyword, kw_at) = p.ident("keyword")?;
        p.expect(Tok::Arrow)?;
        p.keyword("value")?;
        let (value, value_at) = p.ident("value")?;
        p.keyword("type")?;
        let (ty, type_at) = p.ident("type")?;

        if !keywords.contains(&keyword) {
            return Err(SchemaError::Undeclared {
                line: kw_at.line,
                column: kw_at.column,
                kind: "keyword",
                name: keyword,
            });
        }
        let value_if_keyword = resolve(&asset_values, &value, &value_at, "value")?;
        let type_if_keyword = resolve(&asset_types, &ty, &type_at, "type")?;
        if rules.iter().any(|r| r.keyword == keyword) {
            return Err(SchemaError::DuplicateRule { line: kw_at.line, column: kw_at.column, keyword });
        }
        rules.push(KeywordRule { keyword, value_if_keyword, type_if_keyword });
    }
    Ok(LabelSchema { asset_values, asset_types, keywords, rules })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CLOUDFLOW: &str = "\
values   { low, high, personal }
types    { Application, Customer, Public }
keywords { CV, order }

when CV    -> value personal type Application
when order -> value high     type Customer
";

    #[test]
    fn cloudflow_schema_parses() {
        let s = parse_schema(CLOUDFLOW).unwrap();
        let names = |v: &[Label]| v.iter().map(|l| l.to_string()).collect::<Vec<_>>();
        assert_eq!(names(&s.asset_values), ["low", "high", "personal"]);
        assert_eq!(names(&s.asset_types), ["Application", "Customer", "Public"]);
        assert_eq!(s.keywords, ["CV", "order"]);
        assert_eq!(s.rules.len(), 2);
        assert_eq!(s.rules[1].keyword, "order");
        assert_eq!(s.rules[1].value_if_keyword.as_str(), "high");
        assert_eq!(s.rules[1].type_if_keyword.as_str(), "Customer");
    }

    #[test]
    fn undeclared_value_rejected() {
        let text = CLOUDFLOW.replace("value high", "value extreme");
        match parse_schema(&text).unwrap_err() {
            SchemaError::Undeclared { kind, name, line, .. } => {
                assert_eq!((kind, name.as_str(), line), ("value", "extreme", 6));
            }
            e => panic!("unexpected {e:?}"),
        }
        let text = CLOUDFLOW.replace("type Customer", "type Vendor");
        assert!(matches!(parse_schema(&text), Err(SchemaError::Undeclared { kind: "type", .. })));
        let text = format!("{CLOUDFLOW}when invoice -> value high type Customer\n");
        assert!(matches!(parse_schema(&text), Err(SchemaError::Undeclared { kind: "keyword", .. })));
    }

    #[test]
    fn empty_sections() {
        let s = parse_schema("values {} types {} keywords {}").unwrap();
        assert_eq!(s, LabelSchema::default());
        assert_eq!(parse_schema("  # nothing\n").unwrap(), LabelSchema::default());
    }

    #[test]
    fn duplicate_rules_and_declarations() {
        let text = format!("{CLOUDFLOW}when CV -> value low type Public\n");
        assert!(matches!(
            parse_schema(&text),
            Err(SchemaError::DuplicateRule { line: 7, column: 6, .. })
        ));
        assert!(matches!(
            parse_schema("values { a, a } types {} keywords {}"),
            Err(SchemaError::DuplicateDeclaration { kind: "value", .. })
        ));
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_schema("values { low high }\ntypes { A }\nkeywords { k }\nwhen k value low type A").unwrap_err() {
            SchemaError::Syntax { line, column, message } => {
                assert_eq!((line, column), (4, 8));
                assert!(message.contains("'->'"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(parse_schema("types {}"), Err(SchemaError::Syntax { line: 1, column: 1, .. })));
        assert!(matches!(parse_schema("values { a"), Err(SchemaError::Syntax { .. })));
        assert!(matches!(parse_schema("values { a; }"), Err(SchemaError::Syntax { column: 11, .. })));
        assert!(matches!(parse_schema("values { , a }"), Err(SchemaError::Syntax { .. })));
    }

    #[test]
    fn arrow_without_spaces_and_comments() {
        let s = parse_schema(
            "// header\nvalues{v}types{T}keywords{k-w} # trailing\nwhen k-w->value v type T",
        )
        .unwrap();
        assert_eq!(s.rules[0].keyword, "k-w");
    }
}
