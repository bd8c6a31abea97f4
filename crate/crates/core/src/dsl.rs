//! The action grammar the planner speaks.
//!
//! ```text
//! action := "call" ident "(" [arg ("," arg)*] ")"
//!         | "finish" "(" "caption" "=" string ")"
//! arg    := ident "=" value
//! value  := string | integer | ident
//! ```
//!
//! Whitespace is free between tokens. Strings are double-quoted with
//! backslash escapes (`\\ \" \n \r \t \u{..}`).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ArgValue {
    Str(String),
    Int(i64),
    Ident(String),
}

impl ArgValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ArgValue::Str(s) | ArgValue::Ident(s) => Some(s),
            ArgValue::Int(_) => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Str(s) => f.write_str(&quote(s)),
            ArgValue::Int(n) => write!(f, "{n}"),
            ArgValue::Ident(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub args: Vec<(String, ArgValue)>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, name: impl Into<String>, value: ArgValue) -> Self {
        self.args.push((name.into(), value));
        self
    }

    pub fn get(&self, name: &str) -> Option<&ArgValue> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "call {}(", self.tool)?;
        for (i, (name, value)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={value}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub caption: String,
}

impl fmt::Display for FinalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "finish(caption={})", quote(&self.caption))
    }
}

/// A parsed planner action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Call(ToolCall),
    Finish(FinalAnswer),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Call(c) => c.fmt(f),
            Action::Finish(a) => a.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Input is neither a `call` nor a `finish` form.
    UnknownForm,
    UnexpectedToken,
    UnterminatedString,
    BadEscape,
    IntegerOverflow,
    DuplicateArg,
    EmptyCaption,
    TrailingInput,
}

/// A parse failure at a byte offset, with the set of tokens that would have
/// been accepted there.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} at offset {position}: expected one of {expected:?}, found {found}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
    pub expected: BTreeSet<&'static str>,
    pub found: String,
}

/// Renders `s` as a double-quoted string literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let mut cur = Cursor::new(text);
    cur.skip_ws();
    let start = cur.pos;
    let head = cur.ident();
    let action = match head.as_deref() {
        Some("call") => {
            if !cur.peek().is_some_and(char::is_whitespace) {
                return Err(cur.error(ParseErrorKind::UnexpectedToken, &["whitespace"]));
            }
            Action::Call(parse_call(&mut cur)?)
        }
        Some("finish") => Action::Finish(parse_finish(&mut cur)?),
        _ => {
            cur.pos = start;
            return Err(cur.error(ParseErrorKind::UnknownForm, &["call", "finish"]));
        }
    };
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.error(ParseErrorKind::TrailingInput, &["end of input"]));
    }
    Ok(action)
}

fn parse_call(cur: &mut Cursor<'_>) -> Result<ToolCall, ParseError> {
    cur.skip_ws();
    let tool = cur
        .ident()
        .ok_or_else(|| cur.error(ParseErrorKind::UnexpectedToken, &["tool name"]))?;
    cur.skip_ws();
    cur.expect('(', "(")?;
    let mut call = ToolCall::new(tool);
    cur.skip_ws();
    if cur.eat(')') {
        return Ok(call);
    }
    loop {
        cur.skip_ws();
        let name_pos = cur.pos;
        let name = cur
            .ident()
            .ok_or_else(|| cur.error(ParseErrorKind::UnexpectedToken, &["argument name"]))?;
        if call.get(&name).is_some() {
            cur.pos = name_pos;
            return Err(cur.error(ParseErrorKind::DuplicateArg, &["argument name"]));
        }
        cur.skip_ws();
        cur.expect('=', "=")?;
        cur.skip_ws();
        let value = parse_value(cur)?;
        call.args.push((name, value));
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        if cur.eat(')') {
            return Ok(call);
        }
        return Err(cur.error(ParseErrorKind::UnexpectedToken, &[",", ")"]));
    }
}

fn parse_finish(cur: &mut Cursor<'_>) -> Result<FinalAnswer, ParseError> {
    cur.skip_ws();
    cur.expect('(', "(")?;
    cur.skip_ws();
    let key_pos = cur.pos;
    if cur.ident().as_deref() != Some("caption") {
        cur.pos = key_pos;
        return Err(cur.error(ParseErrorKind::UnexpectedToken, &["caption"]));
    }
    cur.skip_ws();
    cur.expect('=', "=")?;
    cur.skip_ws();
    let str_pos = cur.pos;
    if cur.peek() != Some('"') {
        return Err(cur.error(ParseErrorKind::UnexpectedToken, &["string"]));
    }
    let caption = cur.string()?;
    if caption.trim().is_empty() {
        cur.pos = str_pos;
        return Err(cur.error(ParseErrorKind::EmptyCaption, &["non-empty string"]));
    }
    cur.skip_ws();
    cur.expect(')', ")")?;
    Ok(FinalAnswer { caption })
}

fn parse_value(cur: &mut Cursor<'_>) -> Result<ArgValue, ParseError> {
    match cur.peek() {
        Some('"') => cur.string().map(ArgValue::Str),
        Some(c) if c == '-' || c.is_ascii_digit() => cur.integer().map(ArgValue::Int),
        Some(c) if is_ident_start(c) => Ok(ArgValue::Ident(cur.ident().unwrap_or_default())),
        _ => Err(cur.error(
            ParseErrorKind::UnexpectedToken,
            &["string", "integer", "identifier"],
        )),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(is_ident_start) && chars.all(is_ident_char)
}

/// Byte cursor shared by the action grammar and the constraint block parser.
pub(crate) struct Cursor<'a> {
    src: &'a str,
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    pub(crate) fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    pub(crate) fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    pub(crate) fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    pub(crate) fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    pub(crate) fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    pub(crate) fn expect(&mut self, c: char, token: &'static str) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(ParseErrorKind::UnexpectedToken, &[token]))
        }
    }

    pub(crate) fn ident(&mut self) -> Option<String> {
        if !self.peek().is_some_and(is_ident_start) {
            return None;
        }
        let start = self.pos;
        while self.peek().is_some_and(is_ident_char) {
            self.bump();
        }
        Some(self.src[start..self.pos].to_string())
    }

    pub(crate) fn integer(&mut self) -> Result<i64, ParseError> {
        let start = self.pos;
        self.eat('-');
        if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(self.error(ParseErrorKind::UnexpectedToken, &["digit"]));
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        self.src[start..self.pos].parse().map_err(|_| {
            let mut err = self.error(ParseErrorKind::IntegerOverflow, &["64-bit integer"]);
            err.position = start;
            err
        })
    }

    pub(crate) fn string(&mut self) -> Result<String, ParseError> {
        let open = self.pos;
        self.expect('"', "\"")?;
        let mut out = String::new();
        loop {
            let esc_pos = self.pos;
            match self.bump() {
                None => {
                    let mut err = self.error(ParseErrorKind::UnterminatedString, &["\""]);
                    err.position = open;
                    return Err(err);
                }
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some('u') => match self.unicode_escape() {
                        Some(c) => out.push(c),
                        None => {
                            self.pos = esc_pos;
                            return Err(self.error(ParseErrorKind::BadEscape, &["\\u{hex}"]));
                        }
                    },
                    _ => {
                        self.pos = esc_pos;
                        return Err(self.error(
                            ParseErrorKind::BadEscape,
                            &["\\\"", "\\\\", "\\n", "\\r", "\\t", "\\u{hex}"],
                        ));
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn unicode_escape(&mut self) -> Option<char> {
        if !self.eat('{') {
            return None;
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_hexdigit()) {
            self.bump();
        }
        let digits = &self.src[start..self.pos];
        if digits.is_empty() || digits.len() > 6 || !self.eat('}') {
            return None;
        }
        u32::from_str_radix(digits, 16).ok().and_then(char::from_u32)
    }

    pub(crate) fn error(&self, kind: ParseErrorKind, expected: &[&'static str]) -> ParseError {
        let found = match self.peek() {
            None => "end of input".to_string(),
            Some(c) => format!("{c:?}"),
        };
        ParseError {
            kind,
            position: self.pos,
            expected: expected.iter().copied().collect(),
            found,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_arg_call() {
        let action = parse_action(r#"call count_objects(label="car")"#).unwrap();
        assert_eq!(
            action,
            Action::Call(ToolCall::new("count_objects").arg("label", ArgValue::Str("car".into())))
        );
    }

    #[test]
    fn parses_finish() {
        let action = parse_action(r#"finish(caption="A red car.")"#).unwrap();
        assert_eq!(
            action,
            Action::Finish(FinalAnswer {
                caption: "A red car.".into()
            })
        );
    }

    #[test]
    fn keeps_written_arg_order_and_types() {
        let text = r#"call expand_caption(target=80, caption="A car")"#;
        let expected = ToolCall::new("expand_caption")
            .arg("target", ArgValue::Int(80))
            .arg("caption", ArgValue::Str("A car".into()));
        assert_eq!(parse_action(text).unwrap(), Action::Call(expected.clone()));
        assert_eq!(expected.to_string(), text);
    }

    #[test]
    fn whitespace_between_tokens_is_free() {
        let action = parse_action(" call   vqa (\n question = \"what?\" ,\tmode=short ) ").unwrap();
        let Action::Call(call) = action else { panic!() };
        assert_eq!(call.tool, "vqa");
        assert_eq!(call.get("mode"), Some(&ArgValue::Ident("short".into())));
    }

    #[test]
    fn escapes_round_trip() {
        let caption = "He said \"hi\"\\ then\nleft\u{7}";
        let a = Action::Finish(FinalAnswer {
            caption: caption.into(),
        });
        assert_eq!(parse_action(&a.to_string()).unwrap(), a);
    }

    #[test]
    fn errors_are_positioned() {
        let err = parse_action("describe(x=1)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownForm);
        assert_eq!(err.position, 0);

        let err = parse_action("call vqa(question=\"a\" x=1)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedToken);
        assert_eq!(err.position, 22);
        assert!(err.expected.contains(")"));

        let err = parse_action("call vqa(a=1, a=2)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateArg);
        assert_eq!(err.position, 14);

        let err = parse_action("finish(caption=\"open").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnterminatedString);
        assert_eq!(err.position, 15);

        let err = parse_action("call t(n=99999999999999999999)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::IntegerOverflow);
        assert_eq!(err.position, 9);

        let err = parse_action("finish(caption=\"ok\") extra").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TrailingInput);
        assert_eq!(err.position, 21);
    }

    #[test]
    fn call_needs_space_before_tool() {
        let err = parse_action("callvqa()").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownForm);
        let err = parse_action("call(x=1)").unwrap_err();
        assert_eq!(err.position, 4);
    }

    fn ident() -> impl Strategy<Value = String> {
        "[a-zA-Z_][a-zA-Z0-9_]{0,8}"
    }

    fn value() -> impl Strategy<Value = ArgValue> {
        prop_oneof![
            any::<String>().prop_map(ArgValue::Str),
            any::<i64>().prop_map(ArgValue::Int),
            ident().prop_map(ArgValue::Ident),
        ]
    }

    proptest! {
        #[test]
        fn call_round_trip(tool in ident(), args in prop::collection::btree_map(ident(), value(), 0..5)) {
            let call = ToolCall { tool, args: args.into_iter().collect() };
            let action = Action::Call(call);
            prop_assert_eq!(parse_action(&action.to_string()).unwrap(), action);
        }

        #[test]
        fn finish_round_trip(caption in ".*\\S.*") {
            let action = Action::Finish(FinalAnswer { caption });
            prop_assert_eq!(parse_action(&action.to_string()).unwrap(), action);
        }

        #[test]
        fn never_panics(text in ".{0,40}") {
            let _ = parse_action(&text);
        }
    }
}
