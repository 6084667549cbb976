//! Hand-written lexer and recursive-descent parser.
//!
//! ```text
//! model    := classdef*
//! classdef := "class" IDENT "{" member* "}"
//! member   := stereo* typeref IDENT ["(" ")"] ";"
//! stereo   := "<<" KEY "=" STRING ">>"      KEY in use | mandatory | optional | notUsed
//! typeref  := IDENT ["<" typeref ">"]
//! ```

use std::collections::HashSet;

use super::model::*;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Lt,
    Gt,
    Eq,
    Semi,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    offset: usize,
}

/// Collapses every run of whitespace (including newlines) to a single space and trims.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! advance {
        () => {{
            if chars[i].1 == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let (offset, c) = chars[i];
        let (tl, tc) = (line, col);
        if c.is_whitespace() {
            advance!();
            continue;
        }
        if c == '/' && chars.get(i + 1).map(|x| x.1) == Some('/') {
            while i < chars.len() && chars[i].1 != '\n' {
                advance!();
            }
            continue;
        }
        let simple = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '<' => Some(Tok::Lt),
            '>' => Some(Tok::Gt),
            '=' => Some(Tok::Eq),
            ';' => Some(Tok::Semi),
            _ => None,
        };
        if let Some(tok) = simple {
            advance!();
            out.push(Token { tok, line: tl, col: tc, offset });
            continue;
        }
        if c == '"' {
            advance!();
            let mut raw = String::new();
            loop {
                let Some(&(_, ch)) = chars.get(i) else {
                    return Err(ParseError::Syntax {
                        line: tl,
                        col: tc,
                        expected: "closing `\"`".into(),
                        found: "end of input".into(),
                    });
                };
                advance!();
                match ch {
                    '"' => break,
                    '\\' => {
                        let Some(&(_, esc)) = chars.get(i) else { continue };
                        raw.push(esc);
                        advance!();
                    }
                    other => raw.push(other),
                }
            }
            out.push(Token { tok: Tok::Str(normalize_text(&raw)), line: tl, col: tc, offset });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                ident.push(chars[i].1);
                advance!();
            }
            out.push(Token { tok: Tok::Ident(ident), line: tl, col: tc, offset });
            continue;
        }
        return Err(ParseError::Syntax {
            line: tl,
            col: tc,
            expected: "token".into(),
            found: format!("`{c}`"),
        });
    }
    out.push(Token { tok: Tok::Eof, line, col, offset: src.len() });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

enum Stereo {
    Use,
    Mandatory,
    Optional,
    NotUsed,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let t = self.peek();
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.into(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn ident(&mut self, expected: &str) -> Result<(String, Token), ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.next()))
            }
            _ => Err(self.unexpected(expected)),
        }
    }

    fn model(&mut self, source_name: &str) -> Result<PdlModel, ParseError> {
        let mut classes: Vec<PdlClass> = Vec::new();
        while self.peek().tok != Tok::Eof {
            let at = self.peek().clone();
            let class = self.class()?;
            if classes.iter().any(|c| c.name == class.name) {
                return Err(ParseError::Invalid {
                    line: at.line,
                    col: at.col,
                    message: format!("duplicate class `{}`", class.name),
                });
            }
            classes.push(class);
        }
        Ok(PdlModel { source_name: source_name.to_string(), classes })
    }

    fn class(&mut self) -> Result<PdlClass, ParseError> {
        match &self.peek().tok {
            Tok::Ident(k) if k == "class" => {
                self.next();
            }
            _ => return Err(self.unexpected("`class`")),
        }
        let (name, _) = self.ident("class name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut class = PdlClass { name, attributes: Vec::new(), methods: Vec::new() };
        let mut names = HashSet::new();
        while self.peek().tok != Tok::RBrace {
            if self.peek().tok == Tok::Eof {
                return Err(self.unexpected("`}`"));
            }
            self.member(&mut class, &mut names)?;
        }
        self.next();
        Ok(class)
    }

    fn type_ref(&mut self) -> Result<TypeRef, ParseError> {
        let (name, _) = self.ident("type name")?;
        if self.peek().tok == Tok::Lt {
            self.next();
            let arg = self.type_ref()?;
            self.expect(Tok::Gt, "`>`")?;
            return Ok(TypeRef::generic(name, arg));
        }
        Ok(TypeRef::simple(name))
    }

    fn stereo(&mut self) -> Result<(Stereo, String, Token), ParseError> {
        let first = self.expect(Tok::Lt, "`<<`")?;
        let second = self.expect(Tok::Lt, "`<<`")?;
        if second.offset != first.offset + 1 {
            return Err(ParseError::Syntax {
                line: second.line,
                col: second.col,
                expected: "`<<` without whitespace".into(),
                found: "`< <`".into(),
            });
        }
        let (key, key_tok) = self.ident("stereotype key")?;
        let kind = match key.as_str() {
            "use" => Stereo::Use,
            "mandatory" => Stereo::Mandatory,
            "optional" => Stereo::Optional,
            "notUsed" => Stereo::NotUsed,
            other => {
                return Err(ParseError::Syntax {
                    line: key_tok.line,
                    col: key_tok.col,
                    expected: "one of use, mandatory, optional, notUsed".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        self.expect(Tok::Eq, "`=`")?;
        let value_tok = self.peek().clone();
        let value = match &value_tok.tok {
            Tok::Str(s) => s.clone(),
            _ => return Err(self.unexpected("string")),
        };
        self.next();
        if value.is_empty() {
            return Err(ParseError::Invalid {
                line: value_tok.line,
                col: value_tok.col,
                message: format!("empty `{key}` stereotype"),
            });
        }
        let g1 = self.expect(Tok::Gt, "`>>`")?;
        let g2 = self.expect(Tok::Gt, "`>>`")?;
        if g2.offset != g1.offset + 1 {
            return Err(ParseError::Syntax {
                line: g2.line,
                col: g2.col,
                expected: "`>>` without whitespace".into(),
                found: "`> >`".into(),
            });
        }
        Ok((kind, value, value_tok))
    }

    fn member(&mut self, class: &mut PdlClass, names: &mut HashSet<String>) -> Result<(), ParseError> {
        let mut stereos = Vec::new();
        while self.peek().tok == Tok::Lt {
            stereos.push(self.stereo()?);
        }
        let ty = self.type_ref()?;
        let (name, name_tok) = self.ident("member name")?;
        let is_method = self.peek().tok == Tok::LParen;
        if is_method {
            self.next();
            self.expect(Tok::RParen, "`)` (methods take no parameters)")?;
        }
        self.expect(Tok::Semi, "`;`")?;

        let invalid = |t: &Token, message: String| ParseError::Invalid { line: t.line, col: t.col, message };
        if !names.insert(name.clone()) {
            return Err(invalid(&name_tok, format!("duplicate member `{}.{name}`", class.name)));
        }

        if is_method {
            let mut method = PdlMethod { name, return_type: ty, use_text: None, not_used_text: None };
            for (kind, value, tok) in stereos {
                let slot = match kind {
                    Stereo::Use => &mut method.use_text,
                    Stereo::NotUsed => &mut method.not_used_text,
                    Stereo::Mandatory | Stereo::Optional => {
                        return Err(invalid(&tok, "mandatory/optional stereotypes belong on attributes".into()))
                    }
                };
                if slot.replace(value).is_some() {
                    return Err(invalid(&tok, format!("repeated stereotype on `{}`", method.name)));
                }
            }
            class.methods.push(method);
        } else {
            let mut attr = PdlAttribute {
                name,
                type_name: ty,
                use_text: None,
                mandatory_refs: Vec::new(),
                optional_refs: Vec::new(),
            };
            for (kind, value, tok) in stereos {
                match kind {
                    Stereo::Use => {
                        if attr.use_text.replace(value).is_some() {
                            return Err(invalid(&tok, format!("repeated `use` on `{}`", attr.name)));
                        }
                    }
                    Stereo::NotUsed => {
                        return Err(invalid(&tok, "`notUsed` belongs on methods".into()));
                    }
                    Stereo::Mandatory | Stereo::Optional => {
                        let Some(m) = MethodRef::parse(&value) else {
                            return Err(ParseError::Syntax {
                                line: tok.line,
                                col: tok.col,
                                expected: "`Class.method` reference".into(),
                                found: format!("{value:?}"),
                            });
                        };
                        if attr.mandatory_refs.contains(&m) || attr.optional_refs.contains(&m) {
                            return Err(invalid(&tok, format!("`{m}` referenced twice by `{}`", attr.name)));
                        }
                        if matches!(kind, Stereo::Mandatory) {
                            attr.mandatory_refs.push(m);
                        } else {
                            attr.optional_refs.push(m);
                        }
                    }
                }
            }
            class.attributes.push(attr);
        }
        Ok(())
    }
}

pub(super) fn parse_named(source_name: &str, text: &str) -> Result<PdlModel, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.model(source_name)
}
