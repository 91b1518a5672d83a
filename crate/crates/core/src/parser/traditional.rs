//! Parser for the supported OData v4 subset: comparisons, `and`/`or`/`not`,
//! parentheses, `contains`/`startswith`/`endswith`, `$select`, `$orderby`,
//! `$top`, `$skip` and nested `$expand`.

use std::collections::HashSet;

use super::lexer::{tokenize, Tok, Token};
use super::{parse_count, ParseError, QueryError, QueryFragment};
use crate::ast::{
    CompareOp, ExpandNode, FieldRef, FilterExpr, Literal, Number, OrderKey, Query, SortDirection,
    StringFunction,
};
use crate::model::{EntityModel, FieldErrorKind};

pub const SYSTEM_OPTIONS: [&str; 6] = ["$filter", "$select", "$orderby", "$top", "$skip", "$expand"];

struct Parser<'a> {
    input: &'a str,
    toks: Vec<Token>,
    i: usize,
    model: &'a EntityModel,
    set: &'a str,
}

impl<'a> Parser<'a> {
    fn new(input: &'a str, model: &'a EntityModel, set: &'a str) -> Result<Self, QueryError> {
        if model.entity_set(set).is_none() {
            return Err(QueryError::UnknownEntitySet(set.to_string()));
        }
        if input.trim().is_empty() {
            return Err(ParseError::new(input, 0, "expression", "empty option value").into());
        }
        Ok(Self {
            input,
            toks: tokenize(input)?,
            i: 0,
            model,
            set,
        })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.i]
    }

    fn peek_at(&self, n: usize) -> &Tok {
        self.toks
            .get(self.i + n)
            .map(|t| &t.tok)
            .unwrap_or(&Tok::Eof)
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn error(&self, pos: usize, expected: &str, message: impl Into<String>) -> QueryError {
        ParseError::new(self.input, pos, expected, message).into()
    }

    fn unexpected(&self, expected: &str) -> QueryError {
        let t = self.peek();
        self.error(t.pos, expected, format!("unexpected {}", t.tok.describe()))
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_eof(&self) -> Result<(), QueryError> {
        match self.peek().tok {
            Tok::Eof => Ok(()),
            Tok::RParen => Err(self.error(
                self.peek().pos,
                "end of input",
                "unbalanced parentheses: unmatched `)`",
            )),
            _ => Err(self.unexpected("`and`, `or` or end of input")),
        }
    }

    fn field(&mut self, set: &str) -> Result<FieldRef, QueryError> {
        let t = self.next();
        let name = match t.tok {
            Tok::Ident(s) => s,
            other => {
                return Err(self.error(t.pos, "field name", format!("unexpected {}", other.describe())))
            }
        };
        let segments: Vec<&str> = name.split('/').collect();
        match self.model.resolve_field(set, &segments) {
            Ok((f, _)) => Ok(f),
            Err(e) => {
                let offset: usize = segments[..e.segment]
                    .iter()
                    .map(|s| s.chars().count() + 1)
                    .sum();
                let msg = match e.kind {
                    FieldErrorKind::UnknownField => format!("unknown field `{}`", e.name),
                    FieldErrorKind::NotNavigable => {
                        format!("`{}` is not a single-valued relation", e.name)
                    }
                };
                Err(self.error(t.pos + offset, "field name", msg))
            }
        }
    }

    fn or_expr(&mut self) -> Result<FilterExpr, QueryError> {
        let mut children = vec![self.and_expr()?];
        while self.is_keyword("or") {
            self.next();
            children.push(self.and_expr()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            FilterExpr::Or(children)
        })
    }

    fn and_expr(&mut self) -> Result<FilterExpr, QueryError> {
        let mut children = vec![self.unary()?];
        while self.is_keyword("and") {
            self.next();
            children.push(self.unary()?);
        }
        Ok(if children.len() == 1 {
            children.pop().unwrap()
        } else {
            FilterExpr::And(children)
        })
    }

    fn unary(&mut self) -> Result<FilterExpr, QueryError> {
        if self.is_keyword("not") {
            self.next();
            return Ok(FilterExpr::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<FilterExpr, QueryError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::LParen => {
                self.next();
                let inner = self.or_expr()?;
                match self.peek().tok {
                    Tok::RParen => {
                        self.next();
                        Ok(FilterExpr::group(inner))
                    }
                    Tok::Eof => Err(self.error(
                        t.pos,
                        "`)`",
                        "unbalanced parentheses: unclosed `(`",
                    )),
                    _ => Err(self.unexpected("`)`")),
                }
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::LParen => {
                let func = StringFunction::from_name(name).ok_or_else(|| {
                    self.error(t.pos, "contains, startswith or endswith", format!("unknown function `{name}`"))
                })?;
                self.next();
                self.next();
                let field = self.field(self.set)?;
                if self.peek().tok != Tok::Comma {
                    return Err(self.unexpected("`,`"));
                }
                self.next();
                let lit_pos = self.peek().pos;
                let value = self.literal()?;
                if !matches!(value, Literal::String(_)) {
                    return Err(self.error(lit_pos, "string literal", "string function argument must be a string"));
                }
                if self.peek().tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.next();
                Ok(FilterExpr::StringFn { func, field, value })
            }
            Tok::Ident(_) => {
                let field = self.field(self.set)?;
                let op_tok = self.next();
                let op = match &op_tok.tok {
                    Tok::Ident(s) => CompareOp::from_keyword(s).ok_or_else(|| {
                        self.error(op_tok.pos, "comparison operator", format!("unknown operator `{s}`"))
                    })?,
                    Tok::Equals => {
                        return Err(self.error(op_tok.pos, "comparison operator", "unknown operator `=`"))
                    }
                    other => {
                        return Err(self.error(
                            op_tok.pos,
                            "comparison operator",
                            format!("unexpected {}", other.describe()),
                        ))
                    }
                };
                let value = self.literal()?;
                Ok(FilterExpr::Comparison { field, op, value })
            }
            _ => Err(self.unexpected("field, function, `not` or `(`")),
        }
    }

    fn literal(&mut self) -> Result<Literal, QueryError> {
        let t = self.next();
        match t.tok {
            Tok::Str(s) => Ok(Literal::String(s)),
            Tok::Num(n) => Number::parse_decimal(&n)
                .map(Literal::Number)
                .ok_or_else(|| self.error(t.pos, "literal", format!("bad numeric literal `{n}`"))),
            Tok::Ident(s) if s == "true" => Ok(Literal::Bool(true)),
            Tok::Ident(s) if s == "false" => Ok(Literal::Bool(false)),
            Tok::Ident(s) if s == "null" => Ok(Literal::Null),
            Tok::Ident(s) => Err(self.error(t.pos, "literal", format!("bad literal `{s}`"))),
            other => Err(self.error(t.pos, "literal", format!("unexpected {}", other.describe()))),
        }
    }

    fn expand_list(&mut self, set: &str, path: &mut Vec<String>) -> Result<Vec<ExpandNode>, QueryError> {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        loop {
            let t = self.next();
            let name = match &t.tok {
                Tok::Ident(s) => s.clone(),
                other => {
                    return Err(self.error(t.pos, "relation name", format!("unexpected {}", other.describe())))
                }
            };
            let def = self.model.entity_set(set).expect("validated set");
            let rel = def
                .relation_ci(&name)
                .ok_or_else(|| self.error(t.pos, "relation name", format!("unknown relation `{name}`")))?
                .clone();
            if path.contains(&rel.target) {
                return Err(self.error(
                    t.pos,
                    "relation name",
                    format!("expanding `{}` revisits entity set `{}`", rel.name, rel.target),
                ));
            }
            if !seen.insert(rel.name.clone()) {
                return Err(QueryError::DuplicateExpand(rel.name));
            }
            let mut children = Vec::new();
            if self.peek().tok == Tok::LParen {
                self.next();
                let opt = self.next();
                match &opt.tok {
                    Tok::Ident(s) if s == "$expand" => {}
                    Tok::Ident(s) => {
                        return Err(self.error(opt.pos, "`$expand`", format!("unsupported nested option `{s}`")))
                    }
                    other => {
                        return Err(self.error(opt.pos, "`$expand`", format!("unexpected {}", other.describe())))
                    }
                }
                if self.peek().tok != Tok::Equals {
                    return Err(self.unexpected("`=`"));
                }
                self.next();
                path.push(rel.target.clone());
                children = self.expand_list(&rel.target, path)?;
                path.pop();
                if self.peek().tok != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.next();
            }
            nodes.push(ExpandNode::with_children(rel.name, children));
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                return Ok(nodes);
            }
        }
    }
}

/// Parses a `$filter` expression against `set`.
pub fn parse_filter(s: &str, model: &EntityModel, set: &str) -> Result<FilterExpr, QueryError> {
    let mut p = Parser::new(s, model, set)?;
    let e = p.or_expr()?;
    p.expect_eof()?;
    Ok(e)
}

pub fn parse_select(s: &str, model: &EntityModel, set: &str) -> Result<Vec<FieldRef>, QueryError> {
    let mut p = Parser::new(s, model, set)?;
    let mut out: Vec<FieldRef> = Vec::new();
    loop {
        let pos = p.peek().pos;
        let f = p.field(set)?;
        if !f.is_simple() {
            return Err(p.error(pos, "property name", "navigation paths cannot be selected"));
        }
        if out.contains(&f) {
            return Err(QueryError::DuplicateField(f.to_string()));
        }
        out.push(f);
        match p.peek().tok {
            Tok::Comma => {
                p.next();
            }
            Tok::Eof => return Ok(out),
            _ => return Err(p.unexpected("`,` or end of input")),
        }
    }
}

pub fn parse_orderby(s: &str, model: &EntityModel, set: &str) -> Result<Vec<OrderKey>, QueryError> {
    let mut p = Parser::new(s, model, set)?;
    let mut out = Vec::new();
    loop {
        let field = p.field(set)?;
        let direction = if p.is_keyword("asc") {
            p.next();
            SortDirection::Asc
        } else if p.is_keyword("desc") {
            p.next();
            SortDirection::Desc
        } else {
            SortDirection::Asc
        };
        out.push(OrderKey { field, direction });
        match p.peek().tok {
            Tok::Comma => {
                p.next();
            }
            Tok::Eof => return Ok(out),
            _ => return Err(p.unexpected("`asc`, `desc`, `,` or end of input")),
        }
    }
}

pub fn parse_expand(s: &str, model: &EntityModel, set: &str) -> Result<Vec<ExpandNode>, QueryError> {
    let mut p = Parser::new(s, model, set)?;
    let mut path = vec![set.to_string()];
    let nodes = p.expand_list(set, &mut path)?;
    match p.peek().tok {
        Tok::Eof => Ok(nodes),
        Tok::RParen => Err(p.error(p.peek().pos, "end of input", "unbalanced parentheses: unmatched `)`")),
        _ => Err(p.unexpected("`,` or end of input")),
    }
}

/// Parses the `$`-prefixed options of a decoded parameter list. Keys without
/// a `$` are ignored here; they belong to the simplified syntax.
pub fn parse_traditional_params(
    params: &[(String, String)],
    model: &EntityModel,
    set: &str,
) -> Result<QueryFragment, QueryError> {
    if model.entity_set(set).is_none() {
        return Err(QueryError::UnknownEntitySet(set.to_string()));
    }
    let mut frag = QueryFragment::default();
    let mut seen = HashSet::new();
    for (key, value) in params {
        if !key.starts_with('$') {
            continue;
        }
        if !SYSTEM_OPTIONS.contains(&key.as_str()) {
            return Err(QueryError::UnknownOption(key.clone()));
        }
        if !seen.insert(key.as_str()) {
            return Err(QueryError::DuplicateOption(key.clone()));
        }
        match key.as_str() {
            "$filter" => frag.filter = Some(parse_filter(value, model, set)?),
            "$select" => frag.select = Some(parse_select(value, model, set)?),
            "$orderby" => frag.order_by = Some(parse_orderby(value, model, set)?),
            "$expand" => frag.expand = Some(parse_expand(value, model, set)?),
            "$top" => frag.top = Some(parse_count(key, value)?),
            "$skip" => frag.skip = Some(parse_count(key, value)?),
            _ => unreachable!(),
        }
    }
    Ok(frag)
}

pub fn parse_query_params(
    params: &[(String, String)],
    model: &EntityModel,
    set: &str,
) -> Result<Query, QueryError> {
    Ok(parse_traditional_params(params, model, set)?.into_query(set))
}

/// Splits an undecoded `a=b&c=d` string into pairs, respecting single-quoted
/// literals so that `&` inside a string does not split an option.
pub fn split_options(s: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut current = String::new();
    // A quote opens a literal only where a token starts, so `O'Brien` stays a word.
    let mut quote: Option<char> = None;
    for c in s.chars() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (None, '\'' | '"') if current.chars().last().map_or(true, |p| !p.is_alphanumeric()) => {
                quote = Some(c)
            }
            (None, '&') => {
                push_pair(&mut out, &current);
                current.clear();
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    push_pair(&mut out, &current);
    out
}

fn push_pair(out: &mut Vec<(String, String)>, part: &str) {
    if part.is_empty() {
        return;
    }
    match part.split_once('=') {
        Some((k, v)) => out.push((k.to_string(), v.to_string())),
        None => out.push((part.to_string(), String::new())),
    }
}
