//! Simplified query syntax.
//!
//! ```text
//! filter=price>100, category:Books&sort=-price&select=name,price&top=10
//! ```
//!
//! Comma-separated conditions are conjoined. `>`, `<`, `>=`, `<=`, `=`, `!=`
//! map to `gt`, `lt`, `ge`, `le`, `eq`, `ne`; `:` is string equality. There
//! is no OR: requests needing it fall back to `$filter`.

use std::collections::HashSet;

use super::{parse_count, ParseError, QueryError, QueryFragment};
use crate::ast::{CompareOp, FieldRef, FilterExpr, Literal, Number, OrderKey, Query};
use crate::model::{EntityModel, FieldErrorKind};

pub const SIMPLIFIED_OPTIONS: [&str; 5] = ["filter", "sort", "select", "top", "skip"];

/// Operator token as written by the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplifiedOp {
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
    Colon,
}

impl SimplifiedOp {
    // Two-character operators first so `>=` is not read as `>`.
    const TOKENS: [(&'static str, SimplifiedOp); 7] = [
        (">=", SimplifiedOp::Ge),
        ("<=", SimplifiedOp::Le),
        ("!=", SimplifiedOp::Ne),
        (">", SimplifiedOp::Gt),
        ("<", SimplifiedOp::Lt),
        ("=", SimplifiedOp::Eq),
        (":", SimplifiedOp::Colon),
    ];

    pub fn symbol(self) -> &'static str {
        Self::TOKENS.iter().find(|(_, op)| *op == self).unwrap().0
    }

    pub fn to_compare(self) -> CompareOp {
        match self {
            SimplifiedOp::Gt => CompareOp::Gt,
            SimplifiedOp::Lt => CompareOp::Lt,
            SimplifiedOp::Ge => CompareOp::Ge,
            SimplifiedOp::Le => CompareOp::Le,
            SimplifiedOp::Eq | SimplifiedOp::Colon => CompareOp::Eq,
            SimplifiedOp::Ne => CompareOp::Ne,
        }
    }
}

/// One `field op value` condition before field resolution and typing.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplifiedCondition {
    pub field: String,
    pub op: SimplifiedOp,
    pub value: String,
    pub quoted: bool,
    pub field_pos: usize,
}

impl SimplifiedCondition {
    /// `:` and quoted values are strings; otherwise decimal, `true`/`false`,
    /// `null`, falling back to string.
    pub fn literal(&self) -> Literal {
        if self.op == SimplifiedOp::Colon || self.quoted {
            return Literal::String(self.value.clone());
        }
        match self.value.as_str() {
            "true" => Literal::Bool(true),
            "false" => Literal::Bool(false),
            "null" => Literal::Null,
            v => Number::parse_decimal(v)
                .map(Literal::Number)
                .unwrap_or_else(|| Literal::String(v.to_string())),
        }
    }
}

struct Scanner<'a> {
    input: &'a str,
    chars: Vec<char>,
    i: usize,
}

impl<'a> Scanner<'a> {
    fn new(input: &'a str) -> Self {
        Self {
            input,
            chars: input.chars().collect(),
            i: 0,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.i += 1;
        }
    }

    fn starts_with(&self, s: &str) -> bool {
        s.chars()
            .enumerate()
            .all(|(k, c)| self.chars.get(self.i + k) == Some(&c))
    }

    fn err(&self, pos: usize, expected: &str, msg: impl Into<String>) -> QueryError {
        ParseError::new(self.input, pos, expected, msg).into()
    }

    fn unsupported_or(&self, pos: usize) -> QueryError {
        QueryError::UnsupportedConstruct {
            construct: "OR".into(),
            position: pos,
        }
    }

    fn condition(&mut self) -> Result<SimplifiedCondition, QueryError> {
        self.skip_ws();
        let field_pos = self.i;
        let mut field = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '/' {
                field.push(c);
                self.i += 1;
            } else {
                break;
            }
        }
        if field.is_empty() {
            return Err(match self.peek() {
                Some('|') => self.unsupported_or(self.i),
                None | Some(',') => self.err(self.i, "condition", "empty condition"),
                _ => self.err(self.i, "field name", "empty field"),
            });
        }
        self.skip_ws();
        let op_pos = self.i;
        let op = SimplifiedOp::TOKENS
            .iter()
            .find(|(tok, _)| self.starts_with(tok))
            .map(|(tok, op)| {
                self.i += tok.chars().count();
                *op
            });
        let op = match op {
            Some(op) => op,
            None if self.peek() == Some('|') => return Err(self.unsupported_or(op_pos)),
            None => {
                return Err(self.err(
                    op_pos,
                    "one of > < >= <= = != :",
                    format!("missing operator after `{field}`"),
                ))
            }
        };
        self.skip_ws();
        let value_pos = self.i;
        let (value, quoted) = match self.peek() {
            Some(q @ ('\'' | '"')) => {
                self.i += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return Err(self.err(value_pos, "closing quote", "unterminated quoted value")),
                        Some(c) if c == q && self.chars.get(self.i + 1) == Some(&q) => {
                            s.push(q);
                            self.i += 2;
                        }
                        Some(c) if c == q => {
                            self.i += 1;
                            break;
                        }
                        Some(c) => {
                            s.push(c);
                            self.i += 1;
                        }
                    }
                }
                self.skip_ws();
                match self.peek() {
                    None | Some(',') => {}
                    Some('|') => return Err(self.unsupported_or(self.i)),
                    Some(_) => return Err(self.err(self.i, "`,` or end of input", "text after quoted value")),
                }
                (s, true)
            }
            _ => {
                let mut s = String::new();
                while let Some(c) = self.peek() {
                    if c == ',' {
                        break;
                    }
                    if c == '|' {
                        return Err(self.unsupported_or(self.i));
                    }
                    s.push(c);
                    self.i += 1;
                }
                let trimmed = s.trim_end().to_string();
                if trimmed.is_empty() {
                    return Err(self.err(value_pos, "value", format!("empty value for `{field}`")));
                }
                // `or` as a separate word would read as a disjunction.
                let mut offset = 0;
                for word in trimmed.split(' ') {
                    if word.eq_ignore_ascii_case("or") {
                        return Err(self.unsupported_or(value_pos + offset));
                    }
                    offset += word.chars().count() + 1;
                }
                (trimmed, false)
            }
        };
        Ok(SimplifiedCondition {
            field,
            op,
            value,
            quoted,
            field_pos,
        })
    }
}

/// Tokenizes a simplified filter into raw conditions.
pub fn scan_conditions(s: &str) -> Result<Vec<SimplifiedCondition>, QueryError> {
    if s.trim().is_empty() {
        return Err(ParseError::new(s, 0, "condition", "empty filter").into());
    }
    let mut sc = Scanner::new(s);
    let mut out = Vec::new();
    loop {
        out.push(sc.condition()?);
        match sc.peek() {
            Some(',') => sc.i += 1,
            None => return Ok(out),
            Some(_) => unreachable!("condition stops at `,` or end"),
        }
    }
}

fn resolve(
    input: &str,
    raw: &str,
    pos: usize,
    model: &EntityModel,
    set: &str,
) -> Result<FieldRef, QueryError> {
    if model.entity_set(set).is_none() {
        return Err(QueryError::UnknownEntitySet(set.to_string()));
    }
    let segments: Vec<&str> = raw.split('/').collect();
    model.resolve_field(set, &segments).map(|(f, _)| f).map_err(|e| {
        let offset: usize = segments[..e.segment].iter().map(|s| s.chars().count() + 1).sum();
        let msg = match e.kind {
            FieldErrorKind::UnknownField => format!("unknown field `{}`", e.name),
            FieldErrorKind::NotNavigable => format!("`{}` is not a single-valued relation", e.name),
        };
        ParseError::new(input, pos + offset, "field name", msg).into()
    })
}

/// Translates a simplified filter into the shared expression tree.
pub fn parse_simplified_filter(s: &str, model: &EntityModel, set: &str) -> Result<FilterExpr, QueryError> {
    let conditions = scan_conditions(s)?;
    let mut parts = Vec::with_capacity(conditions.len());
    for c in &conditions {
        let field = resolve(s, &c.field, c.field_pos, model, set)?;
        parts.push(FilterExpr::Comparison {
            field,
            op: c.op.to_compare(),
            value: c.literal(),
        });
    }
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        FilterExpr::And(parts)
    })
}

/// Splits a comma list, yielding trimmed items with their character offsets.
fn comma_items(s: &str) -> Result<Vec<(usize, &str)>, QueryError> {
    let mut out = Vec::new();
    let mut pos = 0;
    for item in s.split(',') {
        let lead = item.chars().take_while(|c| c.is_whitespace()).count();
        let trimmed = item.trim();
        if trimmed.is_empty() {
            return Err(ParseError::new(s, pos + lead, "field name", "empty list item").into());
        }
        out.push((pos + lead, trimmed));
        pos += item.chars().count() + 1;
    }
    Ok(out)
}

pub fn parse_simplified_sort(s: &str, model: &EntityModel, set: &str) -> Result<Vec<OrderKey>, QueryError> {
    let mut out = Vec::new();
    for (pos, item) in comma_items(s)? {
        let (key, name, offset) = if let Some(rest) = item.strip_prefix('-') {
            (OrderKey::desc as fn(FieldRef) -> OrderKey, rest, 1)
        } else if let Some(rest) = item.strip_prefix('+') {
            (OrderKey::asc as fn(FieldRef) -> OrderKey, rest, 1)
        } else {
            (OrderKey::asc as fn(FieldRef) -> OrderKey, item, 0)
        };
        out.push(key(resolve(s, name.trim_start(), pos + offset, model, set)?));
    }
    Ok(out)
}

pub fn parse_simplified_select(s: &str, model: &EntityModel, set: &str) -> Result<Vec<FieldRef>, QueryError> {
    let mut out: Vec<FieldRef> = Vec::new();
    for (pos, item) in comma_items(s)? {
        let f = resolve(s, item, pos, model, set)?;
        if !f.is_simple() {
            return Err(ParseError::new(s, pos, "property name", "navigation paths cannot be selected").into());
        }
        if out.contains(&f) {
            return Err(QueryError::DuplicateField(f.to_string()));
        }
        out.push(f);
    }
    Ok(out)
}

/// Reads `filter`, `sort`, `select`, `top` and `skip` from a decoded
/// parameter list. Other keys are left for the caller.
pub fn parse_simplified_params(
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
        if !SIMPLIFIED_OPTIONS.contains(&key.as_str()) {
            continue;
        }
        if !seen.insert(key.as_str()) {
            return Err(QueryError::DuplicateOption(key.clone()));
        }
        match key.as_str() {
            "filter" => frag.filter = Some(parse_simplified_filter(value, model, set)?),
            "sort" => frag.order_by = Some(parse_simplified_sort(value, model, set)?),
            "select" => frag.select = Some(parse_simplified_select(value, model, set)?),
            "top" => frag.top = Some(parse_count(key, value)?),
            "skip" => frag.skip = Some(parse_count(key, value)?),
            _ => unreachable!(),
        }
    }
    Ok(frag)
}

/// Result of merging the two syntaxes, with one warning per discarded
/// simplified option.
#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub query: Query,
    pub warnings: Vec<String>,
}

/// Merges simplified and traditional fragments. Filters are conjoined; for
/// every other option the traditional value replaces the simplified one.
pub fn merge(simplified: QueryFragment, traditional: QueryFragment, set: &str) -> Merged {
    let mut warnings = Vec::new();

    let filter = match (traditional.filter, simplified.filter) {
        (Some(t), Some(s)) => FilterExpr::conjoin([t, s]).map(|f| f.canonicalize()),
        (t, s) => t.or(s),
    };

    fn pick<T>(name: &str, trad: Option<T>, simp: Option<T>, warnings: &mut Vec<String>) -> Option<T> {
        match (trad, simp) {
            (Some(t), Some(_)) => {
                warnings.push(format!(
                    "simplified `{name}` ignored: traditional `${}` takes precedence",
                    if name == "sort" { "orderby" } else { name }
                ));
                Some(t)
            }
            (t, s) => t.or(s),
        }
    }

    let order_by = pick("sort", traditional.order_by, simplified.order_by, &mut warnings);
    let select = pick("select", traditional.select, simplified.select, &mut warnings);
    let expand = pick("expand", traditional.expand, simplified.expand, &mut warnings);
    let top = pick("top", traditional.top, simplified.top, &mut warnings);
    let skip = pick("skip", traditional.skip, simplified.skip, &mut warnings);

    Merged {
        query: QueryFragment {
            filter,
            order_by,
            select,
            expand,
            top,
            skip,
        }
        .into_query(set),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use crate::parser::traditional::parse_traditional_params;

    fn model() -> EntityModel {
        datagen::ecommerce_model()
    }

    fn f(name: &str) -> FieldRef {
        FieldRef::simple(name)
    }

    fn num(v: f64) -> Literal {
        Literal::number(v)
    }

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn translates_comma_conditions_to_and() {
        let m = model();
        let e = parse_simplified_filter("price<20,category:Books", &m, "Products").unwrap();
        assert_eq!(
            e,
            FilterExpr::And(vec![
                FilterExpr::cmp(f("Price"), CompareOp::Lt, num(20.0)),
                FilterExpr::cmp(f("Category"), CompareOp::Eq, Literal::string("Books")),
            ])
        );
        let e = parse_simplified_filter("price>100, category:Books", &m, "Products").unwrap();
        assert_eq!(e.to_odata(), "Price gt 100 and Category eq 'Books'");
    }

    #[test]
    fn single_condition_stays_bare() {
        let e = parse_simplified_filter("rating>=4.5", &model(), "Products").unwrap();
        assert_eq!(e, FilterExpr::cmp(f("Rating"), CompareOp::Ge, num(4.5)));
    }

    #[test]
    fn every_operator_maps() {
        let m = model();
        for (sym, kw) in [(">", "gt"), ("<", "lt"), (">=", "ge"), ("<=", "le"), ("=", "eq"), ("!=", "ne")] {
            let e = parse_simplified_filter(&format!("price {sym} 7"), &m, "Products").unwrap();
            assert_eq!(e.to_odata(), format!("Price {kw} 7"));
        }
    }

    #[test]
    fn value_typing() {
        let m = model();
        let lit = |s: &str| match parse_simplified_filter(s, &m, "Products").unwrap() {
            FilterExpr::Comparison { value, .. } => value,
            other => panic!("{other:?}"),
        };
        assert_eq!(lit("instock=true"), Literal::Bool(true));
        assert_eq!(lit("instock!=false"), Literal::Bool(false));
        assert_eq!(lit("category=null"), Literal::Null);
        assert_eq!(lit("category=Books"), Literal::string("Books"));
        assert_eq!(lit("category:123"), Literal::string("123"));
        assert_eq!(lit("category='123'"), Literal::string("123"));
        assert_eq!(lit("category=\"true\""), Literal::string("true"));
        assert_eq!(lit("price=1.50"), num(1.5));
        assert_eq!(lit("category:Science Fiction"), Literal::string("Science Fiction"));
        assert_eq!(lit("name:O'Brien"), Literal::string("O'Brien"));
        assert_eq!(lit("name:'it''s, here'"), Literal::string("it's, here"));
    }

    #[test]
    fn rejects_or_constructs() {
        let m = model();
        for input in ["price<5|price>10", "category:Books or Toys", "price<5 |price>9"] {
            let err = parse_simplified_filter(input, &m, "Products").unwrap_err();
            assert!(matches!(err, QueryError::UnsupportedConstruct { .. }), "{input}: {err:?}");
        }
        let err = parse_simplified_filter("category:Books or Toys", &m, "Products").unwrap_err();
        assert_eq!(err.position(), Some(15));
        // quoted text is data, not syntax
        assert!(parse_simplified_filter("category:'Books or Toys'", &m, "Products").is_ok());
    }

    #[test]
    fn parse_errors() {
        let m = model();
        let cases = [
            ("price", 5),
            ("price<", 6),
            ("<5", 0),
            ("price<5,,rating>1", 8),
            ("prize<5", 0),
            ("price<5, colour:red", 9),
            ("name:'open", 5),
        ];
        for (input, pos) in cases {
            let err = parse_simplified_filter(input, &m, "Products").unwrap_err();
            assert!(matches!(err, QueryError::Parse(_)), "{input}: {err:?}");
            assert_eq!(err.position(), Some(pos), "{input}: {err}");
        }
    }

    #[test]
    fn sort_and_select() {
        let m = model();
        assert_eq!(parse_simplified_sort("-price", &m, "Products").unwrap(), vec![OrderKey::desc(f("Price"))]);
        assert_eq!(parse_simplified_sort("name", &m, "Products").unwrap(), vec![OrderKey::asc(f("Name"))]);
        assert_eq!(
            parse_simplified_sort("-rating,price", &m, "Products").unwrap(),
            vec![OrderKey::desc(f("Rating")), OrderKey::asc(f("Price"))]
        );
        assert_eq!(parse_simplified_sort("-nope", &m, "Products").unwrap_err().position(), Some(1));
        assert_eq!(
            parse_simplified_select("name,price", &m, "Products").unwrap(),
            vec![f("Name"), f("Price")]
        );
        assert_eq!(parse_simplified_select("name", &m, "Products").unwrap(), vec![f("Name")]);
        assert!(matches!(
            parse_simplified_select("name,name", &m, "Products"),
            Err(QueryError::DuplicateField(_))
        ));
    }

    #[test]
    fn merge_conjoins_filters() {
        let m = model();
        let simp = parse_simplified_params(&pairs(&[("filter", "price<20")]), &m, "Products").unwrap();
        let trad =
            parse_traditional_params(&pairs(&[("$filter", "Category eq 'Books'")]), &m, "Products").unwrap();
        let merged = merge(simp, trad, "Products");
        assert_eq!(
            merged.query.filter.unwrap().to_odata(),
            "Category eq 'Books' and Price lt 20"
        );
        assert!(merged.warnings.is_empty());
    }

    #[test]
    fn merge_traditional_wins_for_lists() {
        let m = model();
        let simp = parse_simplified_params(&pairs(&[("sort", "-price"), ("top", "5")]), &m, "Products").unwrap();
        let trad = parse_traditional_params(&pairs(&[("$orderby", "Name asc")]), &m, "Products").unwrap();
        let merged = merge(simp, trad, "Products");
        assert_eq!(merged.query.order_by, vec![OrderKey::asc(f("Name"))]);
        assert_eq!(merged.query.top, Some(5));
        assert_eq!(merged.warnings.len(), 1);
        assert!(merged.warnings[0].contains("sort"));
    }

    #[test]
    fn merge_with_empty_traditional_is_identity() {
        let m = model();
        let simp = parse_simplified_params(
            &pairs(&[("filter", "price>100, category:Books"), ("sort", "-price"), ("select", "name")]),
            &m,
            "Products",
        )
        .unwrap();
        let merged = merge(simp.clone(), QueryFragment::default(), "Products");
        assert_eq!(merged.query, simp.into_query("Products"));
    }

    #[test]
    fn merge_groups_traditional_or() {
        let m = model();
        let simp = parse_simplified_params(&pairs(&[("filter", "price<20")]), &m, "Products").unwrap();
        let trad = parse_traditional_params(
            &pairs(&[("$filter", "Category eq 'Books' or Category eq 'Toys'")]),
            &m,
            "Products",
        )
        .unwrap();
        let q = merge(simp, trad, "Products").query;
        assert_eq!(
            q.filter.unwrap().to_odata(),
            "(Category eq 'Books' or Category eq 'Toys') and Price lt 20"
        );
    }

    #[test]
    fn simplified_param_errors() {
        let m = model();
        assert!(matches!(
            parse_simplified_params(&pairs(&[("top", "-3")]), &m, "Products"),
            Err(QueryError::Range { .. })
        ));
        assert!(matches!(
            parse_simplified_params(&pairs(&[("sort", "name"), ("sort", "price")]), &m, "Products"),
            Err(QueryError::DuplicateOption(_))
        ));
    }
}
