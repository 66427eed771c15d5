//! The predicate language of quality checks: comparisons between input
//! values and literals, presence tests, and boolean connectives.
//!
//! ```text
//! expr    := and ("||" and)*
//! and     := unary ("&&" unary)*
//! unary   := "!" unary | compare
//! compare := operand (("==" | "!=" | "<" | "<=" | ">" | ">=") operand)?
//! operand := "(" expr ")" | "exists" "(" path ")" | literal | path
//! path    := name ("." name)*
//! ```

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Path(Vec<String>),
    Exists(Vec<String>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Name(String),
    Str(String),
    Num(f64),
    Op(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, String> {
    const OPS: [&str; 12] = [
        "==", "!=", "<=", ">=", "&&", "||", "<", ">", "!", "(", ")", ".",
    ];
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c == '"' || c == '\'' {
            let end = text[i + 1..]
                .find(c)
                .ok_or_else(|| format!("unterminated string at {i}"))?;
            tokens.push((i, Token::Str(text[i + 1..i + 1 + end].to_string())));
            i += end + 2;
        } else if c.is_ascii_digit()
            || (c == '-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            let start = i;
            i += 1;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let n = text[start..i]
                .parse()
                .map_err(|_| format!("bad number `{}` at {start}", &text[start..i]))?;
            tokens.push((start, Token::Num(n)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'-')
            {
                i += 1;
            }
            tokens.push((start, Token::Name(text[start..i].to_string())));
        } else if let Some(op) = OPS.iter().find(|op| text[i..].starts_with(**op)) {
            tokens.push((i, Token::Op(op)));
            i += op.len();
        } else {
            return Err(format!("unexpected `{c}` at {i}"));
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn eat(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Token::Op(o)) if *o == op) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: &str) -> Result<(), String> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(format!("expected `{op}` at {}", self.position()))
        }
    }

    fn or(&mut self) -> Result<Expr, String> {
        let mut left = self.and()?;
        while self.eat("||") {
            left = Expr::Or(Box::new(left), Box::new(self.and()?));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<Expr, String> {
        let mut left = self.unary()?;
        while self.eat("&&") {
            left = Expr::And(Box::new(left), Box::new(self.unary()?));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat("!") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.compare()
    }

    fn compare(&mut self) -> Result<Expr, String> {
        let left = self.operand()?;
        let op = match self.peek() {
            Some(Token::Op("==")) => CmpOp::Eq,
            Some(Token::Op("!=")) => CmpOp::Ne,
            Some(Token::Op("<")) => CmpOp::Lt,
            Some(Token::Op("<=")) => CmpOp::Le,
            Some(Token::Op(">")) => CmpOp::Gt,
            Some(Token::Op(">=")) => CmpOp::Ge,
            _ => return Ok(left),
        };
        self.at += 1;
        let right = self.operand()?;
        Ok(Expr::Compare(op, Box::new(left), Box::new(right)))
    }

    fn path(&mut self, first: String) -> Result<Vec<String>, String> {
        let mut path = vec![first];
        while self.eat(".") {
            match self.peek().cloned() {
                Some(Token::Name(n)) => {
                    self.at += 1;
                    path.push(n);
                }
                _ => return Err(format!("expected a name at {}", self.position())),
            }
        }
        Ok(path)
    }

    fn operand(&mut self) -> Result<Expr, String> {
        let position = self.position();
        let token = self
            .peek()
            .cloned()
            .ok_or_else(|| format!("unexpected end at {position}"))?;
        self.at += 1;
        match token {
            Token::Op("(") => {
                let inner = self.or()?;
                self.expect(")")?;
                Ok(inner)
            }
            Token::Str(s) => Ok(Expr::Literal(Value::String(s))),
            Token::Num(n) => Ok(Expr::Literal(
                serde_json::Number::from_f64(n).map_or(Value::Null, Value::Number),
            )),
            Token::Name(n) if n == "true" => Ok(Expr::Literal(Value::Bool(true))),
            Token::Name(n) if n == "false" => Ok(Expr::Literal(Value::Bool(false))),
            Token::Name(n) if n == "null" => Ok(Expr::Literal(Value::Null)),
            Token::Name(n) if n == "exists" => {
                self.expect("(")?;
                let first = match self.peek().cloned() {
                    Some(Token::Name(n)) => n,
                    _ => return Err(format!("expected a name at {}", self.position())),
                };
                self.at += 1;
                let path = self.path(first)?;
                self.expect(")")?;
                Ok(Expr::Exists(path))
            }
            Token::Name(n) => Ok(Expr::Path(self.path(n)?)),
            other => Err(format!("unexpected {other:?} at {position}")),
        }
    }
}

fn lookup<'a>(inputs: &'a Map<String, Value>, path: &[String]) -> Option<&'a Value> {
    let mut value = inputs.get(&path[0])?;
    for key in &path[1..] {
        value = value.get(key)?;
    }
    Some(value)
}

fn order(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(_), Value::Number(_)) => order(a, b) == Some(Ordering::Equal),
        _ => a == b,
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, String> {
        let mut parser = Parser {
            tokens: tokenize(text)?,
            at: 0,
            end: text.len(),
        };
        let expr = parser.or()?;
        if parser.at != parser.tokens.len() {
            return Err(format!("unexpected input at {}", parser.position()));
        }
        Ok(expr)
    }

    /// Input names the expression reads.
    pub fn roots(&self) -> BTreeSet<String> {
        let mut roots = BTreeSet::new();
        self.collect_roots(&mut roots);
        roots
    }

    fn collect_roots(&self, roots: &mut BTreeSet<String>) {
        match self {
            Expr::Literal(_) => {}
            Expr::Path(p) | Expr::Exists(p) => {
                roots.insert(p[0].clone());
            }
            Expr::Not(e) => e.collect_roots(roots),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Compare(_, a, b) => {
                a.collect_roots(roots);
                b.collect_roots(roots);
            }
        }
    }

    fn value(&self, inputs: &Map<String, Value>) -> Result<Value, String> {
        Ok(match self {
            Expr::Literal(v) => v.clone(),
            Expr::Path(p) => lookup(inputs, p).cloned().unwrap_or(Value::Null),
            _ => Value::Bool(self.eval(inputs)?),
        })
    }

    pub fn eval(&self, inputs: &Map<String, Value>) -> Result<bool, String> {
        match self {
            Expr::Literal(Value::Bool(b)) => Ok(*b),
            Expr::Literal(v) => Err(format!("{v} is not true or false")),
            Expr::Path(p) => match lookup(inputs, p) {
                Some(Value::Bool(b)) => Ok(*b),
                other => Err(format!(
                    "`{}` is {}, not true or false",
                    p.join("."),
                    other.map_or("missing".to_string(), |v| v.to_string())
                )),
            },
            Expr::Exists(p) => Ok(lookup(inputs, p).is_some_and(|v| !v.is_null())),
            Expr::Not(e) => Ok(!e.eval(inputs)?),
            Expr::And(a, b) => Ok(a.eval(inputs)? && b.eval(inputs)?),
            Expr::Or(a, b) => Ok(a.eval(inputs)? || b.eval(inputs)?),
            Expr::Compare(op, a, b) => {
                let (a, b) = (a.value(inputs)?, b.value(inputs)?);
                Ok(match op {
                    CmpOp::Eq => equal(&a, &b),
                    CmpOp::Ne => !equal(&a, &b),
                    CmpOp::Lt => order(&a, &b) == Some(Ordering::Less),
                    CmpOp::Le => matches!(order(&a, &b), Some(Ordering::Less | Ordering::Equal)),
                    CmpOp::Gt => order(&a, &b) == Some(Ordering::Greater),
                    CmpOp::Ge => matches!(order(&a, &b), Some(Ordering::Greater | Ordering::Equal)),
                })
            }
        }
    }
}
