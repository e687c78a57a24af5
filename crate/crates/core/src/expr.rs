//! Scalar expression parser and evaluator for user-supplied system fields.
//!
//! Grammar: real literals, named variables, `+ - * / ^`, unary minus, and
//! calls to sin, cos, tan, exp, log, sqrt, abs, pow. Precedence is
//! `^` above unary minus above `* /` above `+ -`; `^` associates right,
//! everything else left.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<(Func, usize)> {
        match name {
            "sin" => Some((Func::Sin, 1)),
            "cos" => Some((Func::Cos, 1)),
            "tan" => Some((Func::Tan, 1)),
            "exp" => Some((Func::Exp, 1)),
            "log" => Some((Func::Log, 1)),
            "sqrt" => Some((Func::Sqrt, 1)),
            "abs" => Some((Func::Abs, 1)),
            "pow" => Some((Func::Pow, 2)),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }
}

/// Abstract syntax tree of a scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Var(String),
    Neg(Box<Expression>),
    Bin(BinOp, Box<Expression>, Box<Expression>),
    Call(Func, Vec<Expression>),
}

impl Expression {
    pub fn parse(src: &str) -> Result<Expression> {
        Parser::new(src).parse_full()
    }

    /// Variable names referenced by the expression, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expression::Num(_) => {}
            Expression::Var(v) => out.push(v.clone()),
            Expression::Neg(e) => e.collect_vars(out),
            Expression::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expression::Call(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }

    /// Evaluate against a name -> value map.
    pub fn eval(&self, bindings: &BTreeMap<String, f64>) -> Result<f64> {
        match self {
            Expression::Num(x) => Ok(*x),
            Expression::Var(v) => bindings
                .get(v)
                .copied()
                .ok_or_else(|| Error::UnboundVariable(v.clone())),
            Expression::Neg(e) => Ok(-e.eval(bindings)?),
            Expression::Bin(op, l, r) => {
                apply_bin(*op, l.eval(bindings)?, r.eval(bindings)?)
            }
            Expression::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(a.eval(bindings)?);
                }
                apply_call(*f, &vals)
            }
        }
    }

    /// Resolve variables against an ordered name list, substituting fixed
    /// parameters as constants. Every remaining variable must appear in
    /// `vars`, otherwise the name is unbound.
    pub fn bind(&self, vars: &[&str], params: &BTreeMap<String, f64>) -> Result<BoundExpr> {
        let node = self.bind_node(vars, params)?;
        Ok(BoundExpr {
            node,
            nvars: vars.len(),
        })
    }

    fn bind_node(&self, vars: &[&str], params: &BTreeMap<String, f64>) -> Result<Node> {
        Ok(match self {
            Expression::Num(x) => Node::Num(*x),
            Expression::Var(v) => {
                if let Some(idx) = vars.iter().position(|n| n == v) {
                    Node::Var(idx)
                } else if let Some(val) = params.get(v) {
                    Node::Num(*val)
                } else {
                    return Err(Error::UnboundVariable(v.clone()));
                }
            }
            Expression::Neg(e) => Node::Neg(Box::new(e.bind_node(vars, params)?)),
            Expression::Bin(op, l, r) => Node::Bin(
                *op,
                Box::new(l.bind_node(vars, params)?),
                Box::new(r.bind_node(vars, params)?),
            ),
            Expression::Call(f, args) => {
                let mut nodes = Vec::with_capacity(args.len());
                for a in args {
                    nodes.push(a.bind_node(vars, params)?);
                }
                Node::Call(*f, nodes)
            }
        })
    }
}

impl fmt::Display for Expression {
    /// Fully parenthesized form; re-parsing reproduces the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Num(x) => {
                if *x < 0.0 || x.is_sign_negative() {
                    write!(f, "({x:?})")
                } else {
                    write!(f, "{x:?}")
                }
            }
            Expression::Var(v) => write!(f, "{v}"),
            Expression::Neg(e) => write!(f, "(-{e})"),
            Expression::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l}{sym}{r})")
            }
            Expression::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn apply_bin(op: BinOp, l: f64, r: f64) -> Result<f64> {
    let out = match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => {
            if r == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            l / r
        }
        BinOp::Pow => l.powf(r),
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Domain(format!("non-finite result of `{op:?}`")))
    }
}

fn apply_call(f: Func, args: &[f64]) -> Result<f64> {
    let out = match f {
        Func::Sin => args[0].sin(),
        Func::Cos => args[0].cos(),
        Func::Tan => args[0].tan(),
        Func::Exp => args[0].exp(),
        Func::Log => {
            if args[0] <= 0.0 {
                return Err(Error::Domain(format!("log of {}", args[0])));
            }
            args[0].ln()
        }
        Func::Sqrt => {
            if args[0] < 0.0 {
                return Err(Error::Domain(format!("sqrt of {}", args[0])));
            }
            args[0].sqrt()
        }
        Func::Abs => args[0].abs(),
        Func::Pow => args[0].powf(args[1]),
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::Domain(format!("non-finite result of {}", f.name())))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// An expression with variables resolved to slice indices; evaluation is
/// reentrant and deterministic (same bindings give bit-identical results).
#[derive(Debug, Clone)]
pub struct BoundExpr {
    node: Node,
    nvars: usize,
}

impl BoundExpr {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        if vars.len() != self.nvars {
            return Err(Error::Dimension {
                expected: self.nvars,
                got: vars.len(),
            });
        }
        eval_node(&self.node, vars)
    }
}

fn eval_node(node: &Node, vars: &[f64]) -> Result<f64> {
    match node {
        Node::Num(x) => Ok(*x),
        Node::Var(i) => Ok(vars[*i]),
        Node::Neg(e) => Ok(-eval_node(e, vars)?),
        Node::Bin(op, l, r) => apply_bin(*op, eval_node(l, vars)?, eval_node(r, vars)?),
        Node::Call(f, args) => {
            let mut vals = [0.0f64; 2];
            for (i, a) in args.iter().enumerate() {
                vals[i] = eval_node(a, vars)?;
            }
            apply_call(*f, &vals[..args.len()])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(src: &str) -> Parser {
        let mut toks = Vec::new();
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            match b {
                b' ' | b'\t' | b'\n' | b'\r' => i += 1,
                b'+' => {
                    toks.push((Tok::Plus, i));
                    i += 1;
                }
                b'-' => {
                    toks.push((Tok::Minus, i));
                    i += 1;
                }
                b'*' => {
                    toks.push((Tok::Star, i));
                    i += 1;
                }
                b'/' => {
                    toks.push((Tok::Slash, i));
                    i += 1;
                }
                b'^' => {
                    toks.push((Tok::Caret, i));
                    i += 1;
                }
                b'(' => {
                    toks.push((Tok::LParen, i));
                    i += 1;
                }
                b')' => {
                    toks.push((Tok::RParen, i));
                    i += 1;
                }
                b',' => {
                    toks.push((Tok::Comma, i));
                    i += 1;
                }
                b'0'..=b'9' | b'.' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_digit() || bytes[i] == b'.')
                    {
                        i += 1;
                    }
                    // exponent part: 1e-3, 2.5E+4
                    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && bytes[j].is_ascii_digit() {
                            i = j;
                            while i < bytes.len() && bytes[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    toks.push((Tok::Num(f64::NAN), start));
                    let text = &src[start..i];
                    match text.parse::<f64>() {
                        Ok(v) => {
                            let last = toks.len() - 1;
                            toks[last] = (Tok::Num(v), start);
                        }
                        Err(_) => {
                            // leave NaN; caught below via marker
                            let last = toks.len() - 1;
                            toks[last] = (Tok::Ident(format!("\u{0}bad-number {text}")), start);
                        }
                    }
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    toks.push((Tok::Ident(src[start..i].to_string()), start));
                }
                _ => {
                    toks.push((Tok::Ident(format!("\u{0}bad-char {}", b as char)), i));
                    i += 1;
                }
            }
        }
        Parser {
            toks,
            pos: 0,
            end: src.len(),
        }
    }

    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn next_offset(&self) -> usize {
        self.peek().map(|(_, o)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_full(&mut self) -> Result<Expression> {
        let e = self.parse_expr(0)?;
        match self.peek() {
            None => Ok(e),
            Some((_, offset)) => Err(Error::Parse {
                offset: *offset,
                message: "unexpected trailing input".into(),
            }),
        }
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Expression> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let (op, lbp, rbp) = match self.peek() {
                Some((Tok::Plus, _)) => (BinOp::Add, 1, 2),
                Some((Tok::Minus, _)) => (BinOp::Sub, 1, 2),
                Some((Tok::Star, _)) => (BinOp::Mul, 3, 4),
                Some((Tok::Slash, _)) => (BinOp::Div, 3, 4),
                Some((Tok::Caret, _)) => (BinOp::Pow, 10, 9),
                _ => break,
            };
            if lbp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.parse_expr(rbp)?;
            lhs = Expression::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Expression> {
        let offset = self.next_offset();
        match self.bump() {
            Some((Tok::Num(v), off)) => {
                if v.is_nan() {
                    Err(Error::Parse {
                        offset: off,
                        message: "malformed number".into(),
                    })
                } else {
                    Ok(Expression::Num(v))
                }
            }
            Some((Tok::Minus, _)) => {
                // unary minus binds looser than ^, tighter than * /
                let inner = self.parse_expr(6)?;
                Ok(Expression::Neg(Box::new(inner)))
            }
            Some((Tok::LParen, open)) => {
                let e = self.parse_expr(0)?;
                match self.bump() {
                    Some((Tok::RParen, _)) => Ok(e),
                    Some((_, off)) => Err(Error::Parse {
                        offset: off,
                        message: "expected `)`".into(),
                    }),
                    None => Err(Error::Parse {
                        offset: self.end,
                        message: format!("unclosed `(` opened at byte {open}"),
                    }),
                }
            }
            Some((Tok::Ident(name), off)) => {
                if let Some(stripped) = name.strip_prefix('\u{0}') {
                    return Err(Error::Parse {
                        offset: off,
                        message: stripped.to_string(),
                    });
                }
                if matches!(self.peek(), Some((Tok::LParen, _))) {
                    let (func, arity) = Func::from_name(&name).ok_or(Error::UnknownFunction {
                        name: name.clone(),
                        offset: off,
                    })?;
                    self.bump(); // consume '('
                    let mut args = vec![self.parse_expr(0)?];
                    loop {
                        match self.bump() {
                            Some((Tok::Comma, _)) => args.push(self.parse_expr(0)?),
                            Some((Tok::RParen, _)) => break,
                            Some((_, o)) => {
                                return Err(Error::Parse {
                                    offset: o,
                                    message: "expected `,` or `)`".into(),
                                })
                            }
                            None => {
                                return Err(Error::Parse {
                                    offset: self.end,
                                    message: "unclosed call".into(),
                                })
                            }
                        }
                    }
                    if args.len() != arity {
                        return Err(Error::Parse {
                            offset: off,
                            message: format!(
                                "{} takes {} argument(s), got {}",
                                func.name(),
                                arity,
                                args.len()
                            ),
                        });
                    }
                    Ok(Expression::Call(func, args))
                } else {
                    Ok(Expression::Var(name))
                }
            }
            Some((tok, off)) => Err(Error::Parse {
                offset: off,
                message: format!("unexpected token {tok:?}"),
            }),
            None => Err(Error::Parse {
                offset,
                message: "unexpected end of input".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval_str(src: &str, bindings: &[(&str, f64)]) -> Result<f64> {
        let map: BTreeMap<String, f64> = bindings
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        Expression::parse(src)?.eval(&map)
    }

    #[test]
    fn arithmetic_with_parens() {
        assert_eq!(eval_str("2*(3+4)", &[]).unwrap(), 14.0);
    }

    #[test]
    fn amended_potential_expression() {
        let v = eval_str(
            "-k/x1 + mu^2/(2*x1^2)",
            &[("k", 1.0), ("mu", 1.0), ("x1", 1.0)],
        )
        .unwrap();
        assert_eq!(v, -0.5);
    }

    #[test]
    fn syntax_error_carries_offset() {
        match Expression::parse("(x1+") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_str("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval_str("-2^2", &[]).unwrap(), -4.0);
        assert_eq!(eval_str("2-3-4", &[]).unwrap(), -5.0);
        assert_eq!(eval_str("6/3/2", &[]).unwrap(), 1.0);
        assert_eq!(eval_str("2+3*4", &[]).unwrap(), 14.0);
        assert_eq!(eval_str("2*3^2", &[]).unwrap(), 18.0);
        assert_eq!(eval_str("2^-1", &[]).unwrap(), 0.5);
    }

    #[test]
    fn unknown_function_is_rejected() {
        assert!(matches!(
            Expression::parse("sinh(1)"),
            Err(Error::UnknownFunction { .. })
        ));
    }

    #[test]
    fn builtin_calls() {
        assert_eq!(eval_str("pow(2,10)", &[]).unwrap(), 1024.0);
        assert!((eval_str("sin(0)", &[]).unwrap()).abs() < 1e-15);
        assert!((eval_str("sqrt(2)^2", &[]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(eval_str("abs(-3)", &[]).unwrap(), 3.0);
    }

    #[test]
    fn domain_errors_poison_evaluation() {
        assert!(eval_str("log(-1)", &[]).unwrap_err().is_domain());
        assert!(eval_str("sqrt(-1)", &[]).unwrap_err().is_domain());
        assert!(eval_str("1/0", &[]).unwrap_err().is_domain());
        assert!(eval_str("1 + log(0)", &[]).unwrap_err().is_domain());
    }

    #[test]
    fn unbound_variable_at_eval() {
        assert!(matches!(
            eval_str("x1 + y", &[("x1", 1.0)]),
            Err(Error::UnboundVariable(_))
        ));
    }

    #[test]
    fn bind_substitutes_parameters() {
        let e = Expression::parse("k*x1^2 + c").unwrap();
        let params: BTreeMap<String, f64> =
            [("k".to_string(), 2.0), ("c".to_string(), 1.0)].into();
        let b = e.bind(&["x1"], &params).unwrap();
        assert_eq!(b.eval(&[3.0]).unwrap(), 19.0);
        assert!(matches!(
            e.bind(&["x2"], &params),
            Err(Error::UnboundVariable(_))
        ));
    }

    fn arb_expr() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![
            (-10.0f64..10.0).prop_map(Expression::Num),
            prop_oneof![Just("x"), Just("y"), Just("z")]
                .prop_map(|s| Expression::Var(s.to_string())),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Expression::Bin(
                    BinOp::Add,
                    Box::new(l),
                    Box::new(r)
                )),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Expression::Bin(
                    BinOp::Sub,
                    Box::new(l),
                    Box::new(r)
                )),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Expression::Bin(
                    BinOp::Mul,
                    Box::new(l),
                    Box::new(r)
                )),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Expression::Bin(
                    BinOp::Div,
                    Box::new(l),
                    Box::new(r)
                )),
                inner.clone().prop_map(|e| Expression::Neg(Box::new(e))),
                inner.clone().prop_map(|e| Expression::Call(Func::Sin, vec![e])),
                inner.clone().prop_map(|e| Expression::Call(Func::Abs, vec![e])),
            ]
        })
    }

    proptest! {
        // Pretty-print then re-parse; evaluation must be bit-identical.
        #[test]
        fn roundtrip_eval_is_bit_identical(
            e in arb_expr(),
            x in -5.0f64..5.0,
            y in -5.0f64..5.0,
            z in -5.0f64..5.0,
        ) {
            let printed = e.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            let map: BTreeMap<String, f64> = [
                ("x".to_string(), x),
                ("y".to_string(), y),
                ("z".to_string(), z),
            ].into();
            match (e.eval(&map), reparsed.eval(&map)) {
                (Ok(a), Ok(b)) => prop_assert!(a.to_bits() == b.to_bits()),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "mismatch: {a:?} vs {b:?}"),
            }
        }
    }
}
