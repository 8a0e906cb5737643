//! Mu-recursive program representation: s-expression parser, arity checker
//! and a fueled big-step interpreter used as the reference semantics.
//!
//! Grammar:
//! ```text
//! expr := "(" "const" nat nat ")" | "(" "succ" ")" | "(" "proj" nat nat ")"
//!       | "(" "compose" expr "(" expr+ ")" ")" | "(" "prec" expr expr ")"
//!       | "(" "mu" expr ")"
//! ```
//! `;` starts a comment that runs to the end of the line.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RecExpr {
    /// `C_k` taking `arity` ignored arguments.
    Const { k: u64, arity: usize },
    Succ,
    /// 1-based selection of argument `i` out of `n`.
    Proj { i: usize, n: usize },
    Compose { h: Box<RecExpr>, gs: Vec<RecExpr> },
    /// `f(0, x) = g(x)`, `f(i+1, x) = h(i, f(i, x), x)`.
    PrimRec { g: Box<RecExpr>, h: Box<RecExpr> },
    /// Least `z >= 1` with `f(z, x) = 0`.
    Mu { f: Box<RecExpr> },
}

impl RecExpr {
    pub fn constant(k: u64, arity: usize) -> RecExpr {
        RecExpr::Const { k, arity }
    }

    pub fn proj(i: usize, n: usize) -> RecExpr {
        RecExpr::Proj { i, n }
    }

    pub fn compose(h: RecExpr, gs: Vec<RecExpr>) -> RecExpr {
        RecExpr::Compose { h: Box::new(h), gs }
    }

    pub fn primrec(g: RecExpr, h: RecExpr) -> RecExpr {
        RecExpr::PrimRec {
            g: Box::new(g),
            h: Box::new(h),
        }
    }

    pub fn mu(f: RecExpr) -> RecExpr {
        RecExpr::Mu { f: Box::new(f) }
    }

    pub fn depth(&self) -> usize {
        match self {
            RecExpr::Const { .. } | RecExpr::Succ | RecExpr::Proj { .. } => 1,
            RecExpr::Compose { h, gs } => 1 + gs.iter().map(RecExpr::depth).chain([h.depth()]).max().unwrap_or(0),
            RecExpr::PrimRec { g, h } => 1 + g.depth().max(h.depth()),
            RecExpr::Mu { f } => 1 + f.depth(),
        }
    }

    pub fn contains_loops(&self) -> bool {
        match self {
            RecExpr::PrimRec { .. } | RecExpr::Mu { .. } => true,
            RecExpr::Compose { h, gs } => h.contains_loops() || gs.iter().any(RecExpr::contains_loops),
            _ => false,
        }
    }
}

impl fmt::Display for RecExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecExpr::Const { k, arity } => write!(f, "(const {k} {arity})"),
            RecExpr::Succ => f.write_str("(succ)"),
            RecExpr::Proj { i, n } => write!(f, "(proj {i} {n})"),
            RecExpr::Compose { h, gs } => {
                write!(f, "(compose {h} (")?;
                for (idx, g) in gs.iter().enumerate() {
                    if idx > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{g}")?;
                }
                f.write_str("))")
            }
            RecExpr::PrimRec { g, h } => write!(f, "(prec {g} {h})"),
            RecExpr::Mu { f: inner } => write!(f, "(mu {inner})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at line {line}, column {column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("arity error in {expr}: {reason}")]
pub struct ArityError {
    pub expr: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Open,
    Close,
    Word(String),
    Nat(u64),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn describe(t: Option<&Spanned>) -> String {
    match t.map(|s| &s.tok) {
        None => "end of input".into(),
        Some(Tok::Open) => "'('".into(),
        Some(Tok::Close) => "')'".into(),
        Some(Tok::Word(w)) => format!("'{w}'"),
        Some(Tok::Nat(n)) => format!("'{n}'"),
    }
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let at = |tok| Spanned {
                tok,
                line: lineno + 1,
                column,
            };
            if c.is_whitespace() {
                i += 1;
            } else if c == '(' {
                out.push(at(Tok::Open));
                i += 1;
            } else if c == ')' {
                out.push(at(Tok::Close));
                i += 1;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != ')' {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if word.chars().all(|c| c.is_ascii_digit()) {
                    let n = word.parse().map_err(|_| ParseError {
                        line: lineno + 1,
                        column,
                        expected: "a natural number that fits in 64 bits".into(),
                        found: format!("'{word}'"),
                    })?;
                    out.push(at(Tok::Nat(n)));
                } else {
                    out.push(at(Tok::Word(word)));
                }
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn err(&self, expected: &str) -> ParseError {
        let (line, column) = self.toks.get(self.pos).map_or(self.end, |t| (t.line, t.column));
        ParseError {
            line,
            column,
            expected: expected.into(),
            found: describe(self.toks.get(self.pos)),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn nat(&mut self) -> Result<u64, ParseError> {
        match self.peek() {
            Some(Tok::Nat(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("a natural number")),
        }
    }

    fn index(&mut self) -> Result<usize, ParseError> {
        let n = self.nat()?;
        usize::try_from(n).map_err(|_| {
            self.pos -= 1;
            self.err("a machine-sized natural number")
        })
    }

    fn expr(&mut self) -> Result<RecExpr, ParseError> {
        self.expect(Tok::Open, "'('")?;
        let head = match self.peek() {
            Some(Tok::Word(w)) => w.clone(),
            _ => return Err(self.err("one of const, succ, proj, compose, prec, mu")),
        };
        self.pos += 1;
        let e = match head.as_str() {
            "const" => {
                let k = self.nat()?;
                let arity = self.index()?;
                RecExpr::Const { k, arity }
            }
            "succ" => RecExpr::Succ,
            "proj" => {
                let i = self.index()?;
                let n = self.index()?;
                RecExpr::Proj { i, n }
            }
            "compose" => {
                let h = self.expr()?;
                self.expect(Tok::Open, "'(' opening the operand list")?;
                let mut gs = vec![self.expr()?];
                while self.peek() == Some(&Tok::Open) {
                    gs.push(self.expr()?);
                }
                self.expect(Tok::Close, "')' closing the operand list")?;
                RecExpr::compose(h, gs)
            }
            "prec" => {
                let g = self.expr()?;
                let h = self.expr()?;
                RecExpr::primrec(g, h)
            }
            "mu" => RecExpr::mu(self.expr()?),
            _ => {
                self.pos -= 1;
                return Err(self.err("one of const, succ, proj, compose, prec, mu"));
            }
        };
        self.expect(Tok::Close, "')'")?;
        Ok(e)
    }
}

pub fn parse_program(text: &str) -> Result<RecExpr, ParseError> {
    let toks = lex(text)?;
    let lines = text.lines().count().max(1);
    let last_len = text.lines().last().map_or(0, |l| l.chars().count());
    let mut p = Parser {
        toks,
        pos: 0,
        end: (lines, last_len + 1),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("end of input"));
    }
    Ok(e)
}

/// Number of arguments `expr` takes, or the first ill-formed subexpression.
pub fn arity_check(expr: &RecExpr) -> Result<usize, ArityError> {
    let fail = |reason: String| ArityError {
        expr: expr.to_string(),
        reason,
    };
    match expr {
        RecExpr::Const { arity, .. } => Ok(*arity),
        RecExpr::Succ => Ok(1),
        RecExpr::Proj { i, n } => {
            if *i >= 1 && i <= n {
                Ok(*n)
            } else {
                Err(fail(format!("projection index {i} outside 1..={n}")))
            }
        }
        RecExpr::Compose { h, gs } => {
            let ha = arity_check(h)?;
            if gs.is_empty() {
                return Err(fail("composition needs at least one operand".into()));
            }
            if ha != gs.len() {
                return Err(fail(format!("outer function takes {ha} arguments but {} operands given", gs.len())));
            }
            let arities = gs.iter().map(arity_check).collect::<Result<Vec<_>, _>>()?;
            if arities.iter().any(|&a| a != arities[0]) {
                return Err(fail(format!("operands disagree on arity: {arities:?}")));
            }
            Ok(arities[0])
        }
        RecExpr::PrimRec { g, h } => {
            let ga = arity_check(g)?;
            let ha = arity_check(h)?;
            if ha != ga + 2 {
                return Err(fail(format!("step function takes {ha} arguments, expected {}", ga + 2)));
            }
            Ok(ga + 1)
        }
        RecExpr::Mu { f } => {
            let fa = arity_check(f)?;
            if fa == 0 {
                return Err(fail("searched function must take at least one argument".into()));
            }
            Ok(fa - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalResult {
    Value(u64),
    FuelExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Arity(#[from] ArityError),
    #[error("expected {expected} arguments, got {got}")]
    ArgumentCount { expected: usize, got: usize },
    #[error("fuel must be positive")]
    NoFuel,
    #[error("value overflowed 64 bits")]
    Overflow,
}

enum Stop {
    Fuel,
    Overflow,
}

struct Interp {
    fuel: u64,
}

impl Interp {
    fn tick(&mut self) -> Result<(), Stop> {
        if self.fuel == 0 {
            return Err(Stop::Fuel);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn eval(&mut self, e: &RecExpr, args: &[u64]) -> Result<u64, Stop> {
        self.tick()?;
        match e {
            RecExpr::Const { k, .. } => Ok(*k),
            RecExpr::Succ => args[0].checked_add(1).ok_or(Stop::Overflow),
            RecExpr::Proj { i, .. } => Ok(args[i - 1]),
            RecExpr::Compose { h, gs } => {
                let inner = gs.iter().map(|g| self.eval(g, args)).collect::<Result<Vec<_>, _>>()?;
                self.eval(h, &inner)
            }
            RecExpr::PrimRec { g, h } => {
                let (count, rest) = args.split_first().expect("arity checked");
                let mut acc = self.eval(g, rest)?;
                let mut step_args = Vec::with_capacity(args.len() + 1);
                for j in 0..*count {
                    self.tick()?;
                    step_args.clear();
                    step_args.push(j);
                    step_args.push(acc);
                    step_args.extend_from_slice(rest);
                    acc = self.eval(h, &step_args)?;
                }
                Ok(acc)
            }
            RecExpr::Mu { f } => {
                let mut probe = Vec::with_capacity(args.len() + 1);
                probe.push(0);
                probe.extend_from_slice(args);
                let mut z: u64 = 1;
                loop {
                    self.tick()?;
                    probe[0] = z;
                    if self.eval(f, &probe)? == 0 {
                        return Ok(z);
                    }
                    z = z.checked_add(1).ok_or(Stop::Overflow)?;
                }
            }
        }
    }
}

/// Reference evaluation. Every operator application and every
/// recursion/search step costs one unit of fuel.
pub fn eval_oracle(expr: &RecExpr, args: &[u64], fuel: u64) -> Result<EvalResult, EvalError> {
    let arity = arity_check(expr)?;
    if args.len() != arity {
        return Err(EvalError::ArgumentCount {
            expected: arity,
            got: args.len(),
        });
    }
    if fuel == 0 {
        return Err(EvalError::NoFuel);
    }
    match (Interp { fuel }).eval(expr, args) {
        Ok(v) => Ok(EvalResult::Value(v)),
        Err(Stop::Fuel) => Ok(EvalResult::FuelExhausted),
        Err(Stop::Overflow) => Err(EvalError::Overflow),
    }
}

/// Small library of standard programs.
pub mod programs {
    use super::RecExpr;

    /// `add(i, x) = i + x`.
    pub fn add() -> RecExpr {
        RecExpr::primrec(RecExpr::proj(1, 1), RecExpr::compose(RecExpr::Succ, vec![RecExpr::proj(2, 3)]))
    }

    /// `mul(i, x) = i * x`.
    pub fn mul() -> RecExpr {
        RecExpr::primrec(
            RecExpr::constant(0, 1),
            RecExpr::compose(add(), vec![RecExpr::proj(2, 3), RecExpr::proj(3, 3)]),
        )
    }

    /// `pred(i, d) = i - 1` (0 for 0); `d` is a dummy argument.
    pub fn pred() -> RecExpr {
        RecExpr::primrec(RecExpr::constant(0, 1), RecExpr::proj(1, 3))
    }

    /// `monus(z, x) = x - z`, truncated at 0.
    pub fn monus() -> RecExpr {
        // r(z, x) = x - z by recursion on z, with pred as the step.
        let pred1 = RecExpr::compose(pred(), vec![RecExpr::proj(1, 1), RecExpr::proj(1, 1)]);
        RecExpr::primrec(RecExpr::proj(1, 1), RecExpr::compose(pred1, vec![RecExpr::proj(2, 3)]))
    }

    /// Least `z >= 1` with `x - z = 0`, i.e. `max(x, 1)`.
    pub fn mu_monus() -> RecExpr {
        RecExpr::mu(monus())
    }

    /// A search that never succeeds: `f(z, x) = x + 1 > 0`.
    pub fn mu_never() -> RecExpr {
        RecExpr::mu(RecExpr::compose(RecExpr::Succ, vec![RecExpr::proj(1, 2)]))
    }
}

#[cfg(test)]
mod tests {
    use super::programs::*;
    use super::*;
    use proptest::prelude::*;

    fn val(e: &RecExpr, args: &[u64]) -> u64 {
        match eval_oracle(e, args, 1_000_000).unwrap() {
            EvalResult::Value(v) => v,
            EvalResult::FuelExhausted => panic!("fuel exhausted for {e}"),
        }
    }

    #[test]
    fn parses_grammar() {
        assert_eq!(parse_program("(succ)").unwrap(), RecExpr::Succ);
        assert_eq!(
            parse_program("(prec (proj 1 1) (compose (succ) ((proj 2 3))))").unwrap(),
            add()
        );
        let commented = "; addition\n(prec (proj 1 1) ; base\n  (compose (succ) ((proj 2 3))))\n";
        assert_eq!(parse_program(commented).unwrap(), add());
        for e in [add(), mul(), pred(), monus(), mu_monus(), RecExpr::constant(4, 0)] {
            assert_eq!(parse_program(&e.to_string()).unwrap(), e);
        }
    }

    #[test]
    fn parse_errors_have_positions() {
        let e = parse_program("(succ").unwrap_err();
        assert_eq!((e.line, e.found.as_str()), (1, "end of input"));
        let e = parse_program("(\n  (frob))").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        let e = parse_program("(proj 1 x)").unwrap_err();
        assert_eq!(e.column, 9);
        assert!(parse_program("(succ) (succ)").is_err());
        assert!(parse_program("(compose (succ) ())").is_err());
    }

    #[test]
    fn arity_rules() {
        assert_eq!(arity_check(&RecExpr::compose(RecExpr::Succ, vec![RecExpr::proj(1, 2)])), Ok(2));
        assert_eq!(arity_check(&RecExpr::primrec(RecExpr::proj(1, 1), RecExpr::proj(2, 3))), Ok(2));
        assert!(arity_check(&RecExpr::compose(RecExpr::Succ, vec![RecExpr::proj(1, 2), RecExpr::proj(2, 2)])).is_err());
        assert!(arity_check(&parse_program("(proj 0 2)").unwrap()).is_err());
        assert!(arity_check(&parse_program("(proj 3 2)").unwrap()).is_err());
        assert!(arity_check(&RecExpr::mu(RecExpr::constant(1, 0))).is_err());
        assert_eq!(arity_check(&mu_monus()), Ok(1));
        assert_eq!(arity_check(&mul()), Ok(2));
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(val(&add(), &[2, 3]), 5);
        assert_eq!(val(&RecExpr::proj(2, 3), &[7, 9, 4]), 9);
        assert_eq!(eval_oracle(&mu_never(), &[5], 1000), Ok(EvalResult::FuelExhausted));
        assert_eq!(val(&pred(), &[6, 0]), 5);
        assert_eq!(val(&pred(), &[0, 9]), 0);
        assert_eq!(val(&mu_monus(), &[4]), 4);
        assert_eq!(val(&mu_monus(), &[0]), 1);
        assert_eq!(
            eval_oracle(&add(), &[1], 10),
            Err(EvalError::ArgumentCount { expected: 2, got: 1 })
        );
    }

    // Independent unrolling of the recursion equations.
    fn unrolled_add(i: u64, x: u64) -> u64 {
        let mut f = x;
        for _ in 0..i {
            f += 1;
        }
        f
    }

    #[test]
    fn arithmetic_laws() {
        for x in 0..=20 {
            for y in 0..=20 {
                assert_eq!(val(&add(), &[x, y]), unrolled_add(x, y));
                assert_eq!(val(&mul(), &[x, y]), x * y);
                assert_eq!(val(&monus(), &[x, y]), y.saturating_sub(x));
            }
        }
    }

    #[test]
    fn mu_minimality() {
        let f = monus();
        for x in 0..=15 {
            let z = val(&mu_monus(), &[x]);
            assert_eq!(val(&f, &[z, x]), 0);
            for i in 1..z {
                assert!(val(&f, &[i, x]) > 0);
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_fuel(x in 0u64..12, y in 0u64..12, fuel in 1u64..400, extra in 1u64..400) {
            for e in [add(), mul(), mu_monus()] {
                let args: Vec<u64> = if arity_check(&e).unwrap() == 2 { vec![x, y] } else { vec![x] };
                if let Ok(EvalResult::Value(v)) = eval_oracle(&e, &args, fuel) {
                    prop_assert_eq!(eval_oracle(&e, &args, fuel + extra), Ok(EvalResult::Value(v)));
                }
            }
        }

        #[test]
        fn oracle_terminates_on_any_fuel(x in 0u64..1000, fuel in 1u64..5000) {
            let r = eval_oracle(&mu_never(), &[x], fuel);
            prop_assert_eq!(r, Ok(EvalResult::FuelExhausted));
        }
    }
}
