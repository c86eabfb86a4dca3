use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Expr, FormulaError, Threshold};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Amp,
    Bar,
    Bang,
    Ge,
    Gt,
    Eq,
    Question,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(x) => format!("number {x}"),
            Tok::End => "end of input".to_string(),
            other => format!(
                "`{}`",
                match other {
                    Tok::LBracket => "[",
                    Tok::RBracket => "]",
                    Tok::LParen => "(",
                    Tok::RParen => ")",
                    Tok::Amp => "&",
                    Tok::Bar => "|",
                    Tok::Bang => "!",
                    Tok::Ge => ">=",
                    Tok::Gt => ">",
                    Tok::Eq => "=",
                    _ => "?",
                }
            ),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: String) -> FormulaError {
    FormulaError::Syntax { line, col, message }
}

fn lex(text: &str) -> Result<Vec<Spanned>, FormulaError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let x = s
                .parse::<f64>()
                .map_err(|_| syntax(l0, c0, format!("malformed number `{s}`")))?;
            Tok::Number(x)
        } else {
            i += 1;
            match c {
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '&' => Tok::Amp,
                '|' => Tok::Bar,
                '!' => Tok::Bang,
                '=' => Tok::Eq,
                '?' => Tok::Question,
                '>' if chars.get(i) == Some(&'=') => {
                    i += 1;
                    Tok::Ge
                }
                '>' => Tok::Gt,
                other => return Err(syntax(l0, c0, format!("unexpected character `{other}`"))),
            }
        };
        col += i - start;
        out.push(Spanned {
            tok,
            line: l0,
            col: c0,
        });
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> FormulaError {
        let t = &self.toks[self.pos];
        syntax(
            t.line,
            t.col,
            format!("expected {expected}, found {}", t.tok.describe()),
        )
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), FormulaError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(what))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn prob(&mut self) -> Result<Expr, FormulaError> {
        if !self.is_keyword("P") {
            return Err(self.error("`P`"));
        }
        self.bump();
        let strict = match self.peek() {
            Tok::Ge => false,
            Tok::Gt => true,
            _ => return Err(self.error("`>=` or `>`")),
        };
        self.bump();
        let p = match self.peek() {
            Tok::Number(x) => *x,
            _ => return Err(self.error("a probability")),
        };
        let at = self.bump();
        if !(0.0..=1.0).contains(&p) || (strict && p == 1.0) {
            return Err(syntax(
                at.line,
                at.col,
                format!("probability bound {p} must lie in [0, 1) for `>` or [0, 1] for `>=`"),
            ));
        }
        self.expect(Tok::LBracket, "`[`")?;
        let lhs = self.or_expr()?;
        if !self.is_keyword("U") {
            return Err(self.error("`U`"));
        }
        self.bump();
        let rhs = self.or_expr()?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok(Expr::Prob {
            threshold: Threshold::new(p, strict),
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn or_expr(&mut self) -> Result<Expr, FormulaError> {
        let mut items = Vec::from([self.and_expr()?]);
        while *self.peek() == Tok::Bar {
            self.bump();
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Expr::Or(items)
        })
    }

    fn and_expr(&mut self) -> Result<Expr, FormulaError> {
        let mut items = Vec::from([self.unary()?]);
        while *self.peek() == Tok::Amp {
            self.bump();
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Expr::And(items)
        })
    }

    fn unary(&mut self) -> Result<Expr, FormulaError> {
        if *self.peek() == Tok::Bang {
            self.bump();
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.or_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "P" => self.prob(),
            Tok::Ident(s) if s == "true" => {
                self.bump();
                Ok(Expr::True)
            }
            Tok::Ident(s) if s != "U" && s != "Pmax" => {
                self.bump();
                Ok(Expr::Prop(s))
            }
            _ => Err(self.error("a proposition, `true`, `!`, `(` or `P`")),
        }
    }
}

/// Parses formula text into an [`Expr`].
///
/// Accepts either a full query `Pmax=? [ ... ]`, returning the inner
/// probabilistic formula, or a bare boolean/probabilistic expression.
pub fn parse_expr(text: &str) -> Result<Expr, FormulaError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let e = if p.is_keyword("Pmax") {
        p.bump();
        p.expect(Tok::Eq, "`=`")?;
        p.expect(Tok::Question, "`?`")?;
        p.expect(Tok::LBracket, "`[`")?;
        let e = p.prob()?;
        p.expect(Tok::RBracket, "`]`")?;
        e
    } else {
        p.or_expr()?
    };
    if *p.peek() != Tok::End {
        return Err(p.error("end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expr("a | b & !c").unwrap();
        assert_eq!(
            e,
            Expr::Or(Vec::from([
                Expr::Prop("a".into()),
                Expr::And(Vec::from([
                    Expr::Prop("b".into()),
                    Expr::Not(Box::new(Expr::Prop("c".into())))
                ]))
            ]))
        );
    }

    #[test]
    fn numbers() {
        for (text, p) in [("0.25", 0.25), ("1", 1.0), ("1e-3", 1e-3), (".5", 0.5)] {
            let e = parse_expr(&format!("P>={text} [ a U b ]")).unwrap();
            let Expr::Prob { threshold, .. } = e else { panic!() };
            assert_eq!(threshold.p, p);
        }
        assert!(parse_expr("P>=1.2.3 [ a U b ]").is_err());
    }

    #[test]
    fn keyword_misuse() {
        assert!(parse_expr("U").is_err());
        assert!(parse_expr("a U b").is_err());
        assert!(parse_expr("P [ a U b ]").is_err());
        let err = parse_expr("a $ b").unwrap_err();
        assert_eq!(
            err,
            FormulaError::Syntax {
                line: 1,
                col: 3,
                message: "unexpected character `$`".into()
            }
        );
    }
}
