//! Lexer and recursive-descent parser for `.ppl` model files.
//!
//! ```text
//! stmt := name "~" "sample" dist ";"
//!       | "observe" dist "=" expr ";"
//!       | "let" name "=" expr ";"
//!       | "if" "(" cond ")" block "else" block
//! dist := "normal" "(" expr "," expr ")" | "poisson" "(" expr ")"
//! cond := expr (">" | "<=") expr
//! expr := literal | name | expr op expr | "exp(" expr ")" | "log(" expr ")"
//!       | "-" expr | "data(" string "," integer ")" | "(" expr ")"
//! ```
//!
//! `//` and `#` start line comments.

use std::fmt;

use super::ast::*;

const KEYWORDS: &[&str] = &[
    "sample", "observe", "let", "if", "else", "normal", "poisson", "exp", "log", "data",
];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(x) => write!(f, "number `{x}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{origin}:{line}:{col}: error: {message}")]
pub struct SyntaxError {
    pub origin: String,
    pub line: u32,
    pub col: u32,
    pub expected: Vec<String>,
    pub message: String,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => self.skip_line(),
                Some('/') => {
                    let mut ahead = self.chars.clone();
                    ahead.next();
                    if ahead.peek() == Some(&'/') {
                        self.skip_line();
                    } else {
                        return;
                    }
                }
                _ => return,
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.bump() {
            if c == '\n' {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<(Tok, Span), (Span, String)> {
        self.skip_trivia();
        let span = Span {
            line: self.line,
            col: self.col,
        };
        let Some(&c) = self.chars.peek() else {
            return Ok((Tok::Eof, span));
        };
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = self.chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            return Ok((Tok::Ident(s), span));
        }
        if c.is_ascii_digit() || c == '.' {
            let mut s = String::new();
            while let Some(&c) = self.chars.peek() {
                let exp_sign = (c == '-' || c == '+') && matches!(s.chars().last(), Some('e' | 'E'));
                if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                    s.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            return s
                .parse::<f64>()
                .map(|x| (Tok::Num(x), span))
                .map_err(|_| (span, format!("malformed number `{s}`")));
        }
        if c == '"' {
            self.bump();
            let mut s = String::new();
            loop {
                match self.bump() {
                    Some('"') => return Ok((Tok::Str(s), span)),
                    Some('\n') | None => return Err((span, "unterminated string literal".into())),
                    Some(c) => s.push(c),
                }
            }
        }
        self.bump();
        let sym = match c {
            '~' => "~",
            ';' => ";",
            '=' => "=",
            '(' => "(",
            ')' => ")",
            '{' => "{",
            '}' => "}",
            ',' => ",",
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '>' => ">",
            '<' => {
                if self.chars.peek() == Some(&'=') {
                    self.bump();
                    "<="
                } else {
                    return Err((span, "`<` is not a comparison operator; use `<=` or `>`".into()));
                }
            }
            other => return Err((span, format!("unexpected character `{other}`"))),
        };
        Ok((Tok::Sym(sym), span))
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    origin: String,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn advance(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let span = self.span();
        let expected: Vec<String> = expected.iter().map(|s| s.to_string()).collect();
        let message = format!("expected {}, found {}", expected.join(" or "), self.peek());
        SyntaxError {
            origin: self.origin.clone(),
            line: span.line,
            col: span.col,
            expected,
            message,
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == kw)
    }

    fn expect_sym(&mut self, s: &'static str) -> PResult<()> {
        if self.is_sym(s) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{s}`")]))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{kw}`")]))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn program(&mut self) -> PResult<Ast> {
        let mut statements = Vec::new();
        while *self.peek() != Tok::Eof {
            statements.push(self.stmt()?);
        }
        Ok(Ast { statements })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_sym("{")?;
        let mut out = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return Err(self.error(&["`}`", "statement"]));
            }
            out.push(self.stmt()?);
        }
        self.advance();
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Ident(kw) if kw == "observe" => {
                self.advance();
                let dist = self.dist()?;
                self.expect_sym("=")?;
                let value = self.expr()?;
                self.expect_sym(";")?;
                StmtKind::Observe { dist, value }
            }
            Tok::Ident(kw) if kw == "let" => {
                self.advance();
                let name = self.name()?;
                self.expect_sym("=")?;
                let expr = self.expr()?;
                self.expect_sym(";")?;
                StmtKind::Let { name, expr }
            }
            Tok::Ident(kw) if kw == "if" => {
                self.advance();
                self.expect_sym("(")?;
                let cond = self.cond()?;
                self.expect_sym(")")?;
                let then_block = self.block()?;
                self.expect_kw("else")?;
                let else_block = self.block()?;
                StmtKind::If {
                    cond,
                    then_block,
                    else_block,
                }
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let name = self.name()?;
                self.expect_sym("~")?;
                self.expect_kw("sample")?;
                let dist = self.dist()?;
                self.expect_sym(";")?;
                StmtKind::Sample { name, dist }
            }
            _ => return Err(self.error(&["identifier", "`observe`", "`let`", "`if`"])),
        };
        Ok(Stmt { kind, span })
    }

    fn dist(&mut self) -> PResult<Dist> {
        if self.is_kw("normal") {
            self.advance();
            self.expect_sym("(")?;
            let mean = self.expr()?;
            self.expect_sym(",")?;
            let sd = self.expr()?;
            self.expect_sym(")")?;
            Ok(Dist::Normal { mean, sd })
        } else if self.is_kw("poisson") {
            self.advance();
            self.expect_sym("(")?;
            let rate = self.expr()?;
            self.expect_sym(")")?;
            Ok(Dist::Poisson { rate })
        } else {
            Err(self.error(&["`normal`", "`poisson`"]))
        }
    }

    fn cond(&mut self) -> PResult<Cond> {
        let lhs = self.expr()?;
        let op = if self.is_sym(">") {
            CmpOp::Gt
        } else if self.is_sym("<=") {
            CmpOp::Le
        } else {
            return Err(self.error(&["`>`", "`<=`"]));
        };
        self.advance();
        let rhs = self.expr()?;
        Ok(Cond { lhs, op, rhs })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_sym("+") {
                BinOp::Add
            } else if self.is_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_sym("*") {
                BinOp::Mul
            } else if self.is_sym("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is_sym("-") {
            self.advance();
            // negative literals are stored as literals, not as negations
            return Ok(match self.unary()? {
                Expr::Num(x) => Expr::Num(-x),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.primary()
    }

    fn call1(&mut self) -> PResult<Expr> {
        self.advance();
        self.expect_sym("(")?;
        let e = self.expr()?;
        self.expect_sym(")")?;
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.advance();
                Ok(Expr::Num(x))
            }
            Tok::Sym("(") => {
                self.advance();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(kw) if kw == "exp" => Ok(Expr::Exp(Box::new(self.call1()?))),
            Tok::Ident(kw) if kw == "log" => Ok(Expr::Log(Box::new(self.call1()?))),
            Tok::Ident(kw) if kw == "data" => {
                self.advance();
                self.expect_sym("(")?;
                let key = match self.peek().clone() {
                    Tok::Str(s) => {
                        self.advance();
                        s
                    }
                    _ => return Err(self.error(&["string literal"])),
                };
                self.expect_sym(",")?;
                let index = match *self.peek() {
                    Tok::Num(x) if x >= 0.0 && x.fract() == 0.0 && x < u32::MAX as f64 => {
                        self.advance();
                        x as usize
                    }
                    _ => return Err(self.error(&["non-negative integer index"])),
                };
                self.expect_sym(")")?;
                Ok(Expr::Data { key, index })
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.advance();
                Ok(Expr::Var(s))
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}

/// Parses a model program into an [`Ast`].
pub fn parse(source: &SourceProgram) -> Result<Ast, SyntaxError> {
    let mut lexer = Lexer {
        chars: source.text.chars().peekable(),
        line: 1,
        col: 1,
    };
    let mut toks = Vec::new();
    loop {
        match lexer.next_token() {
            Ok((Tok::Eof, span)) => {
                toks.push((Tok::Eof, span));
                break;
            }
            Ok(t) => toks.push(t),
            Err((span, message)) => {
                return Err(SyntaxError {
                    origin: source.origin.clone(),
                    line: span.line,
                    col: span.col,
                    expected: Vec::new(),
                    message,
                })
            }
        }
    }
    Parser {
        toks,
        pos: 0,
        origin: source.origin.clone(),
    }
    .program()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Result<Ast, SyntaxError> {
        parse(&SourceProgram::inline(src))
    }

    #[test]
    fn minimal_program() {
        let ast = p("z ~ sample normal(0,1); observe normal(z,1) = 0.5;").unwrap();
        assert_eq!(ast.statements.len(), 2);
        assert!(matches!(ast.statements[0].kind, StmtKind::Sample { .. }));
        assert!(matches!(ast.statements[1].kind, StmtKind::Observe { .. }));
    }

    #[test]
    fn if_statement_condition() {
        let src = "z ~ sample normal(0,1);\n\
                   if (z > 0) { observe normal(5,1) = 0; } else { observe normal(-2,1) = 0; }";
        let ast = p(src).unwrap();
        let StmtKind::If { cond, then_block, else_block } = &ast.statements[1].kind else {
            panic!("expected if");
        };
        assert_eq!(cond.lhs, Expr::var("z"));
        assert_eq!(cond.op, CmpOp::Gt);
        assert_eq!(cond.rhs, Expr::Num(0.0));
        assert_eq!(then_block.len(), 1);
        assert_eq!(else_block.len(), 1);
        assert_eq!(ast.statements[1].span.line, 2);
    }

    #[test]
    fn missing_terminator_at_end_of_input() {
        let err = p("z ~ sample normal(0,1)").unwrap_err();
        assert_eq!(err.expected, vec!["`;`".to_string()]);
        assert!(err.message.contains("end of input"));
        assert_eq!((err.line, err.col), (1, 23));
    }

    #[test]
    fn precedence_and_negative_literals() {
        let ast = p("let a = 1 + 2 * -3;").unwrap();
        let StmtKind::Let { expr, .. } = &ast.statements[0].kind else { panic!() };
        assert_eq!(
            *expr,
            Expr::bin(BinOp::Add, Expr::Num(1.0), Expr::bin(BinOp::Mul, Expr::Num(2.0), Expr::Num(-3.0)))
        );
    }

    #[test]
    fn data_placeholder_and_comments() {
        let ast = p("# header\nlet a = data(\"day\", 3); // trailing\n").unwrap();
        let StmtKind::Let { expr, .. } = &ast.statements[0].kind else { panic!() };
        assert_eq!(*expr, Expr::Data { key: "day".into(), index: 3 });
        assert_eq!(ast.statements[0].span.line, 2);
    }

    #[test]
    fn keywords_are_reserved() {
        assert!(p("if ~ sample normal(0,1);").is_err());
        assert!(p("let exp = 1;").is_err());
    }

    #[test]
    fn lone_less_than_rejected() {
        let err = p("z ~ sample normal(0,1); if (z < 0) {} else {}").unwrap_err();
        assert!(err.message.contains("<="));
    }

    #[test]
    fn diagnostics_format() {
        let err = parse(&SourceProgram::new("let = 1;", "m.ppl")).unwrap_err();
        assert_eq!(err.to_string(), "m.ppl:1:5: error: expected identifier, found `=`");
    }

    #[test]
    fn scientific_notation() {
        let ast = p("let a = 1.5e-7 + 2E3;").unwrap();
        let StmtKind::Let { expr, .. } = &ast.statements[0].kind else { panic!() };
        assert_eq!(*expr, Expr::bin(BinOp::Add, Expr::Num(1.5e-7), Expr::Num(2000.0)));
    }
}
