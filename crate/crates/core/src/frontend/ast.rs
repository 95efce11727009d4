use std::fmt;

/// Source position (1-based). Positions never take part in structural
/// equality, so two ASTs parsed from differently formatted text compare equal.
#[derive(Clone, Copy, Debug, Default, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Model source text plus where it came from.
#[derive(Clone, Debug)]
pub struct SourceProgram {
    pub text: String,
    pub origin: String,
}

impl SourceProgram {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            origin: origin.into(),
        }
    }

    pub fn inline(text: impl Into<String>) -> Self {
        Self::new(text, "<inline>")
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(text, path.display().to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    /// `data("key", index)`, resolved against a data table at compile time.
    Data { key: String, index: usize },
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dist {
    Normal { mean: Expr, sd: Expr },
    Poisson { rate: Expr },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Gt,
    Le,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cond {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Sample { name: String, dist: Dist },
    Observe { dist: Dist, value: Expr },
    Let { name: String, expr: Expr },
    If { cond: Cond, then_block: Vec<Stmt>, else_block: Vec<Stmt> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Ast {
    pub statements: Vec<Stmt>,
}

// Pretty printing. Binary expressions are fully parenthesized so that the
// printed text re-parses to the same tree.

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Data { key, index } => write!(f, "data({key:?}, {index})"),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Log(e) => write!(f, "log({e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Normal { mean, sd } => write!(f, "normal({mean}, {sd})"),
            Dist::Poisson { rate } => write!(f, "poisson({rate})"),
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
        };
        write!(f, "{} {op} {}", self.lhs, self.rhs)
    }
}

fn write_block(f: &mut fmt::Formatter<'_>, stmts: &[Stmt], depth: usize) -> fmt::Result {
    for s in stmts {
        write_stmt(f, s, depth)?;
    }
    Ok(())
}

fn write_stmt(f: &mut fmt::Formatter<'_>, s: &Stmt, depth: usize) -> fmt::Result {
    let pad = "  ".repeat(depth);
    match &s.kind {
        StmtKind::Sample { name, dist } => writeln!(f, "{pad}{name} ~ sample {dist};"),
        StmtKind::Observe { dist, value } => writeln!(f, "{pad}observe {dist} = {value};"),
        StmtKind::Let { name, expr } => writeln!(f, "{pad}let {name} = {expr};"),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            writeln!(f, "{pad}if ({cond}) {{")?;
            write_block(f, then_block, depth + 1)?;
            writeln!(f, "{pad}}} else {{")?;
            write_block(f, else_block, depth + 1)?;
            writeln!(f, "{pad}}}")
        }
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_block(f, &self.statements, 0)
    }
}
