//! Static checks and branch-condition canonicalization.
//!
//! Every `if` condition is expanded symbolically through `let` bindings into
//! the form `A·z + b > 0` over the latent vector `z`. Coefficients stay
//! symbolic (latent-free expressions) so that data placeholders can be
//! resolved later by the compiler; for literal-only programs they fold to
//! plain numbers.

use std::collections::{BTreeMap, HashMap};

use super::ast::*;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("{span}: error: branch condition is not affine in the latent variables ({detail})")]
    NonAffineCondition { span: Span, detail: String },
    #[error("{span}: error: branches sample different latents (then: [{}], else: [{}])", then_names.join(", "), else_names.join(", "))]
    BranchVaryingSampleCount {
        span: Span,
        then_names: Vec<String>,
        else_names: Vec<String>,
    },
    #[error("{span}: error: unbound variable `{name}`")]
    UnboundVariable { name: String, span: Span },
    #[error("{span}: error: latent `{name}` is sampled more than once on a control path")]
    DuplicateSample { name: String, span: Span },
    #[error("{span}: error: `{name}` is already defined")]
    Redefinition { name: String, span: Span },
    #[error("{span}: error: poisson may only appear in observe statements")]
    PoissonLatent { span: Span },
    #[error("{span}: error: observed value must not depend on latent variables")]
    LatentObservedValue { span: Span },
    #[error("{span}: error: poisson observation must be a non-negative integer, got {value}")]
    NonIntegerCount { span: Span, value: f64 },
}

impl ValidationError {
    pub fn span(&self) -> Span {
        match self {
            ValidationError::NonAffineCondition { span, .. }
            | ValidationError::BranchVaryingSampleCount { span, .. }
            | ValidationError::UnboundVariable { span, .. }
            | ValidationError::DuplicateSample { span, .. }
            | ValidationError::Redefinition { span, .. }
            | ValidationError::PoissonLatent { span }
            | ValidationError::LatentObservedValue { span }
            | ValidationError::NonIntegerCount { span, .. } => *span,
        }
    }
}

/// Canonical form `Σ_i coeffs[i]·z_i + offset > 0` of one `if` condition.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCondition {
    /// Position of the `if` in textual (pre-order) order, 0-based.
    pub index: usize,
    /// One latent-free coefficient expression per latent.
    pub coeffs: Vec<Expr>,
    pub offset: Expr,
    /// `true` when the `then` block runs on the `A·z + b > 0` side.
    pub then_on_positive: bool,
    pub span: Span,
}

impl AffineCondition {
    /// Numeric `(A, b)` when no coefficient refers to a data placeholder.
    pub fn numeric(&self) -> Option<(Vec<f64>, f64)> {
        let a = self.coeffs.iter().map(const_value).collect::<Option<Vec<_>>>()?;
        Some((a, const_value(&self.offset)?))
    }
}

/// Evaluates a latent-free, data-free expression.
pub fn const_value(e: &Expr) -> Option<f64> {
    eval_const(e, &mut |_, _| None)
}

/// Evaluates a latent-free expression, resolving data placeholders through
/// `lookup`.
pub fn eval_const(e: &Expr, lookup: &mut dyn FnMut(&str, usize) -> Option<f64>) -> Option<f64> {
    Some(match e {
        Expr::Num(x) => *x,
        Expr::Data { key, index } => lookup(key, *index)?,
        Expr::Var(_) => return None,
        Expr::Neg(a) => -eval_const(a, lookup)?,
        Expr::Exp(a) => eval_const(a, lookup)?.exp(),
        Expr::Log(a) => eval_const(a, lookup)?.ln(),
        Expr::Bin(op, a, b) => op.apply(eval_const(a, lookup)?, eval_const(b, lookup)?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedAst {
    pub ast: Ast,
    /// Latent names in textual order of their `sample` statements.
    pub latent_names: Vec<String>,
    pub conditions: Vec<AffineCondition>,
}

impl ValidatedAst {
    pub fn latent_dim(&self) -> usize {
        self.latent_names.len()
    }

    pub fn branch_count(&self) -> usize {
        self.conditions.len()
    }
}

// Smart constructors that fold literal arithmetic.

fn num_of(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(x) => Some(*x),
        _ => None,
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Expr::bin(BinOp::Add, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x * y),
        (Some(0.0), _) => Expr::Num(0.0),
        (_, Some(0.0)) => Expr::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Expr::bin(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x / y),
        (Some(0.0), _) => Expr::Num(0.0),
        (_, Some(1.0)) => a,
        _ => Expr::bin(BinOp::Div, a, b),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => Expr::Num(-x),
        Expr::Neg(inner) => *inner,
        e => Expr::Neg(Box::new(e)),
    }
}

/// Affine form over latents with symbolic latent-free coefficients.
#[derive(Clone, Debug, Default)]
struct Linear {
    coeffs: BTreeMap<usize, Expr>,
    offset: Option<Expr>,
}

impl Linear {
    fn constant(e: Expr) -> Self {
        Linear {
            coeffs: BTreeMap::new(),
            offset: Some(e),
        }
    }

    fn latent(i: usize) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(i, Expr::Num(1.0));
        Linear { coeffs, offset: None }
    }

    fn is_const(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn offset(&self) -> Expr {
        self.offset.clone().unwrap_or(Expr::Num(0.0))
    }

    fn combine(self, other: Linear, sign: f64) -> Linear {
        let flip = |e: Expr| if sign < 0.0 { neg(e) } else { e };
        let mut coeffs = self.coeffs;
        for (i, c) in other.coeffs {
            let c = flip(c);
            let merged = match coeffs.remove(&i) {
                Some(prev) => add(prev, c),
                None => c,
            };
            if num_of(&merged) != Some(0.0) {
                coeffs.insert(i, merged);
            }
        }
        let offset = match (self.offset, other.offset) {
            (None, None) => None,
            (a, b) => Some(add(
                a.unwrap_or(Expr::Num(0.0)),
                flip(b.unwrap_or(Expr::Num(0.0))),
            )),
        };
        Linear { coeffs, offset }
    }

    fn map(self, f: impl Fn(Expr) -> Expr) -> Linear {
        let coeffs = self
            .coeffs
            .into_iter()
            .map(|(i, c)| (i, f(c)))
            .filter(|(_, c)| num_of(c) != Some(0.0))
            .collect();
        Linear {
            coeffs,
            offset: self.offset.map(&f),
        }
    }
}

#[derive(Clone, Debug)]
enum Binding {
    Latent(usize),
    Let {
        linear: Option<Linear>,
        uses_latent: bool,
    },
}

type Env = HashMap<String, Binding>;

enum LinErr {
    Unbound(String),
    NonLinear(String),
}

fn linearize(e: &Expr, env: &Env) -> Result<Linear, LinErr> {
    Ok(match e {
        Expr::Num(_) | Expr::Data { .. } => Linear::constant(e.clone()),
        Expr::Var(name) => match env.get(name) {
            None => return Err(LinErr::Unbound(name.clone())),
            Some(Binding::Latent(i)) => Linear::latent(*i),
            Some(Binding::Let { linear: Some(l), .. }) => l.clone(),
            Some(Binding::Let { linear: None, .. }) => {
                return Err(LinErr::NonLinear(format!("`{name}` is a nonlinear function of latents")))
            }
        },
        Expr::Neg(a) => linearize(a, env)?.map(neg),
        Expr::Exp(a) | Expr::Log(a) => {
            let inner = linearize(a, env)?;
            if !inner.is_const() {
                let f = if matches!(e, Expr::Exp(_)) { "exp" } else { "log" };
                return Err(LinErr::NonLinear(format!("latent inside {f}")));
            }
            let o = inner.offset();
            Linear::constant(match e {
                Expr::Exp(_) => match o {
                    Expr::Num(x) => Expr::Num(x.exp()),
                    o => Expr::Exp(Box::new(o)),
                },
                _ => match o {
                    Expr::Num(x) => Expr::Num(x.ln()),
                    o => Expr::Log(Box::new(o)),
                },
            })
        }
        Expr::Bin(op, a, b) => {
            let la = linearize(a, env)?;
            let lb = linearize(b, env)?;
            match op {
                BinOp::Add => la.combine(lb, 1.0),
                BinOp::Sub => la.combine(lb, -1.0),
                BinOp::Mul => {
                    if la.is_const() {
                        let k = la.offset();
                        lb.map(|c| mul(k.clone(), c))
                    } else if lb.is_const() {
                        let k = lb.offset();
                        la.map(|c| mul(c, k.clone()))
                    } else {
                        return Err(LinErr::NonLinear("product of latent terms".into()));
                    }
                }
                BinOp::Div => {
                    if !lb.is_const() {
                        return Err(LinErr::NonLinear("division by a latent term".into()));
                    }
                    let k = lb.offset();
                    la.map(|c| div(c, k.clone()))
                }
            }
        }
    })
}

/// Whether `e` depends on any latent; errors on unbound names.
fn uses_latent(e: &Expr, env: &Env, span: Span) -> Result<bool, ValidationError> {
    Ok(match e {
        Expr::Num(_) | Expr::Data { .. } => false,
        Expr::Var(name) => match env.get(name) {
            None => {
                return Err(ValidationError::UnboundVariable {
                    name: name.clone(),
                    span,
                })
            }
            Some(Binding::Latent(_)) => true,
            Some(Binding::Let { uses_latent, .. }) => *uses_latent,
        },
        Expr::Neg(a) | Expr::Exp(a) | Expr::Log(a) => uses_latent(a, env, span)?,
        Expr::Bin(_, a, b) => uses_latent(a, env, span)? | uses_latent(b, env, span)?,
    })
}

struct Validator {
    latent_index: HashMap<String, usize>,
    latent_names: Vec<String>,
    conditions: Vec<AffineCondition>,
    /// Sparse coefficients per condition, densified once `n` is known.
    pending: Vec<(usize, Vec<(usize, Expr)>)>,
}

impl Validator {
    fn check_dist(&self, dist: &Dist, env: &Env, span: Span) -> Result<(), ValidationError> {
        match dist {
            Dist::Normal { mean, sd } => {
                uses_latent(mean, env, span)?;
                uses_latent(sd, env, span)?;
            }
            Dist::Poisson { rate } => {
                uses_latent(rate, env, span)?;
            }
        }
        Ok(())
    }

    /// Walks a block; returns the ordered latent names it samples.
    fn block(&mut self, stmts: &[Stmt], env: &mut Env) -> Result<Vec<String>, ValidationError> {
        let mut sampled = Vec::new();
        for s in stmts {
            let span = s.span;
            match &s.kind {
                StmtKind::Sample { name, dist } => {
                    if matches!(dist, Dist::Poisson { .. }) {
                        return Err(ValidationError::PoissonLatent { span });
                    }
                    self.check_dist(dist, env, span)?;
                    match env.get(name) {
                        Some(Binding::Latent(_)) => {
                            return Err(ValidationError::DuplicateSample {
                                name: name.clone(),
                                span,
                            })
                        }
                        Some(Binding::Let { .. }) => {
                            return Err(ValidationError::Redefinition {
                                name: name.clone(),
                                span,
                            })
                        }
                        None => {}
                    }
                    let next = self.latent_names.len();
                    let idx = *self.latent_index.entry(name.clone()).or_insert(next);
                    if idx == next {
                        self.latent_names.push(name.clone());
                    }
                    env.insert(name.clone(), Binding::Latent(idx));
                    sampled.push(name.clone());
                }
                StmtKind::Observe { dist, value } => {
                    self.check_dist(dist, env, span)?;
                    if uses_latent(value, env, span)? {
                        return Err(ValidationError::LatentObservedValue { span });
                    }
                    if let (Dist::Poisson { .. }, Some(v)) = (dist, const_value(value)) {
                        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                            return Err(ValidationError::NonIntegerCount { span, value: v });
                        }
                    }
                }
                StmtKind::Let { name, expr } => {
                    if env.contains_key(name) {
                        return Err(ValidationError::Redefinition {
                            name: name.clone(),
                            span,
                        });
                    }
                    let dep = uses_latent(expr, env, span)?;
                    let linear = linearize(expr, env).ok();
                    env.insert(
                        name.clone(),
                        Binding::Let {
                            linear,
                            uses_latent: dep,
                        },
                    );
                }
                StmtKind::If {
                    cond,
                    then_block,
                    else_block,
                } => {
                    let diff = Expr::bin(BinOp::Sub, cond.lhs.clone(), cond.rhs.clone());
                    let lin = linearize(&diff, env).map_err(|e| match e {
                        LinErr::Unbound(name) => ValidationError::UnboundVariable { name, span },
                        LinErr::NonLinear(detail) => ValidationError::NonAffineCondition { span, detail },
                    })?;
                    let index = self.conditions.len();
                    let mut coeffs = Vec::new();
                    // coefficients are filled once the latent count is final
                    for (i, c) in &lin.coeffs {
                        coeffs.push((*i, c.clone()));
                    }
                    self.conditions.push(AffineCondition {
                        index,
                        coeffs: Vec::new(),
                        offset: lin.offset(),
                        then_on_positive: cond.op == CmpOp::Gt,
                        span,
                    });
                    self.pending.push((index, coeffs));

                    let mut then_env = env.clone();
                    let then_names = self.block(then_block, &mut then_env)?;
                    let mut else_env = env.clone();
                    let else_names = self.block(else_block, &mut else_env)?;
                    if then_names != else_names {
                        return Err(ValidationError::BranchVaryingSampleCount {
                            span,
                            then_names,
                            else_names,
                        });
                    }
                    for name in then_names {
                        if env.contains_key(&name) {
                            return Err(ValidationError::DuplicateSample { name, span });
                        }
                        let idx = self.latent_index[&name];
                        env.insert(name.clone(), Binding::Latent(idx));
                        sampled.push(name);
                    }
                }
            }
        }
        Ok(sampled)
    }
}

/// Checks a parsed program and canonicalizes its branch conditions.
pub fn validate(ast: &Ast) -> Result<ValidatedAst, ValidationError> {
    let mut v = Validator {
        latent_index: HashMap::new(),
        latent_names: Vec::new(),
        conditions: Vec::new(),
        pending: Vec::new(),
    };
    let mut env = Env::new();
    v.block(&ast.statements, &mut env)?;
    let n = v.latent_names.len();
    for (index, sparse) in std::mem::take(&mut v.pending) {
        let mut dense = vec![Expr::Num(0.0); n];
        for (i, c) in sparse {
            dense[i] = c;
        }
        v.conditions[index].coeffs = dense;
    }
    Ok(ValidatedAst {
        ast: ast.clone(),
        latent_names: v.latent_names,
        conditions: v.conditions,
    })
}
