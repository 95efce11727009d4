use std::collections::HashMap;

use super::{Block, BranchCondition, CompiledModel, DataTable, Node, Op, Operand};
use crate::frontend::{eval_const, BinOp, Dist, Expr, Span, StmtKind, ValidatedAst};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("{span}: error: no data for key \"{key}\"")]
    MissingDataKey { key: String, span: Span },
    #[error("{span}: error: data(\"{key}\", {index}) is out of range ({len} values available)")]
    DataLengthMismatch {
        key: String,
        index: usize,
        len: usize,
        span: Span,
    },
    #[error("{span}: error: poisson observation must be a non-negative integer, got {value}")]
    NonIntegerCount { value: f64, span: Span },
    #[error("{span}: error: branch condition coefficient is not finite")]
    NonFiniteCondition { span: Span },
}

impl CompileError {
    pub fn span(&self) -> Span {
        match self {
            CompileError::MissingDataKey { span, .. }
            | CompileError::DataLengthMismatch { span, .. }
            | CompileError::NonIntegerCount { span, .. }
            | CompileError::NonFiniteCondition { span } => *span,
        }
    }
}

struct Lowering<'a, T> {
    data: &'a DataTable,
    latent_index: HashMap<&'a str, usize>,
    num_regs: usize,
    next_branch: usize,
    _marker: std::marker::PhantomData<T>,
}

type Env<T> = HashMap<String, Operand<T>>;

impl<'a, T: Real> Lowering<'a, T> {
    fn lookup(&self, key: &str, index: usize, span: Span) -> Result<f64, CompileError> {
        if !self.data.contains_key(key) {
            return Err(CompileError::MissingDataKey {
                key: key.to_string(),
                span,
            });
        }
        self.data.get(key, index).ok_or_else(|| CompileError::DataLengthMismatch {
            key: key.to_string(),
            index,
            len: self.data.series_len(key),
            span,
        })
    }

    fn fresh(&mut self) -> usize {
        self.num_regs += 1;
        self.num_regs - 1
    }

    fn emit(&mut self, block: &mut Block<T>, op: Op, a: Operand<T>, b: Operand<T>) -> Operand<T> {
        if let (Operand::Const(x), Operand::Const(y)) = (a, b) {
            return Operand::Const(fold(op, x, y));
        }
        let dst = self.fresh();
        block.nodes.push(Node::Assign { dst, op, a, b });
        Operand::Reg(dst)
    }

    fn expr(&mut self, e: &Expr, env: &Env<T>, block: &mut Block<T>, span: Span) -> Result<Operand<T>, CompileError> {
        let zero = Operand::Const(T::zero());
        Ok(match e {
            Expr::Num(x) => Operand::Const(T::lit(*x)),
            Expr::Data { key, index } => Operand::Const(T::lit(self.lookup(key, *index, span)?)),
            Expr::Var(name) => *env.get(name).expect("validated program binds every name"),
            Expr::Neg(a) => {
                let a = self.expr(a, env, block, span)?;
                self.emit(block, Op::Neg, a, zero)
            }
            Expr::Exp(a) => {
                let a = self.expr(a, env, block, span)?;
                self.emit(block, Op::Exp, a, zero)
            }
            Expr::Log(a) => {
                let a = self.expr(a, env, block, span)?;
                self.emit(block, Op::Log, a, zero)
            }
            Expr::Bin(op, a, b) => {
                let a = self.expr(a, env, block, span)?;
                let b = self.expr(b, env, block, span)?;
                let op = match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                };
                self.emit(block, op, a, b)
            }
        })
    }

    fn normal_term(&mut self, block: &mut Block<T>, x: Operand<T>, mean: Operand<T>, sd: Operand<T>) {
        match (x, mean, sd) {
            (Operand::Const(x), Operand::Const(m), Operand::Const(s)) => {
                block.constant = block.constant + crate::scalar::normal_log_pdf(&x, &m, &s);
            }
            (_, _, Operand::Const(s)) if s > T::zero() => {
                let half = T::lit(0.5);
                block.nodes.push(Node::NormalFixedSd {
                    x,
                    mean,
                    inv_sd: s.recip(),
                    log_norm: -s.ln() - half * T::TAU().ln(),
                });
            }
            (_, _, Operand::Const(_)) => block.constant = T::neg_infinity(),
            _ => block.nodes.push(Node::Normal { x, mean, sd }),
        }
    }

    fn block(&mut self, stmts: &'a [crate::frontend::Stmt], env: &mut Env<T>) -> Result<Block<T>, CompileError> {
        let mut block = Block {
            nodes: Vec::new(),
            constant: T::zero(),
        };
        for s in stmts {
            let span = s.span;
            match &s.kind {
                StmtKind::Sample { name, dist } => {
                    let Dist::Normal { mean, sd } = dist else {
                        unreachable!("validated programs only sample normals")
                    };
                    let i = self.latent_index[name.as_str()];
                    let mean = self.expr(mean, env, &mut block, span)?;
                    let sd = self.expr(sd, env, &mut block, span)?;
                    self.normal_term(&mut block, Operand::Reg(i), mean, sd);
                    env.insert(name.clone(), Operand::Reg(i));
                }
                StmtKind::Observe { dist, value } => {
                    let x = self.expr(value, env, &mut block, span)?;
                    match dist {
                        Dist::Normal { mean, sd } => {
                            let mean = self.expr(mean, env, &mut block, span)?;
                            let sd = self.expr(sd, env, &mut block, span)?;
                            self.normal_term(&mut block, x, mean, sd);
                        }
                        Dist::Poisson { rate } => {
                            let Operand::Const(k) = x else {
                                unreachable!("validated observed values are latent-free")
                            };
                            let kf = k.as_f64();
                            if !(kf >= 0.0 && kf.fract() == 0.0 && kf.is_finite()) {
                                return Err(CompileError::NonIntegerCount { value: kf, span });
                            }
                            let log_count_factorial = (k + T::one()).ln_gamma();
                            let rate = self.expr(rate, env, &mut block, span)?;
                            match rate {
                                Operand::Const(r) => {
                                    block.constant =
                                        block.constant + crate::scalar::poisson_log_pmf(k, log_count_factorial, &r)
                                }
                                rate => block.nodes.push(Node::Poisson {
                                    count: k,
                                    log_count_factorial,
                                    rate,
                                }),
                            }
                        }
                    }
                }
                StmtKind::Let { name, expr } => {
                    let v = self.expr(expr, env, &mut block, span)?;
                    env.insert(name.clone(), v);
                }
                StmtKind::If {
                    cond,
                    then_block,
                    else_block,
                } => {
                    let index = self.next_branch;
                    self.next_branch += 1;
                    let mut then_env = env.clone();
                    let then_b = self.block(then_block, &mut then_env)?;
                    let then_end = self.next_branch;
                    let mut else_env = env.clone();
                    let else_b = self.block(else_block, &mut else_env)?;
                    let end = self.next_branch;
                    // latents sampled in the branches stay visible afterwards
                    for (k, v) in then_env {
                        if self.latent_index.contains_key(k.as_str()) {
                            env.insert(k, v);
                        }
                    }
                    block.nodes.push(Node::Branch {
                        index,
                        then_on_positive: cond.op == crate::frontend::CmpOp::Gt,
                        then_end,
                        end,
                        then_block: then_b,
                        else_block: else_b,
                    });
                }
            }
        }
        Ok(block)
    }
}

fn fold<T: Real>(op: Op, x: T, y: T) -> T {
    match op {
        Op::Add => x + y,
        Op::Sub => x - y,
        Op::Mul => x * y,
        Op::Div => x / y,
        Op::Neg => -x,
        Op::Exp => x.exp(),
        Op::Log => x.ln(),
    }
}

/// Lowers a validated program to a [`CompiledModel`], resolving data
/// placeholders and folding constant sub-expressions.
pub fn compile<T: Real>(vast: &ValidatedAst, data: &DataTable) -> Result<CompiledModel<T>, CompileError> {
    let n = vast.latent_dim();
    let mut lowering = Lowering::<T> {
        data,
        latent_index: vast
            .latent_names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect(),
        num_regs: n,
        next_branch: 0,
        _marker: std::marker::PhantomData,
    };

    let mut conditions = Vec::with_capacity(vast.branch_count());
    for c in &vast.conditions {
        let mut err = None;
        let mut lookup = |key: &str, index: usize| match lowering.lookup(key, index, c.span) {
            Ok(v) => Some(v),
            Err(e) => {
                err = Some(e);
                None
            }
        };
        let coeffs: Option<Vec<f64>> = c.coeffs.iter().map(|e| eval_const(e, &mut lookup)).collect();
        let offset = eval_const(&c.offset, &mut lookup);
        if let Some(e) = err {
            return Err(e);
        }
        let (Some(coeffs), Some(offset)) = (coeffs, offset) else {
            unreachable!("condition coefficients are latent-free")
        };
        if !offset.is_finite() || coeffs.iter().any(|v| !v.is_finite()) {
            return Err(CompileError::NonFiniteCondition { span: c.span });
        }
        conditions.push(BranchCondition::new(
            c.index,
            coeffs.into_iter().map(T::lit).collect(),
            T::lit(offset),
            c.then_on_positive,
        ));
    }

    let mut env = Env::new();
    let root = lowering.block(&vast.ast.statements, &mut env)?;
    debug_assert_eq!(lowering.next_branch, conditions.len());
    Ok(CompiledModel {
        latent_names: vast.latent_names.clone(),
        conditions,
        root,
        num_regs: lowering.num_regs,
    })
}
