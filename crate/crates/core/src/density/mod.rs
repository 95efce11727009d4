//! Piecewise-smooth log-densities compiled from validated programs.
//!
//! A compiled model is a tree of straight-line blocks. Every `if` in the
//! source becomes a branch node whose side is decided by the sign of an
//! affine function `A·z + b` of the latent vector. Regions are never
//! enumerated: a region is identified by its [`RegionSignature`], and the
//! evaluator can be run at any signature, including one that disagrees with
//! the point's natural side for a chosen branch (forced evaluation).

mod compile;
mod data;

use std::borrow::Cow;

pub use compile::{compile, CompileError};
pub use data::{DataError, DataTable};

use crate::scalar::{normal_log_pdf, poisson_log_pmf, Real, Value};

/// Side of a branch hyperplane: `Pos` is `A·z + b > 0`, `Neg` is `≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Neg,
    Pos,
}

impl Side {
    pub fn of<T: Real>(phi: T) -> Side {
        if phi > T::zero() {
            Side::Pos
        } else {
            Side::Neg
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Side::Neg => -1,
            Side::Pos => 1,
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Neg => Side::Pos,
            Side::Pos => Side::Neg,
        }
    }
}

/// Sign vector σ ∈ {−1, +1}^L identifying a region.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RegionSignature(pub Vec<Side>);

impl RegionSignature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn side(&self, l: usize) -> Side {
        self.0[l]
    }

    pub fn signs(&self) -> Vec<i8> {
        self.0.iter().map(|s| s.sign()).collect()
    }

    pub fn with_side(&self, l: usize, side: Side) -> RegionSignature {
        let mut out = self.clone();
        out.0[l] = side;
        out
    }
}

/// Branch `l`: `A·z + b > 0` selects [`Side::Pos`].
#[derive(Clone, Debug, PartialEq)]
pub struct BranchCondition<T> {
    pub index: usize,
    pub coeffs: Vec<T>,
    pub offset: T,
    pub then_on_positive: bool,
    sparse: Vec<(usize, T)>,
}

impl<T: Real> BranchCondition<T> {
    pub fn new(index: usize, coeffs: Vec<T>, offset: T, then_on_positive: bool) -> Self {
        let sparse = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != T::zero())
            .map(|(i, c)| (i, *c))
            .collect();
        Self {
            index,
            coeffs,
            offset,
            then_on_positive,
            sparse,
        }
    }

    /// `A·z + b`.
    #[inline]
    pub fn phi(&self, z: &[T]) -> T {
        self.sparse.iter().fold(self.offset, |acc, &(i, a)| acc + a * z[i])
    }

    #[inline]
    pub fn side(&self, z: &[T]) -> Side {
        Side::of(self.phi(z))
    }

    /// `A = 0`: the condition does not depend on the latents.
    pub fn is_degenerate(&self) -> bool {
        self.sparse.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Operand<T> {
    Const(T),
    Reg(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
}

#[derive(Clone, Debug)]
pub(crate) enum Node<T> {
    Assign {
        dst: usize,
        op: Op,
        a: Operand<T>,
        b: Operand<T>,
    },
    Normal {
        x: Operand<T>,
        mean: Operand<T>,
        sd: Operand<T>,
    },
    /// Normal term with a constant, positive standard deviation.
    NormalFixedSd {
        x: Operand<T>,
        mean: Operand<T>,
        inv_sd: T,
        log_norm: T,
    },
    Poisson {
        count: T,
        log_count_factorial: T,
        rate: Operand<T>,
    },
    Branch {
        index: usize,
        then_on_positive: bool,
        /// Conditions nested under this node are `index + 1 .. end`;
        /// those in the then block are `index + 1 .. then_end`.
        then_end: usize,
        end: usize,
        then_block: Block<T>,
        else_block: Block<T>,
    },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Block<T> {
    pub nodes: Vec<Node<T>>,
    /// Sum of log-density terms whose arguments are all constants.
    pub constant: T,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("latent vector contains NaN")]
    NonFiniteDensityInput,
    #[error("latent vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Piecewise density `r(z) = Σ_k 1[z ∈ R_k] r_k(z)` with regions cut out by
/// `L` affine branch conditions.
#[derive(Clone, Debug)]
pub struct CompiledModel<T> {
    latent_names: Vec<String>,
    conditions: Vec<BranchCondition<T>>,
    root: Block<T>,
    num_regs: usize,
}

impl<T: Real> CompiledModel<T> {
    /// Latent dimension `n`.
    pub fn dim(&self) -> usize {
        self.latent_names.len()
    }

    /// Branch count `L`.
    pub fn branch_count(&self) -> usize {
        self.conditions.len()
    }

    pub fn latent_names(&self) -> &[String] {
        &self.latent_names
    }

    pub fn conditions(&self) -> &[BranchCondition<T>] {
        &self.conditions
    }

    pub fn condition(&self, l: usize) -> &BranchCondition<T> {
        &self.conditions[l]
    }

    /// σ_l = +1 iff `A_l·z + b_l > 0`; points on a hyperplane fall on the `≤` side.
    pub fn region_signature(&self, z: &[T]) -> RegionSignature {
        RegionSignature(self.conditions.iter().map(|c| c.side(z)).collect())
    }

    fn check_input(&self, z: &[T]) -> Result<(), DensityError> {
        if z.len() != self.dim() {
            return Err(DensityError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| v.is_nan()) {
            return Err(DensityError::NonFiniteDensityInput);
        }
        Ok(())
    }

    /// `log r(z)` together with the region of `z`.
    pub fn log_joint(&self, z: &[T]) -> Result<(T, RegionSignature), DensityError> {
        self.check_input(z)?;
        let sig = self.region_signature(z);
        let v = self.eval_at(z, &sig);
        Ok((v, sig))
    }

    /// `log r(z)` only, deciding branches lazily from `z`.
    pub fn log_density(&self, z: &[T]) -> Result<T, DensityError> {
        self.check_input(z)?;
        let v = self.run(z, &|l| self.conditions[l].side(z));
        Ok(sanitize(v))
    }

    /// `log r_k(z)` where `k` agrees with the region of `z` except that
    /// branch `l` is forced onto `side`.
    pub fn log_joint_forced(&self, z: &[T], l: usize, side: Side) -> T {
        let v = self.run(z, &|i| if i == l { side } else { self.conditions[i].side(z) });
        sanitize(v)
    }

    /// Evaluates the region function selected by `sig` at `z`.
    pub fn eval_at(&self, z: &[T], sig: &RegionSignature) -> T {
        sanitize(self.run(z, &|l| sig.side(l)))
    }

    /// Generic evaluation of the region function selected by `sig`; the
    /// branch decisions are taken from `sig`, never from `z`.
    pub fn eval_value<V: Value<T>>(&self, z: &[V], sig: &RegionSignature) -> V {
        self.run(z, &|l| sig.side(l))
    }

    fn run<V: Value<T>>(&self, z: &[V], decide: &dyn Fn(usize) -> Side) -> V {
        let mut regs: Vec<V> = Vec::with_capacity(self.num_regs);
        regs.extend(z.iter().cloned());
        regs.resize(self.num_regs, V::constant(T::zero()));
        let mut acc = V::constant(T::zero());
        self.exec(&self.root, &mut regs, decide, &mut acc);
        acc
    }

    fn exec<V: Value<T>>(&self, block: &Block<T>, regs: &mut [V], decide: &dyn Fn(usize) -> Side, acc: &mut V) {
        if block.constant != T::zero() {
            *acc = acc.add_const(block.constant);
        }
        for node in &block.nodes {
            match node {
                Node::Branch {
                    index,
                    then_on_positive,
                    then_block,
                    else_block,
                    ..
                } => {
                    let take_then = (decide(*index) == Side::Pos) == *then_on_positive;
                    let next = if take_then { then_block } else { else_block };
                    self.exec(next, regs, decide, acc);
                }
                other => {
                    if let Some(term) = step(other, regs) {
                        *acc = acc.add(&term);
                    }
                }
            }
        }
    }

    /// `log r_{σ_l=+1}(z) − log r_{σ_l=−1}(z)` with every other branch on its
    /// natural side.
    ///
    /// Only the two blocks of branch `l` are evaluated: bindings made inside
    /// a block are not visible after it, so every term outside them is shared
    /// by both sides and cancels. Returns zero when branch `l` is not on the
    /// control path of `z`.
    pub fn branch_delta(&self, z: &[T], l: usize) -> T {
        let mut regs: Vec<T> = Vec::with_capacity(self.num_regs);
        regs.extend_from_slice(z);
        regs.resize(self.num_regs, T::zero());
        self.delta_in(&self.root, &mut regs, z, l).unwrap_or(T::zero())
    }

    fn delta_in(&self, block: &Block<T>, regs: &mut [T], z: &[T], l: usize) -> Option<T> {
        for node in &block.nodes {
            match node {
                Node::Assign { .. } => {
                    step(node, regs);
                }
                Node::Branch {
                    index,
                    then_on_positive,
                    then_end,
                    end,
                    then_block,
                    else_block,
                } => {
                    if *index == l {
                        let decide = |i: usize| self.conditions[i].side(z);
                        let mut then_acc = T::zero();
                        let mut else_acc = T::zero();
                        self.exec(then_block, regs, &decide, &mut then_acc);
                        self.exec(else_block, regs, &decide, &mut else_acc);
                        let (pos, neg) = if *then_on_positive {
                            (then_acc, else_acc)
                        } else {
                            (else_acc, then_acc)
                        };
                        return Some(pos - neg);
                    }
                    if l > *index && l < *end {
                        let take_then = (self.conditions[*index].side(z) == Side::Pos) == *then_on_positive;
                        let inside_then = l < *then_end;
                        if take_then != inside_then {
                            return Some(T::zero());
                        }
                        let next = if take_then { then_block } else { else_block };
                        return self.delta_in(next, regs, z, l);
                    }
                }
                _ => {}
            }
        }
        None
    }
}

fn sanitize<T: Real>(v: T) -> T {
    if v.is_nan() {
        T::neg_infinity()
    } else {
        v
    }
}

#[inline]
fn fetch<'a, T: Real, V: Value<T>>(op: &Operand<T>, regs: &'a [V]) -> Cow<'a, V> {
    match op {
        Operand::Const(c) => Cow::Owned(V::constant(*c)),
        Operand::Reg(r) => Cow::Borrowed(&regs[*r]),
    }
}

/// Executes a non-branch node; returns its log-density term if it has one.
fn step<T: Real, V: Value<T>>(node: &Node<T>, regs: &mut [V]) -> Option<V> {
    match node {
        Node::Assign { dst, op, a, b } => {
            let x = fetch(a, regs);
            let out = match op {
                Op::Neg => x.neg(),
                Op::Exp => x.exp(),
                Op::Log => x.ln(),
                _ => {
                    let y = fetch(b, regs);
                    match op {
                        Op::Add => x.add(&y),
                        Op::Sub => x.sub(&y),
                        Op::Mul => x.mul(&y),
                        Op::Div => x.div(&y),
                        _ => unreachable!(),
                    }
                }
            };
            regs[*dst] = out;
            None
        }
        Node::Normal { x, mean, sd } => Some(normal_log_pdf(
            fetch(x, regs).as_ref(),
            fetch(mean, regs).as_ref(),
            fetch(sd, regs).as_ref(),
        )),
        Node::NormalFixedSd {
            x,
            mean,
            inv_sd,
            log_norm,
        } => {
            let r = fetch(x, regs).sub(&fetch(mean, regs)).mul(&V::constant(*inv_sd));
            let half = T::lit(-0.5);
            Some(r.mul(&r).mul(&V::constant(half)).add_const(*log_norm))
        }
        Node::Poisson {
            count,
            log_count_factorial,
            rate,
        } => Some(poisson_log_pmf(*count, *log_count_factorial, fetch(rate, regs).as_ref())),
        Node::Branch { .. } => unreachable!("branches are handled by the caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse, validate, SourceProgram};

    const STEP: &str = "z ~ sample normal(0, 1);\n\
        if (z > 0) { observe normal(5, 1) = 0; } else { observe normal(-2, 1) = 0; }";

    fn build(src: &str, data: &DataTable) -> Result<CompiledModel<f64>, CompileError> {
        let vast = validate(&parse(&SourceProgram::inline(src)).unwrap()).unwrap();
        compile(&vast, data)
    }

    fn step() -> CompiledModel<f64> {
        build(STEP, &DataTable::new()).unwrap()
    }

    // independent oracle: log N(x | m, s²) written out directly
    fn lnorm(x: f64, m: f64, s: f64) -> f64 {
        (-(x - m).powi(2) / (2.0 * s * s)).exp().ln() - (s * (2.0 * std::f64::consts::PI).sqrt()).ln()
    }

    #[test]
    fn step_model_shape() {
        let m = step();
        assert_eq!((m.dim(), m.branch_count()), (1, 1));
        assert_eq!(m.condition(0).coeffs, vec![1.0]);
        assert_eq!(m.condition(0).offset, 0.0);
    }

    #[test]
    fn region_signature_tie_break() {
        let m = step();
        assert_eq!(m.region_signature(&[0.7]).signs(), vec![1]);
        assert_eq!(m.region_signature(&[0.0]).signs(), vec![-1]);
        assert_eq!(m.region_signature(&[-0.3]).signs(), vec![-1]);
    }

    #[test]
    fn log_joint_values() {
        let m = step();
        let (v, sig) = m.log_joint(&[0.5]).unwrap();
        assert!((v - (-14.462878)).abs() < 1e-6);
        assert!((v - (lnorm(0.5, 0.0, 1.0) + lnorm(0.0, 5.0, 1.0))).abs() < 1e-12);
        assert_eq!(sig.signs(), vec![1]);
        let (v, _) = m.log_joint(&[-0.5]).unwrap();
        assert!((v - (-3.962878)).abs() < 1e-6);
        let (v, _) = m.log_joint(&[0.0]).unwrap();
        assert!((v - (lnorm(0.0, 0.0, 1.0) + lnorm(0.0, -2.0, 1.0))).abs() < 1e-12);
    }

    #[test]
    fn forced_evaluation_on_the_boundary() {
        let m = step();
        let pos = m.log_joint_forced(&[0.0], 0, Side::Pos);
        let neg = m.log_joint_forced(&[0.0], 0, Side::Neg);
        assert!((pos - (-14.337878)).abs() < 1e-6);
        assert!((neg - (-3.837878)).abs() < 1e-6);
        assert_eq!(neg, m.log_joint(&[0.0]).unwrap().0);
        assert!((m.branch_delta(&[0.0], 0) - (pos - neg)).abs() < 1e-12);
    }

    #[test]
    fn nan_input_rejected() {
        assert_eq!(step().log_joint(&[f64::NAN]).unwrap_err(), DensityError::NonFiniteDensityInput);
    }

    #[test]
    fn differentiable_model_has_no_branches() {
        let m = build("z ~ sample normal(0,1); observe normal(z,1) = 0.5;", &DataTable::new()).unwrap();
        assert_eq!(m.branch_count(), 0);
        let v = m.log_density(&[0.3]).unwrap();
        assert!((v - (lnorm(0.3, 0.0, 1.0) + lnorm(0.5, 0.3, 1.0))).abs() < 1e-12);
    }

    #[test]
    fn data_placeholders_and_errors() {
        let src = "t ~ sample normal(0, 10);\n\
                   if (t > data(\"day\", 1)) { observe poisson(exp(1)) = data(\"count\", 1); } \
                   else { observe poisson(exp(2)) = data(\"count\", 1); }";
        let data = DataTable::new().with_series("day", &[0.0, 2.0]).with_series("count", &[3.0, 4.0]);
        let m = build(src, &data).unwrap();
        assert_eq!(m.condition(0).offset, -2.0);
        let missing = DataTable::new().with_series("day", &[0.0, 2.0]);
        assert!(matches!(build(src, &missing), Err(CompileError::MissingDataKey { .. })));
        let short = DataTable::new().with_series("day", &[0.0]).with_series("count", &[3.0, 4.0]);
        assert!(matches!(build(src, &short), Err(CompileError::DataLengthMismatch { .. })));
        let frac = DataTable::new().with_series("day", &[0.0, 2.0]).with_series("count", &[3.0, 4.5]);
        assert!(matches!(build(src, &frac), Err(CompileError::NonIntegerCount { .. })));
    }

    #[test]
    fn le_condition_maps_then_to_negative_side() {
        let src = "z ~ sample normal(0,1); if (z <= 1) { observe normal(0, 1) = 3; } else { }";
        let m = build(src, &DataTable::new()).unwrap();
        assert_eq!(m.condition(0).coeffs, vec![1.0]);
        assert_eq!(m.condition(0).offset, -1.0);
        // z = 1 is on the boundary: `<=` holds, σ = −1, the then block runs
        let on = m.log_density(&[1.0]).unwrap();
        assert!((on - (lnorm(1.0, 0.0, 1.0) + lnorm(3.0, 0.0, 1.0))).abs() < 1e-12);
        let above = m.log_density(&[1.5]).unwrap();
        assert!((above - lnorm(1.5, 0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn nested_branch_delta_matches_forced_difference() {
        let src = "x ~ sample normal(0,1); y ~ sample normal(0,2);\n\
                   let w = exp(x);\n\
                   if (x + y > 0.5) {\n\
                     if (y <= 0) { observe normal(w, 1) = 1; } else { observe normal(y, 0.5) = 1; }\n\
                   } else { observe normal(x * y, 2) = -1; }\n\
                   if (x - 2 * y > 0) { observe normal(x, 1) = 0; } else { observe normal(y, 1) = 0; }";
        let m = build(src, &DataTable::new()).unwrap();
        assert_eq!(m.branch_count(), 3);
        for &(x, y) in &[(1.0, 0.3), (1.0, -0.2), (-1.0, 0.1), (0.2, -1.3), (2.0, 2.0)] {
            let z = [x, y];
            for l in 0..3 {
                let fwd = m.log_joint_forced(&z, l, Side::Pos) - m.log_joint_forced(&z, l, Side::Neg);
                let delta = m.branch_delta(&z, l);
                assert!((fwd - delta).abs() < 1e-10, "l={l} z={z:?}: {fwd} vs {delta}");
            }
        }
    }

    #[test]
    fn density_zero_maps_to_negative_infinity() {
        let src = "x ~ sample normal(0,1); observe poisson(x) = 2;";
        let m = build(src, &DataTable::new()).unwrap();
        assert_eq!(m.log_density(&[-1.0]).unwrap(), f64::NEG_INFINITY);
        assert!(m.log_density(&[1.0]).unwrap().is_finite());
    }
}
