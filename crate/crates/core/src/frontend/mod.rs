//! Front end for the model language: parsing and validation.

mod ast;
mod parser;
mod validate;

pub use ast::*;
pub use parser::{parse, SyntaxError};
pub use validate::{const_value, eval_const, validate, AffineCondition, ValidatedAst, ValidationError};
