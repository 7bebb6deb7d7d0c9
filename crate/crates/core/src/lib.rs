//! Experimental-design language, plan-matrix solver and randomized assignment.
//!
//! The pipeline runs in stages: [`dsl::parse`] reads a program,
//! [`constraints::resolve`] turns its assigned design into a shape plus
//! scoped constraints, [`solver::solve`] produces a plan matrix, and
//! [`assign::match_units`] maps units onto plans. [`verify`] checks matrices
//! against the textbook properties of each design.

pub mod assign;
pub mod ast;
pub mod cli;
pub mod constraints;
pub mod dsl;
pub mod error;
pub mod matrix;
pub mod solver;
pub mod variable;
pub mod verify;

pub use ast::{DesignAst, Program, UnitsSpec};
pub use constraints::{resolve, resolve_with, NestMode, ResolveOptions, ResolvedDesign, Shape};
pub use dsl::{parse, render};
pub use error::{AssignError, ConditionError, ParseError, ResolveError, SolveError, VerifyError};
pub use matrix::PlanMatrix;
pub use variable::{combine, encode_condition, project, ConditionCode, Variable, VariableSet};

/// Resolves the design named by the program's assign statement, sized for its units.
pub fn resolve_program(program: &Program, nest_mode: NestMode) -> Result<ResolvedDesign, ResolveError> {
    resolve_with(
        &program.assigned_design(),
        &program.variables,
        ResolveOptions {
            nest_mode,
            units: Some(program.assigned_units().count()),
        },
    )
}

/// Resolves the assigned design for a table of `plans` rows, falling back to
/// the program's own sizing when that count does not fit the design.
pub fn resolve_for_table(program: &Program, nest_mode: NestMode, plans: usize) -> Result<ResolvedDesign, ResolveError> {
    let rd = resolve_program(program, nest_mode)?;
    if rd.shape.plans == plans {
        return Ok(rd);
    }
    let options = ResolveOptions {
        nest_mode,
        units: Some(plans as u64),
    };
    Ok(resolve_with(&program.assigned_design(), &program.variables, options).unwrap_or(rd))
}
