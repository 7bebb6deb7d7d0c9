//! Property checks over plan matrices.
//!
//! Two layers: [`violation`] evaluates one resolved constraint positionally
//! (used by the solver and by [`check_design`]), while the `check_*`
//! functions and [`design_report`] test the textbook properties of a design
//! and tolerate any row order that keeps those properties.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::constraints::{BlockPartition, ConstraintKind, DesignNode, ResolvedDesign, Role, Scope};
use crate::constraints::Constraint;
use crate::error::VerifyError;
use crate::matrix::PlanMatrix;
use crate::variable::VariableSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Cell { row, col }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub variable: String,
    pub pass: bool,
    pub detail: String,
    pub first_violation: Option<Cell>,
}

impl Check {
    fn new(name: &str, variable: impl Into<String>, detail: impl Into<String>, violation: Option<(usize, usize)>) -> Self {
        Check {
            name: name.to_string(),
            variable: variable.into(),
            pass: violation.is_none(),
            detail: detail.into(),
            first_violation: violation.map(Cell::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariableClass {
    Between,
    Counterbalanced,
    FixedOrder,
    WithinRandom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VariableSummary {
    pub variable: String,
    pub class: VariableClass,
    pub latin_square: bool,
    pub levels_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockSummary {
    /// Column width of blocks in which `variables` stay constant along each row.
    pub width: usize,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub plans: usize,
    pub trials: usize,
    pub distinct_plans: usize,
    pub variables: Vec<VariableSummary>,
    pub blocks: Vec<BlockSummary>,
}

impl Classification {
    pub fn get(&self, variable: &str) -> Option<&VariableSummary> {
        self.variables.iter().find(|v| v.variable == variable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub classification: Classification,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        let body = serde_json::json!({
            "passed": self.passed(),
            "checks": self.checks,
            "classification": self.classification,
        });
        serde_json::to_string_pretty(&body).expect("report is serializable")
    }
}

fn var_index(m: &PlanMatrix, var: &str) -> Result<usize, VerifyError> {
    m.variables()
        .index_of(var)
        .ok_or_else(|| VerifyError::UnknownVariable(var.to_string()))
}

fn key(m: &PlanMatrix, (r, c): (usize, usize), vars: &[usize]) -> Vec<usize> {
    vars.iter().map(|&v| m.level(r, c, v)).collect()
}

// Region primitives. Each returns the first offending cell.

fn rows_balanced(m: &PlanMatrix, var: usize, s: &Scope) -> Option<(usize, usize)> {
    let n = m.variables().variables()[var].level_count();
    if s.cols % n != 0 {
        return (s.rows > 0 && s.cols > 0).then(|| s.cell(0, 0));
    }
    let cap = s.cols / n;
    (0..s.rows).find_map(|i| {
        let mut counts = vec![0; n];
        (0..s.cols).find_map(|j| {
            let l = m.level(s.cell(i, j).0, s.cell(i, j).1, var);
            counts[l] += 1;
            (counts[l] > cap).then(|| s.cell(i, j))
        })
    })
}

fn rows_without_repeats(m: &PlanMatrix, var: usize, s: &Scope) -> Option<(usize, usize)> {
    (0..s.rows).find_map(|i| {
        let mut seen = HashSet::new();
        (0..s.cols).find_map(|j| {
            let (r, c) = s.cell(i, j);
            (!seen.insert(m.level(r, c, var))).then_some((r, c))
        })
    })
}

fn columns_balanced(m: &PlanMatrix, var: usize, s: &Scope) -> Option<(usize, usize)> {
    let n = m.variables().variables()[var].level_count();
    if s.rows % n != 0 {
        return (s.rows > 0 && s.cols > 0).then(|| s.cell(0, 0));
    }
    let cap = s.rows / n;
    (0..s.cols).find_map(|j| {
        let mut counts = vec![0; n];
        (0..s.rows).find_map(|i| {
            let (r, c) = s.cell(i, j);
            let l = m.level(r, c, var);
            counts[l] += 1;
            (counts[l] > cap).then_some((r, c))
        })
    })
}

fn first_column_is(m: &PlanMatrix, var: usize, level: usize, s: &Scope) -> Option<(usize, usize)> {
    if s.cols == 0 {
        return None;
    }
    (0..s.rows)
        .map(|i| s.cell(i, 0))
        .find(|&(r, c)| m.level(r, c, var) != level)
}

fn constant_rows(m: &PlanMatrix, vars: &[usize], s: &Scope) -> Option<(usize, usize)> {
    (0..s.rows).find_map(|i| {
        let first = key(m, s.cell(i, 0), vars);
        (1..s.cols).map(|j| s.cell(i, j)).find(|&cell| key(m, cell, vars) != first)
    })
}

fn constant_region(m: &PlanMatrix, vars: &[usize], s: &Scope) -> Option<(usize, usize)> {
    let mut cells = s.cells();
    let first = key(m, cells.next()?, vars);
    cells.find(|&cell| key(m, cell, vars) != first)
}

fn row_keys(m: &PlanMatrix, vars: &[usize], s: &Scope) -> Vec<Vec<usize>> {
    (0..s.rows)
        .map(|i| (0..s.cols).flat_map(|j| key(m, s.cell(i, j), vars)).collect())
        .collect()
}

fn distinct_rows(m: &PlanMatrix, vars: &[usize], s: &Scope) -> Option<(usize, usize)> {
    let mut seen = HashSet::new();
    row_keys(m, vars, s)
        .into_iter()
        .enumerate()
        .find(|(_, k)| !seen.insert(k.clone()))
        .map(|(i, _)| s.cell(i, 0))
}

/// Rows repeat a set of `expected` distinct plans, each equally often.
fn replicated_rows(m: &PlanMatrix, vars: &[usize], s: &Scope, expected: usize) -> Option<(usize, usize)> {
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    let keys = row_keys(m, vars, s);
    let cap = if expected > 0 && s.rows % expected == 0 { s.rows / expected } else { 0 };
    for (i, k) in keys.into_iter().enumerate() {
        let c = counts.entry(k).or_default();
        *c += 1;
        if *c > cap || counts.len() > expected {
            return Some(s.cell(i, 0));
        }
    }
    None
}

fn replicated(m: &PlanMatrix, vars: &[usize], s: &Scope, source: &Scope) -> Option<(usize, usize)> {
    (0..s.rows)
        .flat_map(|i| (0..s.cols).map(move |j| (i, j)))
        .find(|&(i, j)| key(m, s.cell(i, j), vars) != key(m, source.cell(i, j), vars))
        .map(|(i, j)| s.cell(i, j))
}

/// First cell at which `m` breaks constraint `c`; variable indices refer to `m`'s variable set.
pub fn violation(m: &PlanMatrix, c: &Constraint) -> Option<Cell> {
    let s = &c.scope;
    let hit = match &c.kind {
        ConstraintKind::RowBalance { var } => rows_balanced(m, *var, s),
        ConstraintKind::RowNoRepeat { var } => rows_without_repeats(m, *var, s),
        ConstraintKind::ColumnBalance { var } => columns_balanced(m, *var, s),
        ConstraintKind::FixedFirstColumn { var, level } => first_column_is(m, *var, *level, s),
        ConstraintKind::DistinctRows { vars } => distinct_rows(m, vars, s),
        ConstraintKind::ConstantInRow { var } => constant_rows(m, &[*var], s),
        ConstraintKind::BlockConstant { vars } => constant_region(m, vars, s),
        ConstraintKind::Replicate { vars, source } => replicated(m, vars, s, source),
    };
    hit.map(Cell::from)
}

fn var_names(vs: &VariableSet, vars: &[usize]) -> String {
    vars.iter()
        .map(|&v| vs.variables()[v].name())
        .collect::<Vec<_>>()
        .join(",")
}

fn describe_scope(s: &Scope) -> String {
    format!(
        "rows {}+{}k (k<{}), cols {}+{}k (k<{})",
        s.row0, s.row_step, s.rows, s.col0, s.col_step, s.cols
    )
}

/// Aligns `m` with the design's variable order.
fn aligned(m: &PlanMatrix, rd: &ResolvedDesign) -> Result<PlanMatrix, VerifyError> {
    if m.shape() != (rd.shape.plans, rd.shape.trials) {
        return Err(VerifyError::ShapeMismatch(format!(
            "matrix is {}x{}, design is {}x{}",
            m.plans(),
            m.trials(),
            rd.shape.plans,
            rd.shape.trials
        )));
    }
    if m.variables() == &rd.variables {
        return Ok(m.clone());
    }
    m.project(&rd.variables)
        .map_err(|e| VerifyError::ShapeMismatch(e.to_string()))
}

/// Positional conformance: one check per resolved constraint.
pub fn check_design(m: &PlanMatrix, rd: &ResolvedDesign) -> Result<Vec<Check>, VerifyError> {
    let m = aligned(m, rd)?;
    Ok(rd
        .constraints
        .iter()
        .map(|c| {
            let v = violation(&m, c);
            Check {
                name: c.family().to_string(),
                variable: var_names(&rd.variables, &c.vars()),
                pass: v.is_none(),
                detail: describe_scope(&c.scope),
                first_violation: v,
            }
        })
        .collect())
}

pub fn check_fisher_latin_square(m: &PlanMatrix, var: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let n = m.variables().variables()[v].level_count();
    if m.plans() != n || m.trials() != n {
        return Err(VerifyError::ShapeMismatch(format!(
            "a Latin square over `{var}` needs {n}x{n}, matrix is {}x{}",
            m.plans(),
            m.trials()
        )));
    }
    let s = Scope::full(crate::constraints::Shape::new(n, n));
    let hit = rows_balanced(m, v, &s).or_else(|| columns_balanced(m, v, &s));
    Ok(Check::new(
        "fisher_latin_square",
        var,
        "each level exactly once per row and per column",
        hit,
    ))
}

fn divisible(what: &str, var: &str, n: usize, by: usize) -> Result<(), VerifyError> {
    if by % n == 0 {
        Ok(())
    } else {
        Err(VerifyError::Divisibility(format!(
            "`{var}` has {n} levels, which does not divide the {by} {what}"
        )))
    }
}

fn full(m: &PlanMatrix) -> Scope {
    Scope::rect(0, m.plans(), 0, m.trials())
}

pub fn check_apa_balance(m: &PlanMatrix, var: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let n = m.variables().variables()[v].level_count();
    divisible("plans", var, n, m.plans())?;
    Ok(Check::new(
        "apa_balance",
        var,
        format!("each level {} time(s) at every position", m.plans() / n),
        columns_balanced(m, v, &full(m)),
    ))
}

pub fn check_counterbalance(m: &PlanMatrix, var: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let n = m.variables().variables()[v].level_count();
    divisible("trials", var, n, m.trials())?;
    divisible("plans", var, n, m.plans())?;
    let s = full(m);
    Ok(Check::new(
        "counterbalance",
        var,
        "each level equally often in every plan and at every position",
        rows_balanced(m, v, &s).or_else(|| columns_balanced(m, v, &s)),
    ))
}

/// Within-subjects: every plan shows at least two levels, spread as evenly as the trial count allows.
pub fn check_within(m: &PlanMatrix, var: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let s = full(m);
    Ok(Check::new(
        "within_subjects",
        var,
        "every plan exposes two or more levels",
        within_rows(m, v, &s),
    ))
}

fn within_rows(m: &PlanMatrix, var: usize, s: &Scope) -> Option<(usize, usize)> {
    let n = m.variables().variables()[var].level_count();
    if s.cols < 2 || n < 2 {
        return (s.rows > 0 && s.cols > 0).then(|| s.cell(0, 0));
    }
    if s.cols < n {
        return rows_without_repeats(m, var, s);
    }
    if s.cols % n == 0 {
        return rows_balanced(m, var, s);
    }
    let cap = s.cols.div_ceil(n);
    (0..s.rows).find_map(|i| {
        let mut counts = vec![0; n];
        (0..s.cols).find_map(|j| {
            let (r, c) = s.cell(i, j);
            let l = m.level(r, c, var);
            counts[l] += 1;
            (counts[l] > cap).then_some((r, c))
        })
    })
}

pub fn check_between(m: &PlanMatrix, var: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let n = m.variables().variables()[v].level_count();
    divisible("plans", var, n, m.plans())?;
    let s = full(m);
    Ok(Check::new(
        "between_subjects",
        var,
        "one level per plan, each level in equally many plans",
        constant_rows(m, &[v], &s).or_else(|| columns_balanced(m, v, &s)),
    ))
}

pub fn check_start_with(m: &PlanMatrix, var: &str, level: &str) -> Result<Check, VerifyError> {
    let v = var_index(m, var)?;
    let l = m.variables().variables()[v]
        .level_index(level)
        .ok_or_else(|| VerifyError::UnknownVariable(format!("{var}={level}")))?;
    Ok(Check::new(
        "start_with",
        var,
        format!("every plan starts with {level}"),
        first_column_is(m, v, l, &full(m)),
    ))
}

/// Outer variables stay constant inside every block of a nest partition.
pub fn check_block_structure(m: &PlanMatrix, partition: &BlockPartition) -> Result<Check, VerifyError> {
    let vars = partition
        .outer_vars
        .iter()
        .map(|n| var_index(m, n))
        .collect::<Result<Vec<_>, _>>()?;
    if partition.block_rows == 0
        || partition.block_cols == 0
        || partition.region.rows % partition.block_rows != 0
        || partition.region.cols % partition.block_cols != 0
        || !partition.region.fits(crate::constraints::Shape::new(m.plans(), m.trials()))
    {
        return Err(VerifyError::ShapeMismatch("block partition does not tile the matrix".into()));
    }
    let (gr, gc) = partition.grid();
    let hit = (0..gr)
        .flat_map(|r| (0..gc).map(move |s| (r, s)))
        .find_map(|(r, s)| constant_region(m, &vars, &partition.block(r, s)));
    Ok(Check::new(
        "block_structure",
        partition.outer_vars.join(","),
        format!(
            "outer condition constant in each {}x{} block",
            partition.block_rows, partition.block_cols
        ),
        hit,
    ))
}

/// Property checks for every component of the design, mapped to the cells it governs.
///
/// Crossed components are checked over the whole crossed region, so any row
/// order of a valid design passes; nested components are checked per block.
pub fn design_report(m: &PlanMatrix, rd: &ResolvedDesign) -> Result<Report, VerifyError> {
    let m = aligned(m, rd)?;
    let mut checks = Vec::new();
    node_checks(&m, rd, &Scope::full(rd.shape), false, &mut checks)?;
    Ok(Report {
        checks,
        classification: classify(&m),
    })
}

fn indices(m: &PlanMatrix, vs: &VariableSet) -> Result<Vec<usize>, VerifyError> {
    vs.variables().iter().map(|v| var_index(m, v.name())).collect()
}

fn node_checks(
    m: &PlanMatrix,
    rd: &ResolvedDesign,
    region: &Scope,
    replicated_region: bool,
    out: &mut Vec<Check>,
) -> Result<(), VerifyError> {
    let where_ = describe_scope(region);
    match &rd.node {
        DesignNode::Leaf { vars, distinct_rows: distinct } => {
            for lv in vars {
                let var = &rd.variables.variables()[lv.var];
                let v = var_index(m, var.name())?;
                let name = var.name();
                let mut push = |check: &str, hit: Option<(usize, usize)>| {
                    out.push(Check::new(check, name, where_.clone(), hit));
                };
                match lv.role {
                    Role::Counterbalanced => push("row_balance", rows_balanced(m, v, region)),
                    Role::Within => push("within_subjects", within_rows(m, v, region)),
                    Role::Between => push("constant_in_row", constant_rows(m, &[v], region)),
                    Role::Free => {}
                }
                if matches!(lv.role, Role::Counterbalanced | Role::Between) && lv.start.is_none() {
                    push("column_balance", columns_balanced(m, v, region));
                }
                if let Some(level) = lv.start {
                    push("start_with", first_column_is(m, v, level, region));
                }
            }
            if *distinct {
                let vs = indices(m, &rd.variables)?;
                let names = var_names(m.variables(), &vs);
                let hit = if replicated_region {
                    replicated_rows(m, &vs, region, rd.shape.plans)
                } else {
                    distinct_rows(m, &vs, region)
                };
                out.push(Check::new("distinct_plans", names, where_.clone(), hit));
            }
        }
        DesignNode::Cross { left, right } => {
            node_checks(m, left, region, true, out)?;
            node_checks(m, right, region, true, out)?;
            let l = indices(m, &left.variables)?;
            let r = indices(m, &right.variables)?;
            let mut pairs = HashMap::new();
            let lk = row_keys(m, &l, region);
            let rk = row_keys(m, &r, region);
            let expected = left.shape.plans * right.shape.plans;
            let cap = if expected > 0 && region.rows % expected == 0 { region.rows / expected } else { 0 };
            let mut hit = None;
            for (i, pair) in lk.into_iter().zip(rk).enumerate() {
                let c = pairs.entry(pair).or_insert(0usize);
                *c += 1;
                if *c > cap || pairs.len() > expected {
                    hit = Some(region.cell(i, 0));
                    break;
                }
            }
            out.push(Check::new(
                "cross_pairs",
                var_names(m.variables(), &[l, r].concat()),
                format!("every pairing of component plans present; {where_}"),
                hit,
            ));
        }
        DesignNode::Nest { inner, outer } => {
            let (ip, it) = (inner.shape.plans, inner.shape.trials);
            let (op, ot) = (outer.shape.plans, outer.shape.trials);
            let blocks_down = region.rows / ip.max(1);
            let lattice = region.within(Scope {
                row0: 0,
                row_step: ip,
                rows: blocks_down,
                col0: 0,
                col_step: it,
                cols: ot,
            });
            node_checks(m, outer, &lattice, replicated_region || blocks_down != op, out)?;
            let ov = indices(m, &outer.variables)?;
            let mut hit = None;
            for r in 0..blocks_down {
                for s in 0..ot {
                    let block = region.within(Scope::rect(r * ip, ip, s * it, it));
                    if hit.is_none() && !ov.is_empty() {
                        hit = constant_region(m, &ov, &block);
                    }
                    node_checks(m, inner, &block, false, out)?;
                }
            }
            out.push(Check::new(
                "block_structure",
                var_names(m.variables(), &ov),
                format!("outer condition constant in each {ip}x{it} block; {where_}"),
                hit,
            ));
        }
    }
    Ok(())
}

/// Descriptive summary of how each variable is laid out in the matrix.
pub fn classify(m: &PlanMatrix) -> Classification {
    let s = full(m);
    let vs = m.variables();
    let variables = (0..vs.len())
        .map(|v| {
            let var = &vs.variables()[v];
            let n = var.level_count();
            let used: HashSet<usize> = s.cells().map(|(r, c)| m.level(r, c, v)).collect();
            let rows_const = constant_rows(m, &[v], &s).is_none();
            let cols_const = (0..m.trials()).all(|c| (1..m.plans()).all(|r| m.level(r, c, v) == m.level(0, c, v)));
            let balanced = m.trials() % n == 0
                && m.plans() % n == 0
                && rows_balanced(m, v, &s).is_none()
                && columns_balanced(m, v, &s).is_none();
            let class = if rows_const {
                VariableClass::Between
            } else if cols_const {
                VariableClass::FixedOrder
            } else if balanced {
                VariableClass::Counterbalanced
            } else {
                VariableClass::WithinRandom
            };
            VariableSummary {
                variable: var.name().to_string(),
                latin_square: class == VariableClass::Counterbalanced && m.plans() == n && m.trials() == n,
                class,
                levels_used: used.len(),
            }
        })
        .collect();

    let mut blocks = Vec::new();
    for width in 2..m.trials() {
        if m.trials() % width != 0 {
            continue;
        }
        let constant: Vec<String> = (0..vs.len())
            .filter(|&v| {
                let per_row = constant_rows(m, &[v], &s).is_none();
                !per_row
                    && (0..m.trials() / width).all(|b| {
                        constant_rows(m, &[v], &Scope::rect(0, m.plans(), b * width, width)).is_none()
                    })
            })
            .map(|v| vs.variables()[v].name().to_string())
            .collect();
        let narrower = blocks
            .iter()
            .any(|b: &BlockSummary| width % b.width == 0 && b.variables == constant);
        if !constant.is_empty() && !narrower {
            blocks.push(BlockSummary {
                width,
                variables: constant,
            });
        }
    }
    let distinct: HashSet<&[crate::variable::ConditionCode]> = m.rows().collect();
    Classification {
        plans: m.plans(),
        trials: m.trials(),
        distinct_plans: distinct.len(),
        variables,
        blocks,
    }
}

/// Level-count histogram per column, used in diagnostics.
pub fn column_counts(m: &PlanMatrix, var: usize) -> Vec<BTreeMap<String, usize>> {
    let v = &m.variables().variables()[var];
    (0..m.trials())
        .map(|c| {
            let mut counts = BTreeMap::new();
            for r in 0..m.plans() {
                *counts.entry(v.levels()[m.level(r, c, var)].clone()).or_default() += 1;
            }
            counts
        })
        .collect()
}
