//! Resolution of a design expression into a matrix shape plus scoped constraints.
//!
//! Every constraint carries a [`Scope`]: a lattice of cells (start, step and
//! count along each axis). Children of `cross` and `nest` are resolved on
//! their own and their constraints are re-scoped into the parent's
//! coordinates, so the flat constraint list of the root fully describes which
//! matrices are admissible.

use std::collections::HashMap;

use serde::Serialize;

use crate::ast::{DesignAst, Method, VarRef};
use crate::error::ResolveError;
use crate::variable::{Variable, VariableSet};

/// Largest matrix (in cells) that resolution will produce by default rules.
pub const MAX_DEFAULT_CELLS: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NestMode {
    /// Literal Kronecker composition: every block holds the same inner plan matrix.
    #[default]
    Kron,
    /// Each block satisfies the inner constraints independently.
    Scoped,
}

impl std::str::FromStr for NestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kron" => Ok(NestMode::Kron),
            "scoped" => Ok(NestMode::Scoped),
            other => Err(format!("unknown nest mode `{other}` (expected kron or scoped)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Shape {
    pub plans: usize,
    pub trials: usize,
}

impl Shape {
    pub fn new(plans: usize, trials: usize) -> Self {
        Shape { plans, trials }
    }

    pub fn cells(&self) -> usize {
        self.plans * self.trials
    }
}

/// Lattice of matrix cells: `(row0 + i * row_step, col0 + j * col_step)`.
///
/// A zero step repeats the same row or column, which is how a single row is
/// broadcast as the source of a [`ConstraintKind::Replicate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Scope {
    pub row0: usize,
    pub row_step: usize,
    pub rows: usize,
    pub col0: usize,
    pub col_step: usize,
    pub cols: usize,
}

impl Scope {
    pub fn full(shape: Shape) -> Self {
        Scope::rect(0, shape.plans, 0, shape.trials)
    }

    /// Contiguous rectangle.
    pub fn rect(row0: usize, rows: usize, col0: usize, cols: usize) -> Self {
        Scope {
            row0,
            row_step: 1,
            rows,
            col0,
            col_step: 1,
            cols,
        }
    }

    pub fn cell(&self, i: usize, j: usize) -> (usize, usize) {
        (self.row0 + i * self.row_step, self.col0 + j * self.col_step)
    }

    /// Maps a scope given in this scope's local coordinates to global ones.
    pub fn within(&self, child: Scope) -> Scope {
        Scope {
            row0: self.row0 + child.row0 * self.row_step,
            row_step: child.row_step * self.row_step,
            rows: child.rows,
            col0: self.col0 + child.col0 * self.col_step,
            col_step: child.col_step * self.col_step,
            cols: child.cols,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| self.cell(i, j)))
    }

    pub fn fits(&self, shape: Shape) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.row0 + (self.rows - 1) * self.row_step < shape.plans
                && self.col0 + (self.cols - 1) * self.col_step < shape.trials)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind")]
pub enum ConstraintKind {
    /// Every level of `var` occurs exactly `cols / levels` times in each scoped row.
    RowBalance { var: usize },
    /// No level of `var` repeats within a scoped row (fewer trials than levels).
    RowNoRepeat { var: usize },
    /// Every level of `var` occurs exactly `rows / levels` times in each scoped column.
    ColumnBalance { var: usize },
    /// Scoped column 0 holds `level` of `var`.
    FixedFirstColumn { var: usize, level: usize },
    /// Scoped rows are pairwise distinct in their projection onto `vars`.
    DistinctRows { vars: Vec<usize> },
    /// `var` takes one level across each scoped row.
    ConstantInRow { var: usize },
    /// All scoped cells agree on `vars`.
    BlockConstant { vars: Vec<usize> },
    /// Each scoped cell agrees on `vars` with the matching cell of `source`.
    Replicate { vars: Vec<usize>, source: Scope },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Constraint {
    #[serde(flatten)]
    pub kind: ConstraintKind,
    pub scope: Scope,
}

impl Constraint {
    pub fn new(kind: ConstraintKind, scope: Scope) -> Self {
        Constraint { kind, scope }
    }

    pub fn family(&self) -> &'static str {
        match self.kind {
            ConstraintKind::RowBalance { .. } => "RowBalance",
            ConstraintKind::RowNoRepeat { .. } => "RowNoRepeat",
            ConstraintKind::ColumnBalance { .. } => "ColumnBalance",
            ConstraintKind::FixedFirstColumn { .. } => "FixedFirstColumn",
            ConstraintKind::DistinctRows { .. } => "DistinctRows",
            ConstraintKind::ConstantInRow { .. } => "ConstantInRow",
            ConstraintKind::BlockConstant { .. } => "BlockConstant",
            ConstraintKind::Replicate { .. } => "Replicate",
        }
    }

    /// Variable indices the constraint reads.
    pub fn vars(&self) -> Vec<usize> {
        match &self.kind {
            ConstraintKind::RowBalance { var }
            | ConstraintKind::RowNoRepeat { var }
            | ConstraintKind::ColumnBalance { var }
            | ConstraintKind::FixedFirstColumn { var, .. }
            | ConstraintKind::ConstantInRow { var } => vec![*var],
            ConstraintKind::DistinctRows { vars }
            | ConstraintKind::BlockConstant { vars }
            | ConstraintKind::Replicate { vars, .. } => vars.clone(),
        }
    }

    fn remap(&self, parent: &Scope, vars: &[usize]) -> Constraint {
        let m = |v: &usize| vars[*v];
        let kind = match &self.kind {
            ConstraintKind::RowBalance { var } => ConstraintKind::RowBalance { var: m(var) },
            ConstraintKind::RowNoRepeat { var } => ConstraintKind::RowNoRepeat { var: m(var) },
            ConstraintKind::ColumnBalance { var } => ConstraintKind::ColumnBalance { var: m(var) },
            ConstraintKind::FixedFirstColumn { var, level } => ConstraintKind::FixedFirstColumn {
                var: m(var),
                level: *level,
            },
            ConstraintKind::DistinctRows { vars: vs } => ConstraintKind::DistinctRows {
                vars: vs.iter().map(m).collect(),
            },
            ConstraintKind::ConstantInRow { var } => ConstraintKind::ConstantInRow { var: m(var) },
            ConstraintKind::BlockConstant { vars: vs } => ConstraintKind::BlockConstant {
                vars: vs.iter().map(m).collect(),
            },
            ConstraintKind::Replicate { vars: vs, source } => ConstraintKind::Replicate {
                vars: vs.iter().map(m).collect(),
                source: parent.within(*source),
            },
        };
        Constraint::new(kind, parent.within(self.scope))
    }
}

/// How a leaf design treats one of its variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Counterbalanced,
    Within,
    Between,
    /// Mentioned only by `start_with`.
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LeafVar {
    pub var: usize,
    pub role: Role,
    pub start: Option<usize>,
}

/// Column-block partition introduced by a `nest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockPartition {
    /// Cells covered by the nest, in root coordinates.
    pub region: Scope,
    pub block_rows: usize,
    pub block_cols: usize,
    pub outer_vars: Vec<String>,
    pub inner_vars: Vec<String>,
}

impl BlockPartition {
    pub fn grid(&self) -> (usize, usize) {
        (self.region.rows / self.block_rows, self.region.cols / self.block_cols)
    }

    /// Cells of block `(r, s)` in root coordinates.
    pub fn block(&self, r: usize, s: usize) -> Scope {
        self.region.within(Scope::rect(
            r * self.block_rows,
            self.block_rows,
            s * self.block_cols,
            self.block_cols,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DesignNode {
    Leaf { vars: Vec<LeafVar>, distinct_rows: bool },
    Cross { left: Box<ResolvedDesign>, right: Box<ResolvedDesign> },
    Nest { inner: Box<ResolvedDesign>, outer: Box<ResolvedDesign> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolvedDesign {
    pub shape: Shape,
    /// Design variables: leaves in declaration order, `cross` as left then
    /// right, `nest` as outer then inner.
    pub variables: VariableSet,
    pub constraints: Vec<Constraint>,
    pub blocks: Vec<BlockPartition>,
    pub nest_mode: NestMode,
    pub node: DesignNode,
}

impl ResolvedDesign {
    pub fn cells(&self) -> usize {
        self.shape.cells()
    }

    pub fn leaves(&self) -> Vec<&ResolvedDesign> {
        match &self.node {
            DesignNode::Leaf { .. } => vec![self],
            DesignNode::Cross { left, right } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
            DesignNode::Nest { inner, outer } => {
                let mut v = outer.leaves();
                v.extend(inner.leaves());
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ResolveOptions {
    pub nest_mode: NestMode,
    /// Number of assignable units; sizes a root within-subjects design (one plan per unit).
    pub units: Option<u64>,
}

/// Resolves with Kronecker nesting and no unit count.
pub fn resolve(ast: &DesignAst, vs: &VariableSet) -> Result<ResolvedDesign, ResolveError> {
    resolve_with(ast, vs, ResolveOptions::default())
}

pub fn resolve_with(ast: &DesignAst, vs: &VariableSet, options: ResolveOptions) -> Result<ResolvedDesign, ResolveError> {
    let rd = Resolver { vs, options }.resolve(ast, true)?;
    debug_assert!(rd.constraints.iter().all(|c| c.scope.fits(rd.shape)));
    Ok(rd)
}

pub fn shape_of_cross(left: &ResolvedDesign, right: &ResolvedDesign) -> Result<Shape, ResolveError> {
    if left.shape.trials != right.shape.trials {
        return Err(ResolveError::CrossArityMismatch {
            left: left.shape.trials,
            right: right.shape.trials,
        });
    }
    if let Some(b) = overlap(&left.variables, &right.variables) {
        return Err(ResolveError::VariableOverlap(b));
    }
    Ok(Shape::new(left.shape.plans * right.shape.plans, left.shape.trials))
}

fn base_overlap(a: &Variable, b: &Variable) -> Option<String> {
    let names = b.base_names();
    a.base_names().into_iter().find(|n| names.contains(n)).map(str::to_string)
}

pub fn shape_of_nest(inner: &ResolvedDesign, outer: &ResolvedDesign) -> Result<Shape, ResolveError> {
    if let Some(b) = overlap(&inner.variables, &outer.variables) {
        return Err(ResolveError::VariableOverlap(b));
    }
    Ok(Shape::new(
        outer.shape.plans * inner.shape.plans,
        outer.shape.trials * inner.shape.trials,
    ))
}

fn overlap(a: &VariableSet, b: &VariableSet) -> Option<String> {
    let names = a.base_names();
    b.base_names()
        .into_iter()
        .find(|n| names.contains(n))
        .map(str::to_string)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |acc, k| acc.saturating_mul(k))
}

/// Number of arrangements of a multiset with the given multiplicities.
fn multinomial(counts: &[usize]) -> u128 {
    // incremental binomials stay exact where the factorials would overflow
    let mut total = 0usize;
    let mut acc = 1u128;
    for &c in counts {
        for k in 1..=c {
            total += 1;
            acc = acc.saturating_mul(total as u128) / k as u128;
        }
    }
    acc
}

/// Distinct rows of length `trials` that a leaf variable admits on its own.
pub(crate) fn row_choices(role: Role, levels: usize, trials: usize, fixed_start: bool) -> u128 {
    match role {
        Role::Counterbalanced | Role::Within if trials >= levels => {
            let mut counts = vec![trials / levels; levels];
            if fixed_start {
                counts[0] -= 1;
            }
            multinomial(&counts)
        }
        Role::Counterbalanced | Role::Within => {
            let (n, t) = if fixed_start { (levels - 1, trials - 1) } else { (levels, trials) };
            factorial(n) / factorial(n - t)
        }
        Role::Between => {
            if fixed_start {
                1
            } else {
                levels as u128
            }
        }
        Role::Free => {
            let t = if fixed_start { trials - 1 } else { trials };
            (levels as u128).saturating_pow(t as u32)
        }
    }
}

struct Resolver<'a> {
    vs: &'a VariableSet,
    options: ResolveOptions,
}

impl Resolver<'_> {
    fn resolve(&self, ast: &DesignAst, root: bool) -> Result<ResolvedDesign, ResolveError> {
        let (base, methods) = ast.unchain();
        match base {
            DesignAst::Empty => self.leaf(&methods, root),
            DesignAst::Ref(name) => Err(ResolveError::UnknownDesign(name.clone())),
            _ if !methods.is_empty() => Err(ResolveError::UnsupportedComposition(format!(
                "`{}` cannot be applied to a cross or nest; apply it to a component design",
                methods[0].keyword()
            ))),
            DesignAst::Cross(l, r) => {
                let left = self.resolve(l, false)?;
                let right = self.resolve(r, false)?;
                self.cross(left, right)
            }
            DesignAst::Nest { inner, outer } => {
                let outer_rd = self.resolve(outer, false)?;
                if outer_rd.shape.trials > 1 {
                    if let Some(msg) = self.partial_coverage(inner)? {
                        return Err(ResolveError::PartialNestingUnsupported(msg));
                    }
                }
                let inner_rd = self.resolve(inner, false)?;
                self.nest(inner_rd, outer_rd)
            }
            DesignAst::Method { .. } => unreachable!("unchain strips methods"),
        }
    }

    fn base_variable(&self, name: &str) -> Result<&Variable, ResolveError> {
        self.vs
            .get(name)
            .ok_or_else(|| ResolveError::UnknownVariable(name.to_string()))
    }

    fn variable(&self, var: &VarRef, fused: &HashMap<String, Vec<String>>) -> Result<Variable, ResolveError> {
        let names: Vec<String> = match var {
            VarRef::Named(n) => fused.get(n).cloned().unwrap_or_else(|| vec![n.clone()]),
            VarRef::Multifact(ns) => ns.clone(),
        };
        if names.len() == 1 {
            return Ok(self.base_variable(&names[0])?.clone());
        }
        let parts = names
            .iter()
            .map(|n| self.base_variable(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Variable::compound(&parts)?)
    }

    /// Position of a (possibly compound) variable in declaration order.
    fn declaration_rank(&self, v: &Variable) -> usize {
        v.base_names()
            .iter()
            .filter_map(|n| self.vs.index_of(n))
            .min()
            .unwrap_or(usize::MAX)
    }

    /// Reports an inner design that cannot show every level of some variable
    /// inside a single block.
    fn partial_coverage(&self, ast: &DesignAst) -> Result<Option<String>, ResolveError> {
        let (base, methods) = ast.unchain();
        match base {
            DesignAst::Cross(l, r) => Ok(self.partial_coverage(l)?.or(self.partial_coverage(r)?)),
            DesignAst::Nest { inner, outer } => Ok(self.partial_coverage(inner)?.or(self.partial_coverage(outer)?)),
            DesignAst::Empty => {
                let trials = methods.iter().rev().find_map(|m| match m {
                    Method::NumTrials(k) => Some(*k as usize),
                    _ => None,
                });
                let Some(trials) = trials else { return Ok(None) };
                let fused = fused_groups(&methods);
                for m in &methods {
                    if let Method::Counterbalance(v) | Method::WithinSubjects(v) = m {
                        let var = self.variable(v, &fused)?;
                        if var.level_count() > trials {
                            return Ok(Some(format!(
                                "each block holds {trials} trial(s) but `{}` has {} levels, so each outer trial would \
                                 nest a different subset of its conditions",
                                var.name(),
                                var.level_count()
                            )));
                        }
                    }
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    fn leaf(&self, methods: &[&Method], root: bool) -> Result<ResolvedDesign, ResolveError> {
        let fused = fused_groups(methods);
        let mut vars: Vec<(Variable, Role, Option<usize>)> = Vec::new();
        let mut limit = None;
        let mut trials = None;

        let slot = |v: Variable, vars: &mut Vec<(Variable, Role, Option<usize>)>| -> Result<usize, ResolveError> {
            if let Some(i) = vars.iter().position(|(w, ..)| *w == v) {
                return Ok(i);
            }
            if let Some(shared) = vars.iter().find_map(|(w, ..)| base_overlap(w, &v)) {
                return Err(ResolveError::VariableOverlap(shared));
            }
            vars.push((v, Role::Free, None));
            Ok(vars.len() - 1)
        };

        for m in methods {
            match m {
                Method::Counterbalance(v) | Method::WithinSubjects(v) | Method::BetweenSubjects(v) => {
                    let role = match m {
                        Method::Counterbalance(_) => Role::Counterbalanced,
                        Method::WithinSubjects(_) => Role::Within,
                        _ => Role::Between,
                    };
                    let var = self.variable(v, &fused)?;
                    let i = slot(var, &mut vars)?;
                    let current = &mut vars[i].1;
                    if *current != Role::Free && *current != role {
                        return Err(ResolveError::UnsupportedComposition(format!(
                            "`{}` is given two different assignment methods",
                            vars[i].0.name()
                        )));
                    }
                    *current = role;
                }
                Method::StartWith(v, level) => {
                    let var = self.variable(v, &fused)?;
                    let l = var.level_index(level).ok_or_else(|| {
                        ResolveError::Condition(crate::error::ConditionError::InvalidLevel {
                            variable: var.name().to_string(),
                            level: level.clone(),
                        })
                    })?;
                    let i = slot(var, &mut vars)?;
                    vars[i].2 = Some(l);
                }
                Method::LimitPlans(k) => limit = Some(*k as usize),
                Method::NumTrials(k) => trials = Some(*k as usize),
                Method::Multifact(_) => {}
            }
        }

        vars.sort_by_key(|(v, ..)| self.declaration_rank(v));
        let variables = VariableSet::new(vars.iter().map(|(v, ..)| v.clone()).collect())?;
        let levels = |i: usize| vars[i].0.level_count();
        let name = |i: usize| vars[i].0.name().to_string();

        let trials = match trials {
            Some(t) => t,
            None => {
                let sequenced: Vec<usize> = (0..vars.len())
                    .filter(|&i| matches!(vars[i].1, Role::Counterbalanced | Role::Within))
                    .map(levels)
                    .collect();
                if sequenced.is_empty() {
                    if vars.iter().any(|(_, r, s)| *r == Role::Free && s.is_some()) && vars.len() == 1 {
                        return Err(ResolveError::MissingTrialCount(format!(
                            "`start_with({}, ...)` alone does not fix a sequence length; add num_trials",
                            name(0)
                        )));
                    }
                    1
                } else {
                    sequenced.into_iter().fold(1, lcm)
                }
            }
        };

        let counterbalanced = vars.iter().any(|(_, r, _)| *r == Role::Counterbalanced);
        let plans = match limit {
            Some(k) => k,
            None if counterbalanced => {
                let rows = self.feasible_rows(&vars, trials);
                if rows.saturating_mul(trials as u128) > MAX_DEFAULT_CELLS {
                    return Err(ResolveError::UnsatisfiableShape(format!(
                        "full counterbalancing needs {rows} plans; add limit_plans"
                    )));
                }
                rows as usize
            }
            None => {
                let between: Vec<usize> = (0..vars.len())
                    .filter(|&i| vars[i].1 == Role::Between && vars[i].2.is_none())
                    .map(levels)
                    .collect();
                if !between.is_empty() {
                    between.into_iter().fold(1, lcm)
                } else if root && vars.iter().any(|(_, r, _)| *r == Role::Within) {
                    self.options.units.unwrap_or(1) as usize
                } else {
                    1
                }
            }
        };
        if plans == 0 || trials == 0 {
            return Err(ResolveError::UnsatisfiableShape("plan and trial counts must be positive".into()));
        }
        let shape = Shape::new(plans, trials);
        let scope = Scope::full(shape);

        let mut constraints = Vec::new();
        for (i, (v, role, start)) in vars.iter().enumerate() {
            let n = v.level_count();
            match role {
                Role::Counterbalanced | Role::Within => {
                    if trials >= n || *role == Role::Counterbalanced {
                        if trials % n != 0 {
                            return Err(ResolveError::UnsatisfiableShape(format!(
                                "{trials} trial(s) cannot hold every level of `{}` ({n} levels) equally often",
                                v.name()
                            )));
                        }
                        constraints.push(Constraint::new(ConstraintKind::RowBalance { var: i }, scope));
                    } else {
                        constraints.push(Constraint::new(ConstraintKind::RowNoRepeat { var: i }, scope));
                    }
                }
                Role::Between => constraints.push(Constraint::new(ConstraintKind::ConstantInRow { var: i }, scope)),
                Role::Free => {}
            }
            // a fixed first condition cannot be balanced across plans
            if matches!(role, Role::Counterbalanced | Role::Between) && start.is_none() {
                if plans % n != 0 {
                    return Err(ResolveError::UnsatisfiableShape(format!(
                        "{plans} plan(s) cannot give every level of `{}` ({n} levels) equal weight at each trial",
                        v.name()
                    )));
                }
                constraints.push(Constraint::new(ConstraintKind::ColumnBalance { var: i }, scope));
            }
            if let Some(level) = start {
                constraints.push(Constraint::new(
                    ConstraintKind::FixedFirstColumn { var: i, level: *level },
                    scope,
                ));
            }
        }
        if counterbalanced {
            let rows = self.feasible_rows(&vars, trials);
            if plans as u128 > rows {
                return Err(ResolveError::UnsatisfiableShape(format!(
                    "{plans} distinct plans requested but only {rows} exist"
                )));
            }
            constraints.push(Constraint::new(
                ConstraintKind::DistinctRows {
                    vars: (0..vars.len()).collect(),
                },
                scope,
            ));
        }

        Ok(ResolvedDesign {
            shape,
            variables,
            constraints,
            blocks: Vec::new(),
            nest_mode: self.options.nest_mode,
            node: DesignNode::Leaf {
                vars: vars
                    .iter()
                    .enumerate()
                    .map(|(i, (_, role, start))| LeafVar {
                        var: i,
                        role: *role,
                        start: *start,
                    })
                    .collect(),
                distinct_rows: counterbalanced,
            },
        })
    }

    fn feasible_rows(&self, vars: &[(Variable, Role, Option<usize>)], trials: usize) -> u128 {
        vars.iter()
            .map(|(v, role, start)| row_choices(*role, v.level_count(), trials, start.is_some()))
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    fn cross(&self, left: ResolvedDesign, right: ResolvedDesign) -> Result<ResolvedDesign, ResolveError> {
        let shape = shape_of_cross(&left, &right)?;
        let variables = left.variables.union(&right.variables)?;
        let (pl, pr, t) = (left.shape.plans, right.shape.plans, shape.trials);
        let lmap = index_map(&left.variables, &variables);
        let rmap = index_map(&right.variables, &variables);

        let mut constraints = Vec::new();
        let mut blocks = Vec::new();
        let left_scope = Scope {
            row0: 0,
            row_step: pr,
            rows: pl,
            col0: 0,
            col_step: 1,
            cols: t,
        };
        let right_scope = Scope::rect(0, pr, 0, t);
        constraints.extend(left.constraints.iter().map(|c| c.remap(&left_scope, &lmap)));
        constraints.extend(right.constraints.iter().map(|c| c.remap(&right_scope, &rmap)));
        for i in 0..pl {
            if pr > 1 {
                constraints.push(Constraint::new(
                    ConstraintKind::Replicate {
                        vars: lmap.clone(),
                        source: Scope {
                            row_step: 0,
                            ..Scope::rect(i * pr, pr - 1, 0, t)
                        },
                    },
                    Scope::rect(i * pr + 1, pr - 1, 0, t),
                ));
            }
            if i > 0 {
                constraints.push(Constraint::new(
                    ConstraintKind::Replicate {
                        vars: rmap.clone(),
                        source: right_scope,
                    },
                    Scope::rect(i * pr, pr, 0, t),
                ));
            }
        }
        for b in &left.blocks {
            blocks.push(BlockPartition {
                region: left_scope.within(b.region),
                ..b.clone()
            });
        }
        for i in 0..pl {
            let scope = Scope::rect(i * pr, pr, 0, t);
            for b in &right.blocks {
                blocks.push(BlockPartition {
                    region: scope.within(b.region),
                    ..b.clone()
                });
            }
        }
        Ok(ResolvedDesign {
            shape,
            variables,
            constraints,
            blocks,
            nest_mode: self.options.nest_mode,
            node: DesignNode::Cross {
                left: Box::new(left),
                right: Box::new(right),
            },
        })
    }

    fn nest(&self, inner: ResolvedDesign, outer: ResolvedDesign) -> Result<ResolvedDesign, ResolveError> {
        let shape = shape_of_nest(&inner, &outer)?;
        let variables = outer.variables.union(&inner.variables)?;
        let omap = index_map(&outer.variables, &variables);
        let imap = index_map(&inner.variables, &variables);
        let (ip, it) = (inner.shape.plans, inner.shape.trials);
        let (op, ot) = (outer.shape.plans, outer.shape.trials);

        let mut constraints = Vec::new();
        let lattice = Scope {
            row0: 0,
            row_step: ip,
            rows: op,
            col0: 0,
            col_step: it,
            cols: ot,
        };
        constraints.extend(outer.constraints.iter().map(|c| c.remap(&lattice, &omap)));
        let origin = Scope::rect(0, ip, 0, it);
        for r in 0..op {
            for s in 0..ot {
                let block = Scope::rect(r * ip, ip, s * it, it);
                if !omap.is_empty() && ip * it > 1 {
                    constraints.push(Constraint::new(ConstraintKind::BlockConstant { vars: omap.clone() }, block));
                }
                match self.options.nest_mode {
                    NestMode::Scoped => constraints.extend(inner.constraints.iter().map(|c| c.remap(&block, &imap))),
                    NestMode::Kron if r == 0 && s == 0 => {
                        constraints.extend(inner.constraints.iter().map(|c| c.remap(&block, &imap)))
                    }
                    NestMode::Kron => {
                        if !imap.is_empty() {
                            constraints.push(Constraint::new(
                                ConstraintKind::Replicate {
                                    vars: imap.clone(),
                                    source: origin,
                                },
                                block,
                            ))
                        }
                    }
                }
            }
        }

        let full = Scope::full(shape);
        let mut blocks = vec![BlockPartition {
            region: full,
            block_rows: ip,
            block_cols: it,
            outer_vars: outer.variables.variables().iter().map(|v| v.name().to_string()).collect(),
            inner_vars: inner.variables.variables().iter().map(|v| v.name().to_string()).collect(),
        }];
        for b in &outer.blocks {
            // outer partitions are expressed in whole blocks
            let region = lattice.within(b.region);
            blocks.push(BlockPartition {
                region: Scope {
                    row_step: 1,
                    col_step: 1,
                    rows: b.region.rows * ip,
                    cols: b.region.cols * it,
                    ..region
                },
                block_rows: b.block_rows * ip,
                block_cols: b.block_cols * it,
                ..b.clone()
            });
        }
        for r in 0..op {
            for s in 0..ot {
                let block = Scope::rect(r * ip, ip, s * it, it);
                for b in &inner.blocks {
                    blocks.push(BlockPartition {
                        region: block.within(b.region),
                        ..b.clone()
                    });
                }
            }
        }
        Ok(ResolvedDesign {
            shape,
            variables,
            constraints,
            blocks,
            nest_mode: self.options.nest_mode,
            node: DesignNode::Nest {
                inner: Box::new(inner),
                outer: Box::new(outer),
            },
        })
    }
}

/// Base-name groups fused by `.multifact(...)` chain methods.
fn fused_groups(methods: &[&Method]) -> HashMap<String, Vec<String>> {
    let mut fused = HashMap::new();
    for m in methods {
        if let Method::Multifact(names) = m {
            for n in names {
                fused.insert(n.clone(), names.clone());
            }
        }
    }
    fused
}

fn index_map(child: &VariableSet, parent: &VariableSet) -> Vec<usize> {
    child
        .variables()
        .iter()
        .map(|v| parent.index_of(v.name()).expect("child variables are part of the parent"))
        .collect()
}
