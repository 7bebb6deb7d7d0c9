use std::fmt;

use crate::error::ConditionError;
use crate::variable::{ConditionCode, Projector, VariableSet};

/// Rows are experimental plans, columns are trials, cells are conditions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanMatrix {
    plans: usize,
    trials: usize,
    cells: Vec<ConditionCode>,
    variables: VariableSet,
}

impl PlanMatrix {
    pub fn new(
        plans: usize,
        trials: usize,
        cells: Vec<ConditionCode>,
        variables: VariableSet,
    ) -> Result<Self, ConditionError> {
        if cells.len() != plans * trials {
            return Err(ConditionError::Arity {
                expected: plans * trials,
                got: cells.len(),
            });
        }
        let count = variables.condition_count();
        if let Some(bad) = cells.iter().find(|c| c.0 >= count) {
            return Err(ConditionError::CodeOutOfRange { code: bad.0, count });
        }
        Ok(PlanMatrix {
            plans,
            trials,
            cells,
            variables,
        })
    }

    pub fn from_rows(rows: Vec<Vec<ConditionCode>>, variables: VariableSet) -> Result<Self, ConditionError> {
        let plans = rows.len();
        let trials = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != trials) {
            return Err(ConditionError::Arity {
                expected: trials,
                got: r.len(),
            });
        }
        PlanMatrix::new(plans, trials, rows.into_iter().flatten().collect(), variables)
    }

    pub fn plans(&self) -> usize {
        self.plans
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.plans, self.trials)
    }

    pub fn variables(&self) -> &VariableSet {
        &self.variables
    }

    pub fn cells(&self) -> &[ConditionCode] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> ConditionCode {
        self.cells[row * self.trials + col]
    }

    pub fn row(&self, row: usize) -> &[ConditionCode] {
        &self.cells[row * self.trials..(row + 1) * self.trials]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[ConditionCode]> {
        self.cells.chunks(self.trials.max(1)).take(self.plans)
    }

    /// Level index of variable `var` (index into the variable set) at a cell.
    pub fn level(&self, row: usize, col: usize, var: usize) -> usize {
        self.variables.digit(self.get(row, col), var)
    }

    /// Same matrix expressed over another ordering or subset of its variables.
    pub fn project(&self, onto: &VariableSet) -> Result<PlanMatrix, ConditionError> {
        let p: Projector = self.variables.projector(onto)?;
        Ok(PlanMatrix {
            plans: self.plans,
            trials: self.trials,
            cells: self.cells.iter().map(|&c| p.apply(c)).collect(),
            variables: onto.clone(),
        })
    }

    /// Whether every cell decodes under the governing variable set.
    pub fn is_valid(&self) -> bool {
        self.cells.len() == self.plans * self.trials
            && self.cells.iter().all(|&c| self.variables.contains_code(c))
    }

    pub fn render_cell(&self, row: usize, col: usize) -> String {
        self.variables
            .render(self.get(row, col))
            .expect("cells are validated on construction")
    }
}

impl fmt::Display for PlanMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.plans {
            let cells: Vec<String> = (0..self.trials).map(|c| self.render_cell(r, c)).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Base variables of `vs` (compounds split into components), in the order they appear in `declared`.
pub fn declared_order(vs: &VariableSet, declared: &VariableSet) -> Result<VariableSet, ConditionError> {
    let names = vs.base_names();
    let mut picked: Vec<&str> = names.clone();
    picked.sort_by_key(|n| declared.index_of(n).unwrap_or(usize::MAX));
    declared.select(&picked)
}

/// Re-expresses a code over `vs` as a code over `target`, whose variables are the base variables of `vs`.
pub fn flatten_code(code: ConditionCode, vs: &VariableSet, target: &VariableSet) -> Result<ConditionCode, ConditionError> {
    let mut indices = vec![0usize; target.len()];
    for (i, v) in vs.variables().iter().enumerate() {
        let mut digit = vs.digit(code, i);
        for name in v.base_names().iter().rev() {
            let t = target
                .index_of(name)
                .ok_or_else(|| ConditionError::Projection(name.to_string()))?;
            let radix = target.variables()[t].level_count();
            indices[t] = digit % radix;
            digit /= radix;
        }
    }
    target.encode_indices(&indices)
}

impl PlanMatrix {
    /// Same matrix over base variables in declaration order, for display and export.
    pub fn in_declared_order(&self, declared: &VariableSet) -> Result<PlanMatrix, ConditionError> {
        let target = declared_order(&self.variables, declared)?;
        let cells = self
            .cells
            .iter()
            .map(|&c| flatten_code(c, &self.variables, &target))
            .collect::<Result<Vec<_>, _>>()?;
        PlanMatrix::new(self.plans, self.trials, cells, target)
    }
}
