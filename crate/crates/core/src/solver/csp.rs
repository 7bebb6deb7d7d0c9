//! Backtracking search over matrix cells.
//!
//! Cells are filled in row-major order. Each cell's candidate values are
//! either all condition codes ascending (enumeration) or a seeded shuffle of
//! them (solving). A value is accepted when it keeps every constraint touching
//! the cell satisfiable: per-row/column level counts stay under their caps,
//! equality groups agree, replicated cells match their source, and completed
//! rows stay distinct.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{Constraint, ConstraintKind, Shape};
use crate::variable::{ConditionCode, VariableSet};

#[derive(Debug, Clone, Copy)]
enum Inc {
    Cap(usize),
    Eq(usize),
    Fixed { var: usize, level: usize, family: u8 },
    Mirror { other: usize, vars: usize, family: u8 },
    Distinct { group: usize, row: usize },
}

struct CapGroup {
    var: usize,
    cap: u32,
    counts: Vec<u32>,
    family: u8,
}

struct EqGroup {
    vars: Vec<usize>,
    anchor: Option<u64>,
    assigned: u32,
    family: u8,
}

struct DistinctGroup {
    vars: Vec<usize>,
    rows: Vec<Vec<usize>>,
    seen: HashSet<Vec<u32>>,
}

const FAMILIES: [&str; 8] = [
    "RowBalance",
    "RowNoRepeat",
    "ColumnBalance",
    "FixedFirstColumn",
    "DistinctRows",
    "ConstantInRow",
    "BlockConstant",
    "Replicate",
];

fn family_id(c: &Constraint) -> u8 {
    FAMILIES.iter().position(|f| *f == c.family()).unwrap_or(0) as u8
}

pub(crate) enum Outcome {
    Found,
    Exhausted,
    Budget,
    Timeout,
}

pub(crate) struct Search {
    shape: Shape,
    vs: VariableSet,
    strides: Vec<u64>,
    radices: Vec<u64>,
    count: u64,
    incidence: Vec<Vec<Inc>>,
    caps: Vec<CapGroup>,
    eqs: Vec<EqGroup>,
    distinct: Vec<DistinctGroup>,
    mirror_vars: Vec<Vec<usize>>,
    values: Vec<Option<u64>>,
    candidates: Vec<Vec<u64>>,
    next: Vec<usize>,
    generated: Vec<bool>,
    depth: usize,
    resume: bool,
    rng: Option<ChaCha8Rng>,
    rejections: [u64; 8],
    pub nodes: u64,
}

impl Search {
    pub fn new(shape: Shape, vs: &VariableSet, constraints: &[Constraint], rng: Option<ChaCha8Rng>) -> Self {
        let cells = shape.cells();
        let index = |(r, c): (usize, usize)| r * shape.trials + c;
        let mut s = Search {
            shape,
            vs: vs.clone(),
            strides: (0..vs.len()).map(|i| vs.stride(i)).collect(),
            radices: vs.radices().into_iter().map(|r| r as u64).collect(),
            count: vs.condition_count(),
            incidence: vec![Vec::new(); cells],
            caps: Vec::new(),
            eqs: Vec::new(),
            distinct: Vec::new(),
            mirror_vars: Vec::new(),
            values: vec![None; cells],
            candidates: vec![Vec::new(); cells],
            next: vec![0; cells],
            generated: vec![false; cells],
            depth: 0,
            resume: false,
            rng,
            rejections: [0; 8],
            nodes: 0,
        };
        for c in constraints {
            let sc = &c.scope;
            let family = family_id(c);
            let levels = |v: usize| vs.variables()[v].level_count() as u32;
            match &c.kind {
                ConstraintKind::RowBalance { var } | ConstraintKind::RowNoRepeat { var } => {
                    let cap = match c.kind {
                        ConstraintKind::RowNoRepeat { .. } => 1,
                        _ => (sc.cols as u32 / levels(*var)).max(1),
                    };
                    for i in 0..sc.rows {
                        s.caps.push(CapGroup {
                            var: *var,
                            cap,
                            counts: vec![0; levels(*var) as usize],
                            family,
                        });
                        let g = s.caps.len() - 1;
                        for j in 0..sc.cols {
                            s.incidence[index(sc.cell(i, j))].push(Inc::Cap(g));
                        }
                    }
                }
                ConstraintKind::ColumnBalance { var } => {
                    let cap = (sc.rows as u32 / levels(*var)).max(1);
                    for j in 0..sc.cols {
                        s.caps.push(CapGroup {
                            var: *var,
                            cap,
                            counts: vec![0; levels(*var) as usize],
                            family,
                        });
                        let g = s.caps.len() - 1;
                        for i in 0..sc.rows {
                            s.incidence[index(sc.cell(i, j))].push(Inc::Cap(g));
                        }
                    }
                }
                ConstraintKind::FixedFirstColumn { var, level } => {
                    if sc.cols > 0 {
                        for i in 0..sc.rows {
                            s.incidence[index(sc.cell(i, 0))].push(Inc::Fixed {
                                var: *var,
                                level: *level,
                                family,
                            });
                        }
                    }
                }
                ConstraintKind::ConstantInRow { var } => {
                    for i in 0..sc.rows {
                        s.eqs.push(EqGroup {
                            vars: vec![*var],
                            anchor: None,
                            assigned: 0,
                            family,
                        });
                        let g = s.eqs.len() - 1;
                        for j in 0..sc.cols {
                            s.incidence[index(sc.cell(i, j))].push(Inc::Eq(g));
                        }
                    }
                }
                ConstraintKind::BlockConstant { vars } => {
                    s.eqs.push(EqGroup {
                        vars: vars.clone(),
                        anchor: None,
                        assigned: 0,
                        family,
                    });
                    let g = s.eqs.len() - 1;
                    for cell in sc.cells() {
                        s.incidence[index(cell)].push(Inc::Eq(g));
                    }
                }
                ConstraintKind::Replicate { vars, source } => {
                    s.mirror_vars.push(vars.clone());
                    let mv = s.mirror_vars.len() - 1;
                    for i in 0..sc.rows {
                        for j in 0..sc.cols {
                            let (a, b) = (index(sc.cell(i, j)), index(source.cell(i, j)));
                            if a != b {
                                s.incidence[a].push(Inc::Mirror { other: b, vars: mv, family });
                                s.incidence[b].push(Inc::Mirror { other: a, vars: mv, family });
                            }
                        }
                    }
                }
                ConstraintKind::DistinctRows { vars } => {
                    let rows: Vec<Vec<usize>> = (0..sc.rows)
                        .map(|i| (0..sc.cols).map(|j| index(sc.cell(i, j))).collect())
                        .collect();
                    s.distinct.push(DistinctGroup {
                        vars: vars.clone(),
                        rows: rows.clone(),
                        seen: HashSet::new(),
                    });
                    let g = s.distinct.len() - 1;
                    for (i, row) in rows.iter().enumerate() {
                        if let Some(&last) = row.iter().max() {
                            s.incidence[last].push(Inc::Distinct { group: g, row: i });
                        }
                    }
                }
            }
        }
        s
    }

    fn digit(&self, code: u64, var: usize) -> usize {
        ((code / self.strides[var]) % self.radices[var]) as usize
    }

    fn agree(&self, a: u64, b: u64, vars: &[usize]) -> bool {
        vars.iter().all(|&v| self.digit(a, v) == self.digit(b, v))
    }

    fn row_key(&self, group: usize, row: usize, cell: usize, code: u64) -> Vec<u32> {
        let g = &self.distinct[group];
        g.rows[row]
            .iter()
            .flat_map(|&c| {
                let value = if c == cell { code } else { self.values[c].expect("earlier cells are assigned") };
                g.vars.iter().map(move |&v| self.digit(value, v) as u32)
            })
            .collect()
    }

    /// Returns the rejecting constraint family, if any.
    fn conflict(&self, cell: usize, code: u64) -> Option<u8> {
        for inc in &self.incidence[cell] {
            match *inc {
                Inc::Cap(g) => {
                    let grp = &self.caps[g];
                    if grp.counts[self.digit(code, grp.var)] >= grp.cap {
                        return Some(grp.family);
                    }
                }
                Inc::Eq(g) => {
                    let grp = &self.eqs[g];
                    if let Some(anchor) = grp.anchor {
                        if !self.agree(anchor, code, &grp.vars) {
                            return Some(grp.family);
                        }
                    }
                }
                Inc::Fixed { var, level, family } => {
                    if self.digit(code, var) != level {
                        return Some(family);
                    }
                }
                Inc::Mirror { other, vars, family } => {
                    if let Some(o) = self.values[other] {
                        if !self.agree(o, code, &self.mirror_vars[vars]) {
                            return Some(family);
                        }
                    }
                }
                Inc::Distinct { group, row } => {
                    let key = self.row_key(group, row, cell, code);
                    if self.distinct[group].seen.contains(&key) {
                        return Some(4);
                    }
                }
            }
        }
        None
    }

    fn assign(&mut self, cell: usize, code: u64) {
        for k in 0..self.incidence[cell].len() {
            match self.incidence[cell][k] {
                Inc::Cap(g) => {
                    let d = self.digit(code, self.caps[g].var);
                    self.caps[g].counts[d] += 1;
                }
                Inc::Eq(g) => {
                    let grp = &mut self.eqs[g];
                    grp.assigned += 1;
                    if grp.anchor.is_none() {
                        grp.anchor = Some(code);
                    }
                }
                Inc::Distinct { group, row } => {
                    let key = self.row_key(group, row, cell, code);
                    self.distinct[group].seen.insert(key);
                }
                Inc::Fixed { .. } | Inc::Mirror { .. } => {}
            }
        }
        self.values[cell] = Some(code);
    }

    fn unassign(&mut self, cell: usize) {
        let code = self.values[cell].expect("only assigned cells are undone");
        for k in 0..self.incidence[cell].len() {
            match self.incidence[cell][k] {
                Inc::Cap(g) => {
                    let d = self.digit(code, self.caps[g].var);
                    self.caps[g].counts[d] -= 1;
                }
                Inc::Eq(g) => {
                    let grp = &mut self.eqs[g];
                    grp.assigned -= 1;
                    if grp.assigned == 0 {
                        grp.anchor = None;
                    }
                }
                Inc::Distinct { group, row } => {
                    let key = self.row_key(group, row, cell, code);
                    self.distinct[group].seen.remove(&key);
                }
                Inc::Fixed { .. } | Inc::Mirror { .. } => {}
            }
        }
        self.values[cell] = None;
    }

    fn generate(&mut self, cell: usize) {
        let mut cands: Vec<u64> = (0..self.count).collect();
        if let Some(rng) = self.rng.as_mut() {
            cands.shuffle(rng);
        }
        self.candidates[cell] = cands;
        self.next[cell] = 0;
        self.generated[cell] = true;
    }

    /// Runs until the next complete assignment, exhaustion, or a limit.
    pub fn run(&mut self, budget: Option<u64>, deadline: Option<Instant>) -> Outcome {
        let n = self.values.len();
        let start = self.nodes;
        loop {
            if self.resume {
                self.resume = false;
                if self.depth == 0 {
                    return Outcome::Exhausted;
                }
                self.depth -= 1;
                self.unassign(self.depth);
            } else if self.depth == n {
                self.resume = true;
                return Outcome::Found;
            }
            if budget.is_some_and(|b| self.nodes - start >= b) {
                return Outcome::Budget;
            }
            if self.nodes & 0x3ff == 0 && deadline.is_some_and(|d| Instant::now() >= d) {
                return Outcome::Timeout;
            }
            let d = self.depth;
            if !self.generated[d] {
                self.generate(d);
            }
            let mut placed = false;
            while self.next[d] < self.candidates[d].len() {
                let code = self.candidates[d][self.next[d]];
                self.next[d] += 1;
                self.nodes += 1;
                match self.conflict(d, code) {
                    None => {
                        self.assign(d, code);
                        placed = true;
                        break;
                    }
                    Some(f) => self.rejections[f as usize] += 1,
                }
            }
            if placed {
                self.depth += 1;
                continue;
            }
            self.generated[d] = false;
            if d == 0 {
                return Outcome::Exhausted;
            }
            self.depth -= 1;
            self.unassign(self.depth);
        }
    }

    pub fn cells(&self) -> Vec<ConditionCode> {
        self.values
            .iter()
            .map(|v| ConditionCode(v.expect("complete assignment")))
            .collect()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn variables(&self) -> &VariableSet {
        &self.vs
    }

    /// Constraint family that rejected the most candidate values.
    pub fn hardest_family(&self) -> &'static str {
        let (i, _) = self
            .rejections
            .iter()
            .enumerate()
            .max_by_key(|(i, r)| (**r, std::cmp::Reverse(*i)))
            .expect("non-empty");
        FAMILIES[i]
    }
}
