//! Experimental variables and the mixed-radix condition encoding.
//!
//! A condition assigns one level to every variable of a [`VariableSet`]. It is
//! stored as a single integer in `0..condition_count()`, with the first
//! variable as the most significant digit, so numeric order on codes is the
//! lexicographic order on level tuples (in declaration order).

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::error::ConditionError;

/// Upper bound on the number of conditions a variable set may span.
pub const MAX_CONDITIONS: u64 = 1 << 40;

/// A named factor with an ordered list of levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Variable {
    name: String,
    levels: Vec<String>,
    /// Names of the base variables fused into this one; empty for a declared variable.
    components: Vec<String>,
}

impl Variable {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Result<Self, ConditionError> {
        let name = name.into();
        let levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        if levels.is_empty() {
            return Err(ConditionError::NoLevels(name));
        }
        let mut seen = HashSet::new();
        for level in &levels {
            if !seen.insert(level.as_str()) {
                return Err(ConditionError::DuplicateLevel {
                    variable: name,
                    level: level.clone(),
                });
            }
        }
        Ok(Variable {
            name,
            levels,
            components: Vec::new(),
        })
    }

    /// Flattens two or more variables into one synthetic variable whose levels
    /// are the component level names joined with `-`, in mixed-radix order.
    pub fn compound(components: &[&Variable]) -> Result<Self, ConditionError> {
        if components.len() < 2 {
            return Err(ConditionError::Arity {
                expected: 2,
                got: components.len(),
            });
        }
        let mut base = Vec::new();
        let mut seen = HashSet::new();
        for c in components {
            for b in c.base_names() {
                if !seen.insert(b.to_string()) {
                    return Err(ConditionError::DuplicateVariable(b.to_string()));
                }
                base.push(b.to_string());
            }
        }
        let mut levels = vec![String::new()];
        for c in components {
            let mut next = Vec::with_capacity(levels.len() * c.levels.len());
            for prefix in &levels {
                for l in &c.levels {
                    if prefix.is_empty() {
                        next.push(l.clone());
                    } else {
                        next.push(format!("{prefix}-{l}"));
                    }
                }
            }
            levels = next;
        }
        let name = components
            .iter()
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>()
            .join("-");
        // joined names can collide, e.g. ("a-b", "c") against ("a", "b-c")
        let mut seen_levels = HashSet::new();
        for l in &levels {
            if !seen_levels.insert(l.as_str()) {
                return Err(ConditionError::DuplicateLevel {
                    variable: name,
                    level: l.clone(),
                });
            }
        }
        Ok(Variable {
            name,
            levels,
            components: base,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn is_compound(&self) -> bool {
        !self.components.is_empty()
    }

    /// Declared variables this one is made of (itself, unless compound).
    pub fn base_names(&self) -> Vec<&str> {
        if self.components.is_empty() {
            vec![self.name.as_str()]
        } else {
            self.components.iter().map(String::as_str).collect()
        }
    }
}

/// One condition over a [`VariableSet`], as a mixed-radix integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ConditionCode(pub u64);

impl fmt::Display for ConditionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered collection of variables defining a condition space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize)]
pub struct VariableSet {
    variables: Vec<Variable>,
}

impl VariableSet {
    pub fn new(variables: Vec<Variable>) -> Result<Self, ConditionError> {
        let mut names = HashSet::new();
        let mut base = HashSet::new();
        let mut count: u64 = 1;
        for v in &variables {
            if !names.insert(v.name.as_str()) {
                return Err(ConditionError::DuplicateVariable(v.name.clone()));
            }
            for b in v.base_names() {
                if !base.insert(b) {
                    return Err(ConditionError::VariableOverlap(b.to_string()));
                }
            }
            count = count
                .checked_mul(v.level_count() as u64)
                .filter(|c| *c <= MAX_CONDITIONS)
                .ok_or(ConditionError::TooManyConditions)?;
        }
        Ok(VariableSet { variables })
    }

    pub fn empty() -> Self {
        VariableSet::default()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn radices(&self) -> Vec<usize> {
        self.variables.iter().map(Variable::level_count).collect()
    }

    /// Product of the radices.
    pub fn condition_count(&self) -> u64 {
        self.variables
            .iter()
            .map(|v| v.level_count() as u64)
            .product()
    }

    /// Place value of the digit for variable `index`.
    pub fn stride(&self, index: usize) -> u64 {
        self.variables[index + 1..]
            .iter()
            .map(|v| v.level_count() as u64)
            .product()
    }

    pub fn base_names(&self) -> Vec<&str> {
        self.variables.iter().flat_map(Variable::base_names).collect()
    }

    pub fn contains_code(&self, code: ConditionCode) -> bool {
        code.0 < self.condition_count()
    }

    pub fn encode_indices(&self, indices: &[usize]) -> Result<ConditionCode, ConditionError> {
        if indices.len() != self.variables.len() {
            return Err(ConditionError::Arity {
                expected: self.variables.len(),
                got: indices.len(),
            });
        }
        let mut code = 0u64;
        for (v, &i) in self.variables.iter().zip(indices) {
            if i >= v.level_count() {
                return Err(ConditionError::InvalidLevel {
                    variable: v.name.clone(),
                    level: i.to_string(),
                });
            }
            code = code * v.level_count() as u64 + i as u64;
        }
        Ok(ConditionCode(code))
    }

    pub fn encode<S: AsRef<str>>(&self, levels: &[S]) -> Result<ConditionCode, ConditionError> {
        if levels.len() != self.variables.len() {
            return Err(ConditionError::Arity {
                expected: self.variables.len(),
                got: levels.len(),
            });
        }
        let mut indices = Vec::with_capacity(levels.len());
        for (v, l) in self.variables.iter().zip(levels) {
            let l = l.as_ref();
            let i = v.level_index(l).ok_or_else(|| ConditionError::InvalidLevel {
                variable: v.name.clone(),
                level: l.to_string(),
            })?;
            indices.push(i);
        }
        self.encode_indices(&indices)
    }

    /// Level index of variable `index` within `code`.
    pub fn digit(&self, code: ConditionCode, index: usize) -> usize {
        ((code.0 / self.stride(index)) % self.variables[index].level_count() as u64) as usize
    }

    pub fn decode(&self, code: ConditionCode) -> Result<Vec<usize>, ConditionError> {
        let count = self.condition_count();
        if code.0 >= count {
            return Err(ConditionError::CodeOutOfRange {
                code: code.0,
                count,
            });
        }
        let mut rest = code.0;
        let mut out = vec![0; self.variables.len()];
        for (i, v) in self.variables.iter().enumerate().rev() {
            let r = v.level_count() as u64;
            out[i] = (rest % r) as usize;
            rest /= r;
        }
        Ok(out)
    }

    pub fn decode_names(&self, code: ConditionCode) -> Result<Vec<&str>, ConditionError> {
        Ok(self
            .decode(code)?
            .into_iter()
            .zip(&self.variables)
            .map(|(i, v)| v.levels[i].as_str())
            .collect())
    }

    /// Level names joined with `-` in this set's variable order.
    pub fn render(&self, code: ConditionCode) -> Result<String, ConditionError> {
        Ok(self.decode_names(code)?.join("-"))
    }

    /// Sub-set of variables picked by name, in the order given.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<VariableSet, ConditionError> {
        let mut vars = Vec::with_capacity(names.len());
        for n in names {
            let v = self
                .get(n.as_ref())
                .ok_or_else(|| ConditionError::Projection(n.as_ref().to_string()))?;
            vars.push(v.clone());
        }
        VariableSet::new(vars)
    }

    /// Concatenation of two disjoint sets (`self` first).
    pub fn union(&self, other: &VariableSet) -> Result<VariableSet, ConditionError> {
        let mine: HashSet<&str> = self.base_names().into_iter().collect();
        if let Some(b) = other.base_names().into_iter().find(|b| mine.contains(b)) {
            return Err(ConditionError::VariableOverlap(b.to_string()));
        }
        let mut vars = self.variables.clone();
        vars.extend(other.variables.iter().cloned());
        VariableSet::new(vars)
    }

    pub fn is_disjoint(&self, other: &VariableSet) -> bool {
        let mine: HashSet<&str> = self.base_names().into_iter().collect();
        other.base_names().into_iter().all(|b| !mine.contains(b))
    }

    /// Prepares a reusable projection from this set onto `onto`.
    pub fn projector(&self, onto: &VariableSet) -> Result<Projector, ConditionError> {
        let mut parts = Vec::with_capacity(onto.len());
        for v in &onto.variables {
            let i = self
                .index_of(&v.name)
                .filter(|&i| self.variables[i] == *v)
                .ok_or_else(|| ConditionError::Projection(v.name.clone()))?;
            parts.push((self.stride(i), v.level_count() as u64, onto.stride(parts.len())));
        }
        Ok(Projector { parts })
    }
}

/// Precomputed div/mod arithmetic mapping codes of one set onto a subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projector {
    /// (source stride, radix, target stride) per target variable
    parts: Vec<(u64, u64, u64)>,
}

impl Projector {
    pub fn apply(&self, code: ConditionCode) -> ConditionCode {
        ConditionCode(
            self.parts
                .iter()
                .map(|&(from, radix, to)| (code.0 / from) % radix * to)
                .sum(),
        )
    }
}

/// Encodes a level tuple (one level name per variable, in set order).
pub fn encode_condition<S: AsRef<str>>(
    levels: &[S],
    vs: &VariableSet,
) -> Result<ConditionCode, ConditionError> {
    vs.encode(levels)
}

/// Restricts a condition to the variables of `onto`, which must be a subset of `from`.
pub fn project(
    code: ConditionCode,
    from: &VariableSet,
    onto: &VariableSet,
) -> Result<ConditionCode, ConditionError> {
    if !from.contains_code(code) {
        return Err(ConditionError::CodeOutOfRange {
            code: code.0,
            count: from.condition_count(),
        });
    }
    Ok(from.projector(onto)?.apply(code))
}

/// Joins two conditions over disjoint sets; the result lives in `vs_a.union(vs_b)`.
pub fn combine(
    a: ConditionCode,
    vs_a: &VariableSet,
    b: ConditionCode,
    vs_b: &VariableSet,
) -> Result<(ConditionCode, VariableSet), ConditionError> {
    let union = vs_a.union(vs_b)?;
    for (code, vs) in [(a, vs_a), (b, vs_b)] {
        if !vs.contains_code(code) {
            return Err(ConditionError::CodeOutOfRange {
                code: code.0,
                count: vs.condition_count(),
            });
        }
    }
    Ok((combine_codes(a, b, vs_b), union))
}

/// Raw form of [`combine`] when the union set is already known.
pub fn combine_codes(a: ConditionCode, b: ConditionCode, vs_b: &VariableSet) -> ConditionCode {
    ConditionCode(a.0 * vs_b.condition_count() + b.0)
}
