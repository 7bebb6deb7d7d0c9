//! Typed program produced by the design-language parser.

use serde::Serialize;

use crate::variable::VariableSet;

/// Reference to a variable in a method argument.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum VarRef {
    Named(String),
    /// `multifact(a, b, ...)`: the listed variables fused into one compound factor.
    Multifact(Vec<String>),
}

impl VarRef {
    pub fn named(name: impl Into<String>) -> Self {
        VarRef::Named(name.into())
    }

    /// Declared variable names referenced.
    pub fn names(&self) -> Vec<&str> {
        match self {
            VarRef::Named(n) => vec![n.as_str()],
            VarRef::Multifact(ns) => ns.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    Counterbalance(VarRef),
    WithinSubjects(VarRef),
    BetweenSubjects(VarRef),
    LimitPlans(u64),
    NumTrials(u64),
    StartWith(VarRef, String),
    /// Fuses the listed variables for the rest of the chain: later methods
    /// naming any component act on the compound.
    Multifact(Vec<String>),
}

impl Method {
    pub fn keyword(&self) -> &'static str {
        match self {
            Method::Counterbalance(_) => "counterbalance",
            Method::WithinSubjects(_) => "within_subjects",
            Method::BetweenSubjects(_) => "between_subjects",
            Method::LimitPlans(_) => "limit_plans",
            Method::NumTrials(_) => "num_trials",
            Method::StartWith(..) => "start_with",
            Method::Multifact(_) => "multifact",
        }
    }
}

/// Design expression tree. Methods chain onto a base design in source order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum DesignAst {
    /// `design()`
    Empty,
    /// Name of an earlier `design` binding.
    Ref(String),
    Cross(Box<DesignAst>, Box<DesignAst>),
    Nest {
        inner: Box<DesignAst>,
        outer: Box<DesignAst>,
    },
    Method {
        base: Box<DesignAst>,
        method: Method,
    },
}

impl DesignAst {
    pub fn cross(left: DesignAst, right: DesignAst) -> Self {
        DesignAst::Cross(Box::new(left), Box::new(right))
    }

    pub fn nest(inner: DesignAst, outer: DesignAst) -> Self {
        DesignAst::Nest {
            inner: Box::new(inner),
            outer: Box::new(outer),
        }
    }

    /// Appends a method to the chain.
    pub fn with(self, method: Method) -> Self {
        DesignAst::Method {
            base: Box::new(self),
            method,
        }
    }

    pub fn counterbalance(self, var: &str) -> Self {
        self.with(Method::Counterbalance(VarRef::named(var)))
    }

    pub fn within_subjects(self, var: &str) -> Self {
        self.with(Method::WithinSubjects(VarRef::named(var)))
    }

    pub fn between_subjects(self, var: &str) -> Self {
        self.with(Method::BetweenSubjects(VarRef::named(var)))
    }

    pub fn limit_plans(self, k: u64) -> Self {
        self.with(Method::LimitPlans(k))
    }

    pub fn num_trials(self, k: u64) -> Self {
        self.with(Method::NumTrials(k))
    }

    pub fn start_with(self, var: &str, level: &str) -> Self {
        self.with(Method::StartWith(VarRef::named(var), level.to_string()))
    }

    /// Splits a chain into its base expression and methods in application order.
    pub fn unchain(&self) -> (&DesignAst, Vec<&Method>) {
        let mut methods = Vec::new();
        let mut node = self;
        while let DesignAst::Method { base, method } = node {
            methods.push(method);
            node = base;
        }
        methods.reverse();
        (node, methods)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UnitsSpec {
    Units(u64),
    /// `clusters(k, units(m))`: k groups of m members each.
    Clusters(u64, u64),
}

impl UnitsSpec {
    /// Number of assignable units (clusters count as one each).
    pub fn count(&self) -> u64 {
        match *self {
            UnitsSpec::Units(n) => n,
            UnitsSpec::Clusters(k, _) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DesignBinding {
    pub name: String,
    pub design: DesignAst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitsBinding {
    pub name: String,
    pub units: UnitsSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssignDirective {
    pub units: String,
    pub design: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Program {
    pub variables: VariableSet,
    pub designs: Vec<DesignBinding>,
    pub units: Vec<UnitsBinding>,
    pub assign: AssignDirective,
}

impl Program {
    pub fn design(&self, name: &str) -> Option<&DesignAst> {
        self.designs.iter().find(|d| d.name == name).map(|d| &d.design)
    }

    pub fn units_spec(&self, name: &str) -> Option<UnitsSpec> {
        self.units.iter().find(|u| u.name == name).map(|u| u.units)
    }

    /// The design named by the assign directive, with references inlined.
    pub fn assigned_design(&self) -> DesignAst {
        self.expand(&DesignAst::Ref(self.assign.design.clone()))
    }

    pub fn assigned_units(&self) -> UnitsSpec {
        self.units_spec(&self.assign.units)
            .expect("parser resolves the assign directive")
    }

    /// Replaces every `Ref` with the bound expression.
    pub fn expand(&self, ast: &DesignAst) -> DesignAst {
        match ast {
            DesignAst::Empty => DesignAst::Empty,
            DesignAst::Ref(name) => match self.design(name) {
                Some(d) => self.expand(d),
                None => DesignAst::Ref(name.clone()),
            },
            DesignAst::Cross(l, r) => DesignAst::cross(self.expand(l), self.expand(r)),
            DesignAst::Nest { inner, outer } => DesignAst::nest(self.expand(inner), self.expand(outer)),
            DesignAst::Method { base, method } => self.expand(base).with(method.clone()),
        }
    }
}
