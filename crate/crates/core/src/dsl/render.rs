use std::fmt::Write;

use super::lexer::is_ident;
use crate::ast::{DesignAst, Method, Program, UnitsSpec, VarRef};

fn level(s: &str) -> String {
    if is_ident(s) {
        s.to_string()
    } else {
        let escaped = s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
        format!("\"{escaped}\"")
    }
}

fn var(v: &VarRef) -> String {
    match v {
        VarRef::Named(n) => n.clone(),
        VarRef::Multifact(ns) => format!("multifact({})", ns.join(", ")),
    }
}

fn method(m: &Method) -> String {
    let args = match m {
        Method::Counterbalance(v) | Method::WithinSubjects(v) | Method::BetweenSubjects(v) => var(v),
        Method::LimitPlans(k) | Method::NumTrials(k) => k.to_string(),
        Method::StartWith(v, l) => format!("{}, {}", var(v), level(l)),
        Method::Multifact(ns) => ns.join(", "),
    };
    format!("{}({args})", m.keyword())
}

/// Renders a design expression in source syntax.
pub fn render_design(ast: &DesignAst) -> String {
    match ast {
        DesignAst::Empty => "design()".to_string(),
        DesignAst::Ref(name) => name.clone(),
        DesignAst::Cross(l, r) => format!("cross({}, {})", render_design(l), render_design(r)),
        DesignAst::Nest { inner, outer } => format!("nest({}, {})", render_design(inner), render_design(outer)),
        DesignAst::Method { base, method: m } => format!("{}.{}", render_design(base), method(m)),
    }
}

/// Renders a program back to source; `parse(render(p)) == p`.
pub fn render(program: &Program) -> String {
    let mut out = String::new();
    for v in program.variables.variables() {
        let levels: Vec<String> = v.levels().iter().map(|l| level(l)).collect();
        writeln!(out, "variable {} {{ {} }}", v.name(), levels.join(" ")).unwrap();
    }
    if !program.designs.is_empty() {
        out.push('\n');
    }
    for d in &program.designs {
        writeln!(out, "design {} = {}", d.name, render_design(&d.design)).unwrap();
    }
    out.push('\n');
    for u in &program.units {
        let spec = match u.units {
            UnitsSpec::Units(n) => format!("units({n})"),
            UnitsSpec::Clusters(k, m) => format!("clusters({k}, units({m}))"),
        };
        writeln!(out, "units {} = {spec}", u.name).unwrap();
    }
    let a = &program.assign;
    write!(out, "assign {} to {}", a.units, a.design).unwrap();
    if let Some(seed) = a.seed {
        write!(out, " seed {seed}").unwrap();
    }
    out.push('\n');
    out
}
