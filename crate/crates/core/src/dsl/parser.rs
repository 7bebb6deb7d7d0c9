use super::lexer::{tokenize, Token, TokenKind};
use crate::ast::{AssignDirective, DesignAst, DesignBinding, Method, Program, UnitsBinding, UnitsSpec, VarRef};
use crate::error::{ConditionError, ParseError, ParseErrorKind};
use crate::variable::{Variable, VariableSet};

/// Parses a `.pln` source into a [`Program`].
pub fn parse(source: &str) -> Result<Program, ParseError> {
    Parser {
        tokens: tokenize(source)?,
        pos: 0,
        variables: Vec::new(),
        designs: Vec::new(),
        units: Vec::new(),
        assign: None,
    }
    .program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    variables: Vec<Variable>,
    designs: Vec<DesignBinding>,
    units: Vec<UnitsBinding>,
    assign: Option<(AssignDirective, usize, usize)>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &TokenKind {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, tok: &Token, kind: ParseErrorKind, msg: impl Into<String>) -> ParseError {
        ParseError::new(kind, tok.line, tok.column, msg)
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let tok = self.peek();
        self.error_at(
            tok,
            ParseErrorKind::Syntax,
            format!("expected {expected}, found {}", tok.kind.describe()),
        )
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<Token> {
        if self.peek().kind == kind {
            Ok(self.next())
        } else {
            Err(self.unexpected(&kind.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Token)> {
        match &self.peek().kind {
            TokenKind::Ident(s) => {
                let s = s.clone();
                Ok((s, self.next()))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<Token> {
        match &self.peek().kind {
            TokenKind::Ident(s) if s == kw => Ok(self.next()),
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    fn int(&mut self, what: &str) -> PResult<(u64, Token)> {
        match self.peek().kind {
            TokenKind::Int(n) => Ok((n, self.next())),
            _ => Err(self.unexpected(what)),
        }
    }

    fn positive(&mut self, what: &str) -> PResult<u64> {
        let (n, tok) = self.int(what)?;
        if n == 0 {
            return Err(self.error_at(&tok, ParseErrorKind::Arity, format!("{what} must be positive")));
        }
        Ok(n)
    }

    fn program(mut self) -> PResult<Program> {
        loop {
            let tok = self.peek().clone();
            match &tok.kind {
                TokenKind::Eof => break,
                TokenKind::Ident(kw) => match kw.as_str() {
                    "variable" => self.vardecl()?,
                    "design" => self.designdecl()?,
                    "units" => self.unitsdecl()?,
                    "assign" => self.assigndecl()?,
                    other => {
                        return Err(self.error_at(
                            &tok,
                            ParseErrorKind::Syntax,
                            format!("expected `variable`, `design`, `units` or `assign`, found `{other}`"),
                        ))
                    }
                },
                _ => return Err(self.unexpected("a statement")),
            }
        }
        let eof = self.peek().clone();
        let (assign, ..) = self.assign.ok_or_else(|| {
            ParseError::new(ParseErrorKind::MissingAssign, eof.line, eof.column, "program has no assign directive")
        })?;
        let variables = VariableSet::new(self.variables).map_err(|e| {
            ParseError::new(ParseErrorKind::DuplicateVariable, eof.line, eof.column, e.to_string())
        })?;
        Ok(Program {
            variables,
            designs: self.designs,
            units: self.units,
            assign,
        })
    }

    fn vardecl(&mut self) -> PResult<()> {
        self.keyword("variable")?;
        let (name, name_tok) = self.ident("variable name")?;
        if self.variables.iter().any(|v| v.name() == name) {
            return Err(self.error_at(
                &name_tok,
                ParseErrorKind::DuplicateVariable,
                format!("variable `{name}` is already declared"),
            ));
        }
        self.expect(TokenKind::LBrace)?;
        let mut levels: Vec<String> = Vec::new();
        loop {
            let tok = self.peek().clone();
            let level = match &tok.kind {
                TokenKind::Ident(s) | TokenKind::Str(s) => s.clone(),
                TokenKind::RBrace if !levels.is_empty() => break,
                _ => return Err(self.unexpected("a level name")),
            };
            self.next();
            if levels.contains(&level) {
                return Err(self.error_at(
                    &tok,
                    ParseErrorKind::DuplicateLevel,
                    format!("level `{level}` repeated in variable `{name}`"),
                ));
            }
            levels.push(level);
        }
        self.expect(TokenKind::RBrace)?;
        let var = Variable::new(name, levels).expect("levels checked above");
        self.variables.push(var);
        Ok(())
    }

    fn check_fresh_name(&self, name: &str, tok: &Token) -> PResult<()> {
        if self.designs.iter().any(|d| d.name == name) || self.units.iter().any(|u| u.name == name) {
            return Err(self.error_at(tok, ParseErrorKind::DuplicateName, format!("`{name}` is already bound")));
        }
        Ok(())
    }

    fn designdecl(&mut self) -> PResult<()> {
        self.keyword("design")?;
        let (name, tok) = self.ident("design name")?;
        self.check_fresh_name(&name, &tok)?;
        self.expect(TokenKind::Equals)?;
        let design = self.designexp()?;
        self.designs.push(DesignBinding { name, design });
        Ok(())
    }

    fn starts_designexp(&self) -> bool {
        matches!(self.peek_at(0), TokenKind::Ident(s) if matches!(s.as_str(), "design" | "cross" | "nest"))
            && *self.peek_at(1) == TokenKind::LParen
    }

    fn designexp(&mut self) -> PResult<DesignAst> {
        if !self.starts_designexp() {
            return Err(self.unexpected("`design()`, `cross(...)` or `nest(...)`"));
        }
        let (head, _) = self.ident("design expression")?;
        self.expect(TokenKind::LParen)?;
        let mut ast = match head.as_str() {
            "design" => DesignAst::Empty,
            _ => {
                let a = self.design_ref()?;
                self.expect(TokenKind::Comma)?;
                let b = self.design_ref()?;
                if head == "cross" {
                    DesignAst::cross(a, b)
                } else {
                    DesignAst::nest(a, b)
                }
            }
        };
        self.expect(TokenKind::RParen)?;
        while self.peek().kind == TokenKind::Dot {
            self.next();
            let method = self.method()?;
            ast = ast.with(method);
        }
        Ok(ast)
    }

    fn design_ref(&mut self) -> PResult<DesignAst> {
        if self.starts_designexp() {
            return self.designexp();
        }
        let (name, tok) = self.ident("design name or expression")?;
        if !self.designs.iter().any(|d| d.name == name) {
            return Err(self.error_at(&tok, ParseErrorKind::UnknownIdentifier, format!("unknown design `{name}`")));
        }
        Ok(DesignAst::Ref(name))
    }

    fn variable(&self, name: &str, tok: &Token) -> PResult<&Variable> {
        self.variables
            .iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| self.error_at(tok, ParseErrorKind::UnknownIdentifier, format!("unknown variable `{name}`")))
    }

    fn variable_list(&mut self) -> PResult<Vec<String>> {
        let open = self.peek().clone();
        let mut names = Vec::new();
        loop {
            let (name, tok) = self.ident("variable name")?;
            self.variable(&name, &tok)?;
            if names.contains(&name) {
                return Err(self.error_at(&tok, ParseErrorKind::Arity, format!("`{name}` listed twice in multifact")));
            }
            names.push(name);
            if self.peek().kind != TokenKind::Comma {
                break;
            }
            self.next();
        }
        if names.len() < 2 {
            return Err(self.error_at(&open, ParseErrorKind::Arity, "multifact needs at least two variables"));
        }
        Ok(names)
    }

    fn varexp(&mut self) -> PResult<VarRef> {
        if matches!(self.peek_at(0), TokenKind::Ident(s) if s == "multifact") && *self.peek_at(1) == TokenKind::LParen
        {
            self.next();
            self.next();
            let names = self.variable_list()?;
            self.expect(TokenKind::RParen)?;
            return Ok(VarRef::Multifact(names));
        }
        let (name, tok) = self.ident("variable")?;
        self.variable(&name, &tok)?;
        Ok(VarRef::Named(name))
    }

    fn compound_of(&self, var: &VarRef) -> Result<Variable, ConditionError> {
        match var {
            VarRef::Named(n) => Ok(self.variables.iter().find(|v| v.name() == n).cloned().expect("checked")),
            VarRef::Multifact(ns) => {
                let parts: Vec<&Variable> = ns
                    .iter()
                    .map(|n| self.variables.iter().find(|v| v.name() == n).expect("checked"))
                    .collect();
                Variable::compound(&parts)
            }
        }
    }

    fn method(&mut self) -> PResult<Method> {
        let (name, tok) = self.ident("method name")?;
        self.expect(TokenKind::LParen)?;
        let method = match name.as_str() {
            "counterbalance" => Method::Counterbalance(self.varexp()?),
            "within_subjects" => Method::WithinSubjects(self.varexp()?),
            "between_subjects" => Method::BetweenSubjects(self.varexp()?),
            "limit_plans" => Method::LimitPlans(self.positive("plan limit")?),
            "num_trials" => Method::NumTrials(self.positive("trial count")?),
            "start_with" => {
                let var = self.varexp()?;
                self.expect(TokenKind::Comma)?;
                let ltok = self.peek().clone();
                let level = match &ltok.kind {
                    TokenKind::Ident(s) | TokenKind::Str(s) => s.clone(),
                    _ => return Err(self.unexpected("a level name")),
                };
                self.next();
                let v = self
                    .compound_of(&var)
                    .map_err(|e| self.error_at(&ltok, ParseErrorKind::Arity, e.to_string()))?;
                if v.level_index(&level).is_none() {
                    return Err(self.error_at(
                        &ltok,
                        ParseErrorKind::UnknownIdentifier,
                        format!("`{level}` is not a level of `{}`", v.name()),
                    ));
                }
                Method::StartWith(var, level)
            }
            "multifact" => Method::Multifact(self.variable_list()?),
            other => {
                return Err(self.error_at(&tok, ParseErrorKind::UnknownIdentifier, format!("unknown method `{other}`")))
            }
        };
        if self.peek().kind != TokenKind::RParen {
            let t = self.peek().clone();
            return Err(self.error_at(
                &t,
                ParseErrorKind::Arity,
                format!("too many arguments to `{name}`, found {}", t.kind.describe()),
            ));
        }
        self.next();
        Ok(method)
    }

    fn unitsdecl(&mut self) -> PResult<()> {
        self.keyword("units")?;
        let (name, tok) = self.ident("units name")?;
        self.check_fresh_name(&name, &tok)?;
        self.expect(TokenKind::Equals)?;
        let (head, head_tok) = self.ident("`units(...)` or `clusters(...)`")?;
        self.expect(TokenKind::LParen)?;
        let units = match head.as_str() {
            "units" => UnitsSpec::Units(self.positive("unit count")?),
            "clusters" => {
                let k = self.positive("cluster count")?;
                self.expect(TokenKind::Comma)?;
                let (inner, inner_tok) = self.ident("`units(...)`")?;
                if inner == "clusters" {
                    return Err(self.error_at(
                        &inner_tok,
                        ParseErrorKind::InvalidUnits,
                        "clusters of clusters are not supported",
                    ));
                }
                if inner != "units" {
                    return Err(self.error_at(&inner_tok, ParseErrorKind::Syntax, "expected `units(...)`"));
                }
                self.expect(TokenKind::LParen)?;
                let m = self.positive("unit count")?;
                self.expect(TokenKind::RParen)?;
                UnitsSpec::Clusters(k, m)
            }
            _ => {
                return Err(self.error_at(
                    &head_tok,
                    ParseErrorKind::Syntax,
                    format!("expected `units` or `clusters`, found `{head}`"),
                ))
            }
        };
        self.expect(TokenKind::RParen)?;
        self.units.push(UnitsBinding { name, units });
        Ok(())
    }

    fn assigndecl(&mut self) -> PResult<()> {
        let kw = self.keyword("assign")?;
        if let Some((_, line, column)) = &self.assign {
            return Err(self.error_at(
                &kw,
                ParseErrorKind::DuplicateAssign,
                format!("second assign directive (first at {line}:{column})"),
            ));
        }
        let (units, utok) = self.ident("units name")?;
        if !self.units.iter().any(|u| u.name == units) {
            return Err(self.error_at(&utok, ParseErrorKind::UnknownIdentifier, format!("unknown units `{units}`")));
        }
        self.keyword("to")?;
        let (design, dtok) = self.ident("design name")?;
        if !self.designs.iter().any(|d| d.name == design) {
            return Err(self.error_at(&dtok, ParseErrorKind::UnknownIdentifier, format!("unknown design `{design}`")));
        }
        let seed = if matches!(self.peek_at(0), TokenKind::Ident(s) if s == "seed") {
            self.next();
            Some(self.int("seed")?.0)
        } else {
            None
        };
        self.assign = Some((AssignDirective { units, design, seed }, kw.line, kw.column));
        Ok(())
    }
}
