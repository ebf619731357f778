//! CPLEX LP text format: writer and a parser for the subset the writer emits
//! (objective, constraints, bounds, binaries), plus common keyword aliases.
//!
//! Every variable is listed in the objective (zero coefficients included) so
//! that variable order survives a round trip.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::program::{Comparison, Program, Sense, VarId, VarKind};
use crate::LpError;

const TERMS_PER_LINE: usize = 8;

fn fmt_num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:?}")
    }
}

fn valid_name_char(c: char, first: bool) -> bool {
    if c.is_ascii_alphabetic() {
        return true;
    }
    let symbol = "_!\"#$%&()/,;?@`'{}|~".contains(c);
    if first {
        symbol
    } else {
        symbol || c.is_ascii_digit() || c == '.'
    }
}

/// Makes `raw` a legal LP identifier. Names starting with `e`/`E` are
/// prefixed so they can never be confused with an exponent.
fn sanitize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len() + 2);
    for (i, c) in raw.chars().enumerate() {
        out.push(if valid_name_char(c, i == 0) { c } else { '_' });
    }
    if out.is_empty() || !valid_name_char(out.chars().next().unwrap(), true) || out.starts_with(['e', 'E']) {
        out.insert_str(0, "v_");
    }
    let lower = out.to_ascii_lowercase();
    if matches!(lower.as_str(), "inf" | "infinity" | "free") {
        out.insert_str(0, "v_");
    }
    out
}

fn unique_names<'a>(raw: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashMap::new();
    raw.enumerate()
        .map(|(i, r)| {
            let mut name = sanitize(r);
            if seen.contains_key(&name) {
                name = format!("{name}_{i}");
            }
            seen.insert(name.clone(), ());
            name
        })
        .collect()
}

fn write_terms(out: &mut String, terms: impl Iterator<Item = (f64, String)>) {
    for (n, (coef, name)) in terms.enumerate() {
        if n > 0 && n % TERMS_PER_LINE == 0 {
            out.push_str("\n   ");
        }
        let (sign, mag) = if coef.is_sign_negative() { ('-', -coef) } else { ('+', coef) };
        let _ = write!(out, " {sign} {} {name}", fmt_num(mag));
    }
}

/// Renders `program` in CPLEX LP format.
pub fn write(program: &Program) -> String {
    let vnames = unique_names(program.variables.iter().map(|v| v.name.as_str()));
    let cnames = unique_names(program.constraints.iter().map(|c| c.name.as_str()));
    let mut out = String::new();
    out.push_str("\\ cpomdp-lp export\n");
    out.push_str(match program.sense {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    write_terms(&mut out, program.objective.iter().zip(&vnames).map(|(&c, n)| (c, n.clone())));
    if program.objective_offset != 0.0 {
        let o = program.objective_offset;
        let _ = write!(out, " {} {}", if o < 0.0 { '-' } else { '+' }, fmt_num(o.abs()));
    }
    out.push_str("\nSubject To\n");
    for (c, name) in program.constraints.iter().zip(&cnames) {
        let _ = write!(out, " {name}:");
        if c.terms.is_empty() {
            // An empty row still needs a variable reference to be legal.
            if let Some(v0) = vnames.first() {
                let _ = write!(out, " + 0.0 {v0}");
            }
        }
        write_terms(&mut out, c.terms.iter().map(|&(v, a)| (a, vnames[v.0].clone())));
        let op = match c.cmp {
            Comparison::Le => "<=",
            Comparison::Ge => ">=",
            Comparison::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", fmt_num(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in program.variables.iter().zip(&vnames) {
        if v.kind == VarKind::Binary {
            continue;
        }
        match (v.lower, v.upper) {
            (l, u) if l == 0.0 && u == f64::INFINITY => {}
            (l, u) if l == f64::NEG_INFINITY && u == f64::INFINITY => {
                let _ = writeln!(out, " {name} free");
            }
            (l, u) if l == u => {
                let _ = writeln!(out, " {name} = {}", fmt_num(l));
            }
            (l, u) => {
                let _ = writeln!(out, " {} <= {name} <= {}", fmt_num(l), fmt_num(u));
            }
        }
    }
    let binaries: Vec<&String> = program
        .variables
        .iter()
        .zip(&vnames)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(TERMS_PER_LINE) {
            out.push(' ');
            out.push_str(&chunk.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "));
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Colon,
    Cmp(Comparison),
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Tok>, LpError> {
    let err = |m: String| LpError::Parse { line: lineno, message: m };
    let chars: Vec<char> = line.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            _ if c.is_whitespace() => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            ':' => {
                toks.push(Tok::Colon);
                i += 1;
            }
            '<' | '>' | '=' => {
                let next = chars.get(i + 1).copied();
                let (cmp, len) = match (c, next) {
                    ('<', Some('=')) | ('=', Some('<')) => (Comparison::Le, 2),
                    ('>', Some('=')) | ('=', Some('>')) => (Comparison::Ge, 2),
                    ('<', _) => (Comparison::Le, 1),
                    ('>', _) => (Comparison::Ge, 1),
                    _ => (Comparison::Eq, 1),
                };
                toks.push(Tok::Cmp(cmp));
                i += len;
            }
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")))?;
                toks.push(Tok::Num(v));
            }
            _ if valid_name_char(c, true) => {
                let start = i;
                while i < chars.len() && valid_name_char(chars[i], false) {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                match s.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" => toks.push(Tok::Num(f64::INFINITY)),
                    _ => toks.push(Tok::Ident(s)),
                }
            }
            _ => return Err(err(format!("unexpected character '{c}'"))),
        }
    }
    Ok(toks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn section_keyword(line: &str) -> Option<(Section, Option<Sense>)> {
    match line.trim().to_ascii_lowercase().as_str() {
        "maximize" | "maximise" | "maximum" | "max" => Some((Section::Objective, Some(Sense::Maximize))),
        "minimize" | "minimise" | "minimum" | "min" => Some((Section::Objective, Some(Sense::Minimize))),
        "subject to" | "such that" | "st" | "s.t." | "st." => Some((Section::Constraints, None)),
        "bounds" | "bound" => Some((Section::Bounds, None)),
        "binary" | "binaries" | "bin" => Some((Section::Binaries, None)),
        "end" => Some((Section::End, None)),
        _ => None,
    }
}

struct Builder {
    program: Program,
    index: HashMap<String, VarId>,
}

impl Builder {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self.program.add_nonneg(name);
        self.index.insert(name.to_string(), v);
        v
    }
}

/// Parses a linear expression; returns variable terms and the constant part.
fn parse_expr(b: &mut Builder, toks: &[Tok], line: usize) -> Result<(Vec<(VarId, f64)>, f64), LpError> {
    let mut terms: Vec<(VarId, f64)> = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        while let Some(t) = toks.get(i) {
            match t {
                Tok::Plus => i += 1,
                Tok::Minus => {
                    sign = -sign;
                    i += 1;
                }
                _ => break,
            }
        }
        let mut coef = None;
        if let Some(Tok::Num(v)) = toks.get(i) {
            coef = Some(*v);
            i += 1;
        }
        match toks.get(i) {
            Some(Tok::Ident(name)) => {
                let v = b.var(name);
                let c = sign * coef.unwrap_or(1.0);
                match terms.iter_mut().find(|(w, _)| *w == v) {
                    Some(t) => t.1 += c,
                    None => terms.push((v, c)),
                }
                i += 1;
            }
            _ => match coef {
                Some(c) => constant += sign * c,
                None => {
                    return Err(LpError::Parse { line, message: "dangling sign in expression".into() });
                }
            },
        }
    }
    Ok((terms, constant))
}

fn split_name(toks: &[Tok]) -> (Option<String>, &[Tok]) {
    match toks {
        [Tok::Ident(n), Tok::Colon, rest @ ..] => (Some(n.clone()), rest),
        _ => (None, toks),
    }
}

fn signed_number(toks: &[Tok], line: usize) -> Result<f64, LpError> {
    match toks {
        [Tok::Num(v)] => Ok(*v),
        [Tok::Plus, Tok::Num(v)] => Ok(*v),
        [Tok::Minus, Tok::Num(v)] => Ok(-*v),
        _ => Err(LpError::Parse { line, message: "expected a number".into() }),
    }
}

fn parse_constraints(b: &mut Builder, toks: &[Tok], line: usize) -> Result<(), LpError> {
    let mut rest = toks;
    while !rest.is_empty() {
        let (name, body) = split_name(rest);
        let cmp_at = body
            .iter()
            .position(|t| matches!(t, Tok::Cmp(_)))
            .ok_or_else(|| LpError::Parse { line, message: "constraint without comparison".into() })?;
        let Tok::Cmp(cmp) = body[cmp_at] else { unreachable!() };
        let (terms, constant) = parse_expr(b, &body[..cmp_at], line)?;
        let mut end = cmp_at + 1;
        if matches!(body.get(end), Some(Tok::Plus | Tok::Minus)) {
            end += 1;
        }
        end += 1;
        if end > body.len() {
            return Err(LpError::Parse { line, message: "missing right-hand side".into() });
        }
        let rhs = signed_number(&body[cmp_at + 1..end], line)? - constant;
        let name = name.unwrap_or_else(|| format!("R{}", b.program.num_constraints()));
        b.program.add_constraint(name, terms, cmp, rhs);
        rest = &body[end..];
    }
    Ok(())
}

fn parse_bound(b: &mut Builder, toks: &[Tok], line: usize) -> Result<(), LpError> {
    let err = |m: &str| LpError::Parse { line, message: m.to_string() };
    // Collapse leading signs on numbers: [-, Num] -> Num(-v).
    let mut t: Vec<Tok> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match (&toks[i], toks.get(i + 1)) {
            (Tok::Minus, Some(Tok::Num(v))) => {
                t.push(Tok::Num(-v));
                i += 2;
            }
            (Tok::Plus, Some(Tok::Num(v))) => {
                t.push(Tok::Num(*v));
                i += 2;
            }
            (other, _) => {
                t.push(other.clone());
                i += 1;
            }
        }
    }
    match t.as_slice() {
        [Tok::Ident(n), Tok::Ident(kw)] if kw.eq_ignore_ascii_case("free") => {
            let v = b.var(n);
            b.program.variables[v.0].lower = f64::NEG_INFINITY;
            b.program.variables[v.0].upper = f64::INFINITY;
        }
        [Tok::Num(l), Tok::Cmp(Comparison::Le), Tok::Ident(n), Tok::Cmp(Comparison::Le), Tok::Num(u)] => {
            let v = b.var(n);
            b.program.variables[v.0].lower = *l;
            b.program.variables[v.0].upper = *u;
        }
        [Tok::Ident(n), Tok::Cmp(cmp), Tok::Num(x)] => {
            let v = b.var(n);
            let var = &mut b.program.variables[v.0];
            match cmp {
                Comparison::Le => var.upper = *x,
                Comparison::Ge => var.lower = *x,
                Comparison::Eq => {
                    var.lower = *x;
                    var.upper = *x;
                }
            }
        }
        [Tok::Num(x), Tok::Cmp(cmp), Tok::Ident(n)] => {
            let v = b.var(n);
            let var = &mut b.program.variables[v.0];
            match cmp {
                Comparison::Le => var.lower = *x,
                Comparison::Ge => var.upper = *x,
                Comparison::Eq => {
                    var.lower = *x;
                    var.upper = *x;
                }
            }
        }
        _ => return Err(err("unrecognised bound")),
    }
    Ok(())
}

/// Parses CPLEX LP text into a [`Program`].
pub fn parse(text: &str) -> Result<Program, LpError> {
    let mut b = Builder { program: Program::new(Sense::Maximize), index: HashMap::new() };
    let mut section = Section::Preamble;
    // Objective and constraint bodies may wrap across lines; buffer tokens.
    let mut pending: Vec<Tok> = Vec::new();
    let mut pending_line = 0;
    let mut seen_objective = false;

    let flush = |b: &mut Builder, section: Section, pending: &mut Vec<Tok>, line: usize| -> Result<(), LpError> {
        if pending.is_empty() {
            return Ok(());
        }
        match section {
            Section::Objective => {
                let (_, body) = split_name(pending);
                let (terms, constant) = parse_expr(b, body, line)?;
                let sense = b.program.sense;
                b.program.set_objective(sense, &terms, constant);
            }
            Section::Constraints => parse_constraints(b, pending, line)?,
            _ => {}
        }
        pending.clear();
        Ok(())
    };

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('\\').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        if let Some((next, sense)) = section_keyword(line) {
            flush(&mut b, section, &mut pending, pending_line)?;
            if let Some(s) = sense {
                b.program.sense = s;
                seen_objective = true;
            }
            section = next;
            pending_line = lineno;
            continue;
        }
        let toks = tokenize(line, lineno)?;
        match section {
            Section::Preamble => {
                return Err(LpError::Parse { line: lineno, message: "content before objective section".into() });
            }
            Section::Objective => pending.extend(toks),
            Section::Constraints => {
                // A new named row starts a new constraint; flush what we have
                // once it is complete (ends after a rhs number).
                if matches!(toks.as_slice(), [Tok::Ident(_), Tok::Colon, ..])
                    && pending.iter().any(|t| matches!(t, Tok::Cmp(_)))
                {
                    flush(&mut b, section, &mut pending, pending_line)?;
                    pending_line = lineno;
                }
                pending.extend(toks);
            }
            Section::Bounds => parse_bound(&mut b, &toks, lineno)?,
            Section::Binaries => {
                for t in toks {
                    match t {
                        Tok::Ident(name) => {
                            let v = b.var(&name);
                            let var = &mut b.program.variables[v.0];
                            var.kind = VarKind::Binary;
                            var.lower = 0.0;
                            var.upper = 1.0;
                        }
                        _ => {
                            return Err(LpError::Parse { line: lineno, message: "expected variable name".into() });
                        }
                    }
                }
            }
            Section::End => {
                return Err(LpError::Parse { line: lineno, message: "content after End".into() });
            }
        }
    }
    flush(&mut b, section, &mut pending, pending_line)?;
    if !seen_objective {
        return Err(LpError::Parse { line: 0, message: "missing objective section".into() });
    }
    Ok(b.program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{solve, SolverParams};
    use proptest::prelude::*;

    fn sample() -> Program {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_var("x_0_1", 0.0, 3.0);
        let y = p.add_nonneg("y");
        let z = p.add_binary("nu");
        let f = p.add_var("free var", f64::NEG_INFINITY, f64::INFINITY);
        p.set_objective(Sense::Maximize, &[(x, 1.5), (y, -0.25), (z, 2.0)], 0.5);
        p.add_constraint("cap", vec![(x, 1.0), (y, 1.0)], Comparison::Le, 4.0);
        p.add_constraint("link", vec![(x, 1.0), (z, -3.0)], Comparison::Le, 0.0);
        p.add_constraint("fix", vec![(f, 1.0), (y, -1.0)], Comparison::Eq, -1e-10);
        p.add_constraint("floor", vec![(y, 2.0)], Comparison::Ge, 0.125);
        p
    }

    #[test]
    fn writes_expected_sections() {
        let text = write(&sample());
        for kw in ["Maximize", "Subject To", "Bounds", "Binaries", "End", "free_var free", "0.0 <= x_0_1 <= 3.0"] {
            assert!(text.contains(kw), "missing {kw} in\n{text}");
        }
    }

    #[test]
    fn round_trip_preserves_structure_and_optimum() {
        let p = sample();
        let q = parse(&write(&p)).unwrap();
        assert_eq!(q.num_vars(), p.num_vars());
        assert_eq!(q.num_constraints(), p.num_constraints());
        assert_eq!(q.objective, p.objective);
        assert_eq!(q.objective_offset, p.objective_offset);
        for (a, b) in p.variables.iter().zip(&q.variables) {
            assert_eq!((a.lower, a.upper, a.kind), (b.lower, b.upper, b.kind));
        }
        let params = SolverParams::default();
        let a = solve(&p, &params).unwrap().objective.unwrap();
        let b = solve(&q, &params).unwrap().objective.unwrap();
        assert!((a - b).abs() <= 1e-8);
    }

    #[test]
    fn parses_hand_written_aliases() {
        let text = "\\ hand written\nmin\n obj: 2 a + b - 3\nst\n c1: a + b >= 1\n -a + 2 b\n   <= 4\nbounds\n a <= 10\n-5 <= b <= inf\nend\n";
        let p = parse(text).unwrap();
        assert_eq!(p.sense, Sense::Minimize);
        assert_eq!(p.objective, vec![2.0, 1.0]);
        assert_eq!(p.objective_offset, -3.0);
        assert_eq!(p.num_constraints(), 2);
        assert_eq!(p.constraints[1].terms, vec![(VarId(0), -1.0), (VarId(1), 2.0)]);
        assert_eq!(p.variables[0].upper, 10.0);
        assert_eq!(p.variables[1].lower, -5.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("Maximize\n obj: x\nSubject To\n c: x ? 3\nEnd\n").is_err());
        assert!(parse("x + y\n").is_err());
    }

    proptest! {
        #[test]
        fn random_programs_round_trip_exactly(
            obj in prop::collection::vec(-1e3f64..1e3, 1..6),
            rows in prop::collection::vec((prop::collection::vec(-50f64..50.0, 6), 0u8..3, -1e2f64..1e2), 0..5),
            maximize in any::<bool>(),
        ) {
            let n = obj.len();
            let mut p = Program::new(if maximize { Sense::Maximize } else { Sense::Minimize });
            let vars: Vec<_> = (0..n).map(|i| p.add_var(format!("x{i}"), 0.0, 10.0)).collect();
            for (v, c) in vars.iter().zip(&obj) {
                p.set_objective_coef(*v, *c);
            }
            for (r, (coefs, cmp, rhs)) in rows.iter().enumerate() {
                let cmp = [Comparison::Le, Comparison::Eq, Comparison::Ge][*cmp as usize];
                let terms = vars.iter().zip(coefs).map(|(&v, &a)| (v, a)).collect();
                p.add_constraint(format!("r{r}"), terms, cmp, *rhs);
            }
            let q = parse(&write(&p)).unwrap();
            prop_assert_eq!(&q.objective, &p.objective);
            prop_assert_eq!(q.sense, p.sense);
            for (a, b) in p.constraints.iter().zip(&q.constraints) {
                prop_assert_eq!(&a.terms, &b.terms);
                prop_assert_eq!(a.cmp, b.cmp);
                prop_assert_eq!(a.rhs, b.rhs);
            }
        }
    }
}
