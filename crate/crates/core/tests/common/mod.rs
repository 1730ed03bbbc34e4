//! Reader for the CPLEX LP text format and a plug-in evaluator for plans.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use adl::planner::{Action, Mode, PlanInstance, Serving};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Labelled row: terms, relation, right-hand side.
pub type Row = (String, Vec<(f64, String)>, Sense, f64);

#[derive(Debug, Default)]
pub struct Lp {
    pub objective: Vec<(f64, String)>,
    pub constant: f64,
    pub rows: Vec<Row>,
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub binaries: BTreeSet<String>,
}

fn valid_name(v: &str) -> bool {
    let first = v.chars().next();
    !v.is_empty()
        && v.len() <= 255
        && !first.is_some_and(|c| c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E')
        && v.chars().all(|c| c.is_ascii_alphanumeric() || "!\"#$%&()/,.;?@_`'{}|~".contains(c))
}

fn tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c == '+' || c == '-' {
            // Signs inside exponents belong to the number.
            if cur.ends_with(['e', 'E']) && cur[..cur.len() - 1].parse::<f64>().is_ok() {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        } else if c == '<' || c == '>' || c == '=' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            let mut op = c.to_string();
            if i + 1 < chars.len() && chars[i + 1] == '=' {
                op.push('=');
                i += 1;
            }
            out.push(op);
        } else {
            cur.push(c);
        }
        i += 1;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Linear expression: `[sign] [coef] var` terms and bare constants.
fn parse_expr(toks: &[String]) -> Result<(Vec<(f64, String)>, f64), String> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        if toks[i] == "+" || toks[i] == "-" {
            if toks[i] == "-" {
                sign = -1.0;
            }
            i += 1;
        } else if i > 0 {
            return Err(format!("missing operator before {}", toks[i]));
        }
        let tok = toks.get(i).ok_or("dangling sign")?;
        if let Ok(c) = tok.parse::<f64>() {
            i += 1;
            match toks.get(i) {
                Some(v) if valid_name(v) => {
                    terms.push((sign * c, v.clone()));
                    i += 1;
                }
                _ => constant += sign * c,
            }
        } else if valid_name(tok) {
            terms.push((sign, tok.clone()));
            i += 1;
        } else {
            return Err(format!("bad token {tok}"));
        }
    }
    Ok((terms, constant))
}

fn split_label(line: &str) -> (Option<String>, &str) {
    match line.split_once(':') {
        Some((l, rest)) => (Some(l.trim().to_string()), rest),
        None => (None, line),
    }
}

pub fn parse_lp(text: &str) -> Result<Lp, String> {
    #[derive(PartialEq)]
    enum Sec {
        Head,
        Obj,
        Rows,
        Bounds,
        Bin,
        End,
    }
    let mut lp = Lp::default();
    let mut sec = Sec::Head;
    let mut saw_obj_section = false;
    for raw in text.lines() {
        let line = raw.split('\\').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" | "minimum" | "min" => {
                sec = Sec::Obj;
                saw_obj_section = true;
                continue;
            }
            "subject to" | "such that" | "st" | "s.t." => {
                sec = Sec::Rows;
                continue;
            }
            "bounds" | "bound" => {
                sec = Sec::Bounds;
                continue;
            }
            "binaries" | "binary" | "bin" => {
                sec = Sec::Bin;
                continue;
            }
            "end" => {
                sec = Sec::End;
                continue;
            }
            _ => {}
        }
        match sec {
            Sec::Head => return Err(format!("content before objective: {line}")),
            Sec::End => return Err(format!("content after End: {line}")),
            Sec::Obj => {
                let (label, body) = split_label(line);
                if let Some(l) = label {
                    if !valid_name(&l) {
                        return Err(format!("bad label {l}"));
                    }
                }
                let (t, c) = parse_expr(&tokens(body))?;
                lp.objective.extend(t);
                lp.constant += c;
            }
            Sec::Rows => {
                let (label, body) = split_label(line);
                let label = label.ok_or(format!("unlabelled row {line}"))?;
                let toks = tokens(body);
                let k = toks
                    .iter()
                    .position(|t| matches!(t.as_str(), "<=" | ">=" | "=" | "<" | ">" | "=<" | "=>"))
                    .ok_or(format!("row without relation: {line}"))?;
                let sense = match toks[k].as_str() {
                    "<=" | "<" | "=<" => Sense::Le,
                    ">=" | ">" | "=>" => Sense::Ge,
                    _ => Sense::Eq,
                };
                let (terms, c) = parse_expr(&toks[..k])?;
                if c != 0.0 {
                    return Err(format!("constant on left of row {label}"));
                }
                let (rhs_terms, rhs) = parse_expr(&toks[k + 1..])?;
                if !rhs_terms.is_empty() {
                    return Err(format!("variable on right of row {label}"));
                }
                lp.rows.push((label, terms, sense, rhs));
            }
            Sec::Bounds => {
                let toks = tokens(line);
                let (lo, var, hi) = match toks.as_slice() {
                    [lo, a, v, b, hi] if a == "<=" && b == "<=" => {
                        (lo.parse::<f64>().map_err(|e| e.to_string())?, v.clone(), hi.parse::<f64>().map_err(|e| e.to_string())?)
                    }
                    [v, op, hi] if op == "<=" => (0.0, v.clone(), hi.parse::<f64>().map_err(|e| e.to_string())?),
                    _ => return Err(format!("bad bound {line}")),
                };
                if !valid_name(&var) {
                    return Err(format!("bad bound variable {var}"));
                }
                lp.bounds.insert(var, (lo, hi));
            }
            Sec::Bin => {
                for v in line.split_whitespace() {
                    if !valid_name(v) {
                        return Err(format!("bad binary {v}"));
                    }
                    lp.binaries.insert(v.to_string());
                }
            }
        }
    }
    if !saw_obj_section || sec != Sec::End {
        return Err("missing Minimize or End".into());
    }
    Ok(lp)
}

pub fn value(terms: &[(f64, String)], x: &BTreeMap<String, f64>) -> f64 {
    terms.iter().map(|(c, v)| c * x.get(v).copied().unwrap_or(0.0)).sum()
}

/// Variable assignment encoding an action sequence.
pub fn encode(inst: &PlanInstance, actions: &[Action], serving: &[Option<Serving>]) -> BTreeMap<String, f64> {
    let taught: Vec<bool> = actions.iter().map(|&a| a == Action::Learn).collect();
    let mut x = BTreeMap::new();
    for i in 0..inst.n {
        let k = i + 1;
        x.insert(format!("x_{k}"), taught[i] as u8 as f64);
        x.insert(format!("y_{k}"), (actions[i] == Action::Delegate) as u8 as f64);
        let src = match actions[i] {
            Action::Act => serving[i],
            Action::Learn if inst.mode == Mode::LiteralPaper => Some(inst.best_skill(i, |j| taught[j]).1),
            _ => None,
        };
        let p = match src {
            Some(Serving::Pretrained) => {
                x.insert(format!("u_{k}_0"), 1.0);
                inst.rho0[i]
            }
            Some(Serving::LearnedFrom(j)) => {
                x.insert(format!("u_{k}_{}", j + 1), 1.0);
                inst.rho[i][j]
            }
            None => 0.0,
        };
        let fail = match actions[i] {
            Action::Delegate => 0.0,
            Action::Learn if inst.mode == Mode::MdpConsistent => 0.0,
            _ => 1.0 - p,
        };
        x.insert(format!("w_{k}"), fail);
    }
    x
}

pub fn feasible(lp: &Lp, x: &BTreeMap<String, f64>) -> Result<(), String> {
    for (name, terms, sense, rhs) in &lp.rows {
        let lhs = value(terms, x);
        let ok = match sense {
            Sense::Le => lhs <= rhs + 1e-9,
            Sense::Ge => lhs >= rhs - 1e-9,
            Sense::Eq => (lhs - rhs).abs() <= 1e-9,
        };
        if !ok {
            return Err(format!("row {name}: {lhs} vs {rhs}"));
        }
    }
    for (v, &(lo, hi)) in &lp.bounds {
        let val = x.get(v).copied().unwrap_or(0.0);
        if val < lo - 1e-12 || val > hi + 1e-12 {
            return Err(format!("bound on {v}: {val}"));
        }
    }
    Ok(())
}
