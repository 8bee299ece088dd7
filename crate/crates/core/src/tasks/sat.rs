//! Tiny random 3-SAT: generation with a brute-force solver, checking, the
//! sequence encoding and a DIMACS-like text format.
//!
//! Encoding: positions `0..3m` hold the clause literals (conditioned),
//! positions `3m..3m+n` hold the assignment. Token 0 is false, 1 is true,
//! `2 + 2v` is the literal `x_v` and `3 + 2v` is `¬x_v`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{IgdError, Result};
use crate::rng::{domain, keyed_rng};
use crate::state::{CondMask, ElementLayout, Sequence, Token};

/// Brute-force bound on the number of variables.
pub const MAX_VARS: usize = 10;

/// A literal: variable index (0-based) and polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal {
    pub var: usize,
    pub negated: bool,
}

impl Literal {
    pub fn eval(&self, assignment: &[bool]) -> bool {
        assignment[self.var] != self.negated
    }

    pub fn token(&self) -> Token {
        (2 + 2 * self.var + self.negated as usize) as Token
    }

    pub fn from_token(tok: Token) -> Option<Self> {
        let tok = tok as usize;
        (tok >= 2).then(|| Self {
            var: (tok - 2) / 2,
            negated: (tok - 2) % 2 == 1,
        })
    }

    fn dimacs(&self) -> i64 {
        let v = self.var as i64 + 1;
        if self.negated {
            -v
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatInstance {
    pub n: usize,
    pub clauses: Vec<[Literal; 3]>,
    pub assignment: Vec<bool>,
}

/// `round(4.258 n + 58.26 n^{-2/3})`.
pub fn clause_count(n: usize) -> usize {
    let nf = n as f64;
    (4.258 * nf + 58.26 * nf.powf(-2.0 / 3.0)).round() as usize
}

/// `(satisfied, number of satisfied clauses)`.
pub fn check_sat(clauses: &[[Literal; 3]], assignment: &[bool]) -> (bool, usize) {
    let ok = clauses.iter().filter(|c| c.iter().any(|l| l.eval(assignment))).count();
    (ok == clauses.len(), ok)
}

fn assignment_of(bits: usize, n: usize) -> Vec<bool> {
    (0..n).map(|v| (bits >> v) & 1 == 1).collect()
}

/// All satisfying assignments by enumeration of `2^n` candidates.
pub fn solve_all(n: usize, clauses: &[[Literal; 3]]) -> Vec<Vec<bool>> {
    (0..1usize << n)
        .map(|b| assignment_of(b, n))
        .filter(|a| check_sat(clauses, a).0)
        .collect()
}

fn random_clause<R: Rng + ?Sized>(n: usize, rng: &mut R) -> [Literal; 3] {
    let vars = sample(rng, n, 3);
    let mut out = [Literal { var: 0, negated: false }; 3];
    for (slot, v) in out.iter_mut().zip(vars.iter()) {
        *slot = Literal {
            var: v,
            negated: rng.random(),
        };
    }
    out
}

impl SatInstance {
    /// Stable digest of the clause list, used for train/test separation.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.n.to_le_bytes());
        for c in &self.clauses {
            for l in c {
                h.update(l.dimacs().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn m(&self) -> usize {
        self.clauses.len()
    }
}

/// Draws `count` satisfiable instances with `n ≤ 10` variables and
/// `clause_count(n)` clauses. Unsatisfiable draws are discarded, duplicate
/// clause lists are skipped, and each kept instance carries a satisfying
/// assignment chosen uniformly among all of them.
pub fn gen_tiny_sat(n: usize, count: usize, seed: u64) -> Result<Vec<SatInstance>> {
    if !(3..=MAX_VARS).contains(&n) {
        return Err(IgdError::InvalidValue(format!("n = {n} outside 3..={MAX_VARS}")));
    }
    let m = clause_count(n);
    let mut out = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    let mut attempt = 0u64;
    while out.len() < count {
        let mut rng = keyed_rng(seed, &[domain::DATA, n as u64, attempt]);
        attempt += 1;
        let clauses: Vec<[Literal; 3]> = (0..m).map(|_| random_clause(n, &mut rng)).collect();
        let sols = solve_all(n, &clauses);
        if sols.is_empty() {
            continue;
        }
        let assignment = sols[rng.random_range(0..sols.len())].clone();
        let inst = SatInstance { n, clauses, assignment };
        if seen.insert(inst.hash()) {
            out.push(inst);
        }
    }
    Ok(out)
}

/// Splits into train and test sets with disjoint instance hashes; the last
/// `n_test` instances form the test set.
pub fn split(instances: Vec<SatInstance>, n_test: usize) -> (Vec<SatInstance>, Vec<SatInstance>) {
    let cut = instances.len().saturating_sub(n_test);
    let mut train = instances;
    let test = train.split_off(cut);
    let test_hashes: HashSet<String> = test.iter().map(|i| i.hash()).collect();
    train.retain(|i| !test_hashes.contains(&i.hash()));
    (train, test)
}

pub fn sat_layout(n: usize, m: usize) -> Result<ElementLayout> {
    ElementLayout::new(3 * m + n, vec![], (2 + 2 * n) as u32)
}

/// Encodes an instance. Clause tokens are conditioned; the assignment slots
/// hold the stored assignment when `with_assignment`, else token 0.
pub fn sat_to_sequence(inst: &SatInstance, layout: &Arc<ElementLayout>, with_assignment: bool) -> Result<Sequence> {
    let m = inst.m();
    if layout.discrete_len() != 3 * m + inst.n || layout.vocab_size() as usize != 2 + 2 * inst.n {
        return Err(IgdError::InvalidLayout(
            "layout does not match the instance size".into(),
        ));
    }
    let mut tokens: Vec<Token> = inst.clauses.iter().flat_map(|c| c.iter().map(|l| l.token())).collect();
    tokens.extend(
        inst.assignment
            .iter()
            .map(|&b| if with_assignment { b as Token } else { 0 }),
    );
    let mut cond = CondMask::none(layout);
    cond.tokens[..3 * m].iter_mut().for_each(|c| *c = true);
    Sequence::with_mask(layout.clone(), tokens, vec![], cond)
}

pub type Decoded = (Vec<[Literal; 3]>, Option<Vec<bool>>);

/// Decodes `(clauses, assignment)`; assignment slots holding anything but
/// 0 or 1 decode to `None`.
pub fn decode_sequence(seq: &Sequence, n: usize) -> Result<Decoded> {
    let l1 = seq.layout().discrete_len();
    if l1 < n || !(l1 - n).is_multiple_of(3) {
        return Err(IgdError::InvalidLayout("not a SAT encoding".into()));
    }
    let m = (l1 - n) / 3;
    let toks = seq.tokens();
    let mut clauses = Vec::with_capacity(m);
    for c in 0..m {
        let mut clause = [Literal { var: 0, negated: false }; 3];
        for (j, slot) in clause.iter_mut().enumerate() {
            *slot = Literal::from_token(toks[3 * c + j])
                .filter(|l| l.var < n)
                .ok_or_else(|| IgdError::Parse(format!("clause {c} slot {j} is not a literal")))?;
        }
        clauses.push(clause);
    }
    let assignment = toks[3 * m..]
        .iter()
        .map(|&t| (t < 2).then_some(t == 1))
        .collect::<Option<Vec<bool>>>();
    Ok((clauses, assignment))
}

/// Whether a generated sequence holds a satisfying assignment for its own
/// clauses.
pub fn sequence_solves(seq: &Sequence, n: usize) -> Result<bool> {
    let (clauses, assignment) = decode_sequence(seq, n)?;
    Ok(assignment.is_some_and(|a| check_sat(&clauses, &a).0))
}

/// DIMACS-like text: per instance a `p cnf n m` line, `m` clause lines
/// ending in 0 and a `v` line with the assignment as signed literals.
pub fn write_dimacs(instances: &[SatInstance]) -> String {
    let mut s = String::new();
    for inst in instances {
        let _ = writeln!(s, "p cnf {} {}", inst.n, inst.m());
        for c in &inst.clauses {
            let _ = writeln!(s, "{} {} {} 0", c[0].dimacs(), c[1].dimacs(), c[2].dimacs());
        }
        let lits: Vec<String> = inst
            .assignment
            .iter()
            .enumerate()
            .map(|(v, &b)| if b { format!("{}", v + 1) } else { format!("-{}", v + 1) })
            .collect();
        let _ = writeln!(s, "v {} 0", lits.join(" "));
    }
    s
}

fn parse_literal(tok: &str, n: usize) -> Result<Literal> {
    let v: i64 = tok
        .parse()
        .map_err(|_| IgdError::Parse(format!("bad literal {tok:?}")))?;
    if v == 0 || v.unsigned_abs() as usize > n {
        return Err(IgdError::Parse(format!("literal {v} out of range")));
    }
    Ok(Literal {
        var: v.unsigned_abs() as usize - 1,
        negated: v < 0,
    })
}

pub fn read_dimacs(text: &str) -> Result<Vec<SatInstance>> {
    let mut out = Vec::new();
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('c'));
    while let Some(header) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
            return Err(IgdError::Parse(format!("expected 'p cnf n m', got {header:?}")));
        }
        let n: usize = parts[2].parse().map_err(|_| IgdError::Parse("bad n".into()))?;
        let m: usize = parts[3].parse().map_err(|_| IgdError::Parse("bad m".into()))?;
        let mut clauses = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| IgdError::Parse("missing clause".into()))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 || toks[3] != "0" {
                return Err(IgdError::Parse(format!(
                    "clause line {line:?} must hold 3 literals and 0"
                )));
            }
            let c = [
                parse_literal(toks[0], n)?,
                parse_literal(toks[1], n)?,
                parse_literal(toks[2], n)?,
            ];
            if c[0].var == c[1].var || c[0].var == c[2].var || c[1].var == c[2].var {
                return Err(IgdError::Parse(format!("clause {line:?} repeats a variable")));
            }
            clauses.push(c);
        }
        let vline = lines
            .next()
            .ok_or_else(|| IgdError::Parse("missing assignment line".into()))?;
        let toks: Vec<&str> = vline.split_whitespace().collect();
        if toks.len() != n + 2 || toks[0] != "v" || toks[n + 1] != "0" {
            return Err(IgdError::Parse(format!("bad assignment line {vline:?}")));
        }
        let mut assignment = vec![false; n];
        for t in &toks[1..=n] {
            let l = parse_literal(t, n)?;
            assignment[l.var] = !l.negated;
        }
        out.push(SatInstance { n, clauses, assignment });
    }
    Ok(out)
}
