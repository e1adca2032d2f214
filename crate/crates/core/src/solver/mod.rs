//! Minimal Boolean constraint backend.
//!
//! A [`Formula`] is a set of CNF clauses plus at-most-one groups over
//! declared variables. [`solve`] compiles the groups into clauses (pairwise
//! for small groups, a sequential counter above that) and runs a
//! conflict-driven clause-learning search with a fixed decision order, so a
//! given formula always yields the same model.

mod cdcl;

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

/// Groups at or below this size use the pairwise at-most-one encoding.
pub const PAIRWISE_AMO_LIMIT: usize = 6;

/// Default conflict budget for a single [`solve`] call.
pub const DEFAULT_CONFLICT_BUDGET: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn positive(self) -> Lit {
        Lit::new(self, true)
    }

    pub fn negative(self) -> Lit {
        Lit::new(self, false)
    }
}

/// A literal: a variable with a polarity. Encoded as `2 * var + (negated as u32)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(u32);

impl Lit {
    pub fn new(var: Var, positive: bool) -> Self {
        Lit(var.0 * 2 + u32::from(!positive))
    }

    pub fn var(self) -> Var {
        Var(self.0 >> 1)
    }

    pub fn is_positive(self) -> bool {
        self.0 & 1 == 0
    }

    pub(crate) fn code(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_code(code: usize) -> Self {
        Lit(code as u32)
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;

    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_positive() {
            write!(f, "x{}", self.var().0)
        } else {
            write!(f, "¬x{}", self.var().0)
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormulaError {
    #[error("literal {lit:?} references undeclared variable (formula has {declared} variables)")]
    UndeclaredVariable { lit: Lit, declared: u32 },
    #[error("at-most-one group {0} is empty")]
    EmptyGroup(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("formula is malformed: {0}")]
    Malformed(#[from] FormulaError),
    #[error("solver gave up after {conflicts} conflicts (budget exhausted)")]
    Unknown { conflicts: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Formula {
    num_vars: u32,
    clauses: Vec<Vec<Lit>>,
    at_most_one: Vec<Vec<Lit>>,
}

impl Formula {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars(num_vars: u32) -> Self {
        Self { num_vars, ..Self::default() }
    }

    pub fn new_var(&mut self) -> Var {
        let v = Var(self.num_vars);
        self.num_vars += 1;
        v
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    pub fn at_most_one_groups(&self) -> &[Vec<Lit>] {
        &self.at_most_one
    }

    pub fn add_clause(&mut self, lits: impl IntoIterator<Item = Lit>) {
        self.clauses.push(lits.into_iter().collect());
    }

    pub fn add_unit(&mut self, lit: Lit) {
        self.clauses.push(vec![lit]);
    }

    /// `a -> b`
    pub fn add_implies(&mut self, a: Lit, b: Lit) {
        self.clauses.push(vec![!a, b]);
    }

    pub fn add_at_most_one(&mut self, lits: impl IntoIterator<Item = Lit>) {
        self.at_most_one.push(lits.into_iter().collect());
    }

    /// `out <-> (a AND b)`
    pub fn define_and(&mut self, a: Lit, b: Lit) -> Lit {
        let out = self.new_var().positive();
        self.clauses.push(vec![!out, a]);
        self.clauses.push(vec![!out, b]);
        self.clauses.push(vec![out, !a, !b]);
        out
    }

    /// `target <-> OR(inputs)`; an empty disjunction forces `target` false.
    pub fn add_equiv_or(&mut self, target: Lit, inputs: &[Lit]) {
        let mut big = Vec::with_capacity(inputs.len() + 1);
        big.push(!target);
        big.extend_from_slice(inputs);
        self.clauses.push(big);
        for &i in inputs {
            self.clauses.push(vec![!i, target]);
        }
    }

    pub fn check(&self) -> Result<(), FormulaError> {
        let declared = self.num_vars;
        let all = self.clauses.iter().chain(self.at_most_one.iter());
        for lit in all.flatten() {
            if lit.var().0 >= declared {
                return Err(FormulaError::UndeclaredVariable { lit: *lit, declared });
            }
        }
        if let Some(i) = self.at_most_one.iter().position(Vec::is_empty) {
            return Err(FormulaError::EmptyGroup(i));
        }
        Ok(())
    }

    /// Clause-compiles every at-most-one group. Auxiliary variables are
    /// appended after the declared ones.
    pub fn to_cnf(&self) -> (u32, Vec<Vec<Lit>>) {
        let mut num_vars = self.num_vars;
        let mut clauses = self.clauses.clone();
        for group in &self.at_most_one {
            encode_at_most_one(group, &mut num_vars, &mut clauses);
        }
        (num_vars, clauses)
    }

    /// DIMACS CNF text of the clause-compiled formula.
    pub fn to_dimacs(&self) -> String {
        let (num_vars, clauses) = self.to_cnf();
        let mut out = String::new();
        writeln!(out, "c {} declared variables, {} at-most-one groups", self.num_vars, self.at_most_one.len()).ok();
        writeln!(out, "p cnf {} {}", num_vars, clauses.len()).ok();
        for clause in &clauses {
            for lit in clause {
                let v = i64::from(lit.var().0) + 1;
                write!(out, "{} ", if lit.is_positive() { v } else { -v }).ok();
            }
            out.push_str("0\n");
        }
        out
    }
}

fn encode_at_most_one(group: &[Lit], num_vars: &mut u32, clauses: &mut Vec<Vec<Lit>>) {
    let n = group.len();
    if n <= 1 {
        return;
    }
    if n <= PAIRWISE_AMO_LIMIT {
        for i in 0..n {
            for j in i + 1..n {
                clauses.push(vec![!group[i], !group[j]]);
            }
        }
        return;
    }
    // Sequential counter: s_i means "some x_j with j <= i is true".
    let mut prev: Option<Lit> = None;
    for (i, &x) in group.iter().enumerate() {
        let last = i == n - 1;
        if let Some(p) = prev {
            clauses.push(vec![!x, !p]);
        }
        if !last {
            let s = Var(*num_vars).positive();
            *num_vars += 1;
            clauses.push(vec![!x, s]);
            if let Some(p) = prev {
                clauses.push(vec![!p, s]);
            }
            prev = Some(s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    values: Vec<bool>,
}

impl Model {
    pub(crate) fn new(values: Vec<bool>) -> Self {
        Self { values }
    }

    pub fn value(&self, var: Var) -> bool {
        self.values[var.index()]
    }

    pub fn lit(&self, lit: Lit) -> bool {
        self.value(lit.var()) == lit.is_positive()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// True when every clause and at-most-one group of `formula` holds.
    pub fn satisfies(&self, formula: &Formula) -> bool {
        formula.clauses.iter().all(|c| c.iter().any(|&l| self.lit(l)))
            && formula
                .at_most_one
                .iter()
                .all(|g| g.iter().filter(|&&l| self.lit(l)).count() <= 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(Model),
    Unsat,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }

    pub fn model(&self) -> Option<&Model> {
        match self {
            SatResult::Sat(m) => Some(m),
            SatResult::Unsat => None,
        }
    }
}

pub fn solve(formula: &Formula) -> Result<SatResult, SolveError> {
    solve_with_budget(formula, DEFAULT_CONFLICT_BUDGET)
}

pub fn solve_with_budget(formula: &Formula, max_conflicts: u64) -> Result<SatResult, SolveError> {
    formula.check()?;
    let (num_vars, clauses) = formula.to_cnf();
    match cdcl::Solver::new(num_vars as usize, clauses).run(max_conflicts) {
        cdcl::Outcome::Sat(mut values) => {
            values.truncate(formula.num_vars as usize);
            Ok(SatResult::Sat(Model::new(values)))
        }
        cdcl::Outcome::Unsat => Ok(SatResult::Unsat),
        cdcl::Outcome::Budget(conflicts) => Err(SolveError::Unknown { conflicts }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(f: &Formula) -> bool {
        let n = f.num_vars();
        (0..1u64 << n).any(|bits| {
            let m = Model::new((0..n).map(|i| bits >> i & 1 == 1).collect());
            m.satisfies(f)
        })
    }

    #[test]
    fn single_positive_unit_is_sat_with_a_true() {
        let mut f = Formula::new();
        let a = f.new_var();
        f.add_unit(a.positive());
        let r = solve(&f).unwrap();
        assert!(r.model().unwrap().value(a));
    }

    #[test]
    fn contradictory_units_are_unsat() {
        let mut f = Formula::new();
        let a = f.new_var();
        f.add_unit(a.positive());
        f.add_unit(a.negative());
        assert_eq!(solve(&f).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn at_most_one_with_two_forced_members_is_unsat() {
        // Exhaustive check over the 8 assignments of {e1, e2, e3}: e2 and e3
        // are forced, violating the group.
        let mut f = Formula::new();
        let e: Vec<Var> = (0..3).map(|_| f.new_var()).collect();
        f.add_at_most_one(e.iter().map(|v| v.positive()));
        f.add_clause([e[0].positive(), e[1].positive()]);
        f.add_unit(e[1].positive());
        f.add_unit(e[2].positive());
        assert!(!brute_force(&f));
        assert_eq!(solve(&f).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn large_group_uses_sequential_encoding_and_stays_exact() {
        for forced in [vec![3usize], vec![0, 9], vec![]] {
            let mut f = Formula::new();
            let xs: Vec<Var> = (0..10).map(|_| f.new_var()).collect();
            f.add_at_most_one(xs.iter().map(|v| v.positive()));
            f.add_clause(xs.iter().map(|v| v.positive()));
            for &i in &forced {
                f.add_unit(xs[i].positive());
            }
            let (aux_vars, _) = f.to_cnf();
            assert!(aux_vars > 10);
            let r = solve(&f).unwrap();
            assert_eq!(r.is_sat(), forced.len() <= 1);
            if let SatResult::Sat(m) = r {
                assert!(m.satisfies(&f));
                assert_eq!(m.values().len(), 10);
            }
        }
    }

    #[test]
    fn undeclared_literal_is_rejected() {
        let mut f = Formula::new();
        f.add_unit(Var(4).positive());
        assert!(matches!(solve(&f), Err(SolveError::Malformed(_))));
    }

    #[test]
    fn empty_clause_is_unsat() {
        let mut f = Formula::with_vars(1);
        f.add_clause([]);
        assert_eq!(solve(&f).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn dimacs_header_counts_compiled_clauses() {
        let mut f = Formula::new();
        let a = f.new_var();
        let b = f.new_var();
        f.add_clause([a.positive(), b.negative()]);
        f.add_at_most_one([a.positive(), b.positive()]);
        let text = f.to_dimacs();
        assert!(text.contains("p cnf 2 2"));
        assert!(text.contains("1 -2 0"));
        assert!(text.contains("-1 -2 0"));
    }

    #[test]
    fn pigeonhole_exhausts_a_tiny_budget() {
        // 6 pigeons, 5 holes: hard enough that a 3-conflict budget runs out.
        let mut f = Formula::new();
        let p: Vec<Vec<Var>> = (0..6).map(|_| (0..5).map(|_| f.new_var()).collect()).collect();
        for row in &p {
            f.add_clause(row.iter().map(|v| v.positive()));
        }
        for h in 0..5 {
            f.add_at_most_one(p.iter().map(|row| row[h].positive()));
        }
        assert!(matches!(solve_with_budget(&f, 3), Err(SolveError::Unknown { .. })));
        assert_eq!(solve(&f).unwrap(), SatResult::Unsat);
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_truth_table(
            n in 1u32..10,
            raw in proptest::collection::vec(proptest::collection::vec((0u32..10, proptest::bool::ANY), 0..4), 0..30),
            amo in proptest::collection::vec(proptest::collection::vec((0u32..10, proptest::bool::ANY), 1..9), 0..3),
        ) {
            let mut f = Formula::with_vars(n);
            for c in &raw {
                f.add_clause(c.iter().map(|&(v, pos)| Lit::new(Var(v % n), pos)));
            }
            for g in &amo {
                f.add_at_most_one(g.iter().map(|&(v, pos)| Lit::new(Var(v % n), pos)));
            }
            let r = solve(&f).unwrap();
            proptest::prop_assert_eq!(r.is_sat(), brute_force(&f));
            if let Some(m) = r.model() {
                proptest::prop_assert!(m.satisfies(&f));
            }
        }
    }
}
