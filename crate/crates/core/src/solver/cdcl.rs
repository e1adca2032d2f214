use super::Lit;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Value {
    True,
    False,
    Unassigned,
}

pub(super) enum Outcome {
    Sat(Vec<bool>),
    Unsat,
    Budget(u64),
}

/// Conflict-driven clause learning with two watched literals and first-UIP
/// learning. Decisions take the lowest-index unassigned variable and try
/// `false` first.
pub(super) struct Solver {
    num_vars: usize,
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    values: Vec<Value>,
    levels: Vec<usize>,
    reasons: Vec<Option<usize>>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    seen: Vec<bool>,
    units: Vec<Lit>,
    trivially_unsat: bool,
    next_decision: usize,
}

impl Solver {
    pub(super) fn new(num_vars: usize, input: Vec<Vec<Lit>>) -> Self {
        let mut s = Solver {
            num_vars,
            clauses: Vec::new(),
            watches: vec![Vec::new(); num_vars * 2],
            values: vec![Value::Unassigned; num_vars],
            levels: vec![0; num_vars],
            reasons: vec![None; num_vars],
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            seen: vec![false; num_vars],
            units: Vec::new(),
            trivially_unsat: false,
            next_decision: 0,
        };
        for mut clause in input {
            clause.sort_unstable();
            clause.dedup();
            if clause.windows(2).any(|w| w[0].var() == w[1].var()) {
                continue; // tautology
            }
            match clause.len() {
                0 => s.trivially_unsat = true,
                1 => s.units.push(clause[0]),
                _ => {
                    s.attach(clause);
                }
            }
        }
        s
    }

    fn attach(&mut self, clause: Vec<Lit>) -> usize {
        let idx = self.clauses.len();
        self.watches[clause[0].code()].push(idx);
        self.watches[clause[1].code()].push(idx);
        self.clauses.push(clause);
        idx
    }

    fn lit_value(&self, lit: Lit) -> Value {
        match self.values[lit.var().index()] {
            Value::Unassigned => Value::Unassigned,
            Value::True if lit.is_positive() => Value::True,
            Value::False if !lit.is_positive() => Value::True,
            _ => Value::False,
        }
    }

    fn level(&self) -> usize {
        self.trail_lim.len()
    }

    fn enqueue(&mut self, lit: Lit, reason: Option<usize>) -> bool {
        match self.lit_value(lit) {
            Value::True => true,
            Value::False => false,
            Value::Unassigned => {
                let v = lit.var().index();
                self.values[v] = if lit.is_positive() { Value::True } else { Value::False };
                self.levels[v] = self.level();
                self.reasons[v] = reason;
                self.trail.push(lit);
                true
            }
        }
    }

    /// Returns the index of a conflicting clause, if any.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let false_lit = !p;
            let mut watchers = std::mem::take(&mut self.watches[false_lit.code()]);
            let mut i = 0;
            let mut conflict = None;
            while i < watchers.len() {
                let ci = watchers[i];
                let clause = &mut self.clauses[ci];
                if clause[0] == false_lit {
                    clause.swap(0, 1);
                }
                let first = clause[0];
                if self.lit_value(first) == Value::True {
                    i += 1;
                    continue;
                }
                let clause = &self.clauses[ci];
                let replacement = (2..clause.len()).find(|&k| self.lit_value(clause[k]) != Value::False);
                if let Some(k) = replacement {
                    let clause = &mut self.clauses[ci];
                    clause.swap(1, k);
                    let new_watch = clause[1];
                    self.watches[new_watch.code()].push(ci);
                    watchers.swap_remove(i);
                    continue;
                }
                if self.lit_value(first) == Value::False {
                    conflict = Some(ci);
                    break;
                }
                self.enqueue(first, Some(ci));
                i += 1;
            }
            // Watchers not yet visited stay attached.
            let existing = std::mem::take(&mut self.watches[false_lit.code()]);
            watchers.extend(existing);
            self.watches[false_lit.code()] = watchers;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    /// First-UIP conflict analysis. Returns the learnt clause (asserting
    /// literal first) and the backjump level.
    fn analyze(&mut self, mut conflict: usize) -> (Vec<Lit>, usize) {
        let mut learnt: Vec<Lit> = vec![Lit::from_code(0)];
        let mut pending = 0usize;
        let mut index = self.trail.len();
        let mut asserting: Option<Lit> = None;
        loop {
            let clause = self.clauses[conflict].clone();
            for &q in &clause {
                if Some(q) == asserting {
                    continue;
                }
                let v = q.var().index();
                if !self.seen[v] && self.levels[v] > 0 {
                    self.seen[v] = true;
                    if self.levels[v] >= self.level() {
                        pending += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[self.trail[index].var().index()] {
                    break;
                }
            }
            let p = self.trail[index];
            self.seen[p.var().index()] = false;
            pending -= 1;
            asserting = Some(p);
            if pending == 0 {
                break;
            }
            conflict = self.reasons[p.var().index()].expect("implied literal has a reason");
        }
        learnt[0] = !asserting.expect("conflict at decision level");
        for l in &learnt[1..] {
            self.seen[l.var().index()] = false;
        }
        let mut backjump = 0;
        if learnt.len() > 1 {
            let (best, _) = learnt
                .iter()
                .enumerate()
                .skip(1)
                .max_by_key(|(i, l)| (self.levels[l.var().index()], std::cmp::Reverse(*i)))
                .expect("non-empty tail");
            learnt.swap(1, best);
            backjump = self.levels[learnt[1].var().index()];
        }
        (learnt, backjump)
    }

    fn backtrack(&mut self, level: usize) {
        if self.level() <= level {
            return;
        }
        let keep = self.trail_lim[level];
        for lit in self.trail.drain(keep..) {
            let v = lit.var().index();
            self.values[v] = Value::Unassigned;
            self.reasons[v] = None;
        }
        self.trail_lim.truncate(level);
        self.qhead = keep;
        self.next_decision = 0;
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while self.next_decision < self.num_vars {
            let v = self.next_decision;
            if self.values[v] == Value::Unassigned {
                return Some(super::Var(v as u32).negative());
            }
            self.next_decision += 1;
        }
        None
    }

    pub(super) fn run(mut self, max_conflicts: u64) -> Outcome {
        if self.trivially_unsat {
            return Outcome::Unsat;
        }
        for lit in std::mem::take(&mut self.units) {
            if !self.enqueue(lit, None) {
                return Outcome::Unsat;
            }
        }
        let mut conflicts = 0u64;
        loop {
            if let Some(conflict) = self.propagate() {
                if self.level() == 0 {
                    return Outcome::Unsat;
                }
                conflicts += 1;
                if conflicts > max_conflicts {
                    return Outcome::Budget(conflicts - 1);
                }
                let (learnt, backjump) = self.analyze(conflict);
                self.backtrack(backjump);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let asserting = learnt[0];
                    let ci = self.attach(learnt);
                    self.enqueue(asserting, Some(ci));
                }
                continue;
            }
            match self.pick_branch() {
                None => {
                    let values = self.values.iter().map(|v| *v == Value::True).collect();
                    return Outcome::Sat(values);
                }
                Some(lit) => {
                    self.trail_lim.push(self.trail.len());
                    self.enqueue(lit, None);
                }
            }
        }
    }
}
