//! The Boolean backend on its own: clauses, at-most-one groups, gate
//! definitions, models and DIMACS output.
//!
//! cargo run --example solver_basics

use leakscope::solver::{solve, solve_with_budget, Formula, SatResult, Var};

fn pigeonhole(pigeons: u32, holes: u32) -> Formula {
    let mut f = Formula::with_vars(pigeons * holes);
    let x = |p: u32, h: u32| Var(p * holes + h);
    for p in 0..pigeons {
        f.add_clause((0..holes).map(|h| x(p, h).positive()));
    }
    for h in 0..holes {
        f.add_at_most_one((0..pigeons).map(|p| x(p, h).positive()));
    }
    f
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // (a or b) and (not a or c), with d defined as b and c, and d forced false.
    let mut f = Formula::new();
    let (a, b, c) = (f.new_var(), f.new_var(), f.new_var());
    f.add_clause([a.positive(), b.positive()]);
    f.add_implies(a.positive(), c.positive());
    let d = f.define_and(b.positive(), c.positive());
    f.add_unit(!d);
    match solve(&f)? {
        SatResult::Sat(m) => {
            println!("sat: a={} b={} c={}", m.value(a), m.value(b), m.value(c));
            assert!(m.satisfies(&f));
        }
        SatResult::Unsat => println!("unsat"),
    }
    println!("{}", f.to_dimacs());

    for n in 3..=7 {
        let f = pigeonhole(n + 1, n);
        let start = std::time::Instant::now();
        let r = solve(&f)?;
        println!("pigeonhole {}->{}: {} in {:.2?}", n + 1, n, if r.is_sat() { "sat" } else { "unsat" }, start.elapsed());
    }
    match solve_with_budget(&pigeonhole(11, 10), 500) {
        Ok(r) => println!("pigeonhole 11->10 within 500 conflicts: sat={}", r.is_sat()),
        Err(e) => println!("pigeonhole 11->10: {e}"),
    }
    Ok(())
}
