//! Runs the acceptance suite with one PASS/FAIL line per criterion.
//! Arguments that parse as numbers select a subset, e.g.
//! `cargo test --test acceptance -- 1 2 10`.

use jumpflock::acceptance::{all_passed, run_one, Context, CRITERIA};

fn main() {
    let selected: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Context::default();
    let mut results = Vec::new();
    for (id, _, _) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let c = run_one(id, &mut ctx);
        println!("{c}");
        results.push(c);
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if !all_passed(&results) {
        std::process::exit(1);
    }
}
