//! Runs every acceptance criterion and prints one line per criterion.

use std::process::ExitCode;

use rwre::validate::{criteria, run_criterion};

fn main() -> ExitCode {
    let mut failed = 0;
    for c in criteria() {
        let r = run_criterion(&c);
        let flag = if r.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{flag}] {} ({:.1} s): {}", r.id, r.name, r.seconds, r.detail);
        if !r.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
