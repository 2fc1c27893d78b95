//! One PASS/FAIL line per acceptance criterion, with failing checks listed
//! beneath. Runs without the libtest harness so passing lines are visible.
//! A positional argument filters criteria by id, title or tag.

use std::process::ExitCode;

use holorefocus::acceptance::{select, Settings};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for c in select(None) {
            println!("{}: test", c.id);
        }
        return ExitCode::SUCCESS;
    }
    let filter = args
        .iter()
        .find(|a| !a.starts_with('-'))
        .map(String::as_str);
    let settings = Settings::default();
    let mut failed = 0;
    let selected = select(filter);
    for criterion in &selected {
        let outcome = criterion.run(&settings);
        println!("{}", outcome.summary());
        for c in outcome.checks.iter().filter(|c| !c.passed) {
            println!("    {c}");
        }
        if !outcome.passed {
            failed += 1;
        }
    }
    println!(
        "\nacceptance: {} passed, {failed} failed",
        selected.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
