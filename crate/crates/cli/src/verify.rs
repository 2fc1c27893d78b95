use holorefocus::acceptance::{select, Settings};

use crate::error::CliError;

pub fn cmd_verify(filter: Option<&str>, dt_scale: f64, details: bool) -> Result<(), CliError> {
    if !(dt_scale.is_finite() && dt_scale > 0.0) {
        return Err(CliError::Validation(format!(
            "invalid parameter `dt-scale`: must be positive, got {dt_scale}"
        )));
    }
    let chosen = select(filter);
    if chosen.is_empty() {
        return Err(CliError::Validation(format!(
            "invalid parameter `filter`: no criterion matches {:?}",
            filter.unwrap_or_default()
        )));
    }
    let settings = Settings { dt_scale };
    let mut failed = 0;
    for criterion in &chosen {
        let outcome = criterion.run(&settings);
        println!("{}", outcome.summary());
        for check in &outcome.checks {
            if details || !check.passed {
                println!("    {check}");
            }
        }
        failed += usize::from(!outcome.passed);
    }
    println!("{} passed, {failed} failed", chosen.len() - failed);
    if failed > 0 {
        return Err(CliError::VerifyFailed {
            failed,
            total: chosen.len(),
        });
    }
    Ok(())
}
