use std::path::Path;

use holorefocus::schemes::{scaling_sweep, SlopeFit, SweepGrid, SweepTable};
use serde::Serialize;

use crate::config::{load, ExperimentConfig, Resolved};
use crate::error::CliError;
use crate::output::{to_json, write_atomic};
use crate::run::{ToolInfo, TOOL};

#[derive(Clone, Debug, Serialize)]
pub struct FitSummary {
    pub tool: ToolInfo,
    pub config: ExperimentConfig,
    pub rows: usize,
    pub rows_in_regime: usize,
    /// Absent when too few in-regime rows remain to fit.
    pub fit: Option<SlopeFit>,
}

pub fn run_sweep(r: &Resolved, grid: &SweepGrid) -> Result<SweepTable, CliError> {
    scaling_sweep(&r.sweep_spec(), r.model, grid)
        .map_err(|e| CliError::from_core(&format!("sweep of scheme {}", r.spec.scheme.name()), e))
}

pub fn csv_bytes(table: &SweepTable) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &table.rows {
        w.serialize(row)
            .map_err(|e| CliError::Io(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Io(format!("csv: {e}")))
}

pub fn write_sweep(r: &Resolved, table: &SweepTable) -> Result<(), CliError> {
    let summary = FitSummary {
        tool: TOOL,
        config: r.sweep_echo(),
        rows: table.rows.len(),
        rows_in_regime: table.rows.iter().filter(|row| row.in_regime).count(),
        fit: table.fit.clone(),
    };
    write_atomic(&r.sweep_csv_path(), &csv_bytes(table)?)?;
    write_atomic(&r.fit_path(), &to_json(&summary))?;
    Ok(())
}

pub fn cmd_sweep(path: &Path) -> Result<(), CliError> {
    let (_, resolved) = load(path)?;
    let grid = resolved.grid.clone().ok_or_else(|| {
        CliError::Validation("invalid parameter `grid`: a sweep config needs a grid block".into())
    })?;
    let table = run_sweep(&resolved, &grid)?;
    write_sweep(&resolved, &table)?;
    let in_regime = table.rows.iter().filter(|row| row.in_regime).count();
    println!("{} rows, {in_regime} in regime", table.rows.len());
    match &table.fit {
        Some(fit) => {
            if let Some(s) = fit.slope_kappa_over_gamma {
                println!("slope vs kappa/gamma: {:.4} +- {:.4}", s.value, s.stderr);
            }
            if let Some(s) = fit.slope_kappa_over_omega {
                println!("slope vs kappa/omega: {:.4} +- {:.4}", s.value, s.stderr);
            }
        }
        None => println!("no fit: too few in-regime rows"),
    }
    println!(
        "wrote {} and {}",
        resolved.sweep_csv_path().display(),
        resolved.fit_path().display()
    );
    Ok(())
}
