use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use holorefocus::dynamics::{average_trajectories, integrate_master, LoopSpec};
use holorefocus::holonomy::{
    analytic_phases, complex_berry_phase, complex_dynamical_phase, decay_exponent_quadrature,
    gate_distortion, gate_serde, Branch, DistortionMetrics, Gate, GateReport, PhaseReport,
    PhaseSource,
};
use holorefocus::models::ModelId;
use holorefocus::qcore::{QState, C64};
use holorefocus::schemes::{ideal_gate, protocol, run_scheme};
use serde::Serialize;

use crate::config::{load, ExperimentConfig, Resolved, Verbosity};
use crate::error::CliError;
use crate::output::{to_json, write_atomic};
use crate::sweep::{run_sweep, write_sweep};

#[derive(Clone, Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

pub const TOOL: ToolInfo = ToolInfo {
    name: "holorefocus",
    version: env!("CARGO_PKG_VERSION"),
};

#[derive(Clone, Debug, Serialize)]
pub struct Phases {
    /// Closed forms with their quoted coefficients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PhaseReport>,
    /// Closed forms and oracles evaluated for the simulated first loop.
    pub evaluated: PhaseReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectorySummary {
    pub count: usize,
    pub seed: u64,
    /// Trace distance between the ensemble mean and the master equation.
    pub trace_distance: f64,
    /// Frobenius norm of the entrywise standard error of the mean.
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageInfo {
    pub model: ModelId,
    pub duration: f64,
    pub steps: usize,
    pub pulses: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: ToolInfo,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub gate: GateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commutator_norm: Option<f64>,
    pub phi_g_oracle: f64,
    pub distortion: DistortionMetrics,
    pub phases: Phases,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<TrajectorySummary>,
    #[serde(skip_serializing_if = "Option::is_none", with = "opt_gate")]
    pub ideal_gate: Option<Gate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<StageInfo>>,
}

mod opt_gate {
    use super::{gate_serde, Gate};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(g: &Option<Gate>, s: S) -> Result<S::Ok, S::Error> {
        match g {
            Some(g) => gate_serde::serialize(g, s),
            None => s.serialize_none(),
        }
    }
}

fn core(context: &str) -> impl Fn(holorefocus::Error) -> CliError + '_ {
    move |e| CliError::from_core(context, e)
}

fn phases(
    r: &Resolved,
    model: ModelId,
    stages: &[LoopSpec],
    phi_g: f64,
) -> Result<Phases, CliError> {
    let spec = &r.spec;
    let schedule = stages[0]
        .schedule()
        .expect("scheme stages are model driven");
    if model == ModelId::NmrSpinHalf {
        let t = schedule.loop_duration();
        let b = Branch::Plus;
        return Ok(Phases {
            reference: None,
            evaluated: PhaseReport::new(
                complex_dynamical_phase(spec.omega, spec.kappa, spec.theta0, t, b),
                complex_berry_phase(spec.omega, spec.kappa, spec.theta0, b),
                PhaseSource::ClosedForm,
            ),
        });
    }
    let reference =
        analytic_phases(model, spec.theta0, spec.kappa, spec.gamma).map_err(core("phases"))?;
    let decay = decay_exponent_quadrature(schedule, spec.kappa);
    Ok(Phases {
        reference: Some(reference),
        evaluated: PhaseReport::new(
            C64::new(0.0, decay),
            C64::from(-phi_g),
            PhaseSource::ClosedForm,
        ),
    })
}

fn trajectories(
    r: &Resolved,
    model: ModelId,
    stages: &[LoopSpec],
) -> Result<Option<TrajectorySummary>, CliError> {
    if r.trajectories == 0 {
        return Ok(None);
    }
    let [stage] = stages else {
        return Err(CliError::Validation(format!(
            "invalid parameter `trajectories`: scheme {} has {} stages, ensembles need a single-stage scheme",
            r.spec.scheme.name(),
            stages.len()
        )));
    };
    let basis = model.basis();
    let [c0, c1] = model.computational_labels();
    let a = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let psi0 =
        QState::from_components(&basis, &[(c0, a), (c1, a)]).map_err(core("trajectories"))?;
    let master = integrate_master(stage, &psi0.projector()).map_err(core("master equation"))?;
    let (mean, stderr) = average_trajectories(stage, &psi0, r.trajectories, r.spec.seed)
        .map_err(core("trajectories"))?;
    Ok(Some(TrajectorySummary {
        count: r.trajectories,
        seed: r.spec.seed,
        trace_distance: master.trace_distance(&mean).map_err(core("trajectories"))?,
        stderr,
    }))
}

pub fn build_report(r: &Resolved) -> Result<Report, CliError> {
    let spec = &r.spec;
    let context = format!("scheme {}", spec.scheme.name());
    let model = spec.resolve_model(r.model).map_err(core(&context))?;
    let stages = protocol(spec, r.model).map_err(core(&context))?;
    let outcome = run_scheme(spec, r.model).map_err(core(&context))?;
    let (ideal, phi_g) = ideal_gate(spec, r.model).map_err(core("holonomy oracle"))?;
    let distortion = gate_distortion(&outcome.report, &ideal);
    let full = r.verbosity == Verbosity::Full;
    let stage_info = full.then(|| {
        stages
            .iter()
            .map(|s| StageInfo {
                model: s.model().expect("scheme stages are model driven"),
                duration: s.duration(),
                steps: s.step_count(),
                pulses: s.pulses().len(),
            })
            .collect()
    });
    Ok(Report {
        tool: TOOL,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        seed: spec.seed,
        config: r.echo.clone(),
        gate: outcome.report,
        commutator_norm: outcome.commutator_norm,
        phi_g_oracle: phi_g,
        distortion,
        phases: phases(r, model, &stages, phi_g)?,
        trajectories: trajectories(r, model, &stages)?,
        ideal_gate: full.then_some(ideal),
        stages: stage_info,
    })
}

pub fn cmd_run(path: &Path) -> Result<(), CliError> {
    let (_, resolved) = load(path)?;
    let report = build_report(&resolved)?;
    let sweep = match &resolved.grid {
        Some(grid) => Some(run_sweep(&resolved, grid)?),
        None => None,
    };
    write_atomic(&resolved.report_path(), &to_json(&report))?;
    if let Some(table) = sweep {
        write_sweep(&resolved, &table)?;
    }
    println!(
        "{} on {}: survival {:.6e}, homogeneity defect {:.3e}, fidelity {:.6}",
        report.config.scheme.name(),
        report.gate.model,
        report.gate.survival,
        report.distortion.homogeneity_defect,
        report.distortion.fidelity
    );
    println!("wrote {}", resolved.report_path().display());
    Ok(())
}
