//! End-to-end control protocols: single loops, the NMR pi-pulse double loop,
//! the basis-swap double loop, the naive non-Abelian refocus and the
//! superposed loop, plus parameter sweeps over the damping rate.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_protocol_nojump, LoopSpec};
use crate::error::{Error, Result};
use crate::holonomy::{
    extract_gate_with_limit, gate_distortion, rotation_angle, wilson_holonomy, DistortionMetrics,
    Gate, GateReport, LEAKAGE_LIMIT,
};
use crate::models::{jump_set, schedule_for_loop, Direction, ModelId, ParamSchedule};
use crate::qcore::{sigma_x, sigma_y, QOperator, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SchemeKind {
    Single,
    NmrDouble,
    LambdaDouble,
    TripodNaiveDouble,
    Superposed,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Single => "SINGLE",
            SchemeKind::NmrDouble => "NMR_DOUBLE",
            SchemeKind::LambdaDouble => "LAMBDA_DOUBLE",
            SchemeKind::TripodNaiveDouble => "TRIPOD_NAIVE_DOUBLE",
            SchemeKind::Superposed => "SUPERPOSED",
        }
    }

    /// Model of the first stage; `Single` needs it supplied.
    pub fn implied_model(self) -> Option<ModelId> {
        match self {
            SchemeKind::Single => None,
            SchemeKind::NmrDouble => Some(ModelId::NmrSpinHalf),
            SchemeKind::LambdaDouble => Some(ModelId::LambdaFirst),
            SchemeKind::TripodNaiveDouble => Some(ModelId::TripodFirst),
            SchemeKind::Superposed => Some(ModelId::SuperposedDual),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseAxis {
    #[default]
    X,
    Y,
}

impl PulseAxis {
    pub fn operator(self) -> QOperator {
        match self {
            PulseAxis::X => sigma_x(),
            PulseAxis::Y => sigma_y(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub scheme: SchemeKind,
    pub omega: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub theta0: f64,
    pub ramp_fraction: f64,
    /// `None` selects `0.01 min(1/omega, 1/gamma)`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub pulse_axis: PulseAxis,
    /// Skip the `omega > 10 gamma` guard.
    pub allow_nonadiabatic: bool,
    pub wilson_steps: usize,
}

impl SchemeSpec {
    /// Default operating point: `omega / gamma = 200`, quarter-loop ramps.
    pub fn new(scheme: SchemeKind, kappa: f64, theta0: f64) -> Self {
        Self {
            scheme,
            omega: 1.0,
            gamma: 1.0 / 200.0,
            kappa,
            theta0,
            ramp_fraction: 0.25,
            dt: None,
            seed: 0,
            pulse_axis: PulseAxis::X,
            allow_nonadiabatic: false,
            wilson_steps: 4000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        positive("omega", self.omega)?;
        positive("gamma", self.gamma)?;
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::param(
                "kappa",
                format!("must be >= 0, got {}", self.kappa),
            ));
        }
        if self.kappa >= self.omega {
            return Err(Error::param(
                "kappa",
                format!(
                    "weak damping requires kappa < omega, got {} >= {}",
                    self.kappa, self.omega
                ),
            ));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.theta0) {
            return Err(Error::param(
                "theta0",
                format!("must lie in [0, pi/2], got {}", self.theta0),
            ));
        }
        if !(self.ramp_fraction.is_finite() && self.ramp_fraction >= 0.0) {
            return Err(Error::param(
                "ramp_fraction",
                format!("must be >= 0, got {}", self.ramp_fraction),
            ));
        }
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if self.wilson_steps < 100 {
            return Err(Error::param(
                "wilson_steps",
                format!("need at least 100, got {}", self.wilson_steps),
            ));
        }
        Ok(())
    }

    fn schedule(&self, model: ModelId, direction: Direction) -> Result<ParamSchedule> {
        if self.allow_nonadiabatic {
            ParamSchedule::new(
                self.theta0,
                self.gamma,
                self.omega,
                direction,
                self.ramp_fraction,
            )
        } else {
            schedule_for_loop(
                model,
                self.theta0,
                self.gamma,
                self.omega,
                direction,
                self.ramp_fraction,
            )
        }
    }

    fn stage(&self, model: ModelId, direction: Direction) -> Result<LoopSpec> {
        LoopSpec::new(
            model,
            self.schedule(model, direction)?,
            jump_set(model, self.kappa)?,
            self.dt,
        )
    }

    /// Model whose basis and computational levels the scheme acts on.
    pub fn resolve_model(&self, model: Option<ModelId>) -> Result<ModelId> {
        match (self.scheme, self.scheme.implied_model(), model) {
            (SchemeKind::Single, _, Some(m)) => match m {
                ModelId::NmrSpinHalf | ModelId::LambdaFirst | ModelId::TripodFirst => Ok(m),
                other => Err(Error::UnsupportedModel(other.name(), "single loops")),
            },
            (SchemeKind::Single, _, None) => {
                Err(Error::param("model", "the SINGLE scheme needs a model"))
            }
            (_, Some(implied), None) => Ok(implied),
            (_, Some(implied), Some(m)) if m == implied => Ok(m),
            (s, _, Some(m)) => Err(Error::param(
                "model",
                format!(
                    "scheme {} runs on {}, not {}",
                    s.name(),
                    s.implied_model().map_or("-", |x| x.name()),
                    m.name()
                ),
            )),
            (_, None, None) => unreachable!("only SINGLE lacks an implied model"),
        }
    }
}

/// Stages of a scheme in execution order.
pub fn protocol(spec: &SchemeSpec, model: Option<ModelId>) -> Result<Vec<LoopSpec>> {
    spec.validate()?;
    let model = spec.resolve_model(model)?;
    let fwd = Direction::Forward;
    let rev = Direction::Reversed;
    Ok(match spec.scheme {
        SchemeKind::Single | SchemeKind::Superposed => vec![spec.stage(model, fwd)?],
        SchemeKind::NmrDouble => {
            let second = spec.stage(model, rev)?;
            let t = second.duration();
            let pulse = spec.pulse_axis.operator();
            let second = second
                .with_pulse(0.0, pulse.clone())?
                .with_pulse(t, pulse)?;
            vec![spec.stage(model, fwd)?, second]
        }
        SchemeKind::LambdaDouble => vec![
            spec.stage(ModelId::LambdaFirst, fwd)?,
            spec.stage(ModelId::LambdaRefocus, rev)?,
        ],
        SchemeKind::TripodNaiveDouble => vec![
            spec.stage(ModelId::TripodFirst, fwd)?,
            spec.stage(ModelId::TripodNaiveRefocus, rev)?,
        ],
    })
}

fn run_stages(
    model: ModelId,
    stages: &[LoopSpec],
    leakage_limit: Option<f64>,
) -> Result<GateReport> {
    extract_gate_with_limit(
        model,
        &|psi| integrate_protocol_nojump(stages, psi),
        leakage_limit,
    )
}

fn run_spec(spec: &SchemeSpec, model: Option<ModelId>) -> Result<GateReport> {
    let m = spec.resolve_model(model)?;
    run_stages(m, &protocol(spec, model)?, Some(LEAKAGE_LIMIT))
}

fn with_scheme(spec: &SchemeSpec, scheme: SchemeKind) -> SchemeSpec {
    SchemeSpec {
        scheme,
        ..spec.clone()
    }
}

pub fn run_single_loop(spec: &SchemeSpec, model: ModelId) -> Result<GateReport> {
    run_spec(&with_scheme(spec, SchemeKind::Single), Some(model))
}

/// Loop, pi pulse, reversed loop, pi pulse.
pub fn run_double_loop_nmr(spec: &SchemeSpec) -> Result<GateReport> {
    run_spec(&with_scheme(spec, SchemeKind::NmrDouble), None)
}

/// First loop, then the basis-swapped loop traversed in reverse.
pub fn run_double_loop_lambda(spec: &SchemeSpec) -> Result<GateReport> {
    run_spec(&with_scheme(spec, SchemeKind::LambdaDouble), None)
}

/// Composite report of the naive tripod refocus, together with the Frobenius
/// norm of the commutator of the two individually extracted raw gates.
pub fn run_naive_refocus_tripod(spec: &SchemeSpec) -> Result<(GateReport, f64)> {
    let spec = with_scheme(spec, SchemeKind::TripodNaiveDouble);
    let stages = protocol(&spec, None)?;
    let m = ModelId::TripodFirst;
    let composite = run_stages(m, &stages, Some(LEAKAGE_LIMIT))?;
    let a = run_stages(m, &stages[..1], Some(LEAKAGE_LIMIT))?.gate;
    let b = run_stages(m, &stages[1..], Some(LEAKAGE_LIMIT))?.gate;
    Ok((composite, (a * b - b * a).norm()))
}

pub fn run_superposed_loop(spec: &SchemeSpec) -> Result<GateReport> {
    run_spec(&with_scheme(spec, SchemeKind::Superposed), None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeOutcome {
    pub report: GateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commutator_norm: Option<f64>,
}

/// Dispatches on `spec.scheme`.
pub fn run_scheme(spec: &SchemeSpec, model: Option<ModelId>) -> Result<SchemeOutcome> {
    if spec.scheme == SchemeKind::TripodNaiveDouble {
        spec.resolve_model(model)?;
        let (report, c) = run_naive_refocus_tripod(spec)?;
        return Ok(SchemeOutcome {
            report,
            commutator_norm: Some(c),
        });
    }
    Ok(SchemeOutcome {
        report: run_spec(spec, model)?,
        commutator_norm: None,
    })
}

fn nmr_ideal(spec: &SchemeSpec) -> Result<(Gate, f64)> {
    let berry = PI * (1.0 - spec.theta0.cos());
    let sched = spec.schedule(ModelId::NmrSpinHalf, Direction::Forward)?;
    // Phase picked up by |1> = up; |0> = down picks up the opposite.
    let up = match spec.scheme {
        SchemeKind::Single => 0.5 * spec.omega * sched.total_duration() + berry,
        _ => 2.0 * berry,
    };
    let g = Gate::new(
        C64::from_polar(1.0, up),
        C64::from(0.0),
        C64::from(0.0),
        C64::from_polar(1.0, -up),
    );
    Ok((g, berry))
}

/// Dissipation-free target of a scheme and its per-loop geometric phase:
/// the Wilson-loop adiabatic gate for dark-state models (the product over
/// stages for double loops) and the closed-form Berry phases for NMR.
pub fn ideal_gate(spec: &SchemeSpec, model: Option<ModelId>) -> Result<(Gate, f64)> {
    spec.validate()?;
    let m = spec.resolve_model(model)?;
    if m == ModelId::NmrSpinHalf {
        return nmr_ideal(spec);
    }
    let stages = protocol(spec, model)?;
    let mut gate = Gate::identity();
    let mut phase = None;
    for stage in &stages {
        let (sm, sched) = (
            stage.model().expect("model stage"),
            stage.schedule().expect("model stage"),
        );
        let w = wilson_holonomy(sm, sched, spec.wilson_steps)?;
        let g = w.computational_gate(sm)?;
        if phase.is_none() {
            phase = Some(w.abelian_phase().unwrap_or_else(|| rotation_angle(&g)));
        }
        gate = g * gate;
    }
    Ok((gate, phase.expect("at least one stage")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kappa_over_gamma: Vec<f64>,
    pub kappa_over_omega: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_over_gamma.is_empty() || self.kappa_over_omega.is_empty() {
            return Err(Error::param("grid", "sweep grid is empty"));
        }
        for &v in self.kappa_over_gamma.iter().chain(&self.kappa_over_omega) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(
                    "grid",
                    format!("ratios must be positive, got {v}"),
                ));
            }
        }
        if let Some(v) = self.kappa_over_omega.iter().find(|&&v| v >= 1.0) {
            return Err(Error::param(
                "grid",
                format!("kappa/omega must be < 1, got {v}"),
            ));
        }
        Ok(())
    }

    /// Grid points in row-major order over (`kappa/gamma`, `kappa/omega`).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for &rg in &self.kappa_over_gamma {
            for &ro in &self.kappa_over_omega {
                out.push((rg, ro));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: SchemeKind,
    pub model: ModelId,
    pub kappa: f64,
    pub gamma: f64,
    pub omega: f64,
    pub theta0: f64,
    pub survival: f64,
    pub fidelity: f64,
    pub homogeneity_defect: f64,
    pub unitarity_defect: f64,
    pub leakage: f64,
    pub phi_g_oracle: f64,
    pub in_regime: bool,
    pub log_distortion: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub metric: String,
    pub points: usize,
    pub intercept: Estimate,
    /// Exponent of `kappa/gamma`; absent when the fitted rows do not vary it.
    pub slope_kappa_over_gamma: Option<Estimate>,
    /// Exponent of `kappa/omega`; absent when the fitted rows do not vary it.
    pub slope_kappa_over_omega: Option<Estimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub fit: Option<SlopeFit>,
}

/// A point is in the weak-damping adiabatic regime when `kappa/omega <= 0.5`,
/// `omega > 10 gamma` and the gate stays in the computational subspace.
fn in_regime(row: &SweepRow) -> bool {
    row.kappa <= 0.5 * row.omega && row.omega > 10.0 * row.gamma && row.leakage <= LEAKAGE_LIMIT
}

/// Runs `base` at every grid point with `omega` fixed, `kappa = (kappa/omega)
/// omega` and `gamma = kappa / (kappa/gamma)`, then fits
/// `ln D = a + b ln(kappa/gamma) + c ln(kappa/omega)` for the log distortion
/// `D = ln(sigma_max / sigma_min)` over in-regime rows.
pub fn scaling_sweep(
    base: &SchemeSpec,
    model: Option<ModelId>,
    grid: &SweepGrid,
) -> Result<SweepTable> {
    grid.validate()?;
    let model = base.resolve_model(model)?;
    let rows: Vec<SweepRow> = grid
        .points()
        .into_par_iter()
        .map(|(rg, ro)| {
            let kappa = ro * base.omega;
            let spec = SchemeSpec {
                kappa,
                gamma: kappa / rg,
                allow_nonadiabatic: true,
                ..base.clone()
            };
            sweep_point(&spec, model)
        })
        .collect::<Result<_>>()?;
    let fit = fit_log_slopes(&rows);
    Ok(SweepTable { rows, fit })
}

fn sweep_point(spec: &SchemeSpec, model: ModelId) -> Result<SweepRow> {
    let stages = protocol(spec, Some(model))?;
    let report = run_stages(model, &stages, None)?;
    let (ideal, phi_g) = ideal_gate(spec, Some(model))?;
    let m: DistortionMetrics = gate_distortion(&report, &ideal);
    let mut row = SweepRow {
        scheme: spec.scheme,
        model,
        kappa: spec.kappa,
        gamma: spec.gamma,
        omega: spec.omega,
        theta0: spec.theta0,
        survival: report.survival,
        fidelity: m.fidelity,
        homogeneity_defect: m.homogeneity_defect,
        unitarity_defect: m.unitarity_defect,
        leakage: report.leakage,
        phi_g_oracle: phi_g,
        in_regime: false,
        log_distortion: m.log_distortion,
    };
    row.in_regime = in_regime(&row);
    Ok(row)
}

/// Ordinary least squares on the log metric; varying regressors only.
pub fn fit_log_slopes(rows: &[SweepRow]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.in_regime && r.log_distortion.is_finite() && r.log_distortion > 0.0)
        .map(|r| {
            (
                (r.kappa / r.gamma).ln(),
                (r.kappa / r.omega).ln(),
                r.log_distortion.ln(),
            )
        })
        .collect();
    let varies =
        |f: fn(&(f64, f64, f64)) -> f64| pts.iter().any(|p| (f(p) - f(&pts[0])).abs() > 1e-12);
    if pts.is_empty() {
        return None;
    }
    let use_g = varies(|p| p.0);
    let use_o = varies(|p| p.1);
    let k = 1 + use_g as usize + use_o as usize;
    if pts.len() <= k {
        return None;
    }
    let x = DMatrix::from_fn(pts.len(), k, |i, j| {
        let p = pts[i];
        match (j, use_g) {
            (0, _) => 1.0,
            (1, true) => p.0,
            _ => p.1,
        }
    });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.2));
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse()?;
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let dof = (pts.len() - k) as f64;
    let s2 = resid.norm_squared() / dof;
    let est = |j: usize| Estimate {
        value: beta[j],
        stderr: (s2 * inv[(j, j)]).max(0.0).sqrt(),
    };
    let mut next = 1;
    let mut take = |used: bool| {
        used.then(|| {
            let e = est(next);
            next += 1;
            e
        })
    };
    let slope_kappa_over_gamma = take(use_g);
    let slope_kappa_over_omega = take(use_o);
    Some(SlopeFit {
        metric: "log_distortion".into(),
        points: pts.len(),
        intercept: est(0),
        slope_kappa_over_gamma,
        slope_kappa_over_omega,
    })
}
