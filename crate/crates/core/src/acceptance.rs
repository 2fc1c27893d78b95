//! Desk-scale acceptance suite.
//!
//! Every criterion is a function of [`Settings`] that returns a list of
//! measured checks. Both the `verify` command and the `acceptance` test
//! target run these.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    average_trajectories, default_dt, integrate_conditional_protocol, integrate_master,
    integrate_nojump, integrate_nojump_observed, sample_trajectory, Event, LoopSpec,
};
use crate::error::{Error, Result};
use crate::holonomy::{
    angle_distance, complex_berry_phase, complex_dynamical_phase, decay_exponent_quadrature,
    gate_distortion, relative_phase, rotation_angle, singular_values, track_nmr_phase,
    wilson_holonomy, Branch, Gate, GateReport,
};
use crate::models::{
    dark_states, jump_set, total_damping, Direction, JumpChannel, ModelId, ParamSchedule,
};
use crate::qcore::{LevelBasis, QOperator, QState, C64};
use crate::schemes::{
    ideal_gate, protocol, run_double_loop_lambda, run_double_loop_nmr, run_naive_refocus_tripod,
    run_single_loop, run_superposed_loop, SchemeKind, SchemeSpec,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Settings {
    /// Multiplies every integration step.
    pub dt_scale: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { dt_scale: 1.0 }
    }
}

impl Settings {
    fn dt(&self, omega: f64, gamma: f64) -> f64 {
        default_dt(omega, gamma) * self.dt_scale
    }

    fn spec(&self, scheme: SchemeKind, kappa: f64, theta0: f64) -> SchemeSpec {
        let mut s = SchemeSpec::new(scheme, kappa, theta0);
        s.dt = Some(self.dt(s.omega, s.gamma));
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Below {
        limit: f64,
    },
    Above {
        limit: f64,
    },
    Between {
        lo: f64,
        hi: f64,
    },
    /// Reported only.
    Record,
}

impl Bound {
    fn admits(self, v: f64) -> bool {
        match self {
            Bound::Below { limit } => v < limit,
            Bound::Above { limit } => v > limit,
            Bound::Between { lo, hi } => (lo..=hi).contains(&v),
            Bound::Record => true,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Below { limit } => write!(f, "< {limit:.3e}"),
            Bound::Above { limit } => write!(f, "> {limit:.3e}"),
            Bound::Between { lo, hi } => write!(f, "in [{lo:.4}, {hi:.4}]"),
            Bound::Record => write!(f, "recorded"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub value: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Check {
    fn new(label: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self {
            label: label.into(),
            value,
            bound,
            passed: bound.admits(value),
        }
    }

    fn below(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(label, value, Bound::Below { limit })
    }

    fn above(label: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(label, value, Bound::Above { limit })
    }

    fn between(label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(label, value, Bound::Between { lo, hi })
    }

    fn record(label: impl Into<String>, value: f64) -> Self {
        Self::new(label, value, Bound::Record)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok  " } else { "FAIL" };
        write!(
            f,
            "{mark} {}: {:.6e} ({})",
            self.label, self.value, self.bound
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub error: Option<String>,
    pub seconds: f64,
}

impl Outcome {
    /// One line: verdict, id, title, failing check count and runtime.
    pub fn summary(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let tail = match &self.error {
            Some(e) => format!("error: {e}"),
            None => format!(
                "{}/{} checks ok",
                self.checks.len() - failed,
                self.checks.len()
            ),
        };
        format!(
            "{verdict} {} {} ({tail}, {:.1} s)",
            self.id, self.title, self.seconds
        )
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.summary())?;
        for c in &self.checks {
            writeln!(f, "    {c}")?;
        }
        Ok(())
    }
}

pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    pub tags: &'static [&'static str],
    run: fn(&Settings) -> Result<Vec<Check>>,
}

impl Criterion {
    /// Case-insensitive substring match on id, title and tags.
    pub fn matches(&self, filter: &str) -> bool {
        let f = filter.to_lowercase();
        self.id.to_lowercase().contains(&f)
            || self.title.to_lowercase().contains(&f)
            || self.tags.iter().any(|t| t.contains(&f))
    }

    pub fn run(&self, settings: &Settings) -> Outcome {
        let start = Instant::now();
        let (checks, error) = match (self.run)(settings) {
            Ok(c) => (c, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        let passed = error.is_none() && !checks.is_empty() && checks.iter().all(|c| c.passed);
        Outcome {
            id: self.id,
            title: self.title,
            passed,
            checks,
            error,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

pub const CRITERIA: [Criterion; 9] = [
    Criterion {
        id: "C1",
        title: "unitary-limit Berry phase",
        tags: &["nmr", "berry", "phase"],
        run: unitary_berry_phase,
    },
    Criterion {
        id: "C2",
        title: "complex quasi-eigenstate phases",
        tags: &["nmr", "phase", "closed-form"],
        run: complex_phases,
    },
    Criterion {
        id: "C3",
        title: "refocused homogeneity with pi pulses",
        tags: &["nmr", "refocus", "homogeneity"],
        run: nmr_refocus,
    },
    Criterion {
        id: "C4",
        title: "lambda single-loop distortion",
        tags: &["lambda", "distortion", "scaling"],
        run: lambda_single,
    },
    Criterion {
        id: "C5",
        title: "abelian basis-swap double loop",
        tags: &["lambda", "refocus", "scaling"],
        run: lambda_double,
    },
    Criterion {
        id: "C6",
        title: "naive non-abelian refocus",
        tags: &["tripod", "refocus", "non-abelian"],
        run: tripod_naive,
    },
    Criterion {
        id: "C7",
        title: "superposed loop",
        tags: &["superposed", "non-abelian", "homogeneity"],
        run: superposed,
    },
    Criterion {
        id: "C8",
        title: "engine cross-validation",
        tags: &["engines", "trajectories", "master"],
        run: engines,
    },
    Criterion {
        id: "C9",
        title: "numerical hygiene",
        tags: &["convergence", "hygiene"],
        run: hygiene,
    },
];

pub fn select(filter: Option<&str>) -> Vec<&'static Criterion> {
    CRITERIA
        .iter()
        .filter(|c| filter.is_none_or(|f| c.matches(f)))
        .collect()
}

fn theta_label(theta: f64) -> &'static str {
    const NAMED: [(f64, &str); 5] = [
        (0.0, "0"),
        (FRAC_PI_6, "pi/6"),
        (FRAC_PI_4, "pi/4"),
        (FRAC_PI_3, "pi/3"),
        (FRAC_PI_2, "pi/2"),
    ];
    NAMED
        .iter()
        .find(|(v, _)| (v - theta).abs() < 1e-12)
        .map_or("theta", |(_, n)| n)
}

fn branch_label(b: Branch) -> &'static str {
    match b {
        Branch::Plus => "+",
        Branch::Minus => "-",
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn max_entry_diff(a: &Gate, b: &Gate) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn nmr_stages(
    s: &Settings,
    scheme: SchemeKind,
    kappa: f64,
    theta: f64,
    ramp: f64,
) -> Result<Vec<LoopSpec>> {
    let mut spec = s.spec(scheme, kappa, theta);
    spec.ramp_fraction = ramp;
    protocol(&spec, Some(ModelId::NmrSpinHalf))
}

fn unitary_berry_phase(s: &Settings) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for theta in [FRAC_PI_6, FRAC_PI_3, FRAC_PI_2] {
        let tl = theta_label(theta);
        let berry = PI * (1.0 - theta.cos());

        let double = nmr_stages(s, SchemeKind::NmrDouble, 0.0, theta, 0.25)?;
        let up = track_nmr_phase(&double, Branch::Plus)?.phase.re;
        let down = track_nmr_phase(&double, Branch::Minus)?.phase.re;
        out.push(Check::below(
            format!("double loop, up, theta={tl}: distance to 2 pi (1 - cos) mod 2pi"),
            angle_distance(up, 2.0 * berry),
            5e-3,
        ));
        out.push(Check::below(
            format!("double loop, down, theta={tl}: distance to -2 pi (1 - cos) mod 2pi"),
            angle_distance(down, -2.0 * berry),
            5e-3,
        ));
        out.push(Check::below(
            format!("double loop, theta={tl}: dynamical residual up + down"),
            angle_distance(up + down, 0.0),
            1e-3,
        ));

        // Ramp-free loop, so that T is exactly the loop period.
        let single = nmr_stages(s, SchemeKind::Single, 0.0, theta, 0.0)?;
        let total = single[0].duration();
        let omega = single[0].schedule().expect("model stage").omega;
        let expected = 0.5 * omega * total + berry;
        let up = track_nmr_phase(&single, Branch::Plus)?.phase.re;
        let down = track_nmr_phase(&single, Branch::Minus)?.phase.re;
        out.push(Check::below(
            format!(
                "single loop, up, theta={tl}: unwrapped deviation from Omega T/2 + pi (1 - cos)"
            ),
            (up - expected).abs(),
            1e-2,
        ));
        out.push(Check::below(
            format!("single loop, down, theta={tl}: unwrapped deviation from -(Omega T/2 + pi (1 - cos))"),
            (down + expected).abs(),
            1e-2,
        ));

        let ramped = nmr_stages(s, SchemeKind::Single, 0.0, theta, 0.25)?;
        let expected = 0.5 * omega * ramped[0].duration() + berry;
        out.push(Check::record(
            format!("ramped single loop, up, theta={tl}: unwrapped deviation"),
            (track_nmr_phase(&ramped, Branch::Plus)?.phase.re - expected).abs(),
        ));
    }
    Ok(out)
}

fn complex_phases(s: &Settings) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for ratio in [0.0, 0.01, 0.1] {
        for theta in [FRAC_PI_4, FRAC_PI_2] {
            for branch in [Branch::Plus, Branch::Minus] {
                let stages = nmr_stages(s, SchemeKind::Single, ratio, theta, 0.0)?;
                let sched = stages[0].schedule().expect("model stage").clone();
                let (omega, gamma, kappa) = (sched.omega, sched.gamma, ratio * sched.omega);
                let track = track_nmr_phase(&stages, branch)?;
                // Real part from the adiabatic coefficient, imaginary part from the norm.
                let tracked = C64::new(track.phase.re, 0.5 * track.survival.ln());
                let closed =
                    complex_dynamical_phase(omega, kappa, theta, sched.loop_duration(), branch)
                        + complex_berry_phase(omega, kappa, theta, branch);
                let tag = format!(
                    "kappa/Omega={ratio}, theta={}, branch {}",
                    theta_label(theta),
                    branch_label(branch)
                );
                if ratio == 0.0 {
                    out.push(Check::record(
                        format!("{tag}: log-modulus of the adiabatic coefficient"),
                        track.phase.im,
                    ));
                    out.push(Check::below(
                        format!("{tag}: |Im| of integrated phase"),
                        tracked.im.abs(),
                        1e-9,
                    ));
                    out.push(Check::below(
                        format!("{tag}: |Im| of closed form"),
                        closed.im.abs(),
                        1e-9,
                    ));
                } else {
                    let tol = 5.0 * gamma / omega + 5.0 * ratio * ratio;
                    out.push(Check::below(
                        format!("{tag}: Re distance mod 2pi"),
                        angle_distance(tracked.re, closed.re),
                        tol,
                    ));
                    out.push(Check::below(
                        format!("{tag}: Im deviation"),
                        (tracked.im - closed.im).abs(),
                        tol,
                    ));
                }
            }
        }
    }
    Ok(out)
}

fn nmr_refocus(s: &Settings) -> Result<Vec<Check>> {
    let theta = FRAC_PI_3;
    let spec = s.spec(SchemeKind::NmrDouble, 0.01, theta);
    let kappa_over_gamma = spec.kappa / spec.gamma;
    let double = run_double_loop_nmr(&spec)?;
    let single = run_single_loop(&spec, ModelId::NmrSpinHalf)?;

    let stages = protocol(&spec, None)?;
    let basis = ModelId::NmrSpinHalf.basis();
    let rho0 = QOperator::identity(&basis).scaled(C64::from(0.5));
    let conditional = integrate_conditional_protocol(&stages, &rho0)?.trace().re;
    let total: f64 = stages.iter().map(|st| st.duration()).sum();

    Ok(vec![
        Check::below("double-loop homogeneity defect", double.homogeneity, 1e-3),
        Check::above(
            "single-loop homogeneity defect",
            single.homogeneity,
            0.1 * PI * kappa_over_gamma,
        ),
        Check::below(
            "survival vs conditional density-matrix trace, relative",
            (double.survival - conditional).abs() / conditional,
            1e-6,
        ),
        Check::record("survival", double.survival),
        Check::record(
            "exp(-kappa T / 2), T = both loops with ramps",
            (-0.5 * spec.kappa * total).exp(),
        ),
    ])
}

const LAMBDA_RATIOS: [f64; 3] = [0.1, 0.5, 1.0];

fn lambda_single(s: &Settings) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut distortion = Vec::new();
    for r in LAMBDA_RATIOS {
        let mut spec = s.spec(SchemeKind::Single, 0.0, FRAC_PI_4);
        spec.kappa = r * spec.gamma;
        let report = run_single_loop(&spec, ModelId::LambdaFirst)?;
        let stage = protocol(&spec, Some(ModelId::LambdaFirst))?;
        let exponent =
            decay_exponent_quadrature(stage[0].schedule().expect("model stage"), spec.kappa);
        let ratio = report.gate[(0, 0)].norm() / report.gate[(1, 1)].norm();
        let expected = (-exponent).exp();
        out.push(Check::below(
            format!("kappa3/gamma={r}: |g00|/|g11| relative to quadrature"),
            (ratio / expected - 1.0).abs(),
            0.02,
        ));
        distortion.push(gate_distortion(&report, &Gate::identity()).log_distortion);
    }
    out.push(Check::between(
        "log-log slope of distortion vs kappa3/gamma",
        loglog_slope(&LAMBDA_RATIOS, &distortion),
        0.85,
        1.15,
    ));
    Ok(out)
}

/// Normalized gate with the phase of its `(0,0)` entry removed.
fn phase_fixed(report: &GateReport) -> Gate {
    let (smax, _) = singular_values(&report.gate);
    let g00 = report.gate[(0, 0)];
    report.gate / (C64::from(smax) * (g00 / g00.norm()))
}

fn lambda_double(s: &Settings) -> Result<Vec<Check>> {
    let base = s.spec(SchemeKind::LambdaDouble, 0.0, FRAC_PI_4);
    let (_, phi_g) = ideal_gate(&base, None)?;
    let reference = phase_fixed(&run_double_loop_lambda(&base)?);
    let mut out = Vec::new();
    let mut residual = Vec::new();
    let mut kappa_over_omega = Vec::new();
    for r in LAMBDA_RATIOS {
        let spec = SchemeSpec {
            kappa: r * base.gamma,
            ..base.clone()
        };
        let report = run_double_loop_lambda(&spec)?;
        out.push(Check::below(
            format!("kappa3/gamma={r}: homogeneity defect"),
            report.homogeneity,
            1e-2,
        ));
        out.push(Check::below(
            format!("kappa3/gamma={r}: relative phase vs 2 phi_g (oracle)"),
            angle_distance(relative_phase(&report.normalized_gate), 2.0 * phi_g),
            1e-2,
        ));
        residual.push((phase_fixed(&report) - reference).norm());
        kappa_over_omega.push(spec.kappa / spec.omega);
    }
    out.push(Check::between(
        "log-log slope of residual error vs kappa3/Omega",
        loglog_slope(&kappa_over_omega, &residual),
        0.7,
        1.3,
    ));
    Ok(out)
}

fn tripod_naive(s: &Settings) -> Result<Vec<Check>> {
    let mut spec = s.spec(SchemeKind::TripodNaiveDouble, 0.0, FRAC_PI_3);
    spec.kappa = spec.gamma;
    let (composite, commutator) = run_naive_refocus_tripod(&spec)?;
    let single = run_single_loop(&spec, ModelId::TripodFirst)?;
    Ok(vec![
        Check::above(
            "commutator norm of the two loop gates, kappa3=gamma",
            commutator,
            0.1,
        ),
        Check::above(
            "composite defect / single-loop defect",
            composite.homogeneity / single.homogeneity,
            0.5,
        ),
    ])
}

fn superposed(s: &Settings) -> Result<Vec<Check>> {
    let mut spec = s.spec(SchemeKind::Superposed, 0.0, FRAC_PI_3);
    spec.kappa = 0.5 * spec.gamma;
    let report = run_superposed_loop(&spec)?;
    let metrics = gate_distortion(&report, &Gate::identity());

    let model = ModelId::SuperposedDual;
    let stage = protocol(&spec, None)?;
    let schedule = stage[0].schedule().expect("model stage").clone();
    let w = wilson_holonomy(model, &schedule, spec.wilson_steps)?;
    let phi_g = rotation_angle(&w.computational_gate(model)?);
    let target = crate::holonomy::sigma_y_rotation(phi_g);
    let aligned = crate::holonomy::align_phase(&report.normalized_gate, &target);

    let damping = total_damping(&model.basis(), &jump_set(model, spec.kappa)?)?;
    let mut diag_dev: f64 = 0.0;
    let mut cross: f64 = 0.0;
    let samples = 1000;
    for k in 0..=samples {
        let t = schedule.total_duration() * k as f64 / samples as f64;
        let (theta, phi) = schedule.angles(t);
        let d = dark_states(model, theta, phi)?;
        let want = spec.kappa * theta.sin().powi(2);
        for state in &d {
            diag_dev = diag_dev.max((damping.expectation(state)?.re - want).abs());
        }
        let cross_term = d[0].inner(&damping.apply(&d[1])?)?;
        cross = cross.max(cross_term.norm());
    }
    let exponent = decay_exponent_quadrature(&schedule, spec.kappa);

    Ok(vec![
        Check::below(
            "unitarity defect of the normalized gate",
            metrics.unitarity_defect,
            1e-2,
        ),
        Check::below(
            "max entry deviation from exp(i phi_g sigma_y), phi_g from Wilson loop",
            max_entry_diff(&aligned, &target),
            1e-2,
        ),
        Check::below(
            "dark-state damping expectation vs kappa3 sin^2 theta",
            diag_dev,
            1e-12,
        ),
        Check::below("dark-state damping cross term", cross, 1e-12),
        Check::record("survival", report.survival),
        Check::record("exp(2 phi_d) by quadrature", (2.0 * exponent).exp()),
    ])
}

fn small_lambda(kappa: f64, dt: f64) -> Result<LoopSpec> {
    let model = ModelId::LambdaFirst;
    let schedule = ParamSchedule::new(FRAC_PI_4, 0.05, 1.0, Direction::Forward, 0.25)?;
    LoopSpec::new(model, schedule, jump_set(model, kappa)?, Some(dt))
}

fn lambda_input() -> Result<QState> {
    let basis = ModelId::LambdaFirst.basis();
    let [c0, c1] = ModelId::LambdaFirst.computational_labels();
    let a = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    QState::from_components(&basis, &[(c0, a), (c1, a)])
}

const TRAJECTORIES: usize = 10_000;

/// Kolmogorov-Smirnov distance of right-censored samples to `Exp(rate)`
/// on `[0, horizon]`.
pub fn censored_ks(samples: &[Option<f64>], rate: f64, horizon: f64) -> f64 {
    let n = samples.len() as f64;
    let mut times: Vec<f64> = samples.iter().flatten().copied().collect();
    times.sort_by(f64::total_cmp);
    let cdf = |t: f64| 1.0 - (-rate * t).exp();
    let mut d: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let f = cdf(t);
        d = d
            .max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs());
    }
    d.max((cdf(horizon) - times.len() as f64 / n).abs())
}

fn engines(s: &Settings) -> Result<Vec<Check>> {
    let dt = 0.01 * s.dt_scale;
    let mut out = Vec::new();

    let spec = small_lambda(0.05, dt)?;
    let psi0 = lambda_input()?;
    let master = integrate_master(&spec, &psi0.projector())?;
    let (mean, stderr) = average_trajectories(&spec, &psi0, TRAJECTORIES, 7)?;
    let distance = master.trace_distance(&mean)?;
    out.push(Check::below(
        "trace distance master vs trajectory mean, in units of stderr",
        distance / stderr,
        3.0,
    ));

    let nojump = integrate_nojump(&spec, &psi0)?;
    let quiet = (0..1000u64)
        .map(|seed| sample_trajectory(&spec, &psi0, seed))
        .find(|r| r.as_ref().map_or(true, |r| r.events.is_empty()))
        .ok_or_else(|| Error::InvalidState("no jump-free trajectory among 1000 seeds".into()))??;
    let gap = (quiet.final_state.amplitudes() - nojump.normalized_final.amplitudes())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    out.push(Check::below(
        "jump-free trajectory vs no-jump state, max amplitude",
        gap,
        1e-9,
    ));
    out.push(Check::below(
        "jump-free trajectory weight vs no-jump survival",
        (quiet.weight - nojump.survival).abs(),
        1e-9,
    ));

    let clean = small_lambda(0.0, dt)?;
    let pure = integrate_nojump(&clean, &psi0)?
        .normalized_final
        .projector();
    let mixed = integrate_master(&clean, &psi0.projector())?;
    let sampled = sample_trajectory(&clean, &psi0, 11)?
        .final_state
        .projector();
    out.push(Check::below(
        "kappa=0: no-jump vs master",
        pure.trace_distance(&mixed)?,
        1e-8,
    ));
    out.push(Check::below(
        "kappa=0: trajectory vs master",
        sampled.trace_distance(&mixed)?,
        1e-8,
    ));
    out.push(Check::below(
        "kappa=0: trajectory vs no-jump",
        sampled.trace_distance(&pure)?,
        1e-8,
    ));

    let rate = 0.3;
    let horizon = 10.0 / rate;
    let basis = LevelBasis::new(["a", "b"])?;
    let channel = JumpChannel::new(rate, QOperator::identity(&basis), None)?;
    let decay = LoopSpec::constant(
        QOperator::zeros(&basis),
        vec![channel],
        horizon,
        0.01 * s.dt_scale / rate,
    )?;
    let start = QState::basis_state(&basis, "a")?;
    let first: Vec<Option<f64>> = (0..TRAJECTORIES as u64)
        .into_par_iter()
        .map(|seed| {
            sample_trajectory(&decay, &start, 1_000_000 + seed)
                .map(|r| r.events.first().map(|e| e.time))
        })
        .collect::<Result<_>>()?;
    out.push(Check::below(
        "KS distance of first-jump times to Exp(kappa)",
        censored_ks(&first, rate, horizon),
        0.02,
    ));
    Ok(out)
}

type GateRun = fn(&SchemeSpec) -> Result<GateReport>;

fn nmr_single(spec: &SchemeSpec) -> Result<GateReport> {
    run_single_loop(spec, ModelId::NmrSpinHalf)
}

fn lambda_single_run(spec: &SchemeSpec) -> Result<GateReport> {
    run_single_loop(spec, ModelId::LambdaFirst)
}

/// Observed order from gates at `dt`, `dt/2`, `dt/4`, and the finest change.
fn observed_order(spec: &SchemeSpec, base_dt: f64, run: GateRun) -> Result<(f64, f64)> {
    let gates = [1.0, 0.5, 0.25]
        .iter()
        .map(|f| {
            let s = SchemeSpec {
                dt: Some(base_dt * f),
                ..spec.clone()
            };
            run(&s).map(|r| r.gate)
        })
        .collect::<Result<Vec<_>>>()?;
    let e1 = max_entry_diff(&gates[0], &gates[1]);
    let e2 = max_entry_diff(&gates[1], &gates[2]);
    Ok(((e1 / e2).log2(), e2))
}

fn hygiene(s: &Settings) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let cases: [(&str, SchemeSpec, GateRun); 3] = [
        (
            "berry phase config (nmr single loop)",
            s.spec(SchemeKind::Single, 0.0, FRAC_PI_3),
            nmr_single,
        ),
        (
            "lambda single loop, kappa3=gamma",
            {
                let mut sp = s.spec(SchemeKind::Single, 0.0, FRAC_PI_4);
                sp.kappa = sp.gamma;
                sp
            },
            lambda_single_run,
        ),
        (
            "superposed loop, kappa3=gamma/2",
            {
                let mut sp = s.spec(SchemeKind::Superposed, 0.0, FRAC_PI_3);
                sp.kappa = 0.5 * sp.gamma;
                sp
            },
            run_superposed_loop,
        ),
    ];
    for (name, spec, run) in cases {
        let base_dt = 2.0 * spec.dt.expect("set by settings");
        let (order, finest) = observed_order(&spec, base_dt, run)?;
        out.push(Check::above(
            format!("{name}: observed order under dt halving"),
            order,
            3.5,
        ));
        out.push(Check::below(
            format!("{name}: change at the finest halving"),
            finest,
            1e-6,
        ));
    }

    let spec = small_lambda(0.05, 0.01 * s.dt_scale)?;
    let psi0 = lambda_input()?;
    let rho = integrate_master(&spec, &psi0.projector())?;
    out.push(Check::below(
        "master-equation trace drift",
        (rho.trace().re - 1.0).abs(),
        1e-8,
    ));

    let mut rise: f64 = 0.0;
    let mut last = f64::INFINITY;
    integrate_nojump_observed(&spec, &psi0, &mut |ev| {
        let n = match ev {
            Event::Start { state, .. } | Event::Step { state, .. } => state.norm_squared(),
            Event::Pulse { after, .. } => after.norm_squared(),
        };
        rise = rise.max(n - last);
        last = n;
    })?;
    out.push(Check::below(
        "largest step-to-step rise of the no-jump norm",
        rise,
        1e-14,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects_nmr_criteria() {
        let ids: Vec<_> = select(Some("NMR")).iter().map(|c| c.id).collect();
        assert_eq!(ids, ["C1", "C2", "C3"]);
        assert_eq!(select(None).len(), 9);
        assert!(select(Some("no such criterion")).is_empty());
    }

    #[test]
    fn loglog_slope_recovers_power() {
        let xs = [0.1, 0.3, 1.0, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn censored_ks_of_exact_quantiles_is_small() {
        let rate = 2.0;
        let n = 2000;
        let horizon = 1.0;
        let samples: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                let t = -(1.0 - u).ln() / rate;
                (t < horizon).then_some(t)
            })
            .collect();
        assert!(censored_ks(&samples, rate, horizon) < 1e-3);
        assert!(censored_ks(&samples, 2.0 * rate, horizon) > 0.1);
    }

    #[test]
    fn bounds_classify() {
        assert!(Check::below("x", 0.5, 1.0).passed);
        assert!(!Check::above("x", 0.5, 1.0).passed);
        assert!(Check::between("x", 1.0, 0.85, 1.15).passed);
        assert!(Check::record("x", f64::NAN).passed);
        assert!(!Check::below("x", f64::NAN, 1.0).passed);
    }
}
