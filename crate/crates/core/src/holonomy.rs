//! Gates, complex phases and the adiabatic holonomy oracle.
//!
//! Phase convention: a complex phase `p` multiplies an amplitude by
//! `exp(-i p)`, so its real part is an ordinary phase and its imaginary part
//! is the log of the amplitude modulus (negative for decay).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_protocol_observed, Event, LoopSpec, NoJumpResult};
use crate::error::{Error, Result};
use crate::models::{dark_frame, ModelId, ParamSchedule, SegmentKind, SINK};
use crate::qcore::{QState, C64, I, ONE, ZERO};

/// Leakage above which an extracted gate is rejected.
pub const LEAKAGE_LIMIT: f64 = 0.05;

/// Relative off-diagonal weight below which a gate counts as diagonal.
const DIAGONAL_FORM: f64 = 0.1;

pub type Gate = Matrix2<C64>;

/// Serializes a 2x2 complex matrix as row-major `[[[re, im], ..], ..]`.
pub mod gate_serde {
    use super::{Gate, C64};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(g: &Gate, s: S) -> Result<S::Ok, S::Error> {
        let rows = [[g[(0, 0)], g[(0, 1)]], [g[(1, 0)], g[(1, 1)]]];
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Gate, D::Error> {
        let r = <[[C64; 2]; 2]>::deserialize(d)?;
        Ok(Gate::new(r[0][0], r[0][1], r[1][0], r[1][1]))
    }
}

pub fn singular_values(g: &Gate) -> (f64, f64) {
    let sv = g.singular_values();
    (sv[0].max(sv[1]), sv[0].min(sv[1]))
}

/// Unitary factor `U` of the polar decomposition `g = U P`.
pub fn polar_unitary(g: &Gate) -> Gate {
    let svd = g.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    u * v_t
}

fn is_diagonal_form(g: &Gate) -> bool {
    let off = g[(0, 1)].norm_sqr() + g[(1, 0)].norm_sqr();
    let diag = g[(0, 0)].norm_sqr() + g[(1, 1)].norm_sqr();
    off <= DIAGONAL_FORM * DIAGONAL_FORM * diag
}

/// Scalar `sigma_max e^{i a}` splitting `g` into a global factor and a gate
/// with unit largest singular value. The phase `a` is that of the `(0,0)`
/// entry for diagonal-form gates and otherwise half the phase of the
/// determinant of the polar unitary, taken in `(-pi/2, pi/2]`.
pub fn global_factor(g: &Gate) -> C64 {
    let (smax, _) = singular_values(g);
    if smax == 0.0 {
        return ZERO;
    }
    let reference = if is_diagonal_form(g) {
        if g[(0, 0)].norm() >= 1e-3 * smax {
            g[(0, 0)].arg()
        } else {
            g[(1, 1)].arg()
        }
    } else {
        let mut a = 0.5 * polar_unitary(g).determinant().arg();
        if a <= -0.5 * PI {
            a += PI;
        }
        a
    };
    C64::from_polar(smax, reference)
}

/// Phase of `tr(ideal^dagger g)`.
pub fn overlap_phase(g: &Gate, ideal: &Gate) -> f64 {
    (ideal.adjoint() * g).trace().arg()
}

/// `g` with its global phase rotated to best match `ideal`.
pub fn align_phase(g: &Gate, ideal: &Gate) -> Gate {
    g * C64::from_polar(1.0, -overlap_phase(g, ideal))
}

/// Angle of the real rotation `[[cos a, sin a], [-sin a, cos a]] = e^{i a sigma_y}`
/// closest to `g`.
pub fn rotation_angle(g: &Gate) -> f64 {
    let s = 0.5 * (g[(0, 1)] - g[(1, 0)]).re;
    let c = 0.5 * (g[(0, 0)] + g[(1, 1)]).re;
    s.atan2(c)
}

/// `e^{i a sigma_y}`.
pub fn sigma_y_rotation(a: f64) -> Gate {
    let (s, c) = a.sin_cos();
    Gate::new(C64::from(c), C64::from(s), C64::from(-s), C64::from(c))
}

/// Phase of `g11 / g00`.
pub fn relative_phase(g: &Gate) -> f64 {
    (g[(1, 1)] / g[(0, 0)]).arg()
}

/// Distance of `x - y` to the nearest multiple of `2 pi`.
pub fn angle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub model: ModelId,
    /// Raw, sub-normalized gate on `(|0>, |1>)`.
    #[serde(with = "gate_serde")]
    pub gate: Gate,
    /// No-jump probability averaged over the two computational inputs.
    pub survival: f64,
    pub global_factor: C64,
    #[serde(with = "gate_serde")]
    pub normalized_gate: Gate,
    /// Largest population left outside `{|0>, |1>, sink}` over the inputs.
    pub leakage: f64,
    /// `(sigma_max - sigma_min) / sigma_max` of the raw gate.
    pub homogeneity: f64,
}

impl GateReport {
    pub fn from_gate(model: ModelId, gate: Gate, survival: f64, leakage: f64) -> Self {
        let global_factor = global_factor(&gate);
        let normalized_gate = if global_factor == ZERO {
            gate
        } else {
            gate / global_factor
        };
        let (smax, smin) = singular_values(&gate);
        let homogeneity = if smax > 0.0 {
            (smax - smin) / smax
        } else {
            0.0
        };
        Self {
            model,
            gate,
            survival,
            global_factor,
            normalized_gate,
            leakage,
            homogeneity,
        }
    }
}

/// Assembles the gate column by column from one no-jump run per
/// computational input. Fails when leakage exceeds [`LEAKAGE_LIMIT`].
pub fn extract_gate(
    model: ModelId,
    runner: &dyn Fn(&QState) -> Result<NoJumpResult>,
) -> Result<GateReport> {
    extract_gate_with_limit(model, runner, Some(LEAKAGE_LIMIT))
}

pub fn extract_gate_with_limit(
    model: ModelId,
    runner: &dyn Fn(&QState) -> Result<NoJumpResult>,
    leakage_limit: Option<f64>,
) -> Result<GateReport> {
    let basis = model.basis();
    let comp = model.computational_labels();
    let idx = [basis.index(comp[0])?, basis.index(comp[1])?];
    let mut gate = Gate::zeros();
    let mut survival = 0.0;
    let mut leakage: f64 = 0.0;
    for (j, label) in comp.iter().enumerate() {
        let out = runner(&QState::basis_state(&basis, label)?)?;
        let amps = out.raw_final.amplitudes();
        for i in 0..2 {
            gate[(i, j)] = amps[idx[i]];
        }
        survival += 0.5 * out.survival;
        let outside: f64 = basis
            .labels()
            .iter()
            .zip(amps.iter())
            .filter(|(l, _)| !comp.contains(&l.as_str()) && l.as_str() != SINK)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        leakage = leakage.max(outside);
    }
    if let Some(limit) = leakage_limit {
        if leakage > limit {
            return Err(Error::LeakageExceeded { leakage, limit });
        }
    }
    Ok(GateReport::from_gate(model, gate, survival, leakage))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionMetrics {
    /// `|| N^dagger N - 1 ||_F` for the normalized gate `N`.
    pub unitarity_defect: f64,
    /// `|tr(ideal^dagger N)| / 2`.
    pub fidelity: f64,
    /// `(sigma_max - sigma_min) / sigma_max` of the raw gate.
    pub homogeneity_defect: f64,
    /// `ln(sigma_max / sigma_min)`.
    pub log_distortion: f64,
}

pub fn gate_distortion(report: &GateReport, ideal: &Gate) -> DistortionMetrics {
    let (smax, smin) = singular_values(&report.gate);
    let n = if smax > 0.0 {
        report.gate / C64::from(smax)
    } else {
        report.gate
    };
    let unitarity_defect = (n.adjoint() * n - Gate::identity()).norm();
    let fidelity = 0.5 * (ideal.adjoint() * report.normalized_gate).trace().norm();
    let homogeneity_defect = if smax > 0.0 {
        (smax - smin) / smax
    } else {
        0.0
    };
    let log_distortion = (smax / smin).ln();
    DistortionMetrics {
        unitarity_defect,
        fidelity,
        homogeneity_defect,
        log_distortion,
    }
}

/// Ordered product of dark-frame overlaps along a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct HolonomyMatrix {
    pub dim: usize,
    pub matrix: DMatrix<C64>,
    pub path_steps: usize,
    pub frame_start: DMatrix<C64>,
    pub frame_end: DMatrix<C64>,
}

impl HolonomyMatrix {
    pub fn unitarity_defect(&self) -> f64 {
        let id = DMatrix::<C64>::identity(self.dim, self.dim);
        (self.matrix.adjoint() * &self.matrix - id).norm()
    }

    /// Phase of a one-dimensional holonomy, `W = e^{i phase}`.
    pub fn abelian_phase(&self) -> Option<f64> {
        (self.dim == 1).then(|| self.matrix[(0, 0)].arg())
    }

    /// Adiabatic map `F_end W F_start^dagger + (1 - F_start F_start^dagger)`
    /// restricted to the computational levels of `model`.
    pub fn computational_gate(&self, model: ModelId) -> Result<Gate> {
        let basis = model.basis();
        let d = basis.dim();
        let start = &self.frame_start;
        let full = &self.frame_end * &self.matrix * start.adjoint()
            + (DMatrix::<C64>::identity(d, d) - start * start.adjoint());
        let comp = model.computational_labels();
        let idx = [basis.index(comp[0])?, basis.index(comp[1])?];
        Ok(Gate::from_fn(|i, j| full[(idx[i], idx[j])]))
    }
}

fn unitary_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = m.clone().svd(true, true);
    svd.u.expect("requested") * svd.v_t.expect("requested")
}

fn dark_nullity(model: ModelId, omega: f64, theta: f64, phi: f64) -> usize {
    let h = model.hamiltonian(omega, theta, phi);
    let basis = h.basis();
    let idx: Vec<usize> = model
        .coupled_labels()
        .iter()
        .map(|l| basis.index(l).expect("coupled labels exist"))
        .collect();
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| h.matrix()[(idx[i], idx[j])]);
    sub.symmetric_eigenvalues()
        .iter()
        .filter(|v| v.abs() < 1e-8 * omega)
        .count()
}

/// Discrete Wilson loop `W = prod_k polar(F(t_{k+1})^dagger F(t_k))` over
/// `steps` uniform steps of the schedule.
pub fn wilson_holonomy(
    model: ModelId,
    schedule: &ParamSchedule,
    steps: usize,
) -> Result<HolonomyMatrix> {
    if steps < 100 {
        return Err(Error::param(
            "wilson_steps",
            format!("need at least 100, got {steps}"),
        ));
    }
    let total = schedule.total_duration();
    let frame_at = |k: usize| -> Result<DMatrix<C64>> {
        let t = total * k as f64 / steps as f64;
        let (theta, phi) = schedule.angles(t);
        let f = dark_frame(model, theta, phi)?;
        let found = dark_nullity(model, schedule.omega, theta, phi);
        if found != f.ncols() {
            return Err(Error::DegeneracyCrossing {
                t,
                expected: f.ncols(),
                found,
            });
        }
        Ok(f)
    };
    let frame_start = frame_at(0)?;
    let dim = frame_start.ncols();
    let mut w = DMatrix::<C64>::identity(dim, dim);
    let mut prev = frame_start.clone();
    for k in 1..=steps {
        let next = frame_at(k)?;
        let overlap = next.adjoint() * &prev;
        w = unitary_part(&overlap) * w;
        prev = next;
    }
    Ok(HolonomyMatrix {
        dim,
        matrix: w,
        path_steps: steps,
        frame_start,
        frame_end: prev,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }
}

/// `Omega_bar = Omega sqrt(sin^2 theta + (cos theta - i kappa / 2 Omega)^2)`,
/// principal root.
pub fn omega_bar(omega: f64, kappa: f64, theta: f64) -> C64 {
    let (s, c) = theta.sin_cos();
    let z = C64::new(c, -0.5 * kappa / omega);
    omega * (C64::from(s * s) + z * z).sqrt()
}

/// `+-Omega_bar T / 2 - i kappa T / 4`.
pub fn complex_dynamical_phase(omega: f64, kappa: f64, theta: f64, t: f64, branch: Branch) -> C64 {
    0.5 * branch.sign() * omega_bar(omega, kappa, theta) * t - I * (0.25 * kappa * t)
}

/// `+-pi (1 - (Omega / Omega_bar)(cos theta - i kappa / 2 Omega))`.
pub fn complex_berry_phase(omega: f64, kappa: f64, theta: f64, branch: Branch) -> C64 {
    let z = C64::new(theta.cos(), -0.5 * kappa / omega);
    branch.sign() * PI * (ONE - omega / omega_bar(omega, kappa, theta) * z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    /// Closed-form expressions quoted as reference values.
    QuotedReference,
    /// Closed-form expressions evaluated for the simulated loop.
    ClosedForm,
    /// Accumulated along a numerical integration.
    Integrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub dynamical: C64,
    pub geometric: C64,
    pub total: C64,
    pub source: PhaseSource,
}

impl PhaseReport {
    pub fn new(dynamical: C64, geometric: C64, source: PhaseSource) -> Self {
        Self {
            dynamical,
            geometric,
            total: dynamical + geometric,
            source,
        }
    }
}

/// Reference closed forms for a single loop, expressed in the complex-phase
/// convention of this module: geometric `-phi_g` and dynamical `i phi_d`,
/// where the amplitude of `|1>` picks up `exp(phi_d + i phi_g)` with
/// `phi_d = -pi (kappa / gamma) sin^2 theta0`, `phi_g = 4 pi sin^2 theta0`
/// (Lambda) or `phi_g = 2 pi cos theta0` (tripod and superposed).
pub fn analytic_phases(model: ModelId, theta0: f64, kappa: f64, gamma: f64) -> Result<PhaseReport> {
    let s2 = theta0.sin().powi(2);
    let phi_g = match model {
        ModelId::LambdaFirst => 4.0 * PI * s2,
        ModelId::TripodFirst | ModelId::SuperposedDual => 2.0 * PI * theta0.cos(),
        other => {
            return Err(Error::UnsupportedModel(
                other.name(),
                "closed-form loop phases",
            ))
        }
    };
    let phi_d = -PI * kappa / gamma * s2;
    Ok(PhaseReport::new(
        C64::new(0.0, phi_d),
        C64::from(-phi_g),
        PhaseSource::QuotedReference,
    ))
}

/// `-(kappa / 2) integral sin^2 theta(t) dt` over the schedule, by composite
/// Simpson per segment.
pub fn decay_exponent_quadrature(schedule: &ParamSchedule, kappa: f64) -> f64 {
    const PANELS: usize = 4096;
    let mut start = 0.0;
    let mut integral = 0.0;
    for seg in schedule.segments() {
        let h = seg.duration / PANELS as f64;
        let f = |k: usize| {
            // Evaluate just inside the segment so that endpoints use its own branch.
            let t = start + h * k as f64;
            let t = match (k, seg.kind) {
                (0, SegmentKind::Loop | SegmentKind::RampOut) => t + 1e-12 * seg.duration,
                _ => t,
            };
            schedule.angles(t).0.sin().powi(2)
        };
        let mut acc = f(0) + f(PANELS);
        for k in 1..PANELS {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
        }
        integral += acc * h / 3.0;
        start += seg.duration;
    }
    -0.5 * kappa * integral
}

/// Non-Hermitian NMR quasi-eigenvectors at the given angles: right and left
/// vectors in the `(up, down)` basis with `L . R` their bilinear product.
/// Both gauges are regular at `theta = 0`.
pub fn nmr_quasi_eigenvectors(
    omega: f64,
    kappa: f64,
    theta: f64,
    phi: f64,
    branch: Branch,
) -> ([C64; 2], [C64; 2], C64) {
    let (s, c) = theta.sin_cos();
    let ax = C64::from(0.5 * omega * s * phi.cos());
    let ay = C64::from(0.5 * omega * s * phi.sin());
    let az = C64::new(0.5 * omega * c, -0.25 * kappa);
    let root = (ax * ax + ay * ay + az * az).sqrt();
    match branch {
        Branch::Plus => {
            let lam = root;
            let r = [lam + az, ax + I * ay];
            let l = [lam + az, ax - I * ay];
            (r, l, 2.0 * lam * (lam + az))
        }
        Branch::Minus => {
            let lam = -root;
            let r = [ax - I * ay, lam - az];
            let l = [ax + I * ay, lam - az];
            (r, l, 2.0 * lam * (lam - az))
        }
    }
}

fn quasi_coefficient(
    state: &[C64],
    omega: f64,
    kappa: f64,
    angles: (f64, f64),
    branch: Branch,
) -> C64 {
    let (_, l, norm) = nmr_quasi_eigenvectors(omega, kappa, angles.0, angles.1, branch);
    (l[0] * state[0] + l[1] * state[1]) / norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseTrack {
    /// Accumulated `i ln(c(T) / c(0))`, unwrapped step by step.
    pub phase: C64,
    pub final_branch: Branch,
    pub survival: f64,
}

fn nmr_stage_params(stage: &LoopSpec) -> Result<(f64, f64, &ParamSchedule)> {
    let schedule = match (stage.model(), stage.schedule()) {
        (Some(ModelId::NmrSpinHalf), Some(s)) => s,
        _ => {
            return Err(Error::UnsupportedModel(
                "non-NMR stage",
                "quasi-eigenstate tracking",
            ))
        }
    };
    let kappa = stage.channels().iter().map(|c| c.rate).sum();
    Ok((schedule.omega, kappa, schedule))
}

/// Propagates the normalized quasi-eigenstate of `branch` at the start of an
/// NMR protocol and accumulates the complex phase of its adiabatic
/// coefficient. A pulse hands the state over to whichever branch carries
/// more weight afterwards, and the phase of that hand-over is included.
pub fn track_nmr_phase(stages: &[LoopSpec], branch: Branch) -> Result<PhaseTrack> {
    let params: Vec<_> = stages.iter().map(nmr_stage_params).collect::<Result<_>>()?;
    let (omega, kappa, schedule) = params
        .first()
        .copied()
        .ok_or_else(|| Error::param("stages", "a protocol needs at least one stage"))?;
    let (theta, phi) = schedule.angles(0.0);
    let (r, _, _) = nmr_quasi_eigenvectors(omega, kappa, theta, phi, branch);
    let norm = (r[0].norm_sqr() + r[1].norm_sqr()).sqrt();
    let psi0 = QState::new(
        stages[0].basis().clone(),
        nalgebra::DVector::from_vec(vec![r[0] / norm, r[1] / norm]),
    )?;

    let mut current = branch;
    let mut prev: Option<C64> = None;
    let mut phase = ZERO;
    let mut failure: Option<Error> = None;
    let result = integrate_protocol_observed(stages, &psi0, &mut |i, ev| {
        if failure.is_some() {
            return;
        }
        let (omega, kappa, schedule) = params[i];
        let coef = |state: &nalgebra::DVector<C64>, t: f64, b: Branch| {
            quasi_coefficient(state.as_slice(), omega, kappa, schedule.angles(t), b)
        };
        let mut advance = |c: C64, phase: &mut C64, prev: &mut Option<C64>| {
            if let Some(p) = *prev {
                if c == ZERO || p == ZERO {
                    failure = Some(Error::InvalidState("adiabatic coefficient vanished".into()));
                    return;
                }
                *phase += I * (c / p).ln();
            }
            *prev = Some(c);
        };
        match ev {
            Event::Start { t, state } => {
                let c = coef(state, t, current);
                if prev.is_none() {
                    prev = Some(c);
                } else {
                    advance(c, &mut phase, &mut prev);
                }
            }
            Event::Step { t, state } => advance(coef(state, t, current), &mut phase, &mut prev),
            Event::Pulse { t, after, .. } => {
                let keep = coef(after, t, current);
                let flip = coef(after, t, current.flipped());
                if flip.norm() > keep.norm() {
                    current = current.flipped();
                    advance(flip, &mut phase, &mut prev);
                } else {
                    advance(keep, &mut phase, &mut prev);
                }
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(PhaseTrack {
        phase,
        final_branch: current,
        survival: result.survival,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_nojump;
    use crate::models::{jump_set, Direction};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, TAU};

    fn close(a: C64, b: C64, tol: f64) {
        assert!((a - b).norm() < tol, "{a} vs {b}");
    }

    #[test]
    fn dynamical_phase_examples() {
        let t = 37.0;
        for b in [Branch::Plus, Branch::Minus] {
            close(
                complex_dynamical_phase(2.0, 0.0, 0.7, t, b),
                C64::from(b.sign() * t),
                1e-12,
            );
            let expect = 0.5 * b.sign() * C64::new(2.0, -0.15) * t - I * (0.25 * 0.3 * t);
            close(complex_dynamical_phase(2.0, 0.3, 0.0, t, b), expect, 1e-12);
        }
        let v = complex_dynamical_phase(1.0, 0.2, FRAC_PI_2, 100.0, Branch::Plus);
        close(v, C64::new(50.0 * 0.99f64.sqrt(), -5.0), 1e-12);
        assert!((v.re - 49.7494).abs() < 1e-4);
    }

    #[test]
    fn berry_phase_examples() {
        close(
            complex_berry_phase(1.0, 0.0, FRAC_PI_3, Branch::Plus),
            C64::from(FRAC_PI_2),
            1e-12,
        );
        close(
            complex_berry_phase(1.0, 0.0, FRAC_PI_3, Branch::Minus),
            C64::from(-FRAC_PI_2),
            1e-12,
        );
        close(
            complex_berry_phase(3.0, 0.0, 0.0, Branch::Plus),
            ZERO,
            1e-15,
        );
        for b in [Branch::Plus, Branch::Minus] {
            let expect = b.sign() * PI * C64::new(1.0, 0.1 / 0.99f64.sqrt());
            close(complex_berry_phase(1.0, 0.2, FRAC_PI_2, b), expect, 1e-12);
        }
    }

    #[test]
    fn closed_forms_are_continuous_in_kappa() {
        for theta in [0.0, 0.3, FRAC_PI_4, 1.2, FRAC_PI_2] {
            let mut prev: Option<(C64, C64)> = None;
            for k in 0..=1000 {
                let kappa = k as f64 / 1000.0;
                let d = complex_dynamical_phase(1.0, kappa, theta, 1.0, Branch::Plus);
                let g = complex_berry_phase(1.0, kappa, theta, Branch::Plus);
                if let Some((pd, pg)) = prev {
                    assert!((d - pd).norm() < 1e-3 && (g - pg).norm() < 1e-2);
                }
                prev = Some((d, g));
            }
        }
    }

    #[test]
    fn analytic_phase_examples() {
        let p = analytic_phases(ModelId::LambdaFirst, FRAC_PI_2, 0.3, 0.3).unwrap();
        close(p.geometric, C64::from(-4.0 * PI), 1e-12);
        close(p.dynamical, C64::new(0.0, -PI), 1e-12);
        assert_eq!(p.total, p.dynamical + p.geometric);
        assert_eq!(p.source, PhaseSource::QuotedReference);
        let p = analytic_phases(ModelId::TripodFirst, FRAC_PI_3, 0.0, 0.1).unwrap();
        close(p.geometric, C64::from(-PI), 1e-12);
        close(p.dynamical, ZERO, 1e-15);
        let p = analytic_phases(ModelId::LambdaFirst, 0.0, 0.4, 0.1).unwrap();
        close(p.total, ZERO, 1e-15);
        assert!(analytic_phases(ModelId::NmrSpinHalf, 0.1, 0.0, 0.1).is_err());
    }

    #[test]
    fn rotation_helpers_round_trip() {
        for a in [-3.0, -1.0, 0.0, 0.4, FRAC_PI_2, 2.9] {
            assert!((rotation_angle(&sigma_y_rotation(a)) - a).abs() < 1e-12);
        }
        let g = sigma_y_rotation(0.7) * C64::from_polar(0.3, 1.1);
        let aligned = align_phase(&g, &sigma_y_rotation(0.7));
        assert!((aligned - sigma_y_rotation(0.7) * C64::from(0.3)).norm() < 1e-12);
        assert!(angle_distance(0.1, TAU - 0.1) - 0.2 < 1e-12);
    }

    #[test]
    fn report_splits_scalar_and_unitary() {
        let u = sigma_y_rotation(0.9);
        let g = u * C64::from_polar(0.25, -0.4);
        let r = GateReport::from_gate(ModelId::TripodFirst, g, 0.0625, 0.0);
        assert!((r.global_factor.norm() - 0.25).abs() < 1e-12);
        assert!(r.homogeneity < 1e-12);
        assert!((r.normalized_gate - u).norm() < 1e-12);
        let m = gate_distortion(&r, &u);
        assert!((m.fidelity - 1.0).abs() < 1e-12 && m.unitarity_defect < 1e-12);

        let d = Gate::new(
            C64::from_polar(0.5, 0.3),
            ZERO,
            ZERO,
            C64::from_polar(0.2, 1.0),
        );
        let r = GateReport::from_gate(ModelId::LambdaFirst, d, 0.1, 0.0);
        assert!((r.global_factor - C64::from_polar(0.5, 0.3)).norm() < 1e-12);
        assert!((r.homogeneity - 0.6).abs() < 1e-12);
        let m = gate_distortion(&r, &Gate::identity());
        assert!((m.log_distortion - 2.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gate_round_trips_through_json() {
        let r = GateReport::from_gate(
            ModelId::LambdaFirst,
            Gate::new(ONE, C64::new(0.0, 0.5), ZERO, C64::new(-0.25, 0.125)),
            0.5,
            0.01,
        );
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"model\":\"LAMBDA_FIRST\""));
        assert!(json.contains("\"gate\":[[[1.0,0.0],[0.0,0.5]],[[0.0,0.0],[-0.25,0.125]]]"));
        let back: GateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    fn lambda_spec(theta0: f64, kappa: f64, gamma: f64) -> LoopSpec {
        let m = ModelId::LambdaFirst;
        let s = ParamSchedule::new(theta0, gamma, 1.0, Direction::Forward, 0.25).unwrap();
        LoopSpec::new(m, s, jump_set(m, kappa).unwrap(), Some(0.02)).unwrap()
    }

    #[test]
    fn trivial_loop_gives_identity() {
        let spec = lambda_spec(0.0, 0.0, 0.05);
        let r = extract_gate(ModelId::LambdaFirst, &|psi| integrate_nojump(&spec, psi)).unwrap();
        assert!((r.gate - Gate::identity()).norm() < 1e-9);
        assert!((r.survival - 1.0).abs() < 1e-9);
        assert!(r.leakage < 1e-12);
    }

    #[test]
    fn column_linearity() {
        let spec = lambda_spec(FRAC_PI_4, 0.01, 0.05);
        let m = ModelId::LambdaFirst;
        let r = extract_gate(m, &|psi| integrate_nojump(&spec, psi)).unwrap();
        let basis = m.basis();
        for (a, b) in [
            (0.6, C64::new(0.0, 0.8)),
            (FRAC_PI_4.cos(), C64::from_polar(FRAC_PI_4.sin(), 2.0)),
        ] {
            let psi = QState::from_components(&basis, &[("g1", C64::from(a)), ("g2", b)]).unwrap();
            let out = integrate_nojump(&spec, &psi).unwrap().raw_final;
            let expect = r.gate * nalgebra::Vector2::new(C64::from(a), b);
            close(out.amplitude("g1").unwrap(), expect[0], 1e-9);
            close(out.amplitude("g2").unwrap(), expect[1], 1e-9);
        }
    }

    #[test]
    fn leakage_guard_trips_for_fast_loops() {
        let m = ModelId::LambdaFirst;
        let s = ParamSchedule::new(1.2, 0.5, 1.0, Direction::Forward, 0.0).unwrap();
        let spec = LoopSpec::new(m, s, vec![], Some(0.01)).unwrap();
        let err = extract_gate(m, &|psi| integrate_nojump(&spec, psi)).unwrap_err();
        assert!(matches!(err, Error::LeakageExceeded { .. }));
    }

    #[test]
    fn wilson_constant_path_is_identity() {
        let s = ParamSchedule::new(0.0, 0.01, 1.0, Direction::Forward, 0.0).unwrap();
        for m in [
            ModelId::LambdaFirst,
            ModelId::TripodFirst,
            ModelId::SuperposedDual,
        ] {
            let w = wilson_holonomy(m, &s, 200).unwrap();
            let id = DMatrix::<C64>::identity(w.dim, w.dim);
            assert!((&w.matrix - id).norm() < 1e-12, "{m}");
        }
        assert!(wilson_holonomy(ModelId::LambdaFirst, &s, 50).is_err());
        assert!(matches!(
            wilson_holonomy(ModelId::NmrSpinHalf, &s, 200),
            Err(Error::UnsupportedModel(..))
        ));
    }

    #[test]
    fn wilson_lambda_is_solid_angle_phase() {
        // One revolution at constant theta0 encloses a solid-angle phase of
        // 2 pi sin^2 theta0 on the dark state.
        let theta0 = 0.6;
        let s = ParamSchedule::new(theta0, 0.01, 1.0, Direction::Forward, 0.25).unwrap();
        let w = wilson_holonomy(ModelId::LambdaFirst, &s, 4000).unwrap();
        assert!(w.unitarity_defect() < 1e-10);
        let expect = (-TAU * theta0.sin().powi(2)).rem_euclid(TAU);
        let got = w.abelian_phase().unwrap();
        assert!(angle_distance(got, expect) < 1e-2, "{got} vs {expect}");
        let w2 = wilson_holonomy(ModelId::LambdaFirst, &s, 8000).unwrap();
        assert!(
            angle_distance(w2.abelian_phase().unwrap(), expect)
                < angle_distance(got, expect) + 1e-12
        );
    }

    #[test]
    fn wilson_tripod_and_superposed_agree() {
        let theta0 = 1.0;
        let s = ParamSchedule::new(theta0, 0.01, 1.0, Direction::Forward, 0.25).unwrap();
        let t = wilson_holonomy(ModelId::TripodFirst, &s, 4000).unwrap();
        let u = wilson_holonomy(ModelId::SuperposedDual, &s, 4000).unwrap();
        assert_eq!((t.dim, u.dim), (2, 3));
        let gt = t.computational_gate(ModelId::TripodFirst).unwrap();
        let gu = u.computational_gate(ModelId::SuperposedDual).unwrap();
        for g in [gt, gu] {
            let a = rotation_angle(&g);
            assert!((g - sigma_y_rotation(a)).norm() < 1e-3, "{g}");
            let x = TAU * theta0.cos();
            assert!(
                angle_distance(a, x).min(angle_distance(a, -x)) < 1e-2,
                "{a}"
            );
        }
        assert!((gt - gu).norm() < 1e-3);
    }

    #[test]
    fn quadrature_of_constant_loop() {
        let s = ParamSchedule::new(FRAC_PI_4, 0.02, 1.0, Direction::Forward, 0.0).unwrap();
        let v = decay_exponent_quadrature(&s, 0.02);
        assert!((v + PI * 0.5).abs() < 1e-10);
        let ramped = ParamSchedule::new(FRAC_PI_4, 0.02, 1.0, Direction::Forward, 0.25).unwrap();
        // Each smoothstep ramp contributes the integral of sin^2(theta0 sin^2(pi s / 2)).
        let extra = decay_exponent_quadrature(&ramped, 0.02) - v;
        assert!(extra < 0.0 && extra > -PI * 0.5);
    }

    #[test]
    fn quasi_eigenvectors_diagonalize_effective_hamiltonian() {
        let (omega, kappa) = (1.0, 0.3);
        for &(theta, phi) in &[(0.0, 0.0), (0.4, 1.0), (FRAC_PI_2, 2.0), (1.3, 5.5)] {
            let h = crate::models::nmr_hamiltonian(omega, theta, phi);
            let heff = crate::models::effective_hamiltonian(
                &h,
                &jump_set(ModelId::NmrSpinHalf, kappa).unwrap(),
            )
            .unwrap();
            for b in [Branch::Plus, Branch::Minus] {
                let (r, l, norm) = nmr_quasi_eigenvectors(omega, kappa, theta, phi, b);
                let rv = nalgebra::DVector::from_vec(r.to_vec());
                let hr = heff.matrix() * &rv;
                let lam = hr.dot(&rv.map(|z| z.conj())) / rv.norm_squared();
                assert!((hr - &rv * lam).norm() < 1e-12);
                close(l[0] * r[0] + l[1] * r[1], norm, 1e-12);
                assert!(norm.norm() > 1e-6);
            }
        }
    }
}
