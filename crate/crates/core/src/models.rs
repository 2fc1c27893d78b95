//! Model Hamiltonians, jump channels, dark states and loop schedules.
//!
//! Rates are angular frequencies; `omega` multiplies every Hamiltonian. Each
//! multilevel model carries an explicit `sink` level that receives jumped
//! population, so the master equation stays trace preserving while the
//! no-jump dynamics only ever sees `sum_k Gamma_k^dagger Gamma_k`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{LevelBasis, QOperator, QState, C64, ONE, ZERO};

pub const SINK: &str = "sink";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelId {
    NmrSpinHalf,
    LambdaFirst,
    LambdaRefocus,
    TripodFirst,
    TripodNaiveRefocus,
    SuperposedDual,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::NmrSpinHalf,
        ModelId::LambdaFirst,
        ModelId::LambdaRefocus,
        ModelId::TripodFirst,
        ModelId::TripodNaiveRefocus,
        ModelId::SuperposedDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::NmrSpinHalf => "NMR_SPIN_HALF",
            ModelId::LambdaFirst => "LAMBDA_FIRST",
            ModelId::LambdaRefocus => "LAMBDA_REFOCUS",
            ModelId::TripodFirst => "TRIPOD_FIRST",
            ModelId::TripodNaiveRefocus => "TRIPOD_NAIVE_REFOCUS",
            ModelId::SuperposedDual => "SUPERPOSED_DUAL",
        }
    }

    pub fn basis(self) -> LevelBasis {
        static FOUR: OnceLock<LevelBasis> = OnceLock::new();
        static FIVE: OnceLock<LevelBasis> = OnceLock::new();
        let build = |labels: &[&str]| {
            LevelBasis::new(labels.iter().copied()).expect("static labels are unique")
        };
        match self {
            ModelId::NmrSpinHalf => LevelBasis::spin(),
            ModelId::SuperposedDual => FIVE
                .get_or_init(|| build(&["g1", "g2", "g3", "g4", "e", SINK]))
                .clone(),
            _ => FOUR
                .get_or_init(|| build(&["g1", "g2", "g3", "e", SINK]))
                .clone(),
        }
    }

    /// Labels of `|0>` and `|1>`.
    pub fn computational_labels(self) -> [&'static str; 2] {
        match self {
            ModelId::NmrSpinHalf => ["down", "up"],
            _ => ["g1", "g2"],
        }
    }

    /// Levels that take part in the coherent dynamics somewhere on a loop.
    pub fn coupled_labels(self) -> &'static [&'static str] {
        match self {
            ModelId::NmrSpinHalf => &["up", "down"],
            ModelId::LambdaFirst => &["g2", "g3", "e"],
            ModelId::LambdaRefocus => &["g1", "g3", "e"],
            ModelId::TripodFirst | ModelId::TripodNaiveRefocus => &["g1", "g2", "g3", "e"],
            ModelId::SuperposedDual => &["g1", "g2", "g3", "g4", "e"],
        }
    }

    pub fn hamiltonian(self, omega: f64, theta: f64, phi: f64) -> QOperator {
        match self {
            ModelId::NmrSpinHalf => nmr_hamiltonian(omega, theta, phi),
            ModelId::LambdaFirst => lambda_hamiltonian(LambdaVariant::First, omega, theta, phi),
            ModelId::LambdaRefocus => lambda_hamiltonian(LambdaVariant::Refocus, omega, theta, phi),
            ModelId::TripodFirst => tripod_hamiltonian(TripodVariant::First, omega, theta, phi),
            ModelId::TripodNaiveRefocus => {
                tripod_hamiltonian(TripodVariant::NaiveRefocus, omega, theta, phi)
            }
            ModelId::SuperposedDual => superposed_hamiltonian(omega, theta, phi),
        }
    }

    pub fn has_dark_states(self) -> bool {
        self != ModelId::NmrSpinHalf
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaVariant {
    First,
    Refocus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripodVariant {
    First,
    NaiveRefocus,
}

/// `H = (omega/2)(cos(theta) sz + sin(theta)(cos(phase) sx + sin(phase) sy))`
/// on `(up, down)`.
pub fn nmr_hamiltonian(omega: f64, theta: f64, phase: f64) -> QOperator {
    let (s, c) = theta.sin_cos();
    let h = 0.5 * omega;
    let off = C64::from_polar(h * s, phase);
    let mat = DMatrix::from_row_slice(
        2,
        2,
        &[C64::from(h * c), off.conj(), off, C64::from(-h * c)],
    );
    QOperator::from_parts_unchecked(LevelBasis::spin(), mat)
}

/// Adds `c |a><e| + conj(c) |e><a|`.
fn couple(mat: &mut DMatrix<C64>, a: usize, e: usize, c: C64) {
    mat[(a, e)] += c;
    mat[(e, a)] += c.conj();
}

fn coupling_matrix(basis: &LevelBasis, couplings: &[(&str, C64)]) -> QOperator {
    let d = basis.dim();
    let e = basis.index("e").expect("multilevel bases contain e");
    let mut mat = DMatrix::from_element(d, d, ZERO);
    for &(label, c) in couplings {
        let a = basis.index(label).expect("coupling labels are static");
        couple(&mut mat, a, e, c);
    }
    QOperator::from_parts_unchecked(basis.clone(), mat)
}

/// `omega sin(theta) (s_ae + h.c.) + omega cos(theta) (e^{i phi} s_3e + h.c.)`
/// with `a = g2` for the first loop and `a = g1` for the refocusing loop.
pub fn lambda_hamiltonian(variant: LambdaVariant, omega: f64, theta: f64, phi: f64) -> QOperator {
    let (s, c) = theta.sin_cos();
    let a = match variant {
        LambdaVariant::First => "g2",
        LambdaVariant::Refocus => "g1",
    };
    coupling_matrix(
        &ModelId::LambdaFirst.basis(),
        &[
            (a, C64::from(omega * s)),
            ("g3", C64::from_polar(omega * c, phi)),
        ],
    )
}

/// Tripod drive; the naive refocusing variant exchanges the `cos(phi)` and
/// `sin(phi)` couplings of `g1` and `g2`.
pub fn tripod_hamiltonian(variant: TripodVariant, omega: f64, theta: f64, phi: f64) -> QOperator {
    let (s, c) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (c1, c2) = match variant {
        TripodVariant::First => (cp, sp),
        TripodVariant::NaiveRefocus => (sp, cp),
    };
    coupling_matrix(
        &ModelId::TripodFirst.basis(),
        &[
            ("g1", C64::from(omega * s * c1)),
            ("g2", C64::from(omega * s * c2)),
            ("g3", C64::from(omega * c)),
        ],
    )
}

pub fn superposed_hamiltonian(omega: f64, theta: f64, phi: f64) -> QOperator {
    let (s, c) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    coupling_matrix(
        &ModelId::SuperposedDual.basis(),
        &[
            ("g1", C64::from(omega * s * (cp - sp))),
            ("g2", C64::from(omega * s * (sp + cp))),
            ("g3", C64::from(omega * c)),
            ("g4", C64::from(omega * c)),
        ],
    )
}

/// One Lindblad channel `Gamma = sqrt(rate) * lowering`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpChannel {
    pub rate: f64,
    pub lowering: QOperator,
    pub sink_label: Option<String>,
}

impl JumpChannel {
    pub fn new(rate: f64, lowering: QOperator, sink_label: Option<String>) -> Result<Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::param(
                "kappa",
                format!("rate must be finite and >= 0, got {rate}"),
            ));
        }
        if let Some(label) = &sink_label {
            lowering.basis().index(label)?;
        }
        Ok(Self {
            rate,
            lowering,
            sink_label,
        })
    }

    pub fn basis(&self) -> &LevelBasis {
        self.lowering.basis()
    }

    /// `Gamma = sqrt(rate) L`.
    pub fn operator(&self) -> QOperator {
        self.lowering.scaled(C64::from(self.rate.sqrt()))
    }

    /// `Gamma^dagger Gamma`.
    pub fn damping(&self) -> QOperator {
        let l = &self.lowering;
        QOperator::from_parts_unchecked(
            l.basis().clone(),
            l.matrix().adjoint() * l.matrix() * C64::from(self.rate),
        )
    }
}

fn to_sink(model: ModelId, kappa: f64, from: &str) -> Result<JumpChannel> {
    let basis = model.basis();
    let lowering = QOperator::transition(&basis, SINK, from)?;
    JumpChannel::new(kappa, lowering, Some(SINK.to_string()))
}

pub fn jump_set(model: ModelId, kappa: f64) -> Result<Vec<JumpChannel>> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::param(
            "kappa",
            format!("must be finite and >= 0, got {kappa}"),
        ));
    }
    match model {
        ModelId::NmrSpinHalf => {
            let lowering = QOperator::transition(&LevelBasis::spin(), "down", "up")?;
            Ok(vec![JumpChannel::new(kappa, lowering, None)?])
        }
        ModelId::SuperposedDual => Ok(vec![
            to_sink(model, kappa, "g3")?,
            to_sink(model, kappa, "g4")?,
        ]),
        _ => Ok(vec![to_sink(model, kappa, "g3")?]),
    }
}

/// `sum_k Gamma_k^dagger Gamma_k` on `basis`.
pub fn total_damping(basis: &LevelBasis, channels: &[JumpChannel]) -> Result<QOperator> {
    let mut acc = QOperator::zeros(basis);
    for ch in channels {
        acc = acc.plus(&ch.damping())?;
    }
    Ok(acc)
}

/// `H - (i/2) sum_k Gamma_k^dagger Gamma_k`.
pub fn effective_hamiltonian(h: &QOperator, channels: &[JumpChannel]) -> Result<QOperator> {
    let damping = total_damping(h.basis(), channels)?;
    h.plus(&damping.scaled(C64::new(0.0, -0.5)))
}

fn state(basis: &LevelBasis, components: &[(&str, C64)]) -> QState {
    QState::from_components(basis, components).expect("static labels exist")
}

/// Dark states in the conventional order (`D1` before `D2`).
pub fn dark_states(model: ModelId, theta: f64, phi: f64) -> Result<Vec<QState>> {
    let basis = model.basis();
    let (s, c) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let r = C64::from;
    Ok(match model {
        ModelId::NmrSpinHalf => return Err(Error::UnsupportedModel(model.name(), "dark states")),
        ModelId::LambdaFirst | ModelId::LambdaRefocus => {
            let a = if model == ModelId::LambdaFirst {
                "g2"
            } else {
                "g1"
            };
            vec![state(
                &basis,
                &[(a, r(c)), ("g3", -C64::from_polar(s, phi))],
            )]
        }
        ModelId::TripodFirst => vec![
            state(
                &basis,
                &[("g1", r(c * cp)), ("g2", r(c * sp)), ("g3", r(-s))],
            ),
            state(&basis, &[("g1", r(-sp)), ("g2", r(cp))]),
        ],
        ModelId::TripodNaiveRefocus => vec![
            state(
                &basis,
                &[("g1", r(c * sp)), ("g2", r(c * cp)), ("g3", r(-s))],
            ),
            state(&basis, &[("g1", r(cp)), ("g2", r(-sp))]),
        ],
        ModelId::SuperposedDual => vec![
            state(
                &basis,
                &[("g1", r(c * cp)), ("g2", r(c * sp)), ("g3", r(-s))],
            ),
            state(
                &basis,
                &[("g1", r(-c * sp)), ("g2", r(c * cp)), ("g4", r(-s))],
            ),
        ],
    })
}

/// Orthonormal basis of the whole dark subspace that the adiabatic
/// connection mixes, as columns. For the superposed drive this adds a third
/// dark state that is coupled to `D1`, `D2` along the loop.
pub fn dark_frame(model: ModelId, theta: f64, phi: f64) -> Result<DMatrix<C64>> {
    let mut states = dark_states(model, theta, phi)?;
    if model == ModelId::SuperposedDual {
        let basis = model.basis();
        let (s, c) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let k = FRAC_1_SQRT_2;
        states.push(state(
            &basis,
            &[
                ("g1", C64::from(k * s * (cp + sp))),
                ("g2", C64::from(k * s * (sp - cp))),
                ("g3", C64::from(k * c)),
                ("g4", C64::from(-k * c)),
            ],
        ));
    }
    let cols: Vec<_> = states.into_iter().map(QState::into_amplitudes).collect();
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Reversed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    RampIn,
    Loop,
    RampOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration: f64,
}

fn smoothstep(s: f64) -> f64 {
    (0.5 * PI * s).sin().powi(2)
}

/// Constant-`theta` loop with optional smooth `theta` ramps at `phi = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSchedule {
    pub omega: f64,
    pub gamma: f64,
    pub theta0: f64,
    pub direction: Direction,
    pub ramp_fraction: f64,
}

impl ParamSchedule {
    /// Validates parameter ranges but not adiabaticity.
    pub fn new(
        theta0: f64,
        gamma: f64,
        omega: f64,
        direction: Direction,
        ramp_fraction: f64,
    ) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::param(
                "omega",
                format!("must be positive, got {omega}"),
            ));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param(
                "gamma",
                format!("must be positive, got {gamma}"),
            ));
        }
        if !(0.0..=0.5 * PI).contains(&theta0) {
            return Err(Error::param(
                "theta0",
                format!("must lie in [0, pi/2], got {theta0}"),
            ));
        }
        if !(ramp_fraction.is_finite() && ramp_fraction >= 0.0) {
            return Err(Error::param(
                "ramp_fraction",
                format!("must be >= 0, got {ramp_fraction}"),
            ));
        }
        Ok(Self {
            omega,
            gamma,
            theta0,
            direction,
            ramp_fraction,
        })
    }

    pub fn loop_duration(&self) -> f64 {
        TAU / self.gamma
    }

    pub fn ramp_duration(&self) -> f64 {
        self.ramp_fraction * self.loop_duration()
    }

    pub fn total_duration(&self) -> f64 {
        self.loop_duration() + 2.0 * self.ramp_duration()
    }

    /// Segments in the order they are traversed.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(3);
        let ramp = self.ramp_duration();
        if ramp > 0.0 {
            out.push(Segment {
                kind: SegmentKind::RampIn,
                duration: ramp,
            });
        }
        out.push(Segment {
            kind: SegmentKind::Loop,
            duration: self.loop_duration(),
        });
        if ramp > 0.0 {
            out.push(Segment {
                kind: SegmentKind::RampOut,
                duration: ramp,
            });
        }
        out
    }

    pub fn reversed(&self) -> Self {
        let direction = match self.direction {
            Direction::Forward => Direction::Reversed,
            Direction::Reversed => Direction::Forward,
        };
        Self {
            direction,
            ..self.clone()
        }
    }

    /// `(theta, phi)` at time `t`, clamped to `[0, T]`.
    pub fn angles(&self, t: f64) -> (f64, f64) {
        let total = self.total_duration();
        let t = t.clamp(0.0, total);
        let t = match self.direction {
            Direction::Forward => t,
            Direction::Reversed => total - t,
        };
        let ramp = self.ramp_duration();
        let lp = self.loop_duration();
        if t < ramp {
            (self.theta0 * smoothstep(t / ramp), 0.0)
        } else if t <= ramp + lp {
            (self.theta0, self.gamma * (t - ramp))
        } else {
            (self.theta0 * smoothstep((total - t) / ramp), TAU)
        }
    }
}

/// Builds the loop schedule, rejecting `omega <= 10 gamma`.
pub fn schedule_for_loop(
    model: ModelId,
    theta0: f64,
    gamma: f64,
    omega: f64,
    direction: Direction,
    ramp_fraction: f64,
) -> Result<ParamSchedule> {
    let _ = model;
    let sched = ParamSchedule::new(theta0, gamma, omega, direction, ramp_fraction)?;
    if omega <= 10.0 * gamma {
        return Err(Error::Adiabaticity { omega, gamma });
    }
    Ok(sched)
}

/// Identity on every level except the sink, for convenience in tests.
pub fn coupled_projector(model: ModelId) -> QOperator {
    let basis = model.basis();
    let diag: Vec<C64> = basis
        .labels()
        .iter()
        .map(|l| if l == SINK { ZERO } else { ONE })
        .collect();
    QOperator::diagonal(&basis, &diag).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{sigma_x, sigma_y, sigma_z};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_3;
    use std::f64::consts::FRAC_PI_4;

    fn sigma(model: ModelId, a: &str, b: &str) -> QOperator {
        QOperator::transition(&model.basis(), a, b).unwrap()
    }

    fn sym(model: ModelId, a: &str) -> QOperator {
        sigma(model, a, "e").plus(&sigma(model, "e", a)).unwrap()
    }

    fn close(a: &QOperator, b: &QOperator, tol: f64) {
        let d = a.max_abs_diff(b).unwrap();
        assert!(d < tol, "operators differ by {d}\n{a:?}\n{b:?}");
    }

    #[test]
    fn nmr_examples() {
        close(
            &nmr_hamiltonian(1.0, 0.0, 1.3),
            &sigma_z().scaled(C64::from(0.5)),
            1e-15,
        );
        close(
            &nmr_hamiltonian(1.0, FRAC_PI_2, 0.0),
            &sigma_x().scaled(C64::from(0.5)),
            1e-15,
        );
        let k = C64::from(FRAC_PI_4.cos());
        let expected = sigma_z().scaled(k).plus(&sigma_y().scaled(k)).unwrap();
        close(
            &nmr_hamiltonian(2.0, FRAC_PI_4, FRAC_PI_2),
            &expected,
            1e-15,
        );
    }

    #[test]
    fn nmr_eigenvalues_are_half_omega() {
        let ev = nmr_hamiltonian(3.0, 0.7, 2.1).hermitian_eigenvalues();
        assert!((ev[0] + 1.5).abs() < 1e-12 && (ev[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_examples() {
        let m = ModelId::LambdaFirst;
        close(
            &lambda_hamiltonian(LambdaVariant::First, 1.0, FRAC_PI_2, 0.0),
            &sym(m, "g2"),
            1e-15,
        );
        let k = C64::from(FRAC_1_SQRT_2);
        let expected = sym(m, "g2")
            .scaled(k)
            .minus(&sym(m, "g3").scaled(k))
            .unwrap();
        close(
            &lambda_hamiltonian(LambdaVariant::First, 1.0, FRAC_PI_4, PI),
            &expected,
            1e-15,
        );
        close(
            &lambda_hamiltonian(LambdaVariant::Refocus, 1.0, FRAC_PI_2, 0.0),
            &sym(m, "g1"),
            1e-15,
        );
    }

    #[test]
    fn lambda_uncoupled_level_is_inert() {
        let h = lambda_hamiltonian(LambdaVariant::First, 1.0, 0.8, 0.4);
        let g1 = h.basis().index("g1").unwrap();
        assert!((0..h.basis().dim())
            .all(|j| h.matrix()[(g1, j)] == ZERO && h.matrix()[(j, g1)] == ZERO));
    }

    #[test]
    fn tripod_examples() {
        let m = ModelId::TripodFirst;
        close(
            &tripod_hamiltonian(TripodVariant::First, 1.0, 0.0, 0.9),
            &sym(m, "g3"),
            1e-15,
        );
        close(
            &tripod_hamiltonian(TripodVariant::First, 1.0, FRAC_PI_2, FRAC_PI_2),
            &sym(m, "g2"),
            1e-15,
        );
        close(
            &tripod_hamiltonian(TripodVariant::NaiveRefocus, 1.0, FRAC_PI_2, 0.0),
            &sym(m, "g2"),
            1e-15,
        );
    }

    #[test]
    fn superposed_examples() {
        let m = ModelId::SuperposedDual;
        let g34 = sym(m, "g3").plus(&sym(m, "g4")).unwrap();
        close(&superposed_hamiltonian(1.0, 0.0, 0.3), &g34, 1e-15);
        let g12 = sym(m, "g1").plus(&sym(m, "g2")).unwrap();
        close(&superposed_hamiltonian(1.0, FRAC_PI_2, 0.0), &g12, 1e-15);
        let expected = sym(m, "g2").scaled(C64::from(2f64.sqrt()));
        close(
            &superposed_hamiltonian(1.0, FRAC_PI_2, FRAC_PI_4),
            &expected,
            1e-15,
        );
    }

    #[test]
    fn jump_set_examples() {
        let nmr = jump_set(ModelId::NmrSpinHalf, 0.3).unwrap();
        assert_eq!(nmr.len(), 1);
        let expected = QOperator::transition(&LevelBasis::spin(), "down", "up")
            .unwrap()
            .scaled(C64::from(0.3f64.sqrt()));
        close(&nmr[0].operator(), &expected, 1e-15);
        assert_eq!(nmr[0].sink_label, None);

        let lam = jump_set(ModelId::LambdaFirst, 0.2).unwrap();
        assert_eq!(lam.len(), 1);
        let m = ModelId::LambdaFirst;
        assert_eq!(
            lam[0].damping(),
            sigma(m, "g3", "g3").scaled(C64::from(0.2))
        );
        assert_eq!(lam[0].sink_label.as_deref(), Some(SINK));

        let sup = jump_set(ModelId::SuperposedDual, 0.2).unwrap();
        let m = ModelId::SuperposedDual;
        assert_eq!(sup.len(), 2);
        assert_eq!(
            sup[0].operator().element(SINK, "g3").unwrap(),
            C64::from(0.2f64.sqrt())
        );
        assert_eq!(
            sup[1].operator().element(SINK, "g4").unwrap(),
            C64::from(0.2f64.sqrt())
        );
        let profile = sigma(m, "g3", "g3")
            .plus(&sigma(m, "g4", "g4"))
            .unwrap()
            .scaled(C64::from(0.2));
        assert_eq!(total_damping(&m.basis(), &sup).unwrap(), profile);

        assert!(matches!(
            jump_set(m, -1.0),
            Err(Error::InvalidParameter { name: "kappa", .. })
        ));
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let h = lambda_hamiltonian(LambdaVariant::First, 1.0, 0.6, 0.2);
        assert_eq!(effective_hamiltonian(&h, &[]).unwrap(), h);
        let heff =
            effective_hamiltonian(&h, &jump_set(ModelId::LambdaFirst, 0.4).unwrap()).unwrap();
        let expected = h
            .plus(&sigma(ModelId::LambdaFirst, "g3", "g3").scaled(C64::new(0.0, -0.2)))
            .unwrap();
        assert_eq!(heff, expected);

        let hx = sigma_x().scaled(C64::from(0.5));
        let heff =
            effective_hamiltonian(&hx, &jump_set(ModelId::NmrSpinHalf, 0.1).unwrap()).unwrap();
        let up = QOperator::projector(&LevelBasis::spin(), "up").unwrap();
        close(
            &heff,
            &hx.plus(&up.scaled(C64::new(0.0, -0.05))).unwrap(),
            1e-16,
        );

        let foreign = jump_set(ModelId::NmrSpinHalf, 0.1).unwrap();
        assert!(effective_hamiltonian(&h, &foreign).is_err());
    }

    fn assert_state(actual: &QState, expected: &[(&str, f64)]) {
        let e = QState::from_components(
            actual.basis(),
            &expected
                .iter()
                .map(|&(l, v)| (l, C64::from(v)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let d = (actual.amplitudes() - e.amplitudes()).camax();
        assert!(d < 1e-15, "{actual:?} vs {e:?}");
    }

    #[test]
    fn dark_state_examples() {
        let d = dark_states(ModelId::LambdaFirst, 0.0, 1.1).unwrap();
        assert_eq!(d.len(), 1);
        assert_state(&d[0], &[("g2", 1.0)]);

        let d = dark_states(ModelId::TripodFirst, FRAC_PI_3, 0.0).unwrap();
        assert_state(&d[0], &[("g1", FRAC_PI_3.cos()), ("g3", -FRAC_PI_3.sin())]);
        assert_state(&d[1], &[("g2", 1.0)]);

        let d = dark_states(ModelId::SuperposedDual, FRAC_PI_4, FRAC_PI_2).unwrap();
        let k = FRAC_PI_4.cos();
        assert_state(&d[0], &[("g2", k), ("g3", -k)]);
        assert_state(&d[1], &[("g1", -k), ("g4", -k)]);

        assert_eq!(
            dark_states(ModelId::NmrSpinHalf, 0.1, 0.2).unwrap_err(),
            Error::UnsupportedModel("NMR_SPIN_HALF", "dark states")
        );
    }

    #[test]
    fn dark_states_are_orthonormal_and_annihilated_on_grid() {
        let omega = 2.5;
        for model in ModelId::ALL.into_iter().filter(|m| m.has_dark_states()) {
            for i in 0..32 {
                for j in 0..32 {
                    let theta = PI * i as f64 / 31.0;
                    let phi = TAU * j as f64 / 31.0;
                    let h = model.hamiltonian(omega, theta, phi);
                    let f = dark_frame(model, theta, phi).unwrap();
                    let gram = f.adjoint() * &f;
                    let eye = DMatrix::<C64>::identity(f.ncols(), f.ncols());
                    assert!(
                        (gram - eye).camax() < 1e-14,
                        "{model} gram at {theta},{phi}"
                    );
                    let residual = (h.matrix() * &f).camax();
                    assert!(residual < 1e-12 * omega, "{model} residual {residual}");
                }
            }
        }
    }

    #[test]
    fn model_hamiltonians_are_hermitian() {
        for model in ModelId::ALL {
            for k in 0..50 {
                let theta = 0.13 * k as f64;
                let phi = 0.29 * k as f64;
                let h = model.hamiltonian(7.0, theta, phi);
                assert!(h.hermiticity_defect() < 1e-14 * 7.0);
            }
        }
    }

    #[test]
    fn superposed_damping_is_homogeneous_on_dark_pair() {
        let kappa = 0.37;
        let m = ModelId::SuperposedDual;
        let damping = total_damping(&m.basis(), &jump_set(m, kappa).unwrap()).unwrap();
        for k in 0..40 {
            let theta = 0.04 * k as f64;
            let phi = 0.17 * k as f64;
            let d = dark_states(m, theta, phi).unwrap();
            let expect = kappa * theta.sin().powi(2);
            for di in &d {
                let v = damping.expectation(di).unwrap();
                assert!((v - C64::from(expect)).norm() < 1e-12);
            }
            let cross = d[0].inner(&damping.apply(&d[1]).unwrap()).unwrap();
            assert!(cross.norm() < 1e-12);
        }
    }

    #[test]
    fn schedule_examples() {
        let gamma = 0.01;
        let s = schedule_for_loop(
            ModelId::LambdaFirst,
            0.5,
            gamma,
            1.0,
            Direction::Forward,
            0.0,
        )
        .unwrap();
        assert_eq!(s.total_duration(), TAU / gamma);
        assert_eq!(s.segments().len(), 1);
        for k in 0..=10 {
            let t = s.total_duration() * k as f64 / 10.0;
            let (theta, phi) = s.angles(t);
            assert_eq!(theta, 0.5);
            assert!((phi - gamma * t).abs() < 1e-12);
        }

        let s = schedule_for_loop(
            ModelId::LambdaFirst,
            FRAC_PI_4,
            gamma,
            1.0,
            Direction::Forward,
            0.25,
        )
        .unwrap();
        assert!((s.total_duration() - 1.5 * TAU / gamma).abs() < 1e-9);
        let kinds: Vec<_> = s.segments().iter().map(|g| g.kind).collect();
        assert_eq!(
            kinds,
            [SegmentKind::RampIn, SegmentKind::Loop, SegmentKind::RampOut]
        );
        assert_eq!(s.angles(0.0), (0.0, 0.0));
        assert_eq!(s.angles(s.total_duration()).0, 0.0);
        assert_eq!(s.angles(s.total_duration()).1, TAU);
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(matches!(
            schedule_for_loop(ModelId::LambdaFirst, 0.5, 0.2, 1.0, Direction::Forward, 0.0),
            Err(Error::Adiabaticity { .. })
        ));
        assert!(ParamSchedule::new(0.5, 0.2, 1.0, Direction::Forward, 0.0).is_ok());
        assert!(matches!(
            ParamSchedule::new(2.0, 0.01, 1.0, Direction::Forward, 0.0),
            Err(Error::InvalidParameter { name: "theta0", .. })
        ));
        assert!(matches!(
            ParamSchedule::new(0.5, -0.01, 1.0, Direction::Forward, 0.0),
            Err(Error::InvalidParameter { name: "gamma", .. })
        ));
    }

    #[test]
    fn schedule_is_continuous_across_segments() {
        let s = ParamSchedule::new(1.1, 0.02, 1.0, Direction::Forward, 0.25).unwrap();
        let n = 20_000;
        let total = s.total_duration();
        let mut prev = s.angles(0.0);
        for k in 1..=n {
            let cur = s.angles(total * k as f64 / n as f64);
            assert!((cur.0 - prev.0).abs() < 1e-3);
            assert!((cur.1 - prev.1).abs() < 1e-2);
            prev = cur;
        }
    }

    #[test]
    fn coupled_projector_excludes_sink() {
        let p = coupled_projector(ModelId::LambdaFirst);
        assert_eq!(p.trace(), C64::from(4.0));
        assert_eq!(p.element(SINK, SINK).unwrap(), ZERO);
    }

    proptest! {
        #[test]
        fn reversal_mirrors_forward(
            theta0 in 0.0..FRAC_PI_2,
            gamma in 0.001..0.05f64,
            ramp in 0.0..0.5f64,
        ) {
            let fwd = ParamSchedule::new(theta0, gamma, 1.0, Direction::Forward, ramp).unwrap();
            let rev = fwd.reversed();
            let total = fwd.total_duration();
            for k in 0..=1000 {
                let t = total * k as f64 / 1000.0;
                let (a, b) = rev.angles(t);
                let (c, d) = fwd.angles(total - t);
                prop_assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
            }
        }

        #[test]
        fn effective_hamiltonian_splits_into_parts(
            theta in 0.0..PI,
            phi in 0.0..TAU,
            kappa in 0.0..2.0f64,
            idx in 0usize..6,
        ) {
            let model = ModelId::ALL[idx];
            let h = model.hamiltonian(1.0, theta, phi);
            let ch = jump_set(model, kappa).unwrap();
            let heff = effective_hamiltonian(&h, &ch).unwrap();
            let herm = heff.plus(&heff.adjoint()).unwrap().scaled(C64::from(0.5));
            prop_assert!(herm.max_abs_diff(&h).unwrap() < 1e-15);
            let anti = heff.minus(&heff.adjoint()).unwrap().scaled(C64::new(0.0, 1.0));
            // i (H_eff - H_eff^dagger) = sum Gamma^dagger Gamma >= 0
            for ev in anti.hermitian_eigenvalues() {
                prop_assert!(ev >= -1e-14);
            }
        }
    }
}
