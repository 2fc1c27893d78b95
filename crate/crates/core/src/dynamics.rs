//! Time evolution engines: no-jump propagation under the effective
//! Hamiltonian, Lindblad master equation, and quantum-jump trajectories.
//!
//! All engines share one fixed-step grid. A run is split at every pulse time;
//! each interval of length `L` uses `ceil(L / dt)` classical RK4 steps of
//! equal size, and pulses act instantaneously between intervals.

use std::borrow::Cow;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{total_damping, JumpChannel, ModelId, ParamSchedule};
use crate::qcore::{LevelBasis, QOperator, QState, C64, NORM_SLACK, ONE, ZERO};

/// Step propagators are cached for trajectory sampling up to this many bytes.
const CACHE_LIMIT_BYTES: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq)]
pub enum Drive {
    Model {
        model: ModelId,
        schedule: ParamSchedule,
    },
    Constant {
        hamiltonian: QOperator,
        duration: f64,
    },
}

/// Instantaneous operator applied at `time`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pulse {
    pub time: f64,
    pub op: QOperator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopSpec {
    drive: Drive,
    channels: Vec<JumpChannel>,
    dt: f64,
    pulses: Vec<Pulse>,
    basis: LevelBasis,
    damping: DMatrix<C64>,
    jumps: Vec<DMatrix<C64>>,
}

/// Default step `0.01 min(1/omega, 1/gamma)`.
pub fn default_dt(omega: f64, gamma: f64) -> f64 {
    0.01 * (1.0 / omega).min(1.0 / gamma)
}

impl LoopSpec {
    /// Model-driven loop. `dt = None` selects [`default_dt`].
    pub fn new(
        model: ModelId,
        schedule: ParamSchedule,
        channels: Vec<JumpChannel>,
        dt: Option<f64>,
    ) -> Result<Self> {
        let dt = dt.unwrap_or_else(|| default_dt(schedule.omega, schedule.gamma));
        let limit = 0.02 * (1.0 / schedule.omega).min(1.0 / schedule.gamma);
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::param(
                "dt",
                format!("{dt} exceeds 0.02 min(1/omega, 1/gamma) = {limit}"),
            ));
        }
        Self::build(
            model.basis(),
            Drive::Model { model, schedule },
            channels,
            dt,
        )
    }

    /// Time-independent Hamiltonian applied for `duration`.
    pub fn constant(
        hamiltonian: QOperator,
        channels: Vec<JumpChannel>,
        duration: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::param(
                "duration",
                format!("must be >= 0, got {duration}"),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be positive, got {dt}")));
        }
        if !hamiltonian.is_hermitian() {
            return Err(Error::param("hamiltonian", "must be Hermitian"));
        }
        let basis = hamiltonian.basis().clone();
        Self::build(
            basis,
            Drive::Constant {
                hamiltonian,
                duration,
            },
            channels,
            dt,
        )
    }

    fn build(basis: LevelBasis, drive: Drive, channels: Vec<JumpChannel>, dt: f64) -> Result<Self> {
        let damping = total_damping(&basis, &channels)?.into_matrix();
        let jumps = channels
            .iter()
            .map(|c| c.operator().into_matrix())
            .collect();
        Ok(Self {
            drive,
            channels,
            dt,
            pulses: Vec::new(),
            basis,
            damping,
            jumps,
        })
    }

    /// Adds an instantaneous pulse; pulses at equal times act in insertion order.
    pub fn with_pulse(mut self, time: f64, op: QOperator) -> Result<Self> {
        let total = self.duration();
        if !(0.0..=total).contains(&time) {
            return Err(Error::param(
                "pulses",
                format!("pulse time {time} outside [0, {total}]"),
            ));
        }
        if op.basis() != &self.basis {
            return Err(Error::BasisMismatch);
        }
        let at = self.pulses.partition_point(|p| p.time <= time);
        self.pulses.insert(at, Pulse { time, op });
        Ok(self)
    }

    pub fn drive(&self) -> &Drive {
        &self.drive
    }

    pub fn model(&self) -> Option<ModelId> {
        match &self.drive {
            Drive::Model { model, .. } => Some(*model),
            Drive::Constant { .. } => None,
        }
    }

    pub fn schedule(&self) -> Option<&ParamSchedule> {
        match &self.drive {
            Drive::Model { schedule, .. } => Some(schedule),
            Drive::Constant { .. } => None,
        }
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn basis(&self) -> &LevelBasis {
        &self.basis
    }

    pub fn duration(&self) -> f64 {
        match &self.drive {
            Drive::Model { schedule, .. } => schedule.total_duration(),
            Drive::Constant { duration, .. } => *duration,
        }
    }

    /// Coherent Hamiltonian at time `t`.
    pub fn hamiltonian_at(&self, t: f64) -> QOperator {
        match &self.drive {
            Drive::Model { model, schedule } => {
                let (theta, phi) = schedule.angles(t);
                model.hamiltonian(schedule.omega, theta, phi)
            }
            Drive::Constant { hamiltonian, .. } => hamiltonian.clone(),
        }
    }

    /// Generator `-i H_eff(t)` of the no-jump evolution.
    fn generator(&self, t: f64) -> DMatrix<C64> {
        let h = self.hamiltonian_at(t).into_matrix();
        (h - &self.damping * C64::new(0.0, 0.5)) * C64::new(0.0, -1.0)
    }

    /// Integration intervals between pulses: `(start, step, count)`, each
    /// followed by the pulses that sit at its end.
    fn grid(&self) -> Vec<Interval> {
        let total = self.duration();
        let mut cuts: Vec<f64> = vec![0.0];
        for p in &self.pulses {
            if p.time > *cuts.last().expect("non-empty") {
                cuts.push(p.time);
            }
        }
        if total > *cuts.last().expect("non-empty") {
            cuts.push(total);
        }
        let mut out = Vec::with_capacity(cuts.len());
        let mut pulse_idx = 0;
        let take = |upto: f64, pulse_idx: &mut usize| {
            let start = *pulse_idx;
            while *pulse_idx < self.pulses.len() && self.pulses[*pulse_idx].time <= upto {
                *pulse_idx += 1;
            }
            start..*pulse_idx
        };
        out.push(Interval {
            start: 0.0,
            step: 0.0,
            count: 0,
            pulses: take(0.0, &mut pulse_idx),
        });
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            let count = (len / self.dt).ceil().max(1.0) as usize;
            out.push(Interval {
                start: w[0],
                step: len / count as f64,
                count,
                pulses: take(w[1], &mut pulse_idx),
            });
        }
        out
    }

    pub fn step_count(&self) -> usize {
        self.grid().iter().map(|i| i.count).sum()
    }
}

#[derive(Clone, Debug)]
struct Interval {
    start: f64,
    step: f64,
    count: usize,
    pulses: std::ops::Range<usize>,
}

impl Interval {
    fn time(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }
}

fn rk4_vec(
    a0: &DMatrix<C64>,
    am: &DMatrix<C64>,
    a1: &DMatrix<C64>,
    psi: &DVector<C64>,
    h: f64,
) -> DVector<C64> {
    let h = C64::from(h);
    let half = h * 0.5;
    let k1 = a0 * psi;
    let k2 = am * (psi + &k1 * half);
    let k3 = am * (psi + &k2 * half);
    let k4 = a1 * (psi + &k3 * h);
    psi + (k1 + (k2 + k3) * C64::from(2.0) + k4) * (h / 6.0)
}

/// One RK4 step written as a matrix acting on the state.
fn rk4_matrix(a0: &DMatrix<C64>, am: &DMatrix<C64>, a1: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
    let d = a0.nrows();
    let id = DMatrix::<C64>::identity(d, d);
    let h = C64::from(h);
    let half = h * 0.5;
    let k1 = a0.clone();
    let k2 = am * (&id + &k1 * half);
    let k3 = am * (&id + &k2 * half);
    let k4 = a1 * (&id + &k3 * h);
    id + (k1 + (k2 + k3) * C64::from(2.0) + k4) * (h / 6.0)
}

/// Observation points of a no-jump run.
#[derive(Debug)]
pub enum Event<'a> {
    Start {
        t: f64,
        state: &'a DVector<C64>,
    },
    Step {
        t: f64,
        state: &'a DVector<C64>,
    },
    Pulse {
        t: f64,
        index: usize,
        before: &'a DVector<C64>,
        after: &'a DVector<C64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoJumpResult {
    pub raw_final: QState,
    pub survival: f64,
    pub normalized_final: QState,
}

impl NoJumpResult {
    fn from_raw(raw: QState) -> Result<Self> {
        let survival = raw.norm_sqr();
        if survival.is_nan() || survival <= 0.0 {
            return Err(Error::InvalidState(
                "no-jump survival underflowed to zero".into(),
            ));
        }
        let normalized_final = raw.normalized()?;
        Ok(Self {
            raw_final: raw,
            survival,
            normalized_final,
        })
    }
}

fn check_initial(basis: &LevelBasis, psi0: &QState) -> Result<()> {
    if psi0.basis() != basis {
        return Err(if psi0.basis().dim() != basis.dim() {
            Error::DimensionMismatch {
                expected: basis.dim(),
                found: psi0.basis().dim(),
            }
        } else {
            Error::BasisMismatch
        });
    }
    let n = psi0.norm_sqr();
    if (n - 1.0).abs() > NORM_SLACK {
        return Err(Error::InvalidState(format!(
            "initial state must be normalized, squared norm is {n}"
        )));
    }
    Ok(())
}

fn check_step(t: f64, before: f64, psi: &DVector<C64>) -> Result<f64> {
    if psi.iter().any(|z| !z.is_finite()) {
        return Err(Error::NumericalInstability { t });
    }
    let after = psi.norm_squared();
    if after > before + NORM_SLACK {
        return Err(Error::IntegratorViolation { t, before, after });
    }
    Ok(after)
}

/// Raw propagation of an arbitrary (possibly sub-normalized) vector.
fn propagate_nojump(
    spec: &LoopSpec,
    mut psi: DVector<C64>,
    observer: &mut dyn FnMut(Event<'_>),
) -> Result<DVector<C64>> {
    let mut norm = psi.norm_squared();
    observer(Event::Start {
        t: 0.0,
        state: &psi,
    });
    for iv in spec.grid() {
        if iv.count > 0 {
            let mut a0 = spec.generator(iv.start);
            for k in 0..iv.count {
                let t = iv.time(k);
                let am = spec.generator(t + 0.5 * iv.step);
                let a1 = spec.generator(iv.time(k + 1));
                psi = rk4_vec(&a0, &am, &a1, &psi, iv.step);
                let t1 = iv.time(k + 1);
                norm = check_step(t1, norm, &psi)?;
                observer(Event::Step { t: t1, state: &psi });
                a0 = a1;
            }
        }
        for index in iv.pulses.clone() {
            let pulse = &spec.pulses[index];
            let after = pulse.op.matrix() * &psi;
            norm = check_step(pulse.time, norm, &after)?;
            observer(Event::Pulse {
                t: pulse.time,
                index,
                before: &psi,
                after: &after,
            });
            psi = after;
        }
    }
    Ok(psi)
}

/// Conditional no-jump evolution `i d/dt psi = H_eff(t) psi` from a
/// normalized initial state.
pub fn integrate_nojump(spec: &LoopSpec, psi0: &QState) -> Result<NoJumpResult> {
    integrate_nojump_observed(spec, psi0, &mut |_| {})
}

pub fn integrate_nojump_observed(
    spec: &LoopSpec,
    psi0: &QState,
    observer: &mut dyn FnMut(Event<'_>),
) -> Result<NoJumpResult> {
    check_initial(spec.basis(), psi0)?;
    let raw = propagate_nojump(spec, psi0.amplitudes().clone(), observer)?;
    NoJumpResult::from_raw(QState::from_parts_unchecked(spec.basis().clone(), raw))
}

/// Continues a no-jump run from a raw, possibly sub-normalized state.
pub fn resume_nojump(spec: &LoopSpec, raw: &QState) -> Result<QState> {
    if raw.basis() != spec.basis() {
        return Err(Error::BasisMismatch);
    }
    if raw.norm_sqr() > 1.0 + NORM_SLACK {
        return Err(Error::InvalidState("raw state norm exceeds one".into()));
    }
    let out = propagate_nojump(spec, raw.amplitudes().clone(), &mut |_| {})?;
    Ok(QState::from_parts_unchecked(spec.basis().clone(), out))
}

/// Chains stages without intermediate renormalization.
pub fn integrate_protocol_nojump(stages: &[LoopSpec], psi0: &QState) -> Result<NoJumpResult> {
    integrate_protocol_observed(stages, psi0, &mut |_, _| {})
}

/// As [`integrate_protocol_nojump`], reporting the stage index with every event.
pub fn integrate_protocol_observed(
    stages: &[LoopSpec],
    psi0: &QState,
    observer: &mut dyn FnMut(usize, Event<'_>),
) -> Result<NoJumpResult> {
    let first = stages
        .first()
        .ok_or_else(|| Error::param("stages", "a protocol needs at least one stage"))?;
    check_initial(first.basis(), psi0)?;
    let mut psi = psi0.amplitudes().clone();
    for (i, stage) in stages.iter().enumerate() {
        if stage.basis() != first.basis() {
            return Err(Error::BasisMismatch);
        }
        psi = propagate_nojump(stage, psi, &mut |ev| observer(i, ev))?;
    }
    NoJumpResult::from_raw(QState::from_parts_unchecked(first.basis().clone(), psi))
}

/// Writes `t, re_<label>, im_<label>, ..., survival` for every grid point.
pub fn dump_nojump_csv<W: Write>(
    spec: &LoopSpec,
    psi0: &QState,
    out: &mut W,
) -> Result<NoJumpResult> {
    let mut header = String::from("t");
    for label in spec.basis().labels() {
        header.push_str(&format!(",re_{label},im_{label}"));
    }
    header.push_str(",survival");
    writeln!(out, "{header}")?;
    let mut io_err: Option<std::io::Error> = None;
    let mut write_row = |t: f64, psi: &DVector<C64>| {
        if io_err.is_some() {
            return;
        }
        let mut line = format!("{t:.12e}");
        for z in psi.iter() {
            line.push_str(&format!(",{:.12e},{:.12e}", z.re, z.im));
        }
        line.push_str(&format!(",{:.12e}", psi.norm_squared()));
        if let Err(e) = writeln!(out, "{line}") {
            io_err = Some(e);
        }
    };
    let res = integrate_nojump_observed(spec, psi0, &mut |ev| match ev {
        Event::Start { t, state } | Event::Step { t, state } => write_row(t, state),
        Event::Pulse { t, after, .. } => write_row(t, after),
    })?;
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(res),
    }
}

fn check_density(basis: &LevelBasis, rho: &QOperator) -> Result<()> {
    if rho.basis() != basis {
        return Err(Error::BasisMismatch);
    }
    if rho.hermiticity_defect() > 1e-10 {
        return Err(Error::InvalidState(
            "density matrix is not Hermitian".into(),
        ));
    }
    let tr = rho.trace();
    if (tr - C64::from(1.0)).norm() > 1e-9 {
        return Err(Error::InvalidState(format!("density matrix trace is {tr}")));
    }
    if rho.hermitian_eigenvalues().first().copied().unwrap_or(0.0) < -1e-9 {
        return Err(Error::InvalidState("density matrix is not positive".into()));
    }
    Ok(())
}

fn lindblad_rhs(
    a: &DMatrix<C64>,
    jumps: &[DMatrix<C64>],
    rho: &DMatrix<C64>,
    recycle: bool,
) -> DMatrix<C64> {
    let mut out = a * rho + rho * a.adjoint();
    if recycle {
        for g in jumps {
            out += g * rho * g.adjoint();
        }
    }
    out
}

fn propagate_density(
    spec: &LoopSpec,
    mut rho: DMatrix<C64>,
    recycle: bool,
) -> Result<DMatrix<C64>> {
    let jumps = &spec.jumps;
    for iv in spec.grid() {
        if iv.count > 0 {
            let h = C64::from(iv.step);
            let half = h * 0.5;
            let mut a0 = spec.generator(iv.start);
            for k in 0..iv.count {
                let am = spec.generator(iv.time(k) + 0.5 * iv.step);
                let a1 = spec.generator(iv.time(k + 1));
                let k1 = lindblad_rhs(&a0, jumps, &rho, recycle);
                let k2 = lindblad_rhs(&am, jumps, &(&rho + &k1 * half), recycle);
                let k3 = lindblad_rhs(&am, jumps, &(&rho + &k2 * half), recycle);
                let k4 = lindblad_rhs(&a1, jumps, &(&rho + &k3 * h), recycle);
                rho += (k1 + (k2 + k3) * C64::from(2.0) + k4) * (h / 6.0);
                if rho.iter().any(|z| !z.is_finite()) {
                    return Err(Error::NumericalInstability { t: iv.time(k + 1) });
                }
                a0 = a1;
            }
        }
        for index in iv.pulses.clone() {
            let p = spec.pulses[index].op.matrix();
            rho = p * rho * p.adjoint();
        }
    }
    Ok(rho)
}

/// Lindblad evolution `d rho/dt = -i[H, rho] + sum_k (G rho G^+ - {G^+ G, rho}/2)`.
pub fn integrate_master(spec: &LoopSpec, rho0: &QOperator) -> Result<QOperator> {
    integrate_master_protocol(std::slice::from_ref(spec), rho0)
}

pub fn integrate_master_protocol(stages: &[LoopSpec], rho0: &QOperator) -> Result<QOperator> {
    run_density(stages, rho0, true)
}

/// Density matrix conditioned on no jump: the master equation without the
/// recycling term. Its trace is the no-jump probability of `rho0`.
pub fn integrate_conditional_protocol(stages: &[LoopSpec], rho0: &QOperator) -> Result<QOperator> {
    run_density(stages, rho0, false)
}

fn run_density(stages: &[LoopSpec], rho0: &QOperator, recycle: bool) -> Result<QOperator> {
    let first = stages
        .first()
        .ok_or_else(|| Error::param("stages", "a protocol needs at least one stage"))?;
    check_density(first.basis(), rho0)?;
    let mut rho = rho0.matrix().clone();
    for stage in stages {
        if stage.basis() != first.basis() {
            return Err(Error::BasisMismatch);
        }
        rho = propagate_density(stage, rho, recycle)?;
    }
    QOperator::new(first.basis().clone(), rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub stream: u64,
    pub events: Vec<JumpEvent>,
    /// Normalized state at the end of the run.
    pub final_state: QState,
    /// No-jump probability of the stretch after the last event, given the
    /// recorded history.
    pub weight: f64,
}

/// Per-step RK4 propagators of a spec, cached when small enough.
pub struct StepPropagators<'a> {
    spec: &'a LoopSpec,
    grid: Vec<Interval>,
    cache: Option<Vec<DMatrix<C64>>>,
}

impl<'a> StepPropagators<'a> {
    pub fn new(spec: &'a LoopSpec) -> Self {
        let grid = spec.grid();
        let steps: usize = grid.iter().map(|i| i.count).sum();
        let d = spec.basis().dim();
        let bytes = steps * d * d * std::mem::size_of::<C64>();
        let cache = (bytes <= CACHE_LIMIT_BYTES).then(|| {
            let mut out = Vec::with_capacity(steps);
            for iv in &grid {
                for k in 0..iv.count {
                    out.push(Self::compute(spec, iv, k));
                }
            }
            out
        });
        Self { spec, grid, cache }
    }

    fn compute(spec: &LoopSpec, iv: &Interval, k: usize) -> DMatrix<C64> {
        let t = iv.time(k);
        rk4_matrix(
            &spec.generator(t),
            &spec.generator(t + 0.5 * iv.step),
            &spec.generator(iv.time(k + 1)),
            iv.step,
        )
    }

    fn step(&self, flat: usize, iv: &Interval, k: usize) -> Cow<'_, DMatrix<C64>> {
        match &self.cache {
            Some(c) => Cow::Borrowed(&c[flat]),
            None => Cow::Owned(Self::compute(self.spec, iv, k)),
        }
    }
}

/// RK4 sub-step of size `tau` from the left edge `t`.
fn substep(spec: &LoopSpec, t: f64, tau: f64, psi: &DVector<C64>) -> DVector<C64> {
    rk4_vec(
        &spec.generator(t),
        &spec.generator(t + 0.5 * tau),
        &spec.generator(t + tau),
        psi,
        tau,
    )
}

fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Single quantum-jump trajectory on stream 0 of `seed`.
pub fn sample_trajectory(spec: &LoopSpec, psi0: &QState, seed: u64) -> Result<TrajectoryRecord> {
    check_initial(spec.basis(), psi0)?;
    sample_with(&StepPropagators::new(spec), psi0, seed, 0)
}

fn sample_with(
    props: &StepPropagators<'_>,
    psi0: &QState,
    seed: u64,
    stream: u64,
) -> Result<TrajectoryRecord> {
    let spec = props.spec;
    let tol = 1e-10 * spec.duration().max(f64::MIN_POSITIVE);
    let mut rng = trajectory_rng(seed, stream);
    let mut threshold: f64 = rng.random();
    let mut psi = psi0.amplitudes().clone();
    let mut norm = psi.norm_squared();
    let mut events = Vec::new();
    let mut flat = 0;
    let mut next = psi.clone();

    for iv in &props.grid {
        for k in 0..iv.count {
            let t = iv.time(k);
            let t_end = iv.time(k + 1);
            next.gemv(ONE, props.step(flat, iv, k).as_ref(), &psi, ZERO);
            flat += 1;
            let mut n_next = check_step(t_end, norm, &next)?;
            // Left edge of the part of this step still to be integrated.
            let mut left = t;
            while n_next <= threshold {
                let width = t_end - left;
                let (mut lo, mut hi) = (0.0, width);
                while hi - lo > tol {
                    let mid = 0.5 * (lo + hi);
                    if substep(spec, left, mid, &psi).norm_squared() > threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tau = 0.5 * (lo + hi);
                let at_jump = substep(spec, left, tau, &psi);
                let jump_time = left + tau;
                let weights: Vec<f64> = spec
                    .jumps
                    .iter()
                    .map(|g| (g * &at_jump).norm_squared())
                    .collect();
                let total: f64 = weights.iter().sum();
                if total.is_nan() || total <= 0.0 {
                    return Err(Error::InvalidState(format!(
                        "norm decayed below the jump threshold at t = {jump_time} without any active channel"
                    )));
                }
                let mut r = rng.random::<f64>() * total;
                let mut channel = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        channel = i;
                        break;
                    }
                    r -= w;
                }
                let jumped = &spec.jumps[channel] * &at_jump;
                psi = &jumped / C64::from(jumped.norm());
                norm = 1.0;
                events.push(JumpEvent {
                    time: jump_time,
                    channel,
                });
                threshold = rng.random();
                left = jump_time;
                next = substep(spec, left, t_end - left, &psi);
                n_next = check_step(t_end, norm, &next)?;
            }
            std::mem::swap(&mut psi, &mut next);
            norm = n_next;
        }
        for index in iv.pulses.clone() {
            let pulse = &spec.pulses[index];
            psi = pulse.op.matrix() * &psi;
            norm = check_step(pulse.time, norm, &psi)?;
        }
    }
    let final_state =
        QState::from_parts_unchecked(spec.basis().clone(), &psi / C64::from(norm.sqrt()));
    Ok(TrajectoryRecord {
        seed,
        stream,
        events,
        final_state,
        weight: norm,
    })
}

/// Mean of `|psi_i><psi_i|` over `n` trajectories, trajectory `i` using
/// stream `i` of `seed`. The second value is the Frobenius norm of the
/// entrywise standard error of the mean.
///
/// Trajectories run in parallel and are summed in index order, so the result
/// does not depend on the number of worker threads.
pub fn average_trajectories(
    spec: &LoopSpec,
    psi0: &QState,
    n: usize,
    seed: u64,
) -> Result<(QOperator, f64)> {
    if n == 0 {
        return Err(Error::param("trajectories", "need at least one trajectory"));
    }
    check_initial(spec.basis(), psi0)?;
    let props = StepPropagators::new(spec);
    let projectors: Vec<DMatrix<C64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let rec = sample_with(&props, psi0, seed, i)?;
            let v = rec.final_state.amplitudes();
            Ok(v * v.adjoint())
        })
        .collect::<Result<_>>()?;
    let d = spec.basis().dim();
    let mut mean = DMatrix::<C64>::zeros(d, d);
    for p in &projectors {
        mean += p;
    }
    mean /= C64::from(n as f64);
    let stderr = if n > 1 {
        let mut var = 0.0;
        for p in &projectors {
            var += (p - &mean).norm_squared();
        }
        (var / (n as f64 - 1.0) / n as f64).sqrt()
    } else {
        0.0
    };
    Ok((QOperator::new(spec.basis().clone(), mean)?, stderr))
}
