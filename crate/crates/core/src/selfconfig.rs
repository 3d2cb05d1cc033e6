//! Black-box self-configuration.
//!
//! Everything in this module programs a mesh through the [`HardwareHandle`]
//! interface alone: inject a field, read detectors, nudge phases. No routine
//! here looks at the splitter offsets, and none of them needs to. The common
//! primitive is a two-knob tuning step that maximises the projection of the
//! measured field onto a known target column; interference does the rest.
//!
//! Three schedules are built on that primitive:
//!
//! * [`configure_ratio`] walks a triangular mesh diagonal by diagonal,
//!   tuning each crossing's own pair of phases against a basis-vector probe.
//! * [`configure_direct`] walks the same triangle but matches output
//!   amplitudes element by element instead of maximising a merit, which
//!   costs fewer measurements and tolerates no-disturbance bookkeeping.
//! * [`configure_clements`] programs a rectangular mesh with a mid-mesh
//!   detector diagonal in two stages, driving the input-side triangle
//!   through its taps in reciprocal fashion and then the output-side
//!   triangle like a triangular mesh fed through the already-configured
//!   front half.

use std::collections::HashSet;
use std::f64::consts::PI;

use crate::decompose::{clements_split, ClipBound};
use crate::hardware::{HardwareHandle, PhaseRef};
use crate::matrix::{matrix_error, ComplexMat, C64};
use crate::mesh::{TapState, Topology};
use crate::{MeshError, Result};

/// Alternation stops once both phase updates in a sweep fall below this.
const UPDATE_TOL: f64 = 1e-10;

/// Hard cap on alternation sweeps; noiseless tuning needs two or three.
const MAX_SWEEPS: usize = 20;

/// Three merit samples closer than this (relative) mean the knob does not
/// reach the monitored detector at all.
const DEGENERATE_TOL: f64 = 1e-14;

/// Amplitudes below this are too dark to carry a phase reference.
const PHASE_FLOOR: f64 = 1e-15;

const THIRD: f64 = 2.0 * PI / 3.0;

/// A linear combination of physical phase shifters acting as one logical
/// knob. Shifting the knob by `delta` shifts each underlying phase by
/// `coefficient * delta`.
///
/// Single-shifter knobs cover almost every step; compound knobs appear only
/// on the input side of a tapped mesh, where the phase of one arm must be
/// advanced without touching the relative alignment of anything upstream.
#[derive(Debug, Clone)]
pub struct PhaseKnob {
    pub terms: Vec<(PhaseRef, f64)>,
}

impl PhaseKnob {
    pub fn single(phase: PhaseRef) -> PhaseKnob {
        PhaseKnob {
            terms: vec![(phase, 1.0)],
        }
    }

    fn push(&mut self, phase: PhaseRef, coefficient: f64) {
        for term in self.terms.iter_mut() {
            if term.0 == phase {
                term.1 += coefficient;
                if term.1.abs() < 1e-12 {
                    let gone = term.0;
                    self.terms.retain(|t| t.0 != gone);
                }
                return;
            }
        }
        self.terms.push((phase, coefficient));
    }

    fn extend(&mut self, other: &PhaseKnob) {
        for &(phase, coefficient) in &other.terms {
            self.push(phase, coefficient);
        }
    }

    /// Applies `delta` to the hardware (one `set_phase` per term).
    pub fn shift(&self, hw: &mut HardwareHandle, delta: f64) -> Result<()> {
        for &(phase, coefficient) in &self.terms {
            hw.shift_phase(phase, coefficient * delta)?;
        }
        Ok(())
    }
}

/// Builds the knob that advances the phase of the field arriving on `wire`
/// at `column` of the input-side triangle, while leaving the field on every
/// other arm of that triangle unchanged.
///
/// If the wire comes straight from an input port the knob is that port's
/// front phase. If it comes off the bottom arm of an earlier cell the knob
/// is that cell's output phase. If it comes off the top arm, no single
/// shifter reaches it: advancing both of the cell's inputs phases both of
/// its outputs together, and counter-rotating its own output phase then
/// confines the net shift to the top arm. The recursion terminates because
/// columns strictly decrease.
pub fn knob_for_wire(hw: &HardwareHandle, wire: usize, column: usize) -> Result<PhaseKnob> {
    let mut feeder: Option<(usize, usize, usize)> = None;
    for id in 0..hw.crossing_count() {
        if !hw.is_left_cell(id)? {
            continue;
        }
        let g = hw.geometry(id)?;
        if g.column < column && (g.top_wire == wire || g.top_wire + 1 == wire) {
            if feeder.map_or(true, |(c, _, _)| g.column > c) {
                feeder = Some((g.column, g.top_wire, id));
            }
        }
    }
    match feeder {
        None => Ok(PhaseKnob::single(PhaseRef::Input(wire))),
        Some((_, top, id)) if top + 1 == wire => Ok(PhaseKnob::single(PhaseRef::Phi(id))),
        Some((col, top, id)) => {
            let mut knob = knob_for_wire(hw, top, col)?;
            knob.extend(&knob_for_wire(hw, top + 1, col)?);
            knob.push(PhaseRef::Phi(id), -1.0);
            Ok(knob)
        }
    }
}

/// Which detector bank a step watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorBank {
    Outputs,
    Taps,
}

/// The field injected for a step: a single bright port or an arbitrary
/// (unit) vector.
#[derive(Debug, Clone)]
pub enum Probe {
    Port(usize),
    Vector(Vec<C64>),
}

impl Probe {
    fn field(&self, n: usize) -> Result<Vec<C64>> {
        match self {
            Probe::Port(p) => {
                if *p >= n {
                    return Err(MeshError::InvalidParameter(format!(
                        "probe port {} out of range for size {}",
                        p, n
                    )));
                }
                Ok(basis_vector(n, *p))
            }
            Probe::Vector(v) => {
                if v.len() != n {
                    return Err(MeshError::DimensionMismatch(format!(
                        "probe has {} entries, device has {} ports",
                        v.len(),
                        n
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// What a step does once the probe is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Tune the crossing's own theta and phi to maximise the projection of
    /// the output field onto the target column, with `psi_control` toggled
    /// for bypass extraction.
    Ratio,
    /// Fit theta so `|field[output] - bypass|` matches the target element,
    /// then set the element's phase through `psi_control`.
    Direct { output: usize },
    /// Tune theta together with the compound `psi_control` knob to maximise
    /// the monitored tap, using the crossing's own output phase for bypass
    /// extraction.
    Reciprocal,
}

/// One self-configuration step.
#[derive(Debug, Clone)]
pub struct ConfigStep {
    pub crossing_id: usize,
    /// Upstream phase control for ratio and direct steps; the tuned arm
    /// knob for reciprocal steps.
    pub psi_control: PhaseKnob,
    pub probe: Probe,
    /// Column of the target matrix this step works toward. Reciprocal steps
    /// monitor the tap with this index instead.
    pub target_column: usize,
    pub kind: StepKind,
}

/// An ordered list of steps. Execution order is the vector order.
#[derive(Debug, Clone)]
pub struct ConfigPlan {
    pub steps: Vec<ConfigStep>,
}

/// Checks the ordering invariant that makes a plan executable: for ratio
/// and direct steps, every crossing on any light path from the step's
/// crossing to the monitored detectors must have been configured by an
/// earlier step; for reciprocal steps the same must hold for every
/// input-side crossing feeding the step's crossing. A step whose
/// surroundings are still unconfigured would be tuned against fields that
/// later steps change.
pub fn validate_plan(hw: &HardwareHandle, plan: &ConfigPlan) -> Result<()> {
    let count = hw.crossing_count();
    let tapped = hw.topology() == Topology::ClementsTapped;
    let mut cells = Vec::with_capacity(count);
    for id in 0..count {
        cells.push((hw.geometry(id)?, hw.is_left_cell(id)?));
    }
    let mut first_index = vec![usize::MAX; count];
    for (i, step) in plan.steps.iter().enumerate() {
        if step.crossing_id >= count {
            return Err(MeshError::UnknownCrossing(step.crossing_id));
        }
        if first_index[step.crossing_id] == usize::MAX {
            first_index[step.crossing_id] = i;
        }
    }
    for (i, step) in plan.steps.iter().enumerate() {
        let (g, on_input_side) = cells[step.crossing_id];
        let backward = match step.kind {
            StepKind::Ratio | StepKind::Direct { .. } => {
                if tapped && on_input_side {
                    return Err(MeshError::InvalidParameter(format!(
                        "step {} tunes input-side crossing {} against the output detectors",
                        i, step.crossing_id
                    )));
                }
                false
            }
            StepKind::Reciprocal => {
                if !tapped || !on_input_side {
                    return Err(MeshError::InvalidParameter(format!(
                        "step {} is reciprocal but crossing {} has no tap diagonal behind it",
                        i, step.crossing_id
                    )));
                }
                true
            }
        };
        if let StepKind::Direct { output } = step.kind {
            // A direct step pins one element of the target matrix, so the
            // rule differs from the ratio one: every crossing on a light
            // path from the probe port to the monitored output must be
            // configured, but cells the monitored element cannot see may
            // stay untouched.
            let port = match step.probe {
                Probe::Port(p) => p,
                Probe::Vector(_) => {
                    return Err(MeshError::InvalidParameter(format!(
                        "step {} is direct but probes a composite vector",
                        i
                    )))
                }
            };
            if port >= hw.size() || output >= hw.size() {
                return Err(MeshError::InvalidParameter(format!(
                    "step {} addresses port {} or output {} beyond size {}",
                    i,
                    port,
                    output,
                    hw.size()
                )));
            }
            let mut by_column: Vec<(usize, usize)> = (0..count)
                .map(|id| (cells[id].0.column, id))
                .collect();
            by_column.sort();
            let mut forward = vec![false; count];
            let mut wires: HashSet<usize> = HashSet::new();
            wires.insert(port);
            for &(_, id) in &by_column {
                let h = cells[id].0;
                if wires.contains(&h.top_wire) || wires.contains(&(h.top_wire + 1)) {
                    forward[id] = true;
                    wires.insert(h.top_wire);
                    wires.insert(h.top_wire + 1);
                }
            }
            let mut reaches_output = vec![false; count];
            wires.clear();
            wires.insert(output);
            for &(_, id) in by_column.iter().rev() {
                let h = cells[id].0;
                if wires.contains(&h.top_wire) || wires.contains(&(h.top_wire + 1)) {
                    reaches_output[id] = true;
                    wires.insert(h.top_wire);
                    wires.insert(h.top_wire + 1);
                }
            }
            for id in 0..count {
                if id != step.crossing_id
                    && forward[id]
                    && reaches_output[id]
                    && first_index[id] >= i
                {
                    return Err(MeshError::InvalidParameter(format!(
                        "step {} depends on crossing {} which is configured later or never",
                        i, id
                    )));
                }
            }
            continue;
        }
        // Cells the light can traverse between this crossing and the
        // detectors, in traversal order.
        let mut others: Vec<(usize, usize)> = (0..count)
            .filter(|&id| {
                let (h, side) = cells[id];
                side == on_input_side
                    && if backward {
                        h.column < g.column
                    } else {
                        h.column > g.column
                    }
            })
            .map(|id| (cells[id].0.column, id))
            .collect();
        others.sort();
        if backward {
            others.reverse();
        }
        let mut wires: HashSet<usize> = HashSet::new();
        wires.insert(g.top_wire);
        wires.insert(g.top_wire + 1);
        for (_, id) in others {
            let h = cells[id].0;
            if wires.contains(&h.top_wire) || wires.contains(&(h.top_wire + 1)) {
                if first_index[id] >= i {
                    return Err(MeshError::InvalidParameter(format!(
                        "step {} depends on crossing {} which is configured later or never",
                        i, id
                    )));
                }
                wires.insert(h.top_wire);
                wires.insert(h.top_wire + 1);
            }
        }
    }
    Ok(())
}

/// Outcome of one tuning step.
#[derive(Debug, Clone, Copy)]
pub struct TuneResult {
    /// Achieved merit `|<target, field - bypass>|` at the final settings.
    pub merit: f64,
    /// True when theta railed against an end of its range, meaning the
    /// demanded ratio lies outside what the cell's real splitters reach.
    pub clipped: bool,
    /// Which end it railed against, when `clipped`.
    pub clip: Option<ClipBound>,
    /// True when the merit ignored both knobs: no light from this crossing
    /// reaches the monitored detector, so the step was skipped.
    pub decoupled: bool,
    pub measurements_used: usize,
}

/// Aggregate report for a whole configuration run.
#[derive(Debug, Clone)]
pub struct ConfigReport {
    /// Device error before the run (for tapped stages a one-hot tap defect,
    /// otherwise the matrix error against the target).
    pub e_before: f64,
    /// Same metric after the run.
    pub e_after: f64,
    /// Steps railed against the lower reachability bound.
    pub n_unsat: usize,
    /// Steps railed against the upper bound.
    pub n_unsat_upper: usize,
    /// Steps skipped because no light coupled through them.
    pub decoupled: usize,
    pub measurements_used: usize,
    pub phase_sets_used: usize,
    /// Per-stage residuals for multi-stage runs, in execution order.
    pub stage_errors: Vec<(String, f64)>,
}

fn basis_vector(n: usize, k: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); n];
    v[k] = C64::new(1.0, 0.0);
    v
}

fn inner(target: &[C64], field: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (t, f) in target.iter().zip(field.iter()) {
        acc += t.conj() * f;
    }
    acc
}

fn read_bank(
    hw: &mut HardwareHandle,
    probe: &[C64],
    bank: DetectorBank,
    measurements: &mut usize,
) -> Result<Vec<C64>> {
    let reading = hw.measure(probe)?;
    *measurements += 1;
    Ok(match bank {
        DetectorBank::Outputs => reading.outputs,
        DetectorBank::Taps => reading.taps,
    })
}

/// Isolates the part of the detected field that does not pass through the
/// arm controlled by `psi_control`: the controlled part flips sign under a
/// half-turn, so averaging the field at `psi` and `psi + pi` cancels it.
/// Costs exactly two measurements and restores the knob.
pub fn extract_bypass(
    hw: &mut HardwareHandle,
    psi_control: &PhaseKnob,
    input: &[C64],
    bank: DetectorBank,
) -> Result<Vec<C64>> {
    let mut measurements = 0;
    extract_bypass_counted(hw, psi_control, input, bank, &mut measurements)
}

fn extract_bypass_counted(
    hw: &mut HardwareHandle,
    psi_control: &PhaseKnob,
    input: &[C64],
    bank: DetectorBank,
    measurements: &mut usize,
) -> Result<Vec<C64>> {
    let plus = read_bank(hw, input, bank, measurements)?;
    psi_control.shift(hw, PI)?;
    let minus = read_bank(hw, input, bank, measurements)?;
    psi_control.shift(hw, -PI)?;
    Ok(plus
        .iter()
        .zip(minus.iter())
        .map(|(p, m)| (p + m) / 2.0)
        .collect())
}

fn merit_sq_sample(
    hw: &mut HardwareHandle,
    probe: &[C64],
    bank: DetectorBank,
    target: &[C64],
    bypass: &[C64],
    measurements: &mut usize,
) -> Result<f64> {
    let field = read_bank(hw, probe, bank, measurements)?;
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..target.len() {
        acc += target[k].conj() * (field[k] - bypass[k]);
    }
    Ok(acc.norm_sqr())
}

/// Exact three-point fit of `g(d) = c0 + c1 cos d + c2 sin d` from samples
/// at d in {0, 2pi/3, 4pi/3}.
fn sinusoid_coeffs(g: [f64; 3]) -> (f64, f64, f64) {
    let c0 = (g[0] + g[1] + g[2]) / 3.0;
    let c1 = g[0] - c0;
    let c2 = (g[1] - g[2]) / 3.0_f64.sqrt();
    (c0, c1, c2)
}

/// Scans `knob` through offsets {0, 2pi/3, 4pi/3}, fits the squared merit
/// to `c0 + c1 cos d + c2 sin d` (exact for a phase knob), and leaves the
/// knob at the fitted maximum. Returns (update, fitted peak, degenerate).
fn fit_knob_to_peak(
    hw: &mut HardwareHandle,
    knob: &PhaseKnob,
    probe: &[C64],
    bank: DetectorBank,
    target: &[C64],
    bypass: &[C64],
    measurements: &mut usize,
) -> Result<(f64, f64, bool)> {
    let g0 = merit_sq_sample(hw, probe, bank, target, bypass, measurements)?;
    knob.shift(hw, THIRD)?;
    let g1 = merit_sq_sample(hw, probe, bank, target, bypass, measurements)?;
    knob.shift(hw, THIRD)?;
    let g2 = merit_sq_sample(hw, probe, bank, target, bypass, measurements)?;
    let scale = g0.max(g1).max(g2).max(1.0);
    if (g0 - g1).abs() <= DEGENERATE_TOL * scale
        && (g1 - g2).abs() <= DEGENERATE_TOL * scale
        && (g0 - g2).abs() <= DEGENERATE_TOL * scale
    {
        knob.shift(hw, -2.0 * THIRD)?;
        return Ok((0.0, g0, true));
    }
    let (c0, c1, c2) = sinusoid_coeffs([g0, g1, g2]);
    let delta = c2.atan2(c1);
    knob.shift(hw, delta - 2.0 * THIRD)?;
    Ok((delta, c0 + c1.hypot(c2), false))
}

/// Core tuning step: bypass extraction, a closed-form joint solve for
/// theta, one exact phase fit, then alternating three-point fits until both
/// updates fall below `UPDATE_TOL` (one confirmation sweep when noiseless).
/// The merit is `|<target, field - bypass>|` on `bank`.
///
/// The joint solve works because the light through the step's crossing
/// takes exactly two paths to the monitored detectors, and `phase_knob`
/// rides on one of them. A three-point scan of the knob therefore splits
/// the complex merit into a knob-carried and a static component, and the
/// two path powers are exact sinusoids in theta (one rising with cos theta,
/// one falling). Maximizing their aligned sum gives
///
///   cos theta* = (P0 Y^2 - M0 X^2) / (X Y (X + Y))
///
/// with (P0, X) the offset and amplitude of the static-path power and
/// (M0, Y) those of the carried path. A demanded value outside [-1, 1]
/// means the target ratio lies beyond what the cell's real splitters
/// reach; theta rails against that end and the step reports it.
fn tune_pair(
    hw: &mut HardwareHandle,
    theta: PhaseRef,
    phase_knob: &PhaseKnob,
    bypass_knob: &PhaseKnob,
    probe: &[C64],
    bank: DetectorBank,
    target: &[C64],
) -> Result<TuneResult> {
    let mut measurements = 0;
    let bypass = extract_bypass_counted(hw, bypass_knob, probe, bank, &mut measurements)?;
    let proj_bypass = inner(target, &bypass);
    let theta_knob = PhaseKnob::single(theta);
    let theta_start = hw.get_phase(theta)?;

    let omega = C64::from_polar(1.0, -THIRD);
    let mut p_samples = [0.0; 3];
    let mut m_samples = [0.0; 3];
    let mut raw_lo = f64::INFINITY;
    let mut raw_hi = f64::NEG_INFINITY;
    for k in 0..3 {
        if k > 0 {
            theta_knob.shift(hw, THIRD)?;
        }
        let mut v = [C64::new(0.0, 0.0); 3];
        for (j, slot) in v.iter_mut().enumerate() {
            if j > 0 {
                phase_knob.shift(hw, THIRD)?;
            }
            let field = read_bank(hw, probe, bank, &mut measurements)?;
            *slot = inner(target, &field) - proj_bypass;
            raw_lo = raw_lo.min(slot.norm_sqr());
            raw_hi = raw_hi.max(slot.norm_sqr());
        }
        phase_knob.shift(hw, -2.0 * THIRD)?;
        let static_part = (v[0] + v[1] + v[2]) / 3.0;
        let carried_part = (v[0] + v[1] * omega + v[2] * omega * omega) / 3.0;
        p_samples[k] = static_part.norm_sqr();
        m_samples[k] = carried_part.norm_sqr();
    }
    theta_knob.shift(hw, -2.0 * THIRD)?;

    if raw_hi - raw_lo <= DEGENERATE_TOL * raw_hi.max(1.0) {
        return Ok(TuneResult {
            merit: raw_hi.max(0.0).sqrt(),
            clipped: false,
            clip: None,
            decoupled: true,
            measurements_used: measurements,
        });
    }

    let (p0, p1, p2) = sinusoid_coeffs(p_samples);
    let (m0, m1, m2) = sinusoid_coeffs(m_samples);
    let x = p1.hypot(p2);
    let y = m1.hypot(m2);
    let tiny = 1e-12 * x.max(y);
    let mut clip = None;
    let cos_star = if y <= tiny {
        // The carried path does not reach the detectors: all the light
        // belongs on the static one.
        -1.0
    } else if x <= tiny {
        1.0
    } else {
        let c = (p0 * y * y - m0 * x * x) / (x * y * (x + y));
        if c > 1.0 {
            clip = Some(ClipBound::Lower);
        } else if c < -1.0 {
            clip = Some(ClipBound::Upper);
        }
        c.clamp(-1.0, 1.0)
    };
    theta_knob.shift(hw, cos_star.acos() - theta_start)?;

    let (_, mut peak, _) =
        fit_knob_to_peak(hw, phase_knob, probe, bank, target, &bypass, &mut measurements)?;
    for _ in 0..MAX_SWEEPS {
        let (d_theta, p_theta, deg_theta) =
            fit_knob_to_peak(hw, &theta_knob, probe, bank, target, &bypass, &mut measurements)?;
        peak = p_theta;
        if deg_theta {
            break;
        }
        let (d_phase, p_phase, deg_phase) =
            fit_knob_to_peak(hw, phase_knob, probe, bank, target, &bypass, &mut measurements)?;
        peak = p_phase;
        if deg_phase || (d_theta.abs() < UPDATE_TOL && d_phase.abs() < UPDATE_TOL) {
            break;
        }
    }
    Ok(TuneResult {
        merit: peak.max(0.0).sqrt(),
        clipped: clip.is_some(),
        clip,
        decoupled: false,
        measurements_used: measurements,
    })
}

/// Tunes one crossing of a triangular mesh: with `input` injected, maximise
/// `|<uhat_m, field - bypass>|` over the crossing's theta and output phase,
/// toggling `psi_control` to extract the bypass field. Converges in two or
/// three sweeps without detector noise because each fit is exact.
pub fn tune_crossing_ratio(
    hw: &mut HardwareHandle,
    crossing_id: usize,
    psi_control: &PhaseKnob,
    uhat_m: &[C64],
    input: &[C64],
) -> Result<TuneResult> {
    let own_phi = PhaseKnob::single(PhaseRef::Phi(crossing_id));
    tune_pair(
        hw,
        PhaseRef::Theta(crossing_id),
        &own_phi,
        psi_control,
        input,
        DetectorBank::Outputs,
        uhat_m,
    )
}

/// Upstream phase control for crossing (diag, pos) of a triangular mesh:
/// the output phase of the crossing above it on the same diagonal, or the
/// input phase of the diagonal's port for the topmost crossing.
fn reck_psi(hw: &HardwareHandle, diag: usize, pos: usize) -> Result<PhaseKnob> {
    let n = hw.size();
    if pos + 1 <= n - 2 - diag {
        let above = hw.find_crossing(diag, pos + 1).ok_or_else(|| {
            MeshError::InvalidParameter(format!("no crossing at ({}, {})", diag, pos + 1))
        })?;
        Ok(PhaseKnob::single(PhaseRef::Phi(above)))
    } else {
        Ok(PhaseKnob::single(PhaseRef::Input(diag)))
    }
}

fn ensure_square_target(hw: &HardwareHandle, uhat: &ComplexMat) -> Result<()> {
    let n = hw.size();
    if uhat.rows() != n || uhat.cols() != n {
        return Err(MeshError::DimensionMismatch(format!(
            "target is {}x{}, device has {} ports",
            uhat.rows(),
            uhat.cols(),
            n
        )));
    }
    uhat.require_unitary(1e-8 * n as f64)
}

/// Ratio plan for a triangular mesh: diagonals in input order, each walked
/// from its output-adjacent crossing upward, so every step only has already
/// configured crossings between itself and the detectors.
pub fn ratio_plan(hw: &HardwareHandle) -> Result<ConfigPlan> {
    if hw.topology() != Topology::Reck {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    let n = hw.size();
    let mut steps = Vec::new();
    for diag in 0..n - 1 {
        for pos in 0..=n - 2 - diag {
            let id = hw.find_crossing(diag, pos).ok_or_else(|| {
                MeshError::InvalidParameter(format!("no crossing at ({}, {})", diag, pos))
            })?;
            steps.push(ConfigStep {
                crossing_id: id,
                psi_control: reck_psi(hw, diag, pos)?,
                probe: Probe::Port(diag),
                target_column: diag,
                kind: StepKind::Ratio,
            });
        }
    }
    Ok(ConfigPlan { steps })
}

/// Direct plan for a triangular mesh: same diagonals, but walked top-down
/// (the order the light meets the crossings), each step pinning one output
/// amplitude.
pub fn direct_plan(hw: &HardwareHandle) -> Result<ConfigPlan> {
    if hw.topology() != Topology::Reck {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    let n = hw.size();
    let mut steps = Vec::new();
    for diag in 0..n - 1 {
        for pos in (0..=n - 2 - diag).rev() {
            let id = hw.find_crossing(diag, pos).ok_or_else(|| {
                MeshError::InvalidParameter(format!("no crossing at ({}, {})", diag, pos))
            })?;
            // The crossing's top exit threads through already configured
            // diagonals to this output; light still inside the current
            // diagonal can never fold back onto it.
            steps.push(ConfigStep {
                crossing_id: id,
                psi_control: reck_psi(hw, diag, pos)?,
                probe: Probe::Port(diag),
                target_column: diag,
                kind: StepKind::Direct {
                    output: n - 2 - diag - pos,
                },
            });
        }
    }
    Ok(ConfigPlan { steps })
}

/// Input-side chains of a tapped mesh. Cell (column, wire) belongs to chain
/// `(n - column + wire) / 2`: under the chain's probe its top output goes
/// dark when the mesh is configured, so the whole chain funnels that probe
/// onto one tap. Chains are keyed by the tap they feed.
fn reciprocal_chain_of(n: usize, column: usize, top_wire: usize) -> usize {
    (n - column + top_wire) / 2
}

/// Reciprocal plan for the input side of a tapped mesh: chains in
/// descending tap order, each chain from its head (smallest column) down,
/// so the fields arriving at every step are already final.
pub fn reciprocal_plan(hw: &HardwareHandle, u1hat: &ComplexMat) -> Result<ConfigPlan> {
    if hw.topology() != Topology::ClementsTapped {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    let n = hw.size();
    let mut chains: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for id in 0..hw.crossing_count() {
        if hw.is_left_cell(id)? {
            let g = hw.geometry(id)?;
            chains[reciprocal_chain_of(n, g.column, g.top_wire)].push((g.column, id));
        }
    }
    let mut steps = Vec::new();
    for m in (1..n).rev() {
        chains[m].sort();
        let probe: Vec<C64> = (0..n).map(|k| u1hat.at(m, k).conj()).collect();
        for &(column, id) in &chains[m] {
            let g = hw.geometry(id)?;
            steps.push(ConfigStep {
                crossing_id: id,
                psi_control: knob_for_wire(hw, g.top_wire, column)?,
                probe: Probe::Vector(probe.clone()),
                target_column: m,
                kind: StepKind::Reciprocal,
            });
        }
    }
    Ok(ConfigPlan { steps })
}

/// Output-side chains of a tapped mesh, keyed by the tap whose light they
/// collect. Chain `d` starts at the first output-side cell whose top wire
/// is `d` and follows each cell's bottom output to the next.
fn right_chains(hw: &HardwareHandle) -> Result<Vec<Vec<usize>>> {
    let n = hw.size();
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for id in 0..hw.crossing_count() {
        if !hw.is_left_cell(id)? {
            let g = hw.geometry(id)?;
            cells.push((g.column, g.top_wire, id));
        }
    }
    cells.sort();
    let mut claimed: HashSet<usize> = HashSet::new();
    let mut chains = vec![Vec::new(); n];
    for d in 0..n {
        let mut wire = d;
        let mut cursor = 0;
        loop {
            let next = cells
                .iter()
                .find(|&&(c, w, id)| c >= cursor && w == wire && !claimed.contains(&id));
            match next {
                Some(&(c, _, id)) => {
                    chains[d].push(id);
                    claimed.insert(id);
                    wire += 1;
                    cursor = c + 1;
                }
                None => break,
            }
        }
    }
    debug_assert_eq!(claimed.len(), cells.len());
    Ok(chains)
}

fn accumulate(report: &mut ConfigReport, tune: &TuneResult) {
    match tune.clip {
        Some(ClipBound::Lower) => report.n_unsat += 1,
        Some(ClipBound::Upper) => report.n_unsat_upper += 1,
        None => {}
    }
    if tune.decoupled {
        report.decoupled += 1;
    }
}

fn empty_report() -> ConfigReport {
    ConfigReport {
        e_before: 0.0,
        e_after: 0.0,
        n_unsat: 0,
        n_unsat_upper: 0,
        decoupled: 0,
        measurements_used: 0,
        phase_sets_used: 0,
        stage_errors: Vec::new(),
    }
}

/// Aligns the target column's global phase: one measurement of the probe,
/// then one shift of `knob` so that `<target, field>` becomes real positive.
fn align_column_phase(
    hw: &mut HardwareHandle,
    knob: PhaseRef,
    target: &[C64],
    probe: &[C64],
    bank: DetectorBank,
) -> Result<()> {
    let mut measurements = 0;
    let field = read_bank(hw, probe, bank, &mut measurements)?;
    let overlap = inner(target, &field);
    if overlap.norm() > PHASE_FLOOR {
        hw.shift_phase(knob, -overlap.arg())?;
    }
    Ok(())
}

/// Programs a triangular mesh against `uhat` by ratio tuning, column by
/// column. Needs no knowledge of the splitter offsets; with exact detectors
/// the result matches the error-aware decomposition of the same hardware.
pub fn configure_ratio(hw: &mut HardwareHandle, uhat: &ComplexMat) -> Result<ConfigReport> {
    if hw.topology() != Topology::Reck {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    ensure_square_target(hw, uhat)?;
    let n = hw.size();
    let mut report = empty_report();
    report.e_before = matrix_error(&hw.hidden_unitary(), uhat)?;
    let meas0 = hw.measurements();
    let sets0 = hw.phase_sets();
    let plan = ratio_plan(hw)?;
    debug_assert!(validate_plan(hw, &plan).is_ok());
    let mut next = 0;
    for diag in 0..n - 1 {
        let probe = basis_vector(n, diag);
        let target = uhat.column(diag);
        for _ in 0..=n - 2 - diag {
            let step = &plan.steps[next];
            next += 1;
            let tune = tune_crossing_ratio(hw, step.crossing_id, &step.psi_control, &target, &probe)?;
            accumulate(&mut report, &tune);
        }
        align_column_phase(
            hw,
            PhaseRef::Input(diag),
            &target,
            &probe,
            DetectorBank::Outputs,
        )?;
    }
    align_column_phase(
        hw,
        PhaseRef::Input(n - 1),
        &uhat.column(n - 1),
        &basis_vector(n, n - 1),
        DetectorBank::Outputs,
    )?;
    report.e_after = matrix_error(&hw.hidden_unitary(), uhat)?;
    report.measurements_used = hw.measurements() - meas0;
    report.phase_sets_used = hw.phase_sets() - sets0;
    Ok(report)
}

/// One direct step: match `|field[output] - bypass|` to `|target - bypass|`
/// with a single three-point theta fit (clipping to the nearest reachable
/// amplitude), then rotate the element's phase into place via `psi`.
fn direct_step(
    hw: &mut HardwareHandle,
    crossing_id: usize,
    psi: &PhaseKnob,
    target: C64,
    output: usize,
    probe: &[C64],
) -> Result<TuneResult> {
    let mut measurements = 0;
    let bypass =
        extract_bypass_counted(hw, psi, probe, DetectorBank::Outputs, &mut measurements)?;
    let a = bypass[output];
    let sample = |hw: &mut HardwareHandle, m: &mut usize| -> Result<f64> {
        let field = read_bank(hw, probe, DetectorBank::Outputs, m)?;
        Ok((field[output] - a).norm_sqr())
    };
    let theta_knob = PhaseKnob::single(PhaseRef::Theta(crossing_id));
    let g0 = sample(hw, &mut measurements)?;
    theta_knob.shift(hw, THIRD)?;
    let g1 = sample(hw, &mut measurements)?;
    theta_knob.shift(hw, THIRD)?;
    let g2 = sample(hw, &mut measurements)?;
    let scale = g0.max(g1).max(g2).max(1.0);
    if (g0 - g1).abs() <= DEGENERATE_TOL * scale
        && (g1 - g2).abs() <= DEGENERATE_TOL * scale
        && (g0 - g2).abs() <= DEGENERATE_TOL * scale
    {
        theta_knob.shift(hw, -2.0 * THIRD)?;
        return Ok(TuneResult {
            merit: g0.sqrt(),
            clipped: false,
            clip: None,
            decoupled: true,
            measurements_used: measurements,
        });
    }
    let c0 = (g0 + g1 + g2) / 3.0;
    let c1 = g0 - c0;
    let c2 = (g1 - g2) / 3.0_f64.sqrt();
    let radius = c1.hypot(c2);
    let delta_peak = c2.atan2(c1);
    let wanted = (target - a).norm_sqr();
    let x = (wanted - c0) / radius;
    let clip = if x > 1.0 {
        Some(ClipBound::Upper)
    } else if x < -1.0 {
        Some(ClipBound::Lower)
    } else {
        None
    };
    // Of the two theta values reaching the wanted amplitude, take the one
    // on the near side of the peak; clipping collapses both onto an end.
    let delta = delta_peak - x.clamp(-1.0, 1.0).acos();
    theta_knob.shift(hw, delta - 2.0 * THIRD)?;
    // Phase of the element through the upstream control.
    let field = read_bank(hw, probe, DetectorBank::Outputs, &mut measurements)?;
    let have = field[output] - a;
    let want = target - a;
    if have.norm() > PHASE_FLOOR && want.norm() > PHASE_FLOOR {
        psi.shift(hw, want.arg() - have.arg())?;
    }
    Ok(TuneResult {
        merit: have.norm(),
        clipped: clip.is_some(),
        clip,
        decoupled: false,
        measurements_used: measurements,
    })
}

/// Rotates the light carried by `knob` so one output element lands on
/// `want`. The element is bypass + carried, and only the carried part
/// turns with the knob, so the bypass has to come out first; a rigid
/// `want - have` rotation of the total would miss.
fn pin_element_phase(
    hw: &mut HardwareHandle,
    knob: &PhaseKnob,
    probe: &[C64],
    output: usize,
    want: C64,
) -> Result<()> {
    let bypass = extract_bypass(hw, knob, probe, DetectorBank::Outputs)?;
    let mut measurements = 0;
    let field = read_bank(hw, probe, DetectorBank::Outputs, &mut measurements)?;
    let have = field[output] - bypass[output];
    let target = want - bypass[output];
    if have.norm() > PHASE_FLOOR && target.norm() > PHASE_FLOOR {
        knob.shift(hw, target.arg() - have.arg())?;
    }
    Ok(())
}

/// Programs a triangular mesh against `uhat` by matching one output
/// amplitude per crossing, in the order the light meets them. Cheaper per
/// step than ratio tuning (no alternation) and provably no-disturbance:
/// once an element is set, later steps never move light on its output.
/// Errors that would have been absorbed upstream pile up toward the last
/// rows and columns instead of being corrected.
pub fn configure_direct(hw: &mut HardwareHandle, uhat: &ComplexMat) -> Result<ConfigReport> {
    if hw.topology() != Topology::Reck {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    ensure_square_target(hw, uhat)?;
    let n = hw.size();
    let mut report = empty_report();
    report.e_before = matrix_error(&hw.hidden_unitary(), uhat)?;
    let meas0 = hw.measurements();
    let sets0 = hw.phase_sets();
    let plan = direct_plan(hw)?;
    debug_assert!(validate_plan(hw, &plan).is_ok());
    let mut next = 0;
    for diag in 0..n - 1 {
        let probe = basis_vector(n, diag);
        for _ in 0..=n - 2 - diag {
            let step = &plan.steps[next];
            next += 1;
            let output = match step.kind {
                StepKind::Direct { output } => output,
                _ => unreachable!(),
            };
            let tune = direct_step(
                hw,
                step.crossing_id,
                &step.psi_control,
                uhat.at(output, diag),
                output,
                &probe,
            )?;
            accumulate(&mut report, &tune);
        }
        // The bottom output's amplitude is fixed by unitarity; its phase
        // rides on the output phase of the diagonal's last crossing.
        let base = plan.steps[next - 1].crossing_id;
        pin_element_phase(
            hw,
            &PhaseKnob::single(PhaseRef::Phi(base)),
            &probe,
            n - 1,
            uhat.at(n - 1, diag),
        )?;
    }
    align_column_phase(
        hw,
        PhaseRef::Input(n - 1),
        &uhat.column(n - 1),
        &basis_vector(n, n - 1),
        DetectorBank::Outputs,
    )?;
    report.e_after = matrix_error(&hw.hidden_unitary(), uhat)?;
    report.measurements_used = hw.measurements() - meas0;
    report.phase_sets_used = hw.phase_sets() - sets0;
    Ok(report)
}

/// One-hot defect of the input-side stage: for each tap `m`, inject the
/// probe that should funnel onto it and add up the stray light on the other
/// taps plus the shortfall on its own. Gauge-free (tap phases don't count).
fn reciprocal_defect(hw: &mut HardwareHandle, u1hat: &ComplexMat) -> Result<f64> {
    let n = hw.size();
    let mut total = 0.0;
    for m in 0..n {
        let probe: Vec<C64> = (0..n).map(|k| u1hat.at(m, k).conj()).collect();
        let mut measurements = 0;
        let taps = read_bank(hw, &probe, DetectorBank::Taps, &mut measurements)?;
        for (k, t) in taps.iter().enumerate() {
            if k == m {
                total += (1.0 - t.norm()).powi(2);
            } else {
                total += t.norm_sqr();
            }
        }
    }
    Ok(total.sqrt())
}

/// Programs the input side of a tapped mesh so that the probe field for
/// each tap arrives on that tap alone. Driven entirely from the device
/// inputs: each step maximises the monitored tap over the crossing's theta
/// and the compound knob on its top input arm, with the crossing's own
/// output phase toggled for bypass extraction. Expects (and sets) all taps
/// facing the detectors; `e_before`/`e_after` report the one-hot defect.
pub fn configure_reciprocal(hw: &mut HardwareHandle, u1hat: &ComplexMat) -> Result<ConfigReport> {
    if hw.topology() != Topology::ClementsTapped {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    ensure_square_target(hw, u1hat)?;
    let n = hw.size();
    for wire in 0..n {
        hw.set_tap_state(wire, TapState::ToDetector)?;
    }
    let mut report = empty_report();
    report.e_before = reciprocal_defect(hw, u1hat)?;
    let meas0 = hw.measurements();
    let sets0 = hw.phase_sets();
    let plan = reciprocal_plan(hw, u1hat)?;
    debug_assert!(validate_plan(hw, &plan).is_ok());
    for step in &plan.steps {
        let probe = step.probe.field(n)?;
        let target = basis_vector(n, step.target_column);
        let own_phi = PhaseKnob::single(PhaseRef::Phi(step.crossing_id));
        let tune = tune_pair(
            hw,
            PhaseRef::Theta(step.crossing_id),
            &step.psi_control,
            &own_phi,
            &probe,
            DetectorBank::Taps,
            &target,
        )?;
        accumulate(&mut report, &tune);
    }
    report.e_after = reciprocal_defect(hw, u1hat)?;
    report.measurements_used = hw.measurements() - meas0;
    report.phase_sets_used = hw.phase_sets() - sets0;
    Ok(report)
}

/// Programs a tapped rectangular mesh against `uhat` in two stages. The
/// target is factored into an input-side triangle, a diagonal of phases,
/// and an output-side triangle. The input side is configured through the
/// taps by [`configure_reciprocal`]; the output side is then configured
/// like a triangular mesh, one tap at a time: with only tap `d` passing
/// light, the input-side probe for `d` feeds exactly that tap's chain of
/// output-side cells, and ratio steps steer it onto the target's column.
/// The mid-mesh phase of each tap wire absorbs both the factored diagonal
/// and the stray phase left by the input stage.
pub fn configure_clements(hw: &mut HardwareHandle, uhat: &ComplexMat) -> Result<ConfigReport> {
    if hw.topology() != Topology::ClementsTapped {
        return Err(MeshError::UnsupportedTopology(hw.topology()));
    }
    ensure_square_target(hw, uhat)?;
    let n = hw.size();
    for wire in 0..n {
        hw.set_tap_state(wire, TapState::Through)?;
    }
    let mut report = empty_report();
    report.e_before = matrix_error(&hw.hidden_unitary(), uhat)?;
    let meas0 = hw.measurements();
    let sets0 = hw.phase_sets();
    let split = clements_split(uhat)?;

    let left = configure_reciprocal(hw, &split.u1)?;
    report.n_unsat += left.n_unsat;
    report.n_unsat_upper += left.n_unsat_upper;
    report.decoupled += left.decoupled;
    report
        .stage_errors
        .push(("input triangle".into(), left.e_after));

    let chains = right_chains(hw)?;
    let mut right_defect_sq = 0.0;
    for d in 0..n {
        for wire in 0..n {
            let state = if wire == d {
                TapState::Through
            } else {
                TapState::ToDetector
            };
            hw.set_tap_state(wire, state)?;
        }
        let probe: Vec<C64> = (0..n).map(|k| split.u1.at(d, k).conj()).collect();
        let lam = C64::from_polar(1.0, split.diag_phases[d]);
        let target: Vec<C64> = split.u2.column(d).iter().map(|v| v * lam).collect();
        for (k, &id) in chains[d].iter().enumerate().rev() {
            let psi = if k == 0 {
                PhaseKnob::single(PhaseRef::Diag(d))
            } else {
                PhaseKnob::single(PhaseRef::Phi(chains[d][k - 1]))
            };
            let tune = tune_crossing_ratio(hw, id, &psi, &target, &probe)?;
            accumulate(&mut report, &tune);
        }
        align_column_phase(hw, PhaseRef::Diag(d), &target, &probe, DetectorBank::Outputs)?;
        let mut measurements = 0;
        let field = read_bank(hw, &probe, DetectorBank::Outputs, &mut measurements)?;
        right_defect_sq += field
            .iter()
            .zip(target.iter())
            .map(|(f, t)| (f - t).norm_sqr())
            .sum::<f64>();
    }
    report
        .stage_errors
        .push(("output triangle".into(), right_defect_sq.sqrt()));

    for wire in 0..n {
        hw.set_tap_state(wire, TapState::Through)?;
    }
    report.e_after = matrix_error(&hw.hidden_unitary(), uhat)?;
    report.measurements_used = hw.measurements() - meas0;
    report.phase_sets_used = hw.phase_sets() - sets0;
    Ok(report)
}
