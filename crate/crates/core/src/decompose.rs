//! Ideal decomposition of a target unitary into mesh phases.
//!
//! Two routes are provided. The triangular layout uses the classic nulling
//! scheme: peel cells off the output side one at a time, each chosen so that
//! applying its adjoint zeroes one below-diagonal element, until only a
//! diagonal phase mask remains. The rectangular layout is first split
//! abstractly into `U2 * diag * U1` with elementary Givens rotations
//! (input-side operations accumulate into U1, output-side into U2); each
//! triangular factor is then realized on the physical cells separately.
//!
//! The null-step solvers accept per-cell splitter errors so the white-box
//! corrected decomposition can reuse them; with zero errors they reduce to
//! the ideal formulas. Every solver clamps an out-of-range cosine and flags
//! which bound was hit.

use std::f64::consts::FRAC_PI_4;

use crate::matrix::{block_dagger, Block2, ComplexMat, C64};
use crate::mesh::{clements_plan, transfer_block, wrap_angle, ClementsOp, Mesh};
use crate::{MeshError, Result};

const ZERO_TOL: f64 = 1e-14;
const CLAMP_SLACK: f64 = 1e-12;

/// Which reachability bound a clipped step hit: `Lower` means the step wanted
/// a smaller effective splitting angle than the cell can produce (the
/// dominant case), `Upper` the opposite extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipBound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NullSolution {
    pub theta: f64,
    pub phi: f64,
    pub clip: Option<ClipBound>,
}

struct SplitterCoeffs {
    a: f64,
    b: f64,
    c: f64,
    sa: f64,
    ca: f64,
    sb: f64,
    cb: f64,
}

fn coeffs(alpha: f64, beta: f64) -> SplitterCoeffs {
    let (sa, ca) = (FRAC_PI_4 + alpha).sin_cos();
    let (sb, cb) = (FRAC_PI_4 + beta).sin_cos();
    SplitterCoeffs {
        a: sa * sa * cb * cb + ca * ca * sb * sb,
        b: 2.0 * sa * ca * sb * cb,
        c: ca * ca * cb * cb + sa * sa * sb * sb,
        sa,
        ca,
        sb,
        cb,
    }
}

/// Solves `cos(theta)` from `num / den`, clamping and flagging bound hits.
fn theta_from_cos(num: f64, den: f64) -> (f64, Option<ClipBound>) {
    let raw = num / den;
    let clip = if raw > 1.0 + CLAMP_SLACK {
        Some(ClipBound::Lower)
    } else if raw < -1.0 - CLAMP_SLACK {
        Some(ClipBound::Upper)
    } else {
        None
    };
    (raw.clamp(-1.0, 1.0).acos(), clip)
}

fn phase_or_zero(w: C64) -> f64 {
    if w.norm_sqr() == 0.0 || !w.re.is_finite() || !w.im.is_finite() {
        0.0
    } else {
        w.arg()
    }
}

/// Chooses (theta, phi) so that applying the cell adjoint to rows (top, bot)
/// zeroes the bottom-row element: `conj(T12) x + conj(T22) y = 0` with
/// `x` the top element and `y` the bottom (target) element.
pub(crate) fn solve_bot_row_null(x: C64, y: C64, alpha: f64, beta: f64) -> NullSolution {
    let k = coeffs(alpha, beta);
    let (p, q) = (x.norm_sqr(), y.norm_sqr());
    if p + q < ZERO_TOL * ZERO_TOL {
        return NullSolution {
            theta: std::f64::consts::PI,
            phi: 0.0,
            clip: None,
        };
    }
    let (theta, clip) = theta_from_cos(k.c * q - k.a * p, k.b * (p + q));
    let et = C64::from_polar(1.0, theta);
    let g12 = k.sa * k.cb * et + C64::new(k.ca * k.sb, 0.0);
    let g22 = C64::new(k.ca * k.cb, 0.0) - k.sa * k.sb * et;
    // conj(i g12) x = -e^{-i phi} conj(g22) y, solved for the phase.
    let w = C64::new(0.0, 1.0) * g12.conj() * x * (g22.conj() * y).conj();
    NullSolution {
        theta,
        phi: wrap_angle(-phase_or_zero(w)),
        clip,
    }
}

/// Chooses (theta, phi) so that applying the cell adjoint to rows (top, bot)
/// zeroes the top-row element: `conj(T11) x + conj(T21) y = 0`.
pub(crate) fn solve_top_row_null(x: C64, y: C64, alpha: f64, beta: f64) -> NullSolution {
    let k = coeffs(alpha, beta);
    let (p, q) = (x.norm_sqr(), y.norm_sqr());
    if p + q < ZERO_TOL * ZERO_TOL {
        return NullSolution {
            theta: std::f64::consts::PI,
            phi: 0.0,
            clip: None,
        };
    }
    let (theta, clip) = theta_from_cos(k.c * p - k.a * q, k.b * (p + q));
    let et = C64::from_polar(1.0, theta);
    let g11 = k.ca * k.cb * et - C64::new(k.sa * k.sb, 0.0);
    let g21 = k.ca * k.sb * et + C64::new(k.sa * k.cb, 0.0);
    let w = g11.conj() * x * (C64::new(0.0, 1.0) * g21.conj() * y).conj();
    NullSolution {
        theta,
        phi: wrap_angle(-phase_or_zero(w)),
        clip,
    }
}

/// Chooses (theta, phi) so that right-multiplying by the cell zeroes the
/// left-column element of the given row pair: `x T11 + y T21 = 0`.
pub(crate) fn solve_left_col_null(x: C64, y: C64, alpha: f64, beta: f64) -> NullSolution {
    let k = coeffs(alpha, beta);
    let (p, q) = (x.norm_sqr(), y.norm_sqr());
    if p + q < ZERO_TOL * ZERO_TOL {
        return NullSolution {
            theta: std::f64::consts::PI,
            phi: 0.0,
            clip: None,
        };
    }
    let (theta, clip) = theta_from_cos(k.c * p - k.a * q, k.b * (p + q));
    let et = C64::from_polar(1.0, theta);
    let g11 = k.ca * k.cb * et - C64::new(k.sa * k.sb, 0.0);
    let g21 = k.ca * k.sb * et + C64::new(k.sa * k.cb, 0.0);
    // x g11 = -i e^{i phi} g21 y  =>  e^{i phi} = i x g11 / (y g21).
    let w = C64::new(0.0, 1.0) * x * g11 * (y * g21).conj();
    NullSolution {
        theta,
        phi: wrap_angle(phase_or_zero(w)),
        clip,
    }
}

/// Chooses (theta, phi) so that right-multiplying by the cell zeroes the
/// right-column element of the given row pair: `x T12 + y T22 = 0`.
pub(crate) fn solve_right_col_null(x: C64, y: C64, alpha: f64, beta: f64) -> NullSolution {
    let k = coeffs(alpha, beta);
    let (p, q) = (x.norm_sqr(), y.norm_sqr());
    if p + q < ZERO_TOL * ZERO_TOL {
        return NullSolution {
            theta: std::f64::consts::PI,
            phi: 0.0,
            clip: None,
        };
    }
    let (theta, clip) = theta_from_cos(k.c * q - k.a * p, k.b * (p + q));
    let et = C64::from_polar(1.0, theta);
    let g12 = k.sa * k.cb * et + C64::new(k.ca * k.sb, 0.0);
    let g22 = C64::new(k.ca * k.cb, 0.0) - k.sa * k.sb * et;
    // x i g12 = -e^{i phi} g22 y.
    let w = -C64::new(0.0, 1.0) * x * g12 * (y * g22).conj();
    NullSolution {
        theta,
        phi: wrap_angle(phase_or_zero(w)),
        clip,
    }
}

/// Decomposes a unitary onto the triangular layout with ideal cells.
///
/// Cells are solved in falling-diagonal order, output side first; diagonal m
/// zeroes the below-diagonal entries of column m from the bottom wire upward.
/// The leftover diagonal becomes the input phase mask.
pub fn reck_decompose(uhat: &ComplexMat) -> Result<Mesh> {
    let n = uhat.rows();
    if uhat.cols() != n {
        return Err(MeshError::DimensionMismatch(
            "decomposition needs a square matrix".into(),
        ));
    }
    uhat.require_unitary(1e-8 * n as f64)?;
    let mut mesh = Mesh::new_reck(n)?;
    let mut v = uhat.clone();
    for m in 0..n - 1 {
        for pos in 0..n - 1 - m {
            let top = n - 2 - pos;
            let x = v.at(top, m);
            let y = v.at(top + 1, m);
            let sol = if y.norm() < ZERO_TOL {
                NullSolution {
                    theta: std::f64::consts::PI,
                    phi: 0.0,
                    clip: None,
                }
            } else {
                solve_bot_row_null(x, y, 0.0, 0.0)
            };
            let id = mesh
                .find_crossing(m, pos)
                .expect("triangular layout contains every (diag, pos) pair");
            mesh.set_theta(id, sol.theta)?;
            mesh.set_phi(id, sol.phi)?;
            let t = transfer_block(sol.theta, sol.phi, 0.0, 0.0);
            v.left_apply_block(top, &block_dagger(&t));
        }
    }
    for kx in 0..n {
        mesh.set_input_phase(kx, v.at(kx, kx).arg())?;
    }
    Ok(mesh)
}

/// Abstract two-triangle factorization of a unitary: `U = U2 * diag * U1`
/// where U1 collects the input-side elementary rotations and U2 the
/// output-side ones. Both factors carry structural zeros (roughly a quarter
/// of the entries below the diagonal each, on opposite corners).
#[derive(Debug, Clone)]
pub struct ClementsSplit {
    pub u1: ComplexMat,
    pub u2: ComplexMat,
    pub diag_phases: Vec<f64>,
}

fn givens_for_zero(a: C64, b: C64) -> Block2 {
    // [[cos, -sin e^{i lam}], [sin e^{-i lam}, cos]] with
    // a cos + b sin e^{-i lam} = 0.
    if a.norm() < ZERO_TOL {
        return crate::matrix::block_identity();
    }
    let psi = a.norm().atan2(b.norm());
    let (s, c) = psi.sin_cos();
    let lam = if b.norm() == 0.0 {
        0.0
    } else {
        -(-a * b.conj()).arg()
    };
    let e = C64::from_polar(1.0, lam);
    [[C64::new(c, 0.0), -s * e], [s * e.conj(), C64::new(c, 0.0)]]
}

/// Splits a unitary along the rectangular layout's nulling schedule.
pub fn clements_split(uhat: &ComplexMat) -> Result<ClementsSplit> {
    let n = uhat.rows();
    if uhat.cols() != n {
        return Err(MeshError::DimensionMismatch(
            "decomposition needs a square matrix".into(),
        ));
    }
    uhat.require_unitary(1e-8 * n as f64)?;
    let mut v = uhat.clone();
    let mut u1 = ComplexMat::identity(n);
    let mut u2 = ComplexMat::identity(n);
    for op in clements_plan(n) {
        if op.row_op {
            let w = op.target_row - 1;
            let h = fix_row_block(v.at(w, op.target_col), v.at(op.target_row, op.target_col));
            v.left_apply_block(w, &h);
            u2.right_apply_block(w, &block_dagger(&h));
        } else {
            let c = op.target_col;
            let g = fix_col_block(v.at(op.target_row, c), v.at(op.target_row, c + 1));
            v.right_apply_block(c, &g);
            u1.left_apply_block(c, &block_dagger(&g));
        }
    }
    let diag_phases = (0..n).map(|k| v.at(k, k).arg()).collect();
    Ok(ClementsSplit { u1, u2, diag_phases })
}

/// Unitary 2x2 block G with `a G[0][0] + b G[1][0] = 0` (column form).
fn fix_col_block(a: C64, b: C64) -> Block2 {
    givens_for_zero(a, b)
}

/// Unitary 2x2 block H with `H[1][0] x + H[1][1] y = 0` (row form), where
/// x is the top element and y the bottom (target).
fn fix_row_block(x: C64, y: C64) -> Block2 {
    if y.norm() < ZERO_TOL {
        return crate::matrix::block_identity();
    }
    let psi = y.norm().atan2(x.norm());
    let (s, c) = psi.sin_cos();
    let lam = if x.norm() == 0.0 {
        0.0
    } else {
        -(-y * x.conj()).arg()
    };
    let e = C64::from_polar(1.0, lam);
    [[C64::new(c, 0.0), -s * e], [s * e.conj(), C64::new(c, 0.0)]]
}

/// One physical-realization step for a triangle of the rectangular layout.
#[derive(Debug, Clone)]
pub(crate) struct RealizeStep {
    pub column: usize,
    pub top_wire: usize,
    /// Entries expected to vanish in the primary lane (column `top_wire` for
    /// the input triangle, row `top_wire` for the output one).
    pub primary: Vec<usize>,
    /// Entries that vanish automatically in the partner lane; tracked for
    /// residual accounting and used as fallback targets.
    pub secondary: Vec<usize>,
}

/// Steps realizing U1 on the input-side cells: process tap-adjacent cells
/// first, right-multiplying `W = U1^dagger` by each full cell block until
/// only the input phase mask remains.
pub(crate) fn left_realize_steps(n: usize) -> Vec<RealizeStep> {
    let ops: Vec<ClementsOp> = clements_plan(n).into_iter().filter(|o| !o.row_op).collect();
    let mut patterns: Vec<Vec<Vec<bool>>> = Vec::with_capacity(ops.len() + 1);
    let mut p: Vec<Vec<bool>> = (0..n).map(|r| (0..n).map(|c| r == c).collect()).collect();
    patterns.push(p.clone());
    for op in &ops {
        let w = op.top_wire;
        for r in 0..n {
            let u = p[r][w] || p[r][w + 1];
            p[r][w] = u;
            p[r][w + 1] = u;
        }
        patterns.push(p.clone());
    }
    let mut steps = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate().rev() {
        let w = op.top_wire;
        let primary = (0..n)
            .filter(|&r| patterns[i + 1][r][w] && !patterns[i][r][w])
            .collect();
        let secondary = (0..n)
            .filter(|&r| patterns[i + 1][r][w + 1] && !patterns[i][r][w + 1])
            .collect();
        steps.push(RealizeStep {
            column: op.slot_column,
            top_wire: w,
            primary,
            secondary,
        });
    }
    steps
}

/// Steps realizing U2 on the output-side cells: process output-adjacent cells
/// first, applying cell adjoints from the left until a diagonal remains.
pub(crate) fn right_realize_steps(n: usize) -> Vec<RealizeStep> {
    let ops: Vec<ClementsOp> = clements_plan(n).into_iter().filter(|o| o.row_op).collect();
    // Suffix patterns of the adjoint product the remaining cells must form.
    let mut patterns: Vec<Vec<Vec<bool>>> = vec![Vec::new(); ops.len() + 1];
    let mut p: Vec<Vec<bool>> = (0..n).map(|r| (0..n).map(|c| r == c).collect()).collect();
    patterns[ops.len()] = p.clone();
    for (i, op) in ops.iter().enumerate().rev() {
        let w = op.top_wire;
        for c in 0..n {
            let u = p[w][c] || p[w + 1][c];
            p[w][c] = u;
            p[w + 1][c] = u;
        }
        patterns[i] = p.clone();
    }
    let mut steps = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        let w = op.top_wire;
        let primary = (0..n)
            .filter(|&c| patterns[i][w][c] && !patterns[i + 1][w][c])
            .collect();
        let secondary = (0..n)
            .filter(|&c| patterns[i][w + 1][c] && !patterns[i + 1][w + 1][c])
            .collect();
        steps.push(RealizeStep {
            column: op.slot_column,
            top_wire: w,
            primary,
            secondary,
        });
    }
    steps
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RealizeOutcome {
    pub clip_lower: usize,
    pub clip_upper: usize,
    /// Squared field left behind at entries scheduled to vanish, accumulated
    /// step by step.
    pub residual_sq: f64,
}

impl RealizeOutcome {
    fn absorb(&mut self, clip: Option<ClipBound>) {
        match clip {
            Some(ClipBound::Lower) => self.clip_lower += 1,
            Some(ClipBound::Upper) => self.clip_upper += 1,
            None => {}
        }
    }
}

/// Programs the input-side triangle of `mesh` (cells and input phase mask) to
/// realize `u1`, using each cell's own splitter errors in the step solves.
pub(crate) fn realize_left_triangle(mesh: &mut Mesh, u1: &ComplexMat) -> Result<RealizeOutcome> {
    let n = mesh.size();
    let mut w = u1.dagger();
    let mut outcome = RealizeOutcome::default();
    for step in left_realize_steps(n) {
        let wire = step.top_wire;
        let id = mesh
            .find_cell(step.column, wire)
            .expect("realization schedule matches the grid");
        let (alpha, beta) = {
            let c = mesh.crossing(id)?;
            (c.alpha, c.beta)
        };
        let sol = if let Some(&r) = step
            .primary
            .iter()
            .max_by(|&&a, &&b| {
                let na = w.at(a, wire).norm_sqr() + w.at(a, wire + 1).norm_sqr();
                let nb = w.at(b, wire).norm_sqr() + w.at(b, wire + 1).norm_sqr();
                na.partial_cmp(&nb).unwrap()
            })
        {
            solve_left_col_null(w.at(r, wire), w.at(r, wire + 1), alpha, beta)
        } else if let Some(&r) = step.secondary.first() {
            solve_right_col_null(w.at(r, wire), w.at(r, wire + 1), alpha, beta)
        } else {
            NullSolution {
                theta: std::f64::consts::PI,
                phi: 0.0,
                clip: None,
            }
        };
        outcome.absorb(sol.clip);
        mesh.set_theta(id, sol.theta)?;
        mesh.set_phi(id, sol.phi)?;
        let block = transfer_block(sol.theta, sol.phi, alpha, beta);
        w.right_apply_block(wire, &block);
        for &r in &step.primary {
            outcome.residual_sq += w.at(r, wire).norm_sqr();
        }
        for &r in &step.secondary {
            outcome.residual_sq += w.at(r, wire + 1).norm_sqr();
        }
    }
    for k in 0..n {
        mesh.set_input_phase(k, -w.at(k, k).arg())?;
    }
    Ok(outcome)
}

/// Programs the output-side triangle of `mesh` to realize `u2` up to a
/// leftover per-wire phase screen, which is returned for absorption into the
/// mid-mesh phases.
pub(crate) fn realize_right_triangle(
    mesh: &mut Mesh,
    u2: &ComplexMat,
) -> Result<(RealizeOutcome, Vec<f64>)> {
    let n = mesh.size();
    let mut v = u2.clone();
    let mut outcome = RealizeOutcome::default();
    for step in right_realize_steps(n) {
        let wire = step.top_wire;
        let id = mesh
            .find_cell(step.column, wire)
            .expect("realization schedule matches the grid");
        let (alpha, beta) = {
            let c = mesh.crossing(id)?;
            (c.alpha, c.beta)
        };
        let sol = if let Some(&col) = step
            .primary
            .iter()
            .max_by(|&&a, &&b| {
                let na = v.at(wire, a).norm_sqr() + v.at(wire + 1, a).norm_sqr();
                let nb = v.at(wire, b).norm_sqr() + v.at(wire + 1, b).norm_sqr();
                na.partial_cmp(&nb).unwrap()
            })
        {
            solve_top_row_null(v.at(wire, col), v.at(wire + 1, col), alpha, beta)
        } else if let Some(&col) = step.secondary.first() {
            solve_bot_row_null(v.at(wire, col), v.at(wire + 1, col), alpha, beta)
        } else {
            NullSolution {
                theta: std::f64::consts::PI,
                phi: 0.0,
                clip: None,
            }
        };
        outcome.absorb(sol.clip);
        mesh.set_theta(id, sol.theta)?;
        mesh.set_phi(id, sol.phi)?;
        let block = transfer_block(sol.theta, sol.phi, alpha, beta);
        v.left_apply_block(wire, &block_dagger(&block));
        for &c in &step.primary {
            outcome.residual_sq += v.at(wire, c).norm_sqr();
        }
        for &c in &step.secondary {
            outcome.residual_sq += v.at(wire + 1, c).norm_sqr();
        }
    }
    let leftover = (0..n).map(|k| v.at(k, k).arg()).collect();
    Ok((outcome, leftover))
}

/// Decomposes a unitary onto the tapped rectangular layout with ideal cells:
/// splits the target, realizes both triangles, and folds the split's diagonal
/// together with the output triangle's leftover phases into the mid-mesh
/// phase screen. All taps stay `Through`.
pub fn clements_decompose(uhat: &ComplexMat) -> Result<Mesh> {
    let split = clements_split(uhat)?;
    let mut mesh = Mesh::new_clements_tapped(uhat.rows())?;
    realize_left_triangle(&mut mesh, &split.u1)?;
    let (_, leftover) = realize_right_triangle(&mut mesh, &split.u2)?;
    for k in 0..uhat.rows() {
        mesh.set_diag_phase(k, split.diag_phases[k] + leftover[k])?;
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matrix_error;
    use crate::mesh::{mesh_unitary, Topology};
    use crate::sampling::{sample_haar_mesh, sample_haar_qr, SeededRng};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn null_solvers_zero_their_targets() {
        let cases = [
            (c(0.3, -0.4), c(0.5, 0.9), 0.0, 0.0),
            (c(0.3, -0.4), c(0.5, 0.9), 0.03, -0.02),
            (c(-1.2, 0.1), c(0.02, -0.3), -0.04, -0.01),
            (c(0.0, 0.7), c(0.7, 0.0), 0.02, 0.05),
        ];
        for (x, y, al, be) in cases {
            let s = solve_bot_row_null(x, y, al, be);
            let t = transfer_block(s.theta, s.phi, al, be);
            let res = t[0][1].conj() * x + t[1][1].conj() * y;
            assert!(res.norm() < 1e-12, "bot row {:?}", (x, y, al, be));
            assert!(s.clip.is_none());

            let s = solve_top_row_null(x, y, al, be);
            let t = transfer_block(s.theta, s.phi, al, be);
            let res = t[0][0].conj() * x + t[1][0].conj() * y;
            assert!(res.norm() < 1e-12, "top row {:?}", (x, y, al, be));

            let s = solve_left_col_null(x, y, al, be);
            let t = transfer_block(s.theta, s.phi, al, be);
            let res = x * t[0][0] + y * t[1][0];
            assert!(res.norm() < 1e-12, "left col {:?}", (x, y, al, be));

            let s = solve_right_col_null(x, y, al, be);
            let t = transfer_block(s.theta, s.phi, al, be);
            let res = x * t[0][1] + y * t[1][1];
            assert!(res.norm() < 1e-12, "right col {:?}", (x, y, al, be));
        }
    }

    #[test]
    fn null_solver_flags_unreachable_ratios() {
        // Wanting all the power through while both couplers lean the same
        // way is unreachable: the residual floor is sin(alpha + beta).
        let (al, be) = (0.02, 0.02);
        let s = solve_bot_row_null(c(0.0, 0.0), c(1.0, 0.0), al, be);
        assert_eq!(s.clip, Some(ClipBound::Lower));
        assert_eq!(s.theta, 0.0);
        let t = transfer_block(s.theta, s.phi, al, be);
        let res = (t[0][1].conj() * c(0.0, 0.0) + t[1][1].conj() * c(1.0, 0.0)).norm();
        assert!((res - (al + be).sin()).abs() < 1e-12);

        // The opposite extreme clips at the other bound unless alpha == beta.
        let s = solve_bot_row_null(c(1.0, 0.0), c(0.0, 0.0), 0.03, -0.01);
        assert_eq!(s.clip, Some(ClipBound::Upper));
        assert!((s.theta - PI).abs() < 1e-12);

        // Fully correlated errors keep the upper bound reachable.
        let s = solve_bot_row_null(c(1.0, 0.0), c(0.0, 0.0), 0.02, 0.02);
        assert!(s.clip.is_none());
        assert!((s.theta - PI).abs() < 1e-12);
    }

    #[test]
    fn reck_identity_is_all_bars() {
        let mesh = reck_decompose(&ComplexMat::identity(4)).unwrap();
        for cr in mesh.crossings() {
            assert!((cr.theta - PI).abs() < 1e-12);
            assert!(cr.phi.abs() < 1e-12);
        }
        // Each bar contributes a sign on its top wire, so the input mask
        // holds only the 0 / pi phases that cancel those signs exactly.
        for &d in mesh.input_phases() {
            assert!(d.abs() < 1e-12 || (d - PI).abs() < 1e-12, "d {}", d);
        }
        let err = matrix_error(&mesh_unitary(&mesh), &ComplexMat::identity(4)).unwrap();
        assert!(err < 1e-12);
    }

    #[test]
    fn reck_two_port_crossover() {
        let uhat = ComplexMat::from_fn(2, 2, |r, col| {
            if r == col {
                c(0.0, 0.0)
            } else {
                c(0.0, 1.0)
            }
        });
        let mesh = reck_decompose(&uhat).unwrap();
        let cr = mesh.crossing(0).unwrap();
        assert!(cr.theta.abs() < 1e-12);
        assert!(cr.phi.abs() < 1e-12);
        assert!(mesh.input_phases().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn reck_round_trips_on_haar_targets() {
        let mut rng = SeededRng::new(41, 0);
        for n in [2usize, 4, 8, 16] {
            for _ in 0..8 {
                let uhat = sample_haar_qr(n, &mut rng);
                let mesh = reck_decompose(&uhat).unwrap();
                for cr in mesh.crossings() {
                    assert!(cr.theta <= PI + 1e-12, "theta {}", cr.theta);
                }
                let err = matrix_error(&mesh_unitary(&mesh), &uhat).unwrap();
                assert!(err < 1e-11, "n {} err {}", n, err);
            }
        }
    }

    #[test]
    fn reck_recovers_sampled_phases() {
        let mut rng = SeededRng::new(4242, 1);
        let mesh = sample_haar_mesh(8, Topology::Reck, &mut rng).unwrap();
        let back = reck_decompose(&mesh_unitary(&mesh)).unwrap();
        for (a, b) in mesh.crossings().iter().zip(back.crossings().iter()) {
            assert!((a.theta - b.theta).abs() < 1e-9, "{} vs {}", a.theta, b.theta);
            let dphi = (a.phi - b.phi).rem_euclid(2.0 * PI);
            assert!(dphi < 1e-9 || dphi > 2.0 * PI - 1e-9, "phi {} vs {}", a.phi, b.phi);
        }
        for (a, b) in mesh.input_phases().iter().zip(back.input_phases().iter()) {
            let d = (a - b).rem_euclid(2.0 * PI);
            assert!(d < 1e-9 || d > 2.0 * PI - 1e-9);
        }
    }

    #[test]
    fn reck_rejects_non_unitary_input() {
        let mut m = ComplexMat::identity(3);
        m.scale_row(0, c(1.1, 0.0));
        assert!(reck_decompose(&m).is_err());
    }

    #[test]
    fn split_reconstructs_and_factors_are_unitary() {
        let mut rng = SeededRng::new(7, 2);
        for n in [2usize, 3, 4, 5, 8, 12] {
            let uhat = sample_haar_qr(n, &mut rng);
            let split = clements_split(&uhat).unwrap();
            assert!(split.u1.unitarity_residual() < 1e-11);
            assert!(split.u2.unitarity_residual() < 1e-11);
            let mut mid = split.u2.clone();
            for k in 0..n {
                mid.scale_col(k, C64::from_polar(1.0, split.diag_phases[k]));
            }
            let rebuilt = mid.mul(&split.u1);
            let err = matrix_error(&rebuilt, &uhat).unwrap();
            assert!(err < 1e-11, "n {} err {}", n, err);
        }
    }

    #[test]
    fn split_identity_is_trivial() {
        let split = clements_split(&ComplexMat::identity(5)).unwrap();
        assert!(split.u1.sub(&ComplexMat::identity(5)).frobenius_norm() < 1e-12);
        assert!(split.u2.sub(&ComplexMat::identity(5)).frobenius_norm() < 1e-12);
        assert!(split.diag_phases.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn split_factors_carry_structural_zeros() {
        let mut rng = SeededRng::new(19, 4);
        let uhat = sample_haar_qr(5, &mut rng);
        let split = clements_split(&uhat).unwrap();
        // Input-side factor: zeros in the lower-left corner block.
        for (r, col) in [(3, 0), (3, 1), (4, 0), (4, 1), (4, 2), (4, 3)] {
            assert!(
                split.u1.at(r, col).norm() < 1e-12,
                "u1 ({}, {}) = {}",
                r,
                col,
                split.u1.at(r, col).norm()
            );
        }
        // Its last row is untouched by the input triangle.
        assert!((split.u1.at(4, 4).norm() - 1.0).abs() < 1e-12);
        // Output-side factor: zeros in a smaller lower-left corner.
        for (r, col) in [(2, 0), (3, 0), (4, 0), (4, 1)] {
            assert!(
                split.u2.at(r, col).norm() < 1e-12,
                "u2 ({}, {}) = {}",
                r,
                col,
                split.u2.at(r, col).norm()
            );
        }
        // Zero counts below the diagonal: about a quarter of the matrix each.
        let below_zeros = |m: &ComplexMat| {
            let mut k = 0;
            for r in 0..5 {
                for col in 0..r {
                    if m.at(r, col).norm() < 1e-12 {
                        k += 1;
                    }
                }
            }
            k
        };
        assert_eq!(below_zeros(&split.u1), 6);
        assert_eq!(below_zeros(&split.u2), 4);
    }

    #[test]
    fn clements_round_trips_on_haar_targets() {
        let mut rng = SeededRng::new(55, 3);
        for n in [2usize, 3, 5, 6, 8, 13] {
            for _ in 0..4 {
                let uhat = sample_haar_qr(n, &mut rng);
                let mesh = clements_decompose(&uhat).unwrap();
                let err = matrix_error(&mesh_unitary(&mesh), &uhat).unwrap();
                assert!(err < 1e-10 * n as f64, "n {} err {:.3e}", n, err);
            }
        }
    }

    #[test]
    fn clements_recovers_sampled_thetas() {
        let mut rng = SeededRng::new(4243, 9);
        let mesh = sample_haar_mesh(7, Topology::ClementsTapped, &mut rng).unwrap();
        let back = clements_decompose(&mesh_unitary(&mesh)).unwrap();
        for (a, b) in mesh.crossings().iter().zip(back.crossings().iter()) {
            assert!(
                (a.theta - b.theta).abs() < 1e-8,
                "cell ({}, {}): {} vs {}",
                a.column,
                a.top_wire,
                a.theta,
                b.theta
            );
        }
    }
}
