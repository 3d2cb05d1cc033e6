//! White-box correction of splitter errors.
//!
//! A cell with splitter offsets (alpha, beta) still spans a full range of
//! splitting ratios, just not the complete one: the effective mixing angle is
//! confined to `[2|alpha + beta|, pi - 2|alpha - beta|]`. Everything inside
//! that window can be realized exactly once the accompanying phase shifts are
//! re-solved; only settings outside it must be clamped to the nearest bound.
//!
//! Two correction routes are provided. `correct_crossing` rewrites a single
//! cell's settings and returns the residual external phases for the caller to
//! absorb upstream. `decompose_with_errors` (and its rectangular-layout
//! counterpart) redoes the whole nulling decomposition with the true cell
//! blocks, so all reachable settings come out exact and each clamped step's
//! leftover is accounted in an energy ledger.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::decompose::{
    clements_decompose, clements_split, realize_left_triangle, realize_right_triangle,
    reck_decompose, solve_bot_row_null, ClipBound,
};
use crate::matrix::{block_dagger, matrix_error, ComplexMat, C64};
use crate::mesh::{mesh_unitary, transfer_block, wrap_angle, Mesh, Topology};
use crate::sampling::ErrorModel;
use crate::{MeshError, Result};

/// Range of effective mixing angles a cell with the given splitter offsets
/// can realize exactly.
pub fn theta_bounds(alpha: f64, beta: f64) -> (f64, f64) {
    (2.0 * (alpha + beta).abs(), PI - 2.0 * (alpha - beta).abs())
}

/// Clamps a requested mixing angle into the reachable window, flagging
/// whether clamping occurred.
pub fn clip_theta(theta: f64, alpha: f64, beta: f64) -> (f64, bool) {
    let (lo, hi) = theta_bounds(alpha, beta);
    if theta < lo {
        (lo, true)
    } else if theta > hi {
        (hi, true)
    } else {
        (theta, false)
    }
}

/// Corrected settings for one cell, plus the external phases left over on
/// the two input arms. Absorbing `chi` (top) and `psi` (bottom) into the
/// preceding cells makes the corrected cell reproduce the ideal block
/// exactly whenever `clipped` is false.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedCrossing {
    pub theta: f64,
    pub phi: f64,
    pub chi: f64,
    pub psi: f64,
    pub clipped: bool,
}

/// Solves `T_ideal(theta, phi) = T(theta', phi' | alpha, beta) *
/// diag(e^{i chi}, e^{i psi})` for the primed settings and residual phases.
///
/// When the requested angle falls outside the reachable window it is clamped
/// first and the phases are chosen to minimize the leftover block error.
pub fn correct_crossing(
    theta: f64,
    phi: f64,
    alpha: f64,
    beta: f64,
) -> CorrectedCrossing {
    let (th_hat, clipped) = clip_theta(theta, alpha, beta);
    let (sa, ca) = (FRAC_PI_4 + alpha).sin_cos();
    let (sb, cb) = (FRAC_PI_4 + beta).sin_cos();
    let b = 2.0 * sa * ca * sb * cb;
    let c = ca * ca * cb * cb + sa * sa * sb * sb;
    let half = (th_hat / 2.0).sin();
    let cos_tp = ((c - half * half) / b).clamp(-1.0, 1.0);
    let theta_p = cos_tp.acos();

    let t_id = transfer_block(theta, phi, 0.0, 0.0);
    let t0 = transfer_block(theta_p, 0.0, alpha, beta);
    // With e = e^{-i phi'} and the column phases eliminated, the block
    // overlap reduces to |z1 + e z3| + |z2 + e z4|; maximize it over e.
    let z1 = t0[0][0].conj() * t_id[0][0];
    let z2 = t0[0][1].conj() * t_id[0][1];
    let z3 = t0[1][0].conj() * t_id[1][0];
    let z4 = t0[1][1].conj() * t_id[1][1];
    let x = align_common_phase(z1, z3, z2, z4, -phi);
    let e = C64::from_polar(1.0, x);
    let chi = arg_or_zero(z1 + e * z3);
    let psi = arg_or_zero(z2 + e * z4);
    CorrectedCrossing {
        theta: theta_p,
        phi: wrap_angle(-x),
        chi,
        psi,
        clipped,
    }
}

/// Maximizes `|a + e^{ix} b| + |c + e^{ix} d|` over x. Each term is a
/// raised cosine under a square root, so a coarse scan locates the basin and
/// Newton iterations on the derivative polish it to full precision.
fn align_common_phase(a: C64, b: C64, c: C64, d: C64, fallback: f64) -> f64 {
    let w1 = a.conj() * b;
    let w2 = c.conj() * d;
    if w1.norm() < 1e-30 && w2.norm() < 1e-30 {
        return fallback;
    }
    let s1 = a.norm_sqr() + b.norm_sqr();
    let s2 = c.norm_sqr() + d.norm_sqr();
    let val = |x: f64| {
        let e = C64::from_polar(1.0, x);
        (s1 + 2.0 * (e * w1).re).max(0.0).sqrt() + (s2 + 2.0 * (e * w2).re).max(0.0).sqrt()
    };
    let mut best_x = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..64 {
        let x = std::f64::consts::TAU * i as f64 / 64.0;
        let v = val(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let mut x = best_x;
    for _ in 0..60 {
        let e = C64::from_polar(1.0, x);
        let (u1, u2) = (e * w1, e * w2);
        let r1 = (s1 + 2.0 * u1.re).max(0.0).sqrt();
        let r2 = (s2 + 2.0 * u2.re).max(0.0).sqrt();
        if r1 < 1e-18 || r2 < 1e-18 {
            break;
        }
        let d1 = -u1.im / r1 - u2.im / r2;
        let d2 = -u1.re / r1 - u1.im * u1.im / (r1 * r1 * r1) - u2.re / r2
            - u2.im * u2.im / (r2 * r2 * r2);
        if d2.abs() < 1e-30 {
            break;
        }
        let step = d1 / d2;
        x -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    if val(x) + 1e-12 < best {
        best_x
    } else {
        x
    }
}

fn arg_or_zero(z: C64) -> f64 {
    if z.norm_sqr() == 0.0 {
        0.0
    } else {
        z.arg()
    }
}

/// Outcome of an error-aware decomposition.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionReport {
    /// Configuration error with the ideal (error-blind) settings on the
    /// imperfect hardware.
    pub e_before: f64,
    /// Configuration error after redoing the decomposition with the true
    /// cell blocks.
    pub e_after: f64,
    /// Steps clamped at the lower reachability bound (the dominant failure,
    /// counted as unsatisfiable cells).
    pub n_unsat: usize,
    /// Steps clamped at the upper bound, reported separately.
    pub n_unsat_upper: usize,
    /// Total squared field left behind by clamped steps.
    pub epsilon_ledger: f64,
}

/// Redoes the triangular-layout nulling decomposition using the true cell
/// blocks of `hardware` (its per-cell splitter offsets), so every reachable
/// step is exact. Returns the corrected mesh and an error report comparing
/// against the error-blind configuration of the same hardware.
pub fn decompose_with_errors(
    uhat: &ComplexMat,
    hardware: &Mesh,
) -> Result<(Mesh, CorrectionReport)> {
    if hardware.topology() != Topology::Reck {
        return Err(MeshError::UnsupportedTopology(hardware.topology()));
    }
    let n = hardware.size();
    if uhat.rows() != n || uhat.cols() != n {
        return Err(MeshError::DimensionMismatch(format!(
            "target is {}x{}, hardware has {} ports",
            uhat.rows(),
            uhat.cols(),
            n
        )));
    }
    uhat.require_unitary(1e-8 * n as f64)?;

    let mut blind = hardware.clone();
    blind.adopt_phases(&reck_decompose(uhat)?)?;
    let e_before = matrix_error(&mesh_unitary(&blind), uhat)?;

    let mut mesh = hardware.clone();
    let mut v = uhat.clone();
    let mut ledger = 0.0;
    let mut n_unsat = 0;
    let mut n_unsat_upper = 0;
    #[cfg(debug_assertions)]
    let mut frozen: Vec<(usize, usize)> = Vec::new();
    for m in 0..n - 1 {
        for pos in 0..n - 1 - m {
            let top = n - 2 - pos;
            let id = mesh
                .find_crossing(m, pos)
                .expect("triangular layout contains every (diag, pos) pair");
            let (alpha, beta) = {
                let cr = mesh.crossing(id)?;
                (cr.alpha, cr.beta)
            };
            let sol = solve_bot_row_null(v.at(top, m), v.at(top + 1, m), alpha, beta);
            match sol.clip {
                Some(ClipBound::Lower) => n_unsat += 1,
                Some(ClipBound::Upper) => n_unsat_upper += 1,
                None => {}
            }
            mesh.set_theta(id, sol.theta)?;
            mesh.set_phi(id, sol.phi)?;
            let block = transfer_block(sol.theta, sol.phi, alpha, beta);
            v.left_apply_block(top, &block_dagger(&block));
            ledger += v.at(top + 1, m).norm_sqr();
            #[cfg(debug_assertions)]
            {
                // Later steps only mix frozen entries pairwise, so the total
                // squared field over them must track the ledger exactly.
                frozen.push((top + 1, m));
                let total: f64 = frozen.iter().map(|&(r, cc)| v.at(r, cc).norm_sqr()).sum();
                debug_assert!(
                    (total - ledger).abs() < 1e-10,
                    "ledger drift: {} vs {}",
                    total,
                    ledger
                );
            }
        }
    }
    for k in 0..n {
        mesh.set_input_phase(k, v.at(k, k).arg())?;
    }
    let e_after = matrix_error(&mesh_unitary(&mesh), uhat)?;
    Ok((
        mesh,
        CorrectionReport {
            e_before,
            e_after,
            n_unsat,
            n_unsat_upper,
            epsilon_ledger: ledger,
        },
    ))
}

/// Rectangular-layout counterpart of [`decompose_with_errors`]: splits the
/// target abstractly, then realizes both triangles with the true cell blocks
/// of `hardware`. Requires the tapped layout so the split's central phases
/// have somewhere to live.
pub fn clements_decompose_with_errors(
    uhat: &ComplexMat,
    hardware: &Mesh,
) -> Result<(Mesh, CorrectionReport)> {
    if hardware.topology() != Topology::ClementsTapped {
        return Err(MeshError::UnsupportedTopology(hardware.topology()));
    }
    let n = hardware.size();
    if uhat.rows() != n || uhat.cols() != n {
        return Err(MeshError::DimensionMismatch(format!(
            "target is {}x{}, hardware has {} ports",
            uhat.rows(),
            uhat.cols(),
            n
        )));
    }
    let split = clements_split(uhat)?;

    let mut blind = hardware.clone();
    blind.adopt_phases(&clements_decompose(uhat)?)?;
    let e_before = matrix_error(&mesh_unitary(&blind), uhat)?;

    let mut mesh = hardware.clone();
    let left = realize_left_triangle(&mut mesh, &split.u1)?;
    let (right, leftover) = realize_right_triangle(&mut mesh, &split.u2)?;
    for k in 0..n {
        mesh.set_diag_phase(k, split.diag_phases[k] + leftover[k])?;
    }
    let e_after = matrix_error(&mesh_unitary(&mesh), uhat)?;
    Ok((
        mesh,
        CorrectionReport {
            e_before,
            e_after,
            n_unsat: left.clip_lower + right.clip_lower,
            n_unsat_upper: left.clip_upper + right.clip_upper,
            epsilon_ledger: left.residual_sq + right.residual_sq,
        },
    ))
}

/// Closed-form expectations for a mesh of given size under an error model:
/// uncorrected error, the chance that every cell is satisfiable, the expected
/// number of unsatisfiable cells, and the corrected error floor.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub e_uncorrected: f64,
    pub coverage: f64,
    pub n_unsat: f64,
    pub e_corrected: f64,
}

/// Evaluates the closed-form predictions for a mesh with `n` ports.
pub fn predict(n: usize, model: &ErrorModel) -> Result<Prediction> {
    model.validate()?;
    if n < 2 {
        return Err(MeshError::InvalidParameter(format!(
            "mesh size must be at least 2, got {}",
            n
        )));
    }
    let nf = n as f64;
    Ok(match *model {
        ErrorModel::None => Prediction {
            e_uncorrected: 0.0,
            coverage: 1.0,
            n_unsat: 0.0,
            e_corrected: 0.0,
        },
        ErrorModel::UncorrelatedGaussian(sigma) => {
            let s2 = sigma * sigma;
            Prediction {
                e_uncorrected: (2.0 * (nf - 1.0)).sqrt() * sigma,
                coverage: (-nf.powi(3) * s2 / 3.0).exp(),
                n_unsat: nf.powi(3) * s2 / 3.0,
                e_corrected: (2.0f64 / 3.0).sqrt() * nf * s2,
            }
        }
        ErrorModel::FullyCorrelated(mu) => {
            let m2 = mu * mu;
            Prediction {
                e_uncorrected: 2.0 * nf.sqrt() * mu,
                coverage: (-2.0 / 3.0 * nf.powi(3) * m2).exp(),
                n_unsat: 2.0 / 3.0 * nf.powi(3) * m2,
                e_corrected: (8.0f64 / 9.0).sqrt() * nf * m2,
            }
        }
    })
}
