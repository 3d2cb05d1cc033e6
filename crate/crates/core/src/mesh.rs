//! Mesh layouts, unit-cell transfer matrices, and field propagation.
//!
//! A mesh realizes an N x N unitary as `U = (prod of embedded 2x2 cells) * D`
//! where `D` is a diagonal input phase mask and the product runs over the
//! cells in propagation order (input-adjacent columns act first, so they sit
//! rightmost in the product). Three layouts are supported:
//!
//! - `Reck`: triangular, cells grouped in falling diagonals,
//! - `Clements`: rectangular, cells grouped in alternating columns,
//! - `ClementsTapped`: the rectangular grid cut along its anti-diagonal by a
//!   row of switchable drop ports, with an extra per-wire phase screen between
//!   the two halves.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

use crate::matrix::{Block2, ComplexMat, C64};
use crate::{MeshError, Result};

/// Wraps an angle to [0, 2*pi).
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y == TAU {
        0.0
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Reck,
    Clements,
    ClementsTapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapState {
    Through,
    ToDetector,
}

/// One tunable 2x2 cell: a Mach-Zehnder interferometer with internal phase
/// `theta`, output phase `phi`, and fixed splitter angle deviations
/// `alpha`, `beta` on its two couplers.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    /// Falling-diagonal index (Reck) or column index (Clements grids).
    pub diag: usize,
    /// Position along the diagonal (0 = closest to the bottom wire) or
    /// within the column (0 = topmost cell).
    pub pos: usize,
    pub top_wire: usize,
    /// Propagation layer; cells in the same column act on disjoint wires.
    pub column: usize,
    /// Haar rank: the distribution of theta under Haar sampling depends only
    /// on this integer (see the sampling module).
    pub rank: usize,
    pub theta: f64,
    pub phi: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Crossing {
    pub fn bottom_wire(&self) -> usize {
        self.top_wire + 1
    }
}

/// 2x2 coupler of angle psi: `[[cos psi, i sin psi], [i sin psi, cos psi]]`.
pub fn splitter(psi: f64) -> ComplexMat {
    let (s, c) = psi.sin_cos();
    ComplexMat::from_fn(2, 2, |r, col| {
        if r == col {
            C64::new(c, 0.0)
        } else {
            C64::new(0.0, s)
        }
    })
}

/// Transfer matrix of one cell: output phase stage, second coupler at
/// `pi/4 + beta`, internal phase stage on the top arm, first coupler at
/// `pi/4 + alpha`.
pub fn transfer_block(theta: f64, phi: f64, alpha: f64, beta: f64) -> Block2 {
    let (sa, ca) = (FRAC_PI_4 + alpha).sin_cos();
    let (sb, cb) = (FRAC_PI_4 + beta).sin_cos();
    let et = C64::from_polar(1.0, theta);
    let ep = C64::from_polar(1.0, phi);
    let i = C64::new(0.0, 1.0);
    [
        [
            ca * cb * et - sa * sb,
            i * (sa * cb * et + ca * sb),
        ],
        [
            i * ep * (ca * sb * et + sa * cb),
            ep * (ca * cb - sa * sb * et),
        ],
    ]
}

pub fn crossing_transfer(c: &Crossing) -> ComplexMat {
    let b = transfer_block(c.theta, c.phi, c.alpha, c.beta);
    ComplexMat::from_fn(2, 2, |r, col| b[r][col])
}

/// One step of the rectangular-mesh nulling schedule, with the physical cell
/// it programs and the Haar rank of that cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClementsOp {
    /// True for an output-side (row) operation, false for an input-side
    /// (column) operation.
    pub row_op: bool,
    pub target_row: usize,
    pub target_col: usize,
    /// Column of the physical cell this operation programs.
    pub slot_column: usize,
    pub top_wire: usize,
    pub rank: usize,
}

/// The alternating nulling schedule for the rectangular layout.
///
/// Sweep s = 1..N-1 zeroes one more anti-diagonal of the target matrix: odd
/// sweeps use column operations on adjacent matrix columns (input-side cells),
/// even sweeps use row operations on adjacent rows (output-side cells).
/// Column operations map onto input-side slots of the matching wire pair in
/// ascending column order; row operations map onto output-side slots in
/// descending column order.
///
/// Rank bookkeeping: every matrix entry starts with weight 1; zeroing an
/// entry folds its weight into the partner entry (the one above for row
/// operations, the right neighbor for column operations). The rank of a step
/// is the weight of the entry it zeroes, which is the number of original
/// entries whose amplitude has been folded into it.
pub fn clements_plan(n: usize) -> Vec<ClementsOp> {
    let mut left_slots: Vec<Vec<usize>> = vec![Vec::new(); n.saturating_sub(1)];
    let mut right_slots: Vec<Vec<usize>> = vec![Vec::new(); n.saturating_sub(1)];
    for l in 0..n {
        for w in (l % 2..n.saturating_sub(1)).step_by(2) {
            if l + w < n - 1 {
                left_slots[w].push(l);
            } else {
                right_slots[w].push(l);
            }
        }
    }
    for s in right_slots.iter_mut() {
        s.reverse();
    }
    let mut left_next = vec![0usize; n.saturating_sub(1)];
    let mut right_next = vec![0usize; n.saturating_sub(1)];

    let mut weight = vec![vec![1usize; n]; n];
    let mut ops = Vec::with_capacity(n * (n - 1) / 2);
    for s in 1..n {
        if s % 2 == 1 {
            for j in 0..s {
                let (r, c) = (n - 1 - j, s - 1 - j);
                let rank = weight[r][c];
                weight[r][c + 1] += rank;
                let w = c;
                let slot_column = left_slots[w][left_next[w]];
                left_next[w] += 1;
                ops.push(ClementsOp {
                    row_op: false,
                    target_row: r,
                    target_col: c,
                    slot_column,
                    top_wire: w,
                    rank,
                });
            }
        } else {
            for j in 1..=s {
                let (r, c) = (n - s + j - 1, j - 1);
                let rank = weight[r][c];
                weight[r - 1][c] += rank;
                let w = r - 1;
                let slot_column = right_slots[w][right_next[w]];
                right_next[w] += 1;
                ops.push(ClementsOp {
                    row_op: true,
                    target_row: r,
                    target_col: c,
                    slot_column,
                    top_wire: w,
                    rank,
                });
            }
        }
    }
    for w in 0..n.saturating_sub(1) {
        debug_assert_eq!(left_next[w], left_slots[w].len());
        debug_assert_eq!(right_next[w], right_slots[w].len());
    }
    ops
}

/// A programmable mesh: layout, cells, input phase mask, and (for the tapped
/// layout) per-wire drop ports plus a mid-mesh phase screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    topology: Topology,
    n: usize,
    crossings: Vec<Crossing>,
    input_phases: Vec<f64>,
    diag_phases: Vec<f64>,
    tap_states: Vec<TapState>,
    tap_error: f64,
}

impl Mesh {
    /// Triangular layout: diagonal m (0-based) runs from the bottom wire pair
    /// up-left and carries N-1-m cells.
    pub fn new_reck(n: usize) -> Result<Mesh> {
        if n < 2 {
            return Err(MeshError::InvalidParameter(format!(
                "mesh size must be at least 2, got {}",
                n
            )));
        }
        let mut crossings = Vec::with_capacity(n * (n - 1) / 2);
        for m in 0..n - 1 {
            for pos in 0..n - 1 - m {
                crossings.push(Crossing {
                    diag: m,
                    pos,
                    top_wire: n - 2 - pos,
                    column: 2 * (n - 1 - m) - pos - 2,
                    rank: pos + 1,
                    theta: 0.0,
                    phi: 0.0,
                    alpha: 0.0,
                    beta: 0.0,
                });
            }
        }
        Mesh::finish(Topology::Reck, n, crossings, false)
    }

    /// Rectangular layout: column l carries cells on top wires w with
    /// w = l (mod 2).
    pub fn new_clements(n: usize) -> Result<Mesh> {
        if n < 2 {
            return Err(MeshError::InvalidParameter(format!(
                "mesh size must be at least 2, got {}",
                n
            )));
        }
        Mesh::finish(Topology::Clements, n, Mesh::clements_cells(n), false)
    }

    /// Rectangular layout cut by a diagonal of drop ports; wires also carry a
    /// tunable phase screen between the two halves.
    pub fn new_clements_tapped(n: usize) -> Result<Mesh> {
        if n < 2 {
            return Err(MeshError::InvalidParameter(format!(
                "mesh size must be at least 2, got {}",
                n
            )));
        }
        Mesh::finish(Topology::ClementsTapped, n, Mesh::clements_cells(n), true)
    }

    fn clements_cells(n: usize) -> Vec<Crossing> {
        clements_plan(n)
            .iter()
            .map(|op| Crossing {
                diag: op.slot_column,
                pos: (op.top_wire - op.slot_column % 2) / 2,
                top_wire: op.top_wire,
                column: op.slot_column,
                rank: op.rank,
                theta: 0.0,
                phi: 0.0,
                alpha: 0.0,
                beta: 0.0,
            })
            .collect()
    }

    fn finish(topology: Topology, n: usize, mut crossings: Vec<Crossing>, tapped: bool) -> Result<Mesh> {
        crossings.sort_by_key(|c| (c.column, c.top_wire));
        // No two cells in one column may share a wire.
        for pair in crossings.windows(2) {
            if pair[0].column == pair[1].column {
                debug_assert!(pair[0].top_wire + 1 < pair[1].top_wire);
            }
        }
        Ok(Mesh {
            topology,
            n,
            crossings,
            input_phases: vec![0.0; n],
            diag_phases: if tapped { vec![0.0; n] } else { Vec::new() },
            tap_states: if tapped {
                vec![TapState::Through; n]
            } else {
                Vec::new()
            },
            tap_error: 0.0,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn crossing_count(&self) -> usize {
        self.crossings.len()
    }

    pub fn crossings(&self) -> &[Crossing] {
        &self.crossings
    }

    pub fn crossing(&self, id: usize) -> Result<&Crossing> {
        self.crossings.get(id).ok_or(MeshError::UnknownCrossing(id))
    }

    /// Index of the cell at (diag, pos), in whatever coordinate convention
    /// the topology uses for those fields.
    pub fn find_crossing(&self, diag: usize, pos: usize) -> Option<usize> {
        self.crossings
            .iter()
            .position(|c| c.diag == diag && c.pos == pos)
    }

    /// Index of the cell at (column, top_wire).
    pub fn find_cell(&self, column: usize, top_wire: usize) -> Option<usize> {
        self.crossings
            .iter()
            .position(|c| c.column == column && c.top_wire == top_wire)
    }

    pub fn input_phases(&self) -> &[f64] {
        &self.input_phases
    }

    pub fn diag_phases(&self) -> &[f64] {
        &self.diag_phases
    }

    pub fn tap_states(&self) -> &[TapState] {
        &self.tap_states
    }

    pub fn tap_error(&self) -> f64 {
        self.tap_error
    }

    /// True if the cell lies on the input side of the tap diagonal.
    pub fn is_left_cell(&self, c: &Crossing) -> bool {
        c.column + c.top_wire < self.n - 1
    }

    pub fn set_theta(&mut self, id: usize, theta: f64) -> Result<()> {
        if !theta.is_finite() {
            return Err(MeshError::InvalidParameter("theta must be finite".into()));
        }
        let c = self
            .crossings
            .get_mut(id)
            .ok_or(MeshError::UnknownCrossing(id))?;
        c.theta = wrap_angle(theta);
        Ok(())
    }

    pub fn set_phi(&mut self, id: usize, phi: f64) -> Result<()> {
        if !phi.is_finite() {
            return Err(MeshError::InvalidParameter("phi must be finite".into()));
        }
        let c = self
            .crossings
            .get_mut(id)
            .ok_or(MeshError::UnknownCrossing(id))?;
        c.phi = wrap_angle(phi);
        Ok(())
    }

    pub fn set_alpha_beta(&mut self, id: usize, alpha: f64, beta: f64) -> Result<()> {
        if !(alpha.is_finite() && beta.is_finite())
            || alpha.abs() >= FRAC_PI_4
            || beta.abs() >= FRAC_PI_4
        {
            return Err(MeshError::InvalidParameter(format!(
                "splitter errors must satisfy |alpha|, |beta| < pi/4, got ({}, {})",
                alpha, beta
            )));
        }
        let c = self
            .crossings
            .get_mut(id)
            .ok_or(MeshError::UnknownCrossing(id))?;
        c.alpha = alpha;
        c.beta = beta;
        Ok(())
    }

    pub fn set_input_phase(&mut self, port: usize, value: f64) -> Result<()> {
        if port >= self.n {
            return Err(MeshError::InvalidParameter(format!(
                "port {} out of range for size {}",
                port, self.n
            )));
        }
        self.input_phases[port] = wrap_angle(value);
        Ok(())
    }

    pub fn set_diag_phase(&mut self, wire: usize, value: f64) -> Result<()> {
        if self.topology != Topology::ClementsTapped {
            return Err(MeshError::UnsupportedTopology(self.topology));
        }
        if wire >= self.n {
            return Err(MeshError::InvalidParameter(format!(
                "wire {} out of range for size {}",
                wire, self.n
            )));
        }
        self.diag_phases[wire] = wrap_angle(value);
        Ok(())
    }

    /// Copies every programmable phase (cell settings, input mask, and the
    /// mid-mesh screen if present) from a mesh of the same layout, leaving
    /// this mesh's splitter offsets and tap states untouched.
    pub fn adopt_phases(&mut self, other: &Mesh) -> Result<()> {
        if self.topology != other.topology || self.n != other.n {
            return Err(MeshError::DimensionMismatch(
                "phase adoption needs identical layouts".into(),
            ));
        }
        for (c, o) in self.crossings.iter_mut().zip(other.crossings.iter()) {
            c.theta = o.theta;
            c.phi = o.phi;
        }
        self.input_phases.clone_from(&other.input_phases);
        self.diag_phases.clone_from(&other.diag_phases);
        Ok(())
    }

    pub fn set_tap_state(&mut self, wire: usize, state: TapState) -> Result<()> {
        if self.topology != Topology::ClementsTapped {
            return Err(MeshError::UnsupportedTopology(self.topology));
        }
        if wire >= self.n {
            return Err(MeshError::InvalidParameter(format!(
                "wire {} out of range for size {}",
                wire, self.n
            )));
        }
        self.tap_states[wire] = state;
        Ok(())
    }

    pub fn tap_state(&self, wire: usize) -> Result<TapState> {
        if self.topology != Topology::ClementsTapped {
            return Err(MeshError::UnsupportedTopology(self.topology));
        }
        Ok(self.tap_states[wire])
    }

    pub fn set_tap_error(&mut self, value: f64) -> Result<()> {
        if self.topology != Topology::ClementsTapped {
            return Err(MeshError::UnsupportedTopology(self.topology));
        }
        if !value.is_finite() || value.abs() >= FRAC_PI_4 {
            return Err(MeshError::InvalidParameter(
                "tap coupler error must satisfy |e| < pi/4".into(),
            ));
        }
        self.tap_error = value;
        Ok(())
    }

    fn tap_coupler_angle(&self, wire: usize) -> f64 {
        match self.tap_states[wire] {
            TapState::Through => self.tap_error,
            TapState::ToDetector => FRAC_PI_2 + self.tap_error,
        }
    }

    pub(crate) fn tap_through_amp(&self, wire: usize) -> C64 {
        C64::new(self.tap_coupler_angle(wire).cos(), 0.0)
    }

    pub(crate) fn tap_drop_amp(&self, wire: usize) -> C64 {
        C64::new(0.0, self.tap_coupler_angle(wire).sin())
    }
}

/// The N x N transfer matrix of the mesh, input phase mask included.
///
/// For the tapped layout this is the end-to-end waveguide transfer, so it is
/// unitary only when every drop port is set to `Through` (with zero tap
/// error); otherwise part of the field leaves through the taps.
pub fn mesh_unitary(mesh: &Mesh) -> ComplexMat {
    let n = mesh.n;
    let mut u = ComplexMat::identity(n);
    for (k, &d) in mesh.input_phases.iter().enumerate() {
        u.set(k, k, C64::from_polar(1.0, d));
    }
    match mesh.topology {
        Topology::Reck | Topology::Clements => {
            for c in &mesh.crossings {
                u.left_apply_block(c.top_wire, &transfer_block(c.theta, c.phi, c.alpha, c.beta));
            }
        }
        Topology::ClementsTapped => {
            for c in mesh.crossings.iter().filter(|c| mesh.is_left_cell(c)) {
                u.left_apply_block(c.top_wire, &transfer_block(c.theta, c.phi, c.alpha, c.beta));
            }
            for k in 0..n {
                u.scale_row(k, C64::from_polar(1.0, mesh.diag_phases[k]));
                u.scale_row(k, mesh.tap_through_amp(k));
            }
            for c in mesh.crossings.iter().filter(|c| !mesh.is_left_cell(c)) {
                u.left_apply_block(c.top_wire, &transfer_block(c.theta, c.phi, c.alpha, c.beta));
            }
        }
    }
    u
}

/// Propagates an input field through the mesh blockwise, O(N) per column.
pub fn propagate(mesh: &Mesh, input: &[C64]) -> Result<Vec<C64>> {
    propagate_full(mesh, input).map(|(out, _)| out)
}

/// Like [`propagate`] but also returns the fields dropped at the tap
/// detectors (empty for untapped layouts).
pub fn propagate_full(mesh: &Mesh, input: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
    let n = mesh.n;
    if input.len() != n {
        return Err(MeshError::DimensionMismatch(format!(
            "input length {} does not match mesh size {}",
            input.len(),
            n
        )));
    }
    let mut v: Vec<C64> = input
        .iter()
        .zip(mesh.input_phases.iter())
        .map(|(x, &d)| x * C64::from_polar(1.0, d))
        .collect();

    let apply = |v: &mut Vec<C64>, c: &Crossing| {
        let b = transfer_block(c.theta, c.phi, c.alpha, c.beta);
        let w = c.top_wire;
        let (x, y) = (v[w], v[w + 1]);
        v[w] = b[0][0] * x + b[0][1] * y;
        v[w + 1] = b[1][0] * x + b[1][1] * y;
    };

    match mesh.topology {
        Topology::Reck | Topology::Clements => {
            for c in &mesh.crossings {
                apply(&mut v, c);
            }
            Ok((v, Vec::new()))
        }
        Topology::ClementsTapped => {
            for c in mesh.crossings.iter().filter(|c| mesh.is_left_cell(c)) {
                apply(&mut v, c);
            }
            let mut taps = Vec::with_capacity(n);
            for k in 0..n {
                // The mid-mesh phase shifter sits on the wire ahead of the
                // drop coupler, so tap detectors see it too.
                v[k] *= C64::from_polar(1.0, mesh.diag_phases[k]);
                taps.push(mesh.tap_drop_amp(k) * v[k]);
                v[k] *= mesh.tap_through_amp(k);
            }
            for c in mesh.crossings.iter().filter(|c| !mesh.is_left_cell(c)) {
                apply(&mut v, c);
            }
            Ok((v, taps))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{embed_block, matrix_error};
    use std::f64::consts::PI;

    fn norm2(v: &[C64]) -> f64 {
        v.iter().map(|z| z.norm_sqr()).sum()
    }

    #[test]
    fn splitter_special_values() {
        let id = splitter(0.0);
        assert!(id.sub(&ComplexMat::identity(2)).frobenius_norm() < 1e-15);

        let half = splitter(FRAC_PI_4);
        let r = 0.5f64.sqrt();
        assert!((half.at(0, 0) - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((half.at(0, 1) - C64::new(0.0, r)).norm() < 1e-15);

        let cross = splitter(FRAC_PI_2);
        assert!(cross.at(0, 0).norm() < 1e-15);
        assert!((cross.at(1, 0) - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn transfer_block_special_values() {
        let cross = transfer_block(0.0, 0.0, 0.0, 0.0);
        assert!((cross[0][1] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((cross[1][0] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(cross[0][0].norm() < 1e-15 && cross[1][1].norm() < 1e-15);

        let bar = transfer_block(PI, 0.0, 0.0, 0.0);
        assert!((bar[0][0] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((bar[1][1] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(bar[0][1].norm() < 1e-15 && bar[1][0].norm() < 1e-15);

        let t = transfer_block(0.0, 0.0, 0.01, 0.01);
        assert!((t[0][0].norm() - 0.02f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn transfer_block_magnitudes_and_unitarity() {
        let theta = 1.234;
        let t = transfer_block(theta, 0.77, 0.0, 0.0);
        assert!((t[0][0].norm() - (theta / 2.0).sin()).abs() < 1e-14);
        assert!((t[1][0].norm() - (theta / 2.0).cos()).abs() < 1e-14);

        let c = Crossing {
            diag: 0,
            pos: 0,
            top_wire: 0,
            column: 0,
            rank: 1,
            theta: 2.1,
            phi: 4.0,
            alpha: 0.04,
            beta: -0.03,
        };
        assert!(crossing_transfer(&c).unitarity_residual() < 1e-14);
    }

    #[test]
    fn layouts_have_expected_counts() {
        for n in [2usize, 3, 4, 5, 8] {
            for mesh in [
                Mesh::new_reck(n).unwrap(),
                Mesh::new_clements(n).unwrap(),
                Mesh::new_clements_tapped(n).unwrap(),
            ] {
                assert_eq!(mesh.crossing_count(), n * (n - 1) / 2);
                // Rank multiset: N-k cells of rank k.
                for k in 1..n {
                    let count = mesh.crossings().iter().filter(|c| c.rank == k).count();
                    assert_eq!(count, n - k, "rank {} count at n {}", k, n);
                }
                // No wire collisions within a column.
                for a in mesh.crossings() {
                    for b in mesh.crossings() {
                        if a.column == b.column && a.top_wire < b.top_wire {
                            assert!(a.top_wire + 1 < b.top_wire);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_crossing_mesh_matches_block() {
        let mut mesh = Mesh::new_reck(2).unwrap();
        mesh.set_theta(0, 0.0).unwrap();
        let u = mesh_unitary(&mesh);
        assert!(u.at(0, 0).norm() < 1e-15);
        assert!((u.at(0, 1) - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((u.at(1, 0) - C64::new(0.0, 1.0)).norm() < 1e-15);
    }

    fn fill_phases(mesh: &mut Mesh, salt: f64) {
        for id in 0..mesh.crossing_count() {
            let x = id as f64;
            mesh.set_theta(id, (1.1 * x + salt).sin().abs() * PI * 0.9 + 0.05)
                .unwrap();
            mesh.set_phi(id, 2.3 * x + 0.7 * salt).unwrap();
        }
        let n = mesh.size();
        for p in 0..n {
            mesh.set_input_phase(p, 0.9 * p as f64 + salt).unwrap();
        }
    }

    #[test]
    fn mesh_unitary_matches_embedded_product() {
        let mut mesh = Mesh::new_reck(3).unwrap();
        fill_phases(&mut mesh, 0.4);
        let mut want = ComplexMat::identity(3);
        for (k, &d) in mesh.input_phases().iter().enumerate() {
            want.set(k, k, C64::from_polar(1.0, d));
        }
        for c in mesh.crossings() {
            let b = crossing_transfer(c);
            want = embed_block(3, c.top_wire, &b).unwrap().mul(&want);
        }
        let got = mesh_unitary(&mesh);
        assert!(matrix_error(&got, &want).unwrap() < 1e-14);
    }

    #[test]
    fn mesh_unitary_is_unitary_for_all_layouts() {
        for n in [2usize, 5, 8] {
            for mut mesh in [
                Mesh::new_reck(n).unwrap(),
                Mesh::new_clements(n).unwrap(),
                Mesh::new_clements_tapped(n).unwrap(),
            ] {
                fill_phases(&mut mesh, 1.7);
                let u = mesh_unitary(&mesh);
                assert!(
                    u.unitarity_residual() < 1e-10 * n as f64,
                    "{:?} n {}",
                    mesh.topology(),
                    n
                );
            }
        }
    }

    #[test]
    fn bar_settings_with_mask_give_phased_permutation() {
        let mut mesh = Mesh::new_reck(3).unwrap();
        for id in 0..mesh.crossing_count() {
            mesh.set_theta(id, PI).unwrap();
            mesh.set_phi(id, 0.3 + id as f64).unwrap();
        }
        mesh.set_input_phase(0, 0.2).unwrap();
        mesh.set_input_phase(1, 1.2).unwrap();
        mesh.set_input_phase(2, 2.2).unwrap();
        let u = mesh_unitary(&mesh);
        for r in 0..3 {
            let mut ones = 0;
            for c in 0..3 {
                let m = u.at(r, c).norm();
                assert!(m < 1e-12 || (m - 1.0).abs() < 1e-12);
                if m > 0.5 {
                    ones += 1;
                }
            }
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn propagate_matches_full_matrix() {
        for n in [4usize, 8, 16] {
            for mut mesh in [
                Mesh::new_reck(n).unwrap(),
                Mesh::new_clements(n).unwrap(),
                Mesh::new_clements_tapped(n).unwrap(),
            ] {
                fill_phases(&mut mesh, 0.25 * n as f64);
                let input: Vec<C64> = (0..n)
                    .map(|k| C64::from_polar(1.0 / (k as f64 + 1.0), 0.31 * k as f64))
                    .collect();
                let u = mesh_unitary(&mesh);
                let want = u.mul_vec(&input);
                let got = propagate(&mesh, &input).unwrap();
                let err: f64 = want
                    .iter()
                    .zip(got.iter())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = norm2(&input).sqrt();
                assert!(err / scale < 1e-12, "{:?} n {}", mesh.topology(), n);
            }
        }
        let mesh = Mesh::new_reck(4).unwrap();
        assert!(propagate(&mesh, &[C64::new(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn taps_split_energy_and_pass_through_cleanly() {
        let n = 6;
        let mut mesh = Mesh::new_clements_tapped(n).unwrap();
        fill_phases(&mut mesh, 2.0);
        let input: Vec<C64> = (0..n).map(|k| C64::new(0.3 + k as f64, -0.2)).collect();

        // All through: behaves exactly like the plain rectangular mesh.
        let mut plain = Mesh::new_clements(n).unwrap();
        fill_phases(&mut plain, 2.0);
        let u_tapped = mesh_unitary(&mesh);
        let u_plain = mesh_unitary(&plain);
        assert!(matrix_error(&u_tapped, &u_plain).unwrap() < 1e-14);

        // All dropped: nothing reaches the outputs, taps carry all the energy.
        for w in 0..n {
            mesh.set_tap_state(w, TapState::ToDetector).unwrap();
        }
        let (out, taps) = propagate_full(&mesh, &input).unwrap();
        assert!(norm2(&out) < 1e-24);
        assert!((norm2(&taps) - norm2(&input)).abs() < 1e-10);

        // Mixed: energy conserved between outputs and taps.
        mesh.set_tap_state(2, TapState::Through).unwrap();
        mesh.set_tap_state(4, TapState::Through).unwrap();
        let (out, taps) = propagate_full(&mesh, &input).unwrap();
        assert!((norm2(&out) + norm2(&taps) - norm2(&input)).abs() < 1e-10);
    }

    #[test]
    fn splitter_sensitivity_is_sqrt_two() {
        let h = 1e-5;
        for mut mesh in [Mesh::new_reck(4).unwrap(), Mesh::new_clements(5).unwrap()] {
            fill_phases(&mut mesh, 0.9);
            for id in 0..mesh.crossing_count() {
                mesh.set_alpha_beta(id, 0.02 * ((id % 3) as f64 - 1.0), 0.015).unwrap();
            }
            for id in [0, mesh.crossing_count() / 2, mesh.crossing_count() - 1] {
                let c = mesh.crossing(id).unwrap().clone();
                for first in [true, false] {
                    let mut up = mesh.clone();
                    let mut dn = mesh.clone();
                    if first {
                        up.set_alpha_beta(id, c.alpha + h, c.beta).unwrap();
                        dn.set_alpha_beta(id, c.alpha - h, c.beta).unwrap();
                    } else {
                        up.set_alpha_beta(id, c.alpha, c.beta + h).unwrap();
                        dn.set_alpha_beta(id, c.alpha, c.beta - h).unwrap();
                    }
                    let diff = mesh_unitary(&up).sub(&mesh_unitary(&dn));
                    let deriv = diff.frobenius_norm() / (2.0 * h);
                    assert!(
                        (deriv - 2.0f64.sqrt()).abs() < 1e-3,
                        "sensitivity {} at crossing {}",
                        deriv,
                        id
                    );
                }
            }
        }
    }

    #[test]
    fn angle_setters_wrap_and_validate() {
        let mut mesh = Mesh::new_reck(3).unwrap();
        mesh.set_theta(0, -0.5).unwrap();
        assert!((mesh.crossing(0).unwrap().theta - (TAU - 0.5)).abs() < 1e-12);
        mesh.set_phi(0, TAU + 1.0).unwrap();
        assert!((mesh.crossing(0).unwrap().phi - 1.0).abs() < 1e-12);
        assert!(mesh.set_alpha_beta(0, 0.9, 0.0).is_err());
        assert!(mesh.set_theta(99, 0.0).is_err());
        assert!(mesh.set_tap_state(0, TapState::Through).is_err());
    }
}
