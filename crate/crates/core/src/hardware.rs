//! Black-box view of a programmable mesh.
//!
//! [`HardwareHandle`] wraps a [`Mesh`] whose splitter offsets are hidden and
//! exposes only what a lab user has: phase knobs, coherent input vectors, and
//! complex-field detectors on the outputs and taps. Every knob write and every
//! measurement is counted, so configuration algorithms can report their cost.
//!
//! The wrapped mesh is private. Self-configuration code compiles against this
//! interface alone; [`HardwareHandle::hidden_unitary`] exists purely so tests
//! and experiment reports can score a configuration against its target, and
//! must not be called from configuration logic.

use crate::matrix::{ComplexMat, C64};
use crate::mesh::{mesh_unitary, propagate_full, Mesh, TapState, Topology};
use crate::sampling::SeededRng;
use crate::{MeshError, Result};

/// A programmable phase on the device.
///
/// `Theta` and `Phi` address a cell by id, `Input` an element of the input
/// phase mask, and `Diag` a mid-mesh screen phase of the tapped layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseRef {
    Theta(usize),
    Phi(usize),
    Input(usize),
    Diag(usize),
}

/// Where a cell sits in the grid. Splitter offsets are deliberately absent.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub diag: usize,
    pub pos: usize,
    pub column: usize,
    pub top_wire: usize,
}

/// Coherent detector readings from a single measurement. `taps` is empty
/// unless the device has a tap screen.
#[derive(Debug, Clone)]
pub struct FieldReading {
    pub outputs: Vec<C64>,
    pub taps: Vec<C64>,
}

/// Simulated device handle. Constructed around a mesh (typically one with
/// sampled splitter errors) which it then keeps opaque.
pub struct HardwareHandle {
    mesh: Mesh,
    phase_sets: usize,
    measurements: usize,
    detector_noise: f64,
    noise_rng: SeededRng,
}

impl HardwareHandle {
    /// Noiseless handle around `mesh`.
    pub fn new(mesh: Mesh) -> HardwareHandle {
        HardwareHandle {
            mesh,
            phase_sets: 0,
            measurements: 0,
            detector_noise: 0.0,
            noise_rng: SeededRng::new(0, 0),
        }
    }

    /// Handle whose detectors add circular complex Gaussian noise of the
    /// given standard deviation (total, across both quadratures) to every
    /// field they report.
    pub fn with_detector_noise(mesh: Mesh, noise: f64, seed: u64) -> Result<HardwareHandle> {
        if !noise.is_finite() || noise < 0.0 {
            return Err(MeshError::InvalidParameter(format!(
                "detector noise must be finite and nonnegative, got {noise}"
            )));
        }
        Ok(HardwareHandle {
            mesh,
            phase_sets: 0,
            measurements: 0,
            detector_noise: noise,
            noise_rng: SeededRng::new(seed, 0xD_E7EC),
        })
    }

    pub fn size(&self) -> usize {
        self.mesh.size()
    }

    pub fn topology(&self) -> Topology {
        self.mesh.topology()
    }

    pub fn crossing_count(&self) -> usize {
        self.mesh.crossing_count()
    }

    /// Grid placement of cell `id`.
    pub fn geometry(&self, id: usize) -> Result<CellGeometry> {
        let c = self.mesh.crossing(id)?;
        Ok(CellGeometry {
            diag: c.diag,
            pos: c.pos,
            column: c.column,
            top_wire: c.top_wire,
        })
    }

    /// Cell id for diagonal coordinates, if such a cell exists.
    pub fn find_crossing(&self, diag: usize, pos: usize) -> Option<usize> {
        self.mesh.find_crossing(diag, pos)
    }

    /// Cell id for grid coordinates, if such a cell exists.
    pub fn find_cell(&self, column: usize, top_wire: usize) -> Option<usize> {
        self.mesh.find_cell(column, top_wire)
    }

    /// Whether cell `id` sits ahead of the tap screen in the tapped layout.
    /// Always true for the untapped layouts, which have no screen.
    pub fn is_left_cell(&self, id: usize) -> Result<bool> {
        let c = self.mesh.crossing(id)?;
        Ok(self.mesh.is_left_cell(c))
    }

    pub fn set_phase(&mut self, knob: PhaseRef, value: f64) -> Result<()> {
        self.phase_sets += 1;
        match knob {
            PhaseRef::Theta(id) => self.mesh.set_theta(id, value),
            PhaseRef::Phi(id) => self.mesh.set_phi(id, value),
            PhaseRef::Input(port) => self.mesh.set_input_phase(port, value),
            PhaseRef::Diag(wire) => self.mesh.set_diag_phase(wire, value),
        }
    }

    /// Current setting of a knob. Reading is free: the settings are the
    /// user's own state, not a property of the hidden mesh.
    pub fn get_phase(&self, knob: PhaseRef) -> Result<f64> {
        match knob {
            PhaseRef::Theta(id) => Ok(self.mesh.crossing(id)?.theta),
            PhaseRef::Phi(id) => Ok(self.mesh.crossing(id)?.phi),
            PhaseRef::Input(port) => {
                let phases = self.mesh.input_phases();
                phases.get(port).copied().ok_or_else(|| {
                    MeshError::InvalidParameter(format!(
                        "input port {port} out of range for size {}",
                        phases.len()
                    ))
                })
            }
            PhaseRef::Diag(wire) => {
                if self.mesh.topology() != Topology::ClementsTapped {
                    return Err(MeshError::NoTaps);
                }
                let phases = self.mesh.diag_phases();
                phases.get(wire).copied().ok_or_else(|| {
                    MeshError::InvalidParameter(format!(
                        "diag wire {wire} out of range for size {}",
                        phases.len()
                    ))
                })
            }
        }
    }

    /// Adds `delta` to a knob. Counts as one phase write.
    pub fn shift_phase(&mut self, knob: PhaseRef, delta: f64) -> Result<()> {
        let value = self.get_phase(knob)?;
        self.set_phase(knob, value + delta)
    }

    pub fn set_tap_state(&mut self, wire: usize, state: TapState) -> Result<()> {
        self.phase_sets += 1;
        self.mesh.set_tap_state(wire, state)
    }

    pub fn tap_state(&self, wire: usize) -> Result<TapState> {
        self.mesh.tap_state(wire)
    }

    /// Injects a coherent field vector and returns the detector readings.
    ///
    /// The input must have length `size()` and carry nonzero energy. For a
    /// noiseless handle, output plus tap energy equals input energy to
    /// machine precision.
    pub fn measure(&mut self, input: &[C64]) -> Result<FieldReading> {
        let energy: f64 = input.iter().map(|z| z.norm_sqr()).sum();
        if energy <= 0.0 || !energy.is_finite() {
            return Err(MeshError::InvalidParameter(
                "measurement input must carry finite nonzero energy".into(),
            ));
        }
        self.measurements += 1;
        let (mut outputs, mut taps) = propagate_full(&self.mesh, input)?;
        if self.detector_noise > 0.0 {
            let s = self.detector_noise / std::f64::consts::SQRT_2;
            for z in outputs.iter_mut().chain(taps.iter_mut()) {
                *z += C64::new(s * self.noise_rng.normal(), s * self.noise_rng.normal());
            }
        }
        Ok(FieldReading { outputs, taps })
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn phase_sets(&self) -> usize {
        self.phase_sets
    }

    /// Ground-truth transfer matrix of the device in its current state.
    ///
    /// Evaluation oracle only: reports and tests use it to score a
    /// configuration. Algorithms that claim to be black-box must not call it.
    pub fn hidden_unitary(&self) -> ComplexMat {
        mesh_unitary(&self.mesh)
    }
}
