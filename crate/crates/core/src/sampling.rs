//! Haar-measure sampling of mesh phases and the splitter error models.
//!
//! Sampling a mesh uniformly over the unitary group reduces to drawing each
//! cell's internal angle from a rank-dependent density
//! `P(theta | k) = k sin(theta/2) cos(theta/2)^(2k-1)` and every external
//! phase uniformly. The rank k of a cell is fixed by the layout and stored on
//! the cell at construction. A QR-based sampler over dense matrices is kept
//! alongside as an independent oracle.

use std::f64::consts::TAU;

use crate::matrix::{ComplexMat, C64};
use crate::mesh::{Mesh, Topology};
use crate::{MeshError, Result};

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, platform-independent generator (SplitMix64 core).
///
/// Every (master_seed, stream_index) pair yields an independent, reproducible
/// stream; parallel trials take distinct stream indices.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(master_seed: u64, stream_index: u64) -> SeededRng {
        let salted = stream_index
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x243F_6A88_85A3_08D3);
        SeededRng {
            state: mix64(master_seed ^ mix64(salted)),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(self.state)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1); safe under log and roots.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform angle on [0, 2*pi).
    pub fn angle(&mut self) -> f64 {
        self.uniform() * TAU
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.uniform_open().ln()).sqrt();
        let a = TAU * self.uniform();
        self.spare_normal = Some(r * a.sin());
        r * a.cos()
    }
}

/// Splitter imperfection models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorModel {
    None,
    /// Independent zero-mean Gaussian deviations with the given rms, drawn
    /// per coupler.
    UncorrelatedGaussian(f64),
    /// Every coupler off by the same constant angle.
    FullyCorrelated(f64),
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorModel::None => Ok(()),
            ErrorModel::UncorrelatedGaussian(s) if s.is_finite() && s >= 0.0 => Ok(()),
            ErrorModel::FullyCorrelated(m) if m.is_finite() => Ok(()),
            _ => Err(MeshError::InvalidParameter(format!(
                "invalid error model {:?}",
                self
            ))),
        }
    }
}

/// CDF of the rank-k internal angle density: `F(theta) = 1 - cos(theta/2)^(2k)`.
pub fn theta_cdf(k: usize, theta: f64) -> f64 {
    1.0 - (theta / 2.0).cos().powi(2 * k as i32)
}

/// Draws theta in [0, pi] from `P(theta | k)` by inverting the CDF:
/// `theta = 2 arccos(u^(1/(2k)))`.
pub fn sample_theta(k: usize, rng: &mut SeededRng) -> Result<f64> {
    if k < 1 {
        return Err(MeshError::InvalidParameter(
            "rank k must be at least 1".into(),
        ));
    }
    let u = rng.uniform_open();
    Ok(2.0 * u.powf(1.0 / (2.0 * k as f64)).acos())
}

/// Samples an ideal (alpha = beta = 0) mesh whose unitary is Haar-distributed.
///
/// Cells are visited in stored order; each draws theta from its rank density
/// and phi uniformly. For the plain layouts the input mask is drawn uniformly;
/// for the tapped layout the input mask stays zero and the mid-mesh phase
/// screen is drawn uniformly instead (the two are redundant parameterizations
/// of the same group).
pub fn sample_haar_mesh(n: usize, topology: Topology, rng: &mut SeededRng) -> Result<Mesh> {
    let mut mesh = match topology {
        Topology::Reck => Mesh::new_reck(n)?,
        Topology::Clements => Mesh::new_clements(n)?,
        Topology::ClementsTapped => Mesh::new_clements_tapped(n)?,
    };
    for id in 0..mesh.crossing_count() {
        let k = mesh.crossing(id)?.rank;
        let theta = sample_theta(k, rng)?;
        mesh.set_theta(id, theta)?;
        mesh.set_phi(id, rng.angle())?;
    }
    match topology {
        Topology::Reck | Topology::Clements => {
            for p in 0..n {
                mesh.set_input_phase(p, rng.angle())?;
            }
        }
        Topology::ClementsTapped => {
            for w in 0..n {
                mesh.set_diag_phase(w, rng.angle())?;
            }
        }
    }
    Ok(mesh)
}

/// Haar-random N x N unitary via QR of a complex Ginibre matrix (modified
/// Gram-Schmidt; the R diagonal comes out real positive, which makes Q unique
/// and Haar-distributed). Independent of the mesh parameterization.
pub fn sample_haar_qr(n: usize, rng: &mut SeededRng) -> ComplexMat {
    let root_half = 0.5f64.sqrt();
    let mut cols: Vec<Vec<C64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| C64::new(rng.normal() * root_half, rng.normal() * root_half))
                .collect()
        })
        .collect();
    for j in 0..n {
        for i in 0..j {
            let r: C64 = (0..n).map(|k| cols[i][k].conj() * cols[j][k]).sum();
            for k in 0..n {
                let v = cols[i][k];
                cols[j][k] -= r * v;
            }
        }
        let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for k in 0..n {
            cols[j][k] /= norm;
        }
    }
    ComplexMat::from_fn(n, n, |r, c| cols[c][r])
}

/// Returns a copy of the mesh with splitter errors assigned by the model.
///
/// Gaussian draws are clamped just inside the validity domain |e| < pi/4;
/// with realistic sigma values the clamp is unreachable.
pub fn apply_errors(mesh: &Mesh, model: ErrorModel, rng: &mut SeededRng) -> Mesh {
    let limit = std::f64::consts::FRAC_PI_4 - 1e-9;
    let mut out = mesh.clone();
    for id in 0..out.crossing_count() {
        let (a, b) = match model {
            ErrorModel::None => (0.0, 0.0),
            ErrorModel::UncorrelatedGaussian(sigma) => {
                (sigma * rng.normal(), sigma * rng.normal())
            }
            ErrorModel::FullyCorrelated(mu) => (mu, mu),
        };
        out.set_alpha_beta(id, a.clamp(-limit, limit), b.clamp(-limit, limit))
            .expect("clamped splitter errors are always valid");
    }
    out
}
