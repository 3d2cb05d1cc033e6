//! Monte Carlo harness: deterministic parameter sweeps comparing
//! configuration methods across mesh sizes and error strengths, entrywise
//! error heatmaps, and statistical checks of the Haar phase sampler.
//!
//! Sweeps are reproducible bit for bit: every trial owns an RNG stream
//! derived from the master seed, trials run in parallel, and the assembled
//! rows are sorted by a fixed key before emission. The CSV layout is frozen
//! so downstream plotting scripts can rely on it.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::correction::{clements_decompose_with_errors, decompose_with_errors};
use crate::decompose::{clements_decompose, reck_decompose};
use crate::hardware::HardwareHandle;
use crate::matrix::{matrix_error, ComplexMat};
use crate::mesh::{mesh_unitary, Mesh, Topology};
use crate::sampling::{apply_errors, sample_haar_qr, sample_theta, theta_cdf, ErrorModel, SeededRng};
use crate::selfconfig::{configure_clements, configure_direct, configure_ratio};
use crate::{MeshError, Result};

/// Configuration strategy exercised by a sweep trial.
///
/// The declaration order doubles as the sort order of CSV rows within one
/// (size, error strength) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Error-blind settings from the ideal decomposition, applied as-is.
    None,
    /// White-box per-cell correction using the known splitter offsets.
    Local,
    /// Black-box element-by-element configuration through the top port.
    Direct,
    /// Black-box ratio configuration; on rectangular meshes this runs the
    /// two-stage tapped pipeline.
    Ratio,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Local => "local",
            Method::Direct => "direct",
            Method::Ratio => "ratio",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Method> {
        match s.trim() {
            "none" => Ok(Method::None),
            "local" => Ok(Method::Local),
            "direct" => Ok(Method::Direct),
            "ratio" => Ok(Method::Ratio),
            other => Err(MeshError::Parse(format!(
                "unknown method {:?} (expected none, local, direct or ratio)",
                other
            ))),
        }
    }
}

/// Which family of splitter errors a sweep draws from; the swept parameter
/// is the family's strength (rms for the independent draws, the common
/// offset for the correlated ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Uncorrelated,
    Correlated,
}

impl ErrorFamily {
    pub fn model(self, param: f64) -> ErrorModel {
        match self {
            ErrorFamily::Uncorrelated => ErrorModel::UncorrelatedGaussian(param),
            ErrorFamily::Correlated => ErrorModel::FullyCorrelated(param),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorFamily::Uncorrelated => "uncorrelated",
            ErrorFamily::Correlated => "correlated",
        }
    }
}

/// Everything needed to reproduce one parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub topology: Topology,
    pub methods: Vec<Method>,
    pub sizes: Vec<usize>,
    pub family: ErrorFamily,
    /// Error strengths, one sweep cell per (size, value) pair.
    pub params: Vec<f64>,
    /// Trials per cell; every method sees the same trial instances.
    pub trials: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(MeshError::InvalidParameter(
                "sweep needs at least one trial per cell".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(MeshError::InvalidParameter("no methods selected".into()));
        }
        if self.sizes.is_empty() {
            return Err(MeshError::InvalidParameter("no mesh sizes given".into()));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return Err(MeshError::InvalidParameter(format!(
                "mesh size must be at least 2, got {}",
                n
            )));
        }
        if let Some(&p) = self.params.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(MeshError::InvalidParameter(format!(
                "error parameters must be finite and nonnegative, got {}",
                p
            )));
        }
        if self.params.is_empty() {
            return Err(MeshError::InvalidParameter(
                "no error parameters given".into(),
            ));
        }
        Ok(())
    }
}

/// One CSV record: a single (cell, trial, method) outcome.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub topology: Topology,
    pub method: Method,
    pub n: usize,
    pub family: ErrorFamily,
    pub error_param: f64,
    /// Trial index within the cell.
    pub trial: usize,
    /// Self-contained trial seed: `SeededRng::new(seed, 0)` replays the
    /// target and hardware draws of this row without the master seed.
    pub seed: u64,
    /// Error of the error-blind settings on this trial's hardware.
    pub e_uncorrected: f64,
    /// Error after the row's method ran. NaN marks a method the topology
    /// cannot run (the sweep keeps going, the row records the gap).
    pub e_corrected: f64,
    /// Steps clamped at the lower reachability bound.
    pub n_unsat: usize,
    /// Detector readings consumed; zero for the white-box methods.
    pub measurements: usize,
    pub wall_ms: f64,
}

/// The frozen CSV column layout.
pub const CSV_HEADER: &str = "topology,method,N,error_model,error_param,trial,seed,E_uncorrected,E_corrected,n_unsat,measurements,wall_ms";

fn topology_label(t: Topology) -> &'static str {
    match t {
        Topology::Reck => "reck",
        Topology::Clements | Topology::ClementsTapped => "clements",
    }
}

/// Serializes rows under [`CSV_HEADER`]. Every field is numeric or a fixed
/// label, so no quoting is needed; floats use the shortest representation
/// that round-trips, keeping reruns byte-identical.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    use fmt::Write;

    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            topology_label(r.topology),
            r.method,
            r.n,
            r.family.label(),
            r.error_param,
            r.trial,
            r.seed,
            r.e_uncorrected,
            r.e_corrected,
            r.n_unsat,
            r.measurements,
            r.wall_ms
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn base_mesh(topology: Topology, n: usize) -> Result<Mesh> {
    match topology {
        Topology::Reck => Mesh::new_reck(n),
        // Sweeps on the rectangular layout always use the tapped variant so
        // the black-box pipeline has its monitors.
        Topology::Clements | Topology::ClementsTapped => Mesh::new_clements_tapped(n),
    }
}

fn blind_mesh(target: &ComplexMat, hardware: &Mesh) -> Result<Mesh> {
    let ideal = match hardware.topology() {
        Topology::Reck => reck_decompose(target)?,
        Topology::Clements | Topology::ClementsTapped => clements_decompose(target)?,
    };
    let mut blind = hardware.clone();
    blind.adopt_phases(&ideal)?;
    Ok(blind)
}

/// Runs one method against one hardware instance and returns the transfer
/// matrix the device ends up realizing, plus (clipped steps, measurements).
fn realize_method(
    method: Method,
    target: &ComplexMat,
    hardware: &Mesh,
) -> Result<(ComplexMat, usize, usize)> {
    match method {
        Method::None => Ok((mesh_unitary(&blind_mesh(target, hardware)?), 0, 0)),
        Method::Local => {
            let (mesh, report) = match hardware.topology() {
                Topology::Reck => decompose_with_errors(target, hardware)?,
                _ => clements_decompose_with_errors(target, hardware)?,
            };
            Ok((mesh_unitary(&mesh), report.n_unsat, 0))
        }
        Method::Direct => {
            let mut hw = HardwareHandle::new(hardware.clone());
            let report = configure_direct(&mut hw, target)?;
            Ok((hw.hidden_unitary(), report.n_unsat, report.measurements_used))
        }
        Method::Ratio => {
            let mut hw = HardwareHandle::new(hardware.clone());
            let report = if hardware.topology() == Topology::ClementsTapped {
                configure_clements(&mut hw, target)?
            } else {
                configure_ratio(&mut hw, target)?
            };
            Ok((hw.hidden_unitary(), report.n_unsat, report.measurements_used))
        }
    }
}

struct Job {
    n: usize,
    param: f64,
    trial: usize,
    stream: u64,
}

fn run_cell_trial(spec: &SweepSpec, methods: &[Method], job: &Job) -> Result<Vec<SweepRow>> {
    let seed = SeededRng::new(spec.master_seed, job.stream).next_u64();
    let mut rng = SeededRng::new(seed, 0);
    let target = sample_haar_qr(job.n, &mut rng);
    let hardware = apply_errors(
        &base_mesh(spec.topology, job.n)?,
        spec.family.model(job.param),
        &mut rng,
    );
    let e_uncorrected = matrix_error(&mesh_unitary(&blind_mesh(&target, &hardware)?), &target)?;

    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let started = Instant::now();
        let outcome = realize_method(method, &target, &hardware);
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let (e_corrected, n_unsat, measurements) = match outcome {
            Ok((realized, n_unsat, measurements)) => {
                (matrix_error(&realized, &target)?, n_unsat, measurements)
            }
            // A method the layout cannot host is a property of the combo,
            // not a failure of the sweep: keep the row, mark the gap.
            Err(MeshError::UnsupportedTopology(_)) => (f64::NAN, 0, 0),
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            topology: spec.topology,
            method,
            n: job.n,
            family: spec.family,
            error_param: job.param,
            trial: job.trial,
            seed,
            e_uncorrected,
            e_corrected,
            n_unsat,
            measurements,
            wall_ms,
        });
    }
    Ok(rows)
}

/// Runs the full Monte Carlo grid. Trials execute in parallel on disjoint
/// RNG streams; all methods of a trial share the same target and hardware
/// instance, so per-trial comparisons are like against like. Rows come back
/// sorted by (size, error strength, method, trial) and are bit-identical
/// across reruns with the same spec.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut sizes = spec.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut params = spec.params.clone();
    params.sort_by(f64::total_cmp);
    params.dedup();
    let mut methods = spec.methods.clone();
    methods.sort_unstable();
    methods.dedup();

    let mut jobs = Vec::with_capacity(sizes.len() * params.len() * spec.trials);
    let mut stream = 0u64;
    for &n in &sizes {
        for &param in &params {
            for trial in 0..spec.trials {
                jobs.push(Job {
                    n,
                    param,
                    trial,
                    stream,
                });
                stream += 1;
            }
        }
    }

    let nested: Result<Vec<Vec<SweepRow>>> = jobs
        .par_iter()
        .map(|job| run_cell_trial(spec, &methods, job))
        .collect();
    let mut rows: Vec<SweepRow> = nested?.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(a.error_param.total_cmp(&b.error_param))
            .then(a.method.cmp(&b.method))
            .then(a.trial.cmp(&b.trial))
    });
    Ok(rows)
}

/// Configures one errored instance toward a Haar target and returns the
/// entrywise error magnitudes `|target - realized|`, row major. Shows where
/// in the matrix a method parks the damage it cannot remove.
pub fn error_heatmap(
    topology: Topology,
    n: usize,
    sigma: f64,
    method: Method,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let model = ErrorModel::UncorrelatedGaussian(sigma);
    model.validate()?;
    let mut rng = SeededRng::new(seed, 0);
    let target = sample_haar_qr(n, &mut rng);
    let hardware = apply_errors(&base_mesh(topology, n)?, model, &mut rng);
    let (realized, _, _) = realize_method(method, &target, &hardware)?;
    Ok((0..n)
        .map(|r| {
            (0..n)
                .map(|c| (target.at(r, c) - realized.at(r, c)).norm())
                .collect()
        })
        .collect())
}

/// One Kolmogorov-Smirnov comparison between sampled phases and the density
/// the Haar measure assigns them.
#[derive(Debug, Clone, Copy)]
pub struct KsCheck {
    /// Rank of the internal-angle density under test, or 0 for the check
    /// that external phases are uniform on [0, 2pi).
    pub rank: usize,
    pub samples: usize,
    /// KS distance between the empirical and reference CDFs.
    pub distance: f64,
    /// Asymptotic Kolmogorov tail probability of that distance.
    pub p_value: f64,
}

/// KS distance between a sample and a reference CDF. Sorts in place.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let m = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / m).max((i as f64 + 1.0) / m - f);
    }
    d
}

/// Two-sided Kolmogorov tail probability with the usual finite-sample
/// correction: Q(lambda) = 2 sum_j (-1)^(j-1) exp(-2 j^2 lambda^2) at
/// lambda = (sqrt(m) + 0.12 + 0.11/sqrt(m)) d.
pub fn ks_p_value(distance: f64, samples: usize) -> f64 {
    let root_m = (samples as f64).sqrt();
    let lambda = (root_m + 0.12 + 0.11 / root_m) * distance;
    if lambda < 0.05 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=128 {
        let term = (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-14 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Draws phases from the Haar sampler and KS-tests each rank's internal
/// angle against its reference CDF, plus the uniformity of the external
/// phase (reported as rank 0). Covers every rank appearing in an n-port
/// triangular mesh.
pub fn haar_stats_check(n: usize, samples: usize, seed: u64) -> Result<Vec<KsCheck>> {
    if n < 2 {
        return Err(MeshError::InvalidParameter(format!(
            "mesh size must be at least 2, got {}",
            n
        )));
    }
    if samples < 1000 {
        return Err(MeshError::InvalidParameter(format!(
            "statistics check needs at least 1000 samples, got {}",
            samples
        )));
    }
    let mut rng = SeededRng::new(seed, 0);
    let mut out = Vec::with_capacity(n);

    let mut phis: Vec<f64> = (0..samples).map(|_| rng.angle()).collect();
    let d = ks_distance(&mut phis, |x| x / (2.0 * PI));
    out.push(KsCheck {
        rank: 0,
        samples,
        distance: d,
        p_value: ks_p_value(d, samples),
    });

    for k in 1..n {
        let mut draws = Vec::with_capacity(samples);
        for _ in 0..samples {
            draws.push(sample_theta(k, &mut rng)?);
        }
        let d = ks_distance(&mut draws, |x| theta_cdf(k, x));
        out.push(KsCheck {
            rank: k,
            samples,
            distance: d,
            p_value: ks_p_value(d, samples),
        });
    }
    Ok(out)
}

/// Mean entry of the strict upper-left and lower-right triangles of a
/// square map, split along the anti-diagonal (which belongs to neither).
/// Returns (upper_left, lower_right).
pub fn triangle_means(map: &[Vec<f64>]) -> (f64, f64) {
    let n = map.len();
    let (mut ul, mut lr) = (0.0, 0.0);
    let mut count = 0usize;
    for (r, row) in map.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if r + c < n - 1 {
                ul += v;
                count += 1;
            } else if r + c > n - 1 {
                lr += v;
            }
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    (ul / count as f64, lr / count as f64)
}

/// Median of a sample, averaging the middle pair for even counts.
/// Returns NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(topology: Topology, methods: Vec<Method>, sizes: Vec<usize>, params: Vec<f64>) -> SweepSpec {
        SweepSpec {
            topology,
            methods,
            sizes,
            family: ErrorFamily::Uncorrelated,
            params,
            trials: 2,
            master_seed: 7,
        }
    }

    fn strip_wall_clock(csv: &str) -> String {
        csv.lines()
            .map(|line| match line.rsplit_once(',') {
                Some((head, _)) => head.to_string(),
                None => line.to_string(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn sweep_rows_come_back_sorted_and_within_bounds() {
        let s = spec(
            Topology::Reck,
            vec![Method::Ratio, Method::None, Method::Local],
            vec![8, 4],
            vec![0.02, 0.005],
        );
        let rows = run_sweep(&s).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2 * 3);
        for w in rows.windows(2) {
            let key = |r: &SweepRow| (r.n, r.error_param, r.method, r.trial);
            assert!(key(&w[0]) < key(&w[1]), "rows out of order");
        }
        for r in &rows {
            assert!(r.e_uncorrected >= 0.0 && r.e_uncorrected <= 2.0);
            assert!(r.e_corrected >= 0.0 && r.e_corrected <= 2.0);
            assert!(r.n_unsat <= r.n * (r.n - 1) / 2);
            assert!(r.trial < 2);
        }
    }

    #[test]
    fn methods_of_one_trial_share_the_instance() {
        let s = spec(
            Topology::Reck,
            vec![Method::None, Method::Local],
            vec![6],
            vec![0.01],
        );
        let rows = run_sweep(&s).unwrap();
        let none: Vec<_> = rows.iter().filter(|r| r.method == Method::None).collect();
        let local: Vec<_> = rows.iter().filter(|r| r.method == Method::Local).collect();
        for (a, b) in none.iter().zip(local.iter()) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.e_uncorrected, b.e_uncorrected);
        }
        // The blind run is its own corrected value by definition.
        for r in &none {
            assert_eq!(r.e_corrected, r.e_uncorrected);
        }
    }

    #[test]
    fn reruns_are_bit_identical_apart_from_wall_clock() {
        let s = spec(
            Topology::Reck,
            vec![Method::None, Method::Ratio],
            vec![5],
            vec![0.0, 0.01],
        );
        let a = rows_to_csv(&run_sweep(&s).unwrap());
        let b = rows_to_csv(&run_sweep(&s).unwrap());
        assert!(a.starts_with(CSV_HEADER));
        assert_eq!(strip_wall_clock(&a), strip_wall_clock(&b));
    }

    #[test]
    fn zero_error_sweep_reaches_machine_floor_for_every_method() {
        let s = SweepSpec {
            trials: 1,
            ..spec(
                Topology::Reck,
                vec![Method::None, Method::Local, Method::Direct, Method::Ratio],
                vec![5],
                vec![0.0],
            )
        };
        for r in run_sweep(&s).unwrap() {
            assert!(
                r.e_corrected < 1e-9,
                "{} left error {:.3e} on a perfect mesh",
                r.method,
                r.e_corrected
            );
        }
    }

    #[test]
    fn rectangular_sweep_marks_the_direct_method_per_row() {
        let s = SweepSpec {
            trials: 1,
            ..spec(
                Topology::ClementsTapped,
                vec![Method::Direct, Method::Ratio],
                vec![5],
                vec![0.01],
            )
        };
        let rows = run_sweep(&s).unwrap();
        assert_eq!(rows.len(), 2);
        let direct = rows.iter().find(|r| r.method == Method::Direct).unwrap();
        assert!(direct.e_corrected.is_nan());
        assert_eq!(direct.measurements, 0);
        assert!(direct.e_uncorrected.is_finite());
        let ratio = rows.iter().find(|r| r.method == Method::Ratio).unwrap();
        assert!(ratio.e_corrected.is_finite());
        assert!(ratio.measurements > 0);
        let csv = rows_to_csv(&rows);
        assert!(csv.contains("NaN"), "gap must still serialize");
    }

    #[test]
    fn heatmap_entries_square_sum_to_the_matrix_error() {
        let n = 6;
        let map = error_heatmap(Topology::Reck, n, 0.0, Method::Direct, 3).unwrap();
        assert_eq!(map.len(), n);
        for row in &map {
            assert_eq!(row.len(), n);
            for &v in row {
                assert!(v >= 0.0 && v < 1e-9);
            }
        }

        let map = error_heatmap(Topology::Reck, n, 0.05, Method::None, 3).unwrap();
        let total: f64 = map.iter().flatten().map(|v| v * v).sum();
        // Reconstruct the same instance by hand and compare norms.
        let mut rng = SeededRng::new(3, 0);
        let target = sample_haar_qr(n, &mut rng);
        let hardware = apply_errors(
            &base_mesh(Topology::Reck, n).unwrap(),
            ErrorModel::UncorrelatedGaussian(0.05),
            &mut rng,
        );
        let e = matrix_error(&mesh_unitary(&blind_mesh(&target, &hardware).unwrap()), &target).unwrap();
        assert!((total / n as f64 - e * e).abs() < 1e-12);
    }

    #[test]
    fn haar_check_accepts_its_own_sampler() {
        let checks = haar_stats_check(12, 1500, 0).unwrap();
        assert_eq!(checks.len(), 12);
        assert_eq!(checks[0].rank, 0);
        for c in &checks {
            assert!(
                c.p_value > 0.01,
                "rank {} rejected with p = {:.4}",
                c.rank,
                c.p_value
            );
        }
    }

    #[test]
    fn haar_check_flags_a_mismatched_distribution() {
        let mut rng = SeededRng::new(9, 0);
        let mut draws = Vec::with_capacity(2000);
        for _ in 0..2000 {
            draws.push(sample_theta(3, &mut rng).unwrap());
        }
        let d = ks_distance(&mut draws, |x| theta_cdf(1, x));
        assert!(ks_p_value(d, 2000) < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_matches_the_tabulated_critical_point() {
        // D = 1.358 / sqrt(m) is the classic 5% critical distance.
        let p = ks_p_value(1.358 / 1000f64.sqrt(), 1000);
        assert!((p - 0.05).abs() < 3e-3, "got {}", p);
        assert_eq!(ks_p_value(0.0, 1000), 1.0);
    }

    #[test]
    fn triangle_means_split_along_the_anti_diagonal() {
        // 3x3: anti-diagonal entries (0,2), (1,1), (2,0) count for neither.
        let map = vec![
            vec![1.0, 2.0, 9.0],
            vec![3.0, 9.0, 4.0],
            vec![9.0, 5.0, 6.0],
        ];
        let (ul, lr) = triangle_means(&map);
        assert_eq!(ul, 2.0);
        assert_eq!(lr, 5.0);
    }

    #[test]
    fn median_averages_the_middle_pair() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
