//! Lloyd's K-means with seeded restarts.
//!
//! Distances are squared Euclidean throughout, so the objective a restart
//! minimizes is exactly the inertia reported for it. Each restart alternates
//! nearest-centroid assignment with moving every centroid to the mean of its
//! cluster, and the best restart (lowest inertia, then lowest restart index)
//! is returned.
//!
//! Points are processed internally in a canonical (lexicographic) order, so a
//! run is a function of the point *set*: permuting the input permutes the
//! assignments and changes nothing else.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::Rng as _;
use thiserror::Error;

use crate::par;
use crate::seed::{child_rng, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KMeansError {
    #[error("TooFewPoints: {n} points cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("DimensionMismatch: expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("NonFinite: point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

impl KMeansError {
    pub fn kind(&self) -> &'static str {
        match self {
            KMeansError::TooFewPoints { .. } => "TooFewPoints",
            KMeansError::DimensionMismatch { .. } => "DimensionMismatch",
            KMeansError::NonFinite(_) => "NonFinite",
            KMeansError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// A dense row-major set of points of equal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, KMeansError> {
        if dim == 0 {
            return Err(KMeansError::InvalidConfig("dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(KMeansError::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(KMeansError::NonFinite(pos / dim));
        }
        Ok(PointSet { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, KMeansError> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(KMeansError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        PointSet::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    fn permuted(&self, order: &[usize]) -> PointSet {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        PointSet {
            dim: self.dim,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroid {
    pub cluster_id: usize,
    pub coords: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    /// Random initial partition; centroids start at the block means.
    RandomPartition,
    /// Distance-squared weighted seeding.
    #[default]
    PlusPlus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia improvement of an iteration is below this.
    pub tol: f64,
    pub restarts: usize,
    pub init: Init,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 2,
            max_iters: 300,
            tol: 1e-6,
            restarts: 10,
            init: Init::PlusPlus,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<(), KMeansError> {
        if self.k == 0 {
            return Err(KMeansError::InvalidConfig("k must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(KMeansError::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(KMeansError::InvalidConfig("tol must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The assignment did not change, so the result is a fixed point.
    Stable,
    /// Relative inertia improvement fell below the tolerance.
    Tolerance,
    MaxIters,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Stable => "stable",
            StopReason::Tolerance => "tolerance",
            StopReason::MaxIters => "max_iters",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Centroid>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// `inertia / n`.
    pub distortion_avg: f64,
    /// Inertia after the initial assignment and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub restart_index: usize,
    pub stop: StopReason,
}

impl ClusteringResult {
    /// Key-value header, one `point` line per input point, then one
    /// `centroid` line per cluster.
    pub fn to_text(&self, metadata: &[String]) -> String {
        let mut out = String::new();
        for line in metadata {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "k={}", self.k);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "inertia={}", self.inertia);
        let _ = writeln!(out, "distortion={}", self.distortion_avg);
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "restart={}", self.restart_index);
        let _ = writeln!(out, "stop={}", self.stop.name());
        for (i, a) in self.assignments.iter().enumerate() {
            let _ = writeln!(out, "point\t{i}\t{a}");
        }
        for c in &self.centroids {
            let _ = write!(out, "centroid\t{}", c.cluster_id);
            for x in &c.coords {
                let _ = write!(out, "\t{x}");
            }
            out.push('\n');
        }
        out
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Centroid]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, &c.coords);
        // strict comparison keeps the smallest cluster id on ties
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

fn check_centroids(points: &PointSet, centroids: &[Centroid]) -> Result<(), KMeansError> {
    if centroids.is_empty() {
        return Err(KMeansError::InvalidConfig("no centroids".into()));
    }
    if let Some(c) = centroids.iter().find(|c| c.coords.len() != points.dim()) {
        return Err(KMeansError::DimensionMismatch {
            expected: points.dim(),
            found: c.coords.len(),
        });
    }
    Ok(())
}

fn assign_with_distances(points: &PointSet, centroids: &[Centroid]) -> (Vec<usize>, Vec<f64>) {
    par::map_range(points.len(), |i| nearest(points.row(i), centroids))
        .into_iter()
        .unzip()
}

/// Assigns each point to its nearest centroid (lowest cluster id on ties).
pub fn assign_step(points: &PointSet, centroids: &[Centroid]) -> Result<Vec<usize>, KMeansError> {
    check_centroids(points, centroids)?;
    Ok(assign_with_distances(points, centroids).0)
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia(points: &PointSet, assignments: &[usize], centroids: &[Centroid]) -> f64 {
    points
        .rows()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a].coords))
        .sum()
}

/// Moves each centroid to the mean of its cluster.
///
/// A cluster left empty is reseeded at the point farthest from its own
/// centroid (points already used for a reseed are skipped, ties go to the
/// lowest point index), which keeps `k` constant.
///
/// # Panics
/// If an assignment is `>= k` or the assignment length differs from the
/// number of points.
pub fn update_step(points: &PointSet, assignments: &[usize], k: usize) -> Vec<Centroid> {
    assert_eq!(assignments.len(), points.len(), "one assignment per point");
    let dim = points.dim();
    let mut sums = vec![0.0; k * dim];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.rows().zip(assignments) {
        assert!(a < k, "assignment {a} out of range for k = {k}");
        sizes[a] += 1;
        sums[a * dim..(a + 1) * dim]
            .iter_mut()
            .zip(p)
            .for_each(|(s, x)| *s += x);
    }
    let mut centroids: Vec<Centroid> = (0..k)
        .map(|j| {
            let coords = if sizes[j] == 0 {
                vec![0.0; dim]
            } else {
                let n = sizes[j] as f64;
                sums[j * dim..(j + 1) * dim].iter().map(|s| s / n).collect()
            };
            Centroid {
                cluster_id: j,
                coords,
            }
        })
        .collect();

    let empty: Vec<usize> = (0..k).filter(|&j| sizes[j] == 0).collect();
    if !empty.is_empty() {
        let mut spread: Vec<(usize, f64)> = points
            .rows()
            .zip(assignments)
            .enumerate()
            .map(|(i, (p, &a))| (i, squared_distance(p, &centroids[a].coords)))
            .collect();
        spread.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (j, (i, _)) in empty.into_iter().zip(spread) {
            centroids[j].coords = points.row(i).to_vec();
        }
    }
    centroids
}

fn plus_plus_init(points: &PointSet, k: usize, rng: &mut Rng) -> Vec<Centroid> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .rows()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, p) in points.rows().enumerate() {
            let d = squared_distance(p, points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
        .into_iter()
        .enumerate()
        .map(|(j, i)| Centroid {
            cluster_id: j,
            coords: points.row(i).to_vec(),
        })
        .collect()
}

fn random_partition_init(points: &PointSet, k: usize, rng: &mut Rng) -> Vec<Centroid> {
    let labels: Vec<usize> = (0..points.len()).map(|_| rng.random_range(0..k)).collect();
    update_step(points, &labels, k)
}

fn single_restart(points: &PointSet, config: &KMeansConfig, restart: usize) -> ClusteringResult {
    let mut rng = child_rng(config.seed, &[restart as u64]);
    let k = config.k;
    let mut centroids = match config.init {
        Init::PlusPlus => plus_plus_init(points, k, &mut rng),
        Init::RandomPartition => random_partition_init(points, k, &mut rng),
    };
    let (mut assignments, dists) = assign_with_distances(points, &centroids);
    let mut current: f64 = dists.iter().sum();
    let mut trace = vec![current];
    let mut iterations = 0;
    let mut stop = StopReason::MaxIters;

    while iterations < config.max_iters {
        iterations += 1;
        centroids = update_step(points, &assignments, k);
        let (next, dists) = assign_with_distances(points, &centroids);
        let next_inertia: f64 = dists.iter().sum();
        trace.push(next_inertia);
        let stable = next == assignments;
        let improvement = if current > 0.0 {
            (current - next_inertia) / current
        } else {
            0.0
        };
        assignments = next;
        current = next_inertia;
        if stable {
            stop = StopReason::Stable;
            break;
        }
        if improvement < config.tol {
            stop = StopReason::Tolerance;
            break;
        }
    }

    if stop != StopReason::Stable {
        // leave the centroids at the means of the reported clusters
        centroids = update_step(points, &assignments, k);
        current = inertia(points, &assignments, &centroids);
        if current < *trace.last().expect("trace is never empty") {
            trace.push(current);
        } else {
            current = *trace.last().expect("trace is never empty");
        }
    }

    ClusteringResult {
        k,
        seed: config.seed,
        distortion_avg: current / points.len() as f64,
        inertia: current,
        assignments,
        centroids,
        trace,
        iterations,
        restart_index: restart,
        stop,
    }
}

fn canonical_order(points: &PointSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points
            .row(a)
            .iter()
            .zip(points.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Every restart, in restart order, each with assignments in input order.
pub fn run_all_restarts(
    points: &PointSet,
    config: &KMeansConfig,
) -> Result<Vec<ClusteringResult>, KMeansError> {
    config.validate()?;
    let n = points.len();
    if n < config.k {
        return Err(KMeansError::TooFewPoints { n, k: config.k });
    }
    let order = canonical_order(points);
    let canonical = points.permuted(&order);
    let mut results = par::map_range(config.restarts, |r| single_restart(&canonical, config, r));
    for result in &mut results {
        let mut assignments = vec![0; n];
        for (c, &original) in order.iter().enumerate() {
            assignments[original] = result.assignments[c];
        }
        result.assignments = assignments;
    }
    Ok(results)
}

/// Best-of-restarts K-means.
pub fn run(points: &PointSet, config: &KMeansConfig) -> Result<ClusteringResult, KMeansError> {
    let results = run_all_restarts(points, config)?;
    Ok(results
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("restarts >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> PointSet {
        PointSet::new(1, xs.to_vec()).unwrap()
    }

    fn centroids(cs: &[f64]) -> Vec<Centroid> {
        cs.iter()
            .enumerate()
            .map(|(j, &c)| Centroid {
                cluster_id: j,
                coords: vec![c],
            })
            .collect()
    }

    #[test]
    fn assign_examples() {
        let p = line(&[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(assign_step(&p, &centroids(&[0.0, 10.0])).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(assign_step(&p, &centroids(&[3.0])).unwrap(), vec![0; 4]);
        assert_eq!(assign_step(&line(&[5.0]), &centroids(&[4.0, 6.0])).unwrap(), vec![0]);
    }

    #[test]
    fn assign_rejects_dimension_mismatch() {
        let p = PointSet::new(2, vec![0.0, 0.0]).unwrap();
        assert_eq!(
            assign_step(&p, &centroids(&[1.0])).unwrap_err().kind(),
            "DimensionMismatch"
        );
    }

    #[test]
    fn update_examples() {
        let p = line(&[0.0, 1.0]);
        assert_eq!(update_step(&p, &[0, 0], 1)[0].coords, vec![0.5]);
        assert_eq!(update_step(&line(&[4.0]), &[0], 1)[0].coords, vec![4.0]);
        // cluster 1 is empty: reseeded at the point farthest from centroid 0
        let p = line(&[0.0, 1.0, 2.0, 9.0]);
        let c = update_step(&p, &[0, 0, 0, 0], 2);
        assert_eq!(c[0].coords, vec![3.0]);
        assert_eq!(c[1].coords, vec![9.0]);
    }

    #[test]
    fn run_finds_the_two_pairs() {
        let p = line(&[0.0, 1.0, 10.0, 11.0]);
        let r = run(&p, &KMeansConfig::default()).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        let mut cs: Vec<f64> = r.centroids.iter().map(|c| c.coords[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, vec![0.5, 10.5]);
        assert_eq!(r.inertia, 1.0);
        assert_eq!(r.distortion_avg, 0.25);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let p = PointSet::new(2, vec![0.0, 0.0, 1.0, 3.0, -2.0, 5.0, 7.0, 7.0]).unwrap();
        let r = run(&p, &KMeansConfig { k: 4, ..Default::default() }).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn k_one_sits_at_the_mean() {
        let p = line(&[1.0, 2.0, 6.0]);
        let r = run(&p, &KMeansConfig { k: 1, ..Default::default() }).unwrap();
        assert_eq!(r.centroids[0].coords, vec![3.0]);
        assert_eq!(r.inertia, 4.0 + 1.0 + 9.0);
    }

    #[test]
    fn too_few_points_and_bad_config() {
        let p = line(&[1.0]);
        assert_eq!(
            run(&p, &KMeansConfig::default()).unwrap_err(),
            KMeansError::TooFewPoints { n: 1, k: 2 }
        );
        let bad = KMeansConfig { restarts: 0, ..Default::default() };
        assert_eq!(run(&line(&[1.0, 2.0]), &bad).unwrap_err().kind(), "InvalidConfig");
        assert_eq!(PointSet::new(1, vec![f64::NAN]).unwrap_err(), KMeansError::NonFinite(0));
    }

    #[test]
    fn export_has_header_points_and_centroids() {
        let r = run(&line(&[0.0, 1.0, 10.0, 11.0]), &KMeansConfig::default()).unwrap();
        let text = r.to_text(&["tool: test".into()]);
        assert!(text.starts_with("# tool: test\nk=2\nseed=0\ninertia=1\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("point\t")).count(), 4);
        assert_eq!(text.lines().filter(|l| l.starts_with("centroid\t")).count(), 2);
    }

    fn dataset() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (1usize..4, 4usize..30).prop_flat_map(|(dim, n)| {
            (Just(dim), proptest::collection::vec(-5.0f64..5.0, dim * n))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn traces_never_increase((dim, data) in dataset(), k in 1usize..5, seed in any::<u64>(), random in any::<bool>()) {
            let p = PointSet::new(dim, data).unwrap();
            prop_assume!(p.len() >= k);
            let init = if random { Init::RandomPartition } else { Init::PlusPlus };
            let config = KMeansConfig { k, seed, init, restarts: 3, ..Default::default() };
            let all = run_all_restarts(&p, &config).unwrap();
            let best = run(&p, &config).unwrap();
            for r in &all {
                for w in r.trace.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
                prop_assert!(r.assignments.iter().all(|&a| a < k));
                prop_assert!(best.inertia <= r.inertia);
            }
        }

        #[test]
        fn converged_results_are_fixed_points((dim, data) in dataset(), k in 1usize..5, seed in any::<u64>()) {
            let p = PointSet::new(dim, data).unwrap();
            prop_assume!(p.len() >= k);
            let config = KMeansConfig { k, seed, tol: 0.0, max_iters: 1000, ..Default::default() };
            let r = run(&p, &config).unwrap();
            prop_assert_eq!(r.stop, StopReason::Stable);
            let again = assign_step(&p, &r.centroids).unwrap();
            prop_assert_eq!(&again, &r.assignments);
            // summation order differs from the canonical order used inside run
            for (c, d) in update_step(&p, &again, k).iter().zip(&r.centroids) {
                for (x, y) in c.coords.iter().zip(&d.coords) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn permuting_points_permutes_assignments((dim, data) in dataset(), seed in any::<u64>(), shift in 1usize..50, random in any::<bool>()) {
            let p = PointSet::new(dim, data).unwrap();
            let n = p.len();
            let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            prop_assume!({ let mut s = perm.clone(); s.sort(); s.dedup(); s.len() == n });
            let q = p.permuted(&perm);
            let init = if random { Init::RandomPartition } else { Init::PlusPlus };
            let config = KMeansConfig { k: 3.min(n), seed, init, ..Default::default() };
            let a = run(&p, &config).unwrap();
            let b = run(&q, &config).unwrap();
            for (i, &src) in perm.iter().enumerate() {
                prop_assert_eq!(b.assignments[i], a.assignments[src]);
            }
            prop_assert_eq!(a.inertia, b.inertia);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let data: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let p = PointSet::new(2, data).unwrap();
        let config = KMeansConfig { k: 4, seed: 99, ..Default::default() };
        let a = crate::par::with_jobs(crate::par::Jobs::Threads(1), || run(&p, &config).unwrap());
        let b = crate::par::with_jobs(crate::par::Jobs::Threads(4), || run(&p, &config).unwrap());
        assert_eq!(a, b);
    }
}
