//! Triangular membership functions and fuzzy c-means.
//!
//! Distances are squared Euclidean norms `d_ji = ||x_i - c_j||²` and the
//! membership of point `i` in cluster `j` is
//!
//! ```text
//! μ_j(x_i) = (1/d_ji)^(1/(m-1)) / Σ_k (1/d_ki)^(1/(m-1))
//! ```
//!
//! with centers re-estimated as `c_j = Σ_i μ_j(x_i)^m x_i / Σ_i μ_j(x_i)^m`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Fuzzifier used when none is given.
pub const DEFAULT_FUZZIFIER: f64 = 1.2;
/// Commonly recommended fuzzifier interval.
pub const RECOMMENDED_FUZZIFIER: (f64, f64) = (1.25, 2.0);
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const STATE_FORMAT: &str = "lomatch-fcm-state";
pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangularMF {
    a: f64,
    c: f64,
    b: f64,
}

impl TriangularMF {
    /// Lower bound `a`, peak `c`, upper bound `b`; requires `a <= c <= b`.
    pub fn new(a: f64, c: f64, b: f64) -> Result<Self> {
        if a.is_nan() || c.is_nan() || b.is_nan() || a > c || c > b {
            return Err(Error::InvalidParameter(format!(
                "triangular MF needs a <= c <= b, got ({a}, {c}, {b})"
            )));
        }
        Ok(Self { a, c, b })
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn peak(&self) -> f64 {
        self.c
    }

    pub fn upper(&self) -> f64 {
        self.b
    }

    pub fn membership(&self, x: f64) -> f64 {
        triangular_membership(self, x)
    }
}

/// Piecewise-linear membership. Exactly 1 at the peak (including degenerate
/// flanks); 0 at and beyond the upper bound when `c < b`.
pub fn triangular_membership(mf: &TriangularMF, x: f64) -> f64 {
    let TriangularMF { a, c, b } = *mf;
    if x == c {
        1.0
    } else if x < a || x >= b {
        0.0
    } else if x < c {
        (x - a) / (c - a)
    } else {
        (b - x) / (b - c)
    }
}

/// Evenly spaced triangular sets over `[lo, hi]`, one per class, in input
/// order. Each flank reaches the neighbouring peak; the outermost flanks are
/// vertical at the range ends. A single class peaks at the midpoint.
pub fn fuzzify_class_labels(
    classes: &[String],
    lo: f64,
    hi: f64,
) -> Result<Vec<(String, TriangularMF)>> {
    if classes.is_empty() {
        return Err(Error::InvalidParameter("need at least one class".into()));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidParameter(format!("empty range [{lo}, {hi}]")));
    }
    if classes.len() == 1 {
        return Ok(vec![(
            classes[0].clone(),
            TriangularMF::new(lo, (lo + hi) / 2.0, hi)?,
        )]);
    }
    let step = (hi - lo) / (classes.len() - 1) as f64;
    let last = classes.len() - 1;
    classes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let peak = if i == last { hi } else { lo + step * i as f64 };
            let a = if i == 0 {
                lo
            } else {
                lo + step * (i - 1) as f64
            };
            let b = if i + 1 >= last {
                hi
            } else {
                lo + step * (i + 1) as f64
            };
            Ok((name.clone(), TriangularMF::new(a, peak, b)?))
        })
        .collect()
}

/// Degrees of membership; rows are points, columns clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipMatrix {
    rows: Vec<Vec<f64>>,
}

impl MembershipMatrix {
    /// Validates entries in `[0, 1]` and unit row sums (1e-9).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!(
                    "row {i} has a membership outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, point: usize, cluster: usize) -> f64 {
        self.rows[point][cluster]
    }

    pub fn n_points(&self) -> usize {
        self.rows.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_fuzzifier(m: f64) -> Result<()> {
    if m.is_nan() || m <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "fuzzifier must exceed 1, got {m}"
        )));
    }
    Ok(())
}

fn check_dims<P: AsRef<[f64]>>(points: &[P], centers: &[Vec<f64>]) -> Result<usize> {
    let dim = centers
        .first()
        .map(Vec::len)
        .or_else(|| points.first().map(|p| p.as_ref().len()))
        .unwrap_or(0);
    for c in centers {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
    }
    for p in points {
        if p.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.as_ref().len(),
            });
        }
    }
    Ok(dim)
}

fn membership_row(x: &[f64], centers: &[Vec<f64>], m: f64) -> Vec<f64> {
    let d: Vec<f64> = centers.iter().map(|c| squared_distance(x, c)).collect();
    let zeros = d.iter().filter(|&&v| v == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        return d
            .iter()
            .map(|&v| if v == 0.0 { share } else { 0.0 })
            .collect();
    }
    // (1/d)^e normalized, evaluated as a softmax over -e·ln d for range safety
    let e = 1.0 / (m - 1.0);
    let logs: Vec<f64> = d.iter().map(|v| -e * v.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Membership of every point in every cluster.
pub fn fcm_memberships<P: AsRef<[f64]> + Sync>(
    points: &[P],
    centers: &[Vec<f64>],
    m: f64,
) -> Result<MembershipMatrix> {
    if centers.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 clusters, got {}",
            centers.len()
        )));
    }
    check_fuzzifier(m)?;
    check_dims(points, centers)?;
    let rows = par::map(points, |p| membership_row(p.as_ref(), centers, m));
    Ok(MembershipMatrix { rows })
}

/// Weighted centers; `None` for a cluster with no membership mass.
fn weighted_centers<P: AsRef<[f64]>>(
    points: &[P],
    u: &MembershipMatrix,
    m: f64,
    dim: usize,
) -> Vec<Option<Vec<f64>>> {
    (0..u.n_clusters())
        .map(|j| {
            let mut num = vec![0.0; dim];
            let mut den = 0.0;
            for (i, p) in points.iter().enumerate() {
                let w = u.get(i, j).powf(m);
                if w == 0.0 {
                    continue;
                }
                den += w;
                for (acc, x) in num.iter_mut().zip(p.as_ref()) {
                    *acc += w * x;
                }
            }
            (den > 0.0).then(|| num.into_iter().map(|v| v / den).collect())
        })
        .collect()
}

pub fn fcm_update_centers<P: AsRef<[f64]>>(
    points: &[P],
    memberships: &MembershipMatrix,
    m: f64,
) -> Result<Vec<Vec<f64>>> {
    check_fuzzifier(m)?;
    if memberships.n_points() != points.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: memberships.n_points(),
        });
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    weighted_centers(points, memberships, m, dim)
        .into_iter()
        .enumerate()
        .map(|(j, c)| c.ok_or(Error::ZeroMass(j)))
        .collect()
}

/// `Σ_ij μ_j(x_i)^m d_ji`.
pub fn fcm_objective<P: AsRef<[f64]>>(
    points: &[P],
    centers: &[Vec<f64>],
    memberships: &MembershipMatrix,
    m: f64,
) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            centers
                .iter()
                .enumerate()
                .map(|(j, c)| memberships.get(i, j).powf(m) * squared_distance(p.as_ref(), c))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmParams {
    pub clusters: usize,
    pub m: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Starting centers; drawn from the data when absent.
    pub init: Option<Vec<Vec<f64>>>,
}

impl FcmParams {
    pub fn new(clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            m: DEFAULT_FUZZIFIER,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed,
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcmState {
    pub format: String,
    pub format_version: u32,
    pub centers: Vec<Vec<f64>>,
    pub memberships: MembershipMatrix,
    pub m: f64,
    pub tol: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest center move in the final iteration.
    pub displacement: f64,
    /// Objective after each center update.
    pub objective_history: Vec<f64>,
}

impl FcmState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)?;
        if state.format != STATE_FORMAT || state.format_version != STATE_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported state format {} v{}",
                state.format, state.format_version
            )));
        }
        Ok(state)
    }
}

/// Alternates membership and center updates until no center moves by `tol`
/// or `max_iter` is reached. Deterministic for a given seed.
pub fn fcm_cluster<P: AsRef<[f64]> + Sync>(points: &[P], params: &FcmParams) -> Result<FcmState> {
    let p = params.clusters;
    if p < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 clusters, got {p}"
        )));
    }
    if points.len() < p {
        return Err(Error::InsufficientData(format!(
            "{} points for {p} clusters",
            points.len()
        )));
    }
    check_fuzzifier(params.m)?;
    if params.m < RECOMMENDED_FUZZIFIER.0 || params.m > RECOMMENDED_FUZZIFIER.1 {
        log::warn!(
            "fuzzifier {} outside the recommended interval [{}, {}]",
            params.m,
            RECOMMENDED_FUZZIFIER.0,
            RECOMMENDED_FUZZIFIER.1
        );
    }
    if params.tol.is_nan() || params.tol <= 0.0 || params.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "tol must be positive and max_iter at least 1".into(),
        ));
    }

    let mut centers = match &params.init {
        Some(init) => {
            if init.len() != p {
                return Err(Error::InvalidParameter(format!(
                    "{} initial centers for {p} clusters",
                    init.len()
                )));
            }
            init.clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            index::sample(&mut rng, points.len(), p)
                .into_iter()
                .map(|i| points[i].as_ref().to_vec())
                .collect()
        }
    };
    let dim = check_dims(points, &centers)?;

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut displacement = f64::INFINITY;
    while iterations < params.max_iter {
        let u = fcm_memberships(points, &centers, params.m)?;
        let next: Vec<Vec<f64>> = weighted_centers(points, &u, params.m, dim)
            .into_iter()
            .enumerate()
            .map(|(j, c)| c.unwrap_or_else(|| revive_center(points, &u, j)))
            .collect();
        displacement = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        iterations += 1;
        history.push(fcm_objective(points, &centers, &u, params.m));
        if displacement < params.tol {
            converged = true;
            break;
        }
    }
    let memberships = fcm_memberships(points, &centers, params.m)?;
    Ok(FcmState {
        format: STATE_FORMAT.into(),
        format_version: STATE_FORMAT_VERSION,
        centers,
        memberships,
        m: params.m,
        tol: params.tol,
        seed: params.seed,
        iterations,
        converged,
        displacement,
        objective_history: history,
    })
}

/// Moves a dead center onto the point with the weakest strongest membership.
fn revive_center<P: AsRef<[f64]>>(points: &[P], u: &MembershipMatrix, cluster: usize) -> Vec<f64> {
    log::debug!("cluster {cluster} lost all membership mass; reinitializing");
    let (idx, _) = u
        .rows()
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (i, v)| if v < best.1 { (i, v) } else { best },
        );
    points[idx].as_ref().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mf(a: f64, c: f64, b: f64) -> TriangularMF {
        TriangularMF::new(a, c, b).unwrap()
    }

    #[test]
    fn triangular_cases() {
        let t = mf(0.0, 2.0, 4.0);
        assert_eq!(t.membership(2.0), 1.0);
        assert_eq!(t.membership(0.0), 0.0);
        assert_eq!(t.membership(1.0), 0.5);
        assert_eq!(t.membership(3.0), 0.5);
        assert_eq!(t.membership(4.0), 0.0);
        assert_eq!(t.membership(-1.0), 0.0);
        assert_eq!(t.membership(5.0), 0.0);
        // degenerate flanks peak at the shared point
        assert_eq!(mf(1.0, 1.0, 3.0).membership(1.0), 1.0);
        assert_eq!(mf(1.0, 3.0, 3.0).membership(3.0), 1.0);
        assert_eq!(mf(2.0, 2.0, 2.0).membership(2.0), 1.0);
        assert!(TriangularMF::new(1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn fuzzified_labels() {
        let one = fuzzify_class_labels(&["x".into()], 0.0, 1.0).unwrap();
        assert_eq!(one[0].1.peak(), 0.5);

        let two = fuzzify_class_labels(&["lo".into(), "hi".into()], 0.0, 1.0).unwrap();
        assert_eq!(two[0].1.peak(), 0.0);
        assert_eq!(two[1].1.peak(), 1.0);
        assert_eq!(two[0].1.membership(0.5), 0.5);
        assert_eq!(two[1].1.membership(0.5), 0.5);

        let three: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let three = fuzzify_class_labels(&three, 0.0, 1.0).unwrap();
        let peaks: Vec<f64> = three.iter().map(|(_, m)| m.peak()).collect();
        assert_eq!(peaks, vec![0.0, 0.5, 1.0]);
        assert_eq!(three[1].1.lower(), 0.0);
        assert_eq!(three[1].1.upper(), 1.0);
        assert!(fuzzify_class_labels(&[], 0.0, 1.0).is_err());
        assert!(fuzzify_class_labels(&["a".into()], 1.0, 1.0).is_err());
    }

    #[test]
    fn memberships_hand_cases() {
        let centers = vec![vec![0.0], vec![2.0]];
        let u = fcm_memberships(&[vec![1.0]], &centers, 2.0).unwrap();
        assert_eq!(u.row(0), &[0.5, 0.5]);

        let u = fcm_memberships(&[vec![2.0]], &centers, 2.0).unwrap();
        assert_eq!(u.row(0), &[0.0, 1.0]);

        // squared distances 1 and 4: (1/1) / (1/1 + 1/4) = 0.8
        let u = fcm_memberships(&[vec![1.0]], &[vec![0.0], vec![3.0]], 2.0).unwrap();
        assert!((u.get(0, 0) - 0.8).abs() < 1e-12);
        assert!((u.get(0, 1) - 0.2).abs() < 1e-12);

        // coincident centers split the point evenly
        let u = fcm_memberships(&[vec![1.0]], &[vec![1.0], vec![1.0], vec![5.0]], 2.0).unwrap();
        assert_eq!(u.row(0), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn membership_errors() {
        assert!(fcm_memberships(&[vec![1.0]], &[vec![0.0]], 2.0).is_err());
        assert!(fcm_memberships(&[vec![1.0]], &[vec![0.0], vec![1.0]], 1.0).is_err());
        assert!(matches!(
            fcm_memberships(&[vec![1.0, 2.0]], &[vec![0.0], vec![1.0]], 2.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn center_updates() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0]];
        let u = MembershipMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let c = fcm_update_centers(&pts, &u, 2.0).unwrap();
        assert_eq!(c[0], vec![1.0, 2.0]);

        let single = vec![vec![3.0, -1.0]];
        let u = MembershipMatrix::new(vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            fcm_update_centers(&single, &u, 2.0),
            Err(Error::ZeroMass(1))
        ));

        let u = MembershipMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let c = fcm_update_centers(&pts, &u, 1.2).unwrap();
        assert_eq!(c, pts);
    }

    #[test]
    fn converged_init_stops_after_one_iteration() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let first = fcm_cluster(
            &pts,
            &FcmParams {
                m: 2.0,
                ..FcmParams::new(2, 3)
            },
        )
        .unwrap();
        assert!(first.converged);
        let again = fcm_cluster(
            &pts,
            &FcmParams {
                m: 2.0,
                tol: 1e-6,
                init: Some(first.centers.clone()),
                ..FcmParams::new(2, 3)
            },
        )
        .unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.displacement < 1e-6);
    }

    #[test]
    fn same_seed_same_state() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let a = fcm_cluster(&pts, &FcmParams::new(3, 42)).unwrap();
        let b = fcm_cluster(&pts, &FcmParams::new(3, 42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(FcmState::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn one_cluster_per_point_is_crisp() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 3.0], vec![-2.0, 5.0]];
        let s = fcm_cluster(&pts, &FcmParams::new(3, 9)).unwrap();
        let mut centers = s.centers.clone();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want = pts.clone();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centers, want);
    }

    #[test]
    fn cluster_errors() {
        let pts = vec![vec![0.0]];
        assert!(fcm_cluster(&pts, &FcmParams::new(2, 0)).is_err());
        assert!(fcm_cluster(&[vec![0.0], vec![1.0]], &FcmParams::new(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..20),
            centers in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..5),
            m in 1.05f64..3.0,
        ) {
            let u = fcm_memberships(&pts, &centers, m).unwrap();
            for row in u.rows() {
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn objective_never_increases(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 6..30),
            p in 2usize..5,
            seed in 0u64..1000,
        ) {
            let s = fcm_cluster(&pts, &FcmParams { max_iter: 50, ..FcmParams::new(p, seed) }).unwrap();
            for w in s.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", s.objective_history);
            }
        }
    }
}
