use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;

use crate::simulation::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 50,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// 0-based cluster index per row.
    pub labels: Vec<usize>,
    /// `k × d` centers.
    pub centers: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    /// Objective after every assignment step of the winning restart, ending
    /// with the final objective.
    pub trace: Vec<f64>,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|j| (points[(i, j)] - centers[(c, j)]).powi(2))
        .sum()
}

fn sq_dist_rows(points: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..points.ncols())
        .map(|j| (points[(a, j)] - points[(b, j)]).powi(2))
        .sum()
}

/// Farthest-point seeding: a uniformly chosen first center, then repeatedly
/// the point farthest from the chosen set, ties broken at random.
fn seed_centers(points: &DMatrix<f64>, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let n = points.nrows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist_rows(points, i, chosen[0])).collect();
    while chosen.len() < k {
        let best = nearest
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .fold(f64::NEG_INFINITY, |m, (_, &d)| m.max(d));
        let ties: Vec<usize> = (0..n)
            .filter(|i| !chosen.contains(i) && nearest[*i] == best)
            .collect();
        let next = ties[rng.gen_range(0..ties.len())];
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist_rows(points, i, next));
        }
    }
    chosen
}

fn assign(points: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize]) -> (f64, bool) {
    let mut total = 0.0;
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        // ties keep the current label
        let current = if *label < centers.nrows() {
            (*label, sq_dist(points, i, centers, *label))
        } else {
            (0, f64::INFINITY)
        };
        let (best, d) = (0..centers.nrows())
            .map(|c| (c, sq_dist(points, i, centers, c)))
            .fold(current, |acc, x| if x.1 < acc.1 { x } else { acc });
        if best != *label {
            changed = true;
            *label = best;
        }
        total += d;
    }
    (total, changed)
}

fn update_centers(
    points: &DMatrix<f64>,
    labels: &[usize],
    centers: &mut DMatrix<f64>,
) -> Vec<usize> {
    let mut counts = vec![0usize; centers.nrows()];
    centers.fill(0.0);
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for j in 0..points.ncols() {
            centers[(l, j)] += points[(i, j)];
        }
    }
    for (c, &m) in counts.iter().enumerate() {
        if m > 0 {
            for j in 0..points.ncols() {
                centers[(c, j)] /= m as f64;
            }
        }
    }
    counts
}

/// Moves the point farthest from its center (among clusters with at least two
/// members) into each empty cluster.
fn repair_empty(
    points: &DMatrix<f64>,
    labels: &mut [usize],
    centers: &mut DMatrix<f64>,
    counts: &mut Vec<usize>,
) {
    while let Some(empty) = counts.iter().position(|&m| m == 0) {
        let donor = (0..points.nrows())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, sq_dist(points, i, centers, labels[i])))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| {
                if x.1 > acc.1 {
                    x
                } else {
                    acc
                }
            })
            .0;
        labels[donor] = empty;
        *counts = update_centers(points, labels, centers);
    }
}

fn objective(points: &DMatrix<f64>, labels: &[usize], centers: &DMatrix<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points, i, centers, l))
        .sum()
}

fn lloyd(points: &DMatrix<f64>, k: usize, max_iter: usize, rng: &mut SimRng) -> KMeansResult {
    let n = points.nrows();
    let seeds = seed_centers(points, k, rng);
    let mut centers = DMatrix::from_fn(k, points.ncols(), |c, j| points[(seeds[c], j)]);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (_, changed) = assign(points, &centers, &mut labels);
        trace.push(objective(points, &labels, &centers));
        if !changed && iterations > 0 {
            break;
        }
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        let mut counts = update_centers(points, &labels, &mut centers);
        repair_empty(points, &mut labels, &mut centers, &mut counts);
    }
    let mut counts = update_centers(points, &labels, &mut centers);
    if counts.contains(&0) {
        repair_empty(points, &mut labels, &mut centers, &mut counts);
    }
    let objective = objective(points, &labels, &centers);
    trace.push(objective);
    debug_assert!(
        trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0])),
        "Lloyd objective increased: {trace:?}"
    );
    KMeansResult {
        labels,
        centers,
        objective,
        iterations,
        restarts_used: 1,
        trace,
    }
}

/// Lloyd's algorithm with farthest-point seeding, best of `restarts` runs.
///
/// # Panics
/// If `k == 0`, `k > n` or the points have no columns.
pub fn kmeans(points: &DMatrix<f64>, k: usize, opts: &KMeansOptions) -> KMeansResult {
    let n = points.nrows();
    assert!(k >= 1 && k <= n, "k = {k} must lie in 1..={n}");
    assert!(points.ncols() >= 1, "points need at least one coordinate");
    let mut rng = SimRng::seed_from_u64(opts.seed);
    let restarts = opts.restarts.max(1);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(points, k, opts.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.restarts_used = restarts;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(values.len(), 1, values)
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let p = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let r = kmeans(&p, 1, &KMeansOptions::default());
        assert_eq!(r.labels, vec![0; 4]);
        assert!((r.centers[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((r.centers[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((r.objective - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_obvious_clusters() {
        let r = kmeans(
            &column(&[0.0, 0.1, 10.0, 10.1]),
            2,
            &KMeansOptions::default(),
        );
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
        assert!((r.objective - 0.01).abs() < 1e-12);
    }

    #[test]
    fn duplicated_points_keep_centers() {
        let base = [0.0, 0.3, 4.0, 4.4, 9.0];
        let doubled: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let a = kmeans(&column(&base), 3, &KMeansOptions::default());
        let b = kmeans(&column(&doubled), 3, &KMeansOptions::default());
        let mut ca: Vec<f64> = a.centers.iter().copied().collect();
        let mut cb: Vec<f64> = b.centers.iter().copied().collect();
        ca.sort_by(f64::total_cmp);
        cb.sort_by(f64::total_cmp);
        for (x, y) in ca.iter().zip(&cb) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((b.objective - 2.0 * a.objective).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let p = column(&[1.0, 1.0 + 1e-9, 1.0 + 2e-9]);
        let r = kmeans(&p, 3, &KMeansOptions::default());
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn identical_points_still_fill_every_cluster() {
        let p = column(&[5.0; 6]);
        let r = kmeans(&p, 3, &KMeansOptions::default());
        for c in 0..3 {
            assert!(r.labels.contains(&c));
        }
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let p = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 13) % 11) as f64);
        let opts = KMeansOptions {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(kmeans(&p, 4, &opts), kmeans(&p, 4, &opts));
    }
}
