//! Hyperbolic (TDoA) positioning.
//!
//! Every anchor pair `(i, j)` contributes one difference in distance of
//! arrival, `c * (t_i - t_j)`, which constrains the tag to one sheet of a
//! hyperboloid. [`solve_tdoa`] intersects those sheets in the least-squares
//! sense with a damped Gauss-Newton (Levenberg-Marquardt) iteration.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed used for every time/distance conversion, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Point3 = Vector3<f64>;

/// A fixed receiver at a known position (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "AnchorRecord", into = "AnchorRecord")]
pub struct Anchor {
    pub id: u32,
    pub position: Point3,
}

#[derive(Serialize, Deserialize)]
struct AnchorRecord {
    id: u32,
    x: f64,
    y: f64,
    z: f64,
}

impl From<AnchorRecord> for Anchor {
    fn from(r: AnchorRecord) -> Self {
        Anchor::new(r.id, r.x, r.y, r.z)
    }
}

impl From<Anchor> for AnchorRecord {
    fn from(a: Anchor) -> Self {
        AnchorRecord {
            id: a.id,
            x: a.position.x,
            y: a.position.y,
            z: a.position.z,
        }
    }
}

impl Anchor {
    pub fn new(id: u32, x: f64, y: f64, z: f64) -> Self {
        Self {
            id,
            position: Point3::new(x, y, z),
        }
    }
}

/// Checks that anchor ids are unique and positions finite.
pub fn validate_anchors(anchors: &[Anchor]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for a in anchors {
        if !seen.insert(a.id) {
            return Err(Error::InvalidArgument(format!("duplicate anchor id {}", a.id)));
        }
        if !a.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "anchor {} has a non-finite position",
                a.id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdoaPair {
    pub i: u32,
    pub j: u32,
    /// `d_i - d_j` in meters.
    pub ddoa: f64,
}

/// A validated set of distance differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdoaSet {
    pairs: Vec<DdoaPair>,
    anchor_ids: Vec<u32>,
}

impl DdoaSet {
    pub fn new(pairs: Vec<DdoaPair>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut ids = Vec::new();
        for p in &pairs {
            if p.i == p.j {
                return Err(Error::InvalidArgument(format!("pair references anchor {} twice", p.i)));
            }
            if !p.ddoa.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite ddoa for pair ({}, {})",
                    p.i, p.j
                )));
            }
            let key = (p.i.min(p.j), p.i.max(p.j));
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!(
                    "pair ({}, {}) appears more than once",
                    p.i, p.j
                )));
            }
            for id in [p.i, p.j] {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        Ok(Self { pairs, anchor_ids: ids })
    }

    pub fn pairs(&self) -> &[DdoaPair] {
        &self.pairs
    }

    /// Contributing anchors in order of first appearance.
    pub fn anchor_ids(&self) -> &[u32] {
        &self.anchor_ids
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Every unordered pair once, `N(N-1)/2` pairs.
    AllPairs,
    /// `N-1` pairs against the earliest receiver.
    #[default]
    ReferenceAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: Point3,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn ensure_finite(v: &Point3, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} is not finite")))
    }
}

pub fn euclidean_distance(p: &Point3, a: &Point3) -> Result<f64> {
    ensure_finite(p, "point")?;
    ensure_finite(a, "point")?;
    Ok((p - a).norm())
}

/// `d_i - d_j` for the tag at `p`.
pub fn true_ddoa(p: &Point3, a_i: &Anchor, a_j: &Anchor) -> Result<f64> {
    if a_i.id == a_j.id {
        return Err(Error::InvalidArgument(format!(
            "true_ddoa called with anchor {} twice",
            a_i.id
        )));
    }
    Ok(euclidean_distance(p, &a_i.position)? - euclidean_distance(p, &a_j.position)?)
}

/// Converts reception timestamps (seconds) to distance differences.
pub fn measured_ddoa_set(timestamps: &BTreeMap<u32, f64>, policy: PairPolicy) -> Result<DdoaSet> {
    if timestamps.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 timestamps, got {}",
            timestamps.len()
        )));
    }
    if let Some((id, _)) = timestamps.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "timestamp of anchor {id} is not finite"
        )));
    }
    let ddoa = |i: u32, j: u32| SPEED_OF_LIGHT * (timestamps[&i] - timestamps[&j]);
    let ids: Vec<u32> = timestamps.keys().copied().collect();
    let pairs = match policy {
        PairPolicy::AllPairs => {
            let mut pairs = Vec::with_capacity(ids.len() * (ids.len() - 1) / 2);
            for (k, &i) in ids.iter().enumerate() {
                for &j in &ids[k + 1..] {
                    pairs.push(DdoaPair { i, j, ddoa: ddoa(i, j) });
                }
            }
            pairs
        }
        PairPolicy::ReferenceAnchor => {
            // BTreeMap iteration is id-ascending, so ties go to the lower id.
            let reference =
                ids.iter().copied().fold(
                    ids[0],
                    |best, id| if timestamps[&id] < timestamps[&best] { id } else { best },
                );
            ids.iter()
                .filter(|&&i| i != reference)
                .map(|&i| DdoaPair {
                    i,
                    j: reference,
                    ddoa: ddoa(i, reference),
                })
                .collect()
        }
    };
    DdoaSet::new(pairs)
}

fn anchor_lookup(anchors: &[Anchor]) -> HashMap<u32, Point3> {
    anchors.iter().map(|a| (a.id, a.position)).collect()
}

/// Per-pair residual `[d_i(p) - d_j(p)] - ddoa_ij`.
pub fn residuals(p: &Point3, ddoas: &DdoaSet, anchors: &[Anchor]) -> Result<Vec<f64>> {
    let lookup = anchor_lookup(anchors);
    ddoas
        .pairs()
        .iter()
        .map(|pair| {
            let ai = lookup.get(&pair.i).ok_or(Error::MissingAnchor(pair.i))?;
            let aj = lookup.get(&pair.j).ok_or(Error::MissingAnchor(pair.j))?;
            Ok((p - ai).norm() - (p - aj).norm() - pair.ddoa)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the step length, meters.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Fix the tag height and solve only for x and y.
    pub fixed_z: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            fixed_z: None,
        }
    }
}

/// Levenberg-Marquardt solver over hyperboloid residuals.
#[derive(Debug, Clone, Default)]
pub struct TdoaSolver {
    pub options: SolverOptions,
}

struct Problem {
    // (anchor i, anchor j, measured ddoa)
    rows: Vec<(Point3, Point3, f64)>,
    fixed_z: Option<f64>,
}

impl Problem {
    fn dims(&self) -> usize {
        if self.fixed_z.is_some() {
            2
        } else {
            3
        }
    }

    fn point(&self, x: &DVector<f64>) -> Point3 {
        match self.fixed_z {
            Some(z) => Point3::new(x[0], x[1], z),
            None => Point3::new(x[0], x[1], x[2]),
        }
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.point(x);
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|(ai, aj, d)| (p - ai).norm() - (p - aj).norm() - d),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.point(x);
        let unit = |a: &Point3| {
            let v = p - a;
            let n = v.norm();
            if n > 0.0 {
                v / n
            } else {
                Point3::zeros()
            }
        };
        let n = self.dims();
        let mut jac = DMatrix::zeros(self.rows.len(), n);
        for (r, (ai, aj, _)) in self.rows.iter().enumerate() {
            let g = unit(ai) - unit(aj);
            for c in 0..n {
                jac[(r, c)] = g[c];
            }
        }
        jac
    }
}

impl TdoaSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }

    pub fn solve(&self, ddoas: &DdoaSet, anchors: &[Anchor], init: Option<Point3>) -> Result<PositionEstimate> {
        let lookup = anchor_lookup(anchors);
        let ids = ddoas.anchor_ids();
        if ids.len() < 3 {
            return Err(Error::InsufficientAnchors {
                required: 3,
                got: ids.len(),
            });
        }
        let mut rows = Vec::with_capacity(ddoas.len());
        for pair in ddoas.pairs() {
            let ai = *lookup.get(&pair.i).ok_or(Error::MissingAnchor(pair.i))?;
            let aj = *lookup.get(&pair.j).ok_or(Error::MissingAnchor(pair.j))?;
            rows.push((ai, aj, pair.ddoa));
        }
        let start = match init {
            Some(p) => {
                ensure_finite(&p, "initial guess")?;
                p
            }
            None => ids.iter().map(|id| lookup[id]).sum::<Point3>() / ids.len() as f64,
        };
        let problem = Problem {
            rows,
            fixed_z: self.options.fixed_z,
        };
        let mut x = DVector::from_iterator(problem.dims(), start.iter().copied().take(problem.dims()));
        let first = self.levenberg_marquardt(&problem, &mut x);
        if init.is_some() || first.residual_norm <= 1e-9 {
            return Ok(first);
        }
        // The centroid can sit in the basin of a spurious minimum; retry from
        // the closed-form seed and keep whichever fits better.
        let Some(seed) = linear_seed(ddoas, &lookup, self.options.fixed_z) else {
            return Ok(first);
        };
        let mut x = DVector::from_iterator(problem.dims(), seed.iter().copied().take(problem.dims()));
        let second = self.levenberg_marquardt(&problem, &mut x);
        Ok(if second.residual_norm < first.residual_norm {
            second
        } else {
            first
        })
    }

    fn levenberg_marquardt(&self, problem: &Problem, x: &mut DVector<f64>) -> PositionEstimate {
        let n = problem.dims();
        let mut lambda = self.options.initial_damping;
        let mut r = problem.residuals(x);
        let mut cost = r.norm_squared();
        let mut iterations = 0;
        let mut converged = false;
        let mut jac = problem.jacobian(x);
        let mut fresh = true;

        while iterations < self.options.max_iterations {
            iterations += 1;
            if !fresh {
                jac = problem.jacobian(x);
                fresh = true;
            }
            let jtj = jac.transpose() * &jac;
            let grad = jac.transpose() * &r;
            let mut damped = jtj.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let step_norm = step.norm();
            let candidate = &*x + &step;
            let r_new = problem.residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new <= cost {
                *x = candidate;
                r = r_new;
                cost = cost_new;
                lambda = (lambda / 10.0).max(1e-15);
                fresh = false;
            } else {
                lambda *= 10.0;
            }
            if step_norm < self.options.step_tolerance || cost == 0.0 {
                converged = true;
                break;
            }
        }
        PositionEstimate {
            position: problem.point(x),
            residual_norm: cost.sqrt(),
            iterations,
            converged,
        }
    }
}

/// Spherical-interpolation estimate: with range differences `D_k = d_k - d_r`
/// to a common reference `r`, `|p - a_k|^2 = (d_r + D_k)^2` is linear in
/// `(p, d_r)` after subtracting the reference equation.
fn linear_seed(ddoas: &DdoaSet, lookup: &HashMap<u32, Point3>, fixed_z: Option<f64>) -> Option<Point3> {
    let mut count: BTreeMap<u32, usize> = BTreeMap::new();
    for pair in ddoas.pairs() {
        *count.entry(pair.i).or_default() += 1;
        *count.entry(pair.j).or_default() += 1;
    }
    let (&r, _) = count.iter().max_by_key(|(_, &n)| n)?;
    let ar = *lookup.get(&r)?;
    let diffs: Vec<(Point3, f64)> = ddoas
        .pairs()
        .iter()
        .filter_map(|pair| match (pair.i == r, pair.j == r) {
            (true, false) => Some((lookup[&pair.j], -pair.ddoa)),
            (false, true) => Some((lookup[&pair.i], pair.ddoa)),
            _ => None,
        })
        .collect();
    let n = if fixed_z.is_some() { 3 } else { 4 };
    if diffs.len() < n {
        return None;
    }
    let mut a = DMatrix::zeros(diffs.len(), n);
    let mut b = DVector::zeros(diffs.len());
    for (row, (ak, dk)) in diffs.iter().enumerate() {
        let g = 2.0 * (ak - ar);
        let mut rhs = ak.norm_squared() - ar.norm_squared() - dk * dk;
        match fixed_z {
            Some(z) => {
                a[(row, 0)] = g.x;
                a[(row, 1)] = g.y;
                rhs -= g.z * z;
            }
            None => {
                a[(row, 0)] = g.x;
                a[(row, 1)] = g.y;
                a[(row, 2)] = g.z;
            }
        }
        a[(row, n - 1)] = 2.0 * dk;
        b[row] = rhs;
    }
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let z = match fixed_z {
        Some(z) => z,
        None => sol[2],
    };
    let p = Point3::new(sol[0], sol[1], z);
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Solves with default options.
pub fn solve_tdoa(ddoas: &DdoaSet, anchors: &[Anchor], init: Option<Point3>) -> Result<PositionEstimate> {
    TdoaSolver::default().solve(ddoas, anchors, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square() -> Vec<Anchor> {
        vec![
            Anchor::new(1, 5.0, 5.0, 1.5),
            Anchor::new(2, -5.0, 5.0, 1.5),
            Anchor::new(3, -5.0, -5.0, 1.5),
            Anchor::new(4, 5.0, -5.0, 1.5),
        ]
    }

    fn noise_free(p: &Point3, anchors: &[Anchor]) -> DdoaSet {
        let ts: BTreeMap<u32, f64> = anchors
            .iter()
            .map(|a| (a.id, (p - a.position).norm() / SPEED_OF_LIGHT))
            .collect();
        measured_ddoa_set(&ts, PairPolicy::ReferenceAnchor).unwrap()
    }

    #[test]
    fn distance_examples() {
        let d = euclidean_distance(&Point3::new(3.0, 4.0, 0.0), &Point3::zeros()).unwrap();
        assert_eq!(d, 5.0);
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(euclidean_distance(&p, &p).unwrap(), 0.0);
        let d = euclidean_distance(&p, &Point3::new(4.0, 6.0, 3.0)).unwrap();
        assert_eq!(d, 5.0);
        assert!(euclidean_distance(&Point3::new(f64::NAN, 0.0, 0.0), &p).is_err());
    }

    #[test]
    fn true_ddoa_examples() {
        let p = Point3::zeros();
        let ai = Anchor::new(1, 5.0, 0.0, 0.0);
        let aj = Anchor::new(2, 2.0, 0.0, 0.0);
        assert_eq!(true_ddoa(&p, &ai, &aj).unwrap(), 3.0);
        assert_eq!(true_ddoa(&p, &aj, &ai).unwrap(), -3.0);
        let ak = Anchor::new(3, -5.0, 0.0, 0.0);
        assert_eq!(true_ddoa(&p, &ai, &ak).unwrap(), 0.0);
        assert!(matches!(true_ddoa(&p, &ai, &ai), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn measured_ddoa_examples() {
        let t = 0.25;
        let set = measured_ddoa_set(&BTreeMap::from([(1, t), (2, t)]), PairPolicy::AllPairs).unwrap();
        assert_eq!(set.pairs(), &[DdoaPair { i: 1, j: 2, ddoa: 0.0 }]);

        let set = measured_ddoa_set(&BTreeMap::from([(1, 0.0), (2, 1e-9)]), PairPolicy::AllPairs).unwrap();
        assert_eq!(set.len(), 1);
        assert_relative_eq!(set.pairs()[0].ddoa, -0.299_792_458, epsilon = 1e-12);

        let ts = BTreeMap::from([(1, 3e-9), (2, 1e-9), (3, 2e-9), (4, 5e-9)]);
        assert_eq!(measured_ddoa_set(&ts, PairPolicy::AllPairs).unwrap().len(), 6);
        let reference = measured_ddoa_set(&ts, PairPolicy::ReferenceAnchor).unwrap();
        assert_eq!(reference.len(), 3);
        assert!(reference.pairs().iter().all(|p| p.j == 2 && p.ddoa > 0.0));

        assert!(matches!(
            measured_ddoa_set(&BTreeMap::from([(1, 0.0)]), PairPolicy::AllPairs),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ddoa_set_rejects_bad_pairs() {
        assert!(DdoaSet::new(vec![DdoaPair { i: 1, j: 1, ddoa: 0.0 }]).is_err());
        assert!(DdoaSet::new(vec![
            DdoaPair { i: 1, j: 2, ddoa: 0.0 },
            DdoaPair { i: 2, j: 1, ddoa: 0.0 },
        ])
        .is_err());
        assert!(DdoaSet::new(vec![DdoaPair {
            i: 1,
            j: 2,
            ddoa: f64::INFINITY
        }])
        .is_err());
    }

    #[test]
    fn square_layout_center() {
        let anchors = square();
        let truth = Point3::new(0.0, 0.0, 1.5);
        let set = noise_free(&truth, &anchors);
        assert!(set.pairs().iter().all(|p| p.ddoa == 0.0));
        let solver = TdoaSolver::new(SolverOptions {
            fixed_z: Some(1.5),
            ..Default::default()
        });
        let est = solver.solve(&set, &anchors, Some(Point3::new(1.0, -2.0, 1.5))).unwrap();
        assert!(est.converged);
        assert!((est.position - truth).norm() < 1e-6, "{:?}", est.position);
    }

    #[test]
    fn common_mode_offset_shifts_solution() {
        let anchors = vec![
            Anchor::new(1, 0.0, 0.0, 0.5),
            Anchor::new(2, 10.0, 0.0, 2.5),
            Anchor::new(3, 10.0, 8.0, 0.5),
            Anchor::new(4, 0.0, 8.0, 2.5),
            Anchor::new(5, 5.0, 4.0, 3.0),
        ];
        let truth = Point3::new(3.0, 2.0, 1.0);
        let set = noise_free(&truth, &anchors);
        let shifted = DdoaSet::new(
            set.pairs()
                .iter()
                .map(|p| DdoaPair {
                    ddoa: p.ddoa + 1.0,
                    ..*p
                })
                .collect(),
        )
        .unwrap();
        let est = solve_tdoa(&shifted, &anchors, None).unwrap();
        assert!((est.position - truth).norm() > 1e-3);
        assert!(est.residual_norm > 0.0);
    }

    #[test]
    fn residuals_match_direct_recomputation() {
        let anchors = square();
        let truth = Point3::new(1.0, -2.0, 1.5);
        let set = noise_free(&truth, &anchors);
        for r in residuals(&truth, &set, &anchors).unwrap() {
            assert!(r.abs() < 1e-12);
        }
        let p = truth + Point3::new(1.0, 0.0, 0.0);
        let got = residuals(&p, &set, &anchors).unwrap();
        let pos = |id: u32| anchors.iter().find(|a| a.id == id).unwrap().position;
        for (pair, r) in set.pairs().iter().zip(got) {
            let di =
                ((p.x - pos(pair.i).x).powi(2) + (p.y - pos(pair.i).y).powi(2) + (p.z - pos(pair.i).z).powi(2)).sqrt();
            let dj =
                ((p.x - pos(pair.j).x).powi(2) + (p.y - pos(pair.j).y).powi(2) + (p.z - pos(pair.j).z).powi(2)).sqrt();
            assert_relative_eq!(r, di - dj - pair.ddoa, epsilon = 1e-12);
        }
        assert!(got_nonzero(&residuals(&p, &set, &anchors).unwrap()));
        let missing = DdoaSet::new(vec![DdoaPair { i: 1, j: 99, ddoa: 0.0 }]).unwrap();
        assert!(matches!(
            residuals(&p, &missing, &anchors),
            Err(Error::MissingAnchor(99))
        ));
    }

    fn got_nonzero(v: &[f64]) -> bool {
        v.iter().any(|r| r.abs() > 1e-6)
    }

    #[test]
    fn too_few_anchors() {
        let anchors = square();
        let set = DdoaSet::new(vec![DdoaPair { i: 1, j: 2, ddoa: 0.0 }]).unwrap();
        assert!(matches!(
            solve_tdoa(&set, &anchors, None),
            Err(Error::InsufficientAnchors { got: 2, .. })
        ));
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let anchors = square();
        let set = noise_free(&Point3::new(2.0, 1.0, 1.5), &anchors);
        let solver = TdoaSolver::new(SolverOptions {
            max_iterations: 1,
            fixed_z: Some(1.5),
            ..Default::default()
        });
        // An explicit start disables the closed-form retry.
        let est = solver.solve(&set, &anchors, Some(Point3::new(-3.0, -3.0, 1.5))).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 1);
    }

    #[test]
    fn anchor_serde_uses_flat_fields() {
        let a = Anchor::new(7, 1.0, 2.0, 3.0);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"id":7,"x":1.0,"y":2.0,"z":3.0}"#);
        assert_eq!(serde_json::from_str::<Anchor>(&json).unwrap(), a);
    }
}
