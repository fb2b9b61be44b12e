//! Spacelike hypersurfaces given as graphs `t = f(x)` over a spatial chart.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::expr::{Formula, Variables};
use crate::geometry::{Event, SpacetimeMetric, SpacetimeVector};
use crate::rng::stream_rng;

/// Smallest admissible eigenvalue of the induced metric.
pub const SPACELIKE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// The whole spatial chart.
    Unbounded,
    /// Axis-aligned patch `lo <= x <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Flat torus with fundamental cell `[0, period)` on each axis.
    Torus { periods: Vec<f64> },
}

impl Domain {
    fn bounds(&self, n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Unbounded => None,
            Domain::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            Domain::Torus { periods } => Some((vec![0.0; n], periods.clone())),
        }
    }
}

/// A spatial region, given in the surface chart. On tori, points are
/// reduced to the fundamental cell before testing membership.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Whole,
    /// `lo <= x < hi` per axis; infinite bounds give half-spaces and slabs.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Region {
    pub fn half_space(n: usize, axis: usize, lo: f64, hi: f64) -> Region {
        let mut l = vec![f64::NEG_INFINITY; n];
        let mut h = vec![f64::INFINITY; n];
        l[axis] = lo;
        h[axis] = hi;
        Region::Box { lo: l, hi: h }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Whole => true,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v < *h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    pub points_per_axis: usize,
}

impl Quadrature {
    pub fn default_for(spatial_dim: usize) -> Self {
        Quadrature {
            points_per_axis: if spatial_dim <= 2 { 256 } else { 64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub spatial: Vec<f64>,
    pub event: Event,
}

/// A unit covector on the surface, with components in the `dx^i` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCovector {
    pub base: SurfacePoint,
    pub covector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CauchySurface {
    name: String,
    graph: Formula,
    domain: Domain,
    metric: Arc<SpacetimeMetric>,
    envelope: OnceLock<f64>,
}

impl CauchySurface {
    pub fn new(
        name: &str,
        graph: &str,
        domain: Domain,
        metric: Arc<SpacetimeMetric>,
        parameters: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = metric.spatial_dim();
        let graph = Formula::parse(graph, &Variables::spatial(n), parameters)
            .map_err(|e| Error::InvalidArgument(format!("surface `{name}` graph: {e}")))?;
        match &domain {
            Domain::Box { lo, hi } => {
                if lo.len() != n || hi.len() != n || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidArgument(format!(
                        "surface `{name}`: bad box {lo:?}..{hi:?}"
                    )));
                }
            }
            Domain::Torus { periods } => {
                if periods.len() != n || periods.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                    return Err(Error::InvalidArgument(format!(
                        "surface `{name}`: bad periods {periods:?}"
                    )));
                }
            }
            Domain::Unbounded => {}
        }
        let surface = CauchySurface {
            name: name.to_string(),
            graph,
            domain,
            metric,
            envelope: OnceLock::new(),
        };
        surface.validate()?;
        Ok(surface)
    }

    /// Spacelike check on a coarse grid, plus periodicity on tori.
    fn validate(&self) -> Result<()> {
        let n = self.spatial_dim();
        let (lo, hi) = self
            .domain
            .bounds(n)
            .unwrap_or((vec![-2.0; n], vec![2.0; n]));
        let k = if n <= 2 { 9 } else { 5 };
        for x in grid_points(&lo, &hi, k) {
            self.induced_metric_raw(&x)?;
            if let Domain::Torus { periods } = &self.domain {
                let f0 = self.graph.eval(&x);
                for (i, p) in periods.iter().enumerate() {
                    let mut xs = x.clone();
                    xs[i] += p;
                    let f1 = self.graph.eval(&xs);
                    if (f1 - f0).abs() > 1e-9 * (1.0 + f0.abs()) {
                        return Err(Error::InvalidArgument(format!(
                            "surface `{}` graph is not periodic along axis {i}",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn graph_source(&self) -> &str {
        self.graph.source()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn metric(&self) -> &Arc<SpacetimeMetric> {
        &self.metric
    }

    pub fn spatial_dim(&self) -> usize {
        self.metric.spatial_dim()
    }

    /// Canonical representative of a spatial point (wraps tori).
    pub fn reduce(&self, x: &[f64]) -> Vec<f64> {
        match &self.domain {
            Domain::Torus { periods } => x
                .iter()
                .zip(periods)
                .map(|(v, p)| v.rem_euclid(*p))
                .collect(),
            _ => x.to_vec(),
        }
    }

    /// Smallest displacement `b - a` respecting the torus identification.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match &self.domain {
            Domain::Torus { periods } => a
                .iter()
                .zip(b)
                .zip(periods)
                .map(|((a, b), p)| {
                    let d = b - a;
                    d - p * (d / p).round()
                })
                .collect(),
            _ => a.iter().zip(b).map(|(a, b)| b - a).collect(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.domain {
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
            _ => x.iter().all(|v| v.is_finite()),
        }
    }

    /// Graph value `f(x)` on the periodic extension.
    pub fn height(&self, x: &[f64]) -> f64 {
        match &self.domain {
            Domain::Torus { .. } => self.graph.eval(&self.reduce(x)),
            _ => self.graph.eval(x),
        }
    }

    pub fn height_gradient(&self, x: &[f64]) -> Vec<f64> {
        let xr = self.reduce(x);
        let mut g = vec![0.0; x.len()];
        self.graph.gradient_into(&xr, &mut g);
        g
    }

    pub fn embed(&self, x: &[f64]) -> Result<SurfacePoint> {
        if x.len() != self.spatial_dim() || !self.contains(x) {
            return Err(Error::Domain(format!(
                "{x:?} outside the domain of surface `{}`",
                self.name
            )));
        }
        let spatial = self.reduce(x);
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push(self.graph.eval(&spatial));
        coords.extend_from_slice(&spatial);
        Ok(SurfacePoint {
            spatial,
            event: Event::new(coords),
        })
    }

    /// Graph tangent frame `e_i = d_i + (df/dx^i) d_t`.
    pub fn tangent_frame(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.spatial_dim();
        let grad = self.height_gradient(x);
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n + 1];
                e[0] = grad[i];
                e[i + 1] = 1.0;
                e
            })
            .collect()
    }

    /// The lift `sum_i w^i e_i` of a chart vector to spacetime.
    pub fn lift(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let grad = self.height_gradient(x);
        let mut out = Vec::with_capacity(w.len() + 1);
        out.push(grad.iter().zip(w).map(|(g, w)| g * w).sum());
        out.extend_from_slice(w);
        out
    }

    fn event_of(&self, x: &[f64]) -> Vec<f64> {
        let mut e = Vec::with_capacity(x.len() + 1);
        e.push(self.height(x));
        e.extend_from_slice(x);
        e
    }

    /// `h_ij = -<e_i, e_j>` at a chart point, checked positive definite.
    pub fn induced_metric_raw(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.spatial_dim();
        let g = self.metric.diagonal(&self.event_of(x))?;
        let grad = self.height_gradient(x);
        let h = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { -g[i + 1] } else { 0.0 };
            diag - g[0] * grad[i] * grad[j]
        });
        let eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
        if !(eig > SPACELIKE_TOL) {
            return Err(Error::NotSpacelike {
                at: x.to_vec(),
                eigenvalue: eig,
            });
        }
        Ok(h)
    }

    pub fn induced_metric(&self, p: &SurfacePoint) -> Result<DMatrix<f64>> {
        self.induced_metric_raw(&p.spatial)
    }

    /// `sqrt(det h)` via the matrix determinant lemma on the diagonal metric.
    pub fn volume_density(&self, x: &[f64]) -> Result<f64> {
        let g = self.metric.diagonal(&self.event_of(x))?;
        let grad = self.height_gradient(x);
        let mut det = 1.0;
        let mut quad = 0.0;
        for i in 0..grad.len() {
            let d = -g[i + 1];
            det *= d;
            quad += grad[i] * grad[i] / d;
        }
        let det = det * (1.0 - g[0] * quad);
        if !(det > 0.0) {
            return Err(Error::NotSpacelike {
                at: x.to_vec(),
                eigenvalue: det,
            });
        }
        Ok(det.sqrt())
    }

    pub fn future_normal_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        let event = self.event_of(x);
        let g = self.metric.diagonal(&event)?;
        let grad = self.height_gradient(x);
        // raise the covector dt - df, which annihilates every e_i
        let mut n = Vec::with_capacity(g.len());
        n.push(1.0 / g[0]);
        for i in 0..grad.len() {
            n.push(-grad[i] / g[i + 1]);
        }
        let norm2: f64 = n.iter().zip(&g).map(|(c, g)| g * c * c).sum();
        if !(norm2 > 0.0) {
            return Err(Error::NotSpacelike {
                at: x.to_vec(),
                eigenvalue: norm2,
            });
        }
        let s = norm2.sqrt();
        n.iter_mut().for_each(|c| *c /= s);
        Ok(n)
    }

    pub fn future_normal(&self, p: &SurfacePoint) -> Result<SpacetimeVector> {
        Ok(SpacetimeVector::new(
            p.event.clone(),
            self.future_normal_raw(&p.spatial)?,
        ))
    }

    pub(crate) fn integration_box(&self, region: &Region) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spatial_dim();
        let (mut lo, mut hi) = self
            .domain
            .bounds(n)
            .unwrap_or((vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]));
        if let Region::Box { lo: rl, hi: rh } = region {
            for i in 0..n {
                lo[i] = lo[i].max(rl[i]);
                hi[i] = hi[i].min(rh[i]);
            }
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "region on surface `{}` is unbounded",
                self.name
            )));
        }
        Ok((lo, hi))
    }

    /// Riemannian volume of `region` by the tensor-product midpoint rule.
    pub fn riemannian_volume(&self, region: &Region, quadrature: Quadrature) -> Result<f64> {
        let (lo, hi) = self.integration_box(region)?;
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Ok(0.0);
        }
        let k = quadrature.points_per_axis.max(1);
        let cell: f64 = lo.iter().zip(&hi).map(|(l, h)| (h - l) / k as f64).product();
        let mut values = Vec::with_capacity(k.pow(lo.len() as u32));
        for x in grid_points(&lo, &hi, k) {
            values.push(self.volume_density(&x)?);
        }
        Ok(crate::sum::pairwise_sum(&values) * cell)
    }

    /// Upper bound on the volume density used for rejection sampling.
    fn density_envelope(&self) -> Result<f64> {
        if let Some(v) = self.envelope.get() {
            return Ok(*v);
        }
        let (lo, hi) = self.integration_box(&Region::Whole)?;
        let k = if self.spatial_dim() <= 2 { 64 } else { 16 };
        let mut max: f64 = 0.0;
        for x in grid_points(&lo, &hi, k) {
            max = max.max(self.volume_density(&x)?);
        }
        let v = 1.1 * max;
        Ok(*self.envelope.get_or_init(|| v))
    }

    /// Unit covector at `p` from a Euclidean unit vector `xi`, via the
    /// Cholesky factor `h = L L^T` (so `p = L xi`).
    pub fn covector_from_direction(&self, p: &SurfacePoint, xi: &[f64]) -> Result<UnitCovector> {
        let h = self.induced_metric(p)?;
        let l = h
            .cholesky()
            .ok_or_else(|| Error::Domain("induced metric not positive definite".into()))?
            .l();
        let cov = &l * DVector::from_column_slice(xi);
        Ok(UnitCovector {
            base: p.clone(),
            covector: cov.iter().copied().collect(),
        })
    }

    /// Inverse of [`covector_from_direction`](Self::covector_from_direction).
    pub fn direction_of(&self, u: &UnitCovector) -> Result<Vec<f64>> {
        let h = self.induced_metric(&u.base)?;
        let l = h
            .cholesky()
            .ok_or_else(|| Error::Domain("induced metric not positive definite".into()))?
            .l();
        let xi = l
            .solve_lower_triangular(&DVector::from_column_slice(&u.covector))
            .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
        Ok(xi.iter().copied().collect())
    }

    /// `p^T h^{-1} p`.
    pub fn covector_norm_sq(&self, u: &UnitCovector) -> Result<f64> {
        let xi = self.direction_of(u)?;
        Ok(xi.iter().map(|v| v * v).sum())
    }

    /// One Liouville-distributed sample, keyed by `(seed, index)`.
    pub fn sample_one(&self, seed: u64, index: u64) -> Result<UnitCovector> {
        let (lo, hi) = self.integration_box(&Region::Whole)?;
        let envelope = self.density_envelope()?;
        let mut rng = stream_rng(seed, index);
        let n = self.spatial_dim();
        let mut x = vec![0.0; n];
        loop {
            for i in 0..n {
                x[i] = lo[i] + (hi[i] - lo[i]) * rng.random::<f64>();
            }
            let u: f64 = rng.random();
            if u * envelope <= self.volume_density(&x)? {
                break;
            }
        }
        let xi = random_unit_vector(&mut rng, n);
        let p = self.embed(&x)?;
        self.covector_from_direction(&p, &xi)
    }

    /// Samples of the unit cosphere bundle distributed by the Liouville
    /// measure: base density `sqrt(det h) / Vol`, uniform fibre directions.
    pub fn sample_cosphere(&self, seed: u64, count: usize) -> Result<Vec<UnitCovector>> {
        (0..count as u64).map(|i| self.sample_one(seed, i)).collect()
    }
}

pub(crate) fn random_unit_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Midpoints of a `k^n` tensor grid over `[lo, hi]`.
pub(crate) fn grid_points(lo: &[f64], hi: &[f64], k: usize) -> impl Iterator<Item = Vec<f64>> {
    let n = lo.len();
    let lo = lo.to_vec();
    let hi = hi.to_vec();
    let total = k.pow(n as u32);
    (0..total).map(move |mut idx| {
        let mut x = vec![0.0; n];
        for i in 0..n {
            let j = idx % k;
            idx /= k;
            x[i] = lo[i] + (hi[i] - lo[i]) * (j as f64 + 0.5) / k as f64;
        }
        x
    })
}
