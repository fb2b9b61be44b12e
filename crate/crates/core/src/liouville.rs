//! Liouville measure on unit cosphere bundles, solid angles, and the
//! volume identities that relate two surfaces through the redshift.
//!
//! All estimates are Monte Carlo over samples keyed by `(seed, index)`, so a
//! result depends only on the seed and the sample count, never on the number
//! of worker threads. Reductions run over index-ordered vectors with
//! [`pairwise_sum`](crate::sum::pairwise_sum).

use std::cell::{OnceCell, RefCell};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::contact::transfer;
use crate::error::{Error, MissReason, Result};
use crate::geodesic::{intersect_surface, ray_from_covector, Intersection, NullGeodesic, TraceSettings};
use crate::ode::Termination;
use crate::redshift::{redshift_between, surface_redshift};
use crate::rng::stream_rng;
use crate::sum::{mean_and_std_error, pairwise_sum};
use crate::surface::{grid_points, random_unit_vector, CauchySurface, Quadrature, Region, SurfacePoint, UnitCovector};

/// Escape fraction above which an estimate is flagged.
pub const ESCAPE_LIMIT: f64 = 1e-3;
/// Systematic error allowance per unit of integrator `rtol`, relative to
/// the estimate. Covers the deterministic tracing error that a vanishing
/// sample variance would otherwise hide.
pub const SYSTEMATIC_PER_RTOL: f64 = 1e3;

/// Area `2 pi^(n/2) / Gamma(n/2)` of the unit sphere in `R^n`.
pub fn sphere_area(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("sphere dimension must be at least 1".into()));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let (mut c, mut k) = if n % 2 == 1 { (2.0, 1) } else { (two_pi, 2) };
    while k < n {
        c *= two_pi / k as f64;
        k += 2;
    }
    Ok(c)
}

/// Sets of light rays, decided per ray by tracing.
#[derive(Debug, Clone)]
pub enum RaySelector<'a> {
    All,
    /// Rays crossing `surface` inside `region`.
    ThroughRegion {
        surface: &'a CauchySurface,
        region: Region,
    },
    Intersection(Box<RaySelector<'a>>, Box<RaySelector<'a>>),
}

impl<'a> RaySelector<'a> {
    pub fn through(surface: &'a CauchySurface, region: Region) -> Self {
        RaySelector::ThroughRegion { surface, region }
    }

    pub fn and(self, other: RaySelector<'a>) -> Self {
        RaySelector::Intersection(Box::new(self), Box::new(other))
    }

    fn surfaces(&self, out: &mut Vec<&'a CauchySurface>) {
        match self {
            RaySelector::All => {}
            RaySelector::ThroughRegion { surface, .. } => out.push(surface),
            RaySelector::Intersection(a, b) => {
                a.surfaces(out);
                b.surfaces(out);
            }
        }
    }

    fn membership(&self, sample: &RaySample<'_>) -> Result<Membership> {
        match self {
            RaySelector::All => Ok(Membership::In),
            RaySelector::ThroughRegion { surface, region } => match sample.crossing(surface) {
                Ok(hit) => Ok(if region.contains(&surface.reduce(&hit.point.spatial)) {
                    Membership::In
                } else {
                    Membership::Out
                }),
                Err(Error::NoIntersection {
                    reason: MissReason::OutsideDomain,
                    ..
                }) => Ok(Membership::Out),
                Err(Error::NoIntersection {
                    reason: MissReason::NotReached,
                    ..
                }) => {
                    let (b, f) = sample.ray()?.termination();
                    if b == Termination::Stopped && f == Termination::Stopped {
                        Ok(Membership::Out)
                    } else {
                        Ok(Membership::Escaped)
                    }
                }
                Err(e) => Err(e),
            },
            RaySelector::Intersection(a, b) => match a.membership(sample)? {
                Membership::In => b.membership(sample),
                m => Ok(m),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Membership {
    In,
    Out,
    Escaped,
}

/// One sampled covector and, traced on first use, its light ray.
pub struct RaySample<'a> {
    pub index: u64,
    pub covector: UnitCovector,
    surface: &'a CauchySurface,
    settings: &'a TraceSettings,
    ray: OnceCell<NullGeodesic>,
    crossings: RefCell<Vec<(*const CauchySurface, Intersection)>>,
}

impl<'a> RaySample<'a> {
    pub fn new(
        surface: &'a CauchySurface,
        covector: UnitCovector,
        index: u64,
        settings: &'a TraceSettings,
    ) -> Self {
        RaySample {
            index,
            covector,
            surface,
            settings,
            ray: OnceCell::new(),
            crossings: RefCell::new(Vec::new()),
        }
    }

    /// The surface the covector lives on.
    pub fn surface(&self) -> &CauchySurface {
        self.surface
    }

    pub fn ray(&self) -> Result<&NullGeodesic> {
        if let Some(r) = self.ray.get() {
            return Ok(r);
        }
        let r = ray_from_covector(self.surface, &self.covector, self.settings)?.representative;
        Ok(self.ray.get_or_init(|| r))
    }

    /// The crossing with the sample's own surface, at `lambda = 0`.
    pub fn origin(&self) -> Result<Intersection> {
        Ok(Intersection {
            lambda: 0.0,
            point: self.covector.base.clone(),
            state: self.ray()?.initial().clone(),
        })
    }

    /// The crossing with `surface`, cached per surface.
    pub fn crossing(&self, surface: &CauchySurface) -> Result<Intersection> {
        let key = surface as *const CauchySurface;
        if key == self.surface as *const CauchySurface {
            return self.origin();
        }
        if let Some((_, hit)) = self.crossings.borrow().iter().find(|(k, _)| *k == key) {
            return Ok(hit.clone());
        }
        let hit = intersect_surface(self.ray()?, surface)?;
        self.crossings.borrow_mut().push((key, hit.clone()));
        Ok(hit)
    }

    /// `1 + z` with `emitter` as the emitting surface and the sample's
    /// surface as the receiving one.
    pub fn one_plus_z_from(&self, emitter: &CauchySurface) -> Result<f64> {
        let hit = self.crossing(emitter)?;
        Ok(redshift_between(emitter, &hit, self.surface, &self.origin()?)?.one_plus_z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureEstimate {
    pub value: f64,
    /// Sample standard deviation over `sqrt(samples)`, in units of `value`.
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    /// Rays whose membership could not be resolved; counted as outside.
    pub escapes: usize,
    pub escape_fraction: f64,
    /// Deterministic allowance for ray-tracing error.
    pub systematic: f64,
}

impl MeasureEstimate {
    pub fn flagged(&self) -> bool {
        self.escape_fraction > ESCAPE_LIMIT
    }

    /// Statistical and systematic error combined in quadrature.
    pub fn sigma(&self) -> f64 {
        self.std_error.hypot(self.systematic)
    }

    /// `|value - reference|` in units of [`sigma`](Self::sigma).
    pub fn deviation(&self, reference: f64) -> f64 {
        let d = (self.value - reference).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.sigma()
        }
    }

    fn scaled(mut self, c: f64) -> Self {
        self.value *= c;
        self.std_error *= c.abs();
        self.systematic *= c.abs();
        self
    }
}

/// Time interval containing every listed surface with a margin, or `None`
/// if some surface has an unbounded chart.
pub fn bracketing_window(surfaces: &[&CauchySurface], margin: f64) -> Result<Option<(f64, f64)>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in surfaces {
        let (a, b) = match s.integration_box(&Region::Whole) {
            Ok(ab) => ab,
            Err(_) => return Ok(None),
        };
        let k = if s.spatial_dim() <= 2 { 48 } else { 12 };
        for x in grid_points(&a, &b, k) {
            let f = s.height(&x);
            lo = lo.min(f);
            hi = hi.max(f);
        }
    }
    if !(lo <= hi) {
        return Ok(None);
    }
    let pad = margin + 0.1 * (hi - lo);
    Ok(Some((lo - pad, hi + pad)))
}

fn settings_for(settings: &TraceSettings, surfaces: &[&CauchySurface]) -> Result<TraceSettings> {
    let mut s = *settings;
    if s.time_window.is_none() && surfaces.len() > 1 {
        s.time_window = bracketing_window(surfaces, 0.1)?;
    }
    Ok(s)
}

fn systematic(value: f64, settings: &TraceSettings) -> f64 {
    value.abs() * SYSTEMATIC_PER_RTOL * settings.tolerances.rtol
}

/// Per-sample weight and escape flag.
type Draw = (f64, bool);

fn draw<F>(sel: &RaySelector<'_>, integrand: &F, sample: &RaySample<'_>) -> Result<Draw>
where
    F: Fn(&RaySample<'_>) -> Result<f64>,
{
    match sel.membership(sample)? {
        Membership::In => Ok((integrand(sample)?, false)),
        Membership::Out => Ok((0.0, false)),
        Membership::Escaped => Ok((0.0, true)),
    }
}

fn summarise(draws: &[Draw], seed: u64) -> MeasureEstimate {
    let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let escapes = draws.iter().filter(|d| d.1).count();
    let (mean, se) = mean_and_std_error(&values);
    MeasureEstimate {
        value: mean,
        std_error: se,
        samples: draws.len(),
        seed,
        escapes,
        escape_fraction: escapes as f64 / draws.len().max(1) as f64,
        systematic: 0.0,
    }
}

/// `int_{iota(L)} phi dOmega` over the unit cosphere bundle of `surface`.
///
/// Samples are Liouville-distributed; the mean is scaled by the total
/// measure `c_n Vol`. When `settings` has no time window and the selector
/// names surfaces, rays are traced within a window bracketing `surface` and
/// those surfaces; an integrand that needs other crossings must then bring
/// its own window.
pub fn liouville_integral<F>(
    surface: &CauchySurface,
    selector: &RaySelector<'_>,
    integrand: F,
    samples: usize,
    seed: u64,
    settings: &TraceSettings,
) -> Result<MeasureEstimate>
where
    F: Fn(&RaySample<'_>) -> Result<f64> + Sync,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let mut involved = vec![surface];
    selector.surfaces(&mut involved);
    let settings = settings_for(settings, &involved)?;
    let total = sphere_area(surface.spatial_dim())?
        * surface.riemannian_volume(&Region::Whole, Quadrature::default_for(surface.spatial_dim()))?;
    let draws: Vec<Draw> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let u = surface.sample_one(seed, i)?;
            draw(selector, &integrand, &RaySample::new(surface, u, i, &settings))
        })
        .collect::<Result<_>>()?;
    let mut est = summarise(&draws, seed).scaled(total);
    est.systematic = systematic(est.value, &settings);
    Ok(est)
}

/// How to integrate over one fibre of the cosphere bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FibreRule {
    MonteCarlo { samples: usize },
    /// Uniform angular midpoint grid; two spatial dimensions only.
    AngularGrid { points: usize },
}

/// Solid angle `omega_M(x, L)`: fibre area of the directions at `x` whose
/// rays belong to `selector`.
pub fn solid_angle(
    surface: &CauchySurface,
    x: &SurfacePoint,
    selector: &RaySelector<'_>,
    rule: FibreRule,
    seed: u64,
    settings: &TraceSettings,
) -> Result<MeasureEstimate> {
    let n = surface.spatial_dim();
    let c = sphere_area(n)?;
    let mut involved = vec![surface];
    selector.surfaces(&mut involved);
    let settings = settings_for(settings, &involved)?;
    let one = |_: &RaySample<'_>| Ok(1.0);
    match rule {
        FibreRule::MonteCarlo { samples } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("samples must be at least 1".into()));
            }
            let draws: Vec<Draw> = (0..samples as u64)
                .into_par_iter()
                .map(|i| {
                    let xi = random_unit_vector(&mut stream_rng(seed, i), n);
                    let u = surface.covector_from_direction(x, &xi)?;
                    draw(selector, &one, &RaySample::new(surface, u, i, &settings))
                })
                .collect::<Result<_>>()?;
            let mut est = summarise(&draws, seed).scaled(c);
            est.systematic = systematic(est.value, &settings);
            Ok(est)
        }
        FibreRule::AngularGrid { points } => {
            if n != 2 {
                return Err(Error::InvalidArgument(
                    "angular fibre grids need two spatial dimensions".into(),
                ));
            }
            if points == 0 {
                return Err(Error::InvalidArgument("points must be at least 1".into()));
            }
            let draws: Vec<Draw> = (0..points)
                .into_par_iter()
                .map(|j| {
                    let phi = c * (j as f64 + 0.5) / points as f64;
                    let u = surface.covector_from_direction(x, &[phi.cos(), phi.sin()])?;
                    draw(selector, &one, &RaySample::new(surface, u, j as u64, &settings))
                })
                .collect::<Result<_>>()?;
            let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
            let escapes = draws.iter().filter(|d| d.1).count();
            // each indicator jump misclassifies at most half a cell
            let jumps = (0..points)
                .filter(|&j| values[j] != values[(j + 1) % points])
                .count();
            let cell = c / points as f64;
            Ok(MeasureEstimate {
                value: cell * pairwise_sum(&values),
                std_error: 0.0,
                samples: points,
                seed,
                escapes,
                escape_fraction: escapes as f64 / points as f64,
                systematic: 0.5 * cell * jumps as f64,
            })
        }
    }
}

/// `Vol_M(D) = (1/c_n) int (1+z)^(-n) dOmega_{M'}` over the covectors on
/// `m_prime` whose rays cross `m` inside `region`.
pub fn volume_from_redshift(
    m: &CauchySurface,
    region: &Region,
    m_prime: &CauchySurface,
    samples: usize,
    seed: u64,
    settings: &TraceSettings,
) -> Result<MeasureEstimate> {
    let n = m.spatial_dim();
    let sel = RaySelector::through(m, region.clone());
    let est = liouville_integral(
        m_prime,
        &sel,
        |s| Ok(s.one_plus_z_from(m)?.powi(-(n as i32))),
        samples,
        seed,
        settings,
    )?;
    Ok(est.scaled(1.0 / sphere_area(n)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCheck {
    /// Jacobian determinant of the transfer map in orthonormal charts,
    /// times the ratio of the Liouville densities at the two endpoints.
    pub lhs: f64,
    /// `(1+z)^(-n)`.
    pub rhs: f64,
    pub residual: f64,
    pub one_plus_z: f64,
    /// Liouville density ratio of the charts at the endpoints; 1 by
    /// construction of the charts.
    pub density_ratio: f64,
}

/// Orthonormal basis of the complement of the unit vector `v`.
fn complement_basis(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let mut basis: Vec<Vec<f64>> = vec![v.to_vec()];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for b in &basis {
            let d: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(e.into_iter().map(|x| x / norm).collect());
        }
        if basis.len() == n {
            break;
        }
    }
    basis.split_off(1)
}

fn cholesky_l(surface: &CauchySurface, x: &[f64]) -> Result<DMatrix<f64>> {
    Ok(surface
        .induced_metric_raw(x)?
        .cholesky()
        .ok_or_else(|| Error::Domain("induced metric not positive definite".into()))?
        .l())
}

/// Checks `(iota_{M'M})^* Omega_M = (1+z)^(-n) Omega_{M'}` at `u` on
/// `m_prime`, with `z` the redshift from `m` to `m_prime`.
///
/// The transfer map to `m` is differentiated by Richardson-extrapolated
/// central differences in charts `(y, w)`: `y = L^T dx` orthonormal base
/// coordinates and `w` a tangent-plane chart of the Euclidean fibre
/// direction `L^{-1} p`, where `h = L L^T`.
pub fn verify_pointwise_density(
    m: &CauchySurface,
    m_prime: &CauchySurface,
    u: &UnitCovector,
    settings: &TraceSettings,
) -> Result<DensityCheck> {
    let n = m.spatial_dim();
    let settings = settings_for(settings, &[m, m_prime])?;
    let x0 = u.base.spatial.clone();
    let l0 = cholesky_l(m_prime, &x0)?;
    let l0t = l0.transpose();
    let xi0 = m_prime.direction_of(u)?;
    let t0 = complement_basis(&xi0);

    let v0 = transfer(m_prime, m, u, &settings)?;
    let x1 = v0.base.spatial.clone();
    let l1t = cholesky_l(m, &x1)?.transpose();
    let t1 = complement_basis(&m.direction_of(&v0)?);

    let dim = 2 * n - 1;
    let chart = |q: &[f64]| -> Result<Vec<f64>> {
        let dx = l0t
            .clone()
            .solve_upper_triangular(&DVector::from_column_slice(&q[..n]))
            .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
        let x: Vec<f64> = x0.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
        let mut xi = xi0.clone();
        for (a, t) in t0.iter().enumerate() {
            xi.iter_mut().zip(t).for_each(|(v, c)| *v += q[n + a] * c);
        }
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        xi.iter_mut().for_each(|v| *v /= norm);
        let src = m_prime.covector_from_direction(&m_prime.embed(&x)?, &xi)?;
        let v = transfer(m_prime, m, &src, &settings)?;
        let d = m.displacement(&x1, &v.base.spatial);
        let y = &l1t * DVector::from_column_slice(&d);
        let xi1 = m.direction_of(&v)?;
        let mut out: Vec<f64> = y.iter().copied().collect();
        for t in &t1 {
            out.push(t.iter().zip(&xi1).map(|(a, b)| a * b).sum());
        }
        Ok(out)
    };

    let h = 1e-3;
    let mut jac = DMatrix::zeros(dim, dim);
    let central = |c: usize, step: f64| -> Result<Vec<f64>> {
        let mut qp = vec![0.0; dim];
        let mut qm = vec![0.0; dim];
        qp[c] = step;
        qm[c] = -step;
        let (fp, fm) = (chart(&qp)?, chart(&qm)?);
        Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * step)).collect())
    };
    for c in 0..dim {
        let d1 = central(c, h)?;
        let d2 = central(c, 0.5 * h)?;
        for r in 0..dim {
            jac[(r, c)] = (4.0 * d2[r] - d1[r]) / 3.0;
        }
    }
    let density_ratio = 1.0;
    let lhs = jac.determinant().abs() * density_ratio;
    let ray = ray_from_covector(m_prime, u, &settings)?;
    let one_plus_z = surface_redshift(m, m_prime, &ray.representative)?.one_plus_z;
    let rhs = one_plus_z.powi(-(n as i32));
    Ok(DensityCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / rhs,
        one_plus_z,
        density_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    /// Sampled extremes of `1 + z` from `m` to `m_prime`.
    pub one_plus_z_min: f64,
    pub one_plus_z_max: f64,
    pub volume_m: f64,
    pub volume_m_prime: f64,
    /// `Vol(M') / (1 + z_max)^n`.
    pub lower: f64,
    /// `Vol(M') / (1 + z_min)^n`.
    pub upper: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
    /// Sampled rays that did not meet `m`.
    pub misses: usize,
    pub holds: bool,
}

/// Relative slack granted to the sandwich for tracing error.
pub const BOUNDS_TOL: f64 = 1e-8;

/// The sandwich `Vol(M')/(1+zmax)^n <= Vol(M) <= Vol(M')/(1+zmin)^n`, with
/// the redshift range measured over Liouville samples on `m_prime`.
pub fn volume_bounds_check(
    m: &CauchySurface,
    m_prime: &CauchySurface,
    samples: usize,
    seed: u64,
    settings: &TraceSettings,
) -> Result<BoundsReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let n = m.spatial_dim();
    let settings = settings_for(settings, &[m, m_prime])?;
    let zs: Vec<Option<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = RaySample::new(m_prime, m_prime.sample_one(seed, i)?, i, &settings);
            match s.one_plus_z_from(m) {
                Ok(z) => Ok(Some(z)),
                Err(Error::NoIntersection { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let hits: Vec<f64> = zs.iter().flatten().copied().collect();
    if hits.is_empty() {
        return Err(Error::NoIntersection {
            surface: m.name().to_string(),
            reason: MissReason::NotReached,
        });
    }
    let zmin = hits.iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = hits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = |s: &CauchySurface| s.riemannian_volume(&Region::Whole, Quadrature::default_for(n));
    let (vm, vmp) = (q(m)?, q(m_prime)?);
    let lower = vmp / zmax.powi(n as i32);
    let upper = vmp / zmin.powi(n as i32);
    let slack = BOUNDS_TOL * vm;
    Ok(BoundsReport {
        one_plus_z_min: zmin,
        one_plus_z_max: zmax,
        volume_m: vm,
        volume_m_prime: vmp,
        lower,
        upper,
        lower_margin: vm - lower,
        upper_margin: upper - vm,
        misses: zs.len() - hits.len(),
        holds: lower <= vm + slack && vm <= upper + slack,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExchangeSettings {
    /// Target number of outer base points; rounded up to a tensor grid.
    pub outer: usize,
    /// Fibre samples per base point.
    pub inner: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeReport {
    /// `int_D omega_M(x, L^{D'}) dV_M`.
    pub lhs: MeasureEstimate,
    /// `int_{D'} int (1+z)^(-n) domega dV_{M'}` over rays meeting `D`.
    pub rhs: MeasureEstimate,
    /// `|lhs - rhs|` over the combined sigma.
    pub residual_sigma: f64,
}

/// Midpoint outer rule over `region` with fibre Monte Carlo inside.
fn nested<F>(
    surface: &CauchySurface,
    region: &Region,
    selector: &RaySelector<'_>,
    integrand: F,
    ex: &ExchangeSettings,
    seed: u64,
    settings: &TraceSettings,
) -> Result<MeasureEstimate>
where
    F: Fn(&RaySample<'_>) -> Result<f64> + Sync,
{
    let n = surface.spatial_dim();
    let c = sphere_area(n)?;
    let k = (ex.outer as f64).powf(1.0 / n as f64).ceil().max(1.0) as usize;
    let k = if k.pow(n as u32) < ex.outer { k + 1 } else { k };
    let (lo, hi) = surface.integration_box(region)?;
    let cell: f64 = lo.iter().zip(&hi).map(|(l, h)| (h - l).max(0.0) / k as f64).product();
    let points: Vec<Vec<f64>> = grid_points(&lo, &hi, k).collect();
    let inner = ex.inner.max(1);
    let per_point: Vec<(f64, f64, usize)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let w = surface.volume_density(x)? * cell;
            let p = surface.embed(x)?;
            let mut draws = Vec::with_capacity(inner);
            for j in 0..inner {
                let idx = (i * inner + j) as u64;
                let xi = random_unit_vector(&mut stream_rng(seed, idx), n);
                let u = surface.covector_from_direction(&p, &xi)?;
                draws.push(draw(selector, &integrand, &RaySample::new(surface, u, idx, settings))?);
            }
            let s = summarise(&draws, seed);
            Ok((w * c * s.value, w * c * s.std_error, s.escapes))
        })
        .collect::<Result<_>>()?;
    let value = pairwise_sum(&per_point.iter().map(|p| p.0).collect::<Vec<_>>());
    let var = pairwise_sum(&per_point.iter().map(|p| p.1 * p.1).collect::<Vec<_>>());
    let escapes: usize = per_point.iter().map(|p| p.2).sum();
    let samples = points.len() * inner;
    Ok(MeasureEstimate {
        value,
        std_error: var.sqrt(),
        samples,
        seed,
        escapes,
        escape_fraction: escapes as f64 / samples as f64,
        systematic: systematic(value, settings),
    })
}

/// Both sides of
/// `int_D omega_M(x, L^{D'}) dV_M = int_{D'} int (1+z)^(-n) domega dV_{M'}`,
/// the inner integral on the right running over the directions at `x'`
/// whose rays meet `D`.
pub fn exchange_identity_check(
    m: &CauchySurface,
    d: &Region,
    m_prime: &CauchySurface,
    d_prime: &Region,
    ex: &ExchangeSettings,
    settings: &TraceSettings,
) -> Result<ExchangeReport> {
    let n = m.spatial_dim();
    let settings = settings_for(settings, &[m, m_prime])?;
    let to_prime = RaySelector::through(m_prime, d_prime.clone());
    let lhs = nested(m, d, &to_prime, |_| Ok(1.0), ex, ex.seed, &settings)?;
    let to_m = RaySelector::through(m, d.clone());
    let rhs = nested(
        m_prime,
        d_prime,
        &to_m,
        |s| Ok(s.one_plus_z_from(m)?.powi(-(n as i32))),
        ex,
        ex.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        &settings,
    )?;
    let sigma = lhs.sigma().hypot(rhs.sigma());
    let diff = (lhs.value - rhs.value).abs();
    Ok(ExchangeReport {
        residual_sigma: if diff == 0.0 { 0.0 } else { diff / sigma },
        lhs,
        rhs,
    })
}
