//! Null geodesics: initial data, integration, surface intersections.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, MissReason, Result};
use crate::geometry::{CausalClass, Event, SpacetimeMetric, SpacetimeVector};
use crate::ode::{self, DenseSolution, Schedule, Termination, Tolerances};
use crate::surface::{CauchySurface, SurfacePoint, UnitCovector};

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicState {
    pub event: Event,
    pub tangent: SpacetimeVector,
}

impl GeodesicState {
    pub fn new(coords: Vec<f64>, tangent: Vec<f64>) -> Self {
        let event = Event::new(coords);
        GeodesicState {
            tangent: SpacetimeVector::new(event.clone(), tangent),
            event,
        }
    }

    fn from_raw(y: &[f64]) -> Self {
        let d = y.len() / 2;
        GeodesicState::new(y[..d].to_vec(), y[d..].to_vec())
    }

    /// `|<k,k>| / (k^0)^2`.
    pub fn null_residual(&self, metric: &SpacetimeMetric) -> Result<f64> {
        let k = &self.tangent.components;
        Ok(metric.inner_raw(&self.event.coords, k, k)?.abs() / (k[0] * k[0]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSettings {
    pub tolerances: Tolerances,
    /// Affine interval `[lo, hi]` around the initial state at `lambda = 0`.
    pub lambda_range: (f64, f64),
    /// Stop once the ray's time coordinate leaves this window.
    pub time_window: Option<(f64, f64)>,
}

impl Default for TraceSettings {
    fn default() -> Self {
        TraceSettings {
            tolerances: Tolerances::default(),
            lambda_range: (-10.0, 10.0),
            time_window: None,
        }
    }
}

impl TraceSettings {
    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        let (lo, hi) = self.lambda_range;
        if !(lo <= 0.0 && hi >= 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "lambda range {:?} must be finite and contain 0",
                self.lambda_range
            )));
        }
        if let Some((a, b)) = self.time_window {
            if !(a < b) {
                return Err(Error::InvalidArgument(format!("empty time window {a}..{b}")));
            }
        }
        Ok(())
    }
}

/// Future null tangent with the given spatial components.
pub fn null_project(metric: &SpacetimeMetric, e: &Event, spatial: &[f64]) -> Result<SpacetimeVector> {
    if spatial.len() != metric.spatial_dim() {
        return Err(Error::InvalidArgument("spatial direction has wrong length".into()));
    }
    if spatial.iter().all(|c| *c == 0.0) {
        return Err(Error::InvalidArgument("spatial direction is zero".into()));
    }
    let g = metric.diagonal(&e.coords)?;
    let k0 = null_time_component(&g, spatial)?;
    let mut k = Vec::with_capacity(spatial.len() + 1);
    k.push(k0);
    k.extend_from_slice(spatial);
    Ok(SpacetimeVector::new(e.clone(), k))
}

pub(crate) fn null_time_component(g: &[f64], spatial: &[f64]) -> Result<f64> {
    let s: f64 = g[1..].iter().zip(spatial).map(|(g, v)| g * v * v).sum();
    let r = -s / g[0];
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::NoNullSolution);
    }
    Ok(r.sqrt())
}

/// A traced null geodesic, affinely parametrised with `lambda = 0` at the
/// initial state. Both directions are stored as separate dense solutions.
#[derive(Debug, Clone)]
pub struct NullGeodesic {
    metric: Arc<SpacetimeMetric>,
    initial: GeodesicState,
    forward: DenseSolution,
    backward: DenseSolution,
}

fn geodesic_rhs(metric: &SpacetimeMetric) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    let d = metric.dimension();
    move |_, y, dy| {
        dy[..d].copy_from_slice(&y[d..]);
        let (x, v) = y.split_at(d);
        metric.geodesic_acceleration(x, v, &mut dy[d..])
    }
}

fn window_stop(window: Option<(f64, f64)>) -> impl FnMut(f64, &[f64]) -> bool {
    move |_, y| match window {
        Some((a, b)) => y[0] < a || y[0] > b,
        None => false,
    }
}

impl NullGeodesic {
    pub fn integrate(
        metric: Arc<SpacetimeMetric>,
        initial: &GeodesicState,
        settings: &TraceSettings,
    ) -> Result<Self> {
        settings.validate()?;
        let y0 = Self::check_initial(&metric, initial)?;
        let sched = Schedule::Adaptive(settings.tolerances);
        let (lo, hi) = settings.lambda_range;
        let m = metric.as_ref();
        let forward = ode::integrate(
            geodesic_rhs(m),
            0.0,
            &y0,
            hi,
            sched,
            window_stop(settings.time_window),
        )?;
        let backward = ode::integrate(
            geodesic_rhs(m),
            0.0,
            &y0,
            lo,
            sched,
            window_stop(settings.time_window),
        )?;
        Ok(NullGeodesic {
            metric,
            initial: initial.clone(),
            forward,
            backward,
        })
    }

    /// Integrates with exactly the step meshes of `base`, so that nearby
    /// initial data give results that are smooth functions of the data.
    pub fn integrate_on_mesh(
        metric: Arc<SpacetimeMetric>,
        initial: &GeodesicState,
        base: &NullGeodesic,
    ) -> Result<Self> {
        Self::check_initial(&metric, initial)?;
        Self::integrate_on_mesh_unchecked(metric, initial, base)
    }

    /// As [`integrate_on_mesh`](Self::integrate_on_mesh), without requiring
    /// a null initial tangent.
    pub fn integrate_on_mesh_unchecked(
        metric: Arc<SpacetimeMetric>,
        initial: &GeodesicState,
        base: &NullGeodesic,
    ) -> Result<Self> {
        let d = metric.dimension();
        if initial.event.coords.len() != d || initial.tangent.components.len() != d {
            return Err(Error::InvalidArgument("initial state has wrong dimension".into()));
        }
        let mut y0 = initial.event.coords.clone();
        y0.extend_from_slice(&initial.tangent.components);
        let m = metric.as_ref();
        let forward = ode::integrate(
            geodesic_rhs(m),
            0.0,
            &y0,
            base.forward.t_end(),
            Schedule::Mesh(base.forward.steps()),
            |_, _| false,
        )?;
        let backward = ode::integrate(
            geodesic_rhs(m),
            0.0,
            &y0,
            base.backward.t_end(),
            Schedule::Mesh(base.backward.steps()),
            |_, _| false,
        )?;
        Ok(NullGeodesic {
            metric,
            initial: initial.clone(),
            forward,
            backward,
        })
    }

    fn check_initial(metric: &SpacetimeMetric, initial: &GeodesicState) -> Result<Vec<f64>> {
        let d = metric.dimension();
        let (x, k) = (&initial.event.coords, &initial.tangent.components);
        if x.len() != d || k.len() != d {
            return Err(Error::InvalidArgument("initial state has wrong dimension".into()));
        }
        if metric.classify(&initial.tangent)? != CausalClass::NullFuture {
            return Err(Error::InvalidArgument(format!(
                "initial tangent {k:?} is not future null"
            )));
        }
        let mut y0 = x.clone();
        y0.extend_from_slice(k);
        Ok(y0)
    }

    pub fn metric(&self) -> &Arc<SpacetimeMetric> {
        &self.metric
    }

    pub fn initial(&self) -> &GeodesicState {
        &self.initial
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        (self.backward.t_end(), self.forward.t_end())
    }

    /// Termination status of the (backward, forward) integrations.
    pub fn termination(&self) -> (Termination, Termination) {
        (self.backward.termination(), self.forward.termination())
    }

    pub fn forward(&self) -> &DenseSolution {
        &self.forward
    }

    pub fn backward(&self) -> &DenseSolution {
        &self.backward
    }

    fn branch(&self, lambda: f64) -> &DenseSolution {
        if lambda >= 0.0 {
            &self.forward
        } else {
            &self.backward
        }
    }

    pub fn covers(&self, lambda: f64) -> bool {
        let (lo, hi) = self.lambda_range();
        lambda >= lo && lambda <= hi
    }

    /// Interpolated `(x, k)` packed in one slice.
    pub fn raw_state_into(&self, lambda: f64, out: &mut [f64]) -> Result<()> {
        if !self.covers(lambda) {
            return Err(Error::Domain(format!(
                "lambda = {lambda} outside traced range {:?}",
                self.lambda_range()
            )));
        }
        self.branch(lambda).eval_into(lambda, out);
        Ok(())
    }

    pub fn state_at(&self, lambda: f64) -> Result<GeodesicState> {
        let mut y = vec![0.0; 2 * self.metric.dimension()];
        self.raw_state_into(lambda, &mut y)?;
        Ok(GeodesicState::from_raw(&y))
    }

    /// Step points of the whole trajectory in increasing `lambda`.
    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.backward.knots().iter().rev().copied().collect();
        k.extend_from_slice(&self.forward.knots()[1..]);
        k
    }

    /// `lambda` grid of knots and segment midpoints, increasing.
    pub fn sample_grid(&self) -> Vec<f64> {
        let k = self.knots();
        let mut out = Vec::with_capacity(2 * k.len());
        for w in k.windows(2) {
            out.push(w[0]);
            out.push(0.5 * (w[0] + w[1]));
        }
        out.push(*k.last().unwrap());
        out
    }

    /// `max |<k,k>| / (k^0)^2` over knots and segment midpoints.
    pub fn null_drift(&self) -> Result<f64> {
        let (lo, hi) = self.lambda_range();
        self.null_drift_between(lo, hi)
    }

    /// As [`null_drift`](Self::null_drift), restricted to `[a, b]`.
    pub fn null_drift_between(&self, a: f64, b: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in self.sample_grid() {
            if l >= a && l <= b {
                worst = worst.max(self.state_at(l)?.null_residual(&self.metric)?);
            }
        }
        Ok(worst)
    }

    /// CSV with columns `lambda, x0.., k0.., null_residual`.
    pub fn write_csv<W: Write>(&self, mut w: W, per_segment: usize) -> std::io::Result<()> {
        let d = self.metric.dimension();
        let mut header = vec!["lambda".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        header.extend((0..d).map(|i| format!("k{i}")));
        header.push("null_residual".into());
        writeln!(w, "{}", header.join(","))?;
        let knots = self.knots();
        let per = per_segment.max(1);
        let mut lambdas = Vec::new();
        for win in knots.windows(2) {
            for j in 0..per {
                lambdas.push(win[0] + (win[1] - win[0]) * j as f64 / per as f64);
            }
        }
        lambdas.push(*knots.last().unwrap());
        for l in lambdas {
            let s = self
                .state_at(l)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            let r = s
                .null_residual(&self.metric)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            let mut row = vec![format!("{l:.17e}")];
            row.extend(s.event.coords.iter().map(|v| format!("{v:.17e}")));
            row.extend(s.tangent.components.iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{r:.3e}"));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub lambda: f64,
    pub point: SurfacePoint,
    pub state: GeodesicState,
}

/// Illinois-modified regula falsi on `[a, b]` with `fa * fb < 0`, run to
/// machine precision.
fn refine_root(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> f64 {
    let mut side = 0i32;
    for _ in 0..200 {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (fb > 0.0) {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
        if (b - a).abs() <= 2.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

fn graph_gap(surface: &CauchySurface, y: &[f64]) -> f64 {
    let d = surface.spatial_dim() + 1;
    y[0] - surface.height(&y[1..d])
}

fn roots_on(sol: &DenseSolution, surface: &CauchySurface, out: &mut Vec<f64>) {
    let m = sol.segments();
    if m == 0 {
        return;
    }
    let mut y = vec![0.0; sol.dim()];
    let knots = sol.knots();
    let mut g_prev = graph_gap(surface, &sol.knot_state(0));
    for i in 0..m {
        let g_next = graph_gap(surface, &sol.knot_state(i + 1));
        if g_prev == 0.0 {
            out.push(knots[i]);
        } else if g_next != 0.0 && (g_prev > 0.0) != (g_next > 0.0) {
            let theta = refine_root(
                |th| {
                    sol.eval_segment_into(i, th, &mut y);
                    graph_gap(surface, &y)
                },
                0.0,
                1.0,
                g_prev,
                g_next,
            );
            out.push(knots[i] + theta * (knots[i + 1] - knots[i]));
        }
        g_prev = g_next;
    }
    if g_prev == 0.0 {
        out.push(knots[m]);
    }
}

/// The unique crossing of `ray` with `surface`.
pub fn intersect_surface(ray: &NullGeodesic, surface: &CauchySurface) -> Result<Intersection> {
    let mut roots = Vec::new();
    roots_on(&ray.forward, surface, &mut roots);
    roots_on(&ray.backward, surface, &mut roots);
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(1.0));
    let mut hits = Vec::new();
    for &l in &roots {
        let state = ray.state_at(l)?;
        if surface.contains(state.event.spatial()) {
            hits.push((l, state));
        }
    }
    match hits.len() {
        0 => Err(Error::NoIntersection {
            surface: surface.name().to_string(),
            reason: if roots.is_empty() {
                MissReason::NotReached
            } else {
                MissReason::OutsideDomain
            },
        }),
        1 => {
            let (lambda, state) = hits.pop().unwrap();
            let point = surface.embed(state.event.spatial())?;
            Ok(Intersection {
                lambda,
                point,
                state,
            })
        }
        count => Err(Error::MultipleIntersection {
            surface: surface.name().to_string(),
            count,
        }),
    }
}

/// Where a ray came from, when it was built from a point of a cosphere bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct RayAnchor {
    pub surface: String,
    pub covector: UnitCovector,
}

/// A light ray: a null geodesic up to affine reparametrisation.
#[derive(Debug, Clone)]
pub struct LightRay {
    pub representative: NullGeodesic,
    pub anchor: Option<RayAnchor>,
}

impl LightRay {
    pub fn new(representative: NullGeodesic) -> Self {
        LightRay {
            representative,
            anchor: None,
        }
    }

    pub fn intersect(&self, surface: &CauchySurface) -> Result<Intersection> {
        intersect_surface(&self.representative, surface)
    }
}

/// Null tangent at `u.base` whose covector image on `surface` is `u`,
/// normalised by `<k, n> = 1`.
pub fn tangent_from_covector(surface: &CauchySurface, u: &UnitCovector) -> Result<SpacetimeVector> {
    let x = &u.base.spatial;
    let h = surface.induced_metric(&u.base)?;
    let p = nalgebra::DVector::from_column_slice(&u.covector);
    let w = h
        .cholesky()
        .ok_or_else(|| Error::Domain("induced metric not positive definite".into()))?
        .solve(&p);
    let n = surface.future_normal_raw(x)?;
    let lifted = surface.lift(x, w.as_slice());
    let k: Vec<f64> = n.iter().zip(&lifted).map(|(a, b)| a + b).collect();
    let metric = surface.metric();
    let e = &u.base.event;
    let k = null_project(metric, e, &k[1..])?;
    let kn = metric.inner_raw(&e.coords, &k.components, &n)?;
    Ok(k.scaled(1.0 / kn))
}

/// The ray through `u`, traced both ways from its base point.
pub fn ray_from_covector(
    surface: &CauchySurface,
    u: &UnitCovector,
    settings: &TraceSettings,
) -> Result<LightRay> {
    let k = tangent_from_covector(surface, u)?;
    let initial = GeodesicState {
        event: u.base.event.clone(),
        tangent: k,
    };
    let geo = NullGeodesic::integrate(surface.metric().clone(), &initial, settings)?;
    Ok(LightRay {
        representative: geo,
        anchor: Some(RayAnchor {
            surface: surface.name().to_string(),
            covector: u.clone(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Domain;
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use std::f64::consts::E;

    fn mink() -> Arc<SpacetimeMetric> {
        Arc::new(SpacetimeMetric::minkowski(2).unwrap())
    }

    fn flrw_exp() -> Arc<SpacetimeMetric> {
        Arc::new(SpacetimeMetric::flrw(2, "exp(t)", BTreeMap::new(), (-5.0, 5.0)).unwrap())
    }

    fn surf(graph: &str, domain: Domain, m: &Arc<SpacetimeMetric>) -> CauchySurface {
        CauchySurface::new("S", graph, domain, m.clone(), &BTreeMap::new()).unwrap()
    }

    fn ray(m: &Arc<SpacetimeMetric>, x: [f64; 3], k: [f64; 3], range: (f64, f64)) -> NullGeodesic {
        let settings = TraceSettings {
            lambda_range: range,
            ..Default::default()
        };
        NullGeodesic::integrate(m.clone(), &GeodesicState::new(x.to_vec(), k.to_vec()), &settings)
            .unwrap()
    }

    #[test]
    fn null_project_examples() {
        let m = mink();
        let o = Event::new(vec![0.0; 3]);
        assert_eq!(null_project(&m, &o, &[1.0, 0.0]).unwrap().components, vec![1.0, 1.0, 0.0]);
        assert_eq!(null_project(&m, &o, &[3.0, 4.0]).unwrap().components, vec![5.0, 3.0, 4.0]);
        let f = flrw_exp();
        let k = null_project(&f, &Event::new(vec![1.0, 0.0, 0.0]), &[1.0, 0.0]).unwrap();
        assert!((k.components[0] - E).abs() < 1e-15);
        assert!(null_project(&m, &o, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn minkowski_ray_is_straight() {
        let g = ray(&mink(), [0.0; 3], [1.0, 1.0, 0.0], (0.0, 2.0));
        let s = g.state_at(2.0).unwrap();
        for (a, b) in s.event.coords.iter().zip([2.0, 2.0, 0.0]) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(s.tangent.components, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn flrw_comoving_momentum_is_conserved() {
        let m = flrw_exp();
        let g = ray(&m, [0.0, 0.1, 0.2], [1.0, 0.6, 0.8], (-1.0, 3.0));
        for l in g.sample_grid() {
            let s = g.state_at(l).unwrap();
            let a = m.scale_factor(s.event.time()).unwrap();
            let k = &s.tangent.components;
            assert!((a * a * k[1] - 0.6).abs() < 1e-9 * 0.6, "lambda {l}");
            assert!((a * a * k[2] - 0.8).abs() < 1e-9 * 0.8);
        }
        assert!(g.null_drift_between(0.0, 1.0).unwrap() < 1e-10);
        assert!(g.null_drift_between(-1.0, 0.0).unwrap() < 1e-10);
    }

    #[test]
    fn intersection_examples() {
        let m = mink();
        let g = ray(&m, [0.0; 3], [1.0, 1.0, 0.0], (-5.0, 5.0));
        let flat = surf("1", Domain::Unbounded, &m);
        let hit = intersect_surface(&g, &flat).unwrap();
        assert!((hit.lambda - 1.0).abs() < 1e-12);
        assert!((hit.point.spatial[0] - 1.0).abs() < 1e-12);
        let tilted = surf("1 + 0.5*x", Domain::Unbounded, &m);
        let hit = intersect_surface(&g, &tilted).unwrap();
        assert!((hit.lambda - 2.0).abs() < 1e-12);
        assert!((hit.state.event.coords[1] - 2.0).abs() < 1e-12);
        let patch = surf(
            "1",
            Domain::Box {
                lo: vec![-3.0, -1.0],
                hi: vec![-2.0, 1.0],
            },
            &m,
        );
        assert_eq!(
            intersect_surface(&g, &patch),
            Err(Error::NoIntersection {
                surface: "S".into(),
                reason: MissReason::OutsideDomain
            })
        );
        let late = surf("20", Domain::Unbounded, &m);
        assert!(matches!(
            intersect_surface(&g, &late),
            Err(Error::NoIntersection {
                reason: MissReason::NotReached,
                ..
            })
        ));
    }

    #[test]
    fn ray_from_covector_examples() {
        let m = mink();
        let s = surf("0", Domain::Unbounded, &m);
        let u = UnitCovector {
            base: s.embed(&[0.0, 0.0]).unwrap(),
            covector: vec![1.0, 0.0],
        };
        let r = ray_from_covector(&s, &u, &TraceSettings::default()).unwrap();
        assert_eq!(r.representative.initial().tangent.components, vec![1.0, 1.0, 0.0]);
        let f = flrw_exp();
        let s = surf("0", Domain::Unbounded, &f);
        let u = UnitCovector {
            base: s.embed(&[0.3, 0.0]).unwrap(),
            covector: vec![1.0, 0.0],
        };
        let k = tangent_from_covector(&s, &u).unwrap();
        for (a, b) in k.components.iter().zip([1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn multiple_crossings_are_reported() {
        // spacelike near the origin, but steeper than light for |x| > 10
        let m = mink();
        let s = surf("0.05*x^2", Domain::Unbounded, &m);
        let g = ray(&m, [-1.0, 0.0, 0.0], [1.0, 1.0, 0.0], (-5.0, 30.0));
        assert_eq!(
            intersect_surface(&g, &s),
            Err(Error::MultipleIntersection {
                surface: "S".into(),
                count: 2
            })
        );
    }

    #[test]
    fn csv_has_constant_tangent_in_flat_space() {
        let g = ray(&mink(), [0.0; 3], [1.0, 0.6, 0.8], (-1.0, 1.0));
        let mut buf = Vec::new();
        g.write_csv(&mut buf, 3).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "lambda,x0,x1,x2,k0,k1,k2,null_residual");
        for line in lines {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(&cols[4..7], &[1.0, 0.6, 0.8]);
        }
    }

    #[test]
    fn time_window_stops_integration() {
        let m = flrw_exp();
        let settings = TraceSettings {
            lambda_range: (-50.0, 50.0),
            time_window: Some((-0.5, 0.5)),
            ..Default::default()
        };
        let g = NullGeodesic::integrate(
            m,
            &GeodesicState::new(vec![0.0; 3], vec![1.0, 1.0, 0.0]),
            &settings,
        )
        .unwrap();
        assert_eq!(g.termination(), (Termination::Stopped, Termination::Stopped));
        let (lo, hi) = g.lambda_range();
        assert!(g.state_at(hi).unwrap().event.time() > 0.5);
        assert!(g.state_at(lo).unwrap().event.time() < -0.5);
        assert!(hi < 50.0 && lo > -50.0);
    }

    #[test]
    fn chart_exit_is_reported() {
        let m = Arc::new(SpacetimeMetric::flrw(2, "t^(2/3)", BTreeMap::new(), (0.01, 100.0)).unwrap());
        let settings = TraceSettings {
            lambda_range: (-50.0, 1.0),
            ..Default::default()
        };
        let k = null_project(&m, &Event::new(vec![1.0, 0.0, 0.0]), &[1.0, 0.0]).unwrap();
        let g = NullGeodesic::integrate(
            m,
            &GeodesicState::new(vec![1.0, 0.0, 0.0], k.components),
            &settings,
        )
        .unwrap();
        assert_eq!(g.termination().0, Termination::ChartExit);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn round_trip_and_reparametrisation(
            x in 0.0f64..1.0, y in 0.0f64..1.0, ang in 0.0f64..std::f64::consts::TAU,
            c in 0.5f64..2.0,
        ) {
            let m = flrw_exp();
            let s = CauchySurface::new(
                "S", "0.2 + 0.05*sin(2*pi*x)*cos(2*pi*y)",
                Domain::Torus { periods: vec![1.0, 1.0] }, m.clone(), &BTreeMap::new(),
            ).unwrap();
            let t = CauchySurface::new(
                "T", "0.8 + 0.05*cos(2*pi*x)",
                Domain::Torus { periods: vec![1.0, 1.0] }, m.clone(), &BTreeMap::new(),
            ).unwrap();
            let p = s.embed(&[x, y]).unwrap();
            let u = s.covector_from_direction(&p, &[ang.cos(), ang.sin()]).unwrap();
            let r = ray_from_covector(&s, &u, &TraceSettings::default()).unwrap();
            let hit = r.intersect(&s).unwrap();
            prop_assert!(hit.lambda.abs() < 1e-12);
            let k2 = r.representative.initial().tangent.scaled(c);
            let g2 = NullGeodesic::integrate(
                m.clone(),
                &GeodesicState { event: p.event.clone(), tangent: k2 },
                &TraceSettings::default(),
            ).unwrap();
            let a = r.intersect(&t).unwrap();
            let b = intersect_surface(&g2, &t).unwrap();
            let dx = t.displacement(&a.point.spatial, &b.point.spatial);
            prop_assert!(dx.iter().all(|v| v.abs() < 1e-9), "{:?}", dx);
            prop_assert!((a.lambda - c * b.lambda).abs() < 1e-9 * a.lambda.abs().max(1.0));
            prop_assert!(r.representative.null_drift_between(-0.5, 0.5).unwrap() < 1e-10);
        }
    }
}
