//! Coordinate Lorentzian metrics of signature (+,-,...,-).
//!
//! Every supported family is diagonal in its coordinates, `coords[0]` is a
//! global time function and `d/dt` is future timelike everywhere in the
//! chart. The time orientation is therefore fixed by the sign of the time
//! component.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Formula, Variables};

/// Relative tolerance on `|<v,v>| / (v^0)^2` below which a vector is null.
pub const EPS_NULL: f64 = 1e-10;

/// Default step for finite-difference Christoffel symbols.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub coords: Vec<f64>,
}

impl Event {
    pub fn new(coords: Vec<f64>) -> Self {
        Event { coords }
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeVector {
    pub base: Event,
    pub components: Vec<f64>,
}

impl SpacetimeVector {
    pub fn new(base: Event, components: Vec<f64>) -> Self {
        SpacetimeVector { base, components }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SpacetimeVector {
            base: self.base.clone(),
            components: self.components.iter().map(|v| v * c).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalClass {
    TimelikeFuture,
    TimelikePast,
    NullFuture,
    NullPast,
    Spacelike,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChristoffelMode {
    Analytic,
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone)]
pub enum MetricFamily {
    Minkowski,
    /// `dt^2 - a(t)^2 |dx|^2`, with `a` an expression in `t`.
    Flrw { scale_factor: Formula },
    /// `Omega(t, x)^2 (dt^2 - |dx|^2)` over the static flat product.
    ConformalProduct { factor: Formula },
}

/// Christoffel symbols `Gamma^mu_{ab}` stored densely as `[mu][a][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, mu: usize, a: usize, b: usize) -> f64 {
        self.data[(mu * self.dim + a) * self.dim + b]
    }

    fn set(&mut self, mu: usize, a: usize, b: usize, v: f64) {
        let d = self.dim;
        self.data[(mu * d + a) * d + b] = v;
    }

    fn add(&mut self, mu: usize, a: usize, b: usize, v: f64) {
        let d = self.dim;
        self.data[(mu * d + a) * d + b] += v;
    }

    /// `-Gamma^mu_{ab} u^a v^b`.
    pub fn contract_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (mu, o) in out.iter_mut().enumerate().take(d) {
            let mut acc = 0.0;
            for a in 0..d {
                for b in 0..d {
                    acc += self.get(mu, a, b) * u[a] * v[b];
                }
            }
            *o = -acc;
        }
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SpacetimeMetric {
    spatial_dim: usize,
    family: MetricFamily,
    parameters: BTreeMap<String, f64>,
    christoffel: ChristoffelMode,
    time_range: (f64, f64),
}

impl SpacetimeMetric {
    pub fn minkowski(spatial_dim: usize) -> Result<Self> {
        check_dim(spatial_dim)?;
        Ok(SpacetimeMetric {
            spatial_dim,
            family: MetricFamily::Minkowski,
            parameters: BTreeMap::new(),
            christoffel: ChristoffelMode::Analytic,
            time_range: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    /// FLRW metric with scale factor `a(t)` given as an expression in `t`.
    /// The scale factor must be positive and finite on the whole (finite)
    /// time range.
    pub fn flrw(
        spatial_dim: usize,
        scale_factor: &str,
        parameters: BTreeMap<String, f64>,
        time_range: (f64, f64),
    ) -> Result<Self> {
        check_dim(spatial_dim)?;
        check_time_range(time_range)?;
        let a = Formula::parse(scale_factor, &Variables::time(), &parameters)
            .map_err(|e| Error::InvalidArgument(format!("scale factor: {e}")))?;
        for k in 0..=256 {
            let t = time_range.0 + (time_range.1 - time_range.0) * k as f64 / 256.0;
            let v = a.eval(&[t]);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!(
                    "scale factor a({t}) = {v} is not positive"
                )));
            }
        }
        Ok(SpacetimeMetric {
            spatial_dim,
            family: MetricFamily::Flrw { scale_factor: a },
            parameters,
            christoffel: ChristoffelMode::Analytic,
            time_range,
        })
    }

    /// Conformally flat metric `Omega(t,x)^2 (dt^2 - |dx|^2)`.
    pub fn conformal_product(
        spatial_dim: usize,
        factor: &str,
        parameters: BTreeMap<String, f64>,
        time_range: (f64, f64),
    ) -> Result<Self> {
        check_dim(spatial_dim)?;
        check_time_range(time_range)?;
        let omega = Formula::parse(factor, &Variables::spacetime(spatial_dim), &parameters)
            .map_err(|e| Error::InvalidArgument(format!("conformal factor: {e}")))?;
        let mut x = vec![0.0; spatial_dim + 1];
        for k in 0..=32 {
            x[0] = time_range.0 + (time_range.1 - time_range.0) * k as f64 / 32.0;
            for j in 0..8 {
                for xi in x.iter_mut().skip(1) {
                    *xi = j as f64 / 8.0;
                }
                let v = omega.eval(&x);
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Domain(format!(
                        "conformal factor {v} is not positive at {x:?}"
                    )));
                }
            }
        }
        Ok(SpacetimeMetric {
            spatial_dim,
            family: MetricFamily::ConformalProduct { factor: omega },
            parameters,
            christoffel: ChristoffelMode::Analytic,
            time_range,
        })
    }

    pub fn with_christoffel(mut self, mode: ChristoffelMode) -> Self {
        self.christoffel = mode;
        self
    }

    pub fn spatial_dim(&self) -> usize {
        self.spatial_dim
    }

    pub fn dimension(&self) -> usize {
        self.spatial_dim + 1
    }

    pub fn family(&self) -> &MetricFamily {
        &self.family
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn christoffel_mode(&self) -> ChristoffelMode {
        self.christoffel
    }

    pub fn time_range(&self) -> (f64, f64) {
        self.time_range
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            MetricFamily::Minkowski => "minkowski",
            MetricFamily::Flrw { .. } => "flrw",
            MetricFamily::ConformalProduct { .. } => "conformal",
        }
    }

    /// Scale factor `a(t)` for FLRW metrics.
    pub fn scale_factor(&self, t: f64) -> Option<f64> {
        match &self.family {
            MetricFamily::Flrw { scale_factor } => Some(scale_factor.eval(&[t])),
            _ => None,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter().all(|v| v.is_finite())
            && x[0] >= self.time_range.0
            && x[0] <= self.time_range.1
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("event {x:?} outside the chart")))
        }
    }

    /// Diagonal metric coefficients `g_{mu mu}` at raw coordinates.
    pub fn diagonal_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(x)?;
        match &self.family {
            MetricFamily::Minkowski => {
                out[0] = 1.0;
                out[1..].fill(-1.0);
            }
            MetricFamily::Flrw { scale_factor } => {
                let a = scale_factor.eval(&x[..1]);
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::Domain(format!("a({}) = {a}", x[0])));
                }
                out[0] = 1.0;
                out[1..].fill(-a * a);
            }
            MetricFamily::ConformalProduct { factor } => {
                let w = factor.eval(x);
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Domain(format!("Omega{x:?} = {w}")));
                }
                out[0] = w * w;
                out[1..].fill(-w * w);
            }
        }
        Ok(())
    }

    pub fn diagonal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dimension()];
        self.diagonal_into(x, &mut g)?;
        Ok(g)
    }

    pub fn metric_at(&self, e: &Event) -> Result<DMatrix<f64>> {
        let g = self.diagonal(&e.coords)?;
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(g)))
    }

    /// `u^T g(x) v` at raw coordinates.
    pub fn inner_raw(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let g = self.diagonal(x)?;
        Ok(g.iter().zip(u).zip(v).map(|((g, a), b)| g * (a * b)).sum())
    }

    pub fn lorentz_inner(&self, e: &Event, u: &SpacetimeVector, v: &SpacetimeVector) -> Result<f64> {
        if u.base != *e || v.base != *e {
            return Err(Error::InvalidArgument(
                "vectors are not based at the given event".into(),
            ));
        }
        self.inner_raw(&e.coords, &u.components, &v.components)
    }

    pub fn christoffel_at(&self, e: &Event) -> Result<Christoffel> {
        self.christoffel_raw(&e.coords)
    }

    pub fn christoffel_raw(&self, x: &[f64]) -> Result<Christoffel> {
        match self.christoffel {
            ChristoffelMode::Analytic => self.christoffel_analytic(x),
            ChristoffelMode::FiniteDifference { step } => self.christoffel_fd(x, step),
        }
    }

    fn christoffel_analytic(&self, x: &[f64]) -> Result<Christoffel> {
        self.check(x)?;
        let d = self.dimension();
        let mut gamma = Christoffel::zeros(d);
        match &self.family {
            MetricFamily::Minkowski => {}
            MetricFamily::Flrw { scale_factor } => {
                let a = scale_factor.eval(&x[..1]);
                let adot = scale_factor.partial(0, &x[..1]);
                for i in 1..d {
                    gamma.set(0, i, i, a * adot);
                    gamma.set(i, 0, i, adot / a);
                    gamma.set(i, i, 0, adot / a);
                }
            }
            MetricFamily::ConformalProduct { factor } => {
                let w = factor.eval(x);
                let mut dphi = vec![0.0; d];
                factor.gradient_into(x, &mut dphi);
                dphi.iter_mut().for_each(|p| *p /= w);
                let eta = |m: usize| if m == 0 { 1.0 } else { -1.0 };
                for mu in 0..d {
                    for a in 0..d {
                        gamma.add(mu, mu, a, dphi[a]);
                        gamma.add(mu, a, mu, dphi[a]);
                        // -eta_{aa} eta^{mu mu} d_mu phi
                        gamma.add(mu, a, a, -eta(a) * eta(mu) * dphi[mu]);
                    }
                }
            }
        }
        Ok(gamma)
    }

    fn christoffel_fd(&self, x: &[f64], h: f64) -> Result<Christoffel> {
        let d = self.dimension();
        let g = self.diagonal(x)?;
        // dg[rho][nu] = d_rho g_{nu nu}
        let mut dg = vec![vec![0.0; d]; d];
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for rho in 0..d {
            xp[rho] = x[rho] + h;
            self.diagonal_into(&xp, &mut gp)?;
            xp[rho] = x[rho] - h;
            self.diagonal_into(&xp, &mut gm)?;
            xp[rho] = x[rho];
            for nu in 0..d {
                dg[rho][nu] = (gp[nu] - gm[nu]) / (2.0 * h);
            }
        }
        let mut gamma = Christoffel::zeros(d);
        for mu in 0..d {
            let ginv = 1.0 / g[mu];
            for a in 0..d {
                for b in 0..d {
                    let mut s = 0.0;
                    if mu == b {
                        s += dg[a][mu];
                    }
                    if mu == a {
                        s += dg[b][mu];
                    }
                    if a == b {
                        s -= dg[mu][a];
                    }
                    gamma.set(mu, a, b, 0.5 * ginv * s);
                }
            }
        }
        Ok(gamma)
    }

    /// Geodesic acceleration `-Gamma^mu_{ab} v^a v^b` at raw coordinates.
    pub fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        if let ChristoffelMode::FiniteDifference { .. } = self.christoffel {
            let gamma = self.christoffel_raw(x)?;
            gamma.contract_into(v, v, out);
            return Ok(());
        }
        self.check(x)?;
        match &self.family {
            MetricFamily::Minkowski => out.fill(0.0),
            MetricFamily::Flrw { scale_factor } => {
                let a = scale_factor.eval(&x[..1]);
                let adot = scale_factor.partial(0, &x[..1]);
                if !(a > 0.0 && a.is_finite() && adot.is_finite()) {
                    return Err(Error::Domain(format!("a({}) = {a}", x[0])));
                }
                let v2: f64 = v[1..].iter().map(|c| c * c).sum();
                out[0] = -a * adot * v2;
                let h = adot / a;
                for i in 1..v.len() {
                    out[i] = -2.0 * h * v[0] * v[i];
                }
            }
            MetricFamily::ConformalProduct { factor } => {
                let w = factor.eval(x);
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Domain(format!("Omega{x:?} = {w}")));
                }
                factor.gradient_into(x, out);
                // out currently holds d_mu Omega
                let mut dphi_v = 0.0;
                for (o, vi) in out.iter_mut().zip(v) {
                    *o /= w;
                    dphi_v += *o * vi;
                }
                let eta_vv = v[0] * v[0] - v[1..].iter().map(|c| c * c).sum::<f64>();
                for mu in 0..v.len() {
                    let up = if mu == 0 { out[mu] } else { -out[mu] };
                    out[mu] = -2.0 * dphi_v * v[mu] + eta_vv * up;
                }
            }
        }
        Ok(())
    }

    /// `d_rho g_{mu nu}` reconstructed from the connection by metric
    /// compatibility, as `[rho][mu][nu]`.
    pub fn metric_derivative_from_connection(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dimension();
        let g = self.diagonal(x)?;
        let gamma = self.christoffel_raw(x)?;
        let mut out = vec![0.0; d * d * d];
        for rho in 0..d {
            for mu in 0..d {
                for nu in 0..d {
                    out[(rho * d + mu) * d + nu] =
                        gamma.get(nu, rho, mu) * g[nu] + gamma.get(mu, rho, nu) * g[mu];
                }
            }
        }
        Ok(out)
    }

    pub fn classify(&self, v: &SpacetimeVector) -> Result<CausalClass> {
        classify_with(self.inner_raw(&v.base.coords, &v.components, &v.components)?, &v.components)
    }

    pub fn normalize_observer(&self, v: &SpacetimeVector) -> Result<SpacetimeVector> {
        let q = self.inner_raw(&v.base.coords, &v.components, &v.components)?;
        match classify_with(q, &v.components)? {
            CausalClass::TimelikeFuture => Ok(v.scaled(1.0 / q.sqrt())),
            _ => Err(Error::NotTimelike { norm: q }),
        }
    }
}

fn classify_with(q: f64, v: &[f64]) -> Result<CausalClass> {
    if v.iter().all(|c| *c == 0.0) {
        return Ok(CausalClass::Zero);
    }
    let t = v[0];
    let tol = EPS_NULL * t * t;
    Ok(if q.abs() <= tol && t != 0.0 {
        if t > 0.0 {
            CausalClass::NullFuture
        } else {
            CausalClass::NullPast
        }
    } else if q > 0.0 {
        if t > 0.0 {
            CausalClass::TimelikeFuture
        } else {
            CausalClass::TimelikePast
        }
    } else {
        CausalClass::Spacelike
    })
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "spatial dimension must be at least 2, got {n}"
        )));
    }
    Ok(())
}

fn check_time_range(r: (f64, f64)) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && r.0 < r.1) {
        return Err(Error::InvalidArgument(format!("bad time range {r:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn flrw_exp(n: usize) -> SpacetimeMetric {
        SpacetimeMetric::flrw(n, "exp(t)", BTreeMap::new(), (-3.0, 3.0)).unwrap()
    }

    fn conformal() -> SpacetimeMetric {
        SpacetimeMetric::conformal_product(
            2,
            "exp(0.2*sin(2*pi*x) + 0.1*t*cos(2*pi*y))",
            BTreeMap::new(),
            (-2.0, 2.0),
        )
        .unwrap()
    }

    fn ev(c: &[f64]) -> Event {
        Event::new(c.to_vec())
    }

    fn vecat(e: &Event, c: &[f64]) -> SpacetimeVector {
        SpacetimeVector::new(e.clone(), c.to_vec())
    }

    #[test]
    fn metric_at_examples() {
        let m = SpacetimeMetric::minkowski(2).unwrap();
        let g = m.metric_at(&ev(&[0.3, 1.0, 2.0])).unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0, -1.0]));
        let f = flrw_exp(3);
        let g0 = f.metric_at(&ev(&[0.0, 0.1, 0.2, 0.3])).unwrap();
        assert_eq!(g0, DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0, -1.0, -1.0]));
        let g1 = f.metric_at(&ev(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        for i in 1..4 {
            assert!((g1[(i, i)] + E * E).abs() < 1e-14);
        }
    }

    #[test]
    fn metric_outside_chart_is_domain_error() {
        let m = SpacetimeMetric::flrw(2, "t^(2/3)", BTreeMap::new(), (0.5, 10.0)).unwrap();
        assert!(matches!(m.metric_at(&ev(&[0.1, 0.0, 0.0])), Err(Error::Domain(_))));
        let bad = SpacetimeMetric::flrw(2, "-1", BTreeMap::new(), (0.0, 1.0));
        assert!(matches!(bad, Err(Error::Domain(_))));
        let crossing = SpacetimeMetric::flrw(2, "t", BTreeMap::new(), (-1.0, 1.0));
        assert!(crossing.is_err());
    }

    #[test]
    fn lorentz_inner_examples() {
        let m = SpacetimeMetric::minkowski(2).unwrap();
        let e = ev(&[0.0, 0.0, 0.0]);
        let ip = |u: &[f64], v: &[f64]| m.lorentz_inner(&e, &vecat(&e, u), &vecat(&e, v)).unwrap();
        assert_eq!(ip(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(ip(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]), 0.0);
        assert_eq!(ip(&[1.0, 0.5, 0.0], &[1.0, 1.0, 0.0]), 0.5);
        let other = ev(&[1.0, 0.0, 0.0]);
        assert!(m
            .lorentz_inner(&e, &vecat(&other, &[1.0, 0.0, 0.0]), &vecat(&e, &[1.0, 0.0, 0.0]))
            .is_err());
    }

    #[test]
    fn christoffel_examples() {
        let m = SpacetimeMetric::minkowski(2).unwrap();
        let g = m.christoffel_at(&ev(&[0.2, 0.1, 0.3])).unwrap();
        assert_eq!(g.max_abs_diff(&Christoffel::zeros(3)), 0.0);

        let f = flrw_exp(2);
        let g = f.christoffel_at(&ev(&[0.0, 0.4, 0.1])).unwrap();
        for i in 1..3 {
            assert!((g.get(0, i, i) - 1.0).abs() < 1e-14);
            assert!((g.get(i, 0, i) - 1.0).abs() < 1e-14);
            assert!((g.get(i, i, 0) - 1.0).abs() < 1e-14);
        }

        let fd = flrw_exp(2).with_christoffel(ChristoffelMode::FiniteDifference { step: 1e-4 });
        for t in [-1.0, 0.0, 0.7, 1.3] {
            let x = ev(&[t, 0.2, -0.3]);
            let diff = f.christoffel_at(&x).unwrap().max_abs_diff(&fd.christoffel_at(&x).unwrap());
            assert!(diff < 1e-6, "t={t}: {diff}");
        }
    }

    #[test]
    fn finite_difference_christoffels_converge_quadratically() {
        let m = conformal();
        let x = ev(&[0.3, 0.21, 0.67]);
        let exact = m.christoffel_at(&x).unwrap();
        let err = |h: f64| {
            m.clone()
                .with_christoffel(ChristoffelMode::FiniteDifference { step: h })
                .christoffel_at(&x)
                .unwrap()
                .max_abs_diff(&exact)
        };
        let order = (err(1e-2) / err(5e-3)).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn classify_examples() {
        let m = SpacetimeMetric::minkowski(2).unwrap();
        let e = ev(&[0.0, 0.0, 0.0]);
        let c = |v: &[f64]| m.classify(&vecat(&e, v)).unwrap();
        assert_eq!(c(&[1.0, 0.0, 0.0]), CausalClass::TimelikeFuture);
        assert_eq!(c(&[-1.0, 0.0, 0.0]), CausalClass::TimelikePast);
        assert_eq!(c(&[1.0, 1.0, 0.0]), CausalClass::NullFuture);
        assert_eq!(c(&[-1.0, 0.0, 1.0]), CausalClass::NullPast);
        assert_eq!(c(&[0.0, 1.0, 0.0]), CausalClass::Spacelike);
        assert_eq!(c(&[0.0, 0.0, 0.0]), CausalClass::Zero);
    }

    #[test]
    fn normalize_observer_examples() {
        let m = SpacetimeMetric::minkowski(2).unwrap();
        let e = ev(&[0.0, 0.0, 0.0]);
        let n = m.normalize_observer(&vecat(&e, &[2.0, 0.0, 0.0])).unwrap();
        assert_eq!(n.components, vec![1.0, 0.0, 0.0]);
        let n = m.normalize_observer(&vecat(&e, &[1.0, 0.5, 0.0])).unwrap();
        assert!((n.components[0] - 1.154_700_538_379_251_5).abs() < 1e-12);
        assert!((n.components[1] - 0.577_350_269_189_625_8).abs() < 1e-12);
        let q = m.lorentz_inner(&e, &n, &n).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        assert!(matches!(
            m.normalize_observer(&vecat(&e, &[0.0, 1.0, 0.0])),
            Err(Error::NotTimelike { .. })
        ));
    }

    #[test]
    fn acceleration_fast_path_matches_christoffel_contraction() {
        for m in [flrw_exp(2), conformal()] {
            let x = [0.4, 0.3, 0.8];
            let v = [1.3, 0.4, -0.9];
            let mut fast = [0.0; 3];
            let mut slow = [0.0; 3];
            m.geodesic_acceleration(&x, &v, &mut fast).unwrap();
            m.christoffel_raw(&x).unwrap().contract_into(&v, &v, &mut slow);
            for i in 0..3 {
                assert!((fast[i] - slow[i]).abs() < 1e-13, "{fast:?} vs {slow:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn inner_product_is_symmetric_and_bilinear(
            t in -1.0f64..1.0, x in 0.0f64..1.0, y in 0.0f64..1.0,
            u in prop::array::uniform3(-2.0f64..2.0),
            v in prop::array::uniform3(-2.0f64..2.0),
            w in prop::array::uniform3(-2.0f64..2.0),
            c in -3.0f64..3.0,
        ) {
            for m in [flrw_exp(2), conformal()] {
                let p = [t, x, y];
                let ip = |a: &[f64], b: &[f64]| m.inner_raw(&p, a, b).unwrap();
                prop_assert_eq!(ip(&u, &v), ip(&v, &u));
                let lin: Vec<f64> = (0..3).map(|i| u[i] + c * w[i]).collect();
                let lhs = ip(&lin, &v);
                let rhs = ip(&u, &v) + c * ip(&w, &v);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn christoffels_symmetric_in_lower_indices(
            t in -1.0f64..1.0, x in 0.0f64..1.0, y in 0.0f64..1.0,
        ) {
            let p = [t, x, y];
            for m in [flrw_exp(2), conformal()] {
                let exact = m.christoffel_raw(&p).unwrap();
                let fd = m.clone()
                    .with_christoffel(ChristoffelMode::FiniteDifference { step: DEFAULT_FD_STEP })
                    .christoffel_raw(&p).unwrap();
                for mu in 0..3 { for a in 0..3 { for b in 0..3 {
                    prop_assert_eq!(exact.get(mu, a, b), exact.get(mu, b, a));
                    prop_assert!((fd.get(mu, a, b) - fd.get(mu, b, a)).abs() <= 1e-12);
                }}}
            }
        }

        #[test]
        fn metric_compatibility(
            t in -1.0f64..1.0, x in 0.0f64..1.0, y in 0.0f64..1.0,
        ) {
            let p = [t, x, y];
            let h = 1e-5;
            for m in [flrw_exp(2), conformal()] {
                let recon = m.metric_derivative_from_connection(&p).unwrap();
                for rho in 0..3 {
                    let mut hi = p; hi[rho] += h;
                    let mut lo = p; lo[rho] -= h;
                    let gh = m.diagonal(&hi).unwrap();
                    let gl = m.diagonal(&lo).unwrap();
                    for mu in 0..3 {
                        let fd = (gh[mu] - gl[mu]) / (2.0 * h);
                        let r = recon[(rho * 3 + mu) * 3 + mu];
                        prop_assert!((fd - r).abs() < 1e-7 * (1.0 + r.abs()), "{} vs {}", fd, r);
                    }
                }
            }
        }
    }
}
