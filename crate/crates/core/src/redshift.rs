//! Frequency ratios between observers along a light ray.

use crate::error::{Error, Result};
use crate::geodesic::{intersect_surface, Intersection, NullGeodesic};
use crate::geometry::{CausalClass, Event, SpacetimeMetric, SpacetimeVector};
use crate::surface::CauchySurface;

/// Tolerance on `<n, n> = 1` for observers.
pub const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RedshiftResult {
    pub one_plus_z: f64,
    pub emitter: (Event, SpacetimeVector),
    pub receiver: (Event, SpacetimeVector),
    /// `(<n_E, k(E)>, <n_R, k(R)>)`.
    pub pairings: (f64, f64),
}

impl RedshiftResult {
    pub fn z(&self) -> f64 {
        self.one_plus_z - 1.0
    }
}

fn check_observer(metric: &SpacetimeMetric, at: &[f64], n: &[f64]) -> Result<()> {
    let nn = metric.inner_raw(at, n, n)?;
    let class = metric.classify(&SpacetimeVector::new(Event::new(at.to_vec()), n.to_vec()))?;
    if class != CausalClass::TimelikeFuture {
        return Err(Error::NotTimelike { norm: nn });
    }
    if (nn - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit { norm: nn });
    }
    Ok(())
}

/// `1 + z = <n_E, k(E)> / <n_R, k(R)>` with the observers' components
/// taken at the ray's events `lambda_e` and `lambda_r`.
pub fn pointwise_redshift(
    geodesic: &NullGeodesic,
    n_e: &[f64],
    lambda_e: f64,
    n_r: &[f64],
    lambda_r: f64,
) -> Result<RedshiftResult> {
    let m = geodesic.metric();
    let se = geodesic.state_at(lambda_e)?;
    let sr = geodesic.state_at(lambda_r)?;
    check_observer(m, &se.event.coords, n_e)?;
    check_observer(m, &sr.event.coords, n_r)?;
    let pe = m.inner_raw(&se.event.coords, n_e, &se.tangent.components)?;
    let pr = m.inner_raw(&sr.event.coords, n_r, &sr.tangent.components)?;
    Ok(RedshiftResult {
        one_plus_z: pe / pr,
        emitter: (se.event.clone(), SpacetimeVector::new(se.event, n_e.to_vec())),
        receiver: (sr.event.clone(), SpacetimeVector::new(sr.event, n_r.to_vec())),
        pairings: (pe, pr),
    })
}

/// Redshift between the crossings already found on `m` (emitter) and
/// `m_prime` (receiver).
pub fn redshift_between(
    m: &CauchySurface,
    hit_m: &Intersection,
    m_prime: &CauchySurface,
    hit_mp: &Intersection,
) -> Result<RedshiftResult> {
    let metric = m.metric();
    let ne = m.future_normal_raw(&hit_m.point.spatial)?;
    let nr = m_prime.future_normal_raw(&hit_mp.point.spatial)?;
    let pe = metric.inner_raw(&hit_m.state.event.coords, &ne, &hit_m.state.tangent.components)?;
    let pr = metric.inner_raw(&hit_mp.state.event.coords, &nr, &hit_mp.state.tangent.components)?;
    let ev_e = hit_m.state.event.clone();
    let ev_r = hit_mp.state.event.clone();
    Ok(RedshiftResult {
        one_plus_z: pe / pr,
        emitter: (ev_e.clone(), SpacetimeVector::new(ev_e, ne)),
        receiver: (ev_r.clone(), SpacetimeVector::new(ev_r, nr)),
        pairings: (pe, pr),
    })
}

/// Redshift from `m` to `m_prime` along `ray`, observed by the surfaces'
/// future unit normals.
pub fn surface_redshift(
    m: &CauchySurface,
    m_prime: &CauchySurface,
    ray: &NullGeodesic,
) -> Result<RedshiftResult> {
    let a = intersect_surface(ray, m)?;
    let b = intersect_surface(ray, m_prime)?;
    redshift_between(m, &a, m_prime, &b)
}

/// Closed-form references, independent of the tracing pipeline.
pub mod oracle {
    use std::collections::BTreeMap;

    use crate::error::{Error, Result};
    use crate::expr::{Formula, Variables};

    /// `a(t_R) / a(t_E)` for a scale factor given as an expression in `t`.
    pub fn flrw_oracle(
        scale_factor: &str,
        parameters: &BTreeMap<String, f64>,
        t_e: f64,
        t_r: f64,
    ) -> Result<f64> {
        let a = Formula::parse(scale_factor, &Variables::time(), parameters)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let (ae, ar) = (a.eval(&[t_e]), a.eval(&[t_r]));
        if !(ae > 0.0 && ar > 0.0 && ae.is_finite() && ar.is_finite()) {
            return Err(Error::Domain(format!("a({t_e}) = {ae}, a({t_r}) = {ar}")));
        }
        Ok(ar / ae)
    }

    /// `1 / (gamma (1 - beta cos(theta)))`: emitter at rest, receiver moving
    /// with speed `beta`, photon direction at angle `theta` to the receiver
    /// velocity in the emitter frame.
    pub fn doppler_oracle(beta: f64, cos_theta: f64) -> Result<f64> {
        if !(beta.abs() < 1.0) {
            return Err(Error::Domain(format!("|beta| = {} >= 1", beta.abs())));
        }
        if !(cos_theta.abs() <= 1.0) {
            return Err(Error::Domain(format!("cos(theta) = {cos_theta}")));
        }
        let gamma = 1.0 / (1.0 - beta * beta).sqrt();
        Ok(1.0 / (gamma * (1.0 - beta * cos_theta)))
    }

    /// `sqrt((1 + beta) / (1 - beta))`, the aligned case.
    pub fn doppler_aligned(beta: f64) -> Result<f64> {
        if !(beta.abs() < 1.0) {
            return Err(Error::Domain(format!("|beta| = {} >= 1", beta.abs())));
        }
        Ok(((1.0 + beta) / (1.0 - beta)).sqrt())
    }
}
