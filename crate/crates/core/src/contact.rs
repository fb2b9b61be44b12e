//! The covector identification of rays with cosphere bundles, the contact
//! forms it induces, and the ratio identity between two surfaces.
//!
//! With signature `(+,-,...,-)` the covector of a ray crossing `M` at `x` is
//! `p_i = -<k, e_i> / <k, n_M>`, and the contact form on a variation is
//! `alpha_M(v) = p . x'(0) = -<k, J(x)> / <k, n_M>`.

use crate::error::{Error, Result};
use crate::geodesic::{intersect_surface, ray_from_covector, Intersection, NullGeodesic, TraceSettings};
use crate::redshift::redshift_between;
use crate::surface::{CauchySurface, UnitCovector};
use crate::variation::{RayVariation, VariationField};

/// Relative tolerance between the covector and spacetime-pairing paths.
pub const PAIRING_PATH_TOL: f64 = 1e-9;
/// Relative tolerance between the pairing path and the Jacobi reduction.
pub const JACOBI_PATH_TOL: f64 = 1e-8;
/// Default kernel threshold, relative to the tangent scale.
pub const KERNEL_EPS: f64 = 1e-6;

/// `-<k, e_i> / <k, n>` for a null tangent `k` at a surface point.
pub fn covector_at(surface: &CauchySurface, hit: &Intersection) -> Result<UnitCovector> {
    let x = &hit.point.spatial;
    let metric = surface.metric();
    let at = &hit.state.event.coords;
    let k = &hit.state.tangent.components;
    let n = surface.future_normal_raw(x)?;
    let kn = metric.inner_raw(at, k, &n)?;
    let mut p = Vec::with_capacity(x.len());
    for e in surface.tangent_frame(x) {
        p.push(-metric.inner_raw(at, k, &e)? / kn);
    }
    Ok(UnitCovector {
        base: hit.point.clone(),
        covector: p,
    })
}

/// The point of the unit cosphere bundle of `surface` that `ray` defines.
pub fn iota(surface: &CauchySurface, ray: &NullGeodesic) -> Result<UnitCovector> {
    covector_at(surface, &intersect_surface(ray, surface)?)
}

/// Image on `to` of the ray through `u` on `from`.
pub fn transfer(
    from: &CauchySurface,
    to: &CauchySurface,
    u: &UnitCovector,
    settings: &TraceSettings,
) -> Result<UnitCovector> {
    let ray = ray_from_covector(from, u, settings)?;
    iota(to, &ray.representative)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseVelocity {
    /// `d/ds` of the crossing point in the surface chart.
    pub value: Vec<f64>,
    /// Max change between the step-`s` and step-`s/2` quotients.
    pub halving_change: f64,
    /// `tau'(0)`: the shift of the crossing parameter.
    pub tau_prime: f64,
}

/// `d/ds x(s)` for the crossings `x(s)` of the family with `surface`.
///
/// Central-difference fields difference the crossing points of the
/// perturbed rays; deviation fields use the linearised crossing condition
/// `x'(0) = J + tau' k` with `tau' = -dG(J) / dG(k)`, `G = t - f`.
pub fn base_velocity(surface: &CauchySurface, field: &VariationField) -> Result<BaseVelocity> {
    let hit = intersect_surface(field.along(), surface)?;
    base_velocity_at(surface, field, &hit)
}

fn base_velocity_at(
    surface: &CauchySurface,
    field: &VariationField,
    hit: &Intersection,
) -> Result<BaseVelocity> {
    let n = surface.spatial_dim();
    let j = field.j_at(hit.lambda)?;
    let k = &hit.state.tangent.components;
    let grad = surface.height_gradient(&hit.point.spatial);
    let dg = |w: &[f64]| w[0] - grad.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
    let tau_prime = -dg(&j) / dg(k);
    match field.perturbed() {
        None => Ok(BaseVelocity {
            value: (0..n).map(|i| j[i + 1] + tau_prime * k[i + 1]).collect(),
            halving_change: 0.0,
            tau_prime,
        }),
        Some(rays) => {
            let mut xs = Vec::with_capacity(rays.len());
            for (_, r) in &rays {
                xs.push(intersect_surface(r, surface)?.point.spatial);
            }
            let s = rays[0].0;
            let d1: Vec<f64> = surface
                .displacement(&xs[1], &xs[0])
                .iter()
                .map(|d| d / (2.0 * s))
                .collect();
            let d2: Vec<f64> = surface
                .displacement(&xs[3], &xs[2])
                .iter()
                .map(|d| d / s)
                .collect();
            let value = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
            let halving_change = d1.iter().zip(&d2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            Ok(BaseVelocity {
                value,
                halving_change,
                tau_prime,
            })
        }
    }
}

/// The contact form of one surface evaluated on one tangent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactEvaluation {
    pub surface: String,
    /// `alpha_M(v)` by the spacetime pairing with the lifted base velocity.
    pub alpha: f64,
    pub intersection: Intersection,
    /// `p . x'(0)` in the surface's cotangent frame.
    pub alpha_covector: f64,
    /// `-<k, J(x)> / <k, n>`.
    pub alpha_jacobi: f64,
    /// `<k, J(x)>`.
    pub pairing: f64,
    pub base_velocity: BaseVelocity,
    /// `<k, n_M>`, positive for future rays.
    pub normal_pairing: f64,
    /// `sum_mu |(g k)_mu J^mu| / <k, n>`, the natural size of `alpha`.
    pub scale: f64,
}

/// Evaluates the contact form of `surface` on the tangent vector `field`
/// represents, by three routes, and checks that they agree.
pub fn alpha(surface: &CauchySurface, field: &VariationField) -> Result<ContactEvaluation> {
    let hit = intersect_surface(field.along(), surface)?;
    let metric = surface.metric();
    let x = &hit.point.spatial;
    let at = &hit.state.event.coords;
    let k = &hit.state.tangent.components;
    let n = surface.future_normal_raw(x)?;
    let kn = metric.inner_raw(at, k, &n)?;
    let bv = base_velocity_at(surface, field, &hit)?;
    let lift = surface.lift(x, &bv.value);
    let alpha_pair = -metric.inner_raw(at, k, &lift)? / kn;
    let p = covector_at(surface, &hit)?;
    let alpha_cov: f64 = p.covector.iter().zip(&bv.value).map(|(a, b)| a * b).sum();
    let j = field.j_at(hit.lambda)?;
    let pairing = metric.inner_raw(at, k, &j)?;
    let alpha_jac = -pairing / kn;
    let g = metric.diagonal(at)?;
    let scale = (0..g.len()).map(|m| (g[m] * k[m] * j[m]).abs()).sum::<f64>() / kn;
    let check = |name: &'static str, a: f64, b: f64, tol: f64| {
        if (a - b).abs() > tol * scale.max(f64::MIN_POSITIVE) {
            Err(Error::Consistency {
                check: name,
                lhs: a,
                rhs: b,
            })
        } else {
            Ok(())
        }
    };
    check("covector vs pairing", alpha_cov, alpha_pair, PAIRING_PATH_TOL)?;
    check("pairing vs jacobi", alpha_pair, alpha_jac, JACOBI_PATH_TOL)?;
    Ok(ContactEvaluation {
        surface: surface.name().to_string(),
        alpha: alpha_pair,
        intersection: hit,
        alpha_covector: alpha_cov,
        alpha_jacobi: alpha_jac,
        pairing,
        base_velocity: bv,
        normal_pairing: kn,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremRatio {
    pub ratio: f64,
    pub one_plus_z: f64,
    pub residual: f64,
    pub alpha_m: ContactEvaluation,
    pub alpha_m_prime: ContactEvaluation,
}

/// `alpha_{M'}(v) / alpha_M(v)` compared with `1 + z(M, M', ray)`.
pub fn theorem_ratio(
    m: &CauchySurface,
    m_prime: &CauchySurface,
    field: &VariationField,
) -> Result<TheoremRatio> {
    let a = alpha(m, field)?;
    let floor = KERNEL_EPS * a.scale;
    if !(a.alpha.abs() > floor) {
        return Err(Error::ContactKernel {
            alpha: a.alpha.abs(),
            floor,
        });
    }
    let b = alpha(m_prime, field)?;
    let z = redshift_between(m, &a.intersection, m_prime, &b.intersection)?;
    let ratio = b.alpha / a.alpha;
    Ok(TheoremRatio {
        ratio,
        one_plus_z: z.one_plus_z,
        residual: (ratio - z.one_plus_z).abs() / z.one_plus_z,
        alpha_m: a,
        alpha_m_prime: b,
    })
}

/// The member of the pencil `cos(theta) a + sin(theta) b` on which
/// `alpha_M` vanishes, found by root finding in `theta`.
pub fn kernel_tangent(m: &CauchySurface, a: &RayVariation, b: &RayVariation) -> Result<RayVariation> {
    let eval = |theta: f64| -> Result<(f64, RayVariation)> {
        let v = a.combination(theta.cos(), b, theta.sin())?;
        Ok((alpha(m, &v.field()?)?.alpha, v))
    };
    let (fa, _) = eval(0.0)?;
    let (fb, _) = eval(std::f64::consts::FRAC_PI_2)?;
    // alpha is linear in v, so theta solves fa cos + fb sin = 0; refine
    // numerically from that start with secant steps
    let mut t0 = (-fa).atan2(fb);
    if t0 < 0.0 {
        t0 += std::f64::consts::PI;
    }
    let mut t1 = t0 + 1e-3;
    let (mut f0, mut v0) = eval(t0)?;
    let (mut f1, _) = eval(t1)?;
    for _ in 0..8 {
        if f0 == 0.0 || f1 == f0 {
            break;
        }
        let t2 = t1 - f1 * (t1 - t0) / (f1 - f0);
        let (f2, v2) = eval(t2)?;
        t0 = t1;
        f0 = f1;
        t1 = t2;
        f1 = f2;
        v0 = v2;
        if f2.abs() < 1e-15 * fa.abs().max(fb.abs()) || (t1 - t0).abs() < 1e-14 {
            break;
        }
    }
    let _ = f0;
    Ok(v0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelCase {
    pub alpha_m: f64,
    pub alpha_m_prime: f64,
    pub scale_m: f64,
    pub scale_m_prime: f64,
    pub in_kernel: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KernelReport {
    pub cases: Vec<KernelCase>,
    pub kernel_cases: usize,
    pub positive_cases: usize,
    pub failures: usize,
    /// Largest `|alpha_{M'}| / scale` over kernel cases.
    pub worst_kernel_leak: f64,
}

/// Kernel and co-orientation agreement of the two contact forms on a set of
/// tangents. Tangents with `|alpha_M| < eps * scale` count as kernel
/// tangents and must satisfy `|alpha_{M'}| < c * eps * scale`; tangents with
/// `alpha_M > 0` must have `alpha_{M'} > 0`.
pub fn kernel_consistency(
    m: &CauchySurface,
    m_prime: &CauchySurface,
    tangents: &[RayVariation],
    eps: f64,
    c: f64,
) -> Result<KernelReport> {
    let mut report = KernelReport::default();
    for t in tangents {
        let f = t.field()?;
        let a = alpha(m, &f)?;
        let b = alpha(m_prime, &f)?;
        let in_kernel = a.alpha.abs() < eps * a.scale;
        let passed = if in_kernel {
            report.kernel_cases += 1;
            let leak = b.alpha.abs() / b.scale;
            report.worst_kernel_leak = report.worst_kernel_leak.max(leak);
            b.alpha.abs() < c * eps * b.scale
        } else if a.alpha > 0.0 {
            report.positive_cases += 1;
            b.alpha > 0.0
        } else {
            b.alpha < 0.0
        };
        if !passed {
            report.failures += 1;
        }
        report.cases.push(KernelCase {
            alpha_m: a.alpha,
            alpha_m_prime: b.alpha,
            scale_m: a.scale,
            scale_m_prime: b.scale,
            in_kernel,
            passed,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{null_project, GeodesicState};
    use crate::geometry::{Event, SpacetimeMetric};
    use crate::redshift::oracle::{doppler_aligned, flrw_oracle};
    use crate::surface::Domain;
    use crate::variation::VariationMode;
    use proptest::prelude::*;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn mink() -> Arc<SpacetimeMetric> {
        Arc::new(SpacetimeMetric::minkowski(2).unwrap())
    }

    fn flrw() -> Arc<SpacetimeMetric> {
        Arc::new(SpacetimeMetric::flrw(2, "exp(t)", BTreeMap::new(), (-3.0, 3.0)).unwrap())
    }

    fn surf(m: &Arc<SpacetimeMetric>, g: &str) -> CauchySurface {
        CauchySurface::new(g, g, Domain::Unbounded, m.clone(), &BTreeMap::new()).unwrap()
    }

    fn torus(m: &Arc<SpacetimeMetric>, g: &str) -> CauchySurface {
        CauchySurface::new(
            g,
            g,
            Domain::Torus {
                periods: vec![1.0, 1.0],
            },
            m.clone(),
            &BTreeMap::new(),
        )
        .unwrap()
    }

    fn base(m: &Arc<SpacetimeMetric>, x: [f64; 3], dir: [f64; 2]) -> Arc<NullGeodesic> {
        let k = null_project(m, &Event::new(x.to_vec()), &dir).unwrap();
        let settings = TraceSettings {
            lambda_range: (-2.0, 2.0),
            time_window: Some((-1.0, 2.0)),
            ..Default::default()
        };
        Arc::new(
            NullGeodesic::integrate(m.clone(), &GeodesicState::new(x.to_vec(), k.components), &settings)
                .unwrap(),
        )
    }

    #[test]
    fn iota_examples() {
        let m = mink();
        let g = base(&m, [0.0, 0.3, 0.1], [1.0, 0.0]);
        let u = iota(&surf(&m, "0"), &g).unwrap();
        assert_eq!(u.covector, vec![1.0, 0.0]);
        let f = flrw();
        let e = std::f64::consts::E;
        let g = base(&f, [1.0, 0.0, 0.0], [1.0, 0.0]);
        assert!((g.initial().tangent.components[0] - e).abs() < 1e-15);
        let s = surf(&f, "1");
        let u = iota(&s, &g).unwrap();
        // pull-back e^2 dx, divided by <k, n> = e
        assert!((u.covector[0] - e).abs() < 1e-12 && u.covector[1].abs() < 1e-15);
        assert!((s.covector_norm_sq(&u).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn alpha_examples() {
        let m = mink();
        let g = base(&m, [0.0; 3], [1.0, 0.0]);
        let s = surf(&m, "0");
        let f = RayVariation::translation(g.clone(), vec![0.0, 1.0, 0.0]).unwrap().field().unwrap();
        let a = alpha(&s, &f).unwrap();
        assert!((a.alpha - 1.0).abs() < 1e-10);
        assert!((a.base_velocity.value[0] - 1.0).abs() < 1e-10);
        assert!(a.base_velocity.value[1].abs() < 1e-10);
        // zero variation through linearity: alpha(v) + alpha(-v) = 0
        let v = RayVariation::new(g.clone(), vec![0.1, 0.2, -0.3], vec![0.0, 0.3, 0.1]).unwrap();
        let plus = alpha(&s, &v.field().unwrap()).unwrap().alpha;
        let minus = alpha(&s, &v.scaled(-1.0).unwrap().field().unwrap()).unwrap().alpha;
        assert!((plus + minus).abs() < 1e-10 * plus.abs());
        let along = RayVariation::along_ray(g, 1.0).unwrap().field().unwrap();
        let a = alpha(&s, &along).unwrap();
        assert!(a.alpha.abs() < 1e-10);
        assert!(a.base_velocity.value.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn transfer_examples() {
        let m = mink();
        let (a, b) = (surf(&m, "0"), surf(&m, "1"));
        let u = UnitCovector {
            base: a.embed(&[0.2, 0.1]).unwrap(),
            covector: vec![0.6, 0.8],
        };
        let settings = TraceSettings::default();
        let same = transfer(&a, &a, &u, &settings).unwrap();
        assert!(same.covector.iter().zip(&u.covector).all(|(x, y)| (x - y).abs() < 1e-9));
        let w = transfer(&a, &b, &u, &settings).unwrap();
        assert!(w.covector.iter().zip(&u.covector).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!((w.base.spatial[0] - 0.8).abs() < 1e-12 && (w.base.spatial[1] - 0.9).abs() < 1e-12);
        let back = transfer(&b, &a, &w, &settings).unwrap();
        assert!(back.covector.iter().zip(&u.covector).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn theorem_examples() {
        let m = mink();
        let g = base(&m, [0.0; 3], [0.6, 0.8]);
        let v = RayVariation::new(g, vec![0.0, 1.0, 0.5], vec![0.0, 0.2, -0.1]).unwrap();
        let t = theorem_ratio(&surf(&m, "0"), &surf(&m, "1"), &v.field().unwrap()).unwrap();
        assert!(t.residual < 1e-8 && (t.one_plus_z - 1.0).abs() < 1e-12);

        let f = flrw();
        let g = base(&f, [0.0; 3], [1.0, 0.3]);
        let v = RayVariation::new(g, vec![0.0, 0.4, 1.0], vec![0.0, 0.1, 0.2]).unwrap();
        let t = theorem_ratio(&surf(&f, "0"), &surf(&f, "ln(2)"), &v.field().unwrap()).unwrap();
        let oracle = flrw_oracle("exp(t)", &BTreeMap::new(), 0.0, 2f64.ln()).unwrap();
        assert!((t.ratio - oracle).abs() < 1e-6, "{}", t.ratio);

        let g = base(&m, [0.0; 3], [1.0, 0.0]);
        let v = RayVariation::new(g.clone(), vec![0.0, 1.0, 0.5], vec![0.0, 0.1, 0.4]).unwrap();
        let t = theorem_ratio(&surf(&m, "0"), &surf(&m, "0.3 + 0.5*x"), &v.field().unwrap()).unwrap();
        assert!((t.ratio - doppler_aligned(0.5).unwrap()).abs() < 1e-6, "{}", t.ratio);
        // transverse shift: alpha_M vanishes identically, scale included
        let v = RayVariation::new(g, vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.4]).unwrap();
        assert!(matches!(
            theorem_ratio(&surf(&m, "0"), &surf(&m, "1"), &v.field().unwrap()),
            Err(Error::ContactKernel { .. })
        ));
    }

    #[test]
    fn along_ray_tangent_is_in_the_kernel() {
        let m = mink();
        let g = base(&m, [0.0; 3], [1.0, 0.0]);
        let f = RayVariation::along_ray(g, 1.0).unwrap().field().unwrap();
        assert!(matches!(
            theorem_ratio(&surf(&m, "0"), &surf(&m, "1"), &f),
            Err(Error::ContactKernel { .. })
        ));
    }

    #[test]
    fn deviation_mode_agrees() {
        let f = flrw();
        let g = base(&f, [0.1, 0.2, 0.3], [0.7, -0.5]);
        let v = RayVariation::new(g, vec![0.1, 0.3, -0.2], vec![0.0, 0.2, 0.1]).unwrap();
        let (a, b) = (torus(&f, "0.05*sin(2*pi*x)"), torus(&f, "0.9 + 0.05*cos(2*pi*y)"));
        let fd = theorem_ratio(&a, &b, &v.field().unwrap()).unwrap();
        let ode = theorem_ratio(&a, &b, &v.with_mode(VariationMode::DeviationOde).field().unwrap())
            .unwrap();
        assert!(fd.residual < 1e-7 && ode.residual < 1e-6);
        assert!((fd.alpha_m.alpha - ode.alpha_m.alpha).abs() < 1e-5 * fd.alpha_m.scale);
    }

    #[test]
    fn constructed_kernel_tangent_stays_in_kernel() {
        let f = flrw();
        let g = base(&f, [0.2, 0.4, 0.1], [0.3, 0.9]);
        let (m1, m2) = (torus(&f, "0.2 + 0.04*sin(2*pi*x)"), torus(&f, "1.1 + 0.05*cos(2*pi*(x+y))"));
        let a = RayVariation::new(g.clone(), vec![0.0, 0.5, 0.2], vec![0.0, 0.1, 0.0]).unwrap();
        let b = RayVariation::new(g, vec![0.1, -0.3, 0.6], vec![0.0, 0.0, 0.2]).unwrap();
        let k = kernel_tangent(&m1, &a, &b).unwrap();
        let report = kernel_consistency(&m1, &m2, &[k, a, b], KERNEL_EPS, 0.1).unwrap();
        assert_eq!(report.kernel_cases, 1);
        assert_eq!(report.failures, 0);
        assert!(report.worst_kernel_leak < 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn round_trip_through_covector(x in 0.0f64..1.0, y in 0.0f64..1.0, ang in 0.0f64..6.28) {
            let f = flrw();
            let s = torus(&f, "0.3 + 0.05*sin(2*pi*x)*sin(2*pi*y)");
            let p = s.embed(&[x, y]).unwrap();
            let u = s.covector_from_direction(&p, &[ang.cos(), ang.sin()]).unwrap();
            let r = ray_from_covector(&s, &u, &TraceSettings::default()).unwrap();
            let w = iota(&s, &r.representative).unwrap();
            let d = s.displacement(&u.base.spatial, &w.base.spatial);
            prop_assert!(d.iter().all(|v| v.abs() < 1e-9));
            prop_assert!(u.covector.iter().zip(&w.covector).all(|(a, b)| (a - b).abs() < 1e-9));
            prop_assert!((s.covector_norm_sq(&w).unwrap() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn sky_forms_agree_for_matching_normals(
            x in 0.0f64..1.0, ang in 0.0f64..6.28,
            dx in prop::array::uniform3(-1.0f64..1.0),
            dk in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let f = flrw();
            // both surfaces pass through (0.4, x, 0.5) with normal d_t there
            let a = torus(&f, "0.4");
            let src = format!("0.4 + 0.1*sin(pi*(x - {x}))^2 * (1 + 0.5*cos(2*pi*y))");
            let b = CauchySurface::new("B", &src, Domain::Torus { periods: vec![1.0, 1.0] },
                f.clone(), &BTreeMap::new()).unwrap();
            let g = base(&f, [0.4, x, 0.5], [ang.cos(), ang.sin()]);
            let v = RayVariation::new(g, dx.to_vec(), dk.to_vec()).unwrap().field().unwrap();
            let (ea, eb) = (alpha(&a, &v).unwrap(), alpha(&b, &v).unwrap());
            prop_assert!((ea.alpha - eb.alpha).abs() < 1e-7 * ea.scale, "{} vs {}", ea.alpha, eb.alpha);
        }
    }
}
