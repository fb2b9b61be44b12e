use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use raycontact::geodesic::TraceSettings;
use raycontact::liouville::{liouville_integral, sphere_area, RaySelector, RaySample};
use raycontact::{CauchySurface, Domain, Quadrature, Region, SpacetimeMetric};

fn torus(m: &Arc<SpacetimeMetric>, g: &str) -> CauchySurface {
    let n = m.spatial_dim();
    CauchySurface::new(g, g, Domain::Torus { periods: vec![1.0; n] }, m.clone(), &BTreeMap::new())
        .unwrap()
}

fn flrw() -> Arc<SpacetimeMetric> {
    Arc::new(SpacetimeMetric::flrw(2, "exp(t)", BTreeMap::new(), (-3.0, 3.0)).unwrap())
}

#[test]
fn normalization_on_configured_surfaces() {
    let f = flrw();
    let mk = Arc::new(SpacetimeMetric::minkowski(3).unwrap());
    let surfaces = [
        torus(&f, "0"),
        torus(&f, "0.4 + 0.05*sin(2*pi*x)*cos(2*pi*y)"),
        torus(&mk, "0.1*sin(2*pi*z)"),
    ];
    for s in &surfaces {
        let n = s.spatial_dim();
        let vol = s.riemannian_volume(&Region::Whole, Quadrature::default_for(n)).unwrap();
        let est = liouville_integral(s, &RaySelector::All, |_| Ok(1.0), 100_000, 1, &TraceSettings::default())
            .unwrap();
        assert!(est.deviation(sphere_area(n).unwrap() * vol) < 3.0, "{est:?}");
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let f = flrw();
    let (m, mp) = (torus(&f, "0.02*sin(2*pi*x)"), torus(&f, "0.6"));
    let sel = RaySelector::through(&m, Region::half_space(2, 1, 0.0, 0.5));
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                liouville_integral(
                    &mp,
                    &sel,
                    |s: &RaySample<'_>| Ok(s.one_plus_z_from(&m)?.powi(-2)),
                    3000,
                    42,
                    &TraceSettings::default(),
                )
                .unwrap()
            })
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one.escapes, 0);
}

#[test]
fn tori_have_no_escapes() {
    let f = flrw();
    let (m, mp) = (torus(&f, "0"), torus(&f, "1 + 0.05*cos(2*pi*(x - y))"));
    let sel = RaySelector::through(&m, Region::Whole).and(RaySelector::through(&mp, Region::Whole));
    let est = liouville_integral(&mp, &sel, |_| Ok(1.0), 2000, 5, &TraceSettings::default()).unwrap();
    assert_eq!(est.escapes, 0);
    assert!(!est.flagged());
    let vol = mp.riemannian_volume(&Region::Whole, Quadrature::default_for(2)).unwrap();
    assert!((est.value - 2.0 * PI * vol).abs() < 1e-12 * est.value);
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 6,
        rng_seed: proptest::test_runner::RngSeed::Fixed(11),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    // int phi dOmega_M = int phi (1+z)^(-n) dOmega_{M'} for polynomial phi
    // of the crossing point on M
    #[test]
    fn transfer_of_measure(c in prop::array::uniform4(-1.0f64..1.0), seed in 0u64..1000) {
        let f = flrw();
        let (m, mp) = (torus(&f, "0.03*sin(2*pi*y)"), torus(&f, "0.7 + 0.04*cos(2*pi*x)"));
        let phi = |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1] * x[1] + c[3] * x[0] * x[1];
        let st = TraceSettings::default();
        let lhs = liouville_integral(&m, &RaySelector::All, |s| Ok(phi(&s.covector.base.spatial)), 20_000, seed, &st)
            .unwrap();
        let rhs = liouville_integral(
            &mp,
            &RaySelector::through(&m, Region::Whole),
            |s| {
                let x = s.crossing(&m)?.point.spatial;
                Ok(phi(&x) * s.one_plus_z_from(&m)?.powi(-2))
            },
            20_000,
            seed + 1,
            &st,
        )
        .unwrap();
        let sigma = lhs.sigma().hypot(rhs.sigma());
        prop_assert!((lhs.value - rhs.value).abs() < 3.0 * sigma, "{lhs:?} {rhs:?}");
    }
}
