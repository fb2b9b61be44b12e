//! One-parameter families of null geodesics and their variation fields.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geodesic::{null_time_component, GeodesicState, NullGeodesic};
use crate::geometry::SpacetimeMetric;
use crate::ode::{self, DenseSolution, Schedule};

/// Largest accepted relative disagreement between the `s` and `s/2`
/// difference quotients.
pub const NOISE_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariationMode {
    /// Richardson-extrapolated central differences of perturbed rays.
    CentralDifference,
    /// Linearised geodesic equation integrated along the base ray.
    DeviationOde,
}

/// Offsets at which perturbed rays are traced, as multiples of the step.
pub(crate) const OFFSETS: [f64; 4] = [1.0, -1.0, 0.5, -0.5];

/// A tangent vector to the space of light rays, represented by a
/// perturbation of the base ray's initial data at `lambda = 0`.
#[derive(Debug, Clone)]
pub struct RayVariation {
    base: Arc<NullGeodesic>,
    delta_x: Vec<f64>,
    delta_k: Vec<f64>,
    step: f64,
    mode: VariationMode,
    reproject: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, c| m.max(c.abs()))
}

impl RayVariation {
    pub fn new(base: Arc<NullGeodesic>, delta_x: Vec<f64>, delta_k: Vec<f64>) -> Result<Self> {
        let d = base.metric().dimension();
        if delta_x.len() != d || delta_k.len() != d {
            return Err(Error::InvalidArgument("perturbation has wrong dimension".into()));
        }
        if delta_x.iter().chain(&delta_k).any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("perturbation is not finite".into()));
        }
        let (nx, nk) = (inf_norm(&delta_x), inf_norm(&delta_k));
        if nx == 0.0 && nk == 0.0 {
            return Err(Error::InvalidArgument("perturbation is zero".into()));
        }
        let init = base.initial();
        let scale = inf_norm(&init.event.coords).max(1.0);
        let kscale = inf_norm(&init.tangent.components);
        let mut step = f64::INFINITY;
        if nx > 0.0 {
            step = step.min(scale / nx);
        }
        if nk > 0.0 {
            step = step.min(kscale / nk);
        }
        Ok(RayVariation {
            base,
            delta_x,
            delta_k,
            step: 1e-4 * step,
            mode: VariationMode::CentralDifference,
            reproject: true,
        })
    }

    /// Rigid displacement of the initial event.
    pub fn translation(base: Arc<NullGeodesic>, delta_x: Vec<f64>) -> Result<Self> {
        let d = delta_x.len();
        Self::new(base, delta_x, vec![0.0; d])
    }

    /// Shift along the ray itself: the family `gamma(lambda + c s)`.
    pub fn along_ray(base: Arc<NullGeodesic>, c: f64) -> Result<Self> {
        let init = base.initial().clone();
        let m = base.metric().clone();
        let mut acc = vec![0.0; m.dimension()];
        m.geodesic_acceleration(&init.event.coords, &init.tangent.components, &mut acc)?;
        let dx = init.tangent.components.iter().map(|v| c * v).collect();
        let dk = acc.iter().map(|a| c * a).collect();
        Self::new(base, dx, dk)
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad s-step {step}")));
        }
        self.step = step;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: VariationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Test hook: skip re-solving the null condition for perturbed tangents.
    pub fn without_reprojection(mut self) -> Self {
        self.reproject = false;
        self
    }

    pub fn base(&self) -> &Arc<NullGeodesic> {
        &self.base
    }

    pub fn delta_x(&self) -> &[f64] {
        &self.delta_x
    }

    pub fn delta_k(&self) -> &[f64] {
        &self.delta_k
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn mode(&self) -> VariationMode {
        self.mode
    }

    pub fn reprojects(&self) -> bool {
        self.reproject
    }

    /// The same variation scaled by `c` (and, for non-zero `c`, the same
    /// relative step).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let mut v = Self::new(
            self.base.clone(),
            self.delta_x.iter().map(|d| c * d).collect(),
            self.delta_k.iter().map(|d| c * d).collect(),
        )?;
        v.mode = self.mode;
        v.reproject = self.reproject;
        Ok(v)
    }

    /// Sum of two variations of the same base ray.
    pub fn sum(&self, other: &RayVariation) -> Result<Self> {
        self.combination(1.0, other, 1.0)
    }

    /// `a * self + b * other`, for variations of the same base ray.
    pub fn combination(&self, a: f64, other: &RayVariation, b: f64) -> Result<Self> {
        let add = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        let mut v = Self::new(
            self.base.clone(),
            add(&self.delta_x, &other.delta_x),
            add(&self.delta_k, &other.delta_k),
        )?;
        v.mode = self.mode;
        v.reproject = self.reproject;
        Ok(v)
    }

    fn perturbed_raw(&self, s: f64) -> Result<Vec<f64>> {
        let init = self.base.initial();
        let d = init.event.coords.len();
        let mut y = Vec::with_capacity(2 * d);
        for i in 0..d {
            y.push(init.event.coords[i] + s * self.delta_x[i]);
        }
        for i in 0..d {
            y.push(init.tangent.components[i] + s * self.delta_k[i]);
        }
        if self.reproject {
            let g = self.base.metric().diagonal(&y[..d])?;
            y[d] = null_time_component(&g, &y[d + 1..])?;
        }
        Ok(y)
    }

    /// Initial data of the family member at `s`.
    pub fn perturbed_initial(&self, s: f64) -> Result<GeodesicState> {
        let y = self.perturbed_raw(s)?;
        let d = y.len() / 2;
        Ok(GeodesicState::new(y[..d].to_vec(), y[d..].to_vec()))
    }

    /// The family member at `s`, traced on the base ray's step mesh.
    pub fn perturbed_ray(&self, s: f64) -> Result<NullGeodesic> {
        if s.abs() > 4.0 * self.step {
            return Err(Error::InvalidArgument(format!(
                "|s| = {} exceeds 4 s-steps",
                s.abs()
            )));
        }
        if s == 0.0 {
            return Ok(self.base.as_ref().clone());
        }
        let init = self.perturbed_initial(s)?;
        if self.reproject {
            NullGeodesic::integrate_on_mesh(self.base.metric().clone(), &init, &self.base)
        } else {
            NullGeodesic::integrate_on_mesh_unchecked(self.base.metric().clone(), &init, &self.base)
        }
    }

    /// `d/ds` of the initial tangent at `s = 0`.
    fn initial_tangent_derivative(&self) -> Result<Vec<f64>> {
        let init = self.base.initial();
        let x = &init.event.coords;
        let k = &init.tangent.components;
        let mut dk = self.delta_k.clone();
        if !self.reproject {
            return Ok(dk);
        }
        let m = self.base.metric();
        let d = x.len();
        let g = m.diagonal(x)?;
        let dg = m.metric_derivative_from_connection(x)?;
        let mut num = 0.0;
        for rho in 0..d {
            for mu in 0..d {
                num += dg[(rho * d + mu) * d + mu] * self.delta_x[rho] * k[mu] * k[mu];
            }
        }
        for i in 1..d {
            num += 2.0 * g[i] * k[i] * self.delta_k[i];
        }
        dk[0] = -num / (2.0 * g[0] * k[0]);
        Ok(dk)
    }

    /// The variation field `J = d/ds gamma_s` along the base ray.
    pub fn field(&self) -> Result<VariationField> {
        match self.mode {
            VariationMode::CentralDifference => self.field_by_differences(),
            VariationMode::DeviationOde => self.field_by_deviation(),
        }
    }

    fn field_by_differences(&self) -> Result<VariationField> {
        let mut rays = Vec::with_capacity(OFFSETS.len());
        for o in OFFSETS {
            rays.push(self.perturbed_ray(o * self.step)?);
        }
        let mut field = VariationField {
            variation: self.clone(),
            data: FieldData::Differences(rays),
            noise: 0.0,
        };
        field.noise = field.measure_noise()?;
        if field.noise > NOISE_LIMIT {
            return Err(Error::StepTooSmall { noise: field.noise });
        }
        Ok(field)
    }

    fn field_by_deviation(&self) -> Result<VariationField> {
        let m = self.base.metric().clone();
        let d = m.dimension();
        let init = self.base.initial();
        let mut y0 = init.event.coords.clone();
        y0.extend_from_slice(&init.tangent.components);
        y0.extend_from_slice(&self.delta_x);
        y0.extend(self.initial_tangent_derivative()?);
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            deviation_rhs(&m, d, y, dy)
        };
        let fwd = self.base.forward();
        let bwd = self.base.backward();
        let forward = ode::integrate(rhs, 0.0, &y0, fwd.t_end(), Schedule::Mesh(fwd.steps()), |_, _| false)?;
        let backward =
            ode::integrate(rhs, 0.0, &y0, bwd.t_end(), Schedule::Mesh(bwd.steps()), |_, _| false)?;
        Ok(VariationField {
            variation: self.clone(),
            data: FieldData::Deviation { forward, backward },
            noise: 0.0,
        })
    }
}

/// Right-hand side of the geodesic equation together with its linearisation
/// `J'' = (dA/dx) J + (dA/dv) J'`, where `A = -Gamma(x)(v, v)`.
fn deviation_rhs(m: &SpacetimeMetric, d: usize, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let (x, rest) = y.split_at(d);
    let (v, rest) = rest.split_at(d);
    let (j, w) = rest.split_at(d);
    dy[..d].copy_from_slice(v);
    m.geodesic_acceleration(x, v, &mut dy[d..2 * d])?;
    dy[2 * d..3 * d].copy_from_slice(w);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let mut out = vec![0.0; d];
    let nj = inf_norm(j);
    if nj > 0.0 {
        let eps = 1e-5 * inf_norm(x).max(1.0) / nj;
        let xp: Vec<f64> = x.iter().zip(j).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(j).map(|(a, b)| a - eps * b).collect();
        m.geodesic_acceleration(&xp, v, &mut plus)?;
        m.geodesic_acceleration(&xm, v, &mut minus)?;
        for i in 0..d {
            out[i] = (plus[i] - minus[i]) / (2.0 * eps);
        }
    }
    let nw = inf_norm(w);
    if nw > 0.0 {
        // A is quadratic in v, so this symmetric quotient is exact
        let c = inf_norm(v) / nw;
        let vp: Vec<f64> = v.iter().zip(w).map(|(a, b)| a + c * b).collect();
        let vm: Vec<f64> = v.iter().zip(w).map(|(a, b)| a - c * b).collect();
        m.geodesic_acceleration(x, &vp, &mut plus)?;
        m.geodesic_acceleration(x, &vm, &mut minus)?;
        for i in 0..d {
            out[i] += (plus[i] - minus[i]) / (2.0 * c);
        }
    }
    dy[3 * d..].copy_from_slice(&out);
    Ok(())
}

#[derive(Debug, Clone)]
enum FieldData {
    /// Perturbed rays at the offsets in [`OFFSETS`].
    Differences(Vec<NullGeodesic>),
    /// Joint state `(x, v, J, J')` on the base mesh.
    Deviation {
        forward: DenseSolution,
        backward: DenseSolution,
    },
}

/// `J(lambda)` along the base ray, with its covariant-free coordinate
/// derivative `J'(lambda)`.
#[derive(Debug, Clone)]
pub struct VariationField {
    variation: RayVariation,
    data: FieldData,
    noise: f64,
}

impl VariationField {
    pub fn variation(&self) -> &RayVariation {
        &self.variation
    }

    pub fn along(&self) -> &NullGeodesic {
        &self.variation.base
    }

    /// Relative disagreement between the `s` and `s/2` quotients.
    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Perturbed rays with their `s` values (central-difference mode only).
    pub fn perturbed(&self) -> Option<Vec<(f64, &NullGeodesic)>> {
        match &self.data {
            FieldData::Differences(rays) => Some(
                OFFSETS
                    .iter()
                    .map(|o| o * self.variation.step)
                    .zip(rays.iter())
                    .collect(),
            ),
            FieldData::Deviation { .. } => None,
        }
    }

    /// Packed `(J, J')` at `lambda`, and the two raw quotients `D(s)`,
    /// `D(s/2)` when differencing.
    fn eval_parts(&self, lambda: f64) -> Result<(Vec<f64>, Option<(Vec<f64>, Vec<f64>)>)> {
        let d = self.variation.base.metric().dimension();
        match &self.data {
            FieldData::Differences(rays) => {
                let s = self.variation.step;
                let mut ys = [vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d]];
                for (r, y) in rays.iter().zip(ys.iter_mut()) {
                    r.raw_state_into(lambda, y)?;
                }
                let d1: Vec<f64> = (0..2 * d).map(|i| (ys[0][i] - ys[1][i]) / (2.0 * s)).collect();
                let d2: Vec<f64> = (0..2 * d).map(|i| (ys[2][i] - ys[3][i]) / s).collect();
                let j = (0..2 * d).map(|i| (4.0 * d2[i] - d1[i]) / 3.0).collect();
                Ok((j, Some((d1, d2))))
            }
            FieldData::Deviation { forward, backward } => {
                let sol = if lambda >= 0.0 { forward } else { backward };
                if !sol.covers(lambda) {
                    return Err(Error::Domain(format!("lambda = {lambda} outside field range")));
                }
                let y = sol.eval(lambda);
                Ok((y[2 * d..].to_vec(), None))
            }
        }
    }

    pub fn j_at(&self, lambda: f64) -> Result<Vec<f64>> {
        let d = self.variation.base.metric().dimension();
        let (mut v, _) = self.eval_parts(lambda)?;
        v.truncate(d);
        Ok(v)
    }

    pub fn j_dot_at(&self, lambda: f64) -> Result<Vec<f64>> {
        let d = self.variation.base.metric().dimension();
        let (v, _) = self.eval_parts(lambda)?;
        Ok(v[d..].to_vec())
    }

    /// `lambda` values covered by the base ray and by every perturbed ray.
    pub fn grid(&self) -> Vec<f64> {
        let mut grid = self.along().sample_grid();
        match &self.data {
            FieldData::Differences(rays) => grid.retain(|l| rays.iter().all(|r| r.covers(*l))),
            FieldData::Deviation { forward, backward } => {
                grid.retain(|l| forward.covers(*l) || backward.covers(*l))
            }
        }
        grid
    }

    fn measure_noise(&self) -> Result<f64> {
        let d = self.variation.base.metric().dimension();
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        let grid = self.grid();
        for &l in &grid {
            let (_, parts) = self.eval_parts(l)?;
            if let Some((d1, d2)) = parts {
                scale = scale.max(inf_norm(&d2[..d]));
                let diff: Vec<f64> = d1[..d].iter().zip(&d2[..d]).map(|(a, b)| a - b).collect();
                worst = worst.max(inf_norm(&diff));
            }
        }
        Ok(if scale > 0.0 { worst / scale } else { 0.0 })
    }

    /// `<gamma'(lambda), J(lambda)>`.
    pub fn momentum_pairing(&self, lambda: f64) -> Result<f64> {
        let st = self.along().state_at(lambda)?;
        let j = self.j_at(lambda)?;
        self.along()
            .metric()
            .inner_raw(&st.event.coords, &st.tangent.components, &j)
    }

    /// `(max - min) / scale` of the pairing over the field grid, with
    /// `scale = max sum_mu |(g k)_mu J^mu|`.
    pub fn pairing_drift(&self) -> Result<PairingDrift> {
        let m = self.along().metric().clone();
        let (mut lo, mut hi, mut scale) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for l in self.grid() {
            let st = self.along().state_at(l)?;
            let j = self.j_at(l)?;
            let g = m.diagonal(&st.event.coords)?;
            let k = &st.tangent.components;
            let mut p = 0.0;
            let mut a = 0.0;
            for mu in 0..g.len() {
                let term = g[mu] * k[mu] * j[mu];
                p += term;
                a += term.abs();
            }
            lo = lo.min(p);
            hi = hi.max(p);
            scale = scale.max(a);
        }
        let spread = hi - lo;
        Ok(PairingDrift {
            min: lo,
            max: hi,
            scale,
            relative: if scale > 0.0 { spread / scale } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingDrift {
    pub min: f64,
    pub max: f64,
    pub scale: f64,
    pub relative: f64,
}
