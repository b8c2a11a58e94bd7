//! Space-homogeneous reduction of the model.
//!
//! When bulk diffusion is infinitely fast the concentrations are uniform per
//! phase and the state collapses to the solid-phase masses `m_i` with
//! `X = sum_i m_i`. The masses evolve by the plain interface fluxes,
//! `dm/dt = F`, and dissipate the reduced free energy
//! `H(m, X) = X h_s(m/X) + (1-X) h_g((m0-m)/(1-X))`.

use nalgebra::Matrix2;

use crate::model::{self, ModelParams, Phase};
use crate::{Error, Result};

/// Interface-position band treated as phase extinction.
const EXTINCTION_EPS: f64 = 1e-10;

/// Solid-phase masses plus totals; `x` is derived as the mass sum.
#[derive(Debug, Clone)]
pub struct MassState {
    m_s: Vec<f64>,
    m0: Vec<f64>,
    x: f64,
}

impl MassState {
    pub fn new(m_s: Vec<f64>, m0: Vec<f64>) -> Result<Self> {
        if m_s.len() != m0.len() {
            return Err(Error::Usage("mass vectors must have the same length".into()));
        }
        let x: f64 = m_s.iter().sum();
        let state = Self { m_s, m0, x };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        for (m, m0) in self.m_s.iter().zip(&self.m0) {
            if !(0.0 < *m && *m < *m0) {
                return Err(Error::Domain(format!("solid mass {m} outside (0, {m0})")));
            }
        }
        if !(0.0 < self.x && self.x < 1.0) {
            return Err(Error::Domain(format!("interface position {} outside (0,1)", self.x)));
        }
        Ok(())
    }

    pub fn solid_masses(&self) -> &[f64] {
        &self.m_s
    }

    pub fn totals(&self) -> &[f64] {
        &self.m0
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn solid_composition(&self) -> Vec<f64> {
        self.m_s.iter().map(|m| m / self.x).collect()
    }

    pub fn gas_composition(&self) -> Vec<f64> {
        self.m_s.iter().zip(&self.m0).map(|(m, m0)| (m0 - m) / (1.0 - self.x)).collect()
    }
}

/// Right-hand side `dm/dt = F(c_s(m), c_g(m))`.
pub fn ode_rhs(state: &MassState, params: &ModelParams) -> Result<Vec<f64>> {
    state.validate()?;
    let c_s = state.solid_composition();
    let c_g = state.gas_composition();
    Ok(model::butler_volmer_flux(&c_s, &c_g, params))
}

/// Reduced free energy on the open box `m_i in (0, m0_i)`, `x in (0,1)`.
///
/// Away from the constraint `sum m = x` this is the natural two-variable
/// extension used for gradient and Hessian checks.
pub fn reduced_free_energy(m: &[f64], x: f64, m0: &[f64], params: &ModelParams) -> Result<f64> {
    if !(0.0 < x && x < 1.0) {
        return Err(Error::Domain(format!("interface position {x} outside (0,1)")));
    }
    for (mi, m0i) in m.iter().zip(m0) {
        if !(0.0 < *mi && *mi < *m0i) {
            return Err(Error::Domain(format!("mass {mi} outside (0, {m0i})")));
        }
    }
    let c_s: Vec<f64> = m.iter().map(|mi| mi / x).collect();
    let c_g: Vec<f64> = m.iter().zip(m0).map(|(mi, m0i)| (m0i - mi) / (1.0 - x)).collect();
    let h_s = model::free_energy_density(&c_s, Phase::Solid, params)?;
    let h_g = model::free_energy_density(&c_g, Phase::Gas, params)?;
    Ok(x * h_s + (1.0 - x) * h_g)
}

/// Reduced free energy of a constrained state.
pub fn reduced_free_energy_of(state: &MassState, params: &ModelParams) -> Result<f64> {
    reduced_free_energy(state.solid_masses(), state.x(), state.totals(), params)
}

/// Hessian of the per-species share
/// `psi_i(m, X) = X phi_i^s(m/X) + (1-X) phi_i^g((m0_i - m)/(1-X))`
/// together with its closed-form determinant
/// `det = (c_s - c_g)^2 / (c_s c_g X (1-X))`.
pub fn hessian_psi(
    m_i: f64,
    x: f64,
    m_i0: f64,
    _params: &ModelParams,
    _species: usize,
) -> Result<(Matrix2<f64>, f64)> {
    if !(0.0 < x && x < 1.0) || !(0.0 < m_i && m_i < m_i0) {
        return Err(Error::Domain(format!("point (m={m_i}, x={x}) not interior to the box")));
    }
    let m_g = m_i0 - m_i;
    let c_s = m_i / x;
    let c_g = m_g / (1.0 - x);
    let d2_mm = 1.0 / m_i + 1.0 / m_g;
    let d2_mx = -1.0 / x - 1.0 / (1.0 - x);
    let d2_xx = m_i / (x * x) + m_g / ((1.0 - x) * (1.0 - x));
    let det_closed = (c_s - c_g) * (c_s - c_g) / (c_s * c_g * x * (1.0 - x));
    Ok((Matrix2::new(d2_mm, d2_mx, d2_mx, d2_xx), det_closed))
}

/// Why an integration stopped before the time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionEvent {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MassState>,
    pub extinction: Option<ExtinctionEvent>,
}

fn rhs_raw(m: &[f64], m0: &[f64], params: &ModelParams) -> Option<Vec<f64>> {
    let x: f64 = m.iter().sum();
    if !(EXTINCTION_EPS..=1.0 - EXTINCTION_EPS).contains(&x) {
        return None;
    }
    let c_s: Vec<f64> = m.iter().map(|mi| mi / x).collect();
    let c_g: Vec<f64> = m.iter().zip(m0).map(|(mi, m0i)| (m0i - mi) / (1.0 - x)).collect();
    Some(model::butler_volmer_flux(&c_s, &c_g, params))
}

/// Fixed-step fourth-order Runge-Kutta integration of `dm/dt = F`.
///
/// Stops early with an [`ExtinctionEvent`] when the state leaves the
/// constraint box (a phase vanishes); the flux formula itself is total, so
/// intermediate stages slightly outside the box are harmless.
pub fn integrate(state0: &MassState, t_end: f64, dt: f64, params: &ModelParams) -> Result<OdeTrajectory> {
    if dt <= 0.0 || t_end <= 0.0 {
        return Err(Error::Usage("time step and horizon must be positive".into()));
    }
    let m0 = state0.totals().to_vec();
    let mut m = state0.solid_masses().to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![state0.clone()];
    let mut extinction = None;

    'time: while t < t_end - 1e-12 * t_end {
        let h = dt.min(t_end - t);
        let Some(k1) = rhs_raw(&m, &m0, params) else {
            extinction = Some(ExtinctionEvent { time: t, reason: "interface reached a domain end".into() });
            break;
        };
        let stage = |base: &[f64], k: &[f64], factor: f64| -> Vec<f64> {
            base.iter().zip(k).map(|(b, ki)| b + factor * ki).collect()
        };
        let Some(k2) = rhs_raw(&stage(&m, &k1, 0.5 * h), &m0, params) else {
            extinction = Some(ExtinctionEvent { time: t + 0.5 * h, reason: "interface reached a domain end".into() });
            break;
        };
        let Some(k3) = rhs_raw(&stage(&m, &k2, 0.5 * h), &m0, params) else {
            extinction = Some(ExtinctionEvent { time: t + 0.5 * h, reason: "interface reached a domain end".into() });
            break;
        };
        let Some(k4) = rhs_raw(&stage(&m, &k3, h), &m0, params) else {
            extinction = Some(ExtinctionEvent { time: t + h, reason: "interface reached a domain end".into() });
            break;
        };
        let mut m_new = m.clone();
        for i in 0..m.len() {
            m_new[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;

        let x_new: f64 = m_new.iter().sum();
        if !(EXTINCTION_EPS..=1.0 - EXTINCTION_EPS).contains(&x_new) {
            extinction = Some(ExtinctionEvent { time: t, reason: "interface reached a domain end".into() });
            break;
        }
        for (i, (mi, m0i)) in m_new.iter().zip(&m0).enumerate() {
            if !(0.0 < *mi && *mi < *m0i) {
                extinction = Some(ExtinctionEvent {
                    time: t,
                    reason: format!("species {i} vanished from one phase"),
                });
                break 'time;
            }
        }

        m = m_new;
        times.push(t);
        states.push(MassState::new(m.clone(), m0.clone())?);
    }

    Ok(OdeTrajectory { times, states, extinction })
}
