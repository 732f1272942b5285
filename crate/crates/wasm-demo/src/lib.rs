//! Browser bindings: a 1D Burgers run with an optional neural source, the
//! adjoint-vs-finite-difference check on it, and the network size formula.

use wasm_bindgen::prelude::*;

use dpm_core::adjoint::FD_STEPS;
use dpm_core::burgers::{burgers_gradcheck, burgers_run, standard_problem, BurgersModel};
use dpm_core::neural::param_count;

fn js_err(e: dpm_core::DpmError) -> JsError {
    JsError::new(&e.to_string())
}

fn model(hidden: usize, seed: u64, scale: f64) -> Result<BurgersModel, JsError> {
    if scale == 0.0 {
        return BurgersModel::off(hidden.max(1)).map_err(js_err);
    }
    Ok(BurgersModel::xavier(hidden, seed).map_err(js_err)?.with_scale(scale))
}

/// Final profile of the standard Burgers problem on `n` points after `steps`
/// steps; the first half of the result is the initial profile, the second
/// half the final one.
#[wasm_bindgen]
pub fn burgers_profile(n: usize, steps: usize, hidden: usize, seed: u64, scale: f64) -> Result<Vec<f64>, JsError> {
    let (s0, dt, _) = standard_problem(n, steps).map_err(js_err)?;
    let traj = burgers_run(&s0, &model(hidden, seed, scale)?, dt, steps).map_err(js_err)?;
    let mut out = s0.u.clone();
    out.extend_from_slice(&traj.states[steps].u);
    Ok(out)
}

/// Text report of the discrete-adjoint dot-product test against central
/// differences, with the continuous-adjoint gap.
#[wasm_bindgen]
pub fn burgers_check(n: usize, steps: usize, hidden: usize, seed: u64) -> Result<String, JsError> {
    let (s0, dt, targets) = standard_problem(n, steps).map_err(js_err)?;
    let m = model(hidden, seed, 0.1)?;
    // fixed pseudo-random direction so the page needs no RNG of its own
    let dir: Vec<f64> = (0..m.params.len())
        .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    let r = burgers_gradcheck(&s0, &m, dt, steps, &targets, &dir, &FD_STEPS).map_err(js_err)?;
    Ok(r.render())
}

/// Trainable parameter count of the gated network.
#[wasm_bindgen]
pub fn network_size(inputs: usize, hidden: usize, outputs: usize) -> usize {
    param_count(inputs, hidden, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_has_both_halves() {
        let p = burgers_profile(32, 10, 4, 1, 0.1).unwrap();
        assert_eq!(p.len(), 64);
        assert!(p.iter().all(|v| v.is_finite()));
        let off = burgers_profile(32, 10, 4, 1, 0.0).unwrap();
        assert_eq!(off[..32], p[..32]);
    }

    #[test]
    fn check_reports_small_error() {
        let r = burgers_check(32, 10, 4, 2).unwrap();
        assert!(r.contains("best relative error"));
    }

    #[test]
    fn size_matches_table() {
        assert_eq!(network_size(273, 5, 18), 4278);
    }
}
