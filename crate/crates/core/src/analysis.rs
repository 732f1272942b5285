//! Evaluation: resolved kinetic energy decay, spectra and the
//! finite-difference error table of filtered fields.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::closure::Closure;
use crate::error::{DpmError, Result};
use crate::filter::{box_filter, discretization_diagnostics, CoarseTarget, DiscretizationDiagnostics, FilterSpec};
use crate::grid::VectorField;
use crate::solver::{step, FluidState, SolverConfig};
use crate::spectral::{shell_spectrum, Spectrum};

/// `½⟨ū_i ū_i⟩` with each component interpolated to cell centers.
pub fn resolved_tke(u: &VectorField) -> f64 {
    let sum: f64 = (0..3)
        .map(|m| u.center_component(m).iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * sum / u.grid.len() as f64
}

/// Initial-state scales used to overlay curves from different viscosities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub u_rms0: f64,
    /// Eddy-turnover time `k/ε` of the initial DNS state.
    pub t_eddy0: f64,
}

impl Normalization {
    pub fn new(u_rms0: f64, t_eddy0: f64) -> Result<Self> {
        if !(u_rms0 > 0.0 && t_eddy0 > 0.0) {
            return Err(DpmError::InvalidArgument("normalization scales must be positive".into()));
        }
        Ok(Self { u_rms0, t_eddy0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    /// `μ/μ₀`
    pub viscosity_ratio: f64,
    pub seed: u64,
    pub role: CaseRole,
}

/// `k̄(t)/u²_rms,0` against `t/t_ℓ,0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub label: String,
    pub times: Vec<f64>,
    pub kbar: Vec<f64>,
    /// Normalized time at which the run blew up, if it did.
    pub blowup_time: Option<f64>,
}

impl DecayCurve {
    /// Mean absolute difference at shared sample times; infinite when
    /// either curve stopped early.
    pub fn l1_distance(&self, other: &DecayCurve) -> f64 {
        if self.blowup_time.is_some() || other.blowup_time.is_some() || self.kbar.len() != other.kbar.len() {
            return f64::INFINITY;
        }
        if self.kbar.is_empty() {
            return 0.0;
        }
        self.kbar.iter().zip(&other.kbar).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.kbar.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumSample {
    pub label: String,
    pub time: f64,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub reference: DecayCurve,
    pub curves: Vec<DecayCurve>,
    pub spectra: Vec<SpectrumSample>,
}

impl DecayReport {
    pub fn curve(&self, label: &str) -> Option<&DecayCurve> {
        self.curves.iter().find(|c| c.label == label)
    }

    /// `(label, L¹ distance to the filtered DNS)` per closure.
    pub fn distances(&self) -> Vec<(String, f64)> {
        self.curves
            .iter()
            .map(|c| (c.label.clone(), c.l1_distance(&self.reference)))
            .collect()
    }
}

/// Settings shared by every closure of one decay experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySetup {
    pub viscosity: f64,
    pub density: f64,
    pub dt: f64,
    pub norm: Normalization,
    pub divergence_free: bool,
}

/// Runs every closure from the projected first reference target and samples
/// `k̄` (and spectra) at the reference times, which must be whole multiples
/// of `dt` apart.
pub fn decay_experiment(
    reference: &[CoarseTarget],
    closures: &[(&str, &dyn Closure)],
    setup: &DecaySetup,
) -> Result<DecayReport> {
    let first = reference
        .first()
        .ok_or_else(|| DpmError::MissingData("decay experiment needs reference targets".into()))?;
    let grid = first.u_bar.grid;
    if reference.iter().any(|t| !t.u_bar.grid.same_geometry(&grid)) {
        return Err(DpmError::Shape("reference targets mix grid geometries".into()));
    }
    let mut stride = Vec::with_capacity(reference.len());
    for w in reference.windows(2) {
        let steps = (w[1].time - w[0].time) / setup.dt;
        let rounded = steps.round();
        if rounded < 1.0 || (steps - rounded).abs() > 1e-6 {
            return Err(DpmError::InvalidArgument(format!(
                "reference spacing {} is not a whole number of steps of {}",
                w[1].time - w[0].time,
                setup.dt
            )));
        }
        stride.push(rounded as usize);
    }
    let t0 = first.time;
    let norm_t = |t: f64| (t - t0) / setup.norm.t_eddy0;
    let norm_k = |u: &VectorField| resolved_tke(u) / setup.norm.u_rms0.powi(2);

    let reference_curve = DecayCurve {
        label: "filtered_dns".into(),
        times: reference.iter().map(|t| norm_t(t.time)).collect(),
        kbar: reference.iter().map(|t| norm_k(&t.u_bar)).collect(),
        blowup_time: None,
    };
    let mut spectra: Vec<SpectrumSample> = reference
        .iter()
        .map(|t| SpectrumSample {
            label: "filtered_dns".into(),
            time: norm_t(t.time),
            spectrum: shell_spectrum(&t.u_bar),
        })
        .collect();

    let solver = SolverConfig::new(setup.dt)?
        .with_projection(setup.divergence_free)
        .with_blowup_reference(first.u_bar.rms());
    let mut curves = Vec::with_capacity(closures.len());
    for (label, closure) in closures {
        let u0 = if setup.divergence_free { first.w.clone() } else { first.u_bar.clone() };
        let mut state = FluidState::new(u0, setup.viscosity, setup.density);
        state.time = t0;
        let mut curve = DecayCurve {
            label: label.to_string(),
            times: vec![norm_t(t0)],
            kbar: vec![norm_k(&state.u)],
            blowup_time: None,
        };
        spectra.push(SpectrumSample { label: label.to_string(), time: norm_t(t0), spectrum: shell_spectrum(&state.u) });
        'run: for &s in &stride {
            for _ in 0..s {
                match step(&state, &solver, *closure) {
                    Ok(next) => state = next,
                    Err(DpmError::BlowUp { time, .. }) => {
                        curve.blowup_time = Some(norm_t(time));
                        break 'run;
                    }
                    Err(e) => return Err(e),
                }
            }
            curve.times.push(norm_t(state.time));
            curve.kbar.push(norm_k(&state.u));
            spectra.push(SpectrumSample {
                label: label.to_string(),
                time: norm_t(state.time),
                spectrum: shell_spectrum(&state.u),
            });
        }
        curves.push(curve);
    }
    Ok(DecayReport { reference: reference_curve, curves, spectra })
}

/// Writes `t_norm,kbar_norm,closure`.
pub fn write_decay_csv<W: Write>(out: W, curves: &[&DecayCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_norm", "kbar_norm", "closure"]).map_err(csv_err)?;
    for c in curves {
        for (t, k) in c.times.iter().zip(&c.kbar) {
            w.write_record([t.to_string(), k.to_string(), c.label.clone()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `kappa,E,closure,t_norm`.
pub fn write_spectrum_csv<W: Write>(out: W, spectra: &[SpectrumSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kappa", "E", "closure", "t_norm"]).map_err(csv_err)?;
    for s in spectra {
        for (k, e) in s.spectrum.shell_centers.iter().zip(&s.spectrum.energy) {
            w.write_record([k.to_string(), e.to_string(), s.label.clone(), s.time.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DpmError {
    DpmError::Io(std::io::Error::other(e.to_string()))
}

/// One row of the finite-difference error table. Implicit rows filter and
/// sample at the same ratio; explicit rows filter wider than they sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Row {
    pub filter_ratio: usize,
    pub sampling_ratio: usize,
    pub diag: DiscretizationDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
}

pub fn table1_report(u: &VectorField, ratios: &[usize], explicit: &[(usize, usize)]) -> Result<Table1Report> {
    let mut rows = Vec::new();
    let pairs = ratios.iter().map(|&r| (r, r)).chain(explicit.iter().copied());
    for (rf, rs) in pairs {
        let f = FilterSpec::new(rf)?;
        let s = FilterSpec::new(rs)?;
        f.check(u.grid)?;
        s.coarse_grid(u.grid)?;
        let filtered = box_filter(u, f)?;
        rows.push(Table1Row { filter_ratio: rf, sampling_ratio: rs, diag: discretization_diagnostics(&filtered, s)? });
    }
    Ok(Table1Report { rows })
}

impl Table1Report {
    const HEADER: [&'static str; 7] = [
        "filter_ratio",
        "sampling_ratio",
        "delta_over_grad",
        "fine_div_max_over_grad",
        "fine_div_mean_over_grad",
        "coarse_div_max_over_grad",
        "coarse_div_mean_over_grad",
    ];

    fn values(r: &Table1Row) -> [f64; 5] {
        let d = &r.diag;
        [
            d.delta_ratio(),
            d.fine_div_max_ratio(),
            d.fine_div_mean_ratio(),
            d.coarse_div_max_ratio(),
            d.coarse_div_mean_ratio(),
        ]
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:>7} {:>7} {:>12} {:>12} {:>12} {:>12} {:>12}\n",
            "filter", "sample", "<|du1|>/<g>", "max|Df|/<g>", "<|Df|>/<g>", "max|Dc|/<g>", "<|Dc|>/<g>"
        );
        for r in &self.rows {
            let v = Self::values(r);
            s.push_str(&format!("{:>7} {:>7}", r.filter_ratio, r.sampling_ratio));
            for x in v {
                s.push_str(&format!(" {x:>12.4e}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.filter_ratio.to_string(), r.sampling_ratio.to_string()];
            rec.extend(Self::values(r).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
