//! Seeded generator of stylized events.
//!
//! The recipes are caricatures meant for exercising the pipeline without real
//! collision data. They are not a physics simulation: there is no matrix
//! element, shower or detector response.
//!
//! Dimuon events draw a mass inside the class window (or inside one of the
//! `none_ranges` for class 0), pick the leading muon and the angular
//! separation, and solve the massless two-body mass for the second muon's pT.
//! Every event is re-labelled before it is returned, so the label always
//! agrees with [`crate::selection::classify_dimuon`].

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{angular_separation_factor, wrap_phi, Event, PhysicsObject};
use crate::rng::derive_indexed;
use crate::selection::{label_dimuon_event, MassWindow, MassWindows, SelectionError, NONE_CLASS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown class {0}")]
    UnknownClass(u32),
    #[error("invalid generator settings: {0}")]
    Spec(String),
    #[error(transparent)]
    Windows(#[from] SelectionError),
    #[error("class {class}: no acceptable draw after {tries} tries")]
    Exhausted { class: u32, tries: usize },
}

/// Kinematic ranges for dimuon events. Masses are in GeV/c².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimuonRecipe {
    pub windows: Vec<MassWindow>,
    /// Mass ranges sampled for class 0; each must avoid every window.
    pub none_ranges: Vec<[f64; 2]>,
    /// Both muon pTs lie in `[lo·m, hi·m]`; the leading draw is log-uniform.
    pub pt_fraction: [f64; 2],
    pub eta_max: f64,
    pub delta_eta_max: f64,
    /// Azimuthal separation is `π - u`, `u` uniform in `[0, spread]`.
    pub delta_phi_spread: f64,
    pub max_tries: usize,
}

impl Default for DimuonRecipe {
    fn default() -> Self {
        DimuonRecipe {
            windows: MassWindows::dimuon_resonances().windows().to_vec(),
            none_ranges: vec![[0.5, 2.2], [15.0, 60.0]],
            pt_fraction: [0.35, 0.65],
            eta_max: 2.4,
            delta_eta_max: 0.5,
            delta_phi_spread: 0.3,
            max_tries: 10_000,
        }
    }
}

/// Object multiplicities and spectra for one complex-event class. pT ranges
/// are sampled log-uniformly, multiplicities uniformly (inclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexRecipe {
    pub name: String,
    pub leptons: [usize; 2],
    pub lepton_pt: [f64; 2],
    pub lepton_eta_max: f64,
    /// Probability that the event's leptons are electrons rather than muons.
    pub electron_fraction: f64,
    pub light_jets: [usize; 2],
    pub b_jets: [usize; 2],
    pub jet_pt: [f64; 2],
    pub jet_eta_max: f64,
    pub met: [f64; 2],
    /// Probability that a true b-jet gets a discriminant in the tagged range.
    #[serde(default = "default_btag_efficiency")]
    pub btag_efficiency: f64,
    /// Probability that a light jet gets a discriminant in the tagged range.
    #[serde(default = "default_mistag_rate")]
    pub mistag_rate: f64,
}

fn default_btag_efficiency() -> f64 {
    0.7
}

fn default_mistag_rate() -> f64 {
    0.02
}

/// Discriminant ranges of tagged and untagged jets; the default selection
/// threshold of 0.679 falls between them.
const TAGGED: std::ops::RangeInclusive<f64> = 0.7..=1.0;
const UNTAGGED: std::ops::Range<f64> = 0.0..0.6;

impl ComplexRecipe {
    /// One hard lepton, three or more jets of which two from b quarks,
    /// large MET.
    pub fn ttbar() -> Self {
        ComplexRecipe {
            name: "ttbar".into(),
            leptons: [1, 1],
            lepton_pt: [25.0, 200.0],
            lepton_eta_max: 2.4,
            electron_fraction: 0.5,
            light_jets: [1, 4],
            b_jets: [2, 2],
            jet_pt: [35.0, 300.0],
            jet_eta_max: 2.3,
            met: [40.0, 250.0],
            btag_efficiency: default_btag_efficiency(),
            mistag_rate: default_mistag_rate(),
        }
    }

    /// Two same-flavour leptons, few jets, small MET.
    pub fn drell_yan() -> Self {
        ComplexRecipe {
            name: "drell_yan".into(),
            leptons: [2, 2],
            lepton_pt: [25.0, 100.0],
            lepton_eta_max: 2.4,
            electron_fraction: 0.5,
            light_jets: [0, 2],
            b_jets: [0, 0],
            jet_pt: [32.0, 120.0],
            jet_eta_max: 3.0,
            met: [2.0, 30.0],
            btag_efficiency: default_btag_efficiency(),
            mistag_rate: default_mistag_rate(),
        }
    }

    /// One lepton, few light jets and at most one b-jet, moderate MET.
    pub fn w_jets() -> Self {
        ComplexRecipe {
            name: "w_jets".into(),
            leptons: [1, 1],
            lepton_pt: [25.0, 120.0],
            lepton_eta_max: 2.4,
            electron_fraction: 0.5,
            light_jets: [0, 3],
            b_jets: [0, 1],
            jet_pt: [32.0, 150.0],
            jet_eta_max: 3.0,
            met: [25.0, 120.0],
            btag_efficiency: default_btag_efficiency(),
            mistag_rate: default_mistag_rate(),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Spec(format!("{}: {m}", self.name)));
        for (what, [lo, hi]) in [
            ("lepton_pt", self.lepton_pt),
            ("jet_pt", self.jet_pt),
            ("met", self.met),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return err(&format!("{what} needs 0 < lo <= hi"));
            }
        }
        for (what, [lo, hi]) in [
            ("leptons", self.leptons),
            ("light_jets", self.light_jets),
            ("b_jets", self.b_jets),
        ] {
            if lo > hi {
                return err(&format!("{what} needs lo <= hi"));
            }
        }
        for (what, p) in [
            ("electron_fraction", self.electron_fraction),
            ("btag_efficiency", self.btag_efficiency),
            ("mistag_rate", self.mistag_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(&format!("{what} must lie in [0, 1]"));
            }
        }
        if !(self.lepton_eta_max >= 0.0 && self.jet_eta_max >= 0.0) {
            return err("eta ranges must be non-negative");
        }
        Ok(())
    }
}

/// Class order of the complex-event study; class 0 is the signal.
pub const COMPLEX_CLASSES: [&str; 3] = ["ttbar", "drell_yan", "w_jets"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub dimuon: DimuonRecipe,
    pub complex: Vec<ComplexRecipe>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            seed: 0,
            dimuon: DimuonRecipe::default(),
            complex: vec![
                ComplexRecipe::ttbar(),
                ComplexRecipe::drell_yan(),
                ComplexRecipe::w_jets(),
            ],
        }
    }
}

impl GeneratorSpec {
    pub fn with_seed(seed: u64) -> Self {
        GeneratorSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<MassWindows, SynthError> {
        let d = &self.dimuon;
        let windows = MassWindows::new(d.windows.clone())?;
        if d.none_ranges.is_empty() {
            return Err(SynthError::Spec("none_ranges must not be empty".into()));
        }
        for &[lo, hi] in &d.none_ranges {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(SynthError::Spec(format!("none range [{lo}, {hi}] needs 0 < lo < hi")));
            }
            if let Some(w) = windows.windows().iter().find(|w| lo <= w.hi && w.lo <= hi) {
                return Err(SynthError::Spec(format!(
                    "none range [{lo}, {hi}] overlaps window {}",
                    w.name
                )));
            }
        }
        let [f_lo, f_hi] = d.pt_fraction;
        if !(f_lo > 0.0 && f_lo < f_hi) {
            return Err(SynthError::Spec("pt_fraction needs 0 < lo < hi".into()));
        }
        if !(d.eta_max > 0.0 && d.delta_eta_max >= 0.0 && (0.0..=PI).contains(&d.delta_phi_spread)) {
            return Err(SynthError::Spec("angular ranges out of bounds".into()));
        }
        for r in &self.complex {
            r.validate()?;
        }
        Ok(windows)
    }

    pub fn complex_class_names(&self) -> Vec<String> {
        self.complex.iter().map(|r| r.name.clone()).collect()
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

fn count(rng: &mut ChaCha8Rng, [lo, hi]: [usize; 2]) -> usize {
    rng.random_range(lo..=hi)
}

fn phi(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-PI..PI)
}

/// Id of the `index`-th generated event.
pub fn event_id(prefix: &str, index: u64) -> String {
    format!("{prefix}{index:07}")
}

/// The `index`-th dimuon event of class `class_id`. Each index has its own
/// random stream, so events can be produced in any order or in parallel.
pub fn generate_dimuon(class_id: u32, index: u64, spec: &GeneratorSpec) -> Result<Event, SynthError> {
    let windows = spec.validate()?;
    generate_dimuon_with(class_id, index, spec, &windows)
}

fn generate_dimuon_with(
    class_id: u32,
    index: u64,
    spec: &GeneratorSpec,
    windows: &MassWindows,
) -> Result<Event, SynthError> {
    let d = &spec.dimuon;
    let window = if class_id == NONE_CLASS {
        None
    } else {
        Some(
            windows
                .windows()
                .iter()
                .find(|w| w.class_id == class_id)
                .ok_or(SynthError::UnknownClass(class_id))?,
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(spec.seed, "dimuon", index));
    let [f_lo, f_hi] = d.pt_fraction;
    for _ in 0..d.max_tries {
        let mass = match window {
            Some(w) => rng.random_range(w.lo..=w.hi),
            None => {
                let [lo, hi] = d.none_ranges[rng.random_range(0..d.none_ranges.len())];
                log_uniform(&mut rng, lo, hi)
            }
        };
        let pt1 = log_uniform(&mut rng, f_lo * mass, f_hi * mass);
        let eta1 = symmetric(&mut rng, d.eta_max);
        let phi1 = phi(&mut rng);
        let d_eta = symmetric(&mut rng, d.delta_eta_max);
        let d_phi = (PI - rng.random_range(0.0..=d.delta_phi_spread)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let factor = angular_separation_factor(d_eta, d_phi);
        if factor < 1e-12 {
            continue;
        }
        let pt2 = mass * mass / (2.0 * pt1 * factor);
        let eta2 = eta1 + d_eta;
        if !(f_lo * mass..=f_hi * mass).contains(&pt2) || eta2.abs() > d.eta_max {
            continue;
        }
        let event = Event::new(
            event_id("dimuon", index),
            vec![
                PhysicsObject::muon(pt1, eta1, phi1),
                PhysicsObject::muon(pt2, eta2, wrap_phi(phi1 + d_phi)),
            ],
        )
        .with_class(class_id);
        if label_dimuon_event(&event, windows) == Some(class_id) {
            return Ok(event);
        }
    }
    Err(SynthError::Exhausted {
        class: class_id,
        tries: d.max_tries,
    })
}

/// The `index`-th event of complex class `class_id` (index into
/// `spec.complex`).
pub fn generate_complex(class_id: u32, index: u64, spec: &GeneratorSpec) -> Result<Event, SynthError> {
    let recipe = spec
        .complex
        .get(class_id as usize)
        .ok_or(SynthError::UnknownClass(class_id))?;
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(spec.seed, "complex", index));
    let electrons = rng.random_bool(recipe.electron_fraction);
    let mut objects = Vec::new();
    for _ in 0..count(&mut rng, recipe.leptons) {
        let pt = log_uniform(&mut rng, recipe.lepton_pt[0], recipe.lepton_pt[1]);
        let eta = symmetric(&mut rng, recipe.lepton_eta_max);
        let p = phi(&mut rng);
        objects.push(if electrons {
            PhysicsObject::electron(pt, eta, p)
        } else {
            PhysicsObject::muon(pt, eta, p)
        });
    }
    let n_b = count(&mut rng, recipe.b_jets);
    let n_light = count(&mut rng, recipe.light_jets);
    for i in 0..n_b + n_light {
        let pt = log_uniform(&mut rng, recipe.jet_pt[0], recipe.jet_pt[1]);
        let eta = symmetric(&mut rng, recipe.jet_eta_max);
        let p = phi(&mut rng);
        let p_tag = if i < n_b {
            recipe.btag_efficiency
        } else {
            recipe.mistag_rate
        };
        let btag = if rng.random_bool(p_tag) {
            rng.random_range(TAGGED)
        } else {
            rng.random_range(UNTAGGED)
        };
        objects.push(PhysicsObject::jet(pt, eta, p, Some(btag)));
    }
    let met = log_uniform(&mut rng, recipe.met[0], recipe.met[1]);
    let met_phi = phi(&mut rng);
    Ok(Event::new(event_id("complex", index), objects)
        .with_met(met, met_phi)
        .with_class(class_id))
}

/// `per_class` events of every dimuon class, classes interleaved
/// (`0, 1, …, n-1, 0, 1, …`) with consecutive indices.
pub fn dimuon_sample(spec: &GeneratorSpec, per_class: usize) -> Result<Vec<Event>, SynthError> {
    let windows = spec.validate()?;
    let n = windows.n_classes();
    (0..per_class * n)
        .map(|i| generate_dimuon_with((i % n) as u32, i as u64, spec, &windows))
        .collect()
}

/// `per_class` events of every complex recipe, classes interleaved.
pub fn complex_sample(spec: &GeneratorSpec, per_class: usize) -> Result<Vec<Event>, SynthError> {
    spec.validate()?;
    let n = spec.complex.len();
    (0..per_class * n)
        .map(|i| generate_complex((i % n) as u32, i as u64, spec))
        .collect()
}
