//! Preselection cuts and dimuon mass-window labels.

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, ObjectKind};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("invalid selection config: {0}")]
    Config(String),
    #[error("mass windows {a:?} and {b:?} overlap")]
    Overlap { a: String, b: String },
    #[error("invalid mass window {name:?}: {reason}")]
    Window { name: String, reason: String },
}

/// Thresholds for the single-lepton preselection. Momentum and η cuts are
/// strict inequalities, the b-tag cut is inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub lepton_pt_min: f64,
    pub jet_pt_min: f64,
    pub jet_abs_eta_max: f64,
    pub btag_threshold: f64,
    /// Require exactly one lepton above threshold instead of at least one.
    pub require_single_lepton: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            lepton_pt_min: 20.0,
            jet_pt_min: 30.0,
            jet_abs_eta_max: 2.4,
            btag_threshold: 0.679,
            require_single_lepton: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let fields = [
            ("lepton_pt_min", self.lepton_pt_min),
            ("jet_pt_min", self.jet_pt_min),
            ("jet_abs_eta_max", self.jet_abs_eta_max),
            ("btag_threshold", self.btag_threshold),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SelectionError::Config(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        if self.jet_abs_eta_max > 3.0 {
            return Err(SelectionError::Config(format!(
                "jet_abs_eta_max {} exceeds the canvas η range of 3",
                self.jet_abs_eta_max
            )));
        }
        Ok(())
    }
}

/// An event that passed preselection. Only the retained leptons and jets are
/// kept, jets carry their b-tag label; the MET is untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedEvent(Event);

impl SelectedEvent {
    pub fn into_event(self) -> Event {
        self.0
    }

    pub fn event(&self) -> &Event {
        &self.0
    }
}

impl Deref for SelectedEvent {
    type Target = Event;

    fn deref(&self) -> &Event {
        &self.0
    }
}

/// Applies the lepton, jet and b-tag cuts. Returns `None` when the lepton
/// requirement fails. Leptons failing the upstream quality flag never count.
pub fn select_complex_event(event: &Event, cfg: &SelectionConfig) -> Option<SelectedEvent> {
    let leptons: Vec<_> = event
        .leptons()
        .filter(|l| l.quality && l.pt > cfg.lepton_pt_min)
        .cloned()
        .collect();
    let pass = if cfg.require_single_lepton {
        leptons.len() == 1
    } else {
        !leptons.is_empty()
    };
    if !pass {
        return None;
    }
    let jets = event
        .jets()
        .filter(|j| j.pt > cfg.jet_pt_min && j.eta.abs() < cfg.jet_abs_eta_max)
        .map(|j| {
            let mut j = j.clone();
            if let Some(b) = j.btag {
                j.kind = if b >= cfg.btag_threshold {
                    ObjectKind::BJet
                } else {
                    ObjectKind::Jet
                };
            }
            j
        });
    let objects = leptons.into_iter().chain(jets).collect();
    Some(SelectedEvent(Event {
        id: event.id.clone(),
        objects,
        met: event.met.clone(),
        truth_class: event.truth_class,
    }))
}

/// A closed invariant-mass interval defining one dimuon class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassWindow {
    pub class_id: u32,
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl MassWindow {
    pub fn new(class_id: u32, name: &str, lo: f64, hi: f64) -> Self {
        MassWindow {
            class_id,
            name: name.to_string(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, mass: f64) -> bool {
        self.lo <= mass && mass <= self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Validated, sorted set of disjoint windows. Masses outside every window
/// belong to class 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MassWindows {
    windows: Vec<MassWindow>,
}

pub const NONE_CLASS: u32 = 0;

impl MassWindows {
    pub fn new(mut windows: Vec<MassWindow>) -> Result<Self, SelectionError> {
        for w in &windows {
            if !(w.lo < w.hi) || !w.lo.is_finite() || !w.hi.is_finite() {
                return Err(SelectionError::Window {
                    name: w.name.clone(),
                    reason: format!("need lo < hi, got [{}, {}]", w.lo, w.hi),
                });
            }
            if w.class_id == NONE_CLASS {
                return Err(SelectionError::Window {
                    name: w.name.clone(),
                    reason: "class 0 is reserved for masses outside every window".into(),
                });
            }
        }
        windows.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for pair in windows.windows(2) {
            if pair[1].lo <= pair[0].hi {
                return Err(SelectionError::Overlap {
                    a: pair[0].name.clone(),
                    b: pair[1].name.clone(),
                });
            }
        }
        let mut ids: Vec<u32> = windows.iter().map(|w| w.class_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != windows.len() {
            return Err(SelectionError::Config("duplicate class_id among mass windows".into()));
        }
        Ok(MassWindows { windows })
    }

    /// J/Ψ, Ψ′, Υ and Z windows in GeV/c².
    pub fn dimuon_resonances() -> Self {
        MassWindows::new(vec![
            MassWindow::new(1, "jpsi", 2.94, 3.24),
            MassWindow::new(2, "psi_prime", 3.65, 3.95),
            MassWindow::new(3, "upsilon", 6.46, 12.46),
            MassWindow::new(4, "z", 83.69, 98.69),
        ])
        .expect("built-in windows are disjoint")
    }

    pub fn windows(&self) -> &[MassWindow] {
        &self.windows
    }

    pub fn n_classes(&self) -> usize {
        self.windows.iter().map(|w| w.class_id as usize).max().unwrap_or(0) + 1
    }

    /// Class names indexed by class id; class 0 is `none`.
    pub fn class_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.n_classes()];
        names[0] = "none".to_string();
        for w in &self.windows {
            names[w.class_id as usize] = w.name.clone();
        }
        for (i, n) in names.iter_mut().enumerate() {
            if n.is_empty() {
                *n = format!("class{i}");
            }
        }
        names
    }

    /// Class whose closed window contains `mass`, else [`NONE_CLASS`].
    pub fn classify(&self, mass: f64) -> u32 {
        let idx = self.windows.partition_point(|w| w.hi < mass);
        match self.windows.get(idx) {
            Some(w) if w.contains(mass) => w.class_id,
            _ => NONE_CLASS,
        }
    }
}

pub fn classify_dimuon(mass: f64, windows: &MassWindows) -> u32 {
    windows.classify(mass)
}

/// Labels a dimuon event by the mass of its two leading muons.
pub fn label_dimuon_event(event: &Event, windows: &MassWindows) -> Option<u32> {
    event.dimuon_mass().map(|m| windows.classify(m))
}
