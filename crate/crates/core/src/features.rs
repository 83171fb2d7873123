//! Fixed-length feature vectors for the feedforward baseline.

use serde::{Deserialize, Serialize};

use crate::event::{Event, ObjectKind, PhysicsObject};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// `[pT, η, φ]` of the two leading muons.
    Dimuon,
    /// Leading lepton `[pT, η, φ, is_e, is_μ]`, then `max_jets` slots of
    /// `[pT, η, φ, is_b]` in descending pT, then `[MET, φ_MET]`.
    Complex,
}

fn default_max_jets() -> usize {
    6
}

fn default_layout() -> FeatureLayout {
    FeatureLayout::Complex
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    #[serde(default = "default_layout")]
    pub layout: FeatureLayout,
    #[serde(default = "default_max_jets")]
    pub max_jets: usize,
    /// Value written into absent slots.
    #[serde(default)]
    pub default_fill: f64,
    /// Replace every momentum slot by its natural logarithm. Absent slots
    /// still receive `default_fill`.
    #[serde(default)]
    pub log_momentum: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            layout: default_layout(),
            max_jets: default_max_jets(),
            default_fill: 0.0,
            log_momentum: false,
        }
    }
}

/// A feature row and the number of jets that did not fit.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurized {
    pub values: Vec<f64>,
    pub truncated_jets: usize,
}

impl FeatureSpec {
    pub fn dimuon() -> Self {
        FeatureSpec {
            layout: FeatureLayout::Dimuon,
            ..Default::default()
        }
    }

    pub fn complex(max_jets: usize) -> Self {
        FeatureSpec {
            layout: FeatureLayout::Complex,
            max_jets,
            ..Default::default()
        }
    }

    pub fn width(&self) -> usize {
        match self.layout {
            FeatureLayout::Dimuon => 6,
            FeatureLayout::Complex => 5 + 4 * self.max_jets + 2,
        }
    }

    /// Column names in layout order.
    pub fn names(&self) -> Vec<String> {
        match self.layout {
            FeatureLayout::Dimuon => ["mu1_pt", "mu1_eta", "mu1_phi", "mu2_pt", "mu2_eta", "mu2_phi"]
                .map(String::from)
                .to_vec(),
            FeatureLayout::Complex => {
                let mut n: Vec<String> = ["lep_pt", "lep_eta", "lep_phi", "lep_is_e", "lep_is_mu"]
                    .map(String::from)
                    .to_vec();
                for j in 0..self.max_jets {
                    for f in ["pt", "eta", "phi", "is_b"] {
                        n.push(format!("jet{j}_{f}"));
                    }
                }
                n.push("met".into());
                n.push("met_phi".into());
                n
            }
        }
    }

    fn momentum(&self, pt: f64) -> f64 {
        if self.log_momentum {
            pt.max(f64::MIN_POSITIVE).ln()
        } else {
            pt
        }
    }
}

fn by_pt_desc<'a>(objects: impl Iterator<Item = &'a PhysicsObject>) -> Vec<&'a PhysicsObject> {
    let mut v: Vec<&PhysicsObject> = objects.collect();
    v.sort_by(|a, b| b.pt.total_cmp(&a.pt));
    v
}

/// Flattens an event into `spec.width()` numbers.
pub fn featurize(event: &Event, spec: &FeatureSpec) -> Featurized {
    let fill = spec.default_fill;
    let mut values = Vec::with_capacity(spec.width());
    let mut truncated_jets = 0;
    match spec.layout {
        FeatureLayout::Dimuon => {
            let muons = by_pt_desc(event.muons());
            for slot in 0..2 {
                match muons.get(slot) {
                    Some(m) => values.extend([spec.momentum(m.pt), m.eta, m.phi]),
                    None => values.extend([fill; 3]),
                }
            }
        }
        FeatureLayout::Complex => {
            match by_pt_desc(event.leptons()).first() {
                Some(l) => values.extend([
                    spec.momentum(l.pt),
                    l.eta,
                    l.phi,
                    f64::from(u8::from(l.kind == ObjectKind::Electron)),
                    f64::from(u8::from(l.kind == ObjectKind::Muon)),
                ]),
                None => values.extend([fill; 5]),
            }
            let jets = by_pt_desc(event.jets());
            truncated_jets = jets.len().saturating_sub(spec.max_jets);
            for slot in 0..spec.max_jets {
                match jets.get(slot) {
                    Some(j) => values.extend([
                        spec.momentum(j.pt),
                        j.eta,
                        j.phi,
                        f64::from(u8::from(j.kind == ObjectKind::BJet)),
                    ]),
                    None => values.extend([fill; 4]),
                }
            }
            if event.met.pt > 0.0 {
                values.extend([spec.momentum(event.met.pt), event.met.phi]);
            } else {
                values.extend([fill; 2]);
            }
        }
    }
    debug_assert_eq!(values.len(), spec.width());
    Featurized { values, truncated_jets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_jets_fill_every_jet_slot() {
        let e = Event::new("a", vec![PhysicsObject::electron(30.0, 0.5, 1.0)]).with_met(40.0, -1.0);
        let mut spec = FeatureSpec::complex(2);
        spec.default_fill = -9.0;
        let f = featurize(&e, &spec);
        assert_eq!(
            f.values,
            vec![30.0, 0.5, 1.0, 1.0, 0.0, -9.0, -9.0, -9.0, -9.0, -9.0, -9.0, -9.0, -9.0, 40.0, -1.0]
        );
        assert_eq!(f.truncated_jets, 0);
    }

    #[test]
    fn dimuon_echoes_inputs() {
        let e = Event::new(
            "d",
            vec![
                PhysicsObject::muon(10.0, 0.1, 0.2),
                PhysicsObject::muon(45.0, -1.2, 3.0),
            ],
        );
        let f = featurize(&e, &FeatureSpec::dimuon());
        assert_eq!(f.values, vec![45.0, -1.2, 3.0, 10.0, 0.1, 0.2]);
    }

    #[test]
    fn lowest_jet_truncated() {
        let mut b = PhysicsObject::jet(80.0, 0.3, 0.0, Some(0.9));
        b.kind = ObjectKind::BJet;
        let e = Event::new(
            "j",
            vec![
                PhysicsObject::muon(25.0, 0.0, 0.0),
                PhysicsObject::jet(40.0, 1.0, 1.0, None),
                PhysicsObject::jet(35.0, 2.0, 2.0, None),
                b,
            ],
        );
        let f = featurize(&e, &FeatureSpec::complex(2));
        assert_eq!(f.truncated_jets, 1);
        assert_eq!(&f.values[5..13], &[80.0, 0.3, 0.0, 1.0, 40.0, 1.0, 1.0, 0.0]);
        assert_eq!(&f.values[13..], &[0.0, 0.0]);
    }

    #[test]
    fn names_match_width() {
        for spec in [FeatureSpec::dimuon(), FeatureSpec::complex(0), FeatureSpec::complex(6)] {
            assert_eq!(spec.names().len(), spec.width());
        }
    }

    #[test]
    fn log_momentum() {
        let e = Event::new("d", vec![PhysicsObject::muon(std::f64::consts::E, 0.0, 0.0)]);
        let mut spec = FeatureSpec::dimuon();
        spec.log_momentum = true;
        let f = featurize(&e, &spec);
        assert!((f.values[0] - 1.0).abs() < 1e-15);
        assert_eq!(&f.values[3..], &[0.0, 0.0, 0.0]);
    }
}
