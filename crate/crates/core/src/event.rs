//! Kinematic types and two-body invariant mass.
//!
//! Coordinates follow the usual hadron-collider convention: the beam runs
//! along `z`, `px = pT cos φ`, `py = pT sin φ`, `pz = pT sinh η`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Muon rest mass in GeV/c².
pub const MUON_MASS: f64 = 0.10566;
/// Electron rest mass in GeV/c².
pub const ELECTRON_MASS: f64 = 0.000511;

/// Slack allowed on `E² − p²` before a four-vector counts as space-like.
pub const MASS_SQUARED_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("transverse momentum must be non-negative and finite, got {0}")]
    NegativePt(f64),
    #[error("mass must be non-negative and finite, got {0}")]
    NegativeMass(f64),
    #[error("non-finite coordinate (eta = {eta}, phi = {phi})")]
    NonFinite { eta: f64, phi: f64 },
}

/// Relativistic four-momentum `(E, px, py, pz)` in GeV.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FourVector {
    pub e: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
}

impl FourVector {
    pub const fn new(e: f64, px: f64, py: f64, pz: f64) -> Self {
        FourVector { e, px, py, pz }
    }

    /// Builds the four-momentum of an object given in detector coordinates.
    pub fn from_pt_eta_phi(pt: f64, eta: f64, phi: f64, mass: f64) -> Result<Self, KinematicsError> {
        if !(pt >= 0.0) || !pt.is_finite() {
            return Err(KinematicsError::NegativePt(pt));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(KinematicsError::NegativeMass(mass));
        }
        if !eta.is_finite() || !phi.is_finite() {
            return Err(KinematicsError::NonFinite { eta, phi });
        }
        let px = pt * phi.cos();
        let py = pt * phi.sin();
        let pz = pt * eta.sinh();
        let e = (px * px + py * py + pz * pz + mass * mass).sqrt();
        Ok(FourVector { e, px, py, pz })
    }

    pub fn p_squared(&self) -> f64 {
        self.px * self.px + self.py * self.py + self.pz * self.pz
    }

    /// Magnitude of the three-momentum.
    pub fn p(&self) -> f64 {
        self.p_squared().sqrt()
    }

    pub fn pt(&self) -> f64 {
        self.px.hypot(self.py)
    }

    pub fn phi(&self) -> f64 {
        self.py.atan2(self.px)
    }

    /// Pseudorapidity. Zero for a vector with no transverse component.
    pub fn eta(&self) -> f64 {
        let pt = self.pt();
        if pt == 0.0 {
            return 0.0;
        }
        (self.pz / pt).asinh()
    }

    /// `E² − |p|²`, factored so that a massless vector built from the same
    /// momentum gives exactly zero.
    pub fn mass_squared(&self) -> f64 {
        let p = self.p();
        (self.e - p) * (self.e + p)
    }

    pub fn mass(&self) -> f64 {
        self.mass_squared().max(0.0).sqrt()
    }

    /// Checks `E ≥ 0` and `m² ≥ −ε`.
    pub fn is_physical(&self) -> bool {
        self.e >= 0.0 && self.mass_squared() >= -MASS_SQUARED_TOLERANCE
    }

    fn unit_direction(&self) -> Option<[f64; 3]> {
        let p = self.p();
        if p == 0.0 {
            return None;
        }
        Some([self.px / p, self.py / p, self.pz / p])
    }
}

impl Add for FourVector {
    type Output = FourVector;

    fn add(self, rhs: FourVector) -> FourVector {
        FourVector {
            e: self.e + rhs.e,
            px: self.px + rhs.px,
            py: self.py + rhs.py,
            pz: self.pz + rhs.pz,
        }
    }
}

/// Invariant mass of a two-particle system,
/// `m² = m₁² + m₂² + 2(E₁E₂ − |p₁||p₂| cos θ)`.
///
/// The bracket is split as `(E₁E₂ − |p₁||p₂|) + |p₁||p₂|(1 − cos θ)` with
/// `1 − cos θ = |p̂₁ − p̂₂|²/2`, which avoids the cancellation of the naive
/// `(E₁+E₂)² − |p₁+p₂|²` for nearly collinear light particles. Every step is
/// symmetric, so swapping the arguments gives the same bits.
pub fn invariant_mass_exact(a: &FourVector, b: &FourVector) -> f64 {
    let (pa, pb) = (a.p(), b.p());
    let energy_term = a.e * b.e - pa * pb;
    let angular_term = match (a.unit_direction(), b.unit_direction()) {
        (Some(ua), Some(ub)) => {
            let d2 = (ua[0] - ub[0]).powi(2) + (ua[1] - ub[1]).powi(2) + (ua[2] - ub[2]).powi(2);
            pa * pb * 0.5 * d2
        }
        _ => 0.0,
    };
    let m2 = a.mass_squared() + b.mass_squared() + 2.0 * (energy_term + angular_term);
    m2.max(0.0).sqrt()
}

/// Invariant mass of two massless particles from their detector coordinates,
/// `m² = 2 pT₁ pT₂ (cosh Δη − cos Δφ)`.
///
/// `cosh Δη − cos Δφ` is evaluated as `2 sinh²(Δη/2) + 2 sin²(Δφ/2)`.
pub fn invariant_mass_transverse(pt1: f64, eta1: f64, phi1: f64, pt2: f64, eta2: f64, phi2: f64) -> f64 {
    let m2 = 2.0 * pt1 * pt2 * angular_separation_factor(eta1 - eta2, phi1 - phi2);
    m2.max(0.0).sqrt()
}

/// `cosh Δη − cos Δφ` in a cancellation-free form.
pub fn angular_separation_factor(d_eta: f64, d_phi: f64) -> f64 {
    let sh = (0.5 * d_eta).sinh();
    let s = (0.5 * d_phi).sin();
    2.0 * (sh * sh + s * s)
}

/// Maps an angle into `[−π, π]`.
pub fn wrap_phi(phi: f64) -> f64 {
    if (-PI..=PI).contains(&phi) {
        return phi;
    }
    let wrapped = (phi + PI).rem_euclid(2.0 * PI) - PI;
    wrapped.clamp(-PI, PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Electron,
    Muon,
    Jet,
    #[serde(rename = "bjet")]
    BJet,
    #[serde(rename = "met")]
    Met,
}

impl ObjectKind {
    pub fn is_lepton(self) -> bool {
        matches!(self, ObjectKind::Electron | ObjectKind::Muon)
    }

    pub fn is_jet(self) -> bool {
        matches!(self, ObjectKind::Jet | ObjectKind::BJet)
    }

    /// Rest mass assumed when the input does not carry one.
    pub fn default_mass(self) -> f64 {
        match self {
            ObjectKind::Electron => ELECTRON_MASS,
            ObjectKind::Muon => MUON_MASS,
            _ => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Electron => "electron",
            ObjectKind::Muon => "muon",
            ObjectKind::Jet => "jet",
            ObjectKind::BJet => "bjet",
            ObjectKind::Met => "met",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "electron" => ObjectKind::Electron,
            "muon" => ObjectKind::Muon,
            "jet" => ObjectKind::Jet,
            "bjet" => ObjectKind::BJet,
            "met" => ObjectKind::Met,
            _ => return None,
        })
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One reconstructed object in `(pT, η, φ)` form.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsObject {
    pub kind: ObjectKind,
    pub pt: f64,
    pub eta: f64,
    pub phi: f64,
    pub mass: f64,
    /// b-tag discriminant, only meaningful for jets.
    pub btag: Option<f64>,
    /// Isolation and identification flag, decided upstream.
    pub quality: bool,
}

impl PhysicsObject {
    pub fn new(kind: ObjectKind, pt: f64, eta: f64, phi: f64) -> Self {
        PhysicsObject {
            kind,
            pt,
            eta,
            phi,
            mass: kind.default_mass(),
            btag: None,
            quality: true,
        }
    }

    pub fn muon(pt: f64, eta: f64, phi: f64) -> Self {
        Self::new(ObjectKind::Muon, pt, eta, phi)
    }

    pub fn electron(pt: f64, eta: f64, phi: f64) -> Self {
        Self::new(ObjectKind::Electron, pt, eta, phi)
    }

    pub fn jet(pt: f64, eta: f64, phi: f64, btag: Option<f64>) -> Self {
        PhysicsObject {
            btag,
            ..Self::new(ObjectKind::Jet, pt, eta, phi)
        }
    }

    /// Missing transverse energy; η is not used.
    pub fn met(pt: f64, phi: f64) -> Self {
        Self::new(ObjectKind::Met, pt, 0.0, phi)
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn four_vector(&self) -> Result<FourVector, KinematicsError> {
        let eta = if self.kind == ObjectKind::Met { 0.0 } else { self.eta };
        FourVector::from_pt_eta_phi(self.pt, eta, self.phi, self.mass)
    }

    /// Total energy of the object, `√(pT² cosh² η + m²)`.
    pub fn energy(&self) -> f64 {
        self.four_vector().map(|v| v.e).unwrap_or(f64::NAN)
    }
}

/// One collision.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub id: String,
    pub objects: Vec<PhysicsObject>,
    pub met: PhysicsObject,
    pub truth_class: Option<u32>,
}

impl Event {
    pub fn new(id: impl Into<String>, objects: Vec<PhysicsObject>) -> Self {
        Event {
            id: id.into(),
            objects,
            met: PhysicsObject::met(0.0, 0.0),
            truth_class: None,
        }
    }

    pub fn with_met(mut self, pt: f64, phi: f64) -> Self {
        self.met = PhysicsObject::met(pt, phi);
        self
    }

    pub fn with_class(mut self, class: u32) -> Self {
        self.truth_class = Some(class);
        self
    }

    pub fn leptons(&self) -> impl Iterator<Item = &PhysicsObject> {
        self.objects.iter().filter(|o| o.kind.is_lepton())
    }

    pub fn jets(&self) -> impl Iterator<Item = &PhysicsObject> {
        self.objects.iter().filter(|o| o.kind.is_jet())
    }

    pub fn muons(&self) -> impl Iterator<Item = &PhysicsObject> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Muon)
    }

    /// Invariant mass of the two leading muons in the massless
    /// approximation, if the event has at least two muons.
    pub fn dimuon_mass(&self) -> Option<f64> {
        let mut muons: Vec<&PhysicsObject> = self.muons().collect();
        if muons.len() < 2 {
            return None;
        }
        muons.sort_by(|a, b| b.pt.total_cmp(&a.pt));
        let (a, b) = (muons[0], muons[1]);
        Some(invariant_mass_transverse(a.pt, a.eta, a.phi, b.pt, b.eta, b.phi))
    }
}
