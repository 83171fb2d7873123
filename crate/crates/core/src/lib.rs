//! Collision events as images.
//!
//! Every reconstructed object of an event (leptons, jets, missing transverse
//! energy) becomes a one-pixel circumference on a 224×224 RGB canvas: the
//! centre encodes the direction (η horizontally, φ vertically), the radius
//! grows with the logarithm of the energy or transverse momentum, and the
//! colour encodes the object type.
//!
//! Around the renderer sits the rest of the pipeline:
//!
//! * [`event`] kinematics and the two-body invariant mass,
//! * [`ingest`] a streaming reader for line-delimited JSON event files,
//! * [`selection`] preselection cuts and dimuon mass-window labels,
//! * [`render`] the rasterizer and PNG encoding,
//! * [`dataset`] stratified splits, balancing by replication and dataset writing,
//! * [`features`] fixed-length feature vectors for the baseline,
//! * [`nn`] a small feedforward baseline trained with Adam,
//! * [`metrics`] confusion matrices and the signal-vs-background efficiency,
//! * [`synth`] a seeded generator of stylized events for testing,
//! * [`pipeline`] the configuration and stage wiring used by the CLI.

// NaN must fail range checks, hence `!(x >= 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod event;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod render;
pub mod rng;
pub mod selection;
pub mod synth;

pub use event::{Event, FourVector, ObjectKind, PhysicsObject};
pub use render::{CanvasSpec, ImageTensor};
