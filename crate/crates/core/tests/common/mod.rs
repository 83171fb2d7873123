//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use hepimg::event::{Event, ObjectKind};
use hepimg::ingest;
use hepimg::render::{encode_png, CanvasSpec, ImageTensor, Rgb, SizeVariable};
use hepimg::selection::{select_complex_event, SelectionConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Sets every pixel whose centre distance rounds to `radius` by testing the
/// whole canvas.
pub fn oracle_circle(img: &mut ImageTensor, center: (i64, i64), radius: u32, color: Rgb) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let dx = (i64::from(x) - center.0) as f64;
            let dy = (i64::from(y) - center.1) as f64;
            if (dx * dx + dy * dy).sqrt().round() == f64::from(radius) {
                img.set(x, y, color);
            }
        }
    }
}

fn oracle_axis(v: f64, lo: f64, hi: f64, n: u32) -> i64 {
    let p = ((v - lo) * f64::from(n) / (hi - lo)).floor() as i64;
    p.clamp(0, i64::from(n) - 1)
}

fn oracle_color(kind: ObjectKind) -> Rgb {
    match kind {
        ObjectKind::Electron => Rgb([0, 0, 255]),
        ObjectKind::Muon => Rgb([0, 200, 0]),
        ObjectKind::Jet => Rgb([255, 120, 120]),
        ObjectKind::BJet => Rgb([150, 0, 0]),
        ObjectKind::Met => Rgb([0, 0, 0]),
    }
}

/// Full event image from the drawing rules alone: MET at η = 0, then jets,
/// b-jets, electrons and muons, each as a per-pixel scanned outline.
/// Assumes the default colours and a white background.
pub fn oracle_event_image(event: &Event, spec: &CanvasSpec) -> ImageTensor {
    let mut img = ImageTensor::filled(spec.width, spec.height, Rgb::WHITE);
    let mut items: Vec<(u8, f64, f64, f64, Rgb)> = Vec::new();
    if event.met.pt > 0.0 {
        items.push((0, 0.0, event.met.phi, event.met.pt, oracle_color(ObjectKind::Met)));
    }
    for o in &event.objects {
        let rank = match o.kind {
            ObjectKind::Met => 0,
            ObjectKind::Jet => 1,
            ObjectKind::BJet => 2,
            ObjectKind::Electron => 3,
            ObjectKind::Muon => 4,
        };
        let size = match spec.size_variable {
            SizeVariable::TransverseMomentum => o.pt,
            SizeVariable::Energy => {
                let p = o.pt * o.eta.cosh();
                (p * p + o.mass * o.mass).sqrt()
            }
        };
        items.push((rank, o.eta, o.phi, size, oracle_color(o.kind)));
    }
    items.sort_by_key(|i| i.0);
    for (_, eta, phi, size, color) in items {
        if size <= 0.0 {
            continue;
        }
        let r = (spec.scale_c * size.ln()).round().max(f64::from(spec.min_radius)) as u32;
        let cx = oracle_axis(eta, spec.eta_range[0], spec.eta_range[1], spec.width);
        let cy = oracle_axis(phi, spec.phi_range[0], spec.phi_range[1], spec.height);
        oracle_circle(&mut img, (cx, cy), r, color);
    }
    img
}

pub struct Golden {
    pub id: String,
    pub event: Event,
    pub canvas: CanvasSpec,
}

impl Golden {
    pub fn png_path(&self) -> PathBuf {
        fixture_dir().join(format!("{}.png", self.id))
    }
}

fn read_events(name: &str) -> Vec<Event> {
    let text = fs::read(fixture_dir().join(name)).expect("fixture event file");
    let (_, events, report) = ingest::read_all(text.as_slice()).expect("fixture parses");
    assert_eq!(report.rejected, 0, "fixture {name} has rejected records");
    events
}

/// The four dimuon layouts (energy-sized, rendered as read) followed by the
/// complex event (preselected, pT-sized).
pub fn golden_events() -> Vec<Golden> {
    let mut out: Vec<Golden> = read_events("dimuon.ndjson")
        .into_iter()
        .map(|e| Golden {
            id: e.id.clone(),
            event: e,
            canvas: CanvasSpec::dimuon(),
        })
        .collect();
    for e in read_events("complex.ndjson") {
        let selected = select_complex_event(&e, &SelectionConfig::default()).expect("fixture passes preselection");
        out.push(Golden {
            id: e.id.clone(),
            event: selected.into_event(),
            canvas: CanvasSpec::default(),
        });
    }
    out
}

pub fn oracle_png(g: &Golden) -> Vec<u8> {
    encode_png(&oracle_event_image(&g.event, &g.canvas)).expect("png encoding")
}
