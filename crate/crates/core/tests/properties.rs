mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use hepimg::dataset::{self, balance_by_replication, Split, SplitPlan};
use hepimg::event::{invariant_mass_exact, invariant_mass_transverse, Event, FourVector, ObjectKind, PhysicsObject};
use hepimg::ingest::{self, EventFileHeader};
use hepimg::metrics::{confusion, signal_background_efficiency, ConfusionMatrix};
use hepimg::render::{radius_for, rasterize_circle, render_event, CanvasSpec, ImageTensor, Rgb};
use hepimg::selection::{select_complex_event, SelectionConfig};
use proptest::prelude::*;

fn kinematics() -> impl Strategy<Value = (f64, f64, f64)> {
    (1e-3f64..1000.0, -5.0f64..5.0, -PI..PI)
}

fn object() -> impl Strategy<Value = PhysicsObject> {
    (
        0usize..4,
        kinematics(),
        prop::option::of(0.0f64..=1.0),
        any::<bool>(),
        0.0f64..5.0,
    )
        .prop_map(|(k, (pt, eta, phi), btag, quality, mass)| {
            let kind = [
                ObjectKind::Electron,
                ObjectKind::Muon,
                ObjectKind::Jet,
                ObjectKind::BJet,
            ][k];
            let mut o = PhysicsObject::new(kind, pt, eta, phi).with_mass(mass);
            o.btag = if kind.is_jet() { btag } else { None };
            o.quality = quality;
            o
        })
}

fn event() -> impl Strategy<Value = Event> {
    (
        "[a-z][a-z0-9_]{0,12}",
        prop::collection::vec(object(), 0..8),
        prop::option::of((0.0f64..300.0, -PI..PI)),
        prop::option::of(0u32..3),
    )
        .prop_map(|(id, objects, met, class)| {
            let mut e = Event::new(id, objects);
            if let Some((pt, phi)) = met {
                e = e.with_met(pt, phi);
            }
            e.truth_class = class;
            e
        })
}

proptest! {
    #[test]
    fn four_vector_round_trips((pt, eta, phi) in kinematics(), mass in 0.0f64..100.0) {
        let v = FourVector::from_pt_eta_phi(pt, eta, phi, mass).unwrap();
        prop_assert!((v.pt() - pt).abs() <= 1e-9 * pt);
        prop_assert!((v.eta() - eta).abs() <= 1e-9 * eta.abs().max(1.0));
        prop_assert!((v.phi() - phi).abs() <= 1e-9 * phi.abs().max(1.0));
    }

    #[test]
    fn transverse_mass_equals_four_vector_mass(a in kinematics(), b in kinematics()) {
        let fa = FourVector::from_pt_eta_phi(a.0, a.1, a.2, 0.0).unwrap();
        let fb = FourVector::from_pt_eta_phi(b.0, b.1, b.2, 0.0).unwrap();
        let exact = invariant_mass_exact(&fa, &fb);
        let fast = invariant_mass_transverse(a.0, a.1, a.2, b.0, b.1, b.2);
        prop_assert!((exact - fast).abs() <= 1e-9 * exact, "{} vs {}", exact, fast);
    }

    #[test]
    fn radius_is_monotone(a in 1.0f64..1e6, b in 1.0f64..1e6, c in 0.5f64..30.0) {
        let spec = CanvasSpec { scale_c: c, ..Default::default() };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(radius_for(hi, &spec).unwrap() >= radius_for(lo, &spec).unwrap());
    }

    #[test]
    fn rasterizer_matches_oracle(
        w in 1u32..48,
        h in 1u32..48,
        cx in -20i64..70,
        cy in -20i64..70,
        r in 1u32..40,
    ) {
        let mut fast = ImageTensor::filled(w, h, Rgb::WHITE);
        rasterize_circle(&mut fast, (cx, cy), r, Rgb::BLACK);
        let mut slow = ImageTensor::filled(w, h, Rgb::WHITE);
        common::oracle_circle(&mut slow, (cx, cy), r, Rgb::BLACK);
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn render_matches_oracle_and_is_pure(e in event(), energy in any::<bool>()) {
        let spec = if energy { CanvasSpec::dimuon() } else { CanvasSpec::default() };
        let a = render_event(&e, &spec);
        prop_assert_eq!(&a, &render_event(&e, &spec));
        prop_assert_eq!(a.image, common::oracle_event_image(&e, &spec));
    }

    /// Objects placed on pixel centres, far enough from the φ edges that no
    /// circle is clipped before or after the shift.
    #[test]
    fn phi_shift_translates_pixels(
        objs in prop::collection::vec((1.5f64..20.0, -2.0f64..2.0, 70u32..150), 1..4),
        shift in -25i64..25,
    ) {
        let spec = CanvasSpec::default();
        let step = 2.0 * PI / 224.0;
        let centre = |row: i64| -PI + (row as f64 + 0.5) * step;
        let build = |k: i64| {
            let objects = objs
                .iter()
                .map(|&(pt, eta, row)| PhysicsObject::muon(pt, eta, centre(i64::from(row) + k)))
                .collect();
            Event::new("t", objects)
        };
        let lit = |img: &ImageTensor| -> BTreeSet<(u32, i64)> {
            img.pixels().filter(|p| p.2 != Rgb::WHITE).map(|(x, y, _)| (x, i64::from(y))).collect()
        };
        let before = lit(&render_event(&build(0), &spec).image);
        let after = lit(&render_event(&build(shift), &spec).image);
        let moved: BTreeSet<(u32, i64)> = before.iter().map(|&(x, y)| (x, y + shift)).collect();
        prop_assert_eq!(moved, after);
    }

    #[test]
    fn tighter_lepton_cut_never_selects_more(
        events in prop::collection::vec(event(), 1..30),
        lo in 0.0f64..100.0,
        extra in 0.0f64..100.0,
    ) {
        let loose = SelectionConfig { lepton_pt_min: lo, ..Default::default() };
        let tight = SelectionConfig { lepton_pt_min: lo + extra, ..Default::default() };
        let count = |cfg: &SelectionConfig| events.iter().filter(|e| select_complex_event(e, cfg).is_some()).count();
        prop_assert!(count(&tight) <= count(&loose));
    }

    #[test]
    fn selection_is_idempotent(e in event(), single in any::<bool>()) {
        let cfg = SelectionConfig { require_single_lepton: single, ..Default::default() };
        if let Some(once) = select_complex_event(&e, &cfg) {
            let twice = select_complex_event(once.event(), &cfg).expect("selected event passes again");
            prop_assert_eq!(once.event(), twice.event());
        }
    }

    #[test]
    fn ingest_round_trips(events in prop::collection::vec(event(), 0..20)) {
        let mut events = events;
        for (i, e) in events.iter_mut().enumerate() {
            e.id = format!("{}_{i}", e.id);
        }
        let header = EventFileHeader::new("prop", vec!["a".into(), "b".into(), "c".into()]);
        let text = ingest::to_ndjson_string(&header, &events);
        let (h, back, report) = ingest::read_all(text.as_bytes()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(report.rejected, 0);
        prop_assert_eq!(back, events);
    }

    #[test]
    fn confusion_permutes_with_labels(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let m = confusion(&p, &t, 4).unwrap();
        let pp: Vec<usize> = p.iter().map(|&i| perm[i]).collect();
        let tp: Vec<usize> = t.iter().map(|&i| perm[i]).collect();
        let mp = confusion(&pp, &tp, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                prop_assert_eq!(m.get(i, j), mp.get(perm[i], perm[j]));
            }
        }
        if let (Ok(a), Ok(b)) = (signal_background_efficiency(&m, 0), signal_background_efficiency(&mp, perm[0])) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn efficiency_ignores_uniform_scaling(
        rows in prop::collection::vec(prop::collection::vec(1u64..500, 3), 3),
        k in 2u64..50,
        signal in 0usize..3,
    ) {
        let m = ConfusionMatrix::from_rows(&rows);
        let scaled: Vec<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        let a = signal_background_efficiency(&m, signal).unwrap();
        let b = signal_background_efficiency(&ConfusionMatrix::from_rows(&scaled), signal).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn split_conserves_and_stays_within_one(
        sizes in prop::collection::vec(3usize..400, 1..5),
        seed in any::<u64>(),
    ) {
        let names: Vec<String> = (0..sizes.len()).map(|c| format!("c{c}")).collect();
        let events: Vec<(String, u32)> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n).map(move |i| (format!("e{c}_{i}"), c as u32)))
            .collect();
        let m = dataset::split(&events, &names, &SplitPlan::default(), seed).unwrap();
        let mut seen = BTreeSet::new();
        for split in Split::ALL {
            for e in m.entries(split) {
                prop_assert!(seen.insert(e.event_id.clone()), "{} twice", e.event_id);
            }
        }
        prop_assert_eq!(seen.len(), events.len());
        for (c, &n) in sizes.iter().enumerate() {
            for (split, ratio) in Split::ALL.into_iter().zip([0.8, 0.1, 0.1]) {
                let got = m.entries(split).iter().filter(|e| e.class_id as usize == c).count() as f64;
                prop_assert!((got - ratio * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn balancing_hits_targets_exactly(
        sizes in prop::collection::vec(1usize..60, 1..5),
        bump in prop::collection::vec(0usize..200, 5),
        seed in any::<u64>(),
    ) {
        let names: Vec<String> = (0..sizes.len()).map(|c| format!("c{c}")).collect();
        let events: Vec<(String, u32)> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| (0..n + 2).map(move |i| (format!("e{c}_{i}"), c as u32)))
            .collect();
        let plan = SplitPlan::Counts { val: 1, test: 1 };
        let m = dataset::split(&events, &names, &plan, seed).unwrap();
        let targets: Vec<usize> = sizes.iter().zip(&bump).map(|(n, b)| n + b).collect();
        let train = balance_by_replication(m.entries(Split::Train), &names, &targets, seed).unwrap();
        for (c, &t) in targets.iter().enumerate() {
            prop_assert_eq!(train.iter().filter(|e| e.class_id as usize == c).count(), t);
        }
        let paths: BTreeSet<&str> = train.iter().map(|e| e.image_path.as_str()).collect();
        prop_assert_eq!(paths.len(), train.len());
    }
}
