use proptest::prelude::*;

use softbody_core::persistence::{
    load_xml, read_csv, write_csv, write_xml, FrameRecord, ObjectRecord, ParticleRecord, Recording, RecordingMeta,
};
use softbody_core::world::Bounds;
use softbody_core::Vec3;

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -100.0..100.0f64,
        1 => any::<f64>().prop_filter("finite", |x| x.is_finite()),
        1 => Just(0.1 + 0.2),
        1 => Just(f64::MIN_POSITIVE / 8.0),
        1 => Just(-0.0),
    ]
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (real(), real(), real()).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn particle(id: usize) -> impl Strategy<Value = ParticleRecord> {
    (vec3(), vec3(), vec3(), 1e-6..1e3f64).prop_map(move |(position, velocity, force, mass)| ParticleRecord {
        id,
        position,
        velocity,
        force,
        mass,
    })
}

fn object(id: usize) -> impl Strategy<Value = ObjectRecord> {
    (0..6usize)
        .prop_flat_map(|n| (0..n).map(particle).collect::<Vec<_>>())
        .prop_map(move |particles| ObjectRecord { id, particles })
}

fn frame() -> impl Strategy<Value = (f64, Vec<ObjectRecord>, Vec<String>)> {
    (
        1e-4..1.0f64,
        (0..3usize).prop_flat_map(|n| (0..n).map(object).collect::<Vec<_>>()),
        prop::collection::vec("[a-zA-Z0-9_:<>&\"' ]{0,12}", 0..2),
    )
}

fn recording() -> impl Strategy<Value = Recording> {
    (
        1e-4..0.1f64,
        prop::sample::select(vec!["euler", "midpoint", "rk4"]),
        "[0-9a-f]{0,64}",
        prop::option::of(Just(Bounds::default())),
        prop::collection::vec(frame(), 0..8),
    )
        .prop_map(|(dt, integrator, scene_digest, bounds, raw)| {
            let mut t = 0.0;
            let frames = raw
                .into_iter()
                .enumerate()
                .map(|(index, (gap, objects, markers))| {
                    t += gap;
                    FrameRecord { index, t, objects, markers }
                })
                .collect();
            Recording {
                meta: RecordingMeta {
                    created: "2026-10-16T12:00:00Z".into(),
                    dt,
                    integrator: integrator.into(),
                    scene_digest,
                    bounds,
                },
                frames,
            }
        })
}

type Row = (usize, u64, usize, usize, [u64; 10]);

fn rows(frames: &[FrameRecord]) -> Vec<Row> {
    frames
        .iter()
        .flat_map(|f| {
            f.objects.iter().flat_map(move |o| {
                o.particles.iter().map(move |p| {
                    let v = [
                        p.position.x,
                        p.position.y,
                        p.position.z,
                        p.velocity.x,
                        p.velocity.y,
                        p.velocity.z,
                        p.force.x,
                        p.force.y,
                        p.force.z,
                        p.mass,
                    ];
                    (f.index, f.t.to_bits(), o.id, p.id, v.map(f64::to_bits))
                })
            })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn xml_round_trip_is_identity(rec in recording()) {
        let mut xml = Vec::new();
        write_xml(&rec, &mut xml).unwrap();
        let back = load_xml(xml.as_slice()).unwrap();
        prop_assert_eq!(&back, &rec);
        // Bit-level equality, which also separates 0.0 from -0.0.
        prop_assert_eq!(rows(&back.frames), rows(&rec.frames));
    }

    #[test]
    fn xml_and_csv_carry_the_same_numbers(rec in recording()) {
        let mut xml = Vec::new();
        write_xml(&rec, &mut xml).unwrap();
        let mut csv = Vec::new();
        write_csv(&rec, &mut csv).unwrap();
        let from_xml = load_xml(xml.as_slice()).unwrap();
        let from_csv = read_csv(csv.as_slice()).unwrap();
        prop_assert_eq!(rows(&from_xml.frames), rows(&from_csv));

        let total: usize = rec.frames.iter().map(FrameRecord::particle_count).sum();
        prop_assert_eq!(String::from_utf8(csv).unwrap().lines().count(), total + 1);
    }
}
