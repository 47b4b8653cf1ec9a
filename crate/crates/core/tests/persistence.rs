use chrono::NaiveDateTime;
use proptest::prelude::*;
use relmap_core::dataset::{load_network, save_network, ObservationSeries, Sensor, SensorNetwork};
use relmap_core::geometry::{BBox, GridSpec, Point};
use relmap_core::model::{GpeFrame, Model, ModelConfig, Normalizer};
use relmap_core::raster::RasterField;

fn start() -> NaiveDateTime {
    NaiveDateTime::parse_from_str("2020-02-29T12:30:00", "%Y-%m-%dT%H:%M:%S").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn observation_series_round_trip(
        n in 1usize..6,
        t in 1usize..20,
        seed in any::<u64>(),
    ) {
        let mut values = Vec::with_capacity(n * t);
        let mut mask = Vec::with_capacity(n * t);
        let mut s = seed;
        for _ in 0..n * t {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let observed = s >> 63 == 0;
            mask.push(observed);
            values.push(if observed { ((s >> 20) as u32 as f32) / 1e6 - 2000.0 } else { 0.0 });
        }
        let series = ObservationSeries::new(n, t, values, mask, 900.0, start()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        series.save(dir.path()).unwrap();
        let back = ObservationSeries::load(dir.path()).unwrap();
        prop_assert_eq!(back, series);
    }

    #[test]
    fn raster_round_trip(
        w in 1usize..12,
        h in 1usize..12,
        frames in 1usize..4,
        fill in -100.0..100.0f32,
    ) {
        let grid = GridSpec::new(BBox { min_x: 5.0, min_y: -3.0, max_x: 6.5, max_y: -1.0 }, w, h);
        let mut r = RasterField::filled(grid, frames, fill);
        let nodata = r.nodata;
        r.frame_mut(0)[0] = nodata;
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path()).unwrap();
        prop_assert_eq!(RasterField::load(dir.path()).unwrap(), r);
    }

    #[test]
    fn network_round_trip(
        raw in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..12),
    ) {
        let sensors: Vec<Sensor> = raw
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Sensor::original(format!("id-{i}"), x + i as f64 * 1e-3, y))
            .collect();
        let bounds = BBox { min_x: -11.0, min_y: -11.0, max_x: 11.0, max_y: 11.0 };
        let net = SensorNetwork::new(sensors, bounds.to_polygon()).unwrap();
        let net = net.with_virtual(&[Point::new(0.5, 0.25)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_network(dir.path(), &net).unwrap();
        let back = load_network(&dir.path().join("sensors.csv"), Some(&dir.path().join("boundary.json"))).unwrap();
        prop_assert_eq!(back, net);
    }
}

#[test]
fn checkpoints_restore_the_same_model() {
    let pts: Vec<Point> = (0..12).map(|i| Point::new((i % 4) as f64, (i / 4) as f64)).collect();
    let frame = GpeFrame::fit(&pts).unwrap();
    for cfg in [
        ModelConfig::default(),
        ModelConfig {
            t_sr: 2,
            pna: false,
            gpe: false,
            ..ModelConfig::default()
        },
    ] {
        let mut model = Model::new(cfg, frame, 12.5, 30.0, Normalizer::identity(), 4).unwrap();
        model.quantize();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = Model::load(dir.path()).unwrap();
        assert_eq!(back, model);
    }
}
