use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relmap_core::dataset::ObservationSeries;
use relmap_core::raster::RasterField;

fn relmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relmap"))
        .args(args)
        .output()
        .expect("spawn relmap")
}

fn ok(args: &[&str]) -> String {
    let out = relmap(args);
    assert!(
        out.status.success(),
        "relmap {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 stdout")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "synth": { "n_sensors": 24, "n_steps": 48, "raster_width": 16 },
        "densify": { "grid_resolution": 48 },
        "train": { "epochs": 6, "window": 8, "validate_every": 3 },
        "raster_width": 16,
        "render": { "glyph_grid": 4 }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

struct Work {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Work {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = tiny_config(&root).to_str().unwrap().to_string();
        Self {
            _tmp: tmp,
            root,
            config,
        }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_string()
    }

    fn run(&self, args: &[&str]) -> String {
        let mut all = vec!["--config", self.config.as_str()];
        all.extend_from_slice(args);
        ok(&all)
    }
}

#[test]
fn pipeline_writes_every_artifact() {
    let w = Work::new();
    w.run(&["synth", "--out", &w.p("data")]);
    assert!(Path::new(&w.p("data/truth")).is_dir());

    w.run(&[
        "densify",
        "--data",
        &w.p("data"),
        "--out",
        &w.p("dense"),
        "--delta",
        "0.5",
    ]);
    let dense = ObservationSeries::load(Path::new(&w.p("dense/observations"))).unwrap();
    assert_eq!(dense.n_sensors(), 36);
    for i in 24..36 {
        assert!(dense.row_mask(i).iter().all(|&m| !m));
    }
    assert_eq!(
        RasterField::load(Path::new(&w.p("dense/inverted_density")))
            .unwrap()
            .frames,
        1
    );

    let log = w.run(&[
        "train",
        "--data",
        &w.p("data"),
        "--checkpoint",
        &w.p("ck"),
        "--holdout",
        "0.25",
    ]);
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.iter().filter(|v| v.get("epoch").is_some()).count(), 6);
    assert!(lines.last().unwrap()["holdout_rmse"].as_f64().unwrap().is_finite());

    w.run(&[
        "impute",
        "--data",
        &w.p("dense"),
        "--checkpoint",
        &w.p("ck"),
        "--out",
        &w.p("filled"),
    ]);
    let filled = ObservationSeries::load(Path::new(&w.p("filled/observations"))).unwrap();
    assert_eq!(filled.n_sensors(), 36);
    assert!(filled.mask().iter().all(|&m| m));
    assert!(filled.values().iter().all(|v| v.is_finite()));

    w.run(&["interpolate", "--data", &w.p("filled"), "--out", &w.p("ras")]);
    let raster = RasterField::load(Path::new(&w.p("ras"))).unwrap();
    assert_eq!(raster.frames, 48);

    w.run(&[
        "uncertainty",
        "--data",
        &w.p("data"),
        "--checkpoint",
        &w.p("ck"),
        "--out",
        &w.p("unc"),
        "--timestep",
        "3",
    ]);
    let csv = std::fs::read_to_string(w.p("unc/glyphs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);

    w.run(&[
        "render",
        "--data",
        &w.p("data"),
        "--raster",
        &w.p("ras"),
        "--reference",
        &w.p("unc/reference"),
        "--timestep",
        "3",
        "-o",
        &w.p("map.svg"),
    ]);
    let svg = std::fs::read_to_string(w.p("map.svg")).unwrap();
    for layer in ["heatmap", "hatch", "glyphs", "legend", "boundary"] {
        assert!(svg.contains(&format!("<g id=\"{layer}\">")), "missing {layer}");
    }
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn ablated_super_resolution_checkpoint_upsamples() {
    let w = Work::new();
    w.run(&["synth", "--out", &w.p("data")]);
    w.run(&[
        "train",
        "--data",
        &w.p("data"),
        "--checkpoint",
        &w.p("ck"),
        "--t-sr",
        "2",
        "--no-pna",
        "--no-gpe",
    ]);
    let ck: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w.p("ck/manifest.json")).unwrap()).unwrap();
    assert_eq!(ck["config"]["pna"], false);
    assert_eq!(ck["config"]["gpe"], false);
    w.run(&[
        "tsr",
        "--data",
        &w.p("data"),
        "--checkpoint",
        &w.p("ck"),
        "--out",
        &w.p("fine"),
    ]);
    let fine = ObservationSeries::load(Path::new(&w.p("fine/observations"))).unwrap();
    assert_eq!(fine.n_steps(), 96);

    // A plain imputation checkpoint cannot super-resolve.
    w.run(&["train", "--data", &w.p("data"), "--checkpoint", &w.p("plain")]);
    let out = relmap(&[
        "--config",
        &w.config,
        "tsr",
        "--data",
        &w.p("data"),
        "--checkpoint",
        &w.p("plain"),
        "--out",
        &w.p("x"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_reads_wide_csv() {
    let w = Work::new();
    std::fs::write(
        w.p("sensors.csv"),
        "id,lng,lat\na,10.0,50.0\nb,10.5,50.2\nc,10.2,50.6\nd,10.8,50.7\n",
    )
    .unwrap();
    std::fs::write(
        w.p("obs.csv"),
        "id,2024-01-01T00:00:00,2024-01-01T01:00:00,2024-01-01T02:00:00\na,1,2,3\nb,4,,6\nd,7,8,9\n",
    )
    .unwrap();
    w.run(&[
        "ingest",
        "--sensors",
        &w.p("sensors.csv"),
        "--observations",
        &w.p("obs.csv"),
        "--out",
        &w.p("ds"),
    ]);
    let obs = ObservationSeries::load(Path::new(&w.p("ds/observations"))).unwrap();
    assert_eq!((obs.n_sensors(), obs.n_steps()), (4, 3));
    assert_eq!(obs.time_step(), 3600.0);
    assert!(!obs.is_observed(1, 1));
    assert!(obs.row_mask(2).iter().all(|&m| !m));
    assert_eq!(obs.value(3, 2), 9.0);
}

#[test]
fn exit_codes_separate_configuration_from_runtime_failures() {
    let w = Work::new();
    std::fs::write(w.p("bad.json"), r#"{"trian": {"epochs": 3}}"#).unwrap();
    let out = relmap(&["--config", &w.p("bad.json"), "synth", "--out", &w.p("data")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    w.run(&["synth", "--out", &w.p("data")]);
    let out = relmap(&[
        "--config",
        &w.config,
        "densify",
        "--data",
        &w.p("data"),
        "--out",
        &w.p("d"),
        "--delta",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = relmap(&[
        "--config",
        &w.config,
        "interpolate",
        "--data",
        &w.p("missing"),
        "--out",
        &w.p("r"),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = relmap(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
