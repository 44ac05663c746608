use std::fs;
use std::path::Path;

use hybridloc::config::{parse_config, ExperimentConfig, Preset};
use hybridloc::experiment::{
    evaluate, manifest_config, replay, run_experiment, write_outputs, WriteOptions,
};
use hybridloc::fusion::{assemble_epochs, initialize_track, FilterKind};
use hybridloc::log::parse_log;
use hybridloc::simulator::{sample_path, synthesize_stream, NoiseConfig};

fn repo_file(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn shipped_configs_parse() {
    let high = parse_config(&repo_file("configs/paper-highrate.toml")).unwrap();
    assert_eq!(high.preset, Preset::PaperHighRate);
    assert_eq!(high.schedule.effective_uwb_rate(), 3.0);

    let low = parse_config(&repo_file("configs/paper-lowrate.toml")).unwrap();
    assert_eq!(low.schedule.effective_uwb_rate(), 0.5);
    assert_eq!(low.filters.len(), 4);

    let room = parse_config(&repo_file("configs/custom-room.toml")).unwrap();
    assert_eq!(room.layout.anchors().len(), 6);
    assert_eq!(room.layout.uwb_anchors().count(), 4);
    assert_eq!(room.path_loss.p0_for(&"C4".into()), -61.0);
    assert_eq!(room.tuning.ukf.alpha, 1.0);
    assert_eq!(room.tuning.ukf.beta, 2.0);
    let out = run_experiment(&room, 2).unwrap();
    assert_eq!(out.table.rows.len(), 2);
    assert_eq!(out.table.rows[0].label, "ekf_1Hz");
}

#[test]
fn initialization_lands_within_four_metres() {
    let cfg = ExperimentConfig::default();
    let truth = sample_path(&cfg.path, cfg.schedule.ble_rate).unwrap();
    let mut good = 0;
    for seed in 0..100 {
        let noise = NoiseConfig { seed, ..cfg.noise };
        let stream =
            synthesize_stream(&truth, &cfg.layout, &cfg.path_loss, &cfg.schedule, &noise).unwrap();
        let frames = assemble_epochs(&stream, &cfg.schedule).unwrap();
        let batch = &frames[..cfg.init.frames];
        let track = initialize_track(
            batch,
            &cfg.layout,
            &cfg.path_loss,
            &cfg.init,
            FilterKind::Ekf,
        )
        .unwrap();
        let mid = truth[cfg.init.frames / 2].position;
        if (track.state.position() - mid).norm() < 4.0 {
            good += 1;
        }
    }
    assert!(good >= 95, "{good}/100 initializations within 4 m");
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let mut cfg = ExperimentConfig::preset(Preset::PaperLowRate);
    cfg.runs = 8;
    let opts = WriteOptions {
        trajectories: true,
        logs: true,
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&run_experiment(&cfg, 1).unwrap(), a.path(), opts).unwrap();
    write_outputs(&run_experiment(&cfg, 4).unwrap(), b.path(), opts).unwrap();
    assert_eq!(files(a.path()), files(b.path()));

    cfg.noise.seed += 1;
    let c = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&cfg, 4).unwrap(), c.path(), opts).unwrap();
    let read = |d: &Path| fs::read(d.join("comparison.csv")).unwrap();
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn subsets_reproduce_independently() {
    let mut cfg = ExperimentConfig {
        runs: 6,
        ..Default::default()
    };
    let all = run_experiment(&cfg, 0).unwrap();
    cfg.runs = 3;
    let some = run_experiment(&cfg, 0).unwrap();
    assert_eq!(all.runs[..3], some.runs[..]);
}

#[test]
fn replay_and_evaluate_agree_with_simulation() {
    let cfg = ExperimentConfig {
        runs: 1,
        ..Default::default()
    };
    let sim = run_experiment(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = WriteOptions {
        trajectories: true,
        logs: true,
    };
    write_outputs(&sim, dir.path(), opts).unwrap();

    let records =
        parse_log(&fs::read_to_string(dir.path().join("log_run000.csv")).unwrap()).unwrap();
    let rep = replay(&cfg, &records).unwrap();
    for (s, r) in sim.runs[0].filters.iter().zip(&rep.runs[0].filters) {
        assert_eq!(s.counters, r.counters);
        for (a, b) in s.rows.iter().zip(&r.rows) {
            assert_eq!(
                (a.timestamp, a.state, a.error),
                (b.timestamp, b.state, b.error)
            );
        }
    }
    for (s, r) in sim.ecdfs.iter().zip(&rep.ecdfs) {
        assert_eq!(s, r);
    }

    let ev = evaluate(&cfg, dir.path()).unwrap();
    assert_eq!(ev.table, sim.table);
    let out = tempfile::tempdir().unwrap();
    write_outputs(&ev, out.path(), WriteOptions::default()).unwrap();
    for name in ["comparison.csv", "ecdf_ekf_3Hz.csv", "ecdf_ukf_3Hz.csv"] {
        assert_eq!(
            fs::read(out.path().join(name)).unwrap(),
            fs::read(dir.path().join(name)).unwrap(),
            "{name}"
        );
    }

    // Post-hoc decimation of the 3 Hz log.
    let mut low = cfg.clone();
    low.schedule.decimation = 6;
    let dec = replay(&low, &records).unwrap();
    assert_eq!(dec.ecdfs[0].1, "0.5Hz");
    let updates = dec.counters()[&FilterKind::Ekf].updates;
    assert_eq!(updates, sim.counters()[&FilterKind::Ekf].updates);
}

#[test]
fn manifest_lists_every_default() {
    let mut cfg = parse_config("runs = 2\n").unwrap();
    cfg.output_dir = "unused".into();
    let dir = tempfile::tempdir().unwrap();
    write_outputs(
        &run_experiment(&cfg, 1).unwrap(),
        dir.path(),
        WriteOptions::default(),
    )
    .unwrap();
    let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest_config(&text).unwrap(), cfg);
    for key in [
        "alpha",
        "beta",
        "kappa",
        "sigma_ax2",
        "ble_rate",
        "uwb_rate",
        "decimation",
        "rss_sigma",
        "toa_sigma",
        "gamma",
        "p0",
        "sigma_p",
        "sigma_v",
        "covariance_form",
        "waypoints",
        "speed",
        "reference",
        "thresholds",
        "master_seed",
        "seed_scheme",
        "run_seeds",
        "psd_repairs",
        "skipped",
    ] {
        assert!(text.contains(key), "{key} missing");
    }
}
