//! Drives the subcommands end to end over a temporary data directory.

use std::process::Command;

use serde_json::Value;
use vislabel_core::session::DatasetExport;
use vislabel_core::synth::ReferenceFile;
use vislabel_server::commands::{self, Counts, SimArgs};
use vislabel_server::Store;

fn vislabel(data_dir: &std::path::Path, args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_vislabel"))
        .env("VISLABEL_DATA_DIR", data_dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn synth_init_run_export_alpha() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let fixture = tmp.path().join("fixture");
    let f = fixture.to_str().unwrap();

    let (ok, out, err) = vislabel(&data, &["synth", "--out", f, "--seed", "5"]);
    assert!(ok, "{err}");
    let summary: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["objects"], 191);

    // two coders over the same manifest: one from the config, one renamed
    let config_text = std::fs::read_to_string(fixture.join("config.json")).unwrap();
    let second = config_text.replace("synth-5", "second");
    std::fs::write(fixture.join("config2.json"), second).unwrap();
    for cfg in ["config.json", "config2.json"] {
        let (ok, _, err) = vislabel(
            &data,
            &[
                "init",
                "--manifest",
                &format!("{f}/manifest.jsonl"),
                "--config",
                &format!("{f}/{cfg}"),
                "--seed",
                &format!("{f}/seed-hierarchy.json"),
            ],
        );
        assert!(ok, "{err}");
    }
    let (ok, _, _) = vislabel(
        &data,
        &[
            "init",
            "--manifest",
            &format!("{f}/manifest.jsonl"),
            "--config",
            &format!("{f}/config.json"),
        ],
    );
    assert!(!ok, "duplicate session id accepted");

    let reference = format!("{f}/reference.json");
    let (ok, out, err) = vislabel(&data, &["run-sim", "--session", "synth-5", "--reference", &reference]);
    assert!(ok, "{err}");
    let stats: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(stats["assigned"], 191);
    let (ok, _, err) = vislabel(
        &data,
        &["run-sim", "--session", "second", "--reference", &reference, "--flip-p", "0.02", "--seed", "9"],
    );
    assert!(ok, "{err}");

    let out_dir = tmp.path().join("export");
    let (ok, _, err) = vislabel(&data, &["export", "--session", "synth-5", "--out", out_dir.to_str().unwrap()]);
    assert!(ok, "{err}");
    let export = DatasetExport::read_dir(&out_dir).unwrap();
    let reference: ReferenceFile =
        serde_json::from_str(&std::fs::read_to_string(fixture.join("reference.json")).unwrap()).unwrap();
    assert_eq!(export.labels(), reference.ground_truth);

    // mix an export directory and a session id
    let (ok, out, err) = vislabel(&data, &["alpha", "--sessions", &format!("{},second", out_dir.display())]);
    assert!(ok, "{err}");
    let json_end = out.find("\n}\n").unwrap() + 3;
    let report: Value = serde_json::from_str(&out[..json_end]).unwrap();
    let alpha = report["report"]["alpha"].as_f64().unwrap();
    assert!(alpha > 0.5 && alpha <= 1.0, "{alpha}");
    let table = &out[json_end..];
    assert!(table.contains("synth-5") && table.contains("second") && table.contains("Alpha"), "{table}");

    let (ok, _, err) = vislabel(&data, &["alpha", "--sessions", "synth-5"]);
    assert!(!ok);
    assert!(err.contains("at least two"), "{err}");
    let (ok, _, err) = vislabel(&data, &["export", "--session", "missing", "--out", "x"]);
    assert!(!ok);
    assert!(err.contains("unknown session"), "{err}");
}

#[test]
fn run_sim_resumes_interrupted_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = tmp.path().join("fixture");
    let summary = commands::synth(&fixture, Counts::Expert2, 3, 0.0).unwrap();

    let full = Store::new(tmp.path().join("full"));
    commands::init(&full, &summary.manifest, &summary.config, Some(&summary.seed_hierarchy)).unwrap();
    let args = SimArgs {
        session: "synth-3".into(),
        reference: summary.reference.clone(),
        flip_p: Some(0.05),
        seed: Some(4),
    };
    commands::run_sim(&full, &args).unwrap();

    // cut the log after every 97th line from the manifest on, finish it again
    let log = std::fs::read_to_string(full.log_path("synth-3")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    let manifest_line = lines.iter().position(|l| l.contains("\"ManifestLoaded\"")).unwrap();
    for cut in (manifest_line + 1..lines.len()).step_by(97) {
        let partial = Store::new(tmp.path().join(format!("cut{cut}")));
        let path = partial.log_path("synth-3");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, lines[..cut].join("\n") + "\n").unwrap();
        commands::run_sim(&partial, &args).unwrap();
        assert_eq!(
            partial.snapshot("synth-3").unwrap().state_view(),
            full.snapshot("synth-3").unwrap().state_view(),
            "cut at line {cut}"
        );
    }

    // before the manifest there is nothing to resume
    let early = Store::new(tmp.path().join("early"));
    let path = early.log_path("synth-3");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&path, lines[..3].join("\n") + "\n").unwrap();
    let err = commands::run_sim(&early, &args).unwrap_err().to_string();
    assert!(err.contains("before its manifest"), "{err}");
}
