//! End-to-end tests of the `sculpt` binary and the config round-trip
//! contract.

use std::path::{Path, PathBuf};
use std::process::Output;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use sculpt_cli::config::{parse_config_str, Command, Overrides, RunConfig};
use sculpt_core::pipeline::RunManifest;

fn sculpt(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_sculpt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_record(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr not a JSON record: {e}\n{text}"))
}

/// A config with toy sizes so binary runs finish in well under a second
/// of optimization work.
fn tiny_config(dir: &Path, extra: Map<String, Value>) -> PathBuf {
    let mut doc = Map::new();
    doc.insert("image_size".into(), json!(16));
    doc.insert("samples_per_ray".into(), json!(8));
    doc.insert("stats_samples".into(), json!(16));
    doc.extend(extra);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

fn artifact_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn invert_run_exits_zero_with_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path(), Map::new());
    let out_dir = dir.path().join("out");
    let out = sculpt(&[
        "invert",
        "--config",
        config.to_str().unwrap(),
        "--latent-seed",
        "7",
        "--iters",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        artifact_names(&out_dir),
        vec!["grid.png", "latent.json", "losses.csv", "manifest.json"]
    );
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.run_kind, "invert");
    assert_eq!(manifest.config.run_seed, 0);
    assert_eq!(manifest.iterations.len(), 5);
    let psnr = manifest.final_metrics.psnr_db.unwrap();
    assert!(psnr.is_finite() && psnr > 5.0, "psnr {psnr}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("manifest.json"), "stdout: {stdout}");
}

#[test]
fn seed_flag_overrides_file_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = Map::new();
    extra.insert("seed".into(), json!(1));
    extra.insert("input".into(), json!({"latent_seed": 2}));
    extra.insert("iters".into(), json!(2));
    let config = tiny_config(dir.path(), extra);
    let out_dir = dir.path().join("out");
    let out = sculpt(&[
        "invert",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.run_seed, 9);
}

#[test]
fn unregistered_prompt_exits_two_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = Map::new();
    extra.insert("input".into(), json!({"latent_seed": 1}));
    extra.insert("prompt".into(), json!("missing"));
    let config = tiny_config(dir.path(), extra);
    let out = sculpt(&["edit", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "config");
    assert!(
        record["message"].as_str().unwrap().contains("unknown prompt"),
        "{record}"
    );
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = Map::new();
    extra.insert("lambda_rr".into(), json!(1.0));
    let config = tiny_config(dir.path(), extra);
    let out = sculpt(&["invert", "--config", config.to_str().unwrap(), "--latent-seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let record = stderr_record(&out);
    assert_eq!(record["error"], "config");
    assert!(record["message"].as_str().unwrap().contains("lambda_rr"));
}

#[test]
fn missing_config_file_exits_two() {
    let out = sculpt(&["invert", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_record(&out)["error"], "config");
}

#[test]
fn malformed_latent_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // wrong shape for the run's generator: parse only checks existence,
    // the mismatch surfaces as a pipeline failure
    let latent = dir.path().join("w.json");
    std::fs::write(
        &latent,
        r#"{"shape": [2, 8], "space": "W_PLUS", "values": [0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0]}"#,
    )
    .unwrap();
    let mut extra = Map::new();
    extra.insert("input".into(), json!({"latent": latent}));
    extra.insert("iters".into(), json!(1));
    let config = tiny_config(dir.path(), extra);
    let out = sculpt(&["invert", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_record(&out)["error"], "pipeline");
}

#[test]
fn generate_runs_from_an_exemplar_prompt() {
    let dir = tempfile::tempdir().unwrap();
    // the exemplar must match the run's image size
    let exemplar = dir.path().join("warm.png");
    image::RgbImage::from_fn(16, 16, |x, y| {
        image::Rgb([(x * 16) as u8, (y * 16) as u8, 128])
    })
    .save(&exemplar)
    .unwrap();
    let mut extra = Map::new();
    extra.insert("prompts".into(), json!({"warm": {"image": exemplar}}));
    extra.insert("iters".into(), json!(3));
    let config = tiny_config(dir.path(), extra);
    let out_dir = dir.path().join("out");
    let out = sculpt(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--prompt",
        "warm",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.run_kind, "generate");
    assert_eq!(manifest.config.prompt.as_deref(), Some("warm"));
    assert!(manifest.config.prompt_targets.contains_key("warm"));
}

#[test]
fn sweep_cells_land_in_distinct_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = Map::new();
    extra.insert("input".into(), json!({"latent_seed": 3}));
    extra.insert("lambda_d".into(), json!(0.0));
    extra.insert("iters".into(), json!(2));
    extra.insert(
        "sweep".into(),
        json!({"axis": "lambda_r", "values": [0.5, 1.0]}),
    );
    let config = tiny_config(dir.path(), extra);
    let out_dir = dir.path().join("sweep");
    let out = sculpt(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cells = artifact_names(&out_dir);
    assert_eq!(cells.len(), 2);
    for cell in &cells {
        assert_eq!(
            artifact_names(&out_dir.join(cell)),
            vec!["grid.png", "latent.json", "losses.csv", "manifest.json"]
        );
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, pool: &[T]) -> T {
    pool[rng.random_range(0..pool.len())]
}

/// Build a random valid config document for `command`, using fixture
/// files under `dir`.
fn fuzz_document(rng: &mut ChaCha8Rng, command: Command, dir: &Path) -> Map<String, Value> {
    let exemplar = dir.join("exemplar.png");
    let input_png = dir.join("input.png");
    let mut doc = Map::new();
    let maybe = |rng: &mut ChaCha8Rng, key: &str, value: Value, doc: &mut Map<String, Value>| {
        if rng.random_bool(0.6) {
            doc.insert(key.to_string(), value);
        }
    };

    { let v = json!(rng.random_range(0u64..100)); maybe(rng, "seed", v, &mut doc); }
    { let v = json!(rng.random_range(0u64..10)); maybe(rng, "weights_seed", v, &mut doc); }
    { let v = json!(rng.random_range(0usize..7)); maybe(rng, "iters", v, &mut doc); }
    { let v = json!(pick(rng, &[1e-3, 0.01, 0.05])); maybe(rng, "step", v, &mut doc); }
    { let v = json!(pick(rng, &[16, 32])); maybe(rng, "image_size", v, &mut doc); }
    { let v = json!(pick(rng, &[4, 8])); maybe(rng, "samples_per_ray", v, &mut doc); }
    { let v = json!(rng.random_range(1usize..5)); maybe(rng, "blob_count", v, &mut doc); }
    { let v = json!(rng.random_range(2usize..5)); maybe(rng, "layers", v, &mut doc); }
    { let v = json!(pick(rng, &[8, 16])); maybe(rng, "dim", v, &mut doc); }
    { let v = json!([1.4, 1.7]); maybe(rng, "theta_range", v, &mut doc); }
    { let v = json!([1.2, 1.9]); maybe(rng, "phi_range", v, &mut doc); }
    { let v = json!(rng.random_bool(0.5)); maybe(rng, "separate_side_views", v, &mut doc); }
    { let v = json!(pick(rng, &[0.0, 1e-6, 1e-4])); maybe(rng, "ridge", v, &mut doc); }
    { let v = json!(rng.random_range(2usize..20)); maybe(rng, "stats_samples", v, &mut doc); }
    { let v = json!(0.05); maybe(rng, "t_min", v, &mut doc); }
    { let v = json!(0.9); maybe(rng, "t_max", v, &mut doc); }
    { let v = json!(rng.random_range(1usize..6)); maybe(rng, "grid_poses", v, &mut doc); }
    { let v = json!(pick(rng, &[0.0, 0.1])); maybe(rng, "lambda_regu", v, &mut doc); }
    if rng.random_bool(0.5) {
        let init = match rng.random_range(0..3) {
            0 => json!({"mode": "mean"}),
            1 => json!({"mode": "perturbed-mean", "scale": 0.3}),
            _ => json!({"mode": "invert-first", "warmup_iters": 2, "step": 0.01}),
        };
        // invert-first needs an input, which generate forbids
        if command != Command::Generate || init["mode"] != "invert-first" {
            doc.insert("init".into(), init);
        }
    }

    let input = if rng.random_bool(0.7) {
        json!({"latent_seed": rng.random_range(0u64..50)})
    } else {
        json!({"image": input_png, "theta": 1.5, "phi": 1.6})
    };
    let prompts = json!({
        "fixture": {"image": exemplar, "spread": pick(rng, &[0.5, 1.0])}
    });

    match command {
        Command::Invert => {
            doc.insert("input".into(), input);
            { let v = json!(pick(rng, &[0.5, 1.0])); maybe(rng, "lambda_r", v, &mut doc); }
            { let v = json!(0.2); maybe(rng, "lambda_id", v, &mut doc); }
        }
        Command::Edit => {
            doc.insert("input".into(), input);
            doc.insert("prompt".into(), json!("fixture"));
            doc.insert("prompts".into(), prompts);
            { let v = json!(pick(rng, &[2e-5, 1e-3])); maybe(rng, "lambda_d", v, &mut doc); }
            if rng.random_bool(0.3) {
                doc.insert("target_light".into(), json!({"ambient": 0.6}));
            }
        }
        Command::Relight => {
            doc.insert("input".into(), input);
            let light = match rng.random_range(0..2) {
                0 => json!({"ambient": 0.5}),
                _ => json!({"coeffs": [0.8, 0.1, 0.0, 0.05, 0.0, 0.0, 0.02, 0.0, 0.0]}),
            };
            doc.insert("target_light".into(), light);
        }
        Command::Generate => {
            doc.insert("prompt".into(), json!("fixture"));
            doc.insert("prompts".into(), prompts);
            { let v = json!(1.0); maybe(rng, "lambda_d", v, &mut doc); }
        }
        Command::Sweep => {
            doc.insert("input".into(), input);
            doc.insert("prompt".into(), json!("fixture"));
            doc.insert("prompts".into(), prompts);
            let axis = pick(rng, &["lambda_id", "lambda_r", "lambda_d"]);
            doc.insert(
                "sweep".into(),
                json!({"axis": axis, "values": &[0.0, 0.2, 1.0][..rng.random_range(1..4)]}),
            );
        }
    }
    doc
}

#[test]
fn hundred_fuzzed_configs_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    // fixtures shared by every fuzzed config; sizes are checked at run
    // time, not parse time, so one file serves all
    image::RgbImage::new(16, 16).save(dir.path().join("exemplar.png")).unwrap();
    image::RgbImage::new(16, 16).save(dir.path().join("input.png")).unwrap();

    let commands = [
        Command::Invert,
        Command::Edit,
        Command::Relight,
        Command::Generate,
        Command::Sweep,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut parsed_ok = 0;
    for i in 0..100 {
        let command = commands[i % commands.len()];
        let doc = fuzz_document(&mut rng, command, dir.path());
        let text = serde_json::to_string(&doc).unwrap();
        let config: RunConfig =
            match parse_config_str(command, &text, dir.path(), &Overrides::default()) {
                Ok(c) => c,
                Err(e) => panic!("fuzzed config {i} should be valid: {e}\n{text}"),
            };
        let echoed = config.to_json_string();
        let reparsed = parse_config_str(command, &echoed, dir.path(), &Overrides::default())
            .unwrap_or_else(|e| panic!("echo of config {i} failed to reparse: {e}\n{echoed}"));
        assert_eq!(config, reparsed, "config {i} drifted across the round trip");
        parsed_ok += 1;
    }
    assert_eq!(parsed_ok, 100);
}
