use std::path::Path;
use std::process::{Command, Output};

fn inflare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inflare")).args(args).env_remove("INFLARE_SEED").output().expect("binary runs")
}

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn metric(dir: &Path, name: &str) -> f64 {
    metrics(dir)["metrics"][name].as_f64().unwrap_or_else(|| panic!("missing metric {name}"))
}

#[test]
fn pr_prints_participation_ratio() {
    let out = inflare(&["pr", "--eigvals", "4,1,1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "2.0");
}

#[test]
fn usage_errors_exit_2() {
    let out = inflare(&["pr", "--eigvals", "1", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
    assert_eq!(inflare(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(inflare(&["flow", "--direction", "sideways", "--model", "m"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nsteps = 10\nwarmup = 3\n").unwrap();
    let out = inflare(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:"));
    let missing = inflare(&["roundtrip", "--model", dir.path().join("none.iflow").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn desk_scale_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let p = |name: &str| root.path().join(name);
    let s = |name: &str| p(name).to_str().unwrap().to_owned();
    let data = ["--n", "400", "--holdout", "100", "--seed", "3"];

    let mut args = vec!["gen-data", "--output-dir"];
    let gen = s("gen");
    args.push(&gen);
    args.extend(data);
    assert!(inflare(&args).status.success());
    assert!(p("gen/holdout_whitened.csv").exists() && p("gen/data.svg").exists());
    assert!((metric(&p("gen"), "participation_ratio") - 2.0).abs() < 0.5);

    let train = s("train");
    let mut args = vec!["train", "--steps", "40", "--batch-size", "64", "--output-dir", &train];
    args.extend(data);
    let out = inflare(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = s("train/model.iflow");

    let config = p("flow.toml");
    std::fs::write(
        &config,
        "[flow]\ngrid = { kind = \"uniform\", h = 0.1 }\n\
         [coverage]\nn_test = 200\nn_vertices = 40\nradii = [1.0, 2.0]\ngrid = { kind = \"uniform\", h = 0.1 }\n\
         [acf]\nn_trajectories = 30\nn_reference = 50\n\
         [hmc]\nn_obs = 4\ngrid_points = 4\nleapfrog_steps = 2\nsamples = 3\nburn_in = 2\nthin = 1\n",
    )
    .unwrap();
    let config = config.to_str().unwrap().to_owned();
    let run = |cmd: &str, dir: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--model", &model, "--config", &config, "--output-dir", dir];
        args.extend(data);
        args.extend(extra);
        let out = inflare(&args);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    };

    run("roundtrip", &s("rt"), &[]);
    let mse = metric(&p("rt"), "roundtrip_mse");
    assert!(mse.is_finite() && mse >= 0.0);
    let m = metrics(&p("rt"));
    assert_eq!(m["command"], "roundtrip");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);

    // Same configuration, byte-identical CSV output.
    run("roundtrip", &s("rt2"), &[]);
    assert_eq!(std::fs::read(p("rt/roundtrip.csv")).unwrap(), std::fs::read(p("rt2/roundtrip.csv")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("rt/manifest.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"].as_array().unwrap().iter().all(|a| a["sha256"].as_str().unwrap().len() == 64));

    run("flow", &s("gen_flow"), &["--direction", "generate", "--no-svg"]);
    assert!(p("gen_flow/output_data_space.csv").exists() && !p("gen_flow/flow.svg").exists());

    run("coverage", &s("cov"), &[]);
    let text = std::fs::read_to_string(p("cov/coverage.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(metric(&p("cov"), "max_abs_change") <= 1.0);

    run("residual-acf", &s("acf"), &["--reference", "ideal"]);
    let acf = std::fs::read_to_string(p("acf/acf.csv")).unwrap();
    let lag0: f64 = acf.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((lag0 - 1.0).abs() < 1e-10);

    run("hmc", &s("hmc"), &[]);
    assert_eq!(std::fs::read_to_string(p("hmc/weights.csv")).unwrap().lines().count(), 4);
    assert!((0.0..=1.0).contains(&metric(&p("hmc"), "acceptance_rate")));
}
