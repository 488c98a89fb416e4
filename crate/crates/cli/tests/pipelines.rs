use std::path::{Path, PathBuf};
use std::process::Command;

use ifid_cli::{run_args, Status};
use ifid_core::diffusion::prior_samples;
use ifid_core::report::MetricReport;
use ifid_core::tensorio::{read_tensor, write_tensor};
use ifid_core::toygmm::{make_grid_gmm, sample_gmm, ToyPreset};
use ifid_core::TensorSet;

fn put(dir: &Path, name: &str, t: &TensorSet) -> String {
    let p = dir.join(name);
    write_tensor(&p, t).unwrap();
    p.to_str().unwrap().to_owned()
}

fn run(args: &[&str]) -> ifid_cli::Outcome {
    let mut full = vec!["eval"];
    full.extend_from_slice(args);
    run_args(full).unwrap()
}

fn metric(o: &ifid_cli::Outcome, key: &str) -> f64 {
    o.report.as_ref().unwrap().metrics[key]
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn shifted(t: &TensorSet, shift: &[f32]) -> TensorSet {
    let data = t.data().chunks(t.cols()).flat_map(|r| r.iter().zip(shift).map(|(a, b)| a + b)).collect();
    TensorSet::new(t.rows(), t.cols(), data).unwrap()
}

#[test]
fn rfid_identical_features_is_zero() {
    let d = tempfile::tempdir().unwrap();
    let x = prior_samples(500, 8, 1).unwrap();
    let a = put(d.path(), "x.tns1", &x);
    let o = run(&["rfid", "--reference", &a, "--reconstructed", &a, "--out-dir", dir_str(d.path())]);
    assert!(metric(&o, "rfid").abs() < 1e-6);
    let o = run(&["rfid", "--reference", &a, "--latents", &a, "--out-dir", dir_str(d.path())]);
    assert!(metric(&o, "rfid").abs() < 1e-6);
}

#[test]
fn rfid_mean_shift() {
    let d = tempfile::tempdir().unwrap();
    let x = prior_samples(20_000, 8, 2).unwrap();
    let y = prior_samples(20_000, 8, 3).unwrap();
    let c = [2.0f32, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let a = put(d.path(), "x.tns1", &x);
    let b = put(d.path(), "y.tns1", &shifted(&y, &c));
    let floor_b = put(d.path(), "y0.tns1", &y);
    let out = dir_str(d.path());
    let v = metric(&run(&["rfid", "--reference", &a, "--reconstructed", &b, "--out-dir", out]), "rfid");
    let floor = metric(&run(&["rfid", "--reference", &a, "--reconstructed", &floor_b, "--out-dir", out]), "rfid");
    assert!((v - (4.0 + floor)).abs() <= 0.05 * 4.0, "rfid {v}, floor {floor}");
}

#[test]
fn rfid_needs_exactly_one_source() {
    let d = tempfile::tempdir().unwrap();
    let a = put(d.path(), "x.tns1", &prior_samples(10, 2, 1).unwrap());
    assert!(run_args(["eval", "rfid", "--reference", &a, "--out-dir", dir_str(d.path())]).is_err());
    assert!(run_args(["eval", "rfid", "--reference", &a, "--latents", &a, "--reconstructed", &a]).is_err());
}

#[test]
fn ifid_alpha_zero_equals_rfid() {
    let d = tempfile::tempdir().unwrap();
    let z = prior_samples(400, 6, 4).unwrap();
    let x = prior_samples(400, 12, 5).unwrap();
    let (zp, xp, out) = (put(d.path(), "z.tns1", &z), put(d.path(), "x.tns1", &x), dir_str(d.path()));
    let dec = ["--decoder", "random_linear_tanh", "--decoder-out-dim", "12"];
    let mut args = vec!["rfid", "--reference", &xp, "--latents", &zp, "--out-dir", out];
    args.extend(dec);
    let r = metric(&run(&args), "rfid");
    for method in ["linear", "spherical", "mask"] {
        let mut args = vec!["ifid", "--reference", &xp, "--latents", &zp, "--alpha", "0", "--method", method, "--out-dir", out];
        args.extend(dec);
        let i = metric(&run(&args), "ifid");
        assert!((i - r).abs() <= 1e-9, "{method}: {i} vs {r}");
    }
}

#[test]
fn ifid_orders_connected_below_isolated() {
    // 40 independent 25-latent datasets, midpoints pooled
    let d = tempfile::tempdir().unwrap();
    let out = dir_str(d.path());
    for (preset, step) in [(ToyPreset::Grid25, "0.5"), (ToyPreset::TwoMode, "2")] {
        let [(_, iso), (_, con)] = preset.variants().unwrap();
        let size = if preset == ToyPreset::Grid25 { "25" } else { "2" };
        for seed in 0..3u64 {
            let value = |spec, name: &str| {
                let z = put(d.path(), &format!("{name}_z.tns1"), &sample_gmm(spec, 1000, 10 + seed).unwrap());
                let x = put(d.path(), &format!("{name}_x.tns1"), &sample_gmm(spec, 2000, 20 + seed).unwrap());
                let args = ["ifid", "--reference", &x, "--latents", &z, "--dataset-size", size, "--lattice-step", step, "--out-dir", out];
                metric(&run(&args), "ifid")
            };
            let (vi, vc) = (value(&iso, "iso"), value(&con, "con"));
            assert!(vc < vi, "{preset:?} seed {seed}: connected {vc} vs isolated {vi}");
        }
    }
}

#[test]
fn ifid_real_mode_handshake() {
    let d = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..300).map(|i| format!("img_{i:04}")).collect();
    let z = prior_samples(300, 4, 6).unwrap().with_ids(ids.clone()).unwrap();
    let x = prior_samples(300, 4, 7).unwrap();
    let (zp, xp) = (put(d.path(), "z.tns1", &z), put(d.path(), "x.tns1", &x));
    let hand = d.path().join("hand");

    let status = Command::new(env!("CARGO_BIN_EXE_eval"))
        .args(["ifid", "--mode", "real", "--latents", &zp, "--reference", &xp, "--out-dir", dir_str(&hand)])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let z_hat = read_tensor(hand.join("interpolated.tns1")).unwrap();
    assert_eq!(z_hat.ids().unwrap(), ids.as_slice());
    assert!(!hand.join("ifid.json").exists());

    // external "decoder": identity, rows shuffled (ids carry the pairing)
    let rev: Vec<usize> = (0..300).rev().collect();
    let feats = put(d.path(), "feats.tns1", &z_hat.select(&rev).unwrap());
    let resumed = run(&["ifid", "--mode", "real", "--latents", &zp, "--reference", &xp, "--resume", &feats, "--out-dir", dir_str(&hand)]);
    let toy = run(&["ifid", "--latents", &zp, "--reference", &xp, "--out-dir", dir_str(d.path())]);
    assert_eq!(resumed.status, Status::Done);
    assert_eq!(metric(&resumed, "ifid").to_bits(), metric(&toy, "ifid").to_bits());

    let wrong = z_hat.with_data(4, z_hat.data().to_vec()).unwrap().select(&(0..300).collect::<Vec<_>>()).unwrap();
    let renamed = TensorSet::new(300, 4, wrong.data().to_vec()).unwrap().with_ids((0..300).map(|i| format!("other_{i}")).collect()).unwrap();
    let bad = put(d.path(), "bad.tns1", &renamed);
    assert!(run_args(["eval", "ifid", "--mode", "real", "--latents", &zp, "--reference", &xp, "--resume", &bad]).is_err());
    let short = put(d.path(), "short.tns1", &z_hat.select(&[0, 1, 2]).unwrap());
    let err = run_args(["eval", "ifid", "--mode", "real", "--latents", &zp, "--reference", &xp, "--resume", &short]).unwrap_err();
    assert!(err.to_string().contains("rows"), "{err}");
}

#[test]
fn nn_dump_then_interpolate_matches_handshake() {
    let d = tempfile::tempdir().unwrap();
    let z = prior_samples(200, 5, 8).unwrap();
    let zp = put(d.path(), "z.tns1", &z);
    let nn_dir = d.path().join("nn");
    let o = run(&["nn-dump", "--queries", &zp, "--k", "3", "--out-dir", dir_str(&nn_dir)]);
    assert!(metric(&o, "mean_nn_distance") > 0.0);
    let idx = read_tensor(nn_dir.join("nn_indices.tns1")).unwrap();
    assert_eq!((idx.rows(), idx.cols()), (200, 3));
    let csv = std::fs::read_to_string(nn_dir.join("nn_summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 600);

    let ip = d.path().join("ip");
    run(&[
        "interpolate", "--latents", &zp,
        "--nn-indices", nn_dir.join("nn_indices.tns1").to_str().unwrap(),
        "--nn-distances", nn_dir.join("nn_distances.tns1").to_str().unwrap(),
        "--k-select", "3", "--seed", "5", "--out-dir", dir_str(&ip),
    ]);
    let hand = d.path().join("hand");
    let code = Command::new(env!("CARGO_BIN_EXE_eval"))
        .args(["ifid", "--mode", "real", "--latents", &zp, "--reference", &zp, "--k", "3", "--k-select", "3", "--seed", "5", "--out-dir", dir_str(&hand)])
        .status()
        .unwrap()
        .code();
    assert_eq!(code, Some(2));
    let a = read_tensor(ip.join("interpolated.tns1")).unwrap();
    let b = read_tensor(hand.join("interpolated.tns1")).unwrap();
    assert!(a.bit_eq(&b));
}

fn gmm_inputs(d: &Path) -> (String, String, String) {
    let spec = make_grid_gmm(3, 1.0, 0.1).unwrap();
    (
        put(d, "train.tns1", &sample_gmm(&spec, 120, 1).unwrap()),
        put(d, "src.tns1", &sample_gmm(&spec, 150, 2).unwrap()),
        put(d, "ref.tns1", &sample_gmm(&spec, 150, 3).unwrap()),
    )
}

#[test]
fn gfid_t_zero_is_rfid_and_keys_mirror_sweep() {
    let d = tempfile::tempdir().unwrap();
    let (train, src, reference) = gmm_inputs(d.path());
    let out = dir_str(d.path());
    let o = run(&["gfid-t", "--train", &train, "--sources", &src, "--reference", &reference, "--bandwidth", "0.3", "--steps", "40", "--out-dir", out]);
    let keys: Vec<&str> = o.report.as_ref().unwrap().metrics.keys().map(String::as_str).collect();
    let mut want = vec!["t=0 (rFID)", "t=0.1", "t=0.2", "t=0.4", "t=0.6", "t=0.8", "t=1.0 (gFID)"];
    want.sort();
    assert_eq!(keys, want);
    let r = metric(&run(&["rfid", "--reference", &reference, "--latents", &src, "--out-dir", out]), "rfid");
    assert!((metric(&o, "t=0 (rFID)") - r).abs() <= 1e-9);
}

#[test]
fn gfid_t_real_mode_handshake() {
    let d = tempfile::tempdir().unwrap();
    let (train, src, reference) = gmm_inputs(d.path());
    let hand = d.path().join("hand");
    let base = ["gfid-t", "--mode", "real", "--train", &train, "--sources", &src, "--reference", &reference, "--ts", "0,0.5", "--steps", "20"];
    let code = Command::new(env!("CARGO_BIN_EXE_eval")).args(base).args(["--out-dir", dir_str(&hand)]).status().unwrap().code();
    assert_eq!(code, Some(2));
    for t in ["0", "0.5"] {
        let z = read_tensor(hand.join(format!("denoised_t{t}.tns1"))).unwrap();
        write_tensor(hand.join(format!("features_t{t}.tns1")), &z).unwrap();
    }
    let mut args = base.to_vec();
    args.extend(["--resume", dir_str(&hand), "--out-dir", dir_str(&hand)]);
    let real = run(&args);
    let toy = run(&["gfid-t", "--train", &train, "--sources", &src, "--reference", &reference, "--ts", "0,0.5", "--steps", "20", "--out-dir", dir_str(d.path())]);
    assert_eq!(real.report.unwrap().metrics, toy.report.unwrap().metrics);
}

#[test]
fn toy_writes_report_and_plots() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&["toy", "--preset", "grid25", "--generated", "200", "--steps", "30", "--out-dir", dir_str(d.path())]);
    let mut names: Vec<String> = std::fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".svg")).count(), 6);
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 1);
    let report = o.report.unwrap();
    assert!(report.checks.contains_key("ifid_isolated_gt_connected"));
    assert!(report.checks.contains_key("hallucination_isolated_gt_connected"));
    for (name, rows) in [("isolated_train.svg", 1000), ("connected_interpolated.svg", 1000), ("isolated_generated.svg", 200)] {
        let text = std::fs::read_to_string(d.path().join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert_eq!(circles, rows, "{name}");
    }
}

fn table_csv(d: &Path) -> String {
    let mut s = String::from("vae,gfid,lin,psnr,noisy\n");
    for i in 0..13 {
        let g = 1.0 + i as f64 * 0.5;
        let psnr = if i == 4 { String::new() } else { format!("{}", 30.0 - g * g * 0.3) };
        s.push_str(&format!("v{i},{g},{},{psnr},{}\n", 2.0 * g + 1.0, ((i * 7) % 5) as f64));
    }
    let p = d.join("table.csv");
    std::fs::write(&p, s).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn correlate_negation_and_counts() {
    let d = tempfile::tempdir().unwrap();
    let csv = table_csv(d.path());
    let out = dir_str(d.path());
    let raw = run(&["correlate", "--input", &csv, "--target", "gfid", "--out-dir", out]).report.unwrap();
    let neg = run(&["correlate", "--input", &csv, "--target", "gfid", "--negate", "psnr", "--out-dir", out]).report.unwrap();
    let find = |r: &MetricReport, m: &str| r.correlations.iter().find(|c| c.metric == m).unwrap().clone();
    assert_eq!((find(&raw, "lin").pcc, find(&raw, "lin").srcc, find(&raw, "lin").n), (1.0, 1.0, 13));
    assert_eq!(find(&neg, "psnr").pcc, -find(&raw, "psnr").pcc);
    assert_eq!(find(&raw, "psnr").n, 12);
    let mirror = std::fs::read_to_string(d.path().join("correlations.csv")).unwrap();
    assert!(mirror.starts_with("metric,pcc,srcc,n\n") && mirror.lines().count() == 4);
}

#[test]
fn plot_contract() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("three.csv");
    std::fs::write(&p, "vae,metric,gfid\na,1,2\nb,2,4\nc,4,8\n").unwrap();
    run(&["plot", "--input", p.to_str().unwrap(), "--x", "metric", "--y", "gfid", "--out-dir", dir_str(d.path())]);
    let text = std::fs::read_to_string(d.path().join("plot.svg")).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 3);
    let title = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).find(|t| t.contains("PCC")).unwrap();
    assert!(title.contains("PCC=1.00") && title.contains("SRCC=1.00"), "{title}");
    for label in ["a", "b", "c"] {
        assert!(doc.descendants().any(|n| n.has_tag_name("text") && n.text() == Some(label)));
    }
    let area = doc.descendants().find(|n| n.attribute("class") == Some("plot-area")).unwrap();
    let vb: Vec<f64> = area.attribute("viewBox").unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    let want = [1.0 - 0.15, 2.0 - 0.3, 3.0 * 1.1, 6.0 * 1.1];
    for (a, b) in vb.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{vb:?}");
    }

    let empty = d.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = d.path().join("empty_out");
    assert!(run_args(["eval", "plot", "--input", empty.to_str().unwrap(), "--x", "metric", "--out-dir", dir_str(&out)]).is_err());
    assert!(!out.join("plot.svg").exists());
    let header_only = d.path().join("header.csv");
    std::fs::write(&header_only, "vae,metric,gfid\n").unwrap();
    assert!(run_args(["eval", "plot", "--input", header_only.to_str().unwrap(), "--x", "metric", "--out-dir", dir_str(&out)]).is_err());
    assert!(!out.join("plot.svg").exists());
}

#[test]
fn fid_subcommand_prints_scalar() {
    let d = tempfile::tempdir().unwrap();
    let a = put(d.path(), "a.tns1", &prior_samples(300, 3, 1).unwrap());
    let b = put(d.path(), "b.tns1", &prior_samples(300, 3, 2).unwrap());
    let out = Command::new(env!("CARGO_BIN_EXE_eval")).args(["fid", &a, &b, "--out-dir", dir_str(d.path())]).output().unwrap();
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    let report: MetricReport = serde_json::from_slice(&std::fs::read(d.path().join("fid.json")).unwrap()).unwrap();
    assert_eq!(report.metrics["fid"], v);
    assert_eq!(report.inputs.len(), 2);
}

#[test]
fn fail_fast_before_writing() {
    let d = tempfile::tempdir().unwrap();
    let a = put(d.path(), "a.tns1", &prior_samples(30, 3, 1).unwrap());
    let out = d.path().join("never");
    let err = run_args(["eval", "fid", &a, "/nonexistent/b.tns1", "--out-dir", dir_str(&out)]).unwrap_err();
    assert!(format!("{err:#}").contains("cannot read"));
    assert!(!out.exists());
    let bad = d.path().join("bad.tns1");
    std::fs::write(&bad, b"TNS2garbage").unwrap();
    assert!(run_args(["eval", "fid", &a, bad.to_str().unwrap(), "--out-dir", dir_str(&out)]).is_err());
    assert!(!out.exists());
}

#[test]
fn exit_codes_and_thread_override() {
    let bin = env!("CARGO_BIN_EXE_eval");
    assert_eq!(Command::new(bin).args(["fid", "--bogus"]).output().unwrap().status.code(), Some(1));
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    let d = tempfile::tempdir().unwrap();
    let a = put(d.path(), "a.tns1", &prior_samples(300, 3, 1).unwrap());
    let b = put(d.path(), "b.tns1", &prior_samples(300, 3, 2).unwrap());
    let value = |threads: &str| {
        let o = Command::new(bin).env("EVAL_THREADS", threads).args(["fid", &a, &b, "--out-dir", dir_str(d.path())]).output().unwrap();
        (o.status.code(), String::from_utf8(o.stdout).unwrap())
    };
    let (c1, v1) = value("1");
    let (c4, v4) = value("4");
    assert_eq!((c1, c4), (Some(0), Some(0)));
    assert_eq!(v1, v4);
    assert_eq!(value("many").0, Some(1));
}

#[test]
fn config_file_with_overrides() {
    let d = tempfile::tempdir().unwrap();
    let a = put(d.path(), "a.tns1", &prior_samples(50, 3, 1).unwrap());
    let b = put(d.path(), "b.tns1", &prior_samples(50, 3, 2).unwrap());
    let cfg = d.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::json!({"command": "fid", "a": a, "b": a}).to_string()).unwrap();
    let out = dir_str(d.path());
    let same = run(&["fid", "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert!(metric(&same, "fid") < 1e-6);
    let cross = run(&["fid", &a, &b, "--config", cfg.to_str().unwrap(), "--out-dir", out]);
    assert!(metric(&cross, "fid") > 1e-3);
    assert!(run_args(["eval", "rfid", "--config", cfg.to_str().unwrap()]).is_err());
}

/// Every subcommand rerun from its own report reproduces it bit for bit.
#[test]
fn reports_rerun_bit_exactly() {
    let d = tempfile::tempdir().unwrap();
    let (train, src, reference) = gmm_inputs(d.path());
    let csv = table_csv(d.path());
    let nn = d.path().join("nn");
    let nn_idx = nn.join("nn_indices.tns1");
    let nn_dist = nn.join("nn_distances.tns1");
    let runs: Vec<(Vec<&str>, PathBuf)> = vec![
        (vec!["nn-dump", "--queries", &src, "--k", "2"], nn.clone()),
        (vec!["rfid", "--reference", &reference, "--latents", &src, "--decoder", "random_linear_tanh", "--decoder-out-dim", "2"], d.path().join("r")),
        (vec!["ifid", "--reference", &reference, "--latents", &src, "--method", "mask", "--seed", "3"], d.path().join("i")),
        (vec!["gfid-t", "--train", &train, "--sources", &src, "--reference", &reference, "--ts", "0,0.5,1", "--steps", "15", "--bandwidth", "0.2", "--stochastic", "true", "--eta", "0.5"], d.path().join("g")),
        (vec!["toy", "--preset", "two_mode", "--generated", "100", "--steps", "20", "--train-size", "200"], d.path().join("t")),
        (vec!["correlate", "--input", &csv, "--negate", "psnr"], d.path().join("c")),
        (vec!["interpolate", "--latents", &src, "--nn-indices", nn_idx.to_str().unwrap(), "--nn-distances", nn_dist.to_str().unwrap(), "--k-select", "2", "--method", "spherical"], d.path().join("ip")),
        (vec!["fid", &src, &reference], d.path().join("f")),
        (vec!["plot", "--input", &csv, "--x", "lin"], d.path().join("p")),
    ];
    for (args, out) in runs {
        let mut full = args.clone();
        full.extend(["--out-dir", dir_str(&out)]);
        let first = run(&full);
        let path = first.report_path.clone().unwrap();
        let again = run(&[args[0], "--config", path.to_str().unwrap()]);
        assert!(first.report.as_ref().unwrap().same_results(again.report.as_ref().unwrap()), "{}", args[0]);
        assert!(!first.report.unwrap().inputs.is_empty() || args[0] == "toy");
    }
}
