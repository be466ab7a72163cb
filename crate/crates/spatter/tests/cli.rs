use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatter::pgm::{read_label_map, write_label_map};
use spatter::util::read_json;
use spatter_core::synth::GroundTruth;
use spatter_core::LabelMap;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatter"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn minimal_config_writes_one_frame_triplet() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "");
    let o = run(t.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["frames/frame_000000.pgm", "labels/label_000000.pgm", "truth/truth_000000.json", "meta/meta_000000.json"] {
        assert!(t.path().join("out").join(f).is_file(), "{f}");
    }
    assert!(!t.path().join("out/frames/frame_000001.pgm").exists());
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.batch]\nframes = 2\nflare_fractoin = 0.5\n");
    let o = run(t.path(), &["simulate", "--config", "run.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flare_fractoin"), "{}", stderr(&o));
}

#[test]
fn invalid_values_exit_2() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.batch]\ncount_range = [5, 2]\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 2);
    assert_eq!(code(&run(t.path(), &["simulate", "--jobs", "0"])), 2);
    assert_eq!(code(&run(t.path(), &["register", "--segmenter", "otsu"])), 2);
}

#[test]
fn register_on_empty_dir_exits_3() {
    let t = tempfile::tempdir().unwrap();
    fs::create_dir_all(t.path().join("out/labels")).unwrap();
    let o = run(t.path(), &["register"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("labels"), "{}", stderr(&o));
}

#[test]
fn labelmap_counts_equal_ground_truth() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "seed = 4\n[simulate.batch]\nframes = 12\nflare_fraction = 0.5\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let o = run(t.path(), &["register", "--config", "run.toml", "--segmenter", "labelmap"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = t.path().join("out");
    let sig: spatter_core::registration::LayerSignatureMap = read_json(&out.join("register/layer_signature.json")).unwrap();
    assert_eq!(sig.observations.len(), 12);
    for obs in &sig.observations {
        let truth: GroundTruth = read_json(&out.join(format!("truth/truth_{:06}.json", obs.frame_index))).unwrap();
        assert_eq!(obs.spatter_count, truth.spatter_count, "frame {}", obs.frame_index);
    }
    let csv = fs::read_to_string(out.join("register/layer_signature.csv")).unwrap();
    assert!(csv.starts_with("layer,frame,mp_x_mm,mp_y_mm,count,angles\n"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn kmeans_on_flare_scenes_flags_false_clusters() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.batch]\nframes = 10\nflare_fraction = 1.0\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let o = run(t.path(), &["register", "--config", "run.toml", "--segmenter", "kmeans3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let check = fs::read_to_string(t.path().join("out/register/registration_check.csv")).unwrap();
    let flagged = check.lines().skip(1).filter(|l| l.split(',').nth(3) != Some("0")).count();
    assert!(flagged >= 9, "{check}");
    assert!(t.path().join("out/register/segmentation_eval.csv").is_file());
}

#[test]
fn frames_without_melt_pool_are_skipped_with_exit_4() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.batch]\nframes = 3\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let p = t.path().join("out/labels/label_000001.pgm");
    let lm = read_label_map(&p).unwrap();
    write_label_map(&p, &LabelMap::new(lm.width(), lm.height())).unwrap();
    let o = run(t.path(), &["register"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("1 item(s) skipped"), "{}", stderr(&o));
    let sig: spatter_core::registration::LayerSignatureMap =
        read_json(&t.path().join("out/register/layer_signature.json")).unwrap();
    assert_eq!(sig.observations.len(), 2);
    assert_eq!(sig.skipped[0].frame_index, 1);
}

#[test]
fn corrupted_pgm_exits_3_naming_the_file() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.fringe]\nheight = { width = 64, height = 48 }\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let p = t.path().join("out/fringe/obj_1.pgm");
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(t.path(), &["fpp"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("obj_1.pgm"), "{}", stderr(&o));
}

#[test]
fn fpp_missing_reference_exits_3() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.fringe]\nheight = { width = 64, height = 48 }\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    fs::remove_file(t.path().join("out/fringe/ref_2.pgm")).unwrap();
    let o = run(t.path(), &["fpp"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("ref_2.pgm"), "{}", stderr(&o));
}

fn roughness_rows(dir: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(dir.join("out/fpp/roughness.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn fpp_identical_stacks_give_zero_roughness() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.fringe]\nheight = { width = 64, height = 48 }\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let fr = t.path().join("out/fringe");
    for k in 0..3 {
        fs::copy(fr.join(format!("obj_{k}.pgm")), fr.join(format!("ref_{k}.pgm"))).unwrap();
    }
    assert_eq!(code(&run(t.path(), &["fpp"])), 0);
    let rows = roughness_rows(t.path());
    assert_eq!(rows.len(), 1);
    assert!(rows[0][2] < 1e-9, "{rows:?}");
}

#[test]
fn fpp_round_trip_matches_truth_sa() {
    let t = tempfile::tempdir().unwrap();
    write_config(
        t.path(),
        "seed = 2\n[simulate.fringe]\n[fpp]\nlayer = 66\nregions = [{ bar = 2, x0 = 0, y0 = 0, width = 256, height = 256 }, { bar = 4, x0 = 20, y0 = 30, width = 100, height = 60 }]\n",
    );
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    let o = run(t.path(), &["fpp", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = roughness_rows(t.path());
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0], rows[0][1], rows[1][1]), (66.0, 2.0, 4.0));
    let truth: serde_json::Value = read_json(&t.path().join("out/fringe/truth_roughness.json")).unwrap();
    let sa = truth["sa"].as_f64().unwrap();
    assert!((rows[0][2] - sa).abs() < 0.005 * sa, "{} vs {sa}", rows[0][2]);
    assert_eq!(rows[0][4], 65536.0);
    assert_eq!(rows[1][4], 6000.0);
    let h = spatter::raster::read_height_map(&t.path().join("out/fpp/height")).unwrap();
    assert_eq!((h.width, h.height), (256, 256));
}

#[test]
fn compare_needs_eight_records() {
    let t = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("features_seed7.csv")).unwrap();
    let few: Vec<&str> = text.lines().take(8).collect();
    fs::write(t.path().join("few.csv"), few.join("\n") + "\n").unwrap();
    write_config(t.path(), "[compare]\nfeatures = \"few.csv\"\n");
    let o = run(t.path(), &["compare", "--config", "run.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains('7'), "{}", stderr(&o));
}

#[test]
fn compare_missing_column_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("features_seed7.csv")).unwrap();
    let cut: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(8);
            f.join(",") + "\n"
        })
        .collect();
    fs::write(t.path().join("cut.csv"), cut).unwrap();
    write_config(t.path(), "[compare]\nfeatures = \"cut.csv\"\n");
    let o = run(t.path(), &["compare", "--config", "run.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mean_spatter_count"), "{}", stderr(&o));
}

#[test]
fn compare_fixture_replay_is_byte_exact() {
    let t = tempfile::tempdir().unwrap();
    let feats = fixture("features_seed7.csv");
    write_config(t.path(), &format!("[compare]\nfeatures = {:?}\n", feats.to_str().unwrap()));
    let o = run(t.path(), &["compare", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read(t.path().join("out/compare/compare.csv")).unwrap();
    assert_eq!(got, fs::read(fixture("compare_seed7.csv")).unwrap());
}

#[test]
fn simulated_dataset_matches_fixture() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "seed = 7\n[simulate.dataset]\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    assert_eq!(
        fs::read(t.path().join("out/features.csv")).unwrap(),
        fs::read(fixture("features_seed7.csv")).unwrap()
    );
}

#[test]
fn fit_reproduces_appendix_tables() {
    let t = tempfile::tempdir().unwrap();
    for (file, x, sign) in [("tableA1.csv", "power_w", 1.0), ("tableA2.csv", "speed_m_s", -1.0)] {
        write_config(
            t.path(),
            &format!("[fit]\ninput = {:?}\nx = \"{x}\"\ny = \"mean_spatter_count\"\n", fixture(file).to_str().unwrap()),
        );
        let o = run(t.path(), &["fit", "--config", "run.toml"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let f: serde_json::Value = read_json(&t.path().join("out/fit/fit.json")).unwrap();
        assert!(f["r_squared"].as_f64().unwrap() >= 0.97);
        assert!(f["slope"].as_f64().unwrap() * sign > 0.0);
    }
    write_config(t.path(), &format!("[fit]\ninput = {:?}\nx = \"watts\"\n", fixture("tableA1.csv").to_str().unwrap()));
    let o = run(t.path(), &["fit", "--config", "run.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("watts"));
}

#[test]
fn report_and_analyze_from_records() {
    let t = tempfile::tempdir().unwrap();
    write_config(
        t.path(),
        &format!(
            "[analyze]\nfeatures = {0:?}\n[report]\nfeatures = {0:?}\nlayer_table = {1:?}\n",
            fixture("features_seed7.csv").to_str().unwrap(),
            fixture("table3.csv").to_str().unwrap()
        ),
    );
    for c in ["analyze", "report"] {
        let o = run(t.path(), &[c, "--config", "run.toml"]);
        assert_eq!(code(&o), 0, "{c}: {}", stderr(&o));
    }
    let regime = fs::read_to_string(t.path().join("out/analyze/regime.csv")).unwrap();
    assert_eq!(regime.lines().count(), 37);
    let summary = fs::read_to_string(t.path().join("out/report/layer_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    let hatch = fs::read_to_string(t.path().join("out/report/hatch_table.csv")).unwrap();
    assert!(hatch.contains("\n68,208,28,3.01,10.27\n"), "{hatch}");
    let svg = fs::read_to_string(t.path().join("out/report/regime.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn results_do_not_depend_on_jobs() {
    let cfg = "seed = 11\n[simulate.batch]\nframes = 16\nflare_fraction = 0.5\n[simulate.dataset]\nframes_per_layer = 10\n";
    let mut snaps = Vec::new();
    for jobs in ["1", "4"] {
        let t = tempfile::tempdir().unwrap();
        write_config(t.path(), cfg);
        for c in ["simulate", "register", "compare"] {
            let o = run(t.path(), &[c, "--config", "run.toml", "--jobs", jobs]);
            assert_eq!(code(&o), 0, "{c}: {}", stderr(&o));
        }
        snaps.push(snapshot(&t.path().join("out")));
    }
    assert!(snaps[0].len() > 60);
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "seed = 1\n[simulate.dataset]\nframes_per_layer = 5\n");
    let mut outs = Vec::new();
    for args in [vec!["--seed", "1"], vec![], vec!["--seed", "2"]] {
        let mut a = vec!["simulate", "--config", "run.toml"];
        a.extend(args);
        assert_eq!(code(&run(t.path(), &a)), 0);
        outs.push(fs::read(t.path().join("out/features.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
}

#[test]
fn calibration_maps_centres_to_plate() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), "[simulate.batch]\nframes = 2\n");
    assert_eq!(code(&run(t.path(), &["simulate", "--config", "run.toml"])), 0);
    // 0.1 mm per pixel, origin shifted to (5, -2)
    fs::write(
        t.path().join("cal.csv"),
        "x_src,y_src,x_dst,y_dst\n0,0,5,-2\n100,0,15,-2\n100,100,15,8\n0,100,5,8\n",
    )
    .unwrap();
    write_config(t.path(), "[register]\ncalibration = \"cal.csv\"\n");
    let o = run(t.path(), &["register", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sig: spatter_core::registration::LayerSignatureMap =
        read_json(&t.path().join("out/register/layer_signature.json")).unwrap();
    for obs in &sig.observations {
        let [x, y] = obs.mp_center_px;
        let [u, v] = obs.mp_center_mm;
        assert!((u - (5.0 + 0.1 * x)).abs() < 1e-9 && (v - (-2.0 + 0.1 * y)).abs() < 1e-9);
    }
    let h: Vec<f64> = read_json(&t.path().join("out/register/homography.json")).unwrap();
    assert_eq!(h.len(), 9);

    fs::write(t.path().join("cal.csv"), "x_src,y_src,x_dst,y_dst\n0,0,0,0\n1,1,1,1\n2,2,2,2\n3,3,3,3\n").unwrap();
    let o = run(t.path(), &["register", "--config", "run.toml"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
