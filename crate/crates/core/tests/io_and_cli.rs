use std::path::Path;
use std::process::Command;

use castelo_core::clustering::{ClusterLabels, ClusterMethod, ClusterSizeSeries};
use castelo_core::model_io::{self, Artifact, Tensor};
use castelo_core::render;
use castelo_core::subtypes::build_subtype_map;
use castelo_core::synth::{generate, PlannedSubtype, SynthSpec};

fn castelo(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_castelo"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CASTELO_WORKDIR")
        .output()
        .expect("spawn castelo")
}

fn error_kind(stderr: &[u8]) -> String {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().rev().find(|l| l.contains("\"error\"")).unwrap_or_else(|| panic!("no error line: {text}"));
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    v["error"].as_str().unwrap_or_default().to_string()
}

#[test]
fn trajectory_round_trip_within_micro_angstrom() {
    let out = generate(&SynthSpec {
        frames: 20,
        ..SynthSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (tp, xp) = (dir.path().join("t.json"), dir.path().join("x.xyz"));
    model_io::write_topology(&out.topology, &tp).unwrap();
    model_io::write_trajectory(&out.trajectory, &out.topology, &xp).unwrap();
    let topo = model_io::parse_topology(&tp).unwrap();
    assert_eq!(topo, out.topology);
    let traj = model_io::parse_trajectory(&xp, &topo).unwrap();
    assert_eq!(traj.frame_count(), 20);
    assert_eq!(traj.frame_stride_ps, out.trajectory.frame_stride_ps);
    for (a, b) in traj.raw_coords().iter().zip(out.trajectory.raw_coords()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-6);
        }
    }
}

#[test]
fn artifacts_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let labels = ClusterLabels {
        labels: vec![0, 0, -1, 1, 2, 1],
        method: ClusterMethod::Hdbscan,
    };
    let p = dir.path().join("labels.json");
    labels.write_to(&p).unwrap();
    let back = ClusterLabels::read_from(&p).unwrap();
    assert_eq!(back, labels);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&p).unwrap());

    let csv = labels.to_csv();
    assert_eq!(ClusterLabels::from_csv(&csv, ClusterMethod::Hdbscan, &p).unwrap(), labels);

    let sizes = ClusterSizeSeries {
        sizes: vec![2, 2, 1, 2, 1, 2],
    };
    let sp = dir.path().join("sizes.csv");
    sizes.write_to(&sp).unwrap();
    assert_eq!(ClusterSizeSeries::read_from(&sp).unwrap(), sizes);

    let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.5, -2.0, 3.25, 1e-3]);
    let tp = dir.path().join("t.f32");
    t.write(&tp).unwrap();
    assert_eq!(Tensor::read(&tp).unwrap(), t);
}

#[test]
fn synth_partition_matches_plan_and_flip_rate() {
    let spec = SynthSpec {
        ligand_atoms: 5,
        protein_atoms: 40,
        subtype_plan: vec![
            PlannedSubtype {
                atom_count: 3,
                flip_rate: 0.0,
            },
            PlannedSubtype {
                atom_count: 2,
                flip_rate: 0.4,
            },
        ],
        frames: 5000,
        seed: 9,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let map = build_subtype_map(&out.topology, 0.10).unwrap();
    let sizes: Vec<usize> = map.subtype_members.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![3, 2]);
    assert_eq!(out.ground_truth.flip_rates[&1], 0.4);

    // the z coordinate tells "in" (≈ 4.5) from "out" (≈ 0)
    let state = |t: usize, atom: usize| out.trajectory.frame(t)[atom][2] > 2.25;
    for &atom in &map.subtype_members[0] {
        assert!((0..spec.frames).all(|t| state(t, atom)));
    }
    for &atom in &map.subtype_members[1] {
        let flips = (1..spec.frames).filter(|&t| state(t, atom) != state(t - 1, atom)).count();
        let freq = flips as f64 / (spec.frames - 1) as f64;
        assert!((freq - 0.4).abs() <= 0.02, "atom {atom}: flip frequency {freq}");
    }
}

#[test]
fn svg_output_is_stable() {
    let rows = vec![
        ("subtype 0".to_string(), vec![1.0, 5.0, 10.0]),
        ("reference".to_string(), vec![10.0, 10.0, 10.0]),
    ];
    let a = render::heat_strips(&rows, 10.0);
    assert_eq!(a, render::heat_strips(&rows, 10.0));
    assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    let scatter = render::pca_scatter("latent", &[vec![0.0, 1.0], vec![1.0, 0.0]], &[0, -1]);
    assert_eq!(scatter.matches("<circle").count(), 2);
    assert!(scatter.contains("#bbbbbb"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let out = castelo(&["run", "--bogus-flag"], root);
    assert_eq!(out.status.code(), Some(1));

    let out = castelo(&["synth", "--out", "in", "--frames", "120"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // missing trajectory file is an input error
    let out = castelo(
        &["subtype", "--topology", "in/topology.json", "--trajectory", "in/nope.xyz", "--workdir", "w"],
        root,
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!error_kind(&out.stderr).is_empty());

    // malformed trajectory
    std::fs::write(root.join("bad.xyz"), "3\nframe 0\nC 0 0\n").unwrap();
    let out = castelo(
        &["subtype", "--topology", "in/topology.json", "--trajectory", "bad.xyz", "--workdir", "w"],
        root,
    );
    assert_eq!(out.status.code(), Some(2));

    // invalid config value
    let out = castelo(
        &["subtype", "--topology", "in/topology.json", "--trajectory", "in/trajectory.xyz", "--tolerance", "1.5"],
        root,
    );
    assert_eq!(out.status.code(), Some(1));

    let out = castelo(&["fep", "crs", "--ddf", "-11.7", "--ref", "-6.9"], root);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["log10_crs"].as_f64().unwrap() - 3.38).abs() < 0.02);
}

#[test]
fn workdir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(castelo(&["synth", "--out", "in", "--frames", "100"], root).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_castelo"))
        .args(["subtype", "--topology", "in/topology.json", "--trajectory", "in/trajectory.xyz"])
        .current_dir(root)
        .env("CASTELO_WORKDIR", root.join("envwork"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("envwork/subtype/subtype_map.json").exists());
}
