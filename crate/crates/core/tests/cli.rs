use std::fs;
use std::path::{Path, PathBuf};

use splatex::cli::{self, EvalReport, GAUSSIANS_BIN, GAUSSIANS_PLY};
use splatex::mesh::{bake_position_texture, read_obj};
use splatex::synth::Manifest;
use splatex::texture::GaussianTexture;

const TINY_DATA: &[&str] = &[
    "identities=1",
    "expressions=3",
    "views=2",
    "heldout_views=1",
    "image_width=32",
    "image_height=32",
    "uv_size=16",
    "mesh_res=8",
];

const TINY_MODEL: &[&str] = &[
    "model.d=8",
    "model.heads=2",
    "model.p_uv=4",
    "model.p_img=8",
    "model.k=4",
];

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("splatex").chain(args.iter().copied()))
}

fn sets<'a>(pairs: &[&'a str]) -> Vec<&'a str> {
    pairs.iter().flat_map(|p| ["--set", p]).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["gen-data", "--out", s(&out)];
    let mut pairs = TINY_DATA.to_vec();
    pairs.extend_from_slice(extra);
    args.extend(sets(&pairs));
    assert_eq!(run(&args), 0);
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--dataset", s(data), "--out", s(out)];
    let mut pairs = TINY_MODEL.to_vec();
    pairs.extend_from_slice(extra);
    args.extend(sets(&pairs));
    run(&args)
}

fn manifest(root: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(root.join("manifest.json")).unwrap()).unwrap()
}

fn loss_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn gen_data_is_reproducible_and_complete() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = gen(a.path(), &["views=4", "expressions=8"]);
    let db = gen(b.path(), &["views=4", "expressions=8"]);
    let (ma, mb) = (manifest(&da), manifest(&db));
    assert_eq!(ma, mb);
    assert_eq!(ma.keys().filter(|k| k.ends_with(".ppm")).count(), 32);
}

#[test]
fn lr_zero_gives_a_flat_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let out = dir.path().join("run");
    assert_eq!(
        train(
            &data,
            &out,
            &["iterations=4", "lr=0", "resample_noise=false", "seed=3"]
        ),
        0
    );
    let rows = loss_rows(&out.join(cli::LOSS_CSV));
    assert_eq!(rows.len(), 4);
    // Columns: step, frame, lr, total, geometry, reg.
    let col = |r: &str, c: usize| r.split(',').nth(c).unwrap().to_string();
    let by_frame: Vec<(String, String)> = rows.iter().map(|r| (col(r, 1), col(r, 3))).collect();
    for (f, total) in &by_frame {
        for (g, other) in &by_frame {
            if f == g {
                assert_eq!(total, other);
            }
        }
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let full = dir.path().join("full");
    assert_eq!(
        train(&data, &full, &["iterations=4", "checkpoint_every=2"]),
        0
    );
    let part = dir.path().join("part");
    fs::create_dir_all(&part).unwrap();
    let ck = full.join(cli::checkpoint_name(2));
    assert!(ck.exists());
    let rows = loss_rows(&full.join(cli::LOSS_CSV));
    let mut log = format!(
        "step,frame,lr,total,geometry,reg\n{}\n{}\n",
        rows[0], rows[1]
    );
    fs::write(part.join(cli::LOSS_CSV), &log).unwrap();
    assert_eq!(
        run(&[
            "train",
            "--dataset",
            s(&data),
            "--out",
            s(&part),
            "--resume",
            s(&ck)
        ]),
        0
    );
    log = fs::read_to_string(part.join(cli::LOSS_CSV)).unwrap();
    assert_eq!(log, fs::read_to_string(full.join(cli::LOSS_CSV)).unwrap());
    assert_eq!(
        fs::read(part.join(cli::FINAL_CHECKPOINT)).unwrap(),
        fs::read(full.join(cli::FINAL_CHECKPOINT)).unwrap()
    );
}

fn read_ply_positions(path: &Path) -> Vec<[f32; 3]> {
    let bytes = fs::read(path).unwrap();
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .unwrap()
        + 11;
    let header = std::str::from_utf8(&bytes[..end]).unwrap();
    let props = header.lines().filter(|l| l.starts_with("property")).count();
    bytes[end..]
        .chunks_exact(props * 4)
        .map(|r| {
            let f = |k: usize| f32::from_le_bytes(r[k * 4..k * 4 + 4].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect()
}

#[test]
fn untrained_inference_returns_the_coarse_bake() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let run_dir = dir.path().join("run");
    assert_eq!(train(&data, &run_dir, &["iterations=0"]), 0);
    let out = dir.path().join("infer");
    let ck = run_dir.join(cli::FINAL_CHECKPOINT);
    assert_eq!(
        run(&[
            "infer",
            "--checkpoint",
            s(&ck),
            "--dataset",
            s(&data),
            "--out",
            s(&out),
            "--set",
            "frame=1"
        ]),
        0
    );
    let g = GaussianTexture::load(out.join(GAUSSIANS_BIN)).unwrap();
    let ply = read_ply_positions(&out.join(GAUSSIANS_PLY));
    assert_eq!(ply.len(), g.valid_count());
    let coarse = read_obj(data.join("frame_0001/coarse_mesh.obj")).unwrap();
    let (bake, _) = bake_position_texture(&coarse, 16, 16);
    let mut k = 0;
    for i in 0..16 {
        for j in 0..16 {
            if g.valid[i * 16 + j] {
                assert!(bake.is_valid(i, j));
                for c in 0..3 {
                    assert_eq!(ply[k][c], bake.texel(i, j)[c] as f32);
                }
                k += 1;
            }
        }
    }
    // Layout mismatch: a dataset with another texture size.
    let other = gen(&dir.path().join("other"), &["uv_size=32"]);
    assert_eq!(
        run(&[
            "infer",
            "--checkpoint",
            s(&ck),
            "--dataset",
            s(&other),
            "--out",
            s(&out)
        ]),
        3
    );
}

#[test]
fn ground_truth_evaluation_is_perfect_in_image_space() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let out = dir.path().join("metrics.json");
    assert_eq!(run(&["eval", "--dataset", s(&data), "--out", s(&out)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in [
        "source",
        "sigma_noise_mm",
        "frames",
        "mean_image",
        "mean_geometry",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["psnr", "ssim", "l1", "l2"] {
        assert!(v["mean_image"][key].is_number());
    }
    let r: EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.frames.len(), 3);
    assert_eq!(
        (
            r.mean_image.psnr,
            r.mean_image.ssim,
            r.mean_image.l1,
            r.mean_image.l2
        ),
        (99.0, 1.0, 0.0, 0.0)
    );
    // Mesh distances of the ground truth reflect bilinear extraction only.
    assert_eq!(r.mean_geometry.geometry_loss, 0.0);
    assert!(r.mean_geometry.pred_p2p_mm.is_finite());
}

#[test]
fn avatar_full_rank_and_monotone_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &["expressions=4"]);
    let out = dir.path().join("avatar");
    assert_eq!(
        run(&[
            "avatar",
            "--dataset",
            s(&data),
            "--out",
            s(&out),
            "--set",
            "k=3"
        ]),
        0
    );
    let r: cli::AvatarReport =
        serde_json::from_str(&fs::read_to_string(out.join("avatar_report.json")).unwrap()).unwrap();
    assert_eq!(r.sweep.len(), 4);
    assert!(r.sweep[3].error < 1e-5);
    assert!(r.sweep.windows(2).all(|w| w[1].error <= w[0].error + 1e-12));
    assert!(out.join(cli::GEM_MODEL).exists());
    assert_eq!(
        run(&[
            "avatar",
            "--dataset",
            s(&data),
            "--out",
            s(&out),
            "--set",
            "k=4"
        ]),
        3
    );
}

#[test]
fn edit_identities_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), &[]);
    let a = data.join("frame_0000/gt_texture.bin");
    let b = data.join("frame_0001/gt_texture.bin");
    let c = data.join("frame_0002/gt_texture.bin");
    let out = dir.path().join("edit");
    let ga = GaussianTexture::load(&a).unwrap();
    let edited = || GaussianTexture::load(out.join(cli::EDITED_BIN)).unwrap();

    assert_eq!(
        run(&[
            "edit",
            "interpolate",
            "--a",
            s(&a),
            "--b",
            s(&b),
            "--dataset",
            s(&data),
            "--out",
            s(&out),
            "--set",
            "gamma=0"
        ]),
        0
    );
    assert_eq!(edited(), ga);
    assert!(out.join("preview_00.ppm").exists() && out.join("preview_01.ppm").exists());

    let mask = dir.path().join("empty.pgm");
    splatex::avatar::TexelMask::new(16, 16).save(&mask).unwrap();
    assert_eq!(
        run(&[
            "edit",
            "swap",
            "--a",
            s(&a),
            "--b",
            s(&b),
            "--mask",
            s(&mask),
            "--out",
            s(&out)
        ]),
        0
    );
    assert_eq!(edited(), ga);

    assert_eq!(
        run(&[
            "edit",
            "transfer",
            "--a",
            s(&a),
            "--b",
            s(&c),
            "--c",
            s(&c),
            "--out",
            s(&out)
        ]),
        0
    );
    let e = edited();
    for t in 0..e.texels.len() {
        if e.valid[t] {
            let (x, y) = (e.texels[t].to_channels(), ga.texels[t].to_channels());
            assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }
    assert_eq!(
        run(&["edit", "swap", "--a", s(&a), "--b", s(&b), "--out", s(&out)]),
        2
    );
}

#[test]
fn bench_writes_one_row_per_view_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let args = [
        "bench-attention",
        "--out",
        s(&out),
        "--set",
        "views=[2,4,8]",
        "--set",
        "uv_tokens=[4,4]",
        "--set",
        "img_tokens=[4,4]",
        "--set",
        "k=4",
        "--set",
        "runs=1",
    ];
    assert_eq!(run(&args), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(text.lines().next(), Some("views,dense_ms,guided_ms,ratio"));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bench-attention", "--set", "nope=1"]), 2);
    assert_eq!(run(&["bench-attention", "--set", "runs=0"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    let missing = dir.path().join("missing");
    assert_eq!(
        run(&[
            "eval",
            "--dataset",
            s(&missing),
            "--out",
            s(&dir.path().join("m.json"))
        ]),
        3
    );
}
