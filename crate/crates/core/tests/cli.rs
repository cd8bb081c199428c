use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pmcnet::cli::{gradcheck_exit, EXIT_CONFIG, EXIT_GRADCHECK, EXIT_IO, EXIT_OK};
use pmcnet::gradcheck::suite::Case;
use pmcnet::{Shape, Tensor};

fn pmcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmcnet")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let body = format!(
        "# tiny run\nn_images = 8\nsplits = 2,1,5\nhw = 32x32\nmax_iters = 0\ndata_dir = {}\nout_dir = {}\n{extra}",
        dir.join("data").display(),
        dir.join("out").display()
    );
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_writes_pairs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = pmcnet(&["gen-data", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_OK, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("manifest.txt"), "{out}");
    let files = dir_bytes(&tmp.path().join("data"));
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".ppm")).count(), 8);
    assert_eq!(files.iter().filter(|(n, _)| n.ends_with(".pgm")).count(), 8);
    assert!(files.iter().any(|(n, _)| n == "manifest.txt"));

    let again = tmp.path().join("again");
    let o = pmcnet(&["gen-data", "--config", &cfg, "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(dir_bytes(&again), files);

    let reseeded = tmp.path().join("reseeded");
    pmcnet(&["gen-data", "--config", &cfg, "--out", reseeded.to_str().unwrap(), "--seed", "99"]);
    assert_ne!(dir_bytes(&reseeded), files);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg").display().to_string();
    fs::write(&cfg, "hw = 30x30\n").unwrap();
    let o = pmcnet(&["gen-data", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(text(&o.stderr).contains("16"), "{}", text(&o.stderr));

    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let o = pmcnet(&["train", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(text(&o.stderr).contains("learning_rate"));

    fs::write(&cfg, "variants = baseline,pff+se\n").unwrap();
    let o = pmcnet(&["ablate", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(text(&o.stderr).contains("variants"));

    assert_eq!(code(&pmcnet(&["frobnicate"])), EXIT_CONFIG);
}

#[test]
fn missing_files_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = pmcnet(&["train", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_IO);
    let o = pmcnet(&["gen-data", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_OK);
    let missing = tmp.path().join("nope.pmcn");
    let o = pmcnet(&["eval", "--config", &cfg, "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_IO);
    assert!(text(&o.stderr).contains("nope.pmcn"));
    let o = pmcnet(&["gen-data", "--config", tmp.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_IO);
}

#[test]
fn untrained_eval_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    assert_eq!(code(&pmcnet(&["gen-data", "--config", &cfg])), EXIT_OK);
    let o = pmcnet(&["train", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_OK, "{}", text(&o.stderr));
    let out = tmp.path().join("out");
    assert_eq!(fs::read(out.join("loss.log")).unwrap(), b"");
    let o = pmcnet(&["eval", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_OK, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("mauc"));
    let first = (fs::read(out.join("report.txt")).unwrap(), fs::read(out.join("report.kv")).unwrap());
    pmcnet(&["eval", "--config", &cfg]);
    let second = (fs::read(out.join("report.txt")).unwrap(), fs::read(out.join("report.kv")).unwrap());
    assert_eq!(first, second);
    for line in text(&first.1).lines() {
        let (key, v) = line.split_once('=').unwrap();
        if !key.starts_with("positives") && v != "absent" {
            let v: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{line}");
        }
    }
}

#[test]
fn ablate_prints_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "variants = baseline,pff,pff+dab\nablation_seeds = 0\n");
    fs::write(
        &cfg,
        fs::read_to_string(&cfg).unwrap().replace("max_iters = 0", "max_iters = 2"),
    )
    .unwrap();
    assert_eq!(code(&pmcnet(&["gen-data", "--config", &cfg])), EXIT_OK);
    let o = pmcnet(&["ablate", "--config", &cfg]);
    assert_eq!(code(&o), EXIT_OK, "{}", text(&o.stderr));
    let table = fs::read_to_string(tmp.path().join("out").join("ablation.txt")).unwrap();
    assert_eq!(table, text(&o.stdout));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant\tparams\tEX\tHE\tMA\tSE\tmAUC\tdelta");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("baseline\t") && lines[1].ends_with("+0.00"));
    let params = |l: &str| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(params(lines[3]) > params(lines[1]));
}

#[test]
fn gradcheck_binary_passes_and_lists_ops() {
    let o = pmcnet(&["gradcheck"]);
    let out = text(&o.stdout);
    assert_eq!(code(&o), EXIT_OK, "{out}");
    let names: BTreeSet<&str> = out.lines().filter(|l| l.ends_with("\tok")).map(|l| l.split('\t').next().unwrap()).collect();
    assert!(names.len() >= 12, "{names:?}");
}

#[test]
fn corrupted_gradient_fails_with_op_name() {
    let broken = Case::new(
        "broken_square",
        vec![Tensor::vector(&[0.3, -0.7, 1.1])],
        Box::new(|g, v| {
            let value = g.value(v[0]).map(|x| x * x);
            // deliberately wrong: derivative of x^2 reported as x
            let y = g.custom(
                "broken_square",
                &[v[0]],
                value,
                Box::new(|inputs, _, go| vec![inputs[0].data().iter().zip(go).map(|(x, g)| x * g).collect()]),
            );
            Ok(g.sum(y))
        }),
    );
    let fine = Case::new(
        "sum",
        vec![Tensor::ones(Shape::new(1, 1, 2, 2))],
        Box::new(|g, v| Ok(g.sum(v[0]))),
    );
    let mut out = Vec::new();
    assert_eq!(gradcheck_exit(&[fine, broken], &mut out), EXIT_GRADCHECK);
    let out = text(&out);
    assert!(out.contains("broken_square\t") && out.contains("FAIL"), "{out}");
    assert!(out.lines().last().unwrap().contains("broken_square"));
}
