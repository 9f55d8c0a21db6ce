//! End-to-end runs of the `mars` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mars")).args(args).output().expect("run mars")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn out_arg(dir: &Path, sub: &str) -> String {
    dir.join(sub).display().to_string()
}

/// Parses a versioned report: checks the header line, returns the CSV rows.
fn read_report(path: &Path, kind: &str) -> (Vec<String>, Vec<csv::StringRecord>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    assert_eq!(first, format!("# mars-report v1 {kind}"));
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let headers = r.headers().unwrap().iter().map(String::from).collect();
    (headers, r.records().map(|x| x.unwrap()).collect())
}

fn column(headers: &[String], name: &str) -> usize {
    headers.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn decode_writes_artifacts_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", "seed = 3\n[engine]\npresets = [\"table10-pyramid\", \"table8-best\"]\n");
    let cfg = cfg.to_str().unwrap();
    for sub in ["a", "b"] {
        let o = mars(&["decode", cfg, "--output-dir", &out_arg(tmp.path(), sub)]);
        ok(&o);
        assert!(String::from_utf8_lossy(&o.stdout).contains("tokens_per_sec="));
        for f in ["tokens.txt", "trace.jsonl", "config.toml"] {
            assert!(tmp.path().join(sub).join(f).is_file(), "{sub}/{f}");
        }
    }
    let a = std::fs::read(tmp.path().join("a/tokens.txt")).unwrap();
    let b = std::fs::read(tmp.path().join("b/tokens.txt")).unwrap();
    assert_eq!(a, b);
    // The echo is itself a valid config.
    let echo = tmp.path().join("a/config.toml");
    ok(&mars(&["decode", echo.to_str().unwrap(), "--output-dir", &out_arg(tmp.path(), "c")]));
    assert_eq!(a, std::fs::read(tmp.path().join("c/tokens.txt")).unwrap());
}

#[test]
fn long_protocol_trace_has_pyramid_refresh_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.toml",
        "[decode]\ngeneration_length = 128\nnum_steps = 128\nblock_length = 32\ntokens_per_step = 1\n\
         [engine]\nengine_kind = \"mars\"\npresets = [\"table10-pyramid\"]\n",
    );
    let out = out_arg(tmp.path(), "out");
    ok(&mars(&["decode", cfg.to_str().unwrap(), "--output-dir", &out]));
    let trace = std::fs::File::open(Path::new(&out).join("trace.jsonl")).unwrap();
    let trace = mars_core::diffusion::DecodeTrace::read_jsonl(std::io::BufReader::new(trace)).unwrap();
    let text: Vec<usize> = trace.refresh_counts().iter().map(|c| c.text).collect();
    assert_eq!(text, vec![2, 4, 8, 16]);

    // The cost report recomputes every recorded count from the plan.
    ok(&mars(&[
        "analyze",
        cfg.to_str().unwrap(),
        "--mode",
        "cost",
        "--trace",
        &Path::new(&out).join("trace.jsonl").display().to_string(),
        "--output-dir",
        &out,
    ]));
    let (h, rows) = read_report(&Path::new(&out).join("cost.csv"), "cost");
    assert_eq!(rows.len(), 128);
    let d = column(&h, "entries_delta");
    assert!(rows.iter().all(|r| &r[d] == "0"));
}

#[test]
fn invalid_configs_fail_with_the_field_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[decode]\nnum_stepz = 4\n");
    let o = mars(&["decode", cfg.to_str().unwrap(), "--output-dir", &out_arg(tmp.path(), "o")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_stepz"));

    let cfg = write_config(tmp.path(), "tau.toml", "[engine]\ntau_text = [48, 32, 16, 8]\ntau_visual = [48, 32, 16, 8]\n");
    let o = mars(&["decode", cfg.to_str().unwrap(), "--output-dir", &out_arg(tmp.path(), "o")]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("g=1"));
}

#[test]
fn bench_reports_agreement_and_entry_ratio() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bench.toml",
        "[[bench.engines]]\nengine_kind = \"vanilla\"\n\
         [[bench.engines]]\nlabel = \"mars-always\"\npresets = [\"always-refresh\"]\n\
         [[bench.engines]]\nlabel = \"mars-best\"\npresets = [\"table10-pyramid\", \"table8-best\"]\n",
    );
    let out = out_arg(tmp.path(), "out");
    ok(&mars(&["bench", cfg.to_str().unwrap(), "--output-dir", &out]));
    let (h, rows) = read_report(&Path::new(&out).join("bench.csv"), "bench");
    let (name, agree, ratio) = (column(&h, "engine"), column(&h, "agreement"), column(&h, "entry_ratio"));
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[1][name], "mars-always");
    assert_eq!(rows[1][agree].parse::<f64>().unwrap(), 1.0);
    assert!(rows[2][ratio].parse::<f64>().unwrap() <= 0.35);

    let empty = write_config(tmp.path(), "empty.toml", "");
    assert!(!mars(&["bench", empty.to_str().unwrap(), "--output-dir", &out]).status.success());
}

#[test]
fn analyze_modes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", "");
    let cfg = cfg.to_str().unwrap();
    let out = out_arg(tmp.path(), "out");
    let dir = Path::new(&out);

    ok(&mars(&["analyze", cfg, "--mode", "visibility", "--output-dir", &out]));
    let (h, rows) = read_report(&dir.join("visibility.csv"), "visibility");
    let v = column(&h, "visibility");
    assert_eq!(rows.len(), 1024);
    assert_eq!(&rows[0][v], "1024");
    assert_eq!(&rows[1023][v], "1");

    ok(&mars(&["analyze", cfg, "--mode", "relocation", "--output-dir", &out]));
    let (h, rows) = read_report(&dir.join("relocation.csv"), "relocation");
    let d = column(&h, "max_logit_delta");
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[d].parse::<f64>().unwrap() <= 1e-9));

    ok(&mars(&["analyze", cfg, "--mode", "sparsity", "--output-dir", &out]));
    assert_eq!(read_report(&dir.join("sparsity.csv"), "sparsity").1.len(), 8);

    ok(&mars(&["analyze", cfg, "--mode", "drift", "--output-dir", &out]));
    assert!(!read_report(&dir.join("drift.csv"), "drift").1.is_empty());

    ok(&mars(&["analyze", cfg, "--mode", "cost", "--output-dir", &out]));
    assert!(dir.join("config.toml").is_file());

    let o = mars(&["analyze", cfg, "--mode", "entropy", "--output-dir", &out]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("visibility") && err.contains("relocation"), "{err}");
}
