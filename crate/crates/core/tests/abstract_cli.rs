//! The `ddabs` binary end to end: file outputs, idempotency and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddabs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddabs")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const LINE_CONFIG: &str = r#"
seed = 3
output_dir = "OUT"

[system]
kind = "lti"
a = [[-1.0]]
b = [[1.0]]
tau = 1.0

[state]
lower = [-1.6]
upper = [1.6]
eta = [0.025]

[input]
levels = [[-1.0], [-0.5], [0.0], [0.5], [1.0]]

[scenario]
epsilon = 0.001
beta = 0.01

[objective]
kind = "reach_stay"
target = [{ lower = [-0.1], upper = [0.1] }]
initial = [1.3]

[refinement]
coarse_eta = [0.2]
max_halvings = 4

[simulation]
runs = 5
horizon = 30
disturbance = "zero"
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let out = dir.join("out");
    let text = text.replace("OUT", out.to_str().unwrap());
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE_CONFIG);
    let out = dir.path().join("out");
    let run_all = || {
        for cmd in ["estimate-lipschitz", "abstract", "synthesize", "simulate"] {
            let o = ddabs(&[cmd, &cfg]);
            assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        snapshot(&out)
    };
    let first = run_all();
    let second = run_all();
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for f in [
        "abstraction.txt",
        "controller.txt",
        "lipschitz.csv",
        "trajectories.csv",
        "abstract_summary.txt",
        "synthesize_summary.txt",
        "simulate_summary.txt",
    ] {
        assert!(names.contains(&f), "missing {f}");
    }
    assert_eq!(first, second);

    let summary = fs::read_to_string(out.join("synthesize_summary.txt")).unwrap();
    assert!(summary.contains("initial_winning = true"), "{summary}");
    let sim = fs::read_to_string(out.join("simulate_summary.txt")).unwrap();
    assert!(sim.contains("successes = 5"), "{sim}");
    let traj = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("run,t,x0,u0,cell,phase\n"));
}

#[test]
fn refinement_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LINE_CONFIG);
    let o = ddabs(&["refine-synthesize", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("success = true"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("out/refinement.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let c = dir.path().join("out/controller.txt");
    let c = c.to_str().unwrap();
    let o = ddabs(&["compare-winning", "--a", c, "--b", c]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("a_minus_b = 0") && stdout.contains("b_minus_a = 0"), "{stdout}");
}

#[test]
fn exhausted_refinement_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = LINE_CONFIG.replace("max_halvings = 4", "max_halvings = 1");
    let cfg = write_config(dir.path(), &text);
    let o = ddabs(&["refine-synthesize", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("success = false"));
}

#[test]
fn config_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), &format!("{LINE_CONFIG}\nbogus = 1\n"));
    assert_eq!(code(&ddabs(&["abstract", &unknown])), 1);

    let outside = write_config(dir.path(), &LINE_CONFIG.replace("initial = [1.3]", "initial = [3.0]"));
    assert_eq!(code(&ddabs(&["abstract", &outside])), 1);

    let bad_eps = write_config(dir.path(), &LINE_CONFIG.replace("epsilon = 0.001", "epsilon = 1.5"));
    assert_eq!(code(&ddabs(&["abstract", &bad_eps])), 1);

    assert_eq!(code(&ddabs(&["synthesize", "/nonexistent.toml"])), 1);
}

#[test]
fn sample_sizes() {
    let o = ddabs(&["sample-size", "--epsilon", "0.01", "--beta", "0.01", "--q", "6", "--pac"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "2122");
    let o = ddabs(&["sample-size", "--epsilon", "0.1", "--beta", "0.01", "--q", "1"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "44");
}

#[test]
fn shipped_sweeps_run() {
    let configs = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    for name in ["sweep_beta.toml", "sweep_eps.toml", "sweep_gamma.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let text = fs::read_to_string(configs.join(name)).unwrap();
        let text = text
            .lines()
            .map(|l| if l.starts_with("output_dir") { "output_dir = \"OUT\"" } else { l })
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = write_config(dir.path(), &text);
        assert_eq!(code(&ddabs(&["sweep", &cfg])), 0, "{name}");
        let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
        assert!(csv.lines().count() > 2);
    }
}
