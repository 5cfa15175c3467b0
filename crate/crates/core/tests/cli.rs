use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn efllm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efllm")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn help_lists_every_command() {
    let o = efllm(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["gen-data", "pretrain", "train", "continual", "infer", "chat", "sweep", "anova", "eval"] {
        assert!(text.contains(c), "{c} missing from help");
    }
}

#[test]
fn unknown_config_key_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = efllm(&["gen-data", "--out", &s(&out), "--set", "data.colour=blue"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0, "staging dir left behind");
}

#[test]
fn missing_input_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let o = efllm(&["eval", "--out", &s(&out), "--data", "/nonexistent/d", "--model", "/nonexistent/m"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn gen_data_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = efllm(&["gen-data", "--out", &s(&out), "--seed", seed, "--set", "data.days=20"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("dataset.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_ne!(a, run("c", "2"));
    let cfg = std::fs::read_to_string(tmp.path().join("a/config.ini")).unwrap();
    assert!(cfg.contains("seed = 1"));
}

#[test]
fn chat_answers_each_prompt_and_writes_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    let o = efllm(&["pretrain", "--out", &s(&base), "--examples", "40", "--epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = tmp.path().join("chat");
    let mut child = Command::new(env!("CARGO_BIN_EXE_efllm"))
        .args(["chat", "--out", &s(&out), "--model", &s(&base.join("checkpoint")), "--set", "decode.max_new=8"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"what is the total energy of forecasts 2.00 3.50 with step 1\n\nhello there\nexit\nnever read\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);

    let transcript = std::fs::read_to_string(out.join("transcript.tsv")).unwrap();
    let roles: Vec<&str> = transcript.lines().filter_map(|l| l.split('\t').next()).collect();
    assert_eq!(roles.iter().filter(|r| **r == "user").count(), 2);
    assert!(roles.contains(&"function"));
    assert!(transcript.contains("forecast energy is 5.50 kWh"));
    assert!(!transcript.contains("never read"));
}
