use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{Value, json};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taskreflect"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn analyze_demo(out: &Path, extra: &[&str]) -> Output {
    let recording = fixtures().join("demo-recording.json");
    let script = fixtures().join("demo-script.json");
    let mut args = vec![
        "analyze",
        "--video",
        recording.to_str().unwrap(),
        "--provider",
        "mock",
        "--script",
        script.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn only_session(out: &Path) -> PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs[0].clone()
}

#[test]
fn analyze_prints_summary_with_default_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze_demo(tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("interval=5 batch=20 segments=3"), "{text}");
    assert!(text.contains("state        ready"));
    assert!(text.contains("actions      8"));
    assert!(text.contains("suggestions  2"));
    assert!(text.contains("extract=") && text.contains("trace=") && text.contains("advise="));

    let dir = only_session(tmp.path());
    let queue: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("suggestions.json")).unwrap()).unwrap();
    assert!(queue["items"].as_array().unwrap().len() <= 3);
    assert_eq!(queue["revealed"], 0);
}

#[test]
fn analyze_json_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze_demo(tmp.path(), &["--json", "--interval", "10", "--crop", "0,0,320,180"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["state"], "ready");
    assert_eq!(v["config"]["interval_s"], 10.0);
    assert_eq!(v["config"]["crop"], json!({"x": 0, "y": 0, "width": 320, "height": 180}));
    assert_eq!(v["sampling"]["frame_count"], 7);
    assert_eq!(v["suggestion_count"], 2);
}

#[test]
fn mock_without_script_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--video", "x.mp4", "--provider", "mock", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
}

#[test]
fn bad_flags_exit_2() {
    for args in [
        vec!["analyze", "--video", "x", "--provider", "mock", "--script", "s", "--out", "o", "--crop", "1,2,3"],
        vec!["analyze", "--video", "x", "--provider", "mock", "--script", "s", "--out", "o", "--batch-size", "0"],
        vec!["analyze", "--video", "x", "--provider", "carrier-pigeon", "--out", "o"],
        vec!["analyze", "--video", "x", "--provider", "http", "--out", "o"],
        vec!["serve", "--port", "70000", "--data-dir", "d", "--provider", "mock", "--script", "s"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_recording_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let script = fixtures().join("demo-script.json");
    let out = run(&[
        "analyze",
        "--video",
        "/nonexistent/recording.mp4",
        "--provider",
        "mock",
        "--script",
        script.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn http_provider_without_key_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let recording = fixtures().join("demo-recording.json");
    let out = bin()
        .args(["analyze", "--video", recording.to_str().unwrap(), "--provider", "http"])
        .args(["--endpoint", "http://127.0.0.1:9/v1", "--model", "m", "--api-key-env", "TASKREFLECT_TEST_NO_SUCH_KEY"])
        .arg("--out")
        .arg(tmp.path())
        .env_remove("TASKREFLECT_TEST_NO_SUCH_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TASKREFLECT_TEST_NO_SUCH_KEY"));
}

#[test]
fn failed_analysis_exits_1_and_suggest_refuses() {
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("empty.json");
    std::fs::write(&script, r#"{"vision": [], "text": []}"#).unwrap();
    let recording = fixtures().join("demo-recording.json");
    let data = tmp.path().join("data");
    let out = run(&[
        "analyze",
        "--video",
        recording.to_str().unwrap(),
        "--provider",
        "mock",
        "--script",
        script.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("error        tracing: "), "{}", stdout(&out));

    let session = only_session(&data);
    let out = run(&["suggest", "--session", session.to_str().unwrap(), "--next"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn suggest_reveals_in_order_then_exhausts() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(analyze_demo(tmp.path(), &[]).status.success());
    let session = only_session(tmp.path());
    let s = session.to_str().unwrap();

    let listed = run(&["suggest", "--session", s]);
    assert!(listed.status.success());
    assert!(stdout(&listed).contains("No suggestions revealed yet"));

    let first = run(&["suggest", "--session", s, "--next"]);
    assert!(first.status.success());
    let first = stdout(&first);
    assert!(first.starts_with("## Suggestion 1 of 2"), "{first}");
    assert!(first.contains("**Benefit:** Original: 8 steps, Suggested: 2 steps"));

    let second = run(&["suggest", "--session", s, "--next", "--json"]);
    let second: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(second["index"], 1);
    assert_eq!(second["remaining"], 0);

    let third = run(&["suggest", "--session", s, "--next"]);
    assert!(third.status.success());
    assert!(stdout(&third).contains("No more suggestions"));
    let third = run(&["suggest", "--session", s, "--next", "--json"]);
    assert_eq!(serde_json::from_slice::<Value>(&third.stdout).unwrap(), json!({"exhausted": true}));

    let listed = run(&["suggest", "--session", s, "--json"]);
    let listed: Value = serde_json::from_slice(&listed.stdout).unwrap();
    assert_eq!(listed["revealed"], 2);
    assert_eq!(listed["items"].as_array().unwrap().len(), 2);
    let again = run(&["suggest", "--session", s]);
    assert_eq!(stdout(&again).matches("## Suggestion").count(), 2);
}

fn write_annotations(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn eval_perfect_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("perfect.jsonl");
    write_annotations(
        &path,
        &[
            json!({"session_id": "a", "truth": ["bold", "add_row"], "predicted": ["bold", "add_row"]}),
            json!({"session_id": "b", "truth": ["share_link"], "predicted": ["share_link"]}),
        ],
    );
    let out = run(&["eval", "--annotations", path.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scores"]["f1"]["mean"], 1.0);
    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("perfect.jsonl.report.json")).unwrap()).unwrap();
    assert_eq!(written, v);
}

#[test]
fn eval_ten_sessions_matches_hand_f1() {
    // Five perfect sessions (F1 = 1), three missing one of four tasks
    // (P = 1, R = 3/4, F1 = 6/7), two with two hits, two misses and two false
    // alarms (F1 = 1/2). Mean F1 = (5 + 18/7 + 1) / 10 = 6/7.
    let truth = json!(["open_file", "bold", "add_values", "rename_sheet"]);
    let mut rows = Vec::new();
    for i in 0..5 {
        rows.push(json!({"session_id": format!("p{i}"), "truth": truth, "predicted": truth}));
    }
    for i in 0..3 {
        rows.push(json!({"session_id": format!("m{i}"), "truth": truth, "predicted": ["open_file", "bold", "add_values"]}));
    }
    for i in 0..2 {
        rows.push(json!({"session_id": format!("h{i}"), "truth": truth, "predicted": ["open_file", "bold", "new_sheet", "share_link"]}));
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ten.jsonl");
    write_annotations(&path, &rows);
    let report = tmp.path().join("out.json");
    let out = run(&["eval", "--annotations", path.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("f1"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let f1 = v["scores"]["f1"]["mean"].as_f64().unwrap();
    assert!((f1 - 6.0 / 7.0).abs() < 1e-12, "{f1}");
    assert_eq!(v["scores"]["sessions"], 10);
}

#[test]
fn eval_with_agreement_and_timings() {
    let dir = fixtures().join("eval");
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.json");
    let out = run(&[
        "eval",
        "--annotations",
        dir.join("annotations.jsonl").to_str().unwrap(),
        "--agreement",
        dir.join("agreement.json").to_str().unwrap(),
        "--timings",
        dir.join("timings.json").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--json",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["agreement"]["pooled"]["n"], 24);
    assert!(v["runtime_fit"]["r_squared"].as_f64().unwrap() > 0.9);
    assert_eq!(v["miss_rates"][0]["label"], "bold");
}

#[test]
fn eval_rejects_empty_and_malformed_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    assert_eq!(run(&["eval", "--annotations", empty.to_str().unwrap()]).status.code(), Some(1));

    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"session_id\": \"a\", \"truth\": [], \"predicted\": []}\n{\"session_id\": \"b\", \"truth\": [\"bold\"\n").unwrap();
    let out = run(&["eval", "--annotations", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.jsonl:2:"), "{err}");
    assert!(!err.contains("line 1"), "{err}");

    let label = tmp.path().join("label.jsonl");
    std::fs::write(&label, "{\"session_id\": \"a\", \"truth\": [\"juggling\"], \"predicted\": []}\n").unwrap();
    assert_eq!(run(&["eval", "--annotations", label.to_str().unwrap()]).status.code(), Some(1));
}

fn get(addr: &str, path: &str) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nhost: {addr}\r\nconnection: close\r\n\r\n").unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    (head.split_whitespace().nth(1).unwrap().parse().unwrap(), serde_json::from_str(body).unwrap())
}

#[test]
fn serve_answers_and_stops_on_sigint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = bin()
        .args(["serve", "--port", "0", "--provider", "mock"])
        .arg("--data-dir")
        .arg(tmp.path().join("data"))
        .arg("--script")
        .arg(fixtures().join("demo-script.json"))
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut reader = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert!(line.starts_with("listening on http://127.0.0.1:"), "{line}");
    let addr = line.split_whitespace().nth(2).unwrap().trim_start_matches("http://").to_owned();

    let (status, body) = get(&addr, "/sessions/0123456789abcdef0123456789abcdef");
    assert_eq!(status, 404);
    assert_eq!(body["code"], "not_found");

    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
}
