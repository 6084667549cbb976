//! The `privsphere` binary: exit codes, stdout documents and stderr errors.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use privsphere::access_log::{to_json_lines, CheckpointSigner, LogOutcome, LogPayload, OwnerLog};
use privsphere::audit::{AuditVerdict, Ttp};
use privsphere::crypto::{KeyFile, SealingKeyPair, SigningKeyPair};
use privsphere::ids::{FieldId, OwnerId, RecordId, ServiceId};
use privsphere::pdl::MethodRef;
use privsphere::rng::seeded;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_privsphere"));
    c.current_dir(repo());
    c
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout not JSON ({e}): {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().unwrap_or_else(|| panic!("empty stderr"));
    serde_json::from_str(last).unwrap_or_else(|e| panic!("stderr not JSON ({e}): {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_reports_the_single_camera_care_warning() {
    let o = run(&["pdl", "validate", "fixtures/camera_care.pdl"]);
    assert_eq!(o.status.code(), Some(0));
    let report = stdout_json(&o);
    assert_eq!(report["errors"], json!([]));
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(report["warnings"][0]["location"], "Camera.stream");
}

#[test]
fn invalid_and_unparseable_models_fail_with_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pdl");
    std::fs::write(&bad, "class A {\n  <<mandatory=\"B.missing\">>\n  int x;\n}\n").unwrap();
    let o = run(&["pdl", "validate", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stdout_json(&o)["errors"].as_array().unwrap().is_empty());
    assert_eq!(stderr_json(&o)["error"], "InvalidModel");

    let broken = dir.path().join("broken.pdl");
    std::fs::write(&broken, "class A {\n  int x\n}\n").unwrap();
    let o = run(&["pdl", "validate", p(&broken)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "ParseError");
    assert_eq!(err["detail"]["line"], 3);

    let o = run(&["pdl", "compile", p(&bad), "--policy", "x", "--monitor", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "InvalidModel");
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["pdl"][..], &["frobnicate"], &["keys", "gen", "--role", "admin"], &["log", "verify", "only-one"]] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&o)["error"], "Usage");
    }
    let o = run(&["keys", "gen", "--role", "owner", "--anchor", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["cloud", "run", "--store", "x", "--platform-key", "y"]).env_remove("CLOUD_MASTER_SECRET").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("CLOUD_MASTER_SECRET"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn compile_is_byte_stable_and_renders_like_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let (pol, mon) = (dir.path().join(format!("p{i}.json")), dir.path().join(format!("m{i}.json")));
        let o = run(&["pdl", "compile", "fixtures/camera_care.pdl", "--policy", p(&pol), "--monitor", p(&mon)]);
        assert_eq!(o.status.code(), Some(0));
        outputs.push((std::fs::read(&pol).unwrap(), std::fs::read(&mon).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let doc: Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(doc["choices"].as_array().unwrap().len(), 1);
    assert_eq!(doc["choices"][0]["use_option_text"], "Ad funded service");
    assert_eq!(doc["choices"][0]["not_used_option_text"], "Fee is $1 per Month");

    let from_json = run(&["policy", "render", p(&dir.path().join("p0.json"))]);
    let from_model = run(&["policy", "render", "fixtures/camera_care.pdl"]);
    assert_eq!(from_json.status.code(), Some(0));
    assert_eq!(from_json.stdout, from_model.stdout);
    assert!(String::from_utf8_lossy(&from_json.stdout).contains("Fee is $1 per Month"));
}

#[test]
fn key_files_hold_the_role_and_public_output_hides_secrets() {
    let dir = tempfile::tempdir().unwrap();
    for role in ["owner", "service", "platform", "ttp"] {
        let out = dir.path().join(format!("{role}.json"));
        let o = run(&["keys", "gen", "--role", role, "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0));
        let public = String::from_utf8(o.stdout).unwrap();
        assert!(!public.contains("secret"), "{public}");
        let file: KeyFile = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        let sealing = matches!(role, "owner" | "service");
        assert_eq!(file.sealing().is_some(), sealing);
        assert_eq!(file.signing().is_some(), !sealing);
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(std::fs::metadata(&out).unwrap().permissions().mode() & 0o777, 0o600);
        }
        // Never overwrites an existing key.
        assert_eq!(run(&["keys", "gen", "--role", role, "--out", p(&out)]).status.code(), Some(1));
    }
}

#[test]
fn audit_signs_with_the_ttp_key_and_fails_leaky_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("ttp.json");
    let anchor = dir.path().join("anchor.json");
    assert!(run(&["keys", "gen", "--role", "ttp", "--out", p(&key), "--anchor", p(&anchor)]).status.success());
    let o = run(&["audit", "run", "fixtures/camera_care.pdl", "fixtures/camera_care.script.json", "--ttp-key", p(&key), "--at", "42"]);
    assert_eq!(o.status.code(), Some(0));
    let verdict: AuditVerdict = serde_json::from_slice(&o.stdout).unwrap();
    let anchor: Value = serde_json::from_slice(&std::fs::read(&anchor).unwrap()).unwrap();
    let pk = serde_json::from_value(anchor["ttp_public_key"].clone()).unwrap();
    assert!(verdict.verify(&pk));
    assert_eq!((verdict.service_id.as_str(), verdict.audited_at), ("camera_care", 42));

    let o = run(&["audit", "run", "fixtures/camera_care.pdl", "fixtures/camera_care_leaky.script.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        stdout_json(&o)["result"]["violations"],
        json!([{"kind": "UndeclaredRead", "method": "Analysis.healthCritical", "attribute": "Camera.stream"}])
    );
    assert_eq!(stderr_json(&o)["error"], "AuditFailed");
}

#[test]
fn bundled_scenarios_pass_and_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["assisted_living", "emergency_truth_table", "epoch_rotation"] {
        let file = format!("scenarios/{name}.scenario");
        let out = dir.path().join(format!("{name}.json"));
        let a = run(&["scenario", "run", &file, "--out", p(&out)]);
        let b = run(&["scenario", "run", &file]);
        assert_eq!(a.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(std::fs::read(&out).unwrap(), a.stdout);
        assert_eq!(stdout_json(&a)["passed"], true);
    }
}

#[test]
fn scenario_failures_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.scenario");
    std::fs::write(&empty, r#"{"name": "empty", "seed": 1}"#).unwrap();
    let o = run(&["scenario", "run", p(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["steps"], json!([]));

    let failing = dir.path().join("failing.scenario");
    std::fs::write(
        &failing,
        r#"{"name": "f", "seed": 1, "owners": [{"id": "o"}], "expectations": [{"expect": "log_count", "owner": "o", "equals": 3}]}"#,
    )
    .unwrap();
    let o = run(&["scenario", "run", p(&failing)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["summary"]["expectations_failed"], 1);
    assert_eq!(stderr_json(&o)["error"], "ScenarioFailed");

    let malformed = dir.path().join("bad.scenario");
    std::fs::write(&malformed, r#"{"name": "x"}"#).unwrap();
    let o = run(&["scenario", "run", p(&malformed)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "MalformedScenario");
    assert!(o.stdout.is_empty());
}

struct LogFiles {
    _dir: tempfile::TempDir,
    log: PathBuf,
    checkpoints: PathBuf,
    platform_hex: String,
    anchor: PathBuf,
}

fn log_files(n: u64) -> LogFiles {
    let mut rng = seeded(77);
    let owner = SealingKeyPair::generate(&mut rng);
    let platform = SigningKeyPair::generate(&mut rng);
    let ttp = Ttp::new(SigningKeyPair::generate(&mut rng));
    let mut log = OwnerLog::new(OwnerId::from("alice"), owner.public);
    for i in 0..n {
        let payload = LogPayload {
            timestamp: i,
            service_id: ServiceId::from("camera-care"),
            method: Some(MethodRef::new("Analysis", "healthCritical")),
            attribute: FieldId::from("Camera.location"),
            purpose: "p".into(),
            outcome: LogOutcome::Value,
            record_ids: vec![RecordId::new(format!("alice-{i:08}"))],
        };
        log.append(&mut rng, &platform, &payload, Some(&ttp as &dyn CheckpointSigner));
    }
    log.close(&ttp);
    let dir = tempfile::tempdir().unwrap();
    let files = LogFiles {
        log: dir.path().join("log.jsonl"),
        checkpoints: dir.path().join("checkpoints.jsonl"),
        platform_hex: platform.public().to_string(),
        anchor: dir.path().join("anchor.json"),
        _dir: dir,
    };
    std::fs::write(&files.log, to_json_lines(&log.entries)).unwrap();
    std::fs::write(&files.checkpoints, to_json_lines(&log.checkpoints)).unwrap();
    std::fs::write(&files.anchor, json!({"ttp_public_key": ttp.public_key()}).to_string()).unwrap();
    files
}

fn verify(f: &LogFiles) -> Output {
    run(&["log", "verify", p(&f.log), p(&f.checkpoints), "--platform-key", &f.platform_hex, "--trust-anchor", p(&f.anchor)])
}

#[test]
fn log_verify_accepts_intact_logs_and_reports_tamper_index() {
    let f = log_files(10);
    let o = verify(&f);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o), json!({"status": "OK", "entries": 10, "checkpoints": 1}));

    let text = std::fs::read_to_string(&f.log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut entry: Value = serde_json::from_str(&lines[6]).unwrap();
    entry["seq"] = json!(60);
    lines[6] = entry.to_string();
    std::fs::write(&f.log, lines.join("\n") + "\n").unwrap();
    let o = verify(&f);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "VerificationFailed");
    assert_eq!(err["detail"]["index"], 6);
    assert_eq!(stdout_json(&o)["index"], 6);
}

#[test]
fn log_verify_rejects_the_wrong_trust_anchor() {
    let f = log_files(3);
    std::fs::write(&f.anchor, json!({"ttp_public_key": f.platform_hex}).to_string()).unwrap();
    let o = verify(&f);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["reason"]["kind"], "CheckpointSignature");
}

// Processes and sockets from here on.

struct Killer(Child);

impl Drop for Killer {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_listening(port: u16, child: &mut Child) {
    let start = Instant::now();
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        if let Ok(Some(status)) = child.try_wait() {
            panic!("server exited early with {status}");
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server on {port} never came up");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn spawn_server(args: &[&str], env: &[(&str, &str)], port: u16) -> Killer {
    let mut cmd = bin();
    cmd.args(args).stdout(Stdio::null()).stderr(Stdio::null());
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().unwrap();
    wait_listening(port, &mut child);
    Killer(child)
}

fn http(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let client = reqwest::Client::new();
        let mut req = client.request(method.parse().unwrap(), url);
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let bytes = resp.bytes().await.unwrap();
        (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() })
    })
}

#[test]
fn servers_run_from_the_command_line_and_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let key = |name: &str, role: &str| {
        let path = d.join(format!("{name}.key.json"));
        let mut args = vec!["keys", "gen", "--role", role, "--out", p(&path)];
        let anchor = d.join("anchor.json");
        if role == "ttp" {
            args.extend(["--anchor", p(&anchor)]);
        }
        assert!(bin().args(&args).output().unwrap().status.success());
        path
    };
    let ttp = key("ttp", "ttp");
    let platform = key("platform", "platform");
    key("alice", "owner");
    std::fs::write(
        d.join("gateway.json"),
        json!({"owner": "alice", "owner_key": "alice.key.json", "trust_anchor": "anchor.json", "state_dir": "state"}).to_string(),
    )
    .unwrap();

    let cloud_port = free_port();
    let cloud_url = format!("http://127.0.0.1:{cloud_port}");
    let store = d.join("cloud.json");
    let cloud_args = ["cloud", "run", "--store", p(&store), "--platform-key", p(&platform), "--ttp-key", p(&ttp)];
    let cloud = spawn_server(&cloud_args, &[("CLOUD_MASTER_SECRET", "c-secret"), ("CLOUD_LISTEN", &format!("127.0.0.1:{cloud_port}"))], cloud_port);

    let o = run(&["service", "submit", "fixtures/camera_care.pdl", "fixtures/camera_care.script.json", "--cloud", &cloud_url, "--service-id", "camera-care"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["verdict"]["result"]["result"], "PASS");

    let gw_port = free_port();
    let gw_url = format!("http://127.0.0.1:{gw_port}");
    let gateway_config = d.join("gateway.json");
    let gw_args = ["gateway", "run", "--config", p(&gateway_config), "--endpoint", &cloud_url];
    let gw_env = [("PEP_MASTER_SECRET", "g-secret"), ("PEP_LISTEN", &*format!("127.0.0.1:{gw_port}"))];
    let gateway = spawn_server(&gw_args, &gw_env, gw_port);

    let ingest = |value: &str, at: u64| {
        let reading = json!({"owner": "alice", "device": "cam", "field": "Camera.location", "value": value, "timestamp": at});
        let (status, body) = http("POST", &format!("{gw_url}/ingest"), Some(reading));
        assert_eq!(status, 200, "{body}");
        body
    };
    assert_eq!(ingest("kitchen", 10)["record_id"], "alice-00000000");
    let (status, consent) = http(
        "POST",
        &format!("{gw_url}/consent/camera-care"),
        Some(json!({"selections": {"Analysis.getPersonalizedAd": "NotUsed"}})),
    );
    assert_eq!(status, 200, "{consent}");
    drop(gateway);

    // The restarted gateway continues numbering and keeps serving the consent.
    let _gateway = spawn_server(&gw_args, &gw_env, gw_port);
    assert_eq!(ingest("hall", 20)["record_id"], "alice-00000001");
    let (status, result) =
        http("POST", &format!("{cloud_url}/invoke/camera-care/Analysis.healthCritical"), Some(json!({"owner": "alice"})));
    assert_eq!(status, 200, "{result}");
    let location = result["accesses"].as_array().unwrap().iter().find(|a| a["attribute"] == "Camera.location").unwrap();
    assert_eq!(location["outcome"]["outcome"], "Value", "{location}");
    assert_eq!(location["outcome"]["values"].as_array().unwrap().len(), 2);

    let (status, _) = http("POST", &format!("{cloud_url}/log/alice/checkpoint"), None);
    assert_eq!(status, 200);
    let out_dir = d.join("export");
    let o = run(&["log", "fetch", "alice", "--cloud", &cloud_url, "--out-dir", p(&out_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let platform_pub = std::fs::read_to_string(out_dir.join("platform.pub")).unwrap();
    // The exported key works both as a file and inline.
    for key in [p(&out_dir.join("platform.pub")), platform_pub.trim()] {
        let o = run(&[
            "log",
            "verify",
            p(&out_dir.join("log.jsonl")),
            p(&out_dir.join("checkpoints.jsonl")),
            "--platform-key",
            key,
            "--trust-anchor",
            p(&d.join("anchor.json")),
        ]);
        assert_eq!(o.status.code(), Some(0), "{key}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout_json(&o)["entries"], 2);
    }

    // The cloud store also survives a restart.
    drop(cloud);
    let _cloud = spawn_server(&cloud_args, &[("CLOUD_MASTER_SECRET", "c-secret"), ("CLOUD_LISTEN", &format!("127.0.0.1:{cloud_port}"))], cloud_port);
    let (status, log) = http("GET", &format!("{gw_url}/log"), None);
    assert_eq!(status, 200, "{log}");
    assert_eq!(log["verification"]["status"], "OK");
    assert_eq!(log["entries"].as_array().unwrap().len(), 2);
    assert!(log["entries"].as_array().unwrap().iter().all(|e| e["payload"]["service_id"] == "camera-care"));
}
