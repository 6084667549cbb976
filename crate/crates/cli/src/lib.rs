//! Implementation of the `privsphere` command line. The binary only parses
//! arguments and maps [`CliError`] to an exit code.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use privsphere::access_log::{self, VerificationReport};
use privsphere::audit::{AccessScript, AuditResult, EmergencyDeclaration, Ttp};
use privsphere::canonical::to_canonical_json;
use privsphere::cloud::ServiceSubmission;
use privsphere::crypto::{KeyFile, KeyRole, SigningPublicKey};
use privsphere::gateway::{LocalStore, Pep, PrivacyConfiguration};
use privsphere::ids::{EndpointId, OwnerId, ServiceId, Timestamp};
use privsphere::pdl;
use privsphere::policy::{self, PolicyDocument};
use privsphere::scenario;

use privsphere_server::client::CloudClient;
use privsphere_server::cloud::{CloudConfig, CloudState, CloudStore};
use privsphere_server::gateway::{GatewayConfig, GatewayFiles, GatewayState};

pub const DEFAULT_TRUST_ANCHOR: &str = "trust/ttp.json";

#[derive(Debug, Parser)]
#[command(name = "privsphere", version, about = "Privacy enforcement for IoT data flowing into cloud services")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check or compile service models.
    #[command(subcommand)]
    Pdl(PdlCommand),
    /// Show a generated privacy policy.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Run the owner's enforcement gateway.
    #[command(subcommand)]
    Gateway(GatewayCommand),
    /// Run the cloud platform.
    #[command(subcommand)]
    Cloud(CloudCommand),
    /// Run a scenario file against in-process components.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Work with exported access logs.
    #[command(subcommand)]
    Log(LogCommand),
    /// Generate key files.
    #[command(subcommand)]
    Keys(KeysCommand),
    /// Audit a service script against its model.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Submit services to a running cloud platform.
    #[command(subcommand)]
    Service(ServiceCommand),
}

#[derive(Debug, Subcommand)]
pub enum ServiceCommand {
    /// Compile a model and submit it with its script; prints the registration.
    Submit {
        model: PathBuf,
        script: PathBuf,
        #[arg(long)]
        cloud: String,
        /// Defaults to the model's file stem.
        #[arg(long)]
        service_id: Option<ServiceId>,
        /// Emergency declarations (JSON array).
        #[arg(long)]
        declarations: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PdlCommand {
    /// Print the validation report; fails iff the model has errors.
    Validate { file: PathBuf },
    /// Write the policy document and monitoring specification.
    Compile {
        file: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        monitor: PathBuf,
        /// Defaults to the file stem.
        #[arg(long)]
        service_id: Option<ServiceId>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PolicyCommand {
    /// Render a policy document (JSON) or the policy of a `.pdl` model.
    Render {
        file: PathBuf,
        #[arg(long)]
        service_id: Option<ServiceId>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GatewayCommand {
    /// Serve the gateway API, forwarding protected readings to the cloud.
    Run(GatewayRun),
}

#[derive(Debug, Args)]
pub struct GatewayRun {
    /// Gateway configuration file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Base URL of the cloud platform.
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, env = "PEP_LISTEN", default_value = "127.0.0.1:7070")]
    pub listen: SocketAddr,
}

#[derive(Debug, Subcommand)]
pub enum CloudCommand {
    /// Serve the platform API: service registry, encrypted storage, invocation and logs.
    Run(CloudRun),
}

#[derive(Debug, Args)]
pub struct CloudRun {
    /// Single-file state store; created on first write.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, env = "CLOUD_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Platform signing key file (`keys gen --role platform`).
    #[arg(long)]
    pub platform_key: PathBuf,
    /// TTP key file; when given, this process also audits services and signs checkpoints.
    #[arg(long)]
    pub ttp_key: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_TRUST_ANCHOR)]
    pub trust_anchor: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Print the report; fails unless every expectation holds.
    Run {
        file: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LogCommand {
    /// Verify a JSON-lines log and its checkpoints.
    Verify {
        log: PathBuf,
        checkpoints: PathBuf,
        /// Platform key file, or the key in hex.
        #[arg(long)]
        platform_key: String,
        #[arg(long, default_value = DEFAULT_TRUST_ANCHOR)]
        trust_anchor: PathBuf,
    },
    /// Download an owner's log and checkpoints from the cloud.
    Fetch {
        owner: OwnerId,
        #[arg(long)]
        cloud: String,
        /// Receives `log.jsonl`, `checkpoints.jsonl` and `platform.pub`.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Owner,
    Service,
    Platform,
    Ttp,
}

impl From<RoleArg> for KeyRole {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Owner => KeyRole::Owner,
            RoleArg::Service => KeyRole::Service,
            RoleArg::Platform => KeyRole::Platform,
            RoleArg::Ttp => KeyRole::Ttp,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum KeysCommand {
    /// Print a fresh key file, or write it and print only the public half.
    Gen {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// For `ttp`: also write a trust-anchor file.
        #[arg(long)]
        anchor: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Print the verdict; fails on FAIL.
    Run {
        model: PathBuf,
        /// Access script (JSON).
        script: PathBuf,
        /// Defaults to the model's file stem.
        #[arg(long)]
        service_id: Option<ServiceId>,
        /// Emergency declarations (JSON array).
        #[arg(long)]
        declarations: Option<PathBuf>,
        /// Sign the verdict with this TTP key file.
        #[arg(long)]
        ttp_key: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        at: Timestamp,
    },
}

/// A failed command. `Usage` maps to exit code 2, everything else to 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure { error: String, message: String, detail: Option<Value> },
}

impl CliError {
    pub fn failure(error: &str, message: impl Into<String>) -> Self {
        CliError::Failure { error: error.into(), message: message.into(), detail: None }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure { .. } => 1,
        }
    }

    /// The machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        let v = match self {
            CliError::Usage(message) => json!({"error": "Usage", "message": message}),
            CliError::Failure { error, message, detail } => {
                let mut v = json!({"error": error, "message": message});
                if let Some(d) = detail {
                    v["detail"] = d.clone();
                }
                v
            }
        };
        serde_json::to_string(&v).expect("error serializes")
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::failure("Io", format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::failure("MalformedInput", format!("{}: {e}", path.display())))
}

fn canonical<T: Serialize>(v: &T) -> String {
    to_canonical_json(v).expect("value serializes")
}

fn stem_id(path: &Path) -> ServiceId {
    ServiceId::new(path.file_stem().map_or("service".into(), |s| s.to_string_lossy().into_owned()))
}

fn load_model(path: &Path) -> Result<pdl::PdlModel, CliError> {
    let text = read_text(path)?;
    pdl::parse_named(&path.display().to_string(), &text).map_err(|e| {
        let (line, col) = e.position();
        CliError::Failure {
            error: "ParseError".into(),
            message: format!("{}:{e}", path.display()),
            detail: Some(json!({"line": line, "col": col})),
        }
    })
}

/// `{"ttp_public_key": "<hex>"}`, shipped under `trust/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustAnchor {
    pub ttp_public_key: SigningPublicKey,
}

pub fn load_trust_anchor(path: &Path) -> Result<SigningPublicKey, CliError> {
    read_json::<TrustAnchor>(path).map(|a| a.ttp_public_key)
}

fn load_key_file(path: &Path) -> Result<KeyFile, CliError> {
    read_json(path)
}

/// Accepts a key file path or a hex-encoded key.
/// Accepts a key file, a file holding just the hex key (as `log fetch` writes), or the hex key itself.
fn signing_public_key(arg: &str) -> Result<SigningPublicKey, CliError> {
    let hex_key = |s: &str| serde_json::from_value::<SigningPublicKey>(Value::String(s.trim().to_string())).ok();
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::failure("Io", format!("{arg}: {e}")))?;
        if let Some(pk) = hex_key(&text) {
            return Ok(pk);
        }
        let file = load_key_file(path)?;
        return file
            .signing_public
            .ok_or_else(|| CliError::failure("WrongKeyRole", format!("{arg} holds no signing key")));
    }
    hex_key(arg).ok_or_else(|| CliError::Usage(format!("`{arg}` is neither a key file nor a hex key")))
}

/// Result of a command that finished: text for stdout and whether it counts as success.
pub struct Output {
    pub stdout: String,
    pub ok: bool,
    /// Error reported alongside a non-ok result.
    pub error: Option<CliError>,
}

impl Output {
    fn ok(stdout: String) -> Self {
        Self { stdout, ok: true, error: None }
    }

    fn failed(stdout: String, error: CliError) -> Self {
        Self { stdout, ok: false, error: Some(error) }
    }
}

pub fn run(cli: Cli) -> Result<Output, CliError> {
    match cli.command {
        Command::Pdl(PdlCommand::Validate { file }) => pdl_validate(&file),
        Command::Pdl(PdlCommand::Compile { file, policy, monitor, service_id }) => {
            pdl_compile(&file, &policy, &monitor, service_id)
        }
        Command::Policy(PolicyCommand::Render { file, service_id }) => policy_render(&file, service_id),
        Command::Gateway(GatewayCommand::Run(args)) => gateway_run(args),
        Command::Cloud(CloudCommand::Run(args)) => cloud_run(args),
        Command::Scenario(ScenarioCommand::Run { file, out }) => scenario_run(&file, out.as_deref()),
        Command::Log(LogCommand::Verify { log, checkpoints, platform_key, trust_anchor }) => {
            log_verify(&log, &checkpoints, &platform_key, &trust_anchor)
        }
        Command::Log(LogCommand::Fetch { owner, cloud, out_dir }) => log_fetch(&owner, &cloud, &out_dir),
        Command::Keys(KeysCommand::Gen { role, out, anchor }) => keys_gen(role.into(), out.as_deref(), anchor.as_deref()),
        Command::Audit(AuditCommand::Run { model, script, service_id, declarations, ttp_key, at }) => {
            audit_run(&model, &script, service_id, declarations.as_deref(), ttp_key.as_deref(), at)
        }
        Command::Service(ServiceCommand::Submit { model, script, cloud, service_id, declarations }) => {
            service_submit(&model, &script, &cloud, service_id, declarations.as_deref())
        }
    }
}

pub fn pdl_validate(file: &Path) -> Result<Output, CliError> {
    let report = pdl::validate(&load_model(file)?);
    let text = canonical(&report);
    if report.is_valid() {
        Ok(Output::ok(text))
    } else {
        let n = report.errors.len();
        Ok(Output::failed(text, CliError::failure("InvalidModel", format!("{} has {n} error(s)", file.display()))))
    }
}

fn compile(file: &Path, service_id: Option<ServiceId>) -> Result<(PolicyDocument, policy::MonitoringSpec), CliError> {
    let model = load_model(file)?;
    let id = service_id.unwrap_or_else(|| stem_id(file));
    let invalid = |e: policy::PolicyError| match e {
        policy::PolicyError::InvalidModel(r) => CliError::Failure {
            error: "InvalidModel".into(),
            message: format!("{} has {} error(s)", file.display(), r.errors.len()),
            detail: serde_json::to_value(&r).ok(),
        },
        other => CliError::failure("PolicyError", other.to_string()),
    };
    let doc = policy::generate_policy(&model, &id).map_err(invalid)?;
    let monitor = policy::generate_monitoring_spec(&model).map_err(invalid)?;
    Ok((doc, monitor))
}

pub fn pdl_compile(file: &Path, policy_out: &Path, monitor_out: &Path, service_id: Option<ServiceId>) -> Result<Output, CliError> {
    let (doc, monitor) = compile(file, service_id)?;
    write_file(policy_out, &canonical(&doc))?;
    write_file(monitor_out, &canonical(&monitor))?;
    let summary = json!({
        "policy": policy_out.display().to_string(),
        "monitor": monitor_out.display().to_string(),
        "choices": doc.choices.len(),
        "monitored_attributes": monitor.monitored.len(),
    });
    Ok(Output::ok(canonical(&summary)))
}

pub fn policy_render(file: &Path, service_id: Option<ServiceId>) -> Result<Output, CliError> {
    let doc = if file.extension().is_some_and(|e| e == "pdl") {
        compile(file, service_id)?.0
    } else {
        read_json::<PolicyDocument>(file)?
    };
    Ok(Output::ok(policy::render_policy_text(&doc)))
}

pub fn scenario_run(file: &Path, out: Option<&Path>) -> Result<Output, CliError> {
    let s = scenario::load_scenario(file).map_err(|e| match e {
        scenario::ScenarioError::MalformedScenario(m) => CliError::failure("MalformedScenario", m),
        other => CliError::failure("Io", other.to_string()),
    })?;
    let report = scenario::run_scenario(&s).map_err(|e| CliError::failure("MalformedScenario", e.to_string()))?;
    let text = report.to_json();
    if let Some(out) = out {
        write_file(out, &text)?;
    }
    if report.passed {
        Ok(Output::ok(text))
    } else {
        let failed = report.summary.expectations_failed;
        let errors = report.summary.unexpected_step_errors;
        Ok(Output::failed(
            text,
            CliError::failure(
                "ScenarioFailed",
                format!("{failed} expectation(s) failed, {errors} unexpected step error(s)"),
            ),
        ))
    }
}

pub fn log_verify(log: &Path, checkpoints: &Path, platform_key: &str, trust_anchor: &Path) -> Result<Output, CliError> {
    let platform = signing_public_key(platform_key)?;
    let ttp = load_trust_anchor(trust_anchor)?;
    let log_bytes = std::fs::read(log).map_err(|e| io_error(log, e))?;
    let cp_bytes = std::fs::read(checkpoints).map_err(|e| io_error(checkpoints, e))?;
    let report = access_log::verify_files(&log_bytes, &cp_bytes, &platform, &ttp);
    let text = canonical(&report);
    match &report {
        VerificationReport::Ok { .. } => Ok(Output::ok(text)),
        VerificationReport::Failed { index, reason } => Ok(Output::failed(
            text,
            CliError::Failure {
                error: "VerificationFailed".into(),
                message: format!("log verification failed at entry {index}"),
                detail: Some(json!({"index": index, "reason": reason})),
            },
        )),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::failure("Runtime", e.to_string()))
}

pub fn log_fetch(owner: &OwnerId, cloud: &str, out_dir: &Path) -> Result<Output, CliError> {
    let client = CloudClient::new(cloud);
    let upstream = |e: privsphere_server::client::ClientError| CliError::failure("Upstream", e.to_string());
    let (bundle, keys) = runtime()?.block_on(async {
        let bundle = client.fetch_log(owner).await.map_err(upstream)?;
        let keys = client.keys().await.map_err(upstream)?;
        Ok::<_, CliError>((bundle, keys))
    })?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    write_file(&out_dir.join("log.jsonl"), &access_log::to_json_lines(&bundle.entries))?;
    write_file(&out_dir.join("checkpoints.jsonl"), &access_log::to_json_lines(&bundle.checkpoints))?;
    write_file(&out_dir.join("platform.pub"), &format!("{}\n", keys.platform_public_key))?;
    Ok(Output::ok(canonical(&json!({
        "entries": bundle.entries.len(),
        "checkpoints": bundle.checkpoints.len(),
        "out_dir": out_dir.display().to_string(),
    }))))
}

fn write_secret(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut opts, 0o600);
    let mut f = opts.open(path).map_err(|e| io_error(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

pub fn keys_gen(role: KeyRole, out: Option<&Path>, anchor: Option<&Path>) -> Result<Output, CliError> {
    if anchor.is_some() && role != KeyRole::Ttp {
        return Err(CliError::Usage("--anchor only applies to --role ttp".into()));
    }
    let file = KeyFile::generate(&mut privsphere::rng::system(), role);
    if let Some(anchor) = anchor {
        let pk = file.signing_public.expect("ttp keys sign");
        write_file(anchor, &canonical(&TrustAnchor { ttp_public_key: pk }))?;
    }
    match out {
        Some(path) => {
            write_secret(path, &canonical(&file))?;
            Ok(Output::ok(canonical(&file.public_only())))
        }
        None => Ok(Output::ok(canonical(&file))),
    }
}

pub fn audit_run(
    model_path: &Path,
    script_path: &Path,
    service_id: Option<ServiceId>,
    declarations: Option<&Path>,
    ttp_key: Option<&Path>,
    at: Timestamp,
) -> Result<Output, CliError> {
    let model = load_model(model_path)?;
    let script: AccessScript = read_json(script_path)?;
    let declarations: Vec<EmergencyDeclaration> = match declarations {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let id = service_id.unwrap_or_else(|| stem_id(model_path));
    let audit_error = |e: privsphere::audit::AuditError| CliError::failure("AuditError", e.to_string());
    let verdict = match ttp_key {
        Some(p) => {
            let key = load_key_file(p)?
                .signing()
                .ok_or_else(|| CliError::failure("WrongKeyRole", format!("{} holds no signing key", p.display())))?;
            Ttp::new(key).audit(&id, &model, &script, &declarations, at).map_err(audit_error)?
        }
        None => privsphere::audit::audit_service(&id, &model, &script, &declarations, at).map_err(audit_error)?,
    };
    let text = canonical(&verdict);
    match &verdict.result {
        AuditResult::Pass => Ok(Output::ok(text)),
        AuditResult::Fail { violations } => Ok(Output::failed(
            text,
            CliError::failure("AuditFailed", format!("{} violation(s)", violations.len())),
        )),
    }
}

pub fn service_submit(
    model_path: &Path,
    script_path: &Path,
    cloud: &str,
    service_id: Option<ServiceId>,
    declarations: Option<&Path>,
) -> Result<Output, CliError> {
    let model = load_model(model_path)?;
    let id = service_id.unwrap_or_else(|| stem_id(model_path));
    let (policy, monitoring) = compile(model_path, Some(id.clone()))?;
    let submission = ServiceSubmission {
        service_id: id,
        model_text: pdl::render(&model),
        policy,
        monitoring,
        script: read_json(script_path)?,
        emergency_declarations: match declarations {
            Some(p) => read_json(p)?,
            None => Vec::new(),
        },
    };
    let client = CloudClient::new(cloud);
    let reg = runtime()?
        .block_on(client.register_service(&submission))
        .map_err(|e| CliError::failure("Upstream", e.to_string()))?;
    Ok(Output::ok(canonical(&reg)))
}

/// Gateway configuration file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayFile {
    pub owner: OwnerId,
    /// Owner key file (`keys gen --role owner`).
    pub owner_key: PathBuf,
    #[serde(default = "default_anchor")]
    pub trust_anchor: PathBuf,
    /// Holds `privacy.json`, `keystore.bin` and `local.jsonl`.
    pub state_dir: PathBuf,
    #[serde(default = "default_rotation")]
    pub rotation_period: u64,
    /// Endpoint id the cloud is known by in annotations.
    #[serde(default = "default_endpoint_id")]
    pub endpoint_id: EndpointId,
}

fn default_anchor() -> PathBuf {
    DEFAULT_TRUST_ANCHOR.into()
}

fn default_rotation() -> u64 {
    scenario::DEFAULT_ROTATION_PERIOD
}

fn default_endpoint_id() -> EndpointId {
    EndpointId::new("cloud")
}

fn master_secret(var: &str) -> Result<Vec<u8>, CliError> {
    match std::env::var(var) {
        Ok(v) if !v.is_empty() => Ok(v.into_bytes()),
        _ => Err(CliError::Usage(format!("{var} must be set"))),
    }
}

/// Builds the gateway state described by a configuration file, restoring
/// persisted configuration, keystore and local store.
pub fn open_gateway(config_path: &Path, cloud_url: &str, master: Vec<u8>, clock: privsphere_server::Clock) -> Result<std::sync::Arc<GatewayState>, CliError> {
    let file: GatewayFile = read_json(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let owner_keys = load_key_file(&resolve(&file.owner_key))?
        .sealing()
        .ok_or_else(|| CliError::failure("WrongKeyRole", "owner_key holds no sealing key"))?;
    let ttp_public = load_trust_anchor(&resolve(&file.trust_anchor))?;
    let state_dir = resolve(&file.state_dir);
    std::fs::create_dir_all(&state_dir).map_err(|e| io_error(&state_dir, e))?;
    let files = GatewayFiles {
        config: state_dir.join("privacy.json"),
        keystore: state_dir.join("keystore.bin"),
        master_secret: master,
    };
    let privacy = if files.config.exists() {
        let c: PrivacyConfiguration = read_json(&files.config)?;
        if c.owner != file.owner {
            return Err(CliError::failure("OwnerMismatch", format!("{} belongs to `{}`", files.config.display(), c.owner)));
        }
        c
    } else {
        PrivacyConfiguration::new(file.owner.clone(), file.rotation_period)
    };
    let local_path = state_dir.join("local.jsonl");
    let store = LocalStore::open(&local_path).map_err(|e| io_error(&local_path, e))?;
    let mut pep = Pep::with_store(privacy, owner_keys, ttp_public, store);
    if files.keystore.exists() {
        let sealed = std::fs::read(&files.keystore).map_err(|e| io_error(&files.keystore, e))?;
        pep.import_keystore(&files.master_secret, &sealed)
            .map_err(|e| CliError::failure("KeystoreUnreadable", e.to_string()))?;
    }
    Ok(GatewayState::new(GatewayConfig {
        pep,
        ttp_public,
        cloud: CloudClient::new(cloud_url),
        endpoint: file.endpoint_id,
        files: Some(files),
        clock,
    }))
}

fn bind(rt: &tokio::runtime::Runtime, addr: SocketAddr) -> Result<tokio::net::TcpListener, CliError> {
    rt.block_on(tokio::net::TcpListener::bind(addr))
        .map_err(|e| CliError::failure("Bind", format!("{addr}: {e}")))
}

pub fn gateway_run(args: GatewayRun) -> Result<Output, CliError> {
    let master = master_secret("PEP_MASTER_SECRET")?;
    let state = open_gateway(&args.config, &args.endpoint, master, privsphere_server::system_clock())?;
    let rt = runtime()?;
    for (service, message) in rt.block_on(state.relearn_services()) {
        eprintln!("{}", json!({"warning": "ServiceNotRelearned", "service": service, "message": message}));
    }
    let listener = bind(&rt, args.listen)?;
    eprintln!("{}", json!({"listening": args.listen.to_string(), "role": "gateway"}));
    rt.block_on(privsphere_server::serve(listener, privsphere_server::gateway::router(state)))
        .map_err(|e| CliError::failure("Serve", e.to_string()))?;
    Ok(Output::ok(String::new()))
}

pub fn cloud_run(args: CloudRun) -> Result<Output, CliError> {
    let master = master_secret("CLOUD_MASTER_SECRET")?;
    let platform = load_key_file(&args.platform_key)?
        .signing()
        .ok_or_else(|| CliError::failure("WrongKeyRole", "platform key file holds no signing key"))?;
    let ttp = match &args.ttp_key {
        Some(p) => Some(Ttp::new(
            load_key_file(p)?.signing().ok_or_else(|| CliError::failure("WrongKeyRole", "ttp key file holds no signing key"))?,
        )),
        None => None,
    };
    let ttp_public = match &ttp {
        Some(t) => t.public_key(),
        None => load_trust_anchor(&args.trust_anchor)?,
    };
    let state = CloudState::open(CloudConfig {
        platform,
        ttp_public,
        ttp,
        store: Some(CloudStore { path: args.store.clone(), master_secret: master }),
        clock: privsphere_server::system_clock(),
    })
    .map_err(|e| CliError::failure("StoreUnreadable", e.to_string()))?;
    let rt = runtime()?;
    let listener = bind(&rt, args.listen)?;
    eprintln!("{}", json!({"listening": args.listen.to_string(), "role": "cloud"}));
    rt.block_on(privsphere_server::serve(listener, privsphere_server::cloud::router(state)))
        .map_err(|e| CliError::failure("Serve", e.to_string()))?;
    Ok(Output::ok(String::new()))
}
