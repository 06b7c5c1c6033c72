//! Operator CLI. `network up` runs the network and gateway in this process;
//! the other network commands talk to a running gateway over HTTP, and
//! `bench` drives an in-process network directly.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use organchain_bench::{load_workloads, render_table, BenchmarkReport, NetworkTarget};
use organchain_core::donation::{is_query, CHAINCODE_NAME};
use organchain_core::identity::{Role, SigningKey};
use organchain_core::network::{read_key_file, Network, Topology, DONATION_CHANNEL};
use serde_json::{json, Value};

use crate::client::{ClientError, GatewayClient, Reply};
use crate::gateway::{spawn, Gateway, GatewayConfig};
use crate::routes::request_for;

#[derive(Parser, Debug)]
#[command(name = "organchain", version, about = "Organ donation ledger operator tool")]
pub struct Cli {
    /// Network description (YAML or JSON). Defaults to the built-in sample.
    #[arg(long, global = true)]
    pub topology: Option<PathBuf>,
    /// Key file of the identity to act as.
    #[arg(long, global = true)]
    pub identity: Option<PathBuf>,
    #[arg(long, global = true, default_value = "http://127.0.0.1:8080")]
    pub gateway_url: String,
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    #[command(subcommand)]
    Network(NetworkCmd),
    #[command(subcommand)]
    Channel(ChannelCmd),
    #[command(subcommand)]
    Chaincode(ChaincodeCmd),
    /// Submit a transaction and wait for its commit.
    Invoke(CallArgs),
    /// Evaluate a read-only method on one peer.
    Query(CallArgs),
    #[command(subcommand)]
    State(StateCmd),
    #[command(subcommand)]
    Chain(ChainCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Subcommand, Debug)]
pub enum NetworkCmd {
    /// Start peers, orderers and the gateway; runs until shut down.
    Up {
        /// Persist ledgers, membership and wallet here.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Ask a running gateway to stop (administrator identity).
    Down,
}

#[derive(Subcommand, Debug)]
pub enum ChannelCmd {
    Create {
        #[arg(long)]
        name: String,
        /// Comma-separated member org ids.
        #[arg(long, value_delimiter = ',', required = true)]
        members: Vec<String>,
        /// Endorsement policy, e.g. `(and gov (submitter))`.
        #[arg(long)]
        policy: String,
        #[arg(long = "chaincode")]
        chaincodes: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ChaincodeCmd {
    Deploy {
        #[arg(long)]
        channel: String,
        #[arg(long)]
        name: String,
    },
}

#[derive(Args, Debug)]
pub struct CallArgs {
    pub chaincode: String,
    pub method: String,
    pub args: Vec<String>,
    /// File whose contents are passed as the last argument (record bodies).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum StateCmd {
    /// Dump one peer's world state as JSON.
    Export {
        #[arg(long, default_value = DONATION_CHANNEL)]
        channel: String,
        #[arg(long)]
        peer: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ChainCmd {
    /// Recheck every peer's hash chain; fails if any is corrupt.
    Verify,
}

#[derive(Subcommand, Debug)]
pub enum BenchCmd {
    /// Run workloads against an in-process network.
    Run {
        /// Workload file: one workload, a list, or `{rounds: [...]}`.
        #[arg(long)]
        config: PathBuf,
        /// Write the reports here as a JSON array.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = DONATION_CHANNEL)]
        channel: String,
    },
    /// Render saved reports as a table.
    Report { files: Vec<PathBuf> },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime { kind: String, message: String, status: Option<u16> },
}

impl CliError {
    fn runtime(kind: &str, message: impl ToString) -> Self {
        CliError::Runtime { kind: kind.into(), message: message.to_string(), status: None }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    /// The machine-readable line printed on stderr.
    pub fn to_json(&self) -> Value {
        match self {
            CliError::Usage(m) => json!({"error": "Usage", "message": m}),
            CliError::Runtime { kind, message, status } => json!({"error": kind, "message": message, "status": status}),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Status { status, body } => CliError::Runtime {
                kind: body["error"].as_str().unwrap_or("HttpError").to_string(),
                message: body["message"].as_str().map(str::to_string).unwrap_or_else(|| body.to_string()),
                status: Some(status),
            },
            ClientError::Unreachable(m) => CliError::runtime("GatewayUnreachable", m),
            other => CliError::runtime("ClientError", other),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{e}");
            let _ = writeln!(err, "{}", CliError::Usage(e.kind().to_string()).to_json());
            return 2;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Network(NetworkCmd::Up { data_dir, listen }) => network_up(cli, data_dir.as_deref(), *listen, out),
        Command::Network(NetworkCmd::Down) => {
            let reply = client(cli)?.post("/admin/shutdown", &json!({}))?;
            emit(cli, out, &reply.body)
        }
        Command::Channel(ChannelCmd::Create { name, members, policy, chaincodes }) => {
            let body = json!({"name": name, "members": members, "policy": policy, "chaincodes": chaincodes});
            let reply = client(cli)?.post("/admin/channels", &body)?;
            emit(cli, out, &reply.body)
        }
        Command::Chaincode(ChaincodeCmd::Deploy { channel, name }) => {
            let reply = client(cli)?.post("/admin/chaincodes", &json!({"channel": channel, "name": name}))?;
            emit(cli, out, &reply.body)
        }
        Command::Invoke(call) => contract_call(cli, call, false, out),
        Command::Query(call) => contract_call(cli, call, true, out),
        Command::State(StateCmd::Export { channel, peer, out: file }) => {
            let mut path = format!("/admin/state?channel={}", encode_query(channel));
            if let Some(p) = peer {
                path.push_str(&format!("&peer={}", encode_query(p)));
            }
            let reply = client(cli)?.get(&path)?;
            let bytes = serde_json::to_vec_pretty(&reply.body).map_err(|e| CliError::runtime("Encoding", e))?;
            match file {
                Some(f) => {
                    std::fs::write(f, &bytes).map_err(|e| CliError::runtime("Io", e))?;
                    emit(cli, out, &json!({"channel": channel, "file": f}))
                }
                None => write_line(out, &String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Chain(ChainCmd::Verify) => {
            let reply = client(cli)?.get("/chain/verify")?;
            emit(cli, out, &reply.body)?;
            if reply.body["ok"] == json!(true) {
                Ok(())
            } else {
                Err(CliError::runtime("ChainCorrupt", "at least one peer's chain failed verification"))
            }
        }
        Command::Bench(BenchCmd::Run { config, out: file, data_dir, channel }) => {
            bench_run(cli, config, file.as_deref(), data_dir.as_deref(), channel, out)
        }
        Command::Bench(BenchCmd::Report { files }) => {
            if files.is_empty() {
                return Err(CliError::Usage("bench report needs at least one report file".into()));
            }
            let mut reports = Vec::new();
            for f in files {
                reports.extend(read_reports(f)?);
            }
            match cli.output {
                Output::Json => emit(cli, out, &serde_json::to_value(&reports).expect("reports serialize")),
                Output::Text => write_line(out, &render_table(&reports)),
            }
        }
    }
}

fn write_line(out: &mut dyn Write, text: &str) -> CliResult {
    writeln!(out, "{text}").map_err(|e| CliError::runtime("Io", e))?;
    out.flush().map_err(|e| CliError::runtime("Io", e))
}

fn emit(cli: &Cli, out: &mut dyn Write, value: &Value) -> CliResult {
    let text = match cli.output {
        Output::Json => value.to_string(),
        Output::Text => serde_json::to_string_pretty(value).expect("json"),
    };
    write_line(out, &text)
}

fn encode_query(s: &str) -> String {
    s.bytes()
        .map(|b| if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) { (b as char).to_string() } else { format!("%{b:02X}") })
        .collect()
}

fn identity_key(cli: &Cli) -> Result<SigningKey, CliError> {
    let path = cli.identity.as_ref().ok_or_else(|| CliError::Usage("--identity <key file> is required".into()))?;
    read_key_file(path).map_err(|e| CliError::runtime("IdentityFile", e))
}

fn client(cli: &Cli) -> Result<GatewayClient, CliError> {
    let key = identity_key(cli)?;
    let mut c = GatewayClient::new(&cli.gateway_url)?;
    c.login(&key)?;
    Ok(c)
}

fn topology(cli: &Cli) -> Result<Topology, CliError> {
    match &cli.topology {
        Some(p) => Topology::load(p).map_err(|e| CliError::runtime("Topology", e)),
        None => Ok(Topology::sample()),
    }
}

fn contract_call(cli: &Cli, call: &CallArgs, query: bool, out: &mut dyn Write) -> CliResult {
    if call.chaincode != CHAINCODE_NAME {
        return Err(CliError::runtime("UnknownChaincode", format!("no gateway routes for chaincode `{}`", call.chaincode)));
    }
    if is_query(&call.method) != query {
        let hint = if query { "use `invoke` for methods that write" } else { "use `query` for read-only methods" };
        return Err(CliError::Usage(format!("{}: {hint}", call.method)));
    }
    let mut args = call.args.clone();
    if let Some(f) = &call.json {
        args.push(std::fs::read_to_string(f).map_err(|e| CliError::runtime("Io", e))?);
    }
    let req = request_for(&call.method, &args).map_err(CliError::Usage)?;
    let reply: Reply = client(cli)?.request(&req)?;
    if query || cli.output == Output::Json {
        return emit(cli, out, &reply.body);
    }
    let b = &reply.body;
    let line = match b["flag"].as_str() {
        Some(flag) => format!("{} {flag} block={}", b["tx_id"].as_str().unwrap_or(""), b["block_number"]),
        None => format!("{} {}", b["tx_id"].as_str().unwrap_or(""), b["status"].as_str().unwrap_or("")),
    };
    write_line(out, &line)
}

fn network_up(cli: &Cli, data_dir: Option<&Path>, listen: SocketAddr, out: &mut dyn Write) -> CliResult {
    let topo = topology(cli)?;
    let (net, wallet) = Network::bootstrap(&topo, data_dir).map_err(|e| CliError::runtime("Bootstrap", e))?;
    let gw = Gateway::new(net.clone(), wallet, GatewayConfig::default()).map_err(|e| CliError::runtime("Gateway", e))?;
    let running = spawn(gw.clone(), listen).map_err(|e| CliError::runtime("Listen", e))?;
    let channels: Vec<Value> = net
        .channels()
        .iter()
        .map(|ch| {
            json!({
                "name": ch.name(),
                "height": ch.height(),
                "peers": ch.peers().iter().map(|p| p.peer_id().to_string()).collect::<Vec<_>>(),
                "chaincodes": ch.config().chaincodes,
            })
        })
        .collect();
    let identities: Vec<Value> = net
        .membership()
        .identities()
        .filter(|i| i.role != Role::Peer)
        .map(|i| json!({"id": i.identity_id, "org": i.org_id, "role": i.role}))
        .collect();
    let summary = json!({
        "gateway": running.url(),
        "data_dir": data_dir,
        "wallet": data_dir.map(|d| d.join("wallet")),
        "channels": channels,
        "identities": identities,
    });
    // One line in both modes so a supervising process can read the address.
    write_line(out, &summary.to_string())?;
    let on_signal = gw.clone();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("signal runtime");
        if rt.block_on(tokio::signal::ctrl_c()).is_ok() {
            on_signal.request_shutdown();
        }
    });
    running.wait();
    gw.notices().shutdown();
    net.shutdown();
    Ok(())
}

fn bench_run(
    cli: &Cli,
    config: &Path,
    file: Option<&Path>,
    data_dir: Option<&Path>,
    channel: &str,
    out: &mut dyn Write,
) -> CliResult {
    let workloads = load_workloads(config).map_err(|e| CliError::runtime("InvalidConfig", e))?;
    let topo = topology(cli)?;
    let (net, wallet) = Network::bootstrap(&topo, data_dir).map_err(|e| CliError::runtime("Bootstrap", e))?;
    let key = match &cli.identity {
        Some(_) => identity_key(cli)?,
        None => {
            let m = net.membership();
            wallet
                .ids()
                .find(|id| m.identity(id).is_some_and(|i| i.role == Role::HospitalStaff))
                .and_then(|id| wallet.get(id).cloned())
                .ok_or_else(|| CliError::runtime("NoIdentity", "topology has no hospital staff to submit as"))?
        }
    };
    let result = (|| {
        let target = NetworkTarget::new(net.clone(), channel, key).map_err(|e| CliError::runtime("TargetUnreachable", e))?;
        let mut reports = Vec::new();
        for w in &workloads {
            reports.push(organchain_bench::run(w, &target).map_err(|e| CliError::runtime("BenchFailed", e))?);
        }
        Ok::<_, CliError>(reports)
    })();
    net.shutdown();
    let reports = result?;
    if let Some(f) = file {
        let bytes = serde_json::to_vec_pretty(&reports).map_err(|e| CliError::runtime("Encoding", e))?;
        std::fs::write(f, bytes).map_err(|e| CliError::runtime("Io", e))?;
    }
    match cli.output {
        Output::Json => emit(cli, out, &serde_json::to_value(&reports).expect("reports serialize")),
        Output::Text => write_line(out, &render_table(&reports)),
    }
}

fn read_reports(path: &Path) -> Result<Vec<BenchmarkReport>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::runtime("Io", e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::runtime("Encoding", e))?;
    let parsed = match value {
        Value::Array(_) => serde_json::from_value(value),
        one => serde_json::from_value(one).map(|r| vec![r]),
    };
    parsed.map_err(|e| CliError::runtime("Encoding", format!("{}: {e}", path.display())))
}
