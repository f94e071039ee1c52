use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use provledger::chaincode::RecallReport;
use provledger::codec::Doc;
use provledger::ledger::{verify_ledger_file, Durability};
use provledger::membership::MAIN_CHANNEL;
use provledger::network::{state_dump, Network, NetworkConfig, Storage, TxRequest, NETWORK_FILE};
use provledger::sim::{generate_chain_workload, run_scenario, workload_config, Scenario, SimConfig};

#[derive(Parser)]
#[command(name = "plv", version, about = "Operate a provledger network stored in a data directory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Data {
    /// Network data directory.
    #[arg(long, env = "PLV_DATA", default_value = "plv-data")]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Fsync::Sync)]
    durability: Fsync,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fsync {
    /// fsync after every block.
    Sync,
    /// Leave flushing to the OS.
    Buffered,
}

impl From<Fsync> for Durability {
    fn from(s: Fsync) -> Self {
        match s {
            Fsync::Sync => Durability::Sync,
            Fsync::Buffered => Durability::Buffered,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create a network; the demo consortium unless --config is given.
    Init {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    #[command(subcommand)]
    Ledger(LedgerCmd),
    #[command(subcommand)]
    State(StateCmd),
    #[command(subcommand)]
    Tx(TxCmd),
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Recall batches listed in a report produced by `trace forward`.
    Recall {
        #[command(flatten)]
        data: Data,
        batches: Vec<String>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long = "as", default_value = "auditor")]
        actor: String,
    },
    #[command(subcommand)]
    Qr(QrCmd),
    /// Token balance and token ids of a farm.
    Tokens {
        #[command(flatten)]
        data: Data,
        farm: String,
    },
    #[command(subcommand)]
    Sim(SimCmd),
    /// Serve the HTTP gateway.
    Serve {
        #[command(flatten)]
        data: Data,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Check the hash chain of a ledger file.
    Verify { file: PathBuf },
}

#[derive(Subcommand)]
enum StateCmd {
    /// Print a peer's world state as JSON lines sorted by key.
    Dump {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        peer: String,
        #[arg(long, default_value = MAIN_CHANNEL)]
        channel: String,
    },
}

#[derive(Subcommand)]
enum TxCmd {
    /// Endorse, order and commit one transaction.
    Submit {
        #[command(flatten)]
        data: Data,
        #[arg(long = "as")]
        actor: String,
        #[arg(long, default_value = MAIN_CHANNEL)]
        channel: String,
        #[arg(long)]
        op: String,
        /// Arguments as a JSON object.
        #[arg(long, default_value = "{}")]
        args: String,
        /// Comma-separated endorsing peers; defaults to the channel policy.
        #[arg(long, value_delimiter = ',')]
        endorsers: Vec<String>,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Origin farms and provenance tree of a batch.
    Back {
        #[command(flatten)]
        data: Data,
        batch: String,
    },
    /// Everything derived from a farm or a batch.
    Forward {
        #[command(flatten)]
        data: Data,
        origin: String,
    },
}

#[derive(Subcommand)]
enum QrCmd {
    Encode {
        #[command(flatten)]
        data: Data,
        batch: String,
    },
    /// Verify a payload and print the trace it anchors.
    Verify {
        #[command(flatten)]
        data: Data,
        payload: String,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run a scenario in virtual time and write its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "metrics.json")]
        out: PathBuf,
    },
    /// Write a generated chain workload and a matching sim config.
    Workload {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        farms: usize,
        #[arg(long, default_value_t = 1000)]
        batches: usize,
        #[arg(long, default_value_t = 2)]
        fanout: usize,
        #[arg(long, default_value = "scenario.json")]
        scenario: PathBuf,
        #[arg(long, default_value = "sim-config.json")]
        config: PathBuf,
    },
}

struct Failure {
    code: String,
    detail: String,
}

impl Failure {
    fn new(code: &str, detail: impl ToString) -> Self {
        Failure { code: code.to_string(), detail: detail.to_string() }
    }
}

impl From<provledger::network::NetworkError> for Failure {
    fn from(e: provledger::network::NetworkError) -> Self {
        Failure { code: e.code().to_string(), detail: e.to_string() }
    }
}

impl From<provledger::sim::SimError> for Failure {
    fn from(e: provledger::sim::SimError) -> Self {
        Failure { code: e.code().to_string(), detail: e.to_string() }
    }
}

type CliResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.detail);
            ExitCode::FAILURE
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new("IO_ERROR", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new("IO_ERROR", format!("{}: {e}", path.display())))
}

fn open(data: &Data) -> Result<Network, Failure> {
    Ok(Network::open(&data.data, data.durability.into())?)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Init { data, config } => {
            if data.data.join(NETWORK_FILE).exists() {
                return Err(Failure::new("ALREADY_INITIALIZED", data.data.display()));
            }
            let config = match config {
                Some(path) => NetworkConfig::from_json(&read_file(&path)?)?,
                None => NetworkConfig::demo(),
            };
            let peers = config.identities.iter().filter(|i| i.peer.is_some()).count();
            let storage = Storage::Dir { path: data.data.clone(), durability: data.durability.into() };
            Network::bootstrap(config, storage)?;
            println!("initialized {} with {peers} peers", data.data.display());
        }
        Command::Ledger(LedgerCmd::Verify { file }) => {
            let report = verify_ledger_file(&file);
            if report.ok {
                println!("OK {}", report.blocks);
            } else {
                println!("BAD block={}", report.first_bad_block.unwrap_or(report.blocks));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::State(StateCmd::Dump { data, peer, channel }) => {
            let net = open(&data)?;
            let peer = net.peer(&peer).ok_or_else(|| Failure::new("UNKNOWN_PEER", &peer))?;
            let cs = peer.channel(&channel).ok_or_else(|| Failure::new("NOT_A_MEMBER", &channel))?;
            for line in state_dump(cs) {
                println!("{line}");
            }
        }
        Command::Tx(TxCmd::Submit { data, actor, channel, op, args, endorsers }) => {
            let value: Value = serde_json::from_str(&args).map_err(|e| Failure::new("BAD_ARGS", e))?;
            let args = Doc::try_from(value).map_err(|e| Failure::new("BAD_ARGS", e))?;
            let mut net = open(&data)?;
            let outcome = net.submit(TxRequest::new(&actor, &channel, &op, args).endorsed_by(endorsers))?;
            println!("{} {}", outcome.tx_id, outcome.validity);
        }
        Command::Trace(TraceCmd::Back { data, batch }) => print_json(&open(&data)?.trace_back(&batch)?),
        Command::Trace(TraceCmd::Forward { data, origin }) => print_json(&open(&data)?.trace_forward(&origin)?),
        Command::Recall { data, batches, report, actor } => {
            let report: RecallReport =
                serde_json::from_str(&read_file(&report)?).map_err(|e| Failure::new("BAD_ARGS", e))?;
            let mut net = open(&data)?;
            let outcome = net.recall(&actor, &report, &batches)?;
            println!("{} {}", outcome.tx_id, outcome.validity);
        }
        Command::Qr(QrCmd::Encode { data, batch }) => println!("{}", open(&data)?.encode_qr(&batch)?),
        Command::Qr(QrCmd::Verify { data, payload }) => print_json(&open(&data)?.verify_qr(&payload)?),
        Command::Tokens { data, farm } => print_json(&open(&data)?.token_entry(&farm)?),
        Command::Sim(SimCmd::Run { config, scenario, out }) => {
            let config = SimConfig::from_json(&read_file(&config)?)?;
            let scenario = Scenario::from_json(&read_file(&scenario)?)?;
            let outcome = run_scenario(&config, &scenario)?;
            let text = serde_json::to_string_pretty(&outcome.metrics).expect("serializable");
            write_file(&out, &text)?;
            println!(
                "committed {} invalid {} refused {} (trace {})",
                outcome.metrics.committed_tx,
                outcome.metrics.invalid_total(),
                outcome.metrics.refused_tx,
                outcome.trace_digest()
            );
        }
        Command::Sim(SimCmd::Workload { seed, farms, batches, fanout, scenario, config }) => {
            if farms == 0 || batches == 0 || fanout == 0 {
                return Err(Failure::new("BAD_ARGS", "farms, batches and fanout must be positive"));
            }
            let generated = generate_chain_workload(seed, farms, batches, fanout);
            write_file(&scenario, &generated.to_json())?;
            let sim = serde_json::to_string_pretty(&workload_config(farms, seed)).expect("serializable");
            write_file(&config, &sim)?;
            println!("{} actions, {} batches", generated.actions.len(), generated.batch_count());
        }
        Command::Serve { data, addr } => {
            let net = provledger_gateway::shared(open(&data)?);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new("IO_ERROR", e))?;
            eprintln!("listening on http://{addr}");
            runtime
                .block_on(provledger_gateway::serve(net, addr))
                .map_err(|e| Failure::new(e.code(), e))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
