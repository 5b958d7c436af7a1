use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedlorar::experiment::{
    self, combined_dev_curves, emit_plot_data, parse_kv, read_rounds, run_centralized,
    run_federated_experiment, run_finetune, write_json, ExperimentConfig, Manifest, Paradigm,
    Transport,
};
use fedlorar::metrics::EvalReport;
use fedlorar::transport::run_client;
use fedlorar::{ClientDataset, Error};

#[derive(Parser)]
#[command(
    name = "fedlorar",
    version,
    about = "Federated learning experiments with loss-reduction re-weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic client population and write it to --out.
    GenData(Common),
    /// Train one model per client on its own data.
    Finetune(Common),
    /// Train one model on the union of all clients' data.
    Centralized(Common),
    /// Run federated training.
    Federated {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
        transport: TransportArg,
    },
    /// Run the federated server over TCP; clients connect with `client`.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: String,
    },
    /// Run one federated client against a server.
    Client {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        server: String,
        #[arg(long)]
        client_id: usize,
        /// Read the client's data from a `gen-data` directory instead of
        /// regenerating it.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Collect dev curves and per-client loss curves of finished runs.
    PlotData {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Print the evaluation tables of finished runs side by side.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

enum Failure {
    Config(String),
    Runtime(String),
    Transport(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Transport(_) => 4,
        }
    }
}

fn classify(e: Error, network: bool) -> Failure {
    let msg = e.to_string();
    match e {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) => Failure::Config(msg),
        Error::MalformedFrame(_)
        | Error::TruncatedFrame { .. }
        | Error::VersionMismatch { .. }
        | Error::PayloadTooLarge(_)
        | Error::Protocol(_)
        | Error::ClientDisconnected(_) => Failure::Transport(msg),
        Error::Io(_) if network => Failure::Transport(msg),
        _ => Failure::Runtime(msg),
    }
}

fn runtime(e: Error) -> Failure {
    classify(e, false)
}

impl Common {
    fn load(&self, paradigm: Paradigm) -> Result<ExperimentConfig, Failure> {
        let mut map = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                parse_kv(&text).map_err(|e| Failure::Config(e.to_string()))?
            }
            None => Default::default(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        };
        set("paradigm", Some(paradigm.to_string()));
        set("seed", self.seed.map(|s| s.to_string()));
        set(
            "output_dir",
            self.out.as_ref().map(|p| p.display().to_string()),
        );
        set("algo.kind", self.algo.clone());
        set("algo.weighting", self.weighting.clone());
        set("algo.rounds", self.rounds.map(|r| r.to_string()));
        set("eval_every", self.eval_every.map(|r| r.to_string()));
        if self.seed.is_some() && self.config.is_some() {
            // a seed given on the command line also re-seeds the data
            map.remove("data.seed");
        }
        ExperimentConfig::from_map(map, 0).map_err(|e| classify(e, false))
    }
}

fn write_manifest(cfg: &ExperimentConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| runtime(e.into()))?;
    write_json(&cfg.output_dir.join("manifest.json"), &Manifest::new(cfg)).map_err(runtime)
}

fn print_report(cfg: &ExperimentConfig, report: &EvalReport) {
    // the results are already on disk; a closed stdout is not an error
    let _ = write!(
        std::io::stdout().lock(),
        "{}",
        report.to_table(&cfg.label())
    );
}

fn standalone(common: &Common, paradigm: Paradigm) -> Result<(), Failure> {
    let cfg = common.load(paradigm)?;
    write_manifest(&cfg)?;
    let pop = experiment::population(&cfg).map_err(runtime)?;
    let report = match paradigm {
        Paradigm::Finetune => run_finetune(&cfg, &pop),
        _ => run_centralized(&cfg, &pop),
    }
    .map_err(runtime)?;
    write_json(&cfg.output_dir.join("report.json"), &report).map_err(runtime)?;
    print_report(&cfg, &report);
    Ok(())
}

fn spawn_clients(cfg: &ExperimentConfig, addr: &str) -> Result<Vec<Child>, Failure> {
    let config_path = cfg.output_dir.join("config.kv");
    fs::write(&config_path, cfg.to_kv()).map_err(|e| runtime(e.into()))?;
    let exe = std::env::current_exe().map_err(|e| runtime(e.into()))?;
    (0..cfg.population.num_clients)
        .map(|i| {
            Command::new(&exe)
                .arg("client")
                .arg("--config")
                .arg(&config_path)
                .args(["--server", addr, "--client-id", &i.to_string()])
                .spawn()
                .map_err(|e| Failure::Transport(format!("spawning client {i}: {e}")))
        })
        .collect()
}

fn federated(common: &Common, transport: TransportArg) -> Result<(), Failure> {
    let cfg = common.load(Paradigm::Federated)?;
    write_manifest(&cfg)?;
    let pop = experiment::population(&cfg).map_err(runtime)?;
    let out = cfg.output_dir.clone();
    let outcome = match transport {
        TransportArg::Inproc => {
            run_federated_experiment(&cfg, &pop, Transport::InProcess, &out).map_err(runtime)?
        }
        TransportArg::Tcp => {
            let listener =
                TcpListener::bind("127.0.0.1:0").map_err(|e| classify(e.into(), true))?;
            let addr = listener
                .local_addr()
                .map_err(|e| classify(e.into(), true))?
                .to_string();
            let mut children = spawn_clients(&cfg, &addr)?;
            let result = run_federated_experiment(&cfg, &pop, Transport::Tcp(&listener), &out);
            if result.is_err() {
                for c in &mut children {
                    let _ = c.kill();
                }
            }
            let mut failed = Vec::new();
            for (i, mut c) in children.into_iter().enumerate() {
                match c.wait() {
                    Ok(s) if s.success() => {}
                    _ => failed.push(i),
                }
            }
            let outcome = result.map_err(|e| classify(e, true))?;
            if !failed.is_empty() {
                return Err(Failure::Transport(format!(
                    "client processes {failed:?} failed"
                )));
            }
            outcome
        }
    };
    print_report(&cfg, &outcome.report);
    Ok(())
}

fn serve(common: &Common, bind: &str) -> Result<(), Failure> {
    let cfg = common.load(Paradigm::Federated)?;
    write_manifest(&cfg)?;
    let pop = experiment::population(&cfg).map_err(runtime)?;
    let listener = TcpListener::bind(bind).map_err(|e| classify(e.into(), true))?;
    let addr = listener
        .local_addr()
        .map_err(|e| classify(e.into(), true))?;
    println!("listening on {addr}");
    std::io::stdout().flush().ok();
    let outcome = run_federated_experiment(
        &cfg,
        &pop,
        Transport::Tcp(&listener),
        &cfg.output_dir.clone(),
    )
    .map_err(|e| classify(e, true))?;
    print_report(&cfg, &outcome.report);
    Ok(())
}

fn client(
    common: &Common,
    server: &str,
    client_id: usize,
    data: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = common.load(Paradigm::Federated)?;
    let dataset = match data {
        Some(dir) => ClientDataset::import(dir, client_id).map_err(runtime)?,
        None => experiment::population(&cfg)
            .map_err(runtime)?
            .into_iter()
            .find(|d| d.client_id == client_id)
            .ok_or_else(|| Failure::Config(format!("no client {client_id} in the population")))?,
    };
    let rounds = run_client(server, &dataset, &cfg.model, &cfg.algo, cfg.seed)
        .map_err(|e| classify(e, true))?;
    log::info!("client {client_id}: served {rounds} rounds");
    Ok(())
}

fn gen_data(common: &Common) -> Result<(), Failure> {
    let cfg = common.load(Paradigm::Federated)?;
    let pop = experiment::population(&cfg).map_err(runtime)?;
    write_manifest(&cfg)?;
    for d in &pop {
        d.export(&cfg.output_dir).map_err(runtime)?;
        println!(
            "client {}: train {} dev {} test {}",
            d.client_id,
            d.train.len(),
            d.dev.len(),
            d.test.len()
        );
    }
    Ok(())
}

fn read_manifest(run: &Path) -> Result<Manifest, Failure> {
    let text = fs::read_to_string(run.join("manifest.json"))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", run.display())))?;
    serde_json::from_str(&text).map_err(|e| runtime(e.into()))
}

fn plot_data(out: &Path, runs: &[PathBuf]) -> Result<(), Failure> {
    let mut curves = Vec::new();
    for run in runs {
        let label = read_manifest(run)?.label;
        let records = read_rounds(&run.join("rounds.jsonl")).map_err(runtime)?;
        let dir = out.join(&label);
        fs::create_dir_all(&dir).map_err(|e| runtime(e.into()))?;
        emit_plot_data(&records, &dir).map_err(runtime)?;
        curves.push((label, records));
    }
    fs::write(out.join("dev_curves.csv"), combined_dev_curves(&curves))
        .map_err(|e| runtime(e.into()))?;
    Ok(())
}

fn compare(runs: &[PathBuf]) -> Result<(), Failure> {
    let mut header = None;
    for run in runs {
        let label = read_manifest(run)?.label;
        let text = fs::read_to_string(run.join("report.json"))
            .map_err(|e| Failure::Runtime(format!("{}: {e}", run.display())))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| runtime(e.into()))?;
        if header.is_none() {
            let h = report.table_header();
            println!("{h}");
            header = Some(h);
        }
        println!("{}", report.table_row(&label));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDLORAR_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::GenData(c) => gen_data(c),
        Cmd::Finetune(c) => standalone(c, Paradigm::Finetune),
        Cmd::Centralized(c) => standalone(c, Paradigm::Centralized),
        Cmd::Federated { common, transport } => federated(common, *transport),
        Cmd::Serve { common, bind } => serve(common, bind),
        Cmd::Client {
            common,
            server,
            client_id,
            data,
        } => client(common, server, *client_id, data.as_deref()),
        Cmd::PlotData { out, runs } => plot_data(out, runs),
        Cmd::Compare { runs } => compare(runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Runtime(m) | Failure::Transport(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
