mod config;

use std::fs::File;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use anonboot::experiments::simulation::{run_simulation, ScriptedRequest, SimulationConfig};
use anonboot::experiments::{estimate_cost, run_footprint, run_infiltration, write_csv, DEFAULT_CAPACITIES};
use anonboot::hash::Hash256;
use anonboot::hostchain::Capacity;
use anonboot::pow::{PowInput, PowRegistry};
use anonboot::wire::{
    decode_message, Capabilities, ConnectorKey, Message, OpReturnScript, PeerAdvertisement, ServiceRequest,
};
use config::{parse_capacity, parse_ratio, parse_sampler, parse_threshold_mode, FileConfig};

#[derive(Parser)]
#[command(name = "anonboot", version, about = "AnonBoot protocol toolkit and experiments")]
struct Cli {
    /// TOML file with [pulse], [chain], [infiltration] and [simulation] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every randomized run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce an evaluation as CSV.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Fee of one message transaction.
    EstimateCost {
        #[arg(long, default_value_t = 307)]
        size: u64,
        /// Satoshi per byte.
        #[arg(long, default_value_t = 6)]
        rate: u64,
        /// USD per BTC.
        #[arg(long, default_value_t = 9067.0)]
        price: f64,
    },
    /// Scripted multi-pulse run with honest and impostor peers.
    Simulate(SimulateArgs),
    /// Encode a message as OP_RETURN script hex.
    #[command(subcommand)]
    Encode(Encode),
    /// Decode OP_RETURN script hex.
    Decode { script: String },
    /// Solve or check proofs of work.
    #[command(subcommand)]
    Pow(Pow),
}

#[derive(Subcommand)]
enum Experiment {
    Infiltration(InfiltrationArgs),
    Footprint(FootprintArgs),
}

#[derive(Args)]
struct InfiltrationArgs {
    #[arg(long)]
    repository_size: Option<u64>,
    /// Comma-separated adversary fractions.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Comma-separated network sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    #[arg(long)]
    trials: Option<u64>,
    /// Infiltration threshold, e.g. "1/3".
    #[arg(long)]
    threshold: Option<String>,
    /// ceil or floor.
    #[arg(long)]
    threshold_mode: Option<String>,
    /// full or shortcut.
    #[arg(long)]
    sampler: Option<String>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FootprintArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,1000,2000,3000,4000,5000,6000,7000,8000,9000,10000"
    )]
    messages: Vec<u64>,
    /// Comma-separated capacities; defaults to 0.05,0.10,0.25,0.50,1.00.
    #[arg(long, value_delimiter = ',')]
    capacities: Option<Vec<String>>,
    #[arg(long)]
    message_weight: Option<u64>,
    #[arg(long)]
    max_block_weight: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    pulses: Option<u64>,
    #[arg(long)]
    honest: Option<u32>,
    #[arg(long)]
    adversarial: Option<u32>,
    #[arg(long)]
    difficulty: Option<u32>,
    /// Print the final state, one line per record.
    #[arg(long)]
    dump_state: bool,
    /// Also write the mined chain to this file.
    #[arg(long)]
    export_chain: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Encode {
    Advertisement {
        /// 33-byte compressed key, hex.
        #[arg(long)]
        key: String,
        /// ip:port, IPv6 as [addr]:port.
        #[arg(long)]
        endpoint: SocketAddr,
        #[arg(long)]
        service: u16,
        /// 14 capability bytes, hex.
        #[arg(long, default_value = "0000000000000000000000000000")]
        caps: String,
        /// 8 bytes, hex.
        #[arg(long, default_value = "0000000000000000")]
        nonce: String,
        #[arg(long)]
        direct: bool,
    },
    Request {
        #[arg(long)]
        service: u16,
        /// Committee size.
        #[arg(long)]
        k: u16,
        /// Service-specific capability bytes 2..14, hex.
        #[arg(long, default_value = "000000000000000000000000")]
        caps: String,
        #[arg(long, default_value = "0000000000000000")]
        nonce: String,
    },
}

#[derive(Subcommand)]
enum Pow {
    Solve {
        #[arg(long)]
        key: String,
        /// Pulse block hash, hex.
        #[arg(long)]
        block: String,
        #[arg(long)]
        difficulty: Option<u32>,
        #[arg(long, default_value = "0000000000000000")]
        start: String,
        #[arg(long, default_value_t = u64::MAX)]
        max_attempts: u64,
    },
    Verify {
        #[arg(long)]
        key: String,
        #[arg(long)]
        block: String,
        #[arg(long)]
        nonce: String,
        #[arg(long)]
        difficulty: Option<u32>,
    },
}

fn fixed_hex<const N: usize>(what: &str, s: &str) -> Result<[u8; N]> {
    let bytes = hex::decode(s).with_context(|| format!("{what} is not hex"))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| anyhow::anyhow!("{what} must be {N} bytes, got {}", b.len()))
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn infiltration(file: &FileConfig, seed: Option<u64>, args: InfiltrationArgs) -> Result<()> {
    let mut c = file.infiltration_config()?;
    if let Some(v) = args.repository_size {
        c.repository_size = v;
    }
    if let Some(v) = args.fractions {
        c.adversary_fractions = v;
    }
    if let Some(v) = args.sizes {
        c.network_sizes = v;
    }
    if let Some(v) = args.trials {
        c.trials = v;
    }
    if let Some(v) = &args.threshold {
        c.threshold = parse_ratio(v)?;
    }
    if let Some(v) = &args.threshold_mode {
        c.threshold_mode = parse_threshold_mode(v)?;
    }
    if let Some(v) = &args.sampler {
        c.sampler = parse_sampler(v)?;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    let rows = run_infiltration(&c).map_err(anyhow::Error::msg)?;
    write_csv(output(args.out.as_ref())?, &rows)?;
    Ok(())
}

fn footprint(file: &FileConfig, args: FootprintArgs) -> Result<()> {
    let mut base = file.chain_config()?;
    if let Some(v) = args.message_weight {
        base.message_weight = v;
    }
    if let Some(v) = args.max_block_weight {
        base.max_block_weight = v;
    }
    base.validate().map_err(anyhow::Error::msg)?;
    let caps: Vec<Capacity> = match &args.capacities {
        Some(list) => list.iter().map(|s| parse_capacity(s)).collect::<Result<_>>()?,
        None => DEFAULT_CAPACITIES
            .iter()
            .map(|&(n, d)| Capacity::new(n, d).map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?,
    };
    let rows = run_footprint(&args.messages, &caps, &base);
    write_csv(output(args.out.as_ref())?, &rows)?;
    Ok(())
}

fn simulate(file: &FileConfig, seed: Option<u64>, args: SimulateArgs) -> Result<()> {
    let mut c = SimulationConfig {
        pulse: file.pulse_config(),
        chain: file.chain_config()?,
        ..SimulationConfig::default()
    };
    if file.pulse.difficulty_bits.is_none() {
        c.pulse.pow.difficulty_bits = SimulationConfig::default().pulse.pow.difficulty_bits;
    }
    let s = &file.simulation;
    c.pulses = args.pulses.or(s.pulses).unwrap_or(c.pulses);
    c.honest_peers = args.honest.or(s.honest_peers).unwrap_or(c.honest_peers);
    c.adversarial_peers = args.adversarial.or(s.adversarial_peers).unwrap_or(c.adversarial_peers);
    c.services = s.services.unwrap_or(c.services);
    if let Some(d) = args.difficulty {
        c.pulse.pow.difficulty_bits = d;
    }
    if let Some(s) = seed.or(file.seed) {
        c.seed = s;
    }
    c.requests.retain(|r: &ScriptedRequest| r.pulse < c.pulses);

    let report = run_simulation(&c)?;
    let mut out = io::stdout().lock();
    for (pulse, state) in report.states.iter().enumerate() {
        writeln!(
            out,
            "pulse {pulse}: {} peers, {} rejected, {} services, {} unserved",
            state.repository.len(),
            state.rejected.len(),
            state.services.len(),
            state.unserved.len()
        )?;
    }
    for s in &report.services {
        let b = &s.bootstrap;
        let ok = b.links.iter().filter(|l| l.authenticated()).count();
        writeln!(
            out,
            "service {} (pulse {}): {} members, {ok}/{} links authenticated, live={}",
            b.service_id,
            b.spawned_pulse,
            s.instance.peers.len(),
            b.links.len(),
            b.live
        )?;
    }
    let mismatches = report
        .sweep
        .iter()
        .filter(|r| r.outcome == anonboot::connector::HandoverOutcome::KeyMismatch)
        .count();
    writeln!(
        out,
        "handover sweep: {} peers, {mismatches} key mismatches",
        report.sweep.len()
    )?;
    if let Some(circuit) = &report.circuit {
        let hops: Vec<String> = circuit
            .hops
            .iter()
            .map(|h| h.advertisement.endpoint().to_string())
            .collect();
        writeln!(
            out,
            "circuit: {} ({} attempts, {} direct user connections)",
            hops.join(" -> "),
            circuit.attempts.len(),
            report.direct_user_connections()
        )?;
    }
    if args.dump_state {
        report.final_state().dump(&mut out)?;
    }
    if let Some(path) = &args.export_chain {
        report.chain.export(File::create(path)?)?;
    }
    Ok(())
}

fn encode(cmd: Encode) -> Result<()> {
    let message: Message = match cmd {
        Encode::Advertisement {
            key,
            endpoint,
            service,
            caps,
            nonce,
            direct,
        } => {
            let mut ad = PeerAdvertisement::new(
                ConnectorKey::from_hex(&key)?,
                endpoint,
                service,
                Capabilities(fixed_hex("caps", &caps)?),
            );
            ad.nonce = fixed_hex("nonce", &nonce)?;
            ad.direct = direct;
            ad.into()
        }
        Encode::Request {
            service,
            k,
            caps,
            nonce,
        } => {
            let rest: [u8; 12] = fixed_hex("caps", &caps)?;
            let mut bytes = [0u8; 14];
            bytes[2..].copy_from_slice(&rest);
            let capabilities = Capabilities(bytes).with_committee_size(k);
            ServiceRequest::new(service, capabilities, fixed_hex("nonce", &nonce)?).into()
        }
    };
    println!("{}", message.encode()?.to_hex());
    Ok(())
}

fn decode(script: &str) -> Result<()> {
    let script = OpReturnScript::from_hex(script.trim())?;
    match decode_message(&script)? {
        Message::Advertisement(ad) => {
            ad.validate()?;
            println!("type=advertisement");
            println!("version={} reserved={}", ad.header.version, ad.header.reserved);
            println!("direct={} ipv6={}", ad.direct, ad.ipv6);
            println!("key={}", ad.connector_key.to_hex());
            println!("endpoint={}", ad.endpoint());
            println!("service={}", ad.service_id);
            println!("caps={}", hex::encode(ad.capabilities.0));
            println!("nonce={}", hex::encode(ad.nonce));
        }
        Message::Request(req) => {
            req.validate()?;
            println!("type=request");
            println!("version={} reserved={}", req.header.version, req.header.reserved);
            println!("service={}", req.service_id);
            println!("k={}", req.committee_size());
            println!("caps={}", hex::encode(req.capabilities.0));
            println!("nonce={}", hex::encode(req.nonce));
        }
    }
    Ok(())
}

fn pow(file: &FileConfig, cmd: Pow) -> Result<bool> {
    let mut params = file.pulse_config().pow;
    let registry = PowRegistry::builtin();
    match cmd {
        Pow::Solve {
            key,
            block,
            difficulty,
            start,
            max_attempts,
        } => {
            if let Some(d) = difficulty {
                params.difficulty_bits = d;
            }
            let key = ConnectorKey::from_hex(&key)?;
            let block = Hash256(fixed_hex("block", &block)?);
            let sol = registry.solve(&key, &block, &params, fixed_hex("start", &start)?, max_attempts)?;
            println!("nonce={} attempts={}", hex::encode(sol.nonce), sol.attempts);
            Ok(true)
        }
        Pow::Verify {
            key,
            block,
            nonce,
            difficulty,
        } => {
            if let Some(d) = difficulty {
                params.difficulty_bits = d;
            }
            let input = PowInput {
                connector_key: ConnectorKey::from_hex(&key)?,
                pulse_block_hash: Hash256(fixed_hex("block", &block)?),
                nonce: fixed_hex("nonce", &nonce)?,
            };
            let ok = registry.verify(&input, &params)?;
            println!("{}", if ok { "valid" } else { "invalid" });
            Ok(ok)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Experiment(Experiment::Infiltration(args)) => infiltration(&file, cli.seed, args)?,
        Command::Experiment(Experiment::Footprint(args)) => footprint(&file, args)?,
        Command::EstimateCost { size, rate, price } => {
            if price < 0.0 {
                bail!("price must not be negative");
            }
            let c = estimate_cost(size, rate, price);
            println!("fee_sat={} fee_usd={}", c.fee_sat, c.usd_display());
        }
        Command::Simulate(args) => simulate(&file, cli.seed, args)?,
        Command::Encode(cmd) => encode(cmd)?,
        Command::Decode { script } => decode(&script)?,
        Command::Pow(cmd) => return pow(&file, cmd),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
