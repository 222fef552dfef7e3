//! `marykd`: key generation, analysis, networked stations, tap, OTP files.

mod config;
mod store;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mary_kd::bitpool::{BitPoolError, BitPoolState, GaussianNoise, RoundOutput, RoundParams};
use mary_kd::bits::{self, Bits};
use mary_kd::channel::{self, Dominance};
use mary_kd::entropy::{self, Lfsr, LfsrSpec, PhysicalRng};
use mary_kd::otp::{self, CipherEnvelope, OtpError};
use mary_kd::security;
use mary_kd::stations::{self, FrameError, GroundTruth, Role, SessionError, SessionState};

use config::{hex, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "marykd", version, about = "Noise-cloaked M-ary key distribution")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set coding.m=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and its HELLO digest, then exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Attack,
    Fraction,
    Leak,
    Conditions,
}

#[derive(Subcommand)]
enum Command {
    /// Generate whitened physical random bits.
    Keygen {
        /// Number of bits (default: round.a).
        #[arg(long)]
        bits: Option<usize>,
        /// Packed output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip LFSR whitening.
        #[arg(long)]
        raw: bool,
        /// Also write an initial pool of m·a basis bits (seeded by seeds.basis).
        #[arg(long)]
        pool_out: Option<PathBuf>,
    },
    /// Write analysis tables as CSV.
    Analyze {
        #[arg(long, value_enum, default_value = "attack")]
        table: Table,
        /// `lambda=A..B` (inclusive); selects the leak table.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run TX, RX and a tap in one process and print the round budget.
    SimulateRound {
        #[arg(long, default_value_t = 1)]
        rounds: u64,
        /// Append distilled key bits to this key store.
        #[arg(long)]
        key_out: Option<PathBuf>,
        /// Write the recorded frames here.
        #[arg(long)]
        transcript_out: Option<PathBuf>,
    },
    /// Transmitter station: listen and run rounds.
    ServeTx {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: u64,
        #[arg(long)]
        key_out: Option<PathBuf>,
    },
    /// Receiver station: connect and run rounds.
    ServeRx {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: u64,
        #[arg(long)]
        key_out: Option<PathBuf>,
    },
    /// Attack a recorded transcript.
    Tap {
        #[arg(long)]
        transcript: PathBuf,
        /// Write guessed fresh bits, packed.
        #[arg(long)]
        guesses_out: Option<PathBuf>,
    },
    /// Encrypt a file with the decentralized one-time pad.
    Encrypt {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decrypt an envelope.
    Decrypt {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Line collision probabilities as CSV.
    Collide {
        #[arg(long, default_value_t = 20)]
        users: u64,
        #[arg(long, default_value_t = 100_000_000)]
        key_bits: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {e:#}");
            ExitCode::from(code)
        }
    }
}

/// Machine-readable error kind and exit code.
fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ("config", 2);
        }
        if let Some(s) = cause.downcast_ref::<SessionError>() {
            return match s {
                SessionError::TranscriptMismatch => ("verification", 4),
                SessionError::BitPool(BitPoolError::CrcMismatch) => ("verification", 4),
                _ => ("protocol", 3),
            };
        }
        if cause.downcast_ref::<FrameError>().is_some() {
            return ("protocol", 3);
        }
        if matches!(cause.downcast_ref::<OtpError>(), Some(OtpError::CrcMismatch))
            || matches!(cause.downcast_ref::<BitPoolError>(), Some(BitPoolError::CrcMismatch))
        {
            return ("verification", 4);
        }
    }
    ("error", 1)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.print_config {
        print!("{}", cfg.canonical());
        println!("# hello_digest = {}", hex(&cfg.hello_digest()?));
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!(ConfigError("no command given; see --help".into()));
    };
    match command {
        Command::Keygen {
            bits,
            out,
            raw,
            pool_out,
        } => keygen(&cfg, bits, out.as_deref(), raw, pool_out.as_deref()),
        Command::Analyze { table, sweep, out } => analyze(&cfg, table, sweep.as_deref(), out.as_deref()),
        Command::SimulateRound {
            rounds,
            key_out,
            transcript_out,
        } => simulate(&cfg, rounds, key_out.as_deref(), transcript_out.as_deref()),
        Command::ServeTx { pool, rounds, key_out } => serve_tx(&cfg, &pool, rounds, key_out.as_deref()),
        Command::ServeRx { pool, rounds, key_out } => serve_rx(&cfg, &pool, rounds, key_out.as_deref()),
        Command::Tap {
            transcript,
            guesses_out,
        } => tap(&cfg, &transcript, guesses_out.as_deref()),
        Command::Encrypt { keys, input, out } => encrypt(&cfg, &keys, &input, &out),
        Command::Decrypt { keys, input, out } => decrypt(&keys, &input, &out),
        Command::Collide { users, key_bits, out } => collide(&cfg, users, key_bits, out.as_deref()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// `count` whitened (or raw) bits from the simulated physical source.
fn physical_bits(cfg: &RunConfig, seed: u64, count: usize, whiten: bool) -> Result<Bits> {
    let mut rng = PhysicalRng::new(&cfg.entropy(seed)?);
    Ok(if whiten {
        rng.whitened_bits(count, &mut Lfsr::new(&LfsrSpec::default_whitener()))
    } else {
        rng.raw_bits(count)
    })
}

fn initial_pool(cfg: &RunConfig) -> Result<BitPoolState> {
    let mary = cfg.mary()?;
    let basis = physical_bits(cfg, cfg.seeds.basis, mary.bits_per_basis() as usize * cfg.round.a, true)?;
    Ok(BitPoolState::new(mary, cfg.round.a, basis)?)
}

/// Fresh bits for round `round`.
fn fresh_bits(cfg: &RunConfig, round: u64) -> Result<Bits> {
    physical_bits(cfg, cfg.seeds.fresh.wrapping_add(round), cfg.round.a, true)
}

fn keygen(cfg: &RunConfig, count: Option<usize>, out: Option<&Path>, raw: bool, pool_out: Option<&Path>) -> Result<()> {
    let count = count.unwrap_or(cfg.round.a);
    let bits = physical_bits(cfg, cfg.seeds.fresh, count, !raw)?;
    let hist = entropy::run_length_histogram(&bits);
    let mut line = format!(
        "bits={} ones_fraction={:.6} longest_run={}",
        bits.len(),
        entropy::ones_fraction(&bits),
        hist.keys().next_back().copied().unwrap_or(0)
    );
    if let Ok(fit) = entropy::fit_run_length(&hist) {
        line.push_str(&format!(" run_fit_c={:.1} run_fit_epsilon={:.5}", fit.c, fit.epsilon));
    }
    println!("{line}");
    if let Some(p) = out {
        fs::write(p, bits::pack(&bits)).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = pool_out {
        let pool = initial_pool(cfg)?;
        store::save_pool(p, &pool)?;
        println!("pool={} a={} basis_bits={}", p.display(), pool.a(), pool.basis_bits().len());
    }
    Ok(())
}

fn parse_sweep(s: &str) -> Result<(u64, u64)> {
    let (key, range) = s
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("sweep `{s}` is not key=A..B")))?;
    if key.trim() != "lambda" {
        bail!(ConfigError(format!("unsupported sweep key `{key}`; only lambda")));
    }
    let (lo, hi) = range
        .split_once("..")
        .ok_or_else(|| ConfigError(format!("sweep range `{range}` is not A..B")))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<u64>()
            .map_err(|_| ConfigError(format!("bad sweep bound `{x}`")))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if lo > hi {
        bail!(ConfigError(format!("empty sweep {lo}..{hi}")));
    }
    Ok((lo, hi))
}

fn analyze(cfg: &RunConfig, table: Table, sweep: Option<&str>, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    let (table, range) = match sweep {
        Some(s) => (Table::Leak, parse_sweep(s)?),
        None => (table, (0, 64)),
    };
    let mary = cfg.mary()?;
    match table {
        Table::Leak => {
            writeln!(w, "lambda,log2_i,i")?;
            for l in range.0..=range.1 {
                let b = security::pa_leak_bound(l);
                writeln!(w, "{l},{:.6},{:e}", b.log2_bits, b.bits())?;
            }
        }
        Table::Attack => {
            writeln!(w, "m,sigma_v,sigma_over_step,p_success_printed,p_error_printed,p_success_exact,p_error_exact")?;
            let step = mary.lattice_step();
            let mut sigmas: Vec<f64> = (0..=30).map(|i| step * 10f64.powf(-1.0 + i as f64 / 10.0)).collect();
            sigmas.push(cfg.sigma_v()?);
            for s in sigmas {
                let p = security::attack_stats(s, &mary)?;
                let e = security::exact_attack_stats(s, &mary)?;
                writeln!(
                    w,
                    "{},{s:e},{:.6},{:.8},{:.8},{:.8},{:.8}",
                    mary.bits_per_basis(),
                    s / step,
                    p.p_success,
                    p.p_error,
                    e.p_success,
                    e.p_error
                )?;
            }
        }
        Table::Fraction => {
            writeln!(w, "m,a,p_success,t,lambda,n,r,fraction_left")?;
            let m = u64::from(mary.bits_per_basis());
            let a = cfg.round.a as u64;
            let lambda = cfg.round.lambda;
            for i in 0..=20 {
                let ps = 0.5 + 0.005 * i as f64;
                let t = security::leaked_bits(a, ps)?;
                let n = a * (1 + m);
                let r = n.saturating_sub(t + lambda);
                let f = security::fraction_left(n, t, lambda).unwrap_or(0.0);
                writeln!(w, "{m},{a},{ps:.3},{t},{lambda},{n},{r},{f:.8}")?;
            }
        }
        Table::Conditions => {
            writeln!(
                w,
                "optical_power,mean_voltage,sigma_v,optical_over_thermal,ratio,fluctuation_resolved,fluctuation_margin,noise_below_bit_separation,separation_margin,noise_covers_bases,cover_margin"
            )?;
            let params = cfg.channel_params()?;
            for i in 0..=16 {
                let power = 1e-6 * 10f64.powf(i as f64 / 4.0);
                let p = params.with_optical_power(power)?;
                let c = channel::check_conditions(&p, &mary, Dominance::default());
                writeln!(
                    w,
                    "{power:e},{:.6},{:e},{},{:.6},{},{:e},{},{:.6},{},{:.6}",
                    channel::mean_voltage(&p),
                    channel::sigma_v(&p),
                    c.optical_over_thermal.satisfied,
                    c.optical_over_thermal.margin,
                    c.fluctuation_resolved.satisfied,
                    c.fluctuation_resolved.margin,
                    c.noise_below_bit_separation.satisfied,
                    c.noise_below_bit_separation.margin,
                    c.noise_covers_bases.satisfied,
                    c.noise_covers_bases.margin
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn round_params(cfg: &RunConfig, round: u64) -> RoundParams {
    RoundParams {
        mode: cfg.pa_mode(),
        ..RoundParams::new(cfg.round.lambda, cfg.shuffle_seed(round))
    }
}

fn budget_line(out: &RoundOutput, m: u32, a: usize) -> String {
    let b = &out.budget;
    format!(
        "round={} a={a} m={m} n={} t={} lambda={} r={} z={} fraction_left={:.6} log2_leak_bound={:.4}",
        out.round_index,
        b.n,
        b.t,
        b.lambda,
        b.r,
        b.z,
        b.fraction_left,
        b.mutual_info_bound.log2_bits
    )
}

fn simulate(cfg: &RunConfig, rounds: u64, key_out: Option<&Path>, transcript_out: Option<&Path>) -> Result<()> {
    let mary = cfg.mary()?;
    let sigma = cfg.sigma_v()?;
    let stats = cfg.leak_stats()?;
    let opts = cfg.session_options();
    let mode = cfg.pa_mode();
    let pool = initial_pool(cfg)?;
    let (mut tx_end, mut rx_end) = stations::duplex();
    let timeout = Some(Duration::from_secs(cfg.network.timeout_secs));
    tx_end.set_read_timeout(timeout);
    rx_end.set_read_timeout(timeout);
    let rx_pool = pool.clone();
    let rx = thread::spawn(move || -> Result<Vec<RoundOutput>, SessionError> {
        let mut s = SessionState::new(Role::Rx, rx_pool, mode);
        (0..rounds).map(|_| stations::run_rx_session(&mut rx_end, &mut s)).collect()
    });
    let mut tx = SessionState::new(Role::Tx, pool, mode);
    tx.set_recording(true);
    let mut noise = GaussianNoise::new(sigma, cfg.seeds.noise);
    let mut tx_outs = Vec::new();
    let mut truths = Vec::new();
    for r in 0..rounds {
        let fresh = fresh_bits(cfg, r)?;
        let out = stations::run_tx_session(&mut tx_end, &mut tx, &fresh, &mut noise, &round_params(cfg, r), &stats, &opts)?;
        truths.push(GroundTruth {
            fresh_bits: fresh,
            z_bits: Some(out.z_bits.clone()),
        });
        tx_outs.push(out);
    }
    let rx_outs = rx.join().map_err(|_| anyhow!("receiver thread panicked"))??;
    let transcript = tx.take_transcript();
    let frames = stations::split_frames(&transcript)?;
    let report = stations::run_tap(&frames, &mary, sigma, &truths)?;
    println!(
        "sigma_v={sigma:e} p_success={:.8} leak_model={:?} digest_allowance={}",
        stats.p_success, cfg.round.leak_model, opts.digest_allowance
    );
    for ((t, r), tr) in tx_outs.iter().zip(&rx_outs).zip(&report.rounds) {
        println!(
            "{} keys_equal={} tap_agreement={:.5} tap_post_pa_agreement={:.5}",
            budget_line(t, mary.bits_per_basis(), cfg.round.a),
            t == r,
            tr.agreement.unwrap_or(f64::NAN),
            tr.post_pa_agreement.unwrap_or(f64::NAN)
        );
        if t != r {
            bail!(SessionError::TranscriptMismatch);
        }
        if let Some(p) = key_out {
            store::append_key(p, &t.z_bits)?;
        }
    }
    if let Some(e) = report.predicted_exact {
        println!("tap_predicted_exact={:.5}", e.p_success);
    }
    if let Some(p) = transcript_out {
        fs::write(p, &transcript)?;
    }
    Ok(())
}

fn serve_tx(cfg: &RunConfig, pool_path: &Path, rounds: u64, key_out: Option<&Path>) -> Result<()> {
    let mary = cfg.mary()?;
    let pool = store::load_pool(pool_path, mary)?;
    if pool.a() != cfg.round.a {
        bail!(ConfigError(format!("pool holds a = {}, config says {}", pool.a(), cfg.round.a)));
    }
    let stats = cfg.leak_stats()?;
    let opts = cfg.session_options();
    let timeout = Duration::from_secs(cfg.network.timeout_secs);
    let listener = TcpListener::bind(&cfg.network.listen)
        .with_context(|| format!("binding {}", cfg.network.listen))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let mut links = Vec::new();
    for _ in 0..cfg.network.receivers {
        let (stream, peer) = listener.accept()?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        eprintln!("receiver connected from {peer}");
        links.push((stream, SessionState::new(Role::Tx, pool.clone(), cfg.pa_mode())));
    }
    let mut noise = GaussianNoise::new(cfg.sigma_v()?, cfg.seeds.noise);
    for _ in 0..rounds {
        let r = links[0].1.pool().round_index();
        let fresh = fresh_bits(cfg, r)?;
        let prepared = stations::prepare_round(links[0].1.pool(), &fresh, &mut noise, &round_params(cfg, r), &stats, &opts)?;
        let results: Vec<Result<(), SessionError>> = thread::scope(|s| {
            let handles: Vec<_> = links
                .iter_mut()
                .map(|(stream, state)| {
                    let prepared = &prepared;
                    let opts = &opts;
                    s.spawn(move || stations::serve_round(stream, state, prepared, opts))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("session thread")).collect()
        });
        for res in results {
            res?;
        }
        for (_, state) in &mut links {
            state.commit(&prepared)?;
        }
        store::save_pool(pool_path, links[0].1.pool())?;
        if let Some(p) = key_out {
            store::append_key(p, &prepared.output.z_bits)?;
        }
        println!("{}", budget_line(&prepared.output, mary.bits_per_basis(), cfg.round.a));
    }
    Ok(())
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if start.elapsed() < timeout => {
                let _ = e;
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e).with_context(|| format!("connecting to {addr}")),
        }
    }
}

fn serve_rx(cfg: &RunConfig, pool_path: &Path, rounds: u64, key_out: Option<&Path>) -> Result<()> {
    let mary = cfg.mary()?;
    let pool = store::load_pool(pool_path, mary)?;
    let timeout = Duration::from_secs(cfg.network.timeout_secs);
    let mut stream = connect(&cfg.network.connect, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let mut state = SessionState::new(Role::Rx, pool, cfg.pa_mode());
    for _ in 0..rounds {
        let out = stations::run_rx_session(&mut stream, &mut state)?;
        store::save_pool(pool_path, state.pool())?;
        if let Some(p) = key_out {
            store::append_key(p, &out.z_bits)?;
        }
        println!("{}", budget_line(&out, mary.bits_per_basis(), cfg.round.a));
    }
    Ok(())
}

fn tap(cfg: &RunConfig, transcript: &Path, guesses_out: Option<&Path>) -> Result<()> {
    let mary = cfg.mary()?;
    let bytes = fs::read(transcript).with_context(|| format!("reading {}", transcript.display()))?;
    let frames = stations::split_frames(&bytes)?;
    let report = stations::run_tap(&frames, &mary, cfg.sigma_v()?, &[])?;
    let mut all = Bits::new();
    for r in &report.rounds {
        println!(
            "round={} samples={} guessed_ones_fraction={:.5} z_guess_bits={}",
            r.round,
            r.codes.len(),
            entropy::ones_fraction(&r.guessed_bits),
            r.guessed_z.len()
        );
        all.extend_from_bitslice(&r.guessed_bits);
    }
    if let (Some(p), Some(e)) = (report.predicted, report.predicted_exact) {
        println!("predicted_p_success_printed={:.6} predicted_p_success_exact={:.6}", p.p_success, e.p_success);
    }
    if let Some(p) = guesses_out {
        fs::write(p, bits::pack(&all))?;
    }
    Ok(())
}

fn key_matrix(keys: &Path) -> Result<otp::KeyMatrix> {
    let key_bits = store::read_keys(keys)?;
    Ok(otp::build_key_matrix(&key_bits)?.0)
}

fn encrypt(cfg: &RunConfig, keys: &Path, input: &Path, out: &Path) -> Result<()> {
    let mut matrix = key_matrix(keys)?;
    let data = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let msg = Bits::from_vec(data);
    let line_count = cfg.round.line_count.min(matrix.d());
    let env = otp::encrypt_decentralized(&mut matrix, &msg, line_count, cfg.seeds.encrypt)?;
    fs::write(out, env.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "d={} blocks={} lines_per_block={line_count} refresh_needed={}",
        matrix.d(),
        env.blocks.len(),
        matrix.refresh_needed()
    );
    Ok(())
}

fn decrypt(keys: &Path, input: &Path, out: &Path) -> Result<()> {
    let matrix = key_matrix(keys)?;
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let env = CipherEnvelope::from_bytes(&bytes)?;
    let msg = otp::decrypt_decentralized(&matrix, &env)?;
    fs::write(out, bits::pack(&msg)).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn collide(cfg: &RunConfig, users: u64, key_bits: u64, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    let lines = cfg.round.line_count as u32;
    writeln!(w, "users,d,exact,approx,all_{lines}_lines")?;
    for n in 1..=users {
        let p = otp::collision_prob_one(n, key_bits)?;
        let all = otp::collision_prob_all(n, key_bits, lines)?;
        writeln!(w, "{n},{},{:e},{:e},{:e}", key_bits.isqrt(), p.exact, p.approx, all)?;
    }
    w.flush()?;
    Ok(())
}
