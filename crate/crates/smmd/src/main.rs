//! Thin command-line front end; all functionality lives in the library.

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};
use smmd::data::{self, SchemaConfig, SplitManifest};
use smmd::harness::{self, RunConfig, RunMode, TransportKind, run_table_experiment};
use smmd::he::{KeyPair, keygen};
use smmd::he::fixed::FixedPointParams;
use smmd::kernels::KernelSpec;
use smmd::model::Checkpoint;
use smmd::protocol::Role;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "smmd",
    about = "Two-party federated transfer learning with a securely computed MMD alignment loss",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a keypair and print/save it as hex JSON (training runs
    /// derive their keys from --seed-crypto; this is a standalone utility).
    Keygen(KeygenArgs),
    /// Split a CSV into vertical source/target views plus train/test files.
    Split(SplitArgs),
    /// Train in plaintext, encrypted, or source-only mode and evaluate.
    Train(TrainArgs),
    /// Evaluate saved checkpoints on a dataset's held-out target view.
    Eval(EvalArgs),
    /// Run the kernel-grid table experiment (rows: encrypted / plaintext /
    /// source-only).
    Table(TableArgs),
    /// Micro-benchmarks for the HE primitives and one protocol round.
    Bench(BenchArgs),
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, default_value_t = 2048)]
    bits: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "credit")]
    schema: String,
    #[arg(long, default_value_t = 0.5)]
    source_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by train/table; every flag overrides the config file, which
/// overrides the defaults.
#[derive(Args, Clone)]
struct CommonTrainArgs {
    /// TOML config file with the same field names as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema name: credit, census, or synthetic.
    #[arg(long)]
    schema: Option<String>,
    /// Seeded row subset for desk-scale runs (0 keeps all rows).
    #[arg(long)]
    subset_rows: Option<usize>,
    /// Use the full dataset (clears subset_rows).
    #[arg(long, default_value_t = false)]
    full: bool,
    /// linear | poly | gaussian
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    poly_degree: Option<u32>,
    #[arg(long)]
    poly_c: Option<f64>,
    /// auto | exact | taylor2
    #[arg(long)]
    kernel_mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    key_bits: Option<u64>,
    #[arg(long)]
    frac_bits: Option<u32>,
    #[arg(long)]
    int_bits: Option<u32>,
    #[arg(long)]
    source_fraction: Option<f64>,
    #[arg(long)]
    overlap_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Comma-separated widths of the domain-specific layers, e.g. "128".
    #[arg(long)]
    l1_widths: Option<String>,
    /// Comma-separated widths of the aligned layers, e.g. "64".
    #[arg(long)]
    l2_widths: Option<String>,
    /// relu | tanh
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_model: Option<u64>,
    #[arg(long)]
    seed_crypto: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// plaintext | encrypted | source_only
    #[arg(long)]
    mode: Option<String>,
    /// loopback | tcp
    #[arg(long)]
    transport: Option<String>,
    /// Two-process TCP mode: listen address (requires --role).
    #[arg(long)]
    listen: Option<String>,
    /// Two-process TCP mode: peer address (requires --role).
    #[arg(long)]
    connect: Option<String>,
    /// source | target (two-process TCP mode only)
    #[arg(long)]
    role: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint_source: PathBuf,
    #[arg(long)]
    checkpoint_target: PathBuf,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: CommonTrainArgs,
    /// Comma-separated kernel grid: linear,poly2,poly3,gauss1,gauss2
    #[arg(long, default_value = "linear,poly2,poly3,gauss1,gauss2")]
    kernels: String,
    /// Comma-separated modes: encrypted,plaintext,source_only
    #[arg(long, default_value = "encrypted,plaintext,source_only")]
    modes: String,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    key_bits: u64,
    #[arg(long, default_value_t = 40)]
    frac_bits: u32,
    #[arg(long, default_value_t = 32)]
    rows: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Keygen(args) => cmd_keygen(args),
        Cmd::Split(args) => cmd_split(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Table(args) => cmd_table(args),
        Cmd::Bench(args) => cmd_bench(args),
    }
}

fn apply_common(cfg: &mut RunConfig, a: &CommonTrainArgs) -> Result<()> {
    if let Some(v) = &a.data {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = &a.schema {
        cfg.schema = v.clone();
    }
    if let Some(v) = a.subset_rows {
        cfg.subset_rows = v;
    }
    if a.full {
        cfg.subset_rows = 0;
    }
    if let Some(v) = &a.kernel {
        cfg.kernel = v.clone();
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = a.poly_degree {
        cfg.poly_degree = v;
    }
    if let Some(v) = a.poly_c {
        cfg.poly_c = v;
    }
    if let Some(v) = &a.kernel_mode {
        cfg.kernel_mode = v.clone();
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.key_bits {
        cfg.key_bits = v;
    }
    if let Some(v) = a.frac_bits {
        cfg.frac_bits = v;
    }
    if let Some(v) = a.int_bits {
        cfg.int_bits = v;
    }
    if let Some(v) = a.source_fraction {
        cfg.source_fraction = v;
    }
    if let Some(v) = a.overlap_fraction {
        cfg.overlap_fraction = v;
    }
    if let Some(v) = a.test_fraction {
        cfg.test_fraction = v;
    }
    if let Some(v) = &a.l1_widths {
        cfg.l1_widths = parse_widths(v)?;
    }
    if let Some(v) = &a.l2_widths {
        cfg.l2_widths = parse_widths(v)?;
    }
    if let Some(v) = &a.activation {
        cfg.activation = v.clone();
    }
    if let Some(v) = a.seed_data {
        cfg.seed_data = v;
    }
    if let Some(v) = a.seed_model {
        cfg.seed_model = v;
    }
    if let Some(v) = a.seed_crypto {
        cfg.seed_crypto = v;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = &a.out {
        cfg.out = Some(v.clone());
    }
    Ok(())
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<usize>().context("bad width list"))
        .collect()
}

fn load_config(common: &CommonTrainArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, common)?;
    Ok(cfg)
}

fn cmd_keygen(args: KeygenArgs) -> Result<()> {
    let t0 = Instant::now();
    let kp: KeyPair = keygen(args.bits, args.seed)?;
    let (n, g) = kp.public.to_hex_parts();
    let json = serde_json::json!({
        "key_id": format!("{:016x}", kp.public.key_id()),
        "bits": args.bits,
        "seed": args.seed,
        "public": { "n": n, "g": g },
    });
    let text = serde_json::to_string_pretty(&json)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            println!("wrote public key to {} ({} ms)", path.display(), t0.elapsed().as_millis());
        }
        None => println!("{text}"),
    }
    println!(
        "note: training runs derive both parties' keys from --seed-crypto; \
         this command is a standalone utility"
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let schema = SchemaConfig::by_name(&args.schema)
        .with_context(|| format!("unknown schema {:?}", args.schema))?;
    let dataset = data::load_csv(&args.data, &schema)?;
    println!("loaded {} rows x {} features", dataset.n_samples(), dataset.n_features());
    let split =
        data::vertical_split(&dataset, args.source_fraction, args.overlap_fraction, args.seed)?;
    let (train, test) = data::train_test_split(&split, args.test_fraction, args.seed + 1)?;
    std::fs::create_dir_all(&args.out)?;
    let dir = &args.out;

    data::write_view_csv(
        &dir.join("train_source.csv"),
        &train.source.columns,
        &train.source.features,
    )?;
    data::write_view_csv(
        &dir.join("train_target.csv"),
        &train.target_columns.clone(),
        train.target.train_features(),
    )?;
    data::write_view_csv(&dir.join("test_source.csv"), &train.source.columns, &test.source_features)?;
    data::write_view_csv(&dir.join("test_target.csv"), &train.target_columns, &test.target_features)?;
    write_labels_csv(&dir.join("train_source_labels.csv"), &train.source.labels)?;
    write_labels_csv(&dir.join("test_labels.csv"), test.labels_for_eval())?;
    write_indices_csv(&dir.join("co_occurrence.csv"), &train.co_indices)?;

    let manifest = SplitManifest::describe(
        &train,
        args.seed,
        args.source_fraction,
        args.overlap_fraction,
        Some(args.test_fraction),
    );
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "wrote views to {} (source {} cols, target {} cols, {} co-occurrence rows)",
        dir.display(),
        train.source_columns.len(),
        train.target_columns.len(),
        train.n_co_occurrence()
    );
    Ok(())
}

fn write_labels_csv(path: &Path, labels: &[f64]) -> Result<()> {
    let mut out = String::from("label\n");
    for y in labels {
        out.push_str(&format!("{y}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_indices_csv(path: &Path, idx: &[usize]) -> Result<()> {
    let mut out = String::from("row\n");
    for i in idx {
        out.push_str(&format!("{i}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(mode) = &args.mode {
        cfg.mode = match mode.as_str() {
            "plaintext" => RunMode::Plaintext,
            "encrypted" => RunMode::Encrypted,
            "source_only" | "source-only" => RunMode::SourceOnly,
            other => bail!("unknown mode {other:?} (plaintext, encrypted, source_only)"),
        };
    }
    if let Some(t) = &args.transport {
        cfg.transport = match t.as_str() {
            "loopback" => TransportKind::Loopback,
            "tcp" => TransportKind::Tcp,
            other => bail!("unknown transport {other:?} (loopback, tcp)"),
        };
    }
    cfg.listen = args.listen.clone();
    cfg.connect = args.connect.clone();
    if let Some(role) = &args.role {
        cfg.role = Some(match role.as_str() {
            "source" => Role::Source,
            "target" => Role::Target,
            other => bail!("unknown role {other:?} (source, target)"),
        });
    }
    cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("# {}", cfg.echo());

    let t0 = Instant::now();
    let outcome = harness::train(&cfg)?;
    let wall = t0.elapsed().as_millis();
    println!(
        "trained {} epochs in {wall} ms (final loss {:.6})",
        outcome.epoch_losses.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    if let Some((before, after)) = outcome.alignment_mmd {
        println!("aligned-layer MMD^2: {before:.6} -> {after:.6}");
    }
    if let Some(m) = &outcome.metrics {
        println!(
            "target test metrics: fscore {:.3}  auc {:.3}  precision {:.3}",
            m.fscore, m.auc, m.precision
        );
    } else {
        println!("two-process mode: peer holds the other network; metrics skipped");
    }

    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        let mut seeds = HashMap::new();
        seeds.insert("seed_data".to_string(), cfg.seed_data);
        seeds.insert("seed_model".to_string(), cfg.seed_model);
        seeds.insert("seed_crypto".to_string(), cfg.seed_crypto);
        let ckpt = Checkpoint::from_params(&outcome.source_net, seeds.clone());
        let name = match cfg.role {
            Some(Role::Target) => "checkpoint_target.json",
            _ => "checkpoint_source.json",
        };
        std::fs::write(dir.join(name), ckpt.to_json()?)?;
        if let Some(target) = &outcome.target_net {
            let ckpt = Checkpoint::from_params(target, seeds);
            std::fs::write(dir.join("checkpoint_target.json"), ckpt.to_json()?)?;
        }
        if let Some(m) = &outcome.metrics {
            let report = serde_json::json!({
                "config": cfg,
                "metrics": m,
                "epoch_losses": outcome.epoch_losses,
            });
            std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
        }
        println!("wrote outputs to {}", dir.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let source = Checkpoint::from_json(&std::fs::read_to_string(&args.checkpoint_source)?)?
        .into_params()?;
    let target = Checkpoint::from_json(&std::fs::read_to_string(&args.checkpoint_target)?)?
        .into_params()?;
    let prepared = harness::prepare_data(&cfg)?;
    let metrics = harness::evaluate(&source, &target, &prepared.train, &prepared.test, cfg.threshold)?;
    println!("# {}", cfg.echo());
    println!(
        "target test metrics: fscore {:.3}  auc {:.3}  precision {:.3}",
        metrics.fscore, metrics.auc, metrics.precision
    );
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    }
    Ok(())
}

fn parse_kernel_grid(s: &str) -> Result<Vec<(String, KernelSpec)>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let spec = match part.trim() {
            "linear" => KernelSpec::linear(),
            "poly2" => KernelSpec::polynomial(0.0, 2),
            "poly3" => KernelSpec::polynomial(0.0, 3),
            "gauss1" => KernelSpec::gaussian(1.0),
            "gauss2" => KernelSpec::gaussian(2.0),
            other => bail!(
                "unknown kernel {other:?} (use linear, poly2, poly3, gauss1, gauss2)"
            ),
        };
        out.push((part.trim().to_string(), spec));
    }
    if out.is_empty() {
        bail!("empty kernel grid");
    }
    Ok(out)
}

fn cmd_table(args: TableArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let kernels = parse_kernel_grid(&args.kernels)?;
    let mut modes = Vec::new();
    for part in args.modes.split(',').filter(|p| !p.trim().is_empty()) {
        modes.push(match part.trim() {
            "encrypted" => RunMode::Encrypted,
            "plaintext" => RunMode::Plaintext,
            "source_only" | "source-only" => RunMode::SourceOnly,
            other => bail!("unknown mode {other:?}"),
        });
    }
    let report = run_table_experiment(&cfg, &kernels, &modes, args.seeds)?;
    print!("{}", report.to_text());
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("table.txt"), report.to_text())?;
        std::fs::write(dir.join("table.csv"), report.to_csv())?;
        std::fs::write(dir.join("manifest.json"), report.to_json_manifest()?)?;
        println!("wrote table outputs to {}", dir.display());
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    use num_bigint::BigUint;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);

    let t0 = Instant::now();
    let kp = keygen(args.key_bits, 7)?;
    println!("keygen {:>6} bits: {:>10.1} ms", args.key_bits, t0.elapsed().as_secs_f64() * 1e3);

    let params = FixedPointParams::new(args.frac_bits, 128, kp.public.modulus())?;
    let m = params.encode(1.2345)?;
    let reps = 200u32;

    let t0 = Instant::now();
    let mut ct = kp.public.encrypt(&m, &mut rng)?;
    for _ in 1..reps {
        ct = kp.public.encrypt(&m, &mut rng)?;
    }
    println!("encrypt             : {:>10.3} ms/op", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let ct2 = kp.public.encrypt(&m, &mut rng)?;
    let t0 = Instant::now();
    for _ in 0..reps {
        ct = kp.public.add_cipher(&ct, &ct2)?;
    }
    println!("add_cipher          : {:>10.3} ms/op", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let s = BigUint::from(12345u32);
    let t0 = Instant::now();
    for _ in 0..reps {
        ct = kp.public.mul_plain(&ct2, &s)?;
    }
    println!("mul_plain (small s) : {:>10.3} ms/op", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = kp.secret.decrypt(&ct)?;
    }
    println!("decrypt             : {:>10.3} ms/op", t0.elapsed().as_secs_f64() * 1e3 / reps as f64);

    // one encrypted round on a synthetic desk-scale batch
    let cfg = RunConfig {
        schema: "synthetic".into(),
        subset_rows: args.rows * 3,
        mode: RunMode::Encrypted,
        epochs: 1,
        batch_size: args.rows,
        key_bits: args.key_bits,
        frac_bits: args.frac_bits,
        l1_widths: vec![6],
        l2_widths: vec![4],
        ..Default::default()
    };
    let prepared = harness::prepare_data(&cfg)?;
    let t0 = Instant::now();
    let _ = harness::run_encrypted_in_process(&cfg, &prepared, None)?;
    println!(
        "protocol round      : {:>10.1} ms (batch {}, linear kernel, aligned width 4)",
        t0.elapsed().as_secs_f64() * 1e3,
        args.rows
    );
    Ok(())
}
