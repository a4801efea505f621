//! Run configuration, the training entry point for all three modes, target
//! evaluation, and the kernel-grid table experiment runner.

pub mod metrics;
pub mod trainer;

pub use metrics::{Metrics, auc, evaluate_scores, precision_fscore};

use crate::data::{
    self, Dataset, FederatedSplit, SchemaConfig, TestViews, normalize_split, train_test_split,
    vertical_split,
};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelMode, KernelSpec};
use crate::model::{Activation, NetworkArch, NetworkParams, init_network};
use crate::protocol::party::gather_rows;
use crate::protocol::{
    self, Party, PartyData, Role, SharedConfig, TcpTransport, Transport,
    loopback_pair,
};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Plaintext,
    Encrypted,
    SourceOnly,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Plaintext => write!(f, "plaintext"),
            RunMode::Encrypted => write!(f, "encrypted"),
            RunMode::SourceOnly => write!(f, "source_only"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    Loopback,
    Tcp,
}

/// Full run configuration. File values override defaults; CLI flags
/// override file values; the effective config is echoed into every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV path; when absent, the synthetic demo dataset is used.
    pub dataset: Option<PathBuf>,
    /// Schema name: `credit`, `census`, or `synthetic`.
    pub schema: String,
    /// Random (seeded) row subset for desk-scale runs; 0 keeps everything.
    pub subset_rows: usize,
    pub mode: RunMode,
    /// Kernel family: `linear`, `poly`, or `gaussian`.
    pub kernel: String,
    pub sigma: f64,
    pub poly_degree: u32,
    pub poly_c: f64,
    /// `auto` (exact in plaintext, taylor2 in encrypted), `exact`, `taylor2`.
    pub kernel_mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Co-occurrence rows per round; 0 = full batch. Encrypted mode caps an
    /// unset value at 256 (the pairing work is quadratic in the batch).
    pub batch_size: usize,
    pub key_bits: u64,
    pub frac_bits: u32,
    pub int_bits: u32,
    pub source_fraction: f64,
    pub overlap_fraction: f64,
    pub test_fraction: f64,
    pub l1_widths: Vec<usize>,
    pub l2_widths: Vec<usize>,
    pub activation: String,
    pub transport: TransportKind,
    /// Two-process TCP mode: address to listen on (this process is one
    /// party; `role` must be set).
    pub listen: Option<String>,
    /// Two-process TCP mode: address to connect to.
    pub connect: Option<String>,
    pub role: Option<Role>,
    pub seed_data: u64,
    pub seed_model: u64,
    pub seed_crypto: u64,
    pub threshold: f64,
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            schema: "synthetic".into(),
            subset_rows: 0,
            mode: RunMode::Plaintext,
            kernel: "linear".into(),
            sigma: 1.0,
            poly_degree: 2,
            poly_c: 0.0,
            kernel_mode: "auto".into(),
            alpha: 1.0,
            beta: 0.01,
            lr: 0.05,
            epochs: 50,
            batch_size: 0,
            key_bits: 512,
            frac_bits: 40,
            int_bits: 128,
            source_fraction: 0.5,
            overlap_fraction: 0.5,
            test_fraction: 0.2,
            l1_widths: vec![128],
            l2_widths: vec![64],
            activation: "relu".into(),
            transport: TransportKind::Loopback,
            listen: None,
            connect: None,
            role: None,
            seed_data: 1,
            seed_model: 2,
            seed_crypto: 3,
            threshold: 0.0,
            early_stop_patience: 5,
            early_stop_tol: 1e-5,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    pub fn activation_enum(&self) -> Result<Activation> {
        match self.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (use relu or tanh)"
            ))),
        }
    }

    /// Resolves the effective kernel spec, coupling the mode to the run
    /// mode: encrypted gaussian selects taylor2 automatically.
    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let mut spec = match self.kernel.as_str() {
            "linear" => KernelSpec::linear(),
            "poly" | "polynomial" => KernelSpec::polynomial(self.poly_c, self.poly_degree),
            "gaussian" | "rbf" => KernelSpec::gaussian(self.sigma),
            other => {
                return Err(Error::Config(format!(
                    "unknown kernel {other:?} (use linear, poly, or gaussian)"
                )));
            }
        };
        match (self.kernel_mode.as_str(), spec.family) {
            ("auto", KernelFamily::Gaussian) => {
                if self.mode == RunMode::Encrypted {
                    spec.mode = KernelMode::Taylor2;
                }
            }
            ("auto", _) => {}
            ("exact", _) => spec.mode = KernelMode::Exact,
            ("taylor2", KernelFamily::Gaussian) => spec.mode = KernelMode::Taylor2,
            ("taylor2", _) => {
                return Err(Error::Config("taylor2 applies to the gaussian kernel only".into()));
            }
            (other, _) => {
                return Err(Error::Config(format!(
                    "unknown kernel_mode {other:?} (use auto, exact, or taylor2)"
                )));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Batch size after the encrypted-mode cap.
    pub fn effective_batch_size(&self) -> usize {
        if self.mode == RunMode::Encrypted && self.batch_size == 0 {
            256
        } else {
            self.batch_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.kernel_spec()?;
        if self.mode == RunMode::Encrypted {
            if !spec.is_secure_evaluable() {
                if spec.family == KernelFamily::Polynomial && spec.c != 0.0 {
                    return Err(Error::Config(
                        "polynomial secure mode requires c=0".into(),
                    ));
                }
                return Err(Error::Config(format!(
                    "{} cannot run encrypted; choose linear, poly c=0 d in {{2,3}}, \
                     or gaussian (taylor2 is selected automatically)",
                    spec.label()
                )));
            }
            if spec.family == KernelFamily::Polynomial
                && spec.degree == 3
                && self.l2_widths.iter().any(|w| *w > 16)
            {
                return Err(Error::Config(
                    "secure degree-3 polynomial caps aligned-layer width at 16".into(),
                ));
            }
        }
        if (self.listen.is_some() || self.connect.is_some()) && self.role.is_none() {
            return Err(Error::Config(
                "two-process TCP mode needs --role source|target".into(),
            ));
        }
        self.activation_enum()?;
        if self.l2_widths.is_empty() {
            return Err(Error::Config("at least one aligned layer width is required".into()));
        }
        Ok(())
    }

    fn schedule_seed(&self) -> u64 {
        self.seed_data ^ 0x5eed_5c4e_d01e_u64
    }

    fn hyper(&self) -> trainer::TrainHyper {
        trainer::TrainHyper {
            alpha: self.alpha,
            beta: self.beta,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.effective_batch_size(),
            schedule_seed: self.schedule_seed(),
            early_stop_patience: self.early_stop_patience,
            early_stop_tol: self.early_stop_tol,
        }
    }

    /// One-line echo of the effective configuration, printed in every
    /// report header.
    pub fn echo(&self) -> String {
        format!(
            "mode={} schema={} kernel={} alpha={} beta={} lr={} epochs={} batch={} \
             key_bits={} frac_bits={} split={}/{}:{} seeds={}/{}/{}",
            self.mode,
            self.schema,
            self.kernel_spec().map(|s| s.label()).unwrap_or_else(|_| "invalid".into()),
            self.alpha,
            self.beta,
            self.lr,
            self.epochs,
            self.effective_batch_size(),
            self.key_bits,
            self.frac_bits,
            self.source_fraction,
            self.overlap_fraction,
            self.test_fraction,
            self.seed_data,
            self.seed_model,
            self.seed_crypto,
        )
    }
}

/// Data after the full pipeline: loaded, vertically split, sample-split,
/// normalized with train stats.
pub struct PreparedData {
    pub train: FederatedSplit,
    pub test: TestViews,
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let mut dataset = match (&config.dataset, config.schema.as_str()) {
        (Some(path), name) => {
            let schema = SchemaConfig::by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown schema {name:?} for a CSV run")))?;
            data::load_csv(path, &schema)?
        }
        (None, "synthetic") | (None, "") => {
            let n = if config.subset_rows > 0 { config.subset_rows } else { 2000 };
            data::synthetic_credit_like(n, config.seed_data)
        }
        (None, other) => {
            return Err(Error::Config(format!(
                "schema {other:?} needs --data pointing at its CSV file"
            )));
        }
    };
    if config.subset_rows > 0 && config.subset_rows < dataset.n_samples() {
        dataset = subset_rows(&dataset, config.subset_rows, config.seed_data);
    }
    Ok(dataset)
}

fn subset_rows(dataset: &Dataset, k: usize, seed: u64) -> Dataset {
    use rand::SeedableRng;
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..dataset.n_samples()).collect();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0x50b5e7);
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx.sort_unstable();
    let features = gather_rows(&dataset.features, &idx);
    Dataset {
        features,
        labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
        columns: dataset.columns.clone(),
    }
}

pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let dataset = load_dataset(config)?;
    let split = vertical_split(
        &dataset,
        config.source_fraction,
        config.overlap_fraction,
        config.seed_data,
    )?;
    let (train, test) = train_test_split(&split, config.test_fraction, config.seed_data + 1)?;
    let (train, test, _) = normalize_split(&train, &test);
    Ok(PreparedData { train, test })
}

/// Everything a finished run reports.
pub struct TrainOutcome {
    pub config: RunConfig,
    pub source_net: NetworkParams,
    /// Absent in two-process TCP mode when this process played source.
    pub target_net: Option<NetworkParams>,
    pub metrics: Option<Metrics>,
    pub epoch_losses: Vec<f64>,
    /// (before-first-update, after-last-update) aligned-layer MMD^2;
    /// plaintext transfer mode only.
    pub alignment_mmd: Option<(f64, f64)>,
}

/// Trains per the config and evaluates on the held-out target view.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.listen.is_some() || config.connect.is_some() {
        return train_two_process(config);
    }
    let prepared = prepare_data(config)?;
    train_on(config, &prepared)
}

/// Trains on already-prepared data (the table runner reuses one pipeline
/// across cells).
pub fn train_on(config: &RunConfig, prepared: &PreparedData) -> Result<TrainOutcome> {
    config.validate()?;
    let spec = config.kernel_spec()?;
    let activation = config.activation_enum()?;
    let hyper = config.hyper();
    let train_split = &prepared.train;

    let src_arch = NetworkArch::new(
        train_split.source.features.ncols(),
        &config.l1_widths,
        &config.l2_widths,
        activation,
    );
    let source_init = init_network(&src_arch, config.seed_model)?;

    let t0 = Instant::now();
    let outcome = match config.mode {
        RunMode::Plaintext => {
            let tgt_arch = NetworkArch::new(
                train_split.target.n_features(),
                &config.l1_widths,
                &config.l2_widths,
                activation,
            );
            let target_init = init_network(&tgt_arch, config.seed_model + 1)?;
            let co = &train_split.co_indices;
            let s_co = gather_rows(&train_split.source.features, co);
            let t_co = gather_rows(train_split.target.train_features(), co);
            let labels: Vec<f64> =
                co.iter().map(|&i| train_split.source.labels[i]).collect();
            let inputs = trainer::TransferInputs {
                source_features: &s_co,
                target_features: &t_co,
                labels: &labels,
            };
            let out =
                trainer::train_plaintext_transfer(source_init, target_init, &inputs, &spec, &hyper)?;
            TrainOutcome {
                config: config.clone(),
                source_net: out.source_net,
                target_net: Some(out.target_net),
                metrics: None,
                epoch_losses: out.epoch_losses,
                alignment_mmd: Some(out.alignment_mmd),
            }
        }
        RunMode::SourceOnly => {
            let tgt_arch = NetworkArch::new(
                train_split.target.n_features(),
                &config.l1_widths,
                &config.l2_widths,
                activation,
            );
            // the target network stays at initialization: no target updates,
            // no MMD path, no target data access
            let target_init = init_network(&tgt_arch, config.seed_model + 1)?;
            let (trained, losses) = trainer::train_source_only(
                source_init,
                &train_split.source.features,
                &train_split.source.labels,
                &hyper,
            )?;
            TrainOutcome {
                config: config.clone(),
                source_net: trained,
                target_net: Some(target_init),
                metrics: None,
                epoch_losses: losses,
                alignment_mmd: None,
            }
        }
        RunMode::Encrypted => {
            let (source_out, target_out) = run_encrypted_in_process(config, prepared, None)?;
            TrainOutcome {
                config: config.clone(),
                source_net: source_out.net,
                target_net: Some(target_out.net),
                metrics: None,
                epoch_losses: source_out.epoch_losses,
                alignment_mmd: None,
            }
        }
    };
    let wall = t0.elapsed().as_millis() as u64;

    let mut outcome = outcome;
    if let Some(target_net) = &outcome.target_net {
        let mut m = evaluate(
            &outcome.source_net,
            target_net,
            train_split,
            &prepared.test,
            config.threshold,
        )?;
        m.loss_curve = outcome.epoch_losses.clone();
        m.wall_ms.insert("train".into(), wall);
        outcome.metrics = Some(m);
    }
    Ok(outcome)
}

/// Shared config both parties must present at the handshake.
pub fn shared_config(config: &RunConfig, n_co: usize) -> Result<SharedConfig> {
    Ok(SharedConfig {
        kernel: config.kernel_spec()?,
        frac_bits: config.frac_bits,
        int_bits: config.int_bits,
        aligned_widths: config.l2_widths.clone(),
        n_co,
        batch_size: config.effective_batch_size(),
        epochs: config.epochs,
        alpha: config.alpha,
        beta: config.beta,
        lr: config.lr,
        activation: config.activation_enum()?,
        schedule_seed: config.schedule_seed(),
        early_stop_patience: config.early_stop_patience,
        early_stop_tol: config.early_stop_tol,
    })
}

/// Builds the two parties from prepared data.
pub fn build_parties(config: &RunConfig, prepared: &PreparedData) -> Result<(Party, Party)> {
    let activation = config.activation_enum()?;
    let train_split = &prepared.train;
    let co = &train_split.co_indices;
    let shared = shared_config(config, co.len())?;

    let src_arch = NetworkArch::new(
        train_split.source.features.ncols(),
        &config.l1_widths,
        &config.l2_widths,
        activation,
    );
    let tgt_arch = NetworkArch::new(
        train_split.target.n_features(),
        &config.l1_widths,
        &config.l2_widths,
        activation,
    );
    let source = Party::new(
        Role::Source,
        shared.clone(),
        init_network(&src_arch, config.seed_model)?,
        PartyData {
            features: gather_rows(&train_split.source.features, co),
            labels: Some(co.iter().map(|&i| train_split.source.labels[i]).collect()),
        },
        config.key_bits,
        config.seed_crypto,
    )?;
    let target = Party::new(
        Role::Target,
        shared,
        init_network(&tgt_arch, config.seed_model + 1)?,
        PartyData {
            features: gather_rows(train_split.target.train_features(), co),
            labels: None,
        },
        config.key_bits,
        config.seed_crypto + 1,
    )?;
    Ok((source, target))
}

/// Runs the encrypted protocol with both parties in this process, over
/// loopback or local TCP per the config; an optional frame log captures the
/// transcript for auditing.
pub fn run_encrypted_in_process(
    config: &RunConfig,
    prepared: &PreparedData,
    frame_log: Option<protocol::FrameLog>,
) -> Result<(protocol::PartyOutcome, protocol::PartyOutcome)> {
    let (source, target) = build_parties(config, prepared)?;
    let (ts, tt): (Box<dyn Transport>, Box<dyn Transport>) = match config.transport {
        TransportKind::Loopback => {
            let (a, b) = loopback_pair();
            (Box::new(a), Box::new(b))
        }
        TransportKind::Tcp => {
            let (listener, addr) = TcpTransport::bind_ephemeral()?;
            let accept = std::thread::spawn(move || TcpTransport::from_listener(&listener));
            let client = TcpTransport::connect(addr)?;
            let server = accept
                .join()
                .map_err(|_| Error::Transport("accept thread panicked".into()))??;
            (Box::new(server), Box::new(client))
        }
    };
    let (ts, tt): (Box<dyn Transport>, Box<dyn Transport>) = match frame_log {
        Some(log) => (
            Box::new(protocol::RecordingTransport::new(BoxedTransport(ts), log.clone())),
            Box::new(BoxedTransport(tt)),
        ),
        None => (ts, tt),
    };
    protocol::run_two_party(source, target, ts, tt)
}

/// Newtype making a boxed transport itself a transport, so wrappers can
/// stack over either concrete implementation.
pub struct BoxedTransport(pub Box<dyn Transport>);

impl Transport for BoxedTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.0.send_frame(frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>> {
        self.0.recv_frame()
    }
}

/// Two-process TCP mode: this process plays one party; the peer runs
/// elsewhere. No evaluation happens here (the peer's network never leaves
/// its process); the trained local network is returned for checkpointing.
fn train_two_process(config: &RunConfig) -> Result<TrainOutcome> {
    let role = config.role.ok_or_else(|| Error::Config("role required".into()))?;
    let prepared = prepare_data(config)?;
    let train_split = &prepared.train;
    let co = &train_split.co_indices;
    let shared = shared_config(config, co.len())?;
    let activation = config.activation_enum()?;

    let party = match role {
        Role::Source => {
            let arch = NetworkArch::new(
                train_split.source.features.ncols(),
                &config.l1_widths,
                &config.l2_widths,
                activation,
            );
            Party::new(
                role,
                shared,
                init_network(&arch, config.seed_model)?,
                PartyData {
                    features: gather_rows(&train_split.source.features, co),
                    labels: Some(co.iter().map(|&i| train_split.source.labels[i]).collect()),
                },
                config.key_bits,
                config.seed_crypto,
            )?
        }
        Role::Target => {
            let arch = NetworkArch::new(
                train_split.target.n_features(),
                &config.l1_widths,
                &config.l2_widths,
                activation,
            );
            Party::new(
                role,
                shared,
                init_network(&arch, config.seed_model + 1)?,
                PartyData {
                    features: gather_rows(train_split.target.train_features(), co),
                    labels: None,
                },
                config.key_bits,
                config.seed_crypto + 1,
            )?
        }
    };
    let mut transport: Box<dyn Transport> = if let Some(addr) = &config.listen {
        Box::new(TcpTransport::accept_one(addr.as_str())?)
    } else {
        let addr = config.connect.as_ref().expect("validated");
        Box::new(TcpTransport::connect(addr.as_str())?)
    };
    let outcome = party.run(&mut *transport)?;
    Ok(TrainOutcome {
        config: config.clone(),
        source_net: outcome.net,
        target_net: None,
        metrics: None,
        epoch_losses: outcome.epoch_losses,
        alignment_mmd: None,
    })
}

/// Evaluates transfer quality on the held-out target view: translator basis
/// from the final source network over the labeled training co-occurrence
/// rows, scores on the target test features, metrics against the held-out
/// labels.
pub fn evaluate(
    source_net: &NetworkParams,
    target_net: &NetworkParams,
    train_split: &FederatedSplit,
    test: &TestViews,
    threshold: f64,
) -> Result<Metrics> {
    let co = &train_split.co_indices;
    let basis_features = gather_rows(&train_split.source.features, co);
    let basis_labels: Vec<f64> = co.iter().map(|&i| train_split.source.labels[i]).collect();
    let scores = trainer::transfer_scores(
        source_net,
        target_net,
        &basis_features,
        &basis_labels,
        &test.target_features,
    )?;
    evaluate_scores(&scores, test.labels_for_eval(), threshold)
}

// ---------------------------------------------------------------------------
// Table experiments
// ---------------------------------------------------------------------------

/// One cell of a table experiment: a kernel x mode combination over several
/// seeds.
#[derive(Debug, Clone, Serialize)]
pub struct TableCell {
    pub kernel: String,
    pub mode: String,
    pub seeds: Vec<u64>,
    pub fscore_mean: f64,
    pub fscore_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub config_echo: String,
    pub cells: Vec<TableCell>,
    /// Per-run rows: (kernel, mode, seed, fscore, auc, precision, wall_ms).
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub kernel: String,
    pub mode: String,
    pub seed: u64,
    pub fscore: f64,
    pub auc: f64,
    pub precision: f64,
    pub wall_ms: u64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Runs every kernel x mode cell over `n_seeds` seeds. Failed runs are
/// recorded in the cell and the experiment continues.
pub fn run_table_experiment(
    base: &RunConfig,
    kernels: &[(String, KernelSpec)],
    modes: &[RunMode],
    n_seeds: u64,
) -> Result<TableReport> {
    if kernels.is_empty() || modes.is_empty() || n_seeds == 0 {
        return Err(Error::Config("table experiment needs kernels, modes, and seeds".into()));
    }
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for (kernel_label, spec) in kernels {
        for mode in modes {
            let mut fscores = Vec::new();
            let mut aucs = Vec::new();
            let mut precisions = Vec::new();
            let mut seeds = Vec::new();
            let mut failures = Vec::new();
            for s in 0..n_seeds {
                let mut cfg = base.clone();
                cfg.mode = *mode;
                apply_kernel(&mut cfg, spec);
                cfg.seed_data = base.seed_data + s;
                cfg.seed_model = base.seed_model + 100 + s;
                cfg.seed_crypto = base.seed_crypto + 200 + 2 * s;
                let t0 = Instant::now();
                match train(&cfg) {
                    Ok(outcome) => {
                        let m = outcome.metrics.expect("in-process runs evaluate");
                        fscores.push(m.fscore);
                        aucs.push(m.auc);
                        precisions.push(m.precision);
                        seeds.push(s);
                        rows.push(TableRow {
                            kernel: kernel_label.clone(),
                            mode: mode.to_string(),
                            seed: s,
                            fscore: m.fscore,
                            auc: m.auc,
                            precision: m.precision,
                            wall_ms: t0.elapsed().as_millis() as u64,
                        });
                    }
                    Err(e) => failures.push(format!("seed {s}: {e}")),
                }
            }
            let (fm, fs) = mean_std(&fscores);
            let (am, as_) = mean_std(&aucs);
            let (pm, ps) = mean_std(&precisions);
            cells.push(TableCell {
                kernel: kernel_label.clone(),
                mode: mode.to_string(),
                seeds,
                fscore_mean: fm,
                fscore_std: fs,
                auc_mean: am,
                auc_std: as_,
                precision_mean: pm,
                precision_std: ps,
                failures,
            });
        }
    }
    Ok(TableReport { config_echo: base.echo(), cells, rows })
}

fn apply_kernel(cfg: &mut RunConfig, spec: &KernelSpec) {
    match spec.family {
        KernelFamily::Linear => cfg.kernel = "linear".into(),
        KernelFamily::Polynomial => {
            cfg.kernel = "poly".into();
            cfg.poly_degree = spec.degree;
            cfg.poly_c = spec.c;
        }
        KernelFamily::Gaussian => {
            cfg.kernel = "gaussian".into();
            cfg.sigma = spec.sigma;
        }
    }
    cfg.kernel_mode = match spec.mode {
        KernelMode::Exact => "auto".into(),
        KernelMode::Taylor2 => "taylor2".into(),
    };
}

impl TableReport {
    /// Human-readable table mirroring the row/column layout of the
    /// experiment grids: one row per kernel x mode, metric columns with
    /// mean and std.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.config_echo));
        out.push_str(&format!(
            "{:<28} {:<12} {:>16} {:>16} {:>16}\n",
            "kernel", "mode", "fscore", "auc", "precision"
        ));
        for c in &self.cells {
            out.push_str(&format!(
                "{:<28} {:<12} {:>7.3}±{:<7.3} {:>7.3}±{:<7.3} {:>7.3}±{:<7.3}",
                c.kernel,
                c.mode,
                c.fscore_mean,
                c.fscore_std,
                c.auc_mean,
                c.auc_std,
                c.precision_mean,
                c.precision_std,
            ));
            if !c.failures.is_empty() {
                out.push_str(&format!("  [{} failed]", c.failures.len()));
            }
            out.push('\n');
        }
        out
    }

    /// Machine CSV with stable column names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kernel,mode,seed,fscore,auc,precision,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.kernel, r.mode, r.seed, r.fscore, r.auc, r.precision, r.wall_ms
            ));
        }
        out
    }

    pub fn to_json_manifest(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        RunConfig {
            schema: "synthetic".into(),
            subset_rows: 120,
            epochs: 8,
            l1_widths: vec![6],
            l2_widths: vec![4],
            overlap_fraction: 0.6,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_combinations() {
        let mut cfg = tiny_config();
        cfg.mode = RunMode::Encrypted;
        cfg.kernel = "poly".into();
        cfg.poly_c = 1.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("polynomial secure mode requires c=0"), "{err}");

        cfg.poly_c = 0.0;
        cfg.poly_degree = 3;
        cfg.l2_widths = vec![64];
        assert!(cfg.validate().is_err());
        cfg.l2_widths = vec![8];
        assert!(cfg.validate().is_ok());

        cfg.kernel = "gaussian".into();
        cfg.kernel_mode = "auto".into();
        let spec = cfg.kernel_spec().unwrap();
        assert_eq!(spec.mode, KernelMode::Taylor2, "encrypted gaussian auto-selects taylor2");

        cfg.listen = Some("127.0.0.1:0".into());
        cfg.role = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn plaintext_run_is_reproducible_bit_for_bit() {
        let cfg = tiny_config();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        let ma = a.metrics.unwrap();
        let mb = b.metrics.unwrap();
        assert_eq!(ma.auc, mb.auc);
        assert_eq!(ma.fscore, mb.fscore);
        assert_eq!(ma.precision, mb.precision);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.source_net, b.source_net);
    }

    #[test]
    fn source_only_never_touches_target_training_data() {
        let mut cfg = tiny_config();
        cfg.mode = RunMode::SourceOnly;
        let prepared = prepare_data(&cfg).unwrap();
        let before_feats = prepared.train.counters().target_feature_reads();
        let before_labels = prepared.train.counters().target_label_reads();
        let outcome = train_on(&cfg, &prepared).unwrap();
        assert!(outcome.metrics.is_some());
        assert_eq!(prepared.train.counters().target_feature_reads(), before_feats);
        assert_eq!(prepared.train.counters().target_label_reads(), before_labels);
    }

    #[test]
    fn table_runner_produces_rows_and_survives_cell_failures() {
        let mut cfg = tiny_config();
        cfg.epochs = 3;
        let kernels = vec![
            ("linear".to_string(), KernelSpec::linear()),
            // gaussian with sigma=0 fails validation inside the cell
            ("bad".to_string(), KernelSpec::gaussian(0.0)),
        ];
        let report = run_table_experiment(
            &cfg,
            &kernels,
            &[RunMode::Plaintext, RunMode::SourceOnly],
            2,
        )
        .unwrap();
        assert_eq!(report.cells.len(), 4);
        let ok_cells: Vec<_> = report.cells.iter().filter(|c| c.failures.is_empty()).collect();
        assert_eq!(ok_cells.len(), 2);
        let bad: Vec<_> = report.cells.iter().filter(|c| !c.failures.is_empty()).collect();
        assert_eq!(bad.len(), 2);
        assert!(report.to_text().contains("linear"));
        assert!(report.to_csv().starts_with("kernel,mode,seed"));
        assert!(run_table_experiment(&cfg, &[], &[RunMode::Plaintext], 1).is_err());
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let cfg = tiny_config();
        let text = toml::to_string(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, &text).unwrap();
        let loaded = RunConfig::from_toml_file(&path).unwrap();
        assert_eq!(loaded.subset_rows, cfg.subset_rows);
        assert_eq!(loaded.l2_widths, cfg.l2_widths);

        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "not_a_known_field = 3\n").unwrap();
        assert!(RunConfig::from_toml_file(&bad).is_err());
    }
}
