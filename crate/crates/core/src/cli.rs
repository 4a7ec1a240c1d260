//! Command-line front end. Every command writes its artifacts plus a
//! `manifest.json` into `--out`; `replay` re-runs a manifest and checks the
//! artifacts come out byte-identical.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid input, 4 numerical failure
//! (or a replay mismatch).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{LossReport, DEFAULT_MZI_LOSS_DB, DEFAULT_WA_LOSS_DB_PER_CM};
use crate::calibration::{build_lookup_map, solve_voltage, voltage_grid, DEFAULT_GRID_STEP};
use crate::compiler::{
    optimize_parallel_gates, sweep_chip_length, ConfigName, ElectrodeConfig, DEFAULT_RESTARTS,
};
use crate::device_model::{build_hamiltonian, DeviceSpec, VoltageConfig};
use crate::error::{Error, Result};
use crate::evolution::{output_power, propagation_profile, unitary};
use crate::photon_stats::{
    fit_hom_dip, simulate_hom_scan, HomScanSettings, DEFAULT_INTEGRATION_SECONDS,
};
use crate::subcircuits::{effective_reflectivity, Gate, SubcircuitPair};

/// Environment variable naming a device file used when `--device` is absent.
pub const DEVICE_ENV: &str = "RWA_DEVICE";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rwa", version, about = "Reconfigurable waveguide array toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Output powers (and optionally an intensity profile) for one input guide.
    Simulate(SimulateArgs),
    /// Reflectivity/leakage lookup map over two electrodes.
    Map(MapArgs),
    /// Synthetic two-photon delay scan, optionally fitted.
    Hom(HomArgs),
    /// Optimise voltages for two parallel gates.
    Compile(CompileArgs),
    /// Loss comparison between an MZI mesh and a waveguide array.
    Loss(LossArgs),
    /// Re-run a manifest and compare its outputs byte for byte.
    #[serde(skip)]
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Map(_) => "map",
            Command::Hom(_) => "hom",
            Command::Compile(_) => "compile",
            Command::Loss(_) => "loss",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DeviceArgs {
    /// Device TOML file. Falls back to $RWA_DEVICE, then the built-in default.
    #[arg(long)]
    pub device: Option<PathBuf>,
    /// Voltage file: numbers separated by commas or whitespace, `#` comments.
    #[arg(long)]
    pub voltages: Option<PathBuf>,
    /// Set one electrode, `E=V` with E 1-based. Applied after --voltages.
    #[arg(long = "set", value_name = "E=V")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub device: DeviceArgs,
    /// Input guide, 1-based.
    #[arg(long)]
    pub input_guide: usize,
    /// Also write an intensity profile with this many samples along z.
    #[arg(long, value_name = "STEPS")]
    pub profile: Option<usize>,
    #[arg(long, default_value = "rwa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub device: DeviceArgs,
    /// First guide of the subcircuit pair.
    #[arg(long, default_value_t = 1)]
    pub pair: usize,
    /// The two swept electrodes, `a,b`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub electrodes: Vec<usize>,
    /// Sweep range `START:STOP` in volts.
    #[arg(long, default_value = "-10:10", allow_hyphen_values = true)]
    pub range: String,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub step: f64,
    /// Look up the cell closest to this reflectivity.
    #[arg(long)]
    pub target_eta: Option<f64>,
    /// Leakage bound in percent for --target-eta.
    #[arg(long, default_value_t = 100.0)]
    pub max_leakage: f64,
    #[arg(long, default_value = "rwa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HomArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub device: DeviceArgs,
    /// Coupler reflectivity. Without it the reflectivity of --pair on the
    /// device is used.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub pair: usize,
    /// Delay scan `START:STOP:STEP` in mm.
    #[arg(long, required = true, allow_hyphen_values = true)]
    pub scan: String,
    /// Coincidences per window away from the dip.
    #[arg(long, default_value_t = 1000.0)]
    pub baseline: f64,
    #[arg(long, default_value_t = 1.0)]
    pub visibility_factor: f64,
    #[arg(long, default_value_t = DEFAULT_INTEGRATION_SECONDS)]
    pub integration: f64,
    /// Seed for the Poisson noise. Defaults to 0.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit the mean counts without noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Fit the dip and write the fit record.
    #[arg(long)]
    pub fit: bool,
    #[arg(long, default_value = "rwa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompileArgs {
    /// Device TOML file. Falls back to $RWA_DEVICE, then the built-in default.
    #[arg(long)]
    pub device: Option<PathBuf>,
    /// Use a random static device drawn with this seed instead.
    #[arg(long, conflicts_with = "device")]
    pub random_device: Option<u64>,
    /// Electrode configuration: 1, 2 or 3.
    #[arg(long, default_value = "3", value_parser = parse_config)]
    pub config: ConfigName,
    /// Two gate letters from I, H, X, e.g. `XX`.
    #[arg(long, default_value = "XX")]
    pub gates: String,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Restart seed. Defaults to 0.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chip lengths in mm; one optimisation per length.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<f64>,
    #[arg(long, default_value = "rwa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LossArgs {
    #[arg(long)]
    pub modes: usize,
    #[arg(long, default_value_t = DEFAULT_MZI_LOSS_DB)]
    pub per_mzi: f64,
    #[arg(long, default_value_t = 2.4)]
    pub length_cm: f64,
    #[arg(long, default_value_t = DEFAULT_WA_LOSS_DB_PER_CM)]
    pub db_per_cm: f64,
    #[arg(long, default_value = "rwa-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the regenerated outputs.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_config(s: &str) -> std::result::Result<ConfigName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Record of one run, written as `manifest.json` next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    /// Full argument set, with the device path already resolved.
    pub parameters: Command,
    /// Output file names, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))
    }
}

/// Parse `argv` and run. Returns the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(manifest) => {
            println!("wrote {}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

/// Run a command and return the path of the manifest it wrote.
pub fn execute(command: Command) -> Result<PathBuf> {
    match command {
        Command::Replay(args) => replay(&args),
        other => {
            let resolved = resolve(other);
            let out = out_dir(&resolved).to_path_buf();
            fs::create_dir_all(&out)?;
            let outputs = run_command(&resolved, &out)?;
            write_manifest(&resolved, &out, outputs)
        }
    }
}

/// Pin the device path so a manifest does not depend on the environment.
fn resolve(mut command: Command) -> Command {
    let env_device = || std::env::var_os(DEVICE_ENV).map(PathBuf::from);
    match &mut command {
        Command::Simulate(a) => a.device.device = a.device.device.take().or_else(env_device),
        Command::Map(a) => a.device.device = a.device.device.take().or_else(env_device),
        Command::Hom(a) => a.device.device = a.device.device.take().or_else(env_device),
        Command::Compile(a) => {
            if a.random_device.is_none() {
                a.device = a.device.take().or_else(env_device);
            }
        }
        Command::Loss(_) | Command::Replay(_) => {}
    }
    command
}

fn out_dir(command: &Command) -> &Path {
    match command {
        Command::Simulate(a) => &a.out,
        Command::Map(a) => &a.out,
        Command::Hom(a) => &a.out,
        Command::Compile(a) => &a.out,
        Command::Loss(a) => &a.out,
        Command::Replay(a) => &a.out,
    }
}

fn with_out(mut command: Command, out: &Path) -> Command {
    let slot = match &mut command {
        Command::Simulate(a) => &mut a.out,
        Command::Map(a) => &mut a.out,
        Command::Hom(a) => &mut a.out,
        Command::Compile(a) => &mut a.out,
        Command::Loss(a) => &mut a.out,
        Command::Replay(a) => &mut a.out,
    };
    *slot = out.to_path_buf();
    command
}

fn write_manifest(command: &Command, out: &Path, outputs: Vec<String>) -> Result<PathBuf> {
    let (seed, inputs) = match command {
        Command::Simulate(a) => (0, device_inputs(&a.device)),
        Command::Map(a) => (0, device_inputs(&a.device)),
        Command::Hom(a) => (a.seed, device_inputs(&a.device)),
        Command::Compile(a) => (a.seed, a.device.iter().cloned().collect()),
        Command::Loss(_) | Command::Replay(_) => (0, Vec::new()),
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        inputs,
        parameters: command.clone(),
        outputs,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Numerical(format!("manifest serialisation: {e}")))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

fn device_inputs(d: &DeviceArgs) -> Vec<PathBuf> {
    d.device.iter().chain(d.voltages.iter()).cloned().collect()
}

fn replay(args: &ReplayArgs) -> Result<PathBuf> {
    let manifest = RunManifest::load(&args.manifest)?;
    let original_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let command = with_out(manifest.parameters.clone(), &args.out);
    fs::create_dir_all(&args.out)?;
    let outputs = run_command(&command, &args.out)?;
    let written = write_manifest(&command, &args.out, outputs.clone())?;
    if outputs != manifest.outputs {
        return Err(Error::Numerical(format!(
            "replay produced outputs {outputs:?}, manifest lists {:?}",
            manifest.outputs
        )));
    }
    for name in &outputs {
        let before = fs::read(original_dir.join(name))?;
        let after = fs::read(args.out.join(name))?;
        if before != after {
            return Err(Error::Numerical(format!("replayed `{name}` differs")));
        }
    }
    Ok(written)
}

fn run_command(command: &Command, out: &Path) -> Result<Vec<String>> {
    let mut files = Outputs::new(out);
    match command {
        Command::Simulate(a) => simulate(a, &mut files)?,
        Command::Map(a) => map(a, &mut files)?,
        Command::Hom(a) => hom(a, &mut files)?,
        Command::Compile(a) => compile(a, &mut files)?,
        Command::Loss(a) => loss(a, &mut files)?,
        Command::Replay(_) => {
            return Err(Error::InvalidArgument("a manifest cannot replay a replay".into()))
        }
    }
    Ok(files.names)
}

struct Outputs<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self {
            dir,
            names: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn load_device(path: &Option<PathBuf>) -> Result<DeviceSpec> {
    match path {
        Some(p) => DeviceSpec::load(p),
        None => Ok(DeviceSpec::default()),
    }
}

fn parse_voltage_list(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("voltage file: `{t}` is not a number")))
        })
        .collect()
}

fn parse_assignment(s: &str) -> Result<(usize, f64)> {
    let bad = || Error::InvalidArgument(format!("expected E=V, got `{s}`"));
    let (e, v) = s.split_once('=').ok_or_else(bad)?;
    Ok((
        e.trim().parse().map_err(|_| bad())?,
        v.trim().parse().map_err(|_| bad())?,
    ))
}

fn load_voltages(d: &DeviceArgs, spec: &DeviceSpec) -> Result<VoltageConfig> {
    let mut v = match &d.voltages {
        Some(path) => {
            let list = parse_voltage_list(&fs::read_to_string(path)?)?;
            if list.len() != spec.n_electrodes() {
                return Err(Error::DimensionMismatch {
                    what: format!("voltage file {}", path.display()),
                    expected: spec.n_electrodes(),
                    found: list.len(),
                });
            }
            VoltageConfig::from_vec(list)
        }
        None => VoltageConfig::zeros(spec.n_electrodes()),
    };
    for s in &d.set {
        let (e, volts) = parse_assignment(s)?;
        v.set(e, volts)?;
    }
    Ok(v)
}

fn parse_range(s: &str, parts: usize) -> Result<Vec<f64>> {
    let values = s
        .split(':')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad range `{s}`")))?;
    if values.len() != parts {
        return Err(Error::InvalidArgument(format!(
            "range `{s}` needs {parts} colon-separated numbers"
        )));
    }
    Ok(values)
}

fn simulate(a: &SimulateArgs, files: &mut Outputs) -> Result<()> {
    let spec = load_device(&a.device.device)?;
    let v = load_voltages(&a.device, &spec)?;
    let h = build_hamiltonian(&spec, &v)?;
    let u = unitary(&h, spec.coupling_length())?;
    let powers = output_power(&u, a.input_guide)?;
    let header: Vec<String> = (1..=powers.len()).map(|i| format!("P{i}")).collect();
    let row: Vec<String> = powers.iter().map(|p| p.to_string()).collect();
    files.write("powers.csv", &format!("{}\n{}\n", header.join(","), row.join(",")))?;
    files.write("unitary.csv", &u.to_csv())?;
    if let Some(steps) = a.profile {
        let profile = propagation_profile(&h, spec.coupling_length(), steps, a.input_guide)?;
        files.write("profile.csv", &profile.to_csv())?;
    }
    Ok(())
}

fn map(a: &MapArgs, files: &mut Outputs) -> Result<()> {
    let spec = load_device(&a.device.device)?;
    let fixed = load_voltages(&a.device, &spec)?;
    let [ea, eb] = a.electrodes[..] else {
        return Err(Error::InvalidArgument(format!(
            "--electrodes takes two indices, got {:?}",
            a.electrodes
        )));
    };
    let range = parse_range(&a.range, 2)?;
    let limit = spec.voltage_limit();
    if range.iter().any(|r| r.abs() > limit) {
        return Err(Error::InvalidArgument(format!(
            "sweep range {} exceeds the ±{limit} V limit",
            a.range
        )));
    }
    let grid = voltage_grid(range[0], range[1], a.step)?;
    let pair = SubcircuitPair::new(a.pair, spec.n_guides())?;
    let map = build_lookup_map(
        &spec,
        pair,
        ea,
        eb,
        &grid,
        &grid,
        &fixed,
    )?;
    files.write("map.csv", &map.to_csv())?;
    let meta = serde_json::to_string_pretty(&map.metadata())
        .map_err(|e| Error::Numerical(e.to_string()))?;
    files.write("map.json", &(meta + "\n"))?;
    if let Some(target) = a.target_eta {
        let solution = solve_voltage(&map, target, a.max_leakage)?;
        let text = serde_json::to_string_pretty(&solution)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        files.write("solution.json", &(text + "\n"))?;
    }
    Ok(())
}

fn hom(a: &HomArgs, files: &mut Outputs) -> Result<()> {
    let eta = match a.eta {
        Some(eta) => eta,
        None => {
            let spec = load_device(&a.device.device)?;
            let v = load_voltages(&a.device, &spec)?;
            let u = unitary(&build_hamiltonian(&spec, &v)?, spec.coupling_length())?;
            effective_reflectivity(&u, SubcircuitPair::new(a.pair, spec.n_guides())?)?
        }
    };
    let range = parse_range(&a.scan, 3)?;
    let delays = voltage_grid(range[0], range[1], range[2])?;
    let mut settings = HomScanSettings::new(eta, a.baseline);
    settings.visibility_factor = a.visibility_factor;
    settings.integration_seconds = a.integration;
    let seed = if a.noiseless { None } else { Some(a.seed) };
    let scan = simulate_hom_scan(&settings, &delays, seed)?;
    files.write("scan.csv", &scan.to_csv())?;
    if a.fit {
        files.write("fit.json", &(fit_hom_dip(&scan)?.to_json() + "\n"))?;
    }
    Ok(())
}

fn parse_gates(s: &str) -> Result<[Gate; 2]> {
    let gates: Vec<Gate> = s
        .chars()
        .map(|c| {
            Gate::from_char(c)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown gate `{c}` in `{s}`")))
        })
        .collect::<Result<_>>()?;
    match gates[..] {
        [g1, g2] => Ok([g1, g2]),
        _ => Err(Error::InvalidArgument(format!(
            "expected two gate letters, got `{s}`"
        ))),
    }
}

fn compile(a: &CompileArgs, files: &mut Outputs) -> Result<()> {
    let spec = match a.random_device {
        Some(seed) => DeviceSpec::random_static(11, 22, crate::device_model::DEFAULT_COUPLING_LENGTH, seed)?,
        None => load_device(&a.device)?,
    };
    let [g1, g2] = parse_gates(&a.gates)?;
    let targets = [g1.unitary(), g2.unitary()];
    let config = ElectrodeConfig::preset(a.config, &spec)?;
    if a.lengths.is_empty() {
        let result = optimize_parallel_gates(&spec, &config, &targets, a.restarts, a.seed)?;
        files.write("result.json", &(result.to_json() + "\n"))?;
        files.write("trace.csv", &result.trace_csv())?;
        return Ok(());
    }
    let results = sweep_chip_length(&spec, &config, &targets, &a.lengths, a.restarts, a.seed)?;
    let mut summary =
        String::from("length_mm,objective,f1,f2,crosstalk1,crosstalk2,leakage1,leakage2\n");
    for (i, r) in results.iter().enumerate() {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.coupling_length, r.objective, r.f1, r.f2, r.crosstalk1, r.crosstalk2, r.leakage1, r.leakage2
        ));
        files.write(&format!("result_{}.json", i + 1), &(r.to_json() + "\n"))?;
        files.write(&format!("trace_{}.csv", i + 1), &r.trace_csv())?;
    }
    files.write("sweep.csv", &summary)
}

fn loss(a: &LossArgs, files: &mut Outputs) -> Result<()> {
    let report = LossReport::new(a.modes, a.per_mzi, a.length_cm, a.db_per_cm)?;
    let table = report.to_table();
    print!("{table}");
    files.write("loss.txt", &table)?;
    files.write("loss.csv", &report.to_csv())
}
