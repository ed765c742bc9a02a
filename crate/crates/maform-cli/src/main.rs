use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maform::characterization::{classify, scaling_test, DEFAULT_ANGLES};
use maform::deformation::{fourier_modes, ModeSet, NormalFormTensor, TensorGrid};
use maform::domain_model::{GridMinkowski, MinkowskiField, MuKind};
use maform::field_kernel::{
    read_records_binary, read_records_text, write_records_binary, write_records_text, ChartAtlas, GridRecord,
    CONVENTION,
};
use maform::foliation::{sample_nodes, verify_ma_identities, IdentityTolerances};
use maform::moser_normalizer::{curvature, NormalizingMap};
use maform::spec_file::{parse_domain_spec, parse_tensor_spec, DomainSpec, ParseError, SyntheticTensor};
use maform::C64;

#[derive(Parser)]
#[command(name = "maform", version, about = "Monge-Ampère geometry of circular domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Monge-Ampère identities of a domain's exhaustion.
    Verify(RunArgs),
    /// Build the normalizing map of a domain and dump it.
    Normalize(RunArgs),
    /// Extract the deformation tensor of a domain and its Fourier modes.
    Invariants(RunArgs),
    /// Classify a domain or a tensor.
    Classify(RunArgs),
    /// Iterate the fiber contraction on a domain or a tensor.
    ScaleTest(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Domain spec file.
    #[arg(long)]
    domain: Option<PathBuf>,
    /// Tensor spec (.tns) or mode dump.
    #[arg(long)]
    tensor: Option<PathBuf>,
    /// Highest Fourier mode, overriding the spec.
    #[arg(long)]
    kmax: Option<usize>,
    /// Contraction ratio for the scaling test.
    #[arg(long, default_value_t = 0.5)]
    k: f64,
    /// Iterations of the scaling test.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Seed for random sample points, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the report and dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write dumps in the binary format.
    #[arg(long)]
    binary: bool,
}

enum Failure {
    Parse { path: PathBuf, err: ParseError },
    Usage(String),
    Io { path: PathBuf, err: io::Error },
    Module { kind: &'static str, msg: String },
}

impl Failure {
    fn module(kind: &'static str, e: impl ToString) -> Self {
        Failure::Module { kind, msg: e.to_string() }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Parse { .. } | Failure::Usage(_) => 2,
            _ => 1,
        }
    }

    fn report(&self) -> String {
        let mut s = String::new();
        match self {
            Failure::Parse { path, err } => {
                let _ = writeln!(s, "maform: {}:{err}", path.display());
                let _ = writeln!(s, "error.kind = parse\nerror.file = {}", path.display());
                let _ = writeln!(s, "error.line = {}\nerror.col = {}\nerror.message = {}", err.line, err.col, err.msg);
            }
            Failure::Usage(m) => {
                let _ = writeln!(s, "maform: {m}\nerror.kind = usage\nerror.message = {m}");
            }
            Failure::Io { path, err } => {
                let _ = writeln!(s, "maform: {}: {err}", path.display());
                let _ = writeln!(s, "error.kind = io\nerror.file = {}\nerror.message = {err}", path.display());
            }
            Failure::Module { kind, msg } => {
                let _ = writeln!(s, "maform: {msg}\nerror.kind = {kind}\nerror.message = {msg}");
            }
        }
        s
    }
}

type Res<T> = Result<T, Failure>;

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|err| Failure::Io { path: path.to_path_buf(), err })
}

fn read_text(path: &Path) -> Res<String> {
    String::from_utf8(read(path)?).map_err(|_| Failure::Usage(format!("{}: not UTF-8 text", path.display())))
}

/// Record dumps are either binary (magic `MAFD`) or text starting with a
/// `chart` line.
fn is_dump(bytes: &[u8]) -> bool {
    if bytes.starts_with(b"MAFD") {
        return true;
    }
    let text = String::from_utf8_lossy(bytes);
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("chart "))
}

fn read_dump(path: &Path, bytes: &[u8]) -> Res<Vec<GridRecord>> {
    let res = if bytes.starts_with(b"MAFD") {
        read_records_binary(&mut &bytes[..])
    } else {
        read_records_text(&mut BufReader::new(bytes))
    };
    res.map_err(|err| Failure::Io { path: path.to_path_buf(), err })
}

enum TensorInput {
    Spec(SyntheticTensor),
    Modes(ModeSet),
}

/// Everything a run depends on, echoed at the top of every report.
struct RunConfig {
    command: &'static str,
    args: RunArgs,
    spec: DomainSpec,
    tensor: Option<TensorInput>,
    k_max: usize,
    seed: u64,
}

impl RunConfig {
    fn load(command: &'static str, args: RunArgs) -> Res<Self> {
        let spec = match &args.domain {
            Some(p) => parse_domain_spec(&read_text(p)?).map_err(|err| Failure::Parse { path: p.clone(), err })?,
            None => DomainSpec::default(),
        };
        let tensor = match &args.tensor {
            Some(p) => {
                let bytes = read(p)?;
                if is_dump(&bytes) {
                    let records = read_dump(p, &bytes)?;
                    Some(TensorInput::Modes(ModeSet::from_records(&records).map_err(|e| Failure::module("dump", e))?))
                } else {
                    let src = String::from_utf8(bytes)
                        .map_err(|_| Failure::Usage(format!("{}: not UTF-8 text", p.display())))?;
                    Some(TensorInput::Spec(parse_tensor_spec(&src).map_err(|err| Failure::Parse { path: p.clone(), err })?))
                }
            }
            None => None,
        };
        let k_max = args.kmax.unwrap_or(match &tensor {
            Some(TensorInput::Spec(t)) => t.k_max().max(spec.k_max),
            Some(TensorInput::Modes(m)) => m.k_max(),
            None => spec.k_max,
        });
        let seed = args.seed.unwrap_or(spec.seed);
        Ok(RunConfig { command, args, spec, tensor, k_max, seed })
    }

    /// Fiber samples needed to resolve `k_max` without aliasing.
    fn n_theta(&self) -> usize {
        self.spec.n_theta.max((2 * (self.k_max + 1)).next_power_of_two())
    }

    fn header(&self) -> String {
        let s = &self.spec;
        let mut h = String::new();
        let _ = writeln!(h, "# maform {}", self.command);
        let _ = writeln!(h, "convention = {CONVENTION}");
        let _ = writeln!(h, "seed = {}", self.seed);
        let _ = writeln!(
            h,
            "resolution = N_v={} N_r={} N_theta={} rk4_steps={} k_max={} N_b={}",
            s.n_v,
            s.n_r,
            self.n_theta(),
            s.rk4_steps,
            self.k_max,
            s.n_b
        );
        let _ = writeln!(
            h,
            "tolerance = identity_tol={:e} moser_tol={:e} mode_tol={:e}",
            s.identity_tol, s.moser_tol, s.mode_tol
        );
        if let Some(p) = &self.args.domain {
            let _ = writeln!(h, "input.domain = {}", p.display());
        }
        if let Some(p) = &self.args.tensor {
            let _ = writeln!(h, "input.tensor = {}", p.display());
            match &self.tensor {
                Some(TensorInput::Spec(t)) => {
                    let _ = writeln!(h, "input.tensor.kind = spec n={} entries={}", t.n, t.entries.len());
                }
                Some(TensorInput::Modes(m)) => {
                    let _ = writeln!(h, "input.tensor.kind = dump n={} bases={}", m.n, m.bases.len());
                }
                None => {}
            }
        }
        if self.command == "scale-test" || self.command == "classify" {
            let _ = writeln!(h, "scaling = k={} iters={}", self.args.k, self.args.iters);
        }
        h.push_str(if self.args.domain.is_some() { "# config\n" } else { "# config (defaults)\n" });
        for line in s.to_string().lines() {
            let _ = writeln!(h, "  {line}");
        }
        h.push_str("# end config\n\n");
        h
    }

    fn minkowski(&self) -> Res<MinkowskiField> {
        let base = self.args.domain.as_deref().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        self.spec
            .minkowski(|p| {
                let path = base.join(p);
                let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let records = read_dump(&path, &bytes).map_err(|f| f.report())?;
                let g = GridMinkowski::from_records(&records).map_err(|e| e.to_string())?;
                Ok(MinkowskiField { n: 2, kind: MuKind::Grid(g) })
            })
            .map_err(|m| Failure::Module { kind: "domain", msg: m })
    }

    fn atlas(&self) -> Res<ChartAtlas> {
        let s = &self.spec;
        ChartAtlas::new(s.n, s.n_v, s.n_r, s.n_theta).map_err(|e| Failure::module("config", e))
    }

    fn require_domain(&self) -> Res<()> {
        if self.args.domain.is_none() {
            return Err(Failure::Usage(format!("{} needs --domain", self.command)));
        }
        Ok(())
    }

    /// Modes of the tensor input, or of the full pipeline on the domain.
    fn modes(&self, body: &mut String) -> Res<ModeSet> {
        match &self.tensor {
            Some(TensorInput::Modes(m)) => Ok(m.clone()),
            Some(TensorInput::Spec(t)) => {
                let charts: Vec<usize> = (0..t.n).collect();
                let grid = TensorGrid::lattice(t.n, &charts, self.spec.n_b, vec![], 1);
                Ok(t.mode_set(grid.bases, self.k_max))
            }
            None => {
                self.require_domain()?;
                let (modes, _) = self.pipeline_modes(body)?;
                Ok(modes)
            }
        }
    }

    fn pipeline_modes(&self, body: &mut String) -> Res<(ModeSet, f64)> {
        let mu = self.minkowski()?;
        let map = NormalizingMap::new(&mu, self.spec.rk4_steps).map_err(|e| Failure::module("normalize", e))?;
        let field = NormalFormTensor { map: &map, step: 1e-4 };
        let grid = TensorGrid::lattice(2, &[0, 1], self.spec.n_b, tensor_radii(self.spec.n_r), self.n_theta());
        let _ = writeln!(body, "grid.bases = {}\ngrid.nodes = {}", grid.bases.len(), grid.nodes());
        let tensor =
            maform::deformation::DeformationTensor::sample(&field, &grid).map_err(|e| Failure::module("deformation", e))?;
        let max_norm = tensor.max_norm();
        let modes = fourier_modes(&tensor, self.k_max, self.spec.mode_tol).map_err(|e| Failure::module("deformation", e))?;
        Ok((modes, max_norm))
    }
}

/// Fiber radii of tensor grids, kept where `|x| < 1` over `|v| ≤ 1`.
fn tensor_radii(n_r: usize) -> Vec<f64> {
    (0..n_r).map(|i| 0.6 * (i + 1) as f64 / n_r as f64).collect()
}

fn status(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn cmd_verify(cfg: &RunConfig, body: &mut String) -> Res<bool> {
    cfg.require_domain()?;
    let mu = cfg.minkowski()?;
    let tau = cfg.spec.exhaustion(&mu);
    let atlas = cfg.atlas()?;
    // Base points subsampled to a few hundred per chart; the stride is odd so
    // it does not alias with the lattice rows.
    let stride = (atlas.base_nodes() / 256).max(1) | 1;
    let angles: Vec<f64> = atlas.angles().into_iter().step_by((cfg.spec.n_theta / 4).max(1)).collect();
    let nodes = sample_nodes(&atlas, &atlas.radii(), &angles, stride);
    let tol = IdentityTolerances { identity: cfg.spec.identity_tol, lie_samples: 64 };
    let rep = verify_ma_identities(&tau, &nodes, tol).map_err(|e| Failure::module("foliation", e))?;
    let _ = writeln!(body, "domain = {}", mu.tag());
    let _ = writeln!(body, "nodes = {}", rep.nodes);
    let _ = writeln!(body, "result = {}\n", status(rep.all_pass()));
    body.push_str("# identity residual tol status\n");
    for r in &rep.rows {
        let _ = writeln!(body, "{} {:.6e} {:e} {}", r.name, r.residual, r.tol, status(r.pass()));
    }
    Ok(rep.all_pass())
}

fn cmd_normalize(cfg: &RunConfig, body: &mut String) -> Res<bool> {
    cfg.require_domain()?;
    let mu = cfg.minkowski()?;
    let atlas = cfg.atlas()?;
    let tol = cfg.spec.moser_tol;
    let conn = curvature(&mu, &atlas, tol).map_err(|e| Failure::module("normalize", e))?;
    let map = NormalizingMap::new(&mu, cfg.spec.rk4_steps).map_err(|e| Failure::module("normalize", e))?;
    let a = &atlas;
    let endpoint_nodes: Vec<(usize, C64)> = (0..2)
        .flat_map(|c| {
            (0..a.base_nodes())
                .step_by((a.base_nodes() / 64).max(1) | 1)
                .map(move |k| (c, a.base_point(k)[0]))
                .filter(|(_, v)| v.norm() <= 1.0)
                .collect::<Vec<_>>()
        })
        .collect();
    let endpoint = map
        .flow
        .endpoint_residual(&endpoint_nodes, &|c, v| conn.potential.density(c, v))
        .map_err(|e| Failure::module("normalize", e))?;
    let contract = map.check_contract(32, 8, cfg.seed).map_err(|e| Failure::module("normalize", e))?;
    let cohomology = (conn.integral - conn.reference).abs();
    let rows = [
        ("cohomology", cohomology, tol),
        ("endpoint", endpoint, tol),
        ("level", contract.level, tol),
        ("fiber_holomorphic", contract.fiber_holomorphic, tol),
        ("mismatch", contract.mismatch, tol),
        ("round_trip", contract.round_trip, tol),
    ];
    let pass = rows.iter().all(|(_, r, t)| r < t);
    let _ = writeln!(body, "domain = {}", mu.tag());
    let _ = writeln!(body, "integral = {:.12e}\nreference = {:.12e}", conn.integral, conn.reference);
    let _ = writeln!(body, "min_density = {:.6e}", conn.min_density);
    let _ = writeln!(body, "contract.samples = {}", contract.samples);
    let _ = writeln!(body, "result = {}\n", status(pass));
    body.push_str("# check residual tol status\n");
    for (name, r, t) in rows {
        let _ = writeln!(body, "{name} {r:.6e} {t:e} {}", status(r < t));
    }
    if cfg.args.out.is_some() {
        let records = map.records(&atlas).map_err(|e| Failure::module("normalize", e))?;
        write_dump(cfg, "map", &records)?;
    }
    Ok(pass)
}

fn write_mode_table(body: &mut String, modes: &ModeSet) {
    body.push_str("# k norm\n");
    for (k, n) in modes.norms().iter().enumerate() {
        let _ = writeln!(body, "{k} {n:.6e}");
    }
}

fn cmd_invariants(cfg: &RunConfig, body: &mut String) -> Res<bool> {
    let modes = match &cfg.tensor {
        Some(_) => cfg.modes(body)?,
        None => {
            cfg.require_domain()?;
            let (modes, max_norm) = cfg.pipeline_modes(body)?;
            let _ = writeln!(body, "max_norm = {max_norm:.6e}");
            modes
        }
    };
    let higher: f64 = (1..=modes.k_max()).map(|k| modes.norm(k)).sum();
    let _ = writeln!(body, "tail = {:.6e}\nnegative = {:.6e}", modes.tail, modes.negative);
    let _ = writeln!(body, "radial_deviation = {:.6e}", modes.radial_deviation);
    let _ = writeln!(body, "higher_modes = {higher:.6e}");
    let _ = writeln!(body, "circular = {}\n", if higher < cfg.spec.mode_tol { "yes" } else { "no" });
    write_mode_table(body, &modes);
    write_dump(cfg, "modes", &modes.to_records())?;
    Ok(true)
}

fn cmd_classify(cfg: &RunConfig, body: &mut String) -> Res<bool> {
    let modes = cfg.modes(body)?;
    let rep = classify(&modes, cfg.spec.mode_tol, &DEFAULT_ANGLES, Some((cfg.args.k, cfg.args.iters)))
        .map_err(|e| Failure::module("characterization", e))?;
    let mut out = Vec::new();
    rep.write_text(&mut out).expect("writing to memory");
    body.push_str(&String::from_utf8_lossy(&out));
    Ok(rep.consistent())
}

fn cmd_scale_test(cfg: &RunConfig, body: &mut String) -> Res<bool> {
    let modes = cfg.modes(body)?;
    let trace = scaling_test(&modes, cfg.args.k, cfg.args.iters, cfg.spec.mode_tol)
        .map_err(|e| Failure::module("characterization", e))?;
    let mut out = Vec::new();
    trace.write_text(&mut out).expect("writing to memory");
    body.push_str(&String::from_utf8_lossy(&out));
    Ok(trace.verdict.pass())
}

fn out_path(cfg: &RunConfig, name: &str) -> Option<PathBuf> {
    cfg.args.out.as_ref().map(|d| d.join(name))
}

fn write_dump(cfg: &RunConfig, stem: &str, records: &[GridRecord]) -> Res<()> {
    let ext = if cfg.args.binary { "bin" } else { "txt" };
    let Some(path) = out_path(cfg, &format!("{stem}.{ext}")) else {
        return Ok(());
    };
    let mut buf = Vec::new();
    if cfg.args.binary {
        write_records_binary(&mut buf, records)
    } else {
        write_records_text(&mut buf, records)
    }
    .expect("writing to memory");
    fs::write(&path, buf).map_err(|err| Failure::Io { path, err })
}

fn run(command: &'static str, args: RunArgs) -> Res<bool> {
    let cfg = RunConfig::load(command, args)?;
    if let Some(dir) = &cfg.args.out {
        fs::create_dir_all(dir).map_err(|err| Failure::Io { path: dir.clone(), err })?;
    }
    let mut body = String::new();
    let pass = match command {
        "verify" => cmd_verify(&cfg, &mut body),
        "normalize" => cmd_normalize(&cfg, &mut body),
        "invariants" => cmd_invariants(&cfg, &mut body),
        "classify" => cmd_classify(&cfg, &mut body),
        _ => cmd_scale_test(&cfg, &mut body),
    }?;
    let report = format!("{}{body}", cfg.header());
    if let Some(path) = out_path(&cfg, &format!("{command}.txt")) {
        fs::write(&path, &report).map_err(|err| Failure::Io { path, err })?;
    }
    io::stdout().write_all(report.as_bytes()).map_err(|err| Failure::Io { path: "<stdout>".into(), err })?;
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = std::env::var("MAFORM_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let (name, args) = match cli.command {
        Command::Verify(a) => ("verify", a),
        Command::Normalize(a) => ("normalize", a),
        Command::Invariants(a) => ("invariants", a),
        Command::Classify(a) => ("classify", a),
        Command::ScaleTest(a) => ("scale-test", a),
    };
    match run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprint!("{}", f.report());
            ExitCode::from(f.code())
        }
    }
}
