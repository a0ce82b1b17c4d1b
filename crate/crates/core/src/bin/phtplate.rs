use clap::{Args, Parser, Subcommand};
use phtplate::assembly::Discretization;
use phtplate::discretization::Scheme;
use phtplate::eigen::solve_eigen;
use phtplate::estimate::{trace_csv, AdaptConfig};
use phtplate::io::{
    disk_reference, export_mode_shape, mac_csv, run_table_benchmark, spectrum_csv, table_csv, GeometrySpec, ModelFile,
};
use phtplate::multimode::adapt_mode;
use phtplate::sweep::{band_mac, run, verify_band, Strategy};
use phtplate::tracking::TrackMethod;
use phtplate::{PlateError, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Adaptive free-vibration analysis of Reissner-Mindlin plates.
#[derive(Parser)]
#[command(name = "phtplate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the eigenproblem on the model's initial mesh.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Number of modes (overrides the model file).
        #[arg(long)]
        modes: Option<usize>,
        /// Also sample this mode (1-based) on a parametric grid.
        #[arg(long)]
        shape: Option<usize>,
        /// Grid points per direction for --shape.
        #[arg(long, default_value_t = 21)]
        resolution: usize,
    },
    /// Adapt the mesh for one mode (or the multiple-mode set containing it).
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Mode index, 1-based (overrides the model file).
        #[arg(long)]
        mode: Option<usize>,
        #[arg(long, value_parser = parse_track)]
        track: Option<TrackMethod>,
        /// Estimator mesh depth.
        #[arg(long)]
        le: Option<usize>,
    },
    /// Adapt every mode set of a frequency band.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Band as min:max.
        #[arg(long, value_parser = parse_band)]
        band: Option<[f64; 2]>,
        #[arg(long, value_parser = parse_track)]
        track: Option<TrackMethod>,
        /// sweep (low to high) or worst-first.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Normalized-frequency table of a disk model at given dof counts.
    Table {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dof targets.
        #[arg(long, value_delimiter = ',', default_value = "108,300,972")]
        dofs: Vec<usize>,
        /// Comma-separated schemes.
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme, default_value = "gift,iga_nurbs,iga_rht")]
        schemes: Vec<Scheme>,
        /// Oracle refinement levels as first:last on the five-patch disk.
        #[arg(long, default_value = "4:5")]
        oracle_levels: String,
    },
    /// MAC matrix between coarse and estimator modes of a band.
    Mac {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_band)]
        band: Option<[f64; 2]>,
    },
    /// Re-estimate every mode set of a band on the model's initial mesh.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_band)]
        band: Option<[f64; 2]>,
    },
}

fn parse_band(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or("band must look like min:max")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([lo, hi])
}

fn parse_track(s: &str) -> std::result::Result<TrackMethod, String> {
    match s.to_ascii_lowercase().as_str() {
        "fec" => Ok(TrackMethod::Fec),
        "mac" => Ok(TrackMethod::Mac),
        _ => Err(format!("unknown tracking method '{s}' (fec or mac)")),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "sweep" | "sweep_low_to_high" => Ok(Strategy::SweepLowToHigh),
        "worst_first" => Ok(Strategy::WorstFirst),
        _ => Err(format!("unknown strategy '{s}' (sweep or worst-first)")),
    }
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "gift" => Ok(Scheme::Gift),
        "iga_nurbs" | "nurbs" => Ok(Scheme::IgaNurbs),
        "iga_rht" | "rht" => Ok(Scheme::IgaRht),
        _ => Err(format!("unknown scheme '{s}'")),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| PlateError::Internal(e.to_string()))
}

fn solve(common: &Common, modes: Option<usize>, shape: Option<usize>, resolution: usize) -> Result<()> {
    let mut file = ModelFile::load(&common.model)?;
    if let Some(n) = modes {
        file.analysis.n_modes = n;
    }
    let model = file.build_model()?;
    let d = Discretization::new(&model, file.analysis.scheme, file.initial_meshes()?, file.analysis.quad_order)?;
    let pairs = solve_eigen(&d.system.k, &d.system.m, &file.eigen_options())?;
    let freqs = pairs.frequencies();
    println!("{} dofs ({} free), scheme {}", d.dofs(), d.n_free(), file.analysis.scheme.name());
    for (i, (f, r)) in freqs.iter().zip(&pairs.residuals).enumerate() {
        println!("mode {:>3}  omega = {:.10e}  residual = {:.1e}", i + 1, f, r);
    }
    write(&common.out, "spectrum.csv", &spectrum_csv(&freqs, None))?;
    if let Some(k) = shape {
        let v = pairs
            .vectors
            .get(k.wrapping_sub(1))
            .ok_or_else(|| PlateError::Argument(format!("mode {k} was not computed")))?;
        write(&common.out, &format!("mode_{k}.csv"), &export_mode_shape(&model, &d, v, resolution)?)?;
    }
    Ok(())
}

fn adapt(common: &Common, mode: Option<usize>, track: Option<TrackMethod>, le: Option<usize>) -> Result<()> {
    let mut file = ModelFile::load(&common.model)?;
    if let Some(m) = mode {
        if m == 0 {
            return Err(PlateError::Argument("modes are numbered from 1".into()));
        }
        file.analysis.mode = m - 1;
    }
    if let Some(t) = track {
        file.analysis.tracking = t;
    }
    if let Some(l) = le {
        file.analysis.l_e = l;
    }
    file.validate()?;
    let model = file.build_model()?;
    let meshes = file.initial_meshes()?;
    let cfg: AdaptConfig = file.adapt_config();
    let tcfg = file.tracking_config();
    let (set, r) = adapt_mode(&model, file.analysis.scheme, meshes, file.analysis.mode, &cfg, &tcfg)?;
    println!("mode set {}..{} (n = {}), tracking {}", set.start + 1, set.last() + 1, set.n, cfg.tracking.name());
    for row in &r.trace {
        println!(
            "step {:>3}  dofs {:>7}  lambda {:.8e}  e_lambda {:.3e}  delta_phi {:.3e}  marked {}",
            row.step, row.dofs_coarse, row.lambda, row.e_lambda, row.delta_phi, row.n_marked
        );
    }
    for n in &r.notes {
        println!("note: {n}");
    }
    println!("{}", if r.converged { "converged" } else { "not converged" });
    write(&common.out, "trace.csv", &trace_csv(&r.trace))?;
    Ok(())
}

fn sweep_cmd(common: &Common, band: Option<[f64; 2]>, track: Option<TrackMethod>, strategy: Option<Strategy>) -> Result<()> {
    let file = ModelFile::load(&common.model)?;
    let mut cfg = file.sweep_config(band)?;
    if let Some(t) = track {
        cfg.adapt.tracking = t;
    }
    if let Some(s) = strategy {
        cfg.strategy = s;
    }
    let model = file.build_model()?;
    let rep = run(&model, file.analysis.scheme, file.initial_meshes()?, &cfg)?;
    println!("strategy {}, tracking {}, band [{}, {}]", rep.strategy.name(), rep.tracking.name(), rep.band[0], rep.band[1]);
    for (k, p) in rep.phases.iter().enumerate() {
        let last = p.trace.last();
        println!(
            "phase {:>3}  modes {}..{}  steps {}  dofs {}  delta_phi {:.3e}",
            k + 1,
            p.set.start + 1,
            p.set.last() + 1,
            p.trace.len(),
            last.map_or(0, |r| r.dofs_coarse),
            last.map_or(f64::NAN, |r| r.delta_phi)
        );
        write(&common.out, &format!("phase_{:03}.csv", k + 1), &trace_csv(&p.trace))?;
    }
    for v in &rep.verification {
        println!("verify modes {}..{}  e_lambda {:.3e}  delta_phi {:.3e}  {}", v.start + 1, v.start + v.n, v.e_lambda, v.delta_phi, if v.pass { "pass" } else { "FAIL" });
    }
    if let Some(a) = &rep.aborted {
        println!("aborted: {a}");
    }
    write(&common.out, "report.json", &rep.to_json()?)?;
    Ok(())
}

fn table(common: &Common, dofs: &[usize], schemes: &[Scheme], oracle: &str) -> Result<()> {
    let file = ModelFile::load(&common.model)?;
    let GeometrySpec::Disk { radius, .. } = file.geometry else {
        return Err(PlateError::Argument("the table benchmark needs a disk model".into()));
    };
    let (a, b) = oracle.split_once(':').ok_or_else(|| PlateError::Argument("oracle levels must look like first:last".into()))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| PlateError::Argument(format!("oracle levels: {e}")));
    let (l0, l1) = (parse(a)?, parse(b)?);
    if l1 <= l0 {
        return Err(PlateError::Argument("oracle levels need first < last".into()));
    }
    let model = file.build_model()?;
    let pm = &model.patches[0];
    let reference = disk_reference(radius, pm.material, pm.bc[0], file.analysis.n_modes, l0, l1, 1e-6)?;
    println!("reference: {}", reference.source);
    let rows = run_table_benchmark(&model, schemes, dofs, file.analysis.quad_order, &reference)?;
    let csv = table_csv(&rows);
    print!("{csv}");
    write(&common.out, "table.csv", &csv)?;
    write(&common.out, "table.json", &json(&rows)?)?;
    write(&common.out, "reference.csv", &spectrum_csv(&reference.freqs, Some(&reference)))?;
    Ok(())
}

fn mac(common: &Common, band: Option<[f64; 2]>) -> Result<()> {
    let file = ModelFile::load(&common.model)?;
    let cfg = file.sweep_config(band)?;
    let model = file.build_model()?;
    let (rows, cols, m) = band_mac(&model, file.analysis.scheme, &file.initial_meshes()?, &cfg)?;
    let csv = mac_csv(&rows, &cols, &m);
    print!("{csv}");
    write(&common.out, "mac.csv", &csv)?;
    Ok(())
}

fn verify(common: &Common, band: Option<[f64; 2]>) -> Result<bool> {
    let file = ModelFile::load(&common.model)?;
    let cfg = file.sweep_config(band)?;
    let model = file.build_model()?;
    let rows = verify_band(&model, file.analysis.scheme, &file.initial_meshes()?, &cfg)?;
    let mut csv = String::from("start,n,m,lambda,e_lambda,delta_phi,pass\n");
    for v in &rows {
        println!("modes {}..{}  e_lambda {:.3e}  delta_phi {:.3e}  {}", v.start + 1, v.start + v.n, v.e_lambda, v.delta_phi, if v.pass { "pass" } else { "FAIL" });
        csv.push_str(&format!("{},{},{},{:.12e},{:.6e},{:.6e},{}\n", v.start + 1, v.n, v.m, v.lambda, v.e_lambda, v.delta_phi, v.pass));
    }
    write(&common.out, "verify.csv", &csv)?;
    Ok(rows.iter().all(|v| v.pass))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Solve { common, modes, shape, resolution } => solve(common, *modes, *shape, *resolution).map(|_| true),
        Command::Adapt { common, mode, track, le } => adapt(common, *mode, *track, *le).map(|_| true),
        Command::Sweep { common, band, track, strategy } => sweep_cmd(common, *band, *track, *strategy).map(|_| true),
        Command::Table { common, dofs, schemes, oracle_levels } => table(common, dofs, schemes, oracle_levels).map(|_| true),
        Command::Mac { common, band } => mac(common, *band).map(|_| true),
        Command::Verify { common, band } => verify(common, *band),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
