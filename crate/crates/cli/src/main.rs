use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use spectral_core::grassmann::{gr_classify, plane_basis, stratum_dimension_probe, GrPlane};
use spectral_core::invariants::classify;
use spectral_core::periods::{phi_map, rational_plane_distance};
use spectral_core::sampling::{scan_spec, Annulus};
use spectral_core::whitham::{fixed_q, flow, handle_invariant_check, rotation_direction, validate_q};
use spectral_core::{build_curve, solve_ba, CPoly, CurveSpec, Error, QuadConfig};

const SCHEMA_VERSION: u32 = 1;
const SCAN_HEADER: &str = "# spectral-scan v1";
const FLOW_HEADER: &str = "# spectral-flow v1";

#[derive(Parser)]
#[command(name = "spectral", version, about = "Spectral curves of finite-type CMC planes: pencils, invariants, deformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Clone)]
struct Common {
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 64)]
    quad_nodes: usize,
    #[arg(long, default_value_t = 1e-10)]
    quad_tol: f64,
}

impl Common {
    fn quad(&self) -> QuadConfig {
        QuadConfig {
            nodes: self.quad_nodes,
            tol: self.quad_tol,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pencil and invariants of one curve.
    Classify {
        #[arg(long)]
        spec: PathBuf,
        /// Angle of a Sym point on the unit circle; adds the closing-condition map.
        #[arg(long)]
        sym_angle: Option<f64>,
        #[arg(long, default_value_t = 12)]
        maxden: i64,
        #[command(flatten)]
        common: Common,
    },
    /// Invariants of seeded random curves.
    Scan {
        #[arg(long)]
        genus: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 4)]
        max_genus: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Attach a handle at e^{iθ} and check the degree and winding laws.
    Deform {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        alpha_angle: f64,
        #[arg(long, default_value_t = 1e-2)]
        t: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the isoperiodic flow for a fixed Q (Q = 0 rotates).
    Flow {
        #[arg(long)]
        spec: PathBuf,
        /// Coefficients of Q as "c0,c1,c2", e.g. "0.3-0.7i,1.1,0.3+0.7i".
        #[arg(long, default_value = "0,0,0")]
        q: String,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        common: Common,
    },
    /// Classify a plane given as a graph and probe its stratum dimension.
    Gr {
        /// Plane file {"genus": g, "M": [[..,..], ...]}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        radius: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn read_spec(path: &Path) -> Result<CurveSpec, Error> {
    let spec: CurveSpec = read_json(path)?;
    if spec.genus != spec.eta.len() {
        return Err(Error::InvalidInput(format!(
            "{}: field `genus` is {} but `eta` lists {} roots",
            path.display(),
            spec.genus,
            spec.eta.len()
        )));
    }
    Ok(spec)
}

fn parse_q(text: &str) -> Result<CPoly, Error> {
    let coeffs: Vec<Complex64> = text
        .split(',')
        .map(|s| {
            let s = s.trim().replace(' ', "");
            Complex64::from_str(&s).map_err(|_| Error::InvalidInput(format!("--q: cannot parse coefficient `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if coeffs.len() != 3 {
        return Err(Error::InvalidInput(format!("--q needs three coefficients, got {}", coeffs.len())));
    }
    Ok(CPoly::new(coeffs))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::InvalidInput(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("valid JSON");
    s.push('\n');
    s
}

fn cmd_classify(spec_path: &Path, sym_angle: Option<f64>, maxden: i64, common: &Common) -> Result<(), Error> {
    let spec = read_spec(spec_path)?;
    let curve = build_curve(&spec, common.tol)?;
    let basis = solve_ba(&curve, &common.quad())?;
    let report = classify(&curve, &basis, common.tol)?;
    let (a_res, b_res) = basis.residuals();
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "spec": to_json(&spec),
        "report": to_json(&report),
        "pencil": {
            "b1": to_json(&basis.b1),
            "b2": to_json(&basis.b2),
            "kernel_gap": basis.kernel_gap,
            "max_abs_a_period": a_res,
            "max_abs_re_b_period": b_res,
        },
    });
    if let Some(theta) = sym_angle {
        let m = phi_map(&basis, Complex64::from_polar(1.0, theta), &common.quad())?;
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        doc["closing"] = json!({
            "sym_angle": theta,
            "phi": rows,
            "maxden": maxden,
            "rational_plane_distance": rational_plane_distance(&m, maxden),
        });
    }
    emit(&common.out, &pretty(&doc))
}

#[derive(Serialize)]
struct ScanRow {
    index: usize,
    eta: String,
    status: String,
    stratum: String,
    deg_f: Option<usize>,
    gcd_degree: Option<usize>,
    winding_arg: Option<i64>,
    winding_roots: Option<i64>,
    kernel_gap: Option<f64>,
    max_abs_a_period: Option<f64>,
    max_abs_re_b_period: Option<f64>,
}

fn scan_row(index: usize, genus: usize, seed: u64, common: &Common) -> ScanRow {
    let mut row = ScanRow {
        index,
        eta: String::new(),
        status: "ok".into(),
        stratum: String::new(),
        deg_f: None,
        gcd_degree: None,
        winding_arg: None,
        winding_roots: None,
        kernel_gap: None,
        max_abs_a_period: None,
        max_abs_re_b_period: None,
    };
    let run = |row: &mut ScanRow| -> Result<(), Error> {
        let spec = scan_spec(seed, genus, index as u64, &Annulus::default(), common.tol)?;
        row.eta = spec.eta.iter().map(|e| format!("{:.17e}{:+.17e}i", e.re, e.im)).collect::<Vec<_>>().join(" ");
        let curve = build_curve(&spec, common.tol)?;
        let basis = solve_ba(&curve, &common.quad())?;
        let (a, b) = basis.residuals();
        row.kernel_gap = Some(basis.kernel_gap);
        row.max_abs_a_period = Some(a);
        row.max_abs_re_b_period = Some(b);
        let r = classify(&curve, &basis, common.tol)?;
        row.stratum = r.stratum.label();
        row.deg_f = Some(r.deg_f);
        row.gcd_degree = Some(r.gcd_degree);
        row.winding_arg = Some(r.winding_arg);
        row.winding_roots = Some(r.winding_roots);
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        log::warn!("sample {index}: {e}");
        row.status = format!("error{}: {}", e.exit_code(), e.to_string().replace(',', ";"));
    }
    row
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn occupancy(rows: &[ScanRow]) -> std::collections::BTreeMap<String, usize> {
    let mut m = std::collections::BTreeMap::new();
    for r in rows {
        let key = if r.status == "ok" { r.stratum.clone() } else { "flagged".into() };
        *m.entry(key).or_insert(0) += 1;
    }
    m
}

#[allow(clippy::too_many_arguments)]
fn cmd_scan(
    genus: usize,
    samples: usize,
    seed: u64,
    format: Format,
    workers: Option<usize>,
    max_genus: usize,
    common: &Common,
) -> Result<(), Error> {
    if genus > max_genus {
        return Err(Error::InvalidInput(format!(
            "--genus {genus} exceeds the configured maximum {max_genus} (raise --max-genus)"
        )));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("--workers: {e}")))?;
    let rows: Vec<ScanRow> = pool.install(|| (0..samples).into_par_iter().map(|k| scan_row(k, genus, seed, common)).collect());
    let occ = occupancy(&rows);
    let text = match format {
        Format::Json => pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "genus": genus,
            "samples": samples,
            "seed": seed,
            "rows": to_json(&rows),
            "occupancy": to_json(&occ),
        })),
        Format::Csv => {
            let mut s = format!("{SCAN_HEADER}\n# genus={genus} samples={samples} seed={seed}\n");
            s.push_str("index,eta,status,stratum,deg_f,gcd_degree,winding_arg,winding_roots,kernel_gap,max_abs_a_period,max_abs_re_b_period\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.index,
                    r.eta,
                    r.status,
                    r.stratum,
                    opt(&r.deg_f),
                    opt(&r.gcd_degree),
                    opt(&r.winding_arg),
                    opt(&r.winding_roots),
                    r.kernel_gap.map(|v| format!("{v:e}")).unwrap_or_default(),
                    r.max_abs_a_period.map(|v| format!("{v:e}")).unwrap_or_default(),
                    r.max_abs_re_b_period.map(|v| format!("{v:e}")).unwrap_or_default(),
                ));
            }
            for (k, v) in &occ {
                s.push_str(&format!("# occupancy {k} {v}\n"));
            }
            s
        }
    };
    emit(&common.out, &text)
}

fn cmd_deform(spec_path: &Path, alpha_angle: f64, t: f64, common: &Common) -> Result<(), Error> {
    let spec = read_spec(spec_path)?;
    let curve = build_curve(&spec, common.tol)?;
    let basis = solve_ba(&curve, &common.quad())?;
    let alpha = Complex64::from_polar(1.0, alpha_angle);
    let check = handle_invariant_check(&curve, &basis, alpha, t, &common.quad(), common.tol)?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "spec": to_json(&spec),
        "alpha_angle": alpha_angle,
        "t": t,
        "check": to_json(&check),
    });
    emit(&common.out, &pretty(&doc))
}

fn cmd_flow(spec_path: &Path, q: &str, dt: f64, steps: usize, format: Format, common: &Common) -> Result<(), Error> {
    let spec = read_spec(spec_path)?;
    let q = parse_q(q)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("--dt must be positive, got {dt}")));
    }
    let curve = build_curve(&spec, common.tol)?;
    let traj = if q.norm_inf() == 0.0 {
        flow(&curve, rotation_direction(), dt, steps, &common.quad(), common.tol)?
    } else {
        validate_q(&q, common.tol)?;
        flow(&curve, fixed_q(q.clone()), dt, steps, &common.quad(), common.tol)?
    };
    if let Some(reason) = &traj.aborted {
        log::warn!("flow aborted: {reason}");
    }
    let text = match format {
        Format::Json => pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "spec": to_json(&spec),
            "q": to_json(&q),
            "trajectory": to_json(&traj),
        })),
        Format::Csv => {
            let g = spec.genus;
            let mut s = format!("{FLOW_HEADER}\n");
            let mut cols = vec!["step".to_string(), "t".into(), "dt".into()];
            for j in 0..g {
                cols.push(format!("eta{j}_re"));
                cols.push(format!("eta{j}_im"));
            }
            cols.extend(["drift".into(), "off_pencil".into()]);
            for k in 1..=2 {
                for j in 0..g {
                    cols.push(format!("b{k}_period{j}_im"));
                }
            }
            s.push_str(&cols.join(","));
            s.push('\n');
            for st in &traj.steps {
                let mut vals = vec![st.step.to_string(), format!("{:e}", st.t), format!("{:e}", st.dt)];
                for e in &st.eta {
                    vals.push(format!("{:e}", e.re));
                    vals.push(format!("{:e}", e.im));
                }
                vals.push(format!("{:e}", st.drift));
                vals.push(format!("{:e}", st.off_pencil));
                vals.extend(st.b_periods.iter().map(|p| format!("{:e}", p.im)));
                s.push_str(&vals.join(","));
                s.push('\n');
            }
            if let Some(reason) = &traj.aborted {
                s.push_str(&format!("# aborted {}\n", reason.replace('\n', " ")));
            }
            s
        }
    };
    emit(&common.out, &text)
}

fn cmd_gr(path: &Path, radius: f64, common: &Common) -> Result<(), Error> {
    let raw: GrPlane = read_json(path)?;
    let plane = GrPlane::new(raw.genus, raw.m)?;
    let class = gr_classify(&plane, common.tol)?;
    let (b1, b2) = plane_basis(&plane);
    let probe = if class.in_r {
        Some(to_json(&stratum_dimension_probe(&plane, radius, common.tol)?))
    } else {
        None
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "plane": to_json(&plane),
        "basis": { "b1": to_json(&b1), "b2": to_json(&b2) },
        "classification": to_json(&class),
        "probe": probe,
    });
    emit(&common.out, &pretty(&doc))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Classify { spec, sym_angle, maxden, common } => cmd_classify(&spec, sym_angle, maxden, &common),
        Command::Scan { genus, samples, seed, format, workers, max_genus, common } => {
            cmd_scan(genus, samples, seed, format, workers, max_genus, &common)
        }
        Command::Deform { spec, alpha_angle, t, common } => cmd_deform(&spec, alpha_angle, t, &common),
        Command::Flow { spec, q, dt, steps, format, common } => cmd_flow(&spec, &q, dt, steps, format, &common),
        Command::Gr { spec, radius, common } => cmd_gr(&spec, radius, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPECTRAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
