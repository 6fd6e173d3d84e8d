//! Command-line front end: run factorizations under instrumentation, verify
//! the numerics, evaluate cost models and lower bounds, and emit
//! measured-vs-model-vs-bound reports.
//!
//! Exit codes: 0 success, 1 usage or precondition error, 2 numerical
//! verification failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use caqr_core::baselines::{self, CholeskyQrOutcome, ThinQR};
use caqr_core::caqr::{caqr_parallel_factor, caqr_sequential_factor, seq_caqr_grid};
use caqr_core::dense::{
    fro_norm, generate, generate_with_condition, read_matrix, DenseMatrix, GeneratorKind,
};
use caqr_core::instrument::CommCounters;
use caqr_core::models;
use caqr_core::tsqr::{build_tree, tsqr_factor, tsqr_seq_factor, TreeShape};
use caqr_core::BlockCyclicLayout;
use caqr_cli::report::RunReport;

#[derive(Parser)]
#[command(name = "caqr", version, about = "Communication-avoiding QR with instrumented counters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Factor a matrix under instrumentation and report counters vs models
    Factor(FactorArgs),
    /// Evaluate a performance-model row
    Model(ModelArgs),
    /// Evaluate a communication or flop lower bound
    Bounds(BoundsArgs),
    /// Stability/cost comparison of QR algorithms over a condition-number grid
    Compare(CompareArgs),
    /// Run every factorization path on one matrix and verify the numerics
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alg {
    Tsqr,
    TsqrSeq,
    Caqr,
    CaqrSeq,
    Chol,
    Cgs,
    Mgs,
    Hh,
}

#[derive(Args)]
struct FactorArgs {
    #[arg(long, value_enum)]
    alg: Alg,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// virtual processor count (tsqr)
    #[arg(long)]
    p: Option<usize>,
    /// fast memory capacity in words (tsqr-seq, caqr-seq)
    #[arg(long)]
    fast_mem: Option<usize>,
    /// reduction tree: flat | binary | general:Q
    #[arg(long, default_value = "binary")]
    tree: String,
    /// processor grid rows (caqr)
    #[arg(long)]
    pr: Option<usize>,
    /// processor grid columns (caqr)
    #[arg(long)]
    pc: Option<usize>,
    /// square block side (caqr)
    #[arg(long)]
    b: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// read the matrix from a text file instead of generating it
    #[arg(long)]
    input: Option<String>,
    /// write the JSON report here
    #[arg(long)]
    json: Option<String>,
}

fn parse_tree(s: &str) -> Result<TreeShape, String> {
    match s {
        "flat" => Ok(TreeShape::Flat),
        "binary" => Ok(TreeShape::Binary),
        _ => {
            if let Some(q) = s.strip_prefix("general:") {
                let q: usize = q.parse().map_err(|_| format!("bad branching in '{}'", s))?;
                Ok(TreeShape::General { branching: q })
            } else {
                Err(format!("unknown tree shape '{}'", s))
            }
        }
    }
}

fn load_matrix(args: &FactorArgs) -> Result<DenseMatrix, String> {
    if let Some(path) = &args.input {
        let f = File::open(path).map_err(|e| format!("{}: {}", path, e))?;
        read_matrix(&mut BufReader::new(f)).map_err(|e| e.to_string())
    } else {
        let m = args.m.ok_or("--m required without --input")?;
        let n = args.n.ok_or("--n required without --input")?;
        let shape = caqr_core::ProblemShape::new(m, n).map_err(|e| e.to_string())?;
        generate(GeneratorKind::Uniform, shape.m, shape.n, args.seed).map_err(|e| e.to_string())
    }
}

struct FactorOutput {
    report: RunReport,
    verified: bool,
}

fn residual_and_ortho_from_thin(a: &DenseMatrix, f: &ThinQR) -> (f64, f64) {
    (f.residual(a), f.ortho_error())
}

fn run_factor(args: &FactorArgs) -> Result<FactorOutput, String> {
    let a = load_matrix(args)?;
    let (m, n) = (a.rows(), a.cols());
    let norm_a = fro_norm(&a);
    let eps = f64::EPSILON;
    let strict_resid = 10.0 * (m * n) as f64 * eps * norm_a.max(eps);
    let strict_ortho = 10.0 * (m * n) as f64 * eps;
    let mult_bound = models::lb_qr_flops(m as f64, n as f64).map_err(|e| e.to_string())?;

    let mut report;
    let residual;
    let ortho;
    let verified;

    match args.alg {
        Alg::Tsqr => {
            let p = args.p.unwrap_or(1);
            let shape = parse_tree(&args.tree)?;
            let tree = build_tree(p, shape).map_err(|e| e.to_string())?;
            let mut c = CommCounters::new(p);
            let f = tsqr_factor(&a, p, &tree, &mut c).map_err(|e| e.to_string())?;
            let mut scratch = CommCounters::new(1);
            let q = f.explicit_q(&mut scratch).map_err(|e| e.to_string())?;
            residual = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
            let gram = q.transpose().matmul(&q).unwrap();
            ortho = fro_norm(&gram.sub(&DenseMatrix::identity(n)).unwrap());
            report = RunReport::from_counters("tsqr", m, n, &c);
            report.procs = Some(p);
            report.tree = Some(args.tree.clone());
            if let Ok(model) = models::model_par_tsqr(m as f64, n as f64, p as f64) {
                report.attach_model(&model, true);
            }
            let local_mem = (m * n) as f64 / p as f64;
            let (bw, bm) = models::lb_par_qr(m as f64, n as f64, p as f64, local_mem);
            report.attach_bounds(bw, bm, true);
            verified = residual <= strict_resid && ortho <= strict_ortho;
        }
        Alg::TsqrSeq => {
            let w = args.fast_mem.ok_or("--fast-mem required for tsqr-seq")?;
            let mut c = CommCounters::with_capacity(1, w);
            let f = tsqr_seq_factor(&a, w, &mut c).map_err(|e| e.to_string())?;
            let mut scratch = CommCounters::new(1);
            let q = f.explicit_q(&mut scratch).map_err(|e| e.to_string())?;
            residual = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
            let gram = q.transpose().matmul(&q).unwrap();
            ortho = fro_norm(&gram.sub(&DenseMatrix::identity(n)).unwrap());
            report = RunReport::from_counters("tsqr-seq", m, n, &c);
            report.fast_mem = Some(w);
            if let Ok(model) = models::model_seq_tsqr(m as f64, n as f64, w as f64) {
                report.attach_model(&model, false);
            }
            let (bw, bm) = models::lb_seq_qr(m as f64, n as f64, w as f64);
            report.attach_bounds(bw, bm, false);
            verified = residual <= strict_resid && ortho <= strict_ortho;
        }
        Alg::Caqr => {
            let pr = args.pr.unwrap_or(2);
            let pc = args.pc.unwrap_or(2);
            let b = args.b.unwrap_or_else(|| (m / pr).min(n / pc).max(1));
            let layout = BlockCyclicLayout::new(pr, pc, b).map_err(|e| e.to_string())?;
            let mut c = CommCounters::new(pr * pc);
            let f = caqr_parallel_factor(&a, &layout, &mut c).map_err(|e| e.to_string())?;
            let mut scratch = CommCounters::new(1);
            let q = f.explicit_q(&mut scratch).map_err(|e| e.to_string())?;
            residual = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
            let gram = q.transpose().matmul(&q).unwrap();
            ortho = fro_norm(&gram.sub(&DenseMatrix::identity(n.min(m))).unwrap());
            report = RunReport::from_counters("caqr", m, n, &c);
            report.proc_rows = Some(pr);
            report.proc_cols = Some(pc);
            report.block = Some(b);
            report.procs = Some(pr * pc);
            if let Ok(model) =
                models::model_par_caqr(m as f64, n as f64, b as f64, pr as f64, pc as f64)
            {
                report.attach_model(&model, true);
            }
            let local_mem = (m * n) as f64 / (pr * pc) as f64;
            let (bw, bm) =
                models::lb_par_qr(m as f64, n as f64, (pr * pc) as f64, local_mem);
            report.attach_bounds(bw, bm, true);
            verified = residual <= strict_resid && ortho <= strict_ortho;
        }
        Alg::CaqrSeq => {
            let w = args.fast_mem.ok_or("--fast-mem required for caqr-seq")?;
            let mut c = CommCounters::with_capacity(1, w);
            let f = caqr_sequential_factor(&a, w, &mut c).map_err(|e| e.to_string())?;
            let mut scratch = CommCounters::new(1);
            let q = f.explicit_q(&mut scratch).map_err(|e| e.to_string())?;
            residual = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
            let gram = q.transpose().matmul(&q).unwrap();
            ortho = fro_norm(&gram.sub(&DenseMatrix::identity(n.min(m))).unwrap());
            report = RunReport::from_counters("caqr-seq", m, n, &c);
            report.fast_mem = Some(w);
            let (pr, pc, _) = seq_caqr_grid(m, n, w);
            report.proc_rows = Some(pr);
            report.proc_cols = Some(pc);
            if let Ok(model) = models::model_seq_caqr_opt(m as f64, n as f64, w as f64) {
                report.attach_model(&model, false);
            }
            let (bw, bm) = models::lb_seq_qr(m as f64, n as f64, w as f64);
            report.attach_bounds(bw, bm, false);
            verified = residual <= strict_resid && ortho <= strict_ortho;
        }
        Alg::Chol => {
            let mut c = CommCounters::new(1);
            match baselines::cholesky_qr(&a, &mut c).map_err(|e| e.to_string())? {
                CholeskyQrOutcome::Factored(f) => {
                    let (r, o) = residual_and_ortho_from_thin(&a, &f);
                    residual = r;
                    ortho = o;
                    report = RunReport::from_counters("chol", m, n, &c);
                    if let Ok(model) =
                        models::model_choleskyqr_seq(m as f64, n as f64, (m * n) as f64)
                    {
                        report.attach_model(&model, false);
                    }
                    verified = residual <= 1e-8 * norm_a.max(eps);
                }
                CholeskyQrOutcome::Breakdown { pivot } => {
                    return Err(format!(
                        "verification failure: Cholesky breakdown at pivot {}",
                        pivot
                    ));
                }
            }
        }
        Alg::Cgs => {
            let mut c = CommCounters::new(1);
            let f = baselines::cgs(&a, &mut c).map_err(|e| e.to_string())?;
            let (r, o) = residual_and_ortho_from_thin(&a, &f);
            residual = r;
            ortho = o;
            report = RunReport::from_counters("cgs", m, n, &c);
            verified = residual <= 1e-8 * norm_a.max(eps);
        }
        Alg::Mgs => {
            let mut c = CommCounters::new(1);
            let f = baselines::mgs_right_looking(&a, &mut c).map_err(|e| e.to_string())?;
            let (r, o) = residual_and_ortho_from_thin(&a, &f);
            residual = r;
            ortho = o;
            report = RunReport::from_counters("mgs", m, n, &c);
            verified = residual <= 1e-8 * norm_a.max(eps);
        }
        Alg::Hh => {
            let mut c = CommCounters::new(1);
            let f = baselines::householder_reference(&a, &mut c).map_err(|e| e.to_string())?;
            let (r, o) = residual_and_ortho_from_thin(&a, &f);
            residual = r;
            ortho = o;
            report = RunReport::from_counters("hh", m, n, &c);
            verified = residual <= strict_resid && ortho <= strict_ortho;
        }
    }

    report.norm_a = norm_a;
    report.residual = residual;
    report.ortho_error = ortho;
    report.seed = if args.input.is_none() {
        Some(args.seed)
    } else {
        None
    };
    report.attach_flop_bound(mult_bound);
    Ok(FactorOutput { report, verified })
}

#[derive(Args)]
struct ModelArgs {
    /// model row: par-tsqr | pdgeqrf-1d | mgs-par | cgs-par | cholqr-par |
    /// seq-tsqr | householder-seq | pfdgeqrf | mgs-seq | cholqr-seq |
    /// par-caqr | pdgeqrf-2d | seq-caqr | seq-caqr-opt | opt-par-caqr |
    /// opt-seq-caqr | rgeqr3 | rgeqr3-latency
    #[arg(long)]
    row: String,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    fast_mem: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    pr: Option<f64>,
    #[arg(long)]
    pc: Option<f64>,
    #[arg(long)]
    json: Option<String>,
}

fn need(v: Option<f64>, name: &str) -> Result<f64, String> {
    v.ok_or_else(|| format!("--{} required for this row", name))
}

fn run_model(args: &ModelArgs) -> Result<String, String> {
    let m = args.m;
    let n = args.n;
    let emit = |r: models::ModelReport| -> String {
        let mut map = serde_json::Map::new();
        map.insert("schema_version".into(), 1u32.into());
        map.insert("row".into(), r.label.into());
        map.insert("flops".into(), r.flops.into());
        map.insert("words".into(), r.words.into());
        map.insert("messages".into(), r.messages.into());
        if let Some(d) = r.divisions {
            map.insert("divisions".into(), d.into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).unwrap()
    };
    let out = match args.row.as_str() {
        "par-tsqr" => emit(models::model_par_tsqr(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
            .map_err(|e| e.to_string())?),
        "pdgeqrf-1d" => emit(
            models::model_pdgeqrf_1d(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
                .map_err(|e| e.to_string())?,
        ),
        "mgs-par" => emit(models::model_mgs_par(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
            .map_err(|e| e.to_string())?),
        "cgs-par" => emit(models::model_cgs_par(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
            .map_err(|e| e.to_string())?),
        "cholqr-par" => emit(
            models::model_choleskyqr_par(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
                .map_err(|e| e.to_string())?,
        ),
        "seq-tsqr" => emit(
            models::model_seq_tsqr(need(m, "m")?, need(n, "n")?, need(args.fast_mem, "fast-mem")?)
                .map_err(|e| e.to_string())?,
        ),
        "householder-seq" => emit(
            models::model_householder_seq(
                need(m, "m")?,
                need(n, "n")?,
                need(args.fast_mem, "fast-mem")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "pfdgeqrf" => emit(
            models::model_pfdgeqrf(need(m, "m")?, need(n, "n")?, need(args.fast_mem, "fast-mem")?)
                .map_err(|e| e.to_string())?,
        ),
        "mgs-seq" => emit(
            models::model_mgs_seq(need(m, "m")?, need(n, "n")?, need(args.fast_mem, "fast-mem")?)
                .map_err(|e| e.to_string())?,
        ),
        "cholqr-seq" => emit(
            models::model_choleskyqr_seq(
                need(m, "m")?,
                need(n, "n")?,
                need(args.fast_mem, "fast-mem")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "par-caqr" => emit(
            models::model_par_caqr(
                need(m, "m")?,
                need(n, "n")?,
                need(args.b, "b")?,
                need(args.pr, "pr")?,
                need(args.pc, "pc")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "pdgeqrf-2d" => emit(
            models::model_pdgeqrf_2d(
                need(m, "m")?,
                need(n, "n")?,
                need(args.b, "b")?,
                need(args.pr, "pr")?,
                need(args.pc, "pc")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "seq-caqr" => emit(
            models::model_seq_caqr(
                need(m, "m")?,
                need(n, "n")?,
                need(args.pr, "pr")?,
                need(args.pc, "pc")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "seq-caqr-opt" => emit(
            models::model_seq_caqr_opt(
                need(m, "m")?,
                need(n, "n")?,
                need(args.fast_mem, "fast-mem")?,
            )
            .map_err(|e| e.to_string())?,
        ),
        "opt-par-caqr" => {
            let (b, pr, pc, ansatz) =
                models::optimal_params_par_caqr(need(m, "m")?, need(n, "n")?, need(args.p, "p")?)
                    .map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1,
                "row": "opt-par-caqr",
                "b": b, "pr": pr, "pc": pc, "ansatz_k": ansatz.k, "ansatz_b": ansatz.b,
            }))
            .unwrap()
        }
        "opt-seq-caqr" => {
            let (p, pr, pc) = models::optimal_params_seq_caqr(
                need(m, "m")?,
                need(n, "n")?,
                need(args.fast_mem, "fast-mem")?,
            )
            .map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1,
                "row": "opt-seq-caqr",
                "p": p, "pr": pr, "pc": pc,
            }))
            .unwrap()
        }
        "rgeqr3" => {
            let words =
                models::model_rgeqr3(need(m, "m")?, need(n, "n")?, need(args.fast_mem, "fast-mem")?)
                    .map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1, "row": "rgeqr3", "words": words,
            }))
            .unwrap()
        }
        "rgeqr3-latency" => {
            let msgs =
                models::model_rgeqr3_latency_panel(need(m, "m")?, need(args.fast_mem, "fast-mem")?)
                    .map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1, "row": "rgeqr3-latency", "messages": msgs,
            }))
            .unwrap()
        }
        other => return Err(format!("unknown model row '{}'", other)),
    };
    Ok(out)
}

#[derive(Args)]
struct BoundsArgs {
    /// bound kind: seq-matmul | par-matmul-2d | rect-matmul | seq-qr |
    /// par-qr | par-qr-special | qr-flops | qr-flops-column | reduction-edge
    #[arg(long)]
    kind: String,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    fast_mem: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    j: Option<f64>,
    #[arg(long)]
    json: Option<String>,
}

fn run_bounds(args: &BoundsArgs) -> Result<String, String> {
    let pair = |w: f64, m: f64, kind: &str| -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "schema_version": 1, "kind": kind, "words": w, "messages": m,
        }))
        .unwrap()
    };
    let out = match args.kind.as_str() {
        "seq-matmul" => {
            let (w, msg) =
                models::lb_seq_matmul(need(args.n, "n")?, need(args.fast_mem, "fast-mem")?);
            pair(w, msg, "seq-matmul")
        }
        "par-matmul-2d" => {
            let (w, msg) = models::lb_par_matmul_2d(
                need(args.n, "n")?,
                need(args.p, "p")?,
                args.mu.unwrap_or(1.0),
            );
            pair(w, msg, "par-matmul-2d")
        }
        "rect-matmul" => {
            let (w, msg) = models::lb_rect_matmul(
                need(args.m, "m")?,
                need(args.n, "n")?,
                need(args.r, "r")?,
                need(args.p, "p")?,
            )
            .map_err(|e| e.to_string())?;
            pair(w, msg, "rect-matmul")
        }
        "seq-qr" => {
            let (w, msg) = models::lb_seq_qr(
                need(args.m, "m")?,
                need(args.n, "n")?,
                need(args.fast_mem, "fast-mem")?,
            );
            pair(w, msg, "seq-qr")
        }
        "par-qr" => {
            let (w, msg) = models::lb_par_qr(
                need(args.m, "m")?,
                need(args.n, "n")?,
                need(args.p, "p")?,
                need(args.fast_mem, "fast-mem")?,
            );
            pair(w, msg, "par-qr")
        }
        "par-qr-special" => {
            let (w, msg) = models::lb_par_qr_special(
                need(args.m, "m")?,
                need(args.n, "n")?,
                need(args.p, "p")?,
            )
            .map_err(|e| e.to_string())?;
            pair(w, msg, "par-qr-special")
        }
        "qr-flops" => {
            let f = models::lb_qr_flops(need(args.m, "m")?, need(args.n, "n")?)
                .map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1, "kind": "qr-flops", "multiplications": f,
            }))
            .unwrap()
        }
        "qr-flops-column" => {
            let f = models::lb_qr_flops_column(need(args.m, "m")?, need(args.j, "j")?);
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1, "kind": "qr-flops-column", "multiplications": f,
            }))
            .unwrap()
        }
        "reduction-edge" => {
            let n = need(args.n, "n")? as u64;
            let w = models::lb_reduction_edge(n);
            serde_json::to_string_pretty(&serde_json::json!({
                "schema_version": 1, "kind": "reduction-edge", "words": w,
            }))
            .unwrap()
        }
        other => return Err(format!("unknown bound kind '{}'", other)),
    };
    Ok(out)
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 500)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// comma-separated list of condition numbers
    #[arg(long, default_value = "1,1e4,1e8")]
    kappas: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// write the CSV here instead of stdout
    #[arg(long)]
    out: Option<String>,
    /// also write the table as a JSON array here
    #[arg(long)]
    json: Option<String>,
}

fn run_compare(args: &CompareArgs) -> Result<String, String> {
    let kappas: Vec<f64> = args
        .kappas
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("kappa '{}': {}", s, e)))
        .collect::<Result<_, _>>()?;
    let (m, n) = (args.m, args.n);
    let mut csv = String::from("alg,kappa,ortho_err,resid,flops,words,messages\n");
    for &kappa in &kappas {
        let a = generate_with_condition(m, n, kappa, args.seed).map_err(|e| e.to_string())?;
        let mut row = |alg: &str, ortho: f64, resid: f64, c: &CommCounters| {
            csv.push_str(&format!(
                "{},{:e},{:e},{:e},{},{},{}\n",
                alg, kappa, ortho, resid, c.flops, c.words_moved, c.messages
            ));
        };
        // TSQR on a binary tree over 4 virtual processors
        {
            let p = if m / 4 >= n { 4 } else { 1 };
            let tree = build_tree(p, TreeShape::Binary).map_err(|e| e.to_string())?;
            let mut c = CommCounters::new(p);
            let f = tsqr_factor(&a, p, &tree, &mut c).map_err(|e| e.to_string())?;
            let mut scratch = CommCounters::new(1);
            let q = f.explicit_q(&mut scratch).map_err(|e| e.to_string())?;
            let gram = q.transpose().matmul(&q).unwrap();
            let ortho = fro_norm(&gram.sub(&DenseMatrix::identity(n)).unwrap());
            let resid = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
            row("tsqr", ortho, resid, &c);
        }
        {
            let mut c = CommCounters::new(1);
            let f = baselines::householder_reference(&a, &mut c).map_err(|e| e.to_string())?;
            row("hh", f.ortho_error(), f.residual(&a), &c);
        }
        {
            let mut c = CommCounters::new(1);
            let f = baselines::mgs_right_looking(&a, &mut c).map_err(|e| e.to_string())?;
            row("mgs", f.ortho_error(), f.residual(&a), &c);
        }
        {
            let mut c = CommCounters::new(1);
            let f = baselines::cgs(&a, &mut c).map_err(|e| e.to_string())?;
            row("cgs", f.ortho_error(), f.residual(&a), &c);
        }
        {
            let mut c = CommCounters::new(1);
            match baselines::cholesky_qr(&a, &mut c).map_err(|e| e.to_string())? {
                CholeskyQrOutcome::Factored(f) => {
                    row("chol", f.ortho_error(), f.residual(&a), &c)
                }
                CholeskyQrOutcome::Breakdown { .. } => row("chol", f64::INFINITY, f64::INFINITY, &c),
            }
        }
    }
    Ok(csv)
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 64)]
    m: usize,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn run_verify(args: &VerifyArgs) -> Result<bool, String> {
    let (m, n) = (args.m, args.n);
    let a = generate(GeneratorKind::Uniform, m, n, args.seed).map_err(|e| e.to_string())?;
    let norm = fro_norm(&a);
    let tol_resid = 10.0 * (m * n) as f64 * f64::EPSILON * norm;
    let tol_ortho = 10.0 * (m * n) as f64 * f64::EPSILON;
    let mut all_ok = true;
    let mut check = |label: String, q: &DenseMatrix, r: &DenseMatrix| {
        let resid = fro_norm(&q.matmul(r).unwrap().sub(&a).unwrap());
        let k = q.cols();
        let gram = q.transpose().matmul(q).unwrap();
        let ortho = fro_norm(&gram.sub(&DenseMatrix::identity(k)).unwrap());
        let ok = resid <= tol_resid && ortho <= tol_ortho;
        println!(
            "{} {:<28} residual {:.3e}  orthogonality {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            label,
            resid,
            ortho
        );
        all_ok &= ok;
    };

    {
        let mut c = CommCounters::new(1);
        let f = baselines::householder_reference(&a, &mut c).map_err(|e| e.to_string())?;
        check("householder".into(), &f.q, &f.r);
    }
    for shape in ["flat", "binary", "general:3"] {
        for p in [1usize, 2, 4] {
            if m / p < n {
                continue;
            }
            let tree = build_tree(p, parse_tree(shape)?).map_err(|e| e.to_string())?;
            let mut c = CommCounters::new(p);
            let f = tsqr_factor(&a, p, &tree, &mut c).map_err(|e| e.to_string())?;
            let mut s = CommCounters::new(1);
            let q = f.explicit_q(&mut s).map_err(|e| e.to_string())?;
            check(format!("tsqr {} P={}", shape, p), &q, &f.r);
        }
    }
    {
        let w = (3 * n * n).max(m * n / 4);
        let mut c = CommCounters::with_capacity(1, w);
        let f = tsqr_seq_factor(&a, w, &mut c).map_err(|e| e.to_string())?;
        let mut s = CommCounters::new(1);
        let q = f.explicit_q(&mut s).map_err(|e| e.to_string())?;
        check(format!("tsqr-seq W={}", w), &q, &f.r);
    }
    {
        let b = (n / 2).clamp(1, m / 2);
        let layout = BlockCyclicLayout::new(2, 2, b).map_err(|e| e.to_string())?;
        let mut c = CommCounters::new(4);
        let f = caqr_parallel_factor(&a, &layout, &mut c).map_err(|e| e.to_string())?;
        let mut s = CommCounters::new(1);
        let q = f.explicit_q(&mut s).map_err(|e| e.to_string())?;
        check("caqr 2x2".into(), &q, &f.r);
    }
    {
        let w = 4 * m * n / 3;
        let mut c = CommCounters::with_capacity(1, w);
        let f = caqr_sequential_factor(&a, w, &mut c).map_err(|e| e.to_string())?;
        let mut s = CommCounters::new(1);
        let q = f.explicit_q(&mut s).map_err(|e| e.to_string())?;
        check(format!("caqr-seq W={}", w), &q, &f.r);
    }
    Ok(all_ok)
}

fn csv_to_json(csv: &str) -> Result<String, String> {
    let mut lines = csv.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split(',').collect();
    let mut rows = Vec::new();
    for line in lines {
        let mut obj = serde_json::Map::new();
        for (key, val) in header.iter().zip(line.split(',')) {
            let v = val
                .parse::<f64>()
                .map(serde_json::Value::from)
                .unwrap_or_else(|_| serde_json::Value::from(val));
            obj.insert((*key).to_string(), v);
        }
        rows.push(serde_json::Value::Object(obj));
    }
    serde_json::to_string_pretty(&rows).map_err(|e| e.to_string())
}

fn write_output(text: &str, path: &Option<String>) -> Result<(), String> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| format!("{}: {}", p, e))?;
            let mut w = BufWriter::new(f);
            w.write_all(text.as_bytes()).map_err(|e| e.to_string())?;
            w.write_all(b"\n").map_err(|e| e.to_string())
        }
        None => {
            println!("{}", text);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests exit 0; usage errors exit 1
            if e.use_stderr() {
                eprintln!("{}", e);
                return ExitCode::from(1);
            }
            print!("{}", e);
            return ExitCode::SUCCESS;
        }
    };
    match cli.cmd {
        Cmd::Factor(args) => match run_factor(&args) {
            Ok(out) => {
                print!("{}", out.report.render_text());
                if let Some(path) = &args.json {
                    if let Err(e) = write_output(&out.report.to_json(), &Some(path.clone())) {
                        eprintln!("error: {}", e);
                        return ExitCode::from(1);
                    }
                }
                if out.verified {
                    ExitCode::SUCCESS
                } else {
                    eprintln!("error: numerical verification failed");
                    ExitCode::from(2)
                }
            }
            Err(e) => {
                eprintln!("error: {}", e);
                if e.starts_with("verification failure") {
                    ExitCode::from(2)
                } else {
                    ExitCode::from(1)
                }
            }
        },
        Cmd::Model(args) => match run_model(&args) {
            Ok(text) => {
                if write_output(&text, &args.json).is_err() {
                    return ExitCode::from(1);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(1)
            }
        },
        Cmd::Bounds(args) => match run_bounds(&args) {
            Ok(text) => {
                if write_output(&text, &args.json).is_err() {
                    return ExitCode::from(1);
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(1)
            }
        },
        Cmd::Compare(args) => match run_compare(&args) {
            Ok(csv) => {
                if write_output(&csv, &args.out).is_err() {
                    return ExitCode::from(1);
                }
                if let Some(path) = &args.json {
                    match csv_to_json(&csv) {
                        Ok(j) => {
                            if write_output(&j, &Some(path.clone())).is_err() {
                                return ExitCode::from(1);
                            }
                        }
                        Err(e) => {
                            eprintln!("error: {}", e);
                            return ExitCode::from(1);
                        }
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(1)
            }
        },
        Cmd::Verify(args) => match run_verify(&args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => {
                eprintln!("error: numerical verification failed");
                ExitCode::from(2)
            }
            Err(e) => {
                eprintln!("error: {}", e);
                ExitCode::from(1)
            }
        },
    }
}
