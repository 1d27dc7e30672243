use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use circuitprobe::gguf::{duplicate_block, parse_gguf, write_gguf, DuplicateMode, GgufError, SurgeryOptions};
use circuitprobe::scoring::ScoreError;
use circuitprobe::stats::StatsError;
use circuitprobe::trace::TRACE_MAGIC;
use circuitprobe::{
    combined_rank, compute_all, read_stats, read_trace, write_stats, LayerStatsTable, RankConfig, RankedReport,
};

use crate::chart;
use crate::output::{write_atomic, write_error};
use crate::{CliError, CliResult};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn stats_error(path: &Path, e: StatsError) -> CliError {
    match e {
        StatsError::Svd { .. } => CliError::Internal(format!("{}: {e}", path.display())),
        e => CliError::Input(format!("{}: {e}", path.display())),
    }
}

fn score_error(e: ScoreError) -> CliError {
    CliError::Input(e.to_string())
}

fn load_trace_stats(path: &Path, src: impl Read) -> CliResult<LayerStatsTable> {
    let trace = read_trace(src).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    compute_all(&trace).map_err(|e| stats_error(path, e))
}

fn load_stats_json(path: &Path) -> CliResult<LayerStatsTable> {
    read_stats(BufReader::new(open(path)?)).map_err(|e| stats_error(path, e))
}

enum InputKind {
    Trace,
    StatsJson,
}

fn sniff(path: &Path) -> CliResult<InputKind> {
    let mut head = Vec::with_capacity(64);
    open(path)?
        .take(64)
        .read_to_end(&mut head)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    if head.starts_with(TRACE_MAGIC) {
        return Ok(InputKind::Trace);
    }
    match head.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => Ok(InputKind::StatsJson),
        _ => Err(CliError::Input(format!(
            "{}: bad magic: neither a CPTR trace nor a stats JSON document",
            path.display()
        ))),
    }
}

fn print_stats_table(stats: &LayerStatsTable) {
    println!(
        "{:>5}  {:>11}  {:>11}  {:>8}  {:>8}  {:>11}  {:>8}  {:>11}",
        "layer", "change", "change_std", "self_sim", "growth", "cross_var", "eff_rank", "deriv"
    );
    for i in 0..stats.n_layers {
        println!(
            "{:>5}  {:>11.4}  {:>11.4}  {:>8.4}  {:>8.4}  {:>11.4}  {:>8.4}  {:>11.4}",
            i,
            stats.change_mean[i],
            stats.change_std[i],
            stats.self_sim_mean[i],
            stats.growth_mean[i],
            stats.cross_var[i],
            stats.eff_rank[i],
            stats.change_deriv[i],
        );
    }
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn stats(trace: &Path, output: &Path) -> CliResult<()> {
    let stats = load_trace_stats(trace, BufReader::new(open(trace)?))?;
    write_atomic(output, |w| {
        write_stats(&stats, w).map_err(|e| match e {
            StatsError::Io(io) => write_error(output, io),
            e => CliError::Internal(e.to_string()),
        })
    })?;
    print_stats_table(&stats);
    println!("wrote {}", output.display());
    Ok(())
}

/// Block width bounds. Without an explicit maximum, the default is lowered to fit
/// models with fewer layers than it.
pub struct Widths {
    pub min: usize,
    pub max: Option<usize>,
    pub default_max: usize,
}

impl Widths {
    fn config(&self, n_layers: usize) -> RankConfig {
        let max = self.max.unwrap_or_else(|| self.default_max.min(n_layers).max(self.min));
        RankConfig { min_w: self.min, max_w: max }
    }
}

pub fn rank_stats(stats: &LayerStatsTable, widths: &Widths) -> CliResult<RankedReport> {
    combined_rank(stats, widths.config(stats.n_layers)).map_err(score_error)
}

fn print_report(r: &RankedReport) {
    println!(
        "{}: {} layers, {} candidates (widths {}..={})",
        r.model,
        r.n_layers,
        r.candidates.len(),
        r.config.min_w,
        r.config.max_w
    );
    println!(
        "{:>4}  {:<10}  {:>8}  {:>9}  {:>9}  {:>11}  {:>11}  type",
        "rank", "block", "combined", "stab_norm", "anom_norm", "s_stability", "s_anomaly"
    );
    for (i, c) in r.candidates.iter().take(10).enumerate() {
        println!(
            "{:>4}  {:<10}  {:>8.4}  {:>9.4}  {:>9.4}  {:>11.4}  {:>11.4}  {}",
            i + 1,
            c.block().to_string(),
            c.combined,
            c.stability_norm,
            c.anomaly_norm,
            c.s_stability,
            c.s_anomaly,
            c.circuit_type,
        );
    }
    let callout = |label: &str, b: circuitprobe::CandidateBlock| {
        let rank = r.rank_of(b).map_or_else(|| "-".to_string(), |k| k.to_string());
        println!("{label}: {b} (layers {}..={}, combined rank {rank})", b.s, b.e - 1);
    };
    callout("top_stability", r.top_stability);
    callout("top_anomaly", r.top_anomaly);
}

pub fn rank(input: &Path, output: &Path, csv: Option<&Path>, widths: Widths) -> CliResult<()> {
    let stats = match sniff(input)? {
        InputKind::Trace => load_trace_stats(input, BufReader::new(open(input)?))?,
        InputKind::StatsJson => load_stats_json(input)?,
    };
    let report = rank_stats(&stats, &widths)?;
    write_atomic(output, |w| w.write_all(report.to_json().as_bytes()).map_err(|e| write_error(output, e)))?;
    if let Some(csv) = csv {
        write_atomic(csv, |w| w.write_all(report.to_csv().as_bytes()).map_err(|e| write_error(csv, e)))?;
    }
    print_report(&report);
    Ok(())
}

fn gguf_error(path: &Path, e: GgufError) -> CliError {
    match e {
        GgufError::Io(e) => CliError::Input(format!("cannot read {}: {e}", path.display())),
        GgufError::BadMagic(_) => CliError::Input(format!("{}: bad magic, {e}", path.display())),
        e => CliError::Input(format!("{}: {e}", path.display())),
    }
}

pub fn surgery(
    input: &Path,
    (s, e): (usize, usize),
    mode: DuplicateMode,
    max_output_bytes: Option<u64>,
    output: &Path,
) -> CliResult<()> {
    let mut src = BufReader::new(open(input)?);
    let model = parse_gguf(&mut src).map_err(|err| gguf_error(input, err))?;
    let old_layers = model.block_count().unwrap_or(0);
    let old_size = src.get_ref().metadata().map(|m| m.len()).unwrap_or(0);
    let out = duplicate_block(&model, s, e, SurgeryOptions { mode, max_output_bytes })
        .map_err(|err| gguf_error(input, err))?;

    let written = write_atomic(output, |w| {
        let n = write_gguf(&out, &mut src, w).map_err(|err| match err {
            GgufError::Io(io) => write_error(output, io),
            err => CliError::Internal(err.to_string()),
        })?;
        w.flush().map_err(|io| write_error(output, io))?;
        // the written file must parse back to the planned model
        let check = parse_gguf(w.get_mut().as_file_mut())
            .map_err(|err| CliError::Internal(format!("output does not re-parse: {err}")))?;
        let layout = |m: &circuitprobe::gguf::GgufModel| {
            m.tensors.iter().map(|t| (t.name.clone(), t.dims.clone(), t.ggml_type, t.offset)).collect::<Vec<_>>()
        };
        if layout(&check) != layout(&out) || check.metadata != out.metadata {
            return Err(CliError::Internal("output header differs from the planned model".into()));
        }
        Ok(n)
    })?;

    println!("layers: {old_layers} -> {}", out.block_count().unwrap_or(0));
    println!("duplicated: [{s}, {e}), width {}, {} mode", e - s, mode_name(mode));
    let delta = written as i128 - old_size as i128;
    println!("size: {old_size} -> {written} bytes ({delta:+})");
    println!("wrote {}", output.display());
    Ok(())
}

fn mode_name(mode: DuplicateMode) -> &'static str {
    match mode {
        DuplicateMode::Copy => "copy",
        DuplicateMode::Alias => "alias",
    }
}

pub fn chart(stats_path: &Path, output: &Path) -> CliResult<()> {
    let stats = load_stats_json(stats_path)?;
    let widths = Widths {
        min: circuitprobe::scoring::DEFAULT_MIN_WIDTH,
        max: None,
        default_max: circuitprobe::scoring::DEFAULT_MAX_WIDTH,
    };
    let report = rank_stats(&stats, &widths)?;
    let svg = chart::render_svg(&stats, report.top_stability, report.top_anomaly);
    let csv = chart::render_csv(&stats, report.top_stability, report.top_anomaly);
    let csv_path = output.with_extension("csv");
    if csv_path == output {
        return Err(CliError::Input(format!("{}: chart output must not end in .csv", output.display())));
    }
    write_atomic(output, |w| w.write_all(svg.as_bytes()).map_err(|e| write_error(output, e)))?;
    write_atomic(&csv_path, |w| w.write_all(csv.as_bytes()).map_err(|e| write_error(&csv_path, e)))?;
    println!("top_stability: {}", report.top_stability);
    println!("top_anomaly: {}", report.top_anomaly);
    println!("wrote {} and {}", output.display(), csv_path.display());
    Ok(())
}
