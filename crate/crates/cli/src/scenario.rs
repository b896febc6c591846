//! Scenario execution: deterministic sweeps writing results.csv and
//! manifest.json.

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::manifest::{AssumedConstant, PointError, RunManifest};
use cohsim::fibersim::{propagate_link, FiberSpan, LinkConfig, SsfmConfig};
use cohsim::linkmodel::{self, Scheme, SnrModelParams};
use cohsim::rng::derive_seed;
use cohsim::rxdsp::{
    extract_channel, ideal_receiver_nsr, run_receiver, LinkLinear, LoEmulation, MimoMode,
    RxChainConfig,
};
use cohsim::shaping::{gap_to_capacity, gmi, Constellation, ShapedConstellation};
use cohsim::txchain::{
    apply_iq_skew, apply_phase_noise, apply_quantization, build_channel, payload_for_frame_total,
    wdm_mux, ChannelSignal, SubcarrierPlan,
};
use cohsim::{dbm_to_mw, db_to_lin, dispersion_si, lin_to_db, DualPolWaveform};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Scenario(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub svg: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub results_csv: PathBuf,
    pub manifest_json: PathBuf,
    pub rows: usize,
}

/// Environment override names (out-dir and workers only).
pub const ENV_OUT: &str = "COHSIM_OUT";
pub const ENV_WORKERS: &str = "COHSIM_WORKERS";

fn resolve_out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(dir) = &opts.out_dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(ENV_OUT) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    cfg.out_dir.as_ref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

fn resolve_workers(opts: &RunOptions) -> Option<usize> {
    if opts.workers.is_some() {
        return opts.workers;
    }
    std::env::var(ENV_WORKERS).ok().and_then(|v| v.parse().ok())
}

fn write_atomic(path: &Path, content: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

struct ScenarioResult {
    header: String,
    rows: Vec<String>,
    errors: Vec<PointError>,
    point_seeds: Vec<(String, u64)>,
    /// (series name, x, y) triples for the optional quick plot.
    plot: Vec<(String, f64, f64)>,
    plot_axes: (String, String),
}

/// `simulate` entry point: waveform-level scenarios only.
pub fn run_simulate(config_path: &Path, opts: &RunOptions) -> Result<RunOutput, RunError> {
    run_scenario_kinds(
        config_path,
        opts,
        &[ScenarioKind::AnliVsDistance, ScenarioKind::SnrVsDistance, ScenarioKind::Backtoback],
        "simulate",
    )
}

/// `gmi` entry point.
pub fn run_gmi(config_path: &Path, opts: &RunOptions) -> Result<RunOutput, RunError> {
    run_scenario_kinds(config_path, opts, &[ScenarioKind::GmiCurve], "gmi")
}

fn run_scenario_kinds(
    config_path: &Path,
    opts: &RunOptions,
    allowed: &[ScenarioKind],
    command: &str,
) -> Result<RunOutput, RunError> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    if !allowed.contains(&cfg.scenario) {
        return Err(RunError::Scenario(format!(
            "scenario \"{}\" is not handled by the {command} command",
            cfg.scenario.as_str()
        )));
    }
    run_scenario(config_path, opts)
}

/// Run one of the simulate/gmi scenarios described by the config file.
pub fn run_scenario(config_path: &Path, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let mut cfg = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let started = std::time::Instant::now();
    let workers = resolve_workers(opts);
    let result = with_pool(workers, || match cfg.scenario {
        ScenarioKind::GmiCurve => gmi_curve(&cfg),
        ScenarioKind::Backtoback => backtoback(&cfg),
        ScenarioKind::AnliVsDistance => anli_vs_distance(&cfg),
        ScenarioKind::SnrVsDistance => snr_vs_distance(&cfg),
    })?;
    finish_run(&cfg, config_path, opts, workers, result, started)
}

/// Evaluate the closed-form SNR model over the configured distance axis.
pub fn run_model(config_path: &Path, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let mut cfg = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    cfg.validate_model()?;
    let started = std::time::Instant::now();
    let result = model_curve(&cfg, config_path)?;
    finish_run(&cfg, config_path, opts, None, result, started)
}

fn finish_run(
    cfg: &ExperimentConfig,
    config_path: &Path,
    opts: &RunOptions,
    workers: Option<usize>,
    result: ScenarioResult,
    started: std::time::Instant,
) -> Result<RunOutput, RunError> {
    let out_dir = resolve_out_dir(cfg, opts);
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let results_csv = out_dir.join("results.csv");
    let mut csv = String::with_capacity(4096);
    csv.push_str(&result.header);
    csv.push_str("\r\n");
    for row in &result.rows {
        csv.push_str(row);
        csv.push_str("\r\n");
    }
    write_atomic(&results_csv, &csv)?;

    if opts.svg && !result.plot.is_empty() {
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for (name, x, y) in &result.plot {
            match series.iter_mut().find(|(n, _)| n == name) {
                Some((_, pts)) => pts.push((*x, *y)),
                None => series.push((name.clone(), vec![(*x, *y)])),
            }
        }
        let svg = crate::svg::line_plot(
            &series,
            &result.plot_axes.0,
            &result.plot_axes.1,
            cfg.scenario.as_str(),
        );
        write_atomic(&out_dir.join("results.svg"), &svg)?;
    }

    let manifest_json = out_dir.join("manifest.json");
    let manifest = RunManifest {
        tool: "cohsim".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: cfg.scenario.as_str().to_string(),
        config_path: config_path.display().to_string(),
        master_seed: cfg.master_seed,
        workers,
        wall_clock_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
        assumed_constants: assumed_constants(cfg),
        point_seeds: result
            .point_seeds
            .iter()
            .map(|(label, seed)| crate::manifest::PointSeed {
                point: label.clone(),
                seed: *seed,
            })
            .collect(),
        errors: result.errors.clone(),
        outputs: vec!["results.csv".to_string()],
    };
    let manifest_text =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    write_atomic(&manifest_json, &manifest_text)?;
    Ok(RunOutput { out_dir, results_csv, manifest_json, rows: result.rows.len() })
}

fn with_pool<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, RunError> + Send,
) -> Result<T, RunError> {
    match workers {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RunError::Scenario(format!("worker pool: {e}")))?
            .install(f),
        _ => f(),
    }
}

fn assumed_constants(cfg: &ExperimentConfig) -> Vec<AssumedConstant> {
    let mut list = vec![
        AssumedConstant {
            name: "speed_of_light".into(),
            value: cohsim::SPEED_OF_LIGHT,
            units: "m/s".into(),
            assumption: false,
            note: "exact SI constant".into(),
        },
        AssumedConstant {
            name: "planck_constant".into(),
            value: cohsim::PLANCK,
            units: "J*s".into(),
            assumption: false,
            note: "exact SI constant".into(),
        },
        AssumedConstant {
            name: "fiber.alpha_db_per_km".into(),
            value: cfg.fiber.alpha_db_per_km,
            units: "dB/km".into(),
            assumption: true,
            note: "fiber attenuation is a simulator assumption, not a measured value".into(),
        },
        AssumedConstant {
            name: "fiber.dispersion_ps_nm_km".into(),
            value: cfg.fiber.dispersion_ps_nm_km,
            units: "ps/(nm*km)".into(),
            assumption: true,
            note: "fiber dispersion is a simulator assumption, not a measured value".into(),
        },
        AssumedConstant {
            name: "fiber.gamma_per_w_km".into(),
            value: cfg.fiber.gamma_per_w_km,
            units: "1/(W*km)".into(),
            assumption: true,
            note: "Kerr coefficient is a simulator assumption, not a measured value".into(),
        },
    ];
    if let Some(tx) = &cfg.tx {
        list.push(AssumedConstant {
            name: "tx.rolloff".into(),
            value: tx.rolloff,
            units: "1".into(),
            assumption: true,
            note: "pulse-shaping rolloff chosen to fit the slot grid".into(),
        });
    }
    list
}

fn scheme_label(s: Scheme) -> String {
    s.to_string()
}

fn shaped_for(cfg: &ExperimentConfig) -> Result<ShapedConstellation, RunError> {
    let sh = cfg.shaping_section();
    let base = Constellation::square_qam(sh.order)
        .map_err(|e| RunError::Scenario(format!("shaping: {e}")))?;
    if (sh.entropy_bits - (sh.order as f64).log2()).abs() < 1e-12 {
        return Ok(ShapedConstellation::uniform(&base));
    }
    ShapedConstellation::with_entropy(&base, sh.entropy_bits)
        .map_err(|e| RunError::Scenario(format!("shaping: {e}")))
}

fn rx_config(cfg: &ExperimentConfig, scheme: Scheme) -> RxChainConfig {
    let mimo_mode = if !cfg.rx.mimo_enabled {
        MimoMode::Off
    } else if scheme.subcarriers() == 1 {
        MimoMode::Sc4x4
    } else {
        MimoMode::Mc8x8
    };
    RxChainConfig {
        lms_step: cfg.rx.lms_step,
        pol_taps: cfg.rx.pol_taps,
        mimo_taps: cfg.rx.mimo_taps,
        mimo_mode,
        cpe_smooth_pilots: cfg.rx.cpe_smooth_pilots,
        freq_search_hz: 1e9,
    }
}

fn ssfm_config(cfg: &ExperimentConfig) -> SsfmConfig {
    SsfmConfig {
        max_nl_phase_rad: cfg.ssfm.max_nl_phase_rad,
        min_steps_per_span: cfg.ssfm.min_steps_per_span,
        ..Default::default()
    }
}

fn fiber_span(cfg: &ExperimentConfig) -> FiberSpan {
    let link = cfg.link_section();
    let f0 = cfg.wdm.as_ref().map(|w| w.center_freq_hz).unwrap_or(193.775e12);
    FiberSpan {
        length_km: link.span_km,
        alpha_db_per_km: cfg.fiber.alpha_db_per_km,
        dispersion_ps_nm_km: cfg.fiber.dispersion_ps_nm_km,
        gamma_per_w_km: cfg.fiber.gamma_per_w_km,
        ref_freq_hz: f0,
    }
}

fn link_config(cfg: &ExperimentConfig) -> LinkConfig {
    let link = cfg.link_section();
    LinkConfig {
        spans: vec![fiber_span(cfg); link.n_spans],
        edfa_noise_figure_db: link.edfa_nf_db,
        ase_enabled: link.ase,
        loops: link.loops,
        scramble_per_loop: link.scramble_per_loop,
        snapshot_every_spans: link.snapshot_every_spans,
    }
}

struct BuiltBand {
    band: DualPolWaveform,
    cut: ChannelSignal,
    cut_freq_hz: f64,
    channel_fs_hz: f64,
    launch_mw_per_channel: f64,
}

fn build_band(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<BuiltBand, String> {
    let tx = cfg.tx_section();
    let wdm = cfg.wdm_section();
    let launch = cfg.launch_section();
    let shaped = shaped_for(cfg).map_err(|e| e.to_string())?;
    let m = scheme.subcarriers();
    let plan =
        SubcarrierPlan::new(m, tx.aggregate_baud_hz, tx.rolloff).map_err(|e| e.to_string())?;
    let fs_ch = tx.channel_sps as f64 * tx.aggregate_baud_hz;
    let per_sub_total = tx.frame_symbols / m;
    let n_payload = payload_for_frame_total(per_sub_total, tx.pilot_rate).ok_or(format!(
        "no payload count gives a {per_sub_total}-symbol frame at pilot rate {}",
        tx.pilot_rate
    ))?;
    let p_mw = dbm_to_mw(launch.power_dbm_per_channel);
    let mut channels: Vec<(DualPolWaveform, f64)> = Vec::with_capacity(wdm.n_channels);
    let cut_index = (wdm.n_channels - 1) / 2;
    let mut cut = None;
    for i in 0..wdm.n_channels {
        let ch_seed = derive_seed(seed, &[0x6368, i as u64]);
        let mut ch = build_channel(&shaped, &plan, n_payload, fs_ch, tx.pilot_rate, ch_seed)
            .map_err(|e| e.to_string())?;
        ch.waveform.set_average_power_w(p_mw * 1e-3);
        let f_ch = wdm.center_freq_hz
            + (i as f64 - (wdm.n_channels as f64 - 1.0) / 2.0) * wdm.slot_hz;
        ch.waveform.center_freq_hz = f_ch;
        if i == cut_index {
            cut = Some(ch.clone());
        }
        channels.push((ch.waveform, f_ch));
    }
    let cut = cut.expect("cut index always present");
    let cut_freq_hz = channels[cut_index].1;
    let band = wdm_mux(&channels, wdm.center_freq_hz, wdm.band_sample_rate_hz)
        .map_err(|e| e.to_string())?;
    Ok(BuiltBand { band, cut, cut_freq_hz, channel_fs_hz: fs_ch, launch_mw_per_channel: p_mw })
}

fn gmi_curve(cfg: &ExperimentConfig) -> Result<ScenarioResult, RunError> {
    use rayon::prelude::*;
    let shaped = shaped_for(cfg)?;
    let sh = cfg.shaping_section();
    let sweep = &cfg.sweep;
    let mut grid = Vec::new();
    let mut snr = sweep.snr_db_start;
    while snr <= sweep.snr_db_stop + 1e-9 {
        grid.push(snr);
        snr += sweep.snr_db_step;
    }
    let seeds: Vec<u64> =
        (0..grid.len()).map(|i| derive_seed(cfg.master_seed, &[0x676d69, i as u64])).collect();
    let rows: Vec<String> = grid
        .par_iter()
        .zip(&seeds)
        .map(|(&snr_db, &seed)| {
            let g = gmi(&shaped, db_to_lin(snr_db), sweep.gmi_samples, seed);
            let gap = gap_to_capacity(db_to_lin(snr_db), g);
            format!(
                "{},{},{},{},{},{}",
                fmt_f(snr_db),
                fmt_f(g),
                fmt_f(gap),
                sh.order,
                fmt_f(sh.entropy_bits),
                sweep.gmi_samples
            )
        })
        .collect();
    let plot = grid
        .iter()
        .zip(&rows)
        .map(|(&x, row)| {
            let g: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
            ("gmi".to_string(), x, g)
        })
        .collect();
    Ok(ScenarioResult {
        header: "snr_db,gmi_bits_per_2d,gap_to_capacity_bits,qam_order,entropy_bits,mc_samples"
            .to_string(),
        rows,
        errors: Vec::new(),
        point_seeds: grid
            .iter()
            .zip(&seeds)
            .map(|(&s, &seed)| (format!("snr_db={s}"), seed))
            .collect(),
        plot,
        plot_axes: ("snr_db".to_string(), "gmi_bits_per_2d".to_string()),
    })
}

fn backtoback(cfg: &ExperimentConfig) -> Result<ScenarioResult, RunError> {
    use rayon::prelude::*;
    let schemes = cfg.parse_schemes()?;
    let tx = cfg.tx_section();
    let sh = cfg.shaping_section();
    let imp = tx.impairments;
    let shaped = shaped_for(cfg)?;
    let jobs: Vec<(usize, Scheme, u64)> = schemes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, s, derive_seed(cfg.master_seed, &[0x623262, i as u64])))
        .collect();
    let results: Vec<Result<String, PointError>> = jobs
        .par_iter()
        .map(|&(_, scheme, seed)| {
            let run = || -> Result<String, String> {
                let m = scheme.subcarriers();
                let plan = SubcarrierPlan::new(m, tx.aggregate_baud_hz, tx.rolloff)
                    .map_err(|e| e.to_string())?;
                let fs_ch = tx.channel_sps as f64 * tx.aggregate_baud_hz;
                let n_payload = payload_for_frame_total(tx.frame_symbols / m, tx.pilot_rate)
                    .ok_or("frame size incompatible with pilot rate")?;
                let mut ch =
                    build_channel(&shaped, &plan, n_payload, fs_ch, tx.pilot_rate, seed)
                        .map_err(|e| e.to_string())?;
                ch.waveform.set_average_power_w(1e-3);
                let mut w = ch.waveform.clone();
                if imp.laser_linewidth_hz > 0.0 {
                    w = apply_phase_noise(
                        w,
                        imp.laser_linewidth_hz,
                        derive_seed(seed, &[0x7478]),
                    );
                }
                if imp.iq_skew_s != 0.0 {
                    w = apply_iq_skew(w, imp.iq_skew_s);
                }
                if imp.quant_bits > 0 {
                    w = apply_quantization(w, imp.quant_bits, imp.clip_ratio);
                }
                let report =
                    run_receiver(w, &ch, &LinkLinear::none(), None, &rx_config(cfg, scheme))
                        .map_err(|e| e.to_string())?;
                Ok(format!(
                    "{},{},{},{},{},{},{},{},{}",
                    scheme_label(scheme),
                    m,
                    fmt_f(sh.entropy_bits),
                    fmt_f(imp.laser_linewidth_hz),
                    fmt_f(imp.iq_skew_s),
                    imp.quant_bits,
                    fmt_f(imp.clip_ratio),
                    fmt_f(report.snr_db_mean),
                    report.n_symbols_used
                ))
            };
            run().map_err(|message| PointError {
                point: scheme_label(scheme),
                message,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(e),
        }
    }
    Ok(ScenarioResult {
        header: "scheme,m_subcarriers,entropy_bits,tx_linewidth_hz,iq_skew_s,quant_bits,clip_ratio,snr_db_mean,n_symbols"
            .to_string(),
        rows,
        errors,
        point_seeds: jobs.iter().map(|(_, s, seed)| (scheme_label(*s), *seed)).collect(),
        plot: Vec::new(),
        plot_axes: (String::new(), String::new()),
    })
}

fn anli_vs_distance(cfg: &ExperimentConfig) -> Result<ScenarioResult, RunError> {
    use rayon::prelude::*;
    let schemes = cfg.parse_schemes()?;
    let sh = cfg.shaping_section();
    let launch_dbm = cfg.launch_section().power_dbm_per_channel;
    let d = cfg.fiber.dispersion_ps_nm_km;
    let jobs: Vec<(usize, Scheme, u64)> = schemes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, s, derive_seed(cfg.master_seed, &[0x616e6c69, i as u64])))
        .collect();
    let per_scheme: Vec<Result<Vec<String>, PointError>> = jobs
        .par_iter()
        .map(|&(_, scheme, seed)| {
            let run = || -> Result<Vec<String>, String> {
                let built = build_band(cfg, scheme, seed)?;
                let snaps =
                    propagate_link(built.band, &link_config(cfg), &ssfm_config(cfg), seed)
                        .map_err(|e| e.to_string())?;
                let mut rows = Vec::new();
                for (dist_km, field) in &snaps {
                    let chan = extract_channel(field, built.cut_freq_hz, built.channel_fs_hz)
                        .map_err(|e| e.to_string())?;
                    let link = LinkLinear {
                        dispersion_ps_nm_km: d,
                        length_km: *dist_km,
                        f0_hz: built.cut_freq_hz,
                    };
                    let nsr =
                        ideal_receiver_nsr(&chan, &built.cut, &link).map_err(|e| e.to_string())?;
                    let sigma2_mw = nsr * built.launch_mw_per_channel;
                    let a = linkmodel::fit_anli(sigma2_mw, built.launch_mw_per_channel)
                        .map_err(|e| e.to_string())?;
                    rows.push(format!(
                        "{},{},{},{},{},{},{},{},{}",
                        fmt_f(*dist_km),
                        scheme_label(scheme),
                        scheme.subcarriers(),
                        fmt_f(sh.entropy_bits),
                        fmt_f(launch_dbm),
                        fmt_f(nsr),
                        fmt_f(sigma2_mw),
                        fmt_f(a),
                        fmt_f(lin_to_db(a))
                    ));
                }
                Ok(rows)
            };
            run().map_err(|message| PointError { point: scheme_label(scheme), message })
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut plot = Vec::new();
    for r in per_scheme {
        match r {
            Ok(group) => {
                for row in &group {
                    let mut it = row.split(',');
                    let x: f64 = it.next().unwrap().parse().unwrap();
                    let name = it.next().unwrap().to_string();
                    let y: f64 = row.split(',').nth(8).unwrap().parse().unwrap();
                    plot.push((name, x, y));
                }
                rows.extend(group);
            }
            Err(e) => errors.push(e),
        }
    }
    Ok(ScenarioResult {
        header: "distance_km,scheme,m_subcarriers,entropy_bits,launch_dbm_per_channel,nsr_linear,sigma_n2_mw,a_nli_per_mw2,a_nli_db"
            .to_string(),
        rows,
        errors,
        point_seeds: jobs.iter().map(|(_, s, seed)| (scheme_label(*s), *seed)).collect(),
        plot,
        plot_axes: ("distance_km".to_string(), "a_nli_db".to_string()),
    })
}

fn snr_vs_distance(cfg: &ExperimentConfig) -> Result<ScenarioResult, RunError> {
    use rayon::prelude::*;
    let schemes = cfg.parse_schemes()?;
    let sh = cfg.shaping_section();
    let launch_dbm = cfg.launch_section().power_dbm_per_channel;
    let d = cfg.fiber.dispersion_ps_nm_km;
    let linewidths = if cfg.sweep.lo_linewidths_hz.is_empty() {
        vec![0.0]
    } else {
        cfg.sweep.lo_linewidths_hz.clone()
    };
    let jobs: Vec<(usize, Scheme, u64)> = schemes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, s, derive_seed(cfg.master_seed, &[0x736e72, i as u64])))
        .collect();
    let per_scheme: Vec<Result<Vec<String>, PointError>> = jobs
        .par_iter()
        .map(|&(_, scheme, seed)| {
            let run = || -> Result<Vec<String>, String> {
                let built = build_band(cfg, scheme, seed)?;
                let snaps =
                    propagate_link(built.band, &link_config(cfg), &ssfm_config(cfg), seed)
                        .map_err(|e| e.to_string())?;
                let mut rows = Vec::new();
                for (li, &lw) in linewidths.iter().enumerate() {
                    for (dist_km, field) in &snaps {
                        let chan =
                            extract_channel(field, built.cut_freq_hz, built.channel_fs_hz)
                                .map_err(|e| e.to_string())?;
                        let link = LinkLinear {
                            dispersion_ps_nm_km: d,
                            length_km: *dist_km,
                            f0_hz: built.cut_freq_hz,
                        };
                        let lo = (lw > 0.0).then_some(LoEmulation {
                            linewidth_hz: lw,
                            seed: derive_seed(seed, &[0x6c6f, li as u64]),
                        });
                        let report =
                            run_receiver(chan, &built.cut, &link, lo, &rx_config(cfg, scheme))
                                .map_err(|e| e.to_string())?;
                        rows.push(format!(
                            "{},{},{},{},{},{},{},{}",
                            fmt_f(*dist_km),
                            scheme_label(scheme),
                            scheme.subcarriers(),
                            fmt_f(sh.entropy_bits),
                            fmt_f(launch_dbm),
                            fmt_f(lw),
                            fmt_f(report.snr_db_mean),
                            report.n_symbols_used
                        ));
                    }
                }
                Ok(rows)
            };
            run().map_err(|message| PointError { point: scheme_label(scheme), message })
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut plot = Vec::new();
    for r in per_scheme {
        match r {
            Ok(group) => {
                for row in &group {
                    let cols: Vec<&str> = row.split(',').collect();
                    let x: f64 = cols[0].parse().unwrap();
                    let y: f64 = cols[6].parse().unwrap();
                    plot.push((format!("{} lw={}", cols[1], cols[5]), x, y));
                }
                rows.extend(group);
            }
            Err(e) => errors.push(e),
        }
    }
    Ok(ScenarioResult {
        header: "distance_km,scheme,m_subcarriers,entropy_bits,launch_dbm_per_channel,lo_linewidth_hz,snr_db_mean,n_symbols"
            .to_string(),
        rows,
        errors,
        point_seeds: jobs.iter().map(|(_, s, seed)| (scheme_label(*s), *seed)).collect(),
        plot,
        plot_axes: ("distance_km".to_string(), "snr_db_mean".to_string()),
    })
}

fn read_anli_table(path: &Path, scheme: Scheme) -> Result<Vec<(f64, f64)>, RunError> {
    let mut rdr = csv::Reader::from_path(path).map_err(RunError::Csv)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (di, si, ai) = match (col("distance_km"), col("scheme"), col("a_nli_per_mw2")) {
        (Some(d), Some(s), Some(a)) => (d, s, a),
        _ => {
            return Err(RunError::Scenario(format!(
                "{}: need distance_km, scheme, a_nli_per_mw2 columns",
                path.display()
            )))
        }
    };
    let mut table = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec[si].parse::<Scheme>().map(|s| s == scheme).unwrap_or(false) {
            let d: f64 = rec[di]
                .parse()
                .map_err(|_| RunError::Scenario(format!("bad distance_km in {}", path.display())))?;
            let a: f64 = rec[ai]
                .parse()
                .map_err(|_| RunError::Scenario(format!("bad a_nli in {}", path.display())))?;
            table.push((d, a));
        }
    }
    table.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Ok(table)
}

fn model_curve(cfg: &ExperimentConfig, config_path: &Path) -> Result<ScenarioResult, RunError> {
    let schemes = cfg.parse_schemes()?;
    let tx = cfg.tx_section();
    let link = cfg.link_section();
    let model = cfg.model_section();
    let f0 = cfg.wdm.as_ref().map(|w| w.center_freq_hz).unwrap_or(193.775e12);
    // Dual-polarization ASE over the aggregate symbol-rate bandwidth,
    // accumulated per span.
    let n0_per_span_mw = 2.0
        * linkmodel::ase_variance_w(
            link.edfa_nf_db,
            cfg.fiber.alpha_db_per_km * link.span_km,
            1,
            f0,
            tx.aggregate_baud_hz,
        )
        * 1e3;
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    for &scheme in &schemes {
        let table = match &model.anli_csv {
            Some(rel) => {
                let base = config_path.parent().unwrap_or(Path::new("."));
                read_anli_table(&base.join(rel), scheme)?
            }
            None => model.anli_table.clone(),
        };
        if table.is_empty() {
            return Err(RunError::Scenario(format!(
                "no nonlinear-coefficient entries for scheme {scheme}"
            )));
        }
        let eta = if scheme == Scheme::Sc { 1.0 } else { db_to_lin(model.eta_db) };
        let base = SnrModelParams {
            eta,
            s0: db_to_lin(model.s0_db),
            f0_hz: f0,
            d_s_per_m2: dispersion_si(cfg.fiber.dispersion_ps_nm_km),
            r_baud: tx.aggregate_baud_hz,
            l_m: 0.0,
            delta_theta_hz: model.delta_theta_hz,
            zeta: model.zeta,
            m: scheme.subcarriers(),
            a_nli_per_mw2: 0.0,
            n0_mw: 0.0,
        };
        let points = linkmodel::snr_vs_distance_curve(
            &base,
            link.span_km,
            n0_per_span_mw,
            &table,
            &model.distances_km,
        )
        .map_err(|e| RunError::Scenario(e.to_string()))?;
        for p in &points {
            let snr_db = lin_to_db(p.breakdown.snr);
            rows.push(format!(
                "{},{},{},{},{},{},{},{},{}",
                fmt_f(p.distance_km),
                scheme_label(scheme),
                scheme.subcarriers(),
                fmt_f(p.a_nli_per_mw2),
                fmt_f(p.n0_mw),
                fmt_f(p.breakdown.inv_ceiling),
                fmt_f(p.breakdown.inv_eepn),
                fmt_f(p.breakdown.inv_nli),
                fmt_f(snr_db)
            ));
            plot.push((scheme_label(scheme), p.distance_km, snr_db));
        }
    }
    Ok(ScenarioResult {
        header: "distance_km,scheme,m_subcarriers,a_nli_per_mw2,n0_mw,inv_snr_ceiling,inv_snr_eepn,inv_snr_nli,snr_model_db"
            .to_string(),
        rows,
        errors: Vec::new(),
        point_seeds: Vec::new(),
        plot,
        plot_axes: ("distance_km".to_string(), "snr_model_db".to_string()),
    })
}
