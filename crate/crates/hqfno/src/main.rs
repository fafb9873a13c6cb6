//! Command-line front end: data generation, training, evaluation, the
//! quantum-channel-width sweep, parameter accounting, circuit diagnostics,
//! the noisy-shot study, and SVG plot emission.

use anyhow::Context;
use clap::{Parser, Subcommand};
use hqfno::checkpoint::{load_checkpoint, save_checkpoint};
use hqfno::config::{load_config, write_manifest, LoadedConfig, RunManifest};
use hqfno::diag::{estimate_fim, fourier_spectrum, MixerAnsatz, ReuploadingCircuit};
use hqfno::error::Error;
use hqfno::metrics::{evaluate_model, fold_aggregate, EvalOutput};
use hqfno::mixer::{RobustScaler, VqcMixer};
use hqfno::model::{count_params, HybridFno, MixerKind, ModelConfig};
use hqfno::noise::{circuit_budget, shot_sweep, NoiseModel, NoiseProfile};
use hqfno::num::Cplx;
use hqfno::plot::{heat_map, line_chart, ChartOptions, Series};
use hqfno::spectral::MixerBranch;
use hqfno::synthdata::{generate_dataset, load_index, load_split, Split};
use hqfno::train::train_run;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "hqfno", version, about = "Hybrid quantum-classical Fourier neural operator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset directory.
    GenData {
        #[arg(short, long)]
        config: PathBuf,
        /// Override the dataset directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 0)]
        fold: u64,
    },
    /// Train and evaluate across quantum-channel widths with seed folds.
    SweepCq {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mixer realization for c_q > 0: vqc or bottleneck.
        #[arg(long, default_value = "vqc")]
        kind: String,
    },
    /// Exact parameter accounting for a list of quantum-channel widths.
    Params {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0usize, 3, 5, 8])]
        cq: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fisher-information spectrum of the mixer ansatz across depths.
    DiagFim {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_q: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3])]
        depths: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        theta_samples: usize,
        #[arg(long, default_value_t = 8)]
        data_samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fourier expressivity of a data-reuploading probe circuit.
    DiagFourier {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 3])]
        d_enc: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        draws: usize,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MSE-vs-shots study of the spectral mixer under a noise profile.
    NoiseShots {
        #[arg(short, long)]
        config: PathBuf,
        /// Take the mixer of the first Fourier layer from this checkpoint;
        /// otherwise a seeded fresh mixer is probed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Noise profile TOML; defaults to the built-in heron-like profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Disable gate and readout noise, leaving finite-shot sampling only.
        #[arg(long)]
        shot_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a CSV produced by the other subcommands to SVG.
    Plot {
        /// One of: loss, shots, sweep, window.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Value column for window maps.
        #[arg(long, default_value = "t_mae_kelvin")]
        column: String,
    },
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_))
        | Some(Error::Domain(_))
        | Some(Error::Shape(_))
        | Some(Error::State(_))
        | Some(Error::QubitIndex { .. }) => 2,
        Some(Error::Numeric(_)) | Some(Error::Internal(_)) => 4,
        Some(_) => 3,
        None => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("HQFNO_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out(loaded: &LoadedConfig, sub: &str, out: &Option<PathBuf>) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => out_root().join(&loaded.config.output_dir).join(sub),
    }
}

fn manifest_for(loaded: &LoadedConfig, command: &str, start: Instant) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        schema_version: loaded.config.schema_version,
        config_hash: loaded.hash.clone(),
        config_path: loaded.path.clone(),
        seed: loaded.config.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
    }
}

fn parse_split(name: &str) -> anyhow::Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::config(format!("unknown split {other}")).into()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            n_points,
        } => {
            let loaded = load_config(&config)?;
            let mut data = loaded.config.data.clone();
            if let Some(s) = seed {
                // Seed override applies to sampling only.
                return gen_data(&loaded, &data, out, s, n_points, start);
            }
            if let Some(n) = n_points {
                data.n_points = n;
            }
            gen_data(&loaded, &data, out, loaded.config.seed, n_points, start)
        }
        Command::Train {
            config,
            out,
            seed,
            steps,
        } => {
            let loaded = load_config(&config)?;
            let out_dir = resolve_out(&loaded, "train", &out);
            let mut tcfg = loaded.config.train.clone();
            if let Some(s) = seed {
                tcfg.seed = s;
            }
            if let Some(s) = steps {
                tcfg.steps = s;
            }
            let data_dir = PathBuf::from(&loaded.config.data.dir);
            let index = load_index(&data_dir).context("dataset missing; run gen-data first")?;
            let train = load_split(&data_dir, &index, Split::Train)?;
            let val = load_split(&data_dir, &index, Split::Val)?;
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
            let mut model = HybridFno::<f64>::new(loaded.config.model.clone(), &mut rng)?;
            let outcome = train_run(&mut model, &tcfg, &train, &val, &index.material, &out_dir)?;
            println!(
                "trained {} steps: loss {:?} -> {:?}; best val RelMAE(T~) {:?}",
                outcome.steps_run, outcome.initial_loss, outcome.final_loss, outcome.best_val_rel_mae
            );
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
            write_manifest(&out_dir, &manifest_for(&loaded, "train", start))?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            label,
            fold,
        } => {
            let bytes = std::fs::read(&checkpoint)?;
            let mut model = load_checkpoint::<f64>(&bytes)?;
            let index = load_index(&data)?;
            let samples = load_split(&data, &index, parse_split(&split)?)?;
            if samples.is_empty() {
                return Err(Error::data(format!("split {split} is empty")).into());
            }
            let eval = evaluate_model(&mut model, &samples, &index.material)?;
            let label = label.unwrap_or_else(|| model_label(&model.config));
            let out_dir = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(|p| p.join(format!("eval_{split}")))
                    .unwrap_or_else(|| PathBuf::from(format!("eval_{split}")))
            });
            std::fs::create_dir_all(&out_dir)?;
            write_metrics_csv(&out_dir.join("metrics.csv"), &label, fold, &eval)?;
            write_per_point_csv(&out_dir.join("per_point.csv"), &eval)?;
            for report in &eval.reports {
                println!(
                    "{}: mae {:.6e} rmse {:.6e} rel_mae {:.4}% rel_rmse {:.4}%{}",
                    report.field_name,
                    report.mae,
                    report.rmse,
                    100.0 * report.rel_mae,
                    100.0 * report.rel_rmse,
                    report
                        .iou_mean
                        .map(|m| format!(" iou {m:.5}"))
                        .unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::SweepCq { config, out, kind } => {
            let loaded = load_config(&config)?;
            let out_dir = resolve_out(&loaded, "sweep_cq", &out);
            sweep_cq(&loaded, &kind, &out_dir)?;
            write_manifest(&out_dir, &manifest_for(&loaded, "sweep-cq", start))?;
            Ok(())
        }
        Command::Params { config, cq, out } => {
            let loaded = load_config(&config)?;
            params_table(&loaded.config.model, &cq, out.as_deref())
        }
        Command::DiagFim {
            config,
            n_q,
            depths,
            theta_samples,
            data_samples,
            out,
        } => {
            let loaded = load_config(&config)?;
            let out_dir = resolve_out(&loaded, "diag_fim", &out);
            std::fs::create_dir_all(&out_dir)?;
            let mut csv = String::from("depth,index,eigenvalue\n");
            for &d in &depths {
                let model = MixerAnsatz::new(n_q, d)?;
                let report = estimate_fim(&model, theta_samples, data_samples, loaded.config.seed, d)?;
                println!(
                    "depth {d}: {} params, numerical rank {}, floored outcomes {}, zx: {}",
                    report.n_params, report.numerical_rank, report.n_floored, report.zx_redundancy
                );
                for (i, ev) in report.eigenvalues.iter().enumerate() {
                    csv.push_str(&format!("{d},{i},{ev:.12e}\n"));
                }
            }
            std::fs::write(out_dir.join("fim_eigenvalues.csv"), csv)?;
            write_manifest(&out_dir, &manifest_for(&loaded, "diag-fim", start))?;
            Ok(())
        }
        Command::DiagFourier {
            config,
            d_enc,
            draws,
            grid,
            out,
        } => {
            let loaded = load_config(&config)?;
            let out_dir = resolve_out(&loaded, "diag_fourier", &out);
            std::fs::create_dir_all(&out_dir)?;
            let mut csv = String::from("d_enc,frequency,re,im,magnitude\n");
            for &d in &d_enc {
                let circuit = ReuploadingCircuit::new(d)?;
                let report = fourier_spectrum(&circuit, draws, grid, loaded.config.seed)?;
                println!(
                    "d_enc {d}: {} of {} admissible lines nonzero, out-of-band max {:.3e}",
                    report.nonzero_count, report.admissible_count, report.max_out_of_band
                );
                for (w, c) in report.frequencies.iter().zip(&report.coefficients) {
                    csv.push_str(&format!(
                        "{d},{w},{:.12e},{:.12e},{:.12e}\n",
                        c.re,
                        c.im,
                        c.norm()
                    ));
                }
            }
            std::fs::write(out_dir.join("fourier_spectrum.csv"), csv)?;
            write_manifest(&out_dir, &manifest_for(&loaded, "diag-fourier", start))?;
            Ok(())
        }
        Command::NoiseShots {
            config,
            checkpoint,
            profile,
            shot_only,
            out,
        } => {
            let loaded = load_config(&config)?;
            let out_dir = resolve_out(&loaded, "noise_shots", &out);
            noise_shots(&loaded, checkpoint.as_deref(), profile.as_deref(), shot_only, &out_dir)?;
            write_manifest(&out_dir, &manifest_for(&loaded, "noise-shots", start))?;
            Ok(())
        }
        Command::Plot {
            kind,
            input,
            output,
            column,
        } => plot_command(&kind, &input, &output, &column),
    }
}

fn gen_data(
    loaded: &LoadedConfig,
    data: &hqfno::config::DataConfig,
    out: Option<PathBuf>,
    seed: u64,
    n_points: Option<usize>,
    start: Instant,
) -> anyhow::Result<()> {
    let dir = out.unwrap_or_else(|| PathBuf::from(&data.dir));
    let index = generate_dataset(
        &dir,
        n_points.unwrap_or(data.n_points),
        data.h_range,
        data.p_range,
        &data.grid,
        &data.material,
        &data.synth,
        data.val_fraction,
        data.test_fraction,
        seed,
    )?;
    let by_split = |s: Split| index.samples.iter().filter(|e| e.split == s).count();
    println!(
        "dataset at {}: {} samples (train {}, val {}, test {}), {} rejected",
        dir.display(),
        index.samples.len(),
        by_split(Split::Train),
        by_split(Split::Val),
        by_split(Split::Test),
        index.n_rejected
    );
    write_manifest(&dir, &manifest_for(loaded, "gen-data", start))?;
    Ok(())
}

fn model_label(config: &ModelConfig) -> String {
    match config.mixer_kind {
        MixerKind::None => "classical".to_string(),
        MixerKind::Vqc => format!("vqc_cq{}", config.c_q),
        MixerKind::Bottleneck => format!("bottleneck_cq{}", config.c_q),
    }
}

fn write_metrics_csv(path: &Path, label: &str, fold: u64, eval: &EvalOutput) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "model,fold,field,metric,value")?;
    for report in &eval.reports {
        for (metric, value) in report.rows() {
            writeln!(f, "{label},{fold},{},{metric},{value:.12e}", report.field_name)?;
        }
    }
    Ok(())
}

fn write_per_point_csv(path: &Path, eval: &EvalOutput) -> anyhow::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "power,v_scan,h_star,t_mae_kelvin,t_rmse_kelvin,alpha_mae,alpha_iou,fl_mae,fl_iou"
    )?;
    for s in &eval.per_sample {
        writeln!(
            f,
            "{:.6},{:.6},{:.6},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            s.power, s.v_scan, s.h_star, s.t_mae_kelvin, s.t_rmse_kelvin, s.alpha_mae,
            s.alpha_iou, s.fl_mae, s.fl_iou
        )?;
    }
    Ok(())
}

fn sweep_cq(loaded: &LoadedConfig, kind: &str, out_dir: &Path) -> anyhow::Result<()> {
    let config = &loaded.config;
    let data_dir = PathBuf::from(&config.data.dir);
    let index = load_index(&data_dir).context("dataset missing; run gen-data first")?;
    let train = load_split(&data_dir, &index, Split::Train)?;
    let val = load_split(&data_dir, &index, Split::Val)?;
    let test = load_split(&data_dir, &index, Split::Test)?;
    let eval_split = if test.is_empty() { &val } else { &test };
    std::fs::create_dir_all(out_dir)?;

    let mixer_kind = match kind {
        "vqc" => MixerKind::Vqc,
        "bottleneck" => MixerKind::Bottleneck,
        other => return Err(Error::config(format!("unknown mixer kind {other}")).into()),
    };
    let mut folds_csv = String::from("model,c_q,fold,field,metric,value\n");
    let mut summary_csv = String::from(
        "c_q,params,t_rel_mae_mean,t_rel_mae_std,t_rel_rmse_mean,t_rel_rmse_std,fl_iou_mean,fl_iou_std\n",
    );
    for &c_q in &config.sweep.cq_values {
        let mut model_config = config.model.clone();
        model_config.c_q = c_q;
        model_config.mixer_kind = if c_q == 0 { MixerKind::None } else { mixer_kind };
        model_config.validate()?;
        let breakdown = count_params(&model_config)?;
        let label = model_label(&model_config);
        let mut rel_mae = Vec::new();
        let mut rel_rmse = Vec::new();
        let mut fl_iou = Vec::new();
        for fold in 0..config.sweep.folds {
            let seed = config.seed + fold as u64;
            let mut tcfg = config.train.clone();
            tcfg.seed = seed;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = HybridFno::<f64>::new(model_config.clone(), &mut rng)?;
            let fold_dir = out_dir.join(format!("{label}_fold{fold}"));
            train_run(&mut model, &tcfg, &train, &val, &index.material, &fold_dir)?;
            let eval = evaluate_model(&mut model, eval_split, &index.material)?;
            for report in &eval.reports {
                for (metric, value) in report.rows() {
                    folds_csv.push_str(&format!(
                        "{label},{c_q},{fold},{},{metric},{value:.12e}\n",
                        report.field_name
                    ));
                }
            }
            let t = eval.report("t_tilde").unwrap();
            rel_mae.push(t.rel_mae);
            rel_rmse.push(t.rel_rmse);
            fl_iou.push(eval.report("f_l").unwrap().iou_mean.unwrap_or(1.0));
        }
        let mae = fold_aggregate("t_rel_mae", &rel_mae)?;
        let rmse = fold_aggregate("t_rel_rmse", &rel_rmse)?;
        let iou = fold_aggregate("fl_iou", &fl_iou)?;
        summary_csv.push_str(&format!(
            "{c_q},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            breakdown.total, mae.mean, mae.std, rmse.mean, rmse.std, iou.mean, iou.std
        ));
        println!(
            "c_q {c_q} ({label}): {} params, RelMAE(T~) {:.3}% +/- {:.3}%, IoU(f_l) {:.4} +/- {:.4}",
            breakdown.total,
            100.0 * mae.mean,
            100.0 * mae.std,
            iou.mean,
            iou.std
        );
    }
    std::fs::write(out_dir.join("sweep_folds.csv"), folds_csv)?;
    std::fs::write(out_dir.join("sweep_summary.csv"), summary_csv)?;
    Ok(())
}

fn params_table(base: &ModelConfig, cq_values: &[usize], out: Option<&Path>) -> anyhow::Result<()> {
    let mut csv =
        String::from("c_q,mixer,spectral_per_layer,quantum_per_layer,pointwise,lifting,decoder,total,delta_spectral_quantum_vs_classical\n");
    let classical = {
        let mut c = base.clone();
        c.c_q = 0;
        c.mixer_kind = MixerKind::None;
        count_params(&c)?
    };
    let classical_sq = base.layers * (classical.spectral_per_layer + classical.quantum_per_layer);
    for &c_q in cq_values {
        let mut config = base.clone();
        config.c_q = c_q;
        config.mixer_kind = if c_q == 0 { MixerKind::None } else { MixerKind::Vqc };
        let b = count_params(&config)?;
        let sq = config.layers * (b.spectral_per_layer + b.quantum_per_layer);
        let delta = classical_sq as i64 - sq as i64;
        println!(
            "c_q {c_q:>2}: total {:>12}  spectral/layer {:>11}  mixer/layer {:>4}  delta vs classical {delta}",
            b.total, b.spectral_per_layer, b.quantum_per_layer
        );
        csv.push_str(&format!(
            "{c_q},vqc,{},{},{},{},{},{},{delta}\n",
            b.spectral_per_layer, b.quantum_per_layer, b.pointwise, b.lifting, b.decoder, b.total
        ));
    }
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn noise_shots(
    loaded: &LoadedConfig,
    checkpoint: Option<&Path>,
    profile: Option<&Path>,
    shot_only: bool,
    out_dir: &Path,
) -> anyhow::Result<()> {
    let config = &loaded.config;
    std::fs::create_dir_all(out_dir)?;
    // Mixer + scaler: from a checkpoint's first Fourier layer, or a fresh
    // seeded instance with a data-driven scaler initialization.
    let (mixer, scaler) = match checkpoint {
        Some(path) => {
            let model = load_checkpoint::<f64>(&std::fs::read(path)?)?;
            let layer = model
                .layers
                .into_iter()
                .next()
                .ok_or_else(|| Error::config("checkpoint has no layers"))?;
            match (layer.spectral.mixer, layer.spectral.scaler) {
                (Some(MixerBranch::Vqc(m)), Some(s)) => (m, s),
                _ => {
                    return Err(
                        Error::config("checkpoint does not carry a VQC mixer").into()
                    )
                }
            }
        }
        None => {
            let c_q = if config.model.c_q > 0 { config.model.c_q } else { 5 };
            let n_q = config.model.n_q.unwrap_or(c_q);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mixer = VqcMixer::<f64>::new(c_q, n_q, config.model.circuit_depth, &mut rng)?;
            let mut scaler = RobustScaler::<f64>::new(2 * c_q);
            let batch = ndarray::Array2::from_shape_fn((64, 2 * c_q), |_| {
                rng.gen_range(-1.0..1.0)
            });
            scaler.update(batch.view())?;
            (mixer, scaler)
        }
    };
    let noise = if shot_only {
        NoiseModel::shot_only(mixer.n_q)
    } else {
        // A built-in profile name or a path to a profile TOML.
        let prof = match profile {
            Some(p) => match p.to_str().and_then(NoiseProfile::builtin) {
                Some(builtin) => builtin,
                None => NoiseProfile::from_toml(&std::fs::read_to_string(p)?)?,
            },
            None => NoiseProfile::light_backend(),
        };
        println!("noise profile: {}", prof.name);
        prof.build(mixer.n_q)
    };
    // Fixed representative retained-mode input.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let coeffs: Vec<Cplx<f64>> = (0..mixer.c_q)
        .map(|_| Cplx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let result = shot_sweep(
        &mixer,
        &scaler,
        &coeffs,
        &noise,
        &config.noise.shots_grid,
        config.noise.n_repeats,
        config.seed,
    )?;
    let mut raw_csv = String::from("shots,repeat,mse\n");
    for (shots, rep, mse) in &result.raw {
        raw_csv.push_str(&format!("{shots},{rep},{mse:.12e}\n"));
    }
    std::fs::write(out_dir.join("shots_study.csv"), raw_csv)?;
    let mut summary = String::from("shots,mse_mean,mse_std\n");
    for ((s, m), sd) in result
        .shots_grid
        .iter()
        .zip(&result.mse_mean)
        .zip(&result.mse_std)
    {
        summary.push_str(&format!("{s},{m:.12e},{sd:.12e}\n"));
        println!("shots {s:>6}: mse {m:.6e} +/- {sd:.6e}");
    }
    std::fs::write(out_dir.join("shots_summary.csv"), summary)?;
    let budget = circuit_budget(&config.model, config.data.grid.dims)?;
    println!(
        "circuit budget: {budget} mixer evaluations per forward pass at the configured grid"
    );
    Ok(())
}

fn read_csv(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty CSV"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok((header, rows))
}

fn column_index(header: &[String], name: &str) -> anyhow::Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::data(format!("CSV lacks column {name}")).into())
}

fn parse_f64(s: &str) -> anyhow::Result<f64> {
    s.parse::<f64>()
        .map_err(|e| Error::data(format!("bad number {s}: {e}")).into())
}

fn plot_command(kind: &str, input: &Path, output: &Path, column: &str) -> anyhow::Result<()> {
    let (header, rows) = read_csv(input)?;
    let svg = match kind {
        "loss" => {
            let step = column_index(&header, "step")?;
            let mut series = Vec::new();
            for name in ["loss_t", "loss_alpha", "total_loss"] {
                let idx = column_index(&header, name)?;
                let points = rows
                    .iter()
                    .map(|r| Ok((parse_f64(&r[step])?, parse_f64(&r[idx])?)))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                series.push(Series {
                    label: name.to_string(),
                    points,
                    bars: None,
                });
            }
            line_chart(
                &series,
                &ChartOptions {
                    title: "Training loss".into(),
                    x_label: "step".into(),
                    y_label: "L1 loss".into(),
                    log_x: false,
                    log_y: true,
                },
            )?
        }
        "shots" => {
            let s = column_index(&header, "shots")?;
            let m = column_index(&header, "mse_mean")?;
            let sd = column_index(&header, "mse_std")?;
            let points = rows
                .iter()
                .map(|r| Ok((parse_f64(&r[s])?, parse_f64(&r[m])?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let bars = rows
                .iter()
                .map(|r| parse_f64(&r[sd]))
                .collect::<anyhow::Result<Vec<_>>>()?;
            line_chart(
                &[Series {
                    label: "mse".into(),
                    points,
                    bars: Some(bars),
                }],
                &ChartOptions {
                    title: "Mixer MSE vs shots".into(),
                    x_label: "shots".into(),
                    y_label: "MSE".into(),
                    log_x: true,
                    log_y: true,
                },
            )?
        }
        "sweep" => {
            let cq = column_index(&header, "c_q")?;
            let m = column_index(&header, "t_rel_mae_mean")?;
            let sd = column_index(&header, "t_rel_mae_std")?;
            let points = rows
                .iter()
                .map(|r| Ok((parse_f64(&r[cq])?, parse_f64(&r[m])?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let bars = rows
                .iter()
                .map(|r| parse_f64(&r[sd]))
                .collect::<anyhow::Result<Vec<_>>>()?;
            line_chart(
                &[Series {
                    label: "RelMAE(T~)".into(),
                    points,
                    bars: Some(bars),
                }],
                &ChartOptions {
                    title: "Quantum-channel-width trade-off".into(),
                    x_label: "c_q".into(),
                    y_label: "relative MAE".into(),
                    log_x: false,
                    log_y: false,
                },
            )?
        }
        "window" => {
            let p = column_index(&header, "power")?;
            let v = column_index(&header, "v_scan")?;
            let val = column_index(&header, column)?;
            let points = rows
                .iter()
                .map(|r| Ok((parse_f64(&r[p])?, parse_f64(&r[v])?, parse_f64(&r[val])?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            heat_map(
                &points,
                &ChartOptions {
                    title: format!("Process window: {column}"),
                    x_label: "power [W]".into(),
                    y_label: "scan speed [m/s]".into(),
                    log_x: false,
                    log_y: false,
                },
            )?
        }
        other => return Err(Error::config(format!("unknown plot kind {other}")).into()),
    };
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(output, svg)?;
    println!("wrote {}", output.display());
    Ok(())
}

// Used by integration tests to keep checkpoint handling in one place.
#[allow(dead_code)]
fn _reexport_guard(model: &HybridFno<f64>) -> anyhow::Result<Vec<u8>> {
    Ok(save_checkpoint(model)?)
}
