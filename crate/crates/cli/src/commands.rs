use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;

use tpgen::checkpoint::{load_checkpoint, save_checkpoint_with_config};
use tpgen::config::{RunConfig, SampleMode};
use tpgen::data::{load_idx_images, load_mnist, split, split_with_rest};
use tpgen::eval::{parzen_fit, parzen_log_likelihood, parzen_select_bandwidth, ParzenResult};
use tpgen::generation::{
    encode_sample_grid, generate_batch, grid_shape, read_raw_samples, sample_directed_batch,
    sample_joint_dae_chain_batch, write_raw_samples,
};
use tpgen::stdp::{export_stdp_curve, simulate_stdp};
use tpgen::training::{fit_top_prior, train_with};
use tpgen::{infer_batch, inpaint_batch, InferenceConfig, Mnist, Network, RandomSource};

use crate::{Command, Common};

/// Per-command streams under the run seed.
const STREAM_GENERATE: u64 = 1;
const STREAM_INPAINT: u64 = 2;
const STREAM_STDP: u64 = 3;
const STREAM_TRACE: u64 = 4;

/// Rows of the in-painting triptych.
const TRIPTYCH_ROWS: usize = 10;

pub fn run(common: &Common, command: &Command) -> Result<()> {
    let cfg = effective_config(common)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    write(&common.out.join("effective_config.txt"), cfg.dump())?;

    let out = common.out.as_path();
    match command {
        Command::Train => train(&cfg, out),
        Command::Generate { checkpoint, count, mode } => {
            let mode = match mode {
                Some(m) => m.parse()?,
                None => cfg.sample_mode,
            };
            generate(&cfg, checkpoint, count.unwrap_or(cfg.sample_count), mode, out)
        }
        Command::Inpaint { checkpoint } => inpaint(&cfg, checkpoint, out),
        Command::EvalParzen { samples, sigma } => eval_parzen(&cfg, samples, *sigma, out),
        Command::StdpCurve => stdp_curve(&cfg, out),
        Command::InferTrace { checkpoint } => infer_trace(&cfg, checkpoint, out),
    }
}

/// Defaults, then the config file, then `--set`, then the dedicated flags.
pub fn effective_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
        cfg.set(key, value)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(threads) = common.threads {
        cfg.set("threads", &threads.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

struct Splits {
    train: Mnist,
    valid: Mnist,
    test: Mnist,
}

/// Train/validation split of the training file. The test set is the separate
/// test file when configured, otherwise whatever the split leaves over.
fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let labels = (!cfg.train_labels.is_empty()).then(|| Path::new(&cfg.train_labels));
    let data: Mnist = load_mnist(&cfg.train_images, labels)?;
    if cfg.test_images.is_empty() {
        let (train, valid, test) = split_with_rest(&data, cfg.train_n, cfg.valid_n, cfg.seed)?;
        Ok(Splits { train, valid, test })
    } else {
        let (train, valid) = split(&data, cfg.train_n, cfg.valid_n, cfg.seed)?;
        let test = load_idx_images(&cfg.test_images)?;
        Ok(Splits { train, valid, test })
    }
}

fn test_images(cfg: &RunConfig, limit: usize) -> Result<Mnist> {
    let test = load_splits(cfg)?.test;
    if test.is_empty() {
        bail!("the test set is empty; set data.test_images or leave examples outside data.train_n + data.valid_n");
    }
    Ok(test.head(limit.min(test.len())))
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let splits = load_splits(cfg)?;
    let mut params = Network::init(&cfg.architecture, cfg.seed)?;
    // The worker count never changes results, so it stays out of the
    // checkpoint to keep it byte-identical across `--threads`.
    let dump = RunConfig { threads: 0, ..cfg.clone() }.dump();
    let every = cfg.checkpoint_every;
    let metrics = train_with(splits.train.images.view(), &mut params, &cfg.train, |epoch, params| {
        println!(
            "epoch {:>3}  joint_ll {:>12.3}  {}",
            epoch.epoch + 1,
            epoch.joint_ll,
            epoch
                .layers
                .iter()
                .enumerate()
                .map(|(k, l)| format!("L{} g {:.3} f {:.3}", k + 1, l.g_loss, l.f_loss))
                .collect::<Vec<_>>()
                .join("  ")
        );
        if every > 0 && (epoch.epoch + 1) % every == 0 {
            let path = out.join(format!("epoch_{:04}.ckpt", epoch.epoch + 1));
            save_checkpoint_with_config(params, Some(&dump), &path)?;
        }
        Ok(())
    })?;
    fit_top_prior(splits.train.images.view(), &mut params, &cfg.train)?;
    save_checkpoint_with_config(&params, Some(&dump), out.join("model.ckpt"))?;
    write(&out.join("metrics.csv"), metrics.to_csv())?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

fn draw(cfg: &RunConfig, params: &Network, count: usize, mode: SampleMode) -> Result<Array2<f64>> {
    let rng = RandomSource::new(cfg.seed).substream(STREAM_GENERATE);
    Ok(match mode {
        SampleMode::Directed => sample_directed_batch(params, count, &rng)?,
        SampleMode::Refine => generate_batch(params, count, &cfg.generate, &rng)?,
        SampleMode::Chain => sample_joint_dae_chain_batch(params, count, cfg.generate.chain_steps, &cfg.generate, &rng)?,
    })
}

fn image_shape(params: &Network) -> (usize, usize) {
    let d = params.visible_dim();
    let side = (d as f64).sqrt().round() as usize;
    if side * side == d {
        (side, side)
    } else {
        (1, d)
    }
}

fn generate(cfg: &RunConfig, checkpoint: &Path, count: usize, mode: SampleMode, out: &Path) -> Result<()> {
    let params: Network = load_checkpoint(checkpoint)?;
    let samples = draw(cfg, &params, count, mode)?;
    write_raw_samples(samples.view(), out.join("samples.bin"))?;
    if count > 0 {
        let (rows, cols) = grid_shape(count);
        write(
            &out.join("samples.pgm"),
            encode_sample_grid(samples.view(), rows, cols, image_shape(&params))?,
        )?;
    }
    println!("wrote {count} {} samples to {}", mode.name(), out.display());
    Ok(())
}

fn inpaint(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let params: Network = load_checkpoint(checkpoint)?;
    let test = test_images(cfg, cfg.inpaint_count)?;
    let rng = RandomSource::new(cfg.seed).substream(STREAM_INPAINT);
    let result = inpaint_batch(
        &params,
        test.images.view(),
        cfg.inpaint_missing_fraction,
        cfg.inpaint_iterations,
        &cfg.inference,
        &rng,
    )?;

    let mut csv = String::from("iteration,mean_mse,improved\n");
    for (t, mean) in result.mean_mse_curve().iter().enumerate() {
        let improved = result
            .missing_mse
            .rows()
            .into_iter()
            .filter(|r| r[t] < r[0])
            .count();
        csv.push_str(&format!("{t},{mean:e},{improved}\n"));
    }
    write(&out.join("inpaint_mse.csv"), csv)?;

    let rows = TRIPTYCH_ROWS.min(test.len());
    if rows > 0 {
        let mut tiles = Array2::zeros((3 * rows, test.dim()));
        for i in 0..rows {
            tiles.row_mut(3 * i).assign(&test.images.row(i));
            tiles.row_mut(3 * i + 1).assign(&result.corrupted.row(i));
            tiles.row_mut(3 * i + 2).assign(&result.filled.row(i));
        }
        write(
            &out.join("inpaint.pgm"),
            encode_sample_grid(tiles.view(), rows, 3, image_shape(&params))?,
        )?;
    }
    println!(
        "missing-pixel MSE decreased on {}/{} images",
        result.improved_count(),
        test.len()
    );
    Ok(())
}

fn eval_parzen(cfg: &RunConfig, samples_path: &Path, sigma: Option<f64>, out: &Path) -> Result<()> {
    let samples: Array2<f64> = read_raw_samples(samples_path)?;
    if samples.nrows() == 0 {
        bail!("{} holds no samples", samples_path.display());
    }
    let sigma = match sigma {
        Some(s) => s,
        None if cfg.parzen_select => {
            let valid = load_splits(cfg)?.valid;
            if valid.is_empty() {
                bail!("bandwidth selection needs a validation set (data.valid_n > 0)");
            }
            parzen_select_bandwidth(samples.view(), valid.images.view(), &cfg.parzen_candidates)?
        }
        None => cfg.parzen_sigma,
    };
    let test = test_images(cfg, cfg.parzen_max_test)?;
    let model = parzen_fit(samples.view(), sigma)?;
    let result = parzen_log_likelihood(&model, test.images.view())?;
    write(
        &out.join("parzen.csv"),
        format!("{}\n{}\n", ParzenResult::CSV_HEADER, result.csv_row()),
    )?;
    println!(
        "Parzen LL {:.2} ± {:.2} (sigma {sigma}, {} centers, {} test images)",
        result.mean_ll,
        result.std_err,
        result.n_centers,
        test.len()
    );
    Ok(())
}

fn stdp_curve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let trace = simulate_stdp(&cfg.stdp, &RandomSource::new(cfg.seed).substream(STREAM_STDP))?;
    export_stdp_curve(&trace, out.join("stdp.csv"))?;
    println!("{} points, {} drift rates outside the window", trace.points.len(), trace.dropped.len());
    Ok(())
}

fn infer_trace(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let params: Network = load_checkpoint(checkpoint)?;
    let test = test_images(cfg, cfg.trace_examples)?;
    let inference = InferenceConfig {
        steps: cfg.trace_steps,
        record_trace: true,
        ..cfg.inference.clone()
    };
    let rng = RandomSource::new(cfg.seed).substream(STREAM_TRACE);
    let (_, trace) = infer_batch(&params, test.images.view(), &inference, &rng)?;
    let trace = trace.context("inference trace missing")?;
    let mean = trace.mean_curve();
    let mut csv = String::from("step,joint_ll\n");
    for (step, v) in mean.iter().enumerate() {
        csv.push_str(&format!("{step},{v:e}\n"));
    }
    write(&out.join("trace.csv"), csv)?;
    if let (Some(first), Some(last)) = (mean.first(), mean.last()) {
        println!("mean joint log-likelihood {first:.3} -> {last:.3} over {} images", test.len());
    }
    Ok(())
}
