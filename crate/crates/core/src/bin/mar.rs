//! Command-line front end: data generation, classical baselines, training,
//! inference and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use mar_core::geometry::toy_geometry;
use mar_core::image::{Image, Unit};
use mar_core::io;
use mar_core::mar::{li_complete, metal_trace, nmar_complete, segment_metal, NmarConfig, METAL_THRESHOLD_HU};
use mar_core::nn::{Model, Variant};
use mar_core::physics::phantom::{
    mask_from_spec, mask_spec, random_body_phantom, shepp_logan, PhantomParams, MASK_BANK_SIZE,
};
use mar_core::physics::{simulate_case, SimConfig};
use mar_core::pipeline::panel::write_image_png;
use mar_core::pipeline::{
    correct_image, correct_scan, evaluate, generate_dataset, load_cases, robustness_sweep, sweep_means, train,
    DatasetConfig, EpochLog, EvalOptions, Manifest, Method, Models, Reference, ScanCorrection, Split, TrainConfig,
    Window,
};
use mar_core::projector::Projector;
use mar_core::rng::case_rng;
use mar_core::{MarError, Result, ScanGeometry};

#[derive(Parser)]
#[command(name = "mar", version, about = "Metal artifact reduction for fan-beam CT")]
struct Cli {
    /// JSON training/data configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and held-out test sets
    GenData {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Simulate one metal-corrupted scan
    Simulate {
        /// `body` (random body slice) or `shepp` (Shepp-Logan)
        #[arg(long, default_value = "body")]
        phantom: String,
        /// Implant layout from the mask bank
        #[arg(long, default_value_t = 0)]
        mask_id: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Filtered backprojection of a sinogram
    Recon {
        /// Sinogram base path (without extension)
        #[arg(long)]
        sino: PathBuf,
    },
    /// Linear-interpolation correction of a sinogram
    MarLi {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, default_value_t = METAL_THRESHOLD_HU)]
        threshold: f64,
    },
    /// Normalized metal artifact reduction of a sinogram
    MarNmar {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long, default_value_t = METAL_THRESHOLD_HU)]
        threshold: f64,
    },
    /// Train the joint model on a generated dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// full, no_prior, no_residual or metal_image_only
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Correct a scan with a trained model
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metal-corrupted sinogram base path
        #[arg(long, conflicts_with = "image")]
        sino: Option<PathBuf>,
        /// Image base path (HU); projected with the model geometry first
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = METAL_THRESHOLD_HU)]
        threshold: f64,
    },
    /// Evaluate methods on the held-out test set
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoints of trained models
        #[arg(long, num_args = 0..)]
        checkpoint: Vec<PathBuf>,
        /// Comma-separated methods: uncorrected, li, nmar, ours, no_prior, no_residual, metal_image_only
        #[arg(long, default_value = "li,nmar,ours")]
        methods: String,
        /// Number of cases with PNG panels
        #[arg(long, default_value_t = 4)]
        panels: usize,
        /// Score against the metal-free `reconstruction` or the `phantom`
        #[arg(long, default_value = "reconstruction")]
        reference: Reference,
    },
    /// Train the ablation variants and evaluate them with the full model
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Correct test cases with dilated and eroded metal masks
    SweepMask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated radii; negative values erode
        #[arg(long, default_value = "-2,-1,0,1,2", allow_hyphen_values = true)]
        radii: String,
        /// Number of test cases to use (0: all)
        #[arg(long, default_value_t = 0)]
        cases: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.data_seed = s;
    }
    Ok(cfg)
}

fn print_epoch(e: &EpochLog) {
    let train = e
        .train
        .map(|t| {
            format!(
                "train total {:.5} (prior {:.5} sino {:.5} fbp {:.5})",
                t.total, t.prior, t.sino, t.fbp
            )
        })
        .unwrap_or_else(|| "untrained".into());
    println!(
        "epoch {:>4} step {:>6} {train} | validation total {:.5} (prior {:.5} sino {:.5} fbp {:.5}) [{:.0} s]",
        e.epoch, e.step, e.validation.total, e.validation.prior, e.validation.sino, e.validation.fbp, e.seconds
    );
}

/// Sinogram with the geometry recorded in its sidecar, or the toy geometry
/// matching its shape.
fn read_scan(base: &Path) -> Result<(mar_core::Sinogram, ScanGeometry)> {
    let (_, meta) = io::read_raw(base)?;
    let s = io::read_sinogram(base)?;
    let geom = match meta.geometry {
        Some(g) => g,
        None => {
            let n = (1..=2048)
                .find(|&n| toy_geometry(n).map(|g| g.sino_shape() == s.shape()).unwrap_or(false))
                .ok_or_else(|| {
                    MarError::Data(format!(
                        "{}: no geometry in the sidecar and no toy geometry matches",
                        base.display()
                    ))
                })?;
            toy_geometry(n)?
        }
    };
    s.expect_geometry(&geom)?;
    Ok((s, geom))
}

fn write_outputs(dir: &Path, name: &str, x: &Image, geom: &ScanGeometry) -> Result<()> {
    io::write_image(&dir.join(name), x, Some(geom))?;
    write_image_png(&dir.join(format!("{name}.png")), x, Window::default())
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone();
    match &cli.command {
        Command::GenData {
            n_train,
            n_test,
            image_size,
        } => {
            let cfg = load_config(&cli)?;
            let data = DatasetConfig {
                image_size: image_size.unwrap_or(cfg.image_size),
                n_train: n_train.unwrap_or(cfg.n_train),
                n_test: n_test.unwrap_or(cfg.n_test),
                seed: cfg.data_seed,
                sim: SimConfig::default(),
                phantom: PhantomParams::default(),
            };
            let m = generate_dataset(&data, &out)?;
            println!(
                "wrote {} training and {} test cases to {}",
                m.entries(Split::Train).count(),
                m.entries(Split::Test).count(),
                out.display()
            );
        }
        Command::Simulate {
            phantom,
            mask_id,
            image_size,
        } => {
            if *mask_id >= MASK_BANK_SIZE {
                return Err(MarError::Config(format!("mask id must be below {MASK_BANK_SIZE}")));
            }
            let seed = cli.seed.unwrap_or(1);
            let geom = toy_geometry(*image_size)?;
            let projector = Projector::new(&geom);
            let x = match phantom.as_str() {
                "body" => random_body_phantom(geom.grid, &mut case_rng(seed, 0), &PhantomParams::default()),
                "shepp" => shepp_logan(geom.grid, 2.0 * mar_core::image::MU_WATER, 0.5).to_hu(),
                other => return Err(MarError::Config(format!("unknown phantom '{other}'"))),
            };
            let mask = mask_from_spec(geom.grid, &mask_spec(*mask_id));
            let case = simulate_case(&x, &mask, &projector, &SimConfig::default(), seed, 0)?;
            io::create_dir(&out)?;
            io::write_sinogram(&out.join("s_ma"), &case.s_ma, Some(&geom))?;
            io::write_sinogram(&out.join("s_gt"), &case.s_gt, Some(&geom))?;
            write_outputs(&out, "x_gt", &case.x_gt, &geom)?;
            write_outputs(&out, "x_ma", &case.x_ma, &geom)?;
            io::write_mask(&out.join("mask"), &case.mask)?;
            io::write_trace(&out.join("trace"), &case.trace)?;
            println!(
                "simulated {phantom} phantom with implant {mask_id}: {} metal pixels, {} trace bins, {} starved bins",
                case.mask.count(),
                case.trace.count(),
                case.starved_bins
            );
        }
        Command::Recon { sino } => {
            let (s, geom) = read_scan(sino)?;
            let x = Projector::new(&geom).fbp(&s)?.to_hu();
            io::create_dir(&out)?;
            write_outputs(&out, "recon", &x, &geom)?;
        }
        Command::MarLi { sino, threshold } | Command::MarNmar { sino, threshold } => {
            let (s, geom) = read_scan(sino)?;
            let projector = Projector::new(&geom);
            let x_ma = projector.fbp(&s)?.to_hu();
            let mask = segment_metal(&x_ma, *threshold)?;
            let tr = metal_trace(&mask, &geom)?;
            let (name, corrected) = match &cli.command {
                Command::MarLi { .. } => ("li", li_complete(&s, &tr)?),
                _ => ("nmar", nmar_complete(&s, &tr, &x_ma, &geom, &NmarConfig::default())?),
            };
            if mask.is_empty() {
                eprintln!("no pixel reaches {threshold} HU: nothing to correct");
            }
            let x = projector.fbp(&corrected)?.to_hu();
            io::create_dir(&out)?;
            io::write_sinogram(&out.join(format!("s_{name}")), &corrected, Some(&geom))?;
            io::write_mask(&out.join("mask"), &mask)?;
            write_outputs(&out, &format!("x_{name}"), &x, &geom)?;
        }
        Command::Train { data, epochs, variant } => {
            let mut cfg = load_config(&cli)?;
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(v) = variant {
                cfg.variant = *v;
            }
            train(&cfg, data, Some(&out), print_epoch)?;
            println!("saved {}", out.join("model.ckpt").display());
        }
        Command::Infer {
            checkpoint,
            sino,
            image,
            threshold,
        } => {
            let model = Model::load(checkpoint)?;
            let geom = model.spec.geometry()?;
            let projector = Projector::new(&geom);
            let result: ScanCorrection = match (sino, image) {
                (Some(s), None) => {
                    let (s, g) = read_scan(s)?;
                    if g != geom {
                        return Err(MarError::Config("sinogram geometry does not match the model".into()));
                    }
                    correct_scan(&model, &s, *threshold, &projector)?
                }
                (None, Some(i)) => {
                    let x = io::read_image(i, geom.grid.pixel_size)?;
                    let x = if x.unit == Unit::Hu { x } else { x.to_hu() };
                    correct_image(&model, &x, *threshold, &projector)?
                }
                _ => return Err(MarError::Config("give exactly one of --sino or --image".into())),
            };
            io::create_dir(&out)?;
            write_outputs(&out, "x_out", &result.x_out, &geom)?;
            write_outputs(&out, "x_ma", &result.x_ma, &geom)?;
            io::write_mask(&out.join("mask"), &result.mask)?;
            io::write_trace(&out.join("trace"), &result.trace)?;
            match &result.intermediates {
                Some(inter) => {
                    if let Some(p) = &inter.x_prior {
                        write_outputs(&out, "x_prior", p, &geom)?;
                    }
                    io::write_sinogram(&out.join("s_corr"), &inter.s_corr, Some(&geom))?;
                }
                None => {
                    eprintln!("no pixel reaches {threshold} HU: nothing to correct, wrote the plain reconstruction")
                }
            }
        }
        Command::Eval {
            data,
            checkpoint,
            methods,
            panels,
            reference,
        } => {
            let manifest = Manifest::load(data)?;
            let cases = load_cases(data, &manifest, Split::Test)?;
            let projector = Projector::new(&manifest.geometry);
            let mut models = Models::new();
            for c in checkpoint {
                let m = Model::load(c)?;
                models.insert(m.spec.variant, m);
            }
            let methods: Vec<Method> = methods.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
            let opts = EvalOptions {
                panels: *panels,
                window: Window::default(),
                reference: *reference,
            };
            let report = evaluate(&cases, &methods, &projector, &models, &opts, Some(&out))?;
            print!("{}", report.summary_table());
        }
        Command::Ablate { data, epochs } => {
            let mut cfg = load_config(&cli)?;
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            let mut models = Models::new();
            for v in Variant::ALL {
                println!("training variant {}", v.name());
                let run_cfg = TrainConfig {
                    variant: v,
                    ..cfg.clone()
                };
                let t = train(&run_cfg, data, Some(&out.join(v.name())), print_epoch)?;
                models.insert(v, t.model);
            }
            let manifest = Manifest::load(data)?;
            let cases = load_cases(data, &manifest, Split::Test)?;
            let projector = Arc::new(Projector::new(&manifest.geometry));
            let methods: Vec<Method> = Variant::ALL.into_iter().map(Method::Model).collect();
            let report = evaluate(
                &cases,
                &methods,
                &projector,
                &models,
                &EvalOptions::default(),
                Some(&out),
            )?;
            print!("{}", report.summary_table());
        }
        Command::SweepMask {
            data,
            checkpoint,
            radii,
            cases,
        } => {
            let model = Model::load(checkpoint)?;
            let manifest = Manifest::load(data)?;
            let mut test = load_cases(data, &manifest, Split::Test)?;
            if *cases > 0 {
                test.truncate(*cases);
            }
            let radii: Vec<i64> = radii
                .split(',')
                .map(|r| {
                    r.trim()
                        .parse()
                        .map_err(|_| MarError::Config(format!("bad radius '{r}'")))
                })
                .collect::<Result<_>>()?;
            let projector = Projector::new(&manifest.geometry);
            let rows = robustness_sweep(&model, &test, &radii, &projector)?;
            for r in rows.iter().filter(|r| r.rmse_hu.is_none()) {
                eprintln!("{}: erosion by {} removes all metal, skipped", r.case_id, -r.radius);
            }
            io::create_dir(&out)?;
            io::write_json(&out.join("sweep.json"), &rows)?;
            println!("{:>7} {:>10} {:>6}", "radius", "RMSE (HU)", "cases");
            for (r, (m, n)) in sweep_means(&rows) {
                println!("{r:>7} {m:>10.2} {n:>6}");
            }
        }
    }
    Ok(())
}
