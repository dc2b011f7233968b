use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpflock::acceptance::{all_passed, run_one, Context as AcceptContext, CRITERIA};
use jumpflock::extremes::{generalized_gumbel_cdf, simulate_record, terminal_sample, write_path_csv, RecordPool};
use jumpflock::format::fmt17;
use jumpflock::harness::{load_config, parse_pde_config, preset, run_pde_to, run_scenario_to, PRESETS};
use jumpflock::mean_field::{ClosedForm, WaveProfile};
use jumpflock::measures::ks_distance;
use jumpflock::two_particle::{gap_stationary_pmf, GapChain, GapDensity};
use jumpflock::RateSpec;

#[derive(Parser)]
#[command(name = "jumpflock", version, about = "Particles jumping toward their center of mass")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a particle experiment from a TOML config or a preset name
    Simulate {
        /// Config path, or one of fig4_6, fig4_6_small, fig7_9, fig7_9_small
        config: String,
        /// Output directory (default: the config's `output`, else runs/<scenario>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Wave speed and traveling profile for a rate (e.g. exp:1, step:2,1, pl:2,1, arccot)
    Travelwave {
        #[arg(long)]
        rate: RateSpec,
        /// Write the profile as x,density CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stationary two-particle gap law: the unit-jump chain, or with --beta
    /// the continuous gap density for w = e^{-beta x}
    Gap {
        #[arg(long)]
        rate: RateSpec,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record process of the growing exponential pool (1/beta an integer)
    Extremes {
        #[arg(long)]
        beta: f64,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// With more than one run, report the KS distance of the terminal law
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the mean-field equation from a TOML config
    Pde {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite (all criteria, or the listed ids)
    Accept { ids: Vec<u8> },
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = if Path::new(&config).exists() {
                load_config(Path::new(&config))?
            } else if PRESETS.contains(&config.as_str()) {
                preset(&config)?
            } else {
                bail!("{config} is neither a config file nor a preset ({})", PRESETS.join(", "));
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| Path::new("runs").join(&cfg.scenario));
            let bundle = run_scenario_to(&cfg, &dir)?;
            println!("{}", bundle.summary_json().render());
            eprintln!("wrote {}", dir.display());
        }
        Command::Travelwave { rate, out } => {
            let p = WaveProfile::traveling(&rate)?;
            eprintln!("rate {rate}: wave speed c = {}", fmt17(p.c));
            if let Some(form) = ClosedForm::for_rate(&rate) {
                eprintln!("closed form: {form:?}");
            }
            p.write_csv(sink(&out)?)?;
        }
        Command::Gap { rate, beta, out } => {
            let mut w = sink(&out)?;
            match beta {
                Some(beta) => {
                    if rate != RateSpec::exponential(beta)? {
                        bail!("--beta {beta} describes the rate exp:{beta}, but --rate is {rate}");
                    }
                    let d = GapDensity::new(beta)?;
                    writeln!(w, "g,density,cdf")?;
                    for j in 0..=400 {
                        let g = j as f64 * 0.025;
                        writeln!(w, "{},{},{}", fmt17(g), fmt17(d.pdf(g)), fmt17(d.cdf(g)))?;
                    }
                }
                None => {
                    let pi = gap_stationary_pmf(&GapChain::new(&rate)?)?;
                    writeln!(w, "k,probability")?;
                    for (k, p) in pi.iter().enumerate() {
                        writeln!(w, "{k},{}", fmt17(*p))?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Extremes {
            beta,
            t,
            seed,
            runs,
            out,
        } => {
            let k = (1.0 / beta).round();
            if k.is_nan() || k < 1.0 || (k * beta - 1.0).abs() > 1e-12 {
                bail!("1/beta must be a positive integer, got beta = {beta}");
            }
            let k = k as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pool = RecordPool::new(k)?;
            let path = simulate_record(&mut pool, t, &mut rng)?;
            let mut w = sink(&out)?;
            write_path_csv(&path, &mut w)?;
            w.flush()?;
            eprintln!("pool size {} at T = {t}, Y − (1/β)ln N = {}", pool.pool_count, fmt17(pool.rescaled()));
            if runs > 1 {
                let sample = terminal_sample(k, t, runs, |i| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(i + 1);
                    r
                })?;
                let ks = ks_distance(&sample, &|x| generalized_gumbel_cdf(beta, x).unwrap_or(f64::NAN))?;
                eprintln!("KS distance over {runs} runs to the generalized Gumbel law: {ks:.5}");
            }
        }
        Command::Pde { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = parse_pde_config(&text)?;
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("runs/pde"));
            let (rho, samples) = run_pde_to(&cfg, &dir)?;
            if let Some(s) = samples.last() {
                eprintln!(
                    "t = {}, mass = {}, mean = {}, speed = {}, W1 to the wave = {}",
                    fmt17(s.t),
                    fmt17(s.mass),
                    fmt17(s.mean),
                    fmt17(s.speed),
                    s.w1.map(fmt17).unwrap_or_default()
                );
            }
            eprintln!("wrote {} ({} cells)", dir.display(), rho.values.len());
        }
        Command::Accept { ids } => {
            let mut ctx = AcceptContext::default();
            let mut results = Vec::new();
            for (id, _, _) in CRITERIA {
                if ids.is_empty() || ids.contains(&id) {
                    let c = run_one(id, &mut ctx);
                    println!("{c}");
                    results.push(c);
                }
            }
            if !all_passed(&results) {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
