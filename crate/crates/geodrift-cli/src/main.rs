//! Batch front end: runs one pipeline stage from a JSON run configuration
//! and writes its artifacts, tables and `manifest.json` to the output
//! directory.

mod manifest;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use geodrift::config::RunConfig;
use geodrift::diffusion_experiments::{build_transition_chain, ChainMode, DriftReport};
use geodrift::fermi_charts::FermiChart;
use geodrift::hyperbolic_structures::HomoclinicOrbit;
use geodrift::perturbation::Fluctuation;
use geodrift::pipeline::{self, GeodesicArtifact, Setup};
use geodrift::scattering::{
    measure_scattering, remainder_estimate, uniform_thetas, write_melnikov_csv, write_remainder_csv, write_samples_csv,
    ChannelPhases,
};
use geodrift::verification;
use geodrift::{GeoError, Result};

use manifest::{sha256_hex, RunManifest, StageRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Stage {
    FindGeodesic,
    FindHomoclinic,
    BuildFermi,
    Melnikov,
    ScatteringSweep,
    RemainderSweep,
    InnerMapVerify,
    Chain,
    Drift,
    Timing,
    VerifyAll,
}

#[derive(Parser, Debug)]
#[command(name = "geodrift", version, about = "Energy drift of geodesic flows on fluctuating surfaces")]
struct Cli {
    /// Stage to run.
    #[arg(value_enum)]
    stage: Stage,
    /// Run configuration (JSON); same as --config.
    config_file: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parameter sweeps.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

/// A persisted artifact tagged with the hash of the configuration sections
/// it depends on.
#[derive(Serialize, Deserialize)]
struct Stored<T> {
    config_hash: String,
    #[serde(flatten)]
    data: T,
}

struct Runner {
    cfg: RunConfig,
    out: PathBuf,
    manifest: RunManifest,
    verbose: bool,
}

fn section_hash<T: Serialize>(parts: &T) -> String {
    sha256_hex(serde_json::to_string(parts).expect("config serializes").as_bytes())
}

impl Runner {
    fn log(&self, msg: &str) {
        if self.verbose {
            eprintln!("[geodrift] {msg}");
        }
    }

    fn record(&mut self, name: &str, status: &str, seconds: f64, err: Option<&GeoError>) {
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status: status.into(),
            seconds,
            error: err.map(|e| e.name().to_string()),
            message: err.map(|e| e.to_string()),
        });
    }

    /// Runs `f` as stage `name`, recording its status and wall time.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.log(&format!("{name} ..."));
        let t = Instant::now();
        let r = f(self);
        let secs = t.elapsed().as_secs_f64();
        match &r {
            Ok(_) => self.record(name, "computed", secs, None),
            Err(e) => self.record(name, if e.is_validation() { "invalid" } else { "failed" }, secs, Some(e)),
        }
        self.log(&format!("{name} done in {secs:.2} s"));
        r
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        f(&mut w)?;
        std::io::Write::flush(&mut w)?;
        self.manifest.note_file(name);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_with(name, |w| std::io::Write::write_all(w, text.as_bytes()))
    }

    /// Loads `name` when its hash matches, otherwise computes and stores it.
    fn artifact<T: Serialize + DeserializeOwned>(
        &mut self,
        name: &str,
        file: &str,
        hash: String,
        compute: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let path = self.out.join(file);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(s) = serde_json::from_str::<Stored<T>>(&text) {
                if s.config_hash == hash {
                    self.log(&format!("{name}: reusing {file}"));
                    self.record(name, "loaded", 0.0, None);
                    self.manifest.note_file(file);
                    return Ok(s.data);
                }
            }
        }
        let data = self.stage(name, compute)?;
        let stored = Stored { config_hash: hash, data };
        self.write_json(file, &stored)?;
        Ok(stored.data)
    }

    fn geodesic(&mut self) -> Result<GeodesicArtifact> {
        let c = &self.cfg;
        let hash = section_hash(&(&c.surface, &c.geodesic, &c.solver));
        self.artifact("find-geodesic", "geodesic.json", hash, |r| pipeline::geodesic_stage(&r.cfg))
    }

    fn homoclinic_hash(&self) -> String {
        let c = &self.cfg;
        section_hash(&(&c.surface, &c.geodesic, &c.solver, &c.homoclinic, &c.chart))
    }

    fn homoclinic(&mut self, geo: &GeodesicArtifact) -> Result<HomoclinicOrbit> {
        let hash = self.homoclinic_hash();
        self.artifact("find-homoclinic", "homoclinic.json", hash, |r| pipeline::homoclinic_stage(geo, &r.cfg))
    }

    fn chart(&mut self, geo: &GeodesicArtifact, h: &HomoclinicOrbit) -> Result<FermiChart> {
        let hash = self.homoclinic_hash();
        self.artifact("build-fermi", "fermi_chart.json", hash, |r| pipeline::chart_stage(geo, h, &r.cfg))
    }

    fn setup(&mut self) -> Result<Setup> {
        let geo = self.geodesic()?;
        let homoclinic = self.homoclinic(&geo)?;
        let chart = self.chart(&geo, &homoclinic)?;
        let spec = self.stage("perturbation", |r| pipeline::perturbation_spec(&chart, &r.cfg))?;
        Ok(Setup { geo, homoclinic, chart, spec })
    }

    fn run(&mut self, stage: Stage) -> Result<bool> {
        match stage {
            Stage::FindGeodesic => {
                self.geodesic()?;
            }
            Stage::FindHomoclinic => {
                let geo = self.geodesic()?;
                self.homoclinic(&geo)?;
            }
            Stage::BuildFermi => {
                self.setup()?;
            }
            Stage::Melnikov => {
                let s = self.setup()?;
                let ph = ChannelPhases::new(&s.homoclinic, s.geodesic());
                let e = self.cfg.experiments.clone();
                let thetas = uniform_thetas(e.remainder_theta_count);
                self.stage("melnikov", |r| {
                    r.write_with("melnikov.csv", |w| write_melnikov_csv(&s.spec, &ph, &[e.scattering_phi], &e.scattering_speeds, &thetas, w))
                })?;
            }
            Stage::ScatteringSweep => {
                let s = self.setup()?;
                let samples = self.stage("scattering-sweep", |r| scattering_sweep(&s, &r.cfg))?;
                self.write_with("scattering_samples.csv", |w| write_samples_csv(&samples, w))?;
            }
            Stage::RemainderSweep => {
                let s = self.setup()?;
                let ph = ChannelPhases::new(&s.homoclinic, s.geodesic());
                let e = self.cfg.experiments.clone();
                let rows = self.stage("remainder-sweep", |_| {
                    Ok(remainder_estimate(&s.spec, &ph, &e.remainder_rhos, &e.remainder_speeds, &uniform_thetas(e.remainder_theta_count)))
                })?;
                self.write_with("remainder.csv", |w| write_remainder_csv(&rows, w))?;
            }
            Stage::InnerMapVerify => {
                let s = self.setup()?;
                let rep = self.stage("inner-map-verify", |r| verification::inner_map(&s, &r.cfg))?;
                self.write_json("inner_map.json", &rep)?;
                let tr = self.stage("transversality", |r| verification::transversality(&s, &r.cfg))?;
                self.write_json("transversality.json", &tr)?;
            }
            Stage::Chain => {
                let s = self.setup()?;
                let ph = ChannelPhases::new(&s.homoclinic, s.geodesic());
                let e = self.cfg.experiments.clone();
                let spec = s.spec.with_epsilon(e.chain_epsilon);
                let params = pipeline::chain_params(&self.cfg);
                let start = pipeline::chain_start(&ph, e.chain_j0);
                let rec = self.stage("chain", |_| build_transition_chain(&start, &spec, &ph, ChainMode::Diffusive, e.chain_max_jumps, &params))?;
                self.write_with("chain.csv", |w| rec.write_csv(w))?;
                let osc = self.stage("chain-oscillatory", |_| {
                    build_transition_chain(&start, &spec, &ph, ChainMode::Oscillatory, e.chain_max_jumps, &params)
                })?;
                self.write_with("chain_oscillatory.csv", |w| osc.write_csv(w))?;
            }
            Stage::Drift => {
                let s = self.setup()?;
                let rep = self.stage("drift", |r| drift_run(&s, &r.cfg))?;
                self.write_with("drift.csv", |w| rep.write_csv(w))?;
                self.write_with("drift_excursions.csv", |w| rep.write_excursions_csv(w))?;
            }
            Stage::Timing => {
                let s = self.setup()?;
                let rep = self.stage("timing", |r| verification::timing(&s, &r.cfg))?;
                self.write_with("timing.csv", |w| geodrift::diffusion_experiments::write_timing_csv(&rep, w))?;
                self.write_json("timing.json", &rep)?;
            }
            Stage::VerifyAll => {
                let s = self.setup()?;
                let reports = self.stage("verify-all", |r| Ok(verification::verify_all(&s, &r.cfg)))?;
                for rep in &reports {
                    let tag = if rep.pass() { "PASS" } else { "FAIL" };
                    println!("{tag} criterion {:>2} {} ({:.1} s)", rep.id, rep.title, rep.seconds);
                    if let Some(e) = &rep.error {
                        println!("     error: {e}");
                    }
                    for c in rep.checks.iter().filter(|c| !c.pass || self.verbose) {
                        println!("     {} = {:.6e} (bound {})", c.name, c.value, c.bound);
                    }
                }
                self.write_json("verification.json", &reports)?;
                return Ok(reports.iter().all(|r| r.pass()));
            }
        }
        Ok(true)
    }
}

fn scattering_sweep(s: &Setup, cfg: &RunConfig) -> Result<Vec<geodrift::scattering::ScatteringSample>> {
    let e = &cfg.experiments;
    let ph = ChannelPhases::new(&s.homoclinic, s.geodesic());
    let mut jobs = Vec::new();
    for &eps in &e.scattering_epsilons {
        for &j in &e.scattering_speeds {
            for &th in &e.scattering_thetas {
                jobs.push((eps, j, th));
            }
        }
    }
    jobs.par_iter()
        .map(|&(eps, j, th)| {
            let sp = s.spec.with_epsilon(eps);
            let fl = Fluctuation::new(s.surface(), &s.chart, &sp)?;
            measure_scattering(&fl, &s.homoclinic, &ph, [e.scattering_phi, j, th, 0.0], 5.0, &cfg.solver)
        })
        .collect()
}

fn drift_run(s: &Setup, cfg: &RunConfig) -> Result<DriftReport> {
    let e = &cfg.experiments;
    let ph = ChannelPhases::new(&s.homoclinic, s.geodesic());
    let params = pipeline::drift_params(cfg);
    let start = geodrift::diffusion_experiments::CylinderPoint { phi: 0.0, j: e.drift_j0, t: 0.0, big_theta: 0.0 };
    let theta0 = geodrift::diffusion_experiments::aligned_theta0(&start, &ph, &params);
    let sp = s.spec.with_epsilon(e.drift_epsilon);
    let fl = Fluctuation::new(s.surface(), &s.chart, &sp)?;
    geodrift::diffusion_experiments::guided_drift_simulation(&fl, s.geodesic(), &s.homoclinic, &ph, start, theta0, &params, &cfg.solver)
}

fn stage_name(stage: Stage) -> String {
    stage.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match cli.config.as_ref().or(cli.config_file.as_ref()) {
        Some(p) => RunConfig::load(p),
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn finish(runner: &mut Runner) {
    if let Err(e) = runner.manifest.write(&runner.out) {
        eprintln!("error: cannot write manifest: {e}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool: {e}");
        }
    }
    let command = stage_name(cli.stage);
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let mut runner = Runner { cfg: RunConfig::default(), out, manifest: RunManifest::new(&command, String::new(), 0), verbose: false };
            runner.record("config", "invalid", 0.0, Some(&e));
            finish(&mut runner);
            return ExitCode::from(2);
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| Path::new(&cfg.output_dir).to_path_buf());
    let hash = sha256_hex(serde_json::to_string(&cfg).expect("config serializes").as_bytes());
    let manifest = RunManifest::new(&command, hash, cfg.seed);
    let mut runner = Runner { cfg, out, manifest, verbose: cli.verbose };
    let result = runner.run(cli.stage);
    finish(&mut runner);
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
