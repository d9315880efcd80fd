//! Versioned result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use brar_core::trial::{ReplicationSummary, TrialResult};
use brar_core::TrialConfig;

pub const REPLICATES_MAGIC: &str = "# brar replicates v1";
pub const SUMMARY_MAGIC: &str = "# brar summary v1";

/// Paths of a run's output files, refusing to clobber existing ones unless forced.
pub struct RunDir {
    pub dir: PathBuf,
    force: bool,
}

impl RunDir {
    pub fn new(directory: &Path, run_id: &str, force: bool) -> Self {
        Self { dir: directory.join(run_id), force }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fail if any of `names` already exists and `--force` was not given.
    pub fn claim(&self, names: &[&str]) -> Result<(), String> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.file(n);
            if p.exists() {
                return Err(format!("{} already exists; pass --force to overwrite", p.display()));
            }
        }
        Ok(())
    }

    pub fn write(&self, name: &str, contents: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let p = self.file(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// One CSV row per replicate, in replicate order.
pub fn replicates_csv(config: &TrialConfig, seed: u64, spending: &str, results: &[TrialResult]) -> String {
    let k = config.scenario.num_treatments();
    let mut out = String::new();
    let _ = writeln!(out, "{REPLICATES_MAGIC}");
    let _ = writeln!(
        out,
        "# brar_version={} scenario={} omega={} rule={} spending={} delta={} seed={} replicates={}",
        brar_core::VERSION,
        config.scenario.name,
        config.scenario.omega_level,
        config.rule,
        spending,
        config.delta,
        seed,
        results.len()
    );
    let mut header = vec!["replicate".to_string(), "stopped_early".into(), "stop_stage".into(), "rejected".into()];
    header.extend((0..=k).map(|a| format!("n_{a}")));
    header.extend(["best_arm_proportion", "pps_ha1", "pps_ha2", "pps_ha3"].map(String::from));
    header.extend((0..=k).map(|a| format!("theta_{a}")));
    header.extend((1..=k).map(|a| format!("xi_{a}")));
    let _ = writeln!(out, "{}", header.join(","));
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            i,
            u8::from(r.stopped_early),
            r.stop_stage,
            u8::from(r.rejected),
            join(&r.per_arm_n),
            r.best_arm_proportion,
            r.pps_ha1,
            r.pps_ha2,
            r.pps_ha3,
            join(&r.theta_hats),
            join(&r.xi_hats)
        );
    }
    out
}

fn toml_list(xs: &[f64]) -> String {
    format!("[{}]", xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", "))
}

/// Summary document; the `[table]` section holds "mean (sd)" cells.
pub fn summary_toml(
    config: &TrialConfig,
    seed: u64,
    spending: &str,
    critical: &[f64],
    s: &ReplicationSummary,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SUMMARY_MAGIC}");
    let _ = writeln!(out, "brar_version = \"{}\"", brar_core::VERSION);
    let _ = writeln!(out);
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "scenario = \"{}\"", config.scenario.name);
    let _ = writeln!(out, "omega = {:?}", config.scenario.omega_level);
    let _ = writeln!(out, "rule = \"{}\"", config.rule);
    let _ = writeln!(out, "spending = \"{spending}\"");
    let _ = writeln!(out, "delta = {:?}", config.delta);
    let _ = writeln!(out, "total_n = {}", config.total_n);
    let _ = writeln!(out, "num_stages = {}", config.num_stages);
    let _ = writeln!(out, "hypothesis_r = {}", config.hypothesis_r);
    let _ = writeln!(out, "seed = {seed}");
    let _ = writeln!(out, "replicates = {}", s.replicates);
    let _ = writeln!(out, "critical_values = {}", toml_list(critical));
    let _ = writeln!(out);
    let _ = writeln!(out, "[table]");
    let _ = writeln!(out, "pps_ha1 = \"{}\"", s.pps_ha1);
    let _ = writeln!(out, "pps_ha2 = \"{}\"", s.pps_ha2);
    let _ = writeln!(out, "pps_ha3 = \"{}\"", s.pps_ha3);
    let _ = writeln!(out, "best_arm_proportion = \"{}\"", s.best_arm_proportion);
    let _ = writeln!(out, "sample_size = \"{}\"", s.sample_size);
    let _ = writeln!(out);
    let _ = writeln!(out, "[summary]");
    for (name, m) in [
        ("pps_ha1", s.pps_ha1),
        ("pps_ha2", s.pps_ha2),
        ("pps_ha3", s.pps_ha3),
        ("best_arm_proportion", s.best_arm_proportion),
        ("sample_size", s.sample_size),
    ] {
        let _ = writeln!(out, "{name}_mean = {:?}", m.mean);
        let _ = writeln!(out, "{name}_sd = {:?}", m.sd);
    }
    let _ = writeln!(out, "rejection_rate = {:?}", s.rejection_rate);
    let _ = writeln!(out, "early_stop_rate = {:?}", s.early_stop_rate);
    let _ = writeln!(out, "mean_per_arm_n = {}", toml_list(&s.mean_per_arm_n));
    out
}
