//! SNR sweeps across schedulers and system variants.
//!
//! A sweep runs every configured policy at every SNR point over several
//! seeds and reports mean sum rate with a standard error. Channel geometry
//! (codebooks, conditional tables) does not depend on the transmit power, so
//! each system variant builds it once and shares it across the whole grid;
//! only the reward/model tables are rebuilt per SNR point.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::channel::{estimate_conditional_model, CsitMode, RunConfig, SystemConfig};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::scheduler::PolicyKind;
use crate::sim::{canonical_codebooks, canonical_model, run_trajectory};

/// A scheduler plus the system variant it runs on, parsed from
/// `name[:delayed-only][:bypass]` where `name` is `frame`, `myopic`, or
/// `conventional`. `delayed-only` drops the coarse feedback entirely;
/// `bypass` hands the resolution slots the unquantized delayed channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub delayed_only: bool,
    pub bypass: bool,
}

impl PolicySpec {
    /// The system configuration this policy should run against.
    pub fn apply(&self, base: &SystemConfig) -> SystemConfig {
        let mut cfg = if self.delayed_only {
            base.for_mode(CsitMode::DelayedOnly)
        } else {
            base.clone()
        };
        if self.bypass {
            cfg.delayed_csi_bypass = true;
        }
        if self.kind == PolicyKind::Conventional {
            // The conventional baseline schedules one-shot transmissions
            // from the reward tables; the MDP itself needs no extra actions.
            cfg.enable_oneshot_actions = false;
        }
        cfg
    }

    /// Key identifying the system variant (everything except the scheduler).
    fn variant(&self) -> (bool, bool) {
        (self.delayed_only, self.bypass)
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let kind = match name {
            "frame" => PolicyKind::Frame,
            "myopic" => PolicyKind::Myopic,
            "conventional" => PolicyKind::Conventional,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown policy '{other}' (expected frame, myopic, or conventional)"
                )))
            }
        };
        let mut spec = PolicySpec { kind, delayed_only: false, bypass: false };
        for flag in parts {
            match flag {
                "delayed-only" => spec.delayed_only = true,
                "bypass" => spec.bypass = true,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown policy flag '{other}' (expected delayed-only or bypass)"
                    )))
                }
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            PolicyKind::Frame => "frame",
            PolicyKind::Myopic => "myopic",
            PolicyKind::Conventional => "conventional",
        };
        write!(f, "{name}")?;
        if self.delayed_only {
            write!(f, ":delayed-only")?;
        }
        if self.bypass {
            write!(f, ":bypass")?;
        }
        Ok(())
    }
}

/// Grid definition for a sweep, deserializable from a `[sweep]` config table.
#[derive(Debug, Clone, Deserialize)]
pub struct SweepSpec {
    /// Transmit SNR points in dB.
    pub snr_db: Vec<f64>,
    /// Policy strings, `name[:delayed-only][:bypass]`.
    pub policies: Vec<String>,
    /// Controller intervals per trajectory.
    pub intervals: u64,
    /// One trajectory per seed; the standard error comes from seed spread.
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.policies.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidInput(
                "a sweep needs at least one SNR point, one policy, and one seed".into(),
            ));
        }
        if self.intervals == 0 {
            return Err(Error::InvalidInput("sweep intervals must be ≥ 1".into()));
        }
        for p in &self.policies {
            p.parse::<PolicySpec>()?;
        }
        Ok(())
    }
}

/// One sweep cell: a policy at an SNR point, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub policy: String,
    /// Mean over seeds of the summed per-user throughput (bits/interval).
    pub mean_sum_rate: f64,
    /// Sample standard error over seeds (0 when only one seed ran).
    pub stderr: f64,
    /// Mean over seeds of the configured utility at the throughput vector.
    pub utility: f64,
    pub seed_count: usize,
}

/// Sweep output: completed rows in grid order plus any per-cell failures.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub errors: Vec<SweepError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepError {
    pub snr_db: f64,
    pub policy: String,
    pub message: String,
}

impl SweepTable {
    /// CSV with a pinned header; cell failures append as `#`-comment lines
    /// so a partial table still parses cleanly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,policy,mean_sum_rate,stderr,utility,seed_count\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.snr_db, r.policy, r.mean_sum_rate, r.stderr, r.utility, r.seed_count
            ));
        }
        for e in &self.errors {
            out.push_str(&format!(
                "# error snr_db={} policy={}: {}\n",
                e.snr_db, e.policy, e.message
            ));
        }
        out
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs the full grid. Cells are evaluated grouped by system variant (so
/// geometry is built once per variant) but reported in grid order: SNR
/// points in the order given, policies in the order given.
pub fn snr_sweep(spec: &SweepSpec, run: &RunConfig) -> Result<SweepTable> {
    spec.validate()?;
    run.system.validate()?;
    run.frame.validate(run.system.num_users)?;

    let parsed: Vec<PolicySpec> =
        spec.policies.iter().map(|p| p.parse()).collect::<Result<_>>()?;

    // One geometry per distinct (delayed-only, bypass) variant.
    let mut variants: Vec<(bool, bool)> = Vec::new();
    for p in &parsed {
        if !variants.contains(&p.variant()) {
            variants.push(p.variant());
        }
    }

    let mut cells: Vec<Option<std::result::Result<SweepRow, SweepError>>> =
        vec![None; spec.snr_db.len() * parsed.len()];

    for &variant in &variants {
        let members: Vec<usize> = parsed
            .iter()
            .enumerate()
            .filter(|(_, p)| p.variant() == variant)
            .map(|(idx, _)| idx)
            .collect();
        let base = parsed[members[0]].apply(&run.system);
        let books = canonical_codebooks(&base);
        let cond = estimate_conditional_model(
            &base,
            &books,
            &mut RngStream::new(base.seed, 31),
        )?;
        for (snr_idx, &snr) in spec.snr_db.iter().enumerate() {
            let cfg = base.at_power_db(snr);
            let model = match canonical_model(&cfg, &books, &cond) {
                Ok(m) => m,
                Err(err) => {
                    for &p_idx in &members {
                        cells[snr_idx * parsed.len() + p_idx] = Some(Err(SweepError {
                            snr_db: snr,
                            policy: spec.policies[p_idx].clone(),
                            message: err.to_string(),
                        }));
                    }
                    continue;
                }
            };
            for &p_idx in &members {
                let policy = &parsed[p_idx];
                let mut sums = Vec::with_capacity(spec.seeds.len());
                let mut utilities = Vec::with_capacity(spec.seeds.len());
                let mut failure = None;
                for &seed in &spec.seeds {
                    match run_trajectory(
                        &model,
                        &run.frame,
                        policy.kind,
                        spec.intervals,
                        &RngStream::new(seed, 0),
                    ) {
                        Ok((metrics, _)) => {
                            sums.push(metrics.throughput.iter().sum::<f64>());
                            utilities.push(metrics.utility);
                        }
                        Err(err) => {
                            failure = Some(err.to_string());
                            break;
                        }
                    }
                }
                let cell = match failure {
                    Some(message) => Err(SweepError {
                        snr_db: snr,
                        policy: spec.policies[p_idx].clone(),
                        message,
                    }),
                    None => {
                        let (mean_sum_rate, stderr) = mean_and_stderr(&sums);
                        let (utility, _) = mean_and_stderr(&utilities);
                        Ok(SweepRow {
                            snr_db: snr,
                            policy: spec.policies[p_idx].clone(),
                            mean_sum_rate,
                            stderr,
                            utility,
                            seed_count: spec.seeds.len(),
                        })
                    }
                };
                cells[snr_idx * parsed.len() + p_idx] = Some(cell);
            }
        }
    }

    let mut table = SweepTable::default();
    for cell in cells.into_iter() {
        match cell.expect("every sweep cell is filled") {
            Ok(row) => table.rows.push(row),
            Err(err) => table.errors.push(err),
        }
    }
    Ok(table)
}

// ── tests ──────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::tests_support::desk_system;
    use crate::scheduler::FrameConfig;

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            snr_db: vec![5.0, 10.0],
            policies: vec!["frame".into(), "myopic".into(), "conventional".into()],
            intervals: 120,
            seeds: vec![1, 2],
        }
    }

    fn desk_run_config() -> RunConfig {
        RunConfig { system: desk_system(), frame: FrameConfig::default() }
    }

    #[test]
    fn policy_strings_roundtrip() {
        for s in [
            "frame",
            "myopic",
            "conventional",
            "frame:delayed-only",
            "myopic:bypass",
            "frame:delayed-only:bypass",
        ] {
            let spec: PolicySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("greedy".parse::<PolicySpec>().is_err());
        assert!("frame:fast".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn delayed_only_variant_drops_coarse_feedback() {
        let base = desk_system();
        let spec: PolicySpec = "myopic:delayed-only".parse().unwrap();
        let cfg = spec.apply(&base);
        assert_eq!(cfg.coarse_bits, 0);
        assert_eq!(cfg.csit_mode, CsitMode::DelayedOnly);
        assert!(!cfg.delayed_csi_bypass);
        let spec: PolicySpec = "myopic:bypass".parse().unwrap();
        assert!(spec.apply(&base).delayed_csi_bypass);
    }

    #[test]
    fn sweep_fills_the_grid_in_order_and_is_deterministic() {
        let spec = tiny_spec();
        let run = desk_run_config();
        let table = snr_sweep(&spec, &run).unwrap();
        assert!(table.errors.is_empty(), "errors: {:?}", table.errors);
        assert_eq!(table.rows.len(), 6);
        let expect: Vec<(f64, &str)> = vec![
            (5.0, "frame"),
            (5.0, "myopic"),
            (5.0, "conventional"),
            (10.0, "frame"),
            (10.0, "myopic"),
            (10.0, "conventional"),
        ];
        for (row, (snr, policy)) in table.rows.iter().zip(expect) {
            assert_eq!(row.snr_db, snr);
            assert_eq!(row.policy, policy);
            assert!(row.mean_sum_rate > 0.0);
            assert!(row.stderr >= 0.0);
            assert_eq!(row.seed_count, 2);
        }
        let again = snr_sweep(&spec, &run).unwrap();
        assert_eq!(table, again);
        assert_eq!(table.to_csv(), again.to_csv());
    }

    #[test]
    fn csv_header_is_pinned() {
        let table = SweepTable {
            rows: vec![SweepRow {
                snr_db: 10.0,
                policy: "frame".into(),
                mean_sum_rate: 1.5,
                stderr: 0.01,
                utility: 2.0,
                seed_count: 3,
            }],
            errors: vec![SweepError {
                snr_db: 20.0,
                policy: "myopic".into(),
                message: "state space too large".into(),
            }],
        };
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "snr_db,policy,mean_sum_rate,stderr,utility,seed_count"
        );
        assert_eq!(lines.next().unwrap(), "10,frame,1.5,0.01,2,3");
        assert_eq!(
            lines.next().unwrap(),
            "# error snr_db=20 policy=myopic: state space too large"
        );
    }

    #[test]
    fn more_power_does_not_hurt_the_hybrid_scheduler() {
        // Sum rate should climb with SNR on the desk instance; a single
        // seed and short run are enough for the large gap 0 dB → 15 dB.
        let spec = SweepSpec {
            snr_db: vec![0.0, 15.0],
            policies: vec!["myopic".into()],
            intervals: 400,
            seeds: vec![7],
        };
        let table = snr_sweep(&spec, &desk_run_config()).unwrap();
        assert!(table.errors.is_empty());
        assert!(
            table.rows[1].mean_sum_rate > table.rows[0].mean_sum_rate,
            "{} vs {}",
            table.rows[1].mean_sum_rate,
            table.rows[0].mean_sum_rate
        );
    }
}
