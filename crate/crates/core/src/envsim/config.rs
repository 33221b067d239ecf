use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One state's expected readout response, sampled at the digitizer rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqTrace {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl IqTrace {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Concatenated `[I..., Q...]` view.
    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.len());
        v.extend_from_slice(&self.i);
        v.extend_from_slice(&self.q);
        v
    }
}

/// Resolved per-state mean traces ⟨s_g⟩, ⟨s_e⟩ and optionally ⟨s_f⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTraces {
    pub g: IqTrace,
    pub e: IqTrace,
    pub f: Option<IqTrace>,
}

impl MeanTraces {
    /// Resonator ring-up toward a fixed IQ point for every state:
    /// `s_k(t) = A_k (1 - exp(-t / ring_up_time))`.
    pub fn ring_up(spec: &MeanTraceSpec, len: usize, sample_rate: f64, levels: u8) -> Self {
        let envelope: Vec<f64> = (0..len)
            .map(|k| 1.0 - (-(k as f64) / sample_rate / spec.ring_up_time).exp())
            .collect();
        let make = |p: [f64; 2]| IqTrace {
            i: envelope.iter().map(|a| a * p[0]).collect(),
            q: envelope.iter().map(|a| a * p[1]).collect(),
        };
        MeanTraces {
            g: make(spec.iq_g),
            e: make(spec.iq_e),
            f: (levels == 3).then(|| make(spec.iq_f)),
        }
    }

    /// Load tabulated traces from CSV with header
    /// `t,I_g,Q_g,I_e,Q_e[,I_f,Q_f]`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
        let expected = ["t", "I_g", "Q_g", "I_e", "Q_e", "I_f", "Q_f"];
        let ncols = headers.len();
        if ncols != 5 && ncols != 7 {
            return Err(Error::parse(path, format!("expected 5 or 7 columns, found {ncols}")));
        }
        for (h, want) in headers.iter().zip(expected) {
            if h.trim() != want {
                return Err(Error::parse(path, format!("unexpected column `{h}`, wanted `{want}`")));
            }
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); ncols];
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse(path, e))?;
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", row + 1)))?;
                cols[c].push(v);
            }
        }
        let take = |c: usize| cols[c].clone();
        Ok(MeanTraces {
            g: IqTrace { i: take(1), q: take(2) },
            e: IqTrace { i: take(3), q: take(4) },
            f: (ncols == 7).then(|| IqTrace { i: take(5), q: take(6) }),
        })
    }

    pub fn write_csv(&self, path: &Path, sample_rate: f64) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut header = vec!["t", "I_g", "Q_g", "I_e", "Q_e"];
        if self.f.is_some() {
            header.extend(["I_f", "Q_f"]);
        }
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        for k in 0..self.g.len() {
            let mut row = vec![
                k as f64 / sample_rate,
                self.g.i[k],
                self.g.q[k],
                self.e.i[k],
                self.e.q[k],
            ];
            if let Some(f) = &self.f {
                row.extend([f.i[k], f.q[k]]);
            }
            w.write_record(row.iter().map(|v| format!("{v:e}")))
                .map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// How the mean traces are produced: analytic ring-up (default) or a CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanTraceSpec {
    /// Ring-up time constant in seconds.
    pub ring_up_time: f64,
    pub iq_g: [f64; 2],
    pub iq_e: [f64; 2],
    pub iq_f: [f64; 2],
    /// Tabulated traces; relative paths resolve against the config file.
    pub csv: Option<PathBuf>,
}

impl Default for MeanTraceSpec {
    fn default() -> Self {
        MeanTraceSpec {
            ring_up_time: 30e-9,
            iq_g: [0.60, 0.60],
            iq_e: [-0.60, 0.40],
            iq_f: [-0.53, -0.19],
            csv: None,
        }
    }
}

/// Physical and noise parameters of the simulated transmon.
///
/// Defaults follow the measured device (T1, thermal population, cycle time)
/// with readout SNRs calibrated so the simulated two-level infidelities come
/// out at 1.95 % (strong) and 13.9 % (weak), and the f point placed for a
/// three-level infidelity of about 11.3 %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Excited-state lifetime (s).
    pub t1_e: f64,
    /// Second-excited-state lifetime (s).
    pub t1_f: f64,
    /// Equilibrium excited population.
    pub p_therm: f64,
    /// Readout length in samples.
    pub readout_len: usize,
    /// Digitizer rate (samples/s).
    pub sample_rate: f64,
    /// Full feedback cycle: readout + latency + pulse (s).
    pub cycle_time: f64,
    /// Time from end of readout until the conditional pulse (s).
    pub feedback_latency: f64,
    /// Gap between the terminating readout and the verification readout (s).
    pub verify_delay: f64,
    /// Integrated g/e SNR of a full strong readout.
    pub snr: f64,
    /// Integrated g/e SNR of a full weak readout.
    pub weak_snr: f64,
    /// Failure probability of each π-pulse.
    pub flip_error: f64,
    /// 2 (qubit) or 3 (qutrit).
    pub levels: u8,
    /// Episode cap.
    pub max_cycles: usize,
    pub mean_traces: MeanTraceSpec,
    #[serde(skip)]
    pub tabulated: Option<MeanTraces>,
}

/// p_therm · verify_delay / t1_e for the default delay.
pub const DEFAULT_RETHERM_FLOOR: f64 = 7e-4;

impl Default for EnvConfig {
    fn default() -> Self {
        let t1_e = 13e-6;
        let p_therm = 0.014;
        EnvConfig {
            t1_e,
            t1_f: 6e-6,
            p_therm,
            readout_len: 256,
            sample_rate: 1e9,
            cycle_time: 856e-9,
            feedback_latency: 451e-9,
            verify_delay: DEFAULT_RETHERM_FLOOR * t1_e / p_therm,
            snr: 4.38,
            weak_snr: 2.22,
            flip_error: 1e-3,
            levels: 2,
            max_cycles: 10,
            mean_traces: MeanTraceSpec::default(),
            tabulated: None,
        }
    }
}

impl EnvConfig {
    pub fn qutrit() -> Self {
        EnvConfig {
            levels: 3,
            ..Default::default()
        }
    }

    pub fn readout_duration(&self) -> f64 {
        self.readout_len as f64 / self.sample_rate
    }

    /// Checks every invariant; errors carry the offending field path under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let p = |f: &str| format!("{prefix}{f}");
        let positive = |v: f64, f: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(p(f), format!("must be > 0, got {v}")))
            }
        };
        positive(self.t1_e, "t1_e")?;
        positive(self.t1_f, "t1_f")?;
        positive(self.snr, "snr")?;
        positive(self.weak_snr, "weak_snr")?;
        positive(self.sample_rate, "sample_rate")?;
        positive(self.cycle_time, "cycle_time")?;
        if !(0.0..0.5).contains(&self.p_therm) {
            return Err(Error::config(p("p_therm"), "must satisfy 0 <= p_therm < 0.5"));
        }
        if !(0.0..1.0).contains(&self.flip_error) {
            return Err(Error::config(p("flip_error"), "must satisfy 0 <= flip_error < 1"));
        }
        if self.readout_len == 0 {
            return Err(Error::config(p("readout_len"), "must be > 0"));
        }
        if self.levels != 2 && self.levels != 3 {
            return Err(Error::config(p("levels"), "must be 2 or 3"));
        }
        if self.max_cycles == 0 {
            return Err(Error::config(p("max_cycles"), "must be >= 1"));
        }
        if !(self.verify_delay >= 0.0) {
            return Err(Error::config(p("verify_delay"), "must be >= 0"));
        }
        if !(self.feedback_latency >= 0.0) {
            return Err(Error::config(p("feedback_latency"), "must be >= 0"));
        }
        if self.readout_duration() + self.feedback_latency > self.cycle_time * (1.0 + 1e-12) {
            return Err(Error::config(
                p("cycle_time"),
                "must cover readout duration plus feedback latency",
            ));
        }
        if self.tabulated.is_none() && self.mean_traces.csv.is_none() {
            positive(self.mean_traces.ring_up_time, "mean_traces.ring_up_time")?;
        }
        Ok(())
    }

    /// Resolve the mean traces (tabulated, CSV or analytic) and check lengths.
    pub fn resolve_mean_traces(&self, prefix: &str) -> Result<MeanTraces> {
        let traces = if let Some(t) = &self.tabulated {
            t.clone()
        } else if let Some(path) = &self.mean_traces.csv {
            MeanTraces::from_csv(path)?
        } else {
            MeanTraces::ring_up(&self.mean_traces, self.readout_len, self.sample_rate, self.levels)
        };
        let path = format!("{prefix}mean_traces");
        let mut all = vec![&traces.g, &traces.e];
        if self.levels == 3 {
            match &traces.f {
                Some(f) => all.push(f),
                None => return Err(Error::config(path, "three-level mode needs an f trace")),
            }
        }
        for t in all {
            if t.i.len() != self.readout_len || t.q.len() != self.readout_len {
                return Err(Error::config(
                    path,
                    format!(
                        "trace length {}/{} differs from readout_len {}",
                        t.i.len(),
                        t.q.len(),
                        self.readout_len
                    ),
                ));
            }
            if t.i.iter().chain(&t.q).any(|v| !v.is_finite()) {
                return Err(Error::config(path, "non-finite mean trace value"));
            }
        }
        Ok(traces)
    }

    /// Load from a TOML file; a `csv` mean-trace path is resolved relative to it.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: EnvConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.rebase_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub(crate) fn rebase_paths(&mut self, base: &Path) {
        if let Some(csv) = &self.mean_traces.csv {
            if csv.is_relative() {
                self.mean_traces.csv = Some(base.join(csv));
            }
        }
    }
}
