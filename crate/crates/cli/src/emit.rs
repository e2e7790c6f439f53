//! Serialization of results to JSON and CSV.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cvqkd::montecarlo::{ConsistencyCheck, KsResult};
use cvqkd::postselect::{InfoMapGrid, OptimizeResult};
use cvqkd::{KeyRateResult, SessionStats, SignalRecord};
use serde::Serialize;

pub const MAP_HEADER: &str = "E,x,delta_I";
pub const EVENTS_HEADER: &str = "amp_q,amp_p,basis,bit,x_out,eve_correct,selected";
pub const KEYRATE_HEADER: &str = "rate,selected_mass,d,eta,e_max,x_max,n_e,n_x,converged";

/// Output of `optimize`: the optimum and the rate at the requested `d`.
#[derive(Debug, Serialize)]
pub struct OptimizeReport<'a> {
    pub d_star: f64,
    pub on_boundary: bool,
    pub unimodal: bool,
    pub result: &'a KeyRateResult,
    pub reference: &'a KeyRateResult,
    pub scan: &'a [cvqkd::postselect::ScanPoint],
}

impl<'a> OptimizeReport<'a> {
    pub fn new(opt: &'a OptimizeResult, reference: &'a KeyRateResult) -> Self {
        Self {
            d_star: opt.d_star,
            on_boundary: opt.on_boundary,
            unimodal: opt.unimodal,
            result: &opt.result,
            reference,
            scan: &opt.scan,
        }
    }
}

/// Output of `simulate`.
#[derive(Debug, Serialize)]
pub struct SimulationReport<'a> {
    pub stats: &'a SessionStats,
    pub analytic_rate: f64,
    pub rate_check: ConsistencyCheck,
    pub error_check: Option<ConsistencyCheck>,
    pub amplitude_ks: KsResult,
}

/// Writes to `path`, or stdout when `None`.
pub struct Sink {
    inner: Box<dyn Write>,
    path: Option<PathBuf>,
}

impl Sink {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let inner: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create output file {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        Ok(Self {
            inner,
            path: path.map(Path::to_path_buf),
        })
    }

    fn context(&self) -> String {
        match &self.path {
            Some(p) => format!("writing {}", p.display()),
            None => "writing to stdout".to_string(),
        }
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        let ctx = self.context();
        self.inner.write_all(bytes).with_context(|| ctx)
    }

    pub fn finish(mut self) -> Result<()> {
        let ctx = self.context();
        self.inner.flush().with_context(|| ctx)
    }
}

pub fn json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Seventeen significant digits.
fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn keyrate_csv(r: &KeyRateResult) -> String {
    format!(
        "{KEYRATE_HEADER}\n{},{},{},{},{},{},{},{},{}\n",
        sig17(r.rate),
        sig17(r.selected_mass),
        sig17(r.d_used),
        sig17(r.eta_used),
        sig17(r.grid.e_max),
        sig17(r.grid.x_max),
        r.grid.n_e,
        r.grid.n_x,
        r.converged
    )
}

/// Row-major `E,x,delta_I` table, one row per grid node.
pub fn map_csv<W: Write>(map: &InfoMapGrid, out: &mut W) -> io::Result<()> {
    writeln!(out, "{MAP_HEADER}")?;
    for (i, &e) in map.e.iter().enumerate() {
        let e = sig17(e);
        for (&x, &v) in map.x.iter().zip(map.row(i)) {
            writeln!(out, "{e},{},{}", sig17(x), sig17(v))?;
        }
    }
    Ok(())
}

/// Streams Monte Carlo events to a CSV file.
pub struct EventWriter {
    out: BufWriter<File>,
    path: PathBuf,
    error: Option<io::Error>,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("cannot create event log {}", path.display()))?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            error: None,
        };
        if let Err(e) = writeln!(w.out, "{EVENTS_HEADER}") {
            w.error = Some(e);
        }
        Ok(w)
    }

    pub fn record(&mut self, r: &SignalRecord) {
        if self.error.is_some() {
            return;
        }
        let res = writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            r.amp_q,
            r.amp_p,
            r.basis,
            r.bit,
            r.x_out,
            u8::from(r.eve_correct),
            u8::from(r.selected)
        );
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e).with_context(|| format!("writing event log {}", self.path.display()));
        }
        self.out
            .flush()
            .with_context(|| format!("writing event log {}", self.path.display()))
    }
}
