//! Versioned CSV tables and JSON summaries.
//!
//! Every CSV starts with a preamble line
//! `# schema=<name>/<version> config_sha256=<hex> seed=<n>` followed by the
//! column header. Readers reject files whose schema, version or columns
//! differ from what they expect.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::mpsc::{channel, Sender};
use std::thread::JoinHandle;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

pub const TRAJECTORY: Schema = Schema {
    name: "ctqd.trajectory",
    version: 1,
    columns: &["t_us", "p00", "p01", "p10", "p11", "p_rydberg", "phase_relation_rad"],
};

pub const MC_RUNS: Schema = Schema { name: "ctqd.mc_runs", version: 1, columns: &["run", "fidelity"] };

pub const FIDELITY_SCAN: Schema = Schema {
    name: "ctqd.fidelity_scan",
    version: 1,
    columns: &[
        "index",
        "gate_time_us",
        "omega0_mhz",
        "phi_r_pi",
        "phi_big_r_pi",
        "f0",
        "f_s",
        "f",
        "sigma_f",
        "n_runs",
        "status",
    ],
};

pub const ISO_FIDELITY: Schema = Schema {
    name: "ctqd.iso_fidelity",
    version: 1,
    columns: &["index", "gate_time_us", "omega0_mhz", "omega_max_mhz", "f0", "status"],
};

pub const SPEEDUP: Schema = Schema {
    name: "ctqd.speedup",
    version: 1,
    columns: &["index", "omega_max_mhz", "t_adiabatic_us", "t_ctqd_us", "speedup", "status"],
};

pub const XY: Schema = Schema { name: "ctqd.xy", version: 1, columns: &["x", "y"] };

pub const WAVEFORM: Schema = Schema {
    name: "ctqd.waveform",
    version: 1,
    columns: &["t_us", "segment", "omega_mhz", "delta_mhz", "phase_rad", "omega_b_mhz", "omega_r_mhz", "delta_b_mhz"],
};

pub const FIT_PARAMS: Schema = Schema { name: "ctqd.fit_params", version: 1, columns: &["name", "value", "sigma"] };

/// Replay information stamped on every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Schema {
    pub fn tag(&self) -> String {
        format!("{}/{}", self.name, self.version)
    }

    fn preamble(&self, prov: &Provenance) -> String {
        format!("# schema={} config_sha256={} seed={}", self.tag(), prov.config_sha256, prov.seed)
    }
}

/// Formats a float for CSV; NaN becomes an empty cell.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

/// Parsed preamble of an existing table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preamble {
    pub schema: String,
    pub provenance: Provenance,
}

fn parse_preamble(line: &str) -> Result<Preamble> {
    let body = line.strip_prefix("# ").context("missing '# schema=...' preamble line")?;
    let (mut schema, mut hash, mut seed) = (None, None, None);
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("schema", v)) => schema = Some(v.to_string()),
            Some(("config_sha256", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = Some(v.parse::<u64>().context("seed in preamble is not an integer")?),
            _ => bail!("unexpected preamble field '{field}'"),
        }
    }
    Ok(Preamble {
        schema: schema.context("preamble lacks schema")?,
        provenance: Provenance {
            config_sha256: hash.context("preamble lacks config_sha256")?,
            seed: seed.context("preamble lacks seed")?,
        },
    })
}

/// Reads the preamble and header of `path` and checks them against one of
/// the `accepted` schemas.
pub fn read_table(path: &Path, accepted: &[Schema]) -> Result<(Schema, Provenance, Vec<csv::StringRecord>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let pre = parse_preamble(first.trim_end()).with_context(|| format!("in {}", path.display()))?;
    let Some(schema) = accepted.iter().find(|s| s.tag() == pre.schema) else {
        let want: Vec<String> = accepted.iter().map(Schema::tag).collect();
        bail!("schema mismatch in {}: found {}, expected one of {}", path.display(), pre.schema, want.join(", "));
    };
    let mut csv = csv::ReaderBuilder::new().from_reader(reader);
    let header = csv.headers().with_context(|| format!("reading header of {}", path.display()))?.clone();
    if header.iter().ne(schema.columns.iter().copied()) {
        bail!(
            "schema mismatch in {}: columns {:?} do not match {} ({:?})",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            schema.tag(),
            schema.columns
        );
    }
    let rows = csv
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("malformed row in {}", path.display()))?;
    Ok((*schema, pre.provenance, rows))
}

/// Writes a whole table at once.
pub fn write_table(path: &Path, schema: Schema, prov: &Provenance, rows: &[Vec<String>]) -> Result<()> {
    let mut w = TableWriter::create(path, schema, prov)?;
    for r in rows {
        w.row(r)?;
    }
    Ok(())
}

pub struct TableWriter {
    csv: csv::Writer<File>,
    width: usize,
}

impl TableWriter {
    pub fn create(path: &Path, schema: Schema, prov: &Provenance) -> Result<Self> {
        let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{}", schema.preamble(prov))?;
        let mut csv = csv::Writer::from_writer(file);
        csv.write_record(schema.columns)?;
        csv.flush()?;
        Ok(Self { csv, width: schema.columns.len() })
    }

    /// Continues an existing table after checking its preamble and header.
    pub fn append(path: &Path, schema: Schema, prov: &Provenance) -> Result<(Self, Vec<csv::StringRecord>)> {
        let (_, found, rows) = read_table(path, &[schema])?;
        if &found != prov {
            bail!(
                "{} was written by a different run (config_sha256={} seed={}); pass --overwrite to start over",
                path.display(),
                found.config_sha256,
                found.seed
            );
        }
        let file = OpenOptions::new().append(true).open(path)?;
        let csv = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        Ok((Self { csv, width: schema.columns.len() }, rows))
    }

    /// Writes and flushes one row.
    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        if fields.len() != self.width {
            bail!("row has {} fields, table has {}", fields.len(), self.width);
        }
        self.csv.write_record(fields)?;
        self.csv.flush()?;
        Ok(())
    }
}

/// Channel into a thread that owns the table and writes rows as they arrive.
pub struct RowSink {
    tx: Sender<Vec<String>>,
    handle: JoinHandle<Result<usize>>,
}

impl RowSink {
    pub fn spawn(mut writer: TableWriter) -> Self {
        let (tx, rx) = channel::<Vec<String>>();
        let handle = std::thread::spawn(move || {
            let mut n = 0;
            for row in rx {
                writer.row(&row)?;
                n += 1;
            }
            Ok(n)
        });
        Self { tx, handle }
    }

    pub fn sender(&self) -> Sender<Vec<String>> {
        self.tx.clone()
    }

    /// Closes the channel and returns the number of rows written.
    pub fn finish(self) -> Result<usize> {
        drop(self.tx);
        self.handle.join().map_err(|_| anyhow::anyhow!("writer thread panicked"))?
    }
}

/// JSON summary with the replay stamp at top level.
#[derive(Serialize)]
pub struct Summary<'a, T: Serialize> {
    pub schema: String,
    #[serde(flatten)]
    pub provenance: &'a Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, prov: &Provenance, body: T) -> Result<()> {
    let s = Summary { schema: format!("{kind}/1"), provenance: prov, body };
    let text = serde_json::to_string_pretty(&s)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
