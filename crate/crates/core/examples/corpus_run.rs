//! Runs a corpus configuration through the driver and reads the outputs back.

use bubblesim::corpus::entry;
use bubblesim::driver::{run, Overrides, LEDGER_FILE, TRAJECTORY_FILE};
use bubblesim::io::{read_ledger, read_trajectory, read_trajectory_header};

fn main() -> bubblesim::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "viscous_single".into());
    let e = entry(&name).ok_or_else(|| bubblesim::Error::InvalidConfig(format!("no corpus entry {name}")))?;
    let config = e.config()?;
    let out = std::env::temp_dir().join(format!("bubblesim-{name}"));
    let outcome = run(&config, e.text, &out, Overrides::default())?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    let path = out.join(TRAJECTORY_FILE);
    if path.exists() {
        let header = read_trajectory_header(&path)?;
        let records = read_trajectory(&path)?;
        println!("{} records, labels {:?}, config sha256 {}", records.len(), header.coefficient_labels, header.provenance.config_sha256);
        let e0 = records[0].ledger.map(|l| l.kinetic + l.potential + l.dissipation + l.slack).unwrap_or(0.0);
        let ledger = read_ledger(&out.join(LEDGER_FILE), e0)?;
        println!("E0 = {e0:.10}, min slack {:.2e}", ledger.min_slack());
    }
    println!("exit code {}", outcome.exit_code());
    Ok(())
}
