//! CSV exports of counter states.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::reservoir::{build_reservoir, ReservoirConfig, StateMatrix};

/// Input history depth attached to every exported state row.
pub const HISTORY: usize = 4;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Long format: `step,neuron_index,c_n,c_p,c`.
pub fn state_dump_csv(states: &StateMatrix) -> String {
    let mut out = String::from("step,neuron_index,c_n,c_p,c\n");
    for (step, s) in states.samples.iter().enumerate() {
        for i in 0..states.neurons {
            let _ = writeln!(out, "{step},{i},{},{},{}", s.c_neg[i], s.c_pos[i], s.value(i));
        }
    }
    out
}

/// Wide format: `u(n), u(n−1), u(n−2), u(n−3)` followed by the N state
/// values of step n. History before the first step is written as `NA`.
pub fn history_csv(inputs: &[f64], states: &StateMatrix) -> Result<String> {
    if inputs.len() != states.steps() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs for {} state samples",
            inputs.len(),
            states.steps()
        )));
    }
    let mut out = String::from("u_n,u_n1,u_n2,u_n3");
    for i in 0..states.neurons {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (n, s) in states.samples.iter().enumerate() {
        for lag in 0..HISTORY {
            if lag > 0 {
                out.push(',');
            }
            match n.checked_sub(lag) {
                Some(m) => {
                    let _ = write!(out, "{}", inputs[m]);
                }
                None => out.push_str("NA"),
            }
        }
        for v in s.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Runs a fresh reservoir on a scalar input sequence and writes the history
/// CSV to `path`. Returns the recorded states.
pub fn export_states(config: &ReservoirConfig, inputs: &[f64], path: &Path) -> Result<StateMatrix> {
    let mut reservoir = build_reservoir(config)?;
    let states = reservoir.run_scalar_sequence(inputs)?;
    write_atomic(path, history_csv(inputs, &states)?.as_bytes())?;
    Ok(states)
}
