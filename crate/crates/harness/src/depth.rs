//! Circuit-depth table across ansatz configurations and register widths.

use qrc_core::quantum::{build_step_circuit, AnsatzConfig, ConfigId};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub config: ConfigId,
    pub qubits: usize,
    pub reservoir_size: usize,
    pub depth: usize,
    pub gates: usize,
}

/// Depth and gate count of every configuration's step circuit for a fixed
/// input width. Angle values do not affect the layering, so placeholder data
/// drives the builders.
pub fn depth_table(
    n_u: usize,
    min_qubits: usize,
    max_qubits: usize,
) -> Result<Vec<DepthRow>, HarnessError> {
    if n_u == 0 || min_qubits == 0 || max_qubits < min_qubits {
        return Err(HarnessError::Protocol(format!(
            "bad depth table range: n_u={n_u}, qubits {min_qubits}..={max_qubits}"
        )));
    }
    let u = vec![0.5f64; n_u];
    let mut rows = Vec::new();
    for config in ConfigId::ALL {
        for n in min_qubits..=max_qubits {
            let cfg = AnsatzConfig::<f64>::new(config, n, 0);
            let r = if config.has_recurrence() {
                vec![0.5f64; 1 << n]
            } else {
                Vec::new()
            };
            let circuit = build_step_circuit(&cfg, &r, &u)?;
            rows.push(DepthRow {
                config,
                qubits: n,
                reservoir_size: 1 << n,
                depth: circuit.depth(),
                gates: circuit.gates().len(),
            });
        }
    }
    Ok(rows)
}

pub fn depth_table_to_csv(rows: &[DepthRow]) -> String {
    let mut out = String::from("config,qubits,reservoir_size,depth,gates\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.config, r.qubits, r.reservoir_size, r.depth, r.gates
        ));
    }
    out
}
