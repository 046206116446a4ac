//! Deterministic rendering of result records.

use serde::Serialize;

/// 17 significant digits, enough to round-trip any f64 bit pattern.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records always serialize");
    s.push('\n');
    s
}

/// One sweep point. Field order is the CSV column order.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub sweep_value: String,
    pub p_e: f64,
    pub p_e_hat: Option<f64>,
    pub rel_err: Option<f64>,
    pub tail_mass: f64,
    pub pi_residual: f64,
    pub seed: u64,
    pub slots: u64,
}

pub const SWEEP_HEADER: &str = "sweep_value,p_e,p_e_hat,rel_err,tail_mass,pi_residual,seed,slots";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let opt = |v: &Option<f64>| v.map(float17).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.sweep_value,
            float17(r.p_e),
            opt(&r.p_e_hat),
            opt(&r.rel_err),
            float17(r.tail_mass),
            float17(r.pi_residual),
            r.seed,
            r.slots
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_is_17_significant_digits() {
        assert_eq!(float17(0.1), "1.0000000000000001e-1");
        assert_eq!(float17(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn csv_rows_render_optionals_empty() {
        let rows = vec![SweepRow {
            sweep_value: "3".into(),
            p_e: 0.5,
            p_e_hat: None,
            rel_err: None,
            tail_mass: 0.0,
            pi_residual: 1e-15,
            seed: 7,
            slots: 100,
        }];
        let csv = sweep_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("3,5.0000000000000000e-1,,,"));
    }
}
