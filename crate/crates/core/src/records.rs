//! CSV output for per-batch records and forgetting checkpoints.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a value
//! back gives the identical `f64`; very small or large magnitudes use
//! exponent notation. Rows end in a bare `\n`.

use std::io::Write;

use crate::engine::{BatchRecord, ForgettingRecord};
use crate::error::{Error, Result};

pub const FORGETTING_HEADER: [&str; 5] = ["checkpoint", "source_id", "adapted_err", "pristine_err", "param_drift"];

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Header for per-batch rows over `d` mixture components and `n` sources.
pub fn batch_header(d: usize, n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "segment".to_string()];
    h.extend((0..d).map(|i| format!("pi_{i}")));
    h.extend((0..n).map(|j| format!("winit_{j}")));
    h.extend((0..n).map(|j| format!("wstar_{j}")));
    for s in ["k", "alpha_best", "entropy_init", "entropy_final", "meta_err"] {
        h.push(s.to_string());
    }
    h.extend((0..n).map(|j| format!("src{j}_err")));
    for s in ["best_err", "worst_err", "uniform_err"] {
        h.push(s.to_string());
    }
    h
}

pub fn write_batch_csv<W: Write>(out: W, records: &[BatchRecord]) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidParam("no batch records to write".into()))?;
    let (d, n) = (first.pi.len(), first.w_star.len());
    let mut w = writer(out);
    w.write_record(batch_header(d, n))?;
    for r in records {
        if r.pi.len() != d || r.w_init.len() != n || r.w_star.len() != n || r.src_errs.len() != n {
            return Err(Error::Dimension(format!("record {} has inconsistent widths", r.t)));
        }
        let mut row = vec![r.t.to_string(), r.segment.to_string()];
        row.extend(r.pi.iter().copied().map(num));
        row.extend(r.w_init.iter().copied().map(num));
        row.extend(r.w_star.iter().copied().map(num));
        row.push(r.k.to_string());
        row.extend([r.alpha_best, r.entropy_init, r.entropy_final, r.meta_err].map(num));
        row.extend(r.src_errs.iter().copied().map(num));
        row.extend([r.best_err, r.worst_err, r.uniform_err].map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forgetting_csv<W: Write>(out: W, records: &[ForgettingRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(FORGETTING_HEADER)?;
    for r in records {
        w.write_record([
            r.checkpoint.to_string(),
            r.source_id.to_string(),
            num(r.adapted_err),
            num(r.pristine_err),
            num(r.param_drift),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize) -> BatchRecord {
        BatchRecord {
            t,
            segment: 0,
            pi: vec![0.5, 0.5],
            w_init: vec![0.1, 0.9],
            w_star: vec![1.0 / 3.0, 2.0 / 3.0],
            k: 1,
            alpha_best: 0.2345,
            entropy_init: 1e-20,
            entropy_final: 0.0,
            meta_err: 0.0078125,
            src_errs: vec![0.25, 0.5],
            best_err: 0.25,
            worst_err: 0.5,
            uniform_err: 0.125,
        }
    }

    #[test]
    fn batch_csv_layout() {
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &[record(0), record(1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,segment,pi_0,pi_1,winit_0,winit_1,wstar_0,wstar_1,k,alpha_best,entropy_init,\
             entropy_final,meta_err,src0_err,src1_err,best_err,worst_err,uniform_err"
        );
        assert_eq!(lines.len(), 3);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells[6].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(cells[10].parse::<f64>().unwrap(), 1e-20);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [
            0.0,
            -0.0,
            1.0,
            0.1 + 0.2,
            1e-4,
            9.99e-5,
            1.4023201261838175e-24,
            3e20,
            -2.5e-7,
            f64::MIN_POSITIVE,
        ] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
            assert!(s.len() <= 24, "{s}");
        }
        assert_eq!(num(1e-24), "1e-24");
        assert_eq!(num(0.25), "0.25");
    }

    #[test]
    fn empty_or_ragged_batches_rejected() {
        assert!(write_batch_csv(Vec::new(), &[]).is_err());
        let mut bad = record(1);
        bad.src_errs.pop();
        assert!(write_batch_csv(Vec::new(), &[record(0), bad]).is_err());
    }

    #[test]
    fn forgetting_csv_layout() {
        let mut buf = Vec::new();
        let r = ForgettingRecord {
            checkpoint: 2,
            source_id: 1,
            adapted_err: 0.0105,
            pristine_err: 0.01,
            param_drift: 0.1 + 0.2,
        };
        write_forgetting_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "checkpoint,source_id,adapted_err,pristine_err,param_drift\n2,1,0.0105,0.01,0.30000000000000004\n"
        );
    }
}
