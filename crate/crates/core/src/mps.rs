//! Fixed-column MPS export for cross-checking with external solvers.
//!
//! Rows are named `R0000000`.., columns `X0000000`.., the objective row `OBJ`.
//! MPS minimizes, so the objective coefficients are written negated and
//! the file says so in a comment line. Numbers are written in the shortest
//! form that fits the 12-character field.

use std::fmt::Write as _;

use crate::simplex::{LinearProgram, Sense};

fn number(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        return plain;
    }
    for prec in (0..=10).rev() {
        let s = format!("{v:.prec$e}");
        if s.len() <= 12 {
            return s;
        }
    }
    format!("{v:.0e}")
}

fn row_name(i: usize) -> String {
    format!("R{i:07}")
}

fn col_name(j: usize) -> String {
    format!("X{j:07}")
}

/// Field layout: 2-3 type, 5-12 name, 15-22 name, 25-36 number,
/// 40-47 name, 50-61 number (1-based columns).
fn entry(out: &mut String, a: &str, b: &str, value: f64) {
    let _ = writeln!(out, "    {a:<8}  {b:<8}  {:>12}", number(value));
}

pub fn write_mps(lp: &LinearProgram, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "* maximization problem: objective coefficients negated");
    let _ = writeln!(out, "NAME          {name}");
    out.push_str("ROWS\n");
    out.push_str(" N  OBJ\n");
    for (i, c) in lp.constraints().iter().enumerate() {
        let t = match c.sense {
            Sense::Le => "L",
            Sense::Ge => "G",
            Sense::Eq => "E",
        };
        let _ = writeln!(out, " {t}  {}", row_name(i));
    }
    out.push_str("COLUMNS\n");
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.n_vars()];
    for (i, c) in lp.constraints().iter().enumerate() {
        for &(j, v) in &c.coeffs {
            by_col[j].push((i, v));
        }
    }
    for (j, entries) in by_col.iter_mut().enumerate() {
        entries.sort_by_key(|e| e.0);
        let cname = col_name(j);
        let obj = lp.objective()[j];
        if obj != 0.0 {
            entry(&mut out, &cname, "OBJ", -obj);
        }
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, v) in entries.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        for (i, v) in merged {
            if v != 0.0 {
                entry(&mut out, &cname, &row_name(i), v);
            }
        }
    }
    out.push_str("RHS\n");
    for (i, c) in lp.constraints().iter().enumerate() {
        if c.rhs != 0.0 {
            entry(&mut out, "RHS", &row_name(i), c.rhs);
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_program_layout() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective_coeff(0, 3.0);
        lp.add_constraint(vec![(0, 1.0), (1, 2.5)], Sense::Le, 4.0);
        lp.add_constraint(vec![(1, 1.0)], Sense::Eq, 1.0);
        let text = write_mps(&lp, "TEST");
        let expected = "\
* maximization problem: objective coefficients negated
NAME          TEST
ROWS
 N  OBJ
 L  R0000000
 E  R0000001
COLUMNS
    X0000000  OBJ                 -3
    X0000000  R0000000             1
    X0000001  R0000000           2.5
    X0000001  R0000001             1
RHS
    RHS       R0000000             4
    RHS       R0000001             1
ENDATA
";
        assert_eq!(text, expected);
        // number field ends at column 36
        let line = text.lines().find(|l| l.contains("2.5")).unwrap();
        assert_eq!(line.len(), 36);
    }

    #[test]
    fn long_numbers_fit_field() {
        for v in [1.0 / 3.0, -123456.789012345, 1e-300, -2.0f64.sqrt() * 1e10] {
            let s = number(v);
            assert!(s.len() <= 12, "{s}");
            let back: f64 = s.parse().unwrap();
            assert!((back - v).abs() <= 1e-6 * v.abs());
        }
    }
}
