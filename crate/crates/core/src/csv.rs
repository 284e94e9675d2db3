//! CSV schemas for curves, case dumps, gain tables and rankings.
//!
//! Reals are written with 17 significant digits (`{:.16e}`), which parses
//! back to the identical `f64`.

use std::io::{self, BufRead, Write};

use crate::simlab::{CurveRecord, Ranking, RegressionCase};

pub const CURVE_HEADER: &str = "loss,iteration,mean_iou_loss,mean_training_loss";
pub const CASES_HEADER: &str = "id,ax,ay,aw,ah,tx,ty,tw,th";
pub const GAIN_HEADER: &str = "beta,r";
pub const RANKING_HEADER: &str = "rank,loss,final_mean_iou_loss,threshold,iterations_to_threshold";

/// Round-trip rendering of a real.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_curve<W: Write>(mut out: W, curve: &[CurveRecord]) -> io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in curve {
        writeln!(
            out,
            "{},{},{},{}",
            r.loss_name,
            r.iteration,
            real(r.mean_iou_loss),
            real(r.mean_training_loss)
        )?;
    }
    Ok(())
}

pub fn write_cases<W: Write>(mut out: W, cases: &[RegressionCase]) -> io::Result<()> {
    writeln!(out, "{CASES_HEADER}")?;
    for c in cases {
        let [ax, ay, aw, ah] = c.anchor.as_array().map(real);
        let [tx, ty, tw, th] = c.target.as_array().map(real);
        writeln!(out, "{},{ax},{ay},{aw},{ah},{tx},{ty},{tw},{th}", c.id)?;
    }
    Ok(())
}

pub fn write_gain<W: Write>(mut out: W, table: &[(f64, f64)]) -> io::Result<()> {
    writeln!(out, "{GAIN_HEADER}")?;
    for &(beta, r) in table {
        writeln!(out, "{},{}", real(beta), real(r))?;
    }
    Ok(())
}

pub fn write_ranking<W: Write>(mut out: W, ranking: &Ranking) -> io::Result<()> {
    writeln!(out, "{RANKING_HEADER}")?;
    for (i, row) in ranking.rows.iter().enumerate() {
        let reached = row
            .iterations_to_threshold
            .map_or_else(String::new, |it| it.to_string());
        writeln!(
            out,
            "{},{},{},{},{reached}",
            i + 1,
            row.loss,
            real(row.final_mean_iou_loss),
            real(ranking.threshold)
        )?;
    }
    Ok(())
}

fn bad_data(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

fn rows<R: BufRead>(input: R, header: &str, width: usize) -> io::Result<Vec<Vec<String>>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h == header => {}
        other => return Err(bad_data(format!("expected header {header:?}, got {other:?}"))),
    }
    lines
        .map(|line| {
            let line = line?;
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            if fields.len() != width {
                return Err(bad_data(format!("expected {width} fields: {line:?}")));
            }
            Ok(fields)
        })
        .collect()
}

fn num<T: std::str::FromStr>(s: &str) -> io::Result<T> {
    s.parse().map_err(|_| bad_data(format!("not a number: {s:?}")))
}

pub fn read_curve<R: BufRead>(input: R) -> io::Result<Vec<CurveRecord>> {
    rows(input, CURVE_HEADER, 4)?
        .into_iter()
        .map(|f| {
            Ok(CurveRecord {
                loss_name: f[0].clone(),
                iteration: num(&f[1])?,
                mean_iou_loss: num(&f[2])?,
                mean_training_loss: num(&f[3])?,
            })
        })
        .collect()
}

pub fn read_gain<R: BufRead>(input: R) -> io::Result<Vec<(f64, f64)>> {
    rows(input, GAIN_HEADER, 2)?
        .into_iter()
        .map(|f| Ok((num(&f[0])?, num(&f[1])?)))
        .collect()
}

pub fn read_cases<R: BufRead>(input: R) -> io::Result<Vec<RegressionCase>> {
    rows(input, CASES_HEADER, 9)?
        .into_iter()
        .map(|f| {
            let v: Vec<f64> = f[1..].iter().map(|s| num(s)).collect::<io::Result<_>>()?;
            let make = |o: usize| crate::geometry::BBox {
                x: v[o],
                y: v[o + 1],
                w: v[o + 2],
                h: v[o + 3],
            };
            Ok(RegressionCase {
                id: num(&f[0])?,
                anchor: make(0),
                target: make(4),
            })
        })
        .collect()
}
