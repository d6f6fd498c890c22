use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(usize),
    Bool(bool),
    Text(String),
    Na,
}

impl Cell {
    /// `Na` for errors and non-finite values.
    pub fn num_or_na<E>(v: std::result::Result<f64, E>) -> Cell {
        match v {
            Ok(x) if x.is_finite() => Cell::Num(x),
            _ => Cell::Na,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) if x.is_finite() => format_sig12(*x),
            Cell::Num(_) | Cell::Na => "NA".to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Twelve significant digits in scientific notation.
pub fn format_sig12(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let j = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }
}
