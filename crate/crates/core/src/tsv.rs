//! Small helpers for the tab-separated report formats.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
}

pub fn fixed6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

/// Parses a matrix written with a header row of column labels (after one
/// corner cell) and one labelled row per language. Row and column labels
/// must agree in order.
pub fn parse_square_matrix(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), TsvError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| TsvError::Format("empty matrix".into()))?;
    let columns: Vec<String> = header.split('\t').skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let mut cells = line.split('\t');
        let label = cells.next().unwrap_or_default().to_string();
        let values = cells
            .map(|c| {
                c.trim().parse::<f64>().map_err(|_| TsvError::Parse {
                    line: idx + 1,
                    message: format!("not a number: {c:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != columns.len() {
            return Err(TsvError::Parse {
                line: idx + 1,
                message: format!("expected {} values, found {}", columns.len(), values.len()),
            });
        }
        labels.push(label);
        rows.push(values);
    }
    if labels != columns {
        return Err(TsvError::Format(
            "row labels do not match column labels".into(),
        ));
    }
    Ok((labels, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labelled_matrix() {
        let (l, m) = parse_square_matrix("x\ta\tb\na\t0\t1.5\nb\t1.5\t0\n").unwrap();
        assert_eq!(l, vec!["a", "b"]);
        assert_eq!(m, vec![vec![0.0, 1.5], vec![1.5, 0.0]]);
        assert!(parse_square_matrix("x\ta\tb\nb\t0\t1\na\t1\t0\n").is_err());
        assert!(parse_square_matrix("x\ta\na\tq\n").is_err());
    }

    #[test]
    fn fixed_point() {
        assert_eq!(fixed6(0.7), "0.700000");
        assert_eq!(fixed4(2.0 / 3.0), "0.6667");
    }
}
