//! CSV ingestion. A header row names the columns; a roles spec maps them to
//! model slots:
//!
//! ```text
//! y=<col>,area=<col>,z=<col>[,t=<col1+col2>][,s=<col1+col2>]
//! ```
//!
//! The misclassified categorical column is coded 1..=K by sorted distinct
//! values (numeric order when every value parses as a number, lexicographic
//! otherwise) and the coding table is emitted alongside the outputs. Area
//! labels are coded the same way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use sae_core::model::{validate_dataset, RawData};
use sae_core::Dataset;

/// Which column plays which role, by header name.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRoles {
    pub y: String,
    pub area: String,
    pub z: String,
    pub t: Vec<String>,
    pub s: Vec<String>,
}

impl ColumnRoles {
    pub fn parse(spec: &str) -> Result<Self> {
        let mut y = None;
        let mut area = None;
        let mut z = None;
        let mut t = Vec::new();
        let mut s = Vec::new();
        for part in spec.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let Some((role, cols)) = part.split_once('=') else {
                bail!("roles: expected `role=column`, got `{part}`");
            };
            let cols: Vec<String> = cols.split('+').map(|c| c.trim().to_string()).collect();
            match role.trim() {
                "y" => assign_single("y", &mut y, cols)?,
                "area" => assign_single("area", &mut area, cols)?,
                "z" => assign_single("z", &mut z, cols)?,
                "t" => t.extend(cols),
                "s" => s.extend(cols),
                other => bail!(
                    "roles: unknown role `{other}` (expected y, area, z, t or s)"
                ),
            }
        }
        Ok(ColumnRoles {
            y: y.ok_or_else(|| anyhow::anyhow!("roles: missing `y=<column>`"))?,
            area: area.ok_or_else(|| anyhow::anyhow!("roles: missing `area=<column>`"))?,
            z: z.ok_or_else(|| anyhow::anyhow!("roles: missing `z=<column>`"))?,
            t,
            s,
        })
    }
}

fn assign_single(role: &str, slot: &mut Option<String>, mut cols: Vec<String>) -> Result<()> {
    if slot.is_some() {
        bail!("roles: role `{role}` given twice");
    }
    if cols.len() != 1 {
        bail!("roles: role `{role}` takes exactly one column");
    }
    *slot = Some(cols.remove(0));
    Ok(())
}

/// The deterministic code-to-label mappings produced during ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingTables {
    /// Category labels; code k (1-based) maps to `z_levels[k-1]`.
    pub z_levels: Vec<String>,
    pub roles: ColumnRoles,
}

/// Sort distinct raw labels: numerically when every label parses as a number,
/// lexicographically otherwise.
fn sorted_levels(values: &[String]) -> Vec<String> {
    let mut distinct: Vec<String> = values.to_vec();
    distinct.sort();
    distinct.dedup();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(distinct).collect();
        paired.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite labels"));
        paired.into_iter().map(|(_, label)| label).collect()
    } else {
        distinct
    }
}

/// Load a CSV into a validated [`Dataset`] plus its coding tables.
pub fn load_csv(path: &Path, roles: &ColumnRoles) -> Result<(Dataset, CodingTables)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .context("missing header row")?
        .iter()
        .map(str::to_string)
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("column `{name}` not found in {}", path.display()))
    };
    let y_col = col(&roles.y)?;
    let area_col = col(&roles.area)?;
    let z_col = col(&roles.z)?;
    let t_cols: Vec<usize> = roles.t.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let s_cols: Vec<usize> = roles.s.iter().map(|n| col(n)).collect::<Result<_>>()?;

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut s = Vec::new();
    let mut z_raw = Vec::new();
    let mut area_raw = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("row {}", row_idx + 1))?;
        let cell = |c: usize| -> &str { record.get(c).unwrap_or("") };
        let number = |c: usize, name: &str| -> Result<f64> {
            cell(c).parse::<f64>().map_err(|_| {
                anyhow::anyhow!(
                    "row {}: cannot parse `{}` in column `{name}` as a number",
                    row_idx + 1,
                    cell(c)
                )
            })
        };
        y.push(number(y_col, &roles.y)?);
        t.push(
            t_cols
                .iter()
                .zip(&roles.t)
                .map(|(&c, name)| number(c, name))
                .collect::<Result<Vec<f64>>>()?,
        );
        s.push(
            s_cols
                .iter()
                .zip(&roles.s)
                .map(|(&c, name)| number(c, name))
                .collect::<Result<Vec<f64>>>()?,
        );
        let z_val = cell(z_col);
        if z_val.is_empty() {
            bail!("row {}: empty category cell", row_idx + 1);
        }
        z_raw.push(z_val.to_string());
        let area_val = cell(area_col);
        if area_val.is_empty() {
            bail!("row {}: empty area cell", row_idx + 1);
        }
        area_raw.push(area_val.to_string());
    }
    if y.is_empty() {
        bail!("{}: no data rows", path.display());
    }

    let z_levels = sorted_levels(&z_raw);
    if z_levels.len() < 2 {
        bail!(
            "misclassified categorical column `{}` has {} distinct value(s); need at least 2",
            roles.z,
            z_levels.len()
        );
    }
    let z_code: BTreeMap<&str, usize> = z_levels
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i + 1))
        .collect();
    let z: Vec<usize> = z_raw.iter().map(|v| z_code[v.as_str()]).collect();

    let area_labels = sorted_levels(&area_raw);
    let area_code: BTreeMap<&str, usize> = area_labels
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let area: Vec<usize> = area_raw.iter().map(|v| area_code[v.as_str()]).collect();

    let k = z_levels.len();
    let dataset = validate_dataset(RawData {
        y,
        t: if roles.t.is_empty() { vec![] } else { t },
        s: if roles.s.is_empty() { vec![] } else { s },
        z,
        area,
        area_labels,
        k,
    })
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    Ok((
        dataset,
        CodingTables {
            z_levels,
            roles: roles.clone(),
        },
    ))
}

/// Write a dataset back to CSV with the original labels and the centering
/// offsets restored, so the file round-trips through `load_csv`.
pub fn dataset_to_csv(data: &Dataset, coding: &CodingTables) -> String {
    let mut out = String::new();
    let mut headers = vec![
        coding.roles.y.clone(),
        coding.roles.area.clone(),
        coding.roles.z.clone(),
    ];
    headers.extend(coding.roles.t.iter().cloned());
    headers.extend(coding.roles.s.iter().cloned());
    out.push_str(&headers.join(","));
    out.push('\n');
    for j in 0..data.n_units() {
        let mut fields = vec![
            data.y()[j].to_string(),
            data.area_label(data.area()[j]).to_string(),
            coding.z_levels[data.z()[j] - 1].clone(),
        ];
        for c in 0..data.p() {
            fields.push(data.t()[(j, c)].to_string());
        }
        for c in 0..data.q() {
            fields.push((data.s()[(j, c)] + data.s_offsets()[c]).to_string());
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn roles_parsing() {
        let roles = ColumnRoles::parse("y=bmi,area=region,z=wealth,t=age+parity,s=height").unwrap();
        assert_eq!(roles.y, "bmi");
        assert_eq!(roles.t, vec!["age", "parity"]);
        assert_eq!(roles.s, vec!["height"]);

        assert!(ColumnRoles::parse("area=a,z=b").is_err());
        assert!(ColumnRoles::parse("y=a,y=b,area=c,z=d").is_err());
        assert!(ColumnRoles::parse("y=a,area=c,z=d,w=e").is_err());
    }

    #[test]
    fn toy_csv_defines_areas() {
        let f = temp_csv("y,area,z\n1.5,north,a\n2.0,south,b\n0.5,north,a\n");
        let roles = ColumnRoles::parse("y=y,area=area,z=z").unwrap();
        let (data, coding) = load_csv(f.path(), &roles).unwrap();
        assert_eq!(data.n_areas(), 2);
        assert_eq!(data.n_units(), 3);
        assert_eq!(coding.z_levels, vec!["a", "b"]);
        assert_eq!(data.area_label(0), "north");
    }

    #[test]
    fn unparseable_cell_names_the_row() {
        let f = temp_csv("y,area,z\n1.5,north,a\noops,south,b\n");
        let roles = ColumnRoles::parse("y=y,area=area,z=z").unwrap();
        let err = load_csv(f.path(), &roles).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("oops"), "{msg}");
    }

    #[test]
    fn quintile_column_codes_to_five_levels() {
        let mut text = String::from("y,area,z\n");
        for (i, q) in ["q1", "q2", "q3", "q4", "q5", "q3", "q2"].iter().enumerate() {
            text.push_str(&format!("{}.0,r{},{}\n", i, i % 2, q));
        }
        let f = temp_csv(&text);
        let roles = ColumnRoles::parse("y=y,area=area,z=z").unwrap();
        let (data, coding) = load_csv(f.path(), &roles).unwrap();
        assert_eq!(data.k(), 5);
        assert_eq!(coding.z_levels, vec!["q1", "q2", "q3", "q4", "q5"]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = temp_csv("y,area,z\n1,a,10\n2,a,9\n3,a,2\n");
        let roles = ColumnRoles::parse("y=y,area=area,z=z").unwrap();
        let (_, coding) = load_csv(f.path(), &roles).unwrap();
        assert_eq!(coding.z_levels, vec!["2", "9", "10"]);
    }

    #[test]
    fn single_level_categorical_is_rejected() {
        let f = temp_csv("y,area,z\n1,a,only\n2,a,only\n");
        let roles = ColumnRoles::parse("y=y,area=area,z=z").unwrap();
        let err = load_csv(f.path(), &roles).unwrap_err();
        assert!(err.to_string().contains("at least 2"), "{err}");
    }

    #[test]
    fn missing_column_is_reported() {
        let f = temp_csv("y,area\n1,a\n");
        let roles = ColumnRoles::parse("y=y,area=area,z=zzz").unwrap();
        let err = load_csv(f.path(), &roles).unwrap_err();
        assert!(err.to_string().contains("zzz"), "{err}");
    }

    #[test]
    fn csv_round_trip_restores_the_dataset() {
        let f = temp_csv(
            "bmi,region,wealth,age,height\n\
             21.5,north,q2,25,160.2\n\
             19.0,south,q1,31,150.8\n\
             23.2,north,q2,45,170.1\n\
             20.7,south,q3,29,155.5\n",
        );
        let roles = ColumnRoles::parse("y=bmi,area=region,z=wealth,t=age,s=height").unwrap();
        let (data, coding) = load_csv(f.path(), &roles).unwrap();

        let echoed = dataset_to_csv(&data, &coding);
        let f2 = temp_csv(&echoed);
        let (data2, coding2) = load_csv(f2.path(), &roles).unwrap();

        assert_eq!(coding, coding2);
        assert_eq!(data.z(), data2.z());
        assert_eq!(data.area(), data2.area());
        for j in 0..data.n_units() {
            assert!((data.y()[j] - data2.y()[j]).abs() < 1e-12);
            assert!((data.t()[(j, 0)] - data2.t()[(j, 0)]).abs() < 1e-12);
            assert!((data.s()[(j, 0)] - data2.s()[(j, 0)]).abs() < 1e-9);
        }
        assert!((data.s_offsets()[0] - data2.s_offsets()[0]).abs() < 1e-9);
    }
}
