//! Reader and writer for the MATPOWER `.m` case format.
//!
//! Only the columns the power-flow model needs are read; trailing columns
//! (limits, ratings, cost data) are accepted and ignored. Matrices other
//! than `bus`, `gen` and `branch` are skipped.

use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, Gen, NetworkCase};
use crate::error::{Error, Result};

const BUS_COLS: usize = 10;
const GEN_COLS: usize = 8;
const BRANCH_COLS: usize = 11;

struct Matrix {
    start_line: usize,
    keep: bool,
    rows: Vec<(usize, Vec<f64>)>,
}

/// Parse MATPOWER case text into a validated [`NetworkCase`].
///
/// MW and MVAr quantities are divided by `baseMVA`, degrees become radians,
/// and a zero transformer ratio (MATPOWER's "no transformer") becomes 1.0.
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;

    let mut open: Option<(String, Matrix)> = None;
    let mut in_cell = false;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('%').next().unwrap_or("").trim();

        if in_cell {
            if line.contains('}') {
                in_cell = false;
            }
            continue;
        }

        let body = if let Some((_, matrix)) = open.as_mut() {
            let (content, closed) = match line.find(']') {
                Some(p) => (&line[..p], true),
                None => (line, false),
            };
            push_rows(matrix, content, line_no)?;
            if closed {
                let (name, matrix) = open.take().unwrap();
                match name.as_str() {
                    "bus" => bus = Some(matrix),
                    "gen" => gen = Some(matrix),
                    "branch" => branch = Some(matrix),
                    _ => {}
                }
            }
            continue;
        } else {
            line
        };

        let Some(rest) = body.strip_prefix("mpc.") else {
            continue;
        };
        let Some((name, rhs)) = rest.split_once('=') else {
            continue;
        };
        let name = name.trim().to_string();
        let rhs = rhs.trim();

        if let Some(after) = rhs.strip_prefix('[') {
            let mut matrix = Matrix {
                start_line: line_no,
                keep: matches!(name.as_str(), "bus" | "gen" | "branch"),
                rows: Vec::new(),
            };
            let (content, closed) = match after.find(']') {
                Some(p) => (&after[..p], true),
                None => (after, false),
            };
            push_rows(&mut matrix, content, line_no)?;
            if closed {
                match name.as_str() {
                    "bus" => bus = Some(matrix),
                    "gen" => gen = Some(matrix),
                    "branch" => branch = Some(matrix),
                    _ => {}
                }
            } else {
                open = Some((name, matrix));
            }
        } else if rhs.starts_with('{') {
            in_cell = !rhs.contains('}');
        } else if name == "baseMVA" {
            let value = rhs.trim_end_matches(';').trim();
            let parsed = value.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid baseMVA value '{value}'"),
            })?;
            base_mva = Some(parsed);
        }
    }

    let last_line = text.lines().count();
    if let Some((name, matrix)) = open {
        return Err(Error::Parse {
            line: matrix.start_line,
            message: format!("matrix mpc.{name} is not terminated"),
        });
    }
    let missing = |what: &str| Error::Parse {
        line: last_line,
        message: format!("missing mpc.{what}"),
    };
    let base_mva = base_mva.ok_or_else(|| missing("baseMVA"))?;
    let bus = bus.ok_or_else(|| missing("bus"))?;
    let gen = gen.ok_or_else(|| missing("gen"))?;
    let branch = branch.ok_or_else(|| missing("branch"))?;

    check_columns(&bus, "bus", BUS_COLS)?;
    check_columns(&gen, "gen", GEN_COLS)?;
    check_columns(&branch, "branch", BRANCH_COLS)?;

    let buses = bus
        .rows
        .iter()
        .map(|(line, r)| {
            let kind = match r[1] as i64 {
                1 => BusKind::Load,
                2 => BusKind::Generator,
                3 => BusKind::Slack,
                other => {
                    return Err(Error::Parse {
                        line: *line,
                        message: format!("unsupported bus type {other}"),
                    })
                }
            };
            Ok(Bus {
                id: bus_number(r[0], *line)?,
                kind,
                p_demand: r[2] / base_mva,
                q_demand: r[3] / base_mva,
                gs_shunt: r[4] / base_mva,
                bs_shunt: r[5] / base_mva,
                v_mag_init: r[7],
                v_ang_init: r[8].to_radians(),
                base_kv: r[9],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let gens = gen
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(Gen {
                bus_id: bus_number(r[0], *line)?,
                p_out: r[1] / base_mva,
                q_out: r[2] / base_mva,
                v_setpoint: r[5],
                in_service: r[7] > 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let branches = branch
        .rows
        .iter()
        .map(|(line, r)| {
            Ok(Branch {
                from_bus: bus_number(r[0], *line)?,
                to_bus: bus_number(r[1], *line)?,
                r: r[2],
                x: r[3],
                b_charge: r[4],
                tap: if r[8] == 0.0 { 1.0 } else { r[8] },
                shift: r[9].to_radians(),
                in_service: r[10] != 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    NetworkCase::new(base_mva, buses, gens, branches)
}

fn push_rows(matrix: &mut Matrix, content: &str, line_no: usize) -> Result<()> {
    if !matrix.keep {
        return Ok(());
    }
    for fragment in content.split(';') {
        let tokens: Vec<&str> = fragment
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            continue;
        }
        let row = tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("invalid number '{t}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        matrix.rows.push((line_no, row));
    }
    Ok(())
}

fn check_columns(matrix: &Matrix, name: &str, required: usize) -> Result<()> {
    let Some((_, first)) = matrix.rows.first() else {
        return Ok(());
    };
    let width = first.len();
    for (line, row) in &matrix.rows {
        if row.len() != width || row.len() < required {
            return Err(Error::Parse {
                line: *line,
                message: format!(
                    "mpc.{name} row has {} columns, expected {} (at least {required})",
                    row.len(),
                    width.max(required)
                ),
            });
        }
    }
    Ok(())
}

fn bus_number(value: f64, line: usize) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Parse {
            line,
            message: format!("invalid bus number {value}"),
        })
    }
}

/// Serialize a case back to MATPOWER text.
///
/// Values are written so that [`parse_case`] reproduces every field of the
/// case bit for bit. Columns the model does not keep (area, zone, limits,
/// ratings) are filled with neutral placeholders.
pub fn write_case(case: &NetworkCase, name: &str) -> String {
    let base = case.base_mva();
    let mut out = String::new();
    let _ = writeln!(out, "function mpc = {name}");
    let _ = writeln!(out, "mpc.version = '2';");
    let _ = writeln!(out, "mpc.baseMVA = {base};");
    let _ = writeln!(out);
    let _ = writeln!(out, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(out, "mpc.bus = [");
    for b in case.buses() {
        let kind = match b.kind {
            BusKind::Load => 1,
            BusKind::Generator => 2,
            BusKind::Slack => 3,
        };
        let _ = writeln!(
            out,
            "\t{}\t{kind}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t1.1\t0.9;",
            b.id,
            scaled(b.p_demand, base),
            scaled(b.q_demand, base),
            scaled(b.gs_shunt, base),
            scaled(b.bs_shunt, base),
            b.v_mag_init,
            degrees(b.v_ang_init),
            b.base_kv,
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out);
    let _ = writeln!(out, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(out, "mpc.gen = [");
    for g in case.gens() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\tInf\t-Inf\t{}\t{base}\t{}\tInf\t0;",
            g.bus_id,
            scaled(g.p_out, base),
            scaled(g.q_out, base),
            g.v_setpoint,
            u8::from(g.in_service),
        );
    }
    let _ = writeln!(out, "];");
    let _ = writeln!(out);
    let _ = writeln!(out, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax");
    let _ = writeln!(out, "mpc.branch = [");
    for br in case.branches() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{}\t-360\t360;",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_charge,
            br.tap,
            degrees(br.shift),
            u8::from(br.in_service),
        );
    }
    let _ = writeln!(out, "];");
    out
}

/// A value `v` with `v / base == pu` exactly, so the parser's division
/// reproduces the stored per-unit value.
fn scaled(pu: f64, base: f64) -> f64 {
    invert(pu, |v| v / base, pu * base)
}

fn degrees(rad: f64) -> f64 {
    invert(rad, f64::to_radians, rad.to_degrees())
}

fn invert(target: f64, forward: impl Fn(f64) -> f64, guess: f64) -> f64 {
    if !guess.is_finite() || forward(guess) == target {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..64 {
        up = up.next_up();
        down = down.next_down();
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
    }
    guess
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_BUS: &str = "\
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.1	0.9;
	2	1	100	20	0	0	1	1	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.1	0	0	0	0	0	0	1	-360	360;
];
";

    #[test]
    fn parses_minimal_case() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.n_lines(), 1);
        assert_eq!(case.buses()[0].kind, BusKind::Slack);
        assert_eq!(case.buses()[1].kind, BusKind::Load);
        assert_eq!(case.buses()[1].p_demand, 1.0);
        assert_eq!(case.buses()[1].q_demand, 0.2);
        assert_eq!(case.branches()[0].tap, 1.0);
    }

    #[test]
    fn dangling_branch_is_a_validation_error() {
        let text = TWO_BUS.replace("\t1\t2\t0\t0.1", "\t1\t99\t0\t0.1");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_slack_is_a_validation_error() {
        let text = TWO_BUS.replace("\t1\t3\t0", "\t1\t2\t0");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn short_row_reports_its_line() {
        let text = TWO_BUS.replace("\t2\t1\t100\t20\t0\t0\t1\t1\t0\t135\t1\t1.1\t0.9;", "\t2\t1\t100;");
        match parse_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn skips_comments_cells_and_other_matrices() {
        let text = format!(
            "{TWO_BUS}\n%% cost\nmpc.gencost = [\n\t2\t0\t0\t3\t0.01\t40\t0;\n];\nmpc.bus_name = {{\n\t'a';\n\t'b';\n}};\n"
        );
        let case = parse_case(&text).unwrap();
        assert_eq!(case.n_buses(), 2);
    }

    #[test]
    fn single_line_matrices_with_semicolons() {
        let text = "mpc.baseMVA = 100;\n\
            mpc.bus = [1 3 0 0 0 0 1 1 0 135; 2 1 50 10 0 0 1 1 0 135];\n\
            mpc.gen = [1 0 0 0 0 1.02 100 1];\n\
            mpc.branch = [1, 2, 0.01, 0.1, 0.02, 0, 0, 0, 0.98, 2.5, 1];\n";
        let case = parse_case(text).unwrap();
        assert_eq!(case.gens()[0].v_setpoint, 1.02);
        assert_eq!(case.branches()[0].tap, 0.98);
        assert_eq!(case.branches()[0].shift, 2.5f64.to_radians());
    }

    fn arb_case() -> impl Strategy<Value = NetworkCase> {
        let bus_vals = prop::collection::vec(
            (-500.0..500.0f64, -200.0..200.0f64, -5.0..5.0f64, -50.0..50.0f64, 0.9..1.1f64, -40.0..40.0f64),
            2..8,
        );
        (bus_vals, 1.0..1000.0f64).prop_flat_map(|(vals, base)| {
            let n = vals.len();
            let branches = prop::collection::vec(
                (0..n, 0..n, 0.0..0.1f64, 0.01..0.5f64, 0.0..0.5f64, 0.9..1.1f64, -10.0..10.0f64, any::<bool>()),
                1..10,
            );
            (Just(vals), Just(base), branches)
        })
        .prop_map(|(vals, base, branches)| {
            let buses = vals
                .iter()
                .enumerate()
                .map(|(i, v)| Bus {
                    id: i + 1,
                    kind: if i == 0 { BusKind::Slack } else { BusKind::Load },
                    p_demand: v.0 / base,
                    q_demand: v.1 / base,
                    gs_shunt: v.2 / base,
                    bs_shunt: v.3 / base,
                    base_kv: 138.0,
                    v_mag_init: v.4,
                    v_ang_init: v.5.to_radians(),
                })
                .collect();
            let gens = vec![Gen {
                bus_id: 1,
                p_out: 1.7 / base,
                q_out: -0.3 / base,
                v_setpoint: 1.03,
                in_service: true,
            }];
            let branches = branches
                .into_iter()
                .map(|(f, t, r, x, b, tap, shift, on)| Branch {
                    from_bus: f + 1,
                    to_bus: (f + 1 + t % (vals.len() - 1)) % vals.len() + 1,
                    r,
                    x,
                    b_charge: b,
                    tap,
                    shift: shift.to_radians(),
                    in_service: on,
                })
                .collect();
            NetworkCase::new(base, buses, gens, branches).unwrap()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(case in arb_case()) {
            let text = write_case(&case, "roundtrip");
            let back = parse_case(&text).unwrap();
            prop_assert_eq!(back, case);
        }
    }
}
