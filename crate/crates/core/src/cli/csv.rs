//! CSV emission with fixed 12-significant-digit number formatting.

use std::fmt::Write as _;

use crate::engine::Trajectory;
use crate::network::NodeKind;

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed,
/// exponent form outside `[1e-4, 1e12)`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn trajectory_header(traj: &Trajectory) -> (Vec<String>, Vec<&'static str>) {
    let mut names = vec!["t".to_string()];
    let mut units = vec!["s"];
    for (id, kind) in traj.node_ids.iter().zip(&traj.node_kinds) {
        names.push(format!("V_{id}"));
        units.push("V");
        names.push(format!("delta_{id}"));
        units.push("rad");
        if *kind == NodeKind::GridForming {
            names.push(format!("omega_{id}"));
            units.push("rad/s");
        }
        names.push(format!("P_{id}"));
        units.push("W");
        names.push(format!("Q_{id}"));
        units.push("var");
    }
    for l in 0..traj.line_count {
        names.push(format!("Id_{l}"));
        units.push("A");
        names.push(format!("Iq_{l}"));
        units.push("A");
    }
    (names, units)
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let (names, units) = trajectory_header(traj);
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push('\n');
    out.push_str("# ");
    out.push_str(&units.join(","));
    out.push('\n');
    for s in &traj.samples {
        let mut row = vec![format_number(s.t)];
        for i in 0..traj.node_ids.len() {
            row.push(format_number(s.v[i]));
            row.push(format_number(s.delta[i]));
            if traj.node_kinds[i] == NodeKind::GridForming {
                row.push(format_number(s.omega[i].unwrap_or(f64::NAN)));
            }
            row.push(format_number(s.p[i]));
            row.push(format_number(s.q[i]));
        }
        for c in &s.lines {
            row.push(format_number(c.d));
            row.push(format_number(c.q));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
