//! Case-file and JSON serialization.
//!
//! `write_case` emits the same MATPOWER subset the parser reads and is an
//! exact right inverse of it: parsing the emitted text reproduces the
//! `Network` bit for bit. File columns are MW-denominated while the model
//! stores per unit, and the branch table stores impedances while the model
//! stores admittances, so a naive conversion can be off by an ulp after the
//! parser converts back. The encoders below search the ulp neighborhood of
//! the naive value for a file value whose parse image is exact.

use super::{Network, NetworkError};

/// Serializes a network to MATPOWER-subset text. Ramp limits are not part
/// of the file format and are dropped; everything else round-trips exactly
/// through [`super::parse_case`].
pub fn write_case(net: &Network, name: &str) -> String {
    let base = net.base_mva;
    let mut out = String::new();
    out.push_str(&format!("function mpc = {name}\n"));
    out.push_str(&format!("mpc.baseMVA = {base};\n"));

    out.push_str("%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin\nmpc.bus = [\n");
    for b in &net.buses {
        let bus_type = if b.is_slack {
            3
        } else if net.generators.iter().any(|g| g.bus == b.id) {
            2
        } else {
            1
        };
        out.push_str(&format!(
            "  {} {} {} {} 0 0 1 1 0 0 1 {} {};\n",
            b.id,
            bus_type,
            encode_div(b.p_demand, base),
            encode_div(b.q_demand, base),
            b.v_max,
            b.v_min,
        ));
    }
    out.push_str("];\n");

    out.push_str("%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin\nmpc.gen = [\n");
    for g in &net.generators {
        out.push_str(&format!(
            "  {} 0 0 {} {} 1 {} 1 {} {};\n",
            g.bus,
            encode_div(g.q_max, base),
            encode_div(g.q_min, base),
            base,
            encode_div(g.p_max, base),
            encode_div(g.p_min, base),
        ));
    }
    out.push_str("];\n");

    out.push_str("%% fbus tbus r x b rateA rateB rateC ratio angle status\nmpc.branch = [\n");
    for l in &net.lines {
        let (r, x) = encode_impedance(l.g, l.b);
        let rate = match l.s_max {
            Some(s) => encode_div(s, base),
            None => 0.0,
        };
        out.push_str(&format!("  {} {} {r} {x} 0 {rate} 0 0 0 0 1;\n", l.from, l.to));
    }
    out.push_str("];\n");

    out.push_str("%% model startup shutdown n c2 c1 c0\nmpc.gencost = [\n");
    for g in &net.generators {
        out.push_str(&format!(
            "  2 0 0 3 {} {} {};\n",
            encode_mul2(g.cost_quad, base),
            encode_mul1(g.cost_lin, base),
            g.cost_const,
        ));
    }
    out.push_str("];\n");
    out
}

/// Canonical JSON form of a network (documented schema: `base_mva`,
/// `buses`, `generators`, `lines`; per-unit values, 1-based bus ids).
pub fn network_to_json(net: &Network) -> String {
    serde_json::to_string_pretty(net).expect("network serializes")
}

/// Parses the JSON produced by [`network_to_json`], re-running validation.
pub fn network_from_json(text: &str) -> Result<Network, String> {
    let net: Network = serde_json::from_str(text).map_err(|e| e.to_string())?;
    Network::new(net.buses, net.generators, net.lines, net.base_mva).map_err(|e: NetworkError| e.to_string())
}

fn ulp_steps(v: f64, steps: i64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let bits = v.to_bits() as i64;
    f64::from_bits((bits + if v > 0.0 { steps } else { -steps }) as u64)
}

/// File value `y` with `y / base == target` exactly.
fn encode_div(target: f64, base: f64) -> f64 {
    let y0 = target * base;
    for step in [0i64, 1, -1, 2, -2, 3, -3, 4, -4] {
        let y = ulp_steps(y0, step);
        if y / base == target {
            return y;
        }
    }
    y0
}

/// File value `c` with `c * base == target` exactly.
fn encode_mul1(target: f64, base: f64) -> f64 {
    let c0 = target / base;
    for step in [0i64, 1, -1, 2, -2, 3, -3, 4, -4] {
        let c = ulp_steps(c0, step);
        if c * base == target {
            return c;
        }
    }
    c0
}

/// File value `c` with `c * base * base == target` exactly.
fn encode_mul2(target: f64, base: f64) -> f64 {
    let c0 = target / (base * base);
    for step in [0i64, 1, -1, 2, -2, 3, -3, 4, -4] {
        let c = ulp_steps(c0, step);
        if c * base * base == target {
            return c;
        }
    }
    c0
}

/// Impedance pair whose parse image `g = r/(r^2+x^2)`, `b = -x/(r^2+x^2)`
/// reproduces the stored admittance exactly.
fn encode_impedance(g: f64, b: f64) -> (f64, f64) {
    let d = g * g + b * b;
    let (r0, x0) = (g / d, -b / d);
    for i in [0i64, 1, -1, 2, -2, 3, -3] {
        for j in [0i64, 1, -1, 2, -2, 3, -3] {
            let (r, x) = (ulp_steps(r0, i), ulp_steps(x0, j));
            let dd = r * r + x * x;
            if r / dd == g && -x / dd == b {
                return (r, x);
            }
        }
    }
    (r0, x0)
}

#[cfg(test)]
mod tests {
    use super::super::parse_case;
    use super::*;

    #[test]
    fn impedance_encoding_is_exact() {
        for (r, x) in [(0.01938, 0.05917), (0.0, 0.0281), (0.05403, 0.22304), (1e-4, 0.3)] {
            let d = r * r + x * x;
            let (g, b) = (r / d, -x / d);
            let (re, xe) = encode_impedance(g, b);
            let dd = re * re + xe * xe;
            assert_eq!(re / dd, g);
            assert_eq!(-xe / dd, b);
        }
    }

    #[test]
    fn json_round_trip() {
        let text = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 90 30 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 50 -50 1 100 1 300 0; ];
mpc.branch = [ 1 2 0.01 0.1 0 250 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.02 15 0; ];
";
        let net = parse_case(text).unwrap();
        let json = network_to_json(&net);
        let back = network_from_json(&json).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn case_round_trip_on_awkward_values() {
        let text = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 7 1.3 0 0 1 1 0 230 1 1.06 0.94;
];
mpc.gen = [ 1 0 0 12.7 -3.3 1 100 1 332.4 0.1; ];
mpc.branch = [ 1 2 0.01938 0.05917 0 13 0 0 0 0 1; ];
mpc.gencost = [ 2 0 0 3 0.0430292599 20 0.07; ];
";
        let net = parse_case(text).unwrap();
        let back = parse_case(&write_case(&net, "roundtrip")).unwrap();
        assert_eq!(net, back);
    }
}
