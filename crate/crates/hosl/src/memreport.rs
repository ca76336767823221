//! Memory report for a split transformer.

use std::fmt::Write as _;

use hosl_core::accounting::{
    client_memory_zo, client_param_elements, logits_elements, per_layer_params, server_memory_fo,
    server_param_elements, MemoryBreakdown, ModelSpec, MIB,
};

/// Logits element count often quoted for the default configuration.
pub const QUOTED_LOGITS_ELEMENTS: u64 = 813_197_824;

/// Set one field by key. Accepts the short symbols and long names.
pub fn set_field(spec: &mut ModelSpec, key: &str, value: &str) -> Result<(), String> {
    let v: u64 = value
        .trim()
        .replace('_', "")
        .parse()
        .map_err(|_| format!("`{key}` needs a non-negative integer, got `{value}`"))?;
    let slot = match key.trim() {
        "B" | "batch" => &mut spec.batch,
        "S" | "seq_len" => &mut spec.seq_len,
        "H" | "hidden" => &mut spec.hidden,
        "L" | "layers" => &mut spec.layers,
        "L_c" | "client_layers" => &mut spec.client_layers,
        "L_s" | "server_layers" => &mut spec.server_layers,
        "A" | "heads" => &mut spec.heads,
        "d_h" | "head_dim" => &mut spec.head_dim,
        "d_ff" | "ffn_dim" => &mut spec.ffn_dim,
        "V" | "vocab" => &mut spec.vocab,
        "M" | "max_positions" => &mut spec.max_positions,
        "beta" | "bytes_per_element" => &mut spec.bytes_per_element,
        "r" | "lora_rank" => &mut spec.lora_rank,
        "alpha" | "lora_alpha" => &mut spec.lora_alpha,
        "client_cuda_mib" => {
            spec.client_cuda_bytes = v * MIB;
            return Ok(());
        }
        "server_cuda_mib" => {
            spec.server_cuda_bytes = v * MIB;
            return Ok(());
        }
        other => return Err(format!("unknown model key `{other}`")),
    };
    *slot = v;
    Ok(())
}

/// Parse `key=value` lines over the default spec. `#` starts a comment.
pub fn parse_spec(text: &str) -> Result<ModelSpec, String> {
    let mut spec = ModelSpec::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        set_field(&mut spec, k, v).map_err(|e| format!("line {}: {e}", n + 1))?;
    }
    Ok(spec)
}

fn mib(b: u64) -> f64 {
    b as f64 / MIB as f64
}

fn table(out: &mut String, title: &str, m: &MemoryBreakdown) {
    let _ = writeln!(out, "{title}");
    for (name, bytes) in m.components() {
        let _ = writeln!(out, "  {name:<14} {:>14} B {:>11.2} MiB", bytes, mib(bytes));
    }
    let total = m.total();
    let _ = writeln!(
        out,
        "  {:<14} {:>14} B {:>11.2} MiB  ({:.2} GB as MiB/1000, {:.2} GiB)",
        "total",
        total,
        mib(total),
        mib(total) / 1000.0,
        mib(total) / 1024.0
    );
}

/// Aligned tables followed by machine-readable `key=value` lines.
pub fn render(spec: &ModelSpec) -> String {
    let client = client_memory_zo(spec);
    let server = server_memory_fo(spec);
    let mut out = String::new();
    for w in spec.warnings() {
        let _ = writeln!(out, "warning: {w}");
    }
    table(&mut out, "client (zeroth-order)", &client);
    table(&mut out, "server (first-order)", &server);
    let logits = logits_elements(spec);
    if *spec == ModelSpec::default() && logits != QUOTED_LOGITS_ELEMENTS {
        let _ = writeln!(
            out,
            "note: logits_peak uses B*S*V + 3*B*(S-1)*V = {logits} elements; the figure {QUOTED_LOGITS_ELEMENTS} \
             often quoted for this configuration is {} elements smaller",
            logits - QUOTED_LOGITS_ELEMENTS
        );
    }
    let _ = writeln!(out);
    let mut kv = |k: &str, v: u64| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("per_layer_params", per_layer_params(spec));
    kv("client_param_elements", client_param_elements(spec));
    kv("server_param_elements", server_param_elements(spec));
    kv("logits_elements", logits);
    for (side, m) in [("client", &client), ("server", &server)] {
        for (name, b) in m.components() {
            kv(&format!("{side}.{name}"), b);
        }
        kv(&format!("{side}.total"), m.total());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_symbols_and_names() {
        let s = parse_spec("# comment\nB=8\nseq_len = 16\nH=32 # trailing\nclient_cuda_mib=0\n").unwrap();
        assert_eq!((s.batch, s.seq_len, s.hidden), (8, 16, 32));
        assert_eq!(s.client_cuda_bytes, 0);
        assert!(parse_spec("Q=3").is_err());
        assert!(parse_spec("B").is_err());
        assert!(parse_spec("B=-1").is_err());
    }

    #[test]
    fn default_report_carries_note_and_values() {
        let r = render(&ModelSpec::default());
        assert!(r.contains("logits_elements=814004224"));
        assert!(r.contains("note: logits_peak"));
        assert!(r.contains("per_layer_params=7087872"));
        assert!(r.contains("client.comm_buffer=12582912"));
        assert!(!r.contains("warning"));
    }

    #[test]
    fn broken_conventions_warn() {
        let s = parse_spec("d_h=10").unwrap();
        assert!(render(&s).starts_with("warning: head_dim"));
    }
}
