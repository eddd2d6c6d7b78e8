//! Generates a matplotlib script that renders the simulation CSV.

use std::fmt::Write;

/// (channel column, axis label) per panel, in figure order.
const PANELS: [(&str, &str); 8] = [
    ("f", "frequency [Hz]"),
    ("V", "voltage [p.u.]"),
    ("P_ratio", "P/S"),
    ("Q_ratio", "Q/S"),
    ("lambda", "λ"),
    ("zeta", "ζ"),
    ("v", "v"),
    ("rho", "leakage ρ"),
];

/// Returns a self-contained Python script that reads `csv_name` from its
/// own directory and writes `<stem>.png` beside it. Panels whose channel is
/// missing from the CSV are left blank. Voltage limits are drawn as dashed
/// lines from `limits` (one `(v_min, v_max)` per segment start time).
pub fn script(
    csv_name: &str,
    title: &str,
    event_times: &[f64],
    limits: &[(f64, f64, f64)],
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "import csv, os, sys");
    let _ = writeln!(s, "import matplotlib");
    let _ = writeln!(s, "matplotlib.use('Agg')");
    let _ = writeln!(s, "import matplotlib.pyplot as plt\n");
    let _ = writeln!(s, "here = os.path.dirname(os.path.abspath(__file__))");
    let _ = writeln!(s, "src = os.path.join(here, {csv_name:?})");
    let _ = writeln!(s, "panels = [");
    for (col, label) in PANELS {
        let _ = writeln!(s, "    ({col:?}, {label:?}),");
    }
    let _ = writeln!(s, "]");
    let events: Vec<String> = event_times.iter().map(|t| format!("{t}")).collect();
    let _ = writeln!(s, "events = [{}]", events.join(", "));
    let lim: Vec<String> = limits
        .iter()
        .map(|(t, a, b)| format!("({t}, {a}, {b})"))
        .collect();
    let _ = writeln!(s, "limits = [{}]\n", lim.join(", "));
    s.push_str(
        r#"series = {}
with open(src, newline='') as fh:
    reader = csv.DictReader(fh)
    cols = reader.fieldnames
    for row in reader:
        d = series.setdefault(int(row['ibr']), {c: [] for c in cols})
        for c in cols:
            d[c].append(float(row[c]))

fig, axes = plt.subplots(4, 2, figsize=(12, 11), sharex=True)
for ax, (col, label) in zip(axes.flat, panels):
    ax.set_ylabel(label)
    ax.grid(True, alpha=0.3)
    for t in events:
        ax.axvline(t, color='0.6', lw=0.8, ls=':')
    if col not in cols:
        ax.text(0.5, 0.5, col + ' not exported', ha='center', va='center', transform=ax.transAxes)
        continue
    for ibr, d in sorted(series.items()):
        ax.plot(d['t'], d[col], lw=1.0, label='IBR %d' % ibr)
    if col == 'V' and limits:
        t_end = max(max(d['t']) for d in series.values())
        for k, (t0, lo, hi) in enumerate(limits):
            t1 = limits[k + 1][0] if k + 1 < len(limits) else t_end
            ax.hlines([lo, hi], t0, t1, colors='k', linestyles='--', lw=0.8)
axes.flat[0].legend(loc='best', fontsize=8)
for ax in axes[-1]:
    ax.set_xlabel('t [s]')
"#,
    );
    let _ = writeln!(s, "fig.suptitle({title:?})");
    s.push_str(
        r#"fig.tight_layout()
out = os.path.splitext(src)[0] + '.png'
fig.savefig(out, dpi=150)
print(out)
if '--show' in sys.argv:
    plt.show()
"#,
    );
    s
}
