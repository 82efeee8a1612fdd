"""Property checks over the CSV/JSON output of the repro scripts.

Usage: check.py <study> <output dir>
Prints one PASS/FAIL line per property (INFO for report-only values)
and exits 1 if any fail.
"""

import cmath
import csv
import json
import math
import sys
from pathlib import Path


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) if r[k] not in ("true", "false") else r[k] == "true" for r in rows] for k in rows[0]}


def settling_time(t, x, start, frac=0.05):
    tail = [v for ti, v in zip(t, x) if ti >= t[-1] - 1.0]
    final = sum(tail) / len(tail)
    dev = [abs(v - final) for ti, v in zip(t, x) if ti >= start]
    band = frac * max(dev)
    last = start
    for ti, v in zip(t, x):
        if ti >= start and abs(v - final) > band:
            last = ti
    return last


def amplitude(t, x, a, b):
    pts = [(ti, v) for ti, v in zip(t, x) if a <= ti <= b]
    n = len(pts)
    mt = sum(p[0] for p in pts) / n
    mv = sum(p[1] for p in pts) / n
    slope = sum((p[0] - mt) * (p[1] - mv) for p in pts) / sum((p[0] - mt) ** 2 for p in pts)
    return max(abs(p[1] - mv - slope * (p[0] - mt)) for p in pts)


def decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


def track(table, label):
    """Real parts of the longest fully resolved track with `label`."""
    best = []
    for tr in table["tracks"]:
        if tr["label"] != label:
            continue
        re = []
        for p, i in enumerate(tr["indices"]):
            if i is None or tr["ambiguous"][p]:
                break
            re.append(table["points"][p]["modes"][i]["eigenvalue"]["re"])
        if len(re) > len(best):
            best = re
    return best


def variation(values):
    return max(abs(v - values[0]) for v in values) / abs(values[0])


def mode_sensitivity(out):
    b1 = json.loads((out / "beta1" / "locus.json").read_text())
    b2 = json.loads((out / "beta2" / "locus.json").read_text())
    n = len(b1["points"])
    ia1, fr1 = track(b1, "inter_area"), track(b1, "frequency_regulation")
    ia2, fr2 = track(b2, "inter_area"), track(b2, "frequency_regulation")
    base = json.loads((out / "base" / "modes.json").read_text())
    fr = next(m for m in base if m["classification"] == "frequency_regulation")
    ia = max((m for m in base if m["classification"] == "inter_area"), key=lambda m: m["eigenvalue"]["re"])
    in_phase = all(abs(cmath.phase(complex(*s))) <= math.radians(30) for s in fr["mode_shape"])
    return [
        ("beta1 sweep moves the inter-area mode left", len(ia1) == n and decreasing(ia1)),
        ("beta1 sweep leaves the regulation mode within 5%", len(fr1) == n and variation(fr1) < 0.05),
        ("beta2 sweep moves the regulation mode left", len(fr2) >= 2 and decreasing(fr2)),
        ("beta2 sweep leaves the inter-area mode within 5%", len(ia2) == n and variation(ia2) < 0.05),
        (f"inter-area mode at {ia['frequency_hz']:.3f} Hz", abs(ia["frequency_hz"] - 0.76) <= 0.15),
        (f"regulation mode at {fr['frequency_hz']:.3f} Hz, speeds in phase", fr["frequency_hz"] < 0.1 and in_phase),
    ]


def beta1_trip(out):
    finals, settles = [], []
    for run in ("b1_0.333", "b1_0.667", "b1_1"):
        r = read_csv(out / run / "record.csv")
        tail = [v for t, v in zip(r["time"], r["vt_g4"]) if t >= r["time"][-1] - 1.0]
        finals.append(sum(tail) / len(tail))
        settles.append(settling_time(r["time"], r["omega2-omega4"], 1.0))
    spread = max(finals) - min(finals)
    return [
        (f"G4 voltage spread {spread:.2e} pu", spread <= 1e-3),
        ("omega2-omega4 settling " + " ".join(f"{s:.2f}" for s in settles) + " s", decreasing(settles)),
    ]


def beta2_trip(out):
    nadirs = [json.loads((out / run / "metrics.json").read_text())["frequency_nadir"] for run in ("b2_0", "b2_0.333", "b2_0.667")]
    g1, g2 = nadirs[1] - nadirs[0], nadirs[2] - nadirs[1]
    return [("nadirs " + " ".join(f"{n:.6f}" for n in nadirs), g1 > 0 and g2 > 0 and g1 > g2)]


def phase_spread(out, runs, f0=0.64):
    phases = []
    for run in runs:
        r = read_csv(out / run / "response.csv")
        k = min(range(len(r["freq_hz"])), key=lambda i: abs(r["freq_hz"][i] - f0))
        phases.append(r["phase_deg"][k])
    wrapped = [(p - phases[0] + 180.0) % 360.0 - 180.0 for p in phases]
    return max(wrapped) - min(wrapped)


def beta1_response(out):
    spread = phase_spread(out, ("b1_0.333", "b1_0.667", "b1_1"))
    return [(f"phase near the inter-area frequency spans {spread:.1f} deg", spread < 10)]


def beta2_response(out):
    spread = phase_spread(out, ("b2_0", "b2_0.5", "b2_1"))
    return [(f"phase near the inter-area frequency spans {spread:.1f} deg", None)]


def deviation(ref, other):
    worst_all, worst_high = (0.0, 0.0), (0.0, 0.0)
    for f, a, b, c, d in zip(ref["freq_hz"], ref["re"], ref["im"], other["re"], other["im"]):
        r = complex(c, d) / complex(a, b)
        g, p = abs(20 * math.log10(abs(r))), abs(math.degrees(cmath.phase(r)))
        worst_all = (max(worst_all[0], g), max(worst_all[1], p))
        if f >= 0.5:
            worst_high = (max(worst_high[0], g), max(worst_high[1], p))
    return worst_all, worst_high


def delay_response(out):
    checks = []
    ref = read_csv(out / "safe_0" / "response.csv")
    for tau in ("0.625", "1.25"):
        (ga, pa), (gh, ph) = deviation(ref, read_csv(out / f"safe_{tau}" / "response.csv"))
        ok = ga <= 3 and pa <= 45 and gh < 0.5 and ph < 5
        checks.append((f"beta2/beta1 = 0.5, delay {tau} s: {ga:.2f} dB/{pa:.1f} deg overall, {gh:.2f} dB/{ph:.1f} deg above 0.5 Hz", ok))
    ref = read_csv(out / "risky_0" / "response.csv")
    risky = read_csv(out / "risky_1.25" / "response.csv")
    flipped = [
        f
        for f, a, b, c, d in zip(ref["freq_hz"], ref["re"], ref["im"], risky["re"], risky["im"])
        if abs(cmath.phase(complex(c, d) / complex(a, b))) > math.pi / 2
    ]
    checks.append((f"beta2/beta1 = 2, delay 1.25 s: phase reversal from {min(flipped, default=float('nan')):.3f} Hz", any(0.1 <= f <= 0.2 for f in flipped)))
    return checks


def delayed_trip(out):
    nadirs, stable = [], True
    for tau in ("0", "0.625", "1.25"):
        r = read_csv(out / f"delay_{tau}" / "record.csv")
        m = json.loads((out / f"delay_{tau}" / "metrics.json").read_text())
        x = r["omega2-omega4"]
        early, late = amplitude(r["time"], x, 2.0, 7.0), amplitude(r["time"], x, r["time"][-1] - 6.0, r["time"][-1])
        stable = stable and not m["unstable"] and late < early
        nadirs.append(m["frequency_nadir"])
    spread = max(nadirs) - min(nadirs)
    return [("oscillation envelopes decay", stable), (f"nadir spread {spread:.2e} pu", spread <= 2e-3)]


def main():
    study, out = sys.argv[1], Path(sys.argv[2])
    results = globals()[study](out)
    for text, ok in results:
        verdict = "INFO" if ok is None else "PASS" if ok else "FAIL"
        print(f"{study}: {verdict} {text}")
    sys.exit(0 if all(ok is not False for _, ok in results) else 1)


if __name__ == "__main__":
    main()
