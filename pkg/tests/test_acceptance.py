"""Acceptance criteria, one test each, at the stated tolerances and runtime limits."""

import math
import random
import time

import numpy as np

from slidewatch.experiment import run_mode, simulate
from slidewatch.gnss import GNSS_COMBINED, GPS_ONLY, PseudoAlmanac, dop_batch
from slidewatch.gnss.geodesy import elevation_azimuth, enu_rotation, geodetic_to_ecef
from slidewatch.gnss.rtk import RtkSimulator, system_mask
from slidewatch.lowpass import (
    DEFAULT_SPEC,
    FilterDesignSpec,
    analog_magnitude,
    design_from_spec,
    required_order,
)
from slidewatch.outlier import (
    ClassifierConfig,
    Sample,
    SliceAccumulator,
    TimeSliceClassifier,
    Verdict,
    batch_mean,
    batch_raida,
    batch_sigma,
    classify_series,
    final_verdicts,
)
from slidewatch.scenario import loads_scenario
from slidewatch.transport import (
    FRAME_SIZE,
    BadCrc,
    LinkSimConfig,
    StationFrame,
    decode_frame,
    encode_frame,
    run_uplink,
)

REF = geodetic_to_ecef(30.52, 114.36, 40.0)
MON = REF + enu_rotation(REF).T @ np.array([0.8, 0.0, 0.0])


def rel_close(a, b, rel):
    return abs(a - b) <= rel * abs(b) if b != 0 else abs(a) <= 1e-300


def test_c01_incremental_statistics(record_criterion):
    rnd = random.Random(1)
    start = time.perf_counter()
    worst, checks = 0.0, 0
    for _ in range(1000):
        length = rnd.randint(64, 512)
        offset, scale = rnd.uniform(-1e4, 1e4), 10 ** rnd.uniform(-1, 2)
        capacity = rnd.choice([length, rnd.randint(64, length)])  # some streams also evict
        acc = SliceAccumulator(t0=offset + rnd.gauss(0, scale), capacity=capacity)
        checkpoints = set(rnd.sample(range(length), 6)) | {length - 1}
        for step in range(length):
            if acc.n > 2 and rnd.random() < 0.2:
                acc.remove(rnd.choice(list(acc.ring)))
            else:
                acc.add(offset + rnd.gauss(0, scale))
            if step in checkpoints and acc.n >= 2:
                values = list(acc.ring)
                m, s = batch_mean(values), batch_sigma(values)
                worst = max(worst, abs(acc.mean() - m) / abs(m), abs(acc.sigma() - s) / s)
                checks += 1
    elapsed = time.perf_counter() - start
    passed = worst <= 1e-9 and elapsed < 5.0
    record_criterion(1, "incremental statistics", passed,
                     f"{checks} checks, worst relative error {worst:.2e} (<=1e-9), {elapsed:.2f} s (<5 s)")
    assert passed


def test_c02_step_misjudgment(record_criterion):
    cfg = ClassifierConfig()
    T, m, onset = cfg.slice_len, cfg.confirm_count, 192
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 3, onset), 10 + rng.normal(0, 3, 256)])
    results = classify_series(x, cfg)
    verdicts = final_verdicts(results)
    confirmed = [i for i, r in enumerate(results) if r.verdict is Verdict.DEFORMATION_CONFIRMED]
    c = confirmed[0]
    latency = c - onset + 1
    # samples that a truth-aware 3 sigma rule keeps, inside the span where a trailing
    # T-window still straddles the step
    span = range(c + 1, onset + T)
    improved_bad = [i for i in span if verdicts[i] is Verdict.GROSS_ERROR and abs(x[i] - 10) <= 9]
    naive_bad = set()
    for s in range(onset - T + 1, onset):
        for j in batch_raida(list(x[s : s + T]), k=cfg.k):
            i = s + j
            truth = 10.0 if i >= onset else 0.0
            if abs(x[i] - truth) <= 9:
                naive_bad.add(i)
    passed = c >= onset and latency <= m + 1 and not improved_bad and len(naive_bad) >= 1

    # context over many seeds (reported, not asserted): stationary 3 sigma has its own false-rejection rate
    post = pre = n = within = 0
    for seed in range(1, 201):
        r = np.random.default_rng(seed)
        y = np.concatenate([r.normal(0, 3, onset), 10 + r.normal(0, 3, 256)])
        res = classify_series(y, cfg)
        fv = final_verdicts(res)
        conf = [i for i, q in enumerate(res) if q.verdict is Verdict.DEFORMATION_CONFIRMED and i >= onset - m]
        if not conf:
            continue
        n += 1
        within += conf[0] - onset + 1 <= m + 1
        post += sum(fv[i] is Verdict.GROSS_ERROR and abs(y[i] - 10) <= 9 for i in range(conf[0] + 1, conf[0] + 60))
        pre += sum(fv[i] is Verdict.GROSS_ERROR and abs(y[i]) <= 9 for i in range(100, 159))
    record_criterion(
        2, "classic vs improved misjudgment", passed,
        f"seed 0: confirmed at +{latency} samples (<= m+1 = {m + 1}), improved eliminated {len(improved_bad)} "
        f"genuine post-confirmation samples, naive batch flagged {len(naive_bad)}; "
        f"seeds 1-200: onset latency <= m+1 in {within}/{n}, genuine elimination rate "
        f"{post / (59 * n):.2%} after confirmation vs {pre / (59 * n):.2%} stationary",
    )
    assert passed


def _classify_time(values, repeats=5):
    best = math.inf
    for _ in range(repeats):
        clf = TimeSliceClassifier(ClassifierConfig(slice_len=64))
        samples = [Sample(i * 200, float(v)) for i, v in enumerate(values)]
        t = time.perf_counter()
        for s in samples:
            clf.classify(s)
        best = min(best, time.perf_counter() - t)
    return best / len(values)


def test_c03_constant_cost(record_criterion):
    rng = np.random.default_rng(3)
    n = 20_000
    clean = rng.normal(0, 3, n)
    spiky = clean.copy()
    hit = rng.random(n) < 0.20
    spiky[hit] += rng.choice([-1, 1], hit.sum()) * rng.uniform(25, 50, hit.sum())
    t0, t20 = _classify_time(clean), _classify_time(spiky)
    ratio = max(t0, t20) / min(t0, t20)
    passed = ratio < 2.0
    record_criterion(3, "O(1) elimination cost", passed,
                     f"{t0 * 1e6:.2f} us/sample at 0%, {t20 * 1e6:.2f} us/sample at 20% spikes, ratio {ratio:.2f} (<2)")
    assert passed


def brute_force_order(wp, ws, ap, as_):
    for n in range(1, 10_000):
        wc = wp / (10 ** (ap / 10) - 1) ** (1 / (2 * n))  # passband edge met exactly
        if -20 * math.log10(analog_magnitude(n, wc, ws)) >= as_:
            return n
    raise AssertionError("no order found")


def test_c04_order_formula(record_criterion):
    rnd = random.Random(4)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        wp = rnd.uniform(0.01, 1.0)
        ws = wp * rnd.uniform(1.05, 8.0)
        ap = rnd.uniform(0.1, 3.0)
        as_ = rnd.uniform(ap + 1.0, 80.0)
        fs = ws * rnd.uniform(2.5, 10.0)
        spec = FilterDesignSpec(wp, ws, ap, as_, fs, (wp + ws) / 2)
        mismatches += required_order(spec) != brute_force_order(wp, ws, ap, as_)
    elapsed = time.perf_counter() - start
    default = required_order(DEFAULT_SPEC)
    passed = mismatches == 0 and default == 5 and elapsed < 2.0
    record_criterion(4, "filter order formula", passed,
                     f"{mismatches}/1000 mismatches vs brute force, default spec N = {default}, {elapsed:.2f} s (<2 s)")
    assert passed


def test_c05_filter_response(record_criterion):
    filt = design_from_spec()
    dc = filt.dc_gain
    at_cutoff = 20 * math.log10(filt.magnitude(DEFAULT_SPEC.cutoff))
    law = analog_magnitude(5, DEFAULT_SPEC.cutoff, 2 * DEFAULT_SPEC.cutoff)
    digital = filt.magnitude(2 * DEFAULT_SPEC.cutoff)
    passed = abs(dc - 1) <= 1e-6 and abs(at_cutoff + 3.01) <= 0.05 and abs(law - 0.0312) <= 0.002
    record_criterion(
        5, "filter response", passed,
        f"DC {dc:.9f}, cutoff {at_cutoff:.3f} dB, gain law at 2wc {law:.4f} (0.0312+-0.002); "
        f"realised digital gain at 2wc with fs=5 Hz is {digital:.4f} (bilinear warping)",
    )
    assert passed


def test_c06_end_to_end_error_reduction(record_criterion):
    start = time.perf_counter()
    failures, worst_rms, worst_max = [], 0.0, 0.0
    for seed in range(20):
        mode = "gnss" if seed % 2 == 0 else "gps"
        scenario = loads_scenario(
            f"seed: {seed}\nduration_s: 600\nrate_hz: 5\nnoise: {{displacement_mm: 3}}\n"
            "spikes: {rate: 0.01, min_mm: 50, max_mm: 50}\nsteps: [{at_s: 300, up: 10}]\n"
        )
        errors = run_mode(scenario, mode, transport=False).summary["errors"]
        for axis, e in errors.items():
            r_rms, f_rms = e["raw"]["rms"], e["filtered"]["rms"]
            r_max, f_max = e["raw"]["max"], e["filtered"]["max"]
            worst_rms, worst_max = max(worst_rms, f_rms / r_rms), max(worst_max, f_max / r_max)
            if not (f_rms < r_rms and f_max < r_max):
                failures.append((seed, axis))
    elapsed = time.perf_counter() - start
    passed = not failures and elapsed < 60.0
    record_criterion(6, "end-to-end error reduction", passed,
                     f"20 seeds x 3 axes, failures {failures}, worst filtered/raw RMS {worst_rms:.2f}, "
                     f"worst max {worst_max:.2f}, {elapsed:.1f} s (<60 s)")
    assert passed


def test_c07_dop_ordering(record_criterion):
    epochs_checked = violations = 0
    for seed in range(5):
        almanac = PseudoAlmanac(seed=seed)
        xyz = np.stack([almanac.positions(t) for t in range(0, 86_400_000, 60_000)])
        elev = np.stack([elevation_azimuth(REF, x)[0] for x in xyz])
        above = elev >= math.radians(10.0)
        gps = dop_batch(xyz, REF, above & system_mask(almanac, GPS_ONLY))["gdop"]
        combined = dop_batch(xyz, REF, above & system_mask(almanac, GNSS_COMBINED))["gdop"]
        ok = np.isfinite(gps)
        epochs_checked += int(ok.sum())
        violations += int(np.sum(~(combined[ok] <= gps[ok])))
    passed = violations == 0 and epochs_checked > 0
    record_criterion(7, "DOP ordering", passed,
                     f"{violations} violations of GDOP(combined) <= GDOP(GPS) over {epochs_checked} epochs")
    assert passed


def test_c08_baseline_solver(record_criterion):
    sim = RtkSimulator(PseudoAlmanac(seed=3), REF, MON, constellations=GPS_ONLY)
    sol = sim.step(0, MON)
    noiseless = float(np.linalg.norm(sol.monitor_position.as_array() - MON))
    length = abs(np.linalg.norm(sol.baseline_enu.as_array()) / 1000 - 0.8)
    worst_z = 0.0
    for mode in (GPS_ONLY, GNSS_COMBINED):
        noisy = RtkSimulator(PseudoAlmanac(seed=5), REF, MON, phase_sigma=0.005, seed=5, constellations=mode)
        err = noisy.solve_block(noisy.observe(np.arange(500, dtype=np.int64) * 200, MON)).displacement_mm
        se = err.std(axis=0, ddof=1) / math.sqrt(len(err))
        worst_z = max(worst_z, float(np.max(np.abs(err.mean(axis=0)) / se)))
    passed = noiseless <= 1e-9 and length <= 1e-9 and worst_z <= 3.0
    record_criterion(8, "baseline solver consistency", passed,
                     f"noiseless position error {noiseless:.1e} m, baseline length error {length:.1e} m (<=1e-9), "
                     f"Monte-Carlo worst |mean|/SE {worst_z:.2f} (<=3)")
    assert passed


def test_c09_transport_effectively_once(record_criterion):
    sent = []
    for i in range(10_000):
        sid = i % 4 + 1
        sent.append((sid, {"station": sid, "seq": i // 4, "v": i}))
    configs = [
        LinkSimConfig(loss_prob=0.30, duplicate_prob=0.2, reorder_window=4, corrupt_prob=0.05, seed=9),
        LinkSimConfig(loss_prob=0.10, duplicate_prob=0.5, reorder_window=8, seed=10),
    ]
    stored_ok = True
    details = []
    for cfg in configs:
        result = run_uplink(sent, cfg)
        values = [r["v"] for r in result.stored]
        in_order = all(
            [r["seq"] for r in result.stored if r["station"] == s] == list(range(2500)) for s in range(1, 5)
        )
        ok = len(values) == len(set(values)) == 10_000 and set(values) == set(range(10_000)) and in_order
        stored_ok &= ok
        details.append(f"loss {cfg.loss_prob:.0%}: {len(values)} stored, {result.transmissions} sent")
    rnd = random.Random(99)
    detected = total = 0
    for _ in range(100):
        frame = StationFrame(rnd.randrange(65536), rnd.randrange(65536), rnd.randrange(2**64),
                             rnd.randint(-(2**31), 2**31 - 1), rnd.randint(-(2**31), 2**31 - 1),
                             rnd.randint(-(2**31), 2**31 - 1), rnd.randrange(256))
        data = encode_frame(frame)
        assert decode_frame(data) == frame
        for bit in range(FRAME_SIZE * 8):
            buf = bytearray(data)
            buf[bit // 8] ^= 1 << (bit % 8)
            total += 1
            try:
                decode_frame(bytes(buf))
            except BadCrc:
                detected += 1
            except Exception:
                pass
    passed = stored_ok and detected == total
    record_criterion(9, "transport effectively-once", passed,
                     f"{'; '.join(details)}; exactly-once and ordered: {stored_ok}; "
                     f"bit-flip fuzz BadCrc {detected}/{total}")
    assert passed


def test_c10_determinism(record_criterion, tmp_path):
    scenario = loads_scenario("seed: 11\nsteps: [{at_s: 300, up: 10}]\n")
    simulate(scenario, tmp_path / "a")
    simulate(scenario, tmp_path / "b")
    names = ["summary.json", "truth.csv", "dop.csv", "gps/frames.bin", "gnss/frames.bin"]
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    stores = all(
        (tmp_path / "a" / p.relative_to(tmp_path / "b")).read_bytes() == p.read_bytes()
        for p in (tmp_path / "b").rglob("*.log")
    )
    passed = same and stores
    record_criterion(10, "determinism", passed,
                     f"two simulate runs with seed 11: summaries identical {same}, store segments identical {stores}")
    assert passed
