"""Quick check that the compiled extension loads and agrees with itself."""

import csv
import io
import math

import ltqkd_py as q


def main():
    assert abs(q.binary_entropy(0.11) - 0.499915958164528) < 1e-12
    assert abs(q.g_c(1e6, 1e-10) - 6786.140424415112) < 1e-9
    assert abs(2 * q.g_h(1e6, 1e-10) - q.g_c(1e6, 1e-10)) < 1e-9

    ch = q.Channel(distance_km=50.0, xi=0.147)
    params = q.Params(0.85, 0.7, 0.2, 0.45, 0.08)
    ev = q.Evaluator(ch, n_total=1e12)
    finite = ev.evaluate(params)
    asym = q.Evaluator(ch, asymptotic=True).evaluate(params)
    assert ev.mode == "exact"
    assert 0 < finite.rate <= asym.rate, (finite, asym)
    assert finite.m1_lower > 0 and 0 < finite.eph_upper < 0.5

    best, res, n = ev.at_distance(100.0).optimize(seed=1, grid_points=4)
    assert res.rate > 0 and n > 0
    assert set(best.to_dict()) >= {"p_z", "k_s"}

    text = q.sweep_csv("[sweep]\nstart_km = 0\nstop_km = 100\nstep_km = 50\n[optimizer]\ngrid_points = 4\n")
    rows = list(csv.DictReader(io.StringIO(text)))
    rates = [float(r["rate"]) for r in rows]
    assert len(rows) == 3 and all(math.isfinite(r) for r in rates)
    assert rates == sorted(rates, reverse=True)

    try:
        q.Channel(distance_km=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative distance accepted")

    print("smoke test ok:", ", ".join(f"{float(r['distance_km']):g} km: {float(r['rate']):.3e}" for r in rows))


if __name__ == "__main__":
    main()
