"""High-precision reference values frozen into the C++ unit tests.

Run with `python3 tests/oracles/oracles.py`; every number printed here is
computed independently of the C++ implementation using mpmath.
"""
import mpmath as mp

mp.mp.dps = 60

HBAR = mp.mpf("1.054571817e-34")       # J s
EV = mp.mpf("1.602176634e-19")         # J / eV


def alpha(f_ghz, delta_uev, dt_us):
    omega = 2 * mp.pi * mp.mpf(f_ghz) * mp.mpf(10) ** 9
    delta = mp.mpf(delta_uev) * mp.mpf(10) ** -6 * EV
    dt = mp.mpf(dt_us) * mp.mpf(10) ** -6
    return dt * mp.sqrt(2 * omega * delta / (mp.pi ** 2 * HBAR))


def beta(ncp, vol_um3, delta_uev, eps):
    return mp.mpf(ncp) * mp.mpf(vol_um3) * mp.mpf(10) ** -18 * mp.mpf(delta_uev) * mp.mpf(10) ** -6 / mp.mpf(eps)


def p_r(t_s, e_dep, r_ns, tau_ms, gamma, a, b):
    r = mp.mpf(r_ns) * mp.mpf(10) ** 9
    tau = mp.mpf(tau_ms) * mp.mpf(10) ** -3
    g = mp.e ** (mp.mpf(t_s) / tau)
    x = a * e_dep / (e_dep * tau * r * (g - 1) + b * g)
    return 1 - mp.e ** (-x - gamma)


def binom_loglik(n, N, p):
    total = mp.mpf(0)
    for ni, Ni, pi in zip(n, N, p):
        total += mp.log(mp.binomial(Ni, ni) * pi ** ni * (1 - pi) ** (Ni - ni))
    return total


if __name__ == "__main__":
    a1 = alpha("4.534", 180, 3)
    print("alpha_Q1", mp.nstr(a1, 20))
    b = beta("4e24", 6975, 180, "0.57")
    print("beta", mp.nstr(b, 20))
    print("p_obs_Q2", mp.nstr(mp.mpf("0.5") * mp.mpf("0.9965") + mp.mpf("0.0020"), 20))
    print("phi_m1", mp.nstr(mp.ncdf(-1), 20))
    print("kaplan_F1", mp.nstr(mp.mpf("21.8") / 438, 20))
    # Relaxation probability at a few reference points (default Q1 constants)
    for (t, e, r, tau, gam) in [(0, 50, "0.005", 6, 0), (0.003, 100, "0.005", 6, "0.08"),
                                (0.010, 100000, "0.005", 6, 0), (0.020, 500, "0.007", 5, "0.05")]:
        print("p_r", t, e, r, tau, gam, mp.nstr(p_r(t, e, r, tau, mp.mpf(gam), a1, b), 20))
    # Binomial log-likelihood over a 50-bin reference waveform.
    n = [(7 * i + 3) % 41 for i in range(50)]
    N = [40 - (i % 5) for i in range(50)]
    n = [min(a, c) for a, c in zip(n, N)]
    p = [mp.mpf(1) / (2 + mp.mpf(i) / 7) for i in range(50)]
    print("binom_ref", mp.nstr(binom_loglik(n, N, p), 25))

    # Model-based log-likelihood: default Q1 readout, 5 pre-trigger + 50 post-trigger bins.
    fid, pge = mp.mpf("0.9996"), mp.mpf("0.0002")
    width = 40 * mp.mpf("15.3e-6")
    for (e, r, tau, gam) in [(300, "0.005", 6, "0.05"), (2e4, "0.006", "5.5", "0.02")]:
        total = mp.mpf(0)
        for i in range(55):
            t = (i - 5 + mp.mpf("0.5")) * width
            Ni = 40 - i % 4
            ni = min((5 * i + 1) % 37, Ni)
            pr = p_r(t, e, r, tau, mp.mpf(gam), a1, b) if t >= 0 else 1 - mp.e ** (-mp.mpf(gam))
            po = fid * pr + pge
            total += mp.log(mp.binomial(Ni, ni)) + ni * mp.log(po) + (Ni - ni) * mp.log(1 - po)
        print("model_loglik", e, r, tau, gam, mp.nstr(total, 25))
