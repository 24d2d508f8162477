#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <random>

#include "doctest.h"
#include "qpburst/errors.hpp"
#include "qpburst/waveform.hpp"
#include "support.hpp"

using namespace qpburst;
using test::reference_qubit;

namespace {

CycleSequence make_sequence(const std::vector<Outcome>& outcomes, double period = 15.3e-6) {
  CycleSequence s;
  s.outcomes = outcomes;
  s.true_states = outcomes;
  s.cycle_period = period;
  s.valid.resize(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i)
    s.valid[i] = i == 0 || outcomes[i - 1] == Outcome::ground;
  return s;
}

BinnedWaveform make_waveform(std::vector<int> n, std::vector<int> N, std::size_t pre,
                             double width = 612e-6) {
  BinnedWaveform w;
  w.qubit = "Q1";
  w.bin_width = width;
  w.pre_trigger_bins = pre;
  w.n = std::move(n);
  w.N = std::move(N);
  for (std::size_t i = 0; i < w.n.size(); ++i)
    w.bin_centers.push_back((static_cast<double>(i) - static_cast<double>(pre) + 0.5) * width);
  return w;
}

QubitEventFeatures row(std::uint64_t id, double baseline, double sigma = 0.01) {
  QubitEventFeatures r;
  r.event_id = id;
  r.trigger_time = static_cast<double>(id);
  r.qubit = "Q1";
  r.features.baseline_B = baseline;
  r.features.baseline_sigma = sigma;
  r.features.p_max = baseline + 0.5;
  r.features.i_tot = 100;
  r.features.i_tail = 10;
  return r;
}

}  // namespace

TEST_CASE("binning a cycle sequence") {
  SUBCASE("2000 cycles give 50 bins spanning 30.6 ms") {
    const auto w = bin_sequence(make_sequence(std::vector<Outcome>(2000, Outcome::ground)));
    CHECK(w.size() == 50);
    CHECK(w.size() * w.bin_width == doctest::Approx(30.6e-3));
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(w.n[i] == 40);
      CHECK(w.N[i] == 40);
      CHECK(w.p(i) == 1.0);
    }
  }
  SUBCASE("trailing partial bin is dropped") {
    CHECK(bin_sequence(make_sequence(std::vector<Outcome>(2039, Outcome::excited))).size() == 50);
  }
  SUBCASE("alternating outcomes") {
    std::vector<Outcome> alt(2000);
    for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? Outcome::ground : Outcome::excited;
    const auto seq = make_sequence(alt);
    const auto w = bin_sequence(seq);
    for (std::size_t b = 0; b < w.size(); ++b) {
      int n = 0, N = 0;
      for (std::size_t k = 40 * b; k < 40 * (b + 1); ++k)
        if (k == 0 || alt[k - 1] == Outcome::ground) {
          ++N;
          n += alt[k] == Outcome::ground;
        }
      CHECK(w.N[b] == 20);
      CHECK(w.N[b] == N);
      CHECK(w.n[b] == n);
    }
  }
  SUBCASE("an all-invalid bin has N = 0") {
    auto seq = make_sequence(std::vector<Outcome>(80, Outcome::ground));
    std::fill(seq.valid.begin() + 40, seq.valid.end(), 0);
    const auto w = bin_sequence(seq);
    CHECK(w.N[1] == 0);
    CHECK(w.empty_bins() == 1);
  }
  SUBCASE("too short") {
    CHECK_THROWS_AS(bin_sequence(make_sequence(std::vector<Outcome>(39, Outcome::ground))),
                    PreconditionError);
  }
}

TEST_CASE("count conservation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const BurstInjection b{2e-3, {150.0 * (seed + 1), 0.005, 6, 0}};
    const auto seq = simulate_sequence(reference_qubit("Q2"), b, 0.0, 2000, seed);
    const auto w = bin_sequence(seq);
    int errors = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) errors += seq.valid[i] && seq.outcomes[i] == Outcome::ground;
    CHECK(std::accumulate(w.n.begin(), w.n.end(), 0) == errors);
    CHECK_NOTHROW(w.validate(40));
  }
}

TEST_CASE("simulated windows are aligned at the trigger") {
  const auto w = simulate_waveform(reference_qubit("Q1"), BurstParams{100, 0.005, 6, 0}, 2.5, 1);
  CHECK(w.size() == 75);
  CHECK(w.pre_trigger_bins == 25);
  CHECK(w.bin_width == doctest::Approx(612e-6));
  CHECK(w.bin_centers[25] == doctest::Approx(306e-6));
  CHECK(w.trigger_time == 2.5);
}

TEST_CASE("features of simple waveforms") {
  SUBCASE("constant waveform") {
    const auto w = make_waveform(std::vector<int>(75, 10), std::vector<int>(75, 40), 25);
    const auto f = compute_features(w);
    CHECK(f.p_max == 0.25);
    CHECK(f.baseline_B == 0.25);
    CHECK(f.baseline_sigma == 0.0);
    CHECK(f.n_sat == 0);
    const auto sat = compute_features(make_waveform(std::vector<int>(75, 40), std::vector<int>(75, 40), 25));
    CHECK(sat.n_sat == 75);
  }
  SUBCASE("single saturated bin at the trigger") {
    std::vector<int> n(75, 3);
    n[25] = 40;
    const auto f = compute_features(make_waveform(n, std::vector<int>(75, 40), 25));
    CHECK(f.n_sat == 1);
    CHECK(f.t_max == 0.0);
    CHECK(f.p_max == 1.0);
  }
  SUBCASE("ties resolve to the earliest bin") {
    std::vector<int> n(75, 3);
    n[30] = n[40] = 20;
    const auto f = compute_features(make_waveform(n, std::vector<int>(75, 40), 25));
    CHECK(f.t_max == doctest::Approx(5 * 612e-6));
  }
  SUBCASE("errors") {
    std::vector<int> N(75, 40);
    N[0] = N[1] = 0;
    CHECK_THROWS_AS(compute_features(make_waveform(std::vector<int>(75, 0), N, 2)), FeatureError);
    CHECK_THROWS_AS(compute_features(make_waveform(std::vector<int>(75, 0), std::vector<int>(75, 40), 1)),
                    PreconditionError);
  }
}

TEST_CASE("features match a direct recomputation") {
  std::vector<int> n(75), N(75);
  for (int i = 0; i < 75; ++i) {
    N[i] = 40 - (i % 3);
    n[i] = i < 25 ? (i * 7) % 5 : std::max(0, N[i] - 2 * (i - 25));
  }
  const auto w = make_waveform(n, N, 25);
  const auto f = compute_features(w);
  double sum = 0, sq = 0;
  for (int i = 0; i < 25; ++i) sum += double(n[i]) / N[i];
  const double b = sum / 25;
  for (int i = 0; i < 25; ++i) sq += std::pow(double(n[i]) / N[i] - b, 2);
  CHECK(f.baseline_B == doctest::Approx(b).epsilon(1e-14));
  CHECK(f.baseline_sigma == doctest::Approx(std::sqrt(sq / 24)).epsilon(1e-14));
  // Post-trigger bin j has its centre at (j + 0.5) * 0.612 ms.
  double i5 = 0, itot = 0, itail = 0;
  int sat = 0;
  for (int j = 0; j < 50; ++j) {
    const double t = (j + 0.5) * 0.612;
    if (t <= 5) i5 += n[25 + j];
    itot += n[25 + j];
    if (t >= 10) itail += n[25 + j];
  }
  for (int i = 0; i < 75; ++i) sat += n[i] == N[i];
  CHECK(f.i_5ms == i5);
  CHECK(f.i_tot == itot);
  CHECK(f.i_tail == itail);
  CHECK(f.n_sat == sat);
  CHECK(f.p_max == 1.0);
  CHECK(f.t_max == 0.0);
}

TEST_CASE("feature invariants on simulated pulses") {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 100; ++k) {
    const double e = std::pow(10.0, 1 + 4 * (k % 10) / 9.0);
    const auto w = simulate_waveform(reference_qubit("Q4"), BurstParams{e, 0.005, 6, 0}, 0.0, rng());
    const auto f = compute_features(w);
    CHECK(f.i_tail <= f.i_tot);
    CHECK(f.i_5ms <= f.i_tot);
    CHECK(f.n_sat <= static_cast<int>(w.size()));
    CHECK(f.p_max >= f.baseline_B);
  }
}

TEST_CASE("median n_sat does not decrease with energy") {
  const auto q = reference_qubit("Q1");
  double prev = -1;
  for (double e : {300.0, 3e3, 3e4, 3e5}) {
    std::vector<double> nsat;
    for (std::uint64_t s = 0; s < 200; ++s)
      nsat.push_back(compute_features(simulate_waveform(q, BurstParams{e, 0.005, 6, 0}, 0.0, s + 7919)).n_sat);
    const double med = quantile(nsat, 0.5);
    CHECK(med >= prev);
    prev = med;
  }
}

TEST_CASE("baseline cut") {
  std::vector<QubitEventFeatures> rows;
  for (std::uint64_t i = 0; i < 100; ++i) rows.push_back(row(i, 0.08));
  auto report = apply_quality_cuts(rows);
  for (const auto& f : report.flags) CHECK(f.baseline);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.08, 0.002);
  rows.clear();
  for (std::uint64_t i = 0; i < 400; ++i) rows.push_back(row(i, g(rng)));
  CutConfig no_stability;
  no_stability.stability_cut = false;
  const auto base = derive_cut_thresholds(rows, no_stability).per_qubit.at("Q1");
  rows[200].features.baseline_B = base.baseline_mean + 3 * base.baseline_std;
  report = apply_quality_cuts(rows, no_stability);
  CHECK_FALSE(report.flags[200].baseline);
}

TEST_CASE("rolling detector flags an injected baseline step") {
  std::mt19937_64 rng(21);
  int total_flagged = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::normal_distribution<double> g(0.08, 0.002);
    std::vector<double> b(300);
    for (auto& v : b) v = g(rng);
    for (int i = 150; i < 160; ++i) b[i] += 5 * 0.002;
    const auto flags = detect_baseline_jumps(b, 20, 3.0);
    int hit = 0;
    for (int i = 150; i < 160; ++i) hit += flags[i];
    CHECK(hit >= 8);
    total_flagged += hit;
  }
  CHECK(total_flagged >= 8 * 20);
}

TEST_CASE("cuts are idempotent and the combined efficiency is the tightest") {
  std::mt19937_64 rng(5);
  std::vector<QubitEventFeatures> rows;
  for (std::uint64_t ev = 0; ev < 300; ++ev)
    for (const char* q : {"Q1", "Q2", "Q4"}) {
      const auto w = simulate_waveform(reference_qubit(q),
                                       BurstParams{std::pow(10.0, 1 + 3 * (ev % 7) / 6.0), 0.005, 6, 0},
                                       ev * 1.0, rng());
      rows.push_back({ev, ev * 1.0, q, compute_features(w)});
    }
  for (int i = 100; i < 110; ++i) rows[3 * i].features.baseline_B += 0.05;
  const auto first = apply_quality_cuts(rows);
  const auto kept = passing_rows(rows, first);
  CHECK(kept.size() < rows.size());
  const auto second = apply_quality_cuts(kept, first.thresholds);
  for (const auto& f : second.flags) CHECK(f.quality());
  const auto again = apply_quality_cuts(rows, first.thresholds);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again.flags[i].quality() == first.flags[i].quality());

  const auto& all = first.efficiency("all");
  for (const char* q : {"Q1", "Q2", "Q4"}) {
    const auto& e = first.efficiency(q);
    CHECK(e.eff_quality() >= 0);
    CHECK(e.eff_quality() <= 1);
    CHECK(all.eff_quality() <= e.eff_quality());
    CHECK(all.eff_total() <= e.eff_total());
    CHECK(e.eff_total() <= std::min(e.eff_quality(), e.eff_analysis()));
  }
}

TEST_CASE("low-energy selection") {
  std::vector<PulseFeatures> noise(50);
  for (auto& f : noise) {
    f.baseline_B = 0.08;
    f.baseline_sigma = 0.05;
    f.p_max = 0.15;
  }
  for (const auto& s : select_low_energy(noise)) CHECK(s.members.empty());

  auto picked = noise;
  picked[7].p_max = 0.08 + 3.5 * 0.05;
  picked[9].p_max = 0.08 + 5.5 * 0.05;
  picked[11].p_max = 0.9;
  const auto slices = select_low_energy(picked);
  REQUIRE(!slices.empty());
  CHECK(slices.front().n_sigma == 3);
  CHECK(slices.front().members == std::vector<std::size_t>{7});
  for (const auto& s : slices) {
    CHECK(0.08 + (s.n_sigma + 1) * 0.05 <= 0.6);
    for (auto i : s.members) CHECK(picked[i].p_max < 0.6);
  }
  CHECK(slices.back().n_sigma == 9);
  CHECK_THROWS_AS(select_low_energy(picked, 2), PreconditionError);
}

TEST_CASE("low-energy selection of simulated pulses") {
  const auto q = reference_qubit("Q1");
  std::vector<PulseFeatures> feats;
  for (std::uint64_t s = 0; s < 200; ++s)
    feats.push_back(compute_features(simulate_waveform(q, BurstParams{s % 2 ? 25.0 : 60.0, 0.005, 6, 0}, 0.0, s)));
  const auto slices = select_low_energy(feats);
  REQUIRE(!slices.empty());
  std::size_t members = 0;
  for (const auto& s : slices)
    for (auto i : s.members) {
      ++members;
      const auto& f = feats[i];
      CHECK(f.p_max > f.baseline_B + s.n_sigma * f.baseline_sigma);
      CHECK(f.p_max < f.baseline_B + (s.n_sigma + 1) * f.baseline_sigma);
      CHECK(f.p_max < 0.6);
    }
  CHECK(members > 0);
}

TEST_CASE("high-energy selection") {
  std::vector<PulseFeatures> f(100);
  for (std::size_t i = 0; i < f.size(); ++i) f[i].n_sat = static_cast<int>(i % 9);
  const auto sel = select_high_energy(f);
  REQUIRE(sel.size() == 3);
  CHECK(sel[0].n_sat_above == 5);
  CHECK(sel[1].n_sat_above == 6);
  CHECK(sel[2].n_sat_above == 7);
  for (const auto& s : sel)
    for (auto i : s.members) CHECK(f[i].n_sat > s.n_sat_above);

  std::vector<PulseFeatures> one(10);
  one[3].n_sat = 9;
  CHECK(select_high_energy(one).empty());
  CHECK(select_high_energy(std::vector<PulseFeatures>(10)).empty());
}

TEST_CASE("n_sat distribution of saturated pulses is reproducible") {
  const auto q = reference_qubit("Q1");
  auto mode = [&](std::uint64_t base) {
    std::map<int, int> hist;
    for (std::uint64_t s = 0; s < 1000; ++s)
      ++hist[compute_features(simulate_waveform(q, BurstParams{1e5, 0.005, 6, 0}, 0.0, base + s)).n_sat];
    return std::max_element(hist.begin(), hist.end(),
                            [](const auto& a, const auto& b) { return a.second < b.second; })
        ->first;
  };
  CHECK(std::abs(mode(0) - mode(1000000)) <= 1);
}

TEST_CASE("average pulse") {
  const auto a = make_waveform(std::vector<int>(75, 0), std::vector<int>(75, 40), 25);
  const auto b = make_waveform(std::vector<int>(75, 40), std::vector<int>(75, 40), 25);
  const std::vector<BinnedWaveform> same{b, b};
  const auto self = average_pulse(same);
  for (std::size_t i = 0; i < 75; ++i) CHECK(self.p(i) == b.p(i));
  const std::vector<BinnedWaveform> mixed{a, b};
  const auto avg = average_pulse(mixed);
  for (std::size_t i = 0; i < 75; ++i) {
    CHECK(avg.p(i) == 0.5);
    CHECK(avg.N[i] == 80);
  }
  const std::vector<BinnedWaveform> one{a};
  CHECK_THROWS_AS(average_pulse(one), PreconditionError);
  const std::vector<BinnedWaveform> misaligned{a, make_waveform(std::vector<int>(75, 0), std::vector<int>(75, 40), 24)};
  CHECK_THROWS_AS(average_pulse(misaligned), AlignmentError);
}

TEST_CASE("bin-wise scatter of average pulses shrinks as one over root N") {
  const auto q = reference_qubit("Q5");
  std::uint64_t seed = 100;
  auto scatter = [&](std::size_t n_avg) {
    std::vector<std::vector<double>> p(30);
    for (int rep = 0; rep < 30; ++rep) {
      std::vector<BinnedWaveform> ws;
      for (std::size_t k = 0; k < n_avg; ++k)
        ws.push_back(simulate_waveform(q, BurstParams{200, 0.005, 6, 0}, 0.0, seed++));
      const auto ap = average_pulse(ws);
      for (std::size_t i = 0; i < ap.size(); ++i) p[rep].push_back(ap.p(i));
    }
    double total = 0;
    for (std::size_t i = 0; i < p[0].size(); ++i) {
      double m = 0, ss = 0;
      for (const auto& r : p) m += r[i] / p.size();
      for (const auto& r : p) ss += (r[i] - m) * (r[i] - m);
      total += std::sqrt(ss / (p.size() - 1));
    }
    return total / p[0].size();
  };
  const double s4 = scatter(4), s16 = scatter(16), s64 = scatter(64);
  CHECK(s4 / s16 == doctest::Approx(2.0).epsilon(0.2));
  CHECK(s16 / s64 == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("type-7 quantile") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({5}, 0.99) == 5);
  CHECK_THROWS_AS(quantile({}, 0.5), PreconditionError);
}
