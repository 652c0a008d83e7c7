// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <cstdio>
#include <functional>
#include <string>

#include "support.hpp"
#include "tacsync/bus_sim.hpp"
#include "tacsync/calib.hpp"
#include "tacsync/experiments.hpp"
#include "tacsync/framing.hpp"
#include "tacsync/poisson.hpp"

using namespace tacsync;
using experiments::Clock;
using experiments::seconds_since;

namespace {

// Tolerances and runtime budgets.
constexpr double kTransferRounding = 0.025;
constexpr double kSimVsFormula = 0.01;
constexpr double kTimingBudget = 5.0;
constexpr int kCobsTrials = 10000;
constexpr double kCobsBudget = 10.0;
constexpr double kDomeRmse = 1e-2;
constexpr double kResidual = 1e-6;
constexpr double kLinearity = 1e-9;
constexpr double kSolveBudget = 1.0;
constexpr double kZeroShotRatio = 1.25;
constexpr double kBenchmarkBudget = 300.0;
constexpr double kOffsetExact = 1e-9;
constexpr double kOffsetNoisy = 1e-3;
constexpr double kGraspBudget = 30.0;
constexpr double kEndToEnd = 0.15;

int failures = 0;

void report(bool ok, const char* name, const std::string& detail, double seconds) {
  std::printf("%s %-22s %s (%.2f s)\n", ok ? "PASS" : "FAIL", name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void timing() {
  const auto t0 = Clock::now();
  bool ok = bus::predicted_transfer_time(20480, 40'000'000) == 4096;
  ok = ok && std::abs(4096.0 - 4000.0) / 4000.0 <= kTransferRounding;
  bus::BusConfig base;
  double worst = 0.0;
  for (int n = 1; n <= 16; ++n) {
    bus::BusConfig c = base;
    c.n_sensors = n;
    const double rate = 1e6 / (n * 4096.0 + 1000.0);
    const long latency = n * 4096L + 1000L + 4096L;
    ok = ok && bus::predicted_frame_rate(c) == rate && bus::predicted_latency(c) == latency;
  }
  const experiments::TimingReport rep = experiments::timing_sweep(base, 16, 100);
  worst = std::max(rep.max_rate_rel_error(), rep.max_latency_rel_error());
  ok = ok && worst <= kSimVsFormula;
  const double s = seconds_since(t0);
  report(ok && s < kTimingBudget, "timing-formulas",
         fmt("t_spi=4096us, closed forms exact for N=1..16, worst sim/formula rel err %.2e", worst), s);
}

void sync_bound() {
  const auto t0 = Clock::now();
  bool ok = true;
  bus::Micros spread7 = -1, bound7 = -1;
  for (int n = 1; n <= 16; ++n) {
    bus::BusConfig c;
    c.n_sensors = n;
    const bus::AcquisitionTrace t = bus::simulate_rounds(c, 100);
    ok = ok && t.max_sync_error_us() <= 30L * n;
    if (n == 7) {
      spread7 = t.max_sync_error_us();
      bound7 = 30L * n;
    }
  }
  ok = ok && spread7 == 180 && bound7 == 210;
  report(ok, "sync-bound",
         fmt("spread <= 30N us for N=1..16; N=7 spread %.0f us vs bound %.0f us", static_cast<double>(spread7),
             static_cast<double>(bound7)),
         seconds_since(t0));
}

void cobs_packets() {
  using namespace framing;
  const auto t0 = Clock::now();
  Rng rng(20240);
  bool roundtrip = true, overhead = true;
  for (int i = 0; i < kCobsTrials; ++i) {
    const Bytes data = testing::random_bytes(rng, rng.below(2048), rng.uniform(0.0, 0.3));
    const Bytes enc = cobs_encode(data);
    overhead = overhead && enc.size() <= data.size() + (data.size() + 253) / 254 + 2;
    roundtrip = roundtrip && cobs_decode(enc) == data;
  }
  const bool golden = cobs_encode(Bytes{0x00}) == Bytes{0x01, 0x01, 0x00} &&
                      cobs_encode(Bytes{0x11, 0x22, 0x00, 0x33}) == Bytes{0x03, 0x11, 0x22, 0x02, 0x33, 0x00};
  bool golden_packets = true;
  const auto vectors = testing::load_golden_packets(std::string(TACSYNC_TEST_DATA_DIR) + "/golden_packets.hex");
  for (const auto& g : vectors)
    golden_packets = golden_packets && packet_serialize(g.packet) == g.framed && packet_parse(g.framed) == g.packet;
  golden_packets = golden_packets && vectors.size() == 3;

  Packet p;
  p.sensor_id = 5;
  p.round_id = 4242;
  p.capture_time_us = 1234567;
  p.payload = testing::random_bytes(rng, 256, 0.1);
  const Bytes wire = packet_serialize(p);
  std::size_t detected = 0, flips = wire.size() * 8;
  for (std::size_t bit = 0; bit < flips; ++bit) {
    Bytes bad = wire;
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    try {
      packet_parse(bad);
    } catch (const Error&) {
      ++detected;
    }
  }
  const double s = seconds_since(t0);
  report(roundtrip && overhead && golden && golden_packets && detected == flips && s < kCobsBudget, "cobs-packet",
         fmt("%.0f roundtrips exact, overhead bound held, golden vectors match, %.0f/%.0f bit flips detected",
             kCobsTrials, static_cast<double>(detected), static_cast<double>(flips)),
         s);
}

void poisson_solver() {
  const auto t0 = Clock::now();
  const DepthMap truth = testing::dome(64, 64, 1.0, 20.0);
  const DepthMap z = poisson::integrate_gradients(gelsim::depth_to_gradients(truth, 1.0));
  const double rmse = testing::relative_rmse(z, truth);

  const GradientField a = testing::random_gradients(48, 40, 1), b = testing::random_gradients(48, 40, 2);
  const DepthMap za = poisson::integrate_gradients(a, poisson::BoundaryCondition::DirichletZero, 0.1);
  const double residual = testing::poisson_residual(a, za, 0.1);
  std::vector<double> gx(a.gx().size()), gy(a.gy().size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = 2.0 * a.gx()[i] - 0.5 * b.gx()[i];
    gy[i] = 2.0 * a.gy()[i] - 0.5 * b.gy()[i];
  }
  const DepthMap zb = poisson::integrate_gradients(b, poisson::BoundaryCondition::DirichletZero, 0.1);
  const DepthMap zc =
      poisson::integrate_gradients(GradientField(48, 40, gx, gy), poisson::BoundaryCondition::DirichletZero, 0.1);
  double lin = 0.0;
  for (std::size_t i = 0; i < zc.values().size(); ++i)
    lin = std::max(lin, std::abs(zc.values()[i] - (2.0 * za.values()[i] - 0.5 * zb.values()[i])));

  const GradientField big = testing::random_gradients(256, 256, 3);
  const auto t1 = Clock::now();
  (void)poisson::integrate_gradients(big);
  const double solve = seconds_since(t1);
  report(rmse < kDomeRmse && residual < kResidual && lin < kLinearity && solve < kSolveBudget, "poisson",
         fmt("dome rel RMSE %.2e, residual %.2e, linearity %.2e, 256x256 solve %.3f s", rmse, residual, lin, solve),
         seconds_since(t0));
}

void offsets() {
  const auto t0 = Clock::now();
  const Vec3 delta{0.05, -0.03, 0.02};
  const Vec3 minus{-delta[0], -delta[1], -delta[2]};
  const auto stim = experiments::calibration_stimulus();
  SensorConfig quiet = default_sensor_config(0);
  quiet.noise_sigma = 0.0;
  auto capture = [&](const SensorConfig& c, std::uint64_t seed) {
    return std::get<DifferentialFrame>(gelsim::render_dataset(c, {stim}, seed, gelsim::InputMode::Diff).entries[0].input);
  };
  const DifferentialFrame clean = capture(quiet, 1);
  const calib::TransferOffsets exact = calib::estimate_channel_offsets(clean, calib::add_channel_offsets(clean, minus));
  const SensorConfig noisy = default_sensor_config(0);  // noise_sigma 0.005
  const calib::TransferOffsets est =
      calib::estimate_channel_offsets(capture(noisy, 1), calib::add_channel_offsets(capture(noisy, 2), minus));
  double e0 = 0.0, e1 = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    e0 = std::max(e0, std::abs(exact.delta[c] - delta[c]));
    e1 = std::max(e1, std::abs(est.delta[c] - delta[c]));
  }
  report(e0 <= kOffsetExact && e1 <= kOffsetNoisy, "offset-recovery",
         fmt("max error %.2e noise-free, %.2e at sigma 0.005", e0, e1), seconds_since(t0));
}

void grasp_sweep() {
  const auto t0 = Clock::now();
  const experiments::OvershootSweep sweep = experiments::overshoot_sweep(grasp::GraspScenario{}, {1, 2, 3, 4});
  std::string detail = "delayed overshoot";
  for (const auto& r : sweep.runs) detail += fmt(" %.5f", r.overshoot_delayed);
  detail += fmt(" vs sync %.5f", sweep.runs.empty() ? 0.0 : sweep.runs.front().overshoot_sync);
  const double s = seconds_since(t0);
  report(sweep.delayed_always_worse() && sweep.monotone() && sweep.runs.size() == 4 && s < kGraspBudget,
         "sync-overshoot", detail, s);
}

void benchmark_and_end_to_end() {
  const auto t0 = Clock::now();
  const experiments::BenchmarkReport rep = experiments::calibration_benchmark();
  const double s = seconds_since(t0);
  const calib::Mae d = rep.mlp_diff(), r = rep.mlp_raw();
  const calib::Mae ind = rep.target_individual(), zs = rep.target_zero_shot();
  const bool a = d.gx < r.gx && d.gy < r.gy;
  const bool b = zs.gx <= kZeroShotRatio * ind.gx && zs.gy <= kZeroShotRatio * ind.gy;
  bool c = rep.total_individual_captures() == 150;
  for (std::size_t i = 0; i < rep.sensors.size(); ++i) {
    c = c && rep.sensors[i].individual_captures == 50;
    if (static_cast<int>(i) != rep.options.reference_sensor) c = c && rep.sensors[i].zero_shot_captures == 1;
  }
  report(a && b && c && s < kBenchmarkBudget, "calibration-orderings",
         fmt("diff/raw MLP gx %.4f/%.4f gy %.4f/%.4f", d.gx, r.gx, d.gy, r.gy) +
             fmt("; zero-shot/individual %.3f gx %.3f gy", zs.gx / ind.gx, zs.gy / ind.gy) +
             fmt("; captures %.0f individual vs 1 per target (%.0f total)",
                 static_cast<double>(rep.total_individual_captures()),
                 static_cast<double>(rep.total_zero_shot_captures())),
         s);

  const auto t1 = Clock::now();
  const experiments::ReconstructionResult e2e = experiments::reconstruct_probe(
      rep.reference_model, rep.options.sensors[static_cast<std::size_t>(rep.options.reference_sensor)],
      experiments::held_out_sphere(), 777);
  report(e2e.relative() < kEndToEnd, "end-to-end",
         fmt("depth RMSE %.4f mm = %.1f%% of %.2f mm peak", e2e.rmse_mm, 100.0 * e2e.relative(), e2e.peak_mm),
         seconds_since(t1));
}

}  // namespace

int main() {
  const std::function<void()> checks[] = {timing,  sync_bound,  cobs_packets, poisson_solver,
                                          offsets, grasp_sweep, benchmark_and_end_to_end};
  for (const auto& check : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      std::printf("FAIL unexpected error: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
