#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "rcse/scenario.hpp"
#include "support/fixtures.hpp"

using namespace rcse;

namespace {

ScenarioConfig small_config(const char* name = "ieee33") {
  ScenarioConfig c;
  c.case_name = name;
  c.delta = 5.0;
  c.pf_lo = 0.9;
  c.pf_hi = 1.1;
  c.pool_size = 60;
  c.test_size = 5;
  c.window_size = 20;
  c.k_neighbors = 4;
  c.redundancy = RedundancyLevel::High;
  c.grid_cardinality = 5;
  c.master_seed = 77;
  return c;
}

}  // namespace

TEST_CASE("no perturbation reproduces the base loads") {
  const auto net = fixtures::load("ieee33");
  Rng rng(1);
  const auto [p, q] = perturb_loads(net, 0.0, 1.0, 1.0, rng);
  for (int i = 0; i < net.bus_count(); ++i) {
    CHECK(p[i] == Catch::Approx(net.buses[i].load_p).margin(1e-15));
    CHECK(q[i] == Catch::Approx(net.buses[i].load_q).margin(1e-12));
  }
}

TEST_CASE("total active demand is preserved exactly") {
  const auto net = fixtures::load("ieee39");
  double total = 0.0;
  for (const auto& b : net.buses) total += b.load_p;
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto [p, q] = perturb_loads(net, 20.0, 0.9, 1.1, rng);
    CHECK(std::abs(p.sum() - total) < 1e-12 * total);
  }
}

TEST_CASE("participation draws behave uniformly over the +-20% band") {
  const auto net = fixtures::load("ieee33");
  Rng rng(123);
  // per-draw per-bus ratio to base; the renormalization perturbs each ratio
  // by only a few percent so uniform bounds and a flat histogram must hold
  std::vector<double> ratios;
  for (int trial = 0; trial < 400; ++trial) {
    const auto [p, q] = perturb_loads(net, 20.0, 1.0, 1.0, rng);
    for (int i = 0; i < net.bus_count(); ++i)
      if (net.buses[i].load_p != 0.0) ratios.push_back(p[i] / net.buses[i].load_p);
  }
  REQUIRE(ratios.size() > 10000);
  double mean = 0.0, lo = 1e9, hi = -1e9;
  for (double r : ratios) {
    mean += r;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  mean /= ratios.size();
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(lo > 0.70);  // renormalization widens the raw +-20% band slightly
  CHECK(hi < 1.30);
  double var = 0.0;
  int bins[4] = {0, 0, 0, 0};
  int inside = 0;
  for (double r : ratios) {
    var += (r - mean) * (r - mean);
    if (r >= 0.82 && r < 1.18) {
      ++bins[static_cast<int>((r - 0.82) / 0.09)];
      ++inside;
    }
  }
  const double stddev = std::sqrt(var / ratios.size());
  CHECK(stddev == Catch::Approx(0.2 / std::sqrt(3.0)).epsilon(0.08));
  for (int b = 0; b < 4; ++b)
    CHECK(std::abs(bins[b] / static_cast<double>(inside) - 0.25) < 0.04);
}

TEST_CASE("power factor never exceeds one") {
  const auto net = fixtures::load("ieee33");
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [p, q] = perturb_loads(net, 5.0, 0.7, 1.3, rng);
    for (int i = 0; i < net.bus_count(); ++i) {
      if (p[i] == 0.0) continue;
      const double pf = p[i] / std::hypot(p[i], q[i]);
      CHECK(pf <= 1.0 + 1e-12);
      CHECK(q[i] * net.buses[i].load_q >= 0.0);  // sign preserved
    }
  }
}

TEST_CASE("zero noise means measurements equal the model exactly") {
  auto config = small_config();
  config.sigma_pq = 0.0;
  config.sigma_vtheta = 0.0;
  config.pool_size = 10;
  config.test_size = 2;
  config.window_size = 5;
  config.k_neighbors = 2;
  const auto net = fixtures::load("ieee33");
  Dataset ds = generate_dataset(net, config);
  for (const auto& inst : ds.instances) {
    const auto z = eval_measurement_fn(inst.x_true, ds.model(), Subset::All).values;
    for (int c = 0; c < ds.plan.available_count(); ++c)
      CHECK(inst.z_a[c] == z[ds.plan.available_idx[c]]);
    for (int c = 0; c < ds.plan.delayed_count(); ++c)
      CHECK(inst.z_d[c] == z[ds.plan.delayed_idx[c]]);
  }
}

TEST_CASE("noise calibration: empirical sigma tracks the configured one") {
  auto config = small_config();
  config.pool_size = 250;  // 250 instances x ~46 power channels > 10k draws
  config.test_size = 5;
  const auto net = fixtures::load("ieee33");
  Dataset ds = generate_dataset(net, config);
  const SystemModel model = ds.model();
  double acc = 0.0;
  long count = 0;
  for (const auto& inst : ds.instances) {
    const auto z = eval_measurement_fn(inst.x_true, model, Subset::All).values;
    for (int c = 0; c < ds.plan.available_count(); ++c) {
      const int ch = ds.plan.available_idx[c];
      if (ds.plan.channels[ch].kind == ChannelKind::VMag ||
          ds.plan.channels[ch].kind == ChannelKind::VAngle)
        continue;
      const double e = inst.z_a[c] - z[ch];
      acc += e * e;
      ++count;
    }
    for (int c = 0; c < ds.plan.delayed_count(); ++c) {
      const double e = inst.z_d[c] - z[ds.plan.delayed_idx[c]];
      acc += e * e;
      ++count;
    }
  }
  REQUIRE(count >= 10000);
  const double sigma = std::sqrt(acc / count);
  CHECK(sigma > 0.0095);
  CHECK(sigma < 0.0105);
}

TEST_CASE("ground truth reproduces the drawn load profile") {
  auto config = small_config();
  config.pool_size = 8;
  config.test_size = 1;
  config.window_size = 5;
  config.k_neighbors = 2;
  const auto net = fixtures::load("ieee33");
  Dataset ds = generate_dataset(net, config);
  const int slack = net.slack_index();
  for (const auto& inst : ds.instances) {
    Eigen::VectorXd p, q;
    eval_injections(inst.x_true, ds.ybus, p, q);
    for (int i = 0; i < net.bus_count(); ++i) {
      if (i == slack) continue;
      CHECK(std::abs(p[i] + inst.load_p[i]) < 1e-7);
      CHECK(std::abs(q[i] + inst.load_q[i]) < 1e-7);
    }
  }
}

TEST_CASE("datasets are reproducible bit for bit, seeds matter") {
  const auto net = fixtures::load("ieee33");
  auto config = small_config();
  config.pool_size = 15;
  config.test_size = 2;
  config.window_size = 8;
  config.k_neighbors = 3;
  Dataset a = generate_dataset(net, config);
  Dataset b = generate_dataset(net, config);
  std::ostringstream sa, sb;
  save_dataset(a, sa);
  save_dataset(b, sb);
  CHECK(sa.str() == sb.str());

  config.master_seed = 78;
  Dataset c = generate_dataset(net, config);
  std::ostringstream sc;
  save_dataset(c, sc);
  CHECK(sa.str() != sc.str());
}

TEST_CASE("dataset save/load round trip preserves everything") {
  const auto net = fixtures::load("ieee33");
  auto config = small_config();
  config.pool_size = 12;
  config.test_size = 2;
  config.window_size = 6;
  config.k_neighbors = 2;
  Dataset ds = generate_dataset(net, config);
  retro_state(ds, 0);  // cache one retrospective state so it serializes too
  std::ostringstream out;
  save_dataset(ds, out);
  std::istringstream in(out.str());
  Dataset back = load_dataset(in, net);
  std::ostringstream out2;
  save_dataset(back, out2);
  CHECK(out.str() == out2.str());
  CHECK(back.plan.channel_count() == ds.plan.channel_count());
  CHECK(back.retro_states[0].has_value());
}

TEST_CASE("history windows: nesting, exclusion and retrospective consistency") {
  const auto net = fixtures::load("ieee39");
  ScenarioConfig config = small_config("ieee39");
  config.pool_size = 40;
  config.test_size = 4;
  config.window_size = 12;
  config.k_neighbors = 3;
  Dataset ds = generate_dataset(net, config);
  const int test_id = config.pool_size - 1;
  HistoryWindow window = build_history(ds, test_id, config.window_size);
  REQUIRE(window.size() == 12);

  for (const auto& s : window.samples) CHECK_FALSE(ds.is_test(s.sample_id));

  // same ordering as knn over the full candidate pool
  const auto member = window_member_ids(ds, test_id, config.window_size);
  const auto shorter = window_member_ids(ds, test_id, config.k_neighbors);
  for (int i = 0; i < config.k_neighbors; ++i) CHECK(member[i] == shorter[i]);

  // the window's own knn is the prefix of the same ordering
  const auto nb = knn_select(window, ds.instances[test_id].z_a, config.k_neighbors,
                             ds.plan.weights_for(Subset::Available));
  for (int i = 0; i < config.k_neighbors; ++i) CHECK(nb.sample_ids[i] == member[i]);

  // retrospective states satisfy the zero-injection balance
  for (const auto& s : window.samples) {
    const auto c = eval_measurement_fn(s.x_retro, ds.model(), Subset::ZeroInjection).values;
    CHECK(c.cwiseAbs().maxCoeff() < 1e-8);
  }
}
