#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "flowrl/critic.hpp"
#include "flowrl/envs.hpp"
#include "flowrl/evaluate.hpp"
#include "flowrl/replay.hpp"

using namespace flowrl;

namespace {

void zero_params(Mlp& net) {
  for (auto& l : net.layers) {
    std::fill(l.w.mutable_data().begin(), l.w.mutable_data().end(), 0.0);
    std::fill(l.b.mutable_data().begin(), l.b.mutable_data().end(), 0.0);
  }
  for (auto& n : net.norms) {
    std::fill(n.gain.mutable_data().begin(), n.gain.mutable_data().end(), 0.0);
    std::fill(n.bias.mutable_data().begin(), n.bias.mutable_data().end(), 0.0);
  }
}

// scalar-loop critic forward (affine -> layer_norm -> gelu hidden, affine out)
double critic_by_hand(const Mlp& net, std::vector<double> h) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto w = net.layers[l].w.data();
    auto b = net.layers[l].b.data();
    int out_dim = net.layers[l].w.dim(0), in_dim = net.layers[l].w.dim(1);
    std::vector<double> next(out_dim);
    for (int o = 0; o < out_dim; ++o) {
      double acc = b[o];
      for (int i = 0; i < in_dim; ++i) acc += w[o * in_dim + i] * h[i];
      next[o] = acc;
    }
    if (l + 1 < net.layers.size()) {
      double mu = 0.0, var = 0.0;
      for (double v : next) mu += v;
      mu /= out_dim;
      for (double v : next) var += (v - mu) * (v - mu);
      var /= out_dim;
      auto gain = net.norms[l].gain.data();
      auto bias = net.norms[l].bias.data();
      for (int o = 0; o < out_dim; ++o) {
        double xh = (next[o] - mu) / std::sqrt(var + 1e-6);
        double y = xh * gain[o] + bias[o];
        next[o] = y * 0.5 * (1.0 + std::erf(y / std::sqrt(2.0)));
      }
    }
    h = std::move(next);
  }
  return h[0];
}

Dataset tiny_dataset(int rows, int sd, int ad, std::uint64_t seed) {
  Dataset ds;
  ds.state_dim = sd;
  ds.action_dim = ad;
  ds.env_name = "test";
  ds.generator_seed = seed;
  Rng rng = Rng::master(seed).child("rows");
  for (int i = 0; i < rows; ++i) {
    Transition t;
    for (int j = 0; j < sd; ++j) t.s.push_back(rng.normal());
    for (int j = 0; j < ad; ++j) t.a.push_back(2.0 * rng.uniform() - 1.0);
    t.r = rng.normal();
    for (int j = 0; j < sd; ++j) t.s_next.push_back(rng.normal());
    t.mask = rng.uniform() < 0.8 ? 1.0 : 0.0;
    ds.push(t);
  }
  return ds;
}

}  // namespace

TEST_CASE("td_target arithmetic") {
  CHECK(td_target(3.0, 0.0, 0.99, 100.0, -50.0, TargetAgg::mean) == 3.0);
  CHECK(td_target(1.0, 1.0, 0.99, 2.0, 2.0, TargetAgg::mean) == doctest::Approx(2.98).epsilon(1e-15));
  CHECK(td_target(1.0, 1.0, 0.99, 2.0, 3.0, TargetAgg::min) == doctest::Approx(2.98).epsilon(1e-15));
  CHECK(td_target(1.0, 1.0, 0.99, 2.0, 3.0, TargetAgg::mean) == doctest::Approx(3.475).epsilon(1e-15));
  CHECK_THROWS_AS(td_target(0.0, 1.0, 1.0, 0.0, 0.0, TargetAgg::mean), std::invalid_argument);
}

TEST_CASE("critic_loss oracles") {
  SUBCASE("predictions equal to targets give zero loss") {
    Rng rng = Rng::master(1).child("c");
    CriticPair c = CriticPair::make(1, 1, {4}, TargetAgg::mean, rng);
    zero_params(c.q1);
    zero_params(c.q2);
    zero_params(c.target_q1);
    zero_params(c.target_q2);
    Batch b;
    b.size = 2;
    b.s = Tensor::zeros({2, 1});
    b.a = Tensor::zeros({2, 1});
    b.s_next = Tensor::zeros({2, 1});
    b.r = {0.0, 0.0};
    b.mask = {0.0, 1.0};
    Tensor loss = critic_loss(c, b, Tensor::zeros({2, 1}), 0.99);
    CHECK(loss.value() == 0.0);
  }
  SUBCASE("single transition, prediction 0, target 2.98 gives 8.8804") {
    Rng rng = Rng::master(2).child("c");
    CriticPair c = CriticPair::make(1, 1, {4}, TargetAgg::mean, rng);
    zero_params(c.q1);
    zero_params(c.q2);
    zero_params(c.target_q1);
    zero_params(c.target_q2);
    // target networks emit a constant 2 via the output bias
    c.target_q1.layers.back().b.mutable_data()[0] = 2.0;
    c.target_q2.layers.back().b.mutable_data()[0] = 2.0;
    Batch b;
    b.size = 1;
    b.s = Tensor::zeros({1, 1});
    b.a = Tensor::zeros({1, 1});
    b.s_next = Tensor::zeros({1, 1});
    b.r = {1.0};
    b.mask = {1.0};
    Tensor loss = critic_loss(c, b, Tensor::zeros({1, 1}), 0.99);
    CHECK(loss.value() == doctest::Approx(8.8804).epsilon(1e-12));
  }
  SUBCASE("random batch matches a straight-line recomputation") {
    Rng rng = Rng::master(3).child("c");
    CriticPair c = CriticPair::make(2, 1, {5, 4}, TargetAgg::min, rng);
    // drift the targets so they differ from the online nets
    c.target_q1.layers[0].w.mutable_data()[0] += 0.3;
    c.target_q2.layers[1].b.mutable_data()[1] -= 0.2;

    int n = 5;
    Batch b;
    std::vector<double> sv(n * 2), av(n), snv(n * 2), nav(n);
    for (double& v : sv) v = rng.normal();
    for (double& v : av) v = 2.0 * rng.uniform() - 1.0;
    for (double& v : snv) v = rng.normal();
    for (double& v : nav) v = 2.0 * rng.uniform() - 1.0;
    b.size = n;
    b.s = Tensor::from({n, 2}, sv);
    b.a = Tensor::from({n, 1}, av);
    b.s_next = Tensor::from({n, 2}, snv);
    for (int i = 0; i < n; ++i) {
      b.r.push_back(rng.normal());
      b.mask.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
    }
    Tensor next_a = Tensor::from({n, 1}, nav);
    Tensor loss = critic_loss(c, b, next_a, 0.97);

    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> sa = {sv[2 * i], sv[2 * i + 1], av[i]};
      std::vector<double> sna = {snv[2 * i], snv[2 * i + 1], nav[i]};
      double t1 = critic_by_hand(c.target_q1, sna);
      double t2 = critic_by_hand(c.target_q2, sna);
      double y = b.r[i] + 0.97 * b.mask[i] * std::min(t1, t2);
      double p1 = critic_by_hand(c.q1, sa);
      double p2 = critic_by_hand(c.q2, sa);
      expect += (p1 - y) * (p1 - y) + (p2 - y) * (p2 - y);
    }
    expect /= 2.0 * n;
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("buffer_sample") {
  SUBCASE("buffer of one row always returns it") {
    ReplayBuffer buf(tiny_dataset(1, 2, 1, 7), 8);
    Rng rng = Rng::master(1).child("b");
    Batch b = buffer_sample(buf, 5, rng);
    Transition t = buf.data().row(0);
    for (int k = 0; k < 5; ++k) {
      CHECK(b.s.item(2 * k) == t.s[0]);
      CHECK(b.a.item(k) == t.a[0]);
      CHECK(b.r[k] == t.r);
    }
  }
  SUBCASE("fixed seed gives identical index sequences") {
    ReplayBuffer buf(tiny_dataset(50, 1, 1, 8), 64);
    Rng r1 = Rng::master(4).child("b");
    Rng r2 = Rng::master(4).child("b");
    Batch b1 = buffer_sample(buf, 32, r1);
    Batch b2 = buffer_sample(buf, 32, r2);
    CHECK(std::memcmp(b1.s.data().data(), b2.s.data().data(), 32 * sizeof(double)) == 0);
    CHECK(b1.r == b2.r);
  }
  SUBCASE("uniform frequencies within 3 sigma") {
    ReplayBuffer buf(tiny_dataset(10, 1, 1, 9), 16);
    Rng rng = Rng::master(5).child("b");
    std::vector<int> counts(10, 0);
    Batch b = buffer_sample(buf, 100000, rng);
    // recover indices by matching rewards (all distinct with probability 1)
    for (int k = 0; k < 100000; ++k)
      for (int i = 0; i < 10; ++i)
        if (b.r[k] == buf.data().r[i]) {
          ++counts[i];
          break;
        }
    double sigma = std::sqrt(100000 * 0.1 * 0.9);
    for (int c : counts) CHECK(std::abs(c - 10000) <= 3.0 * sigma);
  }
  SUBCASE("empty buffer is rejected") {
    Dataset empty;
    empty.state_dim = 1;
    empty.action_dim = 1;
    ReplayBuffer buf(empty, 4);
    Rng rng = Rng::master(6).child("b");
    CHECK_THROWS_AS(buffer_sample(buf, 1, rng), std::invalid_argument);
  }
}

TEST_CASE("replay buffer append keeps offline rows") {
  Dataset off = tiny_dataset(4, 1, 1, 10);
  std::vector<double> offline_rewards = off.r;
  ReplayBuffer buf(std::move(off), 6);
  Transition t{{0.5}, {0.1}, 42.0, {0.6}, 1.0};
  buf.append(t);
  CHECK(buf.size() == 5);
  t.r = 43.0;
  buf.append(t);
  CHECK(buf.size() == 6);
  // buffer full: further appends cycle within the online region only
  t.r = 44.0;
  buf.append(t);
  CHECK(buf.size() == 6);
  for (int i = 0; i < 4; ++i) CHECK(buf.data().r[i] == offline_rewards[i]);
  CHECK(buf.data().r[4] == 44.0);
  CHECK(buf.data().r[5] == 43.0);

  SUBCASE("capacity equal to offline size rejects appends") {
    ReplayBuffer full(tiny_dataset(3, 1, 1, 11), 3);
    CHECK_THROWS(full.append(t));
  }
}

TEST_CASE("dataset files round-trip and are byte-stable") {
  Dataset ds = tiny_dataset(32, 3, 2, 12);
  ds.env_name = "point_maze";
  save_dataset("ds_a.bin", ds);
  save_dataset("ds_b.bin", ds);
  Dataset back = load_dataset("ds_a.bin");
  CHECK(back.state_dim == 3);
  CHECK(back.action_dim == 2);
  CHECK(back.env_name == "point_maze");
  CHECK(back.generator_seed == ds.generator_seed);
  CHECK(back.s == ds.s);
  CHECK(back.a == ds.a);
  CHECK(back.r == ds.r);
  CHECK(back.s_next == ds.s_next);
  CHECK(back.mask == ds.mask);

  std::ifstream fa("ds_a.bin", std::ios::binary), fb("ds_b.bin", std::ios::binary);
  std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ca == cb);
  fa.close();
  fb.close();

  std::ofstream bad("ds_bad.bin", std::ios::binary);
  bad << "NOTADATA";
  bad.close();
  CHECK_THROWS(load_dataset("ds_bad.bin"));
  std::remove("ds_a.bin");
  std::remove("ds_b.bin");
  std::remove("ds_bad.bin");
}

TEST_CASE("evaluate protocol") {
  SUBCASE("always-right policy solves disc_chain") {
    EnvSpec spec = EnvSpec::make(EnvName::disc_chain);
    PolicyFn right = [](std::span<const double>, Rng&) { return std::vector<double>{1.0}; };
    EvalResult r = evaluate(right, spec, 10, Rng::master(1).child("eval"));
    CHECK(r.success_rate == 1.0);
    CHECK(r.mean_return == 1.0);
  }
  SUBCASE("uniform random policy rarely solves point_maze") {
    EnvSpec spec = EnvSpec::make(EnvName::point_maze);
    PolicyFn random = [](std::span<const double>, Rng& rng) {
      return std::vector<double>{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    };
    EvalResult r = evaluate(random, spec, 50, Rng::master(2).child("eval"));
    CHECK(r.success_rate <= 0.1);
  }
  SUBCASE("same seed gives identical results") {
    EnvSpec spec = EnvSpec::make(EnvName::point_maze);
    PolicyFn random = [](std::span<const double>, Rng& rng) {
      return std::vector<double>{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    };
    EvalResult r1 = evaluate(random, spec, 20, Rng::master(3).child("eval"));
    EvalResult r2 = evaluate(random, spec, 20, Rng::master(3).child("eval"));
    CHECK(r1.success_rate == r2.success_rate);
    CHECK(r1.mean_return == r2.mean_return);
  }
}

TEST_CASE("aggregate_final") {
  CHECK(aggregate_final({0.1, 0.2, 0.8, 0.9, 1.0}) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(aggregate_final({0.5, 0.5, 0.5, 0.5}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(aggregate_final({0.2, 0.4, 0.9}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(aggregate_final({0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("target drift bound under frozen online params") {
  Rng rng = Rng::master(13).child("d");
  Mlp online = Mlp::make({2, 4, 1}, Norm::none, rng);
  Mlp target = Mlp::make({2, 4, 1}, Norm::none, rng);
  auto gap = [&] {
    double acc = 0.0;
    auto po = online.params();
    auto pt = target.params();
    for (std::size_t i = 0; i < po.size(); ++i)
      for (std::size_t j = 0; j < po[i].size(); ++j) {
        double d = pt[i].item(j) - po[i].item(j);
        acc += d * d;
      }
    return std::sqrt(acc);
  };
  double initial = gap();
  double tau = 0.02;
  auto tp = target.params();
  auto op = online.params();
  for (int k = 1; k <= 50; ++k) {
    soft_update(tp, op, tau);
    CHECK(gap() <= std::pow(1.0 - tau, k) * initial + 1e-9);
  }
}
